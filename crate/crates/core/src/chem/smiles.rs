//! Restricted SMILES reader.
//!
//! Covers the organic subset and its aromatic forms, bracket atoms (isotope,
//! `@`/`@@` chirality, hydrogen count, charge, atom class), the bond symbols
//! `- = # : / \`, branches, ring closures `1`-`9` and `%nn`, and `.`
//! component separators. Hydrogens are never materialized as nodes unless
//! written as bracket atoms. There is no kekulization or aromaticity
//! perception: an unmarked bond between two lowercase atoms is aromatic.

use std::collections::{BTreeMap, HashSet};

use super::elements;
use super::graph::{AtomFeature, Bond, BondDirection, BondFeature, BondType, Chirality, MolecularGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
struct BondToken {
    bond_type: BondType,
    direction: BondDirection,
    offset: usize,
}

struct RingOpen {
    atom: usize,
    bond: Option<BondToken>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<AtomFeature>,
    bonds: Vec<Bond>,
    pairs: HashSet<(usize, usize)>,
    prev: Option<usize>,
    pending: Option<BondToken>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, RingOpen>,
}

fn fail<T>(offset: usize, reason: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        reason: reason.into(),
    })
}

/// Parses one SMILES string into a molecular graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph> {
    if text.trim().is_empty() {
        return fail(0, "empty SMILES");
    }
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        pairs: HashSet::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    MolecularGraph::new(p.atoms, p.bonds)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<()> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return fail(start, "branch opened before any atom");
                    };
                    if self.pending.is_some() {
                        return fail(start, "bond symbol before branch");
                    }
                    self.branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    if let Some(b) = self.pending {
                        return fail(b.offset, "dangling bond symbol");
                    }
                    let Some((anchor, _)) = self.branches.pop() else {
                        return fail(start, "unbalanced parenthesis");
                    };
                    self.prev = Some(anchor);
                    self.pos += 1;
                }
                b'.' => {
                    if let Some(b) = self.pending {
                        return fail(b.offset, "dangling bond symbol");
                    }
                    if self.prev.is_none() {
                        return fail(start, "component separator before any atom");
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() {
                        return fail(start, "consecutive bond symbols");
                    }
                    if self.prev.is_none() {
                        return fail(start, "dangling bond symbol");
                    }
                    let (bond_type, direction) = match c {
                        b'-' => (BondType::Single, BondDirection::None),
                        b'=' => (BondType::Double, BondDirection::None),
                        b'#' => (BondType::Triple, BondDirection::None),
                        b':' => (BondType::Aromatic, BondDirection::None),
                        b'/' => (BondType::Single, BondDirection::EndUpRight),
                        _ => (BondType::Single, BondDirection::EndDownRight),
                    };
                    self.pending = Some(BondToken {
                        bond_type,
                        direction,
                        offset: start,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom)?;
                }
            }
        }
        if let Some(b) = self.pending {
            return fail(b.offset, "dangling bond symbol");
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return fail(offset, "unbalanced parenthesis");
        }
        if let Some((digit, open)) = self.rings.iter().next() {
            return fail(open.offset, format!("unclosed ring closure {digit}"));
        }
        Ok(())
    }

    fn add_atom(&mut self, atom: AtomFeature) -> Result<()> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let tok = self.pending.take();
            self.connect(prev, idx, tok, self.pos)?;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn connect(&mut self, from: usize, to: usize, tok: Option<BondToken>, offset: usize) -> Result<()> {
        if from == to {
            return fail(offset, "atom bonded to itself");
        }
        if !self.pairs.insert((from.min(to), from.max(to))) {
            return fail(offset, format!("duplicate bond between atoms {from} and {to}"));
        }
        let feature = match tok {
            Some(t) => BondFeature {
                bond_type: t.bond_type,
                direction: t.direction,
            },
            None if self.atoms[from].aromatic && self.atoms[to].aromatic => BondFeature::new(BondType::Aromatic),
            None => BondFeature::new(BondType::Single),
        };
        self.bonds.push(Bond {
            u: from,
            v: to,
            feature,
        });
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<()> {
        let start = self.pos;
        let digit = if self.peek() == Some(b'%') {
            let d = self.text.get(start + 1..start + 3);
            match d {
                Some(&[a, b]) if a.is_ascii_digit() && b.is_ascii_digit() => {
                    self.pos += 3;
                    u32::from(a - b'0') * 10 + u32::from(b - b'0')
                }
                _ => return fail(start, "'%' must be followed by two digits"),
            }
        } else {
            self.pos += 1;
            u32::from(self.text[start] - b'0')
        };
        let Some(atom) = self.prev else {
            return fail(start, "ring closure before any atom");
        };
        let tok = self.pending.take();
        match self.rings.remove(&digit) {
            Some(open) => {
                let bond = match (open.bond, tok) {
                    (Some(a), Some(b)) if a.bond_type != b.bond_type => {
                        return fail(start, format!("conflicting bond symbols on ring closure {digit}"));
                    }
                    // A symbol written at the closing digit reads from the
                    // closing atom back to the opener.
                    (_, Some(b)) => return self.connect(atom, open.atom, Some(b), start),
                    (a, None) => a,
                };
                self.connect(open.atom, atom, bond, start)
            }
            None => {
                self.rings.insert(
                    digit,
                    RingOpen {
                        atom,
                        bond: tok,
                        offset: start,
                    },
                );
                Ok(())
            }
        }
    }

    fn organic_atom(&mut self) -> Result<AtomFeature> {
        let start = self.pos;
        let rest = &self.text[start..];
        let (symbol, len, aromatic) = match rest {
            [b'C', b'l', ..] => ("Cl", 2, false),
            [b'B', b'r', ..] => ("Br", 2, false),
            [b'B', ..] => ("B", 1, false),
            [b'C', ..] => ("C", 1, false),
            [b'N', ..] => ("N", 1, false),
            [b'O', ..] => ("O", 1, false),
            [b'P', ..] => ("P", 1, false),
            [b'S', ..] => ("S", 1, false),
            [b'F', ..] => ("F", 1, false),
            [b'I', ..] => ("I", 1, false),
            [b'b', ..] => ("B", 1, true),
            [b'c', ..] => ("C", 1, true),
            [b'n', ..] => ("N", 1, true),
            [b'o', ..] => ("O", 1, true),
            [b'p', ..] => ("P", 1, true),
            [b's', ..] => ("S", 1, true),
            _ => {
                let ch = std::str::from_utf8(rest)
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or('?');
                return fail(start, format!("unknown atom symbol '{ch}'"));
            }
        };
        self.pos += len;
        Ok(AtomFeature {
            atomic_number: elements::atomic_number(symbol).expect("organic subset symbol"),
            chirality: Chirality::Unspecified,
            aromatic,
        })
    }

    fn bracket_atom(&mut self) -> Result<AtomFeature> {
        let open = self.pos;
        self.pos += 1;
        let Some(close_rel) = self.text[open..].iter().position(|&c| c == b']') else {
            return fail(open, "unterminated bracket atom");
        };
        let end = open + close_rel;

        // isotope
        while self.pos < end && self.text[self.pos].is_ascii_digit() {
            self.pos += 1;
        }

        let sym_start = self.pos;
        let (z, aromatic) = match self.text.get(sym_start) {
            Some(c) if c.is_ascii_lowercase() => {
                let two = std::str::from_utf8(&self.text[sym_start..(sym_start + 2).min(end)]).unwrap_or("");
                let aromatic_two = ["se", "as", "te"];
                if let Some(&s) = aromatic_two.iter().find(|&&s| s == two) {
                    self.pos += 2;
                    (elements::atomic_number(&capitalize(s)), true)
                } else if matches!(c, b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
                    self.pos += 1;
                    (elements::atomic_number(&(*c as char).to_ascii_uppercase().to_string()), true)
                } else {
                    (None, true)
                }
            }
            Some(c) if c.is_ascii_uppercase() => {
                let two_ok = self
                    .text
                    .get(sym_start + 1)
                    .filter(|n| n.is_ascii_lowercase() && sym_start + 1 < end)
                    .map(|&n| format!("{}{}", *c as char, n as char))
                    .and_then(|s| elements::atomic_number(&s));
                match two_ok {
                    Some(z) => {
                        self.pos += 2;
                        (Some(z), false)
                    }
                    None => {
                        self.pos += 1;
                        (elements::atomic_number(&(*c as char).to_string()), false)
                    }
                }
            }
            _ => (None, false),
        };
        let Some(atomic_number) = z else {
            let shown = std::str::from_utf8(&self.text[sym_start..end]).unwrap_or("?");
            return fail(sym_start, format!("unknown atom symbol '{shown}'"));
        };

        let mut chirality = Chirality::Unspecified;
        if self.pos < end && self.text[self.pos] == b'@' {
            self.pos += 1;
            if self.pos < end && self.text[self.pos] == b'@' {
                self.pos += 1;
                chirality = Chirality::Clockwise;
            } else if self.pos < end && self.text[self.pos].is_ascii_uppercase() && self.text[self.pos] != b'H' {
                // @TH1, @AL2, @SP3, @TB10, @OH25 ...
                while self.pos < end && self.text[self.pos].is_ascii_uppercase() {
                    self.pos += 1;
                }
                while self.pos < end && self.text[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                chirality = Chirality::Other;
            } else {
                chirality = Chirality::CounterClockwise;
            }
        }

        if self.pos < end && self.text[self.pos] == b'H' {
            self.pos += 1;
            while self.pos < end && self.text[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }

        if self.pos < end && matches!(self.text[self.pos], b'+' | b'-') {
            let sign = self.text[self.pos];
            self.pos += 1;
            while self.pos < end && (self.text[self.pos] == sign || self.text[self.pos].is_ascii_digit()) {
                self.pos += 1;
            }
        }

        if self.pos < end && self.text[self.pos] == b':' {
            self.pos += 1;
            while self.pos < end && self.text[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }

        if self.pos != end {
            return fail(self.pos, "unexpected character in bracket atom");
        }
        self.pos = end + 1;
        Ok(AtomFeature {
            atomic_number,
            chirality,
            aromatic,
        })
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}
