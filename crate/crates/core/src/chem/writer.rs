//! SMILES output for generated molecules. Emits a depth-first spanning tree
//! from the lowest-index atom of each component, with ring-closure digits for
//! the remaining bonds. Chirality is not written.

use super::elements;
use super::graph::{BondDirection, BondFeature, BondType, MolecularGraph};

pub fn write_smiles(graph: &MolecularGraph) -> String {
    let n = graph.num_atoms();
    let adj = graph.adjacency();

    // First pass: DFS order and tree edges.
    let mut order = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut roots = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if order[root] != usize::MAX {
            continue;
        }
        roots.push(root);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if order[v] != usize::MAX {
                continue;
            }
            order[v] = counter;
            counter += 1;
            for &w in adj[v].iter().rev() {
                if order[w] == usize::MAX {
                    parent[w] = v;
                    stack.push(w);
                }
            }
        }
    }
    // Children in visiting order: a child is a neighbor whose recorded parent
    // is v and which was reached from v.
    let children: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            let mut c: Vec<usize> = adj[v].iter().copied().filter(|&w| parent[w] == v).collect();
            c.sort_by_key(|&w| order[w]);
            c
        })
        .collect();

    let mut out = String::new();
    let mut digits: Vec<Option<(usize, usize)>> = Vec::new();
    for (i, &root) in roots.iter().enumerate() {
        if i > 0 {
            out.push('.');
        }
        let mut stack = vec![Frame::Atom(root)];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Close => out.push(')'),
                Frame::Open => out.push('('),
                Frame::Bond(from, to) => push_bond(&mut out, graph.bond_feature(from, to).unwrap(), graph, from, to),
                Frame::Atom(v) => {
                    push_atom(&mut out, graph, v);
                    // Ring bonds: neighbors that are neither parent nor child.
                    for &w in &adj[v] {
                        if parent[w] == v || parent[v] == w {
                            continue;
                        }
                        if order[w] < order[v] {
                            let slot = digits
                                .iter()
                                .position(|d| *d == Some((w, v)))
                                .expect("ring opened at earlier atom");
                            digits[slot] = None;
                            push_digit(&mut out, slot + 1);
                        } else {
                            let slot = match digits.iter().position(Option::is_none) {
                                Some(s) => s,
                                None => {
                                    digits.push(None);
                                    digits.len() - 1
                                }
                            };
                            digits[slot] = Some((v, w));
                            push_bond(&mut out, graph.bond_feature(v, w).unwrap(), graph, v, w);
                            push_digit(&mut out, slot + 1);
                        }
                    }
                    let kids = &children[v];
                    for (k, &c) in kids.iter().enumerate().rev() {
                        let last = k + 1 == kids.len();
                        if !last {
                            stack.push(Frame::Close);
                        }
                        stack.push(Frame::Atom(c));
                        stack.push(Frame::Bond(v, c));
                        if !last {
                            stack.push(Frame::Open);
                        }
                    }
                }
            }
        }
    }
    out
}

enum Frame {
    Atom(usize),
    Bond(usize, usize),
    Open,
    Close,
}

fn push_atom(out: &mut String, graph: &MolecularGraph, v: usize) {
    let atom = graph.atoms()[v];
    let symbol = elements::symbol(atom.atomic_number).expect("valid atomic number");
    if elements::is_organic_subset(atom.atomic_number) {
        if atom.aromatic {
            out.push_str(&symbol.to_ascii_lowercase());
        } else {
            out.push_str(symbol);
        }
    } else {
        out.push('[');
        out.push_str(symbol);
        out.push(']');
    }
}

fn push_bond(out: &mut String, f: BondFeature, graph: &MolecularGraph, from: usize, to: usize) {
    let both_aromatic = graph.atoms()[from].aromatic && graph.atoms()[to].aromatic;
    let symbol = match (f.bond_type, f.direction) {
        (BondType::Single, BondDirection::EndUpRight) => "/",
        (BondType::Single, BondDirection::EndDownRight) => "\\",
        (BondType::Single, _) if both_aromatic => "-",
        (BondType::Single, _) => "",
        (BondType::Double, _) => "=",
        (BondType::Triple, _) => "#",
        (BondType::Aromatic, _) if both_aromatic => "",
        (BondType::Aromatic, _) => ":",
    };
    out.push_str(symbol);
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}
