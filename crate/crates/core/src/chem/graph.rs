use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::elements::MAX_ATOMIC_NUMBER;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Chirality {
    #[default]
    Unspecified,
    Clockwise,
    CounterClockwise,
    Other,
}

impl Chirality {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        [Self::Unspecified, Self::Clockwise, Self::CounterClockwise, Self::Other]
            .get(i)
            .copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        [Self::Single, Self::Double, Self::Triple, Self::Aromatic].get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum BondDirection {
    #[default]
    None,
    EndUpRight,
    EndDownRight,
}

impl BondDirection {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        [Self::None, Self::EndUpRight, Self::EndDownRight].get(i).copied()
    }

    /// Direction seen when walking the bond the other way.
    pub fn reversed(self) -> Self {
        match self {
            Self::None => Self::None,
            Self::EndUpRight => Self::EndDownRight,
            Self::EndDownRight => Self::EndUpRight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AtomFeature {
    pub atomic_number: u8,
    pub chirality: Chirality,
    /// Lowercase token in the source; not an encoder input.
    pub aromatic: bool,
}

impl AtomFeature {
    pub fn new(atomic_number: u8) -> Self {
        Self {
            atomic_number,
            chirality: Chirality::Unspecified,
            aromatic: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BondFeature {
    pub bond_type: BondType,
    pub direction: BondDirection,
}

impl BondFeature {
    pub fn new(bond_type: BondType) -> Self {
        Self {
            bond_type,
            direction: BondDirection::None,
        }
    }

    pub fn reversed(self) -> Self {
        Self {
            bond_type: self.bond_type,
            direction: self.direction.reversed(),
        }
    }
}

/// A bond stored once, oriented from `u` to `v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub u: usize,
    pub v: usize,
    pub feature: BondFeature,
}

/// Heavy atoms and undirected bonds. May hold several disconnected
/// components.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<AtomFeature>,
    bonds: Vec<Bond>,
}

impl MolecularGraph {
    pub fn new(atoms: Vec<AtomFeature>, bonds: Vec<Bond>) -> Result<Self> {
        if let Some(a) = atoms
            .iter()
            .find(|a| a.atomic_number == 0 || a.atomic_number > MAX_ATOMIC_NUMBER)
        {
            return Err(Error::contract(format!("atomic number {} out of range", a.atomic_number)));
        }
        let mut seen = HashSet::new();
        for b in &bonds {
            if b.u == b.v || b.u >= atoms.len() || b.v >= atoms.len() {
                return Err(Error::contract(format!("invalid bond endpoints ({}, {})", b.u, b.v)));
            }
            if !seen.insert((b.u.min(b.v), b.u.max(b.v))) {
                return Err(Error::contract(format!("duplicate bond ({}, {})", b.u, b.v)));
            }
        }
        Ok(Self { atoms, bonds })
    }

    pub fn atoms(&self) -> &[AtomFeature] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Feature of the bond between `from` and `to`, as seen walking from
    /// `from`. `None` if they are not bonded.
    pub fn bond_feature(&self, from: usize, to: usize) -> Option<BondFeature> {
        self.bonds.iter().find_map(|b| {
            if b.u == from && b.v == to {
                Some(b.feature)
            } else if b.u == to && b.v == from {
                Some(b.feature.reversed())
            } else {
                None
            }
        })
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.u].push(b.v);
            adj[b.v].push(b.u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Both orientations of every bond as `(source, target, feature)`.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize, BondFeature)> + '_ {
        self.bonds
            .iter()
            .flat_map(|b| [(b.u, b.v, b.feature), (b.v, b.u, b.feature.reversed())])
    }

    pub fn num_components(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut count = 0;
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.atoms.len();
        let mut check = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut check[p], true)) {
            return Err(Error::contract("not a permutation"));
        }
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                u: perm[b.u],
                v: perm[b.v],
                feature: b.feature,
            })
            .collect();
        Self::new(atoms, bonds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphJson::from(self)).expect("graph JSON is infallible")
    }

    /// Reads the integer-only graph JSON. Atoms touching an aromatic bond are
    /// marked aromatic.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(text)?;
        let mut atoms = Vec::with_capacity(raw.atoms.len());
        for a in &raw.atoms {
            let z = u8::try_from(a.z).map_err(|_| Error::contract(format!("atomic number {}", a.z)))?;
            let chirality = Chirality::from_index(a.chirality)
                .ok_or_else(|| Error::contract(format!("chirality code {}", a.chirality)))?;
            atoms.push(AtomFeature {
                atomic_number: z,
                chirality,
                aromatic: false,
            });
        }
        let mut bonds = Vec::with_capacity(raw.bonds.len());
        for &[u, v, t, d] in &raw.bonds {
            let bond_type =
                BondType::from_index(t).ok_or_else(|| Error::contract(format!("bond type code {t}")))?;
            let direction = BondDirection::from_index(d)
                .ok_or_else(|| Error::contract(format!("bond direction code {d}")))?;
            if bond_type == BondType::Aromatic {
                for end in [u, v] {
                    if let Some(atom) = atoms.get_mut(end) {
                        atom.aromatic = true;
                    }
                }
            }
            bonds.push(Bond {
                u,
                v,
                feature: BondFeature { bond_type, direction },
            });
        }
        Self::new(atoms, bonds)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomJson {
    z: u32,
    chirality: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    atoms: Vec<AtomJson>,
    bonds: Vec<[usize; 4]>,
}

impl From<&MolecularGraph> for GraphJson {
    fn from(g: &MolecularGraph) -> Self {
        Self {
            atoms: g
                .atoms
                .iter()
                .map(|a| AtomJson {
                    z: u32::from(a.atomic_number),
                    chirality: a.chirality.index(),
                })
                .collect(),
            bonds: g
                .bonds
                .iter()
                .map(|b| [b.u, b.v, b.feature.bond_type.index(), b.feature.direction.index()])
                .collect(),
        }
    }
}
