//! Synthetic multi-property benchmark.
//!
//! Molecules are random trees over the atom types C, N, O and S with a few
//! extra ring-forming bonds. Each property owns a distinct three-atom path
//! motif `a–b–c` over those types, and a molecule is active for the property
//! iff the motif occurs anywhere in it. Motifs are planted by growing the
//! molecule (never by overwriting atoms), with per-property planting rates
//! calibrated on pilot batches so every property ends up roughly balanced.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::dataset::{PropertyDataset, SplitSpec};
use super::graph::{AtomFeature, Bond, BondFeature, BondType, MolecularGraph};
use super::smiles::parse_smiles;
use super::writer::write_smiles;
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

pub const ATOM_TYPES: [u8; 4] = [6, 7, 8, 16];
pub const MIN_ATOMS: usize = 5;
pub const MAX_ATOMS: usize = 20;
const BASE_MAX_ATOMS: usize = 12;
const MAX_EXTRA_BONDS: usize = 1;
const DOUBLE_BOND_RATE: f64 = 0.1;
const CALIBRATION_ROUNDS: usize = 8;
const PILOT_SIZE: usize = 400;
const MAX_ATTEMPTS: u64 = 20;
pub const BALANCE: (f64, f64) = (0.3, 0.7);

/// Three-atom path motif by atomic number, stored with `ends.0 <= ends.1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Motif {
    pub center: u8,
    pub ends: (u8, u8),
}

impl Motif {
    pub fn new(a: u8, center: u8, c: u8) -> Self {
        Self {
            center,
            ends: (a.min(c), a.max(c)),
        }
    }

    /// Every distinct motif over [`ATOM_TYPES`].
    pub fn all() -> Vec<Motif> {
        let mut out = Vec::new();
        for &b in &ATOM_TYPES {
            for (i, &a) in ATOM_TYPES.iter().enumerate() {
                for &c in &ATOM_TYPES[i..] {
                    out.push(Motif::new(a, b, c));
                }
            }
        }
        out
    }

    pub fn occurs_in(&self, graph: &MolecularGraph) -> bool {
        motifs_present(graph).contains(self)
    }
}

impl std::fmt::Display for Motif {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = |z| super::elements::symbol(z).unwrap_or("?");
        write!(f, "{}{}{}", s(self.ends.0), s(self.center), s(self.ends.1))
    }
}

/// All three-atom path motifs in a graph.
pub fn motifs_present(graph: &MolecularGraph) -> HashSet<Motif> {
    let adj = graph.adjacency();
    let z: Vec<u8> = graph.atoms().iter().map(|a| a.atomic_number).collect();
    let mut out = HashSet::new();
    for (v, nbrs) in adj.iter().enumerate() {
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                out.insert(Motif::new(z[u], z[v], z[w]));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_tasks: usize,
    /// Properties placed in the meta-test split; the rest are meta-train.
    pub n_test: usize,
    pub n_molecules: usize,
    pub k: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// One fifth of the properties (at least one) go to meta-test.
    pub fn new(n_tasks: usize, n_molecules: usize, k: usize, seed: u64) -> Self {
        Self {
            n_tasks,
            n_test: (n_tasks / 5).max(1),
            n_molecules,
            k,
            seed,
        }
    }
}

/// Working molecule: atom types and adjacency lists, plus bond orders.
struct Draft {
    z: Vec<u8>,
    adj: Vec<Vec<usize>>,
    double: HashSet<(usize, usize)>,
}

impl Draft {
    fn random(rng: &mut Rng) -> Self {
        let n = rng.gen_range(MIN_ATOMS..=BASE_MAX_ATOMS);
        let mut d = Draft {
            z: (0..n).map(|_| *ATOM_TYPES.choose(rng).unwrap()).collect(),
            adj: vec![Vec::new(); n],
            double: HashSet::new(),
        };
        for i in 1..n {
            let j = rng.gen_range(0..i);
            d.link(j, i, rng);
        }
        for _ in 0..rng.gen_range(0..=MAX_EXTRA_BONDS) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && !d.adj[a].contains(&b) {
                d.link(a, b, rng);
            }
        }
        d
    }

    fn link(&mut self, a: usize, b: usize, rng: &mut Rng) {
        self.adj[a].push(b);
        self.adj[b].push(a);
        if rng.gen_bool(DOUBLE_BOND_RATE) {
            self.double.insert((a.min(b), a.max(b)));
        }
    }

    fn push_atom(&mut self, z: u8, attach: usize, rng: &mut Rng) -> usize {
        let idx = self.z.len();
        self.z.push(z);
        self.adj.push(Vec::new());
        self.link(attach, idx, rng);
        idx
    }

    /// Grows the molecule so that `motif` occurs, using as few new atoms as
    /// possible. Returns false if that would exceed the size cap.
    fn plant(&mut self, motif: Motif, rng: &mut Rng) -> bool {
        let (mut a, b, mut c) = (motif.ends.0, motif.center, motif.ends.1);
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut a, &mut c);
        }
        let n = self.z.len();
        for (end, other) in [(a, c), (c, a)] {
            // existing edge end–center: hang the other end off the center
            let cands: Vec<usize> = (0..n)
                .filter(|&y| self.z[y] == b && self.adj[y].iter().any(|&x| self.z[x] == end))
                .collect();
            if !cands.is_empty() && n < MAX_ATOMS {
                let y = *cands.choose(rng).unwrap();
                self.push_atom(other, y, rng);
                return true;
            }
        }
        let cands: Vec<usize> = (0..n).filter(|&x| self.z[x] == a).collect();
        if !cands.is_empty() && n + 2 <= MAX_ATOMS {
            let x = *cands.choose(rng).unwrap();
            let y = self.push_atom(b, x, rng);
            self.push_atom(c, y, rng);
            return true;
        }
        if n + 3 <= MAX_ATOMS {
            let x = rng.gen_range(0..n);
            let p = self.push_atom(a, x, rng);
            let y = self.push_atom(b, p, rng);
            self.push_atom(c, y, rng);
            return true;
        }
        false
    }

    fn into_graph(self) -> MolecularGraph {
        let atoms = self.z.iter().map(|&z| AtomFeature::new(z)).collect();
        let mut bonds = Vec::new();
        for (u, nbrs) in self.adj.iter().enumerate() {
            for &v in nbrs {
                if u < v {
                    let bond_type = if self.double.contains(&(u, v)) {
                        BondType::Double
                    } else {
                        BondType::Single
                    };
                    bonds.push(Bond {
                        u,
                        v,
                        feature: BondFeature::new(bond_type),
                    });
                }
            }
        }
        MolecularGraph::new(atoms, bonds).expect("draft graphs are simple")
    }
}

fn draw_molecule(motifs: &[Motif], rates: &[f64], rng: &mut Rng) -> MolecularGraph {
    let mut draft = Draft::random(rng);
    let mut order: Vec<usize> = (0..motifs.len()).collect();
    order.shuffle(rng);
    for i in order {
        if rng.gen_bool(rates[i]) {
            draft.plant(motifs[i], rng);
        }
    }
    draft.into_graph()
}

fn active_fractions(graphs: &[MolecularGraph], motifs: &[Motif]) -> Vec<f64> {
    let mut counts = vec![0usize; motifs.len()];
    for g in graphs {
        let present = motifs_present(g);
        for (c, m) in counts.iter_mut().zip(motifs) {
            *c += usize::from(present.contains(m));
        }
    }
    counts.iter().map(|&c| c as f64 / graphs.len() as f64).collect()
}

/// Generates a synthetic dataset with the default one-fifth meta-test split.
pub fn gen_synthetic(n_tasks: usize, n_molecules: usize, k: usize, seed: u64) -> Result<PropertyDataset> {
    SyntheticConfig::new(n_tasks, n_molecules, k, seed).generate()
}

impl SyntheticConfig {
    pub fn generate(&self) -> Result<PropertyDataset> {
        if self.n_tasks == 0 || self.n_molecules == 0 || self.k == 0 {
            return Err(Error::Generation("all counts must be positive".into()));
        }
        if self.n_test > self.n_tasks {
            return Err(Error::Generation(format!(
                "{} meta-test properties requested out of {}",
                self.n_test, self.n_tasks
            )));
        }
        let catalogue = Motif::all();
        if self.n_tasks > catalogue.len() {
            return Err(Error::Generation(format!(
                "cannot place {} distinct motifs; only {} exist over {} atom types",
                self.n_tasks,
                catalogue.len(),
                ATOM_TYPES.len()
            )));
        }
        // Each class needs K support molecules and at least one query.
        let min_class = (BALANCE.0 * self.n_molecules as f64).ceil() as usize;
        if min_class < self.k + 1 {
            return Err(Error::Generation(format!(
                "{} molecules cannot give every property {} members per class",
                self.n_molecules,
                self.k + 1
            )));
        }

        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = rng::stream(self.seed, Stream::Synthetic, attempt);
            let mut motifs = catalogue.clone();
            motifs.shuffle(&mut rng);
            motifs.truncate(self.n_tasks);

            let mut rates = vec![0.2; motifs.len()];
            for _ in 0..CALIBRATION_ROUNDS {
                let pilot: Vec<_> = (0..PILOT_SIZE).map(|_| draw_molecule(&motifs, &rates, &mut rng)).collect();
                for (r, f) in rates.iter_mut().zip(active_fractions(&pilot, &motifs)) {
                    *r = (*r + 0.5 - f).clamp(0.0, 1.0);
                }
            }

            let graphs: Vec<_> = (0..self.n_molecules)
                .map(|_| draw_molecule(&motifs, &rates, &mut rng))
                .collect();
            let fractions = active_fractions(&graphs, &motifs);
            let balanced = fractions.iter().all(|&f| f >= BALANCE.0 && f <= BALANCE.1)
                && (0..motifs.len()).all(|p| {
                    let pos = (fractions[p] * self.n_molecules as f64).round() as usize;
                    pos > self.k && self.n_molecules - pos > self.k
                });
            if !balanced {
                log::debug!("synthetic attempt {attempt} unbalanced: {fractions:?}");
                continue;
            }
            return Ok(self.assemble(&motifs, graphs));
        }
        Err(Error::Generation(format!(
            "no balanced dataset after {MAX_ATTEMPTS} attempts"
        )))
    }

    fn assemble(&self, motifs: &[Motif], graphs: Vec<MolecularGraph>) -> PropertyDataset {
        let n_train = self.n_tasks - self.n_test;
        let property_names: Vec<String> = motifs
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if i < n_train {
                    format!("train_{i:02}_{m}")
                } else {
                    format!("test_{:02}_{m}", i - n_train)
                }
            })
            .collect();

        let mut ds = PropertyDataset {
            ids: Vec::new(),
            smiles: Vec::new(),
            molecules: Vec::new(),
            labels: Vec::new(),
            property_names,
            meta_train: Vec::new(),
            meta_test: Vec::new(),
            unusable: BTreeSet::new(),
            skipped_rows: 0,
        };
        for (i, g) in graphs.into_iter().enumerate() {
            // Store what a reader of the CSV would see.
            let smiles = write_smiles(&g);
            let parsed = parse_smiles(&smiles).expect("writer output parses");
            let present = motifs_present(&parsed);
            ds.labels.push(motifs.iter().map(|m| Some(present.contains(m))).collect());
            ds.ids.push(i.to_string());
            ds.smiles.push(smiles);
            ds.molecules.push(parsed);
        }
        ds.assign_split(&SplitSpec::Prefix).expect("prefix split cannot fail");
        ds.flag_unusable(self.k);
        ds
    }
}
