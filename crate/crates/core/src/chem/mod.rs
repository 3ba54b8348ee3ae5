//! Molecular graphs: SMILES parsing, featurization enumerations, CSV datasets
//! and the synthetic motif benchmark.

pub mod dataset;
pub mod elements;
pub mod graph;
pub mod smiles;
pub mod synthetic;
pub mod writer;

pub use dataset::{load_dataset, read_dataset, Label, LoadOptions, PropertyDataset, SplitSpec};
pub use graph::{AtomFeature, Bond, BondDirection, BondFeature, BondType, Chirality, MolecularGraph};
pub use smiles::parse_smiles;
pub use synthetic::{gen_synthetic, Motif, SyntheticConfig};
pub use writer::write_smiles;
