use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::graph::MolecularGraph;
use super::smiles::parse_smiles;
use crate::error::{Error, Result};

/// One entry of the label matrix.
pub type Label = Option<bool>;

/// How property columns are divided between meta-training and meta-testing.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum SplitSpec {
    /// Columns named `test_*` are meta-test, all others meta-train.
    #[default]
    Prefix,
    /// The final `n` property columns are meta-test.
    Last(usize),
    /// Exactly these columns are meta-test.
    Named(Vec<String>),
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "prefix" {
            return Ok(Self::Prefix);
        }
        if let Some(n) = s.strip_prefix("last:") {
            return n
                .parse()
                .map(Self::Last)
                .map_err(|_| Error::Config(format!("bad split '{s}'")));
        }
        if let Some(list) = s.strip_prefix("test:") {
            let names: Vec<String> = list.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
            if names.is_empty() {
                return Err(Error::Config(format!("bad split '{s}'")));
            }
            return Ok(Self::Named(names));
        }
        Err(Error::Config(format!(
            "bad split '{s}' (expected 'prefix', 'last:N' or 'test:a,b,...')"
        )))
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Prefix => write!(f, "prefix"),
            Self::Last(n) => write!(f, "last:{n}"),
            Self::Named(names) => write!(f, "test:{}", names.join(",")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub split: SplitSpec,
    /// Meta-test properties with fewer actives or inactives than this are
    /// flagged unusable.
    pub min_per_class: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            split: SplitSpec::Prefix,
            min_per_class: 10,
        }
    }
}

/// Molecules with a sparse binary label matrix over several properties.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyDataset {
    pub ids: Vec<String>,
    pub smiles: Vec<String>,
    pub molecules: Vec<MolecularGraph>,
    /// `labels[molecule][property]`
    pub labels: Vec<Vec<Label>>,
    pub property_names: Vec<String>,
    pub meta_train: Vec<usize>,
    pub meta_test: Vec<usize>,
    /// Meta-test properties without enough labeled molecules per class.
    pub unusable: BTreeSet<usize>,
    /// Rows dropped because their SMILES failed to parse.
    pub skipped_rows: usize,
}

impl PropertyDataset {
    pub fn num_molecules(&self) -> usize {
        self.molecules.len()
    }

    pub fn num_properties(&self) -> usize {
        self.property_names.len()
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.property_names.iter().position(|p| p == name)
    }

    /// Molecule indices labeled inactive and active for `property`.
    pub fn class_members(&self, property: usize) -> (Vec<usize>, Vec<usize>) {
        let mut neg = Vec::new();
        let mut pos = Vec::new();
        for (i, row) in self.labels.iter().enumerate() {
            match row[property] {
                Some(true) => pos.push(i),
                Some(false) => neg.push(i),
                None => {}
            }
        }
        (neg, pos)
    }

    pub fn usable_meta_test(&self) -> Vec<usize> {
        self.meta_test.iter().copied().filter(|p| !self.unusable.contains(p)).collect()
    }

    /// Flags meta-test properties lacking `min_per_class` members of a class.
    pub fn flag_unusable(&mut self, min_per_class: usize) {
        self.unusable = self
            .meta_test
            .iter()
            .copied()
            .filter(|&p| {
                let (neg, pos) = self.class_members(p);
                neg.len() < min_per_class || pos.len() < min_per_class
            })
            .collect();
    }

    pub(crate) fn assign_split(&mut self, split: &SplitSpec) -> Result<()> {
        let n = self.property_names.len();
        let test: Vec<usize> = match split {
            SplitSpec::Prefix => (0..n).filter(|&p| self.property_names[p].starts_with("test_")).collect(),
            SplitSpec::Last(k) => {
                if *k > n {
                    return Err(Error::Config(format!("split last:{k} exceeds {n} properties")));
                }
                (n - k..n).collect()
            }
            SplitSpec::Named(names) => names
                .iter()
                .map(|name| {
                    self.property_index(name)
                        .ok_or_else(|| Error::Config(format!("split names unknown property '{name}'")))
                })
                .collect::<Result<_>>()?,
        };
        self.meta_train = (0..n).filter(|p| !test.contains(p)).collect();
        self.meta_test = test;
        self.meta_test.sort_unstable();
        Ok(())
    }

    /// Writes the dataset CSV (`smiles,<prop>...`; labels 0/1/empty).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["smiles".to_string()];
        header.extend(self.property_names.iter().cloned());
        w.write_record(&header)?;
        for (smiles, row) in self.smiles.iter().zip(&self.labels) {
            let mut record = vec![smiles.clone()];
            record.extend(row.iter().map(|l| match l {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a dataset CSV from disk.
pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<PropertyDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_dataset(text.as_bytes(), opts)
}

/// Parses dataset CSV text. An optional `id` column names molecules;
/// otherwise the 0-based data row number is used.
pub fn read_dataset<R: std::io::Read>(input: R, opts: &LoadOptions) -> Result<PropertyDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let smiles_col = header.iter().position(|h| h == "smiles").ok_or_else(|| Error::Format {
        row: 1,
        reason: "missing 'smiles' column".into(),
    })?;
    let id_col = header.iter().position(|h| h == "id");
    let prop_cols: Vec<usize> = (0..header.len()).filter(|&c| c != smiles_col && Some(c) != id_col).collect();
    if prop_cols.is_empty() {
        return Err(Error::Format {
            row: 1,
            reason: "no property columns".into(),
        });
    }

    let mut ds = PropertyDataset {
        ids: Vec::new(),
        smiles: Vec::new(),
        molecules: Vec::new(),
        labels: Vec::new(),
        property_names: prop_cols.iter().map(|&c| header[c].clone()).collect(),
        meta_train: Vec::new(),
        meta_test: Vec::new(),
        unusable: BTreeSet::new(),
        skipped_rows: 0,
    };

    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record?;
        let mut labels = Vec::with_capacity(prop_cols.len());
        for &c in &prop_cols {
            let cell = record.get(c).unwrap_or("").trim();
            labels.push(match cell {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => {
                    return Err(Error::Format {
                        row: line,
                        reason: format!("label '{other}' in column '{}' is not 0, 1 or empty", header[c]),
                    })
                }
            });
        }
        let smiles = record.get(smiles_col).unwrap_or("").trim().to_string();
        let graph = match parse_smiles(&smiles) {
            Ok(g) if g.num_atoms() > 0 => g,
            Ok(_) | Err(_) => {
                ds.skipped_rows += 1;
                continue;
            }
        };
        let id = match id_col {
            Some(c) => record.get(c).unwrap_or("").trim().to_string(),
            None => i.to_string(),
        };
        ds.ids.push(id);
        ds.smiles.push(smiles);
        ds.molecules.push(graph);
        ds.labels.push(labels);
    }
    if ds.skipped_rows > 0 {
        log::warn!("skipped {} rows with unparseable SMILES", ds.skipped_rows);
    }
    ds.assign_split(&opts.split)?;
    ds.flag_unusable(opts.min_per_class);
    Ok(ds)
}
