//! One function per acceptance criterion. The dedicated test targets and the
//! `acceptance` runner share these.

use std::time::Instant;

use par::chem::{
    gen_synthetic, parse_smiles, AtomFeature, Bond, BondDirection, BondFeature, BondType, Chirality, MolecularGraph,
    PropertyDataset,
};
use par::encoder::{encode, EncoderConfig, EncoderWeights};
use par::meta::{
    dump_task, episode_loss, evaluate, meta_train, roc_auc, sample_episode, EvalReport, History, ParameterStore, Phase,
    TrainConfig,
};
use par::relgraph::{estimate_adjacency, ground_truth, knn_sparsify, normalize_rows, regularizer, RelationWeights};
use par::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fd::{max_fd_error, op_gradient_errors};
use super::oracle;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------- gradients

fn composed_probe(ablation: &str, phase: Phase) -> (f64, String) {
    let ds = gen_synthetic(5, 60, 2, 0).unwrap();
    let cfg = TrainConfig {
        k: 2,
        n_query: 2,
        t_iters: 2,
        encoder: EncoderConfig {
            num_layers: 2,
            hidden_dim: 8,
            ..EncoderConfig::default()
        },
        projection_dim: 8,
        ablation: ablation.parse().unwrap(),
        ..TrainConfig::default()
    };
    let store: ParameterStore<f64> = ParameterStore::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let ep = sample_episode(&ds, ds.meta_train[0], 2, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let report = episode_loss(&ds, &ep, &store.theta, &store.phi, &cfg, phase, None).unwrap();
    max_fd_error(&store, &report.grads, 1e-6, |p| {
        episode_loss(&ds, &ep, &p.theta, &p.phi, &cfg, phase, None).unwrap().total
    })
}

/// Every op plus the composed loss of both phases, against central
/// differences.
pub fn gradients() -> Check {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for (name, err) in op_gradient_errors() {
        if err > worst.0 {
            worst = (err, name);
        }
    }
    for phase in [Phase::Support, Phase::Query] {
        let (err, at) = composed_probe("", phase);
        if err > worst.0 {
            worst = (err, format!("composed {phase:?}: {at}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        worst.0 < 1e-4 && secs < 60.0,
        format!("max relative error {:.2e} ({}), {secs:.1} s", worst.0, worst.1),
    )
}

pub fn composed_gradient(ablation: &str, phase: Phase) -> Check {
    let (err, at) = composed_probe(ablation, phase);
    Check::new(err < 1e-4, format!("{err:.2e} at {at}"))
}

// ---------------------------------------------------------------- relgraph

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Random instances: symmetric adjacency, exactly `min(K, n−1)` kept
/// entries per row summing to 1, and a zero regularizer at `Â = A*`.
pub fn relgraph_invariants(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut asym, mut sum_err) = (0.0f64, 0.0f64);
    let mut bad_counts = 0;
    let mut nonzero_reg = 0;
    for _ in 0..instances {
        let n = rng.gen_range(3..=21);
        let d = rng.gen_range(2..=8);
        let k = rng.gen_range(1..n);
        let h = random_matrix(n, d, &mut rng);
        let weights: RelationWeights<f64> = RelationWeights::init(d, &mut rng);
        let a = estimate_adjacency(&h, &weights).unwrap();
        for i in 0..n {
            for j in 0..n {
                asym = asym.max((a.get(i, j) - a.get(j, i)).abs());
            }
        }
        let (_, neighbors) = knn_sparsify(&a, k).unwrap();
        let a_hat = normalize_rows(&a, &neighbors).unwrap();
        for i in 0..n {
            let row = a_hat.row(i);
            if row.iter().filter(|&&v| v > 0.0).count() != k.min(n - 1) || row[i] != 0.0 {
                bad_counts += 1;
            }
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let s = rng.gen_range(2..=n);
        let labels: Vec<bool> = (0..s).map(|_| rng.gen_bool(0.5)).collect();
        let a_star: Tensor<f64> = ground_truth(&labels);
        if regularizer(&a_star, &a_star).unwrap() != 0.0 {
            nonzero_reg += 1;
        }
    }
    Check::new(
        asym < 1e-10 && sum_err < 1e-6 && bad_counts == 0 && nonzero_reg == 0,
        format!(
            "{instances} instances: asymmetry {asym:.1e}, row-sum error {sum_err:.1e}, \
             rows with wrong support {bad_counts}, nonzero reg at A* {nonzero_reg}"
        ),
    )
}

// ---------------------------------------------------------------- encoder

/// A random connected graph with every categorical feature in play.
pub fn random_graph(rng: &mut ChaCha8Rng) -> MolecularGraph {
    let n = rng.gen_range(1..=24);
    let atoms: Vec<AtomFeature> = (0..n)
        .map(|_| AtomFeature {
            atomic_number: *[6u8, 6, 7, 8, 9, 15, 16, 17, 35, 53, 14, 5].choose(rng).unwrap(),
            chirality: Chirality::from_index(rng.gen_range(0..Chirality::COUNT)).unwrap(),
            aromatic: false,
        })
        .collect();
    let feature = |rng: &mut ChaCha8Rng| BondFeature {
        bond_type: BondType::from_index(rng.gen_range(0..BondType::COUNT)).unwrap(),
        direction: BondDirection::from_index(rng.gen_range(0..BondDirection::COUNT)).unwrap(),
    };
    let mut bonds = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        seen.insert((u, v));
        bonds.push(Bond {
            u,
            v,
            feature: feature(rng),
        });
    }
    for _ in 0..n / 4 {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && seen.insert((u.min(v), u.max(v))) {
            bonds.push(Bond {
                u,
                v,
                feature: feature(rng),
            });
        }
    }
    MolecularGraph::new(atoms, bonds).unwrap()
}

/// Relabels atoms, shuffles the bond list and flips bond orientations
/// (mirroring their direction tags), which describes the same molecule.
pub fn scramble(graph: &MolecularGraph, rng: &mut ChaCha8Rng) -> MolecularGraph {
    let mut perm: Vec<usize> = (0..graph.num_atoms()).collect();
    perm.shuffle(rng);
    let relabelled = graph.permuted(&perm).unwrap();
    let mut bonds: Vec<Bond> = relabelled
        .bonds()
        .iter()
        .map(|b| {
            if rng.gen_bool(0.5) {
                Bond {
                    u: b.v,
                    v: b.u,
                    feature: b.feature.reversed(),
                }
            } else {
                *b
            }
        })
        .collect();
    bonds.shuffle(rng);
    MolecularGraph::new(relabelled.atoms().to_vec(), bonds).unwrap()
}

pub fn encoder_invariance(graphs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = EncoderConfig {
        num_layers: 3,
        hidden_dim: 16,
        ..EncoderConfig::default()
    };
    let weights: EncoderWeights<f64> = EncoderWeights::init(&cfg, &mut rng);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let g = random_graph(&mut rng);
        let h = scramble(&g, &mut rng);
        let a = encode(&g, &cfg, &weights, None).unwrap();
        let b = encode(&h, &cfg, &weights, None).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    Check::new(worst < 1e-10, format!("{graphs} graphs, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- oracles

/// Straight-line re-implementations at n = 3 and the AUC pair count.
pub fn oracle_equivalence() -> Check {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for seed in 0..20 {
        let e = oracle::embed_error(seed);
        let r = oracle::relation_error(seed, false, false);
        let rs = oracle::relation_error(seed, true, true);
        let c = oracle::classify_error(seed);
        worst = worst.max(e).max(r).max(rs).max(c);
    }
    notes.push(format!("max forward deviation {worst:.1e}"));
    let mismatched = oracle::auc_mismatches(100);
    notes.push(format!("AUC mismatches {mismatched}/100"));
    Check::new(worst < 1e-12 && mismatched == 0, notes.join(", "))
}

// ---------------------------------------------------------------- parser

/// Table 4 corpus with counts recorded from RDKit before the build:
/// (smiles, atoms, bonds, aromatic atoms, [single, double, triple, aromatic]
/// bonds, [none, up, down] directions, chiral atoms).
pub const CORPUS: [(&str, usize, usize, usize, [usize; 4], [usize; 3], usize); 10] = [
    ("Cc1cccc(/N=N/c2ccc(N(C)C)cc2)c1", 18, 19, 12, [6, 1, 0, 12], [17, 2, 0], 0),
    ("O=C(c1ccccc1)C1CCC1", 12, 13, 6, [6, 1, 0, 6], [13, 0, 0], 0),
    ("C=C(C)[C@H]1CN[C@H](C(=O)O)[C@H]1CC(=O)O", 15, 15, 0, [12, 3, 0, 0], [15, 0, 0], 3),
    ("c1ccc2sc(SNC3CCCCC3)nc2c1", 17, 19, 9, [9, 0, 0, 10], [19, 0, 0], 0),
    ("C=CCSSCC=C", 8, 7, 0, [5, 2, 0, 0], [7, 0, 0], 0),
    ("CC(C)(C)c1cccc(C(C)(C)C)c1O", 15, 15, 6, [9, 0, 0, 6], [15, 0, 0], 0),
    (
        "C[C@@H]1CC2(OC3C[C@@]4(C)C5=CC[C@H]6C(C)(C)C(O[C@@H]7OC[C@@H](O)[C@H](O)[C@H]7O)CC[C@@]67C[C@@]57CC[C@]4(C)C31)OC(O)C1(C)OC21",
        44,
        52,
        0,
        [51, 1, 0, 0],
        [52, 0, 0],
        10,
    ),
    ("O=C(CCCCCCC(=O)Nc1ccccc1)NO", 19, 19, 6, [11, 2, 0, 6], [19, 0, 0], 0),
    ("CC/C=C\\C/C=C\\C/C=C\\CCCCCCCC(=O)O", 20, 19, 0, [15, 4, 0, 0], [13, 3, 3], 0),
    ("Cl[Si](Cl)(c1ccccc1)c1ccccc1", 15, 16, 12, [4, 0, 0, 12], [16, 0, 0], 0),
];

pub fn corpus_mismatches() -> Vec<String> {
    let mut out = Vec::new();
    for (i, &(smiles, atoms, bonds, aromatic, types, dirs, chiral)) in CORPUS.iter().enumerate() {
        let g = match parse_smiles(smiles) {
            Ok(g) => g,
            Err(e) => {
                out.push(format!("mol{}: {e}", i + 1));
                continue;
            }
        };
        let mut got_types = [0; 4];
        let mut got_dirs = [0; 3];
        for b in g.bonds() {
            got_types[b.feature.bond_type.index()] += 1;
            got_dirs[b.feature.direction.index()] += 1;
        }
        let got = (
            g.num_atoms(),
            g.num_bonds(),
            g.atoms().iter().filter(|a| a.aromatic).count(),
            got_types,
            got_dirs,
            g.atoms().iter().filter(|a| a.chirality != Chirality::Unspecified).count(),
        );
        if got != (atoms, bonds, aromatic, types, dirs, chiral) {
            out.push(format!("mol{}: got {got:?}", i + 1));
        }
    }
    out
}

pub fn parser_corpus() -> Check {
    let bad = corpus_mismatches();
    Check::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} molecules match the reference counts", CORPUS.len())
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- training runs

pub const E2E_EPISODES: usize = 500;

/// Desk-scale configuration for the synthetic benchmark.
pub fn desk_config(seed: u64, ablation: &str) -> TrainConfig {
    TrainConfig {
        k: 10,
        max_episodes: E2E_EPISODES,
        encoder: EncoderConfig {
            dropout: 0.0,
            ..EncoderConfig::desk()
        },
        projection_dropout: 0.0,
        inner_lr: 0.5,
        inner_steps: 5,
        val_every: 50,
        seed,
        ablation: ablation.parse().unwrap(),
        ..TrainConfig::default()
    }
}

/// 20 meta-train and 5 meta-test properties over 400 molecules.
pub fn synthetic(seed: u64) -> PropertyDataset {
    gen_synthetic(25, 400, 10, seed).unwrap()
}

pub struct Run {
    pub store: ParameterStore<f64>,
    pub history: History,
    pub report: EvalReport,
    pub seconds: f64,
}

impl Run {
    /// History lines followed by the evaluation record, as the CLI writes them.
    pub fn metrics(&self) -> String {
        let mut buf = Vec::new();
        self.history.write_jsonl(&mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str(&serde_json::to_string(&self.report).unwrap());
        text.push('\n');
        text
    }
}

pub fn train_and_evaluate(dataset: &PropertyDataset, cfg: &TrainConfig) -> Run {
    let start = Instant::now();
    let (store, history) = meta_train::<f64>(dataset, cfg).unwrap();
    let report = evaluate(dataset, &store, cfg, cfg.seed).unwrap();
    Run {
        store,
        history,
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn end_to_end(run: &Run) -> Check {
    let aucs: Vec<String> = run.report.per_task_auc.values().map(|v| format!("{v:.3}")).collect();
    Check::new(
        run.report.mean >= 0.85,
        format!(
            "mean AUC {:.4} ± {:.4} [{}], {} outer steps, {:.0} s wall clock on {} core(s)",
            run.report.mean,
            run.report.std,
            aucs.join(", "),
            run.history.episodes.len() / desk_config(0, "").meta_batch,
            run.seconds,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
        ),
    )
}

pub fn ablation_trend(full: &[f64], no_r: &[f64], no_p: &[f64]) -> Check {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, r, p) = (mean(full), mean(no_r), mean(no_p));
    Check::new(
        f >= r && f >= p,
        format!("mean AUC over seeds 0-4: full {f:.4}, no_R {r:.4}, no_P {p:.4}"),
    )
}

pub fn determinism(a: &Run, b: &Run) -> Check {
    let (ma, mb) = (a.metrics(), b.metrics());
    Check::new(
        ma == mb,
        format!("{} metric lines, files {}", ma.lines().count(), if ma == mb { "identical" } else { "differ" }),
    )
}

// ---------------------------------------------------------------- case study

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn off_diagonal(m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                out.push(v);
            }
        }
    }
    out
}

/// Ten molecules labelled by two different meta-test motifs. Each task is
/// dumped with the full graph; the adjacencies must differ and follow their
/// own label pattern.
pub fn case_study(dataset: &PropertyDataset, store: &ParameterStore<f64>, cfg: &TrainConfig) -> Check {
    let (ta, tb) = (dataset.meta_test[0], dataset.meta_test[1]);
    let label = |m: usize, p: usize| dataset.labels[m][p];
    let mut picks = Vec::new();
    for (want, count) in [((true, false), 3), ((true, true), 2), ((false, true), 2), ((false, false), 3)] {
        let found: Vec<usize> = (0..dataset.num_molecules())
            .filter(|&m| (label(m, ta), label(m, tb)) == (Some(want.0), Some(want.1)))
            .take(count)
            .collect();
        if found.len() < count {
            return Check::new(false, "fixture molecules unavailable");
        }
        picks.extend(found);
    }
    let molecules: Vec<&MolecularGraph> = picks.iter().map(|&m| &dataset.molecules[m]).collect();
    let ids: Vec<String> = picks.iter().map(|&m| dataset.ids[m].clone()).collect();
    let mut dumps = Vec::new();
    for (n, &p) in [ta, tb].iter().enumerate() {
        let labels: Vec<bool> = picks.iter().map(|&m| label(m, p).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let name = &dataset.property_names[p];
        dumps.push(dump_task(store, cfg, name, &ids, &molecules, &labels, true, &mut rng).unwrap());
    }
    let frob: f64 = dumps[0]
        .a_hat
        .iter()
        .flatten()
        .zip(dumps[1].a_hat.iter().flatten())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let r: Vec<f64> = dumps
        .iter()
        .map(|d| pearson(&off_diagonal(&d.a_hat), &off_diagonal(&d.a_star)))
        .collect();
    Check::new(
        frob > 0.1 && r.iter().all(|&v| v > 0.0),
        format!("Frobenius distance {frob:.4}, Pearson with own A* {:.4} / {:.4}", r[0], r[1]),
    )
}

// ---------------------------------------------------------------- misc

/// AUC from the rank statistic and from explicit pair counting.
pub fn auc_pair(scores: &[f64], labels: &[bool]) -> (Option<f64>, Option<f64>) {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    let brute = (pairs > 0.0).then(|| wins / pairs);
    (roc_auc(scores, labels), brute)
}
