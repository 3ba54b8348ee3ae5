//! Plain-loop re-implementations of the forward passes, written without the
//! tape or any crate helper beyond weight initialization.

use par::embed::{embed_var, EmbedMode, ProjectionWeights};
use par::meta::classify;
use par::nn::{Binder, Linear, Mlp2};
use par::relgraph::{run_relation, RelationOptions, RelationWeights};
use par::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::criteria::auc_pair;

type Mat = Vec<Vec<f64>>;

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn tensor(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m)
}

fn mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

fn linear(x: &[f64], layer: &Linear<f64>) -> Vec<f64> {
    let (w, b) = (&layer.weight, &layer.bias);
    (0..w.cols())
        .map(|j| {
            let mut acc = b.get(0, j);
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w.get(i, j);
            }
            acc
        })
        .collect()
}

fn mlp(x: &[f64], m: &Mlp2<f64>) -> Vec<f64> {
    let hidden: Vec<f64> = linear(x, &m.first).into_iter().map(|v| v.max(0.0)).collect();
    linear(&hidden, &m.second)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

/// Property-aware embeddings of three molecules, two of them in the support.
pub fn embed_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let g = random_mat(3, d, &mut rng);
    let weights: ProjectionWeights<f64> = ProjectionWeights::init(d, 4, &mut rng);
    let support = [0, 1];
    let labels = [true, false];

    let c1 = mean_of(&[&g[0]]);
    let c0 = mean_of(&[&g[1]]);
    let mut expect = Vec::new();
    for gi in &g {
        let s = softmax(&[
            dot(gi, gi) / (d as f64).sqrt(),
            dot(gi, &c0) / (d as f64).sqrt(),
            dot(gi, &c1) / (d as f64).sqrt(),
        ]);
        let b: Vec<f64> = (0..d).map(|j| s[0] * gi[j] + s[1] * c0[j] + s[2] * c1[j]).collect();
        let input: Vec<f64> = gi.iter().chain(&b).copied().collect();
        expect.push(mlp(&input, &weights.mlp));
    }

    let tape = Tape::new();
    let mut binder = Binder::new(&tape);
    binder.set_trainable(false);
    let proj = weights.bind("", &mut binder);
    let got = embed_var(
        &tape,
        &tape.constant(tensor(&g)),
        &support,
        &labels,
        Some(&proj),
        EmbedMode::Full,
        0.0,
        None,
    )
    .unwrap()
    .value();
    max_diff(&mat(&got), &expect)
}

fn standardize(h: &Mat) -> Mat {
    let (n, d) = (h.len(), h[0].len());
    let mut out = h.clone();
    for j in 0..d {
        let mean = h.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = h.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            out[i][j] = (h[i][j] - mean) / (var + 1e-5).sqrt();
        }
    }
    out
}

/// Two-way one-shot relation graph: two support nodes and a query, `T = 2`.
pub fn relation_error(seed: u64, standardized: bool, self_term: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (3, 2);
    let k = 1 + (seed as usize % 2);
    let p = random_mat(n, d, &mut rng);
    let weights: RelationWeights<f64> = RelationWeights::init(d, &mut rng);
    let labels = [false, true];
    let mut opts = RelationOptions::new(2, k);
    opts.standardize = standardized;
    opts.self_term = self_term;

    let w_r = mat(&weights.refine);
    let mut h = if standardized { standardize(&p) } else { p.clone() };
    let mut a_hat = vec![vec![0.0; n]; n];
    for _ in 0..2 {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let x: Vec<f64> = (0..d).map(|c| (-(h[i][c] - h[j][c]).abs()).exp()).collect();
                a[i][j] = mlp(&x, &weights.adjacency)[0];
            }
        }
        for i in 0..n {
            let mut cands: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            cands.sort_by(|&x, &y| a[i][y].partial_cmp(&a[i][x]).unwrap().then(x.cmp(&y)));
            cands.truncate(k);
            let kept: Vec<f64> = cands.iter().map(|&j| a[i][j]).collect();
            let probs = softmax(&kept);
            a_hat[i] = vec![0.0; n];
            for (&j, &pr) in cands.iter().zip(&probs) {
                a_hat[i][j] = pr;
            }
        }
        let mut next = vec![vec![0.0; d]; n];
        for i in 0..n {
            let mut mixed: Vec<f64> = (0..d).map(|c| (0..n).map(|j| a_hat[i][j] * h[j][c]).sum()).collect();
            if self_term {
                for c in 0..d {
                    mixed[c] = 0.5 * (mixed[c] + h[i][c]);
                }
            }
            for c in 0..d {
                let v: f64 = (0..d).map(|m| mixed[m] * w_r[m][c]).sum();
                next[i][c] = if v > 0.0 { v } else { 0.01 * v };
            }
        }
        h = next;
    }
    let mut reg = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let star = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            reg += (star - a_hat[i][j]).powi(2);
        }
    }

    let (got_h, got_a, got_reg) = run_relation(&tensor(&p), &weights, &opts, &labels).unwrap();
    max_diff(&mat(&got_h), &h)
        .max(max_diff(&mat(&got_a.unwrap()), &a_hat))
        .max((got_reg - reg).abs())
}

pub fn classify_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_mat(3, 4, &mut rng);
    let w = random_mat(4, 2, &mut rng);
    let b = random_mat(1, 2, &mut rng);
    let expect: Mat = h
        .iter()
        .map(|hi| {
            let logits: Vec<f64> = (0..2).map(|c| b[0][c] + (0..4).map(|m| hi[m] * w[m][c]).sum::<f64>()).collect();
            softmax(&logits)
        })
        .collect();
    let got = classify(&tensor(&h), &tensor(&w), &tensor(&b)).unwrap();
    max_diff(&mat(&got), &expect)
}

/// Random score vectors with deliberate ties; counts vectors where the rank
/// statistic and pair counting disagree in any bit.
pub fn auc_mismatches(vectors: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bad = 0;
    for _ in 0..vectors {
        let n = rng.gen_range(4..60);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = rng.gen_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let (rank, brute) = auc_pair(&scores, &labels);
        if rank.map(f64::to_bits) != brute.map(f64::to_bits) {
            bad += 1;
        }
    }
    bad
}
