use par::nn::Parameters;
use par::tensor::{NamedTensors, Tape, Tensor, Var};
use rand::SeedableRng;

/// Central-difference check of `grads` against `f`, which evaluates the loss
/// at a perturbed copy of `params`. Returns the worst relative error and
/// the entry that produced it.
pub fn max_fd_error<P: Parameters<f64> + Clone>(
    params: &P,
    grads: &NamedTensors<f64>,
    step: f64,
    mut f: impl FnMut(&P) -> f64,
) -> (f64, String) {
    let names: Vec<String> = params.named("").keys().cloned().collect();
    let mut worst = (0.0, String::new());
    for name in names {
        let g = &grads[&name];
        for i in 0..g.numel() {
            let eval = |delta: f64, f: &mut dyn FnMut(&P) -> f64| {
                let mut p = params.clone();
                p.visit_mut("", &mut |n, t| {
                    if n == name {
                        t.data_mut()[i] += delta;
                    }
                });
                f(&p)
            };
            let numeric = (eval(step, &mut f) - eval(-step, &mut f)) / (2.0 * step);
            let analytic = g.data()[i];
            let err = relative_error(analytic, numeric);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] analytic {analytic:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

/// `|a - n| / max(|a|, |n|, 1e-2)`: relative where gradients are
/// appreciable, absolute near zero where finite differences lose digits.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

const STEP: f64 = 1e-4;

/// Worst error of `d sum(w ⊙ f(x)) / dx` against central differences, with
/// `w` a fixed random weighting so every output entry matters.
pub fn unary_error(x: Tensor<f64>, f: impl for<'t> Fn(&Var<'t, f64>) -> Var<'t, f64>) -> f64 {
    let out_shape = {
        let tape = Tape::new();
        f(&tape.constant(x.clone())).shape()
    };
    let w = random_tensor(out_shape[0], out_shape[1], 99);
    let loss = |x: &Tensor<f64>| -> f64 {
        let tape = Tape::new();
        let y = f(&tape.constant(x.clone())).value();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let xv = tape.param(&x);
    let total = f(&xv).mul(&tape.constant(w.clone())).unwrap().sum().unwrap();
    let grads = tape.backward(total).unwrap();
    let analytic = grads.get(xv).unwrap().clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}

/// Both operands of a binary op, perturbed in turn.
pub fn binary_error(
    a: Tensor<f64>,
    b: Tensor<f64>,
    f: impl for<'t> Fn(&Var<'t, f64>, &Var<'t, f64>) -> Var<'t, f64> + Copy,
) -> f64 {
    let b2 = b.clone();
    let left = unary_error(a.clone(), move |x| f(x, &x.tape().constant(b2.clone())));
    let right = unary_error(b, move |y| f(&y.tape().constant(a.clone()), y));
    left.max(right)
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

fn mlp_error(layer: usize) -> f64 {
    let x = random_tensor(5, 4, 20);
    let ws = [random_tensor(4, 6, 21), random_tensor(6, 6, 22), random_tensor(6, 2, 23)];
    let bs = [random_tensor(1, 6, 24), random_tensor(1, 6, 25), random_tensor(1, 2, 26)];
    unary_error(ws[layer].clone(), move |v| {
        let t = v.tape();
        let mut h = t.constant(x.clone());
        for l in 0..3 {
            let w = if l == layer { *v } else { t.constant(ws[l].clone()) };
            h = h.affine(&w, &t.constant(bs[l].clone())).unwrap();
            if l < 2 {
                h = h.relu().unwrap();
            }
        }
        h.cross_entropy(&[0, 1, 1, 0, 1]).unwrap()
    })
}

/// Finite-difference error of every differentiable op, by name.
pub fn op_gradient_errors() -> Vec<(String, f64)> {
    let x = random_tensor(4, 3, 8);
    let (a, b) = (random_tensor(3, 3, 3), random_tensor(3, 3, 4));
    let xa = random_tensor(3, 4, 5);
    let w = random_tensor(4, 2, 6);
    let bias = random_tensor(1, 2, 7);
    let smooth = away_from_zero(x.clone());
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
    let mut out: Vec<(&str, f64)> = vec![
        (
            "matmul",
            binary_error(random_tensor(3, 4, 1), random_tensor(4, 2, 2), |a, b| a.matmul(b).unwrap()),
        ),
        ("add", binary_error(a.clone(), b.clone(), |a, b| a.add(b).unwrap())),
        ("sub", binary_error(a.clone(), b.clone(), |a, b| a.sub(b).unwrap())),
        ("mul", binary_error(a, b, |a, b| a.mul(b).unwrap())),
        ("affine/x", {
            let (w, bias) = (w.clone(), bias.clone());
            unary_error(xa.clone(), move |v| {
                let t = v.tape();
                v.affine(&t.constant(w.clone()), &t.constant(bias.clone())).unwrap()
            })
        }),
        ("affine/w", {
            let (xa, bias) = (xa.clone(), bias.clone());
            unary_error(w.clone(), move |v| {
                let t = v.tape();
                t.constant(xa.clone()).affine(v, &t.constant(bias.clone())).unwrap()
            })
        }),
        ("affine/b", {
            let (xa, w) = (xa.clone(), w.clone());
            unary_error(bias, move |v| {
                let t = v.tape();
                t.constant(xa.clone()).affine(&t.constant(w.clone()), v).unwrap()
            })
        }),
        ("scale", unary_error(xa.clone(), |v| v.scale(-1.7).unwrap())),
        (
            "scale_by",
            binary_error(xa, Tensor::scalar(0.8), |a, s| a.scale_by(s).unwrap()),
        ),
        ("exp", unary_error(smooth.clone(), |v| v.exp().unwrap())),
        ("abs", unary_error(smooth.clone(), |v| v.abs().unwrap())),
        ("neg", unary_error(smooth.clone(), |v| v.neg().unwrap())),
        ("leaky_relu", unary_error(smooth.clone(), |v| v.leaky_relu(0.01).unwrap())),
        ("relu", unary_error(smooth.clone(), |v| v.relu().unwrap())),
        (
            "log_sigmoid",
            unary_error(smooth.map(|v| 4.0 * v), |v| v.log_sigmoid().unwrap()),
        ),
        (
            "concat_last",
            binary_error(x.clone(), random_tensor(4, 2, 10), |a, b| a.concat_last(b).unwrap()),
        ),
        (
            "softmax_rows",
            unary_error(x.map(|v| 3.0 * v), |v| v.softmax_rows().unwrap()),
        ),
        (
            "masked_softmax_rows",
            unary_error(x.clone(), move |v| v.masked_softmax_rows(&mask).unwrap()),
        ),
        ("mean_rows", unary_error(x.clone(), |v| v.mean_rows().unwrap())),
        ("gather", unary_error(x.clone(), |v| v.gather(&[2, 0, 2, 3]).unwrap())),
        (
            "scatter_add_rows",
            unary_error(x.clone(), |v| v.scatter_add_rows(&[1, 0, 1, 1], 2).unwrap()),
        ),
        (
            "submatrix",
            unary_error(x.clone(), |v| v.submatrix(&[0, 3], &[2, 1]).unwrap()),
        ),
        ("reshape", unary_error(x.clone(), |v| v.reshape(&[2, 6]).unwrap())),
        ("transpose", unary_error(x.clone(), |v| v.transpose().unwrap())),
        ("normalize_rows", unary_error(x.clone(), |v| v.normalize_rows().unwrap())),
        (
            "standardize_cols",
            unary_error(x.clone(), |v| v.standardize_cols(1e-5).unwrap()),
        ),
        ("sum", unary_error(x.clone(), |v| v.sum().unwrap())),
        (
            "cross_entropy",
            unary_error(random_tensor(3, 2, 11).map(|v| 2.0 * v), |v| {
                v.cross_entropy(&[1, 0, 1]).unwrap()
            }),
        ),
        (
            "row_sq_dist",
            binary_error(random_tensor(3, 4, 12), random_tensor(3, 4, 13), |a, b| {
                a.row_sq_dist(b).unwrap()
            }),
        ),
        (
            "dropout",
            unary_error(random_tensor(3, 5, 14), |v| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
                v.dropout(0.3, &mut rng).unwrap()
            }),
        ),
    ];
    for layer in 0..3 {
        out.push((["mlp/w0", "mlp/w1", "mlp/w2"][layer], mlp_error(layer)));
    }
    out.into_iter().map(|(n, e)| (n.to_string(), e)).collect()
}
