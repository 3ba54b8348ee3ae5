// Raw kernels shared by the tape's forward and backward passes.

use super::Tensor;
use crate::scalar::Scalar;

pub(super) fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![S::zero(); m * n];
    S::gemm(m, k, n, a.data(), b.data(), &mut out);
    Tensor::from_parts(vec![m, n], out)
}

pub(super) fn transpose<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (a.rows(), a.cols());
    let src = a.data();
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// `a · bᵀ`
pub(super) fn matmul_bt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    matmul(a, &transpose(b))
}

/// `aᵀ · b`
pub(super) fn matmul_at<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    matmul(&transpose(a), b)
}

/// Row softmax restricted to `mask` (all entries when `None`). Masked entries
/// come out exactly zero. Max-subtracted for stability.
pub(super) fn softmax_rows<S: Scalar>(x: &Tensor<S>, mask: Option<&[bool]>) -> Tensor<S> {
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = x.row(i);
        let keep = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
        let mut max = S::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        let mut total = S::zero();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - max).exp();
                out[i * n + j] = e;
                total = total + e;
            }
        }
        for o in &mut out[i * n..(i + 1) * n] {
            *o = *o / total;
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// Backward of a (masked) row softmax given its output `y`.
pub(super) fn softmax_rows_backward<S: Scalar>(y: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (y.rows(), y.cols());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let yr = y.row(i);
        let gr = g.row(i);
        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..n {
            out[i * n + j] = yr[j] * (gr[j] - dot);
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

pub(super) fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(super) fn gather_rows<S: Scalar>(a: &Tensor<S>, idx: &[usize]) -> Tensor<S> {
    let c = a.cols();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &r in idx {
        out.extend_from_slice(a.row(r));
    }
    Tensor::from_parts(vec![idx.len(), c], out)
}

pub(super) fn scatter_add_rows<S: Scalar>(a: &Tensor<S>, idx: &[usize], rows: usize) -> Tensor<S> {
    let c = a.cols();
    let mut out = vec![S::zero(); rows * c];
    for (src, &dst) in idx.iter().enumerate() {
        for (o, &v) in out[dst * c..(dst + 1) * c].iter_mut().zip(a.row(src)) {
            *o = *o + v;
        }
    }
    Tensor::from_parts(vec![rows, c], out)
}

pub(super) fn column_sums<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let c = a.cols();
    let mut out = vec![S::zero(); c];
    for i in 0..a.rows() {
        for (o, &v) in out.iter_mut().zip(a.row(i)) {
            *o = *o + v;
        }
    }
    Tensor::from_parts(vec![1, c], out)
}
