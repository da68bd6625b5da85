//! Dense loops behind the tape operations.
//!
//! Every reduction runs in a fixed sequential order so identical inputs give
//! bit-identical outputs. The i-k-j loop order keeps each output element's
//! sum ordered by `k` while letting the inner loop vectorize across `j`.

use super::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[k×n] += aᵀ · g` for `a[m×k]`, `g[m×n]`; sums over `m` in ascending order.
pub(crate) fn matmul_tn_acc<T: Real>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for (a_row, g_row) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
        for (&av, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
            for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                *cv += av * gv;
            }
        }
    }
}

/// Transpose of a row-major `rows×cols` block.
pub(crate) fn transpose<T: Real>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    transpose_into(src, &mut out, rows, cols);
    out
}

pub(crate) fn transpose_into<T: Real>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for (r, row) in src.chunks_exact(cols).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            dst[c * rows + r] = v;
        }
    }
}

/// `c[m×k] += g[m×n] · bᵀ` for `b[k×n]`.
pub(crate) fn matmul_nt_acc<T: Real>(g: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(b, k, n);
    matmul_acc(g, &bt, c, m, n, k);
}

pub(crate) fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    let inv = T::one() / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// `-log softmax(row)[label]` via log-sum-exp.
pub(crate) fn nll_row<T: Real>(row: &[T], label: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for &x in row {
        total += (x - max).exp();
    }
    max + total.ln() - row[label]
}

const GELU_COEF: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of the Gaussian error linear unit.
#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::real(0.5);
    let u = T::real(GELU_SCALE) * (x + T::real(GELU_COEF) * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::real(0.5);
    let c = T::real(GELU_SCALE);
    let a = T::real(GELU_COEF);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::real(3.0) * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}
