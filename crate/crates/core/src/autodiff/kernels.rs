//! Shared numeric kernels.
//!
//! Both the tape primitives and the pure inference path in `seq2seq` call
//! these, so forward values agree bit-for-bit between training and
//! generation. Accumulation order is fixed (ascending index) to keep runs
//! reproducible.

use super::Scalar;

/// y = x · W for x of length `rows` and row-major W of `rows × cols`.
pub fn vecmat<S: Scalar>(x: &[S], w: &[S], rows: usize, cols: usize) -> Vec<S> {
    debug_assert_eq!(x.len(), rows);
    debug_assert_eq!(w.len(), rows * cols);
    let mut y = vec![S::zero(); cols];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj = *yj + xi * wij;
        }
    }
    y
}

/// y = W · x for row-major W of `rows × cols` and x of length `cols`.
pub fn matvec<S: Scalar>(w: &[S], rows: usize, cols: usize, x: &[S]) -> Vec<S> {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), rows * cols);
    let mut y = vec![S::zero(); rows];
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = S::zero();
        for (&wij, &xj) in row.iter().zip(x) {
            acc = acc + wij * xj;
        }
        *yi = acc;
    }
    y
}

/// C = A · B for A of `m × k` and B of `k × n`.
pub fn matmul<S: Scalar>(a: &[S], m: usize, k: usize, b: &[S], n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cij, &bpj) in crow.iter_mut().zip(brow) {
                *cij = *cij + aip * bpj;
            }
        }
    }
    c
}

/// Outer product a ⊗ b as an `a.len() × b.len()` row-major matrix.
pub fn outer<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        for &bj in b {
            out.push(ai * bj);
        }
    }
    out
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub fn add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn mul<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

/// Elementwise a·x + b.
pub fn affine<S: Scalar>(x: &[S], a: S, b: S) -> Vec<S> {
    x.iter().map(|&v| a * v + b).collect()
}

pub fn tanh_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v.tanh()).collect()
}

pub fn sigmoid_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| S::one() / (S::one() + (-v).exp())).collect()
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Max-subtracted softmax.
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = S::zero();
    for &e in &out {
        sum = sum + e;
    }
    for e in &mut out {
        *e = *e / sum;
    }
    out
}
