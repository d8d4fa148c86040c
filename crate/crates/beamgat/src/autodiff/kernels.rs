//! Forward kernels shared by tracked and untracked execution paths.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn require_matrix<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Shape(format!("{what} must be 2-D, got {other:?}"))),
    }
}

/// `a (m×k) · b (k×n)`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, ka) = require_matrix(a, "matmul lhs")?;
    let (kb, n) = require_matrix(b, "matmul rhs")?;
    if ka != kb {
        return Err(Error::Shape(format!(
            "matmul inner dimensions {ka} and {kb} disagree"
        )));
    }
    let mut out = vec![S::zero(); m * n];
    S::gemm_strided(
        m,
        ka,
        n,
        a.values(),
        ka as isize,
        1,
        b.values(),
        n as isize,
        1,
        S::zero(),
        &mut out,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a (m×k) · bᵀ` with `b` stored `n×k`.
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, ka) = require_matrix(a, "matmul lhs")?;
    let (n, kb) = require_matrix(b, "matmul rhs (transposed)")?;
    if ka != kb {
        return Err(Error::Shape(format!(
            "matmul inner dimensions {ka} and {kb} disagree"
        )));
    }
    let mut out = vec![S::zero(); m * n];
    S::gemm_strided(
        m,
        ka,
        n,
        a.values(),
        ka as isize,
        1,
        b.values(),
        1,
        kb as isize,
        S::zero(),
        &mut out,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

fn zip_same_shape<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "elementwise op on shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), values))
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_same_shape(a, b, |x, y| x + y)
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_same_shape(a, b, |x, y| x - y)
}

pub fn hadamard<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_same_shape(a, b, |x, y| x * y)
}

/// `mat (n×f) + bias (f)` broadcast over rows.
pub fn add_bias_row<S: Scalar>(mat: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, f) = require_matrix(mat, "bias add lhs")?;
    if bias.len() != f {
        return Err(Error::Shape(format!(
            "bias of length {} against {} columns",
            bias.len(),
            f
        )));
    }
    let b = bias.values();
    let mut values = Vec::with_capacity(n * f);
    for row in mat.values().chunks_exact(f) {
        for (x, y) in row.iter().zip(b) {
            values.push(*x + *y);
        }
    }
    Ok(Tensor::from_parts(vec![n, f], values))
}

pub fn scale<S: Scalar>(x: &Tensor<S>, c: S) -> Tensor<S> {
    let values = x.values().iter().map(|&v| v * c).collect();
    Tensor::from_parts(x.shape().to_vec(), values)
}

pub fn leaky_relu<S: Scalar>(x: &Tensor<S>, slope: S) -> Tensor<S> {
    let values = x
        .values()
        .iter()
        .map(|&v| if v > S::zero() { v } else { v * slope })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), values)
}

pub fn elu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let values = x
        .values()
        .iter()
        .map(|&v| if v >= S::zero() { v } else { v.exp_m1() })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), values)
}

/// Checks that `offsets` is a contiguous non-decreasing partition of `[0, e)`
/// with no empty segment.
pub fn validate_segments(offsets: &[usize], e: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&e) {
        return Err(Error::Shape(format!(
            "segment offsets must start at 0 and end at {e}"
        )));
    }
    for w in offsets.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Shape(
                "empty or decreasing softmax segment (graph must guarantee degree >= 1)".into(),
            ));
        }
    }
    Ok(())
}

/// Per-segment exp-normalization with max subtraction.
pub fn segment_softmax<S: Scalar>(scores: &Tensor<S>, offsets: &[usize]) -> Result<Tensor<S>> {
    if scores.cols() != 1 {
        return Err(Error::Shape("segment softmax expects a column of scores".into()));
    }
    validate_segments(offsets, scores.len())?;
    let x = scores.values();
    let mut out = vec![S::zero(); x.len()];
    for w in offsets.windows(2) {
        let seg = &x[w[0]..w[1]];
        let max = seg.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for (slot, &v) in out[w[0]..w[1]].iter_mut().zip(seg) {
            let e = (v - max).exp();
            *slot = e;
            denom += e;
        }
        for slot in &mut out[w[0]..w[1]] {
            *slot = *slot / denom;
        }
    }
    Ok(Tensor::from_parts(scores.shape().to_vec(), out))
}

/// Row `i` of the output is `Σ_{e in segment i} alpha[e] · messages[e]`.
pub fn segment_weighted_sum<S: Scalar>(
    alpha: &Tensor<S>,
    messages: &Tensor<S>,
    offsets: &[usize],
) -> Result<Tensor<S>> {
    let (e, f) = require_matrix(messages, "segment messages")?;
    if alpha.cols() != 1 || alpha.len() != e {
        return Err(Error::Shape(format!(
            "alpha has {} weights for {} message rows",
            alpha.len(),
            e
        )));
    }
    validate_segments(offsets, e)?;
    let n = offsets.len() - 1;
    let a = alpha.values();
    let msg = messages.values();
    let mut out = vec![S::zero(); n * f];
    for (i, w) in offsets.windows(2).enumerate() {
        let row = &mut out[i * f..(i + 1) * f];
        for edge in w[0]..w[1] {
            let weight = a[edge];
            for (slot, &m) in row.iter_mut().zip(&msg[edge * f..(edge + 1) * f]) {
                *slot += weight * m;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, f], out))
}

/// Column-wise concatenation of equal-row-count matrices, in the given order.
pub fn concat_columns<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::Shape("concat of zero parts".into()));
    }
    let (rows, _) = require_matrix(parts[0], "concat part")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = require_matrix(p, "concat part")?;
        if r != rows {
            return Err(Error::Shape(format!(
                "concat row counts disagree: {rows} vs {r}"
            )));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut values = Vec::with_capacity(rows * total);
    for row in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            values.extend_from_slice(&p.values()[row * w..(row + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(vec![rows, total], values))
}

/// Select rows by index (duplicates allowed).
pub fn gather_rows<S: Scalar>(x: &Tensor<S>, indices: &[usize]) -> Result<Tensor<S>> {
    let (n, f) = require_matrix(x, "gather input")?;
    let mut values = Vec::with_capacity(indices.len() * f);
    for &i in indices {
        if i >= n {
            return Err(Error::Shape(format!("gather index {i} out of {n} rows")));
        }
        values.extend_from_slice(&x.values()[i * f..(i + 1) * f]);
    }
    Ok(Tensor::from_parts(vec![indices.len(), f], values))
}

/// Contiguous row slice `[start, start + len)`.
pub fn slice_rows<S: Scalar>(x: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    let (n, f) = require_matrix(x, "slice input")?;
    if start + len > n {
        return Err(Error::Shape(format!(
            "row slice {start}..{} out of {n} rows",
            start + len
        )));
    }
    let values = x.values()[start * f..(start + len) * f].to_vec();
    Ok(Tensor::from_parts(vec![len, f], values))
}

pub fn sum_all<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    Tensor::scalar(x.values().iter().cloned().sum())
}

pub fn mean_all<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.is_empty() {
        return Err(Error::Shape("mean of empty tensor".into()));
    }
    let n = S::from_usize(x.len()).expect("length fits scalar");
    Ok(Tensor::scalar(x.values().iter().cloned().sum::<S>() / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = t(&[3, 3], &[2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 0.0, 1.0, 9.0]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(matmul(&a, &b).unwrap().values(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_nt_agrees_with_explicit_transpose() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b_t = t(&[3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]); // = bᵀ
        let b = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul_nt(&a, &b).unwrap(), matmul(&a, &b_t).unwrap());
    }

    #[test]
    fn leaky_relu_values() {
        let x = t(&[2], &[1.0, -1.0]);
        assert_eq!(leaky_relu(&x, 0.2).values(), &[1.0, -0.2]);
        assert_eq!(leaky_relu(&t(&[1], &[0.0]), 0.7).values(), &[0.0]);
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(&t(&[1], &[0.0])).values(), &[0.0]);
        // approaches the -1 asymptote from above; at -50 the gap is far below
        // one ulp, so equality with -1.0 is the representable answer
        let v = elu(&t(&[1], &[-50.0])).values()[0];
        assert!(v >= -1.0 && (v + 1.0).abs() < 1e-20, "elu(-50) = {v}");
    }

    #[test]
    fn segment_softmax_uniform_and_stable() {
        let offsets = [0usize, 3, 5];
        let s = segment_softmax(&t(&[5], &[0.0, 0.0, 0.0, 1000.0, 1000.0]), &offsets).unwrap();
        let v = s.values();
        for x in &v[..3] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[3] - 0.5).abs() < 1e-15 && (v[4] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn segment_softmax_direct_evaluation() {
        // exp-normalized [ln 1, ln 3] -> [1/4, 3/4]
        let s = segment_softmax(&t(&[2], &[0.0, 3.0f64.ln()]), &[0, 2]).unwrap();
        assert!((s.values()[0] - 0.25).abs() < 1e-15);
        assert!((s.values()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn segment_softmax_rejects_empty_segment() {
        assert!(segment_softmax(&t(&[2], &[0.0, 0.0]), &[0, 0, 2]).is_err());
    }

    #[test]
    fn segment_weighted_sum_hand_expansion() {
        // alpha all one with a single edge per node copies messages through.
        let msg = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let copied =
            segment_weighted_sum(&t(&[2], &[1.0, 1.0]), &msg, &[0, 1, 2]).unwrap();
        assert_eq!(copied, msg);

        let msg = t(&[2, 2], &[4.0, 0.0, 0.0, 4.0]);
        let mixed =
            segment_weighted_sum(&t(&[2], &[0.25, 0.75]), &msg, &[0, 2]).unwrap();
        assert_eq!(mixed.values(), &[1.0, 3.0]);
    }

    #[test]
    fn concat_columns_orders_heads() {
        let a = t(&[2, 2], &[1.0, 2.0, 5.0, 6.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 7.0, 8.0]);
        let c = t(&[2, 2], &[-1.0, -2.0, -3.0, -4.0]);
        let out = concat_columns(&[&a, &b, &c]).unwrap();
        assert_eq!(out.shape(), &[2, 6]);
        assert_eq!(
            out.values(),
            &[1.0, 2.0, 3.0, 4.0, -1.0, -2.0, 5.0, 6.0, 7.0, 8.0, -3.0, -4.0]
        );
        // single part is the identity
        assert_eq!(concat_columns(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_columns_rejects_row_mismatch() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[3, 1], &[1.0, 2.0, 3.0]);
        assert!(concat_columns(&[&a, &b]).is_err());
    }

    #[test]
    fn gather_and_slice() {
        let x = t(&[3, 2], &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let g = gather_rows(&x, &[2, 0, 2]).unwrap();
        assert_eq!(g.values(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
        let s = slice_rows(&x, 1, 2).unwrap();
        assert_eq!(s.values(), &[10.0, 11.0, 20.0, 21.0]);
    }
}
