//! Central finite-difference gradient oracle.
//!
//! Runs in `f64` only: the 32-bit mode does not have enough headroom for the
//! ±eps probes to be meaningful.

use super::{DiffError, Tape, Tensor, ValueId};

/// Builds a scalar loss over the given leaves on a fresh tape.
pub trait LossBuilder {
    fn build(&self, tape: &mut Tape<f64>, params: &[ValueId]) -> Result<ValueId, DiffError>;
}

impl<F> LossBuilder for F
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId, DiffError>,
{
    fn build(&self, tape: &mut Tape<f64>, params: &[ValueId]) -> Result<ValueId, DiffError> {
        self(tape, params)
    }
}

fn evaluate(builder: &impl LossBuilder, params: &[Tensor<f64>]) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = builder.build(&mut tape, &ids)?;
    let v = tape
        .value(loss)
        .scalar_value()
        .ok_or_else(|| DiffError::LossNotScalar(tape.value(loss).shape().to_vec()))?;
    if !v.is_finite() {
        return Err(DiffError::NonFinite {
            op: "finite_difference_check",
        });
    }
    Ok(v)
}

/// Compares reverse-mode gradients against central differences
/// (f(p+eps) − f(p−eps)) / (2·eps), coordinate by coordinate.
///
/// Returns the maximum relative error
/// |g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|) over all coordinates.
pub fn finite_difference_check(
    builder: impl LossBuilder,
    params: &[Tensor<f64>],
    eps: f64,
) -> Result<f64, DiffError> {
    if eps <= 0.0 {
        return Err(DiffError::InvalidArgument("eps must be positive".into()));
    }

    // Reverse-mode gradients once.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = builder.build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    let ad: Vec<Tensor<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| grads.get_or_zeros(id, p.shape()))
        .collect();

    let mut max_rel = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for j in 0..param.len() {
            let orig = param.data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let f_plus = evaluate(&builder, &probe)?;
            probe[pi].data_mut()[j] = orig - eps;
            let f_minus = evaluate(&builder, &probe)?;
            probe[pi].data_mut()[j] = orig;

            let fd = (f_plus - f_minus) / (2.0 * eps);
            let g = ad[pi].data()[j];
            let rel = (g - fd).abs() / (1e-8f64).max(g.abs() + fd.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_analytic_value() {
        // f(x) = x² at x = 3: analytic gradient 6, fd is exact for quadratics.
        let params = [Tensor::scalar(3.0)];
        let err = finite_difference_check(
            |tape: &mut Tape<f64>, ids: &[ValueId]| {
                let sq = tape.mul(ids[0], ids[0])?;
                tape.reduce_sum(sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = [Tensor::vector(vec![1.0, 2.0])];
        let err = finite_difference_check(
            |tape: &mut Tape<f64>, _ids: &[ValueId]| {
                let c = tape.constant(Tensor::scalar(4.0));
                tape.reduce_sum(c)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let params = [Tensor::scalar(1.0)];
        let err = finite_difference_check(
            |tape: &mut Tape<f64>, ids: &[ValueId]| tape.reduce_sum(ids[0]),
            &params,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, DiffError::InvalidArgument(_)));
    }

    /// Every primitive checked individually against the oracle.
    #[test]
    fn primitives_match_finite_differences() {
        type Build = fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId, DiffError>;
        let cases: Vec<(&str, Vec<Tensor<f64>>, Build)> = vec![
            (
                "matmul vec*mat",
                vec![
                    Tensor::vector(vec![0.3, -0.7]),
                    Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.5, -0.1, 0.4]).unwrap(),
                ],
                |t, ids| {
                    let y = t.matmul(ids[0], ids[1])?;
                    let s = t.tanh(y)?;
                    t.reduce_sum(s)
                },
            ),
            (
                "matmul mat*vec",
                vec![
                    Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.5, -0.1, 0.4]).unwrap(),
                    Tensor::vector(vec![0.3, -0.7]),
                ],
                |t, ids| {
                    let y = t.matmul(ids[0], ids[1])?;
                    let s = t.sigmoid(y)?;
                    t.reduce_sum(s)
                },
            ),
            (
                "matmul mat*mat",
                vec![
                    Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.5, -0.1, 0.4]).unwrap(),
                    Tensor::matrix(3, 2, vec![0.7, -0.2, 0.05, 0.3, -0.6, 0.1]).unwrap(),
                ],
                |t, ids| {
                    let y = t.matmul(ids[0], ids[1])?;
                    let s = t.tanh(y)?;
                    t.reduce_sum(s)
                },
            ),
            (
                "add/sub/mul/affine",
                vec![
                    Tensor::vector(vec![0.2, -0.4, 0.9]),
                    Tensor::vector(vec![-0.5, 0.3, 0.1]),
                ],
                |t, ids| {
                    let a = t.add(ids[0], ids[1])?;
                    let b = t.sub(a, ids[1])?;
                    let c = t.mul(b, ids[0])?;
                    let d = t.affine(c, 1.5, -0.2)?;
                    t.reduce_sum(d)
                },
            ),
            (
                "softmax + cross_entropy",
                vec![Tensor::vector(vec![0.5, -1.0, 2.0, 0.0])],
                |t, ids| {
                    let p = t.softmax(ids[0])?;
                    t.cross_entropy(p, 2)
                },
            ),
            (
                "concat + slice",
                vec![
                    Tensor::vector(vec![0.4, -0.3]),
                    Tensor::vector(vec![0.8, 0.2, -0.9]),
                ],
                |t, ids| {
                    let c = t.concat(ids[0], ids[1])?;
                    let s = t.slice(c, 1, 3)?;
                    let sq = t.mul(s, s)?;
                    t.reduce_sum(sq)
                },
            ),
            (
                "embed_lookup",
                vec![Tensor::matrix(3, 2, vec![0.1, 0.9, -0.4, 0.2, 0.6, -0.5]).unwrap()],
                |t, ids| {
                    let r0 = t.embed_lookup(ids[0], 0)?;
                    let r2 = t.embed_lookup(ids[0], 2)?;
                    let both = t.mul(r0, r2)?;
                    let s = t.tanh(both)?;
                    t.reduce_sum(s)
                },
            ),
            (
                "reshape + matmul",
                vec![
                    Tensor::vector(vec![0.2, -0.1, 0.7, 0.4]),
                    Tensor::vector(vec![0.5, -0.9]),
                ],
                |t, ids| {
                    let m = t.reshape(ids[0], vec![2, 2])?;
                    let y = t.matmul(ids[1], m)?;
                    let s = t.tanh(y)?;
                    t.reduce_sum(s)
                },
            ),
        ];

        for (name, params, build) in cases {
            let err = finite_difference_check(build, &params, 1e-6).unwrap();
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}
