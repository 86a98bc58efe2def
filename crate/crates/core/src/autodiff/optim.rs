//! AdaDelta-sized gradient descent.

use super::{DiffError, Scalar, Tensor};

/// Decay and stabilizer for the AdaDelta update rule.
#[derive(Clone, Copy, Debug)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

/// Per-parameter accumulators: decayed squared gradients and decayed squared
/// updates, aligned index-for-index with the parameter list they optimize.
pub struct AdaDeltaState<S> {
    cfg: AdaDeltaConfig,
    acc_grad: Vec<Tensor<S>>,
    acc_update: Vec<Tensor<S>>,
}

impl<S: Scalar> AdaDeltaState<S> {
    pub fn new(params: &[&Tensor<S>], cfg: AdaDeltaConfig) -> Self {
        Self {
            cfg,
            acc_grad: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            acc_update: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn config(&self) -> AdaDeltaConfig {
        self.cfg
    }

    pub fn accumulated_grad(&self, i: usize) -> &Tensor<S> {
        &self.acc_grad[i]
    }
}

/// One AdaDelta step:
///
/// acc_g ← ρ·acc_g + (1−ρ)·g²
/// Δ     ← −(√(acc_dx+ε) / √(acc_g+ε))·g
/// acc_dx ← ρ·acc_dx + (1−ρ)·Δ²
/// param += Δ
pub fn adadelta_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut AdaDeltaState<S>,
) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.acc_grad.len() {
        return Err(DiffError::InvalidArgument(format!(
            "parameter/gradient/state count mismatch: {}/{}/{}",
            params.len(),
            grads.len(),
            state.acc_grad.len()
        )));
    }
    let rho = S::from_f64(state.cfg.rho);
    let one_minus_rho = S::from_f64(1.0 - state.cfg.rho);
    let eps = S::from_f64(state.cfg.eps);

    for ((param, grad), (acc_g, acc_dx)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.acc_grad.iter_mut().zip(state.acc_update.iter_mut()))
    {
        if param.shape() != grad.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "adadelta_step",
                left: param.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        if !grad.all_finite() {
            return Err(DiffError::NonFinite {
                op: "adadelta_step gradient",
            });
        }
        for (((p, &g), ag), adx) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(acc_g.data_mut().iter_mut())
            .zip(acc_dx.data_mut().iter_mut())
        {
            *ag = rho * *ag + one_minus_rho * g * g;
            let delta = -((*adx + eps).sqrt() / (*ag + eps).sqrt()) * g;
            *adx = rho * *adx + one_minus_rho * delta * delta;
            *p = *p + delta;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point_and_decays_acc() {
        let mut p = Tensor::vector(vec![1.0f64, -2.0]);
        let before = p.clone();
        let g = Tensor::zeros(vec![2]);
        let mut state = AdaDeltaState::new(&[&p], AdaDeltaConfig::default());
        // seed acc_g so decay is observable
        state.acc_grad[0].data_mut()[0] = 1.0;
        adadelta_step(&mut [&mut p], &[g], &mut state).unwrap();
        assert_eq!(p, before);
        assert!((state.acc_grad[0].data()[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn first_step_matches_hand_evaluated_rule() {
        // p = 1, g = 1, fresh state, ρ = 0.95, ε = 1e-6:
        // acc_g = 0.05, Δ = −√(1e-6 / 0.050001) ≈ −4.472e-3
        let mut p = Tensor::scalar(1.0f64);
        let g = Tensor::scalar(1.0);
        let mut state = AdaDeltaState::new(&[&p], AdaDeltaConfig::default());
        adadelta_step(&mut [&mut p], &[g], &mut state).unwrap();
        assert!((state.acc_grad[0].data()[0] - 0.05).abs() < 1e-12);
        let delta = p.data()[0] - 1.0;
        let expected = -(1e-6f64 / 0.050001).sqrt();
        assert!((delta - expected).abs() < 1e-9);
    }

    #[test]
    fn update_opposes_gradient_sign() {
        let mut p = Tensor::vector(vec![0.0f64, 0.0]);
        let g = Tensor::vector(vec![3.0f64, -0.5]);
        let mut state = AdaDeltaState::new(&[&p], AdaDeltaConfig::default());
        adadelta_step(&mut [&mut p], &[g], &mut state).unwrap();
        assert!(p.data()[0] < 0.0);
        assert!(p.data()[1] > 0.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = Tensor::scalar(1.0f64);
        let mut g = Tensor::scalar(1.0);
        g.data_mut()[0] = f64::INFINITY;
        let mut state = AdaDeltaState::new(&[&p], AdaDeltaConfig::default());
        let err = adadelta_step(&mut [&mut p], &[g], &mut state).unwrap_err();
        assert!(matches!(err, DiffError::NonFinite { .. }));
    }
}
