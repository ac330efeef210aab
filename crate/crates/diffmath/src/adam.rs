use crate::error::DiffError;
use crate::tensor::Tensor;

/// Adam hyperparameters. The moment decay rates and epsilon are the
/// customary defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first and second moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let zeros = |p: &&Tensor| Tensor::zeros(p.rows(), p.cols());
        Self { config, step: 0, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
///
/// The whole step is rejected, leaving parameters and state untouched, if
/// any gradient entry is non-finite.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DiffError::Shape {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} slots", params.len(), grads.len(), state.m.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(DiffError::Shape {
                op: "adam_step",
                detail: format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
        let bad = g.data().iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(DiffError::NonFiniteGradient { param: i, bad, total: g.len() });
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::column(vec![1.0, -2.0]);
        let g = Tensor::zeros(2, 1);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let lr = 0.01;
        let mut p = Tensor::column(vec![0.0, 0.0]);
        let g = Tensor::column(vec![3.0, -0.5]);
        let mut st = AdamState::new(AdamConfig::with_lr(lr), &[&p]);
        let mut prev = p.clone();
        for _ in 0..200 {
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
            let d0 = p.data()[0] - prev.data()[0];
            let d1 = p.data()[1] - prev.data()[1];
            assert!((d0 + lr).abs() < 1e-6, "{d0}");
            assert!((d1 - lr).abs() < 1e-6, "{d1}");
            prev = p.clone();
        }
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = (w - 3)^2 from w = 0 with lr 0.1
        let mut w = Tensor::scalar(0.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &[&w]);
        for _ in 0..20 {
            let g = Tensor::scalar(2.0 * (w.item() - 3.0));
            adam_step(&mut [&mut w], &[&g], &mut st).unwrap();
        }
        // scalar recurrence written out independently
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=20 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w.item() - x).abs() < 1e-12);
        assert!((w.item() - 3.0).abs() < 3.0);
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut p = Tensor::column(vec![1.0, 1.0]);
        let g = Tensor::column(vec![0.5, f64::NAN]);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        let err = adam_step(&mut [&mut p], &[&g], &mut st).unwrap_err();
        assert_eq!(err, DiffError::NonFiniteGradient { param: 0, bad: 1, total: 2 });
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(st.step_count(), 0);
    }
}
