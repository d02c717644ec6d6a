//! Adam with decoupled weight decay, plus the linear learning-rate schedule.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{GradMap, Params};

/// Decoupled-weight-decay Adam. State is keyed by parameter name, so one
/// optimizer instance can drive any [`Params`] model across steps.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update. `lr_scale` multiplies the base learning rate (schedule);
    /// parameters without a gradient entry are left untouched (frozen).
    pub fn step(
        &mut self,
        model: &mut impl Params,
        grads: &GradMap,
        lr_scale: f64,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let lr = self.lr * lr_scale;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);

        let mut err: Option<Error> = None;
        model.visit_mut(&mut |name, param| {
            let grad = match grads.get(name) {
                Some(g) => g,
                None => return,
            };
            if grad.dim() != param.dim() {
                err = Some(Error::ShapeMismatch(format!(
                    "{name}: grad {:?} vs param {:?}",
                    grad.dim(),
                    param.dim()
                )));
                return;
            }
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(param.dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(param.dim()));
            m.zip_mut_with(grad, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(grad, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, m), v) in param.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                *p -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Linear decay from 1 at step 0 to 0 at `total` steps.
pub fn linear_schedule(step: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let remaining = total.saturating_sub(step) as f64;
    remaining / total as f64
}
