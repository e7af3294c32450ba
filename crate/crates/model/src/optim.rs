use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::{ParamStore, Real};

/// Step schedule: `base` until `drop_epoch`, then `base * drop_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub drop_epoch: usize,
    pub drop_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base: 1e-4, drop_epoch: 30, drop_factor: 0.1 }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.drop_epoch {
            self.base
        } else {
            self.base * self.drop_factor
        }
    }
}

/// Scale `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping. Non-positive `max_norm` disables clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Option<Array2<F>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| {
            let v = v.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = F::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    step: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update; parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Option<Array2<F>>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = F::lit(lr * c2.sqrt() / c1);
        let eps = F::lit(self.eps * c2.sqrt());
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            Zip::from(params.get_mut(id)).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            });
        }
    }
}
