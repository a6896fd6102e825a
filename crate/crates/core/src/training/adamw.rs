//! Adam with decoupled weight decay and bias correction.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in place. `grads[i] = None` means zero gradient.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::dim(format!(
                "adamw: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() {
                return Err(Error::dim(format!(
                    "adamw: param {i} has shape {:?}, state {:?}",
                    p.shape(),
                    self.m[i].shape()
                )));
            }
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::dim(format!("adamw: gradient {i} shape {:?} vs {:?}", g.shape(), p.shape())));
                }
                if !g.all_finite() {
                    return Err(Error::numeric(format!("adamw: non-finite gradient for param {i}")));
                }
            }
        }

        self.step += 1;
        let AdamWConfig { lr, weight_decay, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].as_ref().map(|g| g.data());
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *w -= lr * (update + weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut params = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut opt = AdamW::new(cfg, &params);
        for _ in 0..5 {
            opt.step(&mut params, &[Some(Tensor::zeros(&[3]))]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let g = Tensor::new(&[4], vec![3.0, -1e-3, 1e4, -7.0]).unwrap();
        let mut params = vec![Tensor::zeros(&[4])];
        let mut opt = AdamW::new(cfg, &params);
        opt.step(&mut params, &[Some(g.clone())]).unwrap();
        for (d, gk) in params[0].data().iter().zip(g.data()) {
            let expected = -cfg.lr * gk / (gk.abs() + cfg.eps);
            assert!((d - expected).abs() < 1e-18);
            assert!(d.abs() <= cfg.lr * (1.0 + 1e-12));
        }
    }

    #[test]
    fn decay_shrinks_geometrically() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut params = vec![Tensor::full(&[2], 2.0)];
        let mut opt = AdamW::new(cfg, &params);
        for _ in 0..3 {
            opt.step(&mut params, &[None]).unwrap();
        }
        let expected = 2.0 * (1.0f64 - 0.1 * 0.5).powi(3);
        for w in params[0].data() {
            assert!((w - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut opt = AdamW::new(AdamWConfig::default(), &params);
        let g = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(opt.step(&mut params, &[Some(g)]), Err(Error::Numeric(_))));
        assert_eq!(opt.steps_taken(), 0);
    }
}
