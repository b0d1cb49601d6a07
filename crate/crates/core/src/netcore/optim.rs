//! Adam with `f64` moment estimates.

use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// One moment buffer per parameter array, sized by `lens`.
    pub fn new(config: AdamConfig, lens: &[usize]) -> Self {
        Adam {
            config,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are checked for finiteness first, so a
    /// failing step leaves parameters and moments untouched.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} arrays, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(format!("parameter array {i} changed size")));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter array {i}")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j].to_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let updated = p[j].to_f64() - lr * mhat / (vhat.sqrt() + eps);
                p[j] = T::from_f64(updated);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut w = vec![1.0f64, -1.0];
        adam.step(&mut [w.as_mut_slice()], &[vec![0.5, -3.0]], 0.01).unwrap();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_and_counts_step() {
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        let mut w = vec![0.25f32, -4.0, 9.0];
        adam.step(&mut [w.as_mut_slice()], &[vec![0.0; 3]], 0.1).unwrap();
        assert_eq!(w, vec![0.25, -4.0, 9.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn hundred_steps_on_square() {
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        let mut w = vec![1.0f64];
        for _ in 0..100 {
            let g = vec![2.0 * w[0]];
            adam.step(&mut [w.as_mut_slice()], &[g], 0.1).unwrap();
        }
        assert!(w[0].abs() < 0.1, "{}", w[0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        let mut w = vec![5.0f64];
        for _ in 0..2000 {
            let g = vec![2.0 * (w[0] - 2.0)];
            adam.step(&mut [w.as_mut_slice()], &[g], 0.05).unwrap();
        }
        assert!((w[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        let mut w = vec![1.0f32];
        let r = adam.step(&mut [w.as_mut_slice()], &[vec![f32::NAN]], 0.1);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(w[0], 1.0);
        assert_eq!(adam.steps(), 0);
    }
}
