use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    /// Zeroed moments for parameters of the given sizes.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params.into_iter().map(|p| (alloc::vec![0.0; p.len()], alloc::vec![0.0; p.len()])).unzip();
        AdamW { m, v, t: 0 }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `θ ← θ − lr·wd·θ − lr·m̂ / (√v̂ + ε)` with bias-corrected
    /// moments. `names` label parameter groups in error messages.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            bail!(Contract, "optimizer tracks {} tensors, got {} params and {} grads", self.m.len(), params.len(), grads.len());
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                let name = names.get(i).map(String::as_str).unwrap_or("?");
                bail!(NonFinite, "gradient of parameter group {name} is not finite");
            }
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(BETA1, self.t as f64);
        let bc2 = 1.0 - libm::pow(BETA2, self.t as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= lr * weight_decay * *theta;
                *theta -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let mut opt = AdamW::new([&p]);
        let g = Tensor::zeros(&[3]);
        opt.step(&mut [&mut p], &[g], &names(1), 0.01, 0.05).unwrap();
        for (a, b) in p.data().iter().zip(orig.data()) {
            assert_eq!(*a, b * (1.0 - 0.01 * 0.05));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g0 in [3.7, -0.002, 150.0] {
            let mut p = Tensor::scalar(1.0);
            let mut opt = AdamW::new([&p]);
            opt.step(&mut [&mut p], &[Tensor::scalar(g0)], &names(1), 1e-3, 0.0).unwrap();
            let delta = 1.0 - p.data()[0];
            // m̂/√v̂ = g/|g|, reduced slightly by ε
            assert!((delta.abs() - 1e-3).abs() < 1e-3 * 1e-8 / g0.abs() + 1e-15);
            assert_eq!(delta.signum(), g0.signum());
        }
    }

    #[test]
    fn nan_gradient_names_group() {
        let mut p = Tensor::scalar(1.0);
        let mut q = Tensor::scalar(1.0);
        let mut opt = AdamW::new([&p, &q]);
        let err = opt
            .step(&mut [&mut p, &mut q], &[Tensor::scalar(0.0), Tensor::new(&[1], vec![f64::NAN]).unwrap()], &names(2), 1e-3, 0.0)
            .err();
        assert!(matches!(err, Some(crate::Error::NonFinite(ref m)) if m.contains("p1")));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn deterministic_over_ten_steps() {
        let run = || {
            let mut p = Tensor::new(&[2], vec![0.3, -0.4]).unwrap();
            let mut opt = AdamW::new([&p]);
            for s in 0..10 {
                let g = p.map(|v| 2.0 * v + s as f64 * 0.01);
                opt.step(&mut [&mut p], &[g], &names(1), 1e-2, 0.05).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());
    }
}
