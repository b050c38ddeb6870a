//! Adam optimizer with bias correction, plus the stepped learning-rate
//! decay schedule used by both training stages.

use super::{Param, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::HashMap;

pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first: HashMap<String, Tensor<T>>,
    second: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update over every parameter of `model` at the
    /// given learning rate. Errors on non-finite gradients, naming the
    /// parameter.
    pub fn step(&mut self, lr: f64, model: &mut dyn ParamSet<T>) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one_m_b1 = T::of(1.0 - self.beta1);
        let one_m_b2 = T::of(1.0 - self.beta2);
        let lr_t = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(self.eps);

        let mut bad: Option<String> = None;
        model.visit("", &mut |name, p: &mut Param<T>| {
            if bad.is_some() {
                return;
            }
            if !p.g.all_finite() {
                bad = Some(name);
                return;
            }
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.w.shape()));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Tensor::zeros(p.w.shape()));
            for i in 0..p.w.len() {
                let g = p.g.data()[i];
                let mi = b1 * m.data()[i] + one_m_b1 * g;
                let vi = b2 * v.data()[i] + one_m_b2 * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let denom = vi.sqrt() * inv_sqrt_bc2 + eps;
                p.w.data_mut()[i] = p.w.data()[i] - lr_t * mi / denom;
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of parameter {name}")));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Stepped decay: lr = initial · factor^floor(epoch / every_n_epochs).
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every_n_epochs: usize,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.every_n_epochs) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct OneParam {
        p: Param<f64>,
    }

    impl ParamSet<f64> for OneParam {
        fn visit(&mut self, _prefix: &str, f: &mut dyn FnMut(String, &mut Param<f64>)) {
            f("p".into(), &mut self.p);
        }
    }

    #[test]
    fn first_step_matches_bias_corrected_algebra() {
        for &g in &[0.1f64, -0.1] {
            let mut model = OneParam {
                p: Param::new(Tensor::zeros(&[1])),
            };
            model.p.g.data_mut()[0] = g;
            let mut adam = Adam::new();
            adam.step(1e-3, &mut model).unwrap();
            // First step: m̂ = g, v̂ = g² ⇒ Δ = −lr·g/(|g| + eps).
            let expect = -1e-3 * g / (g.abs() + 1e-8);
            let got = model.p.w.data()[0];
            assert!((got - expect).abs() < 1e-12, "g={g}: {got} vs {expect}");
            assert!((got.abs() - 9.9999e-4).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = OneParam {
            p: Param::new(Tensor::filled(&[1], 0.7)),
        };
        let mut adam = Adam::new();
        adam.step(1e-3, &mut model).unwrap();
        assert_eq!(model.p.w.data()[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut model = OneParam {
            p: Param::new(Tensor::zeros(&[1])),
        };
        model.p.g.data_mut()[0] = f64::NAN;
        let mut adam = Adam::new();
        let err = adam.step(1e-3, &mut model).unwrap_err().to_string();
        assert!(err.contains('p'), "{err}");
    }

    #[test]
    fn lr_decay_reference_points() {
        let enc = LrSchedule {
            initial: 3e-4,
            factor: 0.98,
            every_n_epochs: 2,
        };
        assert_eq!(enc.at(0), 3e-4);
        assert!((enc.at(4) - 3e-4 * 0.98 * 0.98).abs() < 1e-18);
        assert!((enc.at(4) - 2.8812e-4).abs() < 1e-8);
        let gen = LrSchedule {
            initial: 3e-4,
            factor: 0.8,
            every_n_epochs: 10,
        };
        assert!((gen.at(10) - 2.4e-4).abs() < 1e-18);
    }
}
