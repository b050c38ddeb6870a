//! Minimal trainable-layer substrate with explicit forward/backward passes.
//! No autodiff graph: every layer returns a typed cache that its backward
//! pass consumes, and gradients accumulate into the owning `Param`s.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod spec;

use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call context: mode plus the RNG stream feeding stochastic layers.
pub struct FwdCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut Stream,
}

impl<'a> FwdCtx<'a> {
    pub fn new(mode: Mode, rng: &'a mut Stream) -> Self {
        FwdCtx { mode, rng }
    }
}

/// Trainable parameter with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub w: Tensor<T>,
    pub g: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(w: Tensor<T>) -> Self {
        let g = Tensor::zeros(w.shape());
        Param { w, g }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(T::zero());
    }
}

/// Named visitation over every parameter of a model; drives the optimizer,
/// checkpointing, and gradient checks.
pub trait ParamSet<T: Scalar> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>));
}

pub fn zero_grads<T: Scalar>(model: &mut dyn ParamSet<T>) {
    model.visit("", &mut |_, p| p.zero_grad());
}

pub fn param_count<T: Scalar>(model: &mut dyn ParamSet<T>) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, p| n += p.w.len());
    n
}

/// He-normal standard deviation for a given fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
