//! Conditioning path: random Fourier features for the noise level, one MLP
//! per factor (noise, h, v), and the variant-dependent concatenation that
//! drives the U-Net's FiLM layers.

use super::{CondConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::layers::{relu, relu_backward, Linear, LinearCache, ReluCache};
use crate::nn::{Param, ParamSet};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Frozen random Fourier features of u = ln(σ)/4:
/// e_k = cos(2π·w_k·u + b_k), w ~ N(0, 16²), b ~ U[0, 2π).
pub struct RffEmbed<T> {
    pub weights: Param<T>,
    pub phases: Param<T>,
    pub dim: usize,
}

impl<T: Scalar> RffEmbed<T> {
    pub fn new(dim: usize, rng: &mut Stream) -> Self {
        let weights =
            Tensor::from_fn(&[dim], |_| T::of(rng.sample::<f64, _>(StandardNormal) * 16.0));
        let phases =
            Tensor::from_fn(&[dim], |_| T::of(rng.gen::<f64>() * 2.0 * std::f64::consts::PI));
        RffEmbed {
            weights: Param::new(weights),
            phases: Param::new(phases),
            dim,
        }
    }

    /// Embed one noise level per batch item; sigmas length = batch size.
    pub fn embed(&self, sigmas: &[f64]) -> Tensor<T> {
        let b = sigmas.len();
        let mut out = Tensor::zeros(&[b, self.dim]);
        for (bi, &sigma) in sigmas.iter().enumerate() {
            let u = sigma.ln() / 4.0;
            for k in 0..self.dim {
                let w = self.weights.w.data()[k].as_f64();
                let p = self.phases.w.data()[k].as_f64();
                out.data_mut()[bi * self.dim + k] =
                    T::of((2.0 * std::f64::consts::PI * w * u + p).cos());
            }
        }
        out
    }
}

impl<T: Scalar> ParamSet<T> for RffEmbed<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        // Frozen (never receive gradients) but persisted with the model.
        f(format!("{prefix}.w"), &mut self.weights);
        f(format!("{prefix}.phase"), &mut self.phases);
    }
}

/// Two ReLU hidden layers then a linear output.
pub struct CondMlp<T> {
    fc1: Linear<T>,
    fc2: Linear<T>,
    fc3: Linear<T>,
}

pub struct CondMlpCache<T: Scalar> {
    c1: LinearCache<T>,
    r1: ReluCache<T>,
    c2: LinearCache<T>,
    r2: ReluCache<T>,
    c3: LinearCache<T>,
}

impl<T: Scalar> CondMlp<T> {
    pub fn new(in_dim: usize, cfg: &CondConfig, rng: &mut Stream) -> Self {
        CondMlp {
            fc1: Linear::new(in_dim, cfg.hidden1, rng),
            fc2: Linear::new(cfg.hidden1, cfg.hidden2, rng),
            fc3: Linear::new(cfg.hidden2, cfg.out, rng),
        }
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, CondMlpCache<T>)> {
        let (a, c1) = self.fc1.forward(x)?;
        let (a, r1) = relu(a);
        let (a, c2) = self.fc2.forward(a)?;
        let (a, r2) = relu(a);
        let (y, c3) = self.fc3.forward(a)?;
        Ok((y, CondMlpCache { c1, r1, c2, r2, c3 }))
    }

    pub fn backward(&mut self, cache: &CondMlpCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.fc3.backward(&cache.c3, gy)?;
        let g = relu_backward(&cache.r2, &g);
        let g = self.fc2.backward(&cache.c2, &g)?;
        let g = relu_backward(&cache.r1, &g);
        self.fc1.backward(&cache.c1, &g)
    }
}

impl<T: Scalar> ParamSet<T> for CondMlp<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
        self.fc3.visit(&format!("{prefix}.fc3"), f);
    }
}

/// Concatenate per-factor embeddings row-wise: (B, Σ dims).
pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let b = parts[0].shape()[0];
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[b, total]);
    for bi in 0..b {
        let mut off = 0;
        for p in parts {
            let d = p.shape()[1];
            if p.shape()[0] != b {
                return Err(Error::shape("cond concat", b, p.shape()[0]));
            }
            out.data_mut()[bi * total + off..bi * total + off + d]
                .copy_from_slice(&p.data()[bi * d..(bi + 1) * d]);
            off += d;
        }
    }
    Ok(out)
}

/// Split a row-wise concatenation gradient back into the given widths.
pub fn split_rows<T: Scalar>(g: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let b = g.shape()[0];
    let total = g.shape()[1];
    let mut out = Vec::with_capacity(widths.len());
    let mut off = 0;
    for &d in widths {
        let mut part = Tensor::zeros(&[b, d]);
        for bi in 0..b {
            part.data_mut()[bi * d..(bi + 1) * d]
                .copy_from_slice(&g.data()[bi * total + off..bi * total + off + d]);
        }
        off += d;
        out.push(part);
    }
    out
}

/// Encoder- and decoder-side conditioning per variant. PROPOSED keeps the
/// position vector away from the encoder path entirely.
pub fn cond_embed<T: Scalar>(
    noise_emb: &Tensor<T>,
    h_emb: &Tensor<T>,
    v_emb: &Tensor<T>,
    variant: Variant,
) -> Result<(Tensor<T>, Tensor<T>)> {
    match variant {
        Variant::Proposed | Variant::WithToa => Ok((
            concat_rows(&[noise_emb, h_emb])?,
            concat_rows(&[noise_emb, v_emb])?,
        )),
        Variant::ConcatAllEmb => {
            let all = concat_rows(&[noise_emb, h_emb, v_emb])?;
            Ok((all.clone(), all))
        }
    }
}

/// FiLM conditioning width per side for a variant.
pub fn cond_dims(cfg: &CondConfig, variant: Variant) -> (usize, usize) {
    match variant {
        Variant::Proposed | Variant::WithToa => (2 * cfg.out, 2 * cfg.out),
        Variant::ConcatAllEmb => (3 * cfg.out, 3 * cfg.out),
    }
}
