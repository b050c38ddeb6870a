//! Conditional diffusion generator for 4-channel SRIRs: variance-exploding
//! preconditioning, ρ-warped σ schedule, log-normal training noise draws,
//! and the stochastic churn sampler.

pub mod cond;
pub mod sampler;
pub mod train;
pub mod unet;

use crate::error::{Error, Result};
use crate::rng::Stream;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Generator conditioning variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Encoder/bottleneck FiLM driven by (noise, h); decoder FiLM by
    /// (noise, v).
    Proposed,
    /// Every FiLM layer receives (noise, h, v).
    ConcatAllEmb,
    /// Same wiring as Proposed, trained on unaligned responses so the
    /// model carries the time of arrival itself.
    WithToa,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::ConcatAllEmb => "concat-all",
            Variant::WithToa => "with-toa",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "concat-all" => Ok(Variant::ConcatAllEmb),
            "with-toa" => Ok(Variant::WithToa),
            other => Err(Error::InvalidArg(format!(
                "unknown variant {other:?} (expected proposed|concat-all|with-toa)"
            ))),
        }
    }

    pub fn aligned_training_data(&self) -> bool {
        !matches!(self, Variant::WithToa)
    }
}

/// Per-axis position normalization: the largest room dimensions in the
/// training ranges (x, y up to 20 m, z up to 8 m).
pub const V_NORM: [f64; 3] = [20.0, 20.0, 8.0];

/// Receiver-source conditioning vector v = (s − r), normalized per axis.
pub fn conditioning_vector(source: crate::geom::Vec3, receiver: crate::geom::Vec3) -> [f64; 3] {
    let d = source - receiver;
    [d.x / V_NORM[0], d.y / V_NORM[1], d.z / V_NORM[2]]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dilation_stack: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CondConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub out: usize,
    pub rff_dim: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiffusionConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub steps: usize,
    pub s_churn: f64,
    /// Std of training SRIR samples after max-abs normalization; estimated
    /// from the training set and stored in checkpoints.
    pub sigma_data: f64,
    pub variant: Variant,
    pub unet: UNetConfig,
    pub cond: CondConfig,
    pub h_dim: usize,
    /// Target response length in samples (padded internally to a multiple
    /// of 2^depth).
    pub sample_len: usize,
    pub fs: f64,
    pub p_mean: f64,
    pub p_std: f64,
}

impl DiffusionConfig {
    pub fn desk(h_dim: usize) -> Self {
        DiffusionConfig {
            sigma_min: 1e-6,
            sigma_max: 10.0,
            rho: 10.0,
            steps: 35,
            s_churn: 1.0,
            sigma_data: 0.05,
            variant: Variant::Proposed,
            unet: UNetConfig {
                depth: 4,
                base_channels: 32,
                dilation_stack: 3,
            },
            cond: CondConfig {
                hidden1: 128,
                hidden2: 256,
                out: 512,
                rff_dim: 32,
            },
            h_dim,
            sample_len: 2000, // 0.25 s at 8 kHz
            fs: 8000.0,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }

    /// Full-scale reference constants (48 kHz, 0.5 s responses).
    pub fn paper(h_dim: usize) -> Self {
        let mut cfg = Self::desk(h_dim);
        cfg.unet = UNetConfig {
            depth: 6,
            base_channels: 64,
            dilation_stack: 3,
        };
        cfg.sample_len = 24_000;
        cfg.fs = 48_000.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.steps < 2 {
            return Err(Error::Config(format!("steps {} < 2", self.steps)));
        }
        if self.sigma_data <= 0.0 {
            return Err(Error::Config(format!(
                "sigma_data {} must be positive",
                self.sigma_data
            )));
        }
        Ok(())
    }

    /// Internal length: sample_len padded up to a multiple of 2^depth.
    pub fn padded_len(&self) -> usize {
        let block = 1usize << self.unet.depth;
        self.sample_len.div_ceil(block) * block
    }
}

/// Preconditioning coefficients and the matching loss weight λ = 1/c_out².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coeffs {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub lambda: f64,
}

pub fn precondition_coeffs(sigma: f64, sigma_data: f64) -> Coeffs {
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    let denom = s2 + d2;
    let c_out = sigma * sigma_data / denom.sqrt();
    Coeffs {
        c_skip: d2 / denom,
        c_out,
        c_in: 1.0 / denom.sqrt(),
        lambda: 1.0 / (c_out * c_out),
    }
}

/// ρ-warped noise levels, strictly decreasing from σ_max to σ_min with the
/// endpoints pinned exactly (the pow round trip would otherwise perturb
/// them in the last ulp).
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub taus: Vec<f64>,
}

pub fn noise_schedule(cfg: &DiffusionConfig) -> Result<NoiseSchedule> {
    cfg.validate()?;
    let t = cfg.steps;
    let inv_rho = 1.0 / cfg.rho;
    let a = cfg.sigma_max.powf(inv_rho);
    let b = cfg.sigma_min.powf(inv_rho);
    let mut taus = Vec::with_capacity(t);
    for i in 0..t {
        let tau = if i == 0 {
            cfg.sigma_max
        } else if i == t - 1 {
            cfg.sigma_min
        } else {
            let frac = i as f64 / (t - 1) as f64;
            (a + frac * (b - a)).powf(cfg.rho)
        };
        taus.push(tau);
    }
    for w in taus.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Config(format!(
                "schedule not strictly decreasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(NoiseSchedule { taus })
}

/// Training noise level: ln σ ~ N(p_mean, p_std), clamped to
/// [σ_min, σ_max].
pub fn sigma_draw(rng: &mut Stream, cfg: &DiffusionConfig) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    (cfg.p_mean + cfg.p_std * n)
        .exp()
        .clamp(cfg.sigma_min, cfg.sigma_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DiffusionConfig {
        DiffusionConfig::desk(32)
    }

    #[test]
    fn coeffs_at_sigma_equal_sigma_data() {
        let sd = 0.37;
        let c = precondition_coeffs(sd, sd);
        assert!((c.c_skip - 0.5).abs() < 1e-15);
        assert!((c.c_out - sd / 2f64.sqrt()).abs() < 1e-15);
        assert!((c.c_in - 1.0 / (sd * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn coeffs_small_sigma_limit() {
        let c = precondition_coeffs(1e-9, 0.5);
        assert!((c.c_skip - 1.0).abs() < 1e-12);
        assert!(c.c_out < 1e-8);
    }

    #[test]
    fn lambda_inverts_c_out_squared() {
        let sd = 0.21;
        for i in 0..20 {
            let sigma = 1e-6 * (10f64 / 1e-6).powf(i as f64 / 19.0);
            let c = precondition_coeffs(sigma, sd);
            assert!((c.lambda * c.c_out * c.c_out - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = noise_schedule(&cfg()).unwrap();
        assert_eq!(s.taus.len(), 35);
        assert_eq!(s.taus[0], 10.0);
        assert_eq!(s.taus[34], 1e-6);
        for w in s.taus.windows(2) {
            assert!(w[1] < w[0]);
        }
        // Interior value agrees with direct evaluation of the warp.
        let i = 17;
        let frac = i as f64 / 34.0;
        let direct = (10f64.powf(0.1) + frac * (1e-6f64.powf(0.1) - 10f64.powf(0.1))).powf(10.0);
        assert!((s.taus[i] - direct).abs() < 1e-12 * direct.max(1e-12));
        assert!(s.taus[i] < s.taus[i - 1] && s.taus[i] > s.taus[i + 1]);
    }

    #[test]
    fn sigma_draw_median_and_clamp() {
        let c = cfg();
        let mut rng = crate::rng::substream(3, "sigma");
        let mut draws: Vec<f64> = (0..100_000).map(|_| sigma_draw(&mut rng, &c)).collect();
        assert!(draws.iter().all(|&s| (1e-6..=10.0).contains(&s)));
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[draws.len() / 2];
        let expect = (-1.2f64).exp();
        assert!(
            (median - expect).abs() / expect < 0.05,
            "median {median} vs {expect}"
        );
        // Reproducible.
        let mut rng2 = crate::rng::substream(3, "sigma");
        assert_eq!(sigma_draw(&mut rng2, &c), draws_first(&c));
    }

    fn draws_first(c: &DiffusionConfig) -> f64 {
        let mut rng = crate::rng::substream(3, "sigma");
        sigma_draw(&mut rng, c)
    }

    #[test]
    fn conditioning_vector_normalization() {
        use crate::geom::vec3;
        let v = conditioning_vector(vec3(12.0, 2.0, 5.0), vec3(2.0, 12.0, 1.0));
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] + 0.5).abs() < 1e-12);
        assert!((v[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn padded_len_multiple_of_pow2_depth() {
        let c = cfg();
        assert_eq!(c.padded_len() % (1 << c.unet.depth), 0);
        assert!(c.padded_len() >= c.sample_len);
        assert_eq!(c.padded_len(), 2000usize.div_ceil(16) * 16);
    }
}
