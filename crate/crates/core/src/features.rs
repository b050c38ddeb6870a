//! Scene preprocessing: STFT, log-magnitude + instantaneous-frequency
//! planes, and dataset-level standard normalization.
//!
//! Conventions (fixed so tensor sizes are reproducible): periodic Hann
//! window, no frame centering, frames = floor((len − window)/hop) + 1,
//! magnitude floored at 1e-6 before the log, IF = unwrapped per-bin phase
//! first difference divided by π (first frame 0).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub const STFT_WINDOW: usize = 512;
pub const STFT_HOP: usize = 128;
pub const SCENE_SECONDS: f64 = 4.0;
const MAG_EPS: f64 = 1e-6;

/// Complex STFT, frames × bins, bins = window/2 + 1.
#[derive(Clone, Debug)]
pub struct Stft {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Stft {
    #[inline]
    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins + f]
    }
}

pub fn stft(channel: &[f64], window: usize, hop: usize) -> Result<Stft> {
    if channel.len() < window {
        return Err(Error::Signal(format!(
            "input of {} samples shorter than window {window}",
            channel.len()
        )));
    }
    let frames = (channel.len() - window) / hop + 1;
    let bins = window / 2 + 1;
    let win = crate::dsp::hann_periodic(window);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(channel[start + i] * win[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Stft { frames, bins, data })
}

/// Wrap an angle to [-π, π).
#[inline]
fn princarg(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (x + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}

/// Log-magnitude and instantaneous-frequency planes, shape (2, t, f).
pub fn logmag_if(spec: &Stft) -> Tensor<f64> {
    let (t, f) = (spec.frames, spec.bins);
    let mut out = Tensor::zeros(&[2, t, f]);
    for ti in 0..t {
        for fi in 0..f {
            let c = spec.at(ti, fi);
            let idx = out.idx3(0, ti, fi);
            out.data_mut()[idx] = (c.norm() + MAG_EPS).ln();
        }
    }
    for fi in 0..f {
        let mut prev = spec.at(0, fi).arg();
        for ti in 1..t {
            let phase = spec.at(ti, fi).arg();
            let idx = out.idx3(1, ti, fi);
            out.data_mut()[idx] = princarg(phase - prev) / std::f64::consts::PI;
            prev = phase;
        }
    }
    out
}

/// Per-plane normalization statistics, frozen from the training split.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source: String,
}

/// Raw (un-normalized) 8×t×f planes of a 4-channel scene, truncated to the
/// first 4 seconds. Plane order per channel: log-magnitude, then IF.
pub fn scene_planes(channels: &[Vec<f64>], fs: f64) -> Result<Tensor<f64>> {
    if channels.len() != 4 {
        return Err(Error::shape("scene", "4 channels", channels.len()));
    }
    let need = (SCENE_SECONDS * fs).round() as usize;
    let mut planes: Option<Tensor<f64>> = None;
    for (ci, ch) in channels.iter().enumerate() {
        if ch.len() < need {
            return Err(Error::Signal(format!(
                "channel {ci} has {} samples, need {need} ({SCENE_SECONDS} s at {fs} Hz)",
                ch.len()
            )));
        }
        let spec = stft(&ch[..need], STFT_WINDOW, STFT_HOP)?;
        let two = logmag_if(&spec);
        let (t, f) = (spec.frames, spec.bins);
        let out = planes.get_or_insert_with(|| Tensor::zeros(&[8, t, f]));
        let plane_len = t * f;
        let dst = out.data_mut();
        dst[2 * ci * plane_len..(2 * ci + 1) * plane_len]
            .copy_from_slice(&two.data()[..plane_len]);
        dst[(2 * ci + 1) * plane_len..(2 * ci + 2) * plane_len]
            .copy_from_slice(&two.data()[plane_len..]);
    }
    Ok(planes.unwrap())
}

/// Pooled per-plane mean and (population) standard deviation over all
/// frames, bins, and scenes of the training split.
pub fn dataset_stats(scenes: &[Tensor<f64>], source: &str) -> Result<NormStats> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::InvalidArg("no scenes for statistics".into()))?;
    let planes = first.shape()[0];
    let mut sum = vec![0.0; planes];
    let mut sum_sq = vec![0.0; planes];
    let mut count = vec![0usize; planes];
    for s in scenes {
        if s.shape()[0] != planes {
            return Err(Error::shape("dataset_stats", planes, s.shape()[0]));
        }
        let plane_len = s.len() / planes;
        for p in 0..planes {
            for &v in &s.data()[p * plane_len..(p + 1) * plane_len] {
                sum[p] += v;
                sum_sq[p] += v * v;
                count[p] += 1;
            }
        }
    }
    let mut mean = vec![0.0; planes];
    let mut std = vec![0.0; planes];
    for p in 0..planes {
        mean[p] = sum[p] / count[p] as f64;
        let var = sum_sq[p] / count[p] as f64 - mean[p] * mean[p];
        std[p] = var.max(0.0).sqrt();
        if std[p] <= 1e-12 {
            return Err(Error::Signal(format!("plane {p} has zero variance")));
        }
    }
    Ok(NormStats {
        mean,
        std,
        source: source.to_string(),
    })
}

/// Normalized scene tensor for the encoder: 8×t×f, standardized per plane
/// with the training statistics.
pub fn scene_to_tensor<T: Scalar>(
    channels: &[Vec<f64>],
    fs: f64,
    stats: &NormStats,
) -> Result<Tensor<T>> {
    let planes = scene_planes(channels, fs)?;
    Ok(normalize_planes(&planes, stats))
}

pub fn normalize_planes<T: Scalar>(planes: &Tensor<f64>, stats: &NormStats) -> Tensor<T> {
    let p = planes.shape()[0];
    let plane_len = planes.len() / p;
    let mut out = Tensor::<T>::zeros(planes.shape());
    for pi in 0..p {
        let (m, s) = (stats.mean[pi], stats.std[pi]);
        for i in 0..plane_len {
            let idx = pi * plane_len + i;
            out.data_mut()[idx] = T::of((planes.data()[idx] - m) / s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: expected IF of a bin-centered tone from phase
    /// advance arithmetic alone.
    fn expected_if(freq: f64, fs: f64) -> f64 {
        princarg(2.0 * std::f64::consts::PI * freq * STFT_HOP as f64 / fs)
            / std::f64::consts::PI
    }

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn frame_arithmetic() {
        let x = vec![0.0; 192_000];
        let s = stft(&x, STFT_WINDOW, STFT_HOP).unwrap();
        assert_eq!(s.frames, (192_000 - 512) / 128 + 1);
        assert_eq!(s.frames, 1497);
        assert_eq!(s.bins, 257);
        assert!(stft(&x[..500], STFT_WINDOW, STFT_HOP).is_err());
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let fs = 48_000.0;
        let x = tone(1000.0, fs, 48_000);
        let s = stft(&x, STFT_WINDOW, STFT_HOP).unwrap();
        let frame = 10;
        let peak_bin = (0..s.bins)
            .max_by(|&a, &b| {
                s.at(frame, a)
                    .norm()
                    .partial_cmp(&s.at(frame, b).norm())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(peak_bin, (1000.0 * 512.0 / fs).round() as usize); // bin 11
    }

    #[test]
    fn zero_signal_floors() {
        let s = stft(&vec![0.0; 4096], STFT_WINDOW, STFT_HOP).unwrap();
        let planes = logmag_if(&s);
        let t = s.frames;
        let f = s.bins;
        for ti in 0..t {
            for fi in 0..f {
                assert_eq!(planes.data()[planes.idx3(0, ti, fi)], MAG_EPS.ln());
                assert_eq!(planes.data()[planes.idx3(1, ti, fi)], 0.0);
            }
        }
    }

    #[test]
    fn instantaneous_frequency_matches_phase_advance() {
        let fs = 48_000.0;
        // Bin-centered tones so the peak-bin phase is clean.
        for k in [4usize, 11, 40] {
            let freq = k as f64 * fs / STFT_WINDOW as f64;
            let x = tone(freq, fs, 48_000);
            let s = stft(&x, STFT_WINDOW, STFT_HOP).unwrap();
            let planes = logmag_if(&s);
            let expect = expected_if(freq, fs);
            // Average interior frames at the tone bin.
            let mut acc = 0.0;
            let mut n = 0;
            for t in 2..s.frames - 2 {
                acc += planes.data()[planes.idx3(1, t, k)];
                n += 1;
            }
            let got = acc / n as f64;
            assert!((got - expect).abs() < 1e-6, "k={k}: {got} vs {expect}");
        }
    }

    #[test]
    fn gain_shifts_logmag_leaves_if() {
        let fs = 8_000.0;
        let x = tone(500.0, fs, 8_000);
        let gained: Vec<f64> = x.iter().map(|v| v * 3.5).collect();
        let a = logmag_if(&stft(&x, STFT_WINDOW, STFT_HOP).unwrap());
        let b = logmag_if(&stft(&gained, STFT_WINDOW, STFT_HOP).unwrap());
        let t = a.shape()[1];
        let f = a.shape()[2];
        for ti in (0..t).step_by(7) {
            for fi in (0..f).step_by(13) {
                let la = a.data()[a.idx3(0, ti, fi)];
                let lb = b.data()[b.idx3(0, ti, fi)];
                // Both invariants hold where magnitudes sit above the
                // epsilon floor; dead bins carry rounding-noise phase.
                if la > (1e4 * MAG_EPS).ln() {
                    assert!((lb - la - 3.5f64.ln()).abs() < 1e-3, "t={ti} f={fi}");
                    let ia = a.data()[a.idx3(1, ti, fi)];
                    let ib = b.data()[b.idx3(1, ti, fi)];
                    assert!((ia - ib).abs() < 1e-6, "t={ti} f={fi}");
                }
            }
        }
    }

    #[test]
    fn if_values_stay_in_unit_range() {
        let mut rng = crate::rng::substream(5, "if-range");
        use rand::Rng;
        let x: Vec<f64> = (0..16_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let planes = logmag_if(&stft(&x, STFT_WINDOW, STFT_HOP).unwrap());
        let t = planes.shape()[1];
        let f = planes.shape()[2];
        for ti in 0..t {
            for fi in 0..f {
                let v = planes.data()[planes.idx3(1, ti, fi)];
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn stats_population_convention_and_self_normalization() {
        let mut t = Tensor::<f64>::zeros(&[1, 1, 2]);
        t.data_mut()[0] = 0.0;
        t.data_mut()[1] = 2.0;
        let stats = dataset_stats(&[t.clone()], "test").unwrap();
        assert!((stats.mean[0] - 1.0).abs() < 1e-12);
        assert!((stats.std[0] - 1.0).abs() < 1e-12);

        let norm: Tensor<f64> = normalize_planes(&t, &stats);
        let mean = norm.data().iter().sum::<f64>() / 2.0;
        assert!(mean.abs() < 1e-12);

        let constant = Tensor::<f64>::filled(&[1, 1, 4], 3.0);
        assert!(dataset_stats(&[constant], "test").is_err());
    }

    #[test]
    fn scene_tensor_shape_and_truncation() {
        let fs = 8_000.0;
        let n = (4.5 * fs) as usize;
        let chans: Vec<Vec<f64>> = (0..4).map(|c| tone(200.0 * (c + 1) as f64, fs, n)).collect();
        let planes = scene_planes(&chans, fs).unwrap();
        let t = (32_000 - 512) / 128 + 1;
        assert_eq!(planes.shape(), &[8, t, 257]);

        // 5 s input equals its first-4 s truncation.
        let truncated: Vec<Vec<f64>> = chans.iter().map(|c| c[..32_000].to_vec()).collect();
        let planes_trunc = scene_planes(&truncated, fs).unwrap();
        assert_eq!(planes.data(), planes_trunc.data());

        assert!(scene_planes(&chans[..2], fs).is_err());
    }
}
