//! Butterworth band-pass design (second-order sections) and zero-phase
//! filtering via forward-backward application.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;

#[derive(Clone, Copy, Debug)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Clone, Debug)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

/// Band-pass Butterworth with `2·half_order` poles, designed by the
/// analog-prototype + bilinear-transform route and normalized to unit gain
/// at the geometric band center.
pub fn butter_bandpass(half_order: usize, f_lo: f64, f_hi: f64, fs: f64) -> Result<Sos> {
    if !(0.0 < f_lo && f_lo < f_hi) {
        return Err(Error::InvalidArg(format!(
            "band edges must satisfy 0 < {f_lo} < {f_hi}"
        )));
    }
    if f_hi >= fs / 2.0 {
        return Err(Error::InvalidArg(format!(
            "band edge {f_hi} Hz not below Nyquist {} Hz",
            fs / 2.0
        )));
    }
    let k = 2.0 * fs;
    let w1 = k * (std::f64::consts::PI * f_lo / fs).tan();
    let w2 = k * (std::f64::consts::PI * f_hi / fs).tan();
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();

    // Analog prototype poles on the unit circle, left half-plane.
    let n = half_order;
    let proto: Vec<Complex64> = (0..n)
        .map(|i| {
            let theta = std::f64::consts::PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect();

    // Low-pass to band-pass: each prototype pole spawns two.
    let mut s_poles = Vec::with_capacity(2 * n);
    for p in proto {
        let pb = p * bw * 0.5;
        let disc = (pb * pb - Complex64::new(w0 * w0, 0.0)).sqrt();
        s_poles.push(pb + disc);
        s_poles.push(pb - disc);
    }

    // Bilinear transform.
    let z_poles: Vec<Complex64> = s_poles
        .iter()
        .map(|&s| (Complex64::new(k, 0.0) + s) / (Complex64::new(k, 0.0) - s))
        .collect();
    for p in &z_poles {
        if p.norm() >= 1.0 {
            return Err(Error::Config(format!(
                "unstable band-pass design for edges {f_lo}..{f_hi} Hz at fs {fs}"
            )));
        }
    }

    // Pair conjugate poles into biquads; numerator (1 - z^-2) gives each
    // section one zero at dc and one at Nyquist.
    let mut pos: Vec<Complex64> = z_poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<Complex64> = z_poles
        .iter()
        .copied()
        .filter(|p| p.im.abs() <= 1e-12)
        .collect();
    pos.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    real.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    let mut sections = Vec::with_capacity(n);
    for p in pos {
        sections.push(Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * p.re,
            a2: p.norm_sqr(),
        });
    }
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0].re, pair.get(1).map_or(0.0, |p| p.re));
        sections.push(Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -(r1 + r2),
            a2: r1 * r2,
        });
    }
    if sections.len() != n {
        return Err(Error::Config(format!(
            "pole pairing produced {} sections, expected {n}",
            sections.len()
        )));
    }

    // Normalize to unit gain at the (digital image of the) band center.
    let wc = 2.0 * (w0 / k).atan();
    let z0 = Complex64::new(wc.cos(), wc.sin());
    let mut h = Complex64::new(1.0, 0.0);
    for s in &sections {
        let zi = 1.0 / z0;
        let num = Complex64::new(s.b0, 0.0) + zi * s.b1 + zi * zi * s.b2;
        let den = Complex64::new(1.0, 0.0) + zi * s.a1 + zi * zi * s.a2;
        h *= num / den;
    }
    let g = 1.0 / h.norm();
    let root = g.powf(1.0 / n as f64);
    for s in &mut sections {
        s.b0 *= root;
        s.b1 *= root;
        s.b2 *= root;
    }
    Ok(Sos { sections })
}

/// Single-pass cascade filtering (direct form II transposed).
pub fn sosfilt(sos: &Sos, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in &sos.sections {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in &mut y {
            let xi = *v;
            let yi = s.b0 * xi + s1;
            s1 = s.b1 * xi - s.a1 * yi + s2;
            s2 = s.b2 * xi - s.a2 * yi;
            *v = yi;
        }
    }
    y
}

/// Zero-phase filtering: forward pass, backward pass. Doubles the effective
/// order and cancels phase, so impulse peaks stay put.
pub fn filtfilt(sos: &Sos, x: &[f64]) -> Vec<f64> {
    let mut y = sosfilt(sos, x);
    y.reverse();
    let mut y = sosfilt(sos, &y);
    y.reverse();
    y
}
