//! Fractional-delay deposition with a 32-tap Hann-windowed sinc.
//!
//! The tap recipe is part of the on-disk contract for simulated responses:
//! golden files are only bit-stable while this kernel stays fixed, so the
//! version tag below is recorded in simulator metadata.

pub const FRAC_DELAY_TAPS: usize = 32;
pub const FRAC_DELAY_VERSION: &str = "hann-sinc-32/v1";

const HALF: isize = (FRAC_DELAY_TAPS / 2) as isize;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Add `amplitude · δ(t − delay_samples)` into `buf`, band-limited by the
/// windowed sinc. Taps falling outside the buffer are dropped.
pub fn add_impulse(buf: &mut [f64], delay_samples: f64, amplitude: f64) {
    let base = delay_samples.floor() as isize;
    for m in (base - HALF + 1)..=(base + HALF) {
        if m < 0 || m as usize >= buf.len() {
            continue;
        }
        let x = m as f64 - delay_samples; // in (-16, 16]
        let w = 0.5 * (1.0 + (std::f64::consts::PI * x / HALF as f64).cos());
        buf[m as usize] += amplitude * sinc(x) * w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_delay_is_exact() {
        let mut buf = vec![0.0; 64];
        add_impulse(&mut buf, 30.0, 2.0);
        assert!((buf[30] - 2.0).abs() < 1e-12);
        // All other taps vanish at integer delay.
        let spill: f64 = buf
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 30)
            .map(|(_, v)| v.abs())
            .sum();
        assert!(spill < 1e-10);
    }

    #[test]
    fn fractional_delay_peaks_at_nearest_sample() {
        let mut buf = vec![0.0; 64];
        add_impulse(&mut buf, 30.3, 1.0);
        let peak = buf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 30);
    }

    #[test]
    fn unit_dc_gain_within_window_ripple() {
        let mut buf = vec![0.0; 128];
        add_impulse(&mut buf, 60.5, 1.0);
        let sum: f64 = buf.iter().sum();
        assert!((sum - 1.0).abs() < 1e-3, "dc gain {sum}");
    }
}
