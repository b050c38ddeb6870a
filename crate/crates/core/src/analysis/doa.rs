//! Direction of arrival of the direct sound from inter-capsule time
//! differences: cross-correlation peaks with parabolic sub-sample
//! refinement over all six capsule pairs, then a far-field least-squares
//! solve for the arrival direction.

use super::direct_peak_index;
use crate::dsp::SPEED_OF_SOUND;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::room::{MicArray, Srir};

/// Great-circle angle between two unit vectors, in degrees.
pub fn great_circle_error(u1: Vec3, u2: Vec3) -> f64 {
    u1.dot(u2).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Cross-correlation peak lag of `a` against `b` in samples, refined with a
/// parabolic fit around the integer maximum. Positive lag means `a` lags
/// `b` in the sense cc(l) = Σ a[n+l]·b[n].
fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: isize) -> Option<f64> {
    let n = a.len() as isize;
    let cc = |lag: isize| -> f64 {
        let mut s = 0.0;
        for m in 0..n {
            let i = m + lag;
            if i >= 0 && i < n {
                s += a[i as usize] * b[m as usize];
            }
        }
        s
    };
    let mut best = 0isize;
    let mut best_val = f64::NEG_INFINITY;
    let mut vals = Vec::with_capacity((2 * max_lag + 1) as usize);
    for lag in -max_lag..=max_lag {
        let v = cc(lag);
        vals.push(v);
        if v > best_val {
            best_val = v;
            best = lag;
        }
    }
    if best_val <= 0.0 {
        return None;
    }
    // Parabolic refinement needs both neighbors.
    let idx = (best + max_lag) as usize;
    if idx == 0 || idx + 1 >= vals.len() {
        return Some(best as f64);
    }
    let (ym, y0, yp) = (vals[idx - 1], vals[idx], vals[idx + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let delta = if denom.abs() < 1e-30 {
        0.0
    } else {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    };
    Some(best as f64 + delta)
}

/// DoA of the direct sound as a unit vector pointing from the receiver
/// toward the source. The direct segment (1.25 ms around the first peak)
/// is isolated, pairwise TDOAs are estimated, and the overdetermined
/// far-field system (m_i − m_j)·u = −c·τ_ij is solved in the least-squares
/// sense.
pub fn doa_direct(srir: &Srir, array: &MicArray) -> Result<Vec3> {
    let fs = srir.fs;
    let omni = srir.omni_mix();
    let peak = direct_peak_index(&omni, fs)?;
    let half = ((super::DIRECT_WINDOW_SECONDS * fs).round() as usize) / 2;
    // Widen by the largest inter-capsule travel so the pulse stays inside
    // the window on every channel.
    let guard = (2.0 * array.radius / SPEED_OF_SOUND * fs).ceil() as usize + 2;
    let lo = peak.saturating_sub(half + guard);
    let hi = (peak + half + guard + 1).min(srir.len());
    if hi <= lo + 2 {
        return Err(Error::Signal("direct segment too short for DoA".into()));
    }
    let segments: Vec<&[f64]> = srir.channels.iter().map(|c| &c[lo..hi]).collect();

    let caps = array.capsule_positions();
    let max_pair_dist = (0..4)
        .flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
        .map(|(i, j)| caps[i].dist(caps[j]))
        .fold(0.0f64, f64::max);
    let max_lag = (max_pair_dist / SPEED_OF_SOUND * fs).ceil() as isize + 2;

    // Normal equations for the 6-pair least squares.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for i in 0..4 {
        for j in (i + 1)..4 {
            let lag = xcorr_peak_lag(segments[i], segments[j], max_lag)
                .ok_or_else(|| Error::Signal(format!("no correlation peak for pair ({i},{j})")))?;
            let tau = lag / fs;
            let d = caps[i] - caps[j];
            let b = -SPEED_OF_SOUND * tau;
            let row = d.as_array();
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] += row[r] * row[c];
                }
                rhs[r] += row[r] * b;
            }
        }
    }
    let u = solve3(&m, &rhs).ok_or_else(|| {
        Error::Geometry("rank-deficient TDOA system (degenerate array geometry)".into())
    })?;
    let v = Vec3 {
        x: u[0],
        y: u[1],
        z: u[2],
    };
    if v.norm() < 1e-12 {
        return Err(Error::Signal("vanishing DoA solution".into()));
    }
    Ok(v.normalized())
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let adj = |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    let inv = [
        [adj(1, 1, 2, 2) * inv_det, (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det, (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det],
        [(m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det, (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det, (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det],
        [(m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det, (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det, (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det],
    ];
    let mut out = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r] += inv[r][c] * b[c];
        }
    }
    Some(out)
}

/// Synthesize a plane-wave SRIR arriving from direction `u` with exact
/// fractional delays (test oracle, also used by acceptance checks).
pub fn synth_plane_wave(u: Vec3, array: &MicArray, fs: f64, len: usize) -> Srir {
    let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
    let t0 = len as f64 / (2.0 * fs);
    let caps = array.capsule_positions();
    for (ci, ch) in channels.iter_mut().enumerate() {
        // Arrival from u: capsules farther along u hear the wave earlier.
        let delay = (t0 - (caps[ci] - array.center).dot(u) / SPEED_OF_SOUND) * fs;
        let gain = crate::room::cardioid_gain(array.look_directions[ci], u).unwrap();
        crate::dsp::delay::add_impulse(ch, delay, gain.max(1e-3));
    }
    Srir {
        channels,
        fs,
        source: array.center + u,
        receiver: array.center,
        aligned: false,
        toa_seconds: t0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;
    use crate::room::array_geometry;
    use rand::Rng;

    #[test]
    fn great_circle_reference_values() {
        let x = vec3(1.0, 0.0, 0.0);
        let y = vec3(0.0, 1.0, 0.0);
        assert!(great_circle_error(x, x).abs() < 1e-9);
        assert!((great_circle_error(x, y) - 90.0).abs() < 1e-9);
        assert!((great_circle_error(x, -x) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn plane_wave_from_axes() {
        let array = array_geometry(vec3(0.0, 0.0, 0.0), 0.02).unwrap();
        for u in [vec3(1.0, 0.0, 0.0), vec3(0.0, 0.0, -1.0)] {
            let srir = synth_plane_wave(u, &array, 48000.0, 2048);
            let got = doa_direct(&srir, &array).unwrap();
            let err = great_circle_error(got, u);
            assert!(err < 2.0, "direction {u:?}: {err} deg");
        }
    }

    #[test]
    fn random_directions_under_two_degrees() {
        let array = array_geometry(vec3(0.0, 0.0, 0.0), 0.02).unwrap();
        let mut rng = crate::rng::substream(17, "doa-test");
        let mut total = 0.0;
        let n = 100;
        for _ in 0..n {
            let u = random_unit(&mut rng);
            let srir = synth_plane_wave(u, &array, 48000.0, 2048);
            let got = doa_direct(&srir, &array).unwrap();
            total += great_circle_error(got, u);
        }
        let mean = total / n as f64;
        assert!(mean < 2.0, "mean error {mean} deg");
    }

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = vec3(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v * (1.0 / n);
            }
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = crate::rng::substream(3, "gc-triangle");
        for _ in 0..200 {
            let (a, b, c) = (
                random_unit(&mut rng),
                random_unit(&mut rng),
                random_unit(&mut rng),
            );
            let ab = great_circle_error(a, b);
            let bc = great_circle_error(b, c);
            let ac = great_circle_error(a, c);
            assert!(ab == great_circle_error(b, a));
            assert!(ac <= ab + bc + 1e-9);
        }
    }
}
