//! Room-acoustic parameter estimation: octave-band reverberation time via
//! Schroeder integration, broadband direct-to-reverberant ratio, onset
//! times, JND scoring, and aggregate error reports.

pub mod doa;

use crate::dsp::filter::{butter_bandpass, filtfilt};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::room::{Srir, OCTAVE_CENTERS};
use std::io::Write;
use std::path::Path;

/// Energy decay curve in dB, 0 dB at t = 0, non-increasing.
#[derive(Clone, Debug)]
pub struct Edc {
    pub values_db: Vec<f64>,
    pub fs: f64,
}

pub const EDC_FLOOR_DB: f64 = -120.0;

/// Zero-phase octave-band filterbank (6th-order Butterworth per band,
/// forward-backward).
pub fn octave_filterbank(signal: &[f64], centers: &[f64], fs: f64) -> Result<Vec<Vec<f64>>> {
    centers
        .iter()
        .map(|&c| {
            if c >= fs / 2.0 {
                return Err(Error::InvalidArg(format!(
                    "band center {c} Hz at or above Nyquist {}",
                    fs / 2.0
                )));
            }
            let sos = butter_bandpass(
                3,
                c / std::f64::consts::SQRT_2,
                c * std::f64::consts::SQRT_2,
                fs,
            )?;
            Ok(filtfilt(&sos, signal))
        })
        .collect()
}

/// Schroeder backward integration with a simplified noise-floor cutoff:
/// the floor is estimated from the final 10% of the response and the
/// integration stops at the last sample whose smoothed power still exceeds
/// twice that floor.
pub fn schroeder_edc(channel: &[f64], fs: f64) -> Result<Edc> {
    if channel.is_empty() || channel.iter().all(|&v| v == 0.0) {
        return Err(Error::Signal("all-zero input to Schroeder integration".into()));
    }
    let n = channel.len();
    let power: Vec<f64> = channel.iter().map(|v| v * v).collect();

    let tail_start = n - (n / 10).max(1);
    let floor = power[tail_start..].iter().sum::<f64>() / (n - tail_start) as f64;
    let win = ((0.005 * fs) as usize).clamp(1, n);
    let mut trunc = n;
    if floor > 0.0 {
        // Backward scan of a moving average of the power envelope.
        let mut acc: f64 = power[n - win..].iter().sum();
        let mut found = None;
        let mut i = n;
        while i > 0 {
            let avg = acc / win as f64;
            if avg > 2.0 * floor {
                found = Some(i);
                break;
            }
            i -= 1;
            if i >= win {
                acc += power[i - win];
            }
            if i + win <= n {
                acc -= power[i + win - 1];
            }
        }
        if let Some(t) = found {
            trunc = t;
        }
    }

    let total: f64 = power[..trunc].iter().sum();
    if total <= 0.0 {
        return Err(Error::Signal("no energy before noise floor".into()));
    }
    let mut values_db = Vec::with_capacity(trunc);
    let mut remaining = total;
    for &p in &power[..trunc] {
        let v = if remaining > 0.0 {
            (10.0 * (remaining / total).log10()).max(EDC_FLOOR_DB)
        } else {
            EDC_FLOOR_DB
        };
        values_db.push(v);
        remaining -= p;
    }
    Ok(Edc { values_db, fs })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RtMethod {
    T20,
    T30,
}

/// Reverberation time from an EDC: least-squares line on [-5, -25] dB (T20)
/// or [-5, -35] dB (T30), extrapolated to the full 60 dB range.
pub fn rt_from_edc(edc: &Edc, method: RtMethod) -> Result<f64> {
    let lower = match method {
        RtMethod::T20 => -25.0,
        RtMethod::T30 => -35.0,
    };
    let first_below = |level: f64| edc.values_db.iter().position(|&v| v <= level);
    let start = first_below(-5.0).ok_or_else(|| {
        Error::Signal(format!(
            "EDC never drops to -5 dB (floor {:.1} dB)",
            edc.values_db.last().copied().unwrap_or(0.0)
        ))
    })?;
    let end = first_below(lower).ok_or_else(|| {
        Error::Signal(format!(
            "decay range insufficient for {method:?}: floor {:.1} dB",
            edc.values_db.last().copied().unwrap_or(0.0)
        ))
    })?;
    if end <= start + 2 {
        return Err(Error::Signal("decay region too short for a line fit".into()));
    }
    // Least-squares slope in dB per sample.
    let m = (end - start) as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (k, &y) in edc.values_db[start..end].iter().enumerate() {
        let x = k as f64;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = m * sxx - sx * sx;
    let slope = (m * sxy - sx * sy) / denom * edc.fs; // dB/s
    if slope >= 0.0 {
        return Err(Error::Signal("non-decaying EDC".into()));
    }
    Ok(-60.0 / slope)
}

/// T30 with automatic fallback to T20 when the decay range is too short.
pub fn rt_auto(edc: &Edc) -> Result<f64> {
    match rt_from_edc(edc, RtMethod::T30) {
        Ok(rt) => Ok(rt),
        Err(_) => rt_from_edc(edc, RtMethod::T20),
    }
}

/// Mean of the 500 Hz and 1 kHz band values.
pub fn mid_rt(rt_per_band: &[(f64, f64)]) -> Result<f64> {
    let find = |center: f64| {
        rt_per_band
            .iter()
            .find(|(c, _)| (*c - center).abs() < 1e-6)
            .map(|(_, rt)| *rt)
            .ok_or_else(|| Error::InvalidArg(format!("missing {center} Hz band")))
    };
    Ok(0.5 * (find(500.0)? + find(1000.0)?))
}

/// Direct-sound onset in seconds: first sample within 20 dB of the global
/// peak, refined to the strongest sample in the following 1.5 ms.
pub fn toa_estimate(srir: &Srir) -> Result<f64> {
    let omni = srir.omni_mix();
    Ok(direct_peak_index(&omni, srir.fs)? as f64 / srir.fs)
}

pub(crate) fn direct_peak_index(x: &[f64], fs: f64) -> Result<usize> {
    let peak = x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if peak <= 0.0 {
        return Err(Error::Signal("silent input".into()));
    }
    let threshold = peak * 0.1; // -20 dB
    let onset = x.iter().position(|&v| v.abs() >= threshold).unwrap();
    let horizon = (onset + (0.0015 * fs) as usize + 1).min(x.len());
    let refined = (onset..horizon)
        .max_by(|&a, &b| x[a].abs().partial_cmp(&x[b].abs()).unwrap())
        .unwrap();
    Ok(refined)
}

pub const DRR_CLAMP_DB: f64 = 80.0;
pub const DIRECT_WINDOW_SECONDS: f64 = 0.00125;

/// Broadband direct-to-reverberant ratio: direct window of 1.25 ms total,
/// centered on the first peak of the omni mix (clipped at signal start),
/// energies summed over all four channels.
pub fn broadband_drr(srir: &Srir) -> Result<f64> {
    let omni = srir.omni_mix();
    let peak = direct_peak_index(&omni, srir.fs)?;
    let total_win = (DIRECT_WINDOW_SECONDS * srir.fs).round() as usize;
    let half = total_win / 2;
    let lo = peak.saturating_sub(half);
    let hi = (lo + total_win).min(srir.len());

    let mut e_window = 0.0f64;
    let mut e_total = 0.0f64;
    for ch in &srir.channels {
        for (i, &v) in ch.iter().enumerate() {
            let p = v * v;
            e_total += p;
            if i >= lo && i < hi {
                e_window += p;
            }
        }
    }
    let e_rest = e_total - e_window;
    if e_rest <= 0.0 {
        return Ok(DRR_CLAMP_DB);
    }
    if e_window <= 0.0 {
        return Ok(-DRR_CLAMP_DB);
    }
    Ok((10.0 * (e_window / e_rest).log10()).clamp(-DRR_CLAMP_DB, DRR_CLAMP_DB))
}

/// Per-band RT of a 4-channel response: band-filter each channel, run the
/// Schroeder fit, and average the channels that yield an estimate. Reported
/// RT is this 4-channel average.
pub fn srir_rt_bands(srir: &Srir, centers: &[f64]) -> Vec<(f64, Option<f64>)> {
    centers
        .iter()
        .map(|&c| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for ch in &srir.channels {
                let banded = match octave_filterbank(ch, &[c], srir.fs) {
                    Ok(mut b) => b.remove(0),
                    Err(_) => return (c, None),
                };
                if let Ok(edc) = schroeder_edc(&banded, srir.fs) {
                    if let Ok(rt) = rt_auto(&edc) {
                        acc += rt;
                        n += 1;
                    }
                }
            }
            (c, (n > 0).then(|| acc / n as f64))
        })
        .collect()
}

/// 10% JND rule for reverberation time; the boundary counts as inside.
pub fn jnd_rt(predicted: f64, truth: f64) -> bool {
    (predicted - truth).abs() <= 0.10 * truth + 1e-9 * truth.abs()
}

/// DRR JND: piece-wise linear threshold through (-10 dB, 6 dB),
/// (0 dB, 2.4 dB), (+10 dB, 6 dB), constant beyond ±10 dB.
pub fn jnd_drr(predicted_db: f64, truth_db: f64) -> bool {
    let t = truth_db;
    let threshold = if t <= -10.0 {
        6.0
    } else if t <= 0.0 {
        6.0 + (t + 10.0) * (2.4 - 6.0) / 10.0
    } else if t <= 10.0 {
        2.4 + t * (6.0 - 2.4) / 10.0
    } else {
        6.0
    };
    (predicted_db - truth_db).abs() <= threshold + 1e-9
}

/// Per-response metric row (one SRIR).
#[derive(Clone, Debug)]
pub struct ResponseMetrics {
    pub room_id: String,
    pub position_id: String,
    pub rt_bands: Vec<(f64, Option<f64>)>,
    pub mid_rt: Option<f64>,
    pub drr_db: f64,
    pub doa: Vec3,
    pub toa_s: f64,
}

impl ResponseMetrics {
    /// Measure everything from a response. DoA needs the array geometry;
    /// the canonical tetrahedral array at the receiver is assumed.
    pub fn measure(srir: &Srir, room_id: &str, position_id: &str) -> Result<ResponseMetrics> {
        let array = crate::room::array_geometry(srir.receiver, 0.02)?;
        let rt_bands = srir_rt_bands(srir, &OCTAVE_CENTERS);
        let mid = {
            let have: Vec<(f64, f64)> = rt_bands
                .iter()
                .filter_map(|(c, rt)| rt.map(|r| (*c, r)))
                .collect();
            mid_rt(&have).ok()
        };
        Ok(ResponseMetrics {
            room_id: room_id.to_string(),
            position_id: position_id.to_string(),
            rt_bands,
            mid_rt: mid,
            drr_db: broadband_drr(srir)?,
            doa: doa::doa_direct(srir, &array)?,
            toa_s: toa_estimate(srir)?,
        })
    }
}

/// Aggregate error statistics for one quantity.
#[derive(Clone, Copy, Debug)]
pub struct AggregateStats {
    pub rmse: f64,
    /// Pearson correlation; NaN when undefined (constant truth or pred).
    pub rho: f64,
    pub bias: f64,
    pub pct_in_jnd: f64,
}

#[derive(Clone, Debug)]
pub struct AcousticReport {
    pub rt: AggregateStats,
    pub drr: AggregateStats,
    pub doa_mean_deg: f64,
    pub count: usize,
}

fn pearson(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let mut spt = 0.0;
    let mut spp = 0.0;
    let mut stt = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        spt += (p - mp) * (t - mt);
        spp += (p - mp) * (p - mp);
        stt += (t - mt) * (t - mt);
    }
    if spp <= 0.0 || stt <= 0.0 {
        return f64::NAN; // undefined-correlation sentinel
    }
    spt / (spp * stt).sqrt()
}

fn error_stats(
    pairs: &[(f64, f64)],
    in_jnd: impl Fn(f64, f64) -> bool,
) -> AggregateStats {
    let n = pairs.len() as f64;
    let mut sq = 0.0;
    let mut bias = 0.0;
    let mut hits = 0usize;
    for &(p, t) in pairs {
        sq += (p - t) * (p - t);
        bias += p - t;
        if in_jnd(p, t) {
            hits += 1;
        }
    }
    let pred: Vec<f64> = pairs.iter().map(|x| x.0).collect();
    let truth: Vec<f64> = pairs.iter().map(|x| x.1).collect();
    AggregateStats {
        rmse: (sq / n).sqrt(),
        rho: pearson(&pred, &truth),
        bias: bias / n,
        pct_in_jnd: 100.0 * hits as f64 / n,
    }
}

/// Table-style aggregates over (predicted, truth) response pairs: RMSE,
/// Pearson rho, bias, and %-within-JND for mid-frequency RT and broadband
/// DRR, plus the mean great-circle DoA error.
pub fn metrics_report(pairs: &[(ResponseMetrics, ResponseMetrics)]) -> Result<AcousticReport> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArg(format!(
            "need at least 2 response pairs, got {}",
            pairs.len()
        )));
    }
    let rt_pairs: Vec<(f64, f64)> = pairs
        .iter()
        .filter_map(|(p, t)| Some((p.mid_rt?, t.mid_rt?)))
        .collect();
    let drr_pairs: Vec<(f64, f64)> = pairs.iter().map(|(p, t)| (p.drr_db, t.drr_db)).collect();
    if rt_pairs.len() < 2 {
        return Err(Error::Signal("fewer than 2 pairs with usable mid-RT".into()));
    }
    let doa_mean_deg = pairs
        .iter()
        .map(|(p, t)| doa::great_circle_error(p.doa, t.doa))
        .sum::<f64>()
        / pairs.len() as f64;
    Ok(AcousticReport {
        rt: error_stats(&rt_pairs, jnd_rt),
        drr: error_stats(&drr_pairs, jnd_drr),
        doa_mean_deg,
        count: pairs.len(),
    })
}

/// Per-response CSV with the documented column order.
pub fn write_response_csv(path: &Path, rows: &[ResponseMetrics]) -> Result<()> {
    let mut out = String::new();
    out.push_str("room_id,position_id");
    for c in OCTAVE_CENTERS {
        out.push_str(&format!(",rt_{}", c as u64));
    }
    out.push_str(",mid_rt,drr_db,doa_x,doa_y,doa_z,toa_s\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.room_id, r.position_id));
        for c in OCTAVE_CENTERS {
            match r.rt_bands.iter().find(|(b, _)| (*b - c).abs() < 1e-6) {
                Some((_, Some(rt))) => out.push_str(&format!(",{rt:.6}")),
                _ => out.push(','),
            }
        }
        match r.mid_rt {
            Some(m) => out.push_str(&format!(",{m:.6}")),
            None => out.push(','),
        }
        out.push_str(&format!(
            ",{:.4},{:.6},{:.6},{:.6},{:.6}\n",
            r.drr_db, r.doa.x, r.doa.y, r.doa.z, r.toa_s
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Aggregate CSV mirroring the model-performance table columns.
pub fn write_aggregate_csv(path: &Path, report: &AcousticReport) -> Result<()> {
    let fmt_rho = |r: f64| {
        if r.is_nan() {
            "undefined".to_string()
        } else {
            format!("{r:.4}")
        }
    };
    let mut out = String::new();
    out.push_str(
        "quantity,rmse,rho,bias,pct_in_jnd\n",
    );
    out.push_str(&format!(
        "mid_rt_s,{:.4},{},{:.4},{:.1}\n",
        report.rt.rmse,
        fmt_rho(report.rt.rho),
        report.rt.bias,
        report.rt.pct_in_jnd
    ));
    out.push_str(&format!(
        "drr_db,{:.4},{},{:.4},{:.1}\n",
        report.drr.rmse,
        fmt_rho(report.drr.rho),
        report.drr.bias,
        report.drr.pct_in_jnd
    ));
    out.push_str(&format!("doa_error_deg,{:.4},,,\n", report.doa_mean_deg));
    write_atomic(path, out.as_bytes())
}

/// Write via temp file + rename so partially written outputs never appear.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;

    const LN_1000: f64 = 6.907755278982137;

    fn synthetic_decay(t60: f64, fs: f64, seconds: f64, carrier_hz: f64) -> Vec<f64> {
        let n = (seconds * fs) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * carrier_hz * t).sin()
                    * (-LN_1000 * t / t60).exp()
            })
            .collect()
    }

    #[test]
    fn edc_of_impulse() {
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let edc = schroeder_edc(&x, 48000.0).unwrap();
        assert_eq!(edc.values_db[0], 0.0);
        assert!(edc.values_db[1..].iter().all(|&v| v == EDC_FLOOR_DB));
    }

    #[test]
    fn edc_of_constant_signal_closed_form() {
        let x = vec![0.5; 1000];
        let edc = schroeder_edc(&x, 48000.0).unwrap();
        let n = edc.values_db.len() as f64;
        for (t, &v) in edc.values_db.iter().enumerate().step_by(100) {
            let expect = 10.0 * ((n - t as f64) / n).log10();
            assert!((v - expect).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn edc_slope_of_exponential_envelope() {
        let fs = 8000.0;
        let t60 = 0.5;
        let x: Vec<f64> = (0..(fs as usize))
            .map(|i| (-LN_1000 * (i as f64 / fs) / t60).exp())
            .collect();
        let edc = schroeder_edc(&x, fs).unwrap();
        // Slope between -5 dB and -25 dB should be -60/T60 dB/s.
        let i5 = edc.values_db.iter().position(|&v| v <= -5.0).unwrap();
        let i25 = edc.values_db.iter().position(|&v| v <= -25.0).unwrap();
        let slope = (edc.values_db[i25] - edc.values_db[i5]) / ((i25 - i5) as f64 / fs);
        assert!((slope + 60.0 / t60).abs() < 0.5, "slope {slope}");
    }

    #[test]
    fn rt_recovers_synthetic_t60() {
        let fs = 16000.0;
        for &t60 in &[0.5, 2.0] {
            let x = synthetic_decay(t60, fs, 1.6 * t60, 1000.0);
            let edc = schroeder_edc(&x, fs).unwrap();
            let rt = rt_from_edc(&edc, RtMethod::T30).unwrap();
            assert!((rt - t60).abs() / t60 < 0.01, "t60={t60} got {rt}");
        }
    }

    #[test]
    fn rt_errors_on_impulse() {
        let mut x = vec![0.0; 256];
        x[0] = 1.0;
        let edc = schroeder_edc(&x, 48000.0).unwrap();
        assert!(rt_from_edc(&edc, RtMethod::T30).is_err());
    }

    #[test]
    fn filterbank_separates_tones() {
        let fs = 48000.0;
        let x: Vec<f64> = (0..48000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / fs).sin())
            .collect();
        let bands = octave_filterbank(&x, &[250.0, 1000.0], fs).unwrap();
        let e = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!(e(&bands[1]) >= 100.0 * e(&bands[0]));
        let silent = octave_filterbank(&vec![0.0; 1024], &[1000.0], fs).unwrap();
        assert!(silent[0].iter().all(|&v| v == 0.0));
        assert!(octave_filterbank(&x, &[30000.0], fs).is_err());
    }

    #[test]
    fn white_noise_band_energy_tracks_bandwidth() {
        use rand::Rng;
        let fs = 48000.0;
        let mut ratios = Vec::new();
        for seed in 0..10u64 {
            let mut rng = crate::rng::substream(seed, "band-energy-test");
            let x: Vec<f64> = (0..65536)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let bands = octave_filterbank(&x, &[500.0, 1000.0], fs).unwrap();
            let e = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            ratios.push(e(&bands[1]) / e(&bands[0]));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 2.0).abs() < 0.5, "octave energy ratio {mean}");
    }

    #[test]
    fn mid_rt_is_mean_of_500_and_1k() {
        let bands = vec![(500.0, 0.4), (1000.0, 0.6)];
        assert!((mid_rt(&bands).unwrap() - 0.5).abs() < 1e-12);
        assert!(mid_rt(&[(500.0, 0.7)]).is_err());
    }

    #[test]
    fn jnd_rules() {
        assert!(jnd_rt(0.55, 0.5));
        assert!(!jnd_rt(0.56, 0.5));
        assert!(jnd_rt(1.0, 1.0));
        assert!(jnd_drr(2.4, 0.0));
        assert!(!jnd_drr(3.0, 0.0));
        assert!(jnd_drr(15.0, 10.0));
        assert!(!jnd_drr(16.5, 10.0));
        assert!(jnd_drr(-14.0, -20.0)); // constant 6 dB below -10
    }

    fn two_burst_srir(direct_amp: f64, tail_amp: f64, fs: f64) -> Srir {
        let n = (0.1 * fs) as usize;
        let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let peak = (0.01 * fs) as usize;
        let tail_at = (0.05 * fs) as usize;
        for ch in &mut channels {
            ch[peak] = direct_amp;
            ch[tail_at] = tail_amp;
        }
        Srir {
            channels,
            fs,
            source: vec3(1.0, 0.0, 0.0),
            receiver: Vec3::ZERO,
            aligned: false,
            toa_seconds: 0.01,
        }
    }

    #[test]
    fn drr_of_constructed_bursts() {
        let fs = 48000.0;
        // Energy ratio (1.0)^2 : (0.316..)^2 = 10 dB.
        let srir = two_burst_srir(1.0, 10f64.powf(-0.5), fs);
        let drr = broadband_drr(&srir).unwrap();
        assert!((drr - 10.0).abs() < 1e-9, "got {drr}");

        let srir = two_burst_srir(1.0, 1.0, fs);
        assert!(broadband_drr(&srir).unwrap().abs() < 1e-9);

        // Pure impulse: clamped.
        let mut srir = two_burst_srir(1.0, 0.0, fs);
        for ch in &mut srir.channels {
            let p = (0.05 * fs) as usize;
            ch[p] = 0.0;
        }
        assert_eq!(broadband_drr(&srir).unwrap(), DRR_CLAMP_DB);
    }

    #[test]
    fn drr_is_gain_invariant() {
        let fs = 48000.0;
        let a = two_burst_srir(0.7, 0.2, fs);
        let mut b = a.clone();
        for ch in &mut b.channels {
            for v in ch.iter_mut() {
                *v *= 12.5;
            }
        }
        assert_eq!(broadband_drr(&a).unwrap(), broadband_drr(&b).unwrap());
    }

    #[test]
    fn toa_of_known_impulse() {
        let fs = 48000.0;
        let srir = two_burst_srir(1.0, 0.01, fs);
        assert!((toa_estimate(&srir).unwrap() - 0.01).abs() < 1.0 / fs + 1e-12);
        let silent = Srir {
            channels: std::array::from_fn(|_| vec![0.0; 16]),
            fs,
            source: Vec3::ZERO,
            receiver: Vec3::ZERO,
            aligned: false,
            toa_seconds: 0.0,
        };
        assert!(toa_estimate(&silent).is_err());
    }

    #[test]
    fn pearson_hand_cases() {
        assert!((pearson(&[0.0, 1.0], &[1.0, 0.0]) + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_nan());
    }

    #[test]
    fn report_on_exact_and_shifted_predictions() {
        let mk = |mid: f64, drr: f64| ResponseMetrics {
            room_id: "r".into(),
            position_id: "p".into(),
            rt_bands: vec![],
            mid_rt: Some(mid),
            drr_db: drr,
            doa: vec3(1.0, 0.0, 0.0),
            toa_s: 0.0,
        };
        let pairs: Vec<_> = [(0.4, 3.0), (0.6, -1.0), (0.9, 5.0)]
            .iter()
            .map(|&(m, d)| (mk(m, d), mk(m, d)))
            .collect();
        let rep = metrics_report(&pairs).unwrap();
        assert!(rep.rt.rmse.abs() < 1e-12);
        assert!((rep.rt.rho - 1.0).abs() < 1e-12);
        assert!(rep.rt.bias.abs() < 1e-12);
        assert_eq!(rep.rt.pct_in_jnd, 100.0);
        assert_eq!(rep.drr.pct_in_jnd, 100.0);
        assert!(rep.doa_mean_deg.abs() < 1e-9);

        let shifted: Vec<_> = pairs
            .iter()
            .map(|(p, t)| {
                let mut p = p.clone();
                p.mid_rt = Some(p.mid_rt.unwrap() + 0.1);
                (p, t.clone())
            })
            .collect();
        let rep = metrics_report(&shifted).unwrap();
        assert!((rep.rt.bias - 0.1).abs() < 1e-12);
        assert!((rep.rt.rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn report_jnd_is_order_invariant() {
        let mk = |mid: f64| ResponseMetrics {
            room_id: "r".into(),
            position_id: "p".into(),
            rt_bands: vec![],
            mid_rt: Some(mid),
            drr_db: 0.0,
            doa: vec3(0.0, 0.0, 1.0),
            toa_s: 0.0,
        };
        let mut pairs: Vec<_> = [(0.42, 0.4), (0.8, 0.6), (1.0, 1.04)]
            .iter()
            .map(|&(p, t)| (mk(p), mk(t)))
            .collect();
        let a = metrics_report(&pairs).unwrap().rt.pct_in_jnd;
        pairs.reverse();
        let b = metrics_report(&pairs).unwrap().rt.pct_in_jnd;
        assert_eq!(a, b);
    }
}
