//! Scene source material: either a user-supplied directory of mono WAV
//! files or a self-contained synthetic family (amplitude-modulated colored
//! noise with syllabic gaps, enough structure for reverberant tails to
//! show).

use crate::dsp::filter::{butter_bandpass, filtfilt};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub enum CorpusSource {
    Dir(PathBuf),
    Synth { n_signals: usize },
}

/// Load mono WAVs at the working rate; each must be at least `min_seconds`.
pub fn load_corpus(dir: &Path, fs: f64, min_seconds: f64) -> Result<Vec<Vec<f64>>> {
    let mut signals = Vec::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .collect();
    files.sort();
    for path in files {
        let (channels, rate) = crate::io::read_wav(&path)?;
        if channels.len() != 1 {
            return Err(Error::Dataset(format!(
                "{path:?}: corpus files must be mono, got {} channels",
                channels.len()
            )));
        }
        if (rate as f64 - fs).abs() > 0.5 {
            return Err(Error::Dataset(format!(
                "{path:?}: sample rate {rate} does not match working rate {fs}"
            )));
        }
        if (channels[0].len() as f64) < min_seconds * fs {
            return Err(Error::Dataset(format!(
                "{path:?}: shorter than {min_seconds} s"
            )));
        }
        signals.push(channels.into_iter().next().unwrap());
    }
    if signals.len() < 3 {
        return Err(Error::Dataset(format!(
            "corpus {dir:?} has {} usable files, need at least 3",
            signals.len()
        )));
    }
    Ok(signals)
}

/// Deterministic synthetic corpus at the working rate.
pub fn synth_corpus(n: usize, seconds: f64, fs: f64, seed: u64) -> Vec<Vec<f64>> {
    let len = (seconds * fs) as usize;
    (0..n)
        .map(|i| {
            let mut rng = crate::rng::substream_indexed(seed, "corpus", i as u64);
            let mut signal = vec![0.0; len];
            let voices = rng.gen_range(2..=4);
            for _ in 0..voices {
                let center = rng.gen_range(150.0..(fs / 2.0 * 0.6));
                let width = rng.gen_range(1.3..2.5f64);
                let sos = match butter_bandpass(2, center / width, center * width, fs) {
                    Ok(s) => s,
                    Err(_) => continue,
                };
                let noise: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                let colored = filtfilt(&sos, &noise);
                let f_mod = rng.gen_range(1.5..4.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let sharp = rng.gen_range(1..=3);
                for (k, v) in signal.iter_mut().enumerate() {
                    let t = k as f64 / fs;
                    let gate = (std::f64::consts::TAU * f_mod * t + phase).sin().max(0.0);
                    *v += colored[k] * gate.powi(sharp);
                }
            }
            let peak = signal.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if peak > 0.0 {
                for v in &mut signal {
                    *v *= 0.9 / peak;
                }
            }
            signal
        })
        .collect()
}

pub fn resolve_corpus(source: &CorpusSource, fs: f64, seconds: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    match source {
        CorpusSource::Dir(dir) => load_corpus(dir, fs, seconds),
        CorpusSource::Synth { n_signals } => {
            if *n_signals < 3 {
                return Err(Error::Dataset("synthetic corpus needs >= 3 signals".into()));
            }
            Ok(synth_corpus(*n_signals, seconds, fs, seed))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_corpus_is_deterministic_and_leveled() {
        let a = synth_corpus(3, 1.0, 8000.0, 5);
        let b = synth_corpus(3, 1.0, 8000.0, 5);
        assert_eq!(a, b);
        for s in &a {
            let peak = s.iter().fold(0.0f64, |x, &y| x.max(y.abs()));
            assert!(peak > 0.5 && peak <= 0.9 + 1e-12);
        }
        // Signals differ from each other.
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in synth_corpus(3, 1.0, 8000.0, 1).iter().enumerate() {
            crate::io::write_wav(&dir.path().join(format!("s{i}.wav")), &[s.clone()], 8000)
                .unwrap();
        }
        let loaded = load_corpus(dir.path(), 8000.0, 0.9).unwrap();
        assert_eq!(loaded.len(), 3);
        assert!(load_corpus(dir.path(), 16000.0, 0.9).is_err());
    }
}
