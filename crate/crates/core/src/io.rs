//! Multichannel float WAV files and JSON sidecars.

use crate::analysis::write_atomic;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::room::Srir;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Write interleaved 32-bit float WAV.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], fs: u32) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::InvalidArg("no channels to write".into()));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidArg("channel lengths differ".into()));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: fs,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let tmp = path.with_extension("wav.tmp~");
    {
        let mut writer = hound::WavWriter::create(&tmp, spec)
            .map_err(|e| Error::Wav { path: tmp.clone(), message: e.to_string() })?;
        for i in 0..len {
            for ch in channels {
                writer
                    .write_sample(ch[i] as f32)
                    .map_err(|e| Error::Wav { path: tmp.clone(), message: e.to_string() })?;
            }
        }
        writer
            .finalize()
            .map_err(|e| Error::Wav { path: tmp.clone(), message: e.to_string() })?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a WAV into per-channel f64 buffers. Accepts 32-bit float and
/// 16/24-bit integer PCM.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    match spec.sample_format {
        hound::SampleFormat::Float => {
            for (i, s) in reader.samples::<f32>().enumerate() {
                let s = s.map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?;
                channels[i % n_ch].push(s as f64);
            }
        }
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            for (i, s) in reader.samples::<i32>().enumerate() {
                let s = s.map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?;
                channels[i % n_ch].push(s as f64 * scale);
            }
        }
    }
    Ok((channels, spec.sample_rate))
}

/// Sidecar metadata written next to every SRIR WAV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SrirMeta {
    pub source: [f64; 3],
    pub receiver: [f64; 3],
    pub aligned: bool,
    pub toa_seconds: f64,
    pub fs: f64,
    pub fractional_delay: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

pub fn sidecar_path(wav: &Path) -> std::path::PathBuf {
    wav.with_extension("meta.json")
}

pub fn write_srir(path: &Path, srir: &Srir) -> Result<()> {
    write_srir_with(path, srir, None)
}

/// Write a SRIR with extra sidecar fields (conditioning provenance etc.).
pub fn write_srir_with(path: &Path, srir: &Srir, extra: Option<serde_json::Value>) -> Result<()> {
    write_wav(path, &srir.channels, srir.fs.round() as u32)?;
    let meta = SrirMeta {
        source: srir.source.as_array(),
        receiver: srir.receiver.as_array(),
        aligned: srir.aligned,
        toa_seconds: srir.toa_seconds,
        fs: srir.fs,
        fractional_delay: crate::dsp::delay::FRAC_DELAY_VERSION.to_string(),
        extra,
    };
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn read_srir(path: &Path) -> Result<Srir> {
    let (channels, fs) = read_wav(path)?;
    if channels.len() != 4 {
        return Err(Error::shape("SRIR wav", "4 channels", channels.len()));
    }
    let meta_path = sidecar_path(path);
    let meta: SrirMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )?;
    let mut iter = channels.into_iter();
    Ok(Srir {
        channels: std::array::from_fn(|_| iter.next().unwrap()),
        fs: fs as f64,
        source: Vec3::from(meta.source),
        receiver: Vec3::from(meta.receiver),
        aligned: meta.aligned,
        toa_seconds: meta.toa_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;

    #[test]
    fn wav_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let chans: Vec<Vec<f64>> = (0..4)
            .map(|c| (0..100).map(|i| ((i * (c + 1)) as f64 * 0.01).sin()).collect())
            .collect();
        write_wav(&path, &chans, 8000).unwrap();
        let (back, fs) = read_wav(&path).unwrap();
        assert_eq!(fs, 8000);
        assert_eq!(back.len(), 4);
        for (a, b) in chans.iter().zip(&back) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn srir_round_trip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let srir = Srir {
            channels: std::array::from_fn(|c| vec![0.1 * (c as f64 + 1.0); 64]),
            fs: 8000.0,
            source: vec3(1.0, 2.0, 1.5),
            receiver: vec3(3.0, 2.0, 1.5),
            aligned: true,
            toa_seconds: 0.005831,
        };
        write_srir(&path, &srir).unwrap();
        let back = read_srir(&path).unwrap();
        assert_eq!(back.aligned, true);
        assert!((back.toa_seconds - srir.toa_seconds).abs() < 1e-12);
        assert!((back.source - srir.source).norm() < 1e-12);
    }
}
