//! Stage orchestration over on-disk artifacts: feature preparation from a
//! manifest, the two training stages, inference (scene → h, positions → v,
//! sampler), and directory-level evaluation. The CLI is a thin shell over
//! these functions, and the acceptance suite drives them directly.

use crate::analysis::{metrics_report, AcousticReport, ResponseMetrics};
use crate::ckpt::{checkpoint_from, load_into, Checkpoint};
use crate::dataset::{Manifest, ManifestRow};
use crate::diffusion::train::{
    sample_srir, train_generator, GeneratorExample, GeneratorModel, GeneratorTrainConfig,
};
use crate::diffusion::{conditioning_vector, DiffusionConfig};
use crate::encoder::{
    train_encoder, EncoderConfig, EncoderModel, EncoderTrainConfig, TrainLogRow,
};
use crate::error::{Error, Result};
use crate::features::{dataset_stats, normalize_planes, scene_planes, NormStats};
use crate::geom::Vec3;
use crate::nn::Mode;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

fn fnv_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Raw feature planes for both scenes of every row in a split.
fn split_planes(
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<(String, [Tensor<f64>; 2], f64)>> {
    let mut out = Vec::new();
    for row in manifest.rows.iter().filter(|r| r.split == split) {
        let mut pair = Vec::with_capacity(2);
        let mut fs_seen = 0.0;
        for file in [&row.scene_a, &row.scene_b] {
            let path = manifest.root.join(file);
            let (channels, fs) = crate::io::read_wav(&path)?;
            fs_seen = fs as f64;
            pair.push(scene_planes(&channels, fs as f64)?);
        }
        let mut it = pair.into_iter();
        out.push((
            row.room_id.clone(),
            [it.next().unwrap(), it.next().unwrap()],
            fs_seen,
        ));
    }
    Ok(out)
}

pub struct EncoderStage {
    pub config: EncoderConfig,
    pub train: EncoderTrainConfig,
}

/// Train the contrastive encoder from a manifest and write the checkpoint
/// (normalization statistics and configuration in the metadata block) plus
/// a CSV training log next to it.
pub fn train_encoder_stage(
    manifest_path: &Path,
    out_ckpt: &Path,
    stage: &EncoderStage,
) -> Result<Vec<TrainLogRow>> {
    let manifest = Manifest::load(manifest_path)?;
    let train_raw = split_planes(&manifest, "train")?;
    if train_raw.is_empty() {
        return Err(Error::Dataset("manifest has no train rows".into()));
    }
    let fs = train_raw[0].2;
    let mut val_raw = split_planes(&manifest, "val")?;
    if val_raw.len() < 2 {
        // Contrastive scoring needs negatives; fall back to train rooms.
        val_raw = train_raw.clone();
    }

    let all_train: Vec<Tensor<f64>> = train_raw
        .iter()
        .flat_map(|(_, pair, _)| pair.iter().cloned())
        .collect();
    let stats = dataset_stats(&all_train, &format!("train:{}", manifest_path.display()))?;
    drop(all_train);

    let to_pairs = |raw: &[(String, [Tensor<f64>; 2], f64)]| -> Vec<[Tensor<f32>; 2]> {
        raw.iter()
            .map(|(_, pair, _)| {
                [
                    normalize_planes::<f32>(&pair[0], &stats),
                    normalize_planes::<f32>(&pair[1], &stats),
                ]
            })
            .collect()
    };
    let train_pairs = to_pairs(&train_raw);
    let val_pairs = to_pairs(&val_raw);
    drop(train_raw);
    drop(val_raw);

    let mut rng = crate::rng::substream(stage.train.seed, "encoder-init");
    let mut model = EncoderModel::<f32>::new(stage.config.clone(), &mut rng)?;
    let log = train_encoder(&mut model, &train_pairs, &val_pairs, &stage.train)?;

    let metadata = serde_json::json!({
        "kind": "encoder",
        "encoder_config": stage.config,
        "norm_stats": stats,
        "fs": fs,
        "train": stage.train,
    });
    checkpoint_from(&mut model, metadata).save(out_ckpt)?;

    let mut log_csv = String::from("epoch,lr,train_loss,val_loss\n");
    for r in &log {
        log_csv.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.val_loss
        ));
    }
    crate::analysis::write_atomic(&out_ckpt.with_extension("log.csv"), log_csv.as_bytes())?;
    Ok(log)
}

pub struct LoadedEncoder {
    pub model: EncoderModel<f32>,
    pub stats: NormStats,
    pub fs: f64,
}

pub fn load_encoder(path: &Path) -> Result<LoadedEncoder> {
    let ckpt = Checkpoint::load(path)?;
    let meta = ckpt.metadata.clone();
    if meta["kind"] != "encoder" {
        return Err(Error::Checkpoint(format!(
            "{path:?} is not an encoder checkpoint"
        )));
    }
    let config: EncoderConfig = serde_json::from_value(meta["encoder_config"].clone())?;
    let stats: NormStats = serde_json::from_value(meta["norm_stats"].clone())?;
    let fs = meta["fs"]
        .as_f64()
        .ok_or_else(|| Error::Checkpoint("missing fs in encoder metadata".into()))?;
    let mut rng = crate::rng::substream(0, "encoder-load");
    let mut model = EncoderModel::<f32>::new(config, &mut rng)?;
    load_into(&mut model, ckpt)?;
    Ok(LoadedEncoder { model, stats, fs })
}

impl LoadedEncoder {
    /// Room embedding h for a 4-channel scene at the encoder's rate.
    pub fn embed(&mut self, channels: &[Vec<f64>], fs: f64) -> Result<Vec<f32>> {
        if (fs - self.fs).abs() > 0.5 {
            return Err(Error::Config(format!(
                "scene rate {fs} does not match encoder rate {} (feature statistics are rate-bound)",
                self.fs
            )));
        }
        let planes = scene_planes(channels, fs)?;
        let x = normalize_planes::<f32>(&planes, &self.stats);
        let (p, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let x = x.reshape(&[1, p, t, f])?;
        let (h, _) = self.model.forward(x, Mode::Eval)?;
        Ok(h.data().to_vec())
    }
}

pub struct GeneratorStage {
    pub config: DiffusionConfig,
    pub train: GeneratorTrainConfig,
}

/// Build (x0, h, v) examples for one split: each scene is embedded once
/// and contributes one example per ground-truth SRIR.
fn generator_examples(
    manifest: &Manifest,
    rows: &[&ManifestRow],
    encoder: &mut LoadedEncoder,
    cfg: &DiffusionConfig,
) -> Result<Vec<GeneratorExample<f32>>> {
    let mut out = Vec::new();
    for row in rows {
        for scene_idx in 0..2 {
            let scene_file = if scene_idx == 0 {
                &row.scene_a
            } else {
                &row.scene_b
            };
            let (channels, fs) = crate::io::read_wav(&manifest.root.join(scene_file))?;
            let h = encoder.embed(&channels, fs as f64)?;
            let receiver = row.receiver_position[scene_idx];
            for (k, srir_file) in row.srir_files[scene_idx].iter().enumerate() {
                let srir = crate::io::read_srir(&manifest.root.join(srir_file))?;
                let prepared = crate::dataset::normalize_align(&srir, cfg.variant)?;
                let source = row.source_positions[scene_idx][k];
                let mut x0 = Tensor::<f32>::zeros(&[4, cfg.padded_len()]);
                let l = cfg.sample_len.min(prepared.len());
                for (ci, ch) in prepared.channels.iter().enumerate() {
                    for (j, &v) in ch.iter().take(l).enumerate() {
                        let idx = ci * cfg.padded_len() + j;
                        x0.data_mut()[idx] = v as f32;
                    }
                }
                out.push(GeneratorExample {
                    x0,
                    h: h.clone(),
                    v: conditioning_vector(source, receiver),
                });
            }
        }
    }
    Ok(out)
}

/// Std of all (unpadded) training samples; stored as σ_data.
pub fn estimate_sigma_data(examples: &[GeneratorExample<f32>], sample_len: usize) -> f64 {
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let mut n = 0usize;
    for ex in examples {
        let padded = ex.x0.shape()[1];
        for c in 0..4 {
            for j in 0..sample_len.min(padded) {
                let v = ex.x0.data()[c * padded + j] as f64;
                sum += v;
                sumsq += v * v;
                n += 1;
            }
        }
    }
    let mean = sum / n as f64;
    (sumsq / n as f64 - mean * mean).max(1e-12).sqrt()
}

/// Train the diffusion generator against a frozen encoder; the checkpoint
/// metadata carries the full diffusion configuration including the
/// estimated σ_data.
pub fn train_generator_stage(
    manifest_path: &Path,
    encoder_ckpt: &Path,
    out_ckpt: &Path,
    stage: &GeneratorStage,
) -> Result<Vec<crate::diffusion::train::GenTrainLogRow>> {
    let manifest = Manifest::load(manifest_path)?;
    let mut encoder = load_encoder(encoder_ckpt)?;
    let mut cfg = stage.config.clone();
    cfg.h_dim = encoder.model.config.embedding_dim;
    if (cfg.fs - encoder.fs).abs() > 0.5 {
        return Err(Error::Config(format!(
            "generator rate {} vs encoder rate {}",
            cfg.fs, encoder.fs
        )));
    }

    let train_rows: Vec<&ManifestRow> =
        manifest.rows.iter().filter(|r| r.split == "train").collect();
    let val_rows: Vec<&ManifestRow> =
        manifest.rows.iter().filter(|r| r.split == "val").collect();
    if train_rows.is_empty() {
        return Err(Error::Dataset("manifest has no train rows".into()));
    }
    let train_ex = generator_examples(&manifest, &train_rows, &mut encoder, &cfg)?;
    let val_ex = generator_examples(&manifest, &val_rows, &mut encoder, &cfg)?;
    cfg.sigma_data = estimate_sigma_data(&train_ex, cfg.sample_len);

    let mut rng = crate::rng::substream(stage.train.seed, "generator-init");
    let mut model = GeneratorModel::<f32>::new(cfg.clone(), &mut rng)?;
    let log = train_generator(&mut model, &train_ex, &val_ex, &stage.train)?;

    let metadata = serde_json::json!({
        "kind": "generator",
        "diffusion_config": cfg,
        "encoder_checkpoint": encoder_ckpt.display().to_string(),
        "train": stage.train,
    });
    checkpoint_from(&mut model, metadata).save(out_ckpt)?;

    let mut log_csv = String::from("epoch,lr,train_loss,val_loss\n");
    for r in &log {
        log_csv.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.val_loss
        ));
    }
    crate::analysis::write_atomic(&out_ckpt.with_extension("log.csv"), log_csv.as_bytes())?;
    Ok(log)
}

pub fn load_generator(path: &Path) -> Result<GeneratorModel<f32>> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.metadata["kind"] != "generator" {
        return Err(Error::Checkpoint(format!(
            "{path:?} is not a generator checkpoint"
        )));
    }
    let cfg: DiffusionConfig = serde_json::from_value(ckpt.metadata["diffusion_config"].clone())?;
    let mut rng = crate::rng::substream(0, "generator-load");
    let mut model = GeneratorModel::<f32>::new(cfg, &mut rng)?;
    load_into(&mut model, ckpt)?;
    Ok(model)
}

/// Inference path: scene → frozen encoder → h; positions → v; sampler.
/// Returns the generated SRIR and the sidecar extra block (h hash, v,
/// variant, seed, config digest).
pub fn infer(
    scene_wav: &Path,
    encoder_ckpt: &Path,
    generator_ckpt: &Path,
    source: Vec3,
    receiver: Vec3,
    seed: u64,
) -> Result<(crate::room::Srir, serde_json::Value)> {
    let mut encoder = load_encoder(encoder_ckpt)?;
    let model = load_generator(generator_ckpt)?;
    let (channels, fs) = crate::io::read_wav(scene_wav)?;
    let h = encoder.embed(&channels, fs as f64)?;
    let v = conditioning_vector(source, receiver);
    let srir = sample_srir(&model, &h, v, source, receiver, seed)?;
    let h_bytes: Vec<u8> = h.iter().flat_map(|x| x.to_le_bytes()).collect();
    let cfg_digest = fnv_hex(serde_json::to_string(&model.config)?.as_bytes());
    let extra = serde_json::json!({
        "h_hash": fnv_hex(&h_bytes),
        "v": v,
        "variant": model.config.variant.as_str(),
        "seed": seed,
        "config_digest": cfg_digest,
    });
    Ok((srir, extra))
}

/// Measure matched WAV pairs (same file stem under both directories) and
/// aggregate. Returns the per-pair metrics and the report.
pub fn evaluate_dirs(
    pred_dir: &Path,
    truth_dir: &Path,
) -> Result<(Vec<(ResponseMetrics, ResponseMetrics)>, AcousticReport)> {
    let mut stems: Vec<(String, PathBuf)> = std::fs::read_dir(pred_dir)
        .map_err(|e| Error::io(pred_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .map(|p| {
            (
                p.file_stem().unwrap().to_string_lossy().to_string(),
                p.clone(),
            )
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Dataset(format!("no WAV files in {pred_dir:?}")));
    }
    let mut pairs = Vec::new();
    for (stem, pred_path) in stems {
        let truth_path = truth_dir.join(format!("{stem}.wav"));
        if !truth_path.exists() {
            return Err(Error::Dataset(format!(
                "no matching truth response for {stem} in {truth_dir:?}"
            )));
        }
        let pred = crate::io::read_srir(&pred_path)?;
        let truth = crate::io::read_srir(&truth_path)?;
        let (room_id, position_id) = stem
            .split_once("_pos")
            .map(|(r, p)| (r.to_string(), format!("pos{p}")))
            .unwrap_or_else(|| (stem.clone(), String::new()));
        pairs.push((
            ResponseMetrics::measure(&pred, &room_id, &position_id)?,
            ResponseMetrics::measure(&truth, &room_id, &position_id)?,
        ));
    }
    let report = metrics_report(&pairs)?;
    Ok((pairs, report))
}

/// Plot-data emission: RT scatter, DRR along each line, DoA arrow fields.
pub fn write_plot_data(
    out_dir: &Path,
    pairs: &[(ResponseMetrics, ResponseMetrics)],
    receivers: &std::collections::HashMap<String, [f64; 3]>,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rt = String::from("band_hz true_rt_s pred_rt_s\n");
    for (p, t) in pairs {
        for ((c, pr), (_, tr)) in p.rt_bands.iter().zip(t.rt_bands.iter()) {
            if let (Some(pr), Some(tr)) = (pr, tr) {
                rt.push_str(&format!("{c} {tr} {pr}\n"));
            }
        }
    }
    crate::analysis::write_atomic(&out_dir.join("rt_scatter.txt"), rt.as_bytes())?;

    let mut drr = String::from("room_id position_id true_drr_db pred_drr_db\n");
    for (p, t) in pairs {
        drr.push_str(&format!(
            "{} {} {} {}\n",
            p.room_id, p.position_id, t.drr_db, p.drr_db
        ));
    }
    crate::analysis::write_atomic(&out_dir.join("drr_vs_position.txt"), drr.as_bytes())?;

    let mut doa = String::from(
        "room_id position_id recv_x recv_y recv_z pred_x pred_y pred_z true_x true_y true_z\n",
    );
    for (p, t) in pairs {
        let key = format!("{}_{}", p.room_id, p.position_id);
        let r = receivers.get(&key).copied().unwrap_or([0.0; 3]);
        doa.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {}\n",
            p.room_id,
            p.position_id,
            r[0],
            r[1],
            r[2],
            p.doa.x,
            p.doa.y,
            p.doa.z,
            t.doa.x,
            t.doa.y,
            t.doa.z
        ));
    }
    crate::analysis::write_atomic(&out_dir.join("doa_arrows.txt"), doa.as_bytes())?;
    Ok(())
}
