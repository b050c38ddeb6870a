//! srirgen: simulate spatial room impulse responses, build paired-scene
//! datasets, train the room encoder and the diffusion generator, run
//! inference at new positions, and score results with room-acoustic
//! metrics.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use srirgen_core::analysis::{write_aggregate_csv, write_atomic, write_response_csv};
use srirgen_core::dataset::{self, CorpusSource, DatasetConfig, ScalePreset};
use srirgen_core::diffusion::{DiffusionConfig, Variant};
use srirgen_core::encoder::{EncoderConfig, EncoderTrainConfig};
use srirgen_core::geom::{vec3, Vec3};
use srirgen_core::io;
use srirgen_core::pipeline::{self, EncoderStage, GeneratorStage};
use srirgen_core::room::{array_geometry, RoomSpec, SimConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "srirgen",
    version,
    about = "Blind spatial room impulse response workbench"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a 4-channel SRIR in a room described by a JSON file.
    Simulate {
        #[arg(long)]
        room: PathBuf,
        /// Source position "x,y,z" in meters.
        #[arg(long)]
        source: String,
        /// Receiver (array center) position "x,y,z" in meters.
        #[arg(long)]
        receiver: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48_000.0)]
        fs: f64,
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
        #[arg(long, default_value_t = 6)]
        max_order: usize,
        /// Diffuse tail beyond the image-source horizon: on|off.
        #[arg(long, default_value = "on")]
        tail: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate rooms, paired scenes, SRIRs, and the manifest.
    BuildDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rooms: usize,
        /// Directory of mono WAVs, or "synth" for the built-in family.
        #[arg(long, default_value = "synth")]
        corpus: String,
        /// CSV of per-band T60 rows (header names band centers).
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value_t = 15)]
        eval_positions: usize,
        /// Room fractions "train,val,eval".
        #[arg(long, default_value = "0.75,0.125,0.125")]
        splits: String,
    },
    /// Contrastive encoder training from a dataset manifest.
    TrainEncoder {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 16)]
        batch_rooms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
    /// Diffusion generator training against a frozen encoder.
    TrainGenerator {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// proposed | concat-all | with-toa
        #[arg(long, default_value = "proposed")]
        variant: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
    /// Generate a SRIR for a scene and a new source/receiver position.
    Infer {
        #[arg(long)]
        scene: PathBuf,
        /// Generator checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Encoder checkpoint.
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        receiver: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated and ground-truth responses (matched file stems).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit plot-data text files (RT scatter, DRR lines, DoA arrows).
    Report {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn parse_point(s: &str) -> anyhow::Result<Vec3> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        bail!("expected \"x,y,z\", got {s:?}");
    }
    Ok(vec3(
        parts[0].trim().parse().context("x coordinate")?,
        parts[1].trim().parse().context("y coordinate")?,
        parts[2].trim().parse().context("z coordinate")?,
    ))
}

/// Every run records its fully resolved configuration next to the primary
/// output.
fn echo_config(primary_output: &Path, value: serde_json::Value) -> anyhow::Result<()> {
    let path = PathBuf::from(format!("{}.config.json", primary_output.display()));
    write_atomic(&path, serde_json::to_string_pretty(&value)?.as_bytes())?;
    Ok(())
}

fn encoder_config_for(scale: &ScalePreset) -> EncoderConfig {
    if scale.name == "paper" {
        EncoderConfig::paper()
    } else {
        EncoderConfig::desk()
    }
}

fn diffusion_config_for(scale: &ScalePreset, variant: Variant, h_dim: usize) -> DiffusionConfig {
    let mut cfg = if scale.name == "paper" {
        DiffusionConfig::paper(h_dim)
    } else {
        DiffusionConfig::desk(h_dim)
    };
    cfg.variant = variant;
    cfg.fs = scale.fs;
    cfg.sample_len = (scale.srir_seconds * scale.fs).round() as usize;
    cfg
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Simulate {
            room,
            source,
            receiver,
            out,
            fs,
            duration,
            max_order,
            tail,
            seed,
        } => {
            let tail = match tail.as_str() {
                "on" => true,
                "off" => false,
                other => bail!("--tail must be on or off, got {other:?}"),
            };
            let spec = RoomSpec::from_json(
                &std::fs::read_to_string(&room)
                    .with_context(|| format!("reading {}", room.display()))?,
            )?;
            let src = parse_point(&source)?;
            let rcv = parse_point(&receiver)?;
            let array = array_geometry(rcv, 0.02)?;
            let cfg = SimConfig {
                fs,
                duration,
                max_order,
                tail,
                seed,
            };
            let srir = srirgen_core::room::simulate_srir(&spec, src, &array, &cfg)?;
            io::write_srir(&out, &srir)?;
            echo_config(
                &out,
                serde_json::json!({
                    "command": "simulate",
                    "room": room.display().to_string(),
                    "source": src.as_array(),
                    "receiver": rcv.as_array(),
                    "fs": fs, "duration": duration, "max_order": max_order,
                    "tail": tail, "seed": seed,
                }),
            )?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Cmd::BuildDataset {
            out,
            rooms,
            corpus,
            profiles,
            seed,
            scale,
            eval_positions,
            splits,
        } => {
            let preset = ScalePreset::parse(&scale)?;
            let corpus_src = if corpus == "synth" {
                CorpusSource::Synth { n_signals: 12 }
            } else {
                CorpusSource::Dir(PathBuf::from(&corpus))
            };
            let parts: Vec<f64> = splits
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("parsing --splits")?;
            if parts.len() != 3 {
                bail!("--splits needs three fractions");
            }
            let cfg = DatasetConfig {
                root: out.clone(),
                n_rooms: rooms,
                splits: (parts[0], parts[1], parts[2]),
                corpus: corpus_src,
                seed,
                preset: preset.clone(),
                profiles,
                eval_positions,
            };
            let manifest = dataset::build_dataset(&cfg)?;
            manifest.validate()?;
            echo_config(
                &out.join("manifest.csv"),
                serde_json::json!({
                    "command": "build-dataset",
                    "rooms": rooms, "seed": seed, "scale": preset,
                    "splits": parts, "corpus": corpus,
                    "eval_positions": eval_positions,
                }),
            )?;
            println!(
                "wrote {} rooms under {}",
                manifest.rows.len(),
                out.display()
            );
            Ok(())
        }

        Cmd::TrainEncoder {
            dataset,
            out,
            epochs,
            batch_rooms,
            seed,
            scale,
        } => {
            let preset = ScalePreset::parse(&scale)?;
            let config = encoder_config_for(&preset);
            let train = EncoderTrainConfig {
                epochs: epochs.unwrap_or(if preset.name == "paper" { 125 } else { 20 }),
                batch_rooms,
                seed,
                ..Default::default()
            };
            let stage = EncoderStage {
                config: config.clone(),
                train: train.clone(),
            };
            let log = pipeline::train_encoder_stage(&dataset, &out, &stage)?;
            echo_config(
                &out,
                serde_json::json!({
                    "command": "train-encoder",
                    "dataset": dataset.display().to_string(),
                    "encoder_config": config, "train": train, "scale": preset.name,
                }),
            )?;
            if let Some(last) = log.last() {
                println!(
                    "trained {} epochs; final train loss {:.4}, val loss {:.4}",
                    log.len(),
                    last.train_loss,
                    last.val_loss
                );
            }
            Ok(())
        }

        Cmd::TrainGenerator {
            dataset,
            encoder,
            out,
            variant,
            epochs,
            batch_size,
            seed,
            scale,
        } => {
            let preset = ScalePreset::parse(&scale)?;
            let variant = Variant::parse(&variant)?;
            // h_dim is overwritten from the encoder checkpoint inside the
            // stage; 0 is a placeholder.
            let config = diffusion_config_for(&preset, variant, 0);
            let train = srirgen_core::diffusion::train::GeneratorTrainConfig {
                epochs: epochs.unwrap_or(if preset.name == "paper" { 300 } else { 60 }),
                batch_size,
                seed,
                ..Default::default()
            };
            let stage = GeneratorStage {
                config: config.clone(),
                train: train.clone(),
            };
            let log = pipeline::train_generator_stage(&dataset, &encoder, &out, &stage)?;
            echo_config(
                &out,
                serde_json::json!({
                    "command": "train-generator",
                    "dataset": dataset.display().to_string(),
                    "encoder": encoder.display().to_string(),
                    "diffusion_config": config, "train": train, "scale": preset.name,
                }),
            )?;
            if let Some(last) = log.last() {
                println!(
                    "trained {} epochs; final train loss {:.4}, val loss {:.4}",
                    log.len(),
                    last.train_loss,
                    last.val_loss
                );
            }
            Ok(())
        }

        Cmd::Infer {
            scene,
            model,
            encoder,
            source,
            receiver,
            seed,
            out,
        } => {
            let src = parse_point(&source)?;
            let rcv = parse_point(&receiver)?;
            let (srir, extra) = pipeline::infer(&scene, &encoder, &model, src, rcv, seed)?;
            io::write_srir_with(&out, &srir, Some(extra.clone()))?;
            echo_config(
                &out,
                serde_json::json!({
                    "command": "infer",
                    "scene": scene.display().to_string(),
                    "model": model.display().to_string(),
                    "encoder": encoder.display().to_string(),
                    "source": src.as_array(), "receiver": rcv.as_array(),
                    "seed": seed, "provenance": extra,
                }),
            )?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Cmd::Evaluate { pred, truth, out } => {
            let (pairs, report) = pipeline::evaluate_dirs(&pred, &truth)?;
            write_aggregate_csv(&out, &report)?;
            let stem = out.with_extension("");
            let pred_rows: Vec<_> = pairs.iter().map(|(p, _)| p.clone()).collect();
            let truth_rows: Vec<_> = pairs.iter().map(|(_, t)| t.clone()).collect();
            write_response_csv(
                &PathBuf::from(format!("{}_pred_responses.csv", stem.display())),
                &pred_rows,
            )?;
            write_response_csv(
                &PathBuf::from(format!("{}_truth_responses.csv", stem.display())),
                &truth_rows,
            )?;
            echo_config(
                &out,
                serde_json::json!({
                    "command": "evaluate",
                    "pred": pred.display().to_string(),
                    "truth": truth.display().to_string(),
                    "pairs": pairs.len(),
                }),
            )?;
            let fmt_rho = |r: f64| {
                if r.is_nan() {
                    "undefined".to_string()
                } else {
                    format!("{r:.3}")
                }
            };
            println!(
                "mid-RT: rmse {:.3} s, rho {}, bias {:.3}, {:.1}% in JND",
                report.rt.rmse,
                fmt_rho(report.rt.rho),
                report.rt.bias,
                report.rt.pct_in_jnd
            );
            println!(
                "DRR:    rmse {:.2} dB, rho {}, bias {:.2}, {:.1}% in JND",
                report.drr.rmse,
                fmt_rho(report.drr.rho),
                report.drr.bias,
                report.drr.pct_in_jnd
            );
            println!(
                "DoA:    mean great-circle error {:.2} deg",
                report.doa_mean_deg
            );
            Ok(())
        }

        Cmd::Report {
            pred,
            truth,
            out_dir,
        } => {
            let (pairs, _) = pipeline::evaluate_dirs(&pred, &truth)?;
            // Receiver positions for the arrow field come from the truth
            // sidecars.
            let mut receivers = std::collections::HashMap::new();
            for entry in std::fs::read_dir(&truth)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "wav") {
                    if let Ok(srir) = io::read_srir(&p) {
                        let stem = p.file_stem().unwrap().to_string_lossy().to_string();
                        let key = stem
                            .split_once("_pos")
                            .map(|(r, pos)| format!("{r}_pos{pos}"))
                            .unwrap_or(stem);
                        receivers.insert(key, srir.receiver.as_array());
                    }
                }
            }
            pipeline::write_plot_data(&out_dir, &pairs, &receivers)?;
            echo_config(
                &out_dir.join("plots"),
                serde_json::json!({
                    "command": "report",
                    "pred": pred.display().to_string(),
                    "truth": truth.display().to_string(),
                }),
            )?;
            println!("wrote plot data under {}", out_dir.display());
            Ok(())
        }
    }
}
