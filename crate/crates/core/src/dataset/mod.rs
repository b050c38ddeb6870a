//! Dataset construction: RT-profile sampling, Sabine-feasible room draws,
//! paired-scene rendering, SRIR normalization/alignment, the 15-position
//! evaluation line, and the manifest tying the files together.

pub mod corpus;

pub use corpus::CorpusSource;

use crate::analysis::direct_peak_index;
use crate::diffusion::Variant;
use crate::dsp::fft_convolve;
use crate::error::{Error, Result};
use crate::geom::{vec3, Vec3};
use crate::rng::Stream;
use crate::room::{
    array_geometry, draw_feasible_room, simulate_srir, RoomSpec, SimConfig, Srir, NBANDS,
    OCTAVE_CENTERS,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const WALL_MARGIN: f64 = 0.3;
pub const SCENE_SECONDS: f64 = 4.0;

/// Per-octave-band reverberation-time target.
#[derive(Clone, Debug, PartialEq)]
pub struct RtProfile {
    pub t60: [f64; NBANDS],
    pub provenance: String,
}

/// CSV of per-band T60 rows; the header names the band centers.
pub fn load_rt_profiles(path: &Path) -> Result<Vec<RtProfile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{path:?}: empty profile file")))?;
    let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    if cols.len() != NBANDS {
        return Err(Error::Dataset(format!(
            "{path:?}:1: header must name {NBANDS} bands, got {}",
            cols.len()
        )));
    }
    for (c, center) in cols.iter().zip(OCTAVE_CENTERS.iter()) {
        if !c.contains(&format!("{}", *center as u64)) {
            return Err(Error::Dataset(format!(
                "{path:?}:1: header column {c:?} does not name the {center} Hz band"
            )));
        }
    }
    let mut profiles = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut t60 = [0.0; NBANDS];
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != NBANDS {
            return Err(Error::Dataset(format!(
                "{path:?}:{}: expected {NBANDS} values, got {}",
                idx + 1,
                fields.len()
            )));
        }
        for (b, f) in fields.iter().enumerate() {
            t60[b] = f.trim().parse::<f64>().map_err(|e| {
                Error::Dataset(format!("{path:?}:{}: bad T60 {f:?}: {e}", idx + 1))
            })?;
            if t60[b] <= 0.05 {
                return Err(Error::Dataset(format!(
                    "{path:?}:{}: T60 {} s too small",
                    idx + 1,
                    t60[b]
                )));
            }
        }
        profiles.push(RtProfile {
            t60,
            provenance: format!("{}:{}", path.display(), idx + 1),
        });
    }
    if profiles.is_empty() {
        return Err(Error::Dataset(format!("{path:?}: no profile rows")));
    }
    Ok(profiles)
}

/// Synthetic fallback family: T60(b) = T_mid·(f_b/1000)^γ with
/// T_mid ~ U[0.2, 1.5] s and γ ~ U[−0.35, 0].
pub fn synthetic_rt_profile(rng: &mut Stream) -> RtProfile {
    let t_mid = rng.gen_range(0.2..=1.5);
    let gamma = rng.gen_range(-0.35..=0.0);
    let mut t60 = [0.0; NBANDS];
    for (b, &f) in OCTAVE_CENTERS.iter().enumerate() {
        t60[b] = t_mid * (f / 1000.0).powf(gamma);
    }
    RtProfile {
        t60,
        provenance: format!("synthetic(t_mid={t_mid:.3},gamma={gamma:.3})"),
    }
}

/// Uniform draw from user-supplied rows, or the synthetic family when no
/// rows are given.
pub fn draw_rt_profile(profiles: Option<&[RtProfile]>, rng: &mut Stream) -> RtProfile {
    match profiles {
        Some(rows) if !rows.is_empty() => rows[rng.gen_range(0..rows.len())].clone(),
        _ => synthetic_rt_profile(rng),
    }
}

/// Size and rate preset for one scale of operation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalePreset {
    pub name: String,
    pub fs: f64,
    pub srir_seconds: f64,
    pub max_order: usize,
    pub perturbation: f64,
    pub dims_lo: [f64; 3],
    pub dims_hi: [f64; 3],
    pub tail: bool,
}

impl ScalePreset {
    pub fn desk() -> Self {
        ScalePreset {
            name: "desk".into(),
            fs: 8_000.0,
            srir_seconds: 0.25,
            max_order: 6,
            perturbation: 0.02,
            dims_lo: [2.5, 2.5, 2.5],
            dims_hi: [8.0, 8.0, 4.0],
            tail: true,
        }
    }

    pub fn paper() -> Self {
        ScalePreset {
            name: "paper".into(),
            fs: 48_000.0,
            srir_seconds: 0.5,
            max_order: 8,
            perturbation: 0.02,
            dims_lo: [1.5, 1.5, 2.5],
            dims_hi: [20.0, 20.0, 8.0],
            tail: true,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidArg(format!(
                "unknown scale {other:?} (expected desk|paper)"
            ))),
        }
    }
}

/// Draw a Sabine-feasible room for a profile within the preset's bounds.
pub fn draw_room(
    profile: &RtProfile,
    preset: &ScalePreset,
    rng: &mut Stream,
    max_tries: usize,
) -> Result<RoomSpec> {
    draw_feasible_room(
        &profile.t60,
        preset.dims_lo,
        preset.dims_hi,
        preset.perturbation,
        rng,
        max_tries,
    )
    .map_err(|e| {
        Error::Dataset(format!(
            "no feasible room for profile {} ({e})",
            profile.provenance
        ))
    })
}

/// One rendered scene: mixed reverberant audio plus everything that made it.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub audio: [Vec<f64>; 4],
    pub sources: Vec<Vec3>,
    pub receiver: Vec3,
    pub srirs: Vec<Srir>,
}

#[derive(Clone, Debug)]
pub struct ScenePair {
    pub room_id: String,
    pub scenes: [SceneData; 2],
}

fn random_interior_point(room: &RoomSpec, rng: &mut Stream, margin: f64) -> Result<Vec3> {
    // Rejection sample inside the bounding box of the vertices.
    let (mut lo, mut hi) = (room.vertices[0], room.vertices[0]);
    for v in &room.vertices {
        lo = vec3(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z));
        hi = vec3(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z));
    }
    for _ in 0..1000 {
        let p = vec3(
            rng.gen_range(lo.x..hi.x),
            rng.gen_range(lo.y..hi.y),
            rng.gen_range(lo.z..hi.z),
        );
        if room.contains(p, margin) {
            return Ok(p);
        }
    }
    Err(Error::Geometry(format!(
        "no interior point with margin {margin} in room of volume {:.2}",
        room.volume
    )))
}

fn render_scene(
    room: &RoomSpec,
    corpus: &[Vec<f64>],
    preset: &ScalePreset,
    rng: &mut Stream,
) -> Result<SceneData> {
    let n_sources = rng.gen_range(1..=3usize);
    let receiver = random_interior_point(room, rng, WALL_MARGIN)?;
    let array = array_geometry(receiver, 0.02)?;
    let scene_len = (SCENE_SECONDS * preset.fs) as usize;

    let mut sources = Vec::with_capacity(n_sources);
    let mut srirs = Vec::with_capacity(n_sources);
    let mut audio: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; scene_len]);

    // Distinct corpus signals per source (partial Fisher-Yates).
    let mut picks: Vec<usize> = (0..corpus.len()).collect();
    for k in 0..n_sources {
        let j = rng.gen_range(k..picks.len());
        picks.swap(k, j);
    }

    for s in 0..n_sources {
        let source = random_interior_point(room, rng, WALL_MARGIN)?;
        let cfg = SimConfig {
            fs: preset.fs,
            duration: preset.srir_seconds,
            max_order: preset.max_order,
            tail: preset.tail,
            seed: rng.gen(),
        };
        let srir = simulate_srir(room, source, &array, &cfg)?;
        let signal = &corpus[picks[s]];
        let dry = &signal[..scene_len.min(signal.len())];
        for (ch, out) in audio.iter_mut().enumerate() {
            let wet = fft_convolve(dry, &srir.channels[ch]);
            for (o, w) in out.iter_mut().zip(wet.iter()) {
                *o += *w;
            }
        }
        sources.push(source);
        srirs.push(srir);
    }

    let peak = audio
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    if peak <= 0.0 {
        return Err(Error::Signal("rendered scene is silent".into()));
    }
    let g = 0.9 / peak;
    for ch in &mut audio {
        for v in ch.iter_mut() {
            *v *= g;
        }
    }
    Ok(SceneData {
        audio,
        sources,
        receiver,
        srirs,
    })
}

/// Two scenes in the same room (the contrastive positive pair).
pub fn render_scene_pair(
    room: &RoomSpec,
    room_id: &str,
    corpus: &[Vec<f64>],
    preset: &ScalePreset,
    rng: &mut Stream,
) -> Result<ScenePair> {
    if corpus.len() < 3 {
        return Err(Error::Dataset(format!(
            "corpus has {} signals, need at least 3",
            corpus.len()
        )));
    }
    let a = render_scene(room, corpus, preset, rng)?;
    let b = render_scene(room, corpus, preset, rng)?;
    Ok(ScenePair {
        room_id: room_id.to_string(),
        scenes: [a, b],
    })
}

/// Max-abs normalization plus (unless the WITH_TOA variant) a common left
/// shift of all channels so the direct peak sits at sample 0. Idempotent.
pub fn normalize_align(srir: &Srir, variant: Variant) -> Result<Srir> {
    let peak = srir.max_abs();
    if peak <= 0.0 {
        return Err(Error::Signal("silent SRIR".into()));
    }
    let mut out = srir.clone();
    for ch in &mut out.channels {
        for v in ch.iter_mut() {
            *v /= peak;
        }
    }
    let omni = out.omni_mix();
    let peak_idx = direct_peak_index(&omni, out.fs)?;
    out.toa_seconds = if srir.aligned {
        srir.toa_seconds
    } else {
        peak_idx as f64 / out.fs
    };
    if variant.aligned_training_data() && peak_idx > 0 {
        let n = out.len();
        for ch in &mut out.channels {
            ch.rotate_left(peak_idx);
            for v in &mut ch[n - peak_idx..] {
                *v = 0.0;
            }
        }
        out.aligned = true;
    } else if variant.aligned_training_data() {
        out.aligned = true;
    }
    Ok(out)
}

/// Receiver line for position-dependent evaluation: a horizontal segment
/// whose closest point to the source is `distance` away, `count`
/// equidistant receivers, nominal span 6 m shrunk to fit the room (with a
/// clipped flag), error below a 3 m span.
#[derive(Clone, Debug)]
pub struct LinePositions {
    pub receivers: Vec<Vec3>,
    pub span: f64,
    pub clipped: bool,
}

pub fn line_positions(
    source: Vec3,
    room: &RoomSpec,
    count: usize,
    distance: f64,
) -> Result<LinePositions> {
    const FULL_SPAN: f64 = 6.0;
    const MIN_SPAN: f64 = 3.0;
    let mut best: Option<(f64, usize)> = None; // (span, azimuth index)
    let azimuths = 72;
    for k in 0..azimuths {
        let theta = std::f64::consts::TAU * k as f64 / azimuths as f64;
        let t_hat = vec3(theta.cos(), theta.sin(), 0.0);
        let n_hat = vec3(-theta.sin(), theta.cos(), 0.0);
        let center = source + n_hat * distance;
        if !room.contains(center, WALL_MARGIN) {
            continue;
        }
        // Largest symmetric span that keeps both endpoints inside.
        let mut span = 0.0f64;
        let step = 0.05;
        while span + step <= FULL_SPAN {
            let half = (span + step) / 2.0;
            if room.contains(center + t_hat * half, WALL_MARGIN)
                && room.contains(center - t_hat * half, WALL_MARGIN)
            {
                span += step;
            } else {
                break;
            }
        }
        if best.map_or(true, |(s, _)| span > s) {
            best = Some((span, k));
        }
    }
    let (span, k) = best.ok_or_else(|| {
        Error::Geometry("no receiver line fits the room at the requested distance".into())
    })?;
    if span < MIN_SPAN {
        return Err(Error::Geometry(format!(
            "receiver line span {span:.2} m below the 3 m minimum"
        )));
    }
    let theta = std::f64::consts::TAU * k as f64 / azimuths as f64;
    let t_hat = vec3(theta.cos(), theta.sin(), 0.0);
    let n_hat = vec3(-theta.sin(), theta.cos(), 0.0);
    let center = source + n_hat * distance;
    let receivers = (0..count)
        .map(|i| {
            let frac = if count > 1 {
                i as f64 / (count - 1) as f64 - 0.5
            } else {
                0.0
            };
            center + t_hat * (span * frac)
        })
        .collect();
    Ok(LinePositions {
        receivers,
        span,
        clipped: span < FULL_SPAN - 1e-9,
    })
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub room_id: String,
    pub split: String,
    pub room_file: String,
    pub scene_a: String,
    pub scene_b: String,
    /// Per scene, ';'-separated within a scene, '|' between scenes.
    pub srir_files: [Vec<String>; 2],
    pub source_positions: [Vec<Vec3>; 2],
    pub receiver_position: [Vec3; 2],
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

fn fmt_point(p: Vec3) -> String {
    // Display prints the shortest round-trip form, so load(save(x)) == x.
    format!("{},{},{}", p.x, p.y, p.z)
}

fn parse_point(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Dataset(format!("bad point {s:?}")));
    }
    let mut v = [0.0; 3];
    for (k, p) in parts.iter().enumerate() {
        v[k] = p
            .trim()
            .parse()
            .map_err(|e| Error::Dataset(format!("bad coordinate {p:?}: {e}")))?;
    }
    Ok(Vec3::from(v))
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "room_id",
            "split",
            "room_file",
            "scene_a",
            "scene_b",
            "srir_files",
            "source_positions",
            "receiver_position",
            "seed",
        ])
        .map_err(|e| Error::Dataset(e.to_string()))?;
        for r in &self.rows {
            let srirs = r
                .srir_files
                .iter()
                .map(|fs| fs.join(";"))
                .collect::<Vec<_>>()
                .join("|");
            let sources = r
                .source_positions
                .iter()
                .map(|ps| ps.iter().map(|&p| fmt_point(p)).collect::<Vec<_>>().join(";"))
                .collect::<Vec<_>>()
                .join("|");
            let receivers = r
                .receiver_position
                .iter()
                .map(|&p| fmt_point(p))
                .collect::<Vec<_>>()
                .join("|");
            w.write_record([
                r.room_id.as_str(),
                r.split.as_str(),
                r.room_file.as_str(),
                r.scene_a.as_str(),
                r.scene_b.as_str(),
                srirs.as_str(),
                sources.as_str(),
                receivers.as_str(),
                &r.seed.to_string(),
            ])
            .map_err(|e| Error::Dataset(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Dataset(e.to_string()))?;
        crate::analysis::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Dataset(format!("{path:?}: {e}")))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Dataset(format!("{path:?}: {e}")))?;
            if rec.len() != 9 {
                return Err(Error::Dataset(format!(
                    "{path:?}: row with {} fields",
                    rec.len()
                )));
            }
            let split2 = |s: &str| -> Result<[String; 2]> {
                let parts: Vec<&str> = s.split('|').collect();
                if parts.len() != 2 {
                    return Err(Error::Dataset(format!("expected two scene groups in {s:?}")));
                }
                Ok([parts[0].to_string(), parts[1].to_string()])
            };
            let srir_groups = split2(&rec[5])?;
            let source_groups = split2(&rec[6])?;
            let recv_groups = split2(&rec[7])?;
            let parse_points = |s: &str| -> Result<Vec<Vec3>> {
                s.split(';').filter(|p| !p.is_empty()).map(parse_point).collect()
            };
            rows.push(ManifestRow {
                room_id: rec[0].to_string(),
                split: rec[1].to_string(),
                room_file: rec[2].to_string(),
                scene_a: rec[3].to_string(),
                scene_b: rec[4].to_string(),
                srir_files: [
                    srir_groups[0].split(';').filter(|s| !s.is_empty()).map(String::from).collect(),
                    srir_groups[1].split(';').filter(|s| !s.is_empty()).map(String::from).collect(),
                ],
                source_positions: [parse_points(&source_groups[0])?, parse_points(&source_groups[1])?],
                receiver_position: [parse_point(&recv_groups[0])?, parse_point(&recv_groups[1])?],
                seed: rec[8]
                    .parse()
                    .map_err(|e| Error::Dataset(format!("bad seed: {e}")))?,
            });
        }
        Ok(Manifest {
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            rows,
        })
    }

    /// Check that every referenced file exists and splits are room-disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashMap::new();
        for r in &self.rows {
            for f in [&r.room_file, &r.scene_a, &r.scene_b]
                .into_iter()
                .chain(r.srir_files.iter().flatten())
            {
                let p = self.root.join(f);
                if !p.exists() {
                    return Err(Error::Dataset(format!("missing file {p:?}")));
                }
            }
            if let Some(prev) = seen.insert(r.room_id.clone(), r.split.clone()) {
                if prev != r.split {
                    return Err(Error::Dataset(format!(
                        "room {} appears in splits {prev} and {}",
                        r.room_id, r.split
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth line SRIRs for evaluation rooms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalIndexRow {
    pub room_id: String,
    pub position_id: String,
    pub srir_file: String,
    pub source: [f64; 3],
    pub receiver: [f64; 3],
}

pub fn write_eval_index(path: &Path, rows: &[EvalIndexRow]) -> Result<()> {
    let mut out = String::from("room_id,position_id,srir_file,source,receiver\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},\"{}\",\"{}\"\n",
            r.room_id,
            r.position_id,
            r.srir_file,
            fmt_point(Vec3::from(r.source)),
            fmt_point(Vec3::from(r.receiver)),
        ));
    }
    crate::analysis::write_atomic(path, out.as_bytes())
}

pub fn load_eval_index(path: &Path) -> Result<Vec<EvalIndexRow>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Dataset(format!("{path:?}: {e}")))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Dataset(format!("{path:?}: {e}")))?;
        rows.push(EvalIndexRow {
            room_id: rec[0].to_string(),
            position_id: rec[1].to_string(),
            srir_file: rec[2].to_string(),
            source: parse_point(&rec[3])?.as_array(),
            receiver: parse_point(&rec[4])?.as_array(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub n_rooms: usize,
    /// Fractions by room: train, val, eval.
    pub splits: (f64, f64, f64),
    pub corpus: CorpusSource,
    pub seed: u64,
    pub preset: ScalePreset,
    pub profiles: Option<PathBuf>,
    /// Receiver-line positions per evaluation room.
    pub eval_positions: usize,
}

impl DatasetConfig {
    pub fn desk(root: PathBuf, n_rooms: usize, seed: u64) -> Self {
        DatasetConfig {
            root,
            n_rooms,
            splits: (0.75, 0.125, 0.125),
            corpus: CorpusSource::Synth { n_signals: 12 },
            seed,
            preset: ScalePreset::desk(),
            profiles: None,
            eval_positions: 15,
        }
    }
}

fn split_for(index: usize, n: usize, splits: (f64, f64, f64)) -> &'static str {
    let train_n = ((n as f64 * splits.0).round() as usize).max(1).min(n);
    let val_n = ((n as f64 * splits.1).round() as usize).min(n - train_n);
    if index < train_n {
        "train"
    } else if index < train_n + val_n {
        "val"
    } else {
        "eval"
    }
}

/// Generate the whole corpus: rooms, paired scenes, SRIRs, manifest, and
/// ground-truth line responses for evaluation rooms. Fully deterministic
/// per seed.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Manifest> {
    std::fs::create_dir_all(&cfg.root).map_err(|e| Error::io(&cfg.root, e))?;
    for sub in ["rooms", "scenes", "srirs", "eval"] {
        std::fs::create_dir_all(cfg.root.join(sub)).map_err(|e| Error::io(&cfg.root, e))?;
    }
    let profiles = match &cfg.profiles {
        Some(p) => Some(load_rt_profiles(p)?),
        None => None,
    };
    let corpus = corpus::resolve_corpus(&cfg.corpus, cfg.preset.fs, SCENE_SECONDS, cfg.seed)?;
    let fs_u32 = cfg.preset.fs.round() as u32;

    let mut rows = Vec::with_capacity(cfg.n_rooms);
    let mut eval_rows = Vec::new();
    for i in 0..cfg.n_rooms {
        let mut rng = crate::rng::substream_indexed(cfg.seed, "room", i as u64);
        let room_id = format!("room{i:04}");
        let profile = draw_rt_profile(profiles.as_deref(), &mut rng);
        let room = draw_room(&profile, &cfg.preset, &mut rng, 200)?;
        let pair = render_scene_pair(&room, &room_id, &corpus, &cfg.preset, &mut rng)?;

        let room_file = format!("rooms/{room_id}.json");
        crate::analysis::write_atomic(&cfg.root.join(&room_file), room.to_json()?.as_bytes())?;

        let mut srir_files: [Vec<String>; 2] = [Vec::new(), Vec::new()];
        let scene_files = ["a", "b"].map(|tag| format!("scenes/{room_id}_{tag}.wav"));
        for (si, scene) in pair.scenes.iter().enumerate() {
            crate::io::write_wav(
                &cfg.root.join(&scene_files[si]),
                &scene.audio.to_vec(),
                fs_u32,
            )?;
            for (k, srir) in scene.srirs.iter().enumerate() {
                let f = format!(
                    "srirs/{room_id}_{}_{k}.wav",
                    ["a", "b"][si]
                );
                crate::io::write_srir(&cfg.root.join(&f), srir)?;
                srir_files[si].push(f);
            }
        }
        let split = split_for(i, cfg.n_rooms, cfg.splits);

        if split == "eval" {
            // Materialize ground-truth SRIRs along a receiver line. Small
            // rooms reject many source placements, so fall back from the
            // scene sources to fresh interior draws before giving up.
            let mut candidates: Vec<Vec3> = pair
                .scenes
                .iter()
                .flat_map(|s| s.sources.iter().copied())
                .collect();
            for _ in 0..16 {
                if let Ok(p) = random_interior_point(&room, &mut rng, WALL_MARGIN) {
                    candidates.push(p);
                }
            }
            let mut found = None;
            for &source in &candidates {
                if let Ok(line) = line_positions(source, &room, cfg.eval_positions, 1.0) {
                    found = Some((source, line));
                    break;
                }
            }
            if found.is_none() {
                eprintln!(
                    "warning: {room_id}: no receiver line fits (volume {:.1} m³); skipping ground-truth line",
                    room.volume
                );
            }
            if let Some((source, line)) = found {
                std::fs::create_dir_all(cfg.root.join("eval").join(&room_id))
                    .map_err(|e| Error::io(&cfg.root, e))?;
                for (pi, &recv) in line.receivers.iter().enumerate() {
                    let array = array_geometry(recv, 0.02)?;
                    let sim = SimConfig {
                        fs: cfg.preset.fs,
                        duration: cfg.preset.srir_seconds,
                        max_order: cfg.preset.max_order,
                        tail: cfg.preset.tail,
                        seed: cfg.seed ^ (i as u64) << 20 ^ pi as u64,
                    };
                    let srir = simulate_srir(&room, source, &array, &sim)?;
                    let f = format!("eval/{room_id}/pos{pi:02}.wav");
                    crate::io::write_srir(&cfg.root.join(&f), &srir)?;
                    eval_rows.push(EvalIndexRow {
                        room_id: room_id.clone(),
                        position_id: format!("pos{pi:02}"),
                        srir_file: f,
                        source: source.as_array(),
                        receiver: recv.as_array(),
                    });
                }
            }
        }

        rows.push(ManifestRow {
            room_id,
            split: split.to_string(),
            room_file,
            scene_a: scene_files[0].clone(),
            scene_b: scene_files[1].clone(),
            srir_files,
            source_positions: [
                pair.scenes[0].sources.clone(),
                pair.scenes[1].sources.clone(),
            ],
            receiver_position: [pair.scenes[0].receiver, pair.scenes[1].receiver],
            seed: cfg.seed,
        });
    }
    let manifest = Manifest {
        root: cfg.root.clone(),
        rows,
    };
    manifest.save(&cfg.root.join("manifest.csv"))?;
    if !eval_rows.is_empty() {
        write_eval_index(&cfg.root.join("eval_index.csv"), &eval_rows)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::make_room;

    #[test]
    fn synthetic_profile_family() {
        let mut rng = crate::rng::substream(1, "prof");
        for _ in 0..20 {
            let p = synthetic_rt_profile(&mut rng);
            assert!(p.t60.iter().all(|&t| t > 0.05));
            // High-frequency roll-off: 4 kHz never exceeds 125 Hz band.
            assert!(p.t60[5] <= p.t60[0] + 1e-12);
        }
        // γ = −0.35 reference point: 4 kHz band = T_mid·4^−0.35.
        let t_mid = 1.0f64;
        let expect = t_mid * 4f64.powf(-0.35);
        assert!((expect - 0.6155).abs() < 1e-3);
    }

    #[test]
    fn profile_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.csv");
        std::fs::write(
            &path,
            "rt_125,rt_250,rt_500,rt_1000,rt_2000,rt_4000\n0.8,0.7,0.6,0.5,0.45,0.4\n",
        )
        .unwrap();
        let rows = load_rt_profiles(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].t60[3], 0.5);
        let mut rng = crate::rng::substream(0, "p");
        assert_eq!(draw_rt_profile(Some(&rows), &mut rng).t60, rows[0].t60);

        std::fs::write(&path, "rt_125,rt_250,rt_500,rt_1000,rt_2000,rt_4000\n0.8,oops,0.6,0.5,0.45,0.4\n").unwrap();
        let err = load_rt_profiles(&path).unwrap_err().to_string();
        assert!(err.contains(":2"), "error should carry the line number: {err}");
    }

    #[test]
    fn normalize_align_contract() {
        let fs = 8000.0;
        let n = 2000;
        let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for (ci, ch) in channels.iter_mut().enumerate() {
            ch[480] = 0.25 * (ci + 1) as f64;
            ch[700] = 0.05;
        }
        let srir = Srir {
            channels,
            fs,
            source: vec3(1.0, 0.0, 0.0),
            receiver: Vec3::ZERO,
            aligned: false,
            toa_seconds: 480.0 / fs,
        };
        let aligned = normalize_align(&srir, Variant::Proposed).unwrap();
        assert!((aligned.max_abs() - 1.0).abs() < 1e-12);
        assert!(aligned.aligned);
        assert_eq!(aligned.len(), n);
        // Direct peak at sample 0.
        assert!((aligned.channels[3][0] - 1.0).abs() < 1e-12);
        // Idempotent.
        let again = normalize_align(&aligned, Variant::Proposed).unwrap();
        for (a, b) in again.channels.iter().zip(aligned.channels.iter()) {
            assert_eq!(a, b);
        }

        let unaligned = normalize_align(&srir, Variant::WithToa).unwrap();
        assert!(!unaligned.aligned);
        assert!((unaligned.channels[3][480] - 1.0).abs() < 1e-12);
        assert!((unaligned.toa_seconds - 0.06).abs() < 1e-9);
    }

    #[test]
    fn line_geometry() {
        let room = make_room([10.0, 9.0, 3.0], 0.0, 1).unwrap();
        let source = vec3(5.0, 4.5, 1.5);
        let line = line_positions(source, &room, 15, 1.0).unwrap();
        assert_eq!(line.receivers.len(), 15);
        // Midpoint receiver exactly 1 m from the source.
        let mid = line.receivers[7];
        assert!((mid.dist(source) - 1.0).abs() < 1e-9);
        // Symmetric about the closest point.
        for k in 0..7 {
            let d1 = line.receivers[k].dist(source);
            let d2 = line.receivers[14 - k].dist(source);
            assert!((d1 - d2).abs() < 1e-9);
        }
        // End point at ~3 m offset: distance √(1+9).
        if !line.clipped {
            let end = line.receivers[14];
            assert!((end.dist(source) - 10f64.sqrt()).abs() < 1e-6);
        }
        // Too small a room: error.
        let small = make_room([2.0, 2.0, 2.5], 0.0, 1).unwrap();
        assert!(line_positions(vec3(1.0, 1.0, 1.2), &small, 15, 1.0).is_err());
    }

    #[test]
    fn scene_linearity_and_pair_contract() {
        let mut room = make_room([5.0, 4.0, 3.0], 0.0, 2).unwrap();
        room.set_uniform_absorption(&[0.4; NBANDS]);
        let preset = ScalePreset {
            max_order: 3,
            tail: false,
            ..ScalePreset::desk()
        };
        let corpus = corpus::synth_corpus(4, SCENE_SECONDS, preset.fs, 3);
        let mut rng = crate::rng::substream(4, "pair");
        let pair = render_scene_pair(&room, "r0", &corpus, &preset, &mut rng).unwrap();
        assert_eq!(pair.scenes[0].audio[0].len(), (SCENE_SECONDS * preset.fs) as usize);
        for scene in &pair.scenes {
            assert_eq!(scene.sources.len(), scene.srirs.len());
            assert!((1..=3).contains(&scene.sources.len()));
            let peak = scene
                .audio
                .iter()
                .flat_map(|c| c.iter())
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!((peak - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_impulse_signal_reproduces_srir() {
        // Convolving with a unit impulse gives back the SRIR (up to the
        // scene normalization).
        let mut room = make_room([5.0, 4.0, 3.0], 0.0, 5).unwrap();
        room.set_uniform_absorption(&[0.5; NBANDS]);
        let preset = ScalePreset {
            max_order: 2,
            tail: false,
            ..ScalePreset::desk()
        };
        let mut impulse = vec![0.0; (SCENE_SECONDS * preset.fs) as usize];
        impulse[0] = 1.0;
        let corpus = vec![impulse.clone(), impulse.clone(), impulse];
        let mut rng = crate::rng::substream(6, "imp");
        // Force a single source by retrying until n_sources == 1.
        let pair = loop {
            let p = render_scene_pair(&room, "r0", &corpus, &preset, &mut rng).unwrap();
            if p.scenes[0].sources.len() == 1 {
                break p;
            }
        };
        let scene = &pair.scenes[0];
        let srir = &scene.srirs[0];
        let l = srir.len();
        // Proportionality between scene audio and SRIR samples.
        let num: f64 = scene.audio[0][..l]
            .iter()
            .zip(&srir.channels[0])
            .map(|(a, b)| a * b)
            .sum();
        let den: f64 = srir.channels[0].iter().map(|v| v * v).sum();
        let gain = num / den;
        for (a, b) in scene.audio[0][..l].iter().zip(&srir.channels[0]) {
            assert!((a - gain * b).abs() < 1e-9 * gain.abs().max(1.0));
        }
    }

    #[test]
    fn build_dataset_writes_everything_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DatasetConfig::desk(dir.path().join("d1"), 4, 11);
        cfg.preset.max_order = 3; // keep the test quick
        cfg.splits = (0.5, 0.25, 0.25);
        let manifest = build_dataset(&cfg).unwrap();
        assert_eq!(manifest.rows.len(), 4);
        manifest.validate().unwrap();
        let splits: Vec<&str> = manifest.rows.iter().map(|r| r.split.as_str()).collect();
        assert!(splits.contains(&"train") && splits.contains(&"eval"));

        let loaded = Manifest::load(&dir.path().join("d1/manifest.csv")).unwrap();
        assert_eq!(loaded.rows.len(), 4);
        assert_eq!(loaded.rows[0], manifest.rows[0]);

        // Same seed elsewhere: byte-identical artifacts.
        let mut cfg2 = cfg.clone();
        cfg2.root = dir.path().join("d2");
        build_dataset(&cfg2).unwrap();
        for sub in ["manifest.csv", "scenes/room0000_a.wav", "rooms/room0000.json"] {
            let a = std::fs::read(dir.path().join("d1").join(sub)).unwrap();
            let b = std::fs::read(dir.path().join("d2").join(sub)).unwrap();
            assert_eq!(a, b, "{sub} differs between identical-seed runs");
        }
        // Eval split materialized ground-truth line responses.
        let idx = load_eval_index(&dir.path().join("d1/eval_index.csv")).unwrap();
        assert!(!idx.is_empty());
        assert_eq!(idx.len() % 15, 0);
    }
}
