//! Contrastive room encoder: stacked stride-2 residual convolutional
//! blocks collapse the frequency axis to 1, a temporal max-pool collapses
//! time, and a projection head feeds the NT-Xent loss. After training the
//! encoder is frozen and its pre-projection embedding h conditions the
//! generator.

use crate::ckpt::{checkpoint_from, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::layers::*;
use crate::nn::optim::{Adam, LrSchedule};
use crate::nn::{FwdCtx, Mode, Param, ParamSet};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub input_planes: usize,
    pub freq_bins: usize,
    pub block_count: usize,
    pub base_channels: usize,
    pub projection_hidden: usize,
    pub embedding_dim: usize,
    pub temperature: f64,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale default: paper topology (9 blocks, 512/128 STFT) at a
    /// quarter of the paper's width.
    pub fn desk() -> Self {
        EncoderConfig {
            input_planes: 8,
            freq_bins: 257,
            block_count: 9,
            base_channels: 32,
            projection_hidden: 64,
            embedding_dim: 32,
            temperature: 0.1,
            dropout: 0.1,
        }
    }

    /// Full-scale reference constants.
    pub fn paper() -> Self {
        EncoderConfig {
            input_planes: 8,
            freq_bins: 257,
            block_count: 9,
            base_channels: 128,
            projection_hidden: 256,
            embedding_dim: 128,
            temperature: 0.1,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_count < 1 {
            return Err(Error::Config("block_count must be >= 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        let mut f = self.freq_bins;
        for _ in 0..self.block_count {
            f = f.div_ceil(2);
        }
        if f != 1 {
            return Err(Error::Config(format!(
                "{} stride-2 blocks reduce {} frequency bins to {f}, not 1",
                self.block_count, self.freq_bins
            )));
        }
        Ok(())
    }
}

/// Downsampling residual block: two 3x3 convs with batchnorm and ReLU on
/// the main path, a stride-2 conv + batchnorm on the residual path.
pub struct ResBlock2d<T: Scalar> {
    conv1: Conv2d<T>,
    bn1: BatchNorm<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm<T>,
    skip_conv: Conv2d<T>,
    skip_bn: BatchNorm<T>,
}

pub struct ResBlock2dCache<T: Scalar> {
    c1: Conv2dCache<T>,
    b1: BatchNormCache<T>,
    r1: ReluCache<T>,
    c2: Conv2dCache<T>,
    b2: BatchNormCache<T>,
    cs: Conv2dCache<T>,
    bs: BatchNormCache<T>,
    r_out: ReluCache<T>,
}

impl<T: Scalar> ResBlock2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Stream) -> Self {
        ResBlock2d {
            conv1: Conv2d::new(in_ch, out_ch, 3, 2, rng),
            bn1: BatchNorm::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, rng),
            bn2: BatchNorm::new(out_ch),
            skip_conv: Conv2d::new(in_ch, out_ch, 3, 2, rng),
            skip_bn: BatchNorm::new(out_ch),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ResBlock2dCache<T>)> {
        let skip_in = x.clone();
        let (a, c1) = self.conv1.forward(x)?;
        let (a, b1) = self.bn1.forward(a, mode)?;
        let (a, r1) = relu(a);
        let (a, c2) = self.conv2.forward(a)?;
        let (main, b2) = self.bn2.forward(a, mode)?;
        let (s, cs) = self.skip_conv.forward(skip_in)?;
        let (skip, bs) = self.skip_bn.forward(s, mode)?;
        let mut sum = main;
        sum.add_assign(&skip)?;
        let (y, r_out) = relu(sum);
        Ok((
            y,
            ResBlock2dCache {
                c1,
                b1,
                r1,
                c2,
                b2,
                cs,
                bs,
                r_out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResBlock2dCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let g_sum = relu_backward(&cache.r_out, gy);
        let g = self.bn2.backward(&cache.b2, &g_sum)?;
        let g = self.conv2.backward(&cache.c2, &g)?;
        let g = relu_backward(&cache.r1, &g);
        let g = self.bn1.backward(&cache.b1, &g)?;
        let mut gx = self.conv1.backward(&cache.c1, &g)?;
        let g = self.skip_bn.backward(&cache.bs, &g_sum)?;
        let g_skip = self.skip_conv.backward(&cache.cs, &g)?;
        gx.add_assign(&g_skip)?;
        Ok(gx)
    }
}

impl<T: Scalar> ParamSet<T> for ResBlock2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
        self.skip_conv.visit(&format!("{prefix}.skip_conv"), f);
        self.skip_bn.visit(&format!("{prefix}.skip_bn"), f);
    }
}

pub struct EncoderModel<T: Scalar> {
    pub config: EncoderConfig,
    blocks: Vec<ResBlock2d<T>>,
    proj_dropout: Dropout,
    proj_fc1: Linear<T>,
    proj_fc2: Linear<T>,
}

pub struct EncoderCache<T: Scalar> {
    blocks: Vec<ResBlock2dCache<T>>,
    pool: MaxPoolTimeCache,
    pooled_shape: Vec<usize>,
}

pub struct ProjectionCache<T: Scalar> {
    drop: DropoutCache<T>,
    fc1: LinearCache<T>,
    r1: ReluCache<T>,
    fc2: LinearCache<T>,
    norm: L2NormCache<T>,
}

impl<T: Scalar> EncoderModel<T> {
    pub fn new(config: EncoderConfig, rng: &mut Stream) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.block_count);
        let mut in_ch = config.input_planes;
        for _ in 0..config.block_count {
            blocks.push(ResBlock2d::new(in_ch, config.base_channels, rng));
            in_ch = config.base_channels;
        }
        Ok(EncoderModel {
            proj_dropout: Dropout::new(config.dropout)?,
            proj_fc1: Linear::new(config.base_channels, config.projection_hidden, rng),
            proj_fc2: Linear::new(config.projection_hidden, config.embedding_dim, rng),
            config,
            blocks,
        })
    }

    /// Scene tensor batch (B, 8, t, f) -> room embeddings h (B, C).
    pub fn forward(
        &mut self,
        x: Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, EncoderCache<T>)> {
        if x.shape().len() != 4
            || x.shape()[1] != self.config.input_planes
            || x.shape()[3] != self.config.freq_bins
        {
            return Err(Error::shape(
                "encoder input",
                format!(
                    "(B, {}, t, {})",
                    self.config.input_planes, self.config.freq_bins
                ),
                format!("{:?}", x.shape()),
            ));
        }
        let mut cur = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (next, cache) = block.forward(cur, mode)?;
            caches.push(cache);
            cur = next;
        }
        let (b, c, t, f) = (
            cur.shape()[0],
            cur.shape()[1],
            cur.shape()[2],
            cur.shape()[3],
        );
        if f != 1 {
            return Err(Error::shape("encoder cascade", "frequency dim 1", f));
        }
        let pooled_shape = vec![b, c, t];
        let cur = cur.reshape(&[b, c, t])?;
        let (h, pool) = maxpool_time(&cur)?;
        if !h.all_finite() {
            return Err(Error::NonFinite("encoder embedding".into()));
        }
        Ok((
            h,
            EncoderCache {
                blocks: caches,
                pool,
                pooled_shape,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderCache<T>, gh: &Tensor<T>) -> Result<Tensor<T>> {
        let g = maxpool_time_backward(&cache.pool, gh);
        let (b, c, t) = (
            cache.pooled_shape[0],
            cache.pooled_shape[1],
            cache.pooled_shape[2],
        );
        let mut g = g.reshape(&[b, c, t, 1])?;
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            g = block.backward(bc, &g)?;
        }
        Ok(g)
    }

    /// Projection head: dropout -> linear -> ReLU -> linear -> L2 norm.
    pub fn project(
        &mut self,
        h: Tensor<T>,
        ctx: &mut FwdCtx,
    ) -> Result<(Tensor<T>, ProjectionCache<T>)> {
        let (a, drop) = self.proj_dropout.forward(h, ctx);
        let (a, fc1) = self.proj_fc1.forward(a)?;
        let (a, r1) = relu(a);
        let (a, fc2) = self.proj_fc2.forward(a)?;
        let (z, norm) = l2_normalize_rows(&a)?;
        Ok((
            z,
            ProjectionCache {
                drop,
                fc1,
                r1,
                fc2,
                norm,
            },
        ))
    }

    pub fn project_backward(
        &mut self,
        cache: &ProjectionCache<T>,
        gz: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g = l2_normalize_backward(&cache.norm, gz);
        let g = self.proj_fc2.backward(&cache.fc2, &g)?;
        let g = relu_backward(&cache.r1, &g);
        let g = self.proj_fc1.backward(&cache.fc1, &g)?;
        Ok(self.proj_dropout.backward(&cache.drop, &g))
    }
}

impl<T: Scalar> ParamSet<T> for EncoderModel<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        let p = if prefix.is_empty() { "enc" } else { prefix };
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&format!("{p}.block{i}"), f);
        }
        self.proj_fc1.visit(&format!("{p}.proj_fc1"), f);
        self.proj_fc2.visit(&format!("{p}.proj_fc2"), f);
    }
}

/// NT-Xent over 2N projected embeddings ordered as N adjacent positive
/// pairs: mean over all 2N anchors of -log(exp(s_ip/α) / Σ_{k≠i} exp(s_ik/α)).
pub fn nt_xent_loss<T: Scalar>(z: &Tensor<T>, temperature: f64) -> Result<T> {
    Ok(nt_xent_loss_grad(z, temperature)?.0)
}

/// Loss and dL/dz.
pub fn nt_xent_loss_grad<T: Scalar>(z: &Tensor<T>, temperature: f64) -> Result<(T, Tensor<T>)> {
    if z.shape().len() != 2 || z.shape()[0] % 2 != 0 || z.shape()[0] == 0 {
        return Err(Error::shape(
            "nt-xent batch",
            "even, positive row count (N positive pairs)",
            format!("{:?}", z.shape()),
        ));
    }
    let (rows, dim) = (z.shape()[0], z.shape()[1]);
    let alpha = temperature;
    let zd = z.data();
    let sim = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for k in 0..dim {
            s += zd[i * dim + k].as_f64() * zd[j * dim + k].as_f64();
        }
        s / alpha
    };
    // Row-stable softmax over k ≠ i, with the positive partner 2i ^ 1.
    let mut loss = 0.0;
    let mut g = vec![0.0f64; rows * rows]; // g[i][j] = softmax_ij − 1{j = p(i)}
    for i in 0..rows {
        let p = i ^ 1;
        let mut s_row = vec![0.0; rows];
        let mut max_s = f64::NEG_INFINITY;
        for j in 0..rows {
            if j == i {
                continue;
            }
            s_row[j] = sim(i, j);
            max_s = max_s.max(s_row[j]);
        }
        let mut denom = 0.0;
        for j in 0..rows {
            if j != i {
                denom += (s_row[j] - max_s).exp();
            }
        }
        loss += -(s_row[p] - max_s) + denom.ln();
        for j in 0..rows {
            if j == i {
                continue;
            }
            let soft = (s_row[j] - max_s).exp() / denom;
            g[i * rows + j] = soft - if j == p { 1.0 } else { 0.0 };
        }
    }
    let n = rows as f64;
    loss /= n;

    let mut grad = Tensor::<T>::zeros(z.shape());
    let scale = 1.0 / (n * alpha);
    for i in 0..rows {
        for j in 0..rows {
            if i == j {
                continue;
            }
            let w = (g[i * rows + j] + g[j * rows + i]) * scale;
            if w == 0.0 {
                continue;
            }
            for k in 0..dim {
                let idx = i * dim + k;
                let v = grad.data()[idx].as_f64() + w * zd[j * dim + k].as_f64();
                grad.data_mut()[idx] = T::of(v);
            }
        }
    }
    Ok((T::of(loss), grad))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_rooms: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_every_epochs: usize,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            epochs: 125,
            batch_rooms: 16,
            lr: 3e-4,
            lr_factor: 0.98,
            lr_every_epochs: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Stack scene pairs (room-major, pair-adjacent) into one (2B, 8, t, f)
/// batch tensor.
fn stack_pairs<T: Scalar>(pairs: &[&[Tensor<T>; 2]]) -> Result<Tensor<T>> {
    let first = &pairs[0][0];
    let (p, t, f) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let mut out = Tensor::zeros(&[2 * pairs.len(), p, t, f]);
    let one = p * t * f;
    for (r, pair) in pairs.iter().enumerate() {
        for (s, scene) in pair.iter().enumerate() {
            if scene.shape() != [p, t, f] {
                return Err(Error::shape(
                    "scene batch",
                    format!("{:?}", [p, t, f]),
                    format!("{:?}", scene.shape()),
                ));
            }
            out.data_mut()[(2 * r + s) * one..(2 * r + s + 1) * one]
                .copy_from_slice(scene.data());
        }
    }
    Ok(out)
}

/// Contrastive training over per-room scene pairs. Returns the per-epoch
/// log and leaves the model holding the weights with the lowest validation
/// loss.
pub fn train_encoder<T: Scalar>(
    model: &mut EncoderModel<T>,
    train_pairs: &[[Tensor<T>; 2]],
    val_pairs: &[[Tensor<T>; 2]],
    cfg: &EncoderTrainConfig,
) -> Result<Vec<TrainLogRow>> {
    if train_pairs.len() < cfg.batch_rooms {
        return Err(Error::Dataset(format!(
            "{} training rooms but batch needs {}",
            train_pairs.len(),
            cfg.batch_rooms
        )));
    }
    let schedule = LrSchedule {
        initial: cfg.lr,
        factor: cfg.lr_factor,
        every_n_epochs: cfg.lr_every_epochs,
    };
    let mut adam = Adam::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let temperature = model.config.temperature;

    for epoch in 0..cfg.epochs {
        let lr = schedule.at(epoch);
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut shuffle_rng = crate::rng::substream_indexed(cfg.seed, "enc-epoch", epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_rooms) {
            if chunk.len() < 2 {
                continue; // a single room has no negatives
            }
            let selected: Vec<&[Tensor<T>; 2]> =
                chunk.iter().map(|&i| &train_pairs[i]).collect();
            let x = stack_pairs(&selected)?;
            let mut rng =
                crate::rng::substream_indexed(cfg.seed, "enc-dropout", (epoch * 100_000 + batches) as u64);
            crate::nn::zero_grads(model);
            let (h, enc_cache) = model.forward(x, Mode::Train)?;
            let mut ctx = FwdCtx::new(Mode::Train, &mut rng);
            let (z, proj_cache) = model.project(h, &mut ctx)?;
            let (loss, gz) = nt_xent_loss_grad(&z, temperature)?;
            let gh = model.project_backward(&proj_cache, &gz)?;
            model.backward(&enc_cache, &gh)?;
            adam.step(lr, model)?;
            train_loss += loss.as_f64();
            batches += 1;
        }
        train_loss /= batches.max(1) as f64;

        let val_loss = encoder_eval_loss(model, val_pairs, cfg.batch_rooms, temperature)?;
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, checkpoint_from(model, serde_json::Value::Null)));
        }
        log.push(TrainLogRow {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    if let Some((_, ckpt)) = best {
        crate::ckpt::load_into(model, ckpt)?;
    }
    Ok(log)
}

/// Mean NT-Xent loss over pair batches in eval mode.
pub fn encoder_eval_loss<T: Scalar>(
    model: &mut EncoderModel<T>,
    pairs: &[[Tensor<T>; 2]],
    batch_rooms: usize,
    temperature: f64,
) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Dataset("need at least 2 rooms for evaluation".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut dummy = crate::rng::substream(0, "enc-eval");
    for chunk in (0..pairs.len()).collect::<Vec<_>>().chunks(batch_rooms) {
        if chunk.len() < 2 {
            continue;
        }
        let selected: Vec<&[Tensor<T>; 2]> = chunk.iter().map(|&i| &pairs[i]).collect();
        let x = stack_pairs(&selected)?;
        let (h, _) = model.forward(x, Mode::Eval)?;
        let mut ctx = FwdCtx::new(Mode::Eval, &mut dummy);
        let (z, _) = model.project(h, &mut ctx)?;
        total += nt_xent_loss(&z, temperature)?.as_f64();
        count += 1;
    }
    Ok(total / count.max(1) as f64)
}

/// Fraction of (anchor, same-room, other-room) triples where the same-room
/// embedding is closer in h-space.
pub fn triple_accuracy<T: Scalar>(
    model: &mut EncoderModel<T>,
    pairs: &[[Tensor<T>; 2]],
) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Dataset("need at least 2 rooms for triples".into()));
    }
    let mut hs = Vec::with_capacity(2 * n);
    for pair in pairs {
        for scene in pair {
            let x = stack_pairs(&[&[scene.clone(), scene.clone()]])?;
            let (h, _) = model.forward(x, Mode::Eval)?;
            let row: Vec<f64> = h.data()[..h.shape()[1]]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            hs.push(row);
        }
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    };
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in 0..n {
        for (a, p) in [(2 * r, 2 * r + 1), (2 * r + 1, 2 * r)] {
            for other in 0..n {
                if other == r {
                    continue;
                }
                for s in 0..2 {
                    let neg = 2 * other + s;
                    total += 1;
                    if dist(&hs[a], &hs[p]) < dist(&hs[a], &hs[neg]) {
                        hits += 1;
                    }
                }
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    /// Brute-force NT-Xent straight from the formula (oracle).
    pub(crate) fn nt_xent_brute<T: Scalar>(z: &Tensor<T>, alpha: f64) -> f64 {
        let (rows, dim) = (z.shape()[0], z.shape()[1]);
        let zd = z.data();
        let sim = |i: usize, j: usize| -> f64 {
            (0..dim)
                .map(|k| zd[i * dim + k].as_f64() * zd[j * dim + k].as_f64())
                .sum::<f64>()
                / alpha
        };
        let mut total = 0.0;
        for i in 0..rows {
            let p = i ^ 1;
            let mut denom = 0.0;
            for k in 0..rows {
                if k != i {
                    denom += sim(i, k).exp();
                }
            }
            total += -(sim(i, p).exp() / denom).ln();
        }
        total / rows as f64
    }

    fn random_unit_batch(rows: usize, dim: usize, seed: u64) -> Tensor<f64> {
        let mut rng = substream(seed, "ntxent-test");
        let raw = Tensor::<f64>::randn(&[rows, dim], 1.0, &mut rng);
        let (z, _) = l2_normalize_rows(&raw).unwrap();
        z
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let z = random_unit_batch(2, 8, 1);
        let (loss, grad) = nt_xent_loss_grad(&z, 0.1).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.max_abs() < 1e-12);
    }

    #[test]
    fn identical_batch_gives_log_2n_minus_1() {
        let mut z = Tensor::<f64>::zeros(&[8, 4]);
        for r in 0..8 {
            z.data_mut()[r * 4] = 1.0;
        }
        let loss = nt_xent_loss(&z, 0.1).unwrap();
        assert!((loss - (7.0f64).ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn matches_brute_force_on_random_batches() {
        for seed in 0..10u64 {
            let n = 2 + (seed as usize % 7);
            let z = random_unit_batch(2 * n, 16, seed);
            let loss = nt_xent_loss(&z, 0.1).unwrap();
            let brute = nt_xent_brute(&z, 0.1);
            assert!((loss - brute).abs() < 1e-6, "seed {seed}: {loss} vs {brute}");
        }
    }

    #[test]
    fn loss_invariant_under_pair_permutation() {
        let z = random_unit_batch(12, 8, 3);
        let base = nt_xent_loss(&z, 0.1).unwrap();
        // Swap pair blocks (rooms) 0 and 2.
        let dim = 8;
        let mut permuted = z.clone();
        for s in 0..2 {
            for k in 0..dim {
                let a = (0 + s) * dim + k;
                let b = (4 + s) * dim + k;
                permuted.data_mut().swap(a, b);
            }
        }
        let perm = nt_xent_loss(&permuted, 0.1).unwrap();
        assert!((base - perm).abs() < 1e-12);
    }

    #[test]
    fn odd_batch_is_rejected() {
        let z = random_unit_batch(4, 8, 4);
        let odd = Tensor::<f64>::from_vec(&[3, 8], z.data()[..24].to_vec()).unwrap();
        assert!(nt_xent_loss(&odd, 0.1).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let z = random_unit_batch(6, 5, 5);
        let (_, grad) = nt_xent_loss_grad(&z, 0.1).unwrap();
        let eps = 1e-6;
        let mut zp = z.clone();
        for i in 0..z.len() {
            let orig = zp.data()[i];
            zp.data_mut()[i] = orig + eps;
            let lp = nt_xent_loss(&zp, 0.1).unwrap();
            zp.data_mut()[i] = orig - eps;
            let lm = nt_xent_loss(&zp, 0.1).unwrap();
            zp.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (fd - grad.data()[i]).abs() < 1e-6,
                "element {i}: {fd} vs {}",
                grad.data()[i]
            );
        }
    }

    fn toy_config() -> EncoderConfig {
        EncoderConfig {
            input_planes: 2,
            freq_bins: 4,
            block_count: 2,
            base_channels: 4,
            projection_hidden: 8,
            embedding_dim: 4,
            temperature: 0.1,
            dropout: 0.1,
        }
    }

    #[test]
    fn config_validation_catches_bad_cascade() {
        let mut c = EncoderConfig::desk();
        assert!(c.validate().is_ok());
        c.block_count = 6;
        assert!(c.validate().is_err());
    }

    #[test]
    fn projection_is_unit_norm_and_eval_deterministic() {
        let mut rng = substream(7, "enc");
        let mut model = EncoderModel::<f64>::new(toy_config(), &mut rng).unwrap();
        let h = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut r1 = substream(1, "a");
        let mut ctx = FwdCtx::new(Mode::Eval, &mut r1);
        let (z1, _) = model.project(h.clone(), &mut ctx).unwrap();
        let mut r2 = substream(2, "b");
        let mut ctx = FwdCtx::new(Mode::Eval, &mut r2);
        let (z2, _) = model.project(h, &mut ctx).unwrap();
        assert_eq!(z1.data(), z2.data());
        for b in 0..3 {
            let n: f64 = z1.data()[b * 4..(b + 1) * 4].iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn projection_scale_invariant_without_bias() {
        let mut rng = substream(8, "enc");
        let mut model = EncoderModel::<f64>::new(toy_config(), &mut rng).unwrap();
        model.proj_fc1.bias.w.fill(0.0);
        model.proj_fc2.bias.w.fill(0.0);
        let h = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let scaled = h.map(|v| v * 10.0);
        let mut r = substream(1, "a");
        let mut ctx = FwdCtx::new(Mode::Eval, &mut r);
        let (z1, _) = model.project(h, &mut ctx).unwrap();
        let mut ctx = FwdCtx::new(Mode::Eval, &mut r);
        let (z2, _) = model.project(scaled, &mut ctx).unwrap();
        for (a, b) in z1.data().iter().zip(z2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_shape_and_zero_input_determinism() {
        let mut rng = substream(9, "enc");
        let mut model = EncoderModel::<f64>::new(toy_config(), &mut rng).unwrap();
        let x = Tensor::zeros(&[2, 2, 6, 4]);
        let (h1, _) = model.forward(x.clone(), Mode::Eval).unwrap();
        let (h2, _) = model.forward(x, Mode::Eval).unwrap();
        assert_eq!(h1.shape(), &[2, 4]);
        assert_eq!(h1.data(), h2.data());
    }

    #[test]
    fn stride_aligned_time_shift_preserves_h() {
        // Single active frame; shifting it by the stride moves the conv
        // output one step without changing its values, and the temporal
        // max-pool erases the position.
        let cfg = EncoderConfig {
            input_planes: 1,
            freq_bins: 2,
            block_count: 1,
            base_channels: 3,
            projection_hidden: 4,
            embedding_dim: 3,
            temperature: 0.1,
            dropout: 0.0,
        };
        let mut rng = substream(10, "enc");
        let mut model = EncoderModel::<f64>::new(cfg, &mut rng).unwrap();
        let t = 16;
        let mut a = Tensor::<f64>::zeros(&[1, 1, t, 2]);
        let mut b = Tensor::<f64>::zeros(&[1, 1, t, 2]);
        for f in 0..2 {
            let idx_a = a.idx4(0, 0, 6, f);
            a.data_mut()[idx_a] = 1.0 + f as f64;
            let idx_b = b.idx4(0, 0, 8, f);
            b.data_mut()[idx_b] = 1.0 + f as f64;
        }
        let (ha, _) = model.forward(a, Mode::Eval).unwrap();
        let (hb, _) = model.forward(b, Mode::Eval).unwrap();
        for (x, y) in ha.data().iter().zip(hb.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn end_to_end_gradient_check_tiny_encoder() {
        // Full pipeline: encoder blocks -> maxpool -> projection -> NT-Xent.
        let cfg = toy_config();
        let mut rng = substream(11, "enc");
        let mut model = EncoderModel::<f64>::new(cfg, &mut rng).unwrap();
        let x0 = crate::nn::gradcheck::kink_free_input(&[4, 2, 5, 4], 12);

        let eval_loss = |model: &mut EncoderModel<f64>, x: &Tensor<f64>| -> f64 {
            let (h, _) = model.forward(x.clone(), Mode::Train).unwrap();
            let mut rng = substream(99, "drop");
            let mut ctx = FwdCtx::new(Mode::Train, &mut rng);
            let (z, _) = model.project(h, &mut ctx).unwrap();
            nt_xent_loss(&z, 0.1).unwrap()
        };

        crate::nn::zero_grads(&mut model);
        let (h, enc_cache) = model.forward(x0.clone(), Mode::Train).unwrap();
        let mut rng99 = substream(99, "drop");
        let mut ctx = FwdCtx::new(Mode::Train, &mut rng99);
        let (z, proj_cache) = model.project(h, &mut ctx).unwrap();
        let (_, gz) = nt_xent_loss_grad(&z, 0.1).unwrap();
        let gh = model.project_backward(&proj_cache, &gz).unwrap();
        model.backward(&enc_cache, &gh).unwrap();

        // Spot-check a sample of parameters by finite differences.
        let eps = 1e-5;
        let mut names = Vec::new();
        model.visit("enc", &mut |n, p: &mut Param<f64>| names.push((n, p.w.len())));
        let mut max_rel = 0.0f64;
        for (ni, (name, len)) in names.iter().enumerate() {
            if ni % 3 != 0 {
                continue;
            }
            for i in (0..*len).step_by((len / 4).max(1)) {
                let mut analytic = 0.0;
                let mut orig = 0.0;
                model.visit("enc", &mut |n, p| {
                    if &n == name {
                        analytic = p.g.data()[i];
                        orig = p.w.data()[i];
                    }
                });
                model.visit("enc", &mut |n, p| {
                    if &n == name {
                        p.w.data_mut()[i] = orig + eps;
                    }
                });
                let lp = eval_loss(&mut model, &x0);
                model.visit("enc", &mut |n, p| {
                    if &n == name {
                        p.w.data_mut()[i] = orig - eps;
                    }
                });
                let lm = eval_loss(&mut model, &x0);
                model.visit("enc", &mut |n, p| {
                    if &n == name {
                        p.w.data_mut()[i] = orig;
                    }
                });
                let fd = (lp - lm) / (2.0 * eps);
                // Floor sits above central-difference roundoff so that
                // exactly-zero gradients (e.g. conv bias absorbed by the
                // following batchnorm) do not register as spurious error.
                let denom = analytic.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max((analytic - fd).abs() / denom);
            }
        }
        assert!(max_rel < 1e-3, "max rel err {max_rel}");
    }
}
