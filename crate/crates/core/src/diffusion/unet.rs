//! Time-domain U-Net: encoder blocks (FiLM, dilated conv stack with GeLU
//! and residual connections, ×2 downsample), a bottleneck block, and
//! decoder blocks (×2 nearest upsample, skip concatenation, residual
//! block). Encoder/bottleneck FiLM and decoder FiLM take separate
//! conditioning vectors.

use super::UNetConfig;
use crate::error::{Error, Result};
use crate::nn::layers::*;
use crate::nn::{Param, ParamSet};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// FiLM-conditioned dilated residual stack.
pub struct ResBlock1d<T: Scalar> {
    in_conv: Option<Conv1d<T>>,
    film_proj: Linear<T>,
    convs: Vec<Conv1d<T>>,
    out_ch: usize,
}

pub struct ResBlock1dCache<T: Scalar> {
    in_conv: Option<Conv1dCache<T>>,
    /// The conditioning vector this block consumed (for wiring checks).
    pub cond: Tensor<T>,
    film_proj: LinearCache<T>,
    film: FilmCache<T>,
    stages: Vec<(GeluCache<T>, Conv1dCache<T>)>,
}

impl<T: Scalar> ResBlock1d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        cond_dim: usize,
        dilation_stack: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        let in_conv = if in_ch != out_ch {
            Some(Conv1d::new(in_ch, out_ch, 1, 1, rng)?)
        } else {
            None
        };
        // Zero-init projection: FiLM starts as the identity map.
        let film_proj = Linear::new(cond_dim, 2 * out_ch, rng).zero_init();
        let mut convs = Vec::with_capacity(dilation_stack);
        for j in 0..dilation_stack {
            convs.push(Conv1d::new(out_ch, out_ch, 3, 1 << j, rng)?);
        }
        Ok(ResBlock1d {
            in_conv,
            film_proj,
            convs,
            out_ch,
        })
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.convs.iter().map(|c| c.dilation).collect()
    }

    pub fn forward(
        &self,
        x: Tensor<T>,
        cond: &Tensor<T>,
    ) -> Result<(Tensor<T>, ResBlock1dCache<T>)> {
        let (x, in_cache) = match &self.in_conv {
            Some(conv) => {
                let (y, c) = conv.forward(x)?;
                (y, Some(c))
            }
            None => (x, None),
        };
        let (gb, film_proj_cache) = self.film_proj.forward(cond.clone())?;
        let (gamma, beta) = split_pairs(&gb, self.out_ch);
        let (mut y, film_cache) = film(x, &gamma, &beta)?;
        let mut stages = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (a, gcache) = gelu(y.clone());
            let (r, ccache) = conv.forward(a)?;
            y.add_assign(&r)?;
            stages.push((gcache, ccache));
        }
        Ok((
            y,
            ResBlock1dCache {
                in_conv: in_cache,
                cond: cond.clone(),
                film_proj: film_proj_cache,
                film: film_cache,
                stages,
            },
        ))
    }

    /// Returns (input grad, conditioning grad).
    pub fn backward(
        &mut self,
        cache: &ResBlock1dCache<T>,
        gy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = gy.clone();
        for (conv, (gcache, ccache)) in self.convs.iter_mut().zip(cache.stages.iter()).rev() {
            let ga = conv.backward(ccache, &g)?;
            let gpre = gelu_backward(gcache, &ga);
            g.add_assign(&gpre)?;
        }
        let (gx, dgamma, dbeta) = film_backward(&cache.film, &g)?;
        let gb = merge_pairs(&dgamma, &dbeta);
        let gcond = self.film_proj.backward(&cache.film_proj, &gb)?;
        let gx = match (&mut self.in_conv, &cache.in_conv) {
            (Some(conv), Some(c)) => conv.backward(c, &gx)?,
            _ => gx,
        };
        Ok((gx, gcond))
    }
}

/// (B, 2C) -> gamma (B, C), beta (B, C).
fn split_pairs<T: Scalar>(gb: &Tensor<T>, c: usize) -> (Tensor<T>, Tensor<T>) {
    let b = gb.shape()[0];
    let mut gamma = Tensor::zeros(&[b, c]);
    let mut beta = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        gamma.data_mut()[bi * c..(bi + 1) * c]
            .copy_from_slice(&gb.data()[bi * 2 * c..bi * 2 * c + c]);
        beta.data_mut()[bi * c..(bi + 1) * c]
            .copy_from_slice(&gb.data()[bi * 2 * c + c..(bi + 1) * 2 * c]);
    }
    (gamma, beta)
}

fn merge_pairs<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
    let (b, c) = (gamma.shape()[0], gamma.shape()[1]);
    let mut gb = Tensor::zeros(&[b, 2 * c]);
    for bi in 0..b {
        gb.data_mut()[bi * 2 * c..bi * 2 * c + c]
            .copy_from_slice(&gamma.data()[bi * c..(bi + 1) * c]);
        gb.data_mut()[bi * 2 * c + c..(bi + 1) * 2 * c]
            .copy_from_slice(&beta.data()[bi * c..(bi + 1) * c]);
    }
    gb
}

impl<T: Scalar> ParamSet<T> for ResBlock1d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        if let Some(conv) = &mut self.in_conv {
            conv.visit(&format!("{prefix}.in_conv"), f);
        }
        self.film_proj.visit(&format!("{prefix}.film_proj"), f);
        for (j, conv) in self.convs.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}.conv{j}"), f);
        }
    }
}

pub struct UNet1d<T: Scalar> {
    pub cfg: UNetConfig,
    stem: Conv1d<T>,
    enc_blocks: Vec<ResBlock1d<T>>,
    bottleneck: ResBlock1d<T>,
    dec_reduce: Vec<Conv1d<T>>,
    dec_blocks: Vec<ResBlock1d<T>>,
    head: Conv1d<T>,
}

pub struct UNetCache<T: Scalar> {
    stem: Conv1dCache<T>,
    enc: Vec<ResBlock1dCache<T>>,
    bottleneck: ResBlock1dCache<T>,
    dec_reduce: Vec<Conv1dCache<T>>,
    dec: Vec<ResBlock1dCache<T>>,
    head: Conv1dCache<T>,
}

impl<T: Scalar> UNetCache<T> {
    /// (block name, conditioning tensor it received), for wiring checks.
    pub fn cond_trace(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (d, c) in self.enc.iter().enumerate() {
            out.push((format!("enc{d}"), &c.cond));
        }
        out.push(("bottleneck".to_string(), &self.bottleneck.cond));
        for (d, c) in self.dec.iter().enumerate() {
            out.push((format!("dec{d}"), &c.cond));
        }
        out
    }
}

impl<T: Scalar> UNet1d<T> {
    pub fn new(
        cfg: UNetConfig,
        in_channels: usize,
        enc_cond_dim: usize,
        dec_cond_dim: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        let c = cfg.base_channels;
        let stem = Conv1d::new(in_channels, c, 3, 1, rng)?;
        let mut enc_blocks = Vec::with_capacity(cfg.depth);
        let mut dec_reduce = Vec::with_capacity(cfg.depth);
        let mut dec_blocks = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            enc_blocks.push(ResBlock1d::new(c, c, enc_cond_dim, cfg.dilation_stack, rng)?);
            dec_reduce.push(Conv1d::new(2 * c, c, 1, 1, rng)?);
            dec_blocks.push(ResBlock1d::new(c, c, dec_cond_dim, cfg.dilation_stack, rng)?);
        }
        let bottleneck = ResBlock1d::new(c, c, enc_cond_dim, cfg.dilation_stack, rng)?;
        let head = Conv1d::new(c, in_channels, 3, 1, rng)?.zero_init();
        Ok(UNet1d {
            cfg,
            stem,
            enc_blocks,
            bottleneck,
            dec_reduce,
            dec_blocks,
            head,
        })
    }

    pub fn forward(
        &self,
        x: Tensor<T>,
        enc_cond: &Tensor<T>,
        dec_cond: &Tensor<T>,
    ) -> Result<(Tensor<T>, UNetCache<T>)> {
        let l = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("unet input", "(B, C, L)", "scalar"))?;
        let block = 1usize << self.cfg.depth;
        if l % block != 0 {
            return Err(Error::shape(
                "unet input length",
                format!("multiple of {block} (pad the time axis)"),
                l,
            ));
        }
        let (mut x, stem_cache) = self.stem.forward(x)?;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut enc_caches = Vec::with_capacity(self.cfg.depth);
        for blockm in &self.enc_blocks {
            let (y, cache) = blockm.forward(x, enc_cond)?;
            skips.push(y.clone());
            enc_caches.push(cache);
            x = avgpool_half(&y)?;
        }
        let (x, bneck_cache) = self.bottleneck.forward(x, enc_cond)?;
        let mut x = x;
        let mut dec_caches: Vec<Option<ResBlock1dCache<T>>> =
            (0..self.cfg.depth).map(|_| None).collect();
        let mut reduce_caches: Vec<Option<Conv1dCache<T>>> =
            (0..self.cfg.depth).map(|_| None).collect();
        for d in (0..self.cfg.depth).rev() {
            let up = upsample2(&x);
            let cat = concat_channels(&up, &skips[d])?;
            let (y, rc) = self.dec_reduce[d].forward(cat)?;
            let (y, dc) = self.dec_blocks[d].forward(y, dec_cond)?;
            reduce_caches[d] = Some(rc);
            dec_caches[d] = Some(dc);
            x = y;
        }
        let (y, head_cache) = self.head.forward(x)?;
        Ok((
            y,
            UNetCache {
                stem: stem_cache,
                enc: enc_caches,
                bottleneck: bneck_cache,
                dec_reduce: reduce_caches.into_iter().map(|c| c.unwrap()).collect(),
                dec: dec_caches.into_iter().map(|c| c.unwrap()).collect(),
                head: head_cache,
            },
        ))
    }

    /// Returns (input grad, enc_cond grad, dec_cond grad).
    pub fn backward(
        &mut self,
        cache: &UNetCache<T>,
        gy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let c = self.cfg.base_channels;
        let mut g = self.head.backward(&cache.head, gy)?;
        let mut genc_cond: Option<Tensor<T>> = None;
        let mut gdec_cond: Option<Tensor<T>> = None;
        let acc = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| -> Result<()> {
            match slot {
                None => *slot = Some(g),
                Some(t) => t.add_assign(&g)?,
            }
            Ok(())
        };

        // Decoder ran d = depth-1 .. 0; undo in reverse order d = 0 .. depth-1.
        let mut skip_grads: Vec<Option<Tensor<T>>> =
            (0..self.cfg.depth).map(|_| None).collect();
        for d in 0..self.cfg.depth {
            let (gx, gcond) = self.dec_blocks[d].backward(&cache.dec[d], &g)?;
            acc(&mut gdec_cond, gcond)?;
            let gcat = self.dec_reduce[d].backward(&cache.dec_reduce[d], &gx)?;
            let (gup, gskip) = split_channels(&gcat, c);
            skip_grads[d] = Some(gskip);
            g = upsample2_backward(&gup);
        }
        let (mut g, gcond) = self.bottleneck.backward(&cache.bottleneck, &g)?;
        acc(&mut genc_cond, gcond)?;
        for d in (0..self.cfg.depth).rev() {
            let mut gy_block = avgpool_half_backward(&g);
            gy_block.add_assign(skip_grads[d].as_ref().unwrap())?;
            let (gx, gcond) = self.enc_blocks[d].backward(&cache.enc[d], &gy_block)?;
            acc(&mut genc_cond, gcond)?;
            g = gx;
        }
        let gin = self.stem.backward(&cache.stem, &g)?;
        Ok((gin, genc_cond.unwrap(), gdec_cond.unwrap()))
    }

    pub fn block_dilations(&self) -> Vec<usize> {
        self.bottleneck.dilations()
    }
}

impl<T: Scalar> ParamSet<T> for UNet1d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        let p = if prefix.is_empty() { "unet" } else { prefix };
        self.stem.visit(&format!("{p}.stem"), f);
        for (d, b) in self.enc_blocks.iter_mut().enumerate() {
            b.visit(&format!("{p}.enc{d}"), f);
        }
        self.bottleneck.visit(&format!("{p}.bottleneck"), f);
        for (d, conv) in self.dec_reduce.iter_mut().enumerate() {
            conv.visit(&format!("{p}.dec{d}.reduce"), f);
        }
        for (d, b) in self.dec_blocks.iter_mut().enumerate() {
            b.visit(&format!("{p}.dec{d}.block"), f);
        }
        self.head.visit(&format!("{p}.head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn small_cfg() -> UNetConfig {
        UNetConfig {
            depth: 4,
            base_channels: 8,
            dilation_stack: 3,
        }
    }

    #[test]
    fn shapes_and_internal_lengths() {
        let mut rng = substream(0, "unet");
        let net = UNet1d::<f64>::new(small_cfg(), 4, 16, 16, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 4, 1024], 1.0, &mut rng);
        let enc = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let dec = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let (y, cache) = net.forward(x, &enc, &dec).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1024]);
        // Internal lengths 1024, 512, 256, 128, bottleneck 64: the block at
        // depth d sees L / 2^d.
        for (d, c) in cache.enc.iter().enumerate() {
            assert_eq!(c.film.x_len(), 1024 >> d, "enc{d}");
        }
        assert_eq!(cache.bottleneck.film.x_len(), 64);
    }

    #[test]
    fn indivisible_length_mentions_padding() {
        let mut rng = substream(1, "unet");
        let net = UNet1d::<f64>::new(small_cfg(), 4, 16, 16, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 4, 1000], 1.0, &mut rng);
        let enc = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let err = match net.forward(x, &enc, &enc.clone()) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected length error"),
        };
        assert!(err.contains("pad"), "{err}");
    }

    #[test]
    fn zero_init_head_gives_zero_output() {
        let mut rng = substream(2, "unet");
        let net = UNet1d::<f64>::new(small_cfg(), 4, 16, 16, &mut rng).unwrap();
        let x = Tensor::randn(&[2, 4, 64], 1.0, &mut rng);
        let enc = Tensor::randn(&[2, 16], 1.0, &mut rng);
        let dec = Tensor::randn(&[2, 16], 1.0, &mut rng);
        let (y, _) = net.forward(x, &enc, &dec).unwrap();
        assert!(y.max_abs() == 0.0);
    }

    #[test]
    fn dilations_are_exponential() {
        let mut rng = substream(3, "unet");
        let net = UNet1d::<f64>::new(small_cfg(), 4, 16, 16, &mut rng).unwrap();
        assert_eq!(net.block_dilations(), vec![1, 2, 4]);
    }

    #[test]
    fn cond_trace_reports_every_block() {
        let mut rng = substream(4, "unet");
        let net = UNet1d::<f64>::new(small_cfg(), 4, 16, 16, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 4, 64], 1.0, &mut rng);
        let enc = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let dec = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let (_, cache) = net.forward(x, &enc, &dec).unwrap();
        let trace = cache.cond_trace();
        assert_eq!(trace.len(), 4 + 1 + 4);
        for (name, cond) in &trace {
            let expect = if name.starts_with("dec") { &dec } else { &enc };
            assert_eq!(cond.data(), expect.data(), "{name}");
        }
    }

    #[test]
    fn backward_produces_cond_grads() {
        let mut rng = substream(5, "unet");
        let mut net = UNet1d::<f64>::new(
            UNetConfig {
                depth: 2,
                base_channels: 4,
                dilation_stack: 2,
            },
            4,
            6,
            6,
            &mut rng,
        )
        .unwrap();
        // Non-zero head so gradients actually flow.
        net.head.weight.w = Tensor::randn(&[4, 4, 3], 0.3, &mut rng);
        let x = Tensor::randn(&[2, 4, 16], 1.0, &mut rng);
        let enc = Tensor::randn(&[2, 6], 1.0, &mut rng);
        let dec = Tensor::randn(&[2, 6], 1.0, &mut rng);
        let (y, cache) = net.forward(x, &enc, &dec).unwrap();
        let gy = Tensor::filled(y.shape(), 1.0);
        let (gin, genc, gdec) = net.backward(&cache, &gy).unwrap();
        assert_eq!(gin.shape(), &[2, 4, 16]);
        assert_eq!(genc.shape(), &[2, 6]);
        assert_eq!(gdec.shape(), &[2, 6]);
    }
}
