//! Central-difference verification of analytic gradients. Runs in f64;
//! layers are built with seeded parameters and a fixed dropout mask so the
//! objective is a deterministic function of (input, params).

use super::spec::{build_layer, LayerCache, LayerInput, LayerSpec};
use super::{FwdCtx, Mode, Param, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// max |analytic − fd| / max(|analytic|, |fd|, 1e-12) over all inputs and
/// parameters (FiLM also checks its modulation inputs).
pub fn grad_check(spec: &LayerSpec, input: &Tensor<f64>, epsilon: f64, seed: u64) -> Result<f64> {
    let mut build_rng = crate::rng::substream(seed, "grad-check-build");
    let mut layer = build_layer::<f64>(spec, &mut build_rng)?;

    // FiLM modulation inputs, when applicable.
    let needs_mod = matches!(spec, LayerSpec::Film);
    let (b, c) = if needs_mod {
        (input.shape()[0], input.shape()[1])
    } else {
        (0, 0)
    };
    let mut mod_rng = crate::rng::substream(seed, "grad-check-mod");
    let gamma0 = Tensor::<f64>::randn(&[b.max(1), c.max(1)], 0.5, &mut mod_rng);
    let beta0 = Tensor::<f64>::randn(&[b.max(1), c.max(1)], 0.5, &mut mod_rng);

    let run = |layer: &mut super::spec::Layer<f64>,
               x: &Tensor<f64>,
               gamma: &Tensor<f64>,
               beta: &Tensor<f64>|
     -> Result<(Tensor<f64>, LayerCache<f64>)> {
        // Same RNG every evaluation: the dropout mask is part of the function.
        let mut rng = crate::rng::substream(seed, "grad-check-forward");
        let mut ctx = FwdCtx::new(Mode::Train, &mut rng);
        let inp = if needs_mod {
            LayerInput::Modulated {
                x: x.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
            }
        } else {
            LayerInput::One(x.clone())
        };
        layer.forward(inp, &mut ctx)
    };

    // Fixed random objective weights turn the output into a scalar.
    let (y0, cache) = run(&mut layer, input, &gamma0, &beta0)?;
    if !y0.all_finite() {
        return Err(Error::NonFinite("grad-check forward output".into()));
    }
    let mut obj_rng = crate::rng::substream(seed, "grad-check-objective");
    let obj = Tensor::<f64>::from_fn(y0.shape(), |_| obj_rng.gen_range(-1.0..1.0));
    let scalar = |y: &Tensor<f64>| -> f64 {
        y.data()
            .iter()
            .zip(obj.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };

    // Analytic gradients.
    super::zero_grads(&mut layer);
    let grads = layer.backward(&cache, &obj)?;

    let mut max_rel = 0.0f64;
    let mut track = |analytic: f64, fd: f64| {
        let denom = analytic.abs().max(fd.abs()).max(1e-12);
        max_rel = max_rel.max((analytic - fd).abs() / denom);
    };

    // Input gradient.
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + epsilon;
        let (yp, _) = run(&mut layer, &x, &gamma0, &beta0)?;
        x.data_mut()[i] = orig - epsilon;
        let (ym, _) = run(&mut layer, &x, &gamma0, &beta0)?;
        x.data_mut()[i] = orig;
        let fd = (scalar(&yp) - scalar(&ym)) / (2.0 * epsilon);
        track(grads.input.data()[i], fd);
    }

    // Modulation gradients (FiLM).
    if let Some((dgamma, dbeta)) = &grads.modulation {
        for is_gamma in [true, false] {
            let analytic = if is_gamma { dgamma } else { dbeta };
            let mut t = if is_gamma { gamma0.clone() } else { beta0.clone() };
            for i in 0..t.len() {
                let orig = t.data()[i];
                let mut eval = |v: f64, layer: &mut super::spec::Layer<f64>| -> Result<f64> {
                    t.data_mut()[i] = v;
                    let (g, bta) = if is_gamma {
                        (&t, &beta0)
                    } else {
                        (&gamma0, &t)
                    };
                    let (y, _) = run(layer, input, g, bta)?;
                    Ok(scalar(&y))
                };
                let fp = eval(orig + epsilon, &mut layer)?;
                let fm = eval(orig - epsilon, &mut layer)?;
                t.data_mut()[i] = orig;
                track(analytic.data()[i], (fp - fm) / (2.0 * epsilon));
            }
        }
    }

    // Parameter gradients: snapshot analytic grads, then FD one param
    // element at a time.
    let mut names = Vec::new();
    layer.visit("layer", &mut |name, p: &mut Param<f64>| {
        names.push((name, p.w.len()));
    });
    for (name, len) in names {
        for i in 0..len {
            let mut analytic = 0.0;
            let mut orig = 0.0;
            layer.visit("layer", &mut |n, p| {
                if n == name {
                    analytic = p.g.data()[i];
                    orig = p.w.data()[i];
                }
            });
            let set = |layer: &mut super::spec::Layer<f64>, v: f64| {
                layer.visit("layer", &mut |n, p| {
                    if n == name {
                        p.w.data_mut()[i] = v;
                    }
                });
            };
            set(&mut layer, orig + epsilon);
            let (yp, _) = run(&mut layer, input, &gamma0, &beta0)?;
            set(&mut layer, orig - epsilon);
            let (ym, _) = run(&mut layer, input, &gamma0, &beta0)?;
            set(&mut layer, orig);
            track(analytic, (scalar(&yp) - scalar(&ym)) / (2.0 * epsilon));
        }
    }

    Ok(max_rel)
}

/// Random input with entries bounded away from activation kinks.
pub fn kink_free_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = crate::rng::substream(seed, "grad-check-input");
    Tensor::from_fn(shape, |_| {
        let mag = rng.gen_range(0.1..1.5);
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    })
}
