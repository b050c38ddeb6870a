//! Declarative layer descriptions with a uniform forward/backward surface,
//! used by the gradient checker and anywhere a layer kind is data.

use super::layers::*;
use super::{FwdCtx, Mode, Param, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Conv1dDilated {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    },
    Linear {
        in_dim: usize,
        out_dim: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Gelu,
    MaxPoolTime,
    Dropout {
        rate: f64,
    },
    Film,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d { stride, .. } if stride < 1 => {
                Err(Error::Config(format!("conv2d stride {stride} < 1")))
            }
            LayerSpec::Conv1dDilated { dilation, .. } if dilation < 1 => {
                Err(Error::Config(format!("conv1d dilation {dilation} < 1")))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// A built layer of any kind. FiLM layers take their modulation as a second
/// input alongside the feature map.
pub enum Layer<T: Scalar> {
    Conv2d(Conv2d<T>),
    Conv1d(Conv1d<T>),
    Linear(Linear<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    Gelu,
    MaxPoolTime,
    Dropout(Dropout),
    Film,
}

pub enum LayerCache<T: Scalar> {
    Conv2d(Conv2dCache<T>),
    Conv1d(Conv1dCache<T>),
    Linear(LinearCache<T>),
    BatchNorm(BatchNormCache<T>),
    Relu(ReluCache<T>),
    Gelu(GeluCache<T>),
    MaxPoolTime(MaxPoolTimeCache),
    Dropout(DropoutCache<T>),
    Film(FilmCache<T>),
}

/// Input to a layer; FiLM carries its modulation pair.
pub enum LayerInput<T: Scalar> {
    One(Tensor<T>),
    Modulated {
        x: Tensor<T>,
        gamma: Tensor<T>,
        beta: Tensor<T>,
    },
}

/// Gradients a layer hands back to the caller.
pub struct LayerGrads<T: Scalar> {
    pub input: Tensor<T>,
    /// FiLM only: gradients for the modulation inputs.
    pub modulation: Option<(Tensor<T>, Tensor<T>)>,
}

pub fn build_layer<T: Scalar>(spec: &LayerSpec, rng: &mut Stream) -> Result<Layer<T>> {
    spec.validate()?;
    Ok(match *spec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
        } => Layer::Conv2d(Conv2d::new(in_ch, out_ch, kernel, stride, rng)),
        LayerSpec::Conv1dDilated {
            in_ch,
            out_ch,
            kernel,
            dilation,
        } => Layer::Conv1d(Conv1d::new(in_ch, out_ch, kernel, dilation, rng)?),
        LayerSpec::Linear { in_dim, out_dim } => Layer::Linear(Linear::new(in_dim, out_dim, rng)),
        LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(channels)),
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Gelu => Layer::Gelu,
        LayerSpec::MaxPoolTime => Layer::MaxPoolTime,
        LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
        LayerSpec::Film => Layer::Film,
    })
}

impl<T: Scalar> Layer<T> {
    pub fn forward(
        &mut self,
        input: LayerInput<T>,
        ctx: &mut FwdCtx,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        match (self, input) {
            (Layer::Conv2d(l), LayerInput::One(x)) => {
                let (y, c) = l.forward(x)?;
                Ok((y, LayerCache::Conv2d(c)))
            }
            (Layer::Conv1d(l), LayerInput::One(x)) => {
                let (y, c) = l.forward(x)?;
                Ok((y, LayerCache::Conv1d(c)))
            }
            (Layer::Linear(l), LayerInput::One(x)) => {
                let (y, c) = l.forward(x)?;
                Ok((y, LayerCache::Linear(c)))
            }
            (Layer::BatchNorm(l), LayerInput::One(x)) => {
                let (y, c) = l.forward(x, ctx.mode)?;
                Ok((y, LayerCache::BatchNorm(c)))
            }
            (Layer::Relu, LayerInput::One(x)) => {
                let (y, c) = relu(x);
                Ok((y, LayerCache::Relu(c)))
            }
            (Layer::Gelu, LayerInput::One(x)) => {
                let (y, c) = gelu(x);
                Ok((y, LayerCache::Gelu(c)))
            }
            (Layer::MaxPoolTime, LayerInput::One(x)) => {
                let (y, c) = maxpool_time(&x)?;
                Ok((y, LayerCache::MaxPoolTime(c)))
            }
            (Layer::Dropout(l), LayerInput::One(x)) => {
                let (y, c) = l.forward(x, ctx);
                Ok((y, LayerCache::Dropout(c)))
            }
            (Layer::Film, LayerInput::Modulated { x, gamma, beta }) => {
                let (y, c) = film(x, &gamma, &beta)?;
                Ok((y, LayerCache::Film(c)))
            }
            (Layer::Film, LayerInput::One(_)) => Err(Error::InvalidArg(
                "film layer needs a modulated input".into(),
            )),
            (_, LayerInput::Modulated { .. }) => Err(Error::InvalidArg(
                "modulated input only applies to film layers".into(),
            )),
        }
    }

    pub fn backward(&mut self, cache: &LayerCache<T>, gy: &Tensor<T>) -> Result<LayerGrads<T>> {
        let one = |input| LayerGrads {
            input,
            modulation: None,
        };
        match (self, cache) {
            (Layer::Conv2d(l), LayerCache::Conv2d(c)) => Ok(one(l.backward(c, gy)?)),
            (Layer::Conv1d(l), LayerCache::Conv1d(c)) => Ok(one(l.backward(c, gy)?)),
            (Layer::Linear(l), LayerCache::Linear(c)) => Ok(one(l.backward(c, gy)?)),
            (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) => Ok(one(l.backward(c, gy)?)),
            (Layer::Relu, LayerCache::Relu(c)) => Ok(one(relu_backward(c, gy))),
            (Layer::Gelu, LayerCache::Gelu(c)) => Ok(one(gelu_backward(c, gy))),
            (Layer::MaxPoolTime, LayerCache::MaxPoolTime(c)) => {
                Ok(one(maxpool_time_backward(c, gy)))
            }
            (Layer::Dropout(l), LayerCache::Dropout(c)) => Ok(one(l.backward(c, gy))),
            (Layer::Film, LayerCache::Film(c)) => {
                let (gx, dgamma, dbeta) = film_backward(c, gy)?;
                Ok(LayerGrads {
                    input: gx,
                    modulation: Some((dgamma, dbeta)),
                })
            }
            _ => Err(Error::InvalidArg(
                "backward called with a cache from a different layer kind".into(),
            )),
        }
    }
}

impl<T: Scalar> ParamSet<T> for Layer<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        match self {
            Layer::Conv2d(l) => l.visit(prefix, f),
            Layer::Conv1d(l) => l.visit(prefix, f),
            Layer::Linear(l) => l.visit(prefix, f),
            Layer::BatchNorm(l) => l.visit(prefix, f),
            _ => {}
        }
    }
}

/// Spec-level forward: builds nothing, runs one layer on one input.
pub fn layer_forward<T: Scalar>(
    layer: &mut Layer<T>,
    input: LayerInput<T>,
    mode: Mode,
    rng: &mut Stream,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let mut ctx = FwdCtx::new(mode, rng);
    let (y, cache) = layer.forward(input, &mut ctx)?;
    if !y.all_finite() {
        return Err(Error::NonFinite("layer forward output".into()));
    }
    Ok((y, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::Dropout { rate: 0.5 }.validate().is_ok());
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerSpec::Conv1dDilated {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            dilation: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mismatched_cache_is_an_error() {
        let mut rng = substream(0, "t");
        let mut a = build_layer::<f64>(&LayerSpec::Relu, &mut rng).unwrap();
        let mut b = build_layer::<f64>(&LayerSpec::Gelu, &mut rng).unwrap();
        let x = Tensor::filled(&[1, 4], 1.0);
        let (_, cache) = layer_forward(&mut a, LayerInput::One(x.clone()), Mode::Eval, &mut rng).unwrap();
        assert!(b.backward(&cache, &x).is_err());
    }
}
