//! Desk-scale workbench for blind spatial room impulse response (SRIR)
//! generation: simulate tetrahedral-array SRIRs in perturbed hexahedron
//! rooms, learn room embeddings with a contrastive encoder, generate
//! responses at new source/receiver positions with a conditional diffusion
//! model, and score results with room-acoustic metrics (RT, DRR, DoA).
//!
//! Numeric kernels are generic over the scalar type: `f32` for training and
//! inference, `f64` for gradient checks and measurement-grade analysis.

pub mod analysis;
pub mod ckpt;
pub mod dataset;
pub mod diffusion;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod features;
pub mod geom;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod room;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Production tensor (training and inference).
pub type Tensor32 = tensor::Tensor<f32>;
/// Verification tensor (gradient checks).
pub type Tensor64 = tensor::Tensor<f64>;
