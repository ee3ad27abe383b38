//! Joint video deblurring and 2x frame interpolation.
//!
//! The pipeline takes a low frame-rate video whose frames may or may not be
//! motion-blurred, encodes every frame into a latent tensor, fuses latent
//! channels across neighbouring frames with self- and cross-attention, and
//! decodes the fused latents back to pixels — one sharpened frame per input
//! plus one interpolated frame per adjacent input pair.
//!
//! The crate also ships the surrounding machinery needed to exercise the
//! model end to end without external datasets: a deterministic moving-shapes
//! clip generator, the sharp-frame-averaging blur model used to degrade those
//! clips, a compact trainer (Adam with decoupled weight decay, L1 +
//! perceptual objective) and PSNR/SSIM evaluation with ablation sweeps.

pub mod blur_synth;
pub mod error;
pub mod frame;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use frame::{Frame, VideoSequence};
pub use scalar::Scalar;
