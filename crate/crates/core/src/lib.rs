//! Mask-to-image translation with a pix2pix-style conditional GAN.
//!
//! The crate carries its own small tensor and reverse-mode autodiff layer
//! ([`tensor`], [`autodiff`]), the U-Net generator and PatchGAN
//! discriminator ([`nn`]), the adversarial objective ([`loss`]), Adam and the
//! alternating training loop ([`optim`], [`train`]), evaluation metrics
//! ([`metrics`]), and the raster/patch data pipeline ([`data`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
