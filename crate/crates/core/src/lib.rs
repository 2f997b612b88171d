//! Joint learning of sparse ultrasound transducer selection and image
//! reconstruction.
//!
//! The crate is organised as a small differentiable pipeline:
//!
//! * [`autodiff`] is a reverse-mode tape with the primitives the pipeline needs.
//! * [`probe`], [`psf`] and [`forward`] model the probe, synthesize the complex
//!   point-spread function for a given set of element weights and blur scatterer
//!   maps with it by FFT circular convolution.
//! * [`mask`] turns learnable logits into a hard `k`-of-`N_e` element selection
//!   with a straight-through gradient.
//! * [`recon`] holds the unrolled ISTA deconvolution and the residual CNN head.
//! * [`losses`], [`train`] and [`evalx`] implement the objective, the Adam
//!   training loop and the baseline comparison table.
//! * [`data`], [`ckpt`] and [`config`] cover IDX datasets, checkpoints and run
//!   configuration files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod ckpt;
pub mod config;
pub mod data;
pub mod error;
pub mod evalx;
pub mod exec;
pub mod forward;
pub mod imaging;
pub mod losses;
pub mod mask;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod psf;
pub mod real;
pub mod recon;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
