//! Reverse-mode differentiation over dense real tensors.
//!
//! A [`Graph`] owns node values and a tape of recorded operations. Every
//! operation whose inputs require gradients is recorded together with a
//! backward closure implementing its exact adjoint; [`Graph::backward`]
//! replays the tape in reverse. Complex quantities are carried as a pair of
//! real nodes ([`CVar`]).
//!
//! FFT convention: `fft2` is unnormalized and `ifft2` carries the `1/(H*W)`
//! factor, so `ifft2(fft2(x)) == x`. Adjoints follow from that single
//! convention: `fft2^H = H*W * ifft2` and `ifft2^H = fft2 / (H*W)`.

mod complex;
pub mod gradcheck;
mod graph;
mod linalg;
pub(crate) mod ops;
mod spectral;
mod tensor;

pub use complex::{CTensor, CVar};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{BackwardCtx, Graph, Var};
pub use spectral::{fft2_in_place, Direction};
pub use tensor::Tensor;
