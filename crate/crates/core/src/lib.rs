//! Recovery of a target image from a single noisy measurement holding many
//! randomly rotated and translated copies of it (multi-target detection).
//!
//! The pipeline:
//!
//! * [`synth`] plants separated rotated copies of a target into an `N x N`
//!   frame and adds white Gaussian noise.
//! * [`likelihood`] cuts the frame into `L x L` patches and evaluates the
//!   posterior over `(shift, rotation)` hypotheses, the expected
//!   log-likelihood `Q`, and its analytic gradient.
//! * [`prior`] provides score functions `grad log p(F)`: zero, analytic
//!   Gaussian, or a small fully-connected network trained by denoising score
//!   matching under a variance-preserving diffusion.
//! * [`em`] runs approximate EM whose M-step is gradient ascent on
//!   `Q + gamma * log p(F)`.
//! * [`eval`] scores reconstructions and runs SNR sweeps; [`io`] holds file
//!   formats and [`cli`] the `mtd` command line.

pub mod cli;
pub mod em;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod likelihood;
pub mod plot;
pub mod prior;
pub mod synth;
pub mod xcorr;

pub use error::{MtdError, Result};
pub use grid::{Grid, ImageGrid, PaddedGrid, RotationIndex, ShiftIndex};
