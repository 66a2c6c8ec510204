//! Post-training weight compression as a low-rank term plus a quantized,
//! rotated residual.
//!
//! The pipeline factors a weight matrix `W` into
//!
//! ```text
//! W  ≈  U·diag(S)·V'  +  dequant(R')·Qᵀ·Pᵀ
//! ```
//!
//! where `U, S, V'` come from an activation-scaled rank-1 sketch decomposition
//! ([`lowrank`]), `P` is an importance permutation and `Q` a partial
//! block-Hadamard rotation ([`rotation`]), and `R'` is the rotated residual
//! quantized to a few bits per weight under a proxy-Hessian objective
//! ([`quant`]). Calibration statistics drive the activation scaling and the
//! permutation ([`calib`]). The [`pack`] module gives the factored layer a
//! bit-exact on-disk form, and [`pipeline`] chains the whole thing together.
//!
//! Numerical kernels ([`matrix`], [`fwht`], [`svd`]) are generic over the
//! scalar type through [`scalar::Scalar`]; the pipeline itself works in f64
//! and narrows only at storage boundaries (binary16 group scales, f32 sidecar
//! vectors, e4m3 factor entries). [`oracle`] holds slow reference
//! implementations used by the test suites and `lopro selftest`, never by the
//! hot paths.

pub mod calib;
pub mod error;
pub mod fwht;
pub mod lowrank;
pub mod matrix;
pub mod minifloat;
pub mod oracle;
pub mod pack;
pub mod perm;
pub mod pipeline;
pub mod quant;
pub mod rng;
pub mod rotation;
pub mod scalar;
pub mod selftest;
pub mod svd;

pub use error::Error;
pub use matrix::Matrix;

/// Working-precision matrix used by every pipeline stage.
pub type Mat = Matrix<f64>;

/// Storage-precision matrix for 32-bit tensor files.
pub type MatF32 = Matrix<f32>;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
