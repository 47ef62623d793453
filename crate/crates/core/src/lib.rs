//! Spectral recovery of signals on the circle from rotation-invariant third moments.
//!
//! Signals live in the Fourier basis indexed by the nonzero frequencies
//! `±[p/2] = {-p/2, ..., -1, 1, ..., p/2}`, stored in that order everywhere.
//! The central object is the p²×p² matrix `M(T, u)` built from a third-moment
//! tensor `T` and a random order-5 tensor `u` by contracting a ring of nine
//! copies of `T`. Its leading eigenvector, reshaped and eigen-decomposed once
//! more, gives a candidate signal; repeating with independent `u` yields a list.

pub mod baselines;
pub mod correction;
pub mod error;
pub mod io;
pub mod moments;
pub mod network;
pub mod par;
pub mod ring;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use par::Exec;
