//! Numerical calculus on the white-noise probability space.
//!
//! The library represents random variables by their chaos expansions
//! `F = Σ_α f_α H_α`, where `α` ranges over finitely supported
//! multi-indices and `H_α` is a product of Hermite polynomials in
//! independent standard Gaussian coordinates. On top of that
//! representation it provides:
//!
//! | module | contents |
//! |--------|----------|
//! | [`multi_index`] | sparse multi-indices, factorials, `(2N)^{kα}` weights |
//! | [`hermite`] | probabilists' Hermite polynomials and orthonormal Hermite functions |
//! | [`quadrature`] | adaptive Gauss–Kronrod integration and oscillatory tail expansions |
//! | [`spectral_op`] | spectral densities `m`, the Fourier-multiplier operator with symbol `√m`, and the variance function `r(t)` |
//! | [`chaos`] | chaos vectors, weighted norms, duality pairing, Wick product and Wick exponential |
//! | [`process`] | the stationary-increment process `X(t)` and its white noise `W(t)` as truncated chaos series |
//! | [`integrator`] | the Wick–Ito integral `∫ Y(t) ◊ W(t) dt` as Riemann sums with convergence reports |
//! | [`ito`] | verifiers for the Ito formula `f(X(t)) = f(X(t₀)) + ∫ f'(X) ◊ W ds + ½∫ f''(X) r'(s) ds` |
//!
//! Everything is deterministic: random sampling is driven by explicit
//! seeds with one counter-mode stream per path, and all container
//! iteration orders are canonical.

pub mod chaos;
mod error;
pub mod hermite;
pub mod integrator;
pub mod ito;
pub mod multi_index;
pub mod process;
pub mod quadrature;
pub mod spectral_op;

pub use error::{Error, Result};

/// Library version embedded in every serialized artifact.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
