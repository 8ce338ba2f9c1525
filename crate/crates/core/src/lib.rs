//! Decay rates of the linearized free-boundary Stokes slab with generalized surface operators.
//!
//! Two independent routes to the per-frequency decay exponent: roots of the dispersion
//! relation ([`dispersion`]) and direct time integration of the transformed per-mode system
//! ([`stokes1d`]). [`synthesis`] sums per-mode energies into total-energy curves on the
//! torus and the plane and fits decay laws ([`fit`]).
//!
//! Everything is generic over the scalar (`f32`/`f64`); the `*64` aliases are the usual entry
//! points.

// NaN-rejecting comparisons (`!(x > 0)`) and index loops over small dense matrices are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod dispersion;
pub mod fit;
pub mod linalg;
pub mod real;
pub mod stokes1d;
pub mod symbols;
pub mod synthesis;

pub use num_complex::Complex;
pub use real::{Real, C};

pub type Symbol64 = symbols::Symbol<f64>;
pub type SlabParams64 = symbols::SlabParams<f64>;
pub type DispersionResult64 = dispersion::DispersionResult<f64>;
pub type DispersionMatrix64 = dispersion::DispersionMatrix<f64>;
pub type DispersionOptions64 = dispersion::DispersionOptions<f64>;
pub type ModeProfile64 = dispersion::ModeProfile<f64>;
pub type ModeState64 = stokes1d::ModeState<f64>;
pub type EnergyCurve64 = stokes1d::EnergyCurve<f64>;
pub type Grid1D64 = stokes1d::Grid1D<f64>;
pub type SynthesisResult64 = synthesis::SynthesisResult<f64>;
pub type InitialDataSpec64 = synthesis::InitialDataSpec<f64>;

pub type Symbol32 = symbols::Symbol<f32>;
pub type SlabParams32 = symbols::SlabParams<f32>;
pub type DispersionResult32 = dispersion::DispersionResult<f32>;
pub type ModeState32 = stokes1d::ModeState<f32>;
