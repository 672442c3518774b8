//! Numerical laboratory for classical ferromagnetic lattice spin systems in a
//! complex external magnetic field.
//!
//! Everything here works at finite volume and is exact up to floating-point
//! rounding: partition functions and Ursell (connected) correlation functions
//! by direct enumeration, transfer-operator spectra for chains and strips,
//! fugacity-polynomial zeros, a large-field polymer expansion with certified
//! activity bounds, and maximum-principle checks on wedge domains in the
//! complex field plane.
//!
//! The numeric kernel is generic over the scalar type through [`Scalar`]
//! (`f32`/`f64`); concrete `f64` aliases live at the crate root.

pub mod analysis;
pub mod cluster;
pub mod config;
pub mod exact;
pub mod leeyang;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod transfer;

pub use scalar::Scalar;

/// Complex double — the scalar used by the command-line tools.
pub type C64 = num_complex::Complex<f64>;
/// Complex single.
pub type C32 = num_complex::Complex<f32>;

/// `f64` single-site measure.
pub type Measure64 = model::SiteMeasure<f64>;
/// `f64` coupling set.
pub type Couplings64 = model::CouplingSet<f64>;
/// `f64` model specification.
pub type Spec64 = model::ModelSpec<f64>;
/// `f64` validated model.
pub type Model64 = model::ValidatedModel<f64>;
/// `f64` transfer operator.
pub type Transfer64 = transfer::TransferOperator<f64>;
