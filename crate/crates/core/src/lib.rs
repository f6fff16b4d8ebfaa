//! Differential calculus on almost complex 4-manifolds.
//!
//! Jets, frames and the operators ∂, ∂̄, θ, θ̄ on a coordinate box of R^4,
//! the Monge-Ampère current (i∂∂̄u)^2 and its limits, regularized maxima
//! with Richberg-type gluing, and a Dirichlet solver for det h = f.
//!
//! Everything in the calculus layer is generic over [`scalar::Real`]; the
//! numeric drivers (measures, smoothing, Dirichlet) run in `f64`.

pub mod calculus;
pub mod config;
pub mod dirichlet;
pub mod error;
pub mod expr;
pub mod field;
pub mod forms;
pub mod frame;
pub mod geometry;
pub mod hessian;
pub mod jet;
pub mod linalg;
pub mod ma;
pub mod quad;
pub mod scalar;
pub mod smoothing;
pub mod structure;
pub mod tj;

pub use error::{AcxError, Result};

pub type Point64 = geometry::Point<f64>;
pub type Point32 = geometry::Point<f32>;
pub type GridBox64 = geometry::GridBox<f64>;
pub type GridBox32 = geometry::GridBox<f32>;
pub type Jet64 = jet::Jet<f64>;
pub type Jet32 = jet::Jet<f32>;
pub type CJet64 = jet::CJet<f64>;
pub type Frame64 = frame::Frame<f64>;
pub type Frame32 = frame::Frame<f32>;
pub type Field64 = field::FieldRef<f64>;
pub type Structure64 = structure::StructureRef<f64>;
pub type Metric64 = hessian::HermitianMetric<f64>;
