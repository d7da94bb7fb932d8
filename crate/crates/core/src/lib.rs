//! Nonlocal elliptic operators of order `sigma in (0, 2)` on uniform grids in
//! one and two dimensions.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod barriers;
pub mod convolutions;
pub mod envelope;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod limits;
pub mod ops;
pub mod quadrature;
pub mod regularity;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{sample_function, ExteriorClosure, GridFunction, GridSpec, Point};
pub use kernels::{Ellipticity, Kernel, KernelClass, L1Part, Multiplier, Order};
pub use ops::{Evaluator, OperatorSpec};
pub use quadrature::{OperatorPlan, QuadratureSpec};
pub use scalar::Real;

pub type Grid = GridSpec<f64>;
pub type Function = GridFunction<f64>;
pub type Closure = ExteriorClosure<f64>;
pub type Kernel64 = Kernel<f64>;
pub type Class = KernelClass<f64>;
pub type Plan = OperatorPlan<f64>;
pub type Quadrature = QuadratureSpec<f64>;
