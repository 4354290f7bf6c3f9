//! Scalar abstraction and small fixed-size kernels shared by the f64 code
//! paths and the dual-number Jacobian paths.

pub mod dual;
pub mod real;
pub mod rigid;

pub use dual::Dual;
pub use real::Real;
