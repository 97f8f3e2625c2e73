//! Numerics for a Dirac-type operator on the algebra generated by an isometry
//! `U` and a unitary `V` with `VU = e^{2 pi i theta} UV`.
//!
//! The operator decouples into 2x2 first-order difference systems indexed by
//! an angular mode `m` and a radial level `n`. Each system is driven by
//! transfer matrices built from positive weights `a_n(k)` and coefficients
//! `c_{i,n}(k)`; its kernel is spanned by two special solutions `I` and `K`,
//! and its inverse is assembled from integral operators built out of them.

pub mod analysis;
pub mod dirac;
pub mod error;
pub mod parametrix;
pub mod solutions;
pub mod special;
pub mod transfer;
pub mod weights;

pub use error::{Error, Result};
pub use solutions::{BoundaryRule, KernelSolution, Truncation};
pub use transfer::{Mat2, ModeIndex};
pub use weights::{CoefficientFamily, Families, SeriesValue, WeightFamily};
