//! Exact computations on filtered manifolds given by polynomial charts.
//!
//! The modules follow the order in which the constructions build on each other:
//! polynomials, charts with H-frames, osculating nilpotent groups, privileged
//! and adapted coordinates, the deformation space with its Euler-like fields
//! and flows, and finally the tangent groupoid.

pub mod chart;
pub mod coords;
pub mod deform;
pub mod error;
pub mod groupoid;
pub mod linalg;
pub mod nilpotent;
pub mod poly;
pub mod report;

pub use error::{Error, PolyError, Result};
pub use num_rational::BigRational;
pub use poly::{Poly, Valuation, WeightVector};
