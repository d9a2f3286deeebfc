//! Reference models with known roots.

pub mod ar1;
pub mod gamma;
pub mod polynomial;

pub use ar1::{make_ar1_example, make_ar1_with, Ar1Field, InformationMonitor, Innovation, InverseInformationStep};
pub use gamma::{make_gamma_example, make_gamma_unbounded_example, GammaField};
pub use polynomial::{make_polynomial_example, NoiseKind, PolySchedule, PolynomialField};
