//! Numerical laboratory for polynomial stability estimates of finitely
//! differentiable, quasi-convex near-integrable Hamiltonians.
//!
//! The crate is organized bottom-up:
//!
//! * [`algebra`]: sparse Fourier–Taylor polynomials, Poisson brackets, norm bounds;
//! * [`geometry`]: frequency map, quasi-convexity margin, resonant surfaces;
//! * [`diophantine`]: periodic approximation of frequency vectors;
//! * [`normalform`]: periodic averaging, Lie transforms, local normal forms;
//! * [`dynamics`]: implicit-midpoint integration and drift diagnostics;
//! * [`experiments`]: stability sweeps, exponent fits and three-step certificates.

pub mod algebra;
pub mod diophantine;
pub mod dynamics;
pub mod experiments;
pub mod geometry;
pub mod normalform;
pub mod system;

pub use algebra::{AlgebraError, Caps, FTPolynomial, Mode, RegularityProfile};
pub use diophantine::PeriodicOrbitApprox;
pub use dynamics::{PhaseState, TrajectoryRecord};
pub use experiments::{CertificateParameters, FitResult, StabilityRecord, SweepConfig};
pub use geometry::{IntegrableModel, ResonanceModule};
pub use normalform::{NormalFormConfig, NormalFormResult};
pub use system::NearIntegrableSystem;
