//! Discontinuous Galerkin solver for the two-dimensional complex
//! Ginzburg–Landau equation
//!
//! ```text
//! u_t - (ν + iα)Δu + (κ + iβ)|u|²u - γu = f   in Ω × (0, T],   u = 0 on ∂Ω,
//! ```
//!
//! discretized with symmetric interior penalty DG in space and fully implicit
//! Crank–Nicolson in time.

pub mod error;
pub mod fem;
pub mod harness;
pub mod mesh;
pub mod model;
pub mod sipg;
pub mod sparse;
pub mod stepper;
pub mod verify;

pub use error::{Error, Result};
pub use fem::{ComplexField, DGSpace, ReferenceBasis};
pub use harness::{ConvergenceReport, StudyMode, StudyPlan};
pub use mesh::{Mesh, Rect};
pub use model::{builtin_cases, case_by_name, GLParams, ManufacturedCase};
pub use num_complex::Complex64;
pub use sipg::SipgConfig;
pub use sparse::{LinearSolverKind, SparseOperator};
pub use stepper::{Discretization, SourceRule, StepConfig, StepReport};
