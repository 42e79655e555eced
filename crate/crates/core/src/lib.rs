//! Projection-free implicit Euler and BDF2 schemes for gradient flows of
//! harmonic maps into the unit sphere, discretized with P1 finite elements.
//!
//! ```
//! use harmflow::{centered_unit_square, make_initial, run_flow, EnergySystem, FlowConfig,
//!                InitSpec, Method, Metric, StepSize};
//!
//! let mesh = centered_unit_square(8).unwrap();
//! let sys = EnergySystem::harmonic_map(&mesh);
//! let u0 = make_initial(&mesh, InitSpec::perturbed(0.5, 1));
//! let cfg = FlowConfig::new(Method::Bdf2, Metric::H1, StepSize::pow2(3));
//! let report = run_flow(&u0, &sys, &cfg).unwrap();
//! assert!(report.converged);
//! assert!(report.audit.passes());
//! ```

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod flow;
pub mod kkt;
pub mod mesh;
pub mod seq_calculus;
pub mod sphere_data;

pub use diagnostics::{
    audit_identities, constraint_violation, energy_error, eoc, AuditSummary, RunReport,
    StepRecord, StopReason, SweepRow, SweepTable,
};
pub use error::{Error, Result};
pub use fem::{assemble_mass, assemble_stiffness, dirichlet_energy, interpolate, lumped_masses, NodalField};
pub use flow::{
    bdf2_step, euler_init_step, run_flow, EnergySystem, FlowConfig, FlowSolver, HistoryWindow,
    Method, Metric, SphereConstraint,
};
pub use kkt::{solve_kkt, KktSolution, KktSystem};
pub use mesh::{build_square_mesh, centered_unit_square, DirichletBoundary, TriMesh};
pub use seq_calculus::StepSize;
pub use sphere_data::{inverse_stereographic, make_initial, InitKind, InitSpec};

// The guide's snippets run as doctests; one module per chapter keeps
// failures traceable to their file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sequence_calculus.md")]
    mod sequence_calculus {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/constrained_step.md")]
    mod constrained_step {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/constraint_violation.md")]
    mod constraint_violation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
