//! Discretization, minimization and asymptotic analysis of the relaxed
//! one-dimensional cholesteric energy
//!
//! `E_ε(u) = ∫ ε/2 |u′|² + (|u|² − 1)²/(4ε) + L/2 (u₁u₂′ − u₂u₁′ − 2πN)² dx`
//!
//! with `u(0) = 1`, `u(1) = e^{iα}`.

pub mod asymptotics;
mod banded;
pub mod energy;
pub mod error;
pub mod field;
pub mod io;
pub mod jump;
pub mod lifting;
pub mod minimize;
pub mod params;
pub mod saddle;

pub use energy::{
    energy_eps, energy_eps_polar, energy_gamma, energy_rescaled, grad_energy_eps,
    grad_energy_eps_polar, twist_flux, EnergyBreakdown, JUMP_COST,
};
pub use error::{Error, Result};
pub use field::{make_grid, to_cartesian, twist_field, uniform_twist_field, ComplexField, Grid, PolarField};
pub use jump::{JumpMap, PhasePiece};
pub use lifting::{
    detect_bad_intervals, extract_jump_map, unwrap_phase, winding_number, BadIntervalReport,
};
pub use params::{eps_for_twist, ModelParams, Twist};
pub use minimize::{
    minimize_free, minimize_winding_class, minimize_winding_class_from, multistart_global,
    MinimizeReport, SolverOptions, Strategy,
};
pub use asymptotics::{
    build_recovery_sequence, classify_e0, classify_e0a, extrapolate_eps, phase_diagram_sweep,
    predicted_local_energy, predicted_saddle_energy, Classification, Extrapolation, Kind,
    PhaseCell, RecoveryProfile,
};
pub use saddle::{
    barrier, init_path, refine_critical_point, relax_path, Barrier, CriticalPoint, PathEnsemble,
    StopReason, StringOptions,
};
