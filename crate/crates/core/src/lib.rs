//! State observation for systems that are affine in their states, carry
//! parameters produced by a known autonomous generator, and are measured
//! through a known, bounded, time-varying delay.
//!
//! The toolkit simulates such a plant and runs the estimator alongside it:
//! auxiliary filters reduce state observation to the estimation of constant
//! unknowns ([`pebo`]), a delayed linear regression over those unknowns is
//! averaged and decoupled per component ([`drem`]), and a gradient estimator
//! with a tracked decay weight delivers the unknowns — hence the state and
//! the time-varying parameters — exactly once the excitation integral
//! crosses a computable threshold, rather than asymptotically.
//!
//! [`scenario`] wires everything together: configuration, the built-in
//! benchmark model, the co-simulation loop, CSV output, and convergence
//! summaries.

pub mod drem;
pub mod error;
pub mod history;
pub mod linalg;
pub mod pebo;
pub mod plant;
pub mod scenario;
pub mod selftest;

pub use drem::{
    clip, drem_step, gradient_step, ie_threshold, mix, reconstruct, theta_fct, DremState,
    FctState, Mixed, W_FLOOR,
};
pub use error::{Error, Result};
pub use history::{delayed_time, DelayFunction, SignalHistory};
pub use linalg::{adjugate, determinant, rk4_step, Matrix};
pub use pebo::{observer_step, regressor, PeboState, Regression};
pub use plant::{
    eta_of, measure, measure_clamped, plant_step, PlantState, StateMatrixFn, SystemModel,
    TimeMatrixFn,
};
pub use scenario::{
    build_model, convergence_metrics, load_config, paper_example, run_scenario,
    run_scenario_with, write_csv, write_csv_path, ConvergenceMetrics, DelayCase, EstimateRecord,
    InitialOverrides, RunDiagnostics, ScenarioConfig, SimOutput,
};
