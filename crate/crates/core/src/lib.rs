//! Setpoint-tracking controller synthesis for affine nonlinear systems by
//! deforming a trivially controllable reference system into the plant.
//!
//! Feedback linearization solves output tracking wherever the decoupling
//! matrix stays invertible, and fails where an output folds (its input
//! gain crosses zero).  This crate treats tracking as a continuation
//! problem instead: a homotopy
//! `H = (1 - lambda) * eta + lambda * y` connects a bank of integrator
//! chains `eta` (trivially trackable) to the plant output `y`, and the
//! controller steers the blended system while the homotopy parameter
//! `lambda` is continued from 0 to 1.  Differentiating `H` until every
//! input appears yields a linear relation between the inputs and the top
//! parameter derivative; following its oriented solution-curve tangent
//! survives the fold points that kill feedback linearization, and a
//! saturation-triggered hybrid law switches between the two regimes under
//! a hard input bound.
//!
//! Module map:
//!
//! * [`tangent`] — pseudoinverse, oriented nullspace tangent, and the
//!   shifted tangent solution of underdetermined linear systems;
//! * [`plant`] — affine control systems with Lie-derivative machinery,
//!   decoupling matrices and relative-degree probing;
//! * [`homotopy`] — the differentiated homotopy system and its three
//!   control laws (pinned-parameter linearization, tangent continuation,
//!   hybrid switching);
//! * [`regulators`] — PI regulators for the cascade loops;
//! * [`sim`] — closed-loop drivers integrating plant, reference chain,
//!   parameter chain, observer and regulator integrals as one ODE;
//! * [`motor`] — the induction-motor benchmark (model, derived constants,
//!   current decoupling, flux observer, outer loop);
//! * [`plants`] — built-in benchmark plants;
//! * [`scenario`] — scenario files, trace serialization and plot scripts;
//! * [`acceptance`] — the runnable acceptance checks behind `homctl check`.

// Validation guards are written `!(x > 0.0)` rather than `x <= 0.0` so
// that NaN fails them; the rewrite clippy suggests would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod homotopy;
pub mod motor;
pub mod plant;
pub mod plants;
pub mod regulators;
pub mod scenario;
pub mod sim;
pub mod tangent;

pub use acceptance::{all_passed, render, run_all, CheckReport};
pub use homotopy::{
    advance_homotopy_state, assemble_h_system, continuation_control, h_feedback_linearize,
    homotopy_residual, hybrid_step, return_pin, scaled_tangent_control, ControlError, HSystem,
    HomotopyState, HybridOutcome, Mode, ReferenceChain, SatBranch, LAMBDA_RETURN_RATE,
};
pub use motor::{
    current_decouple, derive_params, electromagnetic_torque, flux_observer_rate,
    flux_observer_step, motor_dynamics, outer_loop_control, reduced_control_model,
    second_derivative_model, sync_speed, DerivedParams, MotorParams, MotorState,
};
pub use plant::{AffineSystem, Field, OperatingBox, PlantError};
pub use regulators::PiRegulator;
pub use scenario::{
    csv_header, csv_string, emit_csv, parse_csv, parse_scenario, plot_script, read_csv,
    MotorScenario, Scenario, ScenarioError,
};
pub use sim::{
    drive, rk4_step, run_closed_loop, ClosedLoop, ControllerKind, DirectLoop, Eta0, LoopState,
    MotorLoop, PlantSetup, Profile, RegulatorGains, RunError, SimConfig, SimError, SimFailure,
    SimOutcome, SimTrace, TraceRow,
};
pub use tangent::{
    augmented_tangent, numerical_rank, oriented_nullspace_tangent, pseudoinverse, KernelError,
    TangentSolution,
};
