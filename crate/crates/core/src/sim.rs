//! Closed-loop simulation engine.
//!
//! Two loop drivers share one integration discipline: the entire closed
//! loop (plant, reference chain, parameter chain, observer and regulator
//! integrals) is integrated as a single ODE with the classical
//! fourth-order Runge-Kutta scheme, and the control law is re-evaluated at
//! every integrator stage.  Discrete decisions — which law runs, the
//! pinned parameter sign, the tangent-rescale branch, measurement noise —
//! are frozen at step boundaries, so smooth stretches of a run converge at
//! the integrator's full order.  Saturated hybrid steps re-evaluate the
//! rescaled tangent law pointwise as well: only the branch and sign are
//! held, which keeps the differentiated homotopy at zero along the step
//! instead of letting it drift under a held input.
//!
//! [`DirectLoop`] closes the homotopy controller around a plant whose
//! inputs it commands directly (the scalar and two-channel benchmarks).
//! [`MotorLoop`] runs the induction-motor cascade: outer PI regulators
//! feed the hybrid homotopy law on the reduced model, whose current
//! references drive decoupled inner current regulators.

use crate::homotopy::{
    assemble_h_system, continuation_control, h_feedback_linearize, homotopy_residual, hybrid_step,
    lambda_chain_rate, return_pin, scaled_tangent_control, ControlError, HomotopyState, Mode,
    ReferenceChain, SatBranch, LAMBDA_RETURN_RATE,
};
use crate::motor::{
    current_decouple, derive_params, flux_observer_rate, motor_dynamics, DerivedParams,
    MotorParams, MotorState,
};
use crate::plant::AffineSystem;
use crate::regulators::PiRegulator;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cell::RefCell;
use std::fmt;

/// Simulation failure reasons.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// The integration state stopped being finite.
    NonFinite { t: f64, what: &'static str },
    /// A control law failed irrecoverably at time `t`.
    Control { t: f64, error: ControlError },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::NonFinite { t, what } => write!(f, "non-finite {what} at t = {t}"),
            SimError::Control { t, error } => write!(f, "control law failed at t = {t}: {error}"),
        }
    }
}

impl std::error::Error for SimError {}

/// A failed run: the error plus everything recorded before it.
#[derive(Debug, Clone)]
pub struct SimFailure {
    pub error: SimError,
    pub partial: SimTrace,
}

impl fmt::Display for SimFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} rows recorded)",
            self.error,
            self.partial.rows.len()
        )
    }
}

impl std::error::Error for SimFailure {}

/// One classical Runge-Kutta step of `x' = rate(t, x)`.
pub fn rk4_step<F>(rate: &F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>, SimError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rate(t, x);
    let k2 = rate(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)));
    let k3 = rate(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)));
    let k4 = rate(t + dt, &(x + &k3 * dt));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(SimError::NonFinite {
            t,
            what: "integration state",
        })
    }
}

/// Piecewise-linear setpoint profile: linear between knots, constant
/// before the first and after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    points: Vec<(f64, f64)>,
}

impl Profile {
    /// Builds a profile from `(time, value)` knots with strictly
    /// increasing, finite times.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, String> {
        if points.is_empty() {
            return Err("profile needs at least one knot".into());
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(format!(
                    "profile knots must increase: {} then {}",
                    w[0].0, w[1].0
                ));
            }
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err("profile knots must be finite".into());
        }
        Ok(Profile { points })
    }

    pub fn constant(v: f64) -> Self {
        Profile {
            points: vec![(0.0, v)],
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Which controller a direct-loop scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    /// Plain feedback linearization of the plant with the input clamped to
    /// the bound (the law that dies at output folds).
    Fblin,
    /// Pure tangent continuation of the homotopy system.
    Continuation,
    /// Saturation-switching hybrid of the two homotopy laws.
    Hybrid,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerKind::Fblin => write!(f, "fblin"),
            ControllerKind::Continuation => write!(f, "continuation"),
            ControllerKind::Hybrid => write!(f, "hybrid"),
        }
    }
}

/// How the reference chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eta0 {
    /// Chain at zero: with `lambda(0) = 0` the homotopy residual starts
    /// exactly on the zero manifold.
    Zero,
    /// Chain copies the measured output at the initial state, so the
    /// deformation starts from a coincident pair (the residual then starts
    /// at `eta(0)`, off the manifold unless the output starts at the
    /// setpoint).
    MatchOutput,
}

/// Simulation configuration shared by both loop drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Variance of the additive measurement noise (motor: on the two
    /// current sensors; direct loops: on the measured outputs).
    pub noise_variance: f64,
    /// Input bound handed to the hybrid law (direct loops: actuator bound;
    /// motor: current-reference bound in ampere).
    pub u_max: f64,
    /// Continuation scale for unsaturated tangent steps.
    pub alpha: f64,
    /// Rank tolerance for tangent and linearization solves.
    pub rank_tol: f64,
    /// Initial first parameter derivative (only read by chains of depth
    /// two or more).
    pub lambda_dot0: f64,
    /// Overshoot allowance before `lambda` clamps at `1 + slack`.
    pub lambda_slack: f64,
    /// Gain of the residual-zeroing outer law `v = -gain * H` used by the
    /// direct loops (and of `v = -gain * (y - setpoint)` in plain
    /// feedback-linearization runs).
    pub outer_gain: f64,
    pub eta0: Eta0,
    pub controller: ControllerKind,
    /// Initial plant state.
    pub x0: Vec<f64>,
    /// Per-output setpoint profiles.
    pub setpoints: Vec<Profile>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 1.0,
            seed: 0,
            noise_variance: 0.0,
            u_max: 20.0,
            alpha: crate::homotopy::DEFAULT_ALPHA,
            rank_tol: crate::tangent::DEFAULT_RANK_TOL,
            lambda_dot0: 1.0,
            lambda_slack: crate::homotopy::DEFAULT_LAMBDA_SLACK,
            outer_gain: 2.0,
            eta0: Eta0::Zero,
            controller: ControllerKind::Hybrid,
            x0: Vec::new(),
            setpoints: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self, n: usize, m: usize) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end >= self.dt) {
            return Err(format!(
                "t_end = {} must cover at least one step",
                self.t_end
            ));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err("noise_variance must be finite and non-negative".into());
        }
        if !(self.u_max > 0.0) {
            return Err("u_max must be positive".into());
        }
        if !(self.alpha > 0.0) {
            return Err("alpha must be positive".into());
        }
        if !(self.rank_tol > 0.0) {
            return Err("rank_tol must be positive".into());
        }
        if !(self.lambda_slack >= 0.0) {
            return Err("lambda_slack must be non-negative".into());
        }
        if !(self.outer_gain > 0.0) {
            return Err("outer_gain must be positive".into());
        }
        if self.x0.len() != n {
            return Err(format!(
                "x0 has {} entries, plant has {n} states",
                self.x0.len()
            ));
        }
        if self.setpoints.len() != m {
            return Err(format!(
                "{} setpoint profiles for {m} outputs",
                self.setpoints.len()
            ));
        }
        Ok(())
    }

    fn setpoint_vector(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.setpoints.len(), |j, _| self.setpoints[j].value_at(t))
    }

    fn steps(&self) -> usize {
        let n = (self.t_end / self.dt).round() as usize;
        n.max(1)
    }
}

/// Gains of the motor cascade's PI regulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorGains {
    pub current_kp: f64,
    pub current_ki: f64,
    pub flux_kp: f64,
    pub flux_ki: f64,
    pub speed_kp: f64,
    pub speed_ki: f64,
}

impl Default for RegulatorGains {
    fn default() -> Self {
        // Pole placement: the decoupled current channels (pole 1/tau_1 at
        // about 50 rad/s) are closed at (s + 200)^2; the outer channels
        // (integrators once lambda = 1) at (s + 10)^2.
        RegulatorGains {
            current_kp: 350.0,
            current_ki: 40_000.0,
            flux_kp: 20.0,
            flux_ki: 100.0,
            speed_kp: 20.0,
            speed_ki: 100.0,
        }
    }
}

/// One recorded sample of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: f64,
    pub lambda_dot: f64,
    pub h: Vec<f64>,
    pub mode: Mode,
    pub saturated: bool,
}

/// A complete recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub plant: String,
    pub state_dim: usize,
    pub channels: usize,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("trace has rows")
    }

    /// Rows with `t0 <= t <= t1`.
    pub fn rows_between(&self, t0: f64, t1: f64) -> Vec<&TraceRow> {
        self.rows
            .iter()
            .filter(|r| r.t >= t0 && r.t <= t1)
            .collect()
    }

    /// Largest commanded input magnitude over the whole run.
    pub fn max_input(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.u.iter().map(|u| u.abs()))
            .fold(0.0, f64::max)
    }

    /// Largest homotopy residual magnitude over the whole run.
    pub fn max_residual(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.h.iter().map(|h| h.abs()))
            .fold(0.0, f64::max)
    }

    pub fn any_saturated(&self) -> bool {
        self.rows.iter().any(|r| r.saturated)
    }

    pub fn mode_switches(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[0].mode != w[1].mode)
            .count()
    }
}

/// Carry-over state of a closed loop between steps: the flat ODE state
/// plus the hybrid law's discrete memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub z: DVector<f64>,
    pub s: f64,
    pub mode: Mode,
    pub alpha: f64,
}

/// A closed loop that can be driven sample by sample.
pub trait ClosedLoop {
    fn plant_name(&self) -> &str;
    /// `(plant state dimension, output count)`.
    fn dims(&self) -> (usize, usize);
    fn initial_state(&self) -> LoopState;
    /// Computes the commanded sample at `t` and integrates one step.
    fn step(
        &self,
        t: f64,
        st: &LoopState,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(TraceRow, LoopState), SimError>;
}

/// A finished run: the trace and the loop state it ended in.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: SimTrace,
    pub end: LoopState,
}

/// Drives a closed loop from its initial state to `t_end`, recording one
/// row per step boundary (the final row is the commanded sample at
/// `t_end`).
pub fn drive<L: ClosedLoop>(lp: &L, cfg: &SimConfig) -> Result<SimOutcome, Box<SimFailure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.steps();
    let mut st = lp.initial_state();
    let mut rows = Vec::with_capacity(steps + 1);
    let (n, m) = lp.dims();
    let trace_of = |rows: Vec<TraceRow>| SimTrace {
        plant: lp.plant_name().to_string(),
        state_dim: n,
        channels: m,
        rows,
    };
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        match lp.step(t, &st, cfg.dt, &mut rng) {
            Ok((row, next)) => {
                rows.push(row);
                if k < steps {
                    st = next;
                }
            }
            Err(error) => {
                return Err(Box::new(SimFailure {
                    error,
                    partial: trace_of(rows),
                }))
            }
        }
    }
    Ok(SimOutcome {
        trace: trace_of(rows),
        end: st,
    })
}

fn draw_noise(rng: &mut ChaCha8Rng, count: usize, variance: f64) -> DVector<f64> {
    if variance == 0.0 {
        return DVector::zeros(count);
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("validated variance");
    DVector::from_fn(count, |_, _| normal.sample(rng))
}

/// The control law a single integration step runs under.  Decisions are
/// frozen at the step boundary; the laws themselves are re-evaluated at
/// every integrator stage.
#[derive(Debug, Clone, PartialEq)]
enum StepLaw {
    /// Plant feedback linearization with the command clamped to the bound.
    PlantFblin,
    /// Feedback linearization of the homotopy system with the top
    /// parameter derivative pinned.
    HFblin { pin: f64 },
    /// Pure tangent continuation.
    Continuation,
    /// Saturated hybrid step: rescaled tangent law under a frozen branch
    /// and pinned sign.
    Tangent { branch: SatBranch, s: f64 },
}

// ---------------------------------------------------------------------
// Direct loop
// ---------------------------------------------------------------------

/// Homotopy controller closed directly around an affine plant.
///
/// ODE state layout: `[x (n) | chain (sum r_j) | lambda chain (r_max)]`.
pub struct DirectLoop {
    sys: AffineSystem,
    cfg: SimConfig,
    chain_template: ReferenceChain,
}

impl DirectLoop {
    pub fn new(sys: AffineSystem, cfg: SimConfig) -> Result<Self, String> {
        cfg.validate(sys.state_dim(), sys.channels())?;
        let chain_template = ReferenceChain::zeros(sys.rel_degrees());
        Ok(DirectLoop {
            sys,
            cfg,
            chain_template,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn n(&self) -> usize {
        self.sys.state_dim()
    }

    fn m(&self) -> usize {
        self.sys.channels()
    }

    fn chain_len(&self) -> usize {
        self.sys.rel_degrees().iter().sum()
    }

    fn r_max(&self) -> usize {
        self.sys.max_degree()
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, ReferenceChain, Vec<f64>) {
        let n = self.n();
        let c = self.chain_len();
        let x = z.rows(0, n).into_owned();
        let chain = self.chain_template.with_state(z.rows(n, c).into_owned());
        let lch = z.rows(n + c, self.r_max()).iter().copied().collect();
        (x, chain, lch)
    }

    /// Tracking residual `(1 - lambda) eta + lambda (y - setpoint)`: the
    /// quantity the outer law zeroes, and the `H` column of the trace.
    fn tracking_residual(
        &self,
        y: &DVector<f64>,
        setpoint: &DVector<f64>,
        chain: &ReferenceChain,
        lambda: f64,
    ) -> DVector<f64> {
        homotopy_residual(&(y - setpoint), &chain.output(), lambda)
    }

    /// Assembles the homotopy system around the setpoint-shifted, noisy
    /// output: the residual column becomes `y_meas - setpoint - eta`.
    /// (A constant output shift leaves all output derivatives unchanged,
    /// so only the residual column moves.)
    fn shifted_system(
        &self,
        x: &DVector<f64>,
        chain: &ReferenceChain,
        lch: &[f64],
        noise: &DVector<f64>,
        setpoint: &DVector<f64>,
    ) -> crate::homotopy::HSystem {
        let mut hm = assemble_h_system(&self.sys, x, chain, lch);
        hm.a2 += noise - setpoint;
        hm
    }

    /// Plant feedback linearization with clamping; a singular decoupling
    /// matrix freezes the input at zero (the law has no answer there,
    /// which is the point of the benchmark).
    fn clamped_plant_fblin(&self, x: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, bool) {
        match self.sys.feedback_linearize_input(x, v, self.cfg.rank_tol) {
            Ok(u) => {
                let saturated = u.amax() > self.cfg.u_max;
                (
                    u.map(|ui| ui.clamp(-self.cfg.u_max, self.cfg.u_max)),
                    saturated,
                )
            }
            Err(_) => (DVector::zeros(self.m()), true),
        }
    }

    /// The step-boundary decision: which law this step runs, the commanded
    /// sample, and the updated discrete memory.
    #[allow(clippy::type_complexity)]
    fn decide(
        &self,
        t: f64,
        st: &LoopState,
        noise: &DVector<f64>,
    ) -> Result<(StepLaw, DVector<f64>, f64, Mode, bool, LoopState), SimError> {
        let (x, chain, lch) = self.split(&st.z);
        let lambda = lch[0];
        let setpoint = self.cfg.setpoint_vector(t);
        let y_meas = self.sys.output(&x) + noise;
        let fail = |error: ControlError| SimError::Control { t, error };

        match self.cfg.controller {
            ControllerKind::Fblin => {
                let v = (&y_meas - &setpoint) * (-self.cfg.outer_gain);
                let (u, saturated) = self.clamped_plant_fblin(&x, &v);
                let next = LoopState {
                    z: st.z.clone(),
                    s: st.s,
                    mode: Mode::Fblin,
                    alpha: st.alpha,
                };
                Ok((StepLaw::PlantFblin, u, 0.0, Mode::Fblin, saturated, next))
            }
            ControllerKind::Continuation => {
                let hm = self.shifted_system(&x, &chain, &lch, noise, &setpoint);
                if lambda >= 1.0 {
                    // Arrived: hold the parameter at its target with the
                    // return pin and linearize the homotopy system.
                    let pin = return_pin(&lch, LAMBDA_RETURN_RATE);
                    let h = self.tracking_residual(&y_meas, &setpoint, &chain, lambda);
                    let v = h * (-self.cfg.outer_gain);
                    let u = h_feedback_linearize(&hm, pin, &v, self.cfg.rank_tol).map_err(fail)?;
                    let next = LoopState {
                        z: st.z.clone(),
                        s: st.s,
                        mode: Mode::Fblin,
                        alpha: st.alpha,
                    };
                    return Ok((StepLaw::HFblin { pin }, u, pin, Mode::Fblin, false, next));
                }
                let (u, lambda_top) =
                    continuation_control(&hm, self.cfg.alpha, self.cfg.rank_tol).map_err(fail)?;
                let next = LoopState {
                    z: st.z.clone(),
                    s: st.s,
                    mode: Mode::Continuation,
                    alpha: self.cfg.alpha,
                };
                Ok((
                    StepLaw::Continuation,
                    u,
                    lambda_top,
                    Mode::Continuation,
                    false,
                    next,
                ))
            }
            ControllerKind::Hybrid => {
                let hm = self.shifted_system(&x, &chain, &lch, noise, &setpoint);
                let h = self.tracking_residual(&y_meas, &setpoint, &chain, lambda);
                let v = h * (-self.cfg.outer_gain);
                // Before the parameter reaches its target the linearized
                // try pins the unit rate `s`; after arrival it pins the
                // return law that settles lambda onto 1.  Saturation
                // handling stays live in both regimes.
                let pin = if lambda >= 1.0 {
                    return_pin(&lch, LAMBDA_RETURN_RATE)
                } else {
                    st.s
                };
                let hs = HomotopyState {
                    lambda_derivs: lch.clone(),
                    s: st.s,
                    mode: st.mode,
                    alpha: st.alpha,
                };
                let out = hybrid_step(
                    &hm,
                    &hs,
                    pin,
                    &v,
                    self.cfg.u_max,
                    self.cfg.alpha,
                    self.cfg.rank_tol,
                )
                .map_err(fail)?;
                let next = LoopState {
                    z: st.z.clone(),
                    s: out.state.s,
                    mode: out.state.mode,
                    alpha: out.state.alpha,
                };
                let law = match out.branch {
                    Some(branch) => StepLaw::Tangent {
                        branch,
                        s: out.state.s,
                    },
                    None => StepLaw::HFblin { pin },
                };
                Ok((
                    law,
                    out.u,
                    out.lambda_top,
                    out.state.mode,
                    out.saturated,
                    next,
                ))
            }
        }
    }

    /// Stage-level rate of the combined ODE under a frozen step law.
    fn stage_rate(
        &self,
        law: &StepLaw,
        t: f64,
        z: &DVector<f64>,
        noise: &DVector<f64>,
        err: &RefCell<Option<ControlError>>,
    ) -> DVector<f64> {
        let (x, chain, lch) = self.split(z);
        let setpoint = self.cfg.setpoint_vector(t);
        let fail = |e: ControlError| -> DVector<f64> {
            err.borrow_mut().get_or_insert(e);
            DVector::zeros(z.len())
        };
        let (u, lambda_top) = match law {
            StepLaw::PlantFblin => {
                let y_meas = self.sys.output(&x) + noise;
                let v = (&y_meas - &setpoint) * (-self.cfg.outer_gain);
                let (u, _) = self.clamped_plant_fblin(&x, &v);
                (u, 0.0)
            }
            StepLaw::HFblin { pin } => {
                let hm = self.shifted_system(&x, &chain, &lch, noise, &setpoint);
                let y_meas = self.sys.output(&x) + noise;
                let h = self.tracking_residual(&y_meas, &setpoint, &chain, lch[0]);
                let v = h * (-self.cfg.outer_gain);
                match h_feedback_linearize(&hm, *pin, &v, self.cfg.rank_tol) {
                    Ok(u) => (u, *pin),
                    Err(e) => return fail(e),
                }
            }
            StepLaw::Continuation => {
                let hm = self.shifted_system(&x, &chain, &lch, noise, &setpoint);
                match continuation_control(&hm, self.cfg.alpha, self.cfg.rank_tol) {
                    Ok(ok) => ok,
                    Err(e) => return fail(e),
                }
            }
            StepLaw::Tangent { branch, s } => {
                let hm = self.shifted_system(&x, &chain, &lch, noise, &setpoint);
                match scaled_tangent_control(&hm, *branch, *s, self.cfg.u_max, self.cfg.rank_tol) {
                    Ok(ok) => ok,
                    Err(e) => return fail(e),
                }
            }
        };
        let xdot = self.sys.dynamics(&x, &u);
        let chain_dot = chain.rate(&u);
        let lch_vec = DVector::from_row_slice(&lch);
        let lam_dot = lambda_chain_rate(&lch_vec, lambda_top);
        let mut rate = DVector::zeros(z.len());
        rate.rows_mut(0, self.n()).copy_from(&xdot);
        rate.rows_mut(self.n(), self.chain_len())
            .copy_from(&chain_dot);
        rate.rows_mut(self.n() + self.chain_len(), self.r_max())
            .copy_from(&lam_dot);
        rate
    }
}

impl ClosedLoop for DirectLoop {
    fn plant_name(&self) -> &str {
        self.sys.name()
    }

    fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }

    fn initial_state(&self) -> LoopState {
        let x0 = DVector::from_row_slice(&self.cfg.x0);
        let chain = match self.cfg.eta0 {
            Eta0::Zero => self.chain_template.clone(),
            Eta0::MatchOutput => {
                // Copy the setpoint-shifted output and its drift
                // derivatives into the chain.
                let setpoint = self.cfg.setpoint_vector(0.0);
                let mut state = self.chain_template.state().clone();
                let mut at = 0;
                for (j, r) in self.sys.rel_degrees().iter().enumerate() {
                    for k in 0..*r {
                        let y_k = self.sys.drift_derivative(j, k, &x0);
                        state[at + k] = if k == 0 { y_k - setpoint[j] } else { y_k };
                    }
                    at += r;
                }
                self.chain_template.with_state(state)
            }
        };
        let mut lch = vec![0.0; self.r_max()];
        if self.r_max() > 1 {
            lch[1] = self.cfg.lambda_dot0;
        }
        let mut z = DVector::zeros(self.n() + self.chain_len() + self.r_max());
        z.rows_mut(0, self.n()).copy_from(&x0);
        z.rows_mut(self.n(), self.chain_len())
            .copy_from(chain.state());
        z.rows_mut(self.n() + self.chain_len(), self.r_max())
            .copy_from(&DVector::from_row_slice(&lch));
        LoopState {
            z,
            s: 1.0,
            mode: Mode::Fblin,
            alpha: self.cfg.alpha,
        }
    }

    fn step(
        &self,
        t: f64,
        st: &LoopState,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(TraceRow, LoopState), SimError> {
        let noise = draw_noise(rng, self.m(), self.cfg.noise_variance);
        let (law, u0, lambda_top0, mode, saturated, mut next) = self.decide(t, st, &noise)?;

        let (x, chain, lch) = self.split(&st.z);
        let y = self.sys.output(&x);
        let setpoint = self.cfg.setpoint_vector(t);
        let h = self.tracking_residual(&(y.clone() + &noise), &setpoint, &chain, lch[0]);
        let lambda_dot = if self.r_max() > 1 {
            lch[1]
        } else {
            lambda_top0
        };
        let row = TraceRow {
            t,
            x: x.iter().copied().collect(),
            y: y.iter().copied().collect(),
            u: u0.iter().copied().collect(),
            lambda: lch[0],
            lambda_dot,
            h: h.iter().copied().collect(),
            mode,
            saturated,
        };

        let err: RefCell<Option<ControlError>> = RefCell::new(None);
        let rate = |tt: f64, zz: &DVector<f64>| self.stage_rate(&law, tt, zz, &noise, &err);
        let mut z_next = rk4_step(&rate, &st.z, t, dt)?;
        if let Some(error) = err.into_inner() {
            return Err(SimError::Control { t, error });
        }
        let lam_at = self.n() + self.chain_len();
        z_next[lam_at] = z_next[lam_at].clamp(0.0, 1.0 + self.cfg.lambda_slack);
        next.z = z_next;
        Ok((row, next))
    }
}

// ---------------------------------------------------------------------
// Motor cascade loop
// ---------------------------------------------------------------------

/// The induction-motor cascade: outer PI regulators and the hybrid
/// homotopy law on the reduced model produce current references; inner PI
/// regulators with cross-coupling compensation produce stator voltages.
///
/// ODE state layout (12 entries):
/// `[omega, phi_r, i_sd, i_sq | eta_flux, eta_speed | lambda | phi_hat |
///   I_flux, I_speed, I_isd, I_isq]`.
pub struct MotorLoop {
    mp: MotorParams,
    dp: DerivedParams,
    reduced: AffineSystem,
    cfg: SimConfig,
    /// Time the load torque engages.  A constant braking torque cannot be
    /// opposed by a machine whose flux has not been built yet, so start
    /// benchmarks engage it after magnetization, matching how a load is
    /// applied to a drive on a test bench.
    load_start: f64,
    flux_pi: PiRegulator,
    speed_pi: PiRegulator,
    isd_pi: PiRegulator,
    isq_pi: PiRegulator,
    chain_template: ReferenceChain,
}

const MZ_ETA: usize = 4;
const MZ_LAMBDA: usize = 6;
const MZ_PHI_HAT: usize = 7;
const MZ_INT: usize = 8;
const MZ_LEN: usize = 12;

impl MotorLoop {
    pub fn new(
        mp: MotorParams,
        drop_load_term: bool,
        load_start: f64,
        gains: RegulatorGains,
        cfg: SimConfig,
    ) -> Result<Self, String> {
        cfg.validate(4, 2)?;
        if cfg.controller != ControllerKind::Hybrid {
            return Err("the motor cascade runs the hybrid controller".into());
        }
        if !load_start.is_finite() || load_start < 0.0 {
            return Err(format!(
                "load_start must be finite and >= 0, got {load_start}"
            ));
        }
        let reduced = crate::motor::reduced_control_model(&mp, drop_load_term);
        Ok(MotorLoop {
            mp,
            dp: derive_params(&mp),
            reduced,
            cfg,
            load_start,
            flux_pi: PiRegulator::new(gains.flux_kp, gains.flux_ki),
            speed_pi: PiRegulator::new(gains.speed_kp, gains.speed_ki),
            isd_pi: PiRegulator::new(gains.current_kp, gains.current_ki),
            isq_pi: PiRegulator::new(gains.current_kp, gains.current_ki),
            chain_template: ReferenceChain::zeros(&[1, 1]),
        })
    }

    /// Machine parameters as seen by the plant at time `t`: the load
    /// torque is zero until it engages at `load_start`.
    fn params_at(&self, t: f64) -> MotorParams {
        let mut p = self.mp;
        if t < self.load_start {
            p.load_torque = 0.0;
        }
        p
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn motor_params(&self) -> &MotorParams {
        &self.mp
    }

    /// Measured reduced-model output: squared estimated flux and measured
    /// mechanical speed.
    fn measured_output(&self, z: &DVector<f64>) -> DVector<f64> {
        let phi_hat = z[MZ_PHI_HAT];
        DVector::from_row_slice(&[phi_hat * phi_hat, z[0] / self.mp.pole_pairs])
    }

    /// True reduced-model output from the plant states.
    fn true_output(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&[z[1] * z[1], z[0] / self.mp.pole_pairs])
    }

    fn outer_command(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        let setpoint = self.cfg.setpoint_vector(t);
        let y_meas = self.measured_output(z);
        DVector::from_row_slice(&[
            self.flux_pi.output_with(setpoint[0] - y_meas[0], z[MZ_INT]),
            self.speed_pi
                .output_with(setpoint[1] - y_meas[1], z[MZ_INT + 1]),
        ])
    }

    fn h_system_at(&self, z: &DVector<f64>) -> crate::homotopy::HSystem {
        let x_view = DVector::from_row_slice(&[z[0], z[MZ_PHI_HAT]]);
        let chain = self
            .chain_template
            .with_state(z.rows(MZ_ETA, 2).into_owned());
        assemble_h_system(&self.reduced, &x_view, &chain, &[z[MZ_LAMBDA]])
    }

    /// Current references under the step law decided at the boundary.
    fn current_refs(
        &self,
        law: &StepLaw,
        t: f64,
        z: &DVector<f64>,
    ) -> Result<(DVector<f64>, f64), ControlError> {
        match law {
            StepLaw::HFblin { pin } => {
                let hm = self.h_system_at(z);
                let v = self.outer_command(t, z);
                let u = h_feedback_linearize(&hm, *pin, &v, self.cfg.rank_tol)?;
                Ok((u, *pin))
            }
            StepLaw::Tangent { branch, s } => {
                let hm = self.h_system_at(z);
                scaled_tangent_control(&hm, *branch, *s, self.cfg.u_max, self.cfg.rank_tol)
            }
            other => unreachable!("motor loop never runs {other:?}"),
        }
    }

    /// Full cascade rate: current references -> inner regulators ->
    /// decoupled voltages -> machine, observer and integral states.
    fn stage_rate(
        &self,
        law: &StepLaw,
        t: f64,
        z: &DVector<f64>,
        noise: &DVector<f64>,
        err: &RefCell<Option<ControlError>>,
    ) -> DVector<f64> {
        let (refs, lambda_top) = match self.current_refs(law, t, z) {
            Ok(ok) => ok,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                return DVector::zeros(MZ_LEN);
            }
        };
        let voltages = self.stage_voltages(&refs, z, noise);

        let x = z.rows(0, 4).into_owned();
        let xdot = motor_dynamics(&x, &voltages, &self.params_at(t), &self.dp);

        let setpoint = self.cfg.setpoint_vector(t);
        let y_meas = self.measured_output(z);
        let (i_sd_meas, i_sq_meas) = (z[2] + noise[0], z[3] + noise[1]);

        let mut rate = DVector::zeros(MZ_LEN);
        rate.rows_mut(0, 4).copy_from(&xdot);
        rate[MZ_ETA] = refs[0];
        rate[MZ_ETA + 1] = refs[1];
        rate[MZ_LAMBDA] = lambda_top;
        rate[MZ_PHI_HAT] = flux_observer_rate(z[MZ_PHI_HAT], i_sd_meas, &self.mp, &self.dp);
        rate[MZ_INT] = self
            .flux_pi
            .integral_rate(setpoint[0] - y_meas[0], z[MZ_INT]);
        rate[MZ_INT + 1] = self
            .speed_pi
            .integral_rate(setpoint[1] - y_meas[1], z[MZ_INT + 1]);
        rate[MZ_INT + 2] = self
            .isd_pi
            .integral_rate(refs[0] - i_sd_meas, z[MZ_INT + 2]);
        rate[MZ_INT + 3] = self
            .isq_pi
            .integral_rate(refs[1] - i_sq_meas, z[MZ_INT + 3]);
        rate
    }

    /// Inner current regulators plus cross-coupling compensation, from the
    /// controller's view of the machine (measured currents and speed,
    /// estimated flux).
    fn stage_voltages(
        &self,
        refs: &DVector<f64>,
        z: &DVector<f64>,
        noise: &DVector<f64>,
    ) -> DVector<f64> {
        let (i_sd_meas, i_sq_meas) = (z[2] + noise[0], z[3] + noise[1]);
        let nu = DVector::from_row_slice(&[
            self.isd_pi.output_with(refs[0] - i_sd_meas, z[MZ_INT + 2]),
            self.isq_pi.output_with(refs[1] - i_sq_meas, z[MZ_INT + 3]),
        ]);
        let view = MotorState {
            omega: z[0],
            phi_r: z[MZ_PHI_HAT],
            i_sd: i_sd_meas,
            i_sq: i_sq_meas,
        };
        current_decouple(&nu, &view, &self.mp, &self.dp)
    }
}

impl ClosedLoop for MotorLoop {
    fn plant_name(&self) -> &str {
        "induction_motor"
    }

    fn dims(&self) -> (usize, usize) {
        (4, 2)
    }

    fn initial_state(&self) -> LoopState {
        let mut z = DVector::zeros(MZ_LEN);
        z.rows_mut(0, 4)
            .copy_from(&DVector::from_row_slice(&self.cfg.x0));
        z[MZ_PHI_HAT] = self.cfg.x0[1].max(0.0);
        if self.cfg.eta0 == Eta0::MatchOutput {
            let y = self.measured_output(&z);
            z[MZ_ETA] = y[0];
            z[MZ_ETA + 1] = y[1];
        }
        LoopState {
            z,
            s: 1.0,
            mode: Mode::Fblin,
            alpha: self.cfg.alpha,
        }
    }

    fn step(
        &self,
        t: f64,
        st: &LoopState,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(TraceRow, LoopState), SimError> {
        let noise = draw_noise(rng, 2, self.cfg.noise_variance);
        let fail = |error: ControlError| SimError::Control { t, error };

        // Step-boundary decision: the linearized try pins the unit rate
        // `s` until the parameter reaches its target, then the return law
        // that settles lambda onto 1; saturation handling stays live in
        // both regimes.
        let lambda = st.z[MZ_LAMBDA];
        let pin = if lambda >= 1.0 {
            return_pin(&[lambda], LAMBDA_RETURN_RATE)
        } else {
            st.s
        };
        let hm = self.h_system_at(&st.z);
        let v = self.outer_command(t, &st.z);
        let hs = HomotopyState {
            lambda_derivs: vec![lambda],
            s: st.s,
            mode: st.mode,
            alpha: st.alpha,
        };
        let out = hybrid_step(
            &hm,
            &hs,
            pin,
            &v,
            self.cfg.u_max,
            self.cfg.alpha,
            self.cfg.rank_tol,
        )
        .map_err(fail)?;
        let law = match out.branch {
            Some(branch) => StepLaw::Tangent {
                branch,
                s: out.state.s,
            },
            None => StepLaw::HFblin { pin },
        };
        let (refs0, lambda_top0, mode, saturated, s_next, alpha_next) = (
            out.u,
            out.lambda_top,
            out.state.mode,
            out.saturated,
            out.state.s,
            out.state.alpha,
        );

        // Recorded sample: true outputs, applied voltages, the residual
        // against the setpoint-shifted true output.
        let y_true = self.true_output(&st.z);
        let setpoint = self.cfg.setpoint_vector(t);
        let chain = self
            .chain_template
            .with_state(st.z.rows(MZ_ETA, 2).into_owned());
        let h = homotopy_residual(&(&y_true - &setpoint), &chain.output(), lambda);
        let voltages0 = self.stage_voltages(&refs0, &st.z, &noise);
        let row = TraceRow {
            t,
            x: st.z.rows(0, 4).iter().copied().collect(),
            y: y_true.iter().copied().collect(),
            u: voltages0.iter().copied().collect(),
            lambda,
            lambda_dot: lambda_top0,
            h: h.iter().copied().collect(),
            mode,
            saturated,
        };

        let err: RefCell<Option<ControlError>> = RefCell::new(None);
        let rate = |tt: f64, zz: &DVector<f64>| self.stage_rate(&law, tt, zz, &noise, &err);
        let mut z_next = rk4_step(&rate, &st.z, t, dt)?;
        if let Some(error) = err.into_inner() {
            return Err(SimError::Control { t, error });
        }
        z_next[MZ_LAMBDA] = z_next[MZ_LAMBDA].clamp(0.0, 1.0 + self.cfg.lambda_slack);
        z_next[MZ_PHI_HAT] = z_next[MZ_PHI_HAT].max(0.0);
        Ok((
            row,
            LoopState {
                z: z_next,
                s: s_next,
                mode,
                alpha: alpha_next,
            },
        ))
    }
}

// ---------------------------------------------------------------------
// Public entry point
// ---------------------------------------------------------------------

/// What to simulate: a plant under the direct homotopy loop, or the
/// induction-motor cascade.
pub enum PlantSetup {
    Direct(AffineSystem),
    Motor {
        params: MotorParams,
        drop_load_term: bool,
        /// Time the load torque engages (0 = loaded from the start).
        load_start: f64,
        gains: RegulatorGains,
    },
}

/// Why [`run_closed_loop`] did not return a trace.
#[derive(Debug)]
pub enum RunError {
    /// The configuration was rejected before the run started.
    Config(String),
    /// The run started and failed; the partial trace is attached.
    Failed(Box<SimFailure>),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            RunError::Failed(failure) => write!(f, "{failure}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Builds the matching loop driver and runs it to `t_end`.
pub fn run_closed_loop(setup: PlantSetup, cfg: &SimConfig) -> Result<SimOutcome, RunError> {
    match setup {
        PlantSetup::Direct(sys) => {
            let lp = DirectLoop::new(sys, cfg.clone()).map_err(RunError::Config)?;
            drive(&lp, cfg).map_err(RunError::Failed)
        }
        PlantSetup::Motor {
            params,
            drop_load_term,
            load_start,
            gains,
        } => {
            let lp = MotorLoop::new(params, drop_load_term, load_start, gains, cfg.clone())
                .map_err(RunError::Config)?;
            drive(&lp, cfg).map_err(RunError::Failed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants;

    #[test]
    fn rk4_single_step_oracle() {
        // x' = x from 1: one step of 0.1 lands within 1e-7 of e^0.1.
        let rate = |_t: f64, x: &DVector<f64>| x.clone();
        let x = DVector::from_row_slice(&[1.0]);
        let next = rk4_step(&rate, &x, 0.0, 0.1).unwrap();
        assert!((next[0] - 0.1_f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_detects_nonfinite() {
        let rate = |_t: f64, _x: &DVector<f64>| DVector::from_row_slice(&[f64::NAN]);
        let x = DVector::from_row_slice(&[1.0]);
        match rk4_step(&rate, &x, 0.25, 0.1) {
            Err(SimError::NonFinite { t, .. }) => assert_eq!(t, 0.25),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Global error on x' = x over [0, 1] shrinks ~16x per halving.
        let rate = |_t: f64, x: &DVector<f64>| x.clone();
        let run = |dt: f64| {
            let mut x = DVector::from_row_slice(&[1.0]);
            let steps = (1.0 / dt).round() as usize;
            for k in 0..steps {
                x = rk4_step(&rate, &x, k as f64 * dt, dt).unwrap();
            }
            (x[0] - 1.0_f64.exp()).abs()
        };
        let (e1, e2) = (run(0.01), run(0.005));
        let ratio = e1 / e2;
        assert!((14.0..18.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn profile_interpolates() {
        let p = Profile::new(vec![(0.0, 0.0), (2.0, 100.0), (6.0, 100.0)]).unwrap();
        assert_eq!(p.value_at(-1.0), 0.0);
        assert_eq!(p.value_at(1.0), 50.0);
        assert_eq!(p.value_at(2.0), 100.0);
        assert_eq!(p.value_at(10.0), 100.0);
        assert!(Profile::new(vec![]).is_err());
        assert!(Profile::new(vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
    }

    fn scalar_cfg(controller: ControllerKind, t_end: f64) -> SimConfig {
        SimConfig {
            t_end,
            controller,
            x0: vec![1.0],
            setpoints: vec![Profile::constant(0.0)],
            ..SimConfig::default()
        }
    }

    #[test]
    fn scalar_hybrid_reaches_setpoint() {
        let lp = DirectLoop::new(
            plants::scalar_cubic(),
            scalar_cfg(ControllerKind::Hybrid, 8.0),
        )
        .unwrap();
        let out = drive(&lp, lp.config()).unwrap();
        let last = out.trace.final_row();
        assert!((last.lambda - 1.0).abs() < 0.06, "lambda = {}", last.lambda);
        assert!(last.y[0].abs() < 1e-2, "y(t_end) = {}", last.y[0]);
        assert!(out.trace.max_input() <= lp.config().u_max * (1.0 + 1e-9));
    }

    #[test]
    fn scalar_fblin_gets_stuck_at_fold() {
        let lp = DirectLoop::new(
            plants::scalar_cubic(),
            scalar_cfg(ControllerKind::Fblin, 4.0),
        )
        .unwrap();
        let out = drive(&lp, lp.config()).unwrap();
        assert!(
            out.trace.any_saturated(),
            "the bound must engage at the fold"
        );
        let last = out.trace.final_row();
        assert!(
            last.y[0].abs() >= 1e-2,
            "plain feedback linearization must miss the setpoint, y = {}",
            last.y[0]
        );
    }

    #[test]
    fn toy_hybrid_conserves_residual() {
        let cfg = SimConfig {
            t_end: 10.0,
            controller: ControllerKind::Hybrid,
            x0: vec![1.0, 1.0],
            setpoints: vec![Profile::constant(0.0), Profile::constant(0.0)],
            ..SimConfig::default()
        };
        let lp = DirectLoop::new(plants::mimo_toy(), cfg).unwrap();
        let out = drive(&lp, lp.config()).unwrap();
        assert!(
            out.trace.max_residual() < 1e-3,
            "max |H| = {}",
            out.trace.max_residual()
        );
        let last = out.trace.final_row();
        assert!(last.y[0].abs() < 1e-2 && last.y[1].abs() < 1e-2);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = SimConfig {
            t_end: 0.2,
            noise_variance: 0.005,
            x0: vec![0.0; 4],
            setpoints: vec![
                Profile::constant(0.0961),
                Profile::new(vec![(0.0, 0.0), (2.0, 100.0)]).unwrap(),
            ],
            ..SimConfig::default()
        };
        let mk = || {
            MotorLoop::new(
                MotorParams::table(),
                true,
                3.0,
                RegulatorGains::default(),
                cfg.clone(),
            )
            .unwrap()
        };
        let a = drive(&mk(), &cfg).unwrap();
        let b = drive(&mk(), &cfg).unwrap();
        assert_eq!(a.trace.rows.len(), b.trace.rows.len());
        for (ra, rb) in a.trace.rows.iter().zip(&b.trace.rows) {
            assert!(ra
                .x
                .iter()
                .zip(&rb.x)
                .all(|(p, q)| p.to_bits() == q.to_bits()));
            assert!(ra
                .u
                .iter()
                .zip(&rb.u)
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let c_cfg = SimConfig { seed: 1, ..cfg };
        let c = drive(
            &MotorLoop::new(
                MotorParams::table(),
                true,
                3.0,
                RegulatorGains::default(),
                c_cfg.clone(),
            )
            .unwrap(),
            &c_cfg,
        )
        .unwrap();
        assert!(
            a.trace
                .rows
                .iter()
                .zip(&c.trace.rows)
                .any(|(p, q)| p.x != q.x),
            "different seeds must differ"
        );
    }

    #[test]
    fn motor_flux_builds_from_standstill() {
        let cfg = SimConfig {
            t_end: 0.5,
            x0: vec![0.0; 4],
            setpoints: vec![
                Profile::constant(0.0961),
                Profile::new(vec![(0.0, 0.0), (2.0, 100.0)]).unwrap(),
            ],
            ..SimConfig::default()
        };
        let lp = MotorLoop::new(
            MotorParams::table(),
            true,
            3.0,
            RegulatorGains::default(),
            cfg.clone(),
        )
        .unwrap();
        let out = drive(&lp, &cfg).unwrap();
        let last = out.trace.final_row();
        assert!(
            last.x[1] > 0.1,
            "flux must be building, phi_r = {}",
            last.x[1]
        );
        assert!(
            last.lambda > 0.4,
            "parameter must advance, lambda = {}",
            last.lambda
        );
        assert!(out
            .trace
            .rows
            .iter()
            .all(|r| r.u.iter().all(|v| v.is_finite())));
    }
}
