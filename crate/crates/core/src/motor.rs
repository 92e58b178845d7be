//! Current-fed induction motor benchmark in the rotor-flux frame.
//!
//! States are electrical rotor speed `omega`, rotor flux magnitude
//! `phi_r`, and the stator current components `i_sd` (flux axis) and
//! `i_sq` (torque axis); inputs are the stator voltages `V_sd`, `V_sq`.
//! The synchronous speed carries the slip term
//! `omega_s = omega + M_sr i_sq / (tau_r phi_r)`, regularized below
//! [`MotorParams::phi_floor`] so startup from zero flux stays finite.
//!
//! Two views of the machine feed the controller cascade:
//!
//! * [`full_system`] — the four-state voltage-input plant with outputs
//!   `(omega, phi_r^2)`, both of relative degree two;
//! * [`reduced_control_model`] — the two-state outer-loop design model
//!   that treats the stator currents as inputs, with outputs
//!   `(phi_r^2, omega / p)` of relative degree one, on which the homotopy
//!   controller runs.
//!
//! [`current_decouple`] closes the gap between them: it cancels the
//! cross-coupling and back-EMF terms of the current dynamics so the inner
//! PI loops see two independent first-order channels.

use crate::homotopy::{
    advance_homotopy_state, assemble_h_system, hybrid_step, return_pin, ControlError,
    HomotopyState, ReferenceChain, LAMBDA_RETURN_RATE,
};
use crate::plant::{AffineSystem, OperatingBox};
use crate::regulators::PiRegulator;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Default regularization floor for the rotor flux in the slip term.
pub const DEFAULT_PHI_FLOOR: f64 = 1e-3;

/// Nameplate and equivalent-circuit parameters of the machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorParams {
    /// Rated power [W] (informational; not used by the dynamics).
    pub rated_power: f64,
    /// Mutual inductance [H].
    pub msr: f64,
    /// Stator resistance [Ohm].
    pub rs: f64,
    /// Rotor resistance [Ohm].
    pub rr: f64,
    /// Stator inductance [H].
    pub ls: f64,
    /// Rotor inductance [H].
    pub lr: f64,
    /// Rotor inertia [kg m^2].
    pub inertia: f64,
    /// Pole-pair count.
    pub pole_pairs: f64,
    /// Load torque [N m].
    pub load_torque: f64,
    /// Flux floor for slip regularization [Wb].
    pub phi_floor: f64,
}

impl MotorParams {
    /// The 4 kW benchmark machine.
    pub fn table() -> Self {
        MotorParams {
            rated_power: 4000.0,
            msr: 0.175,
            rs: 1.2,
            rr: 0.873,
            ls: 0.195,
            lr: 0.195,
            inertia: 0.013,
            pole_pairs: 2.0,
            load_torque: 2.0,
            phi_floor: DEFAULT_PHI_FLOOR,
        }
    }

    /// First violated nameplate constraint, if any.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("msr", self.msr),
            ("rs", self.rs),
            ("rr", self.rr),
            ("ls", self.ls),
            ("lr", self.lr),
            ("inertia", self.inertia),
            ("pole_pairs", self.pole_pairs),
            ("phi_floor", self.phi_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("motor parameter {name} = {v} must be positive"));
            }
        }
        if !self.load_torque.is_finite() {
            return Err(format!("load_torque = {} must be finite", self.load_torque));
        }
        if !(self.msr * self.msr < self.ls * self.lr) {
            return Err("mutual inductance must leave positive leakage".into());
        }
        Ok(())
    }

    fn assert_valid(&self) {
        if let Err(problem) = self.validate() {
            panic!("{problem}");
        }
    }
}

/// Quantities derived from [`MotorParams`] that the model equations use
/// directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Rotor time constant `L_r / R_r` [s].
    pub tau_r: f64,
    /// Stator transient inductance `L_s - M_sr^2 / L_r` [H].
    pub l1: f64,
    /// Equivalent resistance `R_s + R_r (M_sr / L_r)^2` [Ohm].
    pub r1: f64,
    /// Stator transient time constant `L_1 / R_1` [s].
    pub tau_1: f64,
    /// Torque gain `p^2 M_sr / (J L_r)`.
    pub mu: f64,
    /// Back-EMF gain `M_sr / (L_r L_1)`.
    pub beta: f64,
}

/// Derives the equivalent-circuit constants from the nameplate values.
pub fn derive_params(mp: &MotorParams) -> DerivedParams {
    mp.assert_valid();
    let tau_r = mp.lr / mp.rr;
    let l1 = mp.ls - mp.msr * mp.msr / mp.lr;
    let r1 = mp.rs + mp.rr * (mp.msr / mp.lr).powi(2);
    DerivedParams {
        tau_r,
        l1,
        r1,
        tau_1: l1 / r1,
        mu: mp.pole_pairs * mp.pole_pairs * mp.msr / (mp.inertia * mp.lr),
        beta: mp.msr / (mp.lr * l1),
    }
}

/// Structured view of the four machine states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorState {
    pub omega: f64,
    pub phi_r: f64,
    pub i_sd: f64,
    pub i_sq: f64,
}

impl MotorState {
    pub fn zero() -> Self {
        MotorState {
            omega: 0.0,
            phi_r: 0.0,
            i_sd: 0.0,
            i_sq: 0.0,
        }
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        assert_eq!(x.len(), 4, "motor state has four components");
        MotorState {
            omega: x[0],
            phi_r: x[1],
            i_sd: x[2],
            i_sq: x[3],
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[self.omega, self.phi_r, self.i_sd, self.i_sq])
    }
}

/// Synchronous speed `omega + M_sr i_sq / (tau_r max(phi_r, floor))`.
pub fn sync_speed(s: &MotorState, mp: &MotorParams, dp: &DerivedParams) -> f64 {
    s.omega + mp.msr * s.i_sq / (dp.tau_r * s.phi_r.max(mp.phi_floor))
}

/// Machine dynamics: state rate for stator voltages `u = (V_sd, V_sq)`.
pub fn motor_dynamics(
    x: &DVector<f64>,
    u: &DVector<f64>,
    mp: &MotorParams,
    dp: &DerivedParams,
) -> DVector<f64> {
    assert_eq!(u.len(), 2);
    let s = MotorState::from_vector(x);
    let w_s = sync_speed(&s, mp, dp);
    DVector::from_row_slice(&[
        dp.mu * s.phi_r * s.i_sq - mp.pole_pairs * mp.load_torque / mp.inertia,
        (-s.phi_r + mp.msr * s.i_sd) / dp.tau_r,
        dp.beta * s.phi_r / dp.tau_r - s.i_sd / dp.tau_1 + w_s * s.i_sq + u[0] / dp.l1,
        -dp.beta * s.omega * s.phi_r - s.i_sq / dp.tau_1 - w_s * s.i_sd + u[1] / dp.l1,
    ])
}

/// Electromagnetic torque `p (M_sr / L_r) i_sq phi_r` [N m].
pub fn electromagnetic_torque(s: &MotorState, mp: &MotorParams) -> f64 {
    mp.pole_pairs * (mp.msr / mp.lr) * s.i_sq * s.phi_r
}

/// Inverts the current dynamics' cross-coupling: given desired current
/// rates `nu = (nu_sd, nu_sq)` (up to the machine's own first-order decay)
/// and the controller's view of the state (measured currents, measured
/// speed, estimated flux), returns the stator voltages
///
/// ```text
/// V_sd = L_1 (nu_sd - omega_s i_sq),
/// V_sq = L_1 (nu_sq + beta omega phi + omega_s i_sd),
/// ```
///
/// so the closed current dynamics become
/// `i_sd' = nu_sd + beta phi / tau_r - i_sd / tau_1` and
/// `i_sq' = nu_sq - i_sq / tau_1` when the view matches the plant.
pub fn current_decouple(
    nu: &DVector<f64>,
    view: &MotorState,
    mp: &MotorParams,
    dp: &DerivedParams,
) -> DVector<f64> {
    assert_eq!(nu.len(), 2);
    let w_s = sync_speed(view, mp, dp);
    DVector::from_row_slice(&[
        dp.l1 * (nu[0] - w_s * view.i_sq),
        dp.l1 * (nu[1] + dp.beta * view.omega * view.phi_r + w_s * view.i_sd),
    ])
}

/// Time derivative of the rotor-flux estimate driven by the measured
/// flux-axis current: `phi_hat' = (-phi_hat + M_sr i_sd) / tau_r` (a copy
/// of the machine's own flux equation).
pub fn flux_observer_rate(
    phi_hat: f64,
    i_sd_meas: f64,
    mp: &MotorParams,
    dp: &DerivedParams,
) -> f64 {
    (-phi_hat + mp.msr * i_sd_meas) / dp.tau_r
}

/// One exact discrete step of the flux observer (the scalar linear ODE has
/// a closed-form solution), clamped at zero from below.
pub fn flux_observer_step(
    phi_hat: f64,
    i_sd_meas: f64,
    dt: f64,
    mp: &MotorParams,
    dp: &DerivedParams,
) -> f64 {
    let target = mp.msr * i_sd_meas;
    (target + (phi_hat - target) * (-dt / dp.tau_r).exp()).max(0.0)
}

/// Second derivatives of the full-machine outputs `(omega, phi_r^2)` as an
/// affine function of the stator voltages:
/// `d^2/dt^2 (omega, phi_r^2) = b + A (V_sd, V_sq)`.
///
/// Both diagonal entries of `A` vanish; the off-diagonal gains are
/// `A_12 = mu phi_r / L_1` (speed row) and
/// `A_21 = 2 M_sr phi_r / (tau_r L_1)` (flux row), so the machine loses
/// input authority as the flux collapses.
pub fn second_derivative_model(
    s: &MotorState,
    mp: &MotorParams,
    dp: &DerivedParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let w_s = sync_speed(s, mp, dp);
    let (phi, isd, isq, omega) = (s.phi_r, s.i_sd, s.i_sq, s.omega);
    let b1 = -dp.mu * phi * (isq / dp.tau_1 + isq / dp.tau_r + w_s * isd)
        + dp.mu * mp.msr * isd * isq / dp.tau_r
        - dp.mu * dp.beta * omega * phi * phi;
    let b2 = (2.0 / (dp.tau_r * dp.tau_r)) * (2.0 + dp.beta * mp.msr) * phi * phi
        - (3.0 * mp.msr / dp.tau_r + mp.msr / dp.tau_1) * (2.0 * isd * phi / dp.tau_r)
        + 2.0 * mp.msr * w_s * isq * phi / dp.tau_r
        + 2.0 * mp.msr * mp.msr * isd * isd / (dp.tau_r * dp.tau_r);
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            0.0,
            dp.mu * phi / dp.l1,
            2.0 * mp.msr * phi / (dp.tau_r * dp.l1),
            0.0,
        ],
    );
    (a, DVector::from_row_slice(&[b1, b2]))
}

/// The four-state voltage-input machine as an affine control system with
/// outputs `(omega, phi_r^2)`, each of relative degree two.
pub fn full_system(mp: &MotorParams) -> AffineSystem {
    let mp = *mp;
    let dp = derive_params(&mp);
    let bbox = OperatingBox::new(
        vec![-400.0, 0.02, -30.0, -30.0],
        vec![400.0, 0.8, 30.0, 30.0],
    )
    .expect("static box");
    let f = Arc::new(move |x: &DVector<f64>| motor_dynamics(x, &DVector::zeros(2), &mp, &dp));
    let g_sd =
        Arc::new(move |_x: &DVector<f64>| DVector::from_row_slice(&[0.0, 0.0, 1.0 / dp.l1, 0.0]));
    let g_sq =
        Arc::new(move |_x: &DVector<f64>| DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0 / dp.l1]));
    let h_speed = Arc::new(|x: &DVector<f64>| x[0]);
    let h_flux_sq = Arc::new(|x: &DVector<f64>| x[1] * x[1]);
    let sys = AffineSystem::new(
        "induction_motor",
        f,
        vec![g_sd, g_sq],
        vec![h_speed, h_flux_sq],
        vec![2, 2],
        bbox,
    )
    .expect("motor model is well-formed");
    let grad_speed_0 = Arc::new(|_x: &DVector<f64>| DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]));
    let grad_speed_1 = Arc::new(move |x: &DVector<f64>| {
        DVector::from_row_slice(&[0.0, dp.mu * x[3], 0.0, dp.mu * x[1]])
    });
    let grad_flux_0 =
        Arc::new(|x: &DVector<f64>| DVector::from_row_slice(&[0.0, 2.0 * x[1], 0.0, 0.0]));
    let grad_flux_1 = {
        let (msr, tau_r) = (mp.msr, dp.tau_r);
        Arc::new(move |x: &DVector<f64>| {
            DVector::from_row_slice(&[
                0.0,
                (-4.0 * x[1] + 2.0 * msr * x[2]) / tau_r,
                2.0 * msr * x[1] / tau_r,
                0.0,
            ])
        })
    };
    sys.with_gradient_hooks(vec![
        vec![grad_speed_0, grad_speed_1],
        vec![grad_flux_0, grad_flux_1],
    ])
    .expect("hook shapes match")
}

/// The two-state outer-loop design model: states `(omega, phi_r)`, inputs
/// `(i_sd, i_sq)`, outputs `(phi_r^2, omega / p)`, both of relative degree
/// one.  With `drop_load_term` (the default for controller design) the
/// load torque is left to the outer integrators as a disturbance.
pub fn reduced_control_model(mp: &MotorParams, drop_load_term: bool) -> AffineSystem {
    let mp = *mp;
    let dp = derive_params(&mp);
    let bbox = OperatingBox::new(vec![-400.0, 0.02], vec![400.0, 0.8]).expect("static box");
    let load_rate = if drop_load_term {
        0.0
    } else {
        -mp.pole_pairs * mp.load_torque / mp.inertia
    };
    let f = {
        let tau_r = dp.tau_r;
        Arc::new(move |x: &DVector<f64>| DVector::from_row_slice(&[load_rate, -x[1] / tau_r]))
    };
    let g_isd = {
        let (msr, tau_r) = (mp.msr, dp.tau_r);
        Arc::new(move |_x: &DVector<f64>| DVector::from_row_slice(&[0.0, msr / tau_r]))
    };
    let g_isq = {
        let mu = dp.mu;
        Arc::new(move |x: &DVector<f64>| DVector::from_row_slice(&[mu * x[1], 0.0]))
    };
    let h_flux_sq = Arc::new(|x: &DVector<f64>| x[1] * x[1]);
    let h_mech_speed = {
        let p = mp.pole_pairs;
        Arc::new(move |x: &DVector<f64>| x[0] / p)
    };
    let sys = AffineSystem::new(
        "induction_motor_reduced",
        f,
        vec![g_isd, g_isq],
        vec![h_flux_sq, h_mech_speed],
        vec![1, 1],
        bbox,
    )
    .expect("reduced motor model is well-formed");
    let grad_flux = Arc::new(|x: &DVector<f64>| DVector::from_row_slice(&[0.0, 2.0 * x[1]]));
    let grad_speed = {
        let p = mp.pole_pairs;
        Arc::new(move |_x: &DVector<f64>| DVector::from_row_slice(&[1.0 / p, 0.0]))
    };
    sys.with_gradient_hooks(vec![vec![grad_flux], vec![grad_speed]])
        .expect("hook shapes match")
}

/// Configuration of the outer homotopy loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterLoopConfig {
    /// Current-reference bound handed to the hybrid law [A].
    pub i_max: f64,
    /// Continuation scale for unsaturated steps.
    pub alpha: f64,
    /// Rank tolerance for the tangent solves.
    pub rank_tol: f64,
    /// Overshoot allowance on the homotopy parameter.
    pub lambda_slack: f64,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        OuterLoopConfig {
            i_max: 20.0,
            alpha: crate::homotopy::DEFAULT_ALPHA,
            rank_tol: crate::tangent::DEFAULT_RANK_TOL,
            lambda_slack: crate::homotopy::DEFAULT_LAMBDA_SLACK,
        }
    }
}

/// Output of one outer-loop sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterLoopStep {
    /// Current references `(i_sd_ref, i_sq_ref)` for the inner loops.
    pub current_refs: DVector<f64>,
    /// Commanded top derivative of the homotopy parameter.
    pub lambda_top: f64,
    /// Updated homotopy switching state.
    pub homotopy: HomotopyState,
    /// Updated reference chain.
    pub chain: ReferenceChain,
    /// Whether the hybrid law's saturation fallback fired.
    pub saturated: bool,
}

/// One discrete sample of the outer loop: PI regulators turn the tracking
/// errors in `(phi_r^2, omega / p)` into an outer command `v`, the hybrid
/// homotopy law turns `v` into bounded current references, and the
/// reference chain and parameter chain advance one sample.  Once the
/// parameter has reached one, the top derivative is pinned to zero and the
/// loop runs as plain feedback linearization of the finished system.
#[allow(clippy::too_many_arguments)]
pub fn outer_loop_control(
    reduced: &AffineSystem,
    y_ref: &DVector<f64>,
    y_meas: &DVector<f64>,
    x_red: &DVector<f64>,
    flux_pi: &mut PiRegulator,
    speed_pi: &mut PiRegulator,
    chain: &ReferenceChain,
    hs: &HomotopyState,
    cfg: &OuterLoopConfig,
    dt: f64,
) -> Result<OuterLoopStep, ControlError> {
    let v = DVector::from_row_slice(&[
        flux_pi.update(y_ref[0] - y_meas[0], dt),
        speed_pi.update(y_ref[1] - y_meas[1], dt),
    ]);
    let hm = assemble_h_system(reduced, x_red, chain, &hs.lambda_derivs);
    // Pin the unit rate until the parameter arrives, then the return law
    // that settles it onto 1; the saturation machinery stays live either
    // way.
    let pin = if hs.lambda() >= 1.0 {
        return_pin(&hs.lambda_derivs, LAMBDA_RETURN_RATE)
    } else {
        hs.s
    };
    let out = hybrid_step(&hm, hs, pin, &v, cfg.i_max, cfg.alpha, cfg.rank_tol)?;
    let (u, lambda_top, state, saturated) = (out.u, out.lambda_top, out.state, out.saturated);
    let next_chain = chain.with_state(chain.state() + chain.rate(&u) * dt);
    let homotopy = advance_homotopy_state(&state, lambda_top, dt, cfg.lambda_slack);
    Ok(OuterLoopStep {
        current_refs: u,
        lambda_top,
        homotopy,
        chain: next_chain,
        saturated,
    })
}
