//! The built-in acceptance suite: ten end-to-end checks covering the
//! kernel algebra, the derivative oracles, and the bundled closed-loop
//! scenarios.  Each check returns a [`CheckReport`] carrying the measured
//! numbers; the CLI `check` subcommand and the `acceptance` integration
//! test both print one line per check.
//!
//! The bundled scenario files are compiled in (`include_str!`) so the
//! suite runs from any working directory.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::homotopy::{
    assemble_h_system, h_feedback_linearize, scaled_tangent_control, ReferenceChain, SatBranch,
};
use crate::plant::{AffineSystem, Field};
use crate::plants;
use crate::plants::{SCALAR_FOLD_HIGH, SCALAR_FOLD_LOW};
use crate::scenario::{csv_string, Scenario};
use crate::sim::{ControllerKind, SimTrace};
use crate::tangent::{
    augmented_tangent, numerical_rank, oriented_nullspace_tangent, pseudoinverse,
};

/// Bundled scenario texts (also shipped as files under `scenarios/`).
pub const SCALAR_SCENARIO: &str = include_str!("../../../scenarios/scalar_cubic.scenario");
pub const TOY_SCENARIO: &str = include_str!("../../../scenarios/mimo_toy.scenario");
pub const MOTOR_SCENARIO: &str = include_str!("../../../scenarios/motor.scenario");

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Measured numbers behind the verdict (one line).
    pub detail: String,
}

impl CheckReport {
    /// The one-line pass/fail rendering used by the test target and the
    /// `check` subcommand.
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2}. {} — {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn report(id: usize, name: &'static str, passed: bool, detail: String) -> CheckReport {
    CheckReport {
        id,
        name,
        passed,
        detail,
    }
}

fn fail(id: usize, name: &'static str, detail: String) -> CheckReport {
    report(id, name, false, detail)
}

// ---------------------------------------------------------------------
// 1. Tangent-kernel invariants
// ---------------------------------------------------------------------

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// 1000 random full-rank `m x (m+1)` systems (`m <= 6`): the oriented
/// kernel tangent satisfies `A tau = 0`, `|tau| = 1`, `det([A; tau']) > 0`,
/// and the augmented solution satisfies `A tau_tilde = B`.  Runtime < 5 s.
pub fn c01_tangent_kernel() -> CheckReport {
    const ID: usize = 1;
    const NAME: &str = "tangent-kernel invariants";
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC01);
    let tol = 1e-9;
    let (mut worst_ker, mut worst_norm, mut worst_aug) = (0.0f64, 0.0f64, 0.0f64);
    let mut det_failures = 0usize;
    for trial in 0..1000 {
        let m = rng.random_range(1..=6);
        let a = loop {
            let cand = random_matrix(&mut rng, m, m + 1);
            if numerical_rank(&cand, tol) == Ok(m) {
                break cand;
            }
        };
        let tau = match oriented_nullspace_tangent(&a, tol) {
            Ok(tau) => tau,
            Err(e) => return fail(ID, NAME, format!("trial {trial}: tangent failed: {e}")),
        };
        let scale = a.norm();
        worst_ker = worst_ker.max((&a * &tau).amax() / scale);
        worst_norm = worst_norm.max((tau.norm() - 1.0).abs());
        let mut square = DMatrix::zeros(m + 1, m + 1);
        square.rows_mut(0, m).copy_from(&a);
        square.row_mut(m).copy_from(&tau.transpose());
        if !(square.determinant() > 0.0) {
            det_failures += 1;
        }
        let b = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let alpha = rng.random_range(0.1..10.0);
        let sol = match augmented_tangent(&a, &b, alpha, tol) {
            Ok(sol) => sol,
            Err(e) => return fail(ID, NAME, format!("trial {trial}: augmented failed: {e}")),
        };
        let resid = (&a * sol.combined() - &b).amax() / b.amax().max(1.0);
        worst_aug = worst_aug.max(resid);
    }
    let secs = t0.elapsed().as_secs_f64();
    let passed = worst_ker <= 1e-8
        && worst_norm <= 1e-10
        && det_failures == 0
        && worst_aug <= 1e-8
        && secs < 5.0;
    report(
        ID,
        NAME,
        passed,
        format!(
            "1000 systems: max|A tau|/|A| = {worst_ker:.2e} (<= 1e-8), \
             max||tau|-1| = {worst_norm:.2e} (<= 1e-10), det>0 failures = {det_failures}, \
             max aug residual = {worst_aug:.2e} (<= 1e-8), {secs:.2} s (< 5 s)"
        ),
    )
}

// ---------------------------------------------------------------------
// 2. Moore-Penrose axioms
// ---------------------------------------------------------------------

/// Random orthogonal factor (QR of a dense random square matrix).
fn random_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    random_matrix(rng, k, k).qr().q()
}

/// 1000 random matrices (square, wide, tall, and rank-deficient) built
/// with controlled spectra so conditioning never masks a real axiom
/// violation: the four Moore-Penrose axioms hold to 1e-8 relative.
/// Runtime < 5 s.
pub fn c02_pseudoinverse_axioms() -> CheckReport {
    const ID: usize = 2;
    const NAME: &str = "Moore-Penrose axioms";
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC02);
    let tol = 1e-9;
    let mut worst = 0.0f64;
    let mut deficient = 0usize;
    for trial in 0..1000 {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(1..=6);
        let full = m.min(n);
        let r = if trial % 2 == 0 && full > 1 {
            deficient += 1;
            rng.random_range(1..full)
        } else {
            full
        };
        // A = U S V' with exact rank r and condition number <= 100.
        let mut sigma = DMatrix::zeros(m, n);
        for i in 0..r {
            sigma[(i, i)] = 10.0f64.powf(rng.random_range(-1.0..1.0));
        }
        let a = random_orthogonal(&mut rng, m) * sigma * random_orthogonal(&mut rng, n).transpose();
        let pinv = match pseudoinverse(&a, tol) {
            Ok(p) => p,
            Err(e) => {
                return fail(
                    ID,
                    NAME,
                    format!("trial {trial}: pseudoinverse failed: {e}"),
                )
            }
        };
        let apa = &a * &pinv * &a;
        let pap = &pinv * &a * &pinv;
        let ap = &a * &pinv;
        let pa = &pinv * &a;
        let scale_a = a.amax().max(1e-300);
        let scale_p = pinv.amax().max(1e-300);
        worst = worst
            .max((&apa - &a).amax() / scale_a)
            .max((&pap - &pinv).amax() / scale_p)
            .max((&ap - ap.transpose()).amax() / ap.amax().max(1.0))
            .max((&pa - pa.transpose()).amax() / pa.amax().max(1.0));
    }
    let secs = t0.elapsed().as_secs_f64();
    let passed = worst <= 1e-8 && secs < 5.0;
    report(
        ID,
        NAME,
        passed,
        format!(
            "1000 matrices ({deficient} rank-deficient): worst axiom residual = {worst:.2e} \
             (<= 1e-8), {secs:.2} s (< 5 s)"
        ),
    )
}

// ---------------------------------------------------------------------
// 3. Lie-derivative oracle
// ---------------------------------------------------------------------

/// Analytic Lie derivatives agree with one-level central finite
/// differences to 1e-5 relative on 100 random points for each bundled
/// plant (drift chains through each relative degree plus the decoupling
/// rows).
pub fn c03_lie_oracle() -> CheckReport {
    const ID: usize = 3;
    const NAME: &str = "Lie-derivative oracle";
    let mp = crate::motor::MotorParams::table();
    let systems: Vec<AffineSystem> = plants::catalog()
        .iter()
        .map(|(name, _)| plants::by_name(name, &mp).expect("catalog plant"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC03);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for sys in &systems {
        for _ in 0..100 {
            let x = sys.operating_box().sample(&mut rng);
            for j in 0..sys.channels() {
                let r = sys.rel_degrees()[j];
                let mut compare = |field: Field, order: usize, tag: &str| {
                    let exact = sys.lie_derivative(field, j, &x, order);
                    let fd = sys.lie_derivative_numeric(field, j, &x, order);
                    let rel = (exact - fd).abs() / exact.abs().max(1.0);
                    if rel > worst {
                        worst = rel;
                        worst_at = format!("{} {tag} output {j}", sys.name());
                    }
                };
                for order in 1..=r {
                    compare(Field::Drift, order, "drift chain");
                }
                for i in 0..sys.channels() {
                    compare(Field::Input(i), r, "decoupling row");
                }
            }
        }
    }
    let passed = worst <= 1e-5;
    report(
        ID,
        NAME,
        passed,
        format!("3 plants x 100 points: worst relative gap = {worst:.2e} (<= 1e-5, at {worst_at})"),
    )
}

// ---------------------------------------------------------------------
// 4. Scalar motivation example
// ---------------------------------------------------------------------

/// Signs of the output's step-to-step changes compressed into runs (with
/// a deadband against settled stretches), plus the output value at each
/// sign flip — the turning points of the trajectory.
fn sign_runs(ys: &[f64], deadband: f64) -> (Vec<i8>, Vec<f64>) {
    let mut runs = Vec::new();
    let mut turns = Vec::new();
    for (i, w) in ys.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d.abs() <= deadband {
            continue;
        }
        let s: i8 = if d > 0.0 { 1 } else { -1 };
        if runs.last() != Some(&s) {
            if !runs.is_empty() {
                turns.push(ys[i]);
            }
            runs.push(s);
        }
    }
    (runs, turns)
}

/// The hybrid loop drives the cubic output from 1 to 0, passing back
/// through both fold values (down, up, down); plain feedback
/// linearization saturates at the first fold and never converges.
pub fn c04_scalar_motivation() -> CheckReport {
    const ID: usize = 4;
    const NAME: &str = "scalar fold traversal";
    let sc = match Scenario::parse_str(SCALAR_SCENARIO) {
        Ok(sc) => sc,
        Err(e) => return fail(ID, NAME, format!("bundled scenario rejected: {e}")),
    };
    let hybrid = match sc.run() {
        Ok(out) => out.trace,
        Err(e) => return fail(ID, NAME, format!("hybrid run failed: {e}")),
    };
    let ys: Vec<f64> = hybrid.rows.iter().map(|r| r.y[0]).collect();
    let y_final = ys.last().copied().unwrap_or(f64::NAN);
    // Judge the traversal up to arrival in the convergence band; the
    // micro-settling afterwards is not part of the fold sequence.
    let arrive = ys.iter().position(|y| y.abs() < 1e-2).unwrap_or(ys.len());
    let (runs, turns) = sign_runs(&ys[..arrive.max(2)], 1e-6);
    // The two turning points sit on the fold values: the output descends
    // to the lower fold, climbs through the upper one, then drops to 0.
    let (turn_low, turn_high) = match turns.as_slice() {
        [a, b, ..] => (*a, *b),
        _ => (f64::NAN, f64::NAN),
    };
    let fold_low_gap = (turn_low - SCALAR_FOLD_LOW).abs();
    let fold_high_gap = (turn_high - SCALAR_FOLD_HIGH).abs();

    let mut fb = sc.clone();
    fb.cfg.controller = ControllerKind::Fblin;
    let (fb_converged, fb_saturated, fb_final) = match fb.run() {
        Ok(out) => {
            let last = out.trace.final_row().y[0];
            (last.abs() < 1e-2, out.trace.any_saturated(), last)
        }
        // Input blow-up aborting the run also counts as failing.
        Err(_) => (false, true, f64::NAN),
    };

    let passed = y_final.abs() < 1e-2
        && runs == [-1, 1, -1]
        && fold_low_gap < 0.02
        && fold_high_gap < 0.02
        && !fb_converged
        && fb_saturated;
    report(
        ID,
        NAME,
        passed,
        format!(
            "hybrid: |y(T)| = {:.1e} (< 1e-2), dy sign runs {:?} (want [-1, 1, -1]), \
             turn points {:.4}/{:.4} vs folds {:.4}/{:.4}; \
             plain fblin: saturated = {fb_saturated}, y(T) = {fb_final:.3} (stuck >= 1e-2)",
            y_final.abs(),
            runs,
            turn_low,
            turn_high,
            SCALAR_FOLD_LOW,
            SCALAR_FOLD_HIGH
        ),
    )
}

// ---------------------------------------------------------------------
// 5. MIMO toy convergence under input bounds
// ---------------------------------------------------------------------

/// Both toy outputs reach the setpoint within the bound |u_i| <= 20, and
/// the on-manifold start keeps the deformation residual below 1e-3.
pub fn c05_mimo_toy() -> CheckReport {
    const ID: usize = 5;
    const NAME: &str = "MIMO toy bounded convergence";
    let sc = match Scenario::parse_str(TOY_SCENARIO) {
        Ok(sc) => sc,
        Err(e) => return fail(ID, NAME, format!("bundled scenario rejected: {e}")),
    };
    let trace = match sc.run() {
        Ok(out) => out.trace,
        Err(e) => return fail(ID, NAME, format!("run failed: {e}")),
    };
    let last = trace.final_row();
    let y_worst = last.y.iter().fold(0.0f64, |acc, y| acc.max(y.abs()));
    let u_peak = trace.max_input();
    let h_peak = trace.max_residual();
    let passed = y_worst < 1e-2 && u_peak <= sc.cfg.u_max + 1e-9 && h_peak < 1e-3;
    report(
        ID,
        NAME,
        passed,
        format!(
            "max|y_i(T)| = {y_worst:.1e} (< 1e-2), peak input = {u_peak:.6} (<= {}), \
             peak residual = {h_peak:.1e} (< 1e-3)",
            sc.cfg.u_max
        ),
    )
}

// ---------------------------------------------------------------------
// 6. Motor benchmark accuracy
// ---------------------------------------------------------------------

fn motor_trace() -> Result<(Scenario, SimTrace, f64), String> {
    let sc = Scenario::parse_str(MOTOR_SCENARIO).map_err(|e| format!("scenario: {e}"))?;
    let t0 = Instant::now();
    let out = sc.run().map_err(|e| format!("run: {e}"))?;
    let secs = t0.elapsed().as_secs_f64();
    Ok((sc, out.trace, secs))
}

/// Ramp to 100 rad/s in 2 s under current noise and a 2 Nm load: the
/// steady-state window t in [4, 6] holds speed within 0.5% and rotor flux
/// within 2%, in under 60 s of wall time.
pub fn c06_motor_accuracy() -> CheckReport {
    const ID: usize = 6;
    const NAME: &str = "motor steady-state accuracy";
    let (sc, trace, secs) = match motor_trace() {
        Ok(t) => t,
        Err(e) => return fail(ID, NAME, e),
    };
    let pole_pairs = sc.motor.as_ref().expect("motor scenario").params.pole_pairs;
    let speed_ref = 100.0;
    let flux_ref = 0.31;
    let mut speed_err = 0.0f64;
    let mut flux_err = 0.0f64;
    for row in trace.rows_between(4.0, 6.0) {
        speed_err = speed_err.max((row.x[0] / pole_pairs - speed_ref).abs());
        flux_err = flux_err.max((row.x[1] - flux_ref).abs());
    }
    let speed_pct = 100.0 * speed_err / speed_ref;
    let flux_pct = 100.0 * flux_err / flux_ref;
    let passed = speed_pct <= 0.5 && flux_pct <= 2.0 && secs < 60.0;
    let better = if speed_pct <= 0.2 {
        " (meets the 0.2% reference figure)"
    } else {
        ""
    };
    report(
        ID,
        NAME,
        passed,
        format!(
            "t in [4,6]: speed error {speed_pct:.3}% (<= 0.5%){better}, \
             flux error {flux_pct:.3}% (<= 2%), runtime {secs:.1} s (< 60 s)"
        ),
    )
}

// ---------------------------------------------------------------------
// 7. Startup through the singular decoupling matrix
// ---------------------------------------------------------------------

/// From zero rotor flux the decoupling matrix is singular; the run must
/// still complete with every trace entry finite.
pub fn c07_startup_singularity() -> CheckReport {
    const ID: usize = 7;
    const NAME: &str = "fluxless startup stays finite";
    let (_, trace, _) = match motor_trace() {
        Ok(t) => t,
        Err(e) => return fail(ID, NAME, e),
    };
    let phi0 = trace.rows[0].x[1];
    let mut bad = 0usize;
    for row in &trace.rows {
        let finite = row.t.is_finite()
            && row.lambda.is_finite()
            && row.lambda_dot.is_finite()
            && row.x.iter().all(|v| v.is_finite())
            && row.y.iter().all(|v| v.is_finite())
            && row.u.iter().all(|v| v.is_finite())
            && row.h.iter().all(|v| v.is_finite());
        if !finite {
            bad += 1;
        }
    }
    let passed = phi0 == 0.0 && bad == 0;
    report(
        ID,
        NAME,
        passed,
        format!(
            "phi_r(0) = {phi0}, {} rows, non-finite rows = {bad}",
            trace.rows.len()
        ),
    )
}

// ---------------------------------------------------------------------
// 8. Law equivalence under the alpha scaling
// ---------------------------------------------------------------------

/// With v = 0 and no saturation, linearizing the deformed system with the
/// parameter rate pinned equals the continuation law rescaled to that
/// rate (the two laws are one family).
pub fn c08_law_equivalence() -> CheckReport {
    const ID: usize = 8;
    const NAME: &str = "control-law equivalence";
    let mp = crate::motor::MotorParams::table();
    let systems = [
        plants::scalar_cubic(),
        plants::mimo_toy(),
        crate::motor::reduced_control_model(&mp, true),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC08);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for sys in &systems {
        let degrees = sys.rel_degrees().to_vec();
        let chain_len: usize = degrees.iter().sum();
        let mut trials = 0;
        while trials < 100 {
            let x = sys.operating_box().sample(&mut rng);
            let chain_state = DVector::from_fn(chain_len, |_, _| rng.random_range(-2.0..2.0));
            let chain = ReferenceChain::zeros(&degrees).with_state(chain_state);
            let mut lch = vec![0.0; degrees.iter().copied().max().unwrap_or(1)];
            lch[0] = rng.random_range(0.05..0.95);
            if lch.len() > 1 {
                lch[1] = 1.0;
            }
            let hm = assemble_h_system(sys, &x, &chain, &lch);
            let pin = if trials % 2 == 0 { 1.0 } else { -1.0 };
            let v = DVector::zeros(sys.channels());
            // Points where the deformed system is singular are the hybrid
            // fallback's territory, not this equivalence's; skip them.
            let Ok(u_pin) = h_feedback_linearize(&hm, pin, &v, 1e-9) else {
                continue;
            };
            let Ok((u_scaled, rate)) =
                scaled_tangent_control(&hm, SatBranch::UnitRate, pin, f64::INFINITY, 1e-9)
            else {
                continue;
            };
            let gap = (&u_pin - &u_scaled).amax() / u_pin.amax().max(1.0);
            worst = worst.max(gap).max((rate - pin).abs());
            trials += 1;
            checked += 1;
        }
    }
    let passed = worst <= 1e-8;
    report(
        ID,
        NAME,
        passed,
        format!("{checked} states across 3 plants: worst relative gap = {worst:.2e} (<= 1e-8)"),
    )
}

// ---------------------------------------------------------------------
// 9. Integrator order
// ---------------------------------------------------------------------

/// RK4 shows fifth-order local error on x' = x, and halving dt cuts the
/// motor cascade's terminal-state deviation by at least 8x on a noiseless
/// smooth window.
pub fn c09_integrator_order() -> CheckReport {
    const ID: usize = 9;
    const NAME: &str = "integrator order";
    // Local error on x' = x for one step.
    let rate = |_t: f64, x: &DVector<f64>| x.clone();
    let local = |dt: f64| -> f64 {
        let x = DVector::from_row_slice(&[1.0]);
        let next = crate::sim::rk4_step(&rate, &x, 0.0, dt).expect("smooth step");
        (next[0] - dt.exp()).abs()
    };
    let e1 = local(0.1);
    let e2 = local(0.05);
    let local_ratio = e1 / e2;

    // Terminal-state Richardson ratio on the noiseless motor cascade.
    let base = match Scenario::parse_str(MOTOR_SCENARIO) {
        Ok(sc) => sc,
        Err(e) => return fail(ID, NAME, format!("scenario: {e}")),
    };
    let run_at = |dt: f64| -> Result<(Vec<f64>, bool), String> {
        let mut sc = base.clone();
        sc.cfg.noise_variance = 0.0;
        sc.cfg.dt = dt;
        sc.cfg.t_end = 0.5;
        let out = sc.run().map_err(|e| format!("dt = {dt}: {e}"))?;
        let smooth = !out.trace.any_saturated() && out.trace.mode_switches() == 0;
        Ok((out.trace.final_row().x.clone(), smooth))
    };
    let (coarse, s1) = match run_at(2e-4) {
        Ok(v) => v,
        Err(e) => return fail(ID, NAME, e),
    };
    let (mid, s2) = match run_at(1e-4) {
        Ok(v) => v,
        Err(e) => return fail(ID, NAME, e),
    };
    let (fine, s3) = match run_at(5e-5) {
        Ok(v) => v,
        Err(e) => return fail(ID, NAME, e),
    };
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let d1 = dist(&coarse, &mid);
    let d2 = dist(&mid, &fine);
    let motor_ratio = d1 / d2.max(1e-300);
    let smooth = s1 && s2 && s3;
    let passed = local_ratio >= 25.0 && motor_ratio >= 8.0 && smooth;
    report(
        ID,
        NAME,
        passed,
        format!(
            "local error ratio at dt 0.1 -> 0.05: {local_ratio:.1} (>= 25, fifth order = 32); \
             motor terminal deviation {d1:.2e} -> {d2:.2e}, ratio {motor_ratio:.1} (>= 8), \
             window smooth = {smooth}"
        ),
    )
}

// ---------------------------------------------------------------------
// 10. Determinism
// ---------------------------------------------------------------------

/// Identical scenario and seed give bit-identical CSV traces (the noisy
/// motor run exercises the seeded generator).
pub fn c10_determinism() -> CheckReport {
    const ID: usize = 10;
    const NAME: &str = "bit-identical reruns";
    let mut compared = 0usize;
    for text in [SCALAR_SCENARIO, TOY_SCENARIO, MOTOR_SCENARIO] {
        let sc = match Scenario::parse_str(text) {
            Ok(sc) => sc,
            Err(e) => return fail(ID, NAME, format!("scenario: {e}")),
        };
        let csv = |sc: &Scenario| -> Result<String, String> {
            Ok(csv_string(&sc.run().map_err(|e| e.to_string())?.trace))
        };
        let (a, b) = match (csv(&sc), csv(&sc)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                return fail(ID, NAME, format!("{}: {e}", sc.plant));
            }
        };
        if a != b {
            return fail(
                ID,
                NAME,
                format!(
                    "{}: reruns differ ({} vs {} bytes)",
                    sc.plant,
                    a.len(),
                    b.len()
                ),
            );
        }
        compared += a.len();
    }
    report(
        ID,
        NAME,
        true,
        format!("3 scenarios rerun: {compared} CSV bytes compared, all identical"),
    )
}

// ---------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------

/// Runs all ten checks in order.
pub fn run_all() -> Vec<CheckReport> {
    vec![
        c01_tangent_kernel(),
        c02_pseudoinverse_axioms(),
        c03_lie_oracle(),
        c04_scalar_motivation(),
        c05_mimo_toy(),
        c06_motor_accuracy(),
        c07_startup_singularity(),
        c08_law_equivalence(),
        c09_integrator_order(),
        c10_determinism(),
    ]
}

/// True when every report passed.
pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

/// The pass/fail table (one line per check plus a summary row).
pub fn render(reports: &[CheckReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.line());
        out.push('\n');
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", reports.len()));
    out
}
