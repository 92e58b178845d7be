//! Affine control systems `x' = f(x) + sum_i g_i(x) u_i`, `y_j = h_j(x)`
//! with Lie-derivative machinery, decoupling matrices and classical
//! feedback linearization.
//!
//! Systems carry optional analytic gradient hooks for the repeated drift
//! derivatives of each output.  When hooks are present they are used
//! directly; otherwise derivatives fall back to central finite differences
//! with a per-coordinate step `1e-6 * (1 + |x_i|)`.  The numeric path also
//! serves as a cross-validation oracle for hand-derived hook expressions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::sync::Arc;

/// State-to-state map (drift or input vector field).
pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// State-to-scalar map (one output component).
pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// State-to-gradient map (row of a Jacobian, returned as a vector).
pub type GradientField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Which vector field a Lie derivative differentiates along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    /// The drift `f`.
    Drift,
    /// The `i`-th input field `g_i` (zero-based).
    Input(usize),
}

/// Axis-aligned region of state space on which a system declares itself
/// well behaved; construction samples the maps over this box.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl OperatingBox {
    /// A box from per-coordinate `(lower, upper)` bounds; every lower bound
    /// must be strictly below its upper bound.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PlantError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(PlantError::Dimension {
                what: "operating box bounds must be non-empty and equal length",
            });
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(PlantError::Dimension {
                what: "operating box needs finite lower < upper per coordinate",
            });
        }
        Ok(OperatingBox { lower, upper })
    }

    /// State dimension of the box.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Whether `x` lies inside (inclusive) the box.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Uniform sample point inside the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            rng.random_range(self.lower[i]..self.upper[i])
        })
    }
}

/// Errors from system construction and plant-side control operations.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantError {
    /// Mismatched dimensions between the maps, degrees and operating box.
    Dimension { what: &'static str },
    /// Relative degrees must sum to the state dimension.
    DegreeSum { sum: usize, n: usize },
    /// A map produced a non-finite or absurdly large value on the box.
    NotFiniteOnBox { what: String },
    /// The decoupling matrix was numerically singular at the query point.
    SingularDecoupling { cond: f64 },
    /// Probe order exceeding the state dimension.
    BadProbeOrder { max_order: usize, n: usize },
}

impl fmt::Display for PlantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantError::Dimension { what } => write!(f, "dimension error: {what}"),
            PlantError::DegreeSum { sum, n } => {
                write!(f, "relative degrees sum to {sum}, state dimension is {n}")
            }
            PlantError::NotFiniteOnBox { what } => {
                write!(f, "map not finite on operating box: {what}")
            }
            PlantError::SingularDecoupling { cond } => {
                write!(f, "decoupling matrix singular (inverse condition {cond:e})")
            }
            PlantError::BadProbeOrder { max_order, n } => {
                write!(f, "probe order {max_order} exceeds state dimension {n}")
            }
        }
    }
}

impl std::error::Error for PlantError {}

/// An affine-in-control system with declared vector relative degree.
///
/// Invariants established at construction: one input field and one output
/// per channel, relative degrees summing to the state dimension, and all
/// maps finite on a sample of the operating box.
#[derive(Clone)]
pub struct AffineSystem {
    name: String,
    n: usize,
    m: usize,
    f: VectorField,
    g: Vec<VectorField>,
    h: Vec<ScalarField>,
    rel_degrees: Vec<usize>,
    bbox: OperatingBox,
    /// `grad_hooks[j][k]` returns the gradient of the k-fold drift
    /// derivative of output j (k = 0 is the plain output gradient).
    grad_hooks: Vec<Vec<GradientField>>,
}

impl fmt::Debug for AffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("rel_degrees", &self.rel_degrees)
            .field(
                "hooked_orders",
                &self.grad_hooks.iter().map(Vec::len).collect::<Vec<_>>(),
            )
            .finish()
    }
}

/// Step size used for central differences: `1e-6 * (1 + |x_i|)`.
fn fd_step(xi: f64) -> f64 {
    1e-6 * (1.0 + xi.abs())
}

fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(phi: F, x: &DVector<f64>) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        grad[i] = (phi(&xp) - phi(&xm)) / (2.0 * h);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    grad
}

impl AffineSystem {
    /// Builds a system and validates its shape contracts: `g`, `h` and
    /// `rel_degrees` all of length `m`, degrees summing to the box
    /// dimension, and all maps finite on 64 sampled box points.
    pub fn new(
        name: impl Into<String>,
        f: VectorField,
        g: Vec<VectorField>,
        h: Vec<ScalarField>,
        rel_degrees: Vec<usize>,
        bbox: OperatingBox,
    ) -> Result<Self, PlantError> {
        let name = name.into();
        let n = bbox.dim();
        let m = g.len();
        if m == 0 || h.len() != m || rel_degrees.len() != m {
            return Err(PlantError::Dimension {
                what: "g, h and rel_degrees must have one entry per channel",
            });
        }
        if rel_degrees.contains(&0) {
            return Err(PlantError::Dimension {
                what: "relative degrees must be at least 1",
            });
        }
        let sum: usize = rel_degrees.iter().sum();
        if sum != n {
            return Err(PlantError::DegreeSum { sum, n });
        }
        let sys = AffineSystem {
            name,
            n,
            m,
            f,
            g,
            h,
            rel_degrees,
            bbox,
            grad_hooks: Vec::new(),
        };
        sys.check_finite_on_box()?;
        Ok(sys)
    }

    /// Registers analytic gradients of the repeated drift derivatives:
    /// `hooks[j][k]` must return the gradient of the k-fold drift
    /// derivative of output `j`.  At most `rel_degrees[j]` orders per
    /// output are meaningful.
    pub fn with_gradient_hooks(
        mut self,
        hooks: Vec<Vec<GradientField>>,
    ) -> Result<Self, PlantError> {
        if hooks.len() != self.m {
            return Err(PlantError::Dimension {
                what: "one hook list per output required",
            });
        }
        for (j, list) in hooks.iter().enumerate() {
            if list.len() > self.rel_degrees[j] {
                return Err(PlantError::Dimension {
                    what: "more hook orders than the relative degree",
                });
            }
        }
        self.grad_hooks = hooks;
        Ok(self)
    }

    /// Copy of this system with the analytic hooks removed, so every
    /// derivative goes through finite differences (used for oracle
    /// cross-checks).
    pub fn without_hooks(&self) -> AffineSystem {
        let mut sys = self.clone();
        sys.grad_hooks = Vec::new();
        sys
    }

    fn check_finite_on_box(&self) -> Result<(), PlantError> {
        const SAMPLES: usize = 64;
        const HUGE: f64 = 1e15;
        let mut rng = ChaCha8Rng::seed_from_u64(0x0b0c_5a17);
        let ok = |v: f64| v.is_finite() && v.abs() < HUGE;
        for _ in 0..SAMPLES {
            let x = self.bbox.sample(&mut rng);
            let fx = (self.f)(&x);
            if fx.len() != self.n || !fx.iter().all(|v| ok(*v)) {
                return Err(PlantError::NotFiniteOnBox {
                    what: format!("drift of {} at {x:?}", self.name),
                });
            }
            for (i, gi) in self.g.iter().enumerate() {
                let gx = gi(&x);
                if gx.len() != self.n || !gx.iter().all(|v| ok(*v)) {
                    return Err(PlantError::NotFiniteOnBox {
                        what: format!("input field {i} of {} at {x:?}", self.name),
                    });
                }
            }
            for (j, hj) in self.h.iter().enumerate() {
                if !ok(hj(&x)) {
                    return Err(PlantError::NotFiniteOnBox {
                        what: format!("output {j} of {} at {x:?}", self.name),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension.
    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Number of input/output channels.
    pub fn channels(&self) -> usize {
        self.m
    }

    /// Declared vector relative degree.
    pub fn rel_degrees(&self) -> &[usize] {
        &self.rel_degrees
    }

    /// Largest declared relative degree.
    pub fn max_degree(&self) -> usize {
        *self.rel_degrees.iter().max().expect("m >= 1")
    }

    pub fn operating_box(&self) -> &OperatingBox {
        &self.bbox
    }

    /// Drift `f(x)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    /// Input field `g_i(x)`.
    pub fn input_field(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.g[i])(x)
    }

    /// Full state derivative `f(x) + sum_i g_i(x) u_i`.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut dx = (self.f)(x);
        for (i, gi) in self.g.iter().enumerate() {
            dx += gi(x) * u[i];
        }
        dx
    }

    /// Single output component `h_j(x)`.
    pub fn output_component(&self, j: usize, x: &DVector<f64>) -> f64 {
        (self.h[j])(x)
    }

    /// Output vector `h(x)`.
    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.m, |j, _| (self.h[j])(x))
    }

    /// Repeated drift derivative `L_f^k h_j(x)` (the value, not a gradient).
    /// Order 0 is the output itself.
    pub fn drift_derivative(&self, j: usize, order: usize, x: &DVector<f64>) -> f64 {
        if order == 0 {
            return (self.h[j])(x);
        }
        self.drift_derivative_gradient(j, order - 1, x)
            .dot(&(self.f)(x))
    }

    /// Gradient of `L_f^k h_j` at `x`: analytic hook when registered,
    /// central finite differences of the next-lower derivative otherwise.
    fn drift_derivative_gradient(&self, j: usize, k: usize, x: &DVector<f64>) -> DVector<f64> {
        if let Some(hook) = self.grad_hooks.get(j).and_then(|list| list.get(k)) {
            return hook(x);
        }
        fd_gradient(|p| self.drift_derivative(j, k, p), x)
    }

    /// Lie derivative `L_field L_f^(order-1) h_j(x)`; order 0 returns
    /// `h_j(x)`.  Uses analytic hooks as deep as they are registered.
    pub fn lie_derivative(&self, field: Field, j: usize, x: &DVector<f64>, order: usize) -> f64 {
        if order == 0 {
            return (self.h[j])(x);
        }
        let grad = self.drift_derivative_gradient(j, order - 1, x);
        let dir = match field {
            Field::Drift => (self.f)(x),
            Field::Input(i) => (self.g[i])(x),
        };
        grad.dot(&dir)
    }

    /// Same Lie derivative with the outermost gradient forced through
    /// finite differences, regardless of registered hooks.  Inner
    /// derivatives still use hooks where available, so this is a one-level
    /// numeric check of the outermost analytic expression.
    pub fn lie_derivative_numeric(
        &self,
        field: Field,
        j: usize,
        x: &DVector<f64>,
        order: usize,
    ) -> f64 {
        if order == 0 {
            return (self.h[j])(x);
        }
        let grad = fd_gradient(|p| self.drift_derivative(j, order - 1, p), x);
        let dir = match field {
            Field::Drift => (self.f)(x),
            Field::Input(i) => (self.g[i])(x),
        };
        grad.dot(&dir)
    }

    /// Decoupling matrix and drift vector at `x`:
    /// `A[j][i] = L_{g_i} L_f^(r_j - 1) h_j`, `B[j] = L_f^(r_j) h_j`.
    pub fn decoupling_matrix(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.m, self.m);
        let mut b = DVector::zeros(self.m);
        for j in 0..self.m {
            let r = self.rel_degrees[j];
            // One gradient evaluation serves the whole row and the drift.
            let grad = self.drift_derivative_gradient(j, r - 1, x);
            for i in 0..self.m {
                a[(j, i)] = grad.dot(&(self.g[i])(x));
            }
            b[j] = grad.dot(&(self.f)(x));
        }
        (a, b)
    }

    /// Classical feedback linearization: solves `A(x) u = v - B(x)`.
    ///
    /// Fails with [`PlantError::SingularDecoupling`] when the ratio of the
    /// smallest to largest singular value of `A(x)` is at or below
    /// `rank_tol` (condition number at or above `1/rank_tol`).
    pub fn feedback_linearize_input(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        rank_tol: f64,
    ) -> Result<DVector<f64>, PlantError> {
        let (a, b) = self.decoupling_matrix(x);
        solve_conditioned(&a, &(v - b), rank_tol)
    }

    /// Probes the relative degree of each output at `x`: the smallest
    /// order `k <= max_order` at which any input field shows through with
    /// magnitude above `tol`, or the sentinel 0 when none does.
    pub fn relative_degree_probe(
        &self,
        x: &DVector<f64>,
        tol: f64,
        max_order: usize,
    ) -> Result<Vec<usize>, PlantError> {
        if max_order > self.n {
            return Err(PlantError::BadProbeOrder {
                max_order,
                n: self.n,
            });
        }
        let mut degrees = vec![0usize; self.m];
        for (j, degree) in degrees.iter_mut().enumerate() {
            'orders: for k in 1..=max_order {
                for i in 0..self.m {
                    if self.lie_derivative(Field::Input(i), j, x, k).abs() > tol {
                        *degree = k;
                        break 'orders;
                    }
                }
            }
        }
        Ok(degrees)
    }
}

/// Solves `A u = rhs` after checking that the inverse condition number
/// (smallest over largest singular value) exceeds `rank_tol`.
/// Solves `A u = rhs` behind a conditioning gate: the smallest singular
/// value must exceed `rank_tol * max(smax, 1)`.  The unit floor makes a
/// uniformly tiny matrix count as singular — a decoupling matrix that
/// small has lost input authority even though its singular-value ratio is
/// perfect — so callers are expected to work in sanely scaled units.
/// One- and two-channel systems (the hot path of the closed-loop
/// simulations) use closed forms; larger systems fall back to SVD + LU.
pub(crate) fn solve_conditioned(
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rank_tol: f64,
) -> Result<DVector<f64>, PlantError> {
    let n = a.nrows();
    let (smin, smax) = match n {
        1 => {
            let s = a[(0, 0)].abs();
            (s, s)
        }
        2 => singular_values_2x2(a),
        _ => {
            let sv = crate::tangent::jacobi_svd(a).s;
            (sv.min(), sv.max())
        }
    };
    let inv_cond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(smin.is_finite() && smin > rank_tol * smax.max(1.0)) {
        return Err(PlantError::SingularDecoupling { cond: inv_cond });
    }
    match n {
        1 => Ok(DVector::from_row_slice(&[rhs[0] / a[(0, 0)]])),
        2 => {
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            Ok(DVector::from_row_slice(&[
                (a[(1, 1)] * rhs[0] - a[(0, 1)] * rhs[1]) / det,
                (-a[(1, 0)] * rhs[0] + a[(0, 0)] * rhs[1]) / det,
            ]))
        }
        _ => a
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(PlantError::SingularDecoupling { cond: inv_cond }),
    }
}

/// Singular values `(smallest, largest)` of a 2x2 matrix in closed form.
/// The small value comes from `s1 * s2 = |det|`, which stays accurate
/// where the direct difference formula cancels.
fn singular_values_2x2(a: &DMatrix<f64>) -> (f64, f64) {
    let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let t = p * p + q * q + r * r + s * s;
    let det = p * s - q * r;
    let disc = (t * t - 4.0 * det * det).max(0.0).sqrt();
    let s1 = (0.5 * (t + disc)).max(0.0).sqrt();
    let s2 = if s1 > 0.0 { det.abs() / s1 } else { 0.0 };
    (s2, s1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants;
    use rand::Rng;

    const SQRT3_INV: f64 = 0.577_350_269_189_625_8;

    #[test]
    fn scalar_cubic_lie_values() {
        let sys = plants::scalar_cubic();
        // L_g h = h'(x) * 1 = 3x^2 - 1.
        let at = |x: f64| sys.lie_derivative(Field::Input(0), 0, &DVector::from_row_slice(&[x]), 1);
        assert!((at(1.0) - 2.0).abs() < 1e-12);
        assert!(at(SQRT3_INV).abs() < 1e-12);
        // Order 0 is the output itself: h(0) = 1.
        let h0 = sys.lie_derivative(Field::Drift, 0, &DVector::from_row_slice(&[0.0]), 0);
        assert!((h0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn toy_decoupling_hand_values() {
        let sys = plants::mimo_toy();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        let (a, b) = sys.decoupling_matrix(&x);
        let g22 = 4.0 * (2.0f64).cos() - 2.0 * (2.0f64).sin();
        assert!((a[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(a[(0, 1)].abs() < 1e-12);
        assert!(a[(1, 0)].abs() < 1e-12);
        assert!((a[(1, 1)] - g22).abs() < 1e-12);
        assert!((g22 + 3.4832).abs() < 1e-4, "g22 = {g22}");
        // Drift shows through both channels: B = (g11 * x2^3, g22 * x1^3).
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!((b[1] - g22).abs() < 1e-12);
    }

    #[test]
    fn toy_feedback_linearization() {
        let sys = plants::mimo_toy();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        let v = DVector::zeros(2);
        let u = sys.feedback_linearize_input(&x, &v, 1e-9).unwrap();
        assert!((u[0] + 1.0).abs() < 1e-12);
        assert!((u[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fblin_rejects_singular_decoupling() {
        let sys = plants::scalar_cubic();
        let x = DVector::from_row_slice(&[SQRT3_INV]);
        let v = DVector::from_row_slice(&[1.0]);
        match sys.feedback_linearize_input(&x, &v, 1e-9) {
            Err(PlantError::SingularDecoupling { .. }) => {}
            other => panic!("expected SingularDecoupling, got {other:?}"),
        }
    }

    #[test]
    fn probe_finds_declared_degrees() {
        let sys = plants::mimo_toy();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        assert_eq!(sys.relative_degree_probe(&x, 1e-9, 1).unwrap(), vec![1, 1]);
        // First channel loses input authority where 3 x1^2 - 1 = 0.
        let x = DVector::from_row_slice(&[SQRT3_INV, 1.0]);
        assert_eq!(sys.relative_degree_probe(&x, 1e-9, 1).unwrap(), vec![0, 1]);
    }

    #[test]
    fn probe_rejects_order_beyond_state_dim() {
        let sys = plants::mimo_toy();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        assert!(matches!(
            sys.relative_degree_probe(&x, 1e-9, 3),
            Err(PlantError::BadProbeOrder { .. })
        ));
    }

    /// Analytic hooks against one-level finite differences, and against a
    /// fully numeric (hook-free) recursion at coarser tolerance.
    #[test]
    fn lie_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x11e0_0001);
        for sys in [
            plants::scalar_cubic(),
            plants::mimo_toy(),
            plants::induction_motor(&crate::motor::MotorParams::table()),
        ] {
            let bare = sys.without_hooks();
            for _ in 0..100 {
                let x = sys.operating_box().sample(&mut rng);
                for j in 0..sys.channels() {
                    for order in 1..=sys.rel_degrees()[j] {
                        for field in std::iter::once(Field::Drift)
                            .chain((0..sys.channels()).map(Field::Input))
                        {
                            let analytic = sys.lie_derivative(field, j, &x, order);
                            let numeric = sys.lie_derivative_numeric(field, j, &x, order);
                            let scale = analytic.abs().max(1.0);
                            assert!(
                                (analytic - numeric).abs() <= 1e-5 * scale,
                                "{}: output {j} order {order} field {field:?}: \
                                 analytic {analytic:e} vs numeric {numeric:e}",
                                sys.name()
                            );
                            // Nested central differences lose ~3 digits on
                            // the motor's second derivatives (coefficients
                            // of order 1e3); this guards structure, not
                            // precision.
                            let blind = bare.lie_derivative(field, j, &x, order);
                            assert!(
                                (analytic - blind).abs() <= 5e-3 * scale,
                                "{}: hook-free recursion disagrees: {analytic:e} vs {blind:e}",
                                sys.name()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn construction_validates_degree_sum() {
        let f: VectorField = Arc::new(|_x: &DVector<f64>| DVector::zeros(2));
        let g: Vec<VectorField> = vec![Arc::new(|_x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0, 0.0])
        })];
        let h: Vec<ScalarField> = vec![Arc::new(|x: &DVector<f64>| x[0])];
        let bbox = OperatingBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        match AffineSystem::new("bad", f, g, h, vec![1], bbox) {
            Err(PlantError::DegreeSum { sum: 1, n: 2 }) => {}
            other => panic!("expected DegreeSum, got {other:?}"),
        }
    }

    #[test]
    fn construction_rejects_nonfinite_maps() {
        let f: VectorField = Arc::new(|x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0 / (x[0] - x[0])]) // NaN everywhere
        });
        let g: Vec<VectorField> = vec![Arc::new(|_x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0])
        })];
        let h: Vec<ScalarField> = vec![Arc::new(|x: &DVector<f64>| x[0])];
        let bbox = OperatingBox::new(vec![-1.0], vec![1.0]).unwrap();
        assert!(matches!(
            AffineSystem::new("nan", f, g, h, vec![1], bbox),
            Err(PlantError::NotFiniteOnBox { .. })
        ));
    }

    #[test]
    fn operating_box_validation() {
        assert!(OperatingBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(OperatingBox::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let bbox = OperatingBox::new(vec![-1.0], vec![2.0]).unwrap();
        assert!(bbox.contains(&DVector::from_row_slice(&[0.5])));
        assert!(!bbox.contains(&DVector::from_row_slice(&[3.0])));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            assert!(bbox.contains(&bbox.sample(&mut rng)));
        }
    }

    #[test]
    fn dynamics_is_affine_in_input() {
        // x'(u) - x'(0) must be linear in u.
        let sys = plants::mimo_toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0x11e0_0002);
        for _ in 0..50 {
            let x = sys.operating_box().sample(&mut rng);
            let u1 = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let u2 = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let base = sys.dynamics(&x, &DVector::zeros(2));
            let d1 = sys.dynamics(&x, &u1) - &base;
            let d2 = sys.dynamics(&x, &u2) - &base;
            let dsum = sys.dynamics(&x, &(&u1 + &u2)) - &base;
            assert!((&d1 + &d2 - dsum).norm() < 1e-12);
        }
    }
}
