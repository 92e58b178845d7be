//! Built-in benchmark plants.
//!
//! Three systems exercise the controller in increasing order of
//! difficulty: a scalar integrator whose cubic output folds twice, a
//! two-channel polynomial system with the same fold structure plus an
//! oscillatory second channel, and the induction-motor benchmark from
//! [`crate::motor`].

use crate::motor::{self, MotorParams};
use crate::plant::{AffineSystem, OperatingBox};
use nalgebra::DVector;
use std::sync::Arc;

/// Output fold value of the scalar cubic at `x = +1/sqrt(3)`:
/// `1 - 2 sqrt(3) / 9`.
pub const SCALAR_FOLD_LOW: f64 = 0.615_099_820_540_249_9;
/// Output fold value of the scalar cubic at `x = -1/sqrt(3)`:
/// `1 + 2 sqrt(3) / 9`.
pub const SCALAR_FOLD_HIGH: f64 = 1.384_900_179_459_750_1;

/// Scalar integrator `x' = u` with output `h(x) = x^3 - x + 1`.
///
/// The output gradient `3 x^2 - 1` vanishes at `x = ±1/sqrt(3)`, so
/// steering the output through the fold values [`SCALAR_FOLD_LOW`] and
/// [`SCALAR_FOLD_HIGH`] defeats plain feedback linearization.
pub fn scalar_cubic() -> AffineSystem {
    let bbox = OperatingBox::new(vec![-2.0], vec![2.0]).expect("static box");
    let sys = AffineSystem::new(
        "scalar_cubic",
        Arc::new(|_x: &DVector<f64>| DVector::zeros(1)),
        vec![Arc::new(|_x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0])
        })],
        vec![Arc::new(|x: &DVector<f64>| x[0] * x[0] * x[0] - x[0] + 1.0)],
        vec![1],
        bbox,
    )
    .expect("scalar cubic is well-formed");
    sys.with_gradient_hooks(vec![vec![Arc::new(|x: &DVector<f64>| {
        DVector::from_row_slice(&[3.0 * x[0] * x[0] - 1.0])
    })]])
    .expect("hook shapes match")
}

/// Two-channel polynomial system: `x1' = x2^3 + u1`, `x2' = x1^3 + u2`,
/// outputs `h1 = x1^3 - x1 + 1` and `h2 = x2^4 cos(2 x2)`.
///
/// Channel 1 carries the scalar cubic's folds; channel 2 adds an
/// oscillatory output whose gradient `4 x2^3 cos(2 x2) - 2 x2^4 sin(2 x2)`
/// has its own zero set, and the drift couples the channels.
pub fn mimo_toy() -> AffineSystem {
    let bbox = OperatingBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).expect("static box");
    let sys = AffineSystem::new(
        "mimo_toy",
        Arc::new(|x: &DVector<f64>| {
            DVector::from_row_slice(&[x[1] * x[1] * x[1], x[0] * x[0] * x[0]])
        }),
        vec![
            Arc::new(|_x: &DVector<f64>| DVector::from_row_slice(&[1.0, 0.0])),
            Arc::new(|_x: &DVector<f64>| DVector::from_row_slice(&[0.0, 1.0])),
        ],
        vec![
            Arc::new(|x: &DVector<f64>| x[0] * x[0] * x[0] - x[0] + 1.0),
            Arc::new(|x: &DVector<f64>| x[1].powi(4) * (2.0 * x[1]).cos()),
        ],
        vec![1, 1],
        bbox,
    )
    .expect("toy system is well-formed");
    sys.with_gradient_hooks(vec![
        vec![Arc::new(|x: &DVector<f64>| {
            DVector::from_row_slice(&[3.0 * x[0] * x[0] - 1.0, 0.0])
        })],
        vec![Arc::new(|x: &DVector<f64>| {
            let (s, c) = (2.0 * x[1]).sin_cos();
            DVector::from_row_slice(&[0.0, 4.0 * x[1].powi(3) * c - 2.0 * x[1].powi(4) * s])
        })],
    ])
    .expect("hook shapes match")
}

/// The four-state induction-motor benchmark (see [`crate::motor`]).
pub fn induction_motor(mp: &MotorParams) -> AffineSystem {
    motor::full_system(mp)
}

/// Names and one-line descriptions of the built-in plants.
pub fn catalog() -> [(&'static str, &'static str); 3] {
    [
        (
            "scalar_cubic",
            "integrator with cubic output x^3 - x + 1 (folds at x = ±1/sqrt(3))",
        ),
        (
            "mimo_toy",
            "two coupled polynomial channels with fold and oscillatory outputs",
        ),
        (
            "induction_motor",
            "4 kW induction motor; the bundled scenario tracks y1 = squared rotor flux, y2 = mechanical speed",
        ),
    ]
}

/// Builds a built-in plant by catalog name.
pub fn by_name(name: &str, mp: &MotorParams) -> Option<AffineSystem> {
    match name {
        "scalar_cubic" => Some(scalar_cubic()),
        "mimo_toy" => Some(mimo_toy()),
        "induction_motor" => Some(induction_motor(mp)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT3_INV: f64 = 0.577_350_269_189_625_8;

    #[test]
    fn scalar_output_values() {
        let sys = scalar_cubic();
        let h = |x: f64| sys.output_component(0, &DVector::from_row_slice(&[x]));
        assert_eq!(h(1.0), 1.0);
        assert!((h(SQRT3_INV) - SCALAR_FOLD_LOW).abs() < 1e-15);
        assert!((h(-SQRT3_INV) - SCALAR_FOLD_HIGH).abs() < 1e-15);
        // The output gradient vanishes at the folds.
        let (a, _) = sys.decoupling_matrix(&DVector::from_row_slice(&[SQRT3_INV]));
        assert!(a[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn toy_output_gradient_hand_value() {
        let sys = mimo_toy();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        let (a, _) = sys.decoupling_matrix(&x);
        let expect = 4.0 * 2.0_f64.cos() - 2.0 * 2.0_f64.sin();
        assert!((a[(1, 1)] - expect).abs() < 1e-14);
        assert!((expect + 3.483_18).abs() < 1e-4, "hand value check");
    }

    #[test]
    fn catalog_round_trips_by_name() {
        let mp = MotorParams::table();
        for (name, _) in catalog() {
            let sys = by_name(name, &mp).expect("catalog entry resolves");
            assert_eq!(sys.name(), name);
        }
        assert!(by_name("no-such-plant", &mp).is_none());
    }
}
