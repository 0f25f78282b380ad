//! Exact elementary building blocks: the principal logarithm, the affine
//! exponentials E_lambda(z) = lambda e^z, their inverse branches
//! L_lambda^k(z) = Log z - Log lambda + 2k pi i, and finite forward and
//! inverse towers of such maps.
//!
//! Conventions: the principal argument lies in (-pi, pi] and Log 1 = 0;
//! every branch index is relative to this choice. Overflow is a first-class
//! "escaped" outcome (escape is meaningful in dynamics), while a logarithm
//! of (numerical) zero is a domain error: values within one unit of
//! precision of 0 are treated as exact punctures rather than perturbed.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{CoreError, CoreResult};
use crate::numeric::{Eval, EscapeInfo, NumericContract, MAX_EXP_ARG};

/// A finite branch-index vector (k_1, ..., k_n) selecting one logarithm
/// branch per tower stage; stage j applies L_{lambda_j}^{k_j}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPath(pub Vec<i64>);

impl BranchPath {
    pub fn principal(n: usize) -> Self {
        BranchPath(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[i64] {
        &self.0
    }

    /// The shortened path (k_1, ..., k_m).
    pub fn prefix(&self, m: usize) -> BranchPath {
        BranchPath(self.0[..m].to_vec())
    }
}

/// Principal logarithm with arg in (-pi, pi] and Log 1 = 0 exactly.
pub fn principal_log(contract: &NumericContract, z: Complex64) -> CoreResult<Complex64> {
    let r = z.norm();
    if !(r > contract.log_puncture()) {
        return Err(CoreError::LogOfZero);
    }
    let mut theta = z.im.atan2(z.re);
    if theta == -PI {
        theta = PI;
    }
    Ok(Complex64::new(r.ln(), theta))
}

/// E_lambda(z) = lambda e^z, with overflow reported as an escape carrying
/// a log-magnitude estimate instead of an infinity.
pub fn exp_affine(contract: &NumericContract, lambda: Complex64, z: Complex64) -> Eval {
    let log_mag = lambda.norm().ln() + z.re;
    if log_mag > contract.ln_overflow() {
        return Eval::Escaped(EscapeInfo { stage: 0, log_magnitude: log_mag });
    }
    if z.re > MAX_EXP_ARG {
        // e^z alone would overflow even though lambda e^z does not; go polar.
        return Eval::Value(Complex64::from_polar(
            log_mag.exp(),
            crate::numeric::wrap_angle(lambda.arg() + z.im),
        ));
    }
    Eval::Value(lambda * z.exp())
}

/// One inverse branch L_lambda^k(z) = Log z - Log lambda + 2k pi i,
/// satisfying E_lambda(L_lambda^k(z)) = z.
pub fn inverse_branch_step(
    contract: &NumericContract,
    lambda: Complex64,
    k: i64,
    z: Complex64,
) -> CoreResult<Complex64> {
    let lz = principal_log(contract, z)?;
    let ll = principal_log(contract, lambda)?;
    Ok(lz - ll + Complex64::new(0.0, TAU * k as f64))
}

/// Finite forward tower: `lambdas` lists (lambda_{k+1}, ..., lambda_n) and
/// the composition applies E_{lambda_n} first, E_{lambda_{k+1}} last; the
/// empty list is the identity. An overflow yields an escape whose `stage`
/// is the index into `lambdas` of the map that overflowed.
pub fn forward_tower(
    contract: &NumericContract,
    lambdas: &[Complex64],
    z: Complex64,
) -> CoreResult<Eval> {
    for (index, lam) in lambdas.iter().enumerate() {
        if !(lam.norm() > contract.log_puncture()) {
            return Err(CoreError::ZeroLambda { index });
        }
    }
    let mut w = z;
    for (index, &lam) in lambdas.iter().enumerate().rev() {
        match exp_affine(contract, lam, w) {
            Eval::Value(v) => w = v,
            Eval::Escaped(e) => {
                return Ok(Eval::Escaped(EscapeInfo { stage: index, ..e }));
            }
        }
    }
    Ok(Eval::Value(w))
}

/// Finite inverse tower L_{lambda_n}^{k_n} o ... o L_{lambda_1}^{k_1};
/// stage 1 is applied first. An intermediate (numerical) zero is a
/// "branch hits puncture" error naming the stage.
pub fn inverse_tower(
    contract: &NumericContract,
    lambdas: &[Complex64],
    path: &BranchPath,
    z: Complex64,
) -> CoreResult<Complex64> {
    if path.len() != lambdas.len() {
        return Err(CoreError::PathLengthMismatch {
            path: path.len(),
            towers: lambdas.len(),
        });
    }
    let mut w = z;
    for (stage0, (&lam, &k)) in lambdas.iter().zip(path.indices()).enumerate() {
        w = inverse_branch_step(contract, lam, k, w).map_err(|e| match e {
            CoreError::LogOfZero => CoreError::PunctureHit { stage: stage0 + 1 },
            other => other,
        })?;
    }
    Ok(w)
}

/// The orbit prefix [E_(0,0)(0), ..., E_(0,N)(0)] = [0, lambda_1,
/// lambda_1 e^{lambda_2}, ...]; entry k uses only lambda_1..lambda_k.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitPrefix {
    pub points: Vec<Complex64>,
    /// Set when entry k overflowed; `points` then holds entries 0..k.
    pub escaped_at: Option<usize>,
}

impl OrbitPrefix {
    pub fn max_modulus(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

pub fn orbit_of_zero(
    contract: &NumericContract,
    lambdas: &[Complex64],
    n: usize,
) -> CoreResult<OrbitPrefix> {
    assert!(n <= lambdas.len(), "orbit length exceeds lambda sequence");
    let mut points = vec![Complex64::new(0.0, 0.0)];
    for k in 1..=n {
        match forward_tower(contract, &lambdas[..k], Complex64::new(0.0, 0.0))? {
            Eval::Value(v) => points.push(v),
            Eval::Escaped(_) => {
                return Ok(OrbitPrefix { points, escaped_at: Some(k) });
            }
        }
    }
    Ok(OrbitPrefix { points, escaped_at: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C: NumericContract = NumericContract::DEFAULT;

    fn cx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn principal_log_pins_the_convention() {
        assert_eq!(principal_log(&C, cx(1.0, 0.0)).unwrap(), cx(0.0, 0.0));
        let at_minus_one = principal_log(&C, cx(-1.0, 0.0)).unwrap();
        assert_eq!(at_minus_one, cx(0.0, PI));
        let at_minus_e = principal_log(&C, cx(-std::f64::consts::E, 0.0)).unwrap();
        assert!((at_minus_e - cx(1.0, PI)).norm() < 1e-15);
        // negative-zero imaginary part must not flip to the -pi sheet
        let below_cut = principal_log(&C, cx(-2.0, -0.0)).unwrap();
        assert_eq!(below_cut.im, PI);
    }

    #[test]
    fn principal_log_rejects_the_puncture() {
        assert!(matches!(principal_log(&C, cx(0.0, 0.0)), Err(CoreError::LogOfZero)));
        assert!(matches!(principal_log(&C, cx(1e-17, 0.0)), Err(CoreError::LogOfZero)));
    }

    #[test]
    fn exp_affine_small_cases() {
        assert_eq!(exp_affine(&C, cx(2.0, 0.0), cx(0.0, 0.0)).value().unwrap(), cx(2.0, 0.0));
        let euler = exp_affine(&C, cx(1.0, 0.0), cx(0.0, PI)).value().unwrap();
        assert!((euler - cx(-1.0, 0.0)).norm() < 1e-15);
        let periodic = exp_affine(&C, cx(1.0, 0.0), cx(0.0, 3.0 * TAU)).value().unwrap();
        assert!((periodic - cx(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn exp_affine_flags_escape_with_log_magnitude() {
        match exp_affine(&C, cx(1.0, 0.0), cx(800.0, 0.0)) {
            Eval::Escaped(e) => assert!((e.log_magnitude - 800.0).abs() < 1e-9),
            Eval::Value(_) => panic!("expected escape"),
        }
    }

    #[test]
    fn inverse_branch_step_examples() {
        let e = std::f64::consts::E;
        let got = inverse_branch_step(&C, cx(1.0, 0.0), 0, cx(e, 0.0)).unwrap();
        assert!((got - cx(1.0, 0.0)).norm() < 1e-15);
        let got = inverse_branch_step(&C, cx(1.0, 0.0), 1, cx(1.0, 0.0)).unwrap();
        assert_eq!(got, cx(0.0, TAU));
        let got = inverse_branch_step(&C, cx(2.0, 0.0), 0, cx(2.0, 0.0)).unwrap();
        assert_eq!(got, cx(0.0, 0.0));
    }

    #[test]
    fn forward_tower_identity_and_small_towers() {
        let z = cx(7.0, 2.0);
        assert_eq!(forward_tower(&C, &[], z).unwrap().value().unwrap(), z);

        let e = std::f64::consts::E;
        let got = forward_tower(&C, &[cx(1.0, 0.0), cx(1.0, 0.0)], cx(0.0, 0.0))
            .unwrap()
            .value()
            .unwrap();
        assert!((got - cx(e, 0.0)).norm() < 1e-15);

        // E_{2 pi i}(0) = 2 pi i, then E_1(2 pi i) = 1
        let got = forward_tower(&C, &[cx(1.0, 0.0), cx(0.0, TAU)], cx(0.0, 0.0))
            .unwrap()
            .value()
            .unwrap();
        assert!((got - cx(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn forward_tower_rejects_zero_lambda() {
        let err = forward_tower(&C, &[cx(1.0, 0.0), cx(0.0, 0.0)], cx(0.0, 0.0));
        assert!(matches!(err, Err(CoreError::ZeroLambda { index: 1 })));
    }

    #[test]
    fn inverse_tower_examples() {
        let e = std::f64::consts::E;
        let one = cx(1.0, 0.0);
        let got = inverse_tower(&C, &[one], &BranchPath(vec![0]), cx(e, 0.0)).unwrap();
        assert!((got - one).norm() < 1e-15);

        let got = inverse_tower(&C, &[one, one], &BranchPath(vec![0, 0]), cx(e, 0.0)).unwrap();
        assert!(got.norm() < 1e-15);
        let back = forward_tower(&C, &[one, one], got).unwrap().value().unwrap();
        assert!((back - cx(e, 0.0)).norm() < 1e-14);

        let got = inverse_tower(&C, &[one], &BranchPath(vec![1]), one).unwrap();
        assert_eq!(got, cx(0.0, TAU));
    }

    #[test]
    fn inverse_tower_names_the_punctured_stage() {
        // L_1^0(1) = 0, so stage 2 sees the puncture
        let one = cx(1.0, 0.0);
        let err = inverse_tower(&C, &[one, one], &BranchPath(vec![0, 0]), one);
        assert!(matches!(err, Err(CoreError::PunctureHit { stage: 2 })));
    }

    #[test]
    fn orbit_of_zero_examples() {
        let one = cx(1.0, 0.0);
        let orbit = orbit_of_zero(&C, &[one, one, one], 3).unwrap();
        assert_eq!(orbit.escaped_at, None);
        let e = std::f64::consts::E;
        let expect = [0.0, 1.0, e, e.exp()];
        for (p, want) in orbit.points.iter().zip(expect) {
            assert!((p - cx(want, 0.0)).norm() < 1e-12);
        }

        let orbit = orbit_of_zero(&C, &[cx(2.0, 0.0)], 1).unwrap();
        assert_eq!(orbit.points, vec![cx(0.0, 0.0), cx(2.0, 0.0)]);

        let orbit = orbit_of_zero(&C, &[one], 0).unwrap();
        assert_eq!(orbit.points, vec![cx(0.0, 0.0)]);
    }

    fn nonzero_complex() -> impl Strategy<Value = Complex64> {
        (-3.0f64..3.0, -3.0f64..3.0)
            .prop_map(|(re, im)| cx(re, im))
            .prop_filter("away from 0", |z| z.norm() > 1e-3)
    }

    proptest! {
        #[test]
        fn round_trip_inverse_branch(lam in nonzero_complex(), z in nonzero_complex(), k in -3i64..=3) {
            let w = inverse_branch_step(&C, lam, k, z).unwrap();
            let back = exp_affine(&C, lam, w).value().unwrap();
            prop_assert!(crate::numeric::units_of_precision(back, z, &C) <= 10.0);
        }

        #[test]
        fn branch_separation_is_a_full_period(lam in nonzero_complex(), z in nonzero_complex(), k in -3i64..=3, kp in -3i64..=3) {
            let a = inverse_branch_step(&C, lam, k, z).unwrap();
            let b = inverse_branch_step(&C, lam, kp, z).unwrap();
            let sep = a - b - cx(0.0, TAU * (k - kp) as f64);
            prop_assert!(sep.norm() <= 10.0 * f64::EPSILON * (1.0 + a.norm().max(b.norm())));
        }

        #[test]
        fn tower_composition_peels_one_map(
            lams in proptest::collection::vec(nonzero_complex(), 1..5),
            z in nonzero_complex(),
        ) {
            let whole = forward_tower(&C, &lams, z).unwrap();
            let inner = forward_tower(&C, &lams[1..], z).unwrap();
            if let (Some(w), Some(v)) = (whole.value(), inner.value()) {
                if let Eval::Value(outer) = exp_affine(&C, lams[0], v) {
                    let n = lams.len() as f64;
                    prop_assert!(crate::numeric::units_of_precision(w, outer, &C) <= 10.0 * n);
                }
            }
        }

        #[test]
        fn orbit_entries_match_forward_towers(
            lams in proptest::collection::vec(nonzero_complex(), 1..5),
        ) {
            let n = lams.len();
            let orbit = orbit_of_zero(&C, &lams, n).unwrap();
            // alternate route: E_(0,k)(0) = E_(0,k-1)(lambda_k)
            for (k, point) in orbit.points.iter().enumerate().skip(1) {
                let alt = forward_tower(&C, &lams[..k - 1], lams[k - 1]).unwrap();
                if let Some(alt) = alt.value() {
                    prop_assert!((point - alt).norm() <= 1e-9 * point.norm().max(1.0));
                }
            }
        }
    }
}
