//! Adaptive Gauss-Kronrod quadrature and the `zeta_{0,beta}` integral.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for `zeta0`.
pub const ZETA_TOL: f64 = 1e-10;

const MAX_DEPTH: usize = 60;

// 15-point Kronrod nodes on [-1, 1] (non-negative half, descending) with the
// embedded 7-point Gauss rule on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

/// Kronrod value and |Kronrod - Gauss| on one interval.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrate `f` over `[a, b]` by recursive bisection until each piece's
/// error estimate is below its share of `tol`.
pub fn adaptive_gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let mut out = Quadrature {
        value: 0.0,
        error_estimate: 0.0,
        evaluations: 0,
    };
    let mut stack = vec![(a, b, tol, 0usize)];
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let (value, err) = gk15(f, lo, hi);
        out.evaluations += 15;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand is not finite on [{lo}, {hi}]"
            )));
        }
        if err <= tol || depth == MAX_DEPTH {
            if err > tol {
                return Err(Error::Numerical(format!(
                    "quadrature did not reach {tol:e} on [{lo}, {hi}]"
                )));
            }
            out.value += value;
            out.error_estimate += err;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, tol / 2.0, depth + 1));
            stack.push((lo, mid, tol / 2.0, depth + 1));
        }
    }
    Ok(out)
}

/// `int_0^inf dy / (y^{1 - 1/beta} (1 + y))` for `beta > 1`.
///
/// On `[0, 1]` the substitution `y = u^beta` gives `beta / (1 + u^beta)`; on
/// `[1, inf)` the inversion `y = 1/z` followed by `z = v^q`, `q = beta/(beta-1)`,
/// gives `q / (1 + v^q)`. Both integrands are smooth on `[0, 1]`.
pub fn zeta0(beta: f64) -> Result<Quadrature> {
    if !(beta > 1.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "zeta integral diverges for beta = {beta} <= 1"
        )));
    }
    let q = beta / (beta - 1.0);
    let inner = adaptive_gauss_kronrod(&|u: f64| beta / (1.0 + u.powf(beta)), 0.0, 1.0, ZETA_TOL / 4.0)?;
    let outer = adaptive_gauss_kronrod(&|v: f64| q / (1.0 + v.powf(q)), 0.0, 1.0, ZETA_TOL / 4.0)?;
    Ok(Quadrature {
        value: inner.value + outer.value,
        error_estimate: inner.error_estimate + outer.error_estimate,
        evaluations: inner.evaluations + outer.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kronrod_rule_is_exact_for_low_degree_polynomials() {
        // The 15-point rule integrates degree 22 exactly.
        let q = gk15(&|x: f64| x.powi(22), 0.0, 1.0);
        assert!((q.0 - 1.0 / 23.0).abs() < 1e-15);
        let weights: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        assert!((weights - 2.0).abs() < 1e-15);
        let gauss: f64 = 2.0 * (WG[0] + WG[1] + WG[2]) + WG[3];
        assert!((gauss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_rule_handles_a_kink() {
        let q = adaptive_gauss_kronrod(&|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-12).unwrap();
        assert!((q.value - (0.045 + 0.245)).abs() < 1e-12);
    }

    #[test]
    fn zeta_matches_reflection_formula() {
        for &beta in &[1.5, 2.0, 3.0, 4.0, 8.0, 1.05] {
            let z = zeta0(beta).unwrap();
            let want = PI / (PI / beta).sin();
            assert!(
                (z.value - want).abs() < 1e-8,
                "beta = {beta}: {} vs {want}",
                z.value
            );
        }
        assert!((zeta0(2.0).unwrap().value - PI).abs() < 1e-10);
        assert!((zeta0(4.0).unwrap().value - PI * 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn zeta_rejects_divergent_powers() {
        assert!(zeta0(1.0).is_err());
        assert!(zeta0(0.5).is_err());
        assert!(zeta0(f64::NAN).is_err());
    }
}
