//! Distances in the exponential span and bi-orthogonal norms.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use serde::{Deserialize, Serialize};

use super::{CompensatedSum, ExponentSequence};
use crate::error::{Error, Result};

/// Largest prefix accepted by the Gram route; its condition number grows
/// exponentially with the length.
pub const MAX_GRAM_LEN: usize = 30;
pub const MIN_GRAM_DIGITS: usize = 50;
pub const DEFAULT_GRAM_DIGITS: usize = 80;

const RM: RoundingMode = RoundingMode::ToEven;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    None,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Infinite,
    Finite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuntzDistance {
    pub value: f64,
    pub log_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiorthNorm {
    pub value: f64,
    pub log_value: f64,
}

/// `log |1 - x|` with full accuracy near `x = 0`.
fn log_abs_one_minus(x: f64) -> f64 {
    if x.abs() < 0.5 {
        (-x).ln_1p()
    } else {
        (1.0 - x).abs().ln()
    }
}

/// `sum_{j != n} [log(1 + x_j) - log|1 - x_j|]` with `x_j = mu_n / mu_j`.
fn log_ratio_sum(values: &[f64], n: usize) -> Result<CompensatedSum> {
    let mu_n = values[n - 1];
    let mut acc = CompensatedSum::default();
    for (j, &mu_j) in values.iter().enumerate() {
        if j + 1 == n {
            continue;
        }
        if mu_j == mu_n {
            return Err(Error::Collision(n.min(j + 1), n.max(j + 1)));
        }
        let x = mu_n / mu_j;
        acc.add(x.ln_1p());
        acc.add(-log_abs_one_minus(x));
    }
    Ok(acc)
}

fn check_position(e: &ExponentSequence, n: usize) -> Result<()> {
    if n == 0 || n > e.len() {
        return Err(Error::InvalidArgument(format!(
            "position {n} outside the exponent list 1..={}",
            e.len()
        )));
    }
    Ok(())
}

/// `d_n(infinity)` from the product formula over `mu_1..mu_J`, optionally
/// closed by the factor `exp(-2 mu_n sum_{j > J} 1/mu_j)`.
///
/// Exponents past the stored prefix come from the sequence's rule.
pub fn dn_infinity_product(
    e: &ExponentSequence,
    n: usize,
    j_max: usize,
    tail: Tail,
) -> Result<MuntzDistance> {
    check_position(e, n)?;
    if j_max < n {
        return Err(Error::InvalidArgument(format!(
            "truncation J = {j_max} must be at least n = {n}"
        )));
    }
    let values = e.first(j_max)?;
    let mu_n = values[n - 1];
    let ratio = log_ratio_sum(&values, n)?;
    // Flip the ratio: d_n carries |1 - x| / (1 + x), and the j = n factor is 1/2.
    let mut acc = CompensatedSum::default();
    acc.add(-ratio.value());
    acc.add(0.5 * (2.0 / mu_n).ln());
    acc.add(-std::f64::consts::LN_2);
    if tail == Tail::Analytic {
        let rest = e.reciprocal_tail(j_max).ok_or_else(|| {
            Error::InsufficientData("analytic tail needs a convergent growth law or rule".into())
        })?;
        acc.add(-2.0 * mu_n * rest);
    }
    let log_value = acc.value();
    Ok(MuntzDistance {
        value: log_value.exp(),
        log_value,
    })
}

/// `||phi_n||` of the bi-orthogonal function over the whole stored prefix.
pub fn finite_biorth_norm(e: &ExponentSequence, n: usize) -> Result<BiorthNorm> {
    check_position(e, n)?;
    let values = e.values();
    let mut acc = log_ratio_sum(values, n)?;
    acc.add(0.5 * (2.0 * values[n - 1]).ln());
    let log_value = acc.value();
    Ok(BiorthNorm {
        value: log_value.exp(),
        log_value,
    })
}

/// `d_n(T)` over the stored prefix from the Gram matrix of the exponentials,
/// as the Schur complement of the `n`-th diagonal entry, in `digits` decimal
/// digits of working precision.
pub fn dn_gram(e: &ExponentSequence, n: usize, horizon: Horizon, digits: usize) -> Result<f64> {
    check_position(e, n)?;
    let len = e.len();
    if len > MAX_GRAM_LEN {
        return Err(Error::InvalidArgument(format!(
            "Gram route is limited to {MAX_GRAM_LEN} exponents, got {len}"
        )));
    }
    if digits < MIN_GRAM_DIGITS {
        return Err(Error::InvalidArgument(format!(
            "Gram route needs at least {MIN_GRAM_DIGITS} digits, got {digits}"
        )));
    }
    if let Horizon::Finite(t) = horizon {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon T = {t} must be positive"
            )));
        }
    }
    let bits = (digits as f64 * std::f64::consts::LOG2_10).ceil() as usize + 64;
    let mut cc = Consts::new().map_err(|e| Error::Numerical(format!("precision context: {e:?}")))?;
    // Put the distinguished exponent last so elimination ends on it.
    let mut order: Vec<usize> = (0..len).filter(|&i| i + 1 != n).collect();
    order.push(n - 1);
    let mu: Vec<BigFloat> = order
        .iter()
        .map(|&i| BigFloat::from_f64(e.values()[i], bits))
        .collect();
    let horizon = match horizon {
        Horizon::Infinite => None,
        Horizon::Finite(t) => Some(BigFloat::from_f64(t, bits)),
    };
    let one = BigFloat::from_f64(1.0, bits);
    let mut g: Vec<Vec<BigFloat>> = (0..len)
        .map(|i| {
            (0..len)
                .map(|j| {
                    let s = mu[i].add(&mu[j], bits, RM);
                    let num = match &horizon {
                        None => one.clone(),
                        Some(t) => {
                            let decay = s.mul(t, bits, RM).neg().exp(bits, RM, &mut cc);
                            one.sub(&decay, bits, RM)
                        }
                    };
                    num.div(&s, bits, RM)
                })
                .collect()
        })
        .collect();
    let floor = BigFloat::from_f64(2f64.powi(-((bits - 64) as i32)), bits);
    for k in 0..len {
        let pivot = g[k][k].clone();
        let scale = BigFloat::from_f64(0.5 / e.values()[order[k]], bits);
        let relative = pivot.div(&scale, bits, RM);
        if pivot.is_nan() || !relative.is_positive() || relative.cmp(&floor).is_none_or(|c| c <= 0) {
            return Err(Error::Numerical(format!(
                "Gram matrix is singular at {digits} digits (pivot {k})"
            )));
        }
        if k + 1 == len {
            break;
        }
        for i in k + 1..len {
            let (upper, lower) = g.split_at_mut(i);
            let (pivot_row, row) = (&upper[k], &mut lower[0]);
            let factor = row[k].div(&pivot, bits, RM);
            for (x, p) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                *x = x.sub(&factor.mul(p, bits, RM), bits, RM);
            }
        }
    }
    let d = g[len - 1][len - 1].sqrt(bits, RM);
    to_f64(&d, &mut cc)
}

fn to_f64(x: &BigFloat, cc: &mut Consts) -> Result<f64> {
    let text = x
        .format(Radix::Dec, RM, cc)
        .map_err(|e| Error::Numerical(format!("formatting extended value: {e:?}")))?;
    text.parse::<f64>()
        .map_err(|e| Error::Numerical(format!("parsing extended value {text}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive, Zero};
    use std::f64::consts::PI;

    fn dirichlet_closed_form(n: usize) -> f64 {
        1.0 / (2f64.sqrt() * (n as f64 * PI).sinh())
    }

    #[test]
    fn single_exponent_is_its_own_norm() {
        let e = ExponentSequence::new(vec![3.0]).unwrap();
        let want = 1.0 / 6f64.sqrt();
        let p = dn_infinity_product(&e, 1, 1, Tail::None).unwrap();
        assert!((p.value - want).abs() < 1e-15);
        let g = dn_gram(&e, 1, Horizon::Infinite, DEFAULT_GRAM_DIGITS).unwrap();
        assert!((g - want).abs() < 1e-15);
        let b = finite_biorth_norm(&e, 1).unwrap();
        assert!((b.value - 6f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_product_matches_sinh_formula() {
        let e = ExponentSequence::dirichlet(12).unwrap();
        for n in 1..=5 {
            let d = dn_infinity_product(&e, n, 100_000, Tail::Analytic).unwrap();
            let want = dirichlet_closed_form(n);
            assert!(
                ((d.value - want) / want).abs() < 1e-9,
                "n = {n}: {} vs {want}",
                d.value
            );
        }
    }

    #[test]
    fn two_exponent_biorthogonal_norm() {
        let e = ExponentSequence::new(vec![1.0, 2.0]).unwrap();
        let b = finite_biorth_norm(&e, 1).unwrap();
        assert!((b.value - 3.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    /// Exact diagonal of the inverse Hilbert matrix of order `n`.
    fn inverse_hilbert_diagonal(order: usize, i: usize) -> BigRational {
        fn binom(n: usize, k: usize) -> BigInt {
            (0..k).fold(BigInt::one(), |acc, j| {
                acc * BigInt::from(n - j) / BigInt::from(j + 1)
            })
        }
        let v = BigInt::from(2 * i - 1) * (binom(order + i - 1, order - i) * binom(2 * i - 2, i - 1)).pow(2);
        BigRational::from_integer(v)
    }

    #[test]
    fn half_integer_exponents_give_hilbert_gram() {
        let e = ExponentSequence::new(vec![0.5, 1.5, 2.5]).unwrap();
        for n in 1..=3 {
            let inv = inverse_hilbert_diagonal(3, n);
            let want = (BigRational::one() / inv).to_f64().unwrap().sqrt();
            let got = dn_gram(&e, n, Horizon::Infinite, DEFAULT_GRAM_DIGITS).unwrap();
            assert!(((got - want) / want).abs() < 1e-14, "n = {n}");
        }
        // Sanity of the oracle itself: H^{-1}_{11} = 9 for order 3.
        assert_eq!(
            inverse_hilbert_diagonal(3, 1),
            BigRational::from_integer(9.into())
        );
        assert!(!inverse_hilbert_diagonal(3, 3).is_zero());
    }

    #[test]
    fn gram_and_product_agree_on_the_same_prefix() {
        let e = ExponentSequence::dirichlet(12).unwrap();
        for n in 1..=12 {
            let g = dn_gram(&e, n, Horizon::Infinite, DEFAULT_GRAM_DIGITS).unwrap();
            let p = dn_infinity_product(&e, n, 12, Tail::None).unwrap();
            assert!(((g - p.value) / p.value).abs() < 1e-12, "n = {n}");
            let b = finite_biorth_norm(&e, n).unwrap();
            assert!((b.value * g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_horizon_distance_is_bounded_by_the_norm() {
        let e = ExponentSequence::dirichlet(6).unwrap();
        for &t in &[0.1, 1.0, 10.0] {
            let d = dn_gram(&e, 2, Horizon::Finite(t), DEFAULT_GRAM_DIGITS).unwrap();
            let mu = e.values()[1];
            let norm = ((1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu)).sqrt();
            assert!(d > 0.0 && d <= norm);
        }
        // A long horizon reproduces the infinite one.
        let long = dn_gram(&e, 2, Horizon::Finite(50.0), DEFAULT_GRAM_DIGITS).unwrap();
        let inf = dn_gram(&e, 2, Horizon::Infinite, DEFAULT_GRAM_DIGITS).unwrap();
        assert!(((long - inf) / inf).abs() < 1e-12);
    }

    #[test]
    fn half_integer_norm_telescopes() {
        // (1 + x_j) / (1 - x_j) = j / (j - 1) for mu_j = j - 1/2, so the norm is N.
        for &len in &[10usize, 20, 40] {
            let e = ExponentSequence::power_law(1.0, 1.0, -0.5, len).unwrap();
            let b = finite_biorth_norm(&e, 1).unwrap();
            assert!((b.value - len as f64).abs() < 1e-11 * len as f64);
        }
    }

    #[test]
    fn guards() {
        let e = ExponentSequence::dirichlet(3).unwrap();
        assert!(dn_infinity_product(&e, 3, 2, Tail::None).is_err());
        assert!(dn_infinity_product(&e, 4, 10, Tail::None).is_err());
        assert!(dn_gram(&e, 1, Horizon::Infinite, 20).is_err());
        let long = ExponentSequence::dirichlet(31).unwrap();
        assert!(dn_gram(&long, 1, Horizon::Infinite, 80).is_err());
        let bare = ExponentSequence::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            dn_infinity_product(&bare, 1, 2, Tail::Analytic),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn nearly_equal_exponents_still_resolve() {
        // Adjacent doubles: the distance is about 1e-16, which the extended
        // precision Gram route still resolves.
        let e = ExponentSequence::new(vec![1.0, 1.0 + f64::EPSILON]).unwrap();
        let g = dn_gram(&e, 1, Horizon::Infinite, DEFAULT_GRAM_DIGITS).unwrap();
        let p = dn_infinity_product(&e, 1, 2, Tail::None).unwrap();
        assert!(p.value > 0.0 && p.value < 1e-15);
        assert!(((g - p.value) / p.value).abs() < 1e-10);
    }
}
