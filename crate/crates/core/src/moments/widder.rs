//! Hausdorff moment feasibility through the Widder table.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest `k` computed in floating point unless forced: the alternating
/// binomial sums lose about one bit per step.
pub const MAX_FLOAT_K: usize = 12;

/// Moments `m_1, m_2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MomentSequence {
    Explicit {
        values: Vec<f64>,
    },
    /// `m_n = e^{-mu_n tau} r_n` with `r_n = f_n / c_n`.
    FromSolution {
        tau: f64,
        eigenvalues: Vec<f64>,
        ratios: Vec<f64>,
    },
    /// `m_n = 1 / n`.
    Harmonic {
        count: usize,
    },
}

impl MomentSequence {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64], what: &str| -> Result<()> {
            match v.iter().position(|x| !x.is_finite()) {
                Some(i) => Err(Error::InvalidArgument(format!("{what}[{i}] is not finite"))),
                None => Ok(()),
            }
        };
        match self {
            MomentSequence::Explicit { values } => finite(values, "moments"),
            MomentSequence::FromSolution {
                tau,
                eigenvalues,
                ratios,
            } => {
                if eigenvalues.len() != ratios.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} eigenvalues but {} ratios",
                        eigenvalues.len(),
                        ratios.len()
                    )));
                }
                if !tau.is_finite() {
                    return Err(Error::InvalidArgument(format!("tau = {tau} is not finite")));
                }
                finite(eigenvalues, "eigenvalues")?;
                finite(ratios, "ratios")?;
                finite(&self.values(), "moments")
            }
            MomentSequence::Harmonic { .. } => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MomentSequence::Explicit { values } => values.len(),
            MomentSequence::FromSolution { ratios, .. } => ratios.len(),
            MomentSequence::Harmonic { count } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `m_n` for 1-based `n`.
    pub fn value(&self, n: usize) -> f64 {
        match self {
            MomentSequence::Explicit { values } => values[n - 1],
            MomentSequence::FromSolution {
                tau,
                eigenvalues,
                ratios,
            } => (-eigenvalues[n - 1] * tau).exp() * ratios[n - 1],
            MomentSequence::Harmonic { .. } => 1.0 / n as f64,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (1..=self.len()).map(|n| self.value(n)).collect()
    }

    /// `m_n` as an exact rational: `1/n` for the harmonic rule, otherwise the
    /// exact binary value of the double.
    pub fn exact(&self, n: usize) -> BigRational {
        match self {
            MomentSequence::Harmonic { .. } => BigRational::new(BigInt::one(), BigInt::from(n)),
            _ => BigRational::from_float(self.value(n)).expect("moments are finite"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    Exact,
    Float { force: bool },
}

fn rationals<S: Serializer>(v: &Option<Vec<BigRational>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_seq(v.iter().map(|r| r.to_string())),
        None => s.serialize_none(),
    }
}

fn rational<S: Serializer>(v: &Option<BigRational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(r) => s.serialize_str(&r.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidderRow {
    pub k: usize,
    pub lambda: Vec<f64>,
    #[serde(serialize_with = "rationals", skip_serializing_if = "Option::is_none")]
    pub lambda_exact: Option<Vec<BigRational>>,
    /// `(k + 1) sum_{k'} lambda_{k,k'}^2`.
    pub scaled_sum: f64,
    #[serde(serialize_with = "rational", skip_serializing_if = "Option::is_none")]
    pub scaled_sum_exact: Option<BigRational>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidderTable {
    pub arithmetic: Arithmetic,
    pub rows: Vec<WidderRow>,
    /// Largest scaled sum up to `kmax`.
    pub l_bar: f64,
    /// False when the last scaled sum exceeds every value in the first half
    /// of the table, the signature of an unbounded sequence.
    pub bounded: bool,
}

fn binomials(n: usize) -> Vec<BigInt> {
    let mut row = vec![BigInt::one()];
    for k in 0..n {
        let next = &row[k] * BigInt::from(n - k) / BigInt::from(k + 1);
        row.push(next);
    }
    row
}

/// `lambda_{k,k'} = C(k,k') sum_l (-1)^{k-k'+l} C(k-k',l) m_{k-l+1}` for
/// `k = 0..=kmax`, with the scaled sums `(k+1) sum_{k'} lambda^2`.
pub fn widder_table(m: &MomentSequence, kmax: usize, arithmetic: Arithmetic) -> Result<WidderTable> {
    m.validate()?;
    if kmax + 1 > m.len() {
        return Err(Error::InsufficientData(format!(
            "kmax = {kmax} needs {} moments, {} given",
            kmax + 1,
            m.len()
        )));
    }
    if let Arithmetic::Float { force: false } = arithmetic {
        if kmax > MAX_FLOAT_K {
            return Err(Error::InvalidArgument(format!(
                "floating point Widder sums are unreliable beyond k = {MAX_FLOAT_K}; use exact arithmetic or force"
            )));
        }
    }
    let pascal: Vec<Vec<BigInt>> = (0..=kmax).map(binomials).collect();
    let rows = (0..=kmax)
        .map(|k| match arithmetic {
            Arithmetic::Exact => exact_row(m, k, &pascal),
            Arithmetic::Float { .. } => float_row(m, k, &pascal),
        })
        .collect::<Vec<_>>();
    let l_bar = rows
        .iter()
        .map(|r| r.scaled_sum)
        .fold(f64::NEG_INFINITY, f64::max);
    let early = rows[..=kmax / 2]
        .iter()
        .map(|r| r.scaled_sum)
        .fold(f64::NEG_INFINITY, f64::max);
    let last = rows.last().expect("kmax + 1 rows").scaled_sum;
    let bounded = kmax < 2 || last <= early * (1.0 + 1e-9);
    Ok(WidderTable {
        arithmetic,
        rows,
        l_bar,
        bounded,
    })
}

fn exact_row(m: &MomentSequence, k: usize, pascal: &[Vec<BigInt>]) -> WidderRow {
    let lambda: Vec<BigRational> = (0..=k)
        .map(|kp| {
            let r = k - kp;
            let mut acc = BigRational::zero();
            for (l, c) in pascal[r].iter().enumerate().take(r + 1) {
                let term = BigRational::from_integer(c.clone()) * m.exact(k - l + 1);
                if (r + l).is_multiple_of(2) {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            acc * BigRational::from_integer(pascal[k][kp].clone())
        })
        .collect();
    let sum = lambda.iter().fold(BigRational::zero(), |acc, x| acc + x * x);
    let scaled = sum * BigRational::from_integer(BigInt::from(k + 1));
    WidderRow {
        k,
        lambda: lambda.iter().map(to_f64).collect(),
        scaled_sum: to_f64(&scaled),
        lambda_exact: Some(lambda),
        scaled_sum_exact: Some(scaled),
    }
}

fn float_row(m: &MomentSequence, k: usize, pascal: &[Vec<BigInt>]) -> WidderRow {
    let c = |n: usize, j: usize| pascal[n][j].to_f64().unwrap_or(f64::INFINITY);
    let lambda: Vec<f64> = (0..=k)
        .map(|kp| {
            let r = k - kp;
            let s: f64 = (0..=r)
                .map(|l| {
                    let sign = if (r + l).is_multiple_of(2) { 1.0 } else { -1.0 };
                    sign * c(r, l) * m.value(k - l + 1)
                })
                .sum();
            c(k, kp) * s
        })
        .collect();
    let scaled = (k + 1) as f64 * lambda.iter().map(|x| x * x).sum::<f64>();
    WidderRow {
        k,
        lambda,
        lambda_exact: None,
        scaled_sum: scaled,
        scaled_sum_exact: None,
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `lambda_{k,k'} = C(k,k') ((-Delta)^{k-k'} m)_{k'+1}` from a forward
    /// difference table, an independent summation order.
    fn by_differences(m: &MomentSequence, k: usize) -> Vec<BigRational> {
        let mut diffs: Vec<Vec<BigRational>> = vec![(1..=k + 1).map(|n| m.exact(n)).collect()];
        for r in 1..=k {
            let prev = &diffs[r - 1];
            let next = prev.windows(2).map(|w| &w[0] - &w[1]).collect();
            diffs.push(next);
        }
        let c = binomials(k);
        (0..=k)
            .map(|kp| BigRational::from_integer(c[kp].clone()) * &diffs[k - kp][kp])
            .collect()
    }

    #[test]
    fn harmonic_moments_are_exactly_one() {
        let m = MomentSequence::Harmonic { count: 26 };
        let t = widder_table(&m, 25, Arithmetic::Exact).unwrap();
        assert_eq!(t.rows.len(), 26);
        for row in &t.rows {
            assert_eq!(row.lambda.len(), row.k + 1);
            assert_eq!(row.scaled_sum_exact.as_ref().unwrap(), &BigRational::one());
        }
        assert!(t.bounded);
        assert_eq!(t.l_bar, 1.0);
    }

    #[test]
    fn first_row_by_hand() {
        let m = MomentSequence::Harmonic { count: 2 };
        let t = widder_table(&m, 1, Arithmetic::Exact).unwrap();
        let half = BigRational::new(1.into(), 2.into());
        assert_eq!(
            t.rows[1].lambda_exact.as_ref().unwrap(),
            &vec![half.clone(), half]
        );
    }

    #[test]
    fn exact_table_matches_difference_table() {
        let m = MomentSequence::Explicit {
            values: (1..=16)
                .map(|n| 0.7f64.powi(n) + 1.0 / (n as f64 + 0.5))
                .collect(),
        };
        let t = widder_table(&m, 15, Arithmetic::Exact).unwrap();
        for row in &t.rows {
            assert_eq!(row.lambda_exact.as_ref().unwrap(), &by_differences(&m, row.k));
        }
    }

    #[test]
    fn float_table_tracks_exact_at_small_k() {
        let m = MomentSequence::Harmonic { count: 9 };
        let f = widder_table(&m, 8, Arithmetic::Float { force: false }).unwrap();
        for row in &f.rows {
            assert!((row.scaled_sum - 1.0).abs() < 1e-9);
        }
        let long = MomentSequence::Harmonic { count: 20 };
        assert!(widder_table(&long, 19, Arithmetic::Float { force: false }).is_err());
        assert!(widder_table(&long, 19, Arithmetic::Float { force: true }).is_ok());
    }

    #[test]
    fn unit_sequence_witness_grows_linearly() {
        let (tau, p) = (1.0f64, 1.0f64);
        let values = (1..=21)
            .map(|n: usize| {
                let f = if n == 1 { 1.0 } else { 0.0 };
                (-(n as f64 - 0.5) * tau).exp() * (p * (n as f64).sqrt()).exp() * f
            })
            .collect();
        let t = widder_table(&MomentSequence::Explicit { values }, 20, Arithmetic::Exact).unwrap();
        for row in &t.rows {
            let floor = (row.k + 1) as f64 * (-tau + 2.0 * p).exp();
            assert!(row.scaled_sum >= floor * (1.0 - 1e-12), "k = {}", row.k);
        }
        assert!(!t.bounded);
    }

    #[test]
    fn too_few_moments() {
        let m = MomentSequence::Harmonic { count: 5 };
        assert!(matches!(
            widder_table(&m, 5, Arithmetic::Exact),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn solution_moments() {
        let m = MomentSequence::FromSolution {
            tau: 0.5,
            eigenvalues: vec![1.0, 2.0],
            ratios: vec![2.0, -1.0],
        };
        assert!((m.value(2) + (-1.0f64).exp()).abs() < 1e-15);
        let bad = MomentSequence::FromSolution {
            tau: 0.5,
            eigenvalues: vec![1.0],
            ratios: vec![2.0, -1.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let m: MomentSequence = serde_json::from_str(r#"{"rule": "harmonic", "count": 4}"#).unwrap();
        assert_eq!(m.len(), 4);
        let t = widder_table(&m, 1, Arithmetic::Exact).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"1/2\""));
    }
}
