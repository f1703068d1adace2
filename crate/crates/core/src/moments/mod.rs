//! Exponential moment problems.
//!
//! Tools for deciding when a sequence of moments `m_n` can be produced by a
//! weight `nu` through `int e^{-mu_n t} nu(t) dt`: distances between an
//! exponential and the span of the others, bi-orthogonal norms, the
//! Hausdorff/Widder feasibility table, the `zeta_{0,beta}` integral and the
//! eigenvalue gap check for rectangle spectra.

mod gap;
mod muntz;
mod quadrature;
mod widder;

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{check_ascending_positive, EigenFamily};

pub use gap::{gap_check, GapReport};
pub use muntz::{
    dn_gram, dn_infinity_product, finite_biorth_norm, BiorthNorm, Horizon, MuntzDistance, Tail,
    DEFAULT_GRAM_DIGITS, MAX_GRAM_LEN, MIN_GRAM_DIGITS,
};
pub use quadrature::{adaptive_gauss_kronrod, zeta0, Quadrature, ZETA_TOL};
pub use widder::{widder_table, Arithmetic, MomentSequence, WidderRow, WidderTable, MAX_FLOAT_K};

/// Growth law `mu_n = M n^beta (1 + o(n^{-sigma}))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthMeta {
    pub scale: f64,
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

/// Gap law `mu_{n+1} - mu_n >= theta n^{-s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMeta {
    pub theta: f64,
    pub s: f64,
}

/// Closed-form generator `mu_n = scale (n + shift)^power`, used to extend a
/// prefix on demand and to sum its reciprocal tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRule {
    pub scale: f64,
    pub power: f64,
    #[serde(default)]
    pub shift: f64,
}

impl PowerRule {
    pub fn value(&self, n: usize) -> f64 {
        self.scale * (n as f64 + self.shift).powf(self.power)
    }

    /// `sum_{j > after} 1 / mu_j` by Euler-Maclaurin, or `None` when it diverges.
    pub fn reciprocal_tail(&self, after: usize) -> Option<f64> {
        power_tail(self.scale, self.power, after as f64 + self.shift)
    }
}

/// `(1/M) sum_{j >= 1} (x + j)^{-beta}` with `x` the shifted cut point.
fn power_tail(scale: f64, beta: f64, x: f64) -> Option<f64> {
    if beta <= 1.0 || x <= 0.0 {
        return None;
    }
    let f = x.powf(-beta);
    let integral = x.powf(1.0 - beta) / (beta - 1.0);
    let d1 = -beta * f / x;
    let d3 = -beta * (beta + 1.0) * (beta + 2.0) * f / (x * x * x);
    Some((integral - f / 2.0 - d1 / 12.0 + d3 / 720.0) / scale)
}

/// Strictly increasing positive exponents `mu_1 < mu_2 < ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentSequence {
    #[serde(alias = "values")]
    eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    growth: Option<GrowthMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gap: Option<GapMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<PowerRule>,
}

impl ExponentSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_ascending_positive(&values, "exponents")?;
        Ok(ExponentSequence {
            eigenvalues: values,
            growth: None,
            gap: None,
            rule: None,
        })
    }

    /// First `count` terms of `scale (n + shift)^power`, with growth metadata.
    pub fn power_law(scale: f64, power: f64, shift: f64, count: usize) -> Result<Self> {
        if !(scale > 0.0 && power > 0.0 && shift > -1.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "power law needs scale > 0, power > 0, shift > -1 (got {scale}, {power}, {shift})"
            )));
        }
        let rule = PowerRule { scale, power, shift };
        let values = (1..=count).map(|n| rule.value(n)).collect();
        let mut seq = Self::new(values)?;
        seq.rule = Some(rule);
        seq.growth = Some(GrowthMeta {
            scale,
            power,
            sigma: None,
        });
        Ok(seq)
    }

    /// `pi^2 n^2`, the Dirichlet spectrum of the unit interval.
    pub fn dirichlet(count: usize) -> Result<Self> {
        Self::power_law(PI * PI, 2.0, 0.0, count)
    }

    /// The first `count` distinct eigenvalues of a family, in ascending order.
    pub fn from_family(family: &EigenFamily, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("exponent count must be positive".into()));
        }
        if let EigenFamily::Dirichlet1D = family {
            return Self::dirichlet(count);
        }
        if let Some(len) = family.finite_len() {
            if count > len {
                return Err(Error::InvalidArgument(format!(
                    "family lists only {len} eigenvalues, {count} requested"
                )));
            }
        }
        let growth = family.growth();
        let mut cutoff = growth.scale * (count as f64 + 2.0).powf(growth.power) * 2.0;
        let levels = loop {
            let levels = family.sorted_spectrum(cutoff);
            if levels.len() >= count {
                break levels;
            }
            cutoff *= 2.0;
        };
        let values = levels.iter().take(count).map(|l| l.value).collect();
        let mut seq = Self::new(values)?;
        seq.growth = match family {
            EigenFamily::CustomList { .. } => None,
            // Distinct levels only: the sin/cos pairs collapse to (n pi)^2 + 1.
            EigenFamily::Periodic1D => Some(GrowthMeta {
                scale: PI * PI,
                power: 2.0,
                sigma: None,
            }),
            _ => Some(GrowthMeta {
                scale: growth.scale,
                power: growth.power,
                sigma: None,
            }),
        };
        Ok(seq)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let seq: ExponentSequence =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("exponents: {e}")))?;
        check_ascending_positive(&seq.eigenvalues, "exponents")?;
        Ok(seq)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(reason) | Error::InvalidArgument(reason) => Error::malformed(path, reason),
            other => other,
        })
    }

    pub fn with_growth(mut self, growth: GrowthMeta) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn with_gap(mut self, gap: GapMeta) -> Self {
        self.gap = Some(gap);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn growth(&self) -> Option<GrowthMeta> {
        self.growth
    }

    pub fn gap(&self) -> Option<GapMeta> {
        self.gap
    }

    pub fn rule(&self) -> Option<PowerRule> {
        self.rule
    }

    /// The first `count` exponents, keeping metadata.
    pub fn prefix(&self, count: usize) -> Result<Self> {
        let values = self.first(count)?;
        Ok(ExponentSequence {
            eigenvalues: values,
            ..self.clone()
        })
    }

    /// `mu_1, ..., mu_count`, extending the stored prefix through the rule.
    pub fn first(&self, count: usize) -> Result<Vec<f64>> {
        if count <= self.len() {
            return Ok(self.eigenvalues[..count].to_vec());
        }
        let rule = self.rule.ok_or_else(|| {
            Error::InsufficientData(format!(
                "{count} exponents requested but only {} stored and no generating rule",
                self.len()
            ))
        })?;
        let mut values = self.eigenvalues.clone();
        values.extend((self.len() + 1..=count).map(|n| rule.value(n)));
        Ok(values)
    }

    /// `sum_{j > after} 1 / mu_j` from the rule or, failing that, the growth law.
    pub fn reciprocal_tail(&self, after: usize) -> Option<f64> {
        if let Some(rule) = self.rule {
            return rule.reciprocal_tail(after);
        }
        let g = self.growth?;
        power_tail(g.scale, g.power, after as f64)
    }

    /// Positions `n` (1-based) where the stored prefix violates the gap law.
    pub fn gap_violations(&self) -> Vec<usize> {
        let Some(g) = self.gap else {
            return Vec::new();
        };
        self.eigenvalues
            .windows(2)
            .enumerate()
            .filter(|(i, w)| w[1] - w[0] < g.theta * ((i + 1) as f64).powf(-g.s))
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesClass {
    Convergent,
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSource {
    Metadata,
    Numeric,
}

/// Verdict on `sum 1 / mu_n` together with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub class: SeriesClass,
    pub source: ClassSource,
    /// `(N, sum_{n <= N} 1 / mu_n)` at doubling checkpoints and at the full prefix.
    pub partial_sums: Vec<(usize, f64)>,
    /// Growth exponent fitted to the second half of the prefix.
    pub fitted_power: Option<f64>,
    /// Partial sum plus the tail estimate, when the series converges.
    pub total: Option<f64>,
}

/// Shortest prefix accepted for the numeric classification.
pub const MIN_NUMERIC_PREFIX: usize = 32;

/// A fitted power must clear 1 by this much to count as convergent: finite
/// prefixes of linear growth with lower order terms fit slightly above 1.
pub const NUMERIC_MARGIN: f64 = 0.1;

/// Classify `sum 1 / mu_n` by the growth power (`beta > 1` converges), or by a
/// fitted power when no metadata is present.
pub fn series_class(e: &ExponentSequence) -> Result<SeriesReport> {
    let values = e.values();
    let mut partial_sums = Vec::new();
    let mut acc = CompensatedSum::default();
    let mut checkpoint = 1;
    for (i, v) in values.iter().enumerate() {
        acc.add(1.0 / v);
        if i + 1 == checkpoint || i + 1 == values.len() {
            partial_sums.push((i + 1, acc.value()));
            checkpoint *= 2;
        }
    }
    let fitted_power = fit_power(values);
    let (class, source) = match (e.growth(), fitted_power) {
        (Some(g), _) => (classify(g.power), ClassSource::Metadata),
        (None, Some(p)) => (classify(p - NUMERIC_MARGIN), ClassSource::Numeric),
        (None, None) => {
            return Err(Error::InsufficientData(format!(
                "no growth metadata and a prefix of {} < {MIN_NUMERIC_PREFIX} exponents",
                values.len()
            )))
        }
    };
    let total = match class {
        SeriesClass::Convergent => e.reciprocal_tail(values.len()).map(|t| acc.value() + t),
        SeriesClass::Divergent => None,
    };
    Ok(SeriesReport {
        class,
        source,
        partial_sums,
        fitted_power,
        total,
    })
}

fn classify(power: f64) -> SeriesClass {
    if power > 1.0 {
        SeriesClass::Convergent
    } else {
        SeriesClass::Divergent
    }
}

/// Least-squares slope of `log mu_n` against `log n` over the second half.
fn fit_power(values: &[f64]) -> Option<f64> {
    if values.len() < MIN_NUMERIC_PREFIX {
        return None;
    }
    let pts: Vec<(f64, f64)> = (values.len() / 2..values.len())
        .map(|i| (((i + 1) as f64).ln(), values[i].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basel_series_converges_to_one_sixth() {
        let e = ExponentSequence::dirichlet(50).unwrap();
        let r = series_class(&e).unwrap();
        assert_eq!(r.class, SeriesClass::Convergent);
        assert_eq!(r.source, ClassSource::Metadata);
        assert!((r.total.unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.partial_sums.last().unwrap().0, 50);
    }

    #[test]
    fn half_integer_exponents_diverge() {
        let e = ExponentSequence::power_law(1.0, 1.0, -0.5, 100).unwrap();
        assert!((e.values()[0] - 0.5).abs() < 1e-15);
        let r = series_class(&e).unwrap();
        assert_eq!(r.class, SeriesClass::Divergent);
        assert!(r.total.is_none());
        // Without metadata the fitted power decides.
        let bare = ExponentSequence::new(e.values().to_vec()).unwrap();
        let r = series_class(&bare).unwrap();
        assert_eq!(r.source, ClassSource::Numeric);
        assert_eq!(r.class, SeriesClass::Divergent);
        assert!((r.fitted_power.unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn rectangle_spectrum_grows_linearly() {
        let e = ExponentSequence::from_family(&EigenFamily::Rect2D, 200).unwrap();
        assert_eq!(e.len(), 200);
        assert_eq!(series_class(&e).unwrap().class, SeriesClass::Divergent);
        let bare = ExponentSequence::new(e.values().to_vec()).unwrap();
        let fitted = series_class(&bare).unwrap().fitted_power.unwrap();
        assert!((fitted - 1.0).abs() < 0.1, "fitted {fitted}");
    }

    #[test]
    fn short_prefix_without_metadata_is_rejected() {
        let e = ExponentSequence::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(series_class(&e), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn tail_sum_matches_direct_summation() {
        let rule = PowerRule {
            scale: 2.0,
            power: 1.5,
            shift: 0.25,
        };
        let direct: CompensatedSum = (1001..2_000_000).map(|n| 1.0 / rule.value(n)).collect();
        let direct = direct.value();
        let rest = rule.reciprocal_tail(1_999_999).unwrap();
        let tail = rule.reciprocal_tail(1000).unwrap();
        assert!(((direct + rest) - tail).abs() < 1e-12 * tail);
    }

    #[test]
    fn prefix_extends_through_rule() {
        let e = ExponentSequence::dirichlet(3).unwrap();
        let v = e.first(5).unwrap();
        assert!((v[4] - 25.0 * PI * PI).abs() < 1e-12);
        let bare = ExponentSequence::new(vec![1.0, 2.0]).unwrap();
        assert!(bare.first(3).is_err());
    }

    #[test]
    fn periodic_levels_are_distinct() {
        let e = ExponentSequence::from_family(&EigenFamily::Periodic1D, 4).unwrap();
        assert_eq!(e.values()[0], 1.0);
        assert!((e.values()[3] - (9.0 * PI * PI + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gap_law_violations_are_located() {
        let e = ExponentSequence::new(vec![1.0, 2.0, 2.1, 4.0])
            .unwrap()
            .with_gap(GapMeta { theta: 0.5, s: 0.0 });
        assert_eq!(e.gap_violations(), vec![2]);
    }

    #[test]
    fn json_uses_the_custom_spectrum_layout() {
        let e = ExponentSequence::from_json(r#"{"eigenvalues": [1.0, 4.0, 9.0]}"#).unwrap();
        assert_eq!(e.len(), 3);
        assert!(ExponentSequence::from_json(r#"{"eigenvalues": [2.0, 1.0]}"#).is_err());
        let round: ExponentSequence =
            serde_json::from_str(&serde_json::to_string(&ExponentSequence::dirichlet(4).unwrap()).unwrap())
                .unwrap();
        assert_eq!(round, ExponentSequence::dirichlet(4).unwrap());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1.0, 1e-16, 1e-16, -1.0].into_iter().collect();
        assert!((s.value() - 2e-16).abs() < 1e-30);
    }
}
