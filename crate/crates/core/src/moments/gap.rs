//! Gaps between consecutive eigenvalues of the rectangle spectra.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::EigenFamily;

/// Fewest eigenvalues accepted below the cutoff.
pub const MIN_GAP_EIGENVALUES: usize = 10;

/// Relative spacing treated as an exact collision of two eigenvalues.
const COLLISION_RTOL: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub family: String,
    pub cutoff: f64,
    pub count: usize,
    /// Unit in which eigenvalues are measured: `pi^2` for the closed-form
    /// families, 1 for a custom list.
    pub unit: f64,
    /// `min_k (mu_{k+1} - mu_k) mu_{k+1} / unit^2`.
    pub min_scaled_gap: f64,
    /// Implied constant `c` in `mu_{k+1} - mu_k >= c unit^2 / (sqrt(2) mu_{k+1})`.
    pub constant: f64,
    /// 1-based position `k` of the pair attaining the minimum.
    pub position: usize,
    pub smallest_gap: f64,
}

/// Enumerate every eigenvalue up to `cutoff`, sort, and report the smallest
/// scaled gap between neighbours. Coinciding eigenvalues are an error.
pub fn gap_check(family: &EigenFamily, cutoff: f64) -> Result<GapReport> {
    family.validate()?;
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} must be positive"
        )));
    }
    let mut values = Vec::new();
    for level in family.sorted_spectrum(cutoff) {
        if level.multiplicity > 1 {
            return Err(Error::Collision(values.len() + 1, values.len() + 2));
        }
        values.push(level.value);
    }
    for (k, w) in values.windows(2).enumerate() {
        if w[1] - w[0] <= COLLISION_RTOL * w[1] {
            return Err(Error::Collision(k + 1, k + 2));
        }
    }
    if values.len() < MIN_GAP_EIGENVALUES {
        return Err(Error::InsufficientData(format!(
            "only {} eigenvalues below {cutoff}, need {MIN_GAP_EIGENVALUES}",
            values.len()
        )));
    }
    let unit = match family {
        EigenFamily::CustomList { .. } => 1.0,
        _ => PI * PI,
    };
    let (position, scaled, gap) = values
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k + 1, (w[1] - w[0]) * w[1] / (unit * unit), w[1] - w[0]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least two eigenvalues");
    Ok(GapReport {
        family: family.name().to_string(),
        cutoff,
        count: values.len(),
        unit,
        min_scaled_gap: scaled,
        constant: SQRT_2 * scaled,
        position,
        smallest_gap: gap,
    })
}
