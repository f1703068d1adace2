//! Closed-form spectra, eigenfunctions and eigen-expansion trajectories.
//!
//! Every family here has a known spectrum, so a solution of `u_t = -L u` is
//! the series `sum_n c_n exp(-mu_n t) phi_n(x)`. Eigenfunctions use the
//! unnormalized `sin`/`cos` forms; all downstream error measures are relative
//! and therefore normalization-invariant.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard ceiling on the number of modes summed along one axis.
pub const MAX_MODES_PER_AXIS: usize = 4096;

/// Slack allowed when checking that a point lies inside a domain.
const DOMAIN_SLACK: f64 = 1e-12;

/// Height of the `[0, 1] x [0, 2^{-1/4}]` rectangle used by [`EigenFamily::Rect2D`].
pub fn rect_height() -> f64 {
    2f64.powf(-0.25)
}

/// Height of the `[0, 1] x [0, 2^{-1/8}]` rectangle used by [`EigenFamily::FourthOrder2D`].
pub fn fourth_order_height() -> f64 {
    2f64.powf(-0.125)
}

/// A spectrum/eigenfunction family with closed-form eigenpairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EigenFamily {
    /// `-u_xx` on `[0, 1]` with Dirichlet conditions: `mu_n = pi^2 n^2`, `phi_n = sin(n pi x)`.
    #[serde(rename = "dirichlet1d")]
    Dirichlet1D,
    /// `-u_xx + u` on `[0, 1]`: constant mode with `mu = 1`, then `sin`/`cos`
    /// pairs sharing `mu_n = n^2 pi^2 + 1`.
    #[serde(rename = "periodic1d")]
    Periodic1D,
    /// `-Laplace` on `[0, 1] x [0, 2^{-1/4}]`: `pi^2 (m^2 + sqrt(2) n^2)`.
    #[serde(rename = "rect2d")]
    Rect2D,
    /// Fourth-order operator on `[0, 1] x [0, 2^{-1/8}]` with decay rates
    /// `pi^2 (m^4 + sqrt(2) n^4)`.
    #[serde(rename = "fourth_order2d")]
    FourthOrder2D,
    /// An explicit ascending list of eigenvalues on `[0, 1]`, paired with the
    /// Dirichlet eigenfunctions `sin(n pi x)`.
    #[serde(rename = "custom")]
    CustomList { eigenvalues: Vec<f64> },
}

/// Which eigenfunction of a `sin`/`cos` pair a periodic index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Sin,
    Cos,
    Const,
}

/// Index of one eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeIndex {
    /// `n >= 1` for one-dimensional families.
    Line(usize),
    /// `(m, n)` with `m, n >= 1` for rectangle families.
    Grid(usize, usize),
    /// `(n, branch)` for [`EigenFamily::Periodic1D`]; `Const` only with `n = 0`.
    Periodic(usize, Branch),
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeIndex::Line(n) => write!(f, "{n}"),
            ModeIndex::Grid(m, n) => write!(f, "({m},{n})"),
            ModeIndex::Periodic(n, b) => {
                let b = match b {
                    Branch::Sin => "sin",
                    Branch::Cos => "cos",
                    Branch::Const => "const",
                };
                write!(f, "{n}:{b}")
            }
        }
    }
}

impl FromStr for ModeIndex {
    type Err = Error;

    /// Accepts `3`, `2,3`, `(2,3)`, `2:sin`, `2:cos` and `0:const`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse mode index {s:?}"));
        let s = s.trim();
        if let Some((n, branch)) = s.split_once(':') {
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            let branch = match branch.trim() {
                "sin" => Branch::Sin,
                "cos" => Branch::Cos,
                "const" => Branch::Const,
                _ => return Err(bad()),
            };
            return Ok(ModeIndex::Periodic(n, branch));
        }
        let inner = s.trim_start_matches('(').trim_end_matches(')');
        if let Some((m, n)) = inner.split_once(',') {
            let m = m.trim().parse().map_err(|_| bad())?;
            let n = n.trim().parse().map_err(|_| bad())?;
            return Ok(ModeIndex::Grid(m, n));
        }
        Ok(ModeIndex::Line(inner.parse().map_err(|_| bad())?))
    }
}

impl Serialize for ModeIndex {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModeIndex {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One distinct eigenvalue together with the indices of its eigenspace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumLevel {
    pub value: f64,
    pub indices: Vec<ModeIndex>,
    pub multiplicity: usize,
}

/// Asymptotic growth `mu_n ~ scale * n^power` of the sorted spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub scale: f64,
    pub power: f64,
}

impl EigenFamily {
    /// Builds a validated [`EigenFamily::CustomList`].
    pub fn custom(eigenvalues: Vec<f64>) -> Result<Self> {
        let family = EigenFamily::CustomList { eigenvalues };
        family.validate()?;
        Ok(family)
    }

    pub fn validate(&self) -> Result<()> {
        if let EigenFamily::CustomList { eigenvalues } = self {
            check_ascending_positive(eigenvalues, "eigenvalues")?;
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            EigenFamily::Dirichlet1D => "dirichlet1d",
            EigenFamily::Periodic1D => "periodic1d",
            EigenFamily::Rect2D => "rect2d",
            EigenFamily::FourthOrder2D => "fourth_order2d",
            EigenFamily::CustomList { .. } => "custom",
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EigenFamily::Rect2D | EigenFamily::FourthOrder2D => 2,
            _ => 1,
        }
    }

    /// Side lengths of the domain, one per axis; every axis starts at 0.
    pub fn extent(&self) -> Vec<f64> {
        match self {
            EigenFamily::Rect2D => vec![1.0, rect_height()],
            EigenFamily::FourthOrder2D => vec![1.0, fourth_order_height()],
            _ => vec![1.0],
        }
    }

    /// Exponent `p` in the separable 2-D rates `pi^2 m^p + sqrt(2) pi^2 n^p`.
    fn grid_power(&self) -> i32 {
        match self {
            EigenFamily::FourthOrder2D => 4,
            _ => 2,
        }
    }

    /// Wavenumber stretch of the `y` eigenfunctions `sin(s n pi y)`.
    fn y_stretch(&self) -> f64 {
        match self {
            EigenFamily::Rect2D => 2f64.powf(0.25),
            EigenFamily::FourthOrder2D => 2f64.powf(0.125),
            _ => 1.0,
        }
    }

    /// Number of eigenvalues for finite lists, `None` for infinite families.
    pub(crate) fn finite_len(&self) -> Option<usize> {
        match self {
            EigenFamily::CustomList { eigenvalues } => Some(eigenvalues.len()),
            _ => None,
        }
    }

    /// Decay-rate contribution of wavenumber `k >= 1` along `axis`.
    ///
    /// For one-dimensional families this is the full eigenvalue of `sin(k pi x)`
    /// (or of the `k`-th listed value); for rectangles the eigenvalue is the sum
    /// of the two axis rates.
    pub(crate) fn axis_rate(&self, axis: usize, k: usize) -> f64 {
        let kf = k as f64;
        match self {
            EigenFamily::Dirichlet1D => PI * PI * kf * kf,
            EigenFamily::Periodic1D => kf * kf * PI * PI + 1.0,
            EigenFamily::CustomList { eigenvalues } => eigenvalues[k - 1],
            EigenFamily::Rect2D | EigenFamily::FourthOrder2D => {
                let base = PI * PI * kf.powi(self.grid_power());
                if axis == 0 {
                    base
                } else {
                    2f64.sqrt() * base
                }
            }
        }
    }

    /// Axis eigenfunction `sin(k pi x)` / `sin(s k pi y)` (or `cos` for the
    /// periodic cosine branch) evaluated at one coordinate.
    pub(crate) fn axis_function(&self, axis: usize, k: usize, branch: Branch, coord: f64) -> f64 {
        let kf = k as f64;
        match branch {
            Branch::Const => 1.0,
            Branch::Cos => (kf * PI * coord).cos(),
            Branch::Sin => {
                let stretch = if axis == 0 { 1.0 } else { self.y_stretch() };
                (stretch * kf * PI * coord).sin()
            }
        }
    }

    fn invalid(&self, idx: ModeIndex) -> Error {
        Error::InvalidIndex {
            family: self.name(),
            index: idx.to_string(),
        }
    }

    fn check_index(&self, idx: ModeIndex) -> Result<()> {
        let ok = match (self, idx) {
            (EigenFamily::Dirichlet1D, ModeIndex::Line(n)) => n >= 1,
            (EigenFamily::CustomList { eigenvalues }, ModeIndex::Line(n)) => n >= 1 && n <= eigenvalues.len(),
            (EigenFamily::Periodic1D, ModeIndex::Periodic(n, b)) => match b {
                Branch::Const => n == 0,
                Branch::Sin | Branch::Cos => n >= 1,
            },
            (EigenFamily::Rect2D | EigenFamily::FourthOrder2D, ModeIndex::Grid(m, n)) => m >= 1 && n >= 1,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.invalid(idx))
        }
    }

    /// Exact closed-form eigenvalue of one index.
    pub fn eigenvalue(&self, idx: ModeIndex) -> Result<f64> {
        self.check_index(idx)?;
        Ok(match idx {
            ModeIndex::Line(n) => self.axis_rate(0, n),
            ModeIndex::Periodic(0, _) => 1.0,
            ModeIndex::Periodic(n, _) => self.axis_rate(0, n),
            ModeIndex::Grid(m, n) => {
                let p = self.grid_power();
                PI * PI * ((m as f64).powi(p) + 2f64.sqrt() * (n as f64).powi(p))
            }
        })
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        let extent = self.extent();
        point.len() == extent.len()
            && point
                .iter()
                .zip(&extent)
                .all(|(&p, &l)| p >= -DOMAIN_SLACK && p <= l + DOMAIN_SLACK)
    }

    /// Unnormalized eigenfunction value at `point`.
    pub fn eigenfunction(&self, idx: ModeIndex, point: &[f64]) -> Result<f64> {
        self.check_index(idx)?;
        if !self.contains(point) {
            return Err(Error::OutsideDomain {
                family: self.name(),
                point: point.to_vec(),
            });
        }
        Ok(match idx {
            ModeIndex::Line(n) => self.axis_function(0, n, Branch::Sin, point[0]),
            ModeIndex::Periodic(n, b) => self.axis_function(0, n, b, point[0]),
            ModeIndex::Grid(m, n) => {
                self.axis_function(0, m, Branch::Sin, point[0])
                    * self.axis_function(1, n, Branch::Sin, point[1])
            }
        })
    }

    /// Distinct eigenvalues `<= cutoff` in strictly ascending order, each with
    /// the indices spanning its eigenspace. Empty when the cutoff is below the
    /// ground state.
    pub fn sorted_spectrum(&self, cutoff: f64) -> Vec<SpectrumLevel> {
        let mut entries: Vec<(f64, ModeIndex)> = Vec::new();
        match self {
            EigenFamily::Dirichlet1D => {
                let mut n = 1;
                while self.axis_rate(0, n) <= cutoff {
                    entries.push((self.axis_rate(0, n), ModeIndex::Line(n)));
                    n += 1;
                }
            }
            EigenFamily::CustomList { eigenvalues } => {
                for (i, &v) in eigenvalues.iter().enumerate() {
                    if v <= cutoff {
                        entries.push((v, ModeIndex::Line(i + 1)));
                    }
                }
            }
            EigenFamily::Periodic1D => {
                if 1.0 <= cutoff {
                    entries.push((1.0, ModeIndex::Periodic(0, Branch::Const)));
                }
                let mut n = 1;
                while self.axis_rate(0, n) <= cutoff {
                    let v = self.axis_rate(0, n);
                    entries.push((v, ModeIndex::Periodic(n, Branch::Sin)));
                    entries.push((v, ModeIndex::Periodic(n, Branch::Cos)));
                    n += 1;
                }
            }
            EigenFamily::Rect2D | EigenFamily::FourthOrder2D => {
                // m^p + sqrt(2) n^p <= cutoff / pi^2 bounds each index by the
                // other being 1.
                let mut m = 1;
                while self.axis_rate(0, m) + self.axis_rate(1, 1) <= cutoff {
                    let mut n = 1;
                    loop {
                        let v = self
                            .eigenvalue(ModeIndex::Grid(m, n))
                            .expect("grid index is valid");
                        if v > cutoff {
                            break;
                        }
                        entries.push((v, ModeIndex::Grid(m, n)));
                        n += 1;
                    }
                    m += 1;
                }
            }
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut levels: Vec<SpectrumLevel> = Vec::new();
        for (value, idx) in entries {
            match levels.last_mut() {
                Some(level) if level.value == value => {
                    level.indices.push(idx);
                    level.multiplicity += 1;
                }
                _ => levels.push(SpectrumLevel {
                    value,
                    indices: vec![idx],
                    multiplicity: 1,
                }),
            }
        }
        levels
    }

    /// Growth of the sorted spectrum counted with multiplicity.
    ///
    /// The rectangle constants follow from counting lattice points under the
    /// ellipse (second order) or the quartic curve (fourth order).
    pub fn growth(&self) -> Growth {
        match self {
            EigenFamily::Dirichlet1D | EigenFamily::CustomList { .. } => Growth {
                scale: PI * PI,
                power: 2.0,
            },
            // Pairs share an eigenvalue, so the k-th value is about (k/2)^2 pi^2.
            EigenFamily::Periodic1D => Growth {
                scale: PI * PI / 4.0,
                power: 2.0,
            },
            EigenFamily::Rect2D => Growth {
                scale: 4.0 * PI * 2f64.powf(0.25),
                power: 1.0,
            },
            EigenFamily::FourthOrder2D => {
                // Area of {x^4 + y^4 <= 1, x, y >= 0} is Gamma(5/4)^2 / Gamma(3/2).
                let quartic_area = 0.906_402_477_055_477_f64.powi(2) / 0.886_226_925_452_758;
                let a = quartic_area * 2f64.powf(-0.125);
                Growth {
                    scale: PI * PI / (a * a),
                    power: 2.0,
                }
            }
        }
    }
}

pub(crate) fn check_ascending_positive(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} list is empty")));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() || *v <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{what}[{i}] = {v} is not a positive finite number"
            )));
        }
        if i > 0 && values[i - 1] >= *v {
            return Err(Error::InvalidArgument(format!(
                "{what} must be strictly ascending (position {i})"
            )));
        }
    }
    Ok(())
}

/// Rule generating the expansion coefficients of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CoefficientFamily {
    /// `c_n = (-1)^n / n^2`; `(-1)^{m+n} / (m^2 n^2)` on rectangles; the
    /// periodic constant mode gets coefficient 1.
    AlternatingInverseSquare,
    /// `c_{m,n} = 1 / (m^2 n^2)`; `1 / n^2` in one dimension.
    ProductInverseSquare,
    /// Independent `U(-1, 1)` draws for indices up to `count`, zero beyond.
    /// Draw `k` depends only on `(seed, k)`.
    RandomUniform { seed: u64, count: usize },
    /// Explicit list `c_1, c_2, ...`; rectangles use the products `c_m c_n`.
    ExplicitList { values: Vec<f64> },
}

/// `|c| <= amplitude * n^{-power}` (per axis), zero beyond `support`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Majorant {
    pub amplitude: f64,
    pub power: f64,
    pub support: Option<usize>,
}

impl Majorant {
    /// Upper bound on `sum_{n > after} n^{-power}`, if one exists.
    pub fn tail_sum(&self, after: usize) -> Option<f64> {
        let mut best: Option<f64> = None;
        if let Some(s) = self.support {
            let v = if after >= s {
                0.0
            } else {
                (s - after) as f64 * ((after + 1) as f64).powf(-self.power)
            };
            best = Some(v);
        }
        if self.power > 1.0 {
            let p = self.power;
            let v = if after == 0 {
                p / (p - 1.0)
            } else {
                (after as f64).powf(1.0 - p) / (p - 1.0)
            };
            best = Some(best.map_or(v, |b| b.min(v)));
        }
        best
    }
}

/// Draw `index` of the `U(-1, 1)` sequence keyed by `seed`.
pub fn uniform_draw(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Each f64 sample consumes one u64, i.e. two 32-bit words.
    rng.set_word_pos(u128::from(index) * 2);
    Uniform::new(-1.0, 1.0).expect("non-empty range").sample(&mut rng)
}

impl CoefficientFamily {
    pub fn validate(&self) -> Result<()> {
        if let CoefficientFamily::ExplicitList { values } = self {
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("coefficient {v} is not finite")));
            }
        }
        Ok(())
    }

    /// Coefficient attached to one eigenfunction.
    pub fn coefficient(&self, idx: ModeIndex) -> f64 {
        let alt = |n: usize| if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        let inv_sq = |n: usize| 1.0 / (n as f64 * n as f64);
        match (self, idx) {
            (_, ModeIndex::Periodic(_, Branch::Const)) => match self {
                CoefficientFamily::AlternatingInverseSquare | CoefficientFamily::ProductInverseSquare => 1.0,
                CoefficientFamily::RandomUniform { seed, .. } => uniform_draw(*seed, 0),
                CoefficientFamily::ExplicitList { .. } => 0.0,
            },
            (CoefficientFamily::AlternatingInverseSquare, ModeIndex::Line(n) | ModeIndex::Periodic(n, _)) => {
                alt(n) * inv_sq(n)
            }
            (CoefficientFamily::AlternatingInverseSquare, ModeIndex::Grid(m, n)) => {
                alt(m + n) * inv_sq(m) * inv_sq(n)
            }
            (CoefficientFamily::ProductInverseSquare, ModeIndex::Line(n) | ModeIndex::Periodic(n, _)) => {
                inv_sq(n)
            }
            (CoefficientFamily::ProductInverseSquare, ModeIndex::Grid(m, n)) => inv_sq(m) * inv_sq(n),
            (CoefficientFamily::RandomUniform { seed, count }, idx) => {
                let draw_index = match idx {
                    ModeIndex::Line(n) if n <= *count => Some(n as u64 - 1),
                    ModeIndex::Periodic(n, b) if n <= *count => {
                        Some(2 * n as u64 - u64::from(b == Branch::Sin))
                    }
                    ModeIndex::Grid(m, n) if m <= *count && n <= *count => {
                        Some(((m - 1) * count + (n - 1)) as u64)
                    }
                    _ => None,
                };
                draw_index.map_or(0.0, |k| uniform_draw(*seed, k))
            }
            (CoefficientFamily::ExplicitList { values }, idx) => {
                let get = |n: usize| values.get(n.wrapping_sub(1)).copied().unwrap_or(0.0);
                match idx {
                    ModeIndex::Line(n) | ModeIndex::Periodic(n, _) => get(n),
                    ModeIndex::Grid(m, n) => get(m) * get(n),
                }
            }
        }
    }

    /// Per-axis factor `a_k` when rectangle coefficients factor as `a_m a_n`.
    pub(crate) fn separable_factor(&self, k: usize) -> Option<f64> {
        let kf = k as f64;
        match self {
            CoefficientFamily::AlternatingInverseSquare => {
                Some(if k.is_multiple_of(2) { 1.0 } else { -1.0 } / (kf * kf))
            }
            CoefficientFamily::ProductInverseSquare => Some(1.0 / (kf * kf)),
            CoefficientFamily::ExplicitList { values } => Some(values.get(k - 1).copied().unwrap_or(0.0)),
            CoefficientFamily::RandomUniform { .. } => None,
        }
    }

    pub(crate) fn is_separable(&self) -> bool {
        !matches!(self, CoefficientFamily::RandomUniform { .. })
    }

    pub(crate) fn majorant(&self) -> Majorant {
        match self {
            CoefficientFamily::AlternatingInverseSquare | CoefficientFamily::ProductInverseSquare => {
                Majorant {
                    amplitude: 1.0,
                    power: 2.0,
                    support: None,
                }
            }
            CoefficientFamily::RandomUniform { count, .. } => Majorant {
                amplitude: 1.0,
                power: 0.0,
                support: Some(*count),
            },
            CoefficientFamily::ExplicitList { values } => Majorant {
                amplitude: values.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                power: 0.0,
                support: Some(values.len()),
            },
        }
    }
}

/// Which members of each periodic `sin`/`cos` pair (and the constant mode) a
/// trajectory contains. Ignored by the other families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    pub sin: bool,
    pub cos: bool,
    pub constant: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Branches::ALL
    }
}

impl Branches {
    pub const ALL: Branches = Branches {
        sin: true,
        cos: true,
        constant: true,
    };
    pub const SIN: Branches = Branches {
        sin: true,
        cos: false,
        constant: false,
    };
    pub const COS_AND_CONSTANT: Branches = Branches {
        sin: false,
        cos: true,
        constant: true,
    };

    fn per_wavenumber(&self) -> usize {
        usize::from(self.sin) + usize::from(self.cos)
    }
}

/// A solution `u(x, t) = sum_n c_n exp(-mu_n t) phi_n(x)` of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub family: EigenFamily,
    pub coeffs: CoefficientFamily,
    #[serde(default)]
    pub branches: Branches,
}

/// A truncated series value together with the number of wavenumbers summed
/// along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryValue {
    pub value: f64,
    pub modes: Vec<usize>,
}

/// One term of a one-dimensional expansion.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LineMode {
    pub wavenumber: usize,
    pub branch: Branch,
    pub rate: f64,
    pub coefficient: f64,
}

impl Trajectory {
    pub fn new(family: EigenFamily, coeffs: CoefficientFamily) -> Self {
        Trajectory {
            family,
            coeffs,
            branches: Branches::ALL,
        }
    }

    pub fn with_branches(mut self, branches: Branches) -> Self {
        self.branches = branches;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        self.coeffs.validate()
    }

    /// Whether the expansion contains the eigenfunction `idx` at all.
    pub fn includes(&self, idx: ModeIndex) -> bool {
        match idx {
            ModeIndex::Periodic(_, Branch::Sin) => self.branches.sin,
            ModeIndex::Periodic(_, Branch::Cos) => self.branches.cos,
            ModeIndex::Periodic(_, Branch::Const) => self.branches.constant,
            _ => true,
        }
    }

    /// Coefficient of `idx` in this expansion (zero for excluded branches).
    pub fn coefficient(&self, idx: ModeIndex) -> f64 {
        if self.includes(idx) {
            self.coeffs.coefficient(idx)
        } else {
            0.0
        }
    }

    fn terms_per_wavenumber(&self) -> f64 {
        match self.family {
            EigenFamily::Periodic1D => self.branches.per_wavenumber() as f64,
            _ => 1.0,
        }
    }

    /// Smallest wavenumber count along `axis` whose remaining tail is provably
    /// `<= tol` at time `t`. `cross_sum` bounds the sum over the other axis.
    fn axis_truncation(&self, axis: usize, t: f64, tol: f64, cross_sum: f64) -> Result<usize> {
        let majorant = self.coeffs.majorant();
        let cap = self
            .family
            .finite_len()
            .map_or(MAX_MODES_PER_AXIS, |len| len.min(MAX_MODES_PER_AXIS));
        let scale = majorant.amplitude * self.terms_per_wavenumber() * cross_sum;
        for n in 0..=cap {
            if self.family.finite_len() == Some(n) {
                return Ok(n);
            }
            let Some(tail) = majorant.tail_sum(n) else {
                return Err(Error::Truncation(
                    "coefficients have neither finite support nor a summable majorant".into(),
                ));
            };
            let decay = if tail == 0.0 {
                0.0
            } else {
                (-self.family.axis_rate(axis, n + 1) * t).exp()
            };
            if scale * decay * tail <= tol {
                return Ok(n);
            }
        }
        Err(Error::Truncation(format!(
            "tail above tolerance {tol:e} after {cap} modes at t = {t:e}"
        )))
    }

    /// Number of wavenumbers per axis needed at time `t` for tolerance `tol`.
    pub fn truncation(&self, t: f64, tol: f64) -> Result<Vec<usize>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time {t} must be finite and >= 0"
            )));
        }
        if !(tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {tol} must be >= 0")));
        }
        match self.family.dimension() {
            1 => Ok(vec![self.axis_truncation(0, t, tol, 1.0)?]),
            _ => {
                let full =
                    self.coeffs.majorant().tail_sum(0).ok_or_else(|| {
                        Error::Truncation("coefficient family has no summable majorant".into())
                    })?;
                let x = self.axis_truncation(0, t, tol / 2.0, full)?;
                let y = self.axis_truncation(1, t, tol / 2.0, full)?;
                Ok(vec![x, y])
            }
        }
    }

    /// Terms of a one-dimensional expansion with wavenumbers `<= count`, in
    /// summation order (constant first, then `sin` before `cos`).
    pub(crate) fn line_modes(&self, count: usize) -> Vec<LineMode> {
        let mut modes = Vec::new();
        let family = &self.family;
        let periodic = matches!(family, EigenFamily::Periodic1D);
        if periodic && self.branches.constant {
            modes.push(LineMode {
                wavenumber: 0,
                branch: Branch::Const,
                rate: 1.0,
                coefficient: self.coeffs.coefficient(ModeIndex::Periodic(0, Branch::Const)),
            });
        }
        for n in 1..=count {
            let rate = family.axis_rate(0, n);
            if periodic {
                for (on, branch) in [(self.branches.sin, Branch::Sin), (self.branches.cos, Branch::Cos)] {
                    if on {
                        modes.push(LineMode {
                            wavenumber: n,
                            branch,
                            rate,
                            coefficient: self.coeffs.coefficient(ModeIndex::Periodic(n, branch)),
                        });
                    }
                }
            } else {
                modes.push(LineMode {
                    wavenumber: n,
                    branch: Branch::Sin,
                    rate,
                    coefficient: self.coeffs.coefficient(ModeIndex::Line(n)),
                });
            }
        }
        modes
    }

    /// Evaluates the truncated series at one point and time.
    pub fn eval(&self, point: &[f64], t: f64, tol: f64) -> Result<TrajectoryValue> {
        if !self.family.contains(point) {
            return Err(Error::OutsideDomain {
                family: self.family.name(),
                point: point.to_vec(),
            });
        }
        let modes = self.truncation(t, tol)?;
        let value = if self.family.dimension() == 1 {
            self.line_modes(modes[0])
                .iter()
                .map(|m| {
                    m.coefficient
                        * (-m.rate * t).exp()
                        * self.family.axis_function(0, m.wavenumber, m.branch, point[0])
                })
                .sum()
        } else {
            let fam = &self.family;
            let xs: Vec<f64> = (1..=modes[0])
                .map(|m| (-fam.axis_rate(0, m) * t).exp() * fam.axis_function(0, m, Branch::Sin, point[0]))
                .collect();
            let ys: Vec<f64> = (1..=modes[1])
                .map(|n| (-fam.axis_rate(1, n) * t).exp() * fam.axis_function(1, n, Branch::Sin, point[1]))
                .collect();
            let mut total = 0.0;
            for (mi, xv) in xs.iter().enumerate() {
                let row: f64 = ys
                    .iter()
                    .enumerate()
                    .map(|(ni, yv)| self.coeffs.coefficient(ModeIndex::Grid(mi + 1, ni + 1)) * yv)
                    .sum();
                total += xv * row;
            }
            total
        };
        Ok(TrajectoryValue { value, modes })
    }
}

/// Free-function form of [`Trajectory::eval`] with every periodic branch.
pub fn trajectory_eval(
    family: &EigenFamily,
    coeffs: &CoefficientFamily,
    point: &[f64],
    t: f64,
    tol: f64,
) -> Result<TrajectoryValue> {
    Trajectory::new(family.clone(), coeffs.clone()).eval(point, t, tol)
}

/// JSON document `{"eigenvalues": [...], "coefficients": [...]}` describing a
/// custom spectrum and/or explicit coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CustomSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
}

impl CustomSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: CustomSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("custom spectrum: {e}")))?;
        if let Some(ev) = &spec.eigenvalues {
            check_ascending_positive(ev, "eigenvalues")?;
        }
        if spec.eigenvalues.is_none() && spec.coefficients.is_none() {
            return Err(Error::Config(
                "custom spectrum needs \"eigenvalues\" or \"coefficients\"".into(),
            ));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(reason) | Error::InvalidArgument(reason) => Error::malformed(path, reason),
            other => other,
        })
    }

    pub fn family(&self) -> Option<EigenFamily> {
        self.eigenvalues
            .clone()
            .map(|eigenvalues| EigenFamily::CustomList { eigenvalues })
    }

    pub fn coefficient_family(&self) -> Option<CoefficientFamily> {
        self.coefficients
            .clone()
            .map(|values| CoefficientFamily::ExplicitList { values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PI2: f64 = PI * PI;

    #[test]
    fn eigenvalue_examples() {
        let d = EigenFamily::Dirichlet1D;
        assert_eq!(d.eigenvalue(ModeIndex::Line(1)).unwrap(), PI2);
        let r = EigenFamily::Rect2D.eigenvalue(ModeIndex::Grid(1, 1)).unwrap();
        assert!((r - PI2 * (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((r - 23.83).abs() < 5e-3);
        let f = EigenFamily::FourthOrder2D
            .eigenvalue(ModeIndex::Grid(2, 1))
            .unwrap();
        assert!((f - PI2 * (16.0 + 2f64.sqrt())).abs() < 1e-11);
        assert!((f - 171.88).abs() < 1e-2);
        let p = EigenFamily::Periodic1D;
        assert_eq!(p.eigenvalue(ModeIndex::Periodic(0, Branch::Const)).unwrap(), 1.0);
        assert_eq!(
            p.eigenvalue(ModeIndex::Periodic(2, Branch::Cos)).unwrap(),
            4.0 * PI2 + 1.0
        );
    }

    #[test]
    fn invalid_indices_are_rejected() {
        let d = EigenFamily::Dirichlet1D;
        assert!(matches!(
            d.eigenvalue(ModeIndex::Periodic(1, Branch::Sin)),
            Err(Error::InvalidIndex { .. })
        ));
        assert!(d.eigenvalue(ModeIndex::Line(0)).is_err());
        let p = EigenFamily::Periodic1D;
        assert!(p.eigenvalue(ModeIndex::Periodic(1, Branch::Const)).is_err());
        assert!(p.eigenvalue(ModeIndex::Periodic(0, Branch::Sin)).is_err());
        assert!(EigenFamily::Rect2D.eigenvalue(ModeIndex::Line(1)).is_err());
        let c = EigenFamily::custom(vec![1.0, 2.0]).unwrap();
        assert!(c.eigenvalue(ModeIndex::Line(3)).is_err());
    }

    #[test]
    fn eigenfunction_examples() {
        let d = EigenFamily::Dirichlet1D;
        assert!((d.eigenfunction(ModeIndex::Line(2), &[0.25]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(d.eigenfunction(ModeIndex::Line(3), &[0.0]).unwrap(), 0.0);
        let r = EigenFamily::Rect2D;
        let v = r
            .eigenfunction(ModeIndex::Grid(1, 1), &[0.5, rect_height() / 2.0])
            .unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(matches!(
            d.eigenfunction(ModeIndex::Line(1), &[1.5]),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(r.eigenfunction(ModeIndex::Grid(1, 1), &[0.5, 0.9]).is_err());
    }

    #[test]
    fn spectrum_examples() {
        let levels = EigenFamily::Rect2D.sorted_spectrum(100.0);
        assert_eq!(levels[0].indices, vec![ModeIndex::Grid(1, 1)]);
        assert_eq!(levels[0].multiplicity, 1);
        assert!((levels[0].value - PI2 * (1.0 + 2f64.sqrt())).abs() < 1e-12);

        let d = EigenFamily::Dirichlet1D.sorted_spectrum(5.0 * PI2);
        let values: Vec<f64> = d.iter().map(|l| l.value).collect();
        assert_eq!(values, vec![PI2, 4.0 * PI2]);

        let p = EigenFamily::Periodic1D.sorted_spectrum(2.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].value, 1.0);
        assert_eq!(p[0].indices, vec![ModeIndex::Periodic(0, Branch::Const)]);

        let p = EigenFamily::Periodic1D.sorted_spectrum(50.0);
        assert_eq!(p[1].multiplicity, 2);

        assert!(EigenFamily::Dirichlet1D.sorted_spectrum(1.0).is_empty());
    }

    #[test]
    fn mode_index_parsing_round_trips() {
        for s in ["3", "(2,3)", "2:sin", "4:cos", "0:const"] {
            let idx: ModeIndex = s.parse().unwrap();
            assert_eq!(idx.to_string().parse::<ModeIndex>().unwrap(), idx);
        }
        assert_eq!("2,3".parse::<ModeIndex>().unwrap(), ModeIndex::Grid(2, 3));
        assert!("x".parse::<ModeIndex>().is_err());
        assert!("2:tan".parse::<ModeIndex>().is_err());
    }

    #[test]
    fn single_mode_trajectory() {
        let traj = Trajectory::new(
            EigenFamily::Dirichlet1D,
            CoefficientFamily::ExplicitList { values: vec![1.0] },
        );
        let v = traj.eval(&[0.5], 1.0, 1e-14).unwrap();
        assert!((v.value - (-PI2).exp()).abs() < 1e-19);
        assert_eq!(v.modes, vec![1]);
        assert!((v.value - 5.172e-5).abs() < 1e-8);
    }

    #[test]
    fn alternating_series_matches_direct_summation() {
        // Oracle: 10 000 terms summed directly, far beyond where the exponential
        // factor underflows at t = 0.1.
        let (x, t) = (0.5, 0.1);
        let oracle: f64 = (1..=10_000)
            .map(|n| {
                let nf = n as f64;
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign / (nf * nf) * (-PI2 * nf * nf * t).exp() * (nf * PI * x).sin()
            })
            .sum();
        let v = trajectory_eval(
            &EigenFamily::Dirichlet1D,
            &CoefficientFamily::AlternatingInverseSquare,
            &[x],
            t,
            1e-14,
        )
        .unwrap();
        assert!((v.value - oracle).abs() < 1e-13);
        assert!(v.modes[0] < 20);
    }

    #[test]
    fn rectangle_series_factorizes() {
        let fam = EigenFamily::Rect2D;
        let (x, y, t) = (0.3, 0.41, 0.01);
        let v = trajectory_eval(&fam, &CoefficientFamily::ProductInverseSquare, &[x, y], t, 1e-15).unwrap();
        let sx: f64 = (1..=2000)
            .map(|m| {
                let mf = m as f64;
                (-PI2 * mf * mf * t).exp() * (mf * PI * x).sin() / (mf * mf)
            })
            .sum();
        let s = 2f64.powf(0.25);
        let sy: f64 = (1..=2000)
            .map(|n| {
                let nf = n as f64;
                (-2f64.sqrt() * PI2 * nf * nf * t).exp() * (s * nf * PI * y).sin() / (nf * nf)
            })
            .sum();
        assert!((v.value - sx * sy).abs() < 1e-13);
    }

    #[test]
    fn zero_time_with_infinite_support_cannot_terminate() {
        let err = trajectory_eval(
            &EigenFamily::Dirichlet1D,
            &CoefficientFamily::AlternatingInverseSquare,
            &[0.5],
            0.0,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Truncation(_)));
        // A finitely supported list terminates even with zero tolerance.
        let v = trajectory_eval(
            &EigenFamily::Dirichlet1D,
            &CoefficientFamily::ExplicitList {
                values: vec![1.0, -0.5, 0.25],
            },
            &[0.3],
            0.0,
            0.0,
        )
        .unwrap();
        let direct = (PI * 0.3).sin() - 0.5 * (2.0 * PI * 0.3).sin() + 0.25 * (3.0 * PI * 0.3).sin();
        assert!((v.value - direct).abs() < 1e-15);
    }

    #[test]
    fn random_draws_are_reproducible_and_bounded() {
        let c = CoefficientFamily::RandomUniform { seed: 7, count: 10 };
        let a: Vec<f64> = (1..=12).map(|n| c.coefficient(ModeIndex::Line(n))).collect();
        let b: Vec<f64> = (1..=12).map(|n| c.coefficient(ModeIndex::Line(n))).collect();
        assert_eq!(a, b);
        assert!(a[..10].iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(&a[10..], &[0.0, 0.0]);
        let other = CoefficientFamily::RandomUniform { seed: 8, count: 10 };
        assert_ne!(a[0], other.coefficient(ModeIndex::Line(1)));
    }

    #[test]
    fn periodic_branches_split_the_expansion() {
        let t = 0.05;
        let x = 0.37;
        let all = Trajectory::new(
            EigenFamily::Periodic1D,
            CoefficientFamily::AlternatingInverseSquare,
        );
        let sin = all.clone().with_branches(Branches::SIN);
        let cos = all.clone().with_branches(Branches::COS_AND_CONSTANT);
        let a = all.eval(&[x], t, 1e-15).unwrap().value;
        let b = sin.eval(&[x], t, 1e-15).unwrap().value + cos.eval(&[x], t, 1e-15).unwrap().value;
        assert!((a - b).abs() < 1e-14);
        // The constant mode of the cosine trajectory decays as exp(-t).
        let leading = cos.eval(&[x], 5.0, 1e-300).unwrap();
        assert!((leading.value - (-5.0f64).exp()).abs() < 1e-20);
    }

    #[test]
    fn custom_spec_parsing() {
        let spec = CustomSpec::from_json(r#"{"eigenvalues": [1.0, 4.0], "coefficients": [1, 2]}"#).unwrap();
        assert_eq!(
            spec.family(),
            Some(EigenFamily::CustomList {
                eigenvalues: vec![1.0, 4.0]
            })
        );
        assert!(CustomSpec::from_json(r#"{"eigenvalues": [4.0, 1.0]}"#).is_err());
        assert!(CustomSpec::from_json(r#"{"eigenvalues": [0.0, 1.0]}"#).is_err());
        assert!(CustomSpec::from_json("{}").is_err());
    }
}
