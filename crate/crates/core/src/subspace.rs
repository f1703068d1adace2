//! Weighted-SVD subspaces of snapshot matrices: extraction, projection
//! errors, canonical angles and the Wedin perturbation bound, multiplicity
//! diagnostics and least-squares reconstruction from point sensors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::snapshot::{read_csv, read_json, sidecar_path, write_csv, write_json, SnapshotMatrix, SpaceGrid};
use crate::spectral::{SpectrumLevel, Trajectory};

/// Relative singular value below which re-orthonormalizing a union of bases
/// drops a direction.
pub const UNION_DROP_TOL: f64 = 1e-13;

/// Default relative truncation threshold.
pub const DEFAULT_THRESHOLD: f64 = 1e-12;

const SIGN_CONVENTION: &str = "largest-magnitude entry of each column is positive";

/// Orthonormal basis (in the grid's weighted inner product) of a snapshot span.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
    threshold: f64,
    grid: SpaceGrid,
}

fn sqrt_weights(grid: &SpaceGrid) -> Vec<f64> {
    grid.weights().iter().map(|w| w.sqrt()).collect()
}

/// Flips each column so that its entry of largest magnitude is positive.
fn normalize_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// Keeps the leading singular directions with `sigma >= rel * sigma_max`.
fn kept_count(s: &[f64], rel: f64) -> usize {
    let max = s.first().copied().unwrap_or(0.0);
    s.iter().take_while(|&&x| x >= rel * max && x > 0.0).count()
}

impl Subspace {
    /// Wraps a weighted-orthonormal basis given in physical (unscaled) values.
    fn from_weighted(
        weighted: DMatrix<f64>,
        singular_values: Vec<f64>,
        threshold: f64,
        grid: &SpaceGrid,
    ) -> Self {
        let sw = sqrt_weights(grid);
        let mut basis = weighted;
        for (i, mut row) in basis.row_iter_mut().enumerate() {
            row /= sw[i];
        }
        normalize_signs(&mut basis);
        Subspace {
            basis,
            singular_values,
            threshold,
            grid: grid.clone(),
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    /// `max |B^T W B - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let wb = self.weighted_basis();
        let gram = wb.transpose() * &self.basis;
        (gram - DMatrix::identity(self.dim(), self.dim())).amax()
    }

    fn weighted_basis(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        let mut wb = self.basis.clone();
        for (i, mut row) in wb.row_iter_mut().enumerate() {
            row *= w[i];
        }
        wb
    }

    fn check_field(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.grid.node_count() {
            return Err(Error::DimensionMismatch(w.len(), self.grid.node_count()));
        }
        Ok(())
    }

    /// Coordinates `B^T W w` of the orthogonal projection.
    pub fn coordinates(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_field(w)?;
        let weights = self.grid.weights();
        Ok(self
            .basis
            .column_iter()
            .map(|c| c.iter().zip(w).zip(weights).map(|((b, x), wt)| b * x * wt).sum())
            .collect())
    }

    /// Weighted orthogonal projection `B B^T W w`.
    pub fn project(&self, w: &[f64]) -> Result<Vec<f64>> {
        let c = DVector::from_vec(self.coordinates(w)?);
        Ok((&self.basis * c).as_slice().to_vec())
    }

    /// `||w - P w||_W / ||w||_W`.
    pub fn relative_error(&self, w: &[f64]) -> Result<f64> {
        self.check_field(w)?;
        let norm = self.grid.norm(w);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroField);
        }
        Ok(self.residual_norm(w)? / norm)
    }

    fn residual_norm(&self, w: &[f64]) -> Result<f64> {
        let p = self.project(w)?;
        let r: Vec<f64> = w.iter().zip(&p).map(|(a, b)| a - b).collect();
        Ok(self.grid.norm(&r))
    }

    /// Relative error of the complex field `re + i im`.
    pub fn relative_error_complex(&self, re: &[f64], im: &[f64]) -> Result<f64> {
        self.check_field(re)?;
        self.check_field(im)?;
        let norm = (self.grid.inner(re, re) + self.grid.inner(im, im)).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroField);
        }
        let (a, b) = (self.residual_norm(re)?, self.residual_norm(im)?);
        Ok((a * a + b * b).sqrt() / norm)
    }
}

fn weighted_values(m: &SnapshotMatrix) -> DMatrix<f64> {
    let sw = sqrt_weights(m.space());
    let mut a = m.values().clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= sw[i];
    }
    a
}

/// Subspace spanned by the leading weighted left singular vectors of one or
/// more snapshot matrices.
///
/// Each matrix keeps the directions with `sigma_i >= threshold * sigma_max`
/// of that matrix. With several matrices the kept vectors are concatenated
/// and re-orthonormalized, dropping directions below [`UNION_DROP_TOL`].
/// `singular_values` lists the retained values of all sources, descending.
pub fn build_subspace(matrices: &[&SnapshotMatrix], threshold: f64) -> Result<Subspace> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InsufficientData("no snapshot matrices".into()))?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} must lie in (0, 1]"
        )));
    }
    let grid = first.space();
    if matrices.iter().any(|m| m.space() != grid) {
        return Err(Error::GridMismatch);
    }
    let mut kept_vectors: Vec<DMatrix<f64>> = Vec::new();
    let mut retained = Vec::new();
    for m in matrices {
        let svd = linalg::left_svd(&weighted_values(m))?;
        if svd.s.first().is_none_or(|&s| s == 0.0) {
            return Err(Error::ZeroMatrix);
        }
        let k = kept_count(&svd.s, threshold);
        kept_vectors.push(svd.u.columns(0, k).into_owned());
        retained.extend_from_slice(&svd.s[..k]);
    }
    retained.sort_by(|a, b| b.total_cmp(a));
    let weighted = if kept_vectors.len() == 1 {
        kept_vectors.pop().expect("one matrix")
    } else {
        let total: usize = kept_vectors.iter().map(|v| v.ncols()).sum();
        let mut union = DMatrix::zeros(grid.node_count(), total);
        let mut col = 0;
        for v in &kept_vectors {
            union.columns_mut(col, v.ncols()).copy_from(v);
            col += v.ncols();
        }
        let svd = linalg::left_svd(&union)?;
        let k = kept_count(&svd.s, UNION_DROP_TOL);
        svd.u.columns(0, k).into_owned()
    };
    Ok(Subspace::from_weighted(weighted, retained, threshold, grid))
}

/// Subspace of the `rank` leading weighted left singular vectors of a matrix.
/// The reported threshold is `sigma_rank / sigma_max`.
pub fn build_subspace_rank(m: &SnapshotMatrix, rank: usize) -> Result<Subspace> {
    let svd = linalg::left_svd(&weighted_values(m))?;
    if svd.s.first().is_none_or(|&s| s == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    if rank == 0 || rank > svd.s.len() || svd.s[rank - 1] == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} not available from a matrix with {} nonzero singular values",
            kept_count(&svd.s, f64::MIN_POSITIVE)
        )));
    }
    let threshold = svd.s[rank - 1] / svd.s[0];
    Ok(Subspace::from_weighted(
        svd.u.columns(0, rank).into_owned(),
        svd.s[..rank].to_vec(),
        threshold,
        m.space(),
    ))
}

/// Canonical-angle summary, optionally with both sides of the Wedin bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    /// Sines of the canonical angles, largest angle first.
    pub sines: Vec<f64>,
    /// `||sin Theta||_F`.
    pub frobenius: f64,
    /// `sqrt(2 upsilon) / ell * ||E||_F`; infinite when `ell <= 0`.
    pub wedin_rhs: Option<f64>,
    /// Separation `ell` between retained and discarded singular values.
    pub separation: Option<f64>,
    /// `||E||_F` of the perturbation.
    pub perturbation_frobenius: Option<f64>,
    /// `ell <= 0`: the bound gives no information.
    pub separation_failure: bool,
    /// The bound is at least `sqrt(upsilon)`, the largest possible `||sin Theta||_F`.
    pub vacuous: bool,
    /// `frobenius <= wedin_rhs`, up to floating-point rounding of the sines.
    pub holds: Option<bool>,
}

impl AngleReport {
    fn angles_only(sines: Vec<f64>) -> Self {
        let frobenius = sines.iter().map(|s| s * s).sum::<f64>().sqrt();
        AngleReport {
            sines,
            frobenius,
            wedin_rhs: None,
            separation: None,
            perturbation_frobenius: None,
            separation_failure: false,
            vacuous: false,
            holds: None,
        }
    }
}

/// Sines of the canonical angles between the column spans of two matrices
/// with Euclidean-orthonormal columns, largest first.
///
/// The sines are the singular values of `(I - Qa Qa^T) Qb`, which equal
/// `sqrt(1 - s_k^2)` for the singular values `s_k` of `Qa^T Qb` but stay
/// accurate for tiny angles.
fn sines_between(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Result<Vec<f64>> {
    let residual = qb - qa * (qa.transpose() * qb);
    let mut s = linalg::singular_values(&residual)?;
    for v in &mut s {
        *v = v.clamp(0.0, 1.0);
    }
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(qb.ncols());
    Ok(s)
}

/// Canonical angles between two subspaces of equal dimension on one grid.
pub fn canonical_angles(a: &Subspace, b: &Subspace) -> Result<AngleReport> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let sw = sqrt_weights(&a.grid);
    let scale = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= sw[i];
        }
        out
    };
    let sines = sines_between(&scale(&a.basis), &scale(&b.basis))?;
    Ok(AngleReport::angles_only(sines))
}

/// Clean-side data of the Wedin bound: the leading `upsilon` left singular
/// vectors and singular values of a clean matrix, reusable across many
/// perturbations.
#[derive(Debug, Clone)]
pub struct WedinBaseline {
    clean: DMatrix<f64>,
    upsilon: usize,
    qa: DMatrix<f64>,
    kept: Vec<f64>,
}

impl WedinBaseline {
    pub fn new(clean: &SnapshotMatrix, upsilon: usize) -> Result<Self> {
        let min_dim = clean.nrows().min(clean.ncols());
        if upsilon == 0 || upsilon > min_dim {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension {upsilon} must lie in 1..={min_dim}"
            )));
        }
        let a = linalg::left_svd(clean.values())?;
        Ok(WedinBaseline {
            clean: clean.values().clone(),
            upsilon,
            qa: a.u.columns(0, upsilon).into_owned(),
            kept: a.s[..upsilon].to_vec(),
        })
    }

    /// Both sides of the bound for one perturbed copy of the clean matrix.
    pub fn report(&self, noisy: &SnapshotMatrix) -> Result<AngleReport> {
        if self.clean.shape() != noisy.values().shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.clean.shape()),
                found: format!("{:?}", noisy.values().shape()),
            });
        }
        let upsilon = self.upsilon;
        let b = linalg::left_svd(noisy.values())?;
        let qb = b.u.columns(0, upsilon).into_owned();
        let mut report = AngleReport::angles_only(sines_between(&self.qa, &qb)?);

        let e_norm = (noisy.values() - &self.clean).norm();
        let mut ell = self.kept.iter().copied().fold(f64::INFINITY, f64::min);
        for &tail in b.s.iter().skip(upsilon) {
            for &s in &self.kept {
                ell = ell.min((s - tail).abs());
            }
        }
        let rhs = if ell > 0.0 {
            (2.0 * upsilon as f64).sqrt() / ell * e_norm
        } else {
            f64::INFINITY
        };
        report.wedin_rhs = Some(rhs);
        report.separation = Some(ell);
        report.perturbation_frobenius = Some(e_norm);
        report.separation_failure = !(ell > 0.0);
        report.vacuous = rhs >= (upsilon as f64).sqrt();
        // Computed sines carry an absolute rounding error of a few eps per row.
        let slack = 10.0 * f64::EPSILON * (self.clean.nrows() as f64).sqrt() * upsilon as f64;
        report.holds = Some(report.frobenius <= rhs + slack);
        Ok(report)
    }
}

/// Both sides of the Wedin bound for the leading `upsilon`-dimensional left
/// singular subspaces of a clean matrix and its perturbation.
///
/// Works on the raw matrix entries, the setting in which the bound is stated.
pub fn wedin_report(clean: &SnapshotMatrix, noisy: &SnapshotMatrix, upsilon: usize) -> Result<AngleReport> {
    WedinBaseline::new(clean, upsilon)?.report(noisy)
}

/// Smallest singular value and pseudo-inverse norm of one coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRank {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub sigma_min: f64,
    /// `1 / sigma_min`; infinite for rank-deficient blocks.
    pub pinv_norm: f64,
    pub rank_deficient: bool,
}

/// Least-squares fit `log ||B_n^+|| ~ log L + p n^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub log_l: f64,
    pub p: f64,
    pub alpha: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub blocks: Vec<BlockRank>,
    pub all_full_rank: bool,
    /// Present when at least three blocks have full rank.
    pub fit: Option<GrowthFit>,
}

/// Rank diagnostics of the blocks `B_1, B_2, ...` (block `k` gets `n = k + 1`).
pub fn multiplicity_rank(blocks: &[DMatrix<f64>]) -> Result<MultiplicityReport> {
    if blocks.is_empty() {
        return Err(Error::InsufficientData("no coefficient blocks".into()));
    }
    let mut out = Vec::with_capacity(blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        let (rows, cols) = b.shape();
        if cols == 0 || cols > rows {
            return Err(Error::InvalidArgument(format!(
                "block {} is {rows} x {cols}; need 1 <= d_n <= D",
                k + 1
            )));
        }
        let s = b.singular_values();
        let smax = s.max();
        let smin = s.min();
        let rank_deficient = !(smin > (rows.max(cols) as f64) * f64::EPSILON * smax);
        out.push(BlockRank {
            n: k + 1,
            rows,
            cols,
            sigma_min: if rank_deficient { smin.max(0.0) } else { smin },
            pinv_norm: if rank_deficient { f64::INFINITY } else { 1.0 / smin },
            rank_deficient,
        });
    }
    let points: Vec<(f64, f64)> = out
        .iter()
        .filter(|b| !b.rank_deficient)
        .map(|b| (b.n as f64, b.pinv_norm.ln()))
        .collect();
    let fit = (points.len() >= 3).then(|| fit_growth(&points));
    Ok(MultiplicityReport {
        all_full_rank: out.iter().all(|b| !b.rank_deficient),
        blocks: out,
        fit,
    })
}

/// Grid search over `alpha in [0, 4]`; for each `alpha` the pair `(log L, p)`
/// solves an ordinary least-squares problem. Ties go to the smaller `alpha`.
fn fit_growth(points: &[(f64, f64)]) -> GrowthFit {
    let mut best: Option<GrowthFit> = None;
    for step in 0..=400 {
        let alpha = step as f64 * 0.01;
        let xs: Vec<f64> = points.iter().map(|(n, _)| n.powf(alpha)).collect();
        let m = points.len() as f64;
        let mean_x = xs.iter().sum::<f64>() / m;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
        let sxy: f64 = xs
            .iter()
            .zip(points)
            .map(|(x, (_, y))| (x - mean_x) * (y - mean_y))
            .sum();
        let p = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let log_l = mean_y - p * mean_x;
        let residual = xs
            .iter()
            .zip(points)
            .map(|(x, (_, y))| (y - log_l - p * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if best
            .as_ref()
            .is_none_or(|b| residual < b.residual - 1e-12 * (1.0 + b.residual))
        {
            best = Some(GrowthFit {
                log_l,
                p,
                alpha,
                residual,
            });
        }
    }
    best.expect("non-empty grid")
}

/// Coefficient blocks `B_n` (trajectories by eigenspace basis functions) for
/// every distinct eigenvalue up to `cutoff`.
pub fn coefficient_blocks(
    trajectories: &[Trajectory],
    cutoff: f64,
) -> Result<Vec<(SpectrumLevel, DMatrix<f64>)>> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    if trajectories.iter().any(|t| t.family != first.family) {
        return Err(Error::InvalidArgument(
            "trajectories belong to different families".into(),
        ));
    }
    Ok(first
        .family
        .sorted_spectrum(cutoff)
        .into_iter()
        .map(|level| {
            let b = DMatrix::from_fn(trajectories.len(), level.indices.len(), |j, l| {
                trajectories[j].coefficient(level.indices[l])
            });
            (level, b)
        })
        .collect())
}

/// Point sensor locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSet {
    locations: Vec<Vec<f64>>,
}

impl SensorSet {
    pub fn new(locations: Vec<Vec<f64>>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidArgument("need at least one sensor".into()));
        }
        let dim = locations[0].len();
        if locations
            .iter()
            .any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "sensor coordinates are inconsistent".into(),
            ));
        }
        Ok(SensorSet { locations })
    }

    /// Midpoints `(2i - 1) / (2 count)` of `count` equal cells of `[0, 1]`.
    pub fn uniform_1d(count: usize) -> Result<Self> {
        Self::new(
            (1..=count)
                .map(|i| vec![(2 * i - 1) as f64 / (2 * count) as f64])
                .collect(),
        )
    }

    /// Cell midpoints of a `counts[0] x counts[1]` partition of a rectangle.
    pub fn uniform_2d(extent: [f64; 2], counts: [usize; 2]) -> Result<Self> {
        let mut locations = Vec::new();
        for i in 1..=counts[0] {
            for j in 1..=counts[1] {
                locations.push(vec![
                    extent[0] * (2 * i - 1) as f64 / (2 * counts[0]) as f64,
                    extent[1] * (2 * j - 1) as f64 / (2 * counts[1]) as f64,
                ]);
            }
        }
        Self::new(locations)
    }

    pub fn locations(&self) -> &[Vec<f64>] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub coefficients: Vec<f64>,
    pub field: Vec<f64>,
    /// Root-mean-square misfit at the sensors.
    pub rms_residual: f64,
    /// Set when there are fewer sensors than basis vectors.
    pub warning: Option<String>,
}

/// Least-squares fit of basis coefficients to point readings, with basis
/// values at the sensors interpolated linearly between grid nodes.
pub fn reconstruct_from_sensors(
    s: &Subspace,
    sensors: &SensorSet,
    readings: &[f64],
) -> Result<Reconstruction> {
    if readings.len() != sensors.len() {
        return Err(Error::DimensionMismatch(readings.len(), sensors.len()));
    }
    if readings.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("sensor readings must be finite".into()));
    }
    let design = sensor_design(s, sensors)?;
    let dim = s.dim();
    let warning =
        (sensors.len() < dim).then(|| format!("{} sensors for a {dim}-dimensional subspace", sensors.len()));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = (sensors.len().max(dim) as f64) * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|&&x| x > tol).count();
    if rank < dim {
        return Err(Error::SingularFit { rank, required: dim });
    }
    let r = DVector::from_column_slice(readings);
    let c = svd.solve(&r, tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let misfit = &design * &c - &r;
    let rms_residual = misfit.norm() / (sensors.len() as f64).sqrt();
    let field = (s.basis() * &c).as_slice().to_vec();
    Ok(Reconstruction {
        coefficients: c.as_slice().to_vec(),
        field,
        rms_residual,
        warning,
    })
}

/// Basis values at the sensors (`sensors x dim`).
pub fn sensor_design(s: &Subspace, sensors: &SensorSet) -> Result<DMatrix<f64>> {
    let mut design = DMatrix::zeros(sensors.len(), s.dim());
    for (i, p) in sensors.locations().iter().enumerate() {
        for (node, w) in s.grid().interpolation_stencil(p)? {
            for k in 0..s.dim() {
                design[(i, k)] += w * s.basis()[(node, k)];
            }
        }
    }
    Ok(design)
}

/// Sidecar written next to a subspace basis CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceMeta {
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub dim: usize,
    pub grid: SpaceGrid,
    pub sign_convention: String,
}

pub fn save_subspace(s: &Subspace, path: &Path) -> Result<()> {
    write_csv(path, &s.basis)?;
    let meta = SubspaceMeta {
        singular_values: s.singular_values.clone(),
        threshold: s.threshold,
        dim: s.dim(),
        grid: s.grid.clone(),
        sign_convention: SIGN_CONVENTION.into(),
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn load_subspace(path: &Path) -> Result<Subspace> {
    let meta_path = sidecar_path(path);
    let meta: SubspaceMeta = read_json(&meta_path)?;
    let basis = read_csv(path)?;
    let grid = SpaceGrid::from_parts(meta.grid.axes().to_vec(), meta.grid.weights().to_vec())
        .map_err(|e| Error::malformed(&meta_path, e))?;
    if basis.nrows() != grid.node_count() || basis.ncols() != meta.dim || meta.dim == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {}", grid.node_count(), meta.dim),
            found: format!("{} x {}", basis.nrows(), basis.ncols()),
        });
    }
    let s = Subspace {
        basis,
        singular_values: meta.singular_values,
        threshold: meta.threshold,
        grid,
    };
    if s.orthonormality_defect() > 1e-8 {
        return Err(Error::malformed(
            path,
            "basis is not orthonormal in the grid metric",
        ));
    }
    Ok(s)
}
