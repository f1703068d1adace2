//! Space/time grids, snapshot matrices and their assembly from trajectories,
//! noise injection, streaming window averaging, and CSV persistence.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Branch, CoefficientFamily, EigenFamily, ModeIndex, Trajectory};

/// Default number of uniform space nodes per axis.
pub const DEFAULT_SPACE_NODES: usize = 1001;
/// Default number of logarithmically spaced snapshot times.
pub const DEFAULT_TIME_SAMPLES: usize = 2000;
/// Default absolute series truncation tolerance for assembly.
pub const DEFAULT_SERIES_TOL: f64 = 1e-16;

/// Columns evaluated per parallel work item during assembly.
const COLUMN_CHUNK: usize = 32;

/// Tensor-product grid of uniform nodes with trapezoid quadrature weights.
///
/// Nodes of a 2-D grid are numbered `a * ny + b` for `x` index `a` and `y`
/// index `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    axes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        w[i] += h / 2.0;
        w[i + 1] += h / 2.0;
    }
    w
}

impl SpaceGrid {
    /// Uniform nodes on `[0, extent[k]]` with `nodes[k]` points per axis.
    pub fn uniform(extent: &[f64], nodes: &[usize]) -> Result<Self> {
        if extent.is_empty() || extent.len() > 2 || extent.len() != nodes.len() {
            return Err(Error::InvalidArgument(
                "space grid needs one or two axes with matching node counts".into(),
            ));
        }
        let mut axes = Vec::new();
        for (&len, &n) in extent.iter().zip(nodes) {
            if n < 2 || !(len > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "axis of length {len} needs at least 2 nodes (got {n})"
                )));
            }
            let h = len / (n - 1) as f64;
            let mut axis: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
            axis[n - 1] = len;
            axes.push(axis);
        }
        let axis_weights: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
        let weights = match axis_weights.as_slice() {
            [wx] => wx.clone(),
            [wx, wy] => wx.iter().flat_map(|a| wy.iter().map(move |b| a * b)).collect(),
            _ => unreachable!(),
        };
        Ok(SpaceGrid { axes, weights })
    }

    /// Uniform grid over a family's domain with the same node count per axis.
    pub fn for_family(family: &EigenFamily, nodes_per_axis: usize) -> Result<Self> {
        let extent = family.extent();
        let nodes = vec![nodes_per_axis; extent.len()];
        Self::uniform(&extent, &nodes)
    }

    /// Grid from explicit axes and weights, as read from a sidecar file.
    pub fn from_parts(axes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidArgument("space grid needs one or two axes".into()));
        }
        for axis in &axes {
            if axis.is_empty() || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument(
                    "axis nodes must be strictly increasing".into(),
                ));
            }
        }
        let count: usize = axes.iter().map(Vec::len).product();
        if weights.len() != count {
            return Err(Error::ShapeMismatch {
                expected: format!("{count} weights"),
                found: format!("{}", weights.len()),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "quadrature weights must be positive".into(),
            ));
        }
        Ok(SpaceGrid { axes, weights })
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Sum of the quadrature weights, i.e. the length or area of the domain.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Coordinates of node `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [x] => vec![x[i]],
            [x, y] => vec![x[i / y.len()], y[i % y.len()]],
            _ => unreachable!(),
        }
    }

    /// Discrete `L^2` inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Samples a function at every node.
    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        (0..self.node_count()).map(|i| f(&self.point(i))).collect()
    }

    /// Piecewise-linear (bilinear in 2-D) interpolation stencil at a point:
    /// pairs of node index and weight.
    pub fn interpolation_stencil(&self, point: &[f64]) -> Result<Vec<(usize, f64)>> {
        if point.len() != self.dimension() {
            return Err(Error::DimensionMismatch(point.len(), self.dimension()));
        }
        let mut per_axis = Vec::new();
        for (axis, &p) in self.axes.iter().zip(point) {
            let n = axis.len();
            let (lo, hi) = (axis[0], axis[n - 1]);
            let slack = 1e-12 * (hi - lo).abs().max(1.0);
            if !(p >= lo - slack && p <= hi + slack) {
                return Err(Error::InvalidArgument(format!(
                    "sensor coordinate {p} outside grid range [{lo}, {hi}]"
                )));
            }
            if n == 1 {
                per_axis.push(vec![(0usize, 1.0)]);
                continue;
            }
            let k = axis.partition_point(|&x| x <= p).clamp(1, n - 1);
            let (x0, x1) = (axis[k - 1], axis[k]);
            let s = ((p - x0) / (x1 - x0)).clamp(0.0, 1.0);
            per_axis.push(vec![(k - 1, 1.0 - s), (k, s)]);
        }
        Ok(match per_axis.as_slice() {
            [x] => x.clone(),
            [x, y] => {
                let ny = self.axes[1].len();
                x.iter()
                    .flat_map(|&(a, wa)| y.iter().map(move |&(b, wb)| (a * ny + b, wa * wb)))
                    .collect()
            }
            _ => unreachable!(),
        })
    }
}

/// How the snapshot times were generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Uniform,
    Logarithmic,
    Explicit,
}

/// Strictly increasing snapshot times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    spacing: Spacing,
}

impl TimeGrid {
    fn check_range(t0: f64, t1: f64, count: usize) -> Result<()> {
        if count == 0 || !t0.is_finite() || !t1.is_finite() || t0 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid time range [{t0}, {t1}] with {count} samples"
            )));
        }
        if (count == 1 && t0 != t1) || (count > 1 && !(t1 > t0)) {
            return Err(Error::InvalidArgument(format!(
                "time range [{t0}, {t1}] incompatible with {count} samples"
            )));
        }
        Ok(())
    }

    /// `count` equispaced times from `t0` to `t1` inclusive.
    pub fn uniform(t0: f64, t1: f64, count: usize) -> Result<Self> {
        Self::check_range(t0, t1, count)?;
        let mut times: Vec<f64> = (0..count)
            .map(|k| t0 + (t1 - t0) * k as f64 / (count.max(2) - 1) as f64)
            .collect();
        times[count - 1] = t1;
        Ok(TimeGrid {
            times,
            spacing: Spacing::Uniform,
        })
    }

    /// `count` times from `t0` to `t1` inclusive with uniform logarithmic spacing.
    pub fn logarithmic(t0: f64, t1: f64, count: usize) -> Result<Self> {
        Self::check_range(t0, t1, count)?;
        if !(t0 > 0.0) {
            return Err(Error::InvalidArgument("logarithmic grid needs t0 > 0".into()));
        }
        let (l0, l1) = (t0.ln(), t1.ln());
        let mut times: Vec<f64> = (0..count)
            .map(|k| (l0 + (l1 - l0) * k as f64 / (count.max(2) - 1) as f64).exp())
            .collect();
        times[0] = t0;
        times[count - 1] = t1;
        Ok(TimeGrid {
            times,
            spacing: Spacing::Logarithmic,
        })
    }

    /// `t0 + k dt` for `k = 0..count`.
    pub fn uniform_step(t0: f64, dt: f64, count: usize) -> Result<Self> {
        if !(dt > 0.0) || count == 0 || !(t0 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid uniform grid t0 = {t0}, dt = {dt}, count = {count}"
            )));
        }
        Ok(TimeGrid {
            times: (0..count).map(|k| t0 + k as f64 * dt).collect(),
            spacing: Spacing::Uniform,
        })
    }

    pub fn explicit(times: Vec<f64>) -> Result<Self> {
        if times.is_empty()
            || times.iter().any(|t| !t.is_finite() || *t < 0.0)
            || times.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::InvalidArgument(
                "times must be finite, non-negative and strictly increasing".into(),
            ));
        }
        Ok(TimeGrid {
            times,
            spacing: Spacing::Explicit,
        })
    }

    fn with_spacing(times: Vec<f64>, spacing: Spacing) -> Result<Self> {
        let mut grid = Self::explicit(times)?;
        grid.spacing = spacing;
        Ok(grid)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Step of a uniform grid, checked against every consecutive difference.
    pub fn uniform_step_size(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let dt = (self.last() - self.first()) / (self.times.len() - 1) as f64;
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt);
        uniform.then_some(dt)
    }
}

/// Origin of the values in a [`SnapshotMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Noisy { amplitude: f64, seed: u64 },
    Averaged { window: usize },
}

/// Solution samples with space nodes along rows and times along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    values: DMatrix<f64>,
    space: SpaceGrid,
    times: TimeGrid,
    provenance: Provenance,
}

impl SnapshotMatrix {
    pub fn new(
        values: DMatrix<f64>,
        space: SpaceGrid,
        times: TimeGrid,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.nrows() != space.node_count() || values.ncols() != times.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {}", space.node_count(), times.len()),
                found: format!("{} x {}", values.nrows(), values.ncols()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("snapshot matrix has non-finite entries".into()));
        }
        Ok(SnapshotMatrix {
            values,
            space,
            times,
            provenance,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Weighted `L^2` norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        self.values
            .column_iter()
            .map(|c| self.space.norm(c.as_slice()))
            .collect()
    }
}

/// Precomputed eigenfunction tables for evaluating one trajectory on one grid.
struct ColumnEvaluator {
    traj: Trajectory,
    tol: f64,
    tables: Tables,
}

enum Tables {
    /// Terms of a 1-D expansion and their samples (`nodes x terms`).
    Line {
        rates: Vec<f64>,
        coefficients: Vec<f64>,
        wavenumbers: Vec<usize>,
        phi: DMatrix<f64>,
    },
    /// Per-axis sine tables (`nodes x wavenumbers`) of a rectangle family.
    Grid {
        phi_x: DMatrix<f64>,
        phi_y: DMatrix<f64>,
    },
}

impl ColumnEvaluator {
    /// Tables cover the modes needed at the earliest time `t_min`.
    fn new(traj: &Trajectory, space: &SpaceGrid, t_min: f64, tol: f64) -> Result<Self> {
        traj.validate()?;
        let family = &traj.family;
        if family.dimension() != space.dimension() {
            return Err(Error::DimensionMismatch(family.dimension(), space.dimension()));
        }
        let corner: Vec<f64> = space.axes().iter().map(|a| a[a.len() - 1]).collect();
        let origin: Vec<f64> = space.axes().iter().map(|a| a[0]).collect();
        if !family.contains(&corner) || !family.contains(&origin) {
            return Err(Error::OutsideDomain {
                family: family.name(),
                point: corner,
            });
        }
        let modes = traj.truncation(t_min, tol)?;
        let tables = if family.dimension() == 1 {
            let terms = traj.line_modes(modes[0]);
            let xs = &space.axes()[0];
            let phi = DMatrix::from_fn(xs.len(), terms.len(), |i, k| {
                family.axis_function(0, terms[k].wavenumber, terms[k].branch, xs[i])
            });
            Tables::Line {
                rates: terms.iter().map(|m| m.rate).collect(),
                coefficients: terms.iter().map(|m| m.coefficient).collect(),
                wavenumbers: terms.iter().map(|m| m.wavenumber).collect(),
                phi,
            }
        } else {
            let axis_table = |axis: usize, count: usize| {
                let nodes = &space.axes()[axis];
                DMatrix::from_fn(nodes.len(), count, |i, k| {
                    family.axis_function(axis, k + 1, Branch::Sin, nodes[i])
                })
            };
            Tables::Grid {
                phi_x: axis_table(0, modes[0]),
                phi_y: axis_table(1, modes[1]),
            }
        };
        Ok(ColumnEvaluator {
            traj: traj.clone(),
            tol,
            tables,
        })
    }

    /// Values at every node for a block of times, one column per time.
    fn block(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let family = &self.traj.family;
        let counts: Vec<Vec<usize>> = times
            .iter()
            .map(|&t| self.traj.truncation(t, self.tol))
            .collect::<Result<_>>()?;
        match &self.tables {
            Tables::Line {
                rates,
                coefficients,
                wavenumbers,
                phi,
            } => {
                // Later times need fewer terms; only the leading ones enter the product.
                let widest = counts.iter().map(|c| c[0]).max().unwrap_or(0);
                let used = wavenumbers.partition_point(|&w| w <= widest);
                let mut c = DMatrix::zeros(used, times.len());
                for (j, &t) in times.iter().enumerate() {
                    for k in 0..used {
                        if wavenumbers[k] > counts[j][0] {
                            break;
                        }
                        c[(k, j)] = coefficients[k] * (-rates[k] * t).exp();
                    }
                }
                Ok(phi.columns(0, used) * c)
            }
            Tables::Grid { phi_x, phi_y } => {
                let (nx, ny) = (phi_x.nrows(), phi_y.nrows());
                let coeffs = &self.traj.coeffs;
                let mut out = DMatrix::zeros(nx * ny, times.len());
                if coeffs.is_separable() {
                    let mut cx = DMatrix::zeros(phi_x.ncols(), times.len());
                    let mut cy = DMatrix::zeros(phi_y.ncols(), times.len());
                    for (j, &t) in times.iter().enumerate() {
                        for m in 1..=counts[j][0] {
                            cx[(m - 1, j)] = coeffs.separable_factor(m).unwrap_or(0.0)
                                * (-family.axis_rate(0, m) * t).exp();
                        }
                        for n in 1..=counts[j][1] {
                            cy[(n - 1, j)] = coeffs.separable_factor(n).unwrap_or(0.0)
                                * (-family.axis_rate(1, n) * t).exp();
                        }
                    }
                    let x = phi_x * cx;
                    let y = phi_y * cy;
                    for j in 0..times.len() {
                        for a in 0..nx {
                            for b in 0..ny {
                                out[(a * ny + b, j)] = x[(a, j)] * y[(b, j)];
                            }
                        }
                    }
                } else {
                    for (j, &t) in times.iter().enumerate() {
                        let (mm, nn) = (counts[j][0], counts[j][1]);
                        let c = DMatrix::from_fn(mm, nn, |m, n| {
                            coeffs.coefficient(ModeIndex::Grid(m + 1, n + 1))
                                * (-(family.axis_rate(0, m + 1) + family.axis_rate(1, n + 1)) * t).exp()
                        });
                        let field = phi_x.columns(0, mm) * c * phi_y.columns(0, nn).transpose();
                        for a in 0..nx {
                            for b in 0..ny {
                                out[(a * ny + b, j)] = field[(a, b)];
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn matrix(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let rows = match &self.tables {
            Tables::Line { phi, .. } => phi.nrows(),
            Tables::Grid { phi_x, phi_y } => phi_x.nrows() * phi_y.nrows(),
        };
        let blocks: Vec<DMatrix<f64>> = times
            .par_chunks(COLUMN_CHUNK)
            .map(|chunk| self.block(chunk))
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(rows, times.len());
        let mut col = 0;
        for block in blocks {
            let w = block.ncols();
            out.columns_mut(col, w).copy_from(&block);
            col += w;
        }
        Ok(out)
    }
}

/// Samples a trajectory at every space node and time; provenance is clean.
pub fn assemble_trajectory(
    traj: &Trajectory,
    space: &SpaceGrid,
    times: &TimeGrid,
    tol: f64,
) -> Result<SnapshotMatrix> {
    let eval = ColumnEvaluator::new(traj, space, times.first(), tol)?;
    let values = eval.matrix(times.times())?;
    SnapshotMatrix::new(values, space.clone(), times.clone(), Provenance::Clean)
}

/// [`assemble_trajectory`] for a trajectory containing every eigenfunction.
pub fn assemble(
    family: &EigenFamily,
    coeffs: &CoefficientFamily,
    space: &SpaceGrid,
    times: &TimeGrid,
    tol: f64,
) -> Result<SnapshotMatrix> {
    assemble_trajectory(
        &Trajectory::new(family.clone(), coeffs.clone()),
        space,
        times,
        tol,
    )
}

/// `exp(-lambda t) phi(x)` for one eigenfunction, sampled at every node.
pub fn sample_mode(family: &EigenFamily, idx: ModeIndex, t: f64, space: &SpaceGrid) -> Result<Vec<f64>> {
    if family.dimension() != space.dimension() {
        return Err(Error::DimensionMismatch(family.dimension(), space.dimension()));
    }
    let decay = (-family.eigenvalue(idx)? * t).exp();
    (0..space.node_count())
        .map(|i| Ok(decay * family.eigenfunction(idx, &space.point(i))?))
        .collect()
}

/// The `U(-amplitude, amplitude)` noise added to column `column` of a matrix
/// with `rows` rows under `seed`.
pub fn noise_column(seed: u64, column: usize, rows: usize, amplitude: f64) -> Vec<f64> {
    if amplitude == 0.0 {
        return vec![0.0; rows];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(column as u64);
    let dist = Uniform::new(-amplitude, amplitude).expect("positive amplitude");
    (0..rows).map(|_| dist.sample(&mut rng)).collect()
}

/// Adds independent `U(-amplitude, amplitude)` noise to every entry of a clean
/// matrix. Column `j` draws from its own stream so results do not depend on
/// evaluation order.
pub fn add_noise(m: &SnapshotMatrix, amplitude: f64, seed: u64) -> Result<SnapshotMatrix> {
    if m.provenance != Provenance::Clean {
        return Err(Error::InvalidArgument(
            "noise can only be added to clean data".into(),
        ));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise amplitude {amplitude} must be >= 0"
        )));
    }
    let rows = m.nrows();
    let noise: Vec<Vec<f64>> = (0..m.ncols())
        .into_par_iter()
        .map(|j| noise_column(seed, j, rows, amplitude))
        .collect();
    let mut values = m.values.clone();
    for (j, col) in noise.iter().enumerate() {
        for (i, e) in col.iter().enumerate() {
            values[(i, j)] += e;
        }
    }
    Ok(SnapshotMatrix {
        values,
        space: m.space.clone(),
        times: m.times.clone(),
        provenance: Provenance::Noisy { amplitude, seed },
    })
}

/// Column-at-a-time access to snapshot data, used by the streaming averager.
pub trait ColumnSource {
    fn space(&self) -> &SpaceGrid;
    fn times(&self) -> &TimeGrid;
    /// Values of columns `start..start + count`, one matrix column each.
    fn columns(&self, start: usize, count: usize) -> Result<DMatrix<f64>>;
}

impl ColumnSource for SnapshotMatrix {
    fn space(&self) -> &SpaceGrid {
        &self.space
    }

    fn times(&self) -> &TimeGrid {
        &self.times
    }

    fn columns(&self, start: usize, count: usize) -> Result<DMatrix<f64>> {
        Ok(self.values.columns(start, count).into_owned())
    }
}

/// A trajectory sampled lazily on a fine time grid, optionally with the same
/// noise [`add_noise`] would add to the fully assembled matrix.
pub struct TrajectoryStream {
    space: SpaceGrid,
    times: TimeGrid,
    eval: ColumnEvaluator,
    noise: Option<(f64, u64)>,
}

impl TrajectoryStream {
    pub fn new(traj: &Trajectory, space: &SpaceGrid, times: &TimeGrid, tol: f64) -> Result<Self> {
        Ok(TrajectoryStream {
            space: space.clone(),
            times: times.clone(),
            eval: ColumnEvaluator::new(traj, space, times.first(), tol)?,
            noise: None,
        })
    }

    pub fn with_noise(mut self, amplitude: f64, seed: u64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise amplitude {amplitude} must be >= 0"
            )));
        }
        self.noise = Some((amplitude, seed));
        Ok(self)
    }
}

impl ColumnSource for TrajectoryStream {
    fn space(&self) -> &SpaceGrid {
        &self.space
    }

    fn times(&self) -> &TimeGrid {
        &self.times
    }

    fn columns(&self, start: usize, count: usize) -> Result<DMatrix<f64>> {
        let mut block = self.eval.matrix(&self.times.times()[start..start + count])?;
        if let Some((amplitude, seed)) = self.noise {
            let rows = block.nrows();
            for j in 0..count {
                let noise = noise_column(seed, start + j, rows, amplitude);
                for (i, e) in noise.iter().enumerate() {
                    block[(i, j)] += e;
                }
            }
        }
        Ok(block)
    }
}

/// Fine columns fetched from a source per streaming step.
const STREAM_BLOCK: usize = 256;

/// Averages each output time over the window of `window + 1` fine samples
/// starting there: `v(tau_j) = (1/(S+1)) sum_{s=0}^{S} u(tau_{j+s})`.
///
/// Output times are snapped to the nearest fine node. Fine columns are read in
/// one forward pass and only the running window sums are kept.
pub fn window_average(
    source: &dyn ColumnSource,
    window: usize,
    output_times: &TimeGrid,
) -> Result<SnapshotMatrix> {
    let fine = source.times();
    let dt = match fine.uniform_step_size() {
        Some(dt) => dt,
        None if fine.len() == 1 && window == 0 => 1.0,
        None => {
            return Err(Error::InvalidArgument(
                "window averaging needs a uniform fine time grid".into(),
            ))
        }
    };
    let t0 = fine.first();
    let mut starts = Vec::with_capacity(output_times.len());
    for &tau in output_times.times() {
        let k = ((tau - t0) / dt).round();
        if k < 0.0 || (t0 + k * dt - tau).abs() > 0.5 * dt + 1e-12 * tau.abs() {
            return Err(Error::WindowOutOfRange(format!(
                "output time {tau:e} precedes the fine grid start {t0:e}"
            )));
        }
        let k = k as usize;
        if k + window >= fine.len() {
            return Err(Error::WindowOutOfRange(format!(
                "window [{tau:e}, {:e}] extends past the last fine time {:e}",
                tau + window as f64 * dt,
                fine.last()
            )));
        }
        starts.push(k);
    }
    let rows = source.space().node_count();
    let mut sums = DMatrix::zeros(rows, starts.len());
    let first = starts.iter().copied().min().unwrap_or(0);
    let end = starts.iter().map(|k| k + window + 1).max().unwrap_or(0);
    let mut pos = first;
    while pos < end {
        // Skip fine samples that fall in no window.
        if !starts.iter().any(|&k| pos >= k && pos <= k + window) {
            pos = starts.iter().copied().filter(|&k| k > pos).min().unwrap_or(end);
            continue;
        }
        let mut count = STREAM_BLOCK.min(end - pos);
        if let Some(next_gap) =
            (pos..pos + count).find(|&p| !starts.iter().any(|&k| p >= k && p <= k + window))
        {
            count = next_gap - pos;
        }
        let block = source.columns(pos, count)?;
        // Windows covering the whole block take its total in one step.
        let mut total: Option<DVector<f64>> = None;
        for (j, &k) in starts.iter().enumerate() {
            let lo = k.max(pos);
            let hi = (k + window + 1).min(pos + count);
            if lo >= hi {
                continue;
            }
            let mut acc = sums.column_mut(j);
            if lo == pos && hi == pos + count && count > 1 {
                let t = total.get_or_insert_with(|| block.column_sum());
                acc += &*t;
            } else {
                for p in lo..hi {
                    acc += block.column(p - pos);
                }
            }
        }
        pos += count;
    }
    sums /= (window + 1) as f64;
    let times: Vec<f64> = starts.iter().map(|&k| fine.times()[k]).collect();
    let grid = TimeGrid::with_spacing(times, output_times.spacing())?;
    SnapshotMatrix::new(
        sums,
        source.space().clone(),
        grid,
        Provenance::Averaged { window },
    )
}

/// Sidecar metadata written next to a matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub dimension: usize,
    pub axis_nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub times: Vec<f64>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    #[serde(default = "explicit_spacing")]
    pub time_spacing: Spacing,
}

fn explicit_spacing() -> Spacing {
    Spacing::Explicit
}

/// Path of the JSON sidecar belonging to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes a numeric CSV (row-major, no header) with shortest round-trip
/// formatting, so reading it back reproduces every bit.
pub(crate) fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        w.write_record(&row).map_err(|e| Error::malformed(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::malformed(path, e))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::malformed(path, e))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::malformed(path, "rows have different lengths"));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::malformed(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
}

/// Writes `path` (values) and `<path>.meta.json` (grids and provenance).
pub fn save_matrix(m: &SnapshotMatrix, path: &Path) -> Result<()> {
    write_csv(path, &m.values)?;
    let seed = match m.provenance {
        Provenance::Noisy { seed, .. } => Some(seed),
        _ => None,
    };
    let meta = MatrixMeta {
        dimension: m.space.dimension(),
        axis_nodes: m.space.axes.clone(),
        weights: m.space.weights.clone(),
        times: m.times.times.clone(),
        provenance: m.provenance,
        seed,
        time_spacing: m.times.spacing,
    };
    write_json(&sidecar_path(path), &meta)
}

/// Reads a matrix written by [`save_matrix`] or prepared by hand in the same
/// format, validating its shape against the sidecar.
pub fn load_matrix(path: &Path) -> Result<SnapshotMatrix> {
    let meta_path = sidecar_path(path);
    let meta: MatrixMeta = read_json(&meta_path)?;
    if meta.dimension != meta.axis_nodes.len() {
        return Err(Error::malformed(
            &meta_path,
            format!("dimension {} but {} axes", meta.dimension, meta.axis_nodes.len()),
        ));
    }
    let values = read_csv(path)?;
    let space =
        SpaceGrid::from_parts(meta.axis_nodes, meta.weights).map_err(|e| Error::malformed(&meta_path, e))?;
    let times =
        TimeGrid::with_spacing(meta.times, meta.time_spacing).map_err(|e| Error::malformed(&meta_path, e))?;
    if values.nrows() != space.node_count() || values.ncols() != times.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {}", space.node_count(), times.len()),
            found: format!("{} x {}", values.nrows(), values.ncols()),
        });
    }
    SnapshotMatrix::new(values, space, times, meta.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Branches;
    use std::f64::consts::PI;

    fn single_mode(values: Vec<f64>) -> CoefficientFamily {
        CoefficientFamily::ExplicitList { values }
    }

    #[test]
    fn weights_sum_to_domain_measure() {
        let g = SpaceGrid::uniform(&[1.0], &[1001]).unwrap();
        assert!((g.measure() - 1.0).abs() < 1e-12);
        let r = SpaceGrid::for_family(&EigenFamily::Rect2D, 51).unwrap();
        assert!((r.measure() - 2f64.powf(-0.25)).abs() < 1e-12);
        assert_eq!(r.point(52), vec![r.axes()[0][1], r.axes()[1][1]]);
    }

    #[test]
    fn trapezoid_norm_of_sine() {
        let g = SpaceGrid::uniform(&[1.0], &[1001]).unwrap();
        let f = g.sample(|p| (PI * p[0]).sin());
        assert!((g.norm(&f) - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn time_grids() {
        let t = TimeGrid::logarithmic(1e-6, 1.0, 2000).unwrap();
        assert_eq!(t.first(), 1e-6);
        assert_eq!(t.last(), 1.0);
        assert!(t.times().windows(2).all(|w| w[0] < w[1]));
        let u = TimeGrid::uniform(0.1, 0.2, 11).unwrap();
        assert!((u.uniform_step_size().unwrap() - 0.01).abs() < 1e-15);
        assert!(TimeGrid::logarithmic(0.0, 1.0, 5).is_err());
        assert!(TimeGrid::uniform(1.0, 0.5, 5).is_err());
        assert!(TimeGrid::explicit(vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn single_mode_matrix_has_rank_one() {
        let g = SpaceGrid::uniform(&[1.0], &[201]).unwrap();
        let t = TimeGrid::logarithmic(1e-3, 1.0, 50).unwrap();
        let m = assemble(&EigenFamily::Dirichlet1D, &single_mode(vec![1.0]), &g, &t, 1e-16).unwrap();
        let s = m.values().singular_values();
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[1] < 1e-12 * s[0]);
        assert_eq!(m.provenance(), Provenance::Clean);
    }

    #[test]
    fn assembly_matches_pointwise_evaluation() {
        let g = SpaceGrid::uniform(&[1.0], &[101]).unwrap();
        let t = TimeGrid::logarithmic(1e-4, 1.0, 20).unwrap();
        let traj = Trajectory::new(
            EigenFamily::Periodic1D,
            CoefficientFamily::AlternatingInverseSquare,
        )
        .with_branches(Branches::COS_AND_CONSTANT);
        let m = assemble_trajectory(&traj, &g, &t, 1e-16).unwrap();
        for &(i, j) in &[(0, 0), (37, 5), (100, 19), (50, 10)] {
            let direct = traj.eval(&g.point(i), t.times()[j], 1e-16).unwrap().value;
            assert!((m.values()[(i, j)] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn rectangle_assembly_matches_pointwise_evaluation() {
        let g = SpaceGrid::for_family(&EigenFamily::Rect2D, 21).unwrap();
        let t = TimeGrid::logarithmic(1e-3, 1.0, 6).unwrap();
        for coeffs in [
            CoefficientFamily::ProductInverseSquare,
            CoefficientFamily::RandomUniform { seed: 3, count: 6 },
        ] {
            let traj = Trajectory::new(EigenFamily::Rect2D, coeffs);
            let m = assemble_trajectory(&traj, &g, &t, 1e-15).unwrap();
            for &(i, j) in &[(0, 0), (230, 2), (441 - 1, 5), (100, 3)] {
                let direct = traj.eval(&g.point(i), t.times()[j], 1e-15).unwrap().value;
                assert!((m.values()[(i, j)] - direct).abs() < 1e-12, "{i} {j}");
            }
        }
    }

    #[test]
    fn exp1_column_norms_decrease() {
        let g = SpaceGrid::uniform(&[1.0], &[1001]).unwrap();
        let t = TimeGrid::logarithmic(1e-6, 1.0, 200).unwrap();
        let m = assemble(
            &EigenFamily::Dirichlet1D,
            &CoefficientFamily::AlternatingInverseSquare,
            &g,
            &t,
            1e-16,
        )
        .unwrap();
        let norms = m.column_norms();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noise_properties() {
        let g = SpaceGrid::uniform(&[1.0], &[101]).unwrap();
        let t = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let m = assemble(&EigenFamily::Dirichlet1D, &single_mode(vec![1.0]), &g, &t, 1e-16).unwrap();
        let zero = add_noise(&m, 0.0, 1).unwrap();
        assert_eq!(zero.values(), m.values());
        let a = add_noise(&m, 1e-3, 9).unwrap();
        let b = add_noise(&m, 1e-3, 9).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(add_noise(&a, 1e-3, 9).is_err());
        let diff = a.values() - m.values();
        assert!(diff.amax() <= 1e-3);
    }

    #[test]
    fn window_of_zero_copies_columns() {
        let g = SpaceGrid::uniform(&[1.0], &[11]).unwrap();
        let t = TimeGrid::uniform_step(0.0, 0.01, 50).unwrap();
        let m = assemble(
            &EigenFamily::Dirichlet1D,
            &single_mode(vec![1.0, -0.5, 0.25]),
            &g,
            &t,
            1e-16,
        )
        .unwrap();
        let out = TimeGrid::explicit(vec![0.1, 0.2, 0.3]).unwrap();
        let v = window_average(&m, 0, &out).unwrap();
        for (j, k) in [10, 20, 30].into_iter().enumerate() {
            assert_eq!(v.values().column(j), m.values().column(k));
        }
        assert_eq!(v.provenance(), Provenance::Averaged { window: 0 });
    }

    #[test]
    fn window_out_of_range_is_rejected() {
        let g = SpaceGrid::uniform(&[1.0], &[11]).unwrap();
        let t = TimeGrid::uniform_step(0.0, 0.01, 50).unwrap();
        let m = assemble(&EigenFamily::Dirichlet1D, &single_mode(vec![1.0]), &g, &t, 1e-16).unwrap();
        let out = TimeGrid::explicit(vec![0.45]).unwrap();
        assert!(matches!(
            window_average(&m, 10, &out),
            Err(Error::WindowOutOfRange(_))
        ));
    }

    #[test]
    fn streamed_average_matches_materialized_average() {
        let g = SpaceGrid::uniform(&[1.0], &[51]).unwrap();
        let t = TimeGrid::uniform_step(1e-6, 1e-3, 700).unwrap();
        let traj = Trajectory::new(
            EigenFamily::Dirichlet1D,
            CoefficientFamily::AlternatingInverseSquare,
        );
        let full = assemble_trajectory(&traj, &g, &t, 1e-16).unwrap();
        let noisy = add_noise(&full, 1e-3, 4).unwrap();
        let stream = TrajectoryStream::new(&traj, &g, &t, 1e-16)
            .unwrap()
            .with_noise(1e-3, 4)
            .unwrap();
        let out = TimeGrid::explicit(vec![0.0011, 0.05, 0.3, 0.31]).unwrap();
        let a = window_average(&noisy, 299, &out).unwrap();
        let b = window_average(&stream, 299, &out).unwrap();
        assert!((a.values() - b.values()).amax() < 1e-14);
        assert_eq!(a.times(), b.times());
    }

    #[test]
    fn averaged_single_mode_matches_modified_coefficient() {
        let g = SpaceGrid::uniform(&[1.0], &[101]).unwrap();
        let dt = 1e-4;
        let t = TimeGrid::uniform_step(0.0, dt, 3001).unwrap();
        let m = assemble(&EigenFamily::Dirichlet1D, &single_mode(vec![1.0]), &g, &t, 1e-16).unwrap();
        let s = 1000;
        let out = TimeGrid::explicit(vec![0.05, 0.2]).unwrap();
        let v = window_average(&m, s, &out).unwrap();
        let mu = PI * PI;
        let factor =
            (1.0 - (-((s + 1) as f64) * mu * dt).exp()) / ((s + 1) as f64 * (1.0 - (-mu * dt).exp()));
        for (j, &tau) in v.times().times().iter().enumerate() {
            for i in 0..g.node_count() {
                let expect = (-mu * tau).exp() * factor * (PI * g.point(i)[0]).sin();
                assert!((v.values()[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let g = SpaceGrid::uniform(&[1.0], &[31]).unwrap();
        let t = TimeGrid::logarithmic(1e-6, 1.0, 40).unwrap();
        let m = assemble(
            &EigenFamily::Dirichlet1D,
            &CoefficientFamily::AlternatingInverseSquare,
            &g,
            &t,
            1e-16,
        )
        .unwrap();
        let m = add_noise(&m, 1e-3, 5).unwrap();
        save_matrix(&m, &path).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn hand_written_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "1.5,2\n-3,4e-1\n").unwrap();
        std::fs::write(
            sidecar_path(&path),
            r#"{"dimension":1,"axis_nodes":[[0.0,1.0]],"weights":[0.5,0.5],
                "times":[0.1,0.2],"provenance":{"kind":"clean"},"seed":null}"#,
        )
        .unwrap();
        let m = load_matrix(&path).unwrap();
        assert_eq!(m.values(), &DMatrix::from_row_slice(2, 2, &[1.5, 2.0, -3.0, 0.4]));

        std::fs::write(&path, "1.5,2\n-3,4e-1\n7,8\n").unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::ShapeMismatch { .. })));
        std::fs::write(&path, "1.5,x\n-3,4e-1\n").unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn interpolation_stencils() {
        let g = SpaceGrid::uniform(&[1.0], &[11]).unwrap();
        let s = g.interpolation_stencil(&[0.25]).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].1 - 0.5).abs() < 1e-12 && s[0].0 == 2);
        let end = g.interpolation_stencil(&[1.0]).unwrap();
        let value: f64 = end.iter().map(|&(i, w)| w * i as f64).sum();
        assert!((value - 10.0).abs() < 1e-12);
        assert!(g.interpolation_stencil(&[1.5]).is_err());
        let r = SpaceGrid::for_family(&EigenFamily::Rect2D, 11).unwrap();
        let f = r.sample(|p| 2.0 * p[0] - 3.0 * p[1] + 1.0);
        let stencil = r.interpolation_stencil(&[0.33, 0.41]).unwrap();
        let v: f64 = stencil.iter().map(|&(i, w)| w * f[i]).sum();
        assert!((v - (2.0 * 0.33 - 3.0 * 0.41 + 1.0)).abs() < 1e-12);
    }
}
