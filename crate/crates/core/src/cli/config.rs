//! Declarative experiment descriptions.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::snapshot::{SpaceGrid, Spacing, TimeGrid, DEFAULT_SERIES_TOL};
use crate::spectral::{Branches, CoefficientFamily, EigenFamily, ModeIndex, Trajectory};
use crate::subspace::DEFAULT_THRESHOLD;

/// One of the six reference experiments, or a user-defined projection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    Numbered(u8),
    Custom,
}

impl ExperimentId {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "custom" => Ok(ExperimentId::Custom),
            _ => match text.parse::<u8>() {
                Ok(n @ 1..=6) => Ok(ExperimentId::Numbered(n)),
                _ => Err(Error::Config(format!(
                    "experiment must be 1..6 or \"custom\", got {text:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentId::Numbered(n) => write!(f, "{n}"),
            ExperimentId::Custom => f.write_str("custom"),
        }
    }
}

impl Serialize for ExperimentId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExperimentId::Numbered(n) => s.serialize_u8(*n),
            ExperimentId::Custom => s.serialize_str("custom"),
        }
    }
}

impl<'de> Deserialize<'de> for ExperimentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = match Value::deserialize(d)? {
            Value::Number(n) => n.to_string(),
            Value::String(s) => s,
            other => return Err(serde::de::Error::custom(format!("bad experiment id {other}"))),
        };
        ExperimentId::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Coefficients and periodic branches of one sample trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub coefficients: CoefficientFamily,
    #[serde(default)]
    pub branches: Branches,
}

impl TrajectorySpec {
    pub fn trajectory(&self, family: &EigenFamily) -> Trajectory {
        Trajectory::new(family.clone(), self.coefficients.clone()).with_branches(self.branches)
    }
}

/// Snapshot times: `count` points between `start` and `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub spacing: Spacing,
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl TimeSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        match self.spacing {
            Spacing::Uniform => TimeGrid::uniform(self.start, self.end, self.count),
            Spacing::Logarithmic => TimeGrid::logarithmic(self.start, self.end, self.count),
            Spacing::Explicit => Err(Error::Config(
                "time spacing must be \"uniform\" or \"logarithmic\"".into(),
            )),
        }
    }
}

/// Everything needed to replay one experiment. Fields an experiment does not
/// use are carried along unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub family: EigenFamily,
    /// Sample trajectories whose snapshots span the subspace.
    pub trajectories: Vec<TrajectorySpec>,
    /// Grid nodes per axis.
    pub space_nodes: usize,
    pub times: TimeSpec,
    /// Relative singular value cutoff.
    pub threshold: f64,
    /// Truncation tolerance for the eigen-expansions.
    pub series_tol: f64,
    /// Validation or observation times.
    pub tau: Vec<f64>,
    /// Eigenmodes tested against the subspace.
    pub modes: Vec<ModeIndex>,
    /// Test `e^{i n x}`-type modes as (cos, sin) pairs of a periodic family.
    pub complex_modes: bool,
    pub sensors: usize,
    /// Number of random coefficients in an observed solution.
    pub random_modes: usize,
    pub realizations: usize,
    /// Noise amplitude `delta` of `U(-delta, delta)`.
    pub noise: f64,
    /// Fine sampling steps for the noisy runs.
    pub time_steps: Vec<f64>,
    /// Averaging window length `r`; the window holds `S = ceil(r / dt)` steps.
    pub window_span: f64,
    /// Averaged snapshots kept per noisy run.
    pub averaged_samples: usize,
    pub seed: Option<u64>,
}

fn grid_modes(pairs: &[(usize, usize)]) -> Vec<ModeIndex> {
    pairs.iter().map(|&(m, n)| ModeIndex::Grid(m, n)).collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults of each experiment.
    pub fn default_for(id: ExperimentId) -> Self {
        let alternating = TrajectorySpec {
            coefficients: CoefficientFamily::AlternatingInverseSquare,
            branches: Branches::ALL,
        };
        let product = TrajectorySpec {
            coefficients: CoefficientFamily::ProductInverseSquare,
            branches: Branches::ALL,
        };
        let base = ExperimentConfig {
            experiment: id,
            family: EigenFamily::Dirichlet1D,
            trajectories: vec![alternating.clone()],
            space_nodes: 1001,
            times: TimeSpec {
                spacing: Spacing::Logarithmic,
                start: 1e-6,
                end: 1.0,
                count: 2000,
            },
            threshold: DEFAULT_THRESHOLD,
            series_tol: DEFAULT_SERIES_TOL,
            tau: vec![0.1],
            modes: (1..=8).map(ModeIndex::Line).collect(),
            complex_modes: false,
            sensors: 50,
            random_modes: 1000,
            realizations: 100,
            noise: 0.0,
            time_steps: Vec::new(),
            window_span: 0.1,
            averaged_samples: 1000,
            seed: None,
        };
        let observation_taus = vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 0.5];
        match id {
            ExperimentId::Numbered(1) | ExperimentId::Custom => base,
            ExperimentId::Numbered(2) => ExperimentConfig {
                family: EigenFamily::Periodic1D,
                trajectories: vec![
                    TrajectorySpec {
                        branches: Branches::SIN,
                        ..alternating.clone()
                    },
                    TrajectorySpec {
                        branches: Branches::COS_AND_CONSTANT,
                        ..alternating
                    },
                ],
                times: TimeSpec {
                    spacing: Spacing::Uniform,
                    count: 10_000,
                    ..base.times
                },
                complex_modes: true,
                ..base
            },
            ExperimentId::Numbered(3) => ExperimentConfig {
                family: EigenFamily::Rect2D,
                trajectories: vec![product],
                space_nodes: 41,
                times: TimeSpec {
                    spacing: Spacing::Uniform,
                    count: 2500,
                    ..base.times
                },
                modes: grid_modes(&[(1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (1, 3), (3, 2), (2, 3)]),
                ..base
            },
            ExperimentId::Numbered(4) => ExperimentConfig {
                family: EigenFamily::FourthOrder2D,
                trajectories: vec![product],
                space_nodes: 41,
                times: TimeSpec {
                    spacing: Spacing::Uniform,
                    count: 3500,
                    ..base.times
                },
                modes: grid_modes(&[(1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (3, 2), (1, 3), (2, 3)]),
                ..base
            },
            // The observed solution is fitted in the experiment 1 subspace; the
            // uniform grid keeps its dimension well below the 50 sensors.
            ExperimentId::Numbered(5) => ExperimentConfig {
                times: TimeSpec {
                    spacing: Spacing::Uniform,
                    count: 10_000,
                    ..base.times
                },
                tau: observation_taus,
                seed: Some(1),
                ..base
            },
            ExperimentId::Numbered(6) => ExperimentConfig {
                tau: observation_taus,
                noise: 1e-3,
                time_steps: vec![1e-3, 1e-4, 1e-5],
                seed: Some(1),
                ..base
            },
            ExperimentId::Numbered(_) => unreachable!("ids are validated on construction"),
        }
    }

    /// Restores the reference run sizes that are reduced for desk runs.
    pub fn paper_scale(mut self) -> Self {
        if let ExperimentId::Numbered(5 | 6) = self.experiment {
            self.realizations = 1000;
        }
        if let ExperimentId::Numbered(6) = self.experiment {
            self.time_steps = vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
        }
        self
    }

    /// Defaults for `id` overlaid with the fields present in `text`.
    pub fn from_json(id: ExperimentId, text: &str) -> Result<Self> {
        let overrides: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let Value::Object(overrides) = overrides else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut merged = serde_json::to_value(Self::default_for(id)).expect("config serializes");
        let fields = merged.as_object_mut().expect("config is an object");
        for (key, value) in overrides {
            fields.insert(key, value);
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        if cfg.experiment != id {
            return Err(Error::Config(format!(
                "config is for experiment {}, command line asks for {id}",
                cfg.experiment
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(id: ExperimentId, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(id, &text)
    }

    pub fn uses_randomness(&self) -> bool {
        matches!(self.experiment, ExperimentId::Numbered(5 | 6))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        self.family.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.trajectories.is_empty() {
            return bad("at least one trajectory is required");
        }
        for t in &self.trajectories {
            t.trajectory(&self.family)
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.space_nodes < 2 {
            return bad("space_nodes must be at least 2");
        }
        self.times
            .grid()
            .map_err(|e| Error::Config(format!("times: {e}")))?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.series_tol > 0.0 && self.series_tol < 1.0) {
            return bad("series_tol must lie in (0, 1)");
        }
        if self.tau.is_empty() || self.tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("tau must be a non-empty list of positive times");
        }
        for m in &self.modes {
            let idx = self.real_mode(*m, crate::spectral::Branch::Cos);
            self.family
                .eigenvalue(idx)
                .map_err(|e| Error::Config(format!("mode {m}: {e}")))?;
        }
        if self.complex_modes && self.family != EigenFamily::Periodic1D {
            return bad("complex_modes needs the periodic1d family");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a non-negative number");
        }
        if self.uses_randomness() {
            if self.seed.is_none() {
                return bad("seed is required for experiments 5 and 6");
            }
            if !matches!(
                self.family,
                EigenFamily::Dirichlet1D | EigenFamily::CustomList { .. }
            ) {
                return bad("sensor experiments need a one-dimensional line family");
            }
            if self.sensors == 0 || self.realizations == 0 || self.random_modes == 0 {
                return bad("sensors, realizations and random_modes must be positive");
            }
            if let Some(len) = self.family.finite_len() {
                if self.random_modes > len {
                    return bad("random_modes exceeds the custom eigenvalue list");
                }
            }
        }
        if self.experiment == ExperimentId::Numbered(6) {
            if self.trajectories.len() != 1 {
                return bad("experiment 6 averages exactly one trajectory");
            }
            if self.time_steps.is_empty() || self.time_steps.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return bad("time_steps must be a non-empty list of positive steps");
            }
            if !(self.window_span > 0.0 && self.window_span.is_finite()) {
                return bad("window_span must be positive");
            }
            if self.averaged_samples < 2 {
                return bad("averaged_samples must be at least 2");
            }
        }
        Ok(())
    }

    /// A listed mode as a single real eigenfunction; periodic line indices
    /// pick `branch` (the constant mode for `n = 0`).
    pub(crate) fn real_mode(&self, m: ModeIndex, branch: crate::spectral::Branch) -> ModeIndex {
        match (m, &self.family) {
            (ModeIndex::Line(0), EigenFamily::Periodic1D) => {
                ModeIndex::Periodic(0, crate::spectral::Branch::Const)
            }
            (ModeIndex::Line(n), EigenFamily::Periodic1D) => ModeIndex::Periodic(n, branch),
            _ => m,
        }
    }

    pub fn space_grid(&self) -> Result<SpaceGrid> {
        SpaceGrid::for_family(&self.family, self.space_nodes)
    }

    pub fn sample_trajectories(&self) -> Vec<Trajectory> {
        self.trajectories
            .iter()
            .map(|t| t.trajectory(&self.family))
            .collect()
    }
}
