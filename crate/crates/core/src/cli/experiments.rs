//! The experiment pipelines behind `snapspan experiment`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentId};
use crate::error::{Error, Result};
use crate::snapshot::{
    assemble_trajectory, sample_mode, window_average, SnapshotMatrix, TimeGrid, TrajectoryStream,
};
use crate::spectral::{uniform_draw, Branch, ModeIndex};
use crate::subspace::{build_subspace, build_subspace_rank, reconstruct_from_sensors, SensorSet, Subspace};

/// A pipeline failure tagged with the stage that raised it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

type Outcome<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceSummary {
    pub dim: usize,
    pub threshold: f64,
    pub singular_values: Vec<f64>,
}

impl SubspaceSummary {
    fn of(s: &Subspace) -> Self {
        SubspaceSummary {
            dim: s.dim(),
            threshold: s.threshold(),
            singular_values: s.singular_values().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeError {
    pub mode: String,
    pub tau: f64,
    pub eta: f64,
}

/// Mean relative reconstruction error at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub tau: f64,
    pub mean_error: f64,
    /// Same pipeline with the noise switched off.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error_clean: Option<f64>,
}

/// One fine time step of the noisy experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyRun {
    pub dt: f64,
    /// Steps `S` per averaging window.
    pub window: usize,
    pub fine_samples: usize,
    pub clean: SubspaceSummary,
    pub noisy: SubspaceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiment: ExperimentId,
    pub config: ExperimentConfig,
    pub input_hashes: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subspace: Option<SubspaceSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mode_errors: Vec<ModeError>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub noisy_runs: Vec<NoisyRun>,
    /// Wall-clock seconds per stage. Kept out of the JSON so that reruns are
    /// byte-identical.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

struct Clock {
    start: Instant,
    laps: Vec<(String, f64)>,
}

impl Clock {
    fn new() -> Self {
        Clock {
            start: Instant::now(),
            laps: Vec::new(),
        }
    }

    fn lap(&mut self, name: impl Into<String>) {
        self.laps.push((name.into(), self.start.elapsed().as_secs_f64()));
    }
}

// Stream selectors for sub-seeds, so realizations and noise never share draws.
const REALIZATION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Deterministic seed for task `index` of kind `stream` under `master`.
pub fn sub_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Runs the pipeline described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Outcome<Report> {
    cfg.validate().stage("config")?;
    let mut clock = Clock::new();
    let mut report = Report {
        experiment: cfg.experiment,
        config: cfg.clone(),
        input_hashes: BTreeMap::new(),
        subspace: None,
        mode_errors: Vec::new(),
        curve: Vec::new(),
        noisy_runs: Vec::new(),
        timings: Vec::new(),
    };
    match cfg.experiment {
        ExperimentId::Numbered(1..=4) | ExperimentId::Custom => {
            let v = sample_subspace(cfg, &mut clock)?;
            report.mode_errors = mode_errors(cfg, &v).stage("validate")?;
            clock.lap("validate");
            report.subspace = Some(SubspaceSummary::of(&v));
        }
        ExperimentId::Numbered(5) => {
            let v = sample_subspace(cfg, &mut clock)?;
            let errors = sensor_errors(cfg, &v).stage("reconstruct")?;
            clock.lap("reconstruct");
            report.curve = cfg
                .tau
                .iter()
                .zip(errors)
                .map(|(&tau, mean_error)| CurvePoint {
                    dt: None,
                    tau,
                    mean_error,
                    mean_error_clean: None,
                })
                .collect();
            report.subspace = Some(SubspaceSummary::of(&v));
        }
        ExperimentId::Numbered(6) => {
            for (i, &dt) in cfg.time_steps.iter().enumerate() {
                let (run, clean, noisy) = noisy_run(cfg, i, dt, &mut clock)?;
                let noisy_err = sensor_errors(cfg, &noisy).stage("reconstruct")?;
                let clean_err = sensor_errors(cfg, &clean).stage("reconstruct")?;
                clock.lap(format!("reconstruct dt={dt:e}"));
                for (k, &tau) in cfg.tau.iter().enumerate() {
                    report.curve.push(CurvePoint {
                        dt: Some(dt),
                        tau,
                        mean_error: noisy_err[k],
                        mean_error_clean: Some(clean_err[k]),
                    });
                }
                report.noisy_runs.push(run);
            }
        }
        ExperimentId::Numbered(n) => {
            return Err(Error::Config(format!("unknown experiment {n}"))).stage("config")
        }
    }
    report.timings = clock.laps;
    Ok(report)
}

/// Union subspace of the configured sample trajectories.
fn sample_subspace(cfg: &ExperimentConfig, clock: &mut Clock) -> Outcome<Subspace> {
    let space = cfg.space_grid().stage("grid")?;
    let times = cfg.times.grid().stage("grid")?;
    let matrices: Vec<SnapshotMatrix> = cfg
        .sample_trajectories()
        .iter()
        .map(|t| assemble_trajectory(t, &space, &times, cfg.series_tol))
        .collect::<Result<_>>()
        .stage("assemble")?;
    clock.lap("assemble");
    let refs: Vec<&SnapshotMatrix> = matrices.iter().collect();
    let v = build_subspace(&refs, cfg.threshold).stage("subspace")?;
    clock.lap("subspace");
    Ok(v)
}

/// Relative projection error of every listed eigenmode at every `tau`.
pub fn mode_errors(cfg: &ExperimentConfig, v: &Subspace) -> Result<Vec<ModeError>> {
    let space = v.grid();
    let mut out = Vec::new();
    for &m in &cfg.modes {
        for &tau in &cfg.tau {
            let eta = if cfg.complex_modes {
                let re = sample_mode(&cfg.family, cfg.real_mode(m, Branch::Cos), tau, space)?;
                let im = match m {
                    ModeIndex::Line(0) => vec![0.0; re.len()],
                    _ => sample_mode(&cfg.family, cfg.real_mode(m, Branch::Sin), tau, space)?,
                };
                v.relative_error_complex(&re, &im)?
            } else {
                let w = sample_mode(&cfg.family, cfg.real_mode(m, Branch::Cos), tau, space)?;
                v.relative_error(&w)?
            };
            out.push(ModeError {
                mode: m.to_string(),
                tau,
                eta,
            });
        }
    }
    Ok(out)
}

/// Mean relative error, per `tau`, of reconstructing random solutions from
/// point sensors with the subspace `v`.
///
/// Realization `r` at the `a`-th time draws `omega_n ~ U(-1, 1)` for
/// `n <= random_modes` from its own sub-seed, so any two subspaces are
/// compared on identical fields.
pub fn sensor_errors(cfg: &ExperimentConfig, v: &Subspace) -> Result<Vec<f64>> {
    let seed = cfg
        .seed
        .ok_or_else(|| Error::Config("sensor reconstruction needs a seed".into()))?;
    let sensors = SensorSet::uniform_1d(cfg.sensors)?;
    let space = v.grid();
    let modes = cfg.random_modes;
    let rates: Vec<f64> = (1..=modes)
        .map(|k| cfg.family.eigenvalue(ModeIndex::Line(k)))
        .collect::<Result<_>>()?;
    let table = |points: &[Vec<f64>]| -> Result<nalgebra::DMatrix<f64>> {
        let mut phi = nalgebra::DMatrix::zeros(points.len(), modes);
        for (i, p) in points.iter().enumerate() {
            for k in 0..modes {
                phi[(i, k)] = cfg.family.eigenfunction(ModeIndex::Line(k + 1), p)?;
            }
        }
        Ok(phi)
    };
    let nodes: Vec<Vec<f64>> = (0..space.node_count()).map(|i| space.point(i)).collect();
    let phi_grid = table(&nodes)?;
    let phi_sensors = table(sensors.locations())?;
    let runs = cfg.realizations;
    cfg.tau
        .iter()
        .enumerate()
        .map(|(a, &tau)| {
            let errors: Vec<f64> = (0..runs)
                .into_par_iter()
                .map(|r| {
                    let task = (a * runs + r) as u64;
                    let draw_seed = sub_seed(seed, REALIZATION_STREAM, task);
                    let c = nalgebra::DVector::from_fn(modes, |k, _| {
                        uniform_draw(draw_seed, (k + 1) as u64) * (-rates[k] * tau).exp()
                    });
                    let truth = &phi_grid * &c;
                    let readings = &phi_sensors * &c;
                    let rec = reconstruct_from_sensors(v, &sensors, readings.as_slice())?;
                    let diff: Vec<f64> = rec.field.iter().zip(truth.iter()).map(|(x, y)| x - y).collect();
                    let norm = space.norm(truth.as_slice());
                    if norm == 0.0 {
                        return Err(Error::ZeroField);
                    }
                    Ok(space.norm(&diff) / norm)
                })
                .collect::<Result<_>>()?;
            Ok(errors.iter().sum::<f64>() / runs as f64)
        })
        .collect()
}

/// Window-averaged subspaces of the sample trajectory on a fine grid of
/// step `dt`, without and with noise. The noisy subspace keeps as many
/// directions as the clean one passes the threshold with.
fn noisy_run(
    cfg: &ExperimentConfig,
    index: usize,
    dt: f64,
    clock: &mut Clock,
) -> Outcome<(NoisyRun, Subspace, Subspace)> {
    let space = cfg.space_grid().stage("grid")?;
    let window = ((cfg.window_span / dt) - 1e-9).ceil().max(0.0) as usize;
    let span = cfg.times.end - cfg.times.start;
    let stride = ((span / dt / (cfg.averaged_samples - 1) as f64) + 1e-9)
        .floor()
        .max(1.0) as usize;
    let outputs =
        TimeGrid::uniform_step(cfg.times.start, stride as f64 * dt, cfg.averaged_samples).stage("grid")?;
    let fine_samples = (cfg.averaged_samples - 1) * stride + window + 1;
    let fine = TimeGrid::uniform_step(cfg.times.start, dt, fine_samples).stage("grid")?;
    let trajectory = &cfg.sample_trajectories()[0];
    let stream = TrajectoryStream::new(trajectory, &space, &fine, cfg.series_tol).stage("assemble")?;
    let clean = window_average(&stream, window, &outputs).stage("average")?;
    let seed = sub_seed(cfg.seed.unwrap_or_default(), NOISE_STREAM, index as u64);
    let stream = stream.with_noise(cfg.noise, seed).stage("noise")?;
    let noisy = window_average(&stream, window, &outputs).stage("average")?;
    clock.lap(format!("average dt={dt:e}"));
    let clean_v = build_subspace(&[&clean], cfg.threshold).stage("subspace")?;
    let noisy_v = build_subspace_rank(&noisy, clean_v.dim()).stage("subspace")?;
    clock.lap(format!("subspace dt={dt:e}"));
    let run = NoisyRun {
        dt,
        window,
        fine_samples,
        clean: SubspaceSummary::of(&clean_v),
        noisy: SubspaceSummary::of(&noisy_v),
    };
    Ok((run, clean_v, noisy_v))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::malformed(path, e)
}

/// Writes `report.json` plus the CSV tables of a report into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::malformed(dir, e))?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    if let Some(s) = &report.subspace {
        let path = dir.join("singular_values.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(["index", "sigma"])
            .map_err(|e| csv_error(&path, e))?;
        for (i, x) in s.singular_values.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{x:e}")])
                .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if !report.mode_errors.is_empty() {
        let path = dir.join("modes.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(["mode", "tau", "eta"])
            .map_err(|e| csv_error(&path, e))?;
        for row in &report.mode_errors {
            w.write_record([
                row.mode.clone(),
                format!("{:e}", row.tau),
                format!("{:e}", row.eta),
            ])
            .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if !report.curve.is_empty() {
        let path = dir.join("curve.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let noisy = !report.noisy_runs.is_empty();
        if noisy {
            w.write_record(["dt", "tau", "mean_error", "mean_error_clean"])
        } else {
            w.write_record(["tau", "mean_error"])
        }
        .map_err(|e| csv_error(&path, e))?;
        for p in &report.curve {
            let mut rec = Vec::new();
            if noisy {
                rec.push(format!("{:e}", p.dt.unwrap_or(f64::NAN)));
            }
            rec.push(format!("{:e}", p.tau));
            rec.push(format!("{:e}", p.mean_error));
            if noisy {
                rec.push(format!("{:e}", p.mean_error_clean.unwrap_or(f64::NAN)));
            }
            w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: u8) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentId::Numbered(id));
        cfg.space_nodes = if id == 3 || id == 4 { 15 } else { 101 };
        cfg.times.count = 200;
        cfg.realizations = 4;
        cfg.random_modes = 50;
        cfg.time_steps = vec![1e-2];
        cfg.averaged_samples = 50;
        cfg
    }

    #[test]
    fn sub_seeds_are_distinct_and_stable() {
        let a = sub_seed(7, REALIZATION_STREAM, 0);
        assert_eq!(a, sub_seed(7, REALIZATION_STREAM, 0));
        assert_ne!(a, sub_seed(7, REALIZATION_STREAM, 1));
        assert_ne!(a, sub_seed(7, NOISE_STREAM, 0));
        assert_ne!(a, sub_seed(8, REALIZATION_STREAM, 0));
    }

    #[test]
    fn projection_experiments_produce_a_row_per_mode() {
        for id in 1..=4 {
            let r = run_experiment(&small(id)).unwrap();
            assert_eq!(r.mode_errors.len(), 8, "experiment {id}");
            assert!(r.mode_errors.iter().all(|m| m.eta >= 0.0 && m.eta <= 1.0 + 1e-12));
            assert!(r.subspace.unwrap().dim > 0);
        }
    }

    #[test]
    fn sensor_experiments_produce_curves() {
        let r = run_experiment(&small(5)).unwrap();
        assert_eq!(r.curve.len(), 6);
        let r = run_experiment(&small(6)).unwrap();
        assert_eq!(r.curve.len(), 6);
        assert_eq!(r.noisy_runs.len(), 1);
        let run = &r.noisy_runs[0];
        assert_eq!(run.window, 10);
        assert_eq!(run.noisy.dim, run.clean.dim);
    }

    #[test]
    fn stage_tags_survive() {
        let mut cfg = small(1);
        cfg.threshold = 5.0;
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.stage, "config");
        assert_eq!(err.exit_code(), 2);
    }
}
