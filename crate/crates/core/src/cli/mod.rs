//! Command-line front end.
//!
//! Every command prints JSON on stdout; timing and diagnostics go to stderr.
//! Exit codes: 0 success, 1 validation above tolerance, 2 configuration or
//! argument error, 3 numerical failure, 4 I/O error.

mod config;
mod experiments;

use std::f64::consts::PI;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::moments::{
    self, Arithmetic, ExponentSequence, Horizon, MomentSequence, Tail, DEFAULT_GRAM_DIGITS,
};
use crate::snapshot::{
    self, assemble_trajectory, load_matrix, sample_mode, save_matrix, sidecar_path, SnapshotMatrix,
};
use crate::spectral::{Branch, CustomSpec, EigenFamily, ModeIndex};
use crate::subspace::{
    build_subspace, build_subspace_rank, load_subspace, reconstruct_from_sensors, save_subspace, SensorSet,
    DEFAULT_THRESHOLD,
};

pub use config::{ExperimentConfig, ExperimentId, TimeSpec, TrajectorySpec};
pub use experiments::{
    mode_errors, run_experiment, sensor_errors, sub_seed, write_report, CurvePoint, ModeError, NoisyRun,
    PipelineError, Report, SubspaceSummary,
};

#[derive(Debug, Parser)]
#[command(
    name = "snapspan",
    version,
    about = "Do snapshots of one solution span all solutions?"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one of the reference experiments (1..6) or a custom projection run.
    Experiment(ExperimentArgs),
    /// Build snapshot matrices.
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
    /// Build subspaces and measure projection errors.
    #[command(subcommand)]
    Subspace(SubspaceCommand),
    /// Fit a field to point sensor readings in a subspace.
    Reconstruct(ReconstructArgs),
    /// Exponential moment diagnostics.
    #[command(subcommand)]
    Moments(MomentsCommand),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// 1..6 or "custom".
    id: String,
    /// JSON overrides of the default configuration (or a previous report).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving report.json and the CSV tables.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the reference realization counts and time steps.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug, Subcommand)]
enum SnapshotCommand {
    /// Sample one trajectory on a grid and save it with its sidecar.
    Assemble {
        /// JSON with family, trajectory, space_nodes, times and series_tol.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum SubspaceCommand {
    /// Union subspace of one or more saved snapshot matrices.
    Build {
        #[arg(long = "matrix", required = true)]
        matrices: Vec<PathBuf>,
        #[arg(long, conflicts_with = "rank")]
        threshold: Option<f64>,
        /// Keep exactly this many directions (single matrix only).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative projection error of one field; exit 1 unless below --tol.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct FamilyArgs {
    /// dirichlet1d, periodic1d, rect2d or fourth_order2d.
    #[arg(long, conflicts_with = "custom")]
    family: Option<String>,
    /// Custom spectrum JSON with an "eigenvalues" list.
    #[arg(long)]
    custom: Option<PathBuf>,
}

impl FamilyArgs {
    fn family(&self) -> Result<EigenFamily> {
        match (&self.family, &self.custom) {
            (Some(name), None) => family_by_name(name),
            (None, Some(path)) => CustomSpec::load(path)?
                .family()
                .ok_or_else(|| Error::Config(format!("{} has no eigenvalues", path.display()))),
            _ => Err(Error::Config("give --family or --custom".into())),
        }
    }
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    subspace: PathBuf,
    /// Eigenmode index such as 3, (2,3) or 2:sin.
    #[arg(long, conflicts_with = "field")]
    mode: Option<String>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Treat a periodic line index n as the complex mode cos + i sin.
    #[arg(long)]
    complex: bool,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Saved field: a snapshot matrix (first column) or a one-column CSV.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    subspace: PathBuf,
    /// CSV with one sensor location per row.
    #[arg(long)]
    sensors: PathBuf,
    /// One-column CSV of readings, one per sensor.
    #[arg(long)]
    readings: PathBuf,
    /// Optional CSV receiving the reconstructed field.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExponentArgs {
    /// Eigenvalues of a named family.
    #[arg(long, conflicts_with_all = ["exponents", "power_law"])]
    family: Option<String>,
    /// Exponent JSON (custom spectrum layout, optional metadata).
    #[arg(long, conflicts_with = "power_law")]
    exponents: Option<PathBuf>,
    /// scale,power,shift for mu_n = scale (n + shift)^power.
    #[arg(long, allow_hyphen_values = true)]
    power_law: Option<String>,
    /// Prefix length N.
    #[arg(long, default_value_t = 12)]
    count: usize,
}

impl ExponentArgs {
    fn sequence(&self) -> Result<ExponentSequence> {
        let seq = match (&self.family, &self.exponents, &self.power_law) {
            (Some(name), None, None) => ExponentSequence::from_family(&family_by_name(name)?, self.count)?,
            (None, Some(path), None) => ExponentSequence::load(path)?,
            (None, None, Some(spec)) => {
                let parts: Vec<f64> = spec
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("--power-law {spec:?}: {e}")))?;
                let [scale, power, shift] = parts[..] else {
                    return Err(Error::Config("--power-law needs scale,power,shift".into()));
                };
                ExponentSequence::power_law(scale, power, shift, self.count)?
            }
            _ => {
                return Err(Error::Config(
                    "give one of --family, --exponents, --power-law".into(),
                ))
            }
        };
        if self.exponents.is_some() && self.count < seq.len() {
            return seq.prefix(self.count);
        }
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DnMethod {
    Product,
    Gram,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TailArg {
    None,
    Analytic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MomentRule {
    Harmonic,
}

#[derive(Debug, Subcommand)]
enum MomentsCommand {
    /// Distance from e^{-mu_n t} to the span of the other exponentials.
    Dn {
        #[command(flatten)]
        exponents: ExponentArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = DnMethod::Product)]
        method: DnMethod,
        /// Product truncation J (default 100000 when the sequence has a rule).
        #[arg(long)]
        j: Option<usize>,
        #[arg(long, value_enum, default_value_t = TailArg::Analytic)]
        tail: TailArg,
        /// Finite horizon T for the Gram route.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GRAM_DIGITS)]
        digits: usize,
    },
    /// Norm of the bi-orthogonal function over the prefix.
    Biorth {
        #[command(flatten)]
        exponents: ExponentArgs,
        #[arg(long)]
        n: usize,
    },
    /// Convergence of the reciprocal exponent series.
    Series {
        #[command(flatten)]
        exponents: ExponentArgs,
    },
    /// Hausdorff/Widder table of a moment sequence.
    Widder {
        #[arg(long, value_enum, conflicts_with = "moments")]
        rule: Option<MomentRule>,
        /// Moment sequence JSON.
        #[arg(long)]
        moments: Option<PathBuf>,
        #[arg(long)]
        kmax: usize,
        /// Floating point instead of exact rationals.
        #[arg(long)]
        float: bool,
        /// Allow floating point beyond its safe range.
        #[arg(long)]
        force: bool,
    },
    /// The integral zeta_{0,beta}.
    Zeta {
        #[arg(long)]
        beta: f64,
    },
    /// Smallest scaled gap between consecutive eigenvalues.
    Gap {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        cutoff: f64,
        /// Read --cutoff in units of pi^2.
        #[arg(long)]
        pi2: bool,
    },
}

/// Input of `snapshot assemble`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssembleSpec {
    family: EigenFamily,
    trajectory: TrajectorySpec,
    space_nodes: usize,
    times: TimeSpec,
    #[serde(default = "default_series_tol")]
    series_tol: f64,
}

fn default_series_tol() -> f64 {
    snapshot::DEFAULT_SERIES_TOL
}

fn family_by_name(name: &str) -> Result<EigenFamily> {
    serde_json::from_value(json!({ "kind": name }))
        .map_err(|_| Error::Config(format!("unknown family {name:?}")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Errors from either the library or a tagged pipeline stage.
#[derive(Debug)]
enum CliError {
    Plain(Error),
    Stage(PipelineError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Plain(e) => e.fmt(f),
            CliError::Stage(e) => e.fmt(f),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Plain(e) => e.exit_code(),
            CliError::Stage(e) => e.exit_code(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Plain(e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Stage(e)
    }
}

fn dispatch(command: Command) -> std::result::Result<i32, CliError> {
    match command {
        Command::Experiment(args) => experiment(args),
        Command::Snapshot(SnapshotCommand::Assemble { config, out }) => Ok(assemble_cmd(&config, &out)?),
        Command::Subspace(SubspaceCommand::Build {
            matrices,
            threshold,
            rank,
            out,
        }) => Ok(build_cmd(&matrices, threshold, rank, &out)?),
        Command::Subspace(SubspaceCommand::Validate(args)) => Ok(validate_cmd(&args)?),
        Command::Reconstruct(args) => Ok(reconstruct_cmd(&args)?),
        Command::Moments(cmd) => Ok(moments_cmd(cmd)?),
    }
}

fn experiment(args: ExperimentArgs) -> std::result::Result<i32, CliError> {
    let id = ExperimentId::parse(&args.id)?;
    let mut hashes = std::collections::BTreeMap::new();
    let mut cfg = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            hashes.insert("config".to_string(), sha256_hex(&bytes));
            let text = String::from_utf8(bytes).map_err(|e| Error::malformed(path, e))?;
            // A previous report replays through its embedded config.
            let value: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
            let text = match value.get("config") {
                Some(inner) => inner.to_string(),
                None => text,
            };
            ExperimentConfig::from_json(id, &text)?
        }
        None => ExperimentConfig::default_for(id),
    };
    if args.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    cfg.validate()?;
    let mut report = run_experiment(&cfg)?;
    report.input_hashes = hashes;
    for (stage, secs) in &report.timings {
        eprintln!("{stage}: {secs:.2} s");
    }
    write_report(&report, &args.out)?;
    print_json(&json!({
        "experiment": report.experiment,
        "out": args.out,
        "subspace_dim": report.subspace.as_ref().map(|s| s.dim),
        "mode_errors": report.mode_errors,
        "curve": report.curve,
    }))?;
    Ok(0)
}

fn assemble_cmd(config: &Path, out: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let spec: AssembleSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("assemble spec: {e}")))?;
    let space = snapshot::SpaceGrid::for_family(&spec.family, spec.space_nodes)?;
    let times = spec.times.grid()?;
    let m = assemble_trajectory(
        &spec.trajectory.trajectory(&spec.family),
        &space,
        &times,
        spec.series_tol,
    )?;
    save_matrix(&m, out)?;
    print_json(&json!({
        "out": out,
        "sidecar": sidecar_path(out),
        "rows": m.nrows(),
        "columns": m.ncols(),
    }))?;
    Ok(0)
}

fn build_cmd(paths: &[PathBuf], threshold: Option<f64>, rank: Option<usize>, out: &Path) -> Result<i32> {
    let matrices: Vec<SnapshotMatrix> = paths.iter().map(|p| load_matrix(p)).collect::<Result<_>>()?;
    let s = match rank {
        Some(r) => {
            if matrices.len() != 1 {
                return Err(Error::Config("--rank takes a single matrix".into()));
            }
            build_subspace_rank(&matrices[0], r)?
        }
        None => {
            let refs: Vec<&SnapshotMatrix> = matrices.iter().collect();
            build_subspace(&refs, threshold.unwrap_or(DEFAULT_THRESHOLD))?
        }
    };
    save_subspace(&s, out)?;
    print_json(&json!({
        "out": out,
        "dim": s.dim(),
        "threshold": s.threshold(),
        "singular_values": s.singular_values(),
    }))?;
    Ok(0)
}

fn validate_cmd(args: &ValidateArgs) -> Result<i32> {
    let s = load_subspace(&args.subspace)?;
    let eta = match (&args.mode, &args.field) {
        (Some(mode), None) => {
            let family = args.family.family()?;
            let idx: ModeIndex = mode
                .parse()
                .map_err(|e: Error| Error::Config(format!("--mode {mode:?}: {e}")))?;
            if args.complex {
                let ModeIndex::Line(n) = idx else {
                    return Err(Error::Config("--complex takes a line index n".into()));
                };
                if family != EigenFamily::Periodic1D {
                    return Err(Error::Config("--complex needs the periodic1d family".into()));
                }
                let (re_idx, im_idx) = if n == 0 {
                    (ModeIndex::Periodic(0, Branch::Const), None)
                } else {
                    (
                        ModeIndex::Periodic(n, Branch::Cos),
                        Some(ModeIndex::Periodic(n, Branch::Sin)),
                    )
                };
                let re = sample_mode(&family, re_idx, args.tau, s.grid())?;
                let im = match im_idx {
                    Some(i) => sample_mode(&family, i, args.tau, s.grid())?,
                    None => vec![0.0; re.len()],
                };
                s.relative_error_complex(&re, &im)?
            } else {
                s.relative_error(&sample_mode(&family, idx, args.tau, s.grid())?)?
            }
        }
        (None, Some(path)) => {
            let field = if sidecar_path(path).exists() {
                let m = load_matrix(path)?;
                if m.space() != s.grid() {
                    return Err(Error::GridMismatch);
                }
                m.values().column(0).iter().copied().collect::<Vec<f64>>()
            } else {
                let m = snapshot::read_csv(path)?;
                if m.ncols() != 1 {
                    return Err(Error::malformed(path, "field CSV must have one column"));
                }
                m.as_slice().to_vec()
            };
            if field.len() != s.grid().node_count() {
                return Err(Error::GridMismatch);
            }
            s.relative_error(&field)?
        }
        _ => return Err(Error::Config("give --mode or --field".into())),
    };
    let pass = eta < args.tol;
    print_json(&json!({ "eta": eta, "tol": args.tol, "pass": pass }))?;
    Ok(if pass { 0 } else { 1 })
}

fn reconstruct_cmd(args: &ReconstructArgs) -> Result<i32> {
    let s = load_subspace(&args.subspace)?;
    let locs = snapshot::read_csv(&args.sensors)?;
    let sensors = SensorSet::new(
        (0..locs.nrows())
            .map(|i| locs.row(i).iter().copied().collect())
            .collect(),
    )?;
    let readings = snapshot::read_csv(&args.readings)?;
    if readings.ncols() != 1 {
        return Err(Error::malformed(
            &args.readings,
            "readings CSV must have one column",
        ));
    }
    let rec = reconstruct_from_sensors(&s, &sensors, readings.as_slice())?;
    if let Some(out) = &args.out {
        let field = nalgebra::DMatrix::from_column_slice(rec.field.len(), 1, &rec.field);
        snapshot::write_csv(out, &field)?;
    }
    if let Some(w) = &rec.warning {
        eprintln!("warning: {w}");
    }
    print_json(&json!({
        "coefficients": rec.coefficients,
        "rms_residual": rec.rms_residual,
        "warning": rec.warning,
    }))?;
    Ok(0)
}

fn moments_cmd(cmd: MomentsCommand) -> Result<i32> {
    match cmd {
        MomentsCommand::Dn {
            exponents,
            n,
            method,
            j,
            tail,
            horizon,
            digits,
        } => {
            let seq = exponents.sequence()?;
            match method {
                DnMethod::Product => {
                    if horizon.is_some() {
                        return Err(Error::Config("--horizon applies to the gram method".into()));
                    }
                    let j = j.unwrap_or(if seq.rule().is_some() { 100_000 } else { seq.len() });
                    let tail = match tail {
                        TailArg::None => Tail::None,
                        TailArg::Analytic => Tail::Analytic,
                    };
                    let d = moments::dn_infinity_product(&seq, n, j, tail)?;
                    print_json(&json!({
                        "method": "product", "n": n, "j": j, "tail": tail,
                        "value": d.value, "log_value": d.log_value,
                    }))?;
                }
                DnMethod::Gram => {
                    let h = match horizon {
                        Some(t) => Horizon::Finite(t),
                        None => Horizon::Infinite,
                    };
                    let d = moments::dn_gram(&seq, n, h, digits)?;
                    print_json(&json!({
                        "method": "gram", "n": n, "count": seq.len(), "horizon": h,
                        "digits": digits, "value": d,
                    }))?;
                }
            }
        }
        MomentsCommand::Biorth { exponents, n } => {
            let seq = exponents.sequence()?;
            let b = moments::finite_biorth_norm(&seq, n)?;
            print_json(&json!({
                "n": n, "count": seq.len(), "value": b.value, "log_value": b.log_value,
            }))?;
        }
        MomentsCommand::Series { exponents } => {
            print_json(&moments::series_class(&exponents.sequence()?)?)?;
        }
        MomentsCommand::Widder {
            rule,
            moments: file,
            kmax,
            float,
            force,
        } => {
            let seq = match (rule, file) {
                (Some(MomentRule::Harmonic), None) => MomentSequence::Harmonic { count: kmax + 1 },
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e))?
                }
                _ => return Err(Error::Config("give --rule or --moments".into())),
            };
            let arithmetic = if float {
                Arithmetic::Float { force }
            } else {
                Arithmetic::Exact
            };
            print_json(&moments::widder_table(&seq, kmax, arithmetic)?)?;
        }
        MomentsCommand::Zeta { beta } => {
            let q = moments::zeta0(beta)?;
            print_json(&json!({
                "beta": beta, "value": q.value, "error_estimate": q.error_estimate,
                "evaluations": q.evaluations,
            }))?;
        }
        MomentsCommand::Gap { family, cutoff, pi2 } => {
            let cutoff = if pi2 { cutoff * PI * PI } else { cutoff };
            print_json(&moments::gap_check(&family.family()?, cutoff)?)?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn family_names() {
        assert_eq!(family_by_name("rect2d").unwrap(), EigenFamily::Rect2D);
        assert!(family_by_name("custom").is_err());
        assert!(family_by_name("nope").is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["snapspan", "moments", "zeta"]), 2);
        assert_eq!(run(["snapspan", "experiment", "9", "--out", "/nonexistent"]), 2);
        assert_eq!(run(["snapspan", "moments", "zeta", "--beta", "0.5"]), 2);
    }

    #[test]
    fn hashes_are_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
