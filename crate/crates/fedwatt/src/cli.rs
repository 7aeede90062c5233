//! Command-line front end: bound sweeps, training batches, and the built-in
//! validation suite, all emitting versioned CSV files.
//!
//! Three modes share one entry point:
//!
//! * `analyze` evaluates the closed-form convergence bound across a sweep
//!   grid and fits the energy-scaling exponent.
//! * `simulate` trains the synthetic model once per (grid point, seed) pair
//!   and writes per-round traces with the analytical bound alongside.
//! * `validate` runs the oracle suite and reports a pass/fail table.
//!
//! Every output is a CSV under `--out`, named by its grid coordinates, plus
//! an `index.csv` listing what was written.  All files start with a schema
//! comment line so readers can detect format drift.  Grid points and seeds
//! fan out over a worker pool; file contents depend only on coordinates,
//! never on scheduling, so reruns and worker counts cannot change bytes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{
    convergence_bound_beacon, convergence_bound_server, scaling_exponent, AnalysisError,
    BoundReport,
};
use crate::config::{load_experiment, ConfigError, Experiment};
use crate::mathkit::QuadratureSpec;
use crate::montecarlo::{build_task, run_training, SimError};
use crate::sysmodel::{spatial_energy_density, WptSource};
use crate::validate::{run_all, CheckOutcome};

/// Schema comment at the top of every CSV this tool writes.
pub const SCHEMA_LINE: &str = "# fedwatt csv v1";
/// Header of `bounds.csv` (analyze mode).
pub const BOUND_HEADER: &str = "grid_index,swept_value,lambda_energy_or_p0,xi_or_tau,p_out,\
outage_bound,descent,deviation,residue,total,fitted_slope";
/// Header of per-run training traces (simulate mode).
pub const TRAIN_HEADER: &str = "round,active_count,loss,grad_norm2,gdev_sample,update_applied,\
all_saturated,bound_descent,bound_deviation,bound_residue,bound_total";
/// Header of `checks.csv` (validate mode).
pub const CHECK_HEADER: &str = "name,passed,details";
/// Header of `index.csv`.
pub const INDEX_HEADER: &str = "file,kind,grid_index,swept_value,seed";

/// What a run should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Analyze,
    Simulate,
    Validate,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Analyze => "analyze",
            Mode::Simulate => "simulate",
            Mode::Validate => "validate",
        }
    }
}

/// The variable a sweep walks over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    /// Spatial energy density of the beacon field, J/m^2.
    LambdaEnergy,
    /// Server per-device power budget, watts.
    P0,
    /// Processor efficiency in (MFLOP/s)^3 per watt; each device's power
    /// coefficient becomes the reciprocal.
    ComputeEnergyRate,
    /// Noise power spectral density, W/Hz.
    N0,
}

impl SweepVar {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "lambda_energy" => Some(SweepVar::LambdaEnergy),
            "P0" | "p0" => Some(SweepVar::P0),
            "compute_energy_rate" => Some(SweepVar::ComputeEnergyRate),
            "N0" | "n0" => Some(SweepVar::N0),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepVar::LambdaEnergy => "lambda_energy",
            SweepVar::P0 => "P0",
            SweepVar::ComputeEnergyRate => "compute_energy_rate",
            SweepVar::N0 => "N0",
        }
    }
}

/// Grid spacing of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScale {
    Log,
    Lin,
}

/// One sweep: which variable, over what range, with how many points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub var: SweepVar,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub scale: GridScale,
}

impl SweepSpec {
    /// Parses the flag form `var:lo:hi:count:log|lin`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |reason: String| CliError::Sweep { reason };
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 5 {
            return Err(bad(format!(
                "expected `var:lo:hi:count:log|lin`, got `{}`",
                text
            )));
        }
        let var = SweepVar::parse(parts[0]).ok_or_else(|| {
            bad(format!(
                "unknown variable `{}`; expected lambda_energy, P0, compute_energy_rate, or N0",
                parts[0]
            ))
        })?;
        let lo: f64 = parts[1]
            .parse()
            .map_err(|e| bad(format!("bad lower endpoint `{}`: {}", parts[1], e)))?;
        let hi: f64 = parts[2]
            .parse()
            .map_err(|e| bad(format!("bad upper endpoint `{}`: {}", parts[2], e)))?;
        let count: usize = parts[3]
            .parse()
            .map_err(|e| bad(format!("bad point count `{}`: {}", parts[3], e)))?;
        let scale = match parts[4] {
            "log" => GridScale::Log,
            "lin" => GridScale::Lin,
            other => return Err(bad(format!("expected `log` or `lin`, got `{}`", other))),
        };
        if count < 2 {
            return Err(bad(format!("count {} is below the minimum of 2", count)));
        }
        if !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(bad(format!(
                "need 0 < lo < hi, got lo {} hi {}",
                lo, hi
            )));
        }
        Ok(SweepSpec {
            var,
            lo,
            hi,
            count,
            scale,
        })
    }

    /// The grid values, endpoints exact.
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|i| {
                if i == 0 {
                    return self.lo;
                }
                if i == n - 1 {
                    return self.hi;
                }
                let t = i as f64 / (n - 1) as f64;
                match self.scale {
                    GridScale::Log => self.lo * (self.hi / self.lo).powf(t),
                    GridScale::Lin => self.lo + (self.hi - self.lo) * t,
                }
            })
            .collect()
    }
}

/// A fully resolved run request.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// Experiment file; required for analyze and simulate.
    pub config: Option<PathBuf>,
    /// Optional sweep; absent means a single grid point at the file's own
    /// operating point.
    pub sweep: Option<SweepSpec>,
    /// Seeds for simulate mode; other modes ignore them.
    pub seeds: Vec<u64>,
    /// Output directory.
    pub out: PathBuf,
    /// Worker threads for the grid/seed fan-out.
    pub workers: usize,
}

/// What a run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub mode: Mode,
    /// Files written, relative to the output directory.
    pub files: Vec<PathBuf>,
    /// Fitted energy-scaling exponent; analyze mode only, NaN when the
    /// sweep cannot support a fit.
    pub fitted_slope: Option<f64>,
    /// Check table; validate mode only.
    pub checks: Vec<CheckOutcome>,
}

impl RunSummary {
    /// True when no declared check failed.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Name of the first failed check, if any.
    pub fn first_failure(&self) -> Option<&str> {
        self.checks.iter().find(|c| !c.passed).map(|c| c.name)
    }
}

/// Why a run could not start or finish.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("--config is required for mode {mode}")]
    MissingConfig { mode: &'static str },
    #[error("bad --sweep: {reason}")]
    Sweep { reason: String },
    #[error("bad --seeds: {reason}")]
    Seeds { reason: String },
    #[error("--workers must be at least 1")]
    NoWorkers,
    #[error("simulate mode needs at least one seed")]
    NoSeeds,
    #[error("sweep variable {var} needs a {needs} source, but the experiment uses {has}")]
    SweepSourceMismatch {
        var: &'static str,
        needs: &'static str,
        has: &'static str,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Executes one run request and reports what it wrote.
pub fn run(spec: &ExperimentSpec) -> Result<RunSummary, CliError> {
    if spec.workers == 0 {
        return Err(CliError::NoWorkers);
    }
    fs::create_dir_all(&spec.out).map_err(|source| CliError::Write {
        path: spec.out.clone(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()?;
    match spec.mode {
        Mode::Analyze => run_analyze(spec, &pool),
        Mode::Simulate => run_simulate(spec, &pool),
        Mode::Validate => run_validate(spec, &pool),
    }
}

fn require_config(spec: &ExperimentSpec) -> Result<Experiment, CliError> {
    let path = spec.config.as_ref().ok_or(CliError::MissingConfig {
        mode: spec.mode.name(),
    })?;
    Ok(load_experiment(path)?)
}

/// The sweep grid as (swept value, adjusted experiment) pairs; without a
/// sweep, the single point is the experiment at its own energy axis.
fn grid(spec: &ExperimentSpec, exp: &Experiment) -> Result<Vec<(f64, Experiment)>, CliError> {
    match &spec.sweep {
        None => Ok(vec![(natural_axis(exp), exp.clone())]),
        Some(sweep) => {
            check_sweep_source(sweep.var, &exp.source)?;
            sweep
                .values()
                .into_iter()
                .map(|v| Ok((v, apply_sweep(sweep.var, v, exp)?)))
                .collect()
        }
    }
}

fn natural_axis(exp: &Experiment) -> f64 {
    match &exp.source {
        WptSource::Beacon(b) => spatial_energy_density(b, &exp.system),
        WptSource::Server(s) => s.power_w,
    }
}

fn check_sweep_source(var: SweepVar, source: &WptSource) -> Result<(), CliError> {
    let has = match source {
        WptSource::Beacon(_) => "beacon",
        WptSource::Server(_) => "server",
    };
    let needs = match var {
        SweepVar::LambdaEnergy => "beacon",
        SweepVar::P0 => "server",
        SweepVar::ComputeEnergyRate | SweepVar::N0 => return Ok(()),
    };
    if needs != has {
        return Err(CliError::SweepSourceMismatch {
            var: var.name(),
            needs,
            has,
        });
    }
    Ok(())
}

/// Returns a copy of the experiment moved to one grid point.
fn apply_sweep(var: SweepVar, value: f64, exp: &Experiment) -> Result<Experiment, CliError> {
    let mut exp = exp.clone();
    match var {
        SweepVar::LambdaEnergy => match &mut exp.source {
            WptSource::Beacon(b) => {
                b.power_w = value / (b.density_per_m2 * exp.system.round_s);
            }
            WptSource::Server(_) => unreachable!("checked against the source"),
        },
        SweepVar::P0 => match &mut exp.source {
            WptSource::Server(s) => s.power_w = value,
            WptSource::Beacon(_) => unreachable!("checked against the source"),
        },
        SweepVar::ComputeEnergyRate => {
            for dev in &mut exp.devices {
                dev.compute_coeff = 1e-18 / value;
            }
            for dev in &exp.devices {
                dev.validate().map_err(ConfigError::from)?;
            }
        }
        SweepVar::N0 => {
            exp.system.noise_psd_w_per_hz = value;
            exp.system.validate().map_err(ConfigError::from)?;
        }
    }
    Ok(exp)
}

fn point_bound(exp: &Experiment) -> Result<BoundReport, CliError> {
    let report = match &exp.source {
        WptSource::Beacon(b) => {
            convergence_bound_beacon(&exp.system, &exp.devices, b, &exp.loss)?
        }
        WptSource::Server(s) => convergence_bound_server(
            &exp.system,
            &exp.devices,
            s,
            &exp.loss,
            &QuadratureSpec::default(),
        )?,
    };
    Ok(report)
}

struct IndexRow {
    file: String,
    kind: &'static str,
    grid_index: Option<usize>,
    swept_value: Option<f64>,
    seed: Option<u64>,
}

fn run_analyze(spec: &ExperimentSpec, pool: &rayon::ThreadPool) -> Result<RunSummary, CliError> {
    let exp = require_config(spec)?;
    let points = grid(spec, &exp)?;
    let reports: Vec<(f64, BoundReport)> = pool.install(|| {
        points
            .par_iter()
            .map(|(v, exp)| Ok((*v, point_bound(exp)?)))
            .collect::<Result<_, CliError>>()
    })?;
    let slope = scaling_exponent(
        &reports.iter().map(|(_, r)| *r).collect::<Vec<_>>(),
    )
    .unwrap_or(f64::NAN);

    let mut body = String::new();
    for (i, (swept, r)) in reports.iter().enumerate() {
        let outage_bound = match r.outage_bound {
            Some(b) => fmt_f64(b),
            None => String::new(),
        };
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            i,
            fmt_f64(*swept),
            fmt_f64(r.energy_axis),
            fmt_f64(r.xi_or_tau),
            fmt_f64(r.outage_prob),
            outage_bound,
            fmt_f64(r.descent_term),
            fmt_f64(r.deviation_term),
            fmt_f64(r.residue),
            fmt_f64(r.total),
            fmt_f64(slope),
        ));
    }
    write_csv(&spec.out, "bounds.csv", BOUND_HEADER, &body)?;
    let rows = vec![IndexRow {
        file: "bounds.csv".to_string(),
        kind: "bounds",
        grid_index: None,
        swept_value: None,
        seed: None,
    }];
    let files = write_index(&spec.out, rows)?;
    Ok(RunSummary {
        mode: spec.mode,
        files,
        fitted_slope: Some(slope),
        checks: Vec::new(),
    })
}

fn run_simulate(spec: &ExperimentSpec, pool: &rayon::ThreadPool) -> Result<RunSummary, CliError> {
    if spec.seeds.is_empty() {
        return Err(CliError::NoSeeds);
    }
    let exp = require_config(spec)?;
    exp.check_trainable()?;
    let points = grid(spec, &exp)?;
    let jobs: Vec<(usize, f64, &Experiment, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(gi, (v, e))| spec.seeds.iter().map(move |&s| (gi, *v, e, s)))
        .collect();
    let rows: Vec<IndexRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(gi, swept, exp, seed)| simulate_job(spec, gi, swept, exp, seed))
            .collect::<Result<_, CliError>>()
    })?;
    let files = write_index(&spec.out, rows)?;
    Ok(RunSummary {
        mode: spec.mode,
        files,
        fitted_slope: None,
        checks: Vec::new(),
    })
}

fn simulate_job(
    spec: &ExperimentSpec,
    grid_index: usize,
    swept: f64,
    exp: &Experiment,
    seed: u64,
) -> Result<IndexRow, CliError> {
    let bound = point_bound(exp)?;
    let shard = exp.devices[0].dataset_size;
    let task = build_task(
        exp.task_seed,
        exp.system.num_devices,
        shard,
        exp.feature_dim,
        exp.num_classes,
    );
    let report = run_training(&exp.system, &exp.devices, &exp.source, &task, seed)?;
    let mut body = String::new();
    for r in &report.rounds {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round_index,
            r.active_count,
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm2),
            fmt_f64(r.gdev_sample),
            u8::from(r.update_applied),
            u8::from(r.all_saturated),
            fmt_f64(bound.descent_term),
            fmt_f64(bound.deviation_term),
            fmt_f64(bound.residue),
            fmt_f64(bound.total),
        ));
    }
    let file = format!("train_g{:03}_s{}.csv", grid_index, seed);
    write_csv(&spec.out, &file, TRAIN_HEADER, &body)?;
    Ok(IndexRow {
        file,
        kind: "train",
        grid_index: Some(grid_index),
        swept_value: Some(swept),
        seed: Some(seed),
    })
}

fn run_validate(spec: &ExperimentSpec, pool: &rayon::ThreadPool) -> Result<RunSummary, CliError> {
    let scratch = spec.out.join("scratch");
    let checks = pool.install(|| run_all(&scratch));
    let mut body = String::new();
    for c in &checks {
        body.push_str(&format!(
            "{},{},{}\n",
            c.name,
            u8::from(c.passed),
            csv_quote(&c.details)
        ));
    }
    write_csv(&spec.out, "checks.csv", CHECK_HEADER, &body)?;
    let rows = vec![IndexRow {
        file: "checks.csv".to_string(),
        kind: "checks",
        grid_index: None,
        swept_value: None,
        seed: None,
    }];
    let files = write_index(&spec.out, rows)?;
    Ok(RunSummary {
        mode: spec.mode,
        files,
        fitted_slope: None,
        checks,
    })
}

/// Shortest round-trip float form, scientific notation.
fn fmt_f64(x: f64) -> String {
    format!("{:e}", x)
}

fn csv_quote(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

fn write_csv(out: &Path, name: &str, header: &str, body: &str) -> Result<(), CliError> {
    let path = out.join(name);
    let content = format!("{}\n{}\n{}", SCHEMA_LINE, header, body);
    fs::write(&path, content).map_err(|source| CliError::Write { path, source })
}

/// Writes `index.csv` over the given rows (already in grid order) and
/// returns the full file list.
fn write_index(out: &Path, rows: Vec<IndexRow>) -> Result<Vec<PathBuf>, CliError> {
    let mut body = String::new();
    let mut files: Vec<PathBuf> = Vec::new();
    for row in &rows {
        let gi = row.grid_index.map(|g| g.to_string()).unwrap_or_default();
        let sv = row.swept_value.map(fmt_f64).unwrap_or_default();
        let seed = row.seed.map(|s| s.to_string()).unwrap_or_default();
        body.push_str(&format!("{},{},{},{},{}\n", row.file, row.kind, gi, sv, seed));
        files.push(PathBuf::from(&row.file));
    }
    write_csv(out, "index.csv", INDEX_HEADER, &body)?;
    files.push(PathBuf::from("index.csv"));
    Ok(files)
}

#[derive(Parser)]
#[command(
    name = "fedwatt",
    version,
    about = "Convergence and wireless-power tradeoff toolkit for federated edge fleets"
)]
struct Args {
    /// What to run.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Experiment file; required for analyze and simulate.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep one variable: var:lo:hi:count:log|lin.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated seeds for simulate mode.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Output directory for CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for grid points and seeds.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|e| CliError::Seeds {
                reason: format!("bad seed `{}`: {}", s, e),
            })
        })
        .collect()
}

fn build_spec(args: Args) -> Result<ExperimentSpec, CliError> {
    let sweep = args.sweep.as_deref().map(SweepSpec::parse).transpose()?;
    let seeds = parse_seeds(&args.seeds)?;
    Ok(ExperimentSpec {
        mode: args.mode,
        config: args.config,
        sweep,
        seeds,
        out: args.out,
        workers: args.workers,
    })
}

fn print_summary(summary: &RunSummary) {
    println!("mode: {}", summary.mode.name());
    println!("files: {}", summary.files.len());
    for f in &summary.files {
        println!("  {}", f.display());
    }
    if let Some(slope) = summary.fitted_slope {
        println!("fitted_slope: {}", fmt_f64(slope));
    }
    if !summary.checks.is_empty() {
        let passed = summary.checks.iter().filter(|c| c.passed).count();
        println!("checks: {}/{} passed", passed, summary.checks.len());
        for c in &summary.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            println!("  {} {}: {}", tag, c.name, c.details);
        }
    }
}

/// Process entry point: parses flags, runs, prints the summary, and maps
/// the outcome to an exit code.  Zero means every declared check passed;
/// one names a failed check; two is a usage or I/O error.
pub fn main_entry() -> i32 {
    let args = Args::parse();
    let spec = match build_spec(args) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {}", e);
            return 2;
        }
    };
    match run(&spec) {
        Ok(summary) => {
            print_summary(&summary);
            match summary.first_failure() {
                None => 0,
                Some(name) => {
                    eprintln!("error: check `{}` failed", name);
                    1
                }
            }
        }
        Err(e) => {
            eprintln!("error: {}", e);
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::BeaconSource;

    pub(crate) fn tiny_beacon_config() -> String {
        "\
cell_radius_m = 50
num_devices = 4
num_antennas = 2
bandwidth_hz = 1e6
noise_psd_dbm_per_hz = -80
uplink_pathloss_exp = 3.0
wpt_pathloss_exp = 4.0
wpt_min_dist_m = 1.0
conversion_gain = 0.5
round_s = 1.0
compute_phase_s = 0.5
comm_phase_s = 0.5
model_dim = 8
quant_bits = 16
per_sample_flops = 1e4
num_rounds = 12
learning_rate = 0.05
smoothness = 1.0
grad_norm_bound = 10.0
dataset_size = 12
feature_dim = 3
num_classes = 2
source = beacon
beacon_power_w = 1.0
beacon_density_per_m2 = 0.1
compute_coeff_w_per_mflops3 = 0.1
grad_variance = 1.0
"
        .to_string()
    }

    fn beacon_spec(dir: &Path, mode: Mode) -> ExperimentSpec {
        let config = dir.join("exp.cfg");
        fs::write(&config, tiny_beacon_config()).unwrap();
        ExperimentSpec {
            mode,
            config: Some(config),
            sweep: None,
            seeds: vec![0],
            out: dir.join("out"),
            workers: 1,
        }
    }

    #[test]
    fn sweep_parse_round_trips() {
        let s = SweepSpec::parse("lambda_energy:1e-3:1e-1:9:log").unwrap();
        assert_eq!(s.var, SweepVar::LambdaEnergy);
        assert_eq!(s.count, 9);
        assert_eq!(s.scale, GridScale::Log);
        let v = s.values();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], 1e-3);
        assert_eq!(v[8], 1e-1);
        for w in v.windows(2) {
            assert!(w[1] > w[0]);
        }

        let lin = SweepSpec::parse("N0:1:3:3:lin").unwrap().values();
        assert_eq!(lin, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sweep_parse_rejects_malformed_forms() {
        for text in [
            "lambda_energy:1:10:9",
            "lambda_energy:1:10:1:log",
            "lambda_energy:10:1:9:log",
            "lambda_energy:0:1:9:log",
            "bandwidth:1:10:9:log",
            "lambda_energy:1:10:9:cubic",
            "lambda_energy:x:10:9:log",
        ] {
            assert!(
                matches!(SweepSpec::parse(text), Err(CliError::Sweep { .. })),
                "`{}` should not parse",
                text
            );
        }
    }

    #[test]
    fn sweep_variable_must_match_source() {
        let exp = crate::config::parse_experiment(&tiny_beacon_config()).unwrap();
        assert!(check_sweep_source(SweepVar::LambdaEnergy, &exp.source).is_ok());
        assert!(check_sweep_source(SweepVar::N0, &exp.source).is_ok());
        assert!(matches!(
            check_sweep_source(SweepVar::P0, &exp.source),
            Err(CliError::SweepSourceMismatch { .. })
        ));
    }

    #[test]
    fn sweep_application_moves_the_right_knob() {
        let exp = crate::config::parse_experiment(&tiny_beacon_config()).unwrap();
        let moved = apply_sweep(SweepVar::LambdaEnergy, 0.4, &exp).unwrap();
        match (&moved.source, &exp.source) {
            (WptSource::Beacon(b), WptSource::Beacon(orig)) => {
                assert_eq!(b.density_per_m2, orig.density_per_m2);
                let lambda = spatial_energy_density(
                    &BeaconSource {
                        power_w: b.power_w,
                        density_per_m2: b.density_per_m2,
                    },
                    &moved.system,
                );
                assert!((lambda - 0.4).abs() < 1e-12);
            }
            _ => panic!("source kind should be preserved"),
        }

        let faster = apply_sweep(SweepVar::ComputeEnergyRate, 100.0, &exp).unwrap();
        for dev in &faster.devices {
            assert_eq!(dev.compute_coeff, 1e-18 / 100.0);
        }

        let noisier = apply_sweep(SweepVar::N0, 5e-11, &exp).unwrap();
        assert_eq!(noisier.system.noise_psd_w_per_hz, 5e-11);
    }

    #[test]
    fn golden_headers_and_schema_line() {
        assert_eq!(SCHEMA_LINE, "# fedwatt csv v1");
        assert_eq!(
            BOUND_HEADER,
            "grid_index,swept_value,lambda_energy_or_p0,xi_or_tau,p_out,outage_bound,\
descent,deviation,residue,total,fitted_slope"
        );
        assert_eq!(
            TRAIN_HEADER,
            "round,active_count,loss,grad_norm2,gdev_sample,update_applied,all_saturated,\
bound_descent,bound_deviation,bound_residue,bound_total"
        );
        assert_eq!(CHECK_HEADER, "name,passed,details");
        assert_eq!(INDEX_HEADER, "file,kind,grid_index,swept_value,seed");
    }

    #[test]
    fn analyze_writes_versioned_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = beacon_spec(dir.path(), Mode::Analyze);
        spec.sweep = Some(SweepSpec::parse("lambda_energy:1e-2:1e1:7:log").unwrap());
        let summary = run(&spec).unwrap();
        assert!(summary.fitted_slope.is_some());
        assert_eq!(summary.files.len(), 2);

        let text = fs::read_to_string(spec.out.join("bounds.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SCHEMA_LINE));
        assert_eq!(lines.next(), Some(BOUND_HEADER));
        assert_eq!(lines.count(), 7);

        let index = fs::read_to_string(spec.out.join("index.csv")).unwrap();
        assert!(index.starts_with(SCHEMA_LINE));
        assert!(index.contains("bounds.csv,bounds"));
    }

    #[test]
    fn simulate_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = beacon_spec(dir.path(), Mode::Simulate);
        spec.seeds = vec![0, 3];
        let first = run(&spec).unwrap();
        assert_eq!(first.files.len(), 3);
        let read_all = |out: &Path| -> Vec<(PathBuf, Vec<u8>)> {
            let mut files: Vec<_> = fs::read_dir(out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            files.sort();
            files
                .into_iter()
                .map(|p| (p.clone(), fs::read(&p).unwrap()))
                .collect()
        };
        let before = read_all(&spec.out);

        let text = fs::read_to_string(spec.out.join("train_g000_s3.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SCHEMA_LINE));
        assert_eq!(lines.next(), Some(TRAIN_HEADER));
        assert_eq!(lines.count(), 12);

        let spec2 = ExperimentSpec {
            out: dir.path().join("out2"),
            ..spec.clone()
        };
        let _ = run(&spec2).unwrap();
        let after = read_all(&spec2.out);
        assert_eq!(before.len(), after.len());
        for ((pa, ba), (pb, bb)) in before.iter().zip(&after) {
            assert_eq!(pa.file_name(), pb.file_name());
            assert_eq!(ba, bb, "{:?} differs between reruns", pa);
        }
    }

    #[test]
    fn missing_config_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            mode: Mode::Analyze,
            config: None,
            sweep: None,
            seeds: vec![0],
            out: dir.path().join("out"),
            workers: 1,
        };
        assert!(matches!(run(&spec), Err(CliError::MissingConfig { .. })));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.05, 1.25e5, 1e-11, -0.3333333333333333, 2.0_f64.powi(-40)] {
            let text = fmt_f64(x);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back, x, "`{}` does not round-trip", text);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
