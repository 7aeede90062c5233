//! Experiment files: a flat `key = value` format describing one system.
//!
//! A file is a sequence of lines.  `#` starts a comment that runs to the end
//! of the line; blank lines are skipped; every other line must read
//! `key = value`.  Keys may appear at most once, and a key outside the table
//! below is a hard error, so a typo fails the parse instead of silently
//! falling back to a default.
//!
//! Scalar keys (all required unless a default is listed):
//!
//! | key                    | meaning                                        |
//! |------------------------|------------------------------------------------|
//! | `cell_radius_m`        | cell radius R in meters                        |
//! | `num_devices`          | device count K                                 |
//! | `num_antennas`         | server receive antennas L                      |
//! | `bandwidth_hz`         | uplink bandwidth B in Hz                       |
//! | `noise_psd_w_per_hz`   | noise density N0 in W/Hz                       |
//! | `noise_psd_dbm_per_hz` | N0 in dBm/Hz; exclusive with the W/Hz form     |
//! | `uplink_pathloss_exp`  | uplink path-loss exponent, > 2                 |
//! | `wpt_pathloss_exp`     | beacon path-loss exponent, > 2                 |
//! | `wpt_min_dist_m`       | minimum beacon distance in meters              |
//! | `conversion_gain`      | RF-to-DC efficiency in (0, 1]                  |
//! | `round_s`              | round period T in seconds                      |
//! | `compute_phase_s`      | computation-phase length in seconds            |
//! | `comm_phase_s`         | upload-phase length in seconds                 |
//! | `model_dim`            | model dimension q                              |
//! | `quant_bits`           | quantization bits per parameter Q              |
//! | `per_sample_flops`     | FLOPs per sample gradient W                    |
//! | `num_rounds`           | training rounds N                              |
//! | `learning_rate`        | SGD step size                                  |
//! | `smoothness`           | Lipschitz constant of the loss gradient        |
//! | `grad_norm_bound`      | bound on uploaded gradients' second moment     |
//! | `initial_gap`          | loss gap to the infimum (default 1.0)          |
//! | `dataset_size`         | samples per device D                           |
//! | `feature_dim`          | synthetic-task feature dimension               |
//! | `num_classes`          | synthetic-task class count                     |
//! | `task_seed`            | seed for the synthetic task (default 0)        |
//! | `device_seed`          | seed for device parameter draws (default 0)    |
//!
//! The power source is selected by `source = beacon` or `source = server`.
//! A beacon setup requires `beacon_power_w` and `beacon_density_per_m2`; a
//! server setup requires `server_power_w` and `server_control` (`equal` or
//! `optimized`).  Keys belonging to the other source are rejected.
//!
//! Two per-device keys accept a spread instead of a single number:
//!
//! * `compute_coeff_w_per_mflops3` is the processor power coefficient in
//!   W/(MFLOP/s)^3 and may be a scalar, `grid:lo:hi:step` (each device draws
//!   uniformly from the inclusive grid), or `list:a,b,...` (one entry per
//!   device).  Values are converted to W/(FLOP/s)^3 internally.
//! * `grad_variance` is the per-sample gradient variance proxy and may be a
//!   scalar or a `list:` with one entry per device.
//!
//! Grid draws come from a dedicated stream of `device_seed`, so the same file
//! always yields the same device population.
//!
//! Training runs additionally require the model shape to be consistent:
//! `model_dim` must equal `feature_dim * num_classes + num_classes`, and the
//! synthetic task must admit equal shards ([`Experiment::check_trainable`]).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::analysis::LossMeta;
use crate::rng::{purpose, StreamTree};
use crate::sysmodel::{
    BeaconSource, DeviceProfile, ModelError, PowerControl, ServerSource, SystemConfig, WptSource,
};

/// Conversion from W/(MFLOP/s)^3 to W/(FLOP/s)^3.
const MFLOPS3_TO_SI: f64 = 1e-18;

/// Why an experiment file was rejected.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("missing required key `{key}`")]
    MissingKey { key: &'static str },
    #[error("`{a}` conflicts with `{b}`: give exactly one")]
    ConflictingKeys { a: &'static str, b: &'static str },
    #[error("line {line}: `{key}` only applies when source = {expected}")]
    SourceMismatch {
        line: usize,
        key: String,
        expected: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot build a training task: {reason}")]
    Task { reason: String },
    #[error("cannot read experiment file: {0}")]
    Io(#[from] std::io::Error),
}

/// A parsed, validated experiment: the system, its device population, the
/// power source, and the seeds that make reruns reproducible.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system: SystemConfig,
    pub devices: Vec<DeviceProfile>,
    pub source: WptSource,
    pub loss: LossMeta,
    /// Feature dimension of the synthetic classification task.
    pub feature_dim: usize,
    /// Class count of the synthetic classification task.
    pub num_classes: usize,
    /// Seed for the synthetic task's data draw.
    pub task_seed: u64,
    /// Seed for the device parameter draws.
    pub device_seed: u64,
}

impl Experiment {
    /// Checks that the file describes a runnable training task: the model
    /// dimension matches the classifier shape and the sample pool splits into
    /// equal single-run shards.
    pub fn check_trainable(&self) -> Result<(), ConfigError> {
        let d = self.feature_dim;
        let c = self.num_classes;
        let expect = d * c + c;
        if self.system.model_dim != expect as u64 {
            return Err(ConfigError::Task {
                reason: format!(
                    "model_dim = {} but feature_dim {} and num_classes {} need {}",
                    self.system.model_dim, d, c, expect
                ),
            });
        }
        let shard = self.devices[0].dataset_size;
        let total = self.system.num_devices * shard;
        if total % c != 0 {
            return Err(ConfigError::Task {
                reason: format!(
                    "total sample count {} does not divide into {} classes",
                    total, c
                ),
            });
        }
        if total / c < shard {
            return Err(ConfigError::Task {
                reason: format!(
                    "class blocks of {} are shorter than shards of {}",
                    total / c,
                    shard
                ),
            });
        }
        Ok(())
    }
}

/// Parses and validates an experiment from file contents.
pub fn parse_experiment(text: &str) -> Result<Experiment, ConfigError> {
    let mut fields = Fields::split(text)?;

    let cell_radius_m = fields.num("cell_radius_m")?;
    let num_devices: usize = fields.num("num_devices")?;
    let num_antennas: u32 = fields.num("num_antennas")?;
    let bandwidth_hz = fields.num("bandwidth_hz")?;
    let noise_psd_w_per_hz = noise_psd(&mut fields)?;
    let uplink_pathloss_exp = fields.num("uplink_pathloss_exp")?;
    let wpt_pathloss_exp = fields.num("wpt_pathloss_exp")?;
    let wpt_min_dist_m = fields.num("wpt_min_dist_m")?;
    let conversion_gain = fields.num("conversion_gain")?;
    let round_s = fields.num("round_s")?;
    let compute_phase_s = fields.num("compute_phase_s")?;
    let comm_phase_s = fields.num("comm_phase_s")?;
    let model_dim: u64 = fields.num("model_dim")?;
    let quant_bits: u32 = fields.num("quant_bits")?;
    let per_sample_flops = fields.num("per_sample_flops")?;
    let num_rounds: usize = fields.num("num_rounds")?;
    let learning_rate = fields.num("learning_rate")?;
    let smoothness = fields.num("smoothness")?;
    let grad_norm_bound = fields.num("grad_norm_bound")?;
    let initial_gap: f64 = fields.num_or("initial_gap", 1.0)?;
    let dataset_size: usize = fields.num("dataset_size")?;
    let feature_dim: usize = fields.num("feature_dim")?;
    let num_classes: usize = fields.num("num_classes")?;
    let task_seed: u64 = fields.num_or("task_seed", 0)?;
    let device_seed: u64 = fields.num_or("device_seed", 0)?;

    let source = power_source(&mut fields)?;
    let compute_spread = {
        let (line, value) = fields.require("compute_coeff_w_per_mflops3")?;
        parse_spread(line, "compute_coeff_w_per_mflops3", &value, true)?
    };
    let variance_spread = {
        let (line, value) = fields.require("grad_variance")?;
        parse_spread(line, "grad_variance", &value, false)?
    };
    fields.finish()?;

    let system = SystemConfig {
        cell_radius_m,
        num_devices,
        num_antennas,
        bandwidth_hz,
        noise_psd_w_per_hz,
        uplink_pathloss_exp,
        wpt_pathloss_exp,
        wpt_min_dist_m,
        conversion_gain,
        round_s,
        compute_phase_s,
        comm_phase_s,
        model_dim,
        quant_bits,
        per_sample_flops,
        num_rounds,
        learning_rate,
        smoothness,
        grad_norm_bound,
    };
    system.validate()?;

    let mut rng = StreamTree::new(device_seed).stream(&[purpose::DEVICES]);
    let coeffs = compute_spread.resolve(num_devices, &mut rng)?;
    let variances = variance_spread.resolve(num_devices, &mut rng)?;
    let devices: Vec<DeviceProfile> = coeffs
        .into_iter()
        .zip(variances)
        .map(|(c, v)| DeviceProfile {
            compute_coeff: c * MFLOPS3_TO_SI,
            grad_variance: v,
            dataset_size,
        })
        .collect();
    for dev in &devices {
        dev.validate()?;
    }

    if !(initial_gap > 0.0) || !initial_gap.is_finite() {
        return Err(ConfigError::Task {
            reason: format!("initial_gap = {} must be a positive finite number", initial_gap),
        });
    }
    if feature_dim == 0 || num_classes < 2 {
        return Err(ConfigError::Task {
            reason: "feature_dim must be >= 1 and num_classes >= 2".to_string(),
        });
    }

    Ok(Experiment {
        system,
        devices,
        source,
        loss: LossMeta {
            initial_gap,
            smoothness,
            grad_bound: grad_norm_bound,
        },
        feature_dim,
        num_classes,
        task_seed,
        device_seed,
    })
}

/// Parses and validates an experiment file.
pub fn load_experiment(path: &Path) -> Result<Experiment, ConfigError> {
    parse_experiment(&std::fs::read_to_string(path)?)
}

struct RawEntry {
    line: usize,
    value: String,
}

/// Key-value entries with their line numbers, consumed one key at a time so
/// leftovers can be reported as unknown.
struct Fields {
    entries: BTreeMap<String, RawEntry>,
}

impl Fields {
    fn split(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let split = stripped.split_once('=').map(|(k, v)| (k.trim(), v.trim()));
            let (key, value) = match split {
                Some((k, v)) if !k.is_empty() && !v.is_empty() => (k, v),
                _ => {
                    return Err(ConfigError::Syntax {
                        line,
                        text: stripped.to_string(),
                    })
                }
            };
            if entries.contains_key(key) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            entries.insert(
                key.to_string(),
                RawEntry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key).map(|e| (e.line, e.value))
    }

    fn require(&mut self, key: &'static str) -> Result<(usize, String), ConfigError> {
        self.take(key).ok_or(ConfigError::MissingKey { key })
    }

    fn num<T>(&mut self, key: &'static str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let (line, value) = self.require(key)?;
        parse_num(line, key, &value)
    }

    fn num_or<T>(&mut self, key: &'static str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.take(key) {
            Some((line, value)) => parse_num(line, key, &value),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            Some((key, entry)) => Err(ConfigError::UnknownKey {
                line: entry.line,
                key,
            }),
            None => Ok(()),
        }
    }
}

fn parse_num<T>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn noise_psd(fields: &mut Fields) -> Result<f64, ConfigError> {
    let watts = fields.take("noise_psd_w_per_hz");
    let dbm = fields.take("noise_psd_dbm_per_hz");
    match (watts, dbm) {
        (Some(_), Some(_)) => Err(ConfigError::ConflictingKeys {
            a: "noise_psd_w_per_hz",
            b: "noise_psd_dbm_per_hz",
        }),
        (Some((line, value)), None) => parse_num(line, "noise_psd_w_per_hz", &value),
        (None, Some((line, value))) => {
            let level: f64 = parse_num(line, "noise_psd_dbm_per_hz", &value)?;
            Ok(10f64.powf(level / 10.0) * 1e-3)
        }
        (None, None) => Err(ConfigError::MissingKey {
            key: "noise_psd_w_per_hz (or noise_psd_dbm_per_hz)",
        }),
    }
}

fn power_source(fields: &mut Fields) -> Result<WptSource, ConfigError> {
    let (line, kind) = fields.require("source")?;
    let forbid = |fields: &mut Fields, key: &str, expected: &'static str| {
        match fields.take(key) {
            Some((line, _)) => Err(ConfigError::SourceMismatch {
                line,
                key: key.to_string(),
                expected,
            }),
            None => Ok(()),
        }
    };
    match kind.as_str() {
        "beacon" => {
            forbid(fields, "server_power_w", "server")?;
            forbid(fields, "server_control", "server")?;
            let power_w = positive(fields, "beacon_power_w")?;
            let density_per_m2 = positive(fields, "beacon_density_per_m2")?;
            Ok(WptSource::Beacon(BeaconSource {
                power_w,
                density_per_m2,
            }))
        }
        "server" => {
            forbid(fields, "beacon_power_w", "beacon")?;
            forbid(fields, "beacon_density_per_m2", "beacon")?;
            let power_w = positive(fields, "server_power_w")?;
            let (line, control) = fields.require("server_control")?;
            let control = match control.as_str() {
                "equal" => PowerControl::Equal,
                "optimized" => PowerControl::Optimized,
                other => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: "server_control".to_string(),
                        reason: format!("expected `equal` or `optimized`, got `{}`", other),
                    })
                }
            };
            Ok(WptSource::Server(ServerSource { power_w, control }))
        }
        other => Err(ConfigError::BadValue {
            line,
            key: "source".to_string(),
            reason: format!("expected `beacon` or `server`, got `{}`", other),
        }),
    }
}

fn positive(fields: &mut Fields, key: &'static str) -> Result<f64, ConfigError> {
    let (line, value) = fields.require(key)?;
    let parsed: f64 = parse_num(line, key, &value)?;
    if !(parsed > 0.0) || !parsed.is_finite() {
        return Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("{} is not a positive finite number", parsed),
        });
    }
    Ok(parsed)
}

/// A per-device value specification: one number, a uniform draw over an
/// inclusive grid, or an explicit list.
enum Spread {
    Scalar(f64),
    Grid { values: Vec<f64> },
    List { values: Vec<f64>, line: usize, key: String },
}

impl Spread {
    fn resolve(self, count: usize, rng: &mut impl Rng) -> Result<Vec<f64>, ConfigError> {
        match self {
            Spread::Scalar(v) => Ok(vec![v; count]),
            Spread::Grid { values, .. } => Ok((0..count)
                .map(|_| values[rng.gen_range(0..values.len())])
                .collect()),
            Spread::List { values, line, key } => {
                if values.len() != count {
                    return Err(ConfigError::BadValue {
                        line,
                        key,
                        reason: format!(
                            "list has {} entries but num_devices is {}",
                            values.len(),
                            count
                        ),
                    });
                }
                Ok(values)
            }
        }
    }
}

fn parse_spread(
    line: usize,
    key: &str,
    value: &str,
    allow_grid: bool,
) -> Result<Spread, ConfigError> {
    let bad = |reason: String| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason,
    };
    if let Some(rest) = value.strip_prefix("grid:") {
        if !allow_grid {
            return Err(bad("grid spreads are not supported for this key".to_string()));
        }
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected `grid:lo:hi:step`, got `{}`", value)));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| parse_num(line, key, p))
            .collect::<Result<_, _>>()?;
        let (lo, hi, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(bad(format!(
                "grid needs 0 < lo <= hi and step > 0, got lo {} hi {} step {}",
                lo, hi, step
            )));
        }
        let steps = ((hi - lo) / step + 1e-9).floor() as usize;
        let values = (0..=steps).map(|i| lo + i as f64 * step).collect();
        Ok(Spread::Grid { values })
    } else if let Some(rest) = value.strip_prefix("list:") {
        let values: Vec<f64> = rest
            .split(',')
            .map(|p| parse_num(line, key, p.trim()))
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(bad("list is empty".to_string()));
        }
        Ok(Spread::List {
            values,
            line,
            key: key.to_string(),
        })
    } else {
        Ok(Spread::Scalar(parse_num(line, key, value)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_text() -> String {
        "\
# desk-scale beacon cell
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
num_rounds = 40
learning_rate = 0.05
smoothness = 1.0
grad_norm_bound = 10.0
dataset_size = 12
feature_dim = 3
num_classes = 2
source = beacon
beacon_power_w = 1.0
beacon_density_per_m2 = 0.1
compute_coeff_w_per_mflops3 = 0.05
grad_variance = 1.0
"
        .to_string()
    }

    fn with_line(base: &str, extra: &str) -> String {
        format!("{}{}\n", base, extra)
    }

    #[test]
    fn parses_base_file() {
        let exp = parse_experiment(&base_text()).unwrap();
        assert_eq!(exp.system.num_devices, 4);
        assert_eq!(exp.devices.len(), 4);
        assert!((exp.system.noise_psd_w_per_hz - 1e-11).abs() < 1e-24);
        assert_eq!(exp.devices[0].compute_coeff, 0.05 * 1e-18);
        assert_eq!(exp.devices[0].dataset_size, 12);
        assert_eq!(exp.loss.initial_gap, 1.0);
        assert_eq!(exp.loss.smoothness, 1.0);
        assert_eq!(exp.loss.grad_bound, 10.0);
        assert_eq!(exp.task_seed, 0);
        match exp.source {
            WptSource::Beacon(b) => {
                assert_eq!(b.power_w, 1.0);
                assert_eq!(b.density_per_m2, 0.1);
            }
            WptSource::Server(_) => panic!("expected a beacon source"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = with_line(&base_text(), "beacon_count = 3");
        match parse_experiment(&text) {
            Err(ConfigError::UnknownKey { line, key }) => {
                assert_eq!(key, "beacon_count");
                assert_eq!(line, 29);
            }
            other => panic!("expected an unknown-key error, got {:?}", other.err()),
        }
    }

    #[test]
    fn duplicate_key_reports_second_line() {
        let text = with_line(&base_text(), "cell_radius_m = 60");
        match parse_experiment(&text) {
            Err(ConfigError::DuplicateKey { line, key }) => {
                assert_eq!(key, "cell_radius_m");
                assert_eq!(line, 29);
            }
            other => panic!("expected a duplicate-key error, got {:?}", other.err()),
        }
    }

    #[test]
    fn missing_key_is_named() {
        let text = base_text().replace("conversion_gain = 0.5\n", "");
        match parse_experiment(&text) {
            Err(ConfigError::MissingKey { key }) => assert_eq!(key, "conversion_gain"),
            other => panic!("expected a missing-key error, got {:?}", other.err()),
        }
    }

    #[test]
    fn noise_forms_are_exclusive() {
        let text = with_line(&base_text(), "noise_psd_w_per_hz = 1e-11");
        assert!(matches!(
            parse_experiment(&text),
            Err(ConfigError::ConflictingKeys { .. })
        ));
        let neither = base_text().replace("noise_psd_dbm_per_hz = -80\n", "");
        assert!(matches!(
            parse_experiment(&neither),
            Err(ConfigError::MissingKey { .. })
        ));
    }

    #[test]
    fn garbled_line_reports_syntax() {
        let text = with_line(&base_text(), "just words");
        match parse_experiment(&text) {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 29),
            other => panic!("expected a syntax error, got {:?}", other.err()),
        }
    }

    #[test]
    fn bad_number_reports_line_and_key() {
        let text = base_text().replace("bandwidth_hz = 1e6", "bandwidth_hz = wide");
        match parse_experiment(&text) {
            Err(ConfigError::BadValue { line, key, .. }) => {
                assert_eq!(key, "bandwidth_hz");
                assert_eq!(line, 5);
            }
            other => panic!("expected a bad-value error, got {:?}", other.err()),
        }
    }

    #[test]
    fn grid_draw_is_deterministic_and_in_range() {
        let text = base_text().replace(
            "compute_coeff_w_per_mflops3 = 0.05",
            "compute_coeff_w_per_mflops3 = grid:0.010:0.100:0.001",
        );
        let a = parse_experiment(&text).unwrap();
        let b = parse_experiment(&text).unwrap();
        for (x, y) in a.devices.iter().zip(&b.devices) {
            assert_eq!(x.compute_coeff, y.compute_coeff);
            let mflops = x.compute_coeff / MFLOPS3_TO_SI;
            assert!((0.010..=0.100 + 1e-12).contains(&mflops));
            let ticks = (mflops - 0.010) / 0.001;
            assert!((ticks - ticks.round()).abs() < 1e-9);
        }
        let reseeded = with_line(&text, "device_seed = 7");
        let c = parse_experiment(&reseeded).unwrap();
        assert!(c
            .devices
            .iter()
            .zip(&a.devices)
            .any(|(x, y)| x.compute_coeff != y.compute_coeff));
    }

    #[test]
    fn list_spread_length_must_match() {
        let good = base_text().replace(
            "grad_variance = 1.0",
            "grad_variance = list:1.0, 2.0, 3.0, 4.0",
        );
        let exp = parse_experiment(&good).unwrap();
        let vars: Vec<f64> = exp.devices.iter().map(|d| d.grad_variance).collect();
        assert_eq!(vars, vec![1.0, 2.0, 3.0, 4.0]);

        let short = base_text().replace("grad_variance = 1.0", "grad_variance = list:1.0, 2.0");
        match parse_experiment(&short) {
            Err(ConfigError::BadValue { key, .. }) => assert_eq!(key, "grad_variance"),
            other => panic!("expected a bad-value error, got {:?}", other.err()),
        }
    }

    #[test]
    fn server_source_parses_and_rejects_beacon_keys() {
        let text = base_text()
            .replace(
                "source = beacon\nbeacon_power_w = 1.0\nbeacon_density_per_m2 = 0.1",
                "source = server\nserver_power_w = 10.0\nserver_control = optimized",
            );
        let exp = parse_experiment(&text).unwrap();
        match exp.source {
            WptSource::Server(s) => {
                assert_eq!(s.power_w, 10.0);
                assert_eq!(s.control, PowerControl::Optimized);
            }
            WptSource::Beacon(_) => panic!("expected a server source"),
        }

        let mixed = with_line(&text, "beacon_power_w = 1.0");
        match parse_experiment(&mixed) {
            Err(ConfigError::SourceMismatch { key, expected, .. }) => {
                assert_eq!(key, "beacon_power_w");
                assert_eq!(expected, "beacon");
            }
            other => panic!("expected a source-mismatch error, got {:?}", other.err()),
        }
    }

    #[test]
    fn invalid_system_values_are_rejected() {
        let text = base_text().replace("uplink_pathloss_exp = 3.0", "uplink_pathloss_exp = 2.0");
        assert!(matches!(
            parse_experiment(&text),
            Err(ConfigError::Model(_))
        ));
    }

    #[test]
    fn trainable_check_catches_shape_mismatch() {
        let exp = parse_experiment(&base_text()).unwrap();
        assert!(exp.check_trainable().is_ok());

        let bad_dim = base_text().replace("model_dim = 8", "model_dim = 9");
        let exp = parse_experiment(&bad_dim).unwrap();
        assert!(matches!(exp.check_trainable(), Err(ConfigError::Task { .. })));

        let bad_split = base_text()
            .replace("num_classes = 2", "num_classes = 7")
            .replace("model_dim = 8", "model_dim = 28");
        let exp = parse_experiment(&bad_split).unwrap();
        assert!(matches!(exp.check_trainable(), Err(ConfigError::Task { .. })));
    }

    #[test]
    fn inline_comments_and_spacing_are_tolerated() {
        let text = base_text().replace(
            "cell_radius_m = 50",
            "  cell_radius_m   =  50   # meters",
        );
        let exp = parse_experiment(&text).unwrap();
        assert_eq!(exp.system.cell_radius_m, 50.0);
    }
}
