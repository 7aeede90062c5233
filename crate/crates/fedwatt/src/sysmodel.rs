//! Physical system model: cell geometry, fading, harvested energy, and
//! transmission energy.
//!
//! One round of duration `round_s` is split into a computation phase
//! (`compute_phase_s`, during which server-side power transfer also runs)
//! and an upload phase (`comm_phase_s`). A device at distance r with uplink
//! power gain h must spend `r^alpha / h * tx_energy_unit_channel(t)` joules
//! to push the quantized model update through its channel in t seconds.
//! Whatever harvested energy remains after the upload budget goes into local
//! gradient computation.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

/// Errors from config validation and model evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid config: {field} = {value} violates `{rule}`")]
    InvalidConfig {
        field: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("channel draw carries no power-transfer gain but the server source needs one")]
    MissingWptGain,
}

/// Static system parameters shared by every device and round.
///
/// Units are SI throughout: meters, hertz, watts, joules, seconds. The
/// processor coefficient unit (watts per cubed FLOP rate) lives on
/// [`DeviceProfile`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Cell radius in meters; device distance has density 2r/R^2 on (0, R].
    pub cell_radius_m: f64,
    /// Number of participating devices K.
    pub num_devices: usize,
    /// Server receive antennas L; uplink and transfer gains are the sum of
    /// L unit-mean exponential branch gains.
    pub num_antennas: u32,
    /// Uplink bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd_w_per_hz: f64,
    /// Uplink (and server power-transfer) path-loss exponent, > 2.
    pub uplink_pathloss_exp: f64,
    /// Beacon power-transfer path-loss exponent, > 2.
    pub wpt_pathloss_exp: f64,
    /// Minimum beacon distance in meters (keeps the harvest integral finite).
    pub wpt_min_dist_m: f64,
    /// RF-to-DC conversion efficiency, in (0, 1].
    pub conversion_gain: f64,
    /// Round period T in seconds.
    pub round_s: f64,
    /// Computation-phase length in seconds.
    pub compute_phase_s: f64,
    /// Upload-phase length in seconds.
    pub comm_phase_s: f64,
    /// Model dimension q (parameters per update).
    pub model_dim: u64,
    /// Quantization bits per parameter Q; payload is q * Q bits.
    pub quant_bits: u32,
    /// FLOPs needed to process one sample's gradient.
    pub per_sample_flops: f64,
    /// Training rounds N.
    pub num_rounds: usize,
    /// SGD step size.
    pub learning_rate: f64,
    /// Smoothness constant of the global loss (Lipschitz gradient).
    pub smoothness: f64,
    /// Uniform bound on the second moment of uploaded gradients.
    pub grad_norm_bound: f64,
}

impl SystemConfig {
    /// Uplink payload per round, in bits.
    pub fn payload_bits(&self) -> f64 {
        self.model_dim as f64 * f64::from(self.quant_bits)
    }

    /// Check every field-level invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: [(&'static str, f64, &'static str, bool); 16] = [
            (
                "cell_radius_m",
                self.cell_radius_m,
                "> 0",
                self.cell_radius_m > 0.0,
            ),
            (
                "num_devices",
                self.num_devices as f64,
                ">= 1",
                self.num_devices >= 1,
            ),
            (
                "num_antennas",
                f64::from(self.num_antennas),
                ">= 1",
                self.num_antennas >= 1,
            ),
            (
                "bandwidth_hz",
                self.bandwidth_hz,
                "> 0",
                self.bandwidth_hz > 0.0,
            ),
            (
                "noise_psd_w_per_hz",
                self.noise_psd_w_per_hz,
                "> 0",
                self.noise_psd_w_per_hz > 0.0,
            ),
            (
                "uplink_pathloss_exp",
                self.uplink_pathloss_exp,
                "> 2",
                self.uplink_pathloss_exp > 2.0,
            ),
            (
                "wpt_pathloss_exp",
                self.wpt_pathloss_exp,
                "> 2",
                self.wpt_pathloss_exp > 2.0,
            ),
            (
                "wpt_min_dist_m",
                self.wpt_min_dist_m,
                "> 0",
                self.wpt_min_dist_m > 0.0,
            ),
            (
                "conversion_gain",
                self.conversion_gain,
                "in (0, 1]",
                self.conversion_gain > 0.0 && self.conversion_gain <= 1.0,
            ),
            ("round_s", self.round_s, "> 0", self.round_s > 0.0),
            (
                "compute_phase_s",
                self.compute_phase_s,
                "> 0",
                self.compute_phase_s > 0.0,
            ),
            (
                "comm_phase_s",
                self.comm_phase_s,
                "> 0",
                self.comm_phase_s > 0.0,
            ),
            (
                "comm_phase_s",
                self.compute_phase_s + self.comm_phase_s,
                "compute_phase_s + comm_phase_s <= round_s",
                self.compute_phase_s + self.comm_phase_s <= self.round_s * (1.0 + 1e-12),
            ),
            (
                "model_dim",
                self.model_dim as f64,
                ">= 1",
                self.model_dim >= 1,
            ),
            (
                "per_sample_flops",
                self.per_sample_flops,
                "> 0",
                self.per_sample_flops > 0.0,
            ),
            (
                "learning_rate",
                self.learning_rate,
                ">= 0",
                self.learning_rate >= 0.0,
            ),
        ];
        for (field, value, rule, ok) in checks {
            if !ok {
                return Err(ModelError::InvalidConfig { field, value, rule });
            }
        }
        if self.quant_bits < 1 {
            return Err(ModelError::InvalidConfig {
                field: "quant_bits",
                value: f64::from(self.quant_bits),
                rule: ">= 1",
            });
        }
        if !(self.smoothness > 0.0) {
            return Err(ModelError::InvalidConfig {
                field: "smoothness",
                value: self.smoothness,
                rule: "> 0",
            });
        }
        if !(self.grad_norm_bound >= 0.0) {
            return Err(ModelError::InvalidConfig {
                field: "grad_norm_bound",
                value: self.grad_norm_bound,
                rule: ">= 0",
            });
        }
        Ok(())
    }
}

/// Per-device constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceProfile {
    /// Processor power coefficient C in W/(FLOP/s)^3: running the clock at
    /// f FLOP/s burns C f^3 watts.
    pub compute_coeff: f64,
    /// Variance proxy sigma^2 of single-sample gradients about the local
    /// full-shard gradient (trace of the deviation covariance).
    pub grad_variance: f64,
    /// Local dataset size D.
    pub dataset_size: usize,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.compute_coeff > 0.0) {
            return Err(ModelError::InvalidConfig {
                field: "compute_coeff",
                value: self.compute_coeff,
                rule: "> 0",
            });
        }
        if !(self.grad_variance >= 0.0) {
            return Err(ModelError::InvalidConfig {
                field: "grad_variance",
                value: self.grad_variance,
                rule: ">= 0",
            });
        }
        if self.dataset_size == 0 {
            return Err(ModelError::InvalidConfig {
                field: "dataset_size",
                value: 0.0,
                rule: ">= 1",
            });
        }
        Ok(())
    }
}

/// A field of dedicated charging beacons, dense enough that the harvest per
/// round concentrates on its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconSource {
    /// Transmit power of each beacon, watts.
    pub power_w: f64,
    /// Beacon density, beacons per square meter.
    pub density_per_m2: f64,
}

/// How the server shares its power budget among scheduled devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerControl {
    /// Every scheduled device is beamed the full per-device budget.
    Equal,
    /// Budget reallocated across devices to minimize the deviation bound.
    Optimized,
}

/// The coordinating server beams power to devices during the computation
/// phase; the harvest then inherits the fading of the forward link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerSource {
    /// Per-device power budget P0, watts.
    pub power_w: f64,
    pub control: PowerControl,
}

/// Where harvested energy comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WptSource {
    Beacon(BeaconSource),
    Server(ServerSource),
}

/// One device-round channel realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    /// Distance to the server, meters.
    pub distance_m: f64,
    /// Uplink power gain (sum of L unit-mean exponential branches).
    pub uplink_gain: f64,
    /// Power-transfer beam gain; present only for server-powered setups.
    pub wpt_gain: Option<f64>,
}

/// Transmission energy through a unit channel: the joules a device must
/// spend to deliver the payload in `t_s` seconds if `r^alpha / h` were one.
/// The actual requirement is this value scaled by `r^alpha / h`
/// ([`required_comm_energy`]).
///
/// From inverting the Shannon rate: B N0 t (2^(payload / (B t)) - 1).
/// Monotone decreasing and convex in `t_s`, approaching the limit
/// N0 * payload * ln 2 as t grows. When the exponent tops 1000 the cost is
/// far beyond any physical budget and would overflow, so the function
/// returns infinity, which downstream energy splits treat as an outage.
pub fn tx_energy_unit_channel(t_s: f64, cfg: &SystemConfig) -> f64 {
    debug_assert!(t_s > 0.0, "transmission window must be positive");
    let exponent = cfg.payload_bits() / (cfg.bandwidth_hz * t_s);
    if exponent > 1000.0 {
        return f64::INFINITY;
    }
    cfg.bandwidth_hz * cfg.noise_psd_w_per_hz * t_s * (exponent.exp2() - 1.0)
}

/// Energy a device with channel `draw` must spend to upload the payload
/// within the round's upload phase. Infinite when the uplink gain is zero
/// (the device is necessarily in outage).
pub fn required_comm_energy(draw: &ChannelDraw, cfg: &SystemConfig) -> f64 {
    let phi = tx_energy_unit_channel(cfg.comm_phase_s, cfg);
    if draw.uplink_gain <= 0.0 {
        return f64::INFINITY;
    }
    draw.distance_m.powf(cfg.uplink_pathloss_exp) / draw.uplink_gain * phi
}

/// Energy delivered per round per unit area by the beacon field.
pub fn spatial_energy_density(src: &BeaconSource, cfg: &SystemConfig) -> f64 {
    src.power_w * src.density_per_m2 * cfg.round_s
}

/// Deterministic harvested energy per round under beacon charging.
///
/// Averaging the harvest over beacon positions outside the exclusion radius
/// and over fading gives
/// pi * beta * rho * density_energy / ((beta - 2) * nu^(beta - 2))
/// with density_energy the spatial energy density; the dense-field harvest
/// concentrates on this mean.
pub fn beacon_harvested_energy(src: &BeaconSource, cfg: &SystemConfig) -> f64 {
    beacon_energy_from_density(spatial_energy_density(src, cfg), cfg)
}

/// Harvest corresponding to a given spatial energy density; the sweep axis
/// of the analysis CLI.
pub fn beacon_energy_from_density(density: f64, cfg: &SystemConfig) -> f64 {
    let beta = cfg.wpt_pathloss_exp;
    let nu = cfg.wpt_min_dist_m;
    std::f64::consts::PI * beta * cfg.conversion_gain * density
        / ((beta - 2.0) * nu.powf(beta - 2.0))
}

/// Random harvested energy under server charging, for one device beamed
/// with `allocated_power_w` during the computation phase.
pub fn server_harvested_energy(
    draw: &ChannelDraw,
    allocated_power_w: f64,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let gain = draw.wpt_gain.ok_or(ModelError::MissingWptGain)?;
    Ok(cfg.conversion_gain
        * draw.distance_m.powf(-cfg.uplink_pathloss_exp)
        * gain
        * allocated_power_w
        * cfg.compute_phase_s)
}

/// Draw one device's channel state: distance with density 2r/R^2 and
/// Gamma(L, 1) power gains (L-antenna combining of unit exponentials).
pub fn sample_channel<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SystemConfig,
    with_wpt_gain: bool,
) -> ChannelDraw {
    let u: f64 = rng.gen();
    let distance_m = cfg.cell_radius_m * u.sqrt();
    let gamma = Gamma::new(f64::from(cfg.num_antennas), 1.0)
        .expect("antenna count validated positive");
    let uplink_gain = gamma.sample(rng);
    let wpt_gain = with_wpt_gain.then(|| gamma.sample(rng));
    ChannelDraw {
        distance_m,
        uplink_gain,
        wpt_gain,
    }
}
