//! Closed-form outage probabilities, gradient-deviation bounds, and
//! convergence bounds.
//!
//! The chain runs: channel statistics give an outage probability (the
//! chance a device harvests too little to upload); the energy left after
//! the upload sets the batch size, whose finiteness inflates the variance
//! of each device's gradient; random participation adds an averaging
//! penalty. [`convergence_bound_beacon`] and [`convergence_bound_server`]
//! assemble the three effects into a single bound on the average squared
//! gradient norm over a training run, reported per energy level so sweeps
//! can expose the scaling laws that [`scaling_exponent`] fits.

use crate::mathkit::{
    bessel_k0, beta, integrate, ln_gamma, regularized_lower_gamma, MathError, QuadratureSpec,
};
use crate::sysmodel::{
    beacon_energy_from_density, spatial_energy_density, tx_energy_unit_channel, BeaconSource,
    DeviceProfile, ServerSource, SystemConfig,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("step size {eta} exceeds the stability limit 1/smoothness = {limit}")]
    StepSizeTooLarge { eta: f64, limit: f64 },
    #[error("step size must be positive, got {eta}")]
    StepSizeNotPositive { eta: f64 },
    #[error("bound needs at least two devices, got {found}")]
    TooFewDevices { found: usize },
    #[error("outage probability 1 leaves no active device to condition on")]
    FullOutage,
    #[error("expected {expected} per-device terms, got {found}")]
    DeviceCountMismatch { expected: usize, found: usize },
    #[error("power sweep keeps only {usable} low-outage points; need 5 spanning 2 decades")]
    SweepTooNarrow { usable: usize },
    #[error("outage parameter {tau} outside (0, {limit}) where the bound holds")]
    TauOutOfRange { tau: f64, limit: f64 },
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Which charging infrastructure a bound describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Beacon,
    Server,
}

/// Where the per-device deviation expectation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationMode {
    /// Closed-form upper bound on E[sigma^2 / b | active].
    ClosedForm,
    /// Empirical average supplied by the simulator.
    MonteCarlo,
}

/// Loss-landscape constants the convergence bound needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMeta {
    /// Gap between the initial loss and its infimum.
    pub initial_gap: f64,
    /// Lipschitz constant of the loss gradient.
    pub smoothness: f64,
    /// Uniform bound on the expected squared norm of uploaded gradients.
    pub grad_bound: f64,
}

/// One evaluated convergence bound, split into its additive parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Spatial energy density (beacon) or per-device power budget (server).
    pub energy_axis: f64,
    /// Dimensionless outage parameter: xi for beacons, tau for the server.
    pub xi_or_tau: f64,
    /// Exact outage probability (quadrature in the server regime).
    pub outage_prob: f64,
    /// Closed-form outage upper bound, when one exists for the regime.
    pub outage_bound: Option<f64>,
    /// Optimization-progress term, 2 * initial_gap / (eta * N).
    pub descent_term: f64,
    /// Finite-batch gradient-noise term.
    pub deviation_term: f64,
    /// Random-participation penalty.
    pub residue: f64,
    /// Sum of the three terms.
    pub total: f64,
    pub regime: Regime,
    pub deviation_mode: DeviationMode,
}

/// Beacon outage parameter: required cell-edge upload energy over harvested
/// energy, xi = R^alpha phi(T_cmm) / Ebar.
pub fn xi_parameter(src: &BeaconSource, cfg: &SystemConfig) -> f64 {
    let phi = tx_energy_unit_channel(cfg.comm_phase_s, cfg);
    cfg.cell_radius_m.powf(cfg.uplink_pathloss_exp) * phi / beacon_harvest(src, cfg)
}

fn beacon_harvest(src: &BeaconSource, cfg: &SystemConfig) -> f64 {
    beacon_energy_from_density(spatial_energy_density(src, cfg), cfg)
}

/// Server outage parameter: tau = R^(2 alpha) phi(T_cmm) / (rho P0 T_cmp).
/// The path loss appears squared because the energy crosses the cell twice.
pub fn tau_parameter(src: &ServerSource, cfg: &SystemConfig) -> f64 {
    let phi = tx_energy_unit_channel(cfg.comm_phase_s, cfg);
    cfg.cell_radius_m.powf(2.0 * cfg.uplink_pathloss_exp) * phi
        / (cfg.conversion_gain * src.power_w * cfg.compute_phase_s)
}

/// Probability that a beacon-charged device cannot afford its upload:
/// P_out = P(L, xi) - xi^(-2/alpha) gamma(L + 2/alpha, xi) / Gamma(L),
/// from integrating the fading tail over the uniform cell position.
/// Strictly increasing in xi, 0 at xi = 0, 1 in the limit.
pub fn beacon_outage_probability(xi: f64, num_antennas: u32, alpha: f64) -> f64 {
    debug_assert!(alpha >= 2.0);
    if xi <= 0.0 {
        return 0.0;
    }
    if xi.is_infinite() {
        return 1.0;
    }
    let l = f64::from(num_antennas);
    let head = regularized_lower_gamma(l, xi).expect("l >= 1 and xi > 0 are in domain");
    let shifted = l + 2.0 / alpha;
    let tail_ratio = (ln_gamma(shifted).expect("shifted > 0")
        - ln_gamma(l).expect("l >= 1"))
    .exp();
    let tail = regularized_lower_gamma(shifted, xi).expect("shifted > 0 and xi > 0");
    (head - xi.powf(-2.0 / alpha) * tail_ratio * tail).clamp(0.0, 1.0)
}

/// Which end of the outage curve an asymptote describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailRegime {
    SmallXi,
    LargeXi,
}

/// Asymptotic approximation of the beacon outage probability evaluated at
/// `xi`: 2 xi^L / ((alpha L + 2) Gamma(L+1)) for small xi, and
/// 1 - xi^(-2/alpha) Gamma(L + 2/alpha) / Gamma(L) for large xi.
pub fn beacon_outage_asymptote(xi: f64, num_antennas: u32, alpha: f64, regime: TailRegime) -> f64 {
    let l = f64::from(num_antennas);
    match regime {
        TailRegime::SmallXi => {
            let const_factor =
                2.0 / ((alpha * l + 2.0) * ln_gamma(l + 1.0).expect("l + 1 > 0").exp());
            const_factor * xi.powf(l)
        }
        TailRegime::LargeXi => {
            let ratio = (ln_gamma(l + 2.0 / alpha).expect("positive")
                - ln_gamma(l).expect("positive"))
            .exp();
            1.0 - xi.powf(-2.0 / alpha) * ratio
        }
    }
}

/// Mean of 1/M conditioned on at least one of K devices being active, each
/// independently inactive with probability `p_out`:
/// sum_{m=1}^{K} (p^(m-1) - p^K) / (K - m + 1) / (1 - p^K).
/// Equals 1/K at p_out = 0 and tends to 1 as p_out approaches 1.
pub fn expected_reciprocal_active(p_out: f64, num_devices: usize) -> Result<f64, AnalysisError> {
    debug_assert!((0.0..=1.0).contains(&p_out));
    debug_assert!(num_devices >= 1);
    if p_out >= 1.0 {
        return Err(AnalysisError::FullOutage);
    }
    let k = num_devices as f64;
    // Near-total outage: the truncated sum cancels catastrophically, but
    // conditioning concentrates on a single active device, so the limit 1
    // is exact to working precision.
    if p_out > 1.0 - 1e-12 {
        return Ok(1.0);
    }
    let pk = p_out.powi(num_devices as i32);
    let mut sum = 0.0;
    for m in 1..=num_devices {
        sum += (p_out.powi(m as i32 - 1) - pk) / (k - m as f64 + 1.0);
    }
    Ok(sum / (1.0 - pk))
}

/// Participation penalty on the convergence bound:
/// 2 (sum_{m=2}^{K} (p^(m-1) - p^K)/(K - m + 1) + p^2) Phi.
/// Vanishes at p_out = 0 and is bounded by 2 Phi (1 + ...) otherwise.
pub fn participation_residue(p_out: f64, num_devices: usize, grad_bound: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_out));
    let k = num_devices as f64;
    let pk = p_out.powi(num_devices as i32);
    let mut sum = 0.0;
    for m in 2..=num_devices {
        sum += (p_out.powi(m as i32 - 1) - pk) / (k - m as f64 + 1.0);
    }
    2.0 * (sum + p_out * p_out) * grad_bound
}

/// Upper bound on a beacon-charged device's conditional gradient-noise
/// contribution E[sigma^2 / b* | active]:
/// 2 W sigma^2 C^(1/3) B(2/3, 2/alpha) / (alpha T_cmp^(2/3) Ebar^(1/3)).
/// Averages 1/b* over the channel given the device is active.
pub fn local_deviation_bound(dev: &DeviceProfile, ebar_j: f64, cfg: &SystemConfig) -> f64 {
    debug_assert!(ebar_j > 0.0);
    if dev.grad_variance == 0.0 {
        return 0.0;
    }
    let alpha = cfg.uplink_pathloss_exp;
    let b = beta(2.0 / 3.0, 2.0 / alpha).expect("positive arguments");
    2.0 * cfg.per_sample_flops * dev.grad_variance * dev.compute_coeff.cbrt() * b
        / (alpha * cfg.compute_phase_s.powf(2.0 / 3.0) * ebar_j.cbrt())
}

/// Bound on the aggregated gradient's mean-square deviation from the global
/// full-batch gradient: (2/K^2) sum of per-device terms plus the
/// participation penalty. Entries of `per_device_terms` are each device's
/// Pr(active) * E[sigma^2 / b | active].
pub fn global_deviation_bound(
    per_device_terms: &[f64],
    p_out: f64,
    num_devices: usize,
    grad_bound: f64,
) -> Result<f64, AnalysisError> {
    if per_device_terms.len() != num_devices {
        return Err(AnalysisError::DeviceCountMismatch {
            expected: num_devices,
            found: per_device_terms.len(),
        });
    }
    let k = num_devices as f64;
    let noise = 2.0 / (k * k) * per_device_terms.iter().sum::<f64>();
    let recip = expected_reciprocal_active(p_out, num_devices)?;
    let pk = p_out.powi(num_devices as i32);
    let penalty = 2.0 * ((1.0 - pk) * (recip - 1.0 / k) + p_out * p_out) * grad_bound;
    Ok(noise + penalty)
}

/// Geometry factor of the beacon deviation term:
/// (4/alpha) B(2/3, 2/alpha) ((beta - 2) nu^(beta-2) / (pi beta))^(1/3).
pub fn beacon_deviation_scale(cfg: &SystemConfig) -> f64 {
    let alpha = cfg.uplink_pathloss_exp;
    let beta_exp = cfg.wpt_pathloss_exp;
    let b = beta(2.0 / 3.0, 2.0 / alpha).expect("positive arguments");
    4.0 / alpha
        * b
        * ((beta_exp - 2.0) * cfg.wpt_min_dist_m.powf(beta_exp - 2.0)
            / (std::f64::consts::PI * beta_exp))
        .cbrt()
}

/// Geometry factor of the server deviation term:
/// 2 B(2/3, 1/6 + 1/alpha) Gamma(L + 1/3) R^(alpha/3) / (alpha Gamma(L)).
/// Unlike the beacon factor this keeps the fading statistics, because the
/// harvest inherits the beam's fading.
pub fn server_deviation_scale(cfg: &SystemConfig) -> f64 {
    let alpha = cfg.uplink_pathloss_exp;
    let l = f64::from(cfg.num_antennas);
    let b = beta(2.0 / 3.0, 1.0 / 6.0 + 1.0 / alpha).expect("positive arguments");
    let gamma_ratio = (ln_gamma(l + 1.0 / 3.0).expect("positive")
        - ln_gamma(l).expect("positive"))
    .exp();
    2.0 * b * gamma_ratio * cfg.cell_radius_m.powf(alpha / 3.0) / alpha
}

/// Mean of sigma^2 C^(1/3) across the fleet.
fn variance_cost_mean(devices: &[DeviceProfile]) -> f64 {
    devices
        .iter()
        .map(|d| d.grad_variance * d.compute_coeff.cbrt())
        .sum::<f64>()
        / devices.len() as f64
}

fn check_common_preconditions(
    cfg: &SystemConfig,
    devices: &[DeviceProfile],
    loss: &LossMeta,
) -> Result<(), AnalysisError> {
    if devices.len() < 2 {
        return Err(AnalysisError::TooFewDevices {
            found: devices.len(),
        });
    }
    if cfg.learning_rate <= 0.0 {
        return Err(AnalysisError::StepSizeNotPositive {
            eta: cfg.learning_rate,
        });
    }
    let limit = 1.0 / loss.smoothness;
    if cfg.learning_rate > limit {
        return Err(AnalysisError::StepSizeTooLarge {
            eta: cfg.learning_rate,
            limit,
        });
    }
    Ok(())
}

/// Convergence bound for a fleet charged by dedicated beacons.
///
/// descent + deviation + residue, where the deviation term is
/// delta W Cbar_sigma (1 - P_out) / (rho^(1/3) K T_cmp^(2/3) lambda^(1/3))
/// with lambda the spatial energy density, and the residue is
/// [`participation_residue`] at the beacon outage probability.
pub fn convergence_bound_beacon(
    cfg: &SystemConfig,
    devices: &[DeviceProfile],
    src: &BeaconSource,
    loss: &LossMeta,
) -> Result<BoundReport, AnalysisError> {
    check_common_preconditions(cfg, devices, loss)?;
    let lambda = spatial_energy_density(src, cfg);
    let xi = xi_parameter(src, cfg);
    let p_out = beacon_outage_probability(xi, cfg.num_antennas, cfg.uplink_pathloss_exp);
    let k = devices.len() as f64;
    let descent_term = 2.0 * loss.initial_gap / (cfg.learning_rate * cfg.num_rounds as f64);
    let deviation_term = beacon_deviation_scale(cfg)
        * cfg.per_sample_flops
        * variance_cost_mean(devices)
        * (1.0 - p_out)
        / (cfg.conversion_gain.cbrt()
            * k
            * cfg.compute_phase_s.powf(2.0 / 3.0)
            * lambda.cbrt());
    let residue = participation_residue(p_out, devices.len(), loss.grad_bound);
    Ok(BoundReport {
        energy_axis: lambda,
        xi_or_tau: xi,
        outage_prob: p_out,
        outage_bound: None,
        descent_term,
        deviation_term,
        residue,
        total: descent_term + deviation_term + residue,
        regime: Regime::Beacon,
        deviation_mode: DeviationMode::ClosedForm,
    })
}

/// Probability that a server-charged device cannot afford its upload,
/// by quadrature of the product-channel density:
/// integral over (0, tau) of 2 x^(L-1) K0(2 sqrt x) (1 - (x/tau)^(1/alpha))
/// dx / Gamma(L)^2. The L = 1 integrand has a log singularity at zero.
pub fn server_outage_probability(
    tau: f64,
    num_antennas: u32,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<f64, AnalysisError> {
    debug_assert!(tau >= 0.0);
    if tau <= 0.0 {
        return Ok(0.0);
    }
    let l = f64::from(num_antennas);
    let norm = 2.0 * (-2.0 * ln_gamma(l).expect("l >= 1")).exp();
    let value = integrate(
        |x| norm * x.powf(l - 1.0) * bessel_k0(2.0 * x.sqrt()).unwrap_or(0.0)
            * (1.0 - (x / tau).powf(1.0 / alpha)),
        0.0,
        tau,
        quad,
        num_antennas == 1,
    )?;
    Ok(value.clamp(0.0, 1.0))
}

/// Leading-order behavior of the server outage probability for small tau:
/// tau^L ln(1/tau) / (Gamma(L)^2 L (1 + alpha L)). An asymptote, not a
/// bound: at finite tau it can undershoot the exact value (the dropped
/// constant term matters whenever ln(1/tau) is moderate, e.g. by ~10% at
/// tau = 1e-2, L = 1).
pub fn server_outage_leading_term(
    tau: f64,
    num_antennas: u32,
    alpha: f64,
) -> Result<f64, AnalysisError> {
    if tau == 0.0 {
        return Ok(0.0);
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(AnalysisError::TauOutOfRange { tau, limit: 1.0 });
    }
    let l = f64::from(num_antennas);
    let s = -tau.ln();
    let norm = (-2.0 * ln_gamma(l).expect("l >= 1")).exp();
    Ok(norm * tau.powf(l) * s / (l * (1.0 + alpha * l)))
}

/// Finite-tau upper bound on the server outage probability:
/// tau^L (1 + 2 alpha L + L (1 + alpha L) ln(1/tau))
/// / (Gamma(L)^2 L^2 (1 + alpha L)^2).
/// Comes from 2 K0(2 sqrt x) <= -ln x on the integration range, which
/// holds for x <= 0.5, hence the tau <= 0.5 domain. Dominates the
/// quadrature value everywhere in its domain and matches
/// [`server_outage_leading_term`] as tau tends to zero.
pub fn server_outage_upper_bound(
    tau: f64,
    num_antennas: u32,
    alpha: f64,
) -> Result<f64, AnalysisError> {
    if tau == 0.0 {
        return Ok(0.0);
    }
    if !(0.0..=0.5).contains(&tau) {
        return Err(AnalysisError::TauOutOfRange { tau, limit: 0.5 });
    }
    let l = f64::from(num_antennas);
    let s = -tau.ln();
    let norm = (-2.0 * ln_gamma(l).expect("l >= 1")).exp();
    let numerator = 1.0 + 2.0 * alpha * l + l * (1.0 + alpha * l) * s;
    Ok(norm * tau.powf(l) * numerator / (l * l * (1.0 + alpha * l) * (1.0 + alpha * l)))
}

/// Convergence bound for a fleet charged by the server's beams.
///
/// The deviation term is delta_s W Cbar_sigma / (rho^(1/3) K T_cmp
/// P0^(1/3)); the residue is evaluated at the closed-form outage upper
/// bound (capped at 1), keeping the whole report closed-form. The report
/// carries the quadrature outage probability alongside the bound.
pub fn convergence_bound_server(
    cfg: &SystemConfig,
    devices: &[DeviceProfile],
    src: &ServerSource,
    loss: &LossMeta,
    quad: &QuadratureSpec,
) -> Result<BoundReport, AnalysisError> {
    check_common_preconditions(cfg, devices, loss)?;
    let tau = tau_parameter(src, cfg);
    let p_out = server_outage_probability(tau, cfg.num_antennas, cfg.uplink_pathloss_exp, quad)?;
    let p_bound = if tau <= 0.5 {
        server_outage_upper_bound(tau, cfg.num_antennas, cfg.uplink_pathloss_exp)?.min(1.0)
    } else {
        1.0
    };
    let k = devices.len() as f64;
    let descent_term = 2.0 * loss.initial_gap / (cfg.learning_rate * cfg.num_rounds as f64);
    let deviation_term = server_deviation_scale(cfg)
        * cfg.per_sample_flops
        * variance_cost_mean(devices)
        / (cfg.conversion_gain.cbrt() * k * cfg.compute_phase_s * src.power_w.cbrt());
    let residue = participation_residue(p_bound, devices.len(), loss.grad_bound);
    Ok(BoundReport {
        energy_axis: src.power_w,
        xi_or_tau: tau,
        outage_prob: p_out,
        outage_bound: Some(p_bound),
        descent_term,
        deviation_term,
        residue,
        total: descent_term + deviation_term + residue,
        regime: Regime::Server,
        deviation_mode: DeviationMode::ClosedForm,
    })
}

/// Least-squares slope of log(deviation + residue) against log(energy)
/// over a sweep of reports. Points with outage probability at or above
/// 1e-6 are dropped (their residue contaminates the power law); the
/// survivors must number at least 5 and span two decades.
pub fn scaling_exponent(reports: &[BoundReport]) -> Result<f64, AnalysisError> {
    let points: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.outage_prob < 1e-6)
        .map(|r| (r.energy_axis.ln(), (r.deviation_term + r.residue).ln()))
        .collect();
    let usable = points.len();
    if usable < 5 {
        return Err(AnalysisError::SweepTooNarrow { usable });
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.0), hi.max(p.0))
    });
    if hi - lo < 2.0 * std::f64::consts::LN_10 * (1.0 - 1e-9) {
        return Err(AnalysisError::SweepTooNarrow { usable });
    }
    let n = usable as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::tests::test_config;
    use crate::sysmodel::PowerControl;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn uniform_fleet(n: usize, sigma2: f64, c: f64) -> Vec<DeviceProfile> {
        vec![
            DeviceProfile {
                compute_coeff: c,
                grad_variance: sigma2,
                dataset_size: 1000,
            };
            n
        ]
    }

    fn default_loss() -> LossMeta {
        LossMeta {
            initial_gap: 5.0,
            smoothness: 1.0,
            grad_bound: 10.0,
        }
    }

    #[test]
    fn xi_tracks_its_definition() {
        let cfg = test_config();
        let src = BeaconSource {
            power_w: 2.0,
            density_per_m2: 1e-3,
        };
        let xi = xi_parameter(&src, &cfg);
        let ebar = beacon_harvest(&src, &cfg);
        let phi = tx_energy_unit_channel(cfg.comm_phase_s, &cfg);
        assert_relative_eq!(
            xi * ebar,
            cfg.cell_radius_m.powf(cfg.uplink_pathloss_exp) * phi,
            max_relative = 1e-12
        );
        let denser = BeaconSource {
            density_per_m2: 2e-3,
            ..src
        };
        assert_relative_eq!(
            xi_parameter(&denser, &cfg),
            xi / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn beacon_outage_special_case() {
        assert_abs_diff_eq!(
            beacon_outage_probability(1.0, 1, 2.0),
            (-1.0f64).exp(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn beacon_outage_reference_values() {
        assert_relative_eq!(
            beacon_outage_probability(0.5, 2, 3.8),
            0.020_640_124_845_219_582,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            beacon_outage_probability(10.0, 64, 3.8),
            4.053_156_912_072_12e-32,
            max_relative = 1e-7
        );
    }

    #[test]
    fn beacon_outage_limits_and_monotonicity() {
        assert_eq!(beacon_outage_probability(0.0, 4, 3.8), 0.0);
        assert_eq!(beacon_outage_probability(f64::INFINITY, 4, 3.8), 1.0);
        for l in [1u32, 2, 8] {
            let mut prev = 0.0;
            for i in 0..60 {
                let xi = 10f64.powf(-3.0 + 0.1 * i as f64);
                let p = beacon_outage_probability(xi, l, 3.8);
                assert!(p >= prev, "outage fell from {prev} to {p} at xi={xi}");
                assert!((0.0..=1.0).contains(&p));
                prev = p;
            }
        }
    }

    #[test]
    fn asymptote_constants_and_convergence() {
        assert_relative_eq!(
            beacon_outage_asymptote(1.0, 1, 2.0, TailRegime::SmallXi),
            0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            1.0 - beacon_outage_asymptote(1.0, 1, 2.0, TailRegime::LargeXi),
            1.0,
            max_relative = 1e-12
        );
        for l in [1u32, 2] {
            for alpha in [2.0, 3.8] {
                let xi = 1e-3;
                let ratio = beacon_outage_probability(xi, l, alpha)
                    / beacon_outage_asymptote(xi, l, alpha, TailRegime::SmallXi);
                assert!((ratio - 1.0).abs() < 0.05, "small-xi ratio {ratio}");
                let xi = 1e3;
                let ratio = (1.0 - beacon_outage_probability(xi, l, alpha))
                    / (1.0 - beacon_outage_asymptote(xi, l, alpha, TailRegime::LargeXi));
                assert!((ratio - 1.0).abs() < 0.05, "large-xi ratio {ratio}");
            }
        }
    }

    #[test]
    fn reciprocal_active_known_values() {
        assert_relative_eq!(
            expected_reciprocal_active(0.5, 2).unwrap(),
            5.0 / 6.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            expected_reciprocal_active(0.3, 5).unwrap(),
            0.321_833_555_539_962_1,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            expected_reciprocal_active(0.0, 7).unwrap(),
            1.0 / 7.0,
            max_relative = 1e-15
        );
        assert_eq!(expected_reciprocal_active(0.9, 1).unwrap(), 1.0);
        assert_eq!(
            expected_reciprocal_active(1.0, 3),
            Err(AnalysisError::FullOutage)
        );
        assert_eq!(expected_reciprocal_active(1.0 - 1e-14, 9).unwrap(), 1.0);
    }

    /// Enumerating the truncated binomial directly reproduces the closed
    /// form for every K up to 12.
    #[test]
    fn reciprocal_active_matches_enumeration() {
        fn binomial(n: usize, k: usize) -> f64 {
            let mut acc = 1.0;
            for i in 0..k {
                acc = acc * (n - i) as f64 / (i + 1) as f64;
            }
            acc
        }
        for k in 1..=12usize {
            for tenth in 1..=9 {
                let p = tenth as f64 / 10.0;
                let q = 1.0 - p;
                let mut norm = 0.0;
                let mut mean = 0.0;
                for m in 1..=k {
                    let pm = binomial(k, m) * q.powi(m as i32) * p.powi((k - m) as i32);
                    norm += pm;
                    mean += pm / m as f64;
                }
                assert_relative_eq!(
                    expected_reciprocal_active(p, k).unwrap(),
                    mean / norm,
                    max_relative = 1e-12
                );
            }
        }
    }

    /// The residue equals the assembly through the conditional reciprocal,
    /// term for term.
    #[test]
    fn residue_matches_reciprocal_assembly() {
        for k in [2usize, 3, 8, 30] {
            for p in [0.0, 0.05, 0.3, 0.7, 0.95] {
                let phi = 10.0;
                let direct = participation_residue(p, k, phi);
                let recip = expected_reciprocal_active(p, k).unwrap();
                let pk = p.powi(k as i32);
                let assembled =
                    2.0 * ((1.0 - pk) * (recip - 1.0 / k as f64) + p * p) * phi;
                assert_abs_diff_eq!(direct, assembled, epsilon = 1e-10 * phi);
            }
        }
    }

    #[test]
    fn local_deviation_cube_root_law() {
        let cfg = test_config();
        let dev = DeviceProfile {
            compute_coeff: 1e-18,
            grad_variance: 2.0,
            dataset_size: 1000,
        };
        let b1 = local_deviation_bound(&dev, 1e-3, &cfg);
        let b8 = local_deviation_bound(&dev, 8e-3, &cfg);
        assert_relative_eq!(b1, 2.0 * b8, max_relative = 1e-12);
        let silent = DeviceProfile {
            grad_variance: 0.0,
            ..dev
        };
        assert_eq!(local_deviation_bound(&silent, 1e-3, &cfg), 0.0);
    }

    #[test]
    fn global_deviation_degenerate_and_hand_assembled() {
        let terms = vec![0.5; 4];
        let b = global_deviation_bound(&terms, 0.0, 4, 10.0).unwrap();
        assert_relative_eq!(b, 2.0 * 0.5 / 4.0, max_relative = 1e-14);
        // K=3, p=0.3, terms {1,2,3}, Phi=10, assembled by hand:
        // noise = (2/9)*6; penalty = 2*((1-0.027)*(E-1/3) + 0.09)*10.
        let e = expected_reciprocal_active(0.3, 3).unwrap();
        let by_hand = 2.0 / 9.0 * 6.0 + 2.0 * ((1.0 - 0.027) * (e - 1.0 / 3.0) + 0.09) * 10.0;
        let got = global_deviation_bound(&[1.0, 2.0, 3.0], 0.3, 3, 10.0).unwrap();
        assert_relative_eq!(got, by_hand, max_relative = 1e-12);
        assert_eq!(
            global_deviation_bound(&[1.0], 0.3, 3, 10.0),
            Err(AnalysisError::DeviceCountMismatch {
                expected: 3,
                found: 1
            })
        );
    }

    #[test]
    fn beacon_bound_assembles_from_parts() {
        let cfg = test_config();
        let devices = uniform_fleet(30, 1.5, 2e-18);
        let src = BeaconSource {
            power_w: 1.0,
            density_per_m2: 4e-2,
        };
        let loss = default_loss();
        let report = convergence_bound_beacon(&cfg, &devices, &src, &loss).unwrap();
        assert_relative_eq!(
            report.total,
            report.descent_term + report.deviation_term + report.residue,
            max_relative = 1e-15
        );
        let ebar = beacon_harvest(&src, &cfg);
        let per_device: Vec<f64> = devices
            .iter()
            .map(|d| (1.0 - report.outage_prob) * local_deviation_bound(d, ebar, &cfg))
            .collect();
        let assembled = global_deviation_bound(
            &per_device,
            report.outage_prob,
            devices.len(),
            loss.grad_bound,
        )
        .unwrap();
        assert_relative_eq!(
            report.deviation_term + report.residue,
            assembled,
            max_relative = 1e-10
        );
    }

    #[test]
    fn beacon_bound_scaling_and_zero_outage_residue() {
        let mut cfg = test_config();
        cfg.num_antennas = 64;
        let devices = uniform_fleet(10, 1.0, 1e-18);
        let loss = default_loss();
        // Dense enough that xi^L underflows, making the outage probability
        // exactly zero.
        let src = BeaconSource {
            power_w: 1.0,
            density_per_m2: 1e7,
        };
        let r1 = convergence_bound_beacon(&cfg, &devices, &src, &loss).unwrap();
        assert_eq!(r1.outage_prob, 0.0);
        assert_eq!(r1.residue, 0.0);
        let denser = BeaconSource {
            density_per_m2: 8e7,
            ..src
        };
        let r8 = convergence_bound_beacon(&cfg, &devices, &denser, &loss).unwrap();
        assert_relative_eq!(
            r8.deviation_term,
            r1.deviation_term / 2.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn bound_preconditions_are_typed_errors() {
        let cfg = test_config();
        let devices = uniform_fleet(5, 1.0, 1e-18);
        let src = BeaconSource {
            power_w: 1.0,
            density_per_m2: 1e-2,
        };
        let steep = LossMeta {
            smoothness: 100.0,
            ..default_loss()
        };
        assert!(matches!(
            convergence_bound_beacon(&cfg, &devices, &src, &steep),
            Err(AnalysisError::StepSizeTooLarge { .. })
        ));
        assert!(matches!(
            convergence_bound_beacon(&cfg, &devices[..1], &src, &default_loss()),
            Err(AnalysisError::TooFewDevices { found: 1 })
        ));
        let mut idle = cfg;
        idle.learning_rate = 0.0;
        assert!(matches!(
            convergence_bound_beacon(&idle, &devices, &src, &default_loss()),
            Err(AnalysisError::StepSizeNotPositive { .. })
        ));
    }

    #[test]
    fn server_outage_reference_values() {
        let quad = QuadratureSpec::default();
        assert_relative_eq!(
            server_outage_probability(1e-2, 1, 3.8, &quad).unwrap(),
            0.010_958_892_131_702_417,
            max_relative = 1e-8
        );
        // The default absolute tolerance is loose relative to this tiny
        // integral, so tighten it for the comparison.
        let tight = QuadratureSpec {
            abs_tol: 1e-16,
            rel_tol: 1e-12,
            ..QuadratureSpec::default()
        };
        assert_relative_eq!(
            server_outage_probability(1e-3, 2, 3.8, &tight).unwrap(),
            3.894_805_646_574_752e-7,
            max_relative = 1e-8
        );
        assert_eq!(server_outage_probability(0.0, 1, 3.8, &quad).unwrap(), 0.0);
    }

    #[test]
    fn server_leading_term_special_case() {
        let tau = (-1.0f64).exp();
        assert_relative_eq!(
            server_outage_leading_term(tau, 1, 2.0).unwrap(),
            0.122_626_480_390_480_77,
            max_relative = 1e-12
        );
        assert!(matches!(
            server_outage_leading_term(1.0, 1, 2.0),
            Err(AnalysisError::TauOutOfRange { .. })
        ));
        assert_eq!(server_outage_leading_term(0.0, 1, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn server_bound_dominates_quadrature() {
        let quad = QuadratureSpec::default();
        for l in [1u32, 2] {
            for alpha in [2.0, 3.8] {
                for tau in [1e-4, 1e-3, 1e-2] {
                    let exact = server_outage_probability(tau, l, alpha, &quad).unwrap();
                    let bound = server_outage_upper_bound(tau, l, alpha).unwrap();
                    assert!(
                        exact <= bound,
                        "exact {exact} > bound {bound} at tau={tau} L={l} alpha={alpha}"
                    );
                }
            }
        }
        assert!(matches!(
            server_outage_upper_bound(0.6, 1, 2.0),
            Err(AnalysisError::TauOutOfRange { .. })
        ));
    }

    #[test]
    fn server_leading_term_can_undershoot_exact_value() {
        let quad = QuadratureSpec::default();
        let exact = server_outage_probability(1e-2, 1, 2.0, &quad).unwrap();
        let leading = server_outage_leading_term(1e-2, 1, 2.0).unwrap();
        assert!(leading < exact);
    }

    #[test]
    fn server_bound_approaches_leading_term() {
        let tau = 1e-12;
        for l in [1u32, 3] {
            let full = server_outage_upper_bound(tau, l, 3.8).unwrap();
            let lead = server_outage_leading_term(tau, l, 3.8).unwrap();
            let ratio = full / lead;
            assert!(ratio > 1.0 && ratio < 1.1, "ratio {ratio}");
        }
    }

    #[test]
    fn server_bound_decreases_in_antenna_count_for_small_tau() {
        for tau in [1e-3, 1e-2, 0.09] {
            let mut prev = f64::INFINITY;
            for l in 1..=6u32 {
                let b = server_outage_upper_bound(tau, l, 3.8).unwrap();
                assert!(b < prev, "bound rose at L={l}, tau={tau}");
                prev = b;
            }
        }
    }

    #[test]
    fn server_report_carries_both_outage_numbers() {
        let mut cfg = test_config();
        cfg.cell_radius_m = 2.0;
        cfg.num_antennas = 2;
        let devices = uniform_fleet(10, 1.0, 1e-18);
        let src = ServerSource {
            power_w: 1.0,
            control: PowerControl::Optimized,
        };
        let quad = QuadratureSpec::default();
        let report =
            convergence_bound_server(&cfg, &devices, &src, &default_loss(), &quad).unwrap();
        assert_eq!(report.regime, Regime::Server);
        let bound = report.outage_bound.unwrap();
        assert!(report.outage_prob <= bound);
        let brighter = ServerSource {
            power_w: 8.0,
            ..src
        };
        let r8 =
            convergence_bound_server(&cfg, &devices, &brighter, &default_loss(), &quad).unwrap();
        assert_relative_eq!(
            r8.deviation_term,
            report.deviation_term / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn server_deviation_scale_reference_value() {
        let mut cfg = test_config();
        cfg.num_antennas = 1;
        cfg.uplink_pathloss_exp = 3.0;
        cfg.cell_radius_m = 1.0;
        assert_relative_eq!(
            server_deviation_scale(&cfg),
            1.540_157_220_384_769_3,
            max_relative = 1e-12
        );
    }

    #[test]
    fn beacon_deviation_scale_reference_value() {
        let mut cfg = test_config();
        cfg.uplink_pathloss_exp = 3.0;
        cfg.wpt_pathloss_exp = 4.0;
        cfg.wpt_min_dist_m = 1.0;
        assert_relative_eq!(
            beacon_deviation_scale(&cfg),
            1.483_714_255_026_982,
            max_relative = 1e-12
        );
    }

    /// With matched transmit-side energy per round and a small cell, the
    /// two regimes' deviation terms land within an order of magnitude.
    #[test]
    fn regimes_are_comparable_in_small_cells() {
        let mut cfg = test_config();
        cfg.cell_radius_m = 1.0;
        cfg.num_antennas = 1;
        cfg.uplink_pathloss_exp = 3.0;
        cfg.round_s = 1.0;
        cfg.compute_phase_s = 0.5;
        cfg.comm_phase_s = 0.5;
        let devices = uniform_fleet(10, 1.0, 1e-18);
        let loss = default_loss();
        let quad = QuadratureSpec::default();
        let p0 = 2.0;
        let server = ServerSource {
            power_w: p0,
            control: PowerControl::Optimized,
        };
        let lambda = p0 * cfg.compute_phase_s;
        let beacon = BeaconSource {
            power_w: 1.0,
            density_per_m2: lambda / cfg.round_s,
        };
        let rb = convergence_bound_beacon(&cfg, &devices, &beacon, &loss).unwrap();
        let rs = convergence_bound_server(&cfg, &devices, &server, &loss, &quad).unwrap();
        let ratio = rb.deviation_term / rs.deviation_term;
        assert!(
            (0.1..10.0).contains(&ratio),
            "deviation terms diverged: ratio {ratio}"
        );
    }

    #[test]
    fn totals_monotone_in_provisioned_energy() {
        let mut cfg = test_config();
        cfg.num_antennas = 4;
        let devices = uniform_fleet(30, 1.0, 1e-18);
        let loss = default_loss();
        let mut prev = f64::INFINITY;
        // Densities chosen to sweep the outage probability from ~0.6 down
        // through effectively zero.
        for i in 0..40 {
            let density = 10f64.powf(0.3 + 0.15 * i as f64);
            let src = BeaconSource {
                power_w: 1.0,
                density_per_m2: density,
            };
            let report = convergence_bound_beacon(&cfg, &devices, &src, &loss).unwrap();
            assert!(report.outage_prob < 0.6);
            assert!(
                report.total <= prev * (1.0 + 1e-12),
                "beacon total rose at density {density}"
            );
            prev = report.total;
        }
        let mut cfg = test_config();
        cfg.cell_radius_m = 2.0;
        cfg.num_antennas = 2;
        let quad = QuadratureSpec::default();
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let p0 = 10f64.powf(-0.7 + 0.1 * i as f64);
            let src = ServerSource {
                power_w: p0,
                control: PowerControl::Optimized,
            };
            let report =
                convergence_bound_server(&cfg, &devices, &src, &loss, &quad).unwrap();
            assert!(
                report.total <= prev * (1.0 + 1e-12),
                "server total rose at P0 {p0}"
            );
            prev = report.total;
        }
    }

    #[test]
    fn synthetic_power_law_recovers_slope() {
        let reports: Vec<BoundReport> = (0..12)
            .map(|i| {
                let lambda = 10f64.powf(-2.0 + 0.4 * i as f64);
                BoundReport {
                    energy_axis: lambda,
                    xi_or_tau: 0.0,
                    outage_prob: 0.0,
                    outage_bound: None,
                    descent_term: 1.0,
                    deviation_term: 3.5 * lambda.cbrt().recip(),
                    residue: 0.0,
                    total: 0.0,
                    regime: Regime::Beacon,
                    deviation_mode: DeviationMode::ClosedForm,
                }
            })
            .collect();
        let slope = scaling_exponent(&reports).unwrap();
        assert_abs_diff_eq!(slope, -1.0 / 3.0, epsilon = 1e-9);
        let doubled: Vec<BoundReport> = reports
            .iter()
            .map(|r| BoundReport {
                deviation_term: 2.0 * r.deviation_term,
                ..*r
            })
            .collect();
        assert_abs_diff_eq!(
            scaling_exponent(&doubled).unwrap(),
            slope,
            epsilon = 1e-12
        );
    }

    #[test]
    fn scaling_fit_rejects_narrow_or_contaminated_sweeps() {
        let make = |lambda: f64, p: f64| BoundReport {
            energy_axis: lambda,
            xi_or_tau: 0.0,
            outage_prob: p,
            outage_bound: None,
            descent_term: 0.0,
            deviation_term: lambda.cbrt().recip(),
            residue: 0.0,
            total: 0.0,
            regime: Regime::Beacon,
            deviation_mode: DeviationMode::ClosedForm,
        };
        let narrow: Vec<BoundReport> = (0..8).map(|i| make(1.0 + i as f64, 0.0)).collect();
        assert!(matches!(
            scaling_exponent(&narrow),
            Err(AnalysisError::SweepTooNarrow { .. })
        ));
        let contaminated: Vec<BoundReport> =
            (0..8).map(|i| make(10f64.powf(i as f64), 1e-3)).collect();
        assert!(matches!(
            scaling_exponent(&contaminated),
            Err(AnalysisError::SweepTooNarrow { usable: 0 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn outage_probability_is_a_probability(
            log_xi in -4.0f64..4.0,
            l in 1u32..32,
            alpha in 2.1f64..5.0,
        ) {
            let p = beacon_outage_probability(10f64.powf(log_xi), l, alpha);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn reciprocal_active_stays_in_range(
            p in 0.0f64..0.999,
            k in 1usize..40,
        ) {
            let e = expected_reciprocal_active(p, k).unwrap();
            prop_assert!(e >= 1.0 / k as f64 - 1e-15);
            prop_assert!(e <= 1.0 + 1e-15);
        }

        #[test]
        fn residue_nonnegative_and_zero_at_zero(
            p in 0.0f64..=1.0,
            k in 2usize..40,
            phi in 0.0f64..100.0,
        ) {
            let r = participation_residue(p, k, phi);
            prop_assert!(r >= 0.0);
            prop_assert!(participation_residue(0.0, k, phi) == 0.0);
        }
    }
}
