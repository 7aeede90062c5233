//! Monte Carlo oracles: direct sampling of the outage events and the
//! conditional batch-deviation mean, used to validate the closed forms.

use crate::policy::{compute_energy_split, optimal_local_computation};
use crate::sysmodel::{
    beacon_harvested_energy, sample_channel, server_harvested_energy, DeviceProfile, SystemConfig,
    WptSource,
};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Estimate and binomial standard error from `hits` successes in `draws`.
fn binomial_estimate(hits: usize, draws: usize) -> (f64, f64) {
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

/// Samples the beacon outage event in its dimensionless form.
///
/// With distance r = R sqrt(u) and an L-branch gain h, outage occurs when
/// h <= u^(alpha/2) xi. Returns the empirical probability and its binomial
/// standard error.
pub fn mc_beacon_outage<R: Rng + ?Sized>(
    xi: f64,
    num_antennas: u32,
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(draws > 0);
    let gamma = Gamma::new(f64::from(num_antennas), 1.0).expect("positive antenna count");
    let mut hits = 0usize;
    for _ in 0..draws {
        let u: f64 = rng.gen();
        let gain = gamma.sample(rng);
        if gain <= u.powf(alpha / 2.0) * xi {
            hits += 1;
        }
    }
    binomial_estimate(hits, draws)
}

/// Samples the server outage event in its dimensionless form.
///
/// The harvest and the upload share the path loss, so outage occurs when
/// the product of the transfer and uplink gains falls below u^alpha tau.
pub fn mc_server_outage<R: Rng + ?Sized>(
    tau: f64,
    num_antennas: u32,
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(draws > 0);
    let gamma = Gamma::new(f64::from(num_antennas), 1.0).expect("positive antenna count");
    let mut hits = 0usize;
    for _ in 0..draws {
        let u: f64 = rng.gen();
        let transfer = gamma.sample(rng);
        let uplink = gamma.sample(rng);
        if transfer * uplink <= u.powf(alpha) * tau {
            hits += 1;
        }
    }
    binomial_estimate(hits, draws)
}

/// Samples the outage probability through the full harvest/split pipeline.
///
/// Each draw samples a channel, computes the harvested energy for `src`
/// (the deterministic field harvest, or a full per-device-budget beam), and
/// counts the draw as an outage when the energy split refuses to activate
/// the device.
pub fn mc_outage<R: Rng + ?Sized>(
    src: &WptSource,
    cfg: &SystemConfig,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(draws > 0);
    let with_wpt = matches!(src, WptSource::Server(_));
    let beacon_energy = match src {
        WptSource::Beacon(b) => beacon_harvested_energy(b, cfg),
        WptSource::Server(_) => 0.0,
    };
    let mut hits = 0usize;
    for _ in 0..draws {
        let draw = sample_channel(rng, cfg, with_wpt);
        let harvested = match src {
            WptSource::Beacon(_) => beacon_energy,
            WptSource::Server(server) => server_harvested_energy(&draw, server.power_w, cfg)
                .expect("server-mode draws carry a transfer gain"),
        };
        if !compute_energy_split(harvested, &draw, cfg).active {
            hits += 1;
        }
    }
    binomial_estimate(hits, draws)
}

/// Samples E[sigma^2 / b* | active] for a device harvesting a fixed
/// `harvested_j` joules per round under the given config.
///
/// Returns the conditional mean over active draws and its standard error.
/// When no draw activates, the estimate is NaN with infinite error.
pub fn mc_conditional_deviation<R: Rng + ?Sized>(
    dev: &DeviceProfile,
    harvested_j: f64,
    cfg: &SystemConfig,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(draws > 0);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut active = 0usize;
    for _ in 0..draws {
        let draw = sample_channel(rng, cfg, false);
        let split = compute_energy_split(harvested_j, &draw, cfg);
        if split.active {
            let plan = optimal_local_computation(split.compute_energy_j, dev, cfg);
            let x = dev.grad_variance / plan.batch_size;
            sum += x;
            sum2 += x * x;
            active += 1;
        }
    }
    if active == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let n = active as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}
