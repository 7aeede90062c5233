//! Per-round decision rules: how a device spends its energy and how the
//! server schedules and shares its transfer budget.
//!
//! Three layers. [`compute_energy_split`] carves the harvested joules into
//! the fixed upload cost and a computation remainder, marking the device
//! inactive when nothing is left over. [`optimal_local_computation`] turns
//! the remainder into a batch size and clock speed that exhaust both the
//! energy and the phase deadline. For server-powered setups,
//! [`schedule_server_wpt`] drops devices whose channels cannot close the
//! loop under the per-device budget, and [`allocate_server_power`] shares
//! the pooled budget among the survivors to minimize the aggregate
//! stochastic-gradient deviation.

use crate::sysmodel::{
    required_comm_energy, tx_energy_unit_channel, ChannelDraw, DeviceProfile, ServerSource,
    SystemConfig,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(
        "power budget {budget_w} W cannot cover the average communication floor {varsigma_w} W"
    )]
    InfeasibleBudget { varsigma_w: f64, budget_w: f64 },
    #[error("power allocation needs a nonempty active set")]
    EmptyActiveSet,
}

/// A device's plan for the computation phase.
///
/// `batch_size` is kept continuous here; the simulator floors it to an
/// integer only when it actually samples a batch, and records both values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputePlan {
    /// Samples processed per round (relaxed-continuous).
    pub batch_size: f64,
    /// Clock speed in FLOP/s.
    pub compute_speed_flops: f64,
    /// Energy the plan consumes, joules.
    pub compute_energy_j: f64,
    /// Wall time the plan occupies, seconds.
    pub compute_time_s: f64,
}

impl ComputePlan {
    pub fn zero() -> Self {
        ComputePlan {
            batch_size: 0.0,
            compute_speed_flops: 0.0,
            compute_energy_j: 0.0,
            compute_time_s: 0.0,
        }
    }
}

/// Largest batch a device can process with `compute_energy_j` joules inside
/// the computation phase.
///
/// Batch size and clock couple through time (b W / f <= T) and energy
/// (C b W f^2 <= E); the batch is maximized when both bind, giving
/// b = (E T^2 / C)^(1/3) / W and f = (E / (C T))^(1/3). The batch grows
/// with the cube root of energy, so extra harvest buys progressively less.
pub fn optimal_local_computation(
    compute_energy_j: f64,
    dev: &DeviceProfile,
    cfg: &SystemConfig,
) -> ComputePlan {
    debug_assert!(compute_energy_j >= 0.0);
    if compute_energy_j <= 0.0 {
        return ComputePlan::zero();
    }
    let t = cfg.compute_phase_s;
    let c = dev.compute_coeff;
    let batch_size = (compute_energy_j * t * t / c).cbrt() / cfg.per_sample_flops;
    let compute_speed_flops = (compute_energy_j / (c * t)).cbrt();
    ComputePlan {
        batch_size,
        compute_speed_flops,
        compute_energy_j,
        compute_time_s: t,
    }
}

/// How one round's harvest is spent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySplit {
    /// Joules reserved for the upload.
    pub comm_energy_j: f64,
    /// Joules left for local computation.
    pub compute_energy_j: f64,
    /// Whether the device participates this round.
    pub active: bool,
}

impl EnergySplit {
    pub fn inactive() -> Self {
        EnergySplit {
            comm_energy_j: 0.0,
            compute_energy_j: 0.0,
            active: false,
        }
    }
}

/// Split the harvest into upload cost and computation remainder.
///
/// The upload cost is fixed by the channel; participation requires a
/// strictly positive remainder, so a harvest that only just matches the
/// upload cost still counts as an outage (the device would have nothing to
/// send).
pub fn compute_energy_split(
    harvested_j: f64,
    draw: &ChannelDraw,
    cfg: &SystemConfig,
) -> EnergySplit {
    debug_assert!(harvested_j >= 0.0);
    let comm_energy_j = required_comm_energy(draw, cfg);
    if harvested_j > comm_energy_j {
        let mut compute_energy_j = harvested_j - comm_energy_j;
        // The subtraction can round up by an ulp; shave until the parts
        // never sum above the harvest.
        while comm_energy_j + compute_energy_j > harvested_j && compute_energy_j > 0.0 {
            compute_energy_j = f64::from_bits(compute_energy_j.to_bits() - 1);
        }
        EnergySplit {
            comm_energy_j,
            compute_energy_j,
            active: true,
        }
    } else {
        EnergySplit::inactive()
    }
}

/// Beam power at which the harvested energy exactly covers the upload cost:
/// r^(2alpha) phi / (rho g_wpt g_up T_cmp). The path loss enters twice,
/// once on the way down and once on the way back up.
pub fn comm_floor_power_w(draw: &ChannelDraw, cfg: &SystemConfig) -> f64 {
    let phi = tx_energy_unit_channel(cfg.comm_phase_s, cfg);
    let g_wpt = draw
        .wpt_gain
        .expect("server power control needs a transfer gain");
    let gains = cfg.conversion_gain * g_wpt * draw.uplink_gain * cfg.compute_phase_s;
    if gains <= 0.0 {
        return f64::INFINITY;
    }
    draw.distance_m.powf(2.0 * cfg.uplink_pathloss_exp) * phi / gains
}

/// Devices the server keeps when each would be beamed the full per-device
/// budget: those whose round-trip channel can cover the upload with some
/// energy to spare. The comparison is cross-multiplied so that zero gains
/// and tiny distances need no special casing.
pub fn schedule_server_wpt(
    draws: &[ChannelDraw],
    src: &ServerSource,
    cfg: &SystemConfig,
) -> Vec<usize> {
    let phi = tx_energy_unit_channel(cfg.comm_phase_s, cfg);
    let budget = cfg.conversion_gain * src.power_w * cfg.compute_phase_s;
    draws
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let g_wpt = d
                .wpt_gain
                .expect("server power control needs a transfer gain");
            budget * g_wpt * d.uplink_gain
                > d.distance_m.powf(2.0 * cfg.uplink_pathloss_exp) * phi
        })
        .map(|(i, _)| i)
        .collect()
}

/// The server's division of its pooled budget among the active devices.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    /// Devices that receive power, in input order.
    pub device_ids: Vec<usize>,
    /// Beam power per device, parallel to `device_ids`.
    pub powers_w: Vec<f64>,
    /// Mean allocation weight across the active set.
    pub theta: f64,
    /// Mean communication floor across the active set, watts.
    pub varsigma_w: f64,
}

impl AllocationPlan {
    pub fn empty() -> Self {
        AllocationPlan {
            device_ids: Vec::new(),
            powers_w: Vec::new(),
            theta: 0.0,
            varsigma_w: 0.0,
        }
    }
}

fn allocation_weight(draw: &ChannelDraw, dev: &DeviceProfile, cfg: &SystemConfig) -> f64 {
    let g_wpt = draw
        .wpt_gain
        .expect("server power control needs a transfer gain");
    draw.distance_m.powf(cfg.uplink_pathloss_exp / 4.0) * dev.grad_variance.powf(0.75)
        * dev.compute_coeff.powf(0.25)
        / g_wpt.powf(0.25)
}

/// Share the pooled budget `M * p0_w` across the active set.
///
/// Each device first gets its communication floor; the excess is then split
/// in proportion to weights that trade off gradient variance, processor
/// cost, and channel quality, which is the KKT point of minimizing the
/// aggregate deviation. Fails when the average floor already exceeds the
/// per-device budget; [`allocate_with_fallback`] handles that by shedding
/// the most expensive device. Active sets produced by
/// [`schedule_server_wpt`] keep every floor strictly below `p0_w`, so for
/// them the allocation always succeeds.
pub fn allocate_server_power(
    active: &[(usize, ChannelDraw, DeviceProfile)],
    p0_w: f64,
    cfg: &SystemConfig,
) -> Result<AllocationPlan, PolicyError> {
    if active.is_empty() {
        return Err(PolicyError::EmptyActiveSet);
    }
    let device_ids: Vec<usize> = active.iter().map(|(id, _, _)| *id).collect();
    if active.len() == 1 {
        let floor = comm_floor_power_w(&active[0].1, cfg);
        if p0_w <= floor {
            return Err(PolicyError::InfeasibleBudget {
                varsigma_w: floor,
                budget_w: p0_w,
            });
        }
        return Ok(AllocationPlan {
            device_ids,
            powers_w: vec![p0_w],
            theta: 1.0,
            varsigma_w: floor,
        });
    }
    let m = active.len() as f64;
    let floors: Vec<f64> = active
        .iter()
        .map(|(_, draw, _)| comm_floor_power_w(draw, cfg))
        .collect();
    let weights: Vec<f64> = active
        .iter()
        .map(|(_, draw, dev)| allocation_weight(draw, dev, cfg))
        .collect();
    let varsigma_w = floors.iter().sum::<f64>() / m;
    let theta = weights.iter().sum::<f64>() / m;
    if !(p0_w > varsigma_w) {
        return Err(PolicyError::InfeasibleBudget {
            varsigma_w,
            budget_w: p0_w,
        });
    }
    let excess = p0_w - varsigma_w;
    let powers_w: Vec<f64> = if theta > 0.0 {
        floors
            .iter()
            .zip(&weights)
            .map(|(&fl, &w)| fl + w / theta * excess)
            .collect()
    } else {
        floors.iter().map(|&fl| fl + excess).collect()
    };
    Ok(AllocationPlan {
        device_ids,
        powers_w,
        theta,
        varsigma_w,
    })
}

/// Allocate, shedding the device with the largest communication floor and
/// retrying whenever the budget cannot cover the average floor. Returns the
/// empty plan if no subset is affordable.
pub fn allocate_with_fallback(
    active: &[(usize, ChannelDraw, DeviceProfile)],
    p0_w: f64,
    cfg: &SystemConfig,
) -> AllocationPlan {
    let mut remaining: Vec<(usize, ChannelDraw, DeviceProfile)> = active.to_vec();
    while !remaining.is_empty() {
        match allocate_server_power(&remaining, p0_w, cfg) {
            Ok(plan) => return plan,
            Err(PolicyError::InfeasibleBudget { .. }) => {
                let worst = remaining
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        comm_floor_power_w(&a.1, cfg).total_cmp(&comm_floor_power_w(&b.1, cfg))
                    })
                    .map(|(i, _)| i)
                    .expect("nonempty by loop condition");
                remaining.remove(worst);
            }
            Err(PolicyError::EmptyActiveSet) => break,
        }
    }
    AllocationPlan::empty()
}

/// Aggregate-deviation objective the allocation minimizes, up to factors
/// shared by every device: sum of sigma^2 C^(1/3) (r^alpha / g_wpt)^(1/3)
/// over (power - floor)^(1/3). Used by tests to compare the closed form
/// against numeric minimizers.
pub fn allocation_objective(
    active: &[(usize, ChannelDraw, DeviceProfile)],
    powers_w: &[f64],
    cfg: &SystemConfig,
) -> f64 {
    active
        .iter()
        .zip(powers_w)
        .map(|((_, draw, dev), &p)| {
            let g_wpt = draw.wpt_gain.expect("server power control needs a transfer gain");
            let slack = p - comm_floor_power_w(draw, cfg);
            let coeff = dev.grad_variance
                * dev.compute_coeff.cbrt()
                * (draw.distance_m.powf(cfg.uplink_pathloss_exp) / g_wpt).cbrt();
            if coeff == 0.0 {
                0.0
            } else {
                coeff / slack.cbrt()
            }
        })
        .sum()
}
