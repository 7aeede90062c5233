//! Federated training simulator: per-round harvesting, energy splitting,
//! batch optimization, gradient aggregation, and the end-to-end training
//! loop, plus the Monte Carlo oracles that validate the analysis module.
//!
//! Every random draw comes from a counter-addressed substream keyed by
//! purpose, round, and device, so results are independent of evaluation
//! order and bit-reproducible under any parallel schedule.

pub mod oracles;
pub mod task;

pub use task::{
    build_task, dataset_loss, default_probes, estimate_constants, global_gradient,
    local_gradient, max_secant_slope, smoothness_upper_bound, survey, test_accuracy,
    ConstantEstimates, DeviceStat, Survey, SyntheticTask, TaskError,
};

use crate::policy::{
    allocate_with_fallback, compute_energy_split, optimal_local_computation, schedule_server_wpt,
    ComputePlan,
};
use crate::rng::{self, StreamTree};
use crate::sysmodel::{
    beacon_harvested_energy, sample_channel, server_harvested_energy, ChannelDraw, DeviceProfile,
    SystemConfig, WptSource,
};
use thiserror::Error;

/// Errors raised by the training loop.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    /// The configured step size exceeds the inverse of the estimated
    /// smoothness constant, so the descent argument does not apply.
    #[error("step size {eta} exceeds the stable limit {limit}")]
    StepSizeTooLarge { eta: f64, limit: f64 },
}

/// What happened to one device in one round.
#[derive(Debug, Clone)]
pub struct DeviceRound {
    pub channel: ChannelDraw,
    /// Energy harvested this round, joules.
    pub harvested_j: f64,
    /// Beam power assigned by the server, watts; zero under beacon charging
    /// or when the device was not scheduled.
    pub allocated_power_w: f64,
    /// Whether the device contributed a gradient to the aggregate. Requires
    /// both surviving the energy split and affording a batch of at least
    /// one sample.
    pub active: bool,
    /// Batch/clock plan for the computation phase; zeroed when the energy
    /// split already failed.
    pub plan: ComputePlan,
    /// Integer mini-batch size actually processed.
    pub batch_used: usize,
    /// Joules reserved for the upload.
    pub comm_energy_j: f64,
}

/// One aggregation round of the simulated system.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round_index: usize,
    pub devices: Vec<DeviceRound>,
    /// Number of devices whose gradients were aggregated.
    pub active_count: usize,
    /// Train loss at the round-start model.
    pub loss: f64,
    /// Squared norm of the train gradient at the round-start model.
    pub grad_norm2: f64,
    /// Squared distance between the aggregated update and the train
    /// gradient; equals `grad_norm2` on idle rounds, where the aggregate
    /// is zero.
    pub gdev_sample: f64,
    /// False only on idle rounds, which leave the model untouched.
    pub update_applied: bool,
    /// Whether every device could afford its whole shard this round.
    pub all_saturated: bool,
}

/// Outcome of a full training run.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    /// Mean over rounds of the squared train gradient norm at round start.
    pub avg_grad_norm2: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_model: Vec<f64>,
    pub test_accuracy: f64,
    /// Largest gradient secant slope seen across probes and the trajectory.
    pub mu_hat: f64,
    /// Closed-form smoothness bound from the feature moments.
    pub mu_cap: f64,
    /// Gradient second-moment bound from probes and the trajectory.
    pub phi_hat: f64,
    /// Per-device gradient variance maxima across probes and the trajectory.
    pub sigma2_hat: Vec<f64>,
    /// Whether every round saturated every device's batch; when true the
    /// run coincides with full-batch distributed gradient descent.
    pub all_rounds_saturated: bool,
}

/// Reference trajectory of deterministic full-batch gradient descent.
#[derive(Debug, Clone)]
pub struct GdTrace {
    pub model: Vec<f64>,
    pub grad_norm2_series: Vec<f64>,
    pub loss_series: Vec<f64>,
}

/// Runs one round: channels, harvest, energy split, batch plan, local
/// gradients, aggregation, and the model update. Returns the record and the
/// round-start survey so the caller can fold trajectory statistics without
/// a second dataset pass.
///
/// Streams are addressed by (purpose, round, device). Saturated devices
/// process their whole shard in storage order and consume no batch
/// randomness, so runs that saturate everywhere are bit-identical across
/// harvest levels. A plan whose batch floors to zero leaves the device out
/// of the aggregate; a round with no active devices applies no update.
pub fn simulate_round(
    model: &mut [f64],
    round_index: usize,
    cfg: &SystemConfig,
    devices: &[DeviceProfile],
    src: &WptSource,
    task: &SyntheticTask,
    tree: &StreamTree,
) -> (RoundRecord, Survey) {
    let num_devices = devices.len();
    debug_assert_eq!(num_devices, task.shards.len());
    debug_assert_eq!(num_devices, cfg.num_devices);
    debug_assert_eq!(model.len(), task.model_dim());

    let start = survey(task, model);

    let with_wpt = matches!(src, WptSource::Server(_));
    let draws: Vec<ChannelDraw> = (0..num_devices)
        .map(|k| {
            let mut stream =
                tree.stream(&[rng::purpose::CHANNEL, round_index as u64, k as u64]);
            sample_channel(&mut stream, cfg, with_wpt)
        })
        .collect();

    let mut harvested = vec![0.0; num_devices];
    let mut allocated = vec![0.0; num_devices];
    match src {
        WptSource::Beacon(beacons) => {
            let energy = beacon_harvested_energy(beacons, cfg);
            harvested.iter_mut().for_each(|h| *h = energy);
        }
        WptSource::Server(server) => {
            let scheduled = schedule_server_wpt(&draws, server, cfg);
            let triples: Vec<(usize, ChannelDraw, DeviceProfile)> =
                scheduled.iter().map(|&k| (k, draws[k], devices[k])).collect();
            let plan = allocate_with_fallback(&triples, server.power_w, cfg);
            for (&id, &p) in plan.device_ids.iter().zip(&plan.powers_w) {
                allocated[id] = p;
                harvested[id] = server_harvested_energy(&draws[id], p, cfg)
                    .expect("server-mode draws carry a transfer gain");
            }
        }
    }

    let shard_size = task.shard_size();
    let mut device_rounds = Vec::with_capacity(num_devices);
    let mut aggregate = vec![0.0; task.model_dim()];
    let mut active_count = 0usize;
    let mut all_saturated = true;
    for k in 0..num_devices {
        let split = compute_energy_split(harvested[k], &draws[k], cfg);
        let plan = if split.active {
            optimal_local_computation(split.compute_energy_j, &devices[k], cfg)
        } else {
            ComputePlan::zero()
        };
        let saturated = split.active && plan.batch_size >= shard_size as f64;
        all_saturated &= saturated;
        let batch_used = if !split.active {
            0
        } else if saturated {
            shard_size
        } else {
            plan.batch_size.floor() as usize
        };
        if batch_used > 0 {
            let positions: Vec<usize> = if batch_used == shard_size {
                (0..shard_size).collect()
            } else {
                let mut stream =
                    tree.stream(&[rng::purpose::BATCH, round_index as u64, k as u64]);
                rand::seq::index::sample(&mut stream, shard_size, batch_used).into_vec()
            };
            let grad = local_gradient(task, model, &task.shards[k], &positions)
                .expect("a positive batch is nonempty");
            for (acc, g) in aggregate.iter_mut().zip(&grad) {
                *acc += g;
            }
            active_count += 1;
        }
        device_rounds.push(DeviceRound {
            channel: draws[k],
            harvested_j: harvested[k],
            allocated_power_w: allocated[k],
            active: batch_used > 0,
            plan,
            batch_used,
            comm_energy_j: split.comm_energy_j,
        });
    }

    let (gdev_sample, update_applied) = if active_count > 0 {
        let inv = 1.0 / active_count as f64;
        for g in aggregate.iter_mut() {
            *g *= inv;
        }
        let mut dev2 = 0.0;
        for (g, f) in aggregate.iter().zip(&start.grad) {
            dev2 += (g - f) * (g - f);
        }
        let eta = cfg.learning_rate;
        for (w, g) in model.iter_mut().zip(&aggregate) {
            *w -= eta * g;
        }
        (dev2, true)
    } else {
        (start.grad_norm2, false)
    };

    let record = RoundRecord {
        round_index,
        devices: device_rounds,
        active_count,
        loss: start.loss,
        grad_norm2: start.grad_norm2,
        gdev_sample,
        update_applied,
        all_saturated,
    };
    (record, start)
}

fn secant_slope(wa: &[f64], ga: &[f64], wb: &[f64], gb: &[f64]) -> f64 {
    let dw2: f64 = wa.iter().zip(wb).map(|(a, b)| (a - b) * (a - b)).sum();
    if dw2 == 0.0 {
        return 0.0;
    }
    let dg2: f64 = ga.iter().zip(gb).map(|(a, b)| (a - b) * (a - b)).sum();
    (dg2 / dw2).sqrt()
}

/// Runs a full federated training job from a zero-initialized model.
///
/// Constants are first estimated from probe models; the run is rejected if
/// the step size exceeds the inverse estimated smoothness. Per-round survey
/// statistics and consecutive-round secants then sharpen the estimates, so
/// the report's constants cover everything the trajectory visited.
pub fn run_training(
    cfg: &SystemConfig,
    devices: &[DeviceProfile],
    src: &WptSource,
    task: &SyntheticTask,
    seed: u64,
) -> Result<TrainingReport, SimError> {
    assert_eq!(devices.len(), cfg.num_devices, "device list does not match config");
    assert_eq!(devices.len(), task.shards.len(), "device list does not match task shards");
    assert_eq!(
        task.model_dim(),
        cfg.model_dim as usize,
        "task parameter count does not match the configured payload dimension"
    );
    for (k, dev) in devices.iter().enumerate() {
        assert_eq!(
            dev.dataset_size,
            task.shards[k].len(),
            "device {k} dataset size does not match its shard"
        );
    }
    assert!(cfg.num_rounds >= 1, "need at least one round");

    let tree = StreamTree::new(seed);
    let probes = default_probes(task, &tree, 12);
    let estimates = estimate_constants(task, &probes);
    let eta = cfg.learning_rate;
    let limit = 1.0 / estimates.mu_hat;
    if eta > limit {
        return Err(SimError::StepSizeTooLarge { eta, limit });
    }

    let mut mu_hat = estimates.mu_hat;
    let mut phi_hat = estimates.phi_hat;
    let mut sigma2_hat = estimates.sigma2_hat;
    let mut model = vec![0.0; task.model_dim()];
    let mut rounds = Vec::with_capacity(cfg.num_rounds);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut sum_norm2 = 0.0;

    let merge = |phi: &mut f64, sig: &mut Vec<f64>, s: &Survey| {
        for (k, stat) in s.per_device.iter().enumerate() {
            *phi = phi.max(1.5 * stat.second_moment);
            sig[k] = sig[k].max(stat.sigma2);
        }
    };

    for i in 0..cfg.num_rounds {
        let round_start = model.clone();
        let (record, s) = simulate_round(&mut model, i, cfg, devices, src, task, &tree);
        merge(&mut phi_hat, &mut sigma2_hat, &s);
        if let Some((pw, pg)) = &prev {
            mu_hat = mu_hat.max(secant_slope(pw, pg, &round_start, &s.grad));
        }
        sum_norm2 += record.grad_norm2;
        prev = Some((round_start, s.grad.clone()));
        rounds.push(record);
    }

    let final_survey = survey(task, &model);
    merge(&mut phi_hat, &mut sigma2_hat, &final_survey);
    if let Some((pw, pg)) = &prev {
        mu_hat = mu_hat.max(secant_slope(pw, pg, &model, &final_survey.grad));
    }

    let initial_loss = rounds.first().map_or(final_survey.loss, |r| r.loss);
    let all_rounds_saturated = rounds.iter().all(|r| r.all_saturated);
    Ok(TrainingReport {
        seed,
        avg_grad_norm2: sum_norm2 / cfg.num_rounds as f64,
        initial_loss,
        final_loss: final_survey.loss,
        test_accuracy: test_accuracy(task, &model),
        mu_hat,
        mu_cap: smoothness_upper_bound(task),
        phi_hat,
        sigma2_hat,
        all_rounds_saturated,
        final_model: model,
        rounds,
    })
}

/// Deterministic full-batch gradient descent from a zero model, computed
/// through the same survey arithmetic as the simulator so saturated
/// full-participation runs match it bit for bit.
pub fn reference_full_batch_gd(task: &SyntheticTask, eta: f64, rounds: usize) -> GdTrace {
    let mut model = vec![0.0; task.model_dim()];
    let mut grad_norm2_series = Vec::with_capacity(rounds);
    let mut loss_series = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let s = survey(task, &model);
        grad_norm2_series.push(s.grad_norm2);
        loss_series.push(s.loss);
        for (w, g) in model.iter_mut().zip(&s.grad) {
            *w -= eta * g;
        }
    }
    GdTrace {
        model,
        grad_norm2_series,
        loss_series,
    }
}
