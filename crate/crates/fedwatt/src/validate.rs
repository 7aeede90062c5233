//! Self-contained validation suite: every closed form in the library is
//! checked here against an independent oracle (Monte Carlo sampling, brute
//! enumeration, fine grid search, or a numeric minimizer), and the
//! end-to-end pipeline is checked for determinism and for the inequalities
//! it promises.
//!
//! Each check returns a [`CheckOutcome`] with a one-line detail string, so
//! the CLI can print a pass/fail table and the test suite can assert each
//! outcome separately.  Checks draw from dedicated seed trees and never
//! touch global state; the two checks that exercise the CLI write under a
//! caller-provided scratch directory.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::analysis::{
    beacon_outage_probability, expected_reciprocal_active, local_deviation_bound,
    server_outage_probability, server_outage_upper_bound,
};
use crate::cli::{run, ExperimentSpec, GridScale, Mode, SweepSpec, SweepVar};
use crate::mathkit::QuadratureSpec;
use crate::montecarlo::oracles::{mc_beacon_outage, mc_conditional_deviation, mc_server_outage};
use crate::montecarlo::{build_task, run_training, smoothness_upper_bound};
use crate::policy::{
    allocate_server_power, allocation_objective, comm_floor_power_w, optimal_local_computation,
    schedule_server_wpt,
};
use crate::rng::{purpose, StreamTree};
use crate::sysmodel::{
    sample_channel, tx_energy_unit_channel, BeaconSource, ChannelDraw, DeviceProfile,
    ServerSource, SystemConfig, WptSource,
};

/// Result of one validation check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

/// Runs the full suite in declaration order.  `scratch` receives the CLI
/// round-trip artifacts of the two end-to-end checks.
pub fn run_all(scratch: &Path) -> Vec<CheckOutcome> {
    vec![
        check_beacon_outage_grid(),
        check_beacon_outage_exact_case(),
        check_batch_clock_optimum(),
        check_participation_reciprocal(),
        check_conditional_deviation(),
        check_energy_scaling_slope(scratch),
        check_server_outage_quadrature(),
        check_server_power_allocation(),
        check_descent_inequality(),
        check_harvest_monotonicity(),
        check_worker_determinism(scratch),
    ]
}

fn outcome(name: &'static str, result: Result<(bool, String), String>) -> CheckOutcome {
    match result {
        Ok((passed, details)) => CheckOutcome {
            name,
            passed,
            details,
        },
        Err(details) => CheckOutcome {
            name,
            passed: false,
            details,
        },
    }
}

/// Small beacon cell shared by the sampling checks.
fn base_config() -> SystemConfig {
    SystemConfig {
        cell_radius_m: 50.0,
        num_devices: 4,
        num_antennas: 2,
        bandwidth_hz: 1e6,
        noise_psd_w_per_hz: 1e-11,
        uplink_pathloss_exp: 3.0,
        wpt_pathloss_exp: 4.0,
        wpt_min_dist_m: 1.0,
        conversion_gain: 0.5,
        round_s: 1.0,
        compute_phase_s: 0.5,
        comm_phase_s: 0.5,
        model_dim: 8,
        quant_bits: 16,
        per_sample_flops: 1e4,
        num_rounds: 40,
        learning_rate: 0.05,
        smoothness: 1.0,
        grad_norm_bound: 10.0,
    }
}

/// Beacon field whose mean harvest puts the outage parameter at `xi`.
fn beacon_for_xi(xi: f64, cfg: &SystemConfig) -> BeaconSource {
    let phi = tx_energy_unit_channel(cfg.comm_phase_s, cfg);
    let ebar = cfg.cell_radius_m.powf(cfg.uplink_pathloss_exp) * phi / xi;
    let beta = cfg.wpt_pathloss_exp;
    let lambda = ebar * (beta - 2.0) * cfg.wpt_min_dist_m.powf(beta - 2.0)
        / (std::f64::consts::PI * beta * cfg.conversion_gain);
    BeaconSource {
        power_w: 1.0,
        density_per_m2: lambda / cfg.round_s,
    }
}

/// Renders a config in the experiment-file grammar, so the CLI checks parse
/// exactly the system they were built from.
fn experiment_text(
    cfg: &SystemConfig,
    dataset_size: usize,
    feature_dim: usize,
    num_classes: usize,
    compute_coeff_si: f64,
    grad_variance: f64,
    source_block: &str,
) -> String {
    format!(
        "cell_radius_m = {:e}\n\
         num_devices = {}\n\
         num_antennas = {}\n\
         bandwidth_hz = {:e}\n\
         noise_psd_w_per_hz = {:e}\n\
         uplink_pathloss_exp = {:e}\n\
         wpt_pathloss_exp = {:e}\n\
         wpt_min_dist_m = {:e}\n\
         conversion_gain = {:e}\n\
         round_s = {:e}\n\
         compute_phase_s = {:e}\n\
         comm_phase_s = {:e}\n\
         model_dim = {}\n\
         quant_bits = {}\n\
         per_sample_flops = {:e}\n\
         num_rounds = {}\n\
         learning_rate = {:e}\n\
         smoothness = {:e}\n\
         grad_norm_bound = {:e}\n\
         dataset_size = {}\n\
         feature_dim = {}\n\
         num_classes = {}\n\
         compute_coeff_w_per_mflops3 = {:e}\n\
         grad_variance = {:e}\n\
         {}\n",
        cfg.cell_radius_m,
        cfg.num_devices,
        cfg.num_antennas,
        cfg.bandwidth_hz,
        cfg.noise_psd_w_per_hz,
        cfg.uplink_pathloss_exp,
        cfg.wpt_pathloss_exp,
        cfg.wpt_min_dist_m,
        cfg.conversion_gain,
        cfg.round_s,
        cfg.compute_phase_s,
        cfg.comm_phase_s,
        cfg.model_dim,
        cfg.quant_bits,
        cfg.per_sample_flops,
        cfg.num_rounds,
        cfg.learning_rate,
        cfg.smoothness,
        cfg.grad_norm_bound,
        dataset_size,
        feature_dim,
        num_classes,
        compute_coeff_si / 1e-18,
        grad_variance,
        source_block,
    )
}

/// Closed-form beacon outage against Monte Carlo on a grid of antenna
/// counts, outage parameters, and path-loss exponents.
pub fn check_beacon_outage_grid() -> CheckOutcome {
    let start = Instant::now();
    let draws = 1_000_000;
    let ls = [1u32, 2, 8, 64];
    let xis = [0.01, 0.1, 1.0, 10.0];
    let alphas = [2.0, 3.8];
    let mut cells = Vec::new();
    for &l in &ls {
        for &xi in &xis {
            for &alpha in &alphas {
                cells.push((cells.len() as u64, l, xi, alpha));
            }
        }
    }
    let tree = StreamTree::new(2001);
    let results: Vec<(f64, String)> = cells
        .par_iter()
        .map(|&(idx, l, xi, alpha)| {
            let mut rng = tree.stream(&[purpose::ORACLE, idx]);
            let (p_hat, stderr) = mc_beacon_outage(xi, l, alpha, draws, &mut rng);
            let p = beacon_outage_probability(xi, l, alpha);
            let tol = 3.0 * stderr + 1e-4;
            let ratio = (p_hat - p).abs() / tol;
            (ratio, format!("L={} xi={} alpha={}", l, xi, alpha))
        })
        .collect();
    let (worst, worst_cell) = results
        .iter()
        .cloned()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("grid is nonempty");
    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst <= 1.0 && elapsed < 60.0;
    outcome(
        "beacon-outage-grid",
        Ok((
            passed,
            format!(
                "{} cells at 1e6 draws; worst |dp|/(3 sigma + 1e-4) = {:.2} at {}; {:.1} s",
                cells.len(),
                worst,
                worst_cell,
                elapsed
            ),
        )),
    )
}

/// The one parameter point where the outage probability collapses to 1/e.
pub fn check_beacon_outage_exact_case() -> CheckOutcome {
    let p = beacon_outage_probability(1.0, 1, 2.0);
    let expect = (-1.0f64).exp();
    let gap = (p - expect).abs();
    outcome(
        "beacon-outage-exact-case",
        Ok((
            gap <= 1e-10,
            format!("p(xi=1, L=1, alpha=2) = {:.16}, 1/e = {:.16}, |gap| = {:.1e}", p, expect, gap),
        )),
    )
}

/// The batch/clock closed form against a fine feasibility grid search, and
/// its energy/time constraints bind at the optimum.
pub fn check_batch_clock_optimum() -> CheckOutcome {
    let mut rng = StreamTree::new(2003).stream(&[purpose::ORACLE]);
    let mut worst_gap = 0.0f64;
    let mut worst_bind = 0.0f64;
    let mut passed = true;
    for _ in 0..100 {
        let c = 10f64.powf(rng.gen_range(-21.0..-17.0));
        let e = 10f64.powf(rng.gen_range(-9.0..-3.0));
        let t = rng.gen_range(0.1..0.5);
        let w = 10f64.powf(rng.gen_range(3.0..7.0));
        let cfg = SystemConfig {
            compute_phase_s: t,
            per_sample_flops: w,
            ..base_config()
        };
        let dev = DeviceProfile {
            compute_coeff: c,
            grad_variance: 1.0,
            dataset_size: 1_000_000,
        };
        let plan = optimal_local_computation(e, &dev, &cfg);
        let energy_used = c * plan.compute_speed_flops.powi(3) * plan.compute_time_s;
        let time_used = plan.batch_size * w / plan.compute_speed_flops;
        let bind = ((energy_used - e).abs() / e).max((time_used - t).abs() / t);
        worst_bind = worst_bind.max(bind);

        let mut best = 0.0f64;
        for j in 0..=4000 {
            let b = plan.batch_size * (0.8 + 0.4 * j as f64 / 4000.0);
            let e_need = c * (b * w / t).powi(3) * t;
            if e_need <= e {
                best = best.max(b);
            }
        }
        let gap = (best - plan.batch_size).abs() / plan.batch_size;
        worst_gap = worst_gap.max(gap);
        passed &= gap <= 0.01 && bind <= 1e-9;
    }
    outcome(
        "batch-clock-optimum",
        Ok((
            passed,
            format!(
                "100 instances; worst grid-search gap {:.1e} rel, worst constraint slack {:.1e} rel",
                worst_gap, worst_bind
            ),
        )),
    )
}

fn binom(n: usize, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// Expected reciprocal of the active count against direct enumeration of
/// the conditional binomial distribution.
pub fn check_participation_reciprocal() -> CheckOutcome {
    let mut worst = 0.0f64;
    for k in 1..=12usize {
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            let closed = match expected_reciprocal_active(p, k) {
                Ok(v) => v,
                Err(e) => return outcome("participation-reciprocal", Err(e.to_string())),
            };
            let norm = 1.0 - p.powi(k as i32);
            let brute: f64 = (1..=k)
                .map(|m| {
                    binom(k, m) * (1.0 - p).powi(m as i32) * p.powi((k - m) as i32) / m as f64
                })
                .sum::<f64>()
                / norm;
            worst = worst.max((closed - brute).abs() / brute);
        }
    }
    let exact = expected_reciprocal_active(0.5, 2).expect("valid arguments");
    let exact_gap = (exact - 5.0 / 6.0).abs();
    let passed = worst <= 1e-12 && exact_gap <= 1e-15;
    outcome(
        "participation-reciprocal",
        Ok((
            passed,
            format!(
                "K <= 12, P in 0.1..0.9: worst enumeration gap {:.1e} rel; E[1/M] at K=2, P=0.5 \
                 off 5/6 by {:.1e}",
                worst, exact_gap
            ),
        )),
    )
}

/// Sampled conditional deviation E[sigma^2 / b | active] stays below its
/// closed-form bound across a harvest/processor grid, and falls with the
/// cube root of harvested energy.
pub fn check_conditional_deviation() -> CheckOutcome {
    let cfg = base_config();
    let draws = 100_000;
    let xis = [0.2, 0.04, 0.008];
    let coeffs = [1e-19, 1e-18, 1e-17];
    let tree = StreamTree::new(2005);
    let mut cells = Vec::new();
    for (ci, &c) in coeffs.iter().enumerate() {
        for (xi_i, &xi) in xis.iter().enumerate() {
            cells.push((ci, xi_i, c, xi));
        }
    }
    let results: Vec<(usize, f64, f64, f64)> = cells
        .par_iter()
        .map(|&(ci, xi_i, c, xi)| {
            let dev = DeviceProfile {
                compute_coeff: c,
                grad_variance: 2.0,
                dataset_size: 1_000_000,
            };
            let src = beacon_for_xi(xi, &cfg);
            let ebar = crate::sysmodel::beacon_harvested_energy(&src, &cfg);
            let mut rng = tree.stream(&[purpose::ORACLE, (ci * 3 + xi_i) as u64]);
            let (mean, _stderr) = mc_conditional_deviation(&dev, ebar, &cfg, draws, &mut rng);
            let bound = local_deviation_bound(&dev, ebar, &cfg);
            (ci, ebar, mean, bound)
        })
        .collect();
    let mut passed = true;
    let mut worst_ratio = 0.0f64;
    for &(_, _, mean, bound) in &results {
        let ratio = mean / bound;
        worst_ratio = worst_ratio.max(ratio);
        passed &= mean <= bound;
    }
    let mut slopes = Vec::new();
    for ci in 0..coeffs.len() {
        let pts: Vec<(f64, f64)> = results
            .iter()
            .filter(|r| r.0 == ci)
            .map(|r| (r.1.ln(), r.2.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        passed &= (slope + 1.0 / 3.0).abs() <= 0.05;
        slopes.push(slope);
    }
    outcome(
        "conditional-deviation-bound",
        Ok((
            passed,
            format!(
                "3x3 grid at 1e5 draws; worst mean/bound = {:.3}; energy exponents {:?}",
                worst_ratio,
                slopes.iter().map(|s| (s * 1e3).round() / 1e3).collect::<Vec<_>>()
            ),
        )),
    )
}

/// End-to-end analyze sweep: the fitted energy-scaling exponent lands on
/// the cube-root law while outage stays negligible.
pub fn check_energy_scaling_slope(scratch: &Path) -> CheckOutcome {
    let start = Instant::now();
    let inner = || -> Result<(bool, String), String> {
        let cfg = SystemConfig {
            num_devices: 8,
            ..base_config()
        };
        let dir = scratch.join("slope");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let source_block = "source = beacon\nbeacon_power_w = 1.0\nbeacon_density_per_m2 = 0.1";
        let text = experiment_text(&cfg, 12, 3, 2, 1e-19, 1.0, source_block);
        let config_path = dir.join("exp.cfg");
        std::fs::write(&config_path, text).map_err(|e| e.to_string())?;

        let phi = tx_energy_unit_channel(cfg.comm_phase_s, &cfg);
        let beta = cfg.wpt_pathloss_exp;
        let lambda_for_xi = |xi: f64| {
            let ebar = cfg.cell_radius_m.powf(cfg.uplink_pathloss_exp) * phi / xi;
            ebar * (beta - 2.0) * cfg.wpt_min_dist_m.powf(beta - 2.0)
                / (std::f64::consts::PI * beta * cfg.conversion_gain)
        };
        let lo = lambda_for_xi(1e-3);
        let spec = ExperimentSpec {
            mode: Mode::Analyze,
            config: Some(config_path),
            sweep: Some(SweepSpec {
                var: SweepVar::LambdaEnergy,
                lo,
                hi: 150.0 * lo,
                count: 9,
                scale: GridScale::Log,
            }),
            seeds: vec![0],
            out: dir.join("out"),
            workers: 2,
        };
        let summary = run(&spec).map_err(|e| e.to_string())?;
        let slope = summary.fitted_slope.ok_or("analyze produced no slope")?;
        let p_worst =
            beacon_outage_probability(1e-3, cfg.num_antennas, cfg.uplink_pathloss_exp);
        let elapsed = start.elapsed().as_secs_f64();
        let passed = (-0.36..=-0.31).contains(&slope) && p_worst < 1e-6 && elapsed < 10.0;
        Ok((
            passed,
            format!(
                "9-point sweep over 2.2 decades: slope {:.4}, max outage {:.1e}, {:.1} s",
                slope, p_worst, elapsed
            ),
        ))
    };
    outcome("energy-scaling-slope", inner())
}

/// Server outage quadrature against Monte Carlo, and the closed-form upper
/// bound dominating the quadrature over the small-tau grid.
pub fn check_server_outage_quadrature() -> CheckOutcome {
    let inner = || -> Result<(bool, String), String> {
        let quad = QuadratureSpec::default();
        let tree = StreamTree::new(2007);
        let draws = 1_000_000;
        let alpha = 3.8;
        let mc_cells = [(1e-3, 1u32), (1e-3, 2), (1e-2, 1), (1e-2, 2)];
        let mc: Vec<(f64, String)> = mc_cells
            .par_iter()
            .enumerate()
            .map(|(i, &(tau, l))| {
                let q = server_outage_probability(tau, l, alpha, &quad)
                    .map_err(|e| e.to_string())?;
                let mut rng = tree.stream(&[purpose::ORACLE, i as u64]);
                let (p_hat, stderr) = mc_server_outage(tau, l, alpha, draws, &mut rng);
                let tol = 3.0 * stderr + 1e-5;
                Ok((
                    (p_hat - q).abs() / tol,
                    format!("tau={} L={}", tau, l),
                ))
            })
            .collect::<Result<_, String>>()?;
        let (worst_mc, worst_cell) = mc
            .iter()
            .cloned()
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("cells are nonempty");

        let mut dominated = true;
        let mut min_margin = f64::INFINITY;
        for j in 0..9 {
            let tau = 10f64.powf(-6.0 + 4.0 * j as f64 / 8.0);
            for &l in &[1u32, 2, 4] {
                for &a in &[2.2, 3.8] {
                    let q = server_outage_probability(tau, l, a, &quad)
                        .map_err(|e| e.to_string())?;
                    let bound = server_outage_upper_bound(tau, l, a)
                        .map_err(|e| e.to_string())?
                        .min(1.0);
                    dominated &= bound >= q * (1.0 - 1e-12);
                    if q > 0.0 {
                        min_margin = min_margin.min(bound / q);
                    }
                }
            }
        }
        let passed = worst_mc <= 1.0 && dominated;
        Ok((
            passed,
            format!(
                "MC worst |dp|/(3 sigma + 1e-5) = {:.2} at {}; bound/quadrature >= {:.3} over \
                 54 small-tau cells",
                worst_mc, worst_cell, min_margin
            ),
        ))
    };
    outcome("server-outage-quadrature", inner())
}

/// Projects `q` onto the simplex {q >= 0, sum q = r}.
fn project_onto_simplex(q: &mut [f64], r: f64) {
    let mut sorted = q.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - r) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for x in q.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projected-gradient minimizer of the allocation objective over
/// {p >= floor, sum p = budget}, with Armijo-style backtracking.
fn projected_gradient_allocation(
    active: &[(usize, ChannelDraw, DeviceProfile)],
    floors: &[f64],
    budget: f64,
    cfg: &SystemConfig,
) -> Vec<f64> {
    let m = active.len();
    let coeffs: Vec<f64> = active
        .iter()
        .map(|(_, draw, dev)| {
            let g = draw.wpt_gain.expect("server channels carry a transfer gain");
            dev.grad_variance
                * dev.compute_coeff.cbrt()
                * (draw.distance_m.powf(cfg.uplink_pathloss_exp) / g).cbrt()
        })
        .collect();
    let slackness = budget - floors.iter().sum::<f64>();
    let f = |q: &[f64]| -> f64 {
        q.iter()
            .zip(&coeffs)
            .map(|(&qi, &c)| if qi > 0.0 { c / qi.cbrt() } else { f64::INFINITY })
            .sum()
    };
    let mut q = vec![slackness / m as f64; m];
    let mut fq = f(&q);
    let mut step = slackness;
    let mut stalled = 0;
    for _ in 0..20_000 {
        let grad: Vec<f64> = q
            .iter()
            .zip(&coeffs)
            .map(|(&qi, &c)| -c / (3.0 * qi * qi.cbrt()))
            .collect();
        let mut s = step * 2.0;
        let mut accepted = false;
        while s > slackness * 1e-18 {
            let mut cand: Vec<f64> = q.iter().zip(&grad).map(|(&qi, &g)| qi - s * g).collect();
            project_onto_simplex(&mut cand, slackness);
            let fc = f(&cand);
            if fc < fq {
                if (fq - fc) <= 1e-14 * fq.abs() {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                q = cand;
                fq = fc;
                step = s;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted || stalled > 50 {
            break;
        }
    }
    floors.iter().zip(&q).map(|(&fl, &qi)| fl + qi).collect()
}

/// Closed-form power allocation against the projected-gradient minimizer,
/// plus budget conservation and the single-device case.
pub fn check_server_power_allocation() -> CheckOutcome {
    let cfg = SystemConfig {
        cell_radius_m: 20.0,
        ..base_config()
    };
    let src = ServerSource {
        power_w: 10.0,
        control: crate::sysmodel::PowerControl::Optimized,
    };
    let mut rng = StreamTree::new(2008).stream(&[purpose::ORACLE]);
    let mut done = 0;
    let mut worst_sum = 0.0f64;
    let mut worst_obj = 0.0f64;
    let mut passed = true;
    let mut attempts = 0;
    while done < 50 && attempts < 10_000 {
        attempts += 1;
        let k = rng.gen_range(2..=8usize);
        let mut draws = Vec::new();
        let mut devices = Vec::new();
        for _ in 0..k {
            draws.push(sample_channel(&mut rng, &cfg, true));
            devices.push(DeviceProfile {
                compute_coeff: 10f64.powf(rng.gen_range(-20.0..-18.0)),
                grad_variance: 10f64.powf(rng.gen_range(-0.5..0.5)),
                dataset_size: 1_000_000,
            });
        }
        let scheduled = schedule_server_wpt(&draws, &src, &cfg);
        if scheduled.len() < 2 {
            continue;
        }
        let active: Vec<(usize, ChannelDraw, DeviceProfile)> = scheduled
            .iter()
            .map(|&i| (i, draws[i], devices[i]))
            .collect();
        let plan = match allocate_server_power(&active, src.power_w, &cfg) {
            Ok(plan) => plan,
            Err(e) => {
                return outcome(
                    "server-power-allocation",
                    Err(format!("screened set was not allocatable: {}", e)),
                )
            }
        };
        let budget = src.power_w * active.len() as f64;
        let sum: f64 = plan.powers_w.iter().sum();
        let sum_gap = (sum - budget).abs() / budget;
        worst_sum = worst_sum.max(sum_gap);

        let floors: Vec<f64> = active
            .iter()
            .map(|(_, draw, _)| comm_floor_power_w(draw, &cfg))
            .collect();
        for (p, fl) in plan.powers_w.iter().zip(&floors) {
            passed &= p > fl;
        }
        let pg = projected_gradient_allocation(&active, &floors, budget, &cfg);
        let f_alloc = allocation_objective(&active, &plan.powers_w, &cfg);
        let f_pg = allocation_objective(&active, &pg, &cfg);
        let obj_gap = (f_alloc - f_pg).abs() / f_pg;
        worst_obj = worst_obj.max(obj_gap);
        passed &= sum_gap <= 1e-9 && obj_gap <= 1e-3 && f_alloc <= f_pg * (1.0 + 1e-9);
        done += 1;
    }
    if done < 50 {
        return outcome(
            "server-power-allocation",
            Err(format!("only {} of 50 instances produced a usable active set", done)),
        );
    }

    let lone = vec![(
        0usize,
        ChannelDraw {
            distance_m: 2.0,
            uplink_gain: 1.0,
            wpt_gain: Some(1.0),
        },
        DeviceProfile {
            compute_coeff: 1e-19,
            grad_variance: 1.0,
            dataset_size: 1_000_000,
        },
    )];
    let lone_plan = match allocate_server_power(&lone, src.power_w, &cfg) {
        Ok(plan) => plan,
        Err(e) => return outcome("server-power-allocation", Err(e.to_string())),
    };
    passed &= lone_plan.powers_w == vec![src.power_w];

    outcome(
        "server-power-allocation",
        Ok((
            passed,
            format!(
                "50 active sets: worst budget slack {:.1e} rel, worst objective gap to \
                 projected gradient {:.1e} rel; single device gets the full budget exactly",
                worst_sum, worst_obj
            ),
        )),
    )
}

/// Full training runs satisfy the realized descent inequality: the average
/// squared gradient norm is covered by the loss drop plus sampled
/// aggregation deviation.
pub fn check_descent_inequality() -> CheckOutcome {
    let inner = || -> Result<(bool, String), String> {
        let task = build_task(11, 30, 40, 20, 5);
        let mu_cap = smoothness_upper_bound(&task);
        let cfg = SystemConfig {
            num_devices: 30,
            model_dim: task.model_dim() as u64,
            num_rounds: 500,
            learning_rate: 0.8 / mu_cap,
            smoothness: mu_cap,
            ..base_config()
        };
        let devices = vec![
            DeviceProfile {
                compute_coeff: 1e-19,
                grad_variance: 1.0,
                dataset_size: 40,
            };
            30
        ];
        let src = WptSource::Beacon(beacon_for_xi(1.2, &cfg));
        let mut lines = Vec::new();
        let mut passed = true;
        for seed in [0u64, 1, 2] {
            let start = Instant::now();
            let report =
                run_training(&cfg, &devices, &src, &task, seed).map_err(|e| e.to_string())?;
            let elapsed = start.elapsed().as_secs_f64();
            let n = report.rounds.len() as f64;
            let mean_gdev =
                report.rounds.iter().map(|r| r.gdev_sample).sum::<f64>() / n;
            let rhs = 2.0 * (report.initial_loss - report.final_loss)
                / (cfg.learning_rate * n)
                + mean_gdev;
            let lhs = report.avg_grad_norm2;
            let ok = lhs <= rhs * (1.0 + 1e-9) + 1e-15 && elapsed < 300.0;
            passed &= ok;
            lines.push(format!(
                "seed {}: lhs {:.3e} <= rhs {:.3e} ({:.1} s)",
                seed, lhs, rhs, elapsed
            ));
        }
        Ok((
            passed,
            format!("K=30, N=500, eta = 0.8/mu_cap: {}", lines.join("; ")),
        ))
    };
    outcome("descent-inequality", inner())
}

fn median5(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// More harvest means better convergence, until every device already
/// computes on its whole shard, after which extra harvest changes nothing.
pub fn check_harvest_monotonicity() -> CheckOutcome {
    let inner = || -> Result<(bool, String), String> {
        let task = build_task(13, 8, 30, 3, 2);
        let mu_cap = smoothness_upper_bound(&task);
        let cfg = SystemConfig {
            num_devices: 8,
            model_dim: task.model_dim() as u64,
            num_rounds: 80,
            learning_rate: 0.5 / mu_cap,
            smoothness: mu_cap,
            ..base_config()
        };
        let devices = vec![
            DeviceProfile {
                compute_coeff: 1e-19,
                grad_variance: 1.0,
                dataset_size: 30,
            };
            8
        ];
        let xi0 = 12.0;
        let seeds = [0u64, 1, 2, 3, 4];
        let mut level_stats = Vec::new();
        for &mult in &[1.0, 10.0, 100.0] {
            let src = WptSource::Beacon(beacon_for_xi(xi0 / mult, &cfg));
            let finals: Vec<f64> = seeds
                .par_iter()
                .map(|&seed| {
                    run_training(&cfg, &devices, &src, &task, seed)
                        .map(|r| r.avg_grad_norm2)
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<_, String>>()?;
            level_stats.push(median5(finals));
        }
        let monotone = level_stats[0] > level_stats[1] && level_stats[1] > level_stats[2];

        let mut saturated_ok = true;
        let mut max_change = 0.0f64;
        let mut per_seed: Vec<Vec<f64>> = Vec::new();
        for &mult in &[2e4, 2e5] {
            let src = WptSource::Beacon(beacon_for_xi(xi0 / mult, &cfg));
            let runs: Vec<(bool, f64)> = seeds
                .par_iter()
                .map(|&seed| {
                    run_training(&cfg, &devices, &src, &task, seed)
                        .map(|r| (r.all_rounds_saturated, r.avg_grad_norm2))
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<_, String>>()?;
            saturated_ok &= runs.iter().all(|r| r.0);
            per_seed.push(runs.iter().map(|r| r.1).collect());
        }
        for (a, b) in per_seed[0].iter().zip(&per_seed[1]) {
            max_change = max_change.max((a - b).abs() / a);
        }
        let passed = monotone && saturated_ok && max_change <= 0.05;
        Ok((
            passed,
            format!(
                "medians over 5 seeds at 1x/10x/100x harvest: {:.3e} > {:.3e} > {:.3e}; \
                 saturated levels identical to {:.1e} rel",
                level_stats[0], level_stats[1], level_stats[2], max_change
            ),
        ))
    };
    outcome("harvest-monotonicity", inner())
}

/// The CLI writes byte-identical outputs regardless of worker count.
pub fn check_worker_determinism(scratch: &Path) -> CheckOutcome {
    let inner = || -> Result<(bool, String), String> {
        let cfg = SystemConfig {
            num_rounds: 15,
            ..base_config()
        };
        let dir = scratch.join("workers");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let src = beacon_for_xi(1.5, &cfg);
        let source_block = format!(
            "source = beacon\nbeacon_power_w = {:e}\nbeacon_density_per_m2 = {:e}",
            src.power_w, src.density_per_m2
        );
        let text = experiment_text(&cfg, 12, 3, 2, 1e-19, 1.0, &source_block);
        let config_path = dir.join("exp.cfg");
        std::fs::write(&config_path, text).map_err(|e| e.to_string())?;

        let lambda = crate::sysmodel::spatial_energy_density(&src, &cfg);
        let mut snapshots: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for &workers in &[1usize, 4, 16] {
            let out = dir.join(format!("out{}", workers));
            let spec = ExperimentSpec {
                mode: Mode::Simulate,
                config: Some(config_path.clone()),
                sweep: Some(SweepSpec {
                    var: SweepVar::LambdaEnergy,
                    lo: lambda,
                    hi: 3.0 * lambda,
                    count: 2,
                    scale: GridScale::Log,
                }),
                seeds: vec![1, 2],
                out: out.clone(),
                workers,
            };
            run(&spec).map_err(|e| e.to_string())?;
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                .map_err(|e| e.to_string())?
                .map(|entry| {
                    let entry = entry.map_err(|e| e.to_string())?;
                    let name = entry.file_name().to_string_lossy().into_owned();
                    let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
                    Ok((name, bytes))
                })
                .collect::<Result<_, String>>()?;
            files.sort_by(|a, b| a.0.cmp(&b.0));
            snapshots.push(files);
        }
        let mut identical = snapshots[0].len() == 5;
        for later in &snapshots[1..] {
            identical &= later.len() == snapshots[0].len();
            for (a, b) in snapshots[0].iter().zip(later) {
                identical &= a.0 == b.0 && a.1 == b.1;
            }
        }
        Ok((
            identical,
            format!(
                "2 grid points x 2 seeds: {} files byte-identical across 1/4/16 workers",
                snapshots[0].len()
            ),
        ))
    };
    outcome("worker-determinism", inner())
}
