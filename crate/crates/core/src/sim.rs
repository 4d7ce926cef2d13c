//! Monte Carlo harness: realizations, held-out evaluation, metrics and result files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel_sample, draw_statistical_state, stream_rng, Point, StatisticalState};
use crate::config::{ExperimentConfig, SchemeId, SystemParams};
use crate::error::{Error, Result};
use crate::rate::{achievable_rate, CovarianceSet, Link};
use crate::two_timescale::{initial_rx, initial_tx, run_scheme, short_term, IterationRecord, Iterate, LongTermSolution};

/// Energy spent per metre of antenna travel, J/m.
pub const MOBILITY_COEFFICIENT: f64 = 1.0;
/// Coherence intervals per second (100 ms each).
pub const INTERVALS_PER_SECOND: f64 = 10.0;
/// Antenna repositioning speed, m/s.
pub const REPOSITIONING_SPEED: f64 = 10.0;
/// Energy efficiency reported when a user never moves.
pub const EFFICIENCY_CAP: f64 = 1e12;

pub const CSV_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const STREAM_STATISTICS: u64 = 0;
const STREAM_TRAINING: u64 = 1;
const STREAM_EVALUATION: u64 = 2;
const STREAM_SHORT_TERM_TRACE: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub avg_sum_rate: f64,
    pub feasibility_ratio: f64,
    pub energy_eff: f64,
    pub repositioning_delay: f64,
    pub realizations: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyMetrics {
    /// Rate per watt of repositioning power, averaged over users.
    pub efficiency: f64,
    /// Seconds needed for the longest antenna move, averaged over users and intervals.
    pub delay: f64,
    /// Total antenna travel per user per interval, averaged, in m.
    pub distance: f64,
}

/// Held-out performance of one scheme on one realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationOutcome {
    pub scheme: SchemeId,
    pub sweep_index: usize,
    pub realization: usize,
    /// Sample-mean rate per user.
    pub user_rates: Vec<f64>,
    pub sum_rate: f64,
    /// Sum rate at the initial transmit APV and covariances with the same receive policy.
    pub initial_sum_rate: f64,
    pub meets_rate_min: bool,
    pub energy: EnergyMetrics,
    pub trace: Vec<IterationRecord>,
    /// Held-out sum rate of every iterate; empty unless requested.
    pub iterate_sum_rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub outcomes: Vec<RealizationOutcome>,
}

#[derive(Clone, Debug, Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    /// The run configuration without its output location.
    config: serde_json::Value,
    rows: &'a [MetricsRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<Vec<TraceEntry<'a>>>,
}

#[derive(Clone, Debug, Serialize)]
struct TraceEntry<'a> {
    scheme: SchemeId,
    sweep_value: f64,
    realization: usize,
    iterations: &'a [IterationRecord],
    iterate_sum_rates: &'a [f64],
}

/// Fraction of realizations in which every user's mean rate reaches `rate_min`.
pub fn feasibility_ratio(user_rates: &[Vec<f64>], rate_min: f64) -> f64 {
    if user_rates.is_empty() {
        return 0.0;
    }
    let ok = user_rates.iter().filter(|r| r.iter().all(|v| *v >= rate_min)).count();
    ok as f64 / user_rates.len() as f64
}

/// `trajectory[i][k]` is user k's receive APV in interval i, `rates[i][k]` its rate there.
/// Efficiency per user is mean rate over mean repositioning power.
pub fn energy_metrics(trajectory: &[Vec<Vec<Point>>], rates: &[Vec<f64>]) -> Result<EnergyMetrics> {
    if trajectory.len() != rates.len() || trajectory.is_empty() {
        return Err(Error::Contract("trajectory and rates must cover the same nonempty interval set".into()));
    }
    let k_users = trajectory[0].len();
    if k_users == 0 {
        return Err(Error::Contract("trajectory has no users".into()));
    }
    let moves = trajectory.len() - 1;
    let mut efficiency = 0.0;
    let mut delay = 0.0;
    let mut distance = 0.0;
    for k in 0..k_users {
        let mean_rate = rates.iter().map(|r| r[k]).sum::<f64>() / rates.len() as f64;
        let mut travel = 0.0;
        let mut longest = 0.0;
        for w in trajectory.windows(2) {
            let (a, b) = (&w[0][k], &w[1][k]);
            let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p.dist(*q)).collect();
            travel += d.iter().sum::<f64>();
            longest += d.iter().fold(0.0, |m: f64, v| m.max(*v));
        }
        let (mean_travel, mean_longest) = if moves == 0 { (0.0, 0.0) } else { (travel / moves as f64, longest / moves as f64) };
        let power = MOBILITY_COEFFICIENT * mean_travel * INTERVALS_PER_SECOND;
        efficiency += if power > 0.0 { (mean_rate / power).min(EFFICIENCY_CAP) } else { EFFICIENCY_CAP };
        delay += mean_longest / REPOSITIONING_SPEED;
        distance += mean_travel;
    }
    let k = k_users as f64;
    Ok(EnergyMetrics { efficiency: efficiency / k, delay: delay / k, distance: distance / k })
}

/// Statistical state of realization `r`; shared by every scheme and sweep point.
pub fn realization_statistics(sys: &SystemParams, seed: u64, r: usize) -> StatisticalState {
    draw_statistical_state(&sys.law, &mut stream_rng(seed, &[r as u64, STREAM_STATISTICS]))
}

pub fn training_seed(seed: u64, r: usize) -> u64 {
    stream_rng(seed, &[r as u64, STREAM_TRAINING]).next_u64()
}

/// Per-sample rates and receive APVs of a solution on held-out samples.
pub struct Evaluation {
    pub rates: Vec<Vec<f64>>,
    pub trajectory: Vec<Vec<Vec<Point>>>,
}

pub fn evaluate(
    sol: &LongTermSolution,
    it: &Iterate,
    stat: &StatisticalState,
    sys: &SystemParams,
    rng: &mut ChaCha8Rng,
    samples: usize,
) -> Result<Evaluation> {
    let mut out = Evaluation { rates: Vec::with_capacity(samples), trajectory: Vec::with_capacity(samples) };
    for _ in 0..samples {
        let sample = draw_channel_sample(stat, false, rng);
        let rx = sol.receive_apvs_at(it, &sample, sys)?;
        let rates = (0..sample.users.len())
            .map(|k| {
                achievable_rate(&Link::new(&sample.users[k], sys.wavelength, sys.noise), &it.tx, &rx[k], &it.covs, k)
            })
            .collect::<Result<Vec<_>>>()?;
        out.rates.push(rates);
        out.trajectory.push(rx);
    }
    Ok(out)
}

fn mean_per_user(rates: &[Vec<f64>]) -> Vec<f64> {
    let k = rates.first().map_or(0, Vec::len);
    (0..k).map(|i| rates.iter().map(|r| r[i]).sum::<f64>() / rates.len() as f64).collect()
}

/// Runs one scheme on one realization and evaluates it on held-out samples.
pub fn run_realization(
    scheme: SchemeId,
    cfg: &ExperimentConfig,
    sweep_index: usize,
    r: usize,
    iterate_trace_wanted: bool,
) -> Result<RealizationOutcome> {
    let sys = cfg.system();
    let stat = realization_statistics(&sys, cfg.seed, r);
    let sol = run_scheme(scheme, &stat, &sys, training_seed(cfg.seed, r))?;
    let eval_rng = stream_rng(cfg.seed, &[r as u64, STREAM_EVALUATION]);
    let last = sol.iterates.last().expect("iterates hold the initial point");
    let eval = evaluate(&sol, last, &stat, &sys, &mut eval_rng.clone(), cfg.evaluation_samples)?;
    let init = evaluate(&sol, &sol.iterates[0], &stat, &sys, &mut eval_rng.clone(), cfg.evaluation_samples)?;
    let user_rates = mean_per_user(&eval.rates);
    let sum_rate = user_rates.iter().sum();
    let initial_sum_rate = mean_per_user(&init.rates).iter().sum();
    let iterate_sum_rates = if iterate_trace_wanted {
        iterate_trace(&sol, &stat, &sys, cfg.seed, r, cfg.evaluation_samples)?
    } else {
        Vec::new()
    };
    Ok(RealizationOutcome {
        scheme,
        sweep_index,
        realization: r,
        meets_rate_min: user_rates.iter().all(|v| *v >= sys.rate_min),
        user_rates,
        sum_rate,
        initial_sum_rate,
        energy: energy_metrics(&eval.trajectory, &eval.rates)?,
        trace: sol.trace,
        iterate_sum_rates,
    })
}

/// Sweep points as (value, config); a single `("none", 0)` point without a sweep.
pub fn sweep_points(cfg: &ExperimentConfig) -> (String, Vec<(f64, ExperimentConfig)>) {
    match &cfg.sweep {
        Some(s) => (s.axis.name().to_string(), s.values.iter().map(|v| (*v, cfg.with_axis(s.axis, *v))).collect()),
        None => ("none".to_string(), vec![(0.0, cfg.clone())]),
    }
}

fn aggregate(
    scheme: SchemeId,
    sweep_name: &str,
    sweep_value: f64,
    cfg: &ExperimentConfig,
    outcomes: &[&RealizationOutcome],
) -> MetricsRow {
    let n = outcomes.len() as f64;
    let rates: Vec<Vec<f64>> = outcomes.iter().map(|o| o.user_rates.clone()).collect();
    MetricsRow {
        scheme: scheme.name().to_string(),
        sweep_name: sweep_name.to_string(),
        sweep_value,
        avg_sum_rate: outcomes.iter().map(|o| o.sum_rate).sum::<f64>() / n,
        feasibility_ratio: feasibility_ratio(&rates, cfg.rate_min_bps_hz),
        energy_eff: outcomes.iter().map(|o| o.energy.efficiency).sum::<f64>() / n,
        repositioning_delay: outcomes.iter().map(|o| o.energy.delay).sum::<f64>() / n,
        realizations: outcomes.len(),
        seed: cfg.seed,
    }
}

/// Every scheme on every realization at every sweep point; rows in canonical order
/// (sweep point, then scheme in configuration order).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (sweep_name, points) = sweep_points(cfg);
    let jobs: Vec<(usize, usize, SchemeId)> = (0..points.len())
        .flat_map(|s| (0..cfg.realizations).flat_map(move |r| cfg.schemes.iter().map(move |id| (s, r, *id))))
        .collect();
    let run = || jobs.par_iter().map(|&(s, r, id)| run_realization(id, &points[s].1, s, r, cfg.trace)).collect::<Result<Vec<_>>>();
    let outcomes = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    let mut rows = Vec::new();
    for (s, (value, point_cfg)) in points.iter().enumerate() {
        for id in &cfg.schemes {
            let subset: Vec<&RealizationOutcome> =
                outcomes.iter().filter(|o| o.sweep_index == s && o.scheme == *id).collect();
            rows.push(aggregate(*id, &sweep_name, *value, point_cfg, &subset));
        }
    }
    Ok(ExperimentResult { rows, outcomes })
}

/// Creates `dir` and proves it is writable.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|source| Error::Io { path: probe.clone(), source })?;
    fs::remove_file(&probe).map_err(|source| Error::Io { path: probe, source })
}

/// Writes the metrics table and the manifest; returns their paths.
pub fn emit_results(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if result.rows.is_empty() {
        return Err(Error::Contract("no metrics rows to write".into()));
    }
    prepare_output_dir(dir)?;
    let csv_path = dir.join(CSV_FILE);
    write_rows(&result.rows, &csv_path)?;

    let points = sweep_points(cfg).1;
    let traces = cfg.trace.then(|| {
        result
            .outcomes
            .iter()
            .map(|o| TraceEntry {
                scheme: o.scheme,
                sweep_value: points[o.sweep_index].0,
                realization: o.realization,
                iterations: &o.trace,
                iterate_sum_rates: &o.iterate_sum_rates,
            })
            .collect()
    });
    let json_path = dir.join(MANIFEST_FILE);
    let json_err = |source| Error::Json { path: json_path.clone(), source };
    let mut config = serde_json::to_value(cfg).map_err(json_err)?;
    if let Some(map) = config.as_object_mut() {
        map.remove("out_dir");
    }
    let manifest = Manifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        rows: &result.rows,
        traces,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err)?;
    fs::write(&json_path, text + "\n").map_err(|source| Error::Io { path: json_path.clone(), source })?;
    Ok((csv_path, json_path))
}

pub fn write_rows(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Short-term convergence of one realization: sum over users of the rate after each
/// sweep at the initial transmit APV and covariances, padded with the final value.
pub fn short_term_trace(cfg: &ExperimentConfig, scheme: SchemeId, r: usize, sweeps: usize) -> Result<Vec<f64>> {
    let mut sys = cfg.system();
    sys.short_term.max_iterations = sweeps;
    let stat = realization_statistics(&sys, cfg.seed, r);
    let tx = initial_tx(scheme, &sys)?;
    let rx = initial_rx(scheme, &sys)?;
    let covs = CovarianceSet::uniform(sys.n_users(), sys.n_tx, sys.power);
    let sample = draw_channel_sample(&stat, false, &mut stream_rng(cfg.seed, &[r as u64, STREAM_SHORT_TERM_TRACE]));
    let mut total = vec![0.0; sweeps + 1];
    for k in 0..sys.n_users() {
        let out = short_term(scheme, &sample, k, &tx, &covs, &rx, &sys)?;
        let last = *out.rate_trace.last().expect("trace holds the initial rate");
        for (i, t) in total.iter_mut().enumerate() {
            *t += out.rate_trace.get(i).copied().unwrap_or(last);
        }
    }
    Ok(total)
}


/// Held-out sum rate of every long-term iterate, all scored on the realization's
/// evaluation samples so that differences between iterates are not sampling noise.
/// With `samples == evaluation_samples` the last entry is the reported sum rate.
pub fn iterate_trace(
    sol: &LongTermSolution,
    stat: &StatisticalState,
    sys: &SystemParams,
    seed: u64,
    r: usize,
    samples: usize,
) -> Result<Vec<f64>> {
    let rng = stream_rng(seed, &[r as u64, STREAM_EVALUATION]);
    sol.iterates
        .iter()
        .map(|it| {
            let e = evaluate(sol, it, stat, sys, &mut rng.clone(), samples)?;
            Ok(mean_per_user(&e.rates).iter().sum())
        })
        .collect()
}
