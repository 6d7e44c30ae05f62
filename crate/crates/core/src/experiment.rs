//! Replication harness and CSV output behind the command-line tool.
//!
//! Replications run on a rayon pool but results are always combined in
//! replication order, so output files do not depend on the worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{self, AnalyticError};
use crate::engine::{run_replication, HorizonMismatch, ReplicationResult};
use crate::metrics::{
    self, collision_estimates, MeanAccumulator, MetricsError, SeriesAccumulator, SeriesPoint,
};
use crate::model::{ConfigError, ScenarioConfig, Strategy};
use crate::scenario::ScenarioError;

/// Default bucket width of success-rate curves.
pub const DEFAULT_WINDOW: u64 = 10_000;

/// Fraction of the horizon treated as "converged" in summaries.
pub const FINAL_FRACTION: f64 = 0.25;

pub const SERIES_HEADER: [&str; 6] = [
    "slot_bucket",
    "strategy",
    "mean_rate",
    "stderr",
    "n_reps",
    "mean_packet_rate",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Merge(#[from] HorizonMismatch),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("N = {0} is outside [2, 100000]")]
    DeviceRange(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(job))
}

/// Per-replication digest kept after the raw per-slot tallies are dropped.
struct ReplicationDigest {
    windowed: metrics::RateSeries,
    cumulative: metrics::RateSeries,
    tail_rate: Option<f64>,
    tail_packet_rate: Option<f64>,
    collisions: [u64; 4],
}

fn digest(res: &ReplicationResult, window: u64) -> Result<ReplicationDigest, MetricsError> {
    Ok(ReplicationDigest {
        windowed: metrics::windowed_rate(res, window)?,
        cumulative: metrics::cumulative_rate(res, window)?,
        tail_rate: metrics::tail_rate(res, FINAL_FRACTION),
        tail_packet_rate: metrics::tail_packet_rate(res, FINAL_FRACTION),
        collisions: [
            res.first_attempt_count,
            res.first_attempt_collisions,
            res.second_attempt_count,
            res.second_attempt_collisions,
        ],
    })
}

/// Aggregated results of one strategy over all replications.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub windowed: Vec<SeriesPoint>,
    pub cumulative: Vec<SeriesPoint>,
    /// Success rate over the final quarter of the horizon, across replications.
    pub final_rate: MeanAccumulator,
    pub final_packet_rate: MeanAccumulator,
    pub pc_hat: Option<f64>,
    pub pc1_hat: Option<f64>,
}

/// Runs `cfg.replications` replications of `cfg` with its strategy replaced
/// by `strategy`. Must be called inside the worker pool.
fn run_strategy(cfg: &ScenarioConfig, strategy: Strategy, window: u64) -> Result<StrategyOutcome, ExperimentError> {
    let cfg = ScenarioConfig { strategy, ..cfg.clone() }.validate()?;
    let digests = (0..u64::from(cfg.replications))
        .into_par_iter()
        .map(|rep| -> Result<ReplicationDigest, ExperimentError> {
            let res = run_replication(&cfg, rep)?;
            Ok(digest(&res, window)?)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut windowed = SeriesAccumulator::new(&digests[0].windowed);
    let mut cumulative = SeriesAccumulator::new(&digests[0].cumulative);
    let mut final_rate = MeanAccumulator::default();
    let mut final_packet_rate = MeanAccumulator::default();
    let mut counts = [0u64; 4];
    for d in &digests {
        windowed.push(&d.windowed)?;
        cumulative.push(&d.cumulative)?;
        if let Some(r) = d.tail_rate {
            final_rate.push(r);
        }
        if let Some(r) = d.tail_packet_rate {
            final_packet_rate.push(r);
        }
        for (c, x) in counts.iter_mut().zip(d.collisions) {
            *c += x;
        }
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(StrategyOutcome {
        strategy,
        windowed: windowed.points(),
        cumulative: cumulative.points(),
        final_rate,
        final_packet_rate,
        pc_hat: ratio(counts[1], counts[0]),
        pc1_hat: ratio(counts[3], counts[2]),
    })
}

/// Runs every strategy in `strategies` on `cfg` using `workers` threads
/// (0 = one per core).
pub fn run_strategies(
    cfg: &ScenarioConfig,
    strategies: &[Strategy],
    window: u64,
    workers: usize,
) -> Result<Vec<StrategyOutcome>, ExperimentError> {
    let cfg = cfg.clone().validate()?;
    if window == 0 || window > cfg.horizon {
        return Err(MetricsError::Window { window, horizon: cfg.horizon }.into());
    }
    with_pool(workers, || {
        strategies
            .iter()
            .map(|&s| run_strategy(&cfg, s, window))
            .collect()
    })?
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_series_csv(path: &Path, strategy: Strategy, points: &[SeriesPoint]) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SERIES_HEADER).map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.slot_bucket.to_string(),
            strategy.legend().to_string(),
            fmt_f64(p.mean_rate),
            fmt_f64(p.stderr),
            p.n_reps.to_string(),
            fmt_opt(p.mean_packet_rate),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Whitespace-separated copy of a series for plotting tools.
pub fn write_series_dat(path: &Path, strategy: Strategy, points: &[SeriesPoint]) -> Result<(), ExperimentError> {
    let mut out = format!("# {}\n# slot_bucket mean_rate stderr n_reps mean_packet_rate\n", strategy.legend());
    for p in points {
        let packet = p.mean_packet_rate.map_or_else(|| "nan".to_string(), fmt_f64);
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            p.slot_bucket, p.mean_rate, p.stderr, p.n_reps, packet
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_summary_csv(path: &Path, outcomes: &[StrategyOutcome]) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "strategy",
        "final_quartile_rate",
        "stderr",
        "n_reps",
        "final_quartile_packet_rate",
        "pc_hat",
        "pc1_hat",
    ])
    .map_err(csv_err)?;
    for o in outcomes {
        w.write_record([
            o.strategy.legend().to_string(),
            fmt_opt(o.final_rate.mean()),
            fmt_f64(o.final_rate.stderr()),
            o.final_rate.n.to_string(),
            fmt_opt(o.final_packet_rate.mean()),
            fmt_opt(o.pc_hat),
            fmt_opt(o.pc1_hat),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub config: ScenarioConfig,
    pub strategies: Vec<Strategy>,
    pub out_dir: PathBuf,
    pub window: u64,
    pub workers: usize,
    pub gnuplot: bool,
}

/// Runs the requested strategies and writes `series_<strategy>.csv`,
/// `cumulative_<strategy>.csv` and `summary.csv` into `out_dir`.
/// Returns the paths written.
pub fn simulate(opts: &SimulateOptions) -> Result<(Vec<StrategyOutcome>, Vec<PathBuf>), ExperimentError> {
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let outcomes = run_strategies(&opts.config, &opts.strategies, opts.window, opts.workers)?;
    let mut written = Vec::new();
    for o in &outcomes {
        let key = o.strategy.key();
        let series = opts.out_dir.join(format!("series_{key}.csv"));
        write_series_csv(&series, o.strategy, &o.windowed)?;
        written.push(series);
        let cumulative = opts.out_dir.join(format!("cumulative_{key}.csv"));
        write_series_csv(&cumulative, o.strategy, &o.cumulative)?;
        written.push(cumulative);
        if opts.gnuplot {
            let dat = opts.out_dir.join(format!("series_{key}.dat"));
            write_series_dat(&dat, o.strategy, &o.windowed)?;
            written.push(dat);
        }
    }
    let summary = opts.out_dir.join("summary.csv");
    write_summary_csv(&summary, &outcomes)?;
    written.push(summary);
    Ok((outcomes, written))
}

/// Parameters of the single-channel approximation check.
#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub n_values: Vec<usize>,
    pub tx_prob: f64,
    pub max_attempts: u32,
    pub backoff_window: u32,
    pub horizon: u64,
    pub replications: u32,
    pub master_seed: u64,
    pub workers: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            n_values: (50..=400).step_by(50).collect(),
            tx_prob: 1e-3,
            max_attempts: 10,
            backoff_window: 10,
            horizon: 200_000,
            replications: 50,
            master_seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxRow {
    pub n_devices: usize,
    pub pc_sim: f64,
    pub pc1_sim: f64,
    pub pc1_approx: f64,
}

impl ApproxRow {
    pub fn abs_err(&self) -> f64 {
        (self.pc1_sim - self.pc1_approx).abs()
    }

    pub fn gap(&self) -> f64 {
        self.pc1_sim - self.pc_sim
    }
}

/// Simulates a single-channel network for every `N` and compares the measured
/// first-retransmission collision rate with the closed-form approximation
/// evaluated at the measured first-transmission collision rate.
pub fn validate_approx(opts: &ValidateOptions) -> Result<Vec<ApproxRow>, ExperimentError> {
    if let Some(&n) = opts.n_values.iter().find(|&&n| !(2..=100_000).contains(&n)) {
        return Err(ExperimentError::DeviceRange(n));
    }
    let configs = opts
        .n_values
        .iter()
        .map(|&n| {
            ScenarioConfig {
                replications: opts.replications,
                master_seed: opts.master_seed,
                ..ScenarioConfig::single_channel(n, opts.tx_prob, opts.max_attempts, opts.backoff_window, opts.horizon)
            }
            .validate()
        })
        .collect::<Result<Vec<_>, _>>()?;
    with_pool(opts.workers, || {
        configs
            .iter()
            .map(|cfg| {
                let pooled = (0..u64::from(cfg.replications))
                    .into_par_iter()
                    .map(|rep| run_replication(cfg, rep).map_err(ExperimentError::from))
                    .try_reduce_with(|mut a, b| {
                        a.merge(&b)?;
                        Ok(a)
                    })
                    .expect("at least one replication")?;
                let (pc_sim, pc1_sim) = collision_estimates(&pooled)?;
                let pc1_approx = analytic::p_c1_approx(pc_sim, cfg.n_devices as u64, cfg.backoff_window)?;
                Ok(ApproxRow {
                    n_devices: cfg.n_devices,
                    pc_sim,
                    pc1_sim,
                    pc1_approx,
                })
            })
            .collect()
    })?
}

pub fn write_approx_csv(path: &Path, rows: &[ApproxRow]) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["N", "pc_sim", "pc1_sim", "pc1_approx", "abs_err"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.n_devices.to_string(),
            fmt_f64(r.pc_sim),
            fmt_f64(r.pc1_sim),
            fmt_f64(r.pc1_approx),
            fmt_f64(r.abs_err()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_approx_dat(path: &Path, rows: &[ApproxRow]) -> Result<(), ExperimentError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut out = String::from("# N pc_sim pc1_sim pc1_approx abs_err\n");
    for r in rows {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.n_devices, r.pc_sim, r.pc1_sim, r.pc1_approx, r.abs_err()
        ));
    }
    f.write_all(out.as_bytes()).map_err(io_err(path))
}
