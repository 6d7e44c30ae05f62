use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ucbretrans::analytic::AnalyticReport;
use ucbretrans::experiment::{self, SimulateOptions, ValidateOptions, DEFAULT_WINDOW};
use ucbretrans::scenario::{builtin_scenario, parse_scenario, BUILTIN_SCENARIOS};
use ucbretrans::{ScenarioConfig, Strategy};

/// Slotted-ALOHA LPWA simulator with UCB channel selection.
#[derive(Parser)]
#[command(name = "ucbretrans", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for one or more strategies and write success-rate CSVs.
    Simulate(SimulateArgs),
    /// Compare simulated first-retransmission collision rates with the closed form.
    ValidateApprox(ValidateArgs),
    /// Print the analytic collision probabilities for one (p_c, N, m).
    Analytic(AnalyticArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario: scenario1 or scenario2.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per strategy.
    #[arg(long)]
    reps: Option<u32>,
    /// Override the number of slots.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Comma-separated strategies, or `all`.
    #[arg(long, default_value = "all")]
    strategies: String,
    /// Bucket width of the success-rate curves, in slots.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Delay threshold of the delayed-UCB heuristic, in slots.
    #[arg(long)]
    delay: Option<u64>,
    /// Keep Only-UCB retransmissions on the packet's first channel.
    #[arg(long)]
    freeze_channel: bool,
    /// Also write whitespace-separated .dat files.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 50)]
    n_min: usize,
    #[arg(long, default_value_t = 400)]
    n_max: usize,
    #[arg(long, default_value_t = 50)]
    step: usize,
    #[arg(long, default_value_t = 10)]
    max_attempts: u32,
    #[arg(long = "backoff", default_value_t = 10)]
    backoff_window: u32,
    #[arg(long, default_value_t = 1e-3)]
    tx_prob: f64,
    #[arg(long, default_value_t = 200_000)]
    horizon: u64,
    #[arg(long, default_value_t = 50)]
    reps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output CSV file.
    #[arg(long, default_value = "validate_approx.csv")]
    out: PathBuf,
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct AnalyticArgs {
    /// First-transmission collision probability.
    #[arg(long)]
    pc: f64,
    /// Number of devices.
    #[arg(long)]
    n: u64,
    /// Back-off window.
    #[arg(long)]
    m: u32,
}

fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    if list.trim() == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for item in list.split(',').filter(|s| !s.trim().is_empty()) {
        let s: Strategy = item.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        bail!("no strategies given");
    }
    Ok(out)
}

fn load_config(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => parse_scenario(path)?,
        (None, Some(name)) => builtin_scenario(name)
            .with_context(|| format!("available: {}", BUILTIN_SCENARIOS.join(", ")))?,
        (None, None) => bail!("either --config or --scenario is required"),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.replications = reps;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
        cfg.delay_threshold = cfg.delay_threshold.min(h);
    }
    if let Some(d) = args.delay {
        cfg.delay_threshold = d;
    }
    if args.freeze_channel {
        cfg.freeze_channel = true;
    }
    Ok(cfg.validate()?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let opts = SimulateOptions {
        strategies: parse_strategies(&args.strategies)?,
        config: cfg,
        out_dir: args.out,
        window: args.window,
        workers: args.workers,
        gnuplot: args.gnuplot,
    };
    let (outcomes, written) = experiment::simulate(&opts)?;
    println!("{:<12} {:>12} {:>10} {:>6}", "strategy", "final rate", "stderr", "reps");
    for o in &outcomes {
        println!(
            "{:<12} {:>12.4} {:>10.4} {:>6}",
            o.strategy.legend(),
            o.final_rate.mean().unwrap_or(f64::NAN),
            o.final_rate.stderr(),
            o.final_rate.n
        );
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn validate_approx(args: ValidateArgs) -> Result<()> {
    if args.step == 0 || args.n_min > args.n_max {
        bail!("need --step >= 1 and --n-min <= --n-max");
    }
    let opts = ValidateOptions {
        n_values: (args.n_min..=args.n_max).step_by(args.step).collect(),
        tx_prob: args.tx_prob,
        max_attempts: args.max_attempts,
        backoff_window: args.backoff_window,
        horizon: args.horizon,
        replications: args.reps,
        master_seed: args.seed,
        workers: args.workers,
    };
    let rows = experiment::validate_approx(&opts)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    experiment::write_approx_csv(&args.out, &rows)?;
    if args.gnuplot {
        experiment::write_approx_dat(&args.out.with_extension("dat"), &rows)?;
    }
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "N", "pc_sim", "pc1_sim", "pc1_approx", "abs_err");
    for r in &rows {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            r.n_devices, r.pc_sim, r.pc1_sim, r.pc1_approx, r.abs_err()
        );
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn analytic(args: AnalyticArgs) -> Result<()> {
    let report = AnalyticReport::compute(args.pc, args.n, args.m)?;
    println!("{report}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ValidateApprox(a) => validate_approx(a),
        Command::Analytic(a) => analytic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
