use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use blockloc_core::chain::Ledger;
use blockloc_core::experiment::{emit_csv, emit_plot_data, format_csv, run_experiment, ExperimentPlan};
use blockloc_core::netsim::{run_simulation, Mode, SimConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blockloc", version, about = "Secure blockchain-backed localization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep anchor and malicious rates and write aggregate results.
    Run(RunArgs),
    /// Run a single simulation and print its summary.
    Simulate(SimulateArgs),
    /// Validate an exported chain file from genesis.
    VerifyChain(VerifyChainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Secure,
    Insecure,
    Both,
}

/// Per-field overrides of the simulation configuration.
#[derive(Args, Default)]
struct SimOverrides {
    #[arg(long)]
    n_nodes: Option<usize>,
    #[arg(long)]
    area_width: Option<f64>,
    #[arg(long)]
    area_height: Option<f64>,
    #[arg(long)]
    range_r: Option<f64>,
    #[arg(long)]
    error_factor: Option<f64>,
    #[arg(long)]
    difficulty: Option<u32>,
    /// Vicinity slack factor (>= 1, `inf` disables the vicinity rule).
    #[arg(long)]
    slack: Option<f64>,
    #[arg(long)]
    require_reciprocal: bool,
    #[arg(long)]
    max_hopcount: Option<u32>,
    #[arg(long)]
    max_rounds: Option<u32>,
    #[arg(long)]
    p_tr: Option<f64>,
    #[arg(long)]
    p_loss_d0: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    d0: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

impl SimOverrides {
    fn apply(&self, cfg: &mut SimConfig) {
        let pl = &mut cfg.pathloss;
        for (src, dst) in [
            (self.p_tr, &mut pl.p_tr),
            (self.p_loss_d0, &mut pl.p_loss_d0),
            (self.tau, &mut pl.tau),
            (self.d0, &mut pl.d0),
            (self.sigma, &mut pl.sigma),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        for (src, dst) in [
            (self.area_width, &mut cfg.area.0),
            (self.area_height, &mut cfg.area.1),
            (self.range_r, &mut cfg.range_r),
            (self.error_factor, &mut cfg.error_factor),
            (self.slack, &mut cfg.slack),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        for (src, dst) in [
            (self.difficulty, &mut cfg.difficulty),
            (self.max_hopcount, &mut cfg.max_hopcount),
            (self.max_rounds, &mut cfg.max_rounds),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if let Some(v) = self.n_nodes {
            cfg.n_nodes = v;
        }
        if self.require_reciprocal {
            cfg.require_reciprocal = true;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment plan; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    anchor_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    malicious_rates: Option<Vec<f64>>,
    /// Runs per cell.
    #[arg(long)]
    runs: Option<u32>,
    /// Base seed for per-run seed derivation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gnuplot data output path.
    #[arg(long)]
    plot_out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    sim: SimOverrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.2)]
    anchor_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    malicious_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "secure")]
    mode: ModeArg,
    /// Write the resulting chain here.
    #[arg(long)]
    export_chain: Option<PathBuf>,
    #[command(flatten)]
    sim: SimOverrides,
}

#[derive(Args)]
struct VerifyChainArgs {
    chain: PathBuf,
    #[arg(long, default_value_t = 12)]
    difficulty: u32,
    /// Communication range for the vicinity rule; omit to check only linkage and work.
    #[arg(long)]
    range_r: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    slack: f64,
}

fn load_plan(path: Option<&Path>) -> Result<ExperimentPlan> {
    let Some(path) = path else {
        return Ok(ExperimentPlan::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn modes(arg: ModeArg) -> Vec<Mode> {
    match arg {
        ModeArg::Secure => vec![Mode::Secure],
        ModeArg::Insecure => vec![Mode::Insecure],
        ModeArg::Both => vec![Mode::Insecure, Mode::Secure],
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut plan = load_plan(args.config.as_deref())?;
    if let Some(v) = args.anchor_rates {
        plan.anchor_rates = v;
    }
    if let Some(v) = args.malicious_rates {
        plan.malicious_rates = v;
    }
    if let Some(v) = args.runs {
        plan.runs_per_cell = v;
    }
    if let Some(v) = args.seed {
        plan.base_seed = v;
    }
    if let Some(m) = args.mode {
        plan.modes = modes(m);
    }
    args.sim.apply(&mut plan.base);
    plan.validate()?;

    if let Some(n) = args.threads {
        blockloc_core::experiment::set_threads(n)?;
    }

    let start = Instant::now();
    let results = run_experiment(&plan)?;
    eprintln!("{} cells x {} runs in {:.1?}", results.len(), plan.runs_per_cell, start.elapsed());

    match &args.out {
        Some(path) => emit_csv(&results, path)?,
        None => print!("{}", format_csv(&results)),
    }
    if let Some(path) = &args.plot_out {
        emit_plot_data(&results, path)?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mode = match args.mode {
        ModeArg::Secure => Mode::Secure,
        ModeArg::Insecure => Mode::Insecure,
        ModeArg::Both => bail!("simulate takes a single mode"),
    };
    let mut cfg = SimConfig {
        anchor_rate: args.anchor_rate,
        malicious_rate: args.malicious_rate,
        seed: args.seed,
        mode,
        ..SimConfig::default()
    };
    args.sim.apply(&mut cfg);
    let out = run_simulation(&cfg)?;
    let r = &out.result;
    println!("mode            {}", mode.as_str());
    println!("mean_error_m    {:.4}", r.mean_error);
    println!("localized       {}", r.localized_count);
    println!("unlocalized     {}", r.unlocalized_count);
    println!("rejected_claims {}", r.rejected_claims);
    println!("rounds_used     {}", r.rounds_used);
    println!("chain_blocks    {} ({} genesis)", out.ledger.len(), out.ledger.genesis_len());
    if let Some(path) = &args.export_chain {
        fs::write(path, out.ledger.export()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn verify_chain(args: VerifyChainArgs) -> Result<()> {
    let bytes = fs::read(&args.chain).with_context(|| format!("reading {}", args.chain.display()))?;
    let policy = args.range_r.map(|r| blockloc_core::chain::VerifyPolicy::new(r, args.slack));
    let ledger = Ledger::import(&bytes, args.difficulty, policy.as_ref())?;
    println!(
        "ok: {} blocks ({} genesis), {} localized nodes",
        ledger.len(),
        ledger.genesis_len(),
        ledger.localized_count()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Simulate(args) => simulate(args),
        Command::VerifyChain(args) => verify_chain(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
