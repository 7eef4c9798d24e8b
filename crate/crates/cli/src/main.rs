use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bess_split::ingest::{synth_profiles, write_csv};
use bess_split::scenario::{
    compare, run_scenario, train_policies, write_training, ControllerKind, ScenarioConfig, StoredReport, METRICS_FILE,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bess-split", version, about = "Price-aware dispatch and power split for multi-string batteries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, metrics.json and meta.json.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train a policy by behaviour cloning and PPO; writes policy.json.
    Train {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Number of training seeds; the best by validation savings is kept.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value = "policy-out")]
        out: PathBuf,
    },
    /// Compare report directories, or run scenario files and compare them.
    Compare {
        /// Report directories or scenario files.
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Write a synthetic load, PV and price profile.
    Synth {
        #[arg(long, default_value_t = 30)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "profiles.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Empty strings at 25 °C, 30 days (365 with --full-year).
    LongTerm,
    /// SOC 0.7/0.3 and 35/25 °C over 7 days.
    ShortTerm,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file; the preset applies when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "long-term")]
    preset: Preset,
    /// lp-perfect, lp-persist, bc, ppo, zero or random.
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// LP horizon in 15-minute steps.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    /// Simulate 365 days instead of the trimmed default.
    #[arg(long)]
    full_year: bool,
    /// Policy checkpoint for bc and ppo.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Profile CSV instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl ScenarioArgs {
    fn resolve(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(p) => ScenarioConfig::load(p)?,
            None => match self.preset {
                Preset::LongTerm => ScenarioConfig::long_term(),
                Preset::ShortTerm => ScenarioConfig::short_term(),
            },
        };
        if let Some(c) = &self.controller {
            cfg.controller = c.parse::<ControllerKind>()?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.training.seed = s;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
            cfg.training.expert_horizon = h;
        }
        if let Some(d) = self.days {
            cfg.days = d;
        }
        if self.full_year {
            cfg = cfg.full_year();
        }
        if let Some(p) = &self.policy {
            cfg.policy = Some(p.clone());
        }
        if let Some(p) = &self.data {
            cfg.data.path = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let cfg = scenario.resolve()?;
            let r = run_scenario(&cfg, &out)?;
            println!(
                "{}: savings {:.2} EUR, mean dSOC {:.4}, mean dtau {:.3} C, efficiency {:.2} % -> {}",
                r.meta.controller,
                r.metrics.savings,
                r.metrics.mean_delta_soc,
                r.metrics.mean_delta_tau,
                r.metrics.efficiency,
                out.display()
            );
        }
        Command::Train { scenario, seeds, out } => {
            let cfg = scenario.resolve()?;
            let run = train_policies(&cfg, seeds)?;
            write_training(&run, &out)?;
            println!("best seed {} -> {}", run.best_seed, out.join("policy.json").display());
        }
        Command::Compare { inputs, out } => {
            let mut reports = Vec::with_capacity(inputs.len());
            for (k, input) in inputs.iter().enumerate() {
                reports.push(load_or_run(input, &out.join(format!("run-{k}")))?);
            }
            let c = compare(&reports)?;
            c.write(&out)?;
            let table = String::from_utf8(c.table_csv()?).context("comparison table")?;
            print!("{table}");
        }
        Command::Synth { days, seed, out } => {
            if days == 0 {
                bail!(bess_split::Error::Config("days must be positive".into()));
            }
            write_csv(&out, &synth_profiles(days, seed)?)?;
            println!("{days} days -> {}", out.display());
        }
    }
    Ok(())
}

fn load_or_run(input: &Path, run_dir: &Path) -> anyhow::Result<StoredReport> {
    if input.join(METRICS_FILE).is_file() {
        return Ok(StoredReport::load(input)?);
    }
    if input.is_file() {
        let cfg = ScenarioConfig::load(input)?;
        let r = run_scenario(&cfg, run_dir)?;
        return Ok(StoredReport::from_report(&r, run_dir));
    }
    bail!(bess_split::Error::Config(format!(
        "{} is neither a report directory nor a scenario file",
        input.display()
    )))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<bess_split::Error>().map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
