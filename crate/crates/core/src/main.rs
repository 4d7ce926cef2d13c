use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ma_tts::config::{ExperimentConfig, Preset, SchemeId, Sweep};
use ma_tts::sim::{emit_results, prepare_output_dir, realization_statistics, run_experiment, short_term_trace, training_seed};
use ma_tts::two_timescale::run_scheme;
use ma_tts::{checks, Error, Result};

#[derive(Parser)]
#[command(name = "ma-tts", version, about = "Two-timescale movable-antenna MIMO optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write metrics.csv and manifest.json.
    Run(Common),
    /// Run the built-in invariant and oracle checks.
    Check(Common),
    /// Dump the convergence of a single realization.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Realization index to trace.
        #[arg(long, default_value_t = 0)]
        realization: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "paper")]
    preset: Preset,
    /// Comma-separated scheme list.
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<SchemeId>>,
    /// AXIS=v1,v2,...
    #[arg(long)]
    sweep: Option<Sweep>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Store per-iteration traces in the manifest.
    #[arg(long)]
    trace: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml_file(path, self.preset)?,
            None => ExperimentConfig::preset(self.preset),
        };
        if let Some(s) = &self.scheme {
            cfg.schemes = s.clone();
        }
        if let Some(s) = &self.sweep {
            cfg.sweep = Some(s.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.trace |= self.trace;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    prepare_output_dir(&cfg.out_dir)?;
    let result = run_experiment(cfg)?;
    let (csv, manifest) = emit_results(&result, cfg, &cfg.out_dir)?;
    println!("scheme,sweep_name,sweep_value,avg_sum_rate,feasibility_ratio");
    for r in &result.rows {
        println!("{},{},{},{:.4},{:.3}", r.scheme, r.sweep_name, r.sweep_value, r.avg_sum_rate, r.feasibility_ratio);
    }
    println!("wrote {} and {}", csv.display(), manifest.display());
    Ok(())
}

fn check(cfg: &ExperimentConfig) -> Result<bool> {
    let results = checks::run_checks(cfg.seed)?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.passed))
}

fn trace(cfg: &ExperimentConfig, realization: usize) -> Result<()> {
    let sys = cfg.system();
    let stat = realization_statistics(&sys, cfg.seed, realization);
    prepare_output_dir(&cfg.out_dir)?;

    let short = short_term_trace(cfg, SchemeId::ProposedGmm, realization, sys.short_term.max_iterations)?;
    let mut text = String::from("sweep,sum_rate\n");
    for (i, v) in short.iter().enumerate() {
        text += &format!("{i},{v}\n");
    }
    let short_path = cfg.out_dir.join("short_term_trace.csv");
    fs::write(&short_path, text).map_err(|source| Error::Io { path: short_path.clone(), source })?;

    let mut text = String::from("scheme,iteration,surrogate_sum,batch_sum_rate,alpha,feasible,gamma\n");
    for scheme in &cfg.schemes {
        let sol = run_scheme(*scheme, &stat, &sys, training_seed(cfg.seed, realization))?;
        for it in &sol.trace {
            text += &format!(
                "{},{},{},{},{},{},{}\n",
                scheme,
                it.iteration,
                it.surrogate_sum,
                it.batch_sum_rate(),
                it.alpha,
                it.feasible,
                it.gamma
            );
        }
    }
    let long_path = cfg.out_dir.join("long_term_trace.csv");
    fs::write(&long_path, &text).map_err(|source| Error::Io { path: long_path.clone(), source })?;
    print!("{text}");
    println!("wrote {} and {}", short_path.display(), long_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => c.resolve().and_then(|cfg| run(&cfg)).map(|_| true),
        Command::Check(c) => c.resolve().and_then(|cfg| check(&cfg)),
        Command::Trace { common, realization } => common.resolve().and_then(|cfg| trace(&cfg, *realization)).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
