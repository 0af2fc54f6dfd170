use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sqlshaper::config::RunConfig;
use sqlshaper::pipeline::{self, GenerateOptions, PipelineError, RunStatus};

#[derive(Parser)]
#[command(name = "sqlshaper", version, about = "Generate SQL workloads that follow a target cost distribution")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Wall-clock budget; the run stops gracefully when it runs out.
    #[arg(long, global = true)]
    budget_minutes: Option<f64>,
    /// Skip template refinement.
    #[arg(long, global = true)]
    no_refine: bool,
    /// Propose predicate values uniformly at random instead of with the surrogate.
    #[arg(long, global = true)]
    naive_search: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read the database schema and write catalog.json.
    Introspect,
    /// Generate and verify templates from the configured specs.
    Templates,
    /// Run the whole pipeline and write the workload.
    Generate {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize a finished or stopped run.
    Report,
}

fn load(global: &Global) -> Result<RunConfig, PipelineError> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| sqlshaper::config::ConfigError::Invalid("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(m) = global.budget_minutes {
        config.budget_minutes = Some(m);
    }
    if global.no_refine {
        config.refine.enabled = false;
    }
    if global.naive_search {
        config.search.bo.naive = true;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(global: &Global, config: Option<&RunConfig>) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("sqlshaper-out"))
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Introspect => {
            let config = load(&cli.global)?;
            let path = pipeline::run_introspect(&config, &out_dir(&cli.global, Some(&config)))?;
            println!("{}", path.display());
        }
        Command::Templates => {
            let config = load(&cli.global)?;
            let out = out_dir(&cli.global, Some(&config));
            let report = pipeline::run_templates(&config, &out)?;
            println!("verified {} of {} specs", report.verified, report.specs);
            println!("spec-correct by attempt:   {:?}", report.series.spec_correct);
            println!("syntax-correct by attempt: {:?}", report.series.syntax_correct);
            for o in &report.outcomes {
                if let sqlshaper::forge::SpecStatus::Failed { reason } = &o.status {
                    println!("failed {}: {reason}", o.spec_id);
                }
            }
        }
        Command::Generate { resume } => {
            let config = load(&cli.global)?;
            let out = out_dir(&cli.global, Some(&config));
            let manifest = pipeline::run_generate(&config, &out, GenerateOptions { resume: *resume })?;
            let status = match manifest.status {
                RunStatus::Complete => "complete",
                RunStatus::Incomplete => "incomplete",
            };
            println!(
                "{status}: {} queries, wasserstein distance {}, {} oracle evaluations -> {}",
                manifest.queries.len(),
                manifest.distance,
                manifest.oracle_evaluations,
                out.display()
            );
        }
        Command::Report => {
            let config = cli.global.config.as_ref().map(|_| load(&cli.global)).transpose()?;
            print!("{}", pipeline::report(&out_dir(&cli.global, config.as_ref()))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
