use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpbma::harness::{
    construction_sweep, parse_marginal_mode, run_checks, run_experiment, simulate, write_outputs,
    ExperimentConfig, Task, Variant,
};
use cpbma::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "cpbma", version, about = "Change-point model averaging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write test trajectories (CSV plus JSON metadata) into a directory.
    Simulate(CommonArgs),
    /// Run the Monte-Carlo sweep and write the per-step MSE table.
    Evaluate(CommonArgs),
    /// Measure the construction's distance to the averaged prediction
    /// across attention sharpness values.
    SweepC {
        #[command(flatten)]
        common: CommonArgs,
        /// Sharpness values (repeatable); defaults to 5, 10, 20, 40.
        #[arg(long = "c")]
        sharpness: Vec<f64>,
    },
    /// Run the invariant suite; exits with status 3 if any check fails.
    Check(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Lds,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Key-value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; falls back to the config file, then CPBMA_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG chart next to the CSV.
    #[arg(long)]
    svg: bool,
    /// Plot MSE on a log scale.
    #[arg(long)]
    log_scale: bool,
    /// Variant to evaluate (repeatable), e.g. NoInfo or known-in-advance.
    #[arg(long = "variant")]
    variants: Vec<String>,
    /// Evidence used by the averaging variants: `post` or `two`.
    #[arg(long)]
    marginal_mode: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
}

fn seed_from_env() -> Result<Option<u64>, Error> {
    match std::env::var("CPBMA_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("CPBMA_SEED is not an unsigned integer: `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn resolve(args: &CommonArgs, preset: ExperimentConfig) -> Result<ExperimentConfig, Error> {
    let file_text = args.config.as_ref().map(std::fs::read_to_string).transpose()?;
    let file_has_seed = file_text.as_deref().is_some_and(|text| {
        text.lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .any(|(k, _)| k.trim() == "seed")
    });
    let mut cfg = match (&args.config, args.task) {
        (Some(path), None) => ExperimentConfig::from_file(path)?,
        (config, task) => {
            let mut cfg = match task {
                Some(TaskArg::Regression) => ExperimentConfig::for_task(Task::Regression),
                Some(TaskArg::Lds) => ExperimentConfig::for_task(Task::Lds),
                None => preset,
            };
            if config.is_some() {
                cfg.apply_text(file_text.as_deref().unwrap_or(""))?;
            }
            cfg
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    } else if !file_has_seed {
        if let Some(seed) = seed_from_env()? {
            cfg.seed = seed;
        }
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    cfg.svg |= args.svg;
    cfg.log_scale |= args.log_scale;
    if !args.variants.is_empty() {
        cfg.variants = args
            .variants
            .iter()
            .map(|v| v.parse::<Variant>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(mode) = &args.marginal_mode {
        cfg.marginal_mode = parse_marginal_mode(mode)?;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = resolve(&args, ExperimentConfig::regression())?;
            let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("trajectories"));
            let files = simulate(&cfg, &dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        Command::Evaluate(args) => {
            let cfg = resolve(&args, ExperimentConfig::regression())?;
            let table = run_experiment(&cfg)?;
            let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mse.csv"));
            for p in write_outputs(&table, &path, cfg.svg, cfg.log_scale)? {
                println!("wrote {}", p.display());
            }
        }
        Command::SweepC { common, sharpness } => {
            let mut cfg = resolve(&common, ExperimentConfig::sweep())?;
            if !sharpness.is_empty() {
                cfg.sharpness = sharpness;
                cfg.validate()?;
            }
            let table = construction_sweep(&cfg, &cfg.sharpness)?;
            let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("sweep.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            std::fs::write(&path, buf)?;
            for r in &table.rows {
                println!(
                    "C={:<6} median gap {:.3e}  max gap {:.3e}  bound violations {}",
                    r.c, r.median_gap, r.max_gap, r.bound_violations
                );
            }
            println!("monotone: {}", table.monotone);
            println!("wrote {}", path.display());
        }
        Command::Check(args) => {
            let cfg = resolve(&args, ExperimentConfig::regression())?;
            let results = run_checks(cfg.seed)?;
            let mut failed = 0;
            for r in &results {
                println!("{} {:<28} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", results.len());
                return Ok(EXIT_CHECK);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            })
        }
    }
}
