use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scatchain_cli::{run, CliError, CliResult, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "scatchain", version, about = "Run chain-of-scatterers experiments and write CSV/JSON artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Orbits of the static single-channel map.
    Portrait(Common),
    /// Orbits of the single-channel map with random generators.
    NoisyPortrait(Common),
    /// Histogram of the decay rate over a disordered ensemble.
    DecayHist(Common),
    /// Transmission along a chain of identical scatterers.
    Evolve(Common),
    /// Transfer spectrum classification of scattering matrices.
    Classify(Common),
    /// Haar measure of the ballistic and totally localised sets.
    Measure(Common),
    /// Distribution of the largest transfer eigenvalue modulus.
    Pmax(Common),
    /// Distribution of the fraction of eigenvalues outside the unit circle.
    Pu(Common),
    /// Scaling collapse of the largest-modulus distribution.
    Collapse(Common),
    /// Refit measure CSV files.
    Fit(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Without it the built-in default is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed, including any disorder-model seed inside it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out/<experiment>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores. Does not change the artifacts.
    #[arg(long)]
    parallel: Option<usize>,
    /// Evaluate the experiment's acceptance checks; exit 4 on a miss.
    #[arg(long)]
    check: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

impl Command {
    fn split(self) -> (&'static str, Common) {
        match self {
            Command::Portrait(c) => ("portrait", c),
            Command::NoisyPortrait(c) => ("noisy-portrait", c),
            Command::DecayHist(c) => ("decay-hist", c),
            Command::Evolve(c) => ("evolve", c),
            Command::Classify(c) => ("classify", c),
            Command::Measure(c) => ("measure", c),
            Command::Pmax(c) => ("pmax", c),
            Command::Pu(c) => ("pu", c),
            Command::Collapse(c) => ("collapse", c),
            Command::Fit(c) => ("fit", c),
        }
    }
}

fn resolve(name: &str, args: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json_str(&text)?
        }
        None => ExperimentConfig { experiment: Experiment::default_for(name)?, seed: 0, parallel: None, out: None },
    };
    if cfg.experiment.name() != name {
        return Err(CliError::Config(format!("config is for \"{}\", not \"{name}\"", cfg.experiment.name())));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.parallel {
        cfg.parallel = Some(p);
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (name, args) = Cli::parse().command.split();
    let cfg = match resolve(name, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if args.print_config {
        println!("{}", cfg.to_json_string());
        return ExitCode::SUCCESS;
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    let summary = match run(&cfg, &out) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    println!("{name}: {} artifacts in {} (config {})", summary.artifacts.len(), out.display(), &cfg.hash()[..12]);
    if args.check {
        for c in &summary.checks {
            println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        if !summary.all_pass() {
            return ExitCode::from(4);
        }
    }
    ExitCode::SUCCESS
}
