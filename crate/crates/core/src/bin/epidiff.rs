use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epidiff::contrast::EstimationReport;
use epidiff::scenario::{self, ScenarioConfig, PRESETS};
use epidiff::Error;

#[derive(Parser)]
#[command(name = "epidiff", version, about = "Contrast estimation for epidemic jump processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Farm {
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured number of replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a replicate farm and write paths plus a manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        farm: Farm,
    },
    /// Fit every analyzed path of a simulated farm.
    Estimate {
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the estimator options of the stored configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write ellipse polylines, either theoretical (from a configuration) or
    /// from a saved estimation report.
    Ellipse {
        #[arg(long, conflicts_with = "report", required_unless_present = "report")]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Run a preset of the simulation study end to end.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write every simulated path.
        #[arg(long)]
        keep_paths: bool,
        #[command(flatten)]
        farm: Farm,
    },
}

enum Failure {
    Config(String),
    Estimation(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) | Error::UnknownModel(_) | Error::ParamDomain { .. } => {
                Failure::Config(e.to_string())
            }
            other => Failure::Other(other.to_string()),
        }
    }
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    Ok(())
}

fn apply_farm(cfg: &mut ScenarioConfig, farm: &Farm) -> Result<(), Failure> {
    if let Some(s) = farm.seed {
        cfg.seed = s;
    }
    if let Some(r) = farm.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    Ok(())
}

fn check(summary: &scenario::RunSummary) -> Result<(), Failure> {
    eprintln!(
        "{}: {} fits, {} failed ({:.1}%)",
        summary.scenario,
        summary.fits,
        summary.failed_fits,
        100.0 * summary.failure_rate
    );
    if summary.exceeds_threshold() {
        return Err(Failure::Estimation(format!(
            "{}: failure rate {:.3} above {:.3}",
            summary.scenario, summary.failure_rate, summary.failure_threshold
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out, farm } => {
            set_jobs(farm.jobs)?;
            let mut cfg = ScenarioConfig::load(&config)?;
            apply_farm(&mut cfg, &farm)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            let ensemble = scenario::simulate_ensemble(&cfg)?;
            let manifest = scenario::write_ensemble(&cfg, &ensemble, &out)?;
            for c in &manifest.counts {
                eprintln!("{}: {} paths, {} excluded", c.scheme.as_str(), c.total, c.excluded);
            }
        }
        Command::Estimate { data, out, config, jobs } => {
            set_jobs(jobs)?;
            let (manifest, ensemble) = scenario::read_ensemble(&data)?;
            let mut cfg = manifest.config;
            if let Some(path) = config {
                cfg.estimator = ScenarioConfig::load(&path)?.estimator;
                cfg.validate()?;
            }
            let fits = scenario::estimate_ensemble(&cfg, &ensemble)?;
            check(&scenario::write_estimates(&cfg, &ensemble, &fits, &out)?)?;
        }
        Command::Ellipse { config, report, out, level } => {
            let ellipses = if let Some(path) = config {
                let cfg = ScenarioConfig::load(&path)?;
                let th = scenario::theory(&cfg)?;
                (cfg.name, scenario::theory_ellipses(&th, level)?)
            } else {
                let path = report.expect("clap enforces one source");
                let file = File::open(&path).map_err(Error::from)?;
                let r: EstimationReport = serde_json::from_reader(file).map_err(Error::from)?;
                let rebuilt = r.with_level(level)?;
                let label = r.diagnostics.n.to_string();
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let list = rebuilt
                    .ellipsoids
                    .into_iter()
                    .map(|e| (label.clone(), r.diagnostics.estimator.clone(), e))
                    .collect::<Vec<_>>();
                (name, list)
            };
            let file = File::create(&out).map_err(Error::from)?;
            scenario::write_ellipses(&ellipses.0, &ellipses.1, BufWriter::new(file))?;
        }
        Command::Reproduce { preset, out, keep_paths, farm } => {
            set_jobs(farm.jobs)?;
            let mut failed = Vec::new();
            for mut cfg in scenario::preset(&preset)? {
                apply_farm(&mut cfg, &farm)?;
                let dir = scenario::scenario_dir(&out, &cfg);
                eprintln!("running {} -> {}", cfg.name, dir.display());
                let summary = scenario::run_scenario(&cfg, &dir, keep_paths)?;
                if let Err(Failure::Estimation(msg)) = check(&summary) {
                    failed.push(msg);
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Estimation(failed.join("; ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("epidiff: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(msg)) => {
            eprintln!("epidiff: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("epidiff: {msg}");
            ExitCode::from(1)
        }
    }
}
