use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use depgem::analysis::DiversityIndex;
use depgem::kernels::KernelFamily;
use depgem::mcmc::HastingsMode;
use depgem::oracles::SuiteOptions;
use depgem::predictive::PredictiveMode;
use depgem::simulate::SimulationSpec;
use depgem_cli::commands::{self, AnalysisOverrides};
use depgem_cli::config::RunConfig;
use depgem_cli::{CliError, Result};

/// Dependent-GEM species abundance models along a covariate.
#[derive(Parser)]
#[command(name = "depgem", version)]
struct Cli {
    /// Worker threads for the sampler and the predictive computations.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler on a count table.
    Fit {
        /// Long (`site,covariate,species,count`) or wide CSV.
        #[arg(long)]
        data: PathBuf,
        /// TOML run configuration; defaults apply to anything missing.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        kernel: Option<KernelFamily>,
    },
    /// Posterior mean and sd of every species weight along the grid.
    Predict(AnalysisArgs),
    /// Posterior diversity curve with 95% band.
    Diversity {
        #[command(flatten)]
        args: AnalysisArgs,
        /// `simpson`, `shannon` or `good:ALPHA,BETA`.
        #[arg(long)]
        index: Option<DiversityIndex>,
    },
    /// Dissimilarity to the baseline community and effective concentrations.
    Ecx {
        #[command(flatten)]
        args: AnalysisArgs,
        /// Percent levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Per-species conditional predictive ordinates.
    Cpo(AnalysisArgs),
    /// Draw a synthetic count table from the prior.
    Simulate {
        /// TOML simulation spec; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long)]
        species: Option<usize>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        sigma_z: Option<f64>,
        #[arg(long)]
        n_per_site: Option<u64>,
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long)]
        baseline: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the Monte Carlo oracle suite against the closed forms.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = commands::MIN_SCALAR_DRAWS)]
        n_scalar: usize,
        #[arg(long, default_value_t = commands::MIN_PARTITION_DRAWS)]
        n_partition: usize,
        /// Drop the truncation correction from the sampler; the prior
        /// recovery check is expected to fail.
        #[arg(long)]
        break_hastings: bool,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AnalysisArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    /// `pointwise` or `joint`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PredictiveMode>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> std::result::Result<PredictiveMode, String> {
    match s {
        "pointwise" => Ok(PredictiveMode::Pointwise),
        "joint" => Ok(PredictiveMode::Joint),
        _ => Err(format!("unknown predictive mode `{s}`")),
    }
}

impl AnalysisArgs {
    fn overrides(&self) -> AnalysisOverrides {
        AnalysisOverrides {
            out: self.out.clone(),
            grid_points: self.grid_points,
            grid_min: self.grid_min,
            grid_max: self.grid_max,
            mode: self.mode,
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Fit {
            data,
            config,
            out,
            iterations,
            burn_in,
            thin,
            seed,
            kernel,
        } => {
            let (mut cfg, text) = match &config {
                Some(p) => RunConfig::load(p)?,
                None => (RunConfig::default(), String::new()),
            };
            let m = &mut cfg.mcmc;
            m.iterations = iterations.unwrap_or(m.iterations);
            m.burn_in = burn_in.unwrap_or(m.burn_in);
            m.thin = thin.unwrap_or(m.thin);
            m.seed = seed.unwrap_or(m.seed);
            m.threads = cli.threads.unwrap_or(m.threads);
            cfg.model.kernel = kernel.unwrap_or(cfg.model.kernel);
            if let Some(out) = out {
                cfg.output.dir = out;
            }
            let out = cfg.output.dir.clone();
            commands::fit(&data, &cfg, &text, &out)?;
            println!("{}", out.join(commands::MANIFEST_FILE).display());
        }
        Command::Predict(args) => {
            println!("{}", commands::predict(&args.run, &args.overrides())?.display());
        }
        Command::Diversity { args, index } => {
            let o = AnalysisOverrides {
                index,
                ..args.overrides()
            };
            println!("{}", commands::diversity(&args.run, &o)?.display());
        }
        Command::Ecx { args, levels } => {
            if let Some(x) = levels.iter().flatten().find(|x| !(0.0..=100.0).contains(*x)) {
                return Err(CliError::Config(format!("EC level {x} outside [0, 100]")));
            }
            let o = AnalysisOverrides {
                ec_levels: levels,
                ..args.overrides()
            };
            println!("{}", commands::ecx(&args.run, &o)?.display());
        }
        Command::Cpo(args) => {
            println!("{}", commands::cpo_command(&args.run, &args.overrides())?.display());
        }
        Command::Simulate {
            config,
            out,
            sites,
            species,
            m,
            lambda,
            sigma_z,
            n_per_site,
            x_max,
            baseline,
            seed,
        } => {
            let mut spec: SimulationSpec = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Io {
                        path: p.display().to_string(),
                        source: e,
                    })?;
                    toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => SimulationSpec::default(),
            };
            spec.n_sites = sites.unwrap_or(spec.n_sites);
            spec.n_species = species.unwrap_or(spec.n_species);
            spec.m = m.unwrap_or(spec.m);
            spec.lambda = lambda.unwrap_or(spec.lambda);
            spec.sigma_z = sigma_z.unwrap_or(spec.sigma_z);
            spec.n_per_site = n_per_site.unwrap_or(spec.n_per_site);
            spec.x_max = x_max.unwrap_or(spec.x_max);
            spec.n_baseline = baseline.unwrap_or(spec.n_baseline);
            spec.seed = seed.unwrap_or(spec.seed);
            commands::simulate_command(&spec, &out)?;
            println!("{}", out.join("data.csv").display());
        }
        Command::Verify {
            seed,
            n_scalar,
            n_partition,
            break_hastings,
            json,
        } => {
            let mut options = SuiteOptions {
                seed,
                n_scalar,
                n_partition,
                ..Default::default()
            };
            if break_hastings {
                options.prior_recovery.hastings = HastingsMode::OmitTruncationCorrection;
            }
            let results = commands::verify(&options)?;
            print!("{}", commands::oracle_table(&results));
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&results)?;
                std::fs::write(&path, text).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
            }
            commands::oracle_outcome(&results)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
