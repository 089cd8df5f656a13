//! The subcommands. Each takes resolved settings and writes its files into
//! an output directory; `main` only parses arguments and maps errors to exit
//! codes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use depgem::analysis::{
    cpo, diversity_curve, dissimilarity_curve, ecx_table, write_cpo_csv, write_curve_csv, write_ecx_csv,
    DiversityIndex, EcxEstimate, Interval,
};
use depgem::data::{jitter_covariates, load_counts, SpeciesCountTable};
use depgem::mcmc::{
    diagnostics, read_draws, run_chain_with, write_draw, write_trace_csv, ChainSamples, Draw, LatentState,
    RunManifest,
};
use depgem::oracles::{default_suite, OracleResult, SuiteOptions};
use depgem::predictive::{map_predictive_at, PredictiveGrid, PredictiveMode, PredictiveOptions};
use depgem::simulate::{simulate, SimulationSpec};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DRAWS_FILE: &str = "draws.ndjson";

/// `manifest.json` of a fit: the sampler manifest plus what the analysis
/// commands need to rebuild the same inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub version: String,
    #[serde(flatten)]
    pub run: RunManifest,
    pub run_config: RunConfig,
    pub config_text: String,
    /// Covariates as read from the data file, before jittering.
    pub raw_covariates: Vec<f64>,
    pub baseline_sites: Vec<usize>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

fn scalar_copy(d: &Draw) -> Draw {
    Draw {
        iteration: d.iteration,
        state: LatentState {
            z: DMatrix::zeros(0, 0),
            sigma_z: d.state.sigma_z,
            lambda: d.state.lambda,
            m: d.state.m,
        },
        log_posterior: d.log_posterior,
    }
}

/// Fits the model to `data` and writes `draws.ndjson`, `trace.csv`,
/// `diagnostics.csv`, `acf.csv` and `manifest.json` into `out`.
pub fn fit(data: &Path, cfg: &RunConfig, config_text: &str, out: &Path) -> Result<FitManifest> {
    cfg.validate()?;
    create_dir(out)?;
    let table = load_counts(data, cfg.load_options())?;
    let raw = table.covariates().to_vec();
    let table = match cfg.jitter_spec() {
        Some(spec) => {
            let x = jitter_covariates(&raw, &spec);
            table.with_covariates(x)?
        }
        None => table,
    };
    let baseline_sites: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] <= cfg.analysis.baseline_max).collect();
    info!(
        "fitting {} sites x {} species, {} iterations",
        table.n_sites(),
        table.n_species(),
        cfg.mcmc.iterations
    );

    let config = cfg.sampler_config();
    let draws_path = out.join(DRAWS_FILE);
    let mut writer = create(&draws_path)?;
    let mut scalars = Vec::with_capacity(config.n_draws());
    let summary = run_chain_with(&table, &config, |d| {
        write_draw(&mut writer, d)?;
        scalars.push(scalar_copy(d));
        Ok(())
    })?;
    writer.flush().map_err(|e| CliError::io(&draws_path, e))?;
    drop(writer);
    info!("{} draws in {:.1} s", summary.n_draws, summary.wall_time_secs);

    let chain = ChainSamples {
        draws: scalars,
        config: config.clone(),
        acceptance: summary.acceptance.clone(),
        scales: summary.scales.clone(),
    };
    write_diagnostics(&chain, out)?;

    let data_file = std::fs::canonicalize(data).map_err(|e| CliError::io(data, e))?;
    let manifest = FitManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        run: RunManifest {
            config,
            n_sites: table.n_sites(),
            n_species: table.n_species(),
            site_ids: table.site_ids().to_vec(),
            species_ids: table.species_ids().to_vec(),
            covariates: table.covariates().to_vec(),
            n_draws: summary.n_draws,
            acceptance: summary.acceptance,
            scales: summary.scales,
            wall_time_secs: summary.wall_time_secs,
            data_file: data_file.display().to_string(),
            data_sha256: sha256_file(&data_file)?,
            draws_file: DRAWS_FILE.to_string(),
            draws_sha256: sha256_file(&draws_path)?,
        },
        run_config: cfg.clone(),
        config_text: config_text.to_string(),
        raw_covariates: raw,
        baseline_sites,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_diagnostics(chain: &ChainSamples, out: &Path) -> Result<()> {
    let trace = out.join("trace.csv");
    write_trace_csv(chain, create(&trace)?)?;
    if chain.len() < 10 {
        warn!("only {} draws; skipping diagnostics", chain.len());
        return Ok(());
    }
    let diag = diagnostics(chain)?;
    for p in &diag.params {
        if p.ess < 100.0 {
            warn!("effective sample size of {} is {:.0}", p.name, p.ess);
        }
    }
    let path = out.join("diagnostics.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["param", "mean", "sd", "ess"]).map_err(|e| csv_error(&path, e))?;
    for p in &diag.params {
        w.write_record([p.name.clone(), p.mean.to_string(), p.sd.to_string(), p.ess.to_string()])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = out.join("acf.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["lag".to_string()];
    header.extend(diag.params.iter().map(|p| p.name.clone()));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    let n_lags = diag.params.iter().map(|p| p.acf.len()).min().unwrap_or(0);
    for lag in 0..n_lags {
        let mut row = vec![lag.to_string()];
        row.extend(diag.params.iter().map(|p| p.acf[lag].to_string()));
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

/// A fit read back from its directory, with hashes checked.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: FitManifest,
    pub table: SpeciesCountTable,
    pub draws: Vec<Draw>,
}

impl LoadedRun {
    pub fn config(&self) -> &RunConfig {
        &self.manifest.run_config
    }

    pub fn baseline_covariates(&self) -> Vec<f64> {
        let x = self.table.covariates();
        self.manifest.baseline_sites.iter().map(|&i| x[i]).collect()
    }
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let path = dir.join(MANIFEST_FILE);
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: FitManifest = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
    let run = &manifest.run;

    let data = Path::new(&run.data_file);
    let data_hash = sha256_file(data)?;
    if data_hash != run.data_sha256 {
        return Err(CliError::Manifest(format!(
            "{} has changed since the fit (sha256 {data_hash}, manifest {})",
            data.display(),
            run.data_sha256
        )));
    }
    let draws_path = dir.join(&run.draws_file);
    let draws_hash = sha256_file(&draws_path)?;
    if draws_hash != run.draws_sha256 {
        return Err(CliError::Manifest(format!(
            "{} has changed since the fit (sha256 {draws_hash}, manifest {})",
            draws_path.display(),
            run.draws_sha256
        )));
    }

    let table = load_counts(data, manifest.run_config.load_options())?;
    if table.site_ids() != run.site_ids.as_slice() || table.species_ids() != run.species_ids.as_slice() {
        return Err(CliError::Manifest(
            "site or species identifiers differ from the manifest".into(),
        ));
    }
    let table = table.with_covariates(run.covariates.clone())?;
    let file = File::open(&draws_path).map_err(|e| CliError::io(&draws_path, e))?;
    let draws = read_draws(BufReader::new(file))?;
    if draws.len() != run.n_draws {
        return Err(CliError::Manifest(format!(
            "{} holds {} draws, manifest says {}",
            draws_path.display(),
            draws.len(),
            run.n_draws
        )));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        table,
        draws,
    })
}

/// Command-line overrides of the `[grid]` and `[analysis]` sections stored
/// with the fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisOverrides {
    pub out: Option<PathBuf>,
    pub index: Option<DiversityIndex>,
    pub ec_levels: Option<Vec<f64>>,
    pub grid_points: Option<usize>,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub mode: Option<PredictiveMode>,
    pub seed: Option<u64>,
}

/// Settings an analysis actually used; recorded next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub mode: PredictiveMode,
    pub seed: u64,
}

struct Analysis {
    run: LoadedRun,
    out: PathBuf,
    grid: PredictiveGrid,
    options: PredictiveOptions,
    settings: AnalysisSettings,
}

impl Analysis {
    fn new(run_dir: &Path, o: &AnalysisOverrides) -> Result<Self> {
        let run = load_run(run_dir)?;
        let cfg = run.config();
        let raw = &run.manifest.raw_covariates;
        let lo = o
            .grid_min
            .or(cfg.grid.min)
            .unwrap_or_else(|| raw.iter().copied().fold(f64::INFINITY, f64::min));
        let hi = o
            .grid_max
            .or(cfg.grid.max)
            .unwrap_or_else(|| raw.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let points = o.grid_points.unwrap_or(cfg.grid.points);
        if points < 2 || !(lo < hi) {
            return Err(CliError::Config(format!(
                "prediction grid [{lo}, {hi}] with {points} points is empty"
            )));
        }
        let grid = PredictiveGrid::linspace(lo, hi, points, run.table.covariates())?;
        let mut options = PredictiveOptions::new(run.manifest.run.config.family, o.seed.unwrap_or(cfg.analysis.seed));
        options.mode = o.mode.unwrap_or(cfg.analysis.predictive_mode);
        let settings = AnalysisSettings {
            grid_min: lo,
            grid_max: hi,
            grid_points: points,
            mode: options.mode,
            seed: options.seed,
        };
        let out = o.out.clone().unwrap_or_else(|| run.dir.clone());
        create_dir(&out)?;
        Ok(Self {
            run,
            out,
            grid,
            options,
            settings,
        })
    }

    fn finish<T: Serialize>(&self, command: &str, outputs: &[&str], extra: T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Output {
            file: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct AnalysisManifest<'a, T> {
            command: &'a str,
            version: &'a str,
            manifest_sha256: String,
            data_sha256: &'a str,
            draws_sha256: &'a str,
            settings: &'a AnalysisSettings,
            outputs: Vec<Output>,
            result: T,
        }
        let outputs = outputs
            .iter()
            .map(|f| {
                Ok(Output {
                    file: f.to_string(),
                    sha256: sha256_file(&self.out.join(f))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = AnalysisManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            manifest_sha256: sha256_file(&self.run.dir.join(MANIFEST_FILE))?,
            data_sha256: &self.run.manifest.run.data_sha256,
            draws_sha256: &self.run.manifest.run.draws_sha256,
            settings: &self.settings,
            outputs,
            result: extra,
        };
        let path = self.out.join(format!("{command}.manifest.json"));
        write_json(&path, &m)?;
        Ok(path)
    }
}

const PREDICT_CHUNK: usize = 256;

/// Posterior mean and standard deviation of every species weight along the
/// grid: `predictive.csv` with columns `grid,species,mean,sd`.
pub fn predict(run_dir: &Path, o: &AnalysisOverrides) -> Result<PathBuf> {
    let a = Analysis::new(run_dir, o)?;
    let draws = &a.run.draws;
    let n_star = a.grid.len();
    let n_species = a.run.table.n_species();
    let mut sum = vec![0.0; n_star * n_species];
    let mut sum_sq = vec![0.0; n_star * n_species];
    for (c, chunk) in draws.chunks(PREDICT_CHUNK).enumerate() {
        let per_draw = map_predictive_at(
            chunk,
            c * PREDICT_CHUNK,
            a.run.table.covariates(),
            &a.grid,
            &a.options,
            |_, profiles| profiles,
        )?;
        for profiles in per_draw {
            for (s, p) in profiles.iter().enumerate() {
                for (j, w) in p.weights.iter().enumerate() {
                    sum[s * n_species + j] += w;
                    sum_sq[s * n_species + j] += w * w;
                }
            }
        }
    }
    let t = draws.len() as f64;
    let path = a.out.join("predictive.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["grid", "species", "mean", "sd"]).map_err(|e| csv_error(&path, e))?;
    for (s, x) in a.grid.points().iter().enumerate() {
        for (j, id) in a.run.table.species_ids().iter().enumerate() {
            let k = s * n_species + j;
            let mean = sum[k] / t;
            let var = if t > 1.0 {
                ((sum_sq[k] - t * mean * mean) / (t - 1.0)).max(0.0)
            } else {
                0.0
            };
            w.write_record([x.to_string(), id.clone(), mean.to_string(), var.sqrt().to_string()])
                .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    drop(w);
    a.finish("predict", &["predictive.csv"], ())
}

/// `diversity.csv` (`grid,mean,lo95,hi95`) and `empirical.csv`
/// (`covariate,value`) for the chosen index.
pub fn diversity(run_dir: &Path, o: &AnalysisOverrides) -> Result<PathBuf> {
    let a = Analysis::new(run_dir, o)?;
    let index = match o.index {
        Some(i) => i,
        None => a.run.config().index()?,
    };
    let curve = diversity_curve(&a.run.draws, &a.run.table, &a.grid, index, &a.options)?;
    write_curve_csv(&curve, create(&a.out.join("diversity.csv"))?)?;

    let path = a.out.join("empirical.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["covariate", "value"]).map_err(|e| csv_error(&path, e))?;
    for (x, v) in &curve.empirical_points {
        w.write_record([x.to_string(), v.to_string()]).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    drop(w);

    #[derive(Serialize)]
    struct Extra {
        index: String,
    }
    a.finish(
        "diversity",
        &["diversity.csv", "empirical.csv"],
        Extra {
            index: index.to_string(),
        },
    )
}

/// `dissimilarity.csv` (`grid,mean,lo95,hi95`), `ecx.csv`
/// (`x,ec,ci_lo,ci_hi`) and the baseline dissimilarity in the manifest.
pub fn ecx(run_dir: &Path, o: &AnalysisOverrides) -> Result<PathBuf> {
    let a = Analysis::new(run_dir, o)?;
    let baseline = a.run.baseline_covariates();
    if baseline.len() < 2 {
        return Err(CliError::Config(format!(
            "{} sites at or below analysis.baseline_max = {}; need at least 2",
            baseline.len(),
            a.run.config().analysis.baseline_max
        )));
    }
    let levels = o
        .ec_levels
        .clone()
        .unwrap_or_else(|| a.run.config().analysis.ec_levels.clone());
    let dc = dissimilarity_curve(&a.run.draws, a.run.table.covariates(), &a.grid, &baseline, &a.options)?;
    write_curve_csv(&dc.curve, create(&a.out.join("dissimilarity.csv"))?)?;
    let table = ecx_table(&dc.curve, dc.jac0.mean, &levels)?;
    write_ecx_csv(&table, create(&a.out.join("ecx.csv"))?)?;
    for e in table.iter().filter(|e| !e.reached) {
        warn!("mean dissimilarity never reaches EC{} within the grid", e.x_percent);
    }

    #[derive(Serialize)]
    struct Extra {
        jac0: Interval,
        baseline_sites: Vec<usize>,
        ecx: Vec<EcxEstimate>,
    }
    a.finish(
        "ecx",
        &["dissimilarity.csv", "ecx.csv"],
        Extra {
            jac0: dc.jac0,
            baseline_sites: a.run.manifest.baseline_sites.clone(),
            ecx: table,
        },
    )
}

/// `cpo.csv` (`species,log_cpo`) with the mean and median in the manifest.
pub fn cpo_command(run_dir: &Path, o: &AnalysisOverrides) -> Result<PathBuf> {
    let a = Analysis::new(run_dir, o)?;
    let report = cpo(&a.run.draws, &a.run.table)?;
    write_cpo_csv(&report, a.run.table.species_ids(), create(&a.out.join("cpo.csv"))?)?;
    if !report.degenerate.is_empty() {
        warn!(
            "{} species have draws with zero likelihood; their CPO is 0",
            report.degenerate.len()
        );
    }

    #[derive(Serialize)]
    struct Extra {
        mean_log_cpo: f64,
        median_log_cpo: f64,
        degenerate_species: Vec<String>,
    }
    a.finish(
        "cpo",
        &["cpo.csv"],
        Extra {
            mean_log_cpo: report.mean_log_cpo,
            median_log_cpo: report.median_log_cpo,
            degenerate_species: report
                .degenerate
                .iter()
                .map(|(j, _)| a.run.table.species_ids()[*j].clone())
                .collect(),
        },
    )
}

/// Writes `data.csv` (wide counts) and `truth.json` (spec, sampled
/// covariates and generating weights).
pub fn simulate_command(spec: &SimulationSpec, out: &Path) -> Result<()> {
    create_dir(out)?;
    let sim = simulate(spec)?;
    let path = out.join("data.csv");
    let mut w = create(&path)?;
    sim.table.write_wide(&mut w)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;

    #[derive(Serialize)]
    struct Truth<'a> {
        spec: &'a SimulationSpec,
        covariates: &'a [f64],
        sampled_covariates: &'a [f64],
        weights: Vec<&'a [f64]>,
    }
    write_json(
        &out.join("truth.json"),
        &Truth {
            spec,
            covariates: sim.table.covariates(),
            sampled_covariates: &sim.sampled_covariates,
            weights: sim.weights.iter().map(|p| p.weights.as_slice()).collect(),
        },
    )
}

/// Budgets below these make the oracle suite too noisy to mean much.
pub const MIN_SCALAR_DRAWS: usize = 1_000_000;
pub const MIN_PARTITION_DRAWS: usize = 100_000;

pub fn verify(options: &SuiteOptions) -> Result<Vec<OracleResult>> {
    if options.n_scalar < MIN_SCALAR_DRAWS || options.n_partition < MIN_PARTITION_DRAWS {
        warn!("inconclusive: budget below {MIN_SCALAR_DRAWS} scalar / {MIN_PARTITION_DRAWS} partition draws");
    }
    Ok(default_suite(options)?)
}

pub fn oracle_table(results: &[OracleResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<4}  {:<width$}  closed {:>12.6e}  mc {:>12.6e}  se {:>10.3e}  z {:>7.2}\n",
            if r.pass { "ok" } else { "FAIL" },
            r.name,
            r.closed_form,
            r.mc_estimate,
            r.se,
            r.z_score,
        ));
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

pub fn oracle_outcome(results: &[OracleResult]) -> Result<()> {
    let failed = results.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        Err(CliError::OracleFailure {
            failed,
            total: results.len(),
        })
    } else {
        Ok(())
    }
}
