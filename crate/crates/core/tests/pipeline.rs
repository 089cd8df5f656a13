use depgem::analysis::{
    cpo, dissimilarity_curve, diversity_curve, ecx_table, simpson, DiversityIndex,
};
use depgem::data::{load_counts, parse_counts, LoadOptions};
use depgem::mcmc::{diagnostics, run_chain, SamplerConfig};
use depgem::predictive::{sample_predictive, PredictiveGrid, PredictiveMode, PredictiveOptions};
use depgem::simulate::{simulate, SimulationSpec};

fn small_spec(seed: u64) -> SimulationSpec {
    SimulationSpec {
        n_sites: 7,
        n_species: 9,
        m: 2.0,
        lambda: 30.0,
        n_per_site: 150,
        x_max: 100.0,
        n_baseline: 3,
        jitter_sigma: Some(2.0),
        seed,
        ..SimulationSpec::default()
    }
}

#[test]
fn csv_round_trip_then_fit_and_summaries() {
    let sim = simulate(&small_spec(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let long = dir.path().join("long.csv");
    sim.table.write_long(std::fs::File::create(&long).unwrap()).unwrap();
    let mut wide = Vec::new();
    sim.table.write_wide(&mut wide).unwrap();

    let a = load_counts(&long, LoadOptions::default()).unwrap();
    let b = parse_counts(wide.as_slice(), LoadOptions::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.is_canonical());
    let totals = a.species_totals();
    assert!(totals.windows(2).all(|w| w[0] >= w[1]));

    let table = a.with_covariates(sim.sampled_covariates.clone()).unwrap();
    let chain = run_chain(&table, &SamplerConfig::new(1500, 500, 5, 9)).unwrap();
    assert_eq!(chain.len(), 200);
    let diag = diagnostics(&chain).unwrap();
    assert!(diag.params.iter().all(|p| p.ess > 0.0 && p.sd.is_finite()));

    let grid = PredictiveGrid::linspace(0.0, 100.0, 11, table.covariates()).unwrap();
    let options = PredictiveOptions::new(chain.config.family, 3);
    let curve = diversity_curve(&chain.draws, &table, &grid, DiversityIndex::Simpson, &options).unwrap();
    assert!(curve.mean.iter().all(|v| (0.0..1.0).contains(v)));
    assert_eq!(curve.empirical_points.len(), table.n_sites());

    let baseline: Vec<f64> = table.covariates()[..3].to_vec();
    let dc = dissimilarity_curve(&chain.draws, table.covariates(), &grid, &baseline, &options).unwrap();
    assert!(dc.jac0.lo95 <= dc.jac0.mean && dc.jac0.mean <= dc.jac0.hi95);
    let ec = ecx_table(&dc.curve, dc.jac0.mean, &[10.0, 50.0, 90.0]).unwrap();
    assert!(ec.windows(2).all(|w| w[0].ec <= w[1].ec));

    let report = cpo(&chain.draws, &table).unwrap();
    assert_eq!(report.per_species_log_cpo.len(), table.n_species());
    assert!(report.per_species_log_cpo.iter().all(|c| *c < 0.0));
}

#[test]
fn predictive_is_reproducible_and_mode_consistent() {
    let sim = simulate(&small_spec(8)).unwrap();
    let table = sim.table.clone().with_covariates(sim.sampled_covariates.clone()).unwrap();
    let chain = run_chain(&table, &SamplerConfig::new(400, 200, 20, 1)).unwrap();
    let grid = PredictiveGrid::linspace(10.0, 90.0, 5, table.covariates()).unwrap();
    let mut options = PredictiveOptions::new(chain.config.family, 17);
    let first = sample_predictive(&chain.draws, table.covariates(), &grid, &options).unwrap();
    let again = sample_predictive(&chain.draws, table.covariates(), &grid, &options).unwrap();
    assert_eq!(first, again);
    for profiles in &first {
        assert_eq!(profiles.len(), 5);
        for p in profiles {
            assert!((p.total() - 1.0).abs() < 1e-12);
            assert!((0.0..1.0).contains(&simpson(p)));
        }
    }
    options.mode = PredictiveMode::Joint;
    let joint = sample_predictive(&chain.draws, table.covariates(), &grid, &options).unwrap();
    assert_eq!(joint.len(), first.len());
}

#[test]
fn thread_count_does_not_change_results() {
    let sim = simulate(&small_spec(2)).unwrap();
    let mut config = SamplerConfig::new(300, 100, 10, 5);
    let one = run_chain(&sim.table, &config).unwrap();
    config.threads = 3;
    let three = run_chain(&sim.table, &config).unwrap();
    assert_eq!(one.draws, three.draws);
}
