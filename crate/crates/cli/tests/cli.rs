use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn depgem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depgem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulated(dir: &Path) -> PathBuf {
    let out = dir.join("sim");
    let o = depgem(&[
        "simulate", "--out", s(&out), "--sites", "8", "--species", "10", "--baseline", "3", "--x-max", "100",
        "--lambda", "50", "--n-per-site", "200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("data.csv")
}

fn fit(data: &Path, out: &Path) {
    let o = depgem(&[
        "fit", "--data", s(data), "--out", s(out), "--iterations", "400", "--burn-in", "100", "--thin", "3",
        "--seed", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn analyse(run: &Path) {
    for cmd in ["predict", "diversity", "ecx", "cpo"] {
        let o = depgem(&[cmd, "--run", s(run), "--grid-points", "25"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn fit_and_analyse_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path());
    let run = tmp.path().join("run");
    fit(&data, &run);
    analyse(&run);

    assert_eq!(read(&run.join("draws.ndjson")).lines().count(), 100);
    assert!(read(&run.join("trace.csv")).starts_with("iteration,sigma_z,lambda,m,log_posterior\n"));
    assert!(read(&run.join("diagnostics.csv")).starts_with("param,mean,sd,ess\n"));
    let predictive = read(&run.join("predictive.csv"));
    assert!(predictive.starts_with("grid,species,mean,sd\n"));
    assert_eq!(predictive.lines().count(), 1 + 25 * 10);
    assert_eq!(read(&run.join("diversity.csv")).lines().count(), 26);
    assert_eq!(read(&run.join("empirical.csv")).lines().count(), 9);
    let ecx = read(&run.join("ecx.csv"));
    assert!(ecx.starts_with("x,ec,ci_lo,ci_hi\n"));
    assert_eq!(ecx.lines().count(), 4);
    assert_eq!(read(&run.join("cpo.csv")).lines().count(), 11);

    let m: serde_json::Value = serde_json::from_str(&read(&run.join("ecx.manifest.json"))).unwrap();
    assert_eq!(m["result"]["baseline_sites"], serde_json::json!([0, 1, 2]));
    let jac0 = m["result"]["jac0"]["mean"].as_f64().unwrap();
    assert!(jac0 > 0.0 && jac0 < 1.0);
}

#[test]
fn outputs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    fit(&data, &a);
    fit(&data, &b);
    analyse(&a);
    analyse(&b);
    for f in [
        "draws.ndjson", "trace.csv", "diagnostics.csv", "predictive.csv", "diversity.csv", "dissimilarity.csv",
        "ecx.csv", "cpo.csv",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
}

#[test]
fn changed_inputs_are_refused() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path());
    let run = tmp.path().join("run");
    fit(&data, &run);

    let draws = run.join("draws.ndjson");
    let original = read(&draws);
    std::fs::write(&draws, original.replacen("\"m\":", "\"m\": ", 1)).unwrap();
    let o = depgem(&["cpo", "--run", s(&run)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest mismatch"));
    std::fs::write(&draws, original).unwrap();

    let text = read(&data);
    std::fs::write(&data, text.replacen(",0,", ",1,", 1)).unwrap();
    let o = depgem(&["diversity", "--run", s(&run)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest mismatch"));
}

#[test]
fn bad_inputs_exit_with_code_one() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path());
    let out = tmp.path().join("run");

    let o = depgem(&["fit", "--data", s(&tmp.path().join("missing.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[mcmc]\niterations = 100\nburn_in = 200\n").unwrap();
    let o = depgem(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&cfg, "[mcmc]\nsweeps = 100\n").unwrap();
    let o = depgem(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let negative = tmp.path().join("neg.csv");
    std::fs::write(&negative, "site,covariate,species,count\na,0,x,3\nb,1,x,-2\n").unwrap();
    let o = depgem(&["fit", "--data", s(&negative), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let o = depgem(&["ecx", "--run", s(&out), "--levels", "150"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_drives_the_fit() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path());
    let cfg = tmp.path().join("run.toml");
    let out = tmp.path().join("from-config");
    std::fs::write(
        &cfg,
        format!(
            "[model]\nkernel = \"ou\"\n[mcmc]\niterations = 300\nburn_in = 100\nthin = 4\n\
             [jitter]\nsigma = 0.5\n[analysis]\nbaseline_max = 0.0\n[output]\ndir = \"{}\"\n",
            s(&out)
        ),
    )
    .unwrap();
    let o = depgem(&["fit", "--data", s(&data), "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(m["n_draws"], 50);
    assert_eq!(m["config"]["family"], "ou");
    let x = m["covariates"].as_array().unwrap();
    let raw = m["raw_covariates"].as_array().unwrap();
    assert!(x.iter().zip(raw).any(|(a, b)| a != b));
}

#[test]
fn verify_fails_with_broken_hastings() {
    let o = depgem(&["verify", "--n-scalar", "100000", "--n-partition", "10000", "--break-hastings"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL") && l.contains("prior recovery")));
    assert!(String::from_utf8_lossy(&o.stderr).contains("inconclusive"));
}
