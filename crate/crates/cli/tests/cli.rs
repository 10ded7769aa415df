use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mvplc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvplc")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

const TESTS: &str = r#"[[test]]
label = "reference"
kind = "dichotomous"

[[test]]
label = "index"
kind = "dichotomous"

[[test]]
label = "score"
kind = "ordinal"
categories = 3
"#;

const POPULATION: &str = r#"
[population]
mu = [[-1.6, 1.2], [-1.0, 0.8], [-0.3, 0.9]]
sigma = [[0.3, 0.3], [0.4, 0.3], [0.3, 0.4]]
rho = [0.0, -0.2, 0.1]
kappa = [[], [], [40.0, 40.0]]
phi = [[], [], [[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]]]
global = [
    [[1.0, 0.1, 0.1], [0.1, 1.0, 0.3], [0.1, 0.3, 1.0]],
    [[1.0, 0.3, 0.2], [0.3, 1.0, 0.4], [0.2, 0.4, 1.0]],
]
beta = [0.2, 0.2]
prevalence_range = [0.2, 0.5]
"#;

/// Simulates three small studies into `dir/sim` and returns that directory.
fn simulated(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("tests.toml"), TESTS).unwrap();
    let config = format!("tests = \"tests.toml\"\nstudies = 3\nindividuals = 60\nseed = 5\nout = \"sim\"\n{POPULATION}");
    std::fs::write(dir.join("simulate.toml"), config).unwrap();
    let o = mvplc(&["simulate", "--config", "simulate.toml"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("sim")
}

fn fit_config(variant: &str, out: &str) -> String {
    format!(
        "[data]\ncounts = \"sim/counts.csv\"\ntests = \"sim/tests.toml\"\n\n[model]\nvariant = \"{variant}\"\nghk_nodes = 16\n\n\
         [sampler]\nchains = 2\nwarmup = 40\nsamples = 60\nseed = 3\nmax_treedepth = 6\n\n[output]\ndir = \"{out}\"\n"
    )
}

fn fit(dir: &Path, name: &str, config: &str, extra: &[&str]) -> Output {
    std::fs::write(dir.join(name), config).unwrap();
    let mut args = vec!["fit", "--config", name];
    args.extend_from_slice(extra);
    let o = mvplc(&args, dir);
    assert!([0, 2].contains(&code(&o)), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path).unwrap().headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn simulate_then_fit_m1_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path());
    for f in ["counts.csv", "individuals.csv", "tests.toml", "truth.json", "fit.toml", "manifest.json"] {
        assert!(sim.join(f).is_file(), "{f}");
    }
    fit(tmp.path(), "m1.toml", &fit_config("M1", "m1"), &[]);
    let out = tmp.path().join("m1");
    for f in ["config.toml", "draws.csv", "draws_unconstrained.csv", "diagnostics.json", "parameters.csv", "summary.csv", "sroc.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let draws = std::fs::read_to_string(out.join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 1 + 2 * 60);
    let h = header(&out.join("draws.csv"));
    assert_eq!(&h[..2], ["chain", "draw"]);
    assert!(h.iter().any(|c| c == "prev[3]"));
    assert!(!h.iter().any(|c| c.starts_with("Psi_G")));

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 7);

    let o = mvplc(&["loo", "--run", "m1", "--out", "loo"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("LOO-IC"));
    assert!(tmp.path().join("loo/loo.csv").is_file());

    let o = mvplc(&["ppc", "--run", "m1", "--replicates", "20"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let counts = std::fs::read_to_string(out.join("ppc/ppc_counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 1 + 3 * 12);

    let o = mvplc(&["summarize", "--config", "m1.toml", "--studies"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summarize/summary.csv")).unwrap();
    assert!(summary.contains("study 3"));
}

#[test]
fn m4_draws_include_within_study_correlations() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    fit(tmp.path(), "m4.toml", &fit_config("M4", "m4"), &["--joint", "2,3,-,1,BTN"]);
    let h = header(&tmp.path().join("m4/draws.csv"));
    for prefix in ["Psi_G[0]", "Psi_G[1]", "beta[1,0]", "Psi_Delta[1,1]", "C[1,3,0,1]", "kappa[3,1]"] {
        assert!(h.iter().any(|c| c.starts_with(prefix)), "{prefix}");
    }
    let summary = std::fs::read_to_string(tmp.path().join("m4/summary.csv")).unwrap();
    assert!(summary.contains("BTN"));
}

#[test]
fn rerun_with_same_seed_is_identical() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    fit(tmp.path(), "a.toml", &fit_config("M3", "a"), &[]);
    fit(tmp.path(), "a.toml", &fit_config("M3", "a"), &["--out", "b"]);
    for f in ["draws.csv", "draws_unconstrained.csv", "diagnostics.json", "summary.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    fit(tmp.path(), "a.toml", &fit_config("M3", "a"), &["--out", "c", "--seed", "4"]);
    assert_ne!(std::fs::read(tmp.path().join("a/draws.csv")).unwrap(), std::fs::read(tmp.path().join("c/draws.csv")).unwrap());
}

#[test]
fn dichotomise_flag_recodes_before_fitting() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    fit(tmp.path(), "d.toml", &fit_config("M3", "d"), &["--dichotomise", "score:2"]);
    let config = std::fs::read_to_string(tmp.path().join("d/config.toml")).unwrap();
    assert!(config.contains("dichotomise = \"score:2\""));
    let h = header(&tmp.path().join("d/draws.csv"));
    assert!(!h.iter().any(|c| c.starts_with("kappa")));
}

#[test]
fn bad_inputs_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    let config = fit_config("M1", "x") + "\n[extra]\nkey = 1\n";
    std::fs::write(tmp.path().join("bad.toml"), config).unwrap();
    let o = mvplc(&["fit", "--config", "bad.toml"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("extra"));

    let o = mvplc(&["fit", "--config", "missing.toml"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = mvplc(&["fit", "--config", "bad.toml", "--bogus"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = mvplc(&["--help"], tmp.path());
    assert_eq!(code(&o), 0);
    let o = mvplc(&["fit", "--config", "missing.toml", "--dichotomise", "score"], tmp.path());
    assert_eq!(code(&o), 1);
}
