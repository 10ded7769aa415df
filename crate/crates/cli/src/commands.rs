use std::path::{Path, PathBuf};

use mvplc_core::analysis::{accuracy_draws, sroc_data, write_sroc, write_summaries, Interval, JointRequest};
use mvplc_core::config::{RunConfig, SimulateConfig};
use mvplc_core::data::{write_tests, MetaDataset};
use mvplc_core::evaluate::{
    loo_table, pointwise_loglik, ppc_correlation_residuals, ppc_count_residuals, psis_loo, subsample_states, write_correlation_residuals,
    write_count_residuals, PARETO_K_WARN,
};
use mvplc_core::model::{Model, Params};
use mvplc_core::sampler::{diagnose, read_unconstrained_csv, run_chains, Diagnostics, Gates, PosteriorDraws};
use mvplc_core::simulate::simulate_dataset;
use mvplc_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifest::Manifest;
use crate::{FitArgs, LooArgs, PpcArgs, RunArgs, SimulateArgs, SummarizeArgs};

pub enum Outcome {
    Passed,
    GatesFailed,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::fs::canonicalize(p)?)
}

fn create_dir(p: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(p)?;
    absolute(p)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn build_model(config: &RunConfig, data: &MetaDataset) -> Result<Model> {
    let spec = config.model_spec(data.tests())?;
    let priors = config.prior_spec(data.tests(), spec.reference)?;
    Model::new(data, spec, priors)
}

/// Posterior accuracy summaries and sROC data for a set of states.
fn accuracy_outputs(data: &MetaDataset, states: &[Params<f64>], joint: &[JointRequest], studies: bool, seed: u64) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let acc = accuracy_draws(states, data.tests(), joint, studies, &mut rng)?;
    for (label, &n) in acc.labels.iter().zip(&acc.clamped) {
        if n > 0 {
            eprintln!("warning: {label}: {n} draws clamped to [0, 1]");
        }
    }
    let summary = csv_bytes(|b| write_summaries(&acc.summaries(), b))?;
    let sroc = csv_bytes(|b| write_sroc(&sroc_data(&acc, data.tests()), b))?;
    Ok((summary, sroc))
}

fn parameter_table(draws: &PosteriorDraws, diag: &Diagnostics) -> Result<Vec<u8>> {
    let mut w = Vec::new();
    {
        let mut out = csv::Writer::from_writer(&mut w);
        out.write_record(["parameter", "mean", "sd", "median", "lower", "upper", "rhat", "ess_bulk", "ess_tail"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for (j, name) in draws.names.iter().enumerate() {
            let v = draws.pooled(j);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            let i = Interval::of(&v);
            let d = &diag.parameters[j];
            out.write_record([
                name.clone(),
                mean.to_string(),
                sd.to_string(),
                i.median.to_string(),
                i.lower.to_string(),
                i.upper.to_string(),
                opt(d.rhat),
                opt(d.ess_bulk),
                opt(d.ess_tail),
            ])?;
        }
        out.flush()?;
    }
    Ok(w)
}

pub fn fit(a: FitArgs) -> Result<Outcome> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.sampler.seed = s;
    }
    if let Some(d) = a.dichotomise {
        config.data.dichotomise = Some(d);
    }
    config.output.joint.extend(a.joint);
    if let Some(o) = a.out {
        config.output.dir = o;
    }
    let data = config.dataset()?;
    let joint = config.joint_requests()?;
    let model = build_model(&config, &data)?;
    config.data.counts = absolute(&config.data.counts)?;
    config.data.tests = absolute(&config.data.tests)?;
    let dir = create_dir(&config.output.dir)?;
    config.output.dir = dir.clone();
    let config_text = config.to_toml();
    let mut manifest = Manifest::new("fit", config.sampler.seed, &config_text);
    manifest.input(&config.data.counts)?;
    manifest.input(&config.data.tests)?;
    manifest.output(&dir, "config.toml", config_text.as_bytes())?;

    eprintln!(
        "fitting {} parameters on {} individuals in {} studies ({} chains x {}+{})",
        model.dim(),
        data.num_individuals(),
        data.num_studies(),
        config.sampler.chains,
        config.sampler.warmup,
        config.sampler.samples
    );
    let draws = run_chains(&model, &config.sampler)?;
    let diag = diagnose(&draws, Gates::default(), config.sampler.max_treedepth)?;
    if model.floored_count() > 0 {
        eprintln!("warning: {} box probabilities fell below the floor", model.floored_count());
    }

    manifest.output(&dir, "draws.csv", &csv_bytes(|b| draws.write_csv(b))?)?;
    let unames: Vec<String> = (1..=model.dim()).map(|i| format!("u[{i}]")).collect();
    manifest.output(&dir, "draws_unconstrained.csv", &csv_bytes(|b| draws.write_unconstrained_csv(&unames, b))?)?;
    manifest.output(&dir, "diagnostics.json", (serde_json::to_string_pretty(&diag)? + "\n").as_bytes())?;
    manifest.output(&dir, "parameters.csv", &parameter_table(&draws, &diag)?)?;
    let states: Vec<Params<f64>> = draws.unconstrained().map(|x| model.constrain(x)).collect();
    let (summary, sroc) = accuracy_outputs(&data, &states, &joint, config.output.study_estimates, config.sampler.seed)?;
    manifest.output(&dir, "summary.csv", &summary)?;
    manifest.output(&dir, "sroc.csv", &sroc)?;
    manifest.write(&dir)?;

    eprintln!(
        "max R-hat {:.4}, min bulk ESS {:.0}, divergences {}, min E-FMI {:.3}",
        diag.max_rhat(),
        diag.min_ess_bulk(),
        diag.divergences,
        diag.efmi.iter().copied().fold(f64::INFINITY, f64::min)
    );
    eprintln!("wrote {}", dir.display());
    if diag.passed {
        Ok(Outcome::Passed)
    } else {
        eprintln!("diagnostic gates failed (R-hat ok: {}, E-FMI ok: {}, divergences ok: {})", diag.rhat_ok, diag.efmi_ok, diag.divergences_ok);
        Ok(Outcome::GatesFailed)
    }
}

pub fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let mut config = SimulateConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(o) = a.out {
        config.out = o;
    }
    let tests = config.test_definitions()?;
    let truth = config.truth(&tests)?;
    let sizes = config.sizes(truth.studies.len())?;
    let data = simulate_dataset(&truth, &tests, &sizes, config.seed)?;
    let dir = create_dir(&config.out)?;
    let config_text = config.to_toml();
    let mut manifest = Manifest::new("simulate", config.seed, &config_text);
    manifest.input(&config.tests)?;
    if let Some(t) = &config.truth {
        manifest.input(t)?;
    }
    manifest.output(&dir, "tests.toml", write_tests(&tests).as_bytes())?;
    manifest.output(&dir, "counts.csv", &csv_bytes(|b| data.write_aggregated(b))?)?;
    manifest.output(&dir, "individuals.csv", &csv_bytes(|b| data.write_expanded(b))?)?;
    manifest.output(&dir, "truth.json", (serde_json::to_string_pretty(&truth)? + "\n").as_bytes())?;
    manifest.output(&dir, "fit.toml", b"[data]\ncounts = \"counts.csv\"\ntests = \"tests.toml\"\n\n[output]\ndir = \"fit\"\n")?;
    manifest.write(&dir)?;
    eprintln!("simulated {} individuals in {} studies into {}", data.num_individuals(), data.num_studies(), dir.display());
    Ok(Outcome::Passed)
}

struct Fitted {
    name: String,
    dir: PathBuf,
    config: RunConfig,
    config_text: String,
    data: MetaDataset,
    model: Model,
    positions: Vec<Vec<f64>>,
}

fn load_fitted(name: String, config: RunConfig, dir: PathBuf) -> Result<Fitted> {
    let data = config.dataset()?;
    let model = build_model(&config, &data)?;
    let path = dir.join("draws_unconstrained.csv");
    let file = std::fs::File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let (_, chains) = read_unconstrained_csv(file)?;
    let positions: Vec<Vec<f64>> = chains.concat();
    if let Some(x) = positions.iter().find(|x| x.len() != model.dim()) {
        return Err(Error::InvalidData(format!("draws have {} columns, the model {}", x.len(), model.dim())));
    }
    Ok(Fitted { name, dir, config_text: config.to_toml(), config, data, model, positions })
}

fn resolve_runs(args: &RunArgs) -> Result<Vec<Fitted>> {
    let mut out = Vec::new();
    for c in &args.config {
        let config = RunConfig::load(c)?;
        let name = c.file_stem().map_or_else(|| c.display().to_string(), |s| s.to_string_lossy().into_owned());
        let dir = config.output.dir.clone();
        out.push(load_fitted(name, config, dir)?);
    }
    for r in &args.run {
        let config = RunConfig::load(&r.join("config.toml"))?;
        let name = r.file_name().map_or_else(|| r.display().to_string(), |s| s.to_string_lossy().into_owned());
        out.push(load_fitted(name, config, r.clone())?);
    }
    Ok(out)
}

fn single_run(args: &RunArgs) -> Result<Fitted> {
    let mut runs = resolve_runs(args)?;
    if runs.len() != 1 {
        return Err(Error::InvalidArgument(format!("expected one run, got {}", runs.len())));
    }
    Ok(runs.remove(0))
}

pub fn loo(a: LooArgs) -> Result<Outcome> {
    let runs = resolve_runs(&a.runs)?;
    let mut results = Vec::new();
    for r in &runs {
        let pll = pointwise_loglik(&r.model, &r.positions)?;
        let res = psis_loo(&pll)?;
        let high = res.high_k();
        if !high.is_empty() {
            eprintln!("warning: {}: {} of {} points have Pareto k > {PARETO_K_WARN}", r.name, high.len(), res.pareto_k.len());
        }
        results.push((r.name.clone(), res));
    }
    let rows = loo_table(&results)?;
    println!("{:<20} {:>12} {:>12} {:>10}", "model", "LOO-IC", "elpd_diff", "SE");
    for row in &rows {
        println!("{:<20} {:>12.1} {:>12.1} {:>10.1}", row.model, row.loo_ic, row.elpd_diff, row.se_diff);
    }
    if let Some(out) = a.out {
        let dir = create_dir(&out)?;
        let text: String = runs.iter().map(|r| r.config_text.as_str()).collect();
        let mut manifest = Manifest::new("loo", 0, &text);
        for r in &runs {
            manifest.input(&r.dir.join("draws_unconstrained.csv"))?;
        }
        let table = csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        })?;
        manifest.output(&dir, "loo.csv", &table)?;
        manifest.write(&dir)?;
    }
    Ok(Outcome::Passed)
}

pub fn ppc(a: PpcArgs) -> Result<Outcome> {
    let r = single_run(&a.runs)?;
    let seed = a.seed.unwrap_or(r.config.sampler.seed);
    let reps = a.replicates.unwrap_or(r.config.output.ppc_replicates);
    let states = subsample_states(&r.model, &r.positions, reps);
    let corr = ppc_correlation_residuals(&r.data, &states, seed)?;
    let counts = ppc_count_residuals(&r.data, &states, seed)?;
    let dir = create_dir(&a.out.unwrap_or_else(|| r.dir.join("ppc")))?;
    let mut manifest = Manifest::new("ppc", seed, &r.config_text);
    manifest.input(&r.dir.join("draws_unconstrained.csv"))?;
    manifest.output(&dir, "ppc_correlation.csv", &csv_bytes(|b| write_correlation_residuals(&corr, r.data.tests(), b))?)?;
    manifest.output(&dir, "ppc_counts.csv", &csv_bytes(|b| write_count_residuals(&counts, r.data.tests(), b))?)?;
    manifest.write(&dir)?;
    let defined: Vec<bool> = corr.iter().filter_map(|c| c.covers_zero()).collect();
    eprintln!(
        "{} of {} correlation intervals cover 0; {} of {} cell counts inside their intervals",
        defined.iter().filter(|&&c| c).count(),
        defined.len(),
        counts.iter().filter(|c| c.covered()).count(),
        counts.len()
    );
    Ok(Outcome::Passed)
}

pub fn summarize(a: SummarizeArgs) -> Result<Outcome> {
    let r = single_run(&a.runs)?;
    let mut joint = r.config.joint_requests()?;
    for j in &a.joint {
        joint.push(j.parse()?);
    }
    let seed = a.seed.unwrap_or(r.config.sampler.seed);
    let states: Vec<Params<f64>> = r.positions.iter().map(|x| r.model.constrain(x)).collect();
    let (summary, sroc) = accuracy_outputs(&r.data, &states, &joint, a.studies || r.config.output.study_estimates, seed)?;
    let dir = create_dir(&a.out.unwrap_or_else(|| r.dir.join("summarize")))?;
    let mut manifest = Manifest::new("summarize", seed, &r.config_text);
    manifest.input(&r.dir.join("draws_unconstrained.csv"))?;
    manifest.output(&dir, "summary.csv", &summary)?;
    manifest.output(&dir, "sroc.csv", &sroc)?;
    manifest.write(&dir)?;
    eprintln!("wrote {}", dir.display());
    Ok(Outcome::Passed)
}
