//! Run configuration: one TOML file with `[data]`, `[model]`, `[priors]`,
//! `[sampler]` and `[output]` tables. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::JointRequest;
use crate::data::{load_dataset, MetaDataset, TestDefinition};
use crate::error::{Error, Result};
use crate::model::prior::{atanh_normal_scale, half_normal_scale, interval_to_probit_normal};
use crate::model::{ModelSpec, NormalPrior, PriorSpec, Variant};
use crate::sampler::SamplerConfig;
use crate::simulate::{PopulationTruth, TrueParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Aggregated counts CSV.
    pub counts: PathBuf,
    /// Test metadata TOML.
    pub tests: PathBuf,
    /// `test:k`, recoding an ordinal test as positive when `y >= k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dichotomise: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Reference test by label or one-based index; the first test by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perfect_reference: Option<bool>,
    /// Groups of tests (labels or one-based indices) with correlated results;
    /// replaces the variant's grouping when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependence: Option<Vec<Vec<String>>>,
    pub ghk_nodes: usize,
    pub ghk_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { variant: Variant::M4, reference: None, perfect_reference: None, dependence: None, ghk_nodes: 256, ghk_seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// 97.5% quantile of every between-study SD.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_upper: Option<f64>,
    /// 95% bound on the between-study correlations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_bound: Option<f64>,
    /// 95% bound on within-study correlation entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corr_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_scale: Option<f64>,
    /// Per-test overrides keyed by label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tests: BTreeMap<String, TestPrior>,
}

/// Prior on one test's class means, as 95% intervals on sensitivity and
/// specificity or directly on the latent scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestPrior {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specificity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_nondiseased: Option<NormalPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_diseased: Option<NormalPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Joint-testing requests, `t,u,k,l,BTN|BTP` with one-based tests and
    /// `-` for a dichotomous threshold.
    pub joint: Vec<String>,
    /// Also report per-study accuracy.
    pub study_estimates: bool,
    /// Replicated datasets for the predictive checks.
    pub ppc_replicates: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("mvplc-out"), joint: Vec::new(), study_estimates: false, ppc_replicates: 500 }
    }
}

/// Index of a test named by label or one-based position.
pub fn find_test(tests: &[TestDefinition], name: &str) -> Result<usize> {
    if let Some(i) = tests.iter().position(|t| t.label == name) {
        return Ok(i);
    }
    match name.parse::<usize>() {
        Ok(i) if (1..=tests.len()).contains(&i) => Ok(i - 1),
        _ => Err(Error::Config(format!("unknown test `{name}`"))),
    }
}

/// Parses `test:k`.
pub fn parse_dichotomise(tests: &[TestDefinition], s: &str) -> Result<(usize, usize)> {
    let (name, k) = s.rsplit_once(':').ok_or_else(|| Error::Config(format!("expected `test:k`, got `{s}`")))?;
    let k = k.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad threshold in `{s}`")))?;
    Ok((find_test(tests, name.trim())?, k))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.sampler.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.data.counts, &mut c.data.tests, &mut c.output.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads the dataset, applying any dichotomisation.
    pub fn dataset(&self) -> Result<MetaDataset> {
        for p in [&self.data.counts, &self.data.tests] {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        let data = load_dataset(&self.data.counts, &self.data.tests)?;
        match &self.data.dichotomise {
            Some(s) => {
                let (t, k) = parse_dichotomise(data.tests(), s)?;
                Ok(data.dichotomise(t, k)?.0)
            }
            None => Ok(data),
        }
    }

    pub fn model_spec(&self, tests: &[TestDefinition]) -> Result<ModelSpec> {
        let m = &self.model;
        let reference = match &m.reference {
            Some(r) => find_test(tests, r)?,
            None => 0,
        };
        let others: Vec<usize> = (0..tests.len()).filter(|&t| t != reference).collect();
        let (perfect, groups) = match m.variant {
            Variant::M1 => (true, vec![]),
            Variant::M2 => (true, vec![others]),
            Variant::M3 => (false, vec![]),
            Variant::M4 => (false, vec![(0..tests.len()).collect()]),
        };
        let dependence = match &m.dependence {
            Some(gs) => gs
                .iter()
                .map(|g| {
                    let mut v = g.iter().map(|n| find_test(tests, n)).collect::<Result<Vec<_>>>()?;
                    v.sort_unstable();
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?,
            None => groups.into_iter().filter(|g| g.len() >= 2).collect(),
        };
        let spec = ModelSpec {
            reference,
            perfect_reference: m.perfect_reference.unwrap_or(perfect),
            dependence,
            ghk_nodes: m.ghk_nodes,
            ghk_seed: m.ghk_seed,
        };
        spec.validate(tests)?;
        Ok(spec)
    }

    pub fn prior_spec(&self, tests: &[TestDefinition], reference: usize) -> Result<PriorSpec> {
        let mut p = PriorSpec::default_for(tests, reference);
        let c = &self.priors;
        if let Some(v) = c.sigma_upper {
            p.sigma_scale = half_normal_scale(v);
        }
        if let Some(v) = c.rho_bound {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config("rho_bound must lie in (0, 1)".into()));
            }
            p.rho_scale = atanh_normal_scale(v);
        }
        if let Some(v) = c.corr_bound {
            p.corr_bound = v;
        }
        if let Some(v) = c.kappa_scale {
            p.kappa_scale = v;
        }
        for (label, tp) in &c.tests {
            let t = tests
                .iter()
                .position(|x| &x.label == label)
                .ok_or_else(|| Error::Config(format!("prior for unknown test `{label}`")))?;
            let interval = |v: [f64; 2]| interval_to_probit_normal(v[0], v[1]).map_err(|e| Error::Config(format!("test `{label}`: {e}")));
            match (tp.sensitivity, tp.mean_diseased) {
                (Some(_), Some(_)) => return Err(Error::Config(format!("test `{label}`: give sensitivity or mean_diseased, not both"))),
                (Some(se), None) => p.mu[t][1] = interval(se)?,
                (None, Some(m)) => p.mu[t][1] = m,
                (None, None) => {}
            }
            match (tp.specificity, tp.mean_nondiseased) {
                (Some(_), Some(_)) => return Err(Error::Config(format!("test `{label}`: give specificity or mean_nondiseased, not both"))),
                (Some(sp), None) => {
                    let n = interval(sp)?;
                    p.mu[t][0] = NormalPrior { location: -n.location, scale: n.scale };
                }
                (None, Some(m)) => p.mu[t][0] = m,
                (None, None) => {}
            }
        }
        p.validate(tests.len())?;
        Ok(p)
    }

    pub fn joint_requests(&self) -> Result<Vec<JointRequest>> {
        self.output.joint.iter().map(|s| s.parse()).collect()
    }
}

/// Individuals per study: one size for all studies or one per study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StudySizes {
    Each(usize),
    PerStudy(Vec<usize>),
}

/// Input of the `simulate` command. Study truths come from a `[population]`
/// table or from a JSON file of explicit study parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub tests: PathBuf,
    #[serde(default)]
    pub studies: Option<usize>,
    pub individuals: StudySizes,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default = "default_sim_out")]
    pub out: PathBuf,
}

fn default_sim_out() -> PathBuf {
    PathBuf::from("mvplc-sim")
}

impl SimulateConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SimulateConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if c.population.is_some() == c.truth.is_some() {
            return Err(Error::Config("give exactly one of [population] and truth".into()));
        }
        if c.population.is_some() && c.studies.is_none() {
            return Err(Error::Config("`studies` is required with [population]".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut paths = vec![&mut c.tests, &mut c.out];
        if let Some(t) = c.truth.as_mut() {
            paths.push(t);
        }
        for p in paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn test_definitions(&self) -> Result<Vec<TestDefinition>> {
        let text = std::fs::read_to_string(&self.tests).map_err(|e| Error::Config(format!("{}: {e}", self.tests.display())))?;
        crate::data::parse_tests(&text)
    }

    /// Study-level truths, drawn from the population when one is given.
    pub fn truth(&self, tests: &[TestDefinition]) -> Result<TrueParameters> {
        match (&self.population, &self.truth) {
            (Some(pop), _) => pop.draw_studies(tests, self.studies.unwrap_or(0), self.seed),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let t: TrueParameters = serde_json::from_str(&text)?;
                for s in &t.studies {
                    s.validate(tests)?;
                }
                Ok(t)
            }
            (None, None) => Err(Error::Config("no truth given".into())),
        }
    }

    pub fn sizes(&self, num_studies: usize) -> Result<Vec<usize>> {
        match &self.individuals {
            StudySizes::Each(n) => Ok(vec![*n; num_studies]),
            StudySizes::PerStudy(v) if v.len() == num_studies => Ok(v.clone()),
            StudySizes::PerStudy(v) => Err(Error::Config(format!("{} study sizes for {num_studies} studies", v.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dvt() -> Vec<TestDefinition> {
        vec![
            TestDefinition::dichotomous(0, "Ultrasound"),
            TestDefinition::dichotomous(1, "D-Dimer"),
            TestDefinition::ordinal(2, "Wells", 3).unwrap(),
        ]
    }

    const MINIMAL: &str = "[data]\ncounts = \"c.csv\"\ntests = \"t.toml\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.model.variant, Variant::M4);
        assert_eq!(c.sampler, SamplerConfig::default());
        assert_eq!(c.output.ppc_replicates, 500);
        let spec = c.model_spec(&dvt()).unwrap();
        assert_eq!(spec.dependence, vec![vec![0, 1, 2]]);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml(&format!("{MINIMAL}[priors]\nsigma_uper = 1.0\n")).is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}[priors.tests.Wells]\nsensitivty = [0.1, 0.9]\n")).is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}[sampler]\nchains = 0\n")).is_err());
    }

    #[test]
    fn variants_follow_the_reference() {
        let c = RunConfig::from_toml(&format!("{MINIMAL}[model]\nvariant = \"M2\"\nreference = \"D-Dimer\"\nghk_nodes = 64\nghk_seed = 1\n")).unwrap();
        let spec = c.model_spec(&dvt()).unwrap();
        assert_eq!(spec.reference, 1);
        assert!(spec.perfect_reference);
        assert_eq!(spec.dependence, vec![vec![0, 2]]);
        let c = RunConfig::from_toml(&format!("{MINIMAL}[model]\nvariant = \"M3\"\ndependence = [[\"Wells\", \"2\"]]\n")).unwrap();
        assert_eq!(c.model_spec(&dvt()).unwrap().dependence, vec![vec![1, 2]]);
    }

    #[test]
    fn prior_overrides() {
        let c = RunConfig::from_toml(&format!("{MINIMAL}[priors]\nsigma_upper = 2.0\n[priors.tests.D-Dimer]\nsensitivity = [0.5, 0.99]\nmean_nondiseased = {{ location = -1.0, scale = 0.5 }}\n")).unwrap();
        let p = c.prior_spec(&dvt(), 0).unwrap();
        let d = PriorSpec::default_for(&dvt(), 0);
        assert!(p.sigma_scale > d.sigma_scale);
        assert_eq!(p.mu[1][0], NormalPrior { location: -1.0, scale: 0.5 });
        let (lo, hi) = p.mu[1][1].probability_interval();
        assert!((lo - 0.5).abs() < 1e-4 && (hi - 0.99).abs() < 1e-4);
        assert_eq!(p.mu[0], d.mu[0]);
        let bad = RunConfig::from_toml(&format!("{MINIMAL}[priors.tests.Nope]\nsensitivity = [0.5, 0.9]\n")).unwrap();
        assert!(bad.prior_spec(&dvt(), 0).is_err());
    }

    #[test]
    fn simulate_config_needs_one_truth() {
        let base = "tests = \"t.toml\"\nindividuals = 10\n";
        assert!(SimulateConfig::from_toml(base).is_err());
        let c = SimulateConfig::from_toml(&format!("{base}truth = \"truth.json\"\n")).unwrap();
        assert_eq!(c.sizes(3).unwrap(), vec![10; 3]);
        let c = SimulateConfig::from_toml("tests = \"t.toml\"\nindividuals = [1, 2]\ntruth = \"x.json\"\n").unwrap();
        assert!(c.sizes(3).is_err());
    }

    #[test]
    fn dichotomise_syntax() {
        assert_eq!(parse_dichotomise(&dvt(), "Wells:2").unwrap(), (2, 2));
        assert_eq!(parse_dichotomise(&dvt(), "3:1").unwrap(), (2, 1));
        assert!(parse_dichotomise(&dvt(), "Wells").is_err());
    }
}
