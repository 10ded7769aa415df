//! The MVP-LC model: specification, parameter layout, priors and likelihood.

pub mod ghk;
mod likelihood;
pub mod params;
pub mod prior;
pub mod spec;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::{MetaDataset, TestDefinition};
use crate::error::{Error, Result};

pub use ghk::{box_probability, BoxGrad, BoxProb, GhkNodes, PROBABILITY_FLOOR};
pub use likelihood::{pairwise_sum, Bounds};
pub use params::{BlockParams, Layout, OrdinalParams, Params};
pub use prior::{interval_to_probit_normal, log_prior, sample_prior, NormalPrior, PriorSpec};
pub use spec::{ModelSpec, Variant, PERFECT_MEAN};

#[derive(Debug, Clone)]
struct StudyPatterns {
    patterns: Vec<Vec<u8>>,
    /// Pattern index of every individual, in dataset order.
    index: Vec<usize>,
    counts: Vec<f64>,
}

/// A model bound to a dataset: evaluates the log posterior density and its
/// gradient on the unconstrained scale.
#[derive(Debug)]
pub struct Model {
    tests: Vec<TestDefinition>,
    study_ids: Vec<String>,
    spec: ModelSpec,
    priors: PriorSpec,
    layout: Layout,
    studies: Vec<StudyPatterns>,
    nodes: Vec<GhkNodes>,
    floored: AtomicU64,
}

impl Model {
    pub fn new(data: &MetaDataset, spec: ModelSpec, priors: PriorSpec) -> Result<Model> {
        spec.validate(data.tests())?;
        priors.validate(data.num_tests())?;
        let layout = Layout::new(data.tests(), &spec, data.num_studies());
        let studies = data
            .studies()
            .iter()
            .map(|s| {
                let (patterns, index) = s.patterns();
                let mut counts = vec![0.0; patterns.len()];
                for &i in &index {
                    counts[i] += 1.0;
                }
                StudyPatterns { patterns, index, counts }
            })
            .collect();
        let nodes = spec
            .dependence
            .iter()
            .enumerate()
            .map(|(g, group)| GhkNodes::new(group.len() - 1, spec.ghk_nodes, spec.ghk_seed.wrapping_add(g as u64)))
            .collect();
        Ok(Model {
            tests: data.tests().to_vec(),
            study_ids: data.studies().iter().map(|s| s.study_id.clone()).collect(),
            spec,
            priors,
            layout,
            studies,
            nodes,
            floored: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tests(&self) -> &[TestDefinition] {
        &self.tests
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn num_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn study_ids(&self) -> &[String] {
        &self.study_ids
    }

    pub fn study_sizes(&self) -> Vec<usize> {
        self.studies.iter().map(|s| s.index.len()).collect()
    }

    /// Number of box probabilities replaced by the floor so far.
    pub fn floored_count(&self) -> u64 {
        self.floored.load(Ordering::Relaxed)
    }

    pub fn constrain(&self, x: &[f64]) -> Params<f64> {
        self.layout.constrain(x).params
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        self.log_density_generic(x)
    }

    pub fn log_density_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(x)?;
        crate::ad::gradient(x, |v| self.log_density_generic(v))
    }

    /// Log-likelihood of every individual, studies in order.
    pub fn pointwise_loglik(&self, p: &Params<f64>) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (s, sp) in self.studies.iter().enumerate() {
            let ll = self.pattern_logliks(p, s, &sp.patterns)?;
            out.extend(sp.index.iter().map(|&i| ll[i]));
        }
        Ok(out)
    }

    /// Data log-likelihood, summed per study in the same order as the
    /// posterior density.
    pub fn data_loglik(&self, p: &Params<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (s, sp) in self.studies.iter().enumerate() {
            let ll = self.pattern_logliks(p, s, &sp.patterns)?;
            total += pairwise_sum(&sp.index, &ll);
        }
        Ok(total)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!("expected {} parameters, got {}", self.dim(), x.len())));
        }
        Ok(())
    }

    fn note_floor(&self) {
        self.floored.fetch_add(1, Ordering::Relaxed);
    }
}
