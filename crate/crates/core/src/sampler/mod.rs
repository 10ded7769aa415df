//! Dynamic Hamiltonian Monte Carlo with warmup adaptation, and the
//! convergence diagnostics used to gate a fit.

mod adapt;
pub mod diagnostics;
mod nuts;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

pub use adapt::{DualAveraging, WindowedVariance};
pub use diagnostics::{diagnose, ess_bulk, ess_tail, split_rhat, Diagnostics, Gates};
pub use nuts::TransitionStats;

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Names of the reported (constrained) quantities.
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{}]", i + 1)).collect()
    }

    /// Reported quantities at `x`, aligned with [`LogDensity::param_names`].
    fn constrained(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

impl LogDensity for Model {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn log_density_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Model::log_density_gradient(self, x)
    }

    fn param_names(&self) -> Vec<String> {
        self.constrain(&vec![0.0; Model::dim(self)]).named().into_iter().map(|(n, _)| n).collect()
    }

    fn constrained(&self, x: &[f64]) -> Vec<f64> {
        self.constrain(x).named().into_iter().map(|(_, v)| v).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_treedepth: u32,
    /// Half-width of the uniform initialisation box.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chains: 4, warmup: 1000, samples: 1000, seed: 1, target_accept: 0.8, max_treedepth: 10, init_radius: 2.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.samples == 0 {
            return Err(Error::Config("chains and samples must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if self.max_treedepth == 0 {
            return Err(Error::Config("max_treedepth must be at least 1".into()));
        }
        if !(self.init_radius >= 0.0) {
            return Err(Error::Config("init_radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// Unconstrained positions, one row per draw.
    pub unconstrained: Vec<Vec<f64>>,
    /// Reported quantities, one row per draw.
    pub constrained: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u32>,
    pub n_leapfrog: Vec<u32>,
    pub accept_stat: Vec<f64>,
    pub energy: Vec<f64>,
    pub log_density: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.constrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constrained.is_empty()
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.len())
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().map(|c| c.divergences()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-chain series of parameter `j`.
    pub fn series(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.constrained.iter().map(|r| r[j]).collect()).collect()
    }

    /// All draws of parameter `j`, chains concatenated.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.series(j).concat()
    }

    /// All unconstrained positions, chains concatenated.
    pub fn unconstrained(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.chains.iter().flat_map(|c| c.unconstrained.iter())
    }

    /// Writes one row per draw with `chain`, `draw`, sampler telemetry and
    /// the constrained quantities.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".into(), "lp".into(), "accept_stat".into(), "step_size".into(), "tree_depth".into(), "n_leapfrog".into(), "divergent".into(), "energy".into()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for (c, ch) in self.chains.iter().enumerate() {
            for i in 0..ch.len() {
                let mut row = vec![
                    (c + 1).to_string(),
                    (i + 1).to_string(),
                    ch.log_density[i].to_string(),
                    ch.accept_stat[i].to_string(),
                    ch.step_size.to_string(),
                    ch.tree_depth[i].to_string(),
                    ch.n_leapfrog[i].to_string(),
                    u8::from(ch.divergent[i]).to_string(),
                    ch.energy[i].to_string(),
                ];
                row.extend(ch.constrained[i].iter().map(|v| v.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the unconstrained positions with coordinate names.
    pub fn write_unconstrained_csv<W: Write>(&self, names: &[String], w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".into()];
        header.extend(names.iter().cloned());
        out.write_record(&header)?;
        for (c, ch) in self.chains.iter().enumerate() {
            for (i, x) in ch.unconstrained.iter().enumerate() {
                let mut row = vec![(c + 1).to_string(), (i + 1).to_string()];
                row.extend(x.iter().map(|v| v.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a file written by [`PosteriorDraws::write_unconstrained_csv`]:
/// parameter names and, per chain, the unconstrained positions.
pub fn read_unconstrained_csv<R: std::io::Read>(r: R) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "chain" || &header[1] != "draw" {
        return Err(Error::Parse { line: 1, msg: "expected `chain,draw,...` header".into() });
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |f: &str| Error::Parse { line, msg: format!("`{f}` is not a number") };
        let chain: usize = rec[0].parse().map_err(|_| bad(&rec[0]))?;
        if chain == 0 || chain > chains.len() + 1 {
            return Err(Error::Parse { line, msg: format!("chain {chain} out of sequence") });
        }
        if chain > chains.len() {
            chains.push(Vec::new());
        }
        let row = rec.iter().skip(2).map(|f| f.parse::<f64>().map_err(|_| bad(f))).collect::<Result<Vec<_>>>()?;
        chains[chain - 1].push(row);
    }
    Ok((names, chains))
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initialise<T: LogDensity + ?Sized>(target: &T, radius: f64, rng: &mut ChaCha8Rng) -> Result<nuts::Point> {
    for _ in 0..100 {
        let q: Vec<f64> = (0..target.dim()).map(|_| if radius > 0.0 { rng.random_range(-radius..=radius) } else { 0.0 }).collect();
        let z = nuts::Point::at(target, q);
        if z.logp.is_finite() {
            return Ok(z);
        }
    }
    Err(Error::InitializationFailed(100))
}

/// Runs one chain with its own random stream.
pub fn run_chain<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    let mut rng = chain_rng(config.seed, chain);
    let start = initialise(target, config.init_radius, &mut rng)?;
    let mut nuts = nuts::Nuts::new(target, start, rng, config.max_treedepth);
    nuts.init_step_size();
    let mut da = DualAveraging::new(config.target_accept);
    da.restart(nuts.eps);
    let mut windows = WindowedVariance::new(target.dim(), config.warmup);
    let mut warmup_divergences = 0;
    for _ in 0..config.warmup {
        let stats = nuts.transition();
        warmup_divergences += usize::from(stats.divergent);
        nuts.eps = da.learn(stats.accept_stat);
        let q = nuts.position().to_vec();
        if windows.learn(&mut nuts.inv_metric, &q) {
            nuts.init_step_size();
            da.restart(nuts.eps);
        }
    }
    if config.warmup > 0 {
        nuts.eps = da.final_step_size();
    }
    let n = config.samples;
    let mut out = ChainDraws {
        unconstrained: Vec::with_capacity(n),
        constrained: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        tree_depth: Vec::with_capacity(n),
        n_leapfrog: Vec::with_capacity(n),
        accept_stat: Vec::with_capacity(n),
        energy: Vec::with_capacity(n),
        log_density: Vec::with_capacity(n),
        step_size: nuts.eps,
        inv_metric: nuts.inv_metric.clone(),
        warmup_divergences,
    };
    for _ in 0..n {
        let stats = nuts.transition();
        let q = nuts.position().to_vec();
        out.constrained.push(target.constrained(&q));
        out.log_density.push(nuts.logp());
        out.unconstrained.push(q);
        out.divergent.push(stats.divergent);
        out.tree_depth.push(stats.tree_depth);
        out.n_leapfrog.push(stats.n_leapfrog);
        out.accept_stat.push(stats.accept_stat);
        out.energy.push(stats.energy);
    }
    Ok(out)
}

/// Runs `config.chains` chains in parallel. Chain `c` draws from stream `c`
/// of the seeded generator, so its output does not depend on how many other
/// chains run.
pub fn run_chains<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let chains = (0..config.chains).into_par_iter().map(|c| run_chain(target, config, c)).collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { names: target.param_names(), chains })
}
