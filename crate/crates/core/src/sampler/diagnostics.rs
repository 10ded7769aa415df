//! Split R-hat, effective sample sizes and energy diagnostics.

use serde::{Deserialize, Serialize};

use super::PosteriorDraws;
use crate::error::{Error, Result};
use crate::math::normal;

/// Thresholds a fit must meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    pub max_rhat: f64,
    pub min_efmi: f64,
    pub max_divergences: usize,
}

impl Default for Gates {
    fn default() -> Self {
        Gates { max_rhat: 1.05, min_efmi: 0.2, max_divergences: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    /// `None` for quantities that are constant across all draws.
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub parameters: Vec<ParameterDiagnostics>,
    pub divergences: usize,
    pub efmi: Vec<f64>,
    pub max_treedepth_hits: usize,
    pub step_sizes: Vec<f64>,
    pub gates: Gates,
    pub rhat_ok: bool,
    pub efmi_ok: bool,
    pub divergences_ok: bool,
    pub passed: bool,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.parameters.iter().filter_map(|p| p.rhat).fold(f64::NAN, f64::max)
    }

    pub fn min_ess_bulk(&self) -> f64 {
        self.parameters.iter().filter_map(|p| p.ess_bulk).fold(f64::NAN, f64::min)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            let tail = c.len() - h;
            [c[..h].to_vec(), c[tail..].to_vec()]
        })
        .collect()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|&v| v == first)
}

/// Replaces every value by the normal score of its average rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let all: Vec<f64> = chains.concat();
    let s = all.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| all[a].total_cmp(&all[b]));
    let mut rank = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && all[order[j + 1]] == all[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            rank[order[k]] = r;
        }
        i = j + 1;
    }
    let mut k = 0;
    chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|_| {
                    let z = normal::quantile((rank[k] - 0.375) / (s as f64 + 0.25));
                    k += 1;
                    z
                })
                .collect()
        })
        .collect()
}

fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn check(chains: &[Vec<f64>]) -> Result<()> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return Err(Error::InsufficientDraws("diagnostics need at least 2 chains of 4 draws".into()));
    }
    if chains.iter().any(|c| c.len() != chains[0].len()) {
        return Err(Error::InsufficientDraws("chains differ in length".into()));
    }
    Ok(())
}

/// Rank-normalised split R-hat: the larger of the bulk value and the value
/// for the folded draws. `None` for a constant quantity.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    let sp = split(chains);
    let bulk = rhat_raw(&rank_normalize(&sp));
    let all: Vec<f64> = sp.concat();
    let med = median(&all);
    let folded: Vec<Vec<f64>> = sp.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = if is_constant(&folded) { bulk } else { rhat_raw(&rank_normalize(&folded)) };
    Ok(Some(bulk.max(tail)))
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Effective sample size of a set of equal-length chains from pooled
/// autocorrelations with Geyer's initial monotone sequence.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |t: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - t).map(|i| (c[i] - mu) * (c[i + t] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho_at = |t: usize| 1.0 - (mean_var - acov(t)) / var_plus;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho_at(1);
    rho[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho_at(t + 1);
        odd = rho_at(t + 2);
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            let v = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 1] = v;
            rho[t + 2] = v;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let extra = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + extra).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size: ESS of the rank-normalised split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    Ok(Some(ess(&rank_normalize(&split(chains)))))
}

fn quantile_indicator_ess(chains: &[Vec<f64>], prob: f64) -> f64 {
    let mut all = chains.concat();
    all.sort_by(f64::total_cmp);
    let q = crate::analysis::quantile_sorted(&all, prob);
    let ind: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|&v| f64::from(u8::from(v <= q))).collect()).collect();
    if is_constant(&ind) {
        return (all.len()) as f64;
    }
    ess(&ind)
}

/// Tail effective sample size: the smaller ESS of the 5% and 95% quantile
/// indicators on split chains.
pub fn ess_tail(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    let sp = split(chains);
    Ok(Some(quantile_indicator_ess(&sp, 0.05).min(quantile_indicator_ess(&sp, 0.95))))
}

/// Energy Bayesian fraction of missing information of one chain.
pub fn efmi(energy: &[f64]) -> f64 {
    let m = mean(energy);
    let num: f64 = energy.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let den: f64 = energy.iter().map(|e| (e - m).powi(2)).sum();
    num / den
}

/// Full report for `draws` against `gates`.
pub fn diagnose(draws: &PosteriorDraws, gates: Gates, max_treedepth: u32) -> Result<Diagnostics> {
    let parameters = (0..draws.names.len())
        .map(|j| {
            let chains = draws.series(j);
            Ok(ParameterDiagnostics { name: draws.names[j].clone(), rhat: split_rhat(&chains)?, ess_bulk: ess_bulk(&chains)?, ess_tail: ess_tail(&chains)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let efmi: Vec<f64> = draws.chains.iter().map(|c| efmi(&c.energy)).collect();
    let divergences = draws.divergences();
    let rhat_ok = parameters.iter().all(|p| p.rhat.is_none_or(|r| r < gates.max_rhat));
    let efmi_ok = efmi.iter().all(|&e| e > gates.min_efmi);
    let divergences_ok = divergences <= gates.max_divergences;
    Ok(Diagnostics {
        parameters,
        divergences,
        max_treedepth_hits: draws.chains.iter().flat_map(|c| &c.tree_depth).filter(|&&d| d >= max_treedepth).count(),
        step_sizes: draws.chains.iter().map(|c| c.step_size).collect(),
        efmi,
        gates,
        rhat_ok,
        efmi_ok,
        divergences_ok,
        passed: rhat_ok && efmi_ok && divergences_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); shift + z }).collect()
    }

    #[test]
    fn identical_chains_have_unit_rhat() {
        let c = normals(1000, 0.0, 1);
        let r = split_rhat(&[c.clone(), c]).unwrap().unwrap();
        assert!((r - 1.0).abs() <= 0.01, "{r}");
    }

    #[test]
    fn shifted_chains_fail_the_gate() {
        let r = split_rhat(&[normals(1000, 0.0, 1), normals(1000, 5.0, 2)]).unwrap().unwrap();
        assert!(r > 1.05, "{r}");
    }

    #[test]
    fn white_noise_ess_near_draw_count() {
        let chains: Vec<_> = (0..4).map(|s| normals(1000, 0.0, 10 + s)).collect();
        let e = ess_bulk(&chains).unwrap().unwrap();
        assert!((e / 4000.0 - 1.0).abs() < 0.15, "{e}");
        let t = ess_tail(&chains).unwrap().unwrap();
        assert!((t / 4000.0 - 1.0).abs() < 0.3, "{t}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with phi = 0.5: ESS / N = (1 - phi) / (1 + phi) = 1/3
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|s| {
                let e = normals(5000, 0.0, 20 + s);
                let mut x = vec![0.0; 5000];
                for i in 1..5000 {
                    x[i] = 0.5 * x[i - 1] + e[i];
                }
                x
            })
            .collect();
        let e = ess(&chains);
        assert!((e / 20000.0 - 1.0 / 3.0).abs() < 0.05, "{e}");
    }

    #[test]
    fn constant_quantities_are_skipped() {
        let c = vec![vec![1.0; 10], vec![1.0; 10]];
        assert_eq!(split_rhat(&c).unwrap(), None);
        assert_eq!(ess_bulk(&c).unwrap(), None);
    }

    #[test]
    fn too_few_draws_is_an_error() {
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0, 4.0]]).is_err());
        assert!(split_rhat(&[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn efmi_of_white_noise_near_two() {
        let e = efmi(&normals(10_000, 0.0, 3));
        assert!((e - 2.0).abs() < 0.1, "{e}");
    }
}
