//! Model evaluation: pointwise log-likelihoods, PSIS-LOO and the posterior
//! predictive checks on correlations and cross-classified counts.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{quantile_sorted, Interval};
use crate::data::{MetaDataset, TestDefinition};
use crate::error::{Error, Result};
use crate::model::{Model, Params};
use crate::simulate::{all_patterns, simulate_study, StudyTruth};

/// Pareto shape above which an importance-sampling estimate is unreliable.
pub const PARETO_K_WARN: f64 = 0.7;

/// Log-likelihood of every individual at every draw, row-major
/// `draws × points`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseLogLik {
    pub draws: usize,
    pub points: usize,
    pub values: Vec<f64>,
}

impl PointwiseLogLik {
    pub fn new(draws: usize, points: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != draws * points {
            return Err(Error::InvalidArgument(format!("{} values for a {draws} x {points} matrix", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite log-likelihood at draw {}, point {}", i / points.max(1), i % points.max(1))));
        }
        Ok(PointwiseLogLik { draws, points, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.points..(i + 1) * self.points]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.draws).map(|i| self.values[i * self.points + j]).collect()
    }
}

/// Pointwise log-likelihood at each unconstrained position, individuals in
/// dataset order.
pub fn pointwise_loglik(model: &Model, positions: &[Vec<f64>]) -> Result<PointwiseLogLik> {
    let rows = positions
        .par_iter().map(|x| model.pointwise_loglik(&model.constrain(x))).collect::<Result<Vec<_>>>()?;
    let points = model.study_sizes().iter().sum();
    PointwiseLogLik::new(rows.len(), points, rows.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd: f64,
    /// Standard error of `elpd` across points.
    pub se: f64,
    pub loo_ic: f64,
    pub se_loo_ic: f64,
    /// Effective number of parameters, `lpd - elpd`.
    pub p_loo: f64,
    /// Monte Carlo standard error of `elpd`.
    pub mcse: f64,
    pub pointwise: Vec<f64>,
    pub pareto_k: Vec<f64>,
}

impl LooResult {
    /// Points whose Pareto shape exceeds [`PARETO_K_WARN`].
    pub fn high_k(&self) -> Vec<usize> {
        self.pareto_k.iter().enumerate().filter(|(_, &k)| k > PARETO_K_WARN).map(|(i, _)| i).collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Generalized Pareto fit `(k, sigma)` to positive exceedances, by the
/// profile-likelihood grid estimator of Zhang and Stephens with a weak prior
/// pulling `k` towards 0.5.
pub fn gpd_fit(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt() as usize;
    let xstar = sorted[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let theta: Vec<f64> = (1..=m).map(|j| 1.0 / sorted[n - 1] + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar).collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&th| {
            let k = sorted.iter().map(|&x| (-th * x).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-th / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    let theta_hat: f64 = theta.iter().zip(&profile).map(|(t, l)| t * (l - norm).exp()).sum();
    let k = sorted.iter().map(|&x| (-theta_hat * x).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (if k.is_nan() { f64::INFINITY } else { k }, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k == 0.0 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Pareto-smoothed, normalised log importance weights for raw log ratios,
/// with the estimated tail shape.
pub fn psis_smooth(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let mut k = f64::INFINITY;
    if tail_len >= 5 && tail_len < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail = &order[s - tail_len..];
        let cutoff = lw[order[s - tail_len - 1]];
        let lo = lw[tail[0]];
        let hi = lw[tail[tail_len - 1]];
        if (hi - lo).abs() < f64::EPSILON / 100.0 {
            k = 0.0;
        } else {
            let exp_cut = cutoff.exp();
            let exceed: Vec<f64> = tail.iter().map(|&i| lw[i].exp() - exp_cut).collect();
            let (kh, sigma) = gpd_fit(&exceed);
            if kh.is_finite() {
                for (r, &i) in tail.iter().enumerate() {
                    let p = (r as f64 + 0.5) / tail_len as f64;
                    lw[i] = (gpd_quantile(p, kh, sigma) + exp_cut).ln();
                }
            }
            k = kh;
        }
    }
    for v in &mut lw {
        *v = v.min(0.0);
    }
    let norm = log_sum_exp(&lw);
    lw.iter_mut().for_each(|v| *v -= norm);
    (lw, k)
}

/// Pareto-smoothed importance-sampling leave-one-out cross-validation.
/// A column with no variation across draws contributes its value exactly,
/// with shape 0.
pub fn psis_loo(pll: &PointwiseLogLik) -> Result<LooResult> {
    if pll.draws < 100 {
        return Err(Error::InsufficientDraws(format!("PSIS-LOO needs at least 100 draws, got {}", pll.draws)));
    }
    let per_point: Vec<(f64, f64, f64, f64)> = (0..pll.points)
        .into_par_iter()
        .map(|j| {
            let ll = pll.column(j);
            let lpd = log_sum_exp(&ll) - (pll.draws as f64).ln();
            if ll.iter().all(|&v| v == ll[0]) {
                return (ll[0], lpd, 0.0, 0.0);
            }
            let neg: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = psis_smooth(&neg);
            let terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            let elpd = log_sum_exp(&terms);
            // delta-method variance of the self-normalised estimate
            let e = elpd.exp();
            let var: f64 = lw.iter().zip(&ll).map(|(w, l)| (2.0 * w).exp() * (l.exp() - e).powi(2)).sum();
            (elpd, lpd, k, var / (e * e))
        })
        .collect();
    let n = pll.points as f64;
    let pointwise: Vec<f64> = per_point.iter().map(|p| p.0).collect();
    let elpd: f64 = pointwise.iter().sum();
    let lpd: f64 = per_point.iter().map(|p| p.1).sum();
    let se = (n * sample_variance(&pointwise)).sqrt();
    Ok(LooResult {
        elpd,
        se,
        loo_ic: -2.0 * elpd,
        se_loo_ic: 2.0 * se,
        p_loo: lpd - elpd,
        mcse: per_point.iter().map(|p| p.3).sum::<f64>().sqrt(),
        pointwise,
        pareto_k: per_point.iter().map(|p| p.2).collect(),
    })
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub elpd_diff: f64,
    pub se: f64,
}

/// `elpd_a - elpd_b` with the standard error of the paired differences.
pub fn compare(a: &LooResult, b: &LooResult) -> Result<Comparison> {
    if a.pointwise.len() != b.pointwise.len() {
        return Err(Error::InvalidArgument(format!("comparing {} points with {}", a.pointwise.len(), b.pointwise.len())));
    }
    let diff: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| x - y).collect();
    Ok(Comparison { elpd_diff: diff.iter().sum(), se: (diff.len() as f64 * sample_variance(&diff)).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub model: String,
    pub loo_ic: f64,
    pub elpd: f64,
    /// Difference to the best model (zero for the best, negative otherwise).
    pub elpd_diff: f64,
    pub se_diff: f64,
}

/// Models ranked best first, differences taken against the best.
pub fn loo_table(models: &[(String, LooResult)]) -> Result<Vec<LooRow>> {
    let Some(best) = models.iter().max_by(|a, b| a.1.elpd.total_cmp(&b.1.elpd)) else {
        return Ok(Vec::new());
    };
    let mut rows = models
        .iter()
        .map(|(name, r)| {
            let c = compare(r, &best.1)?;
            Ok(LooRow { model: name.clone(), loo_ic: r.loo_ic, elpd: r.elpd, elpd_diff: c.elpd_diff, se_diff: c.se })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.elpd.total_cmp(&a.elpd));
    Ok(rows)
}

/// `count` constrained parameter states spread evenly over `positions`.
pub fn subsample_states(model: &Model, positions: &[Vec<f64>], count: usize) -> Vec<Params<f64>> {
    if positions.is_empty() || count == 0 {
        return Vec::new();
    }
    (0..count).map(|r| model.constrain(&positions[r * positions.len() / count])).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn pair_correlations(responses: &[Vec<u8>], t_count: usize) -> Vec<Option<f64>> {
    let cols: Vec<Vec<f64>> = (0..t_count).map(|t| responses.iter().map(|y| y[t] as f64).collect()).collect();
    let mut out = Vec::new();
    for t in 0..t_count {
        for u in t + 1..t_count {
            out.push(pearson(&cols[t], &cols[u]));
        }
    }
    out
}

fn replicate<F, T>(data: &MetaDataset, states: &[Params<f64>], seed: u64, per_study: F) -> Result<Vec<Vec<T>>>
where
    F: Fn(&[Vec<u8>]) -> T + Sync,
    T: Send,
{
    let tests = data.tests();
    states
        .par_iter()
        .enumerate()
        .map(|(r, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            data.studies()
                .iter()
                .enumerate()
                .map(|(s, study)| {
                    let truth = StudyTruth::from_params(p, s)?;
                    Ok(per_study(&simulate_study(&truth, tests, study.len(), &mut rng)?))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResidual {
    pub study: String,
    pub test_a: usize,
    pub test_b: usize,
    pub observed: Option<f64>,
    /// Observed minus replicated correlation over the replicates where both
    /// are defined.
    pub residual: Option<Interval>,
    pub replicates: usize,
}

impl CorrelationResidual {
    pub fn covers_zero(&self) -> Option<bool> {
        self.residual.map(|r| r.contains(0.0))
    }
}

/// Residuals of the within-study product-moment correlation of each test
/// pair, one replicated dataset per state.
pub fn ppc_correlation_residuals(data: &MetaDataset, states: &[Params<f64>], seed: u64) -> Result<Vec<CorrelationResidual>> {
    let t_count = data.num_tests();
    let reps = replicate(data, states, seed, |y| pair_correlations(y, t_count))?;
    let mut out = Vec::new();
    for (s, study) in data.studies().iter().enumerate() {
        let observed = pair_correlations(&study.responses, t_count);
        let mut pair = 0;
        for t in 0..t_count {
            for u in t + 1..t_count {
                let obs = observed[pair];
                let resid: Vec<f64> = match obs {
                    Some(o) => reps.iter().filter_map(|r| r[s][pair].map(|v| o - v)).collect(),
                    None => Vec::new(),
                };
                out.push(CorrelationResidual {
                    study: study.study_id.clone(),
                    test_a: t,
                    test_b: u,
                    observed: obs,
                    residual: (!resid.is_empty()).then(|| Interval::of(&resid)),
                    replicates: resid.len(),
                });
                pair += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountResidual {
    pub study: String,
    pub pattern: Vec<u8>,
    pub observed: u64,
    /// Replicated counts.
    pub replicated: Interval,
}

impl CountResidual {
    pub fn covered(&self) -> bool {
        self.replicated.contains(self.observed as f64)
    }
}

/// Counts of every pattern, in [`all_patterns`] order.
pub fn pattern_counts(responses: &[Vec<u8>], tests: &[TestDefinition]) -> Vec<u64> {
    let mut counts = vec![0u64; tests.iter().map(|t| t.num_categories).product()];
    for y in responses {
        let mut idx = 0;
        for (t, &v) in tests.iter().zip(y) {
            idx = idx * t.num_categories + v as usize;
        }
        counts[idx] += 1;
    }
    counts
}

/// Observed count of every cell of each study's cross-classification against
/// its replicated distribution.
pub fn ppc_count_residuals(data: &MetaDataset, states: &[Params<f64>], seed: u64) -> Result<Vec<CountResidual>> {
    let tests = data.tests();
    let reps = replicate(data, states, seed, |y| pattern_counts(y, tests))?;
    let patterns = all_patterns(tests);
    let mut out = Vec::new();
    for (s, study) in data.studies().iter().enumerate() {
        let observed = pattern_counts(&study.responses, tests);
        for (c, pattern) in patterns.iter().enumerate() {
            let mut v: Vec<f64> = reps.iter().map(|r| r[s][c] as f64).collect();
            v.sort_by(f64::total_cmp);
            let replicated = if v.is_empty() {
                Interval { median: f64::NAN, lower: f64::NAN, upper: f64::NAN }
            } else {
                Interval { median: quantile_sorted(&v, 0.5), lower: quantile_sorted(&v, 0.025), upper: quantile_sorted(&v, 0.975) }
            };
            out.push(CountResidual { study: study.study_id.clone(), pattern: pattern.clone(), observed: observed[c], replicated });
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_correlation_residuals<W: Write>(rows: &[CorrelationResidual], tests: &[TestDefinition], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["study", "test_a", "test_b", "observed", "median", "lower", "upper", "covers_zero", "replicates"])?;
    for r in rows {
        out.write_record([
            r.study.clone(),
            tests[r.test_a].label.clone(),
            tests[r.test_b].label.clone(),
            fmt_opt(r.observed),
            fmt_opt(r.residual.map(|i| i.median)),
            fmt_opt(r.residual.map(|i| i.lower)),
            fmt_opt(r.residual.map(|i| i.upper)),
            r.covers_zero().map_or_else(String::new, |c| c.to_string()),
            r.replicates.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_count_residuals<W: Write>(rows: &[CountResidual], tests: &[TestDefinition], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["study".to_string()];
    header.extend(tests.iter().map(|t| t.label.clone()));
    header.extend(["observed", "median", "lower", "upper", "covered"].map(String::from));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.study.clone()];
        rec.extend(tests.iter().zip(&r.pattern).map(|(t, &y)| t.to_external(y).to_string()));
        rec.extend([
            r.observed.to_string(),
            r.replicated.median.to_string(),
            r.replicated.lower.to_string(),
            r.replicated.upper.to_string(),
            r.covered().to_string(),
        ]);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
