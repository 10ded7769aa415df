//! Test accuracy estimands derived from parameter draws, posterior
//! summaries and sROC plot data.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{TestDefinition, TestKind};
use crate::error::{Error, Result};
use crate::math::cutpoints::probs_to_cutpoints;
use crate::math::{link, normal, polychoric::polychoric_to_product_moment};
use crate::model::Params;

/// Quantile of sorted values by linear interpolation between order
/// statistics (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Interval {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        Interval { median: quantile_sorted(&v, 0.5), lower: quantile_sorted(&v, 0.025), upper: quantile_sorted(&v, 0.975) }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Study(usize),
    Summary,
    Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Positive only if both tests are positive.
    Btn,
    /// Negative only if both tests are negative.
    Btp,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BTN" => Ok(Strategy::Btn),
            "BTP" => Ok(Strategy::Btp),
            _ => Err(Error::InvalidArgument(format!("unknown strategy `{s}` (expected BTN or BTP)"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Btn => "BTN",
            Strategy::Btp => "BTP",
        })
    }
}

/// Sensitivity and specificity at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub se: f64,
    pub sp: f64,
}

fn check_threshold(test: &TestDefinition, k: Option<usize>) -> Result<()> {
    match (test.kind, k) {
        (TestKind::Dichotomous, None) => Ok(()),
        (TestKind::Ordinal, Some(k)) if (1..test.num_categories).contains(&k) => Ok(()),
        (TestKind::Dichotomous, Some(_)) => Err(Error::InvalidArgument(format!("test {} is dichotomous and takes no threshold", test.id + 1))),
        (TestKind::Ordinal, _) => Err(Error::InvalidArgument(format!(
            "test {} needs a threshold in 1..={}",
            test.id + 1,
            test.num_categories - 1
        ))),
    }
}

/// Accuracy of a test with latent means `nu` and per-class cutpoints; `k`
/// counts from one and declares categories `>= k` positive.
fn accuracy_at(nu: [f64; 2], cut: Option<[&[f64]; 2]>, k: Option<usize>) -> Accuracy {
    match (cut, k) {
        (Some(c), Some(k)) => Accuracy { se: link::cdf(nu[1] - c[1][k - 1]), sp: link::cdf(c[0][k - 1] - nu[0]) },
        _ => Accuracy { se: link::cdf(nu[1]), sp: link::cdf(-nu[0]) },
    }
}

/// Study-specific accuracy of test `t` in study `s`.
pub fn study_accuracy(p: &Params<f64>, tests: &[TestDefinition], s: usize, t: usize, k: Option<usize>) -> Result<Accuracy> {
    check_threshold(&tests[t], k)?;
    if s >= p.nu.len() {
        return Err(Error::InvalidArgument(format!("study {} out of range", s + 1)));
    }
    let cut = p.ordinal[t].as_ref().map(|o| [o.cutpoints[s][0].as_slice(), o.cutpoints[s][1].as_slice()]);
    Ok(accuracy_at(p.nu[s][t], cut, k))
}

/// Cutpoints of the average study: the population simplex mapped through
/// the inverse link with anchor zero.
pub fn summary_cutpoints(p: &Params<f64>, t: usize, d: usize) -> Option<Vec<f64>> {
    let o = p.ordinal[t].as_ref()?;
    probs_to_cutpoints(&o.phi[d], 0.0).ok().map(|c| c.values().to_vec())
}

/// Accuracy at the population means.
pub fn summary_accuracy(p: &Params<f64>, tests: &[TestDefinition], t: usize, k: Option<usize>) -> Result<Accuracy> {
    check_threshold(&tests[t], k)?;
    let cuts = p.ordinal[t].as_ref().map(|_| [summary_cutpoints(p, t, 0).unwrap(), summary_cutpoints(p, t, 1).unwrap()]);
    let cut = cuts.as_ref().map(|c| [c[0].as_slice(), c[1].as_slice()]);
    Ok(accuracy_at(p.mu[t], cut, k))
}

/// Latent means and cutpoints of a new study drawn from the between-study
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct NewStudy {
    pub nu: Vec<[f64; 2]>,
    pub cutpoints: Vec<Option<[Vec<f64>; 2]>>,
}

impl NewStudy {
    pub fn accuracy(&self, tests: &[TestDefinition], t: usize, k: Option<usize>) -> Result<Accuracy> {
        check_threshold(&tests[t], k)?;
        let cut = self.cutpoints[t].as_ref().map(|c| [c[0].as_slice(), c[1].as_slice()]);
        Ok(accuracy_at(self.nu[t], cut, k))
    }
}

pub fn predict_new_study<R: Rng>(p: &Params<f64>, rng: &mut R) -> NewStudy {
    let nu = (0..p.mu.len())
        .map(|t| {
            let z1: f64 = rng.sample(StandardNormal);
            let z0: f64 = rng.sample(StandardNormal);
            let r = p.rho[t];
            let [m0, m1] = p.mu[t];
            let [s0, s1] = p.sigma[t];
            [m0 + s0 * (r * z1 + (1.0 - r * r).max(0.0).sqrt() * z0), m1 + s1 * z1]
        })
        .collect();
    let cutpoints = p
        .ordinal
        .iter()
        .map(|o| {
            o.as_ref().map(|o| {
                let mut pair = [vec![], vec![]];
                for d in 0..2 {
                    let mut g: Vec<f64> = o.phi[d].iter().map(|&ph| Gamma::new(o.kappa[d] * ph, 1.0).map_or(ph, |g| g.sample(rng))).collect();
                    if !(g.iter().sum::<f64>() > 0.0) {
                        g.clone_from(&o.phi[d]);
                    }
                    let total: f64 = g.iter().sum();
                    let probs: Vec<f64> = g.iter().map(|v| (v / total).max(1e-12)).collect();
                    let total: f64 = probs.iter().sum();
                    let probs: Vec<f64> = probs.iter().map(|v| v / total).collect();
                    pair[d] = probs_to_cutpoints(&probs, 0.0).expect("floored simplex").values().to_vec();
                }
                pair
            })
        })
        .collect();
    NewStudy { nu, cutpoints }
}

/// Joint accuracy of a test pair under a combination strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAccuracy {
    pub se: f64,
    pub sp: f64,
    /// Set when a value fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

/// Summary-level joint accuracy of tests `t` and `u` at thresholds `k`, `l`.
/// Within-class covariances of the two results come from the global
/// correlation between the tests, converted to the binary scale.
#[allow(clippy::too_many_arguments)]
pub fn joint_accuracy(
    p: &Params<f64>,
    tests: &[TestDefinition],
    t: usize,
    u: usize,
    k: Option<usize>,
    l: Option<usize>,
    strategy: Strategy,
) -> Result<JointAccuracy> {
    if t == u {
        return Err(Error::InvalidArgument("joint accuracy needs two different tests".into()));
    }
    let a = summary_accuracy(p, tests, t, k)?;
    let b = summary_accuracy(p, tests, u, l)?;
    let latent = |d: usize| -> f64 {
        for blk in &p.blocks {
            if let (Some(i), Some(j)) = (blk.tests.iter().position(|&x| x == t), blk.tests.iter().position(|&x| x == u)) {
                return blk.global[d].get(i.max(j), i.min(j));
            }
        }
        0.0
    };
    // marginal probability of a positive result in class d
    let pos = |acc: Accuracy, d: usize| if d == 1 { acc.se } else { 1.0 - acc.sp };
    let cov = |d: usize| -> f64 {
        let eps = latent(d);
        let (ma, mb) = (pos(a, d), pos(b, d));
        let sd = (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt();
        if eps == 0.0 || !(sd > 0.0) {
            return 0.0;
        }
        let rho = polychoric_to_product_moment(normal::quantile(1.0 - ma), normal::quantile(1.0 - mb), eps.clamp(-0.999_999, 0.999_999)).unwrap_or(0.0);
        rho * sd
    };
    let (c1, c0) = (cov(1), cov(0));
    let (se, sp) = match strategy {
        Strategy::Btn => (a.se * b.se + c1, 1.0 - (1.0 - a.sp) * (1.0 - b.sp) - c0),
        Strategy::Btp => (1.0 - (1.0 - a.se) * (1.0 - b.se) - c1, a.sp * b.sp + c0),
    };
    let clamped = !(0.0..=1.0).contains(&se) || !(0.0..=1.0).contains(&sp);
    Ok(JointAccuracy { se: se.clamp(0.0, 1.0), sp: sp.clamp(0.0, 1.0), clamped })
}

/// One summarised estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub estimand: String,
    pub measure: String,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A joint estimand request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointRequest {
    pub t: usize,
    pub u: usize,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub strategy: Strategy,
}

impl std::str::FromStr for JointRequest {
    type Err = Error;
    /// Parses `t,u,k,l,STRATEGY` with one-based tests and thresholds; a
    /// threshold of `-` or `0` marks a dichotomous test.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidArgument(format!("joint request `{s}` must be t,u,k,l,BTN|BTP"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let test = |v: &str| v.parse::<usize>().ok().filter(|&x| x >= 1).map(|x| x - 1).ok_or_else(bad);
        let thr = |v: &str| -> Result<Option<usize>> {
            match v {
                "-" | "0" => Ok(None),
                _ => v.parse::<usize>().map(Some).map_err(|_| bad()),
            }
        };
        Ok(JointRequest { t: test(parts[0])?, u: test(parts[1])?, k: thr(parts[2])?, l: thr(parts[3])?, strategy: parts[4].parse()? })
    }
}

fn thresholds(test: &TestDefinition) -> Vec<Option<usize>> {
    match test.kind {
        TestKind::Dichotomous => vec![None],
        TestKind::Ordinal => (1..test.num_categories).map(Some).collect(),
    }
}

fn label(t: usize, k: Option<usize>, scope: Scope) -> String {
    let scope = match scope {
        Scope::Study(s) => format!("study {}", s + 1),
        Scope::Summary => "summary".into(),
        Scope::Prediction => "prediction".into(),
    };
    match k {
        Some(k) => format!("test {} k={k} {scope}", t + 1),
        None => format!("test {} {scope}", t + 1),
    }
}

/// Per-draw accuracy values for every estimand, keyed by label.
#[derive(Debug, Clone, Default)]
pub struct AccuracyDraws {
    pub labels: Vec<String>,
    pub se: Vec<Vec<f64>>,
    pub sp: Vec<Vec<f64>>,
    pub clamped: Vec<usize>,
}

impl AccuracyDraws {
    fn slot(&mut self, name: String) -> usize {
        if let Some(i) = self.labels.iter().position(|l| *l == name) {
            return i;
        }
        self.labels.push(name);
        self.se.push(vec![]);
        self.sp.push(vec![]);
        self.clamped.push(0);
        self.labels.len() - 1
    }

    fn push(&mut self, name: String, a: Accuracy) {
        let i = self.slot(name);
        self.se[i].push(a.se);
        self.sp[i].push(a.sp);
    }

    pub fn get(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.labels.iter().position(|l| l == name).map(|i| (self.se[i].as_slice(), self.sp[i].as_slice()))
    }

    pub fn summaries(&self) -> Vec<AccuracySummary> {
        let mut out = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            for (m, v) in [("Se", &self.se[i]), ("Sp", &self.sp[i])] {
                let iv = Interval::of(v);
                out.push(AccuracySummary { estimand: l.clone(), measure: m.into(), median: iv.median, lower: iv.lower, upper: iv.upper });
            }
        }
        out
    }
}

/// Study-level, summary, predictive and requested joint accuracies for each
/// draw. `rng` drives the predictive draws only.
pub fn accuracy_draws<R: Rng>(draws: &[Params<f64>], tests: &[TestDefinition], joint: &[JointRequest], with_studies: bool, rng: &mut R) -> Result<AccuracyDraws> {
    let mut out = AccuracyDraws::default();
    for p in draws {
        let new = predict_new_study(p, rng);
        for (t, test) in tests.iter().enumerate() {
            for k in thresholds(test) {
                out.push(label(t, k, Scope::Summary), summary_accuracy(p, tests, t, k)?);
                out.push(label(t, k, Scope::Prediction), new.accuracy(tests, t, k)?);
                if with_studies {
                    for s in 0..p.nu.len() {
                        out.push(label(t, k, Scope::Study(s)), study_accuracy(p, tests, s, t, k)?);
                    }
                }
            }
        }
        for j in joint {
            let r = joint_accuracy(p, tests, j.t, j.u, j.k, j.l, j.strategy)?;
            let name = format!(
                "{} test {}{} & test {}{} summary",
                j.strategy,
                j.t + 1,
                j.k.map_or(String::new(), |k| format!(" k={k}")),
                j.u + 1,
                j.l.map_or(String::new(), |l| format!(" k={l}"))
            );
            let i = out.slot(name.clone());
            out.clamped[i] += usize::from(r.clamped);
            out.push(name, Accuracy { se: r.se, sp: r.sp });
        }
    }
    Ok(out)
}

pub fn write_summaries<W: Write>(rows: &[AccuracySummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Gaussian ellipse fitted on the logit scale of (1 - Sp, Se).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// Radius in Mahalanobis units.
    pub radius: f64,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Ellipse {
    /// Fits the 95% region of the cloud `(fpr, tpr)`.
    pub fn fit(fpr: &[f64], tpr: &[f64]) -> Ellipse {
        let x: Vec<f64> = fpr.iter().map(|&v| logit(v)).collect();
        let y: Vec<f64> = tpr.iter().map(|&v| logit(v)).collect();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(&y) {
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
            sxy += (a - mx) * (b - my);
        }
        let d = n - 1.0;
        Ellipse { center: [mx, my], cov: [[sxx / d, sxy / d], [sxy / d, syy / d]], radius: (-2.0 * 0.05f64.ln()).sqrt() }
    }

    /// Whether `(fpr, tpr)` lies inside the ellipse.
    pub fn contains(&self, fpr: f64, tpr: f64) -> bool {
        let (dx, dy) = (logit(fpr) - self.center[0], logit(tpr) - self.center[1]);
        let [[a, b], [_, c]] = self.cov;
        let det = a * c - b * b;
        if !(det > 0.0) {
            return dx.abs() < 1e-12 && dy.abs() < 1e-12;
        }
        (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det <= self.radius * self.radius
    }

    /// Boundary points on the probability scale.
    pub fn boundary(&self, points: usize) -> Vec<(f64, f64)> {
        let [[a, b], [_, c]] = self.cov;
        let l00 = a.max(0.0).sqrt();
        let l10 = if l00 > 0.0 { b / l00 } else { 0.0 };
        let l11 = (c - l10 * l10).max(0.0).sqrt();
        (0..points)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
                let (u, v) = (self.radius * th.cos(), self.radius * th.sin());
                (expit(self.center[0] + l00 * u), expit(self.center[1] + l10 * u + l11 * v))
            })
            .collect()
    }
}

/// Plot data for one estimand: the summary cloud and both regions.
#[derive(Debug, Clone, PartialEq)]
pub struct SrocData {
    pub estimand: String,
    pub summary: Vec<(f64, f64)>,
    pub posterior: Ellipse,
    pub prediction: Ellipse,
}

/// sROC data for every test and threshold of `acc`.
pub fn sroc_data(acc: &AccuracyDraws, tests: &[TestDefinition]) -> Vec<SrocData> {
    let mut out = Vec::new();
    for (t, test) in tests.iter().enumerate() {
        for k in thresholds(test) {
            let (Some((se, sp)), Some((pse, psp))) = (acc.get(&label(t, k, Scope::Summary)), acc.get(&label(t, k, Scope::Prediction))) else {
                continue;
            };
            let fpr: Vec<f64> = sp.iter().map(|v| 1.0 - v).collect();
            let pfpr: Vec<f64> = psp.iter().map(|v| 1.0 - v).collect();
            out.push(SrocData {
                estimand: label(t, k, Scope::Summary).replace(" summary", ""),
                summary: fpr.iter().copied().zip(se.iter().copied()).collect(),
                posterior: Ellipse::fit(&fpr, se),
                prediction: Ellipse::fit(&pfpr, pse),
            });
        }
    }
    out
}

/// Long-format sROC table: `estimand,kind,index,fpr,tpr` with kinds `draw`,
/// `posterior` and `prediction` (boundary points).
pub fn write_sroc<W: Write>(data: &[SrocData], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["estimand", "kind", "index", "fpr", "tpr"])?;
    for d in data {
        let rows = d
            .summary
            .iter()
            .map(|&p| ("draw", p))
            .chain(d.posterior.boundary(100).into_iter().map(|p| ("posterior", p)))
            .chain(d.prediction.boundary(100).into_iter().map(|p| ("prediction", p)));
        let mut counts = std::collections::HashMap::new();
        for (kind, (x, y)) in rows {
            let i = counts.entry(kind).or_insert(0usize);
            *i += 1;
            out.write_record([d.estimand.as_str(), kind, &i.to_string(), &x.to_string(), &y.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
