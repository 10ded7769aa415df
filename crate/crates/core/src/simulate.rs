//! Synthetic datasets from the generative model, and exact response-pattern
//! probabilities for checking the likelihood.
//!
//! The latent vector of an individual in class `d` is `Z = nu + L E` where
//! `L` is the lower Cholesky factor of the within-study correlation matrix
//! (tests in index order) and the components of `E` are independent with
//! distribution function `Φ′`. This is the distribution whose box
//! probabilities the GHK estimator targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MetaDataset, StudyData, TestDefinition, TestKind};
use crate::error::{Error, Result};
use crate::math::corr::{pool_correlation, CorrelationMatrix, Mat};
use crate::math::cutpoints::{interval_prob, probs_to_cutpoints};
use crate::math::link;
use crate::math::quadrature::Composite;
use crate::model::ghk::{box_probability, GhkNodes};
use crate::model::params::Params;
use crate::model::prior::lkj_eta;

/// Study-level truth: everything needed to generate individuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTruth {
    pub prevalence: f64,
    /// Latent means per test, `[class 0, class 1]`.
    pub nu: Vec<[f64; 2]>,
    /// Cutpoints per test and class; `None` for dichotomous tests.
    pub cutpoints: Vec<Option<[Vec<f64>; 2]>>,
    /// Within-study correlation over all tests, per class.
    pub correlation: [CorrelationMatrix; 2],
}

/// Population-level truth from which study-level truths are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationTruth {
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    /// Dirichlet concentration per ordinal test and class; `[]` for a
    /// dichotomous test.
    #[serde(default, with = "empty_as_none")]
    pub kappa: Vec<Option<[f64; 2]>>,
    /// Population simplex per ordinal test and class; `[]` for a dichotomous
    /// test.
    #[serde(default, with = "empty_as_none")]
    pub phi: Vec<Option<[Vec<f64>; 2]>>,
    /// Global within-study correlation per class (all tests).
    pub global: [CorrelationMatrix; 2],
    /// Pooling weight of the study-specific deviation, per class.
    pub beta: [f64; 2],
    /// 95% bound of the LKJ prior the deviations are drawn from.
    #[serde(default = "default_corr_bound")]
    pub corr_bound: f64,
    /// Study prevalences are drawn uniformly from this range.
    pub prevalence_range: (f64, f64),
}

/// Missing entries of a per-test list written as empty arrays, which TOML
/// can express where it cannot express null.
mod empty_as_none {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Slot<T> {
        Some(T),
        None([(); 0]),
    }

    pub fn serialize<T: Serialize + Clone, S: Serializer>(v: &[Option<T>], s: S) -> Result<S::Ok, S::Error> {
        let slots: Vec<Slot<T>> = v.iter().map(|x| x.clone().map_or(Slot::None([]), Slot::Some)).collect();
        slots.serialize(s)
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<T>>, D::Error> {
        let slots: Vec<Slot<T>> = Vec::deserialize(d)?;
        Ok(slots
            .into_iter()
            .map(|s| match s {
                Slot::Some(x) => Some(x),
                Slot::None(_) => None,
            })
            .collect())
    }
}

fn default_corr_bound() -> f64 {
    crate::model::prior::CORR_BOUND
}

/// Population and study-level truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub population: Option<PopulationTruth>,
    pub studies: Vec<StudyTruth>,
}

impl StudyTruth {
    pub fn validate(&self, tests: &[TestDefinition]) -> Result<()> {
        let t = tests.len();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.prevalence >= 0.0 && self.prevalence <= 1.0) {
            return bad(format!("prevalence {} outside [0, 1]", self.prevalence));
        }
        if self.nu.len() != t || self.cutpoints.len() != t {
            return bad("truth does not match the number of tests".into());
        }
        if self.nu.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite latent mean".into());
        }
        for (i, test) in tests.iter().enumerate() {
            match (&self.cutpoints[i], test.kind) {
                (None, TestKind::Dichotomous) => {}
                (Some(c), TestKind::Ordinal) => {
                    for cd in c {
                        if cd.len() != test.num_cutpoints() {
                            return bad(format!("test {} needs {} cutpoints", i + 1, test.num_cutpoints()));
                        }
                        crate::math::cutpoints::CutpointVector::new(cd.clone())?;
                    }
                }
                _ => return bad(format!("cutpoints do not match the kind of test {}", i + 1)),
            }
        }
        for c in &self.correlation {
            if c.dim() != t {
                return bad("correlation dimension does not match the number of tests".into());
            }
        }
        Ok(())
    }

    /// Study `s` of a model parameter state.
    pub fn from_params(p: &Params<f64>, s: usize) -> Result<StudyTruth> {
        let t_count = p.mu.len();
        let mut correlation = [CorrelationMatrix::identity(t_count), CorrelationMatrix::identity(t_count)];
        for (d, slot) in correlation.iter_mut().enumerate() {
            let mut m = Mat::<f64>::identity(t_count);
            for (b, block) in p.blocks.iter().enumerate() {
                let pooled = p.pooled(b, s, d);
                for (i, &ti) in block.tests.iter().enumerate() {
                    for (j, &tj) in block.tests.iter().enumerate() {
                        m.set(ti, tj, pooled.get(i, j));
                    }
                }
            }
            *slot = CorrelationMatrix::new(m)?;
        }
        Ok(StudyTruth {
            prevalence: p.prevalence[s],
            nu: p.nu[s].clone(),
            cutpoints: p.ordinal.iter().map(|o| o.as_ref().map(|o| o.cutpoints[s].clone())).collect(),
            correlation,
        })
    }

    fn bounds(&self, tests: &[TestDefinition], d: usize, y: &[u8]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(tests.len());
        let mut hi = Vec::with_capacity(tests.len());
        for (t, test) in tests.iter().enumerate() {
            let nu = self.nu[t][d];
            let k = y[t] as usize;
            let (a, b) = match test.kind {
                TestKind::Dichotomous => {
                    if k == 0 {
                        (f64::NEG_INFINITY, 0.0)
                    } else {
                        (0.0, f64::INFINITY)
                    }
                }
                TestKind::Ordinal => {
                    let c = &self.cutpoints[t].as_ref().unwrap()[d];
                    (if k > 0 { c[k - 1] } else { f64::NEG_INFINITY }, if k < c.len() { c[k] } else { f64::INFINITY })
                }
            };
            lo.push(a - nu);
            hi.push(b - nu);
        }
        (lo, hi)
    }
}

/// All response patterns in lexicographic order, last test varying fastest.
pub fn all_patterns(tests: &[TestDefinition]) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for t in tests {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..t.num_categories as u8).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

fn inv(u: f64) -> f64 {
    link::quantile(u.clamp(1e-300, 1.0 - 1e-16))
}

fn step_prob(lo: f64, hi: f64) -> f64 {
    let to_opt = |v: f64| v.is_finite().then_some(v);
    interval_prob(to_opt(lo), to_opt(hi))
}

/// `P(lo < L E < hi)` by the most accurate available method.
fn class_box(lo: &[f64], hi: &[f64], l: &Mat<f64>) -> f64 {
    let d = lo.len();
    let diagonal = (0..d).all(|i| (0..i).all(|j| l.get(i, j) == 0.0));
    if diagonal {
        return (0..d).map(|t| step_prob(lo[t] / l.get(t, t), hi[t] / l.get(t, t))).product();
    }
    let q = Composite::new(20, 12);
    match d {
        2 => {
            let (l10, l11) = (l.get(1, 0), l.get(1, 1));
            q.integrate(link::cdf(lo[0]), link::cdf(hi[0]), |u| {
                let e0 = inv(u);
                step_prob((lo[1] - l10 * e0) / l11, (hi[1] - l10 * e0) / l11)
            })
        }
        3 => {
            let (l10, l11) = (l.get(1, 0), l.get(1, 1));
            let (l20, l21, l22) = (l.get(2, 0), l.get(2, 1), l.get(2, 2));
            q.integrate(link::cdf(lo[0]), link::cdf(hi[0]), |u0| {
                let e0 = inv(u0);
                let a1 = link::cdf((lo[1] - l10 * e0) / l11);
                let b1 = link::cdf((hi[1] - l10 * e0) / l11);
                q.integrate(a1, b1, |u1| {
                    let e1 = inv(u1);
                    let m = l20 * e0 + l21 * e1;
                    step_prob((lo[2] - m) / l22, (hi[2] - m) / l22)
                })
            })
        }
        _ => {
            thread_local! {
                static NODES: GhkNodes = GhkNodes::new(3, 65_536, 20_240_917);
            }
            let lv = l.as_slice().to_vec();
            NODES.with(|n| box_probability(lo, hi, &lv, n, None).value)
        }
    }
}

/// Probability of every response pattern in study `truth`, paired with the
/// pattern, in the order of [`all_patterns`]. Exact products under
/// conditional independence; one- and two-dimensional quadrature for two
/// and three tests; GHK with 65 536 nodes for four.
pub fn enumerate_pattern_probs(truth: &StudyTruth, tests: &[TestDefinition]) -> Result<Vec<(Vec<u8>, f64)>> {
    if tests.len() > 4 {
        return Err(Error::InvalidArgument(format!("enumeration supports at most 4 tests, got {}", tests.len())));
    }
    truth.validate(tests)?;
    let chol = [truth.correlation[0].cholesky(), truth.correlation[1].cholesky()];
    Ok(all_patterns(tests)
        .into_iter()
        .map(|y| {
            let mut p = 0.0;
            for (d, w) in [(0, 1.0 - truth.prevalence), (1, truth.prevalence)] {
                if w == 0.0 {
                    continue;
                }
                let (lo, hi) = truth.bounds(tests, d, &y);
                p += w * class_box(&lo, &hi, &chol[d]);
            }
            (y, p)
        })
        .collect())
}

/// One individual's responses.
fn draw_individual<R: Rng>(truth: &StudyTruth, tests: &[TestDefinition], chol: &[Mat<f64>; 2], rng: &mut R) -> Vec<u8> {
    let d = usize::from(rng.random::<f64>() < truth.prevalence);
    let t_count = tests.len();
    let e: Vec<f64> = (0..t_count).map(|_| inv(rng.random::<f64>())).collect();
    (0..t_count)
        .map(|t| {
            let mut z = truth.nu[t][d];
            for (j, ej) in e.iter().enumerate().take(t + 1) {
                z += chol[d].get(t, j) * ej;
            }
            match tests[t].kind {
                TestKind::Dichotomous => u8::from(z > 0.0),
                TestKind::Ordinal => {
                    let c = &truth.cutpoints[t].as_ref().unwrap()[d];
                    c.iter().filter(|&&ck| ck < z).count() as u8
                }
            }
        })
        .collect()
}

/// Simulates `n[s]` individuals for every study of `truth`. Study `s` uses
/// its own random stream, so studies can be added without changing the
/// others.
pub fn simulate_dataset(truth: &TrueParameters, tests: &[TestDefinition], n: &[usize], seed: u64) -> Result<MetaDataset> {
    if n.len() != truth.studies.len() {
        return Err(Error::InvalidArgument(format!("{} study sizes for {} studies", n.len(), truth.studies.len())));
    }
    let studies = truth
        .studies
        .iter()
        .zip(n)
        .enumerate()
        .map(|(s, (st, &ns))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let responses = simulate_study(st, tests, ns, &mut rng)?;
            Ok(StudyData { study_id: (s + 1).to_string(), responses })
        })
        .collect::<Result<Vec<_>>>()?;
    MetaDataset::new(tests.to_vec(), studies)
}

/// `n` response patterns drawn from one study's generative model.
pub fn simulate_study<R: Rng>(truth: &StudyTruth, tests: &[TestDefinition], n: usize, rng: &mut R) -> Result<Vec<Vec<u8>>> {
    truth.validate(tests)?;
    let chol = [truth.correlation[0].cholesky(), truth.correlation[1].cholesky()];
    Ok((0..n).map(|_| draw_individual(truth, tests, &chol, rng)).collect())
}

fn lkj_draw<R: Rng>(dim: usize, eta: f64, rng: &mut R) -> CorrelationMatrix {
    let mut l = Mat::<f64>::zeros(dim);
    l.set(0, 0, 1.0);
    for i in 1..dim {
        let mut sum_sqs = 0.0;
        for j in 0..i {
            let shape = eta + (dim - 2 - j) as f64 / 2.0;
            let z = 2.0 * Beta::new(shape, shape).unwrap().sample(rng) - 1.0;
            let v = z * (1.0f64 - sum_sqs).sqrt();
            l.set(i, j, v);
            sum_sqs += v * v;
        }
        l.set(i, i, (1.0f64 - sum_sqs).max(0.0).sqrt());
    }
    let mut m = Mat::<f64>::identity(dim);
    for i in 0..dim {
        for j in 0..i {
            let v: f64 = (0..=j).map(|k| l.get(i, k) * l.get(j, k)).sum();
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    CorrelationMatrix::new(m).expect("LKJ draw is a correlation matrix")
}

impl PopulationTruth {
    pub fn validate(&self, tests: &[TestDefinition]) -> Result<()> {
        let t = tests.len();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.mu.len() != t || self.sigma.len() != t || self.rho.len() != t {
            return bad("population truth does not match the number of tests".into());
        }
        if self.sigma.iter().flatten().any(|&s| !(s >= 0.0)) || self.rho.iter().any(|r| !(r.abs() < 1.0)) {
            return bad("sigma must be non-negative and |rho| < 1".into());
        }
        for (i, test) in tests.iter().enumerate() {
            if test.is_ordinal() {
                let (Some(Some(k)), Some(Some(phi))) = (self.kappa.get(i), self.phi.get(i)) else {
                    return bad(format!("ordinal test {} needs kappa and phi", i + 1));
                };
                for d in 0..2 {
                    if !(k[d] > 0.0) || phi[d].len() != test.num_categories || phi[d].iter().any(|&v| !(v > 0.0)) {
                        return bad(format!("invalid cutpoint population for test {}", i + 1));
                    }
                    if (phi[d].iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return bad(format!("phi of test {} must sum to one", i + 1));
                    }
                }
            }
        }
        if self.global.iter().any(|g| g.dim() != t) {
            return bad("global correlation dimension does not match the number of tests".into());
        }
        if self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad("beta outside [0, 1]".into());
        }
        let (lo, hi) = self.prevalence_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("invalid prevalence range".into());
        }
        Ok(())
    }

    /// Draws `num_studies` study-level truths from the hierarchical model.
    /// Correlations that are exactly zero in the global matrix stay zero in
    /// every study.
    pub fn draw_studies(&self, tests: &[TestDefinition], num_studies: usize, seed: u64) -> Result<TrueParameters> {
        self.validate(tests)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let t_count = tests.len();
        let eta = lkj_eta(t_count, self.corr_bound);
        let mut studies = Vec::with_capacity(num_studies);
        for _ in 0..num_studies {
            let nu = (0..t_count)
                .map(|t| {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z0: f64 = rng.sample(StandardNormal);
                    let r = self.rho[t];
                    let [m0, m1] = self.mu[t];
                    let [s0, s1] = self.sigma[t];
                    [m0 + s0 * (r * z1 + (1.0 - r * r).sqrt() * z0), m1 + s1 * z1]
                })
                .collect();
            let cutpoints = tests
                .iter()
                .enumerate()
                .map(|(t, test)| {
                    if !test.is_ordinal() {
                        return Ok(None);
                    }
                    let k = self.kappa[t].unwrap();
                    let phi = self.phi[t].as_ref().unwrap();
                    let mut pair = [vec![], vec![]];
                    for d in 0..2 {
                        let alpha: Vec<f64> = phi[d].iter().map(|p| p * k[d]).collect();
                        let g: Vec<f64> = alpha
                            .iter()
                            .map(|&a| rand_distr::Gamma::new(a, 1.0).unwrap().sample(&mut rng).max(1e-12))
                            .collect();
                        let total: f64 = g.iter().sum();
                        let probs: Vec<f64> = g.iter().map(|v| v / total).collect();
                        pair[d] = probs_to_cutpoints(&probs, 0.0)?.values().to_vec();
                    }
                    Ok(Some(pair))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut correlation = [CorrelationMatrix::identity(t_count), CorrelationMatrix::identity(t_count)];
            for d in 0..2 {
                let dev = lkj_draw(t_count, eta, &mut rng);
                let mut pooled = pool_correlation(&self.global[d], &dev, self.beta[d])?;
                // keep exact zeros of the global matrix (no modelled dependence)
                let mut m = pooled.matrix().clone();
                for i in 0..t_count {
                    for j in 0..i {
                        if self.global[d].get(i, j) == 0.0 {
                            m.set(i, j, 0.0);
                            m.set(j, i, 0.0);
                        }
                    }
                }
                pooled = CorrelationMatrix::new(m)?;
                correlation[d] = pooled;
            }
            let (lo, hi) = self.prevalence_range;
            let prevalence = lo + (hi - lo) * rng.random::<f64>();
            studies.push(StudyTruth { prevalence, nu, cutpoints, correlation });
        }
        Ok(TrueParameters { population: Some(self.clone()), studies })
    }

    /// Summary cutpoints implied by the population simplex.
    pub fn summary_cutpoints(&self, t: usize, d: usize) -> Option<Vec<f64>> {
        let phi = self.phi.get(t)?.as_ref()?;
        probs_to_cutpoints(&phi[d], 0.0).ok().map(|c| c.values().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tests3() -> Vec<TestDefinition> {
        vec![
            TestDefinition::dichotomous(0, "A"),
            TestDefinition::dichotomous(1, "B"),
            TestDefinition::ordinal(2, "C", 3).unwrap(),
        ]
    }

    fn corr3(r: [f64; 3]) -> CorrelationMatrix {
        CorrelationMatrix::from_rows(&[vec![1.0, r[0], r[1]], vec![r[0], 1.0, r[2]], vec![r[1], r[2], 1.0]]).unwrap()
    }

    fn truth(r: [f64; 3]) -> StudyTruth {
        StudyTruth {
            prevalence: 0.3,
            nu: vec![[-1.0, 1.2], [-0.5, 0.7], [-0.2, 0.6]],
            cutpoints: vec![None, None, Some([vec![-0.4, 0.9], vec![-0.8, 0.5]])],
            correlation: [corr3(r), corr3([r[0] * 0.5, -r[1], r[2]])],
        }
    }

    #[test]
    fn conditional_independence_is_exact() {
        let probs = enumerate_pattern_probs(&truth([0.0; 3]), &tests3()).unwrap();
        assert_eq!(probs.len(), 12);
        let total: f64 = probs.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dependent_enumeration_normalises() {
        let probs = enumerate_pattern_probs(&truth([0.5, -0.3, 0.4]), &tests3()).unwrap();
        let total: f64 = probs.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 2e-4, "{total}");
        assert!(probs.iter().all(|p| p.1 > 0.0));
    }

    #[test]
    fn quadrature_agrees_with_high_resolution_ghk() {
        let t = truth([0.5, -0.3, 0.4]);
        let tests = tests3();
        let l = t.correlation[1].cholesky();
        let nodes = GhkNodes::new(2, 65_536, 3);
        for y in all_patterns(&tests) {
            let (lo, hi) = t.bounds(&tests, 1, &y);
            let q = class_box(&lo, &hi, &l);
            let g = box_probability(&lo, &hi, l.as_slice(), &nodes, None).value;
            assert!((q - g).abs() < 2e-5, "{y:?}: {q} vs {g}");
        }
    }

    #[test]
    fn orthant_analog_near_one_third() {
        let tests = vec![TestDefinition::dichotomous(0, "A"), TestDefinition::dichotomous(1, "B")];
        let c = CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let t = StudyTruth { prevalence: 1.0, nu: vec![[0.0; 2]; 2], cutpoints: vec![None, None], correlation: [c.clone(), c] };
        let p = enumerate_pattern_probs(&t, &tests).unwrap();
        assert!((p[0].1 - 1.0 / 3.0).abs() < 5e-3, "{}", p[0].1);
    }

    #[test]
    fn saturated_truth_gives_all_positive() {
        let tests = vec![TestDefinition::dichotomous(0, "A"), TestDefinition::dichotomous(1, "B")];
        let c = CorrelationMatrix::identity(2);
        let t = TrueParameters {
            population: None,
            studies: vec![StudyTruth { prevalence: 1.0, nu: vec![[5.0; 2]; 2], cutpoints: vec![None, None], correlation: [c.clone(), c] }],
        };
        // P(all positive) = Φ′(5)² per person; 50 people all positive is likely
        let ds = simulate_dataset(&t, &tests, &[50], 1).unwrap();
        let positives = ds.studies()[0].responses.iter().filter(|r| r == &&vec![1, 1]).count();
        assert!(positives >= 49);
    }

    #[test]
    fn frequencies_match_enumeration() {
        let tests = tests3();
        let st = truth([0.5, -0.3, 0.4]);
        let t = TrueParameters { population: None, studies: vec![st.clone()] };
        let n = 100_000;
        let ds = simulate_dataset(&t, &tests, &[n], 7).unwrap();
        let agg = ds.aggregate();
        for (y, p) in enumerate_pattern_probs(&st, &tests).unwrap() {
            let count = *agg[0].counts.get(&y).unwrap_or(&0) as f64;
            let se = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() < 3.0 * se + 1.0, "{y:?}: {count} vs {}", n as f64 * p);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let t = TrueParameters { population: None, studies: vec![truth([0.2, 0.1, 0.3]), truth([0.0; 3])] };
        let a = simulate_dataset(&t, &tests3(), &[30, 40], 5).unwrap();
        let b = simulate_dataset(&t, &tests3(), &[30, 40], 5).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&t, &tests3(), &[30, 40], 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn enumeration_guard() {
        let tests: Vec<_> = (0..5).map(|i| TestDefinition::dichotomous(i, "x")).collect();
        let c = CorrelationMatrix::identity(5);
        let t = StudyTruth { prevalence: 0.5, nu: vec![[0.0; 2]; 5], cutpoints: vec![None; 5], correlation: [c.clone(), c] };
        assert!(enumerate_pattern_probs(&t, &tests).is_err());
    }
}
