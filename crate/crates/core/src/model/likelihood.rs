use crate::ad::Scalar;
use crate::data::TestKind;
use crate::error::{Error, Result};
use crate::math::corr::{cholesky, pool, Mat};
use crate::math::cutpoints::ln_interval_prob;
use crate::model::ghk::{pattern_probabilities, BoxGrad, GhkNodes, PatternTrie};
use crate::model::params::Params;
use crate::model::prior::log_prior;
use crate::model::Model;

/// Centred latent bounds per test; `None` is an infinite end.
pub type Bounds = Vec<(Option<f64>, Option<f64>)>;

/// Sum of `values[index[n]]` over `n` by recursive halving. Splitting at the
/// midpoint makes the sum of a sequence repeated twice exactly twice the sum
/// of the sequence.
pub fn pairwise_sum(index: &[usize], values: &[f64]) -> f64 {
    match index.len() {
        0 => 0.0,
        1 => values[index[0]],
        n => {
            let h = n / 2;
            pairwise_sum(&index[..h], values) + pairwise_sum(&index[h..], values)
        }
    }
}

type Interval<S> = (Option<S>, Option<S>);

impl Model {
    fn bounds<S: Scalar>(&self, p: &Params<S>, s: usize, d: usize, t: usize, y: u8) -> Interval<S> {
        let nu = p.nu[s][t][d];
        match self.tests[t].kind {
            TestKind::Dichotomous => {
                if y == 0 {
                    (None, Some(-nu))
                } else {
                    (Some(-nu), None)
                }
            }
            TestKind::Ordinal => {
                let c = &p.ordinal[t].as_ref().expect("ordinal parameters").cutpoints[s][d];
                let y = y as usize;
                let lo = (y > 0).then(|| c[y - 1] - nu);
                let hi = (y < c.len()).then(|| c[y] - nu);
                (lo, hi)
            }
        }
    }

    /// Latent box of response `y` for study `s`, class `d`, centred on the
    /// class means.
    pub fn box_bounds(&self, p: &Params<f64>, s: usize, d: usize, y: &[u8]) -> Bounds {
        (0..self.tests.len()).map(|t| self.bounds(p, s, d, t, y[t])).collect()
    }

    /// Finite category boundaries of test `t`, centred on the class mean.
    fn cuts<S: Scalar>(&self, p: &Params<S>, s: usize, d: usize, t: usize) -> Vec<S> {
        let nu = p.nu[s][t][d];
        match self.tests[t].kind {
            TestKind::Dichotomous => vec![-nu],
            TestKind::Ordinal => {
                let c = &p.ordinal[t].as_ref().expect("ordinal parameters").cutpoints[s][d];
                c.iter().map(|&v| v - nu).collect()
            }
        }
    }

    /// Log box probabilities of every pattern in `trie` for one block.
    fn ln_boxes<S: Scalar>(&self, nodes: &GhkNodes, trie: &PatternTrie, patterns: &[Vec<u8>], cuts: &[Vec<S>], l: &Mat<S>) -> Vec<S> {
        let cv: Vec<Vec<f64>> = cuts.iter().map(|c| c.iter().map(|v| v.val()).collect()).collect();
        let lv = l.values();
        let mut grads: Vec<BoxGrad> = Vec::new();
        let probs = pattern_probabilities(trie, &cv, lv.as_slice(), nodes, S::TRACKS_GRADIENT.then_some(&mut grads));
        let d = cuts.len();
        let mut out = Vec::with_capacity(probs.len());
        for (k, r) in probs.iter().enumerate() {
            if r.floored {
                self.note_floor();
            }
            let value = r.value.ln();
            if !S::TRACKS_GRADIENT {
                out.push(S::cst(value));
                continue;
            }
            let grad = &grads[k];
            let mut inputs = Vec::with_capacity(2 * d + d * (d + 1) / 2);
            let mut partials = Vec::with_capacity(inputs.capacity());
            for (t, c) in cuts.iter().enumerate() {
                let y = patterns[k][t] as usize;
                if y > 0 {
                    inputs.push(c[y - 1]);
                    partials.push(grad.lo[t] / r.value);
                }
                if y < c.len() {
                    inputs.push(c[y]);
                    partials.push(grad.hi[t] / r.value);
                }
            }
            let mut j = 0;
            for a in 0..d {
                for b in 0..=a {
                    inputs.push(l.get(a, b));
                    partials.push(grad.chol[j] / r.value);
                    j += 1;
                }
            }
            out.push(S::custom(&inputs, value, &partials));
        }
        out
    }

    /// `[ln P(y | d = 0), ln P(y | d = 1)]` for each pattern.
    fn class_terms<S: Scalar>(&self, p: &Params<S>, s: usize, patterns: &[Vec<u8>]) -> Result<Vec<[S; 2]>> {
        let t_count = self.tests.len();
        let mut member: Vec<Option<usize>> = vec![None; t_count];
        for (g, b) in p.blocks.iter().enumerate() {
            for &t in &b.tests {
                member[t] = Some(g);
            }
        }
        let mut chols: Vec<[Mat<S>; 2]> = Vec::with_capacity(p.blocks.len());
        for b in &p.blocks {
            let mut pair = [Mat::identity(0), Mat::identity(0)];
            for d in 0..2 {
                pair[d] = cholesky(&pool(&b.global[d], &b.deviation[s][d], b.beta[d]))?;
            }
            chols.push(pair);
        }
        let mut out = vec![[S::zero(); 2]; patterns.len()];
        for (k, y) in patterns.iter().enumerate() {
            for (d, slot) in out[k].iter_mut().enumerate() {
                for t in 0..t_count {
                    if member[t].is_none() {
                        let (lo, hi) = self.bounds(p, s, d, t, y[t]);
                        *slot += ln_interval_prob(lo, hi);
                    }
                }
            }
        }
        for (g, b) in p.blocks.iter().enumerate() {
            let projected: Vec<Vec<u8>> = patterns.iter().map(|y| b.tests.iter().map(|&t| y[t]).collect()).collect();
            let trie = PatternTrie::new(&projected);
            for d in 0..2 {
                let cuts: Vec<Vec<S>> = b.tests.iter().map(|&t| self.cuts(p, s, d, t)).collect();
                let terms = self.ln_boxes(&self.nodes[g], &trie, &projected, &cuts, &chols[g][d]);
                for (slot, v) in out.iter_mut().zip(terms) {
                    slot[d] += v;
                }
            }
        }
        Ok(out)
    }

    fn mixture<S: Scalar>(prev: S, terms: [S; 2]) -> S {
        let a = prev.ln() + terms[1];
        let b = (S::cst(1.0) - prev).ln() + terms[0];
        let (hi, lo) = if a.val() >= b.val() { (a, b) } else { (b, a) };
        if lo.val() == f64::NEG_INFINITY {
            return hi;
        }
        hi + (lo - hi).exp().ln_1p()
    }

    fn pattern_logliks_generic<S: Scalar>(&self, p: &Params<S>, s: usize, patterns: &[Vec<u8>]) -> Result<Vec<S>> {
        let prev = p.prevalence[s];
        Ok(self.class_terms(p, s, patterns)?.into_iter().map(|t| Self::mixture(prev, t)).collect())
    }

    /// Log-likelihood of each response pattern for one individual of study `s`.
    pub fn pattern_logliks(&self, p: &Params<f64>, s: usize, patterns: &[Vec<u8>]) -> Result<Vec<f64>> {
        self.pattern_logliks_generic(p, s, patterns)
    }

    pub fn individual_loglik(&self, p: &Params<f64>, s: usize, y: &[u8]) -> Result<f64> {
        Ok(self.pattern_logliks(p, s, &[y.to_vec()])?[0])
    }

    /// `[ln P(y | non-diseased), ln P(y | diseased)]`.
    pub fn class_log_probs(&self, p: &Params<f64>, s: usize, y: &[u8]) -> Result<[f64; 2]> {
        Ok(self.class_terms(p, s, &[y.to_vec()])?[0])
    }

    pub(crate) fn log_density_generic<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let t = self.layout.constrain(x);
        if !t.log_jacobian.val().is_finite() {
            return Err(Error::NonFinite { block: "transform log-Jacobian".into() });
        }
        let mut total = t.log_jacobian;
        for (name, v) in log_prior(&t.params, &self.layout, &self.priors) {
            if !v.val().is_finite() {
                return Err(Error::NonFinite { block: format!("prior on {name}") });
            }
            total += v;
        }
        let mut values = Vec::new();
        for (s, sp) in self.studies.iter().enumerate() {
            let ll = self.pattern_logliks_generic(&t.params, s, &sp.patterns)?;
            values.clear();
            values.extend(ll.iter().map(|v| v.val()));
            let sum = pairwise_sum(&sp.index, &values);
            if !sum.is_finite() {
                return Err(Error::NonFinite { block: format!("likelihood of study `{}`", self.study_ids[s]) });
            }
            total += S::custom(&ll, sum, &sp.counts);
        }
        Ok(total)
    }
}
