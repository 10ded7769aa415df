//! Parameter layout and the map between the unconstrained sampling space and
//! constrained model parameters.
//!
//! | block | transform |
//! |---|---|
//! | `mu` | identity; an imperfect reference stores `mu[.,0]` and `ln(mu[.,1] - mu[.,0])` |
//! | `sigma`, `kappa` | log |
//! | `rho` | atanh |
//! | `nu` | non-centred: `nu1 = mu1 + sigma1 z1`, `nu0 = mu0 + sigma0 (rho z1 + sqrt(1-rho²) z0)` |
//! | `phi` | stick-breaking with logistic breaks |
//! | cutpoints | `C_1 = y_1`, `C_k = C_{k-1} + exp(y_k)` |
//! | correlation matrices | canonical partial correlations `tanh(y)` into a Cholesky factor |
//! | `beta`, prevalence | logistic |
//!
//! Classes are indexed `0` (non-diseased) and `1` (diseased).

use crate::ad::Scalar;
use crate::data::TestDefinition;
use crate::error::{Error, Result};
use crate::math::corr::Mat;
use crate::model::spec::{ModelSpec, PERFECT_MEAN};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum MeanLayout {
    Perfect,
    Free { mu: [usize; 2], log_sigma: [usize; 2], atanh_rho: usize, z: usize, ordered: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OrdinalLayout {
    pub categories: usize,
    pub log_kappa: [usize; 2],
    pub stick: [usize; 2],
    pub cut: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockLayout {
    pub tests: Vec<usize>,
    pub cpc_global: [usize; 2],
    pub logit_beta: [usize; 2],
    pub cpc_dev: usize,
}

impl BlockLayout {
    pub fn num_cpc(&self) -> usize {
        let d = self.tests.len();
        d * (d - 1) / 2
    }
}

/// Positions of every parameter block in the flat unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    dim: usize,
    num_studies: usize,
    pub(crate) means: Vec<MeanLayout>,
    pub(crate) ordinal: Vec<Option<OrdinalLayout>>,
    pub(crate) blocks: Vec<BlockLayout>,
    pub(crate) prevalence: usize,
    names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalParams<S> {
    pub kappa: [S; 2],
    /// Population simplex per class.
    pub phi: [Vec<S>; 2],
    /// Per study, per class cutpoints.
    pub cutpoints: Vec<[Vec<S>; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<S> {
    pub tests: Vec<usize>,
    pub global: [Mat<S>; 2],
    pub global_chol: [Mat<S>; 2],
    pub beta: [S; 2],
    /// Per study, per class deviation matrices.
    pub deviation: Vec<[Mat<S>; 2]>,
    pub deviation_chol: Vec<[Mat<S>; 2]>,
}

/// Constrained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<S> {
    pub mu: Vec<[S; 2]>,
    pub sigma: Vec<[S; 2]>,
    pub rho: Vec<S>,
    /// `nu[s][t][d]`
    pub nu: Vec<Vec<[S; 2]>>,
    pub ordinal: Vec<Option<OrdinalParams<S>>>,
    pub blocks: Vec<BlockParams<S>>,
    pub prevalence: Vec<S>,
}

pub struct Transformed<S> {
    pub params: Params<S>,
    pub log_jacobian: S,
}

#[inline]
pub(crate) fn logistic<S: Scalar>(x: S) -> S {
    (x * (1.0 / crate::math::link::SCALE)).link()
}

#[inline]
pub(crate) fn ln_logistic<S: Scalar>(x: S) -> S {
    (x * (1.0 / crate::math::link::SCALE)).ln_link()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Canonical partial correlations `tanh(y)` to a Cholesky factor of a
/// correlation matrix, with the log-Jacobian of `y` to the strict lower
/// triangle of the factor.
pub(crate) fn cpc_to_cholesky<S: Scalar>(y: &[S], d: usize) -> (Mat<S>, S) {
    let mut l = Mat::zeros(d);
    let mut lj = S::zero();
    l.set(0, 0, S::cst(1.0));
    let mut k = 0;
    for i in 1..d {
        let z = y[k].tanh();
        k += 1;
        lj += (S::cst(1.0) - z * z).ln();
        l.set(i, 0, z);
        let mut sum_sqs = z * z;
        for j in 1..i {
            let z = y[k].tanh();
            k += 1;
            lj += (S::cst(1.0) - z * z).ln();
            let rest = S::cst(1.0) - sum_sqs;
            lj += rest.ln() * 0.5;
            let v = z * rest.sqrt();
            l.set(i, j, v);
            sum_sqs += v * v;
        }
        l.set(i, i, (S::cst(1.0) - sum_sqs).sqrt());
    }
    (l, lj)
}

fn cholesky_to_cpc(l: &Mat<f64>) -> Vec<f64> {
    let d = l.dim();
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 1..d {
        let mut sum_sqs = 0.0;
        for j in 0..i {
            let v = l.get(i, j);
            out.push((v / (1.0 - sum_sqs).sqrt()).atanh());
            sum_sqs += v * v;
        }
    }
    out
}

pub(crate) fn outer<S: Scalar>(l: &Mat<S>) -> Mat<S> {
    let d = l.dim();
    let mut m = Mat::identity(d);
    for i in 0..d {
        for j in 0..i {
            let mut s = S::zero();
            for k in 0..=j {
                s += l.get(i, k) * l.get(j, k);
            }
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    m
}

/// Stick-breaking map from `K-1` reals to a `K`-simplex, with log-Jacobian
/// relative to the first `K-1` components.
fn stick_breaking<S: Scalar>(y: &[S]) -> (Vec<S>, S) {
    let k = y.len() + 1;
    let mut out = Vec::with_capacity(k);
    let mut lj = S::zero();
    let mut rest = S::cst(1.0);
    for (i, &yi) in y.iter().enumerate() {
        let shifted = yi - ((k - 1 - i) as f64).ln();
        let z = logistic(shifted);
        lj += ln_logistic(shifted) + ln_logistic(-shifted) + rest.ln();
        let v = rest * z;
        out.push(v);
        rest -= v;
    }
    out.push(rest);
    (out, lj)
}

fn stick_unbreaking(phi: &[f64]) -> Vec<f64> {
    let k = phi.len();
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(k - 1);
    for (i, &p) in phi[..k - 1].iter().enumerate() {
        let z = p / rest;
        out.push(logit(z) + ((k - 1 - i) as f64).ln());
        rest -= p;
    }
    out
}

impl Layout {
    pub fn new(tests: &[TestDefinition], spec: &ModelSpec, num_studies: usize) -> Self {
        let s_count = num_studies;
        let mut names = Vec::new();
        let next = |names: &mut Vec<String>, name: String| {
            names.push(name);
            names.len() - 1
        };
        let mut means = Vec::new();
        for (t, _) in tests.iter().enumerate() {
            let tt = t + 1;
            if spec.perfect_reference && t == spec.reference {
                means.push(MeanLayout::Perfect);
                continue;
            }
            let ordered = t == spec.reference;
            let mu0 = next(&mut names, format!("mu[{tt},0]"));
            let mu1 = next(&mut names, if ordered { format!("log_mu_gap[{tt}]") } else { format!("mu[{tt},1]") });
            let ls0 = next(&mut names, format!("log_sigma[{tt},0]"));
            let ls1 = next(&mut names, format!("log_sigma[{tt},1]"));
            let r = next(&mut names, format!("atanh_rho[{tt}]"));
            means.push(MeanLayout::Free { mu: [mu0, mu1], log_sigma: [ls0, ls1], atanh_rho: r, z: usize::MAX, ordered });
        }
        // study-level standardised deviations after the population blocks
        for (t, m) in means.iter_mut().enumerate() {
            if let MeanLayout::Free { z, .. } = m {
                *z = names.len();
                for s in 0..s_count {
                    for d in 0..2 {
                        names.push(format!("z[{},{},{d}]", s + 1, t + 1));
                    }
                }
            }
        }
        let mut ordinal = Vec::new();
        for (t, test) in tests.iter().enumerate() {
            if !test.is_ordinal() {
                ordinal.push(None);
                continue;
            }
            let tt = t + 1;
            let k = test.num_categories;
            let lk0 = next(&mut names, format!("log_kappa[{tt},0]"));
            let lk1 = next(&mut names, format!("log_kappa[{tt},1]"));
            let mut stick = [0; 2];
            for (d, st) in stick.iter_mut().enumerate() {
                *st = names.len();
                for j in 0..k - 1 {
                    names.push(format!("stick[{tt},{d},{}]", j + 1));
                }
            }
            let cut = names.len();
            for s in 0..s_count {
                for d in 0..2 {
                    for j in 0..k - 1 {
                        names.push(format!("cut_raw[{},{tt},{d},{}]", s + 1, j + 1));
                    }
                }
            }
            ordinal.push(Some(OrdinalLayout { categories: k, log_kappa: [lk0, lk1], stick, cut }));
        }
        let mut blocks = Vec::new();
        for (g, group) in spec.dependence.iter().enumerate() {
            let gg = g + 1;
            let n = group.len() * (group.len() - 1) / 2;
            let mut cpc_global = [0; 2];
            for (d, c) in cpc_global.iter_mut().enumerate() {
                *c = names.len();
                for i in 0..n {
                    names.push(format!("cpc_G[{gg},{d},{}]", i + 1));
                }
            }
            let b0 = next(&mut names, format!("logit_beta[{gg},0]"));
            let b1 = next(&mut names, format!("logit_beta[{gg},1]"));
            let cpc_dev = names.len();
            for s in 0..s_count {
                for d in 0..2 {
                    for i in 0..n {
                        names.push(format!("cpc_Delta[{},{gg},{d},{}]", s + 1, i + 1));
                    }
                }
            }
            blocks.push(BlockLayout { tests: group.clone(), cpc_global, logit_beta: [b0, b1], cpc_dev });
        }
        let prevalence = names.len();
        for s in 0..s_count {
            names.push(format!("logit_prev[{}]", s + 1));
        }
        Layout { dim: names.len(), num_studies, means, ordinal, blocks, prevalence, names }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_studies(&self) -> usize {
        self.num_studies
    }

    pub fn num_tests(&self) -> usize {
        self.means.len()
    }

    /// Names of the unconstrained coordinates.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// True when some coordinate parameterises a correlation matrix.
    pub fn has_correlations(&self) -> bool {
        !self.blocks.is_empty()
    }

    pub fn constrain<S: Scalar>(&self, x: &[S]) -> Transformed<S> {
        assert_eq!(x.len(), self.dim, "parameter vector length");
        let s_count = self.num_studies;
        let t_count = self.means.len();
        let mut lj = S::zero();
        let mut mu = Vec::with_capacity(t_count);
        let mut sigma = Vec::with_capacity(t_count);
        let mut rho = Vec::with_capacity(t_count);
        let mut nu = vec![Vec::with_capacity(t_count); s_count];
        for m in &self.means {
            match *m {
                MeanLayout::Perfect => {
                    mu.push([S::cst(-PERFECT_MEAN), S::cst(PERFECT_MEAN)]);
                    sigma.push([S::zero(), S::zero()]);
                    rho.push(S::zero());
                    for row in nu.iter_mut() {
                        row.push([S::cst(-PERFECT_MEAN), S::cst(PERFECT_MEAN)]);
                    }
                }
                MeanLayout::Free { mu: mi, log_sigma, atanh_rho, z, ordered } => {
                    let m0 = x[mi[0]];
                    let m1 = if ordered {
                        lj += x[mi[1]];
                        m0 + x[mi[1]].exp()
                    } else {
                        x[mi[1]]
                    };
                    let s0 = x[log_sigma[0]].exp();
                    let s1 = x[log_sigma[1]].exp();
                    lj += x[log_sigma[0]] + x[log_sigma[1]];
                    let r = x[atanh_rho].tanh();
                    lj += (S::cst(1.0) - r * r).ln();
                    let rc = (S::cst(1.0) - r * r).sqrt();
                    for (s, row) in nu.iter_mut().enumerate() {
                        let z0 = x[z + 2 * s];
                        let z1 = x[z + 2 * s + 1];
                        let n1 = m1 + s1 * z1;
                        let n0 = m0 + s0 * (r * z1 + rc * z0);
                        row.push([n0, n1]);
                    }
                    lj += ((S::cst(1.0) - r * r).ln() * 0.5 + x[log_sigma[0]] + x[log_sigma[1]]) * s_count as f64;
                    mu.push([m0, m1]);
                    sigma.push([s0, s1]);
                    rho.push(r);
                }
            }
        }

        let ordinal = self
            .ordinal
            .iter()
            .map(|o| {
                o.as_ref().map(|o| {
                    let nc = o.categories - 1;
                    let kappa = [x[o.log_kappa[0]].exp(), x[o.log_kappa[1]].exp()];
                    lj += x[o.log_kappa[0]] + x[o.log_kappa[1]];
                    let phi = [0, 1].map(|d| {
                        let (p, j) = stick_breaking(&x[o.stick[d]..o.stick[d] + nc]);
                        lj += j;
                        p
                    });
                    let cutpoints = (0..s_count)
                        .map(|s| {
                            [0, 1].map(|d| {
                                let base = o.cut + (2 * s + d) * nc;
                                let mut c = Vec::with_capacity(nc);
                                c.push(x[base]);
                                for j in 1..nc {
                                    lj += x[base + j];
                                    let prev = c[j - 1];
                                    c.push(prev + x[base + j].exp());
                                }
                                c
                            })
                        })
                        .collect();
                    OrdinalParams { kappa, phi, cutpoints }
                })
            })
            .collect();

        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let d = b.tests.len();
                let n = b.num_cpc();
                let global_chol = [0, 1].map(|c| {
                    let (l, j) = cpc_to_cholesky(&x[b.cpc_global[c]..b.cpc_global[c] + n], d);
                    lj += j;
                    l
                });
                let beta = [0, 1].map(|c| {
                    let y = x[b.logit_beta[c]];
                    lj += ln_logistic(y) + ln_logistic(-y);
                    logistic(y)
                });
                let deviation_chol: Vec<[Mat<S>; 2]> = (0..s_count)
                    .map(|s| {
                        [0, 1].map(|c| {
                            let base = b.cpc_dev + (2 * s + c) * n;
                            let (l, j) = cpc_to_cholesky(&x[base..base + n], d);
                            lj += j;
                            l
                        })
                    })
                    .collect();
                BlockParams {
                    tests: b.tests.clone(),
                    global: [outer(&global_chol[0]), outer(&global_chol[1])],
                    global_chol,
                    beta,
                    deviation: deviation_chol.iter().map(|p| [outer(&p[0]), outer(&p[1])]).collect(),
                    deviation_chol,
                }
            })
            .collect();

        let prevalence = (0..s_count)
            .map(|s| {
                let y = x[self.prevalence + s];
                lj += ln_logistic(y) + ln_logistic(-y);
                logistic(y)
            })
            .collect();

        Transformed { params: Params { mu, sigma, rho, nu, ordinal, blocks, prevalence }, log_jacobian: lj }
    }

    /// Inverse of [`Layout::constrain`].
    pub fn unconstrain(&self, p: &Params<f64>) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.dim];
        let bad = |what: &str| Error::InvalidArgument(format!("parameter outside its support: {what}"));
        for (t, m) in self.means.iter().enumerate() {
            if let MeanLayout::Free { mu, log_sigma, atanh_rho, z, ordered } = *m {
                let [m0, m1] = p.mu[t];
                x[mu[0]] = m0;
                if ordered {
                    if !(m1 > m0) {
                        return Err(bad("reference means must satisfy mu[.,1] > mu[.,0]"));
                    }
                    x[mu[1]] = (m1 - m0).ln();
                } else {
                    x[mu[1]] = m1;
                }
                let [s0, s1] = p.sigma[t];
                if !(s0 > 0.0 && s1 > 0.0) {
                    return Err(bad("sigma"));
                }
                x[log_sigma[0]] = s0.ln();
                x[log_sigma[1]] = s1.ln();
                let r = p.rho[t];
                if !(r.abs() < 1.0) {
                    return Err(bad("rho"));
                }
                x[atanh_rho] = r.atanh();
                for s in 0..self.num_studies {
                    let [n0, n1] = p.nu[s][t];
                    let z1 = (n1 - m1) / s1;
                    let z0 = ((n0 - m0) / s0 - r * z1) / (1.0 - r * r).sqrt();
                    x[z + 2 * s] = z0;
                    x[z + 2 * s + 1] = z1;
                }
            }
        }
        for (t, o) in self.ordinal.iter().enumerate() {
            let Some(o) = o else { continue };
            let op = p.ordinal[t].as_ref().ok_or_else(|| bad("missing ordinal block"))?;
            let nc = o.categories - 1;
            for d in 0..2 {
                if !(op.kappa[d] > 0.0) {
                    return Err(bad("kappa"));
                }
                x[o.log_kappa[d]] = op.kappa[d].ln();
                if op.phi[d].iter().any(|&v| !(v > 0.0)) {
                    return Err(bad("phi"));
                }
                x[o.stick[d]..o.stick[d] + nc].copy_from_slice(&stick_unbreaking(&op.phi[d]));
                for s in 0..self.num_studies {
                    let c = &op.cutpoints[s][d];
                    let base = o.cut + (2 * s + d) * nc;
                    x[base] = c[0];
                    for j in 1..nc {
                        if !(c[j] > c[j - 1]) {
                            return Err(bad("cutpoints must increase"));
                        }
                        x[base + j] = (c[j] - c[j - 1]).ln();
                    }
                }
            }
        }
        for (b, bp) in self.blocks.iter().zip(&p.blocks) {
            let n = b.num_cpc();
            for d in 0..2 {
                x[b.cpc_global[d]..b.cpc_global[d] + n].copy_from_slice(&cholesky_to_cpc(&bp.global_chol[d].values()));
                let beta = bp.beta[d];
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(bad("beta"));
                }
                x[b.logit_beta[d]] = logit(beta);
                for s in 0..self.num_studies {
                    let base = b.cpc_dev + (2 * s + d) * n;
                    x[base..base + n].copy_from_slice(&cholesky_to_cpc(&bp.deviation_chol[s][d].values()));
                }
            }
        }
        for s in 0..self.num_studies {
            let v = p.prevalence[s];
            if !(v > 0.0 && v < 1.0) {
                return Err(bad("prevalence"));
            }
            x[self.prevalence + s] = logit(v);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        Ok(x)
    }

    /// Constrained coordinates in one-to-one correspondence with the
    /// unconstrained vector; the transform's log-Jacobian is the log
    /// determinant of this map.
    pub fn free_coordinates(&self, p: &Params<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (t, m) in self.means.iter().enumerate() {
            if let MeanLayout::Free { mu, log_sigma, atanh_rho, z, .. } = *m {
                out[mu[0]] = p.mu[t][0];
                out[mu[1]] = p.mu[t][1];
                out[log_sigma[0]] = p.sigma[t][0];
                out[log_sigma[1]] = p.sigma[t][1];
                out[atanh_rho] = p.rho[t];
                for s in 0..self.num_studies {
                    out[z + 2 * s] = p.nu[s][t][0];
                    out[z + 2 * s + 1] = p.nu[s][t][1];
                }
            }
        }
        for (t, o) in self.ordinal.iter().enumerate() {
            let (Some(o), Some(op)) = (o, &p.ordinal[t]) else { continue };
            let nc = o.categories - 1;
            for d in 0..2 {
                out[o.log_kappa[d]] = op.kappa[d];
                out[o.stick[d]..o.stick[d] + nc].copy_from_slice(&op.phi[d][..nc]);
                for s in 0..self.num_studies {
                    let base = o.cut + (2 * s + d) * nc;
                    out[base..base + nc].copy_from_slice(&op.cutpoints[s][d]);
                }
            }
        }
        let strict = |l: &Mat<f64>| {
            let d = l.dim();
            (1..d).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| l.get(i, j)).collect::<Vec<_>>()
        };
        for (b, bp) in self.blocks.iter().zip(&p.blocks) {
            let n = b.num_cpc();
            for d in 0..2 {
                out[b.cpc_global[d]..b.cpc_global[d] + n].copy_from_slice(&strict(&bp.global_chol[d]));
                out[b.logit_beta[d]] = bp.beta[d];
                for s in 0..self.num_studies {
                    let base = b.cpc_dev + (2 * s + d) * n;
                    out[base..base + n].copy_from_slice(&strict(&bp.deviation_chol[s][d]));
                }
            }
        }
        out[self.prevalence..self.prevalence + self.num_studies].copy_from_slice(&p.prevalence);
        out
    }
}

impl<S: Scalar> Params<S> {
    pub fn values(&self) -> Params<f64> {
        let v2 = |a: &[S; 2]| [a[0].val(), a[1].val()];
        let vv = |a: &[S]| a.iter().map(|v| v.val()).collect::<Vec<_>>();
        Params {
            mu: self.mu.iter().map(v2).collect(),
            sigma: self.sigma.iter().map(v2).collect(),
            rho: vv(&self.rho),
            nu: self.nu.iter().map(|r| r.iter().map(v2).collect()).collect(),
            ordinal: self
                .ordinal
                .iter()
                .map(|o| {
                    o.as_ref().map(|o| OrdinalParams {
                        kappa: v2(&o.kappa),
                        phi: [vv(&o.phi[0]), vv(&o.phi[1])],
                        cutpoints: o.cutpoints.iter().map(|c| [vv(&c[0]), vv(&c[1])]).collect(),
                    })
                })
                .collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    tests: b.tests.clone(),
                    global: [b.global[0].values(), b.global[1].values()],
                    global_chol: [b.global_chol[0].values(), b.global_chol[1].values()],
                    beta: v2(&b.beta),
                    deviation: b.deviation.iter().map(|m| [m[0].values(), m[1].values()]).collect(),
                    deviation_chol: b.deviation_chol.iter().map(|m| [m[0].values(), m[1].values()]).collect(),
                })
                .collect(),
            prevalence: vv(&self.prevalence),
        }
    }
}

impl Params<f64> {
    /// Within-study correlation of block `b` for study `s`, class `d`.
    pub fn pooled(&self, b: usize, s: usize, d: usize) -> Mat<f64> {
        let bp = &self.blocks[b];
        crate::math::corr::pool(&bp.global[d], &bp.deviation[s][d], bp.beta[d])
    }

    /// Named constrained values, in a fixed order:
    /// `mu[t,d]`, `sigma[t,d]`, `rho[t]`, `nu[s,t,d]`, `kappa[t,d]`,
    /// `phi[t,d,k]`, `C[s,t,d,k]`, `Psi_G[d][i,j]`, `beta[g,d]`,
    /// `Psi_Delta[s,d][i,j]`, `prev[s]`. Tests, studies, categories and
    /// matrix entries count from one; matrix entries use test indices.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (t, m) in self.mu.iter().enumerate() {
            for d in 0..2 {
                out.push((format!("mu[{},{d}]", t + 1), m[d]));
            }
        }
        for (t, m) in self.sigma.iter().enumerate() {
            for d in 0..2 {
                out.push((format!("sigma[{},{d}]", t + 1), m[d]));
            }
        }
        for (t, r) in self.rho.iter().enumerate() {
            out.push((format!("rho[{}]", t + 1), *r));
        }
        for (s, row) in self.nu.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                for d in 0..2 {
                    out.push((format!("nu[{},{},{d}]", s + 1, t + 1), v[d]));
                }
            }
        }
        for (t, o) in self.ordinal.iter().enumerate() {
            let Some(o) = o else { continue };
            for d in 0..2 {
                out.push((format!("kappa[{},{d}]", t + 1), o.kappa[d]));
            }
            for d in 0..2 {
                for (k, v) in o.phi[d].iter().enumerate() {
                    out.push((format!("phi[{},{d},{}]", t + 1, k + 1), *v));
                }
            }
            for (s, c) in o.cutpoints.iter().enumerate() {
                for d in 0..2 {
                    for (k, v) in c[d].iter().enumerate() {
                        out.push((format!("C[{},{},{d},{}]", s + 1, t + 1, k + 1), *v));
                    }
                }
            }
        }
        for (g, b) in self.blocks.iter().enumerate() {
            for d in 0..2 {
                for (i, &ti) in b.tests.iter().enumerate() {
                    for (j, &tj) in b.tests.iter().enumerate().skip(i + 1) {
                        out.push((format!("Psi_G[{d}][{},{}]", ti + 1, tj + 1), b.global[d].get(j, i)));
                    }
                }
            }
            for d in 0..2 {
                out.push((format!("beta[{},{d}]", g + 1), b.beta[d]));
            }
            for (s, dev) in b.deviation.iter().enumerate() {
                for d in 0..2 {
                    for (i, &ti) in b.tests.iter().enumerate() {
                        for (j, &tj) in b.tests.iter().enumerate().skip(i + 1) {
                            out.push((format!("Psi_Delta[{},{d}][{},{}]", s + 1, ti + 1, tj + 1), dev[d].get(j, i)));
                        }
                    }
                }
            }
        }
        for (s, p) in self.prevalence.iter().enumerate() {
            out.push((format!("prev[{}]", s + 1), *p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TestDefinition;
    use crate::model::spec::Variant;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dvt() -> Vec<TestDefinition> {
        vec![
            TestDefinition::dichotomous(0, "US"),
            TestDefinition::dichotomous(1, "DD"),
            TestDefinition::ordinal(2, "Wells", 4).unwrap(),
        ]
    }

    fn layout(v: Variant) -> Layout {
        Layout::new(&dvt(), &ModelSpec::variant(v, 3), 2)
    }

    fn random_x(l: &Layout, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..l.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_vector_is_centre() {
        let l = layout(Variant::M4);
        let p = l.constrain(&vec![0.0; l.dim()]).params;
        assert!(p.rho.iter().all(|&r| r == 0.0));
        assert!(p.prevalence.iter().all(|&v| v == 0.5));
        assert!(p.sigma.iter().all(|s| s[0] == 1.0 && s[1] == 1.0));
        assert_eq!(p.blocks[0].global[0], Mat::identity(3));
        assert!(p.blocks[0].beta.iter().all(|&b| b == 0.5));
    }

    #[test]
    fn names_are_unique_and_sized() {
        for v in [Variant::M1, Variant::M2, Variant::M3, Variant::M4] {
            let l = layout(v);
            let mut n = l.names().to_vec();
            n.sort();
            n.dedup();
            assert_eq!(n.len(), l.dim());
        }
        assert!(!layout(Variant::M3).has_correlations());
        assert!(layout(Variant::M2).has_correlations());
        // perfect reference: no mean parameters for test 1
        assert!(!layout(Variant::M1).names().iter().any(|n| n.starts_with("mu[1,") || n.starts_with("log_sigma[1,")));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in [Variant::M1, Variant::M2, Variant::M3, Variant::M4] {
            let l = layout(v);
            for _ in 0..100 {
                let x: Vec<f64> = (0..l.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let back = l.unconstrain(&l.constrain(&x).params).unwrap();
                for (a, b) in x.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn constrained_values_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = layout(Variant::M4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..l.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = l.constrain(&x).params;
            assert!(p.mu[0][1] > p.mu[0][0]);
            let o = p.ordinal[2].as_ref().unwrap();
            for d in 0..2 {
                assert!((o.phi[d].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for s in 0..2 {
                    assert!(o.cutpoints[s][d].windows(2).all(|w| w[0] < w[1]));
                }
            }
            for s in 0..2 {
                for d in 0..2 {
                    let m = p.pooled(0, s, d);
                    crate::math::corr::CorrelationMatrix::new(m).unwrap();
                }
            }
        }
    }

    #[test]
    fn log_jacobian_matches_numerical_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for v in [Variant::M2, Variant::M4] {
            let l = layout(v);
            for _ in 0..5 {
                let x = random_x(&l, &mut rng);
                let t = l.constrain(&x);
                let n = l.dim();
                let h = 1e-6;
                let mut jac = DMatrix::<f64>::zeros(n, n);
                for j in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fp = l.free_coordinates(&l.constrain(&xp).params);
                    let fm = l.free_coordinates(&l.constrain(&xm).params);
                    for i in 0..n {
                        jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                let det = jac.determinant().abs().ln();
                let rel = (det - t.log_jacobian).abs() / t.log_jacobian.abs().max(1.0);
                assert!(rel < 1e-5, "{det} vs {}", t.log_jacobian);
            }
        }
    }

    #[test]
    fn named_values_cover_matrices() {
        let l = layout(Variant::M4);
        let p = l.constrain(&vec![0.1; l.dim()]).params;
        let named = p.named();
        assert!(named.iter().any(|(n, _)| n == "Psi_G[1][2,3]"));
        assert!(named.iter().any(|(n, _)| n == "Psi_Delta[2,0][1,3]"));
        assert!(named.iter().any(|(n, _)| n == "C[1,3,1,3]"));
        let v = named.iter().find(|(n, _)| n == "Psi_G[1][1,2]").unwrap().1;
        assert_eq!(v, p.blocks[0].global[1].get(1, 0));
    }
}
