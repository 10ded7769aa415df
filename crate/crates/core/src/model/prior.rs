//! Prior model, calibrated from 95% intervals on the probability scale.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::ad::Scalar;
use crate::data::TestDefinition;
use crate::error::{Error, Result};
use crate::math::corr::Mat;
use crate::math::cutpoints::{ln_induced_dirichlet, probs_to_cutpoints};
use crate::math::{link, normal};
use crate::model::params::{Layout, MeanLayout, Params};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub location: f64,
    pub scale: f64,
}

impl NormalPrior {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !location.is_finite() || !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid normal prior ({location}, {scale})")));
        }
        Ok(NormalPrior { location, scale })
    }

    /// Central 95% interval mapped through the link.
    pub fn probability_interval(&self) -> (f64, f64) {
        let half = 1.959_963_984_540_054 * self.scale;
        (link::cdf(self.location - half), link::cdf(self.location + half))
    }

    fn ln_pdf<S: Scalar>(&self, x: S) -> S {
        let z = (x - self.location) * (1.0 / self.scale);
        z * z * -0.5 - (LN_SQRT_2PI + self.scale.ln())
    }
}

/// Normal on the latent scale whose 2.5% and 97.5% quantiles map through
/// the link to `lo` and `hi`.
pub fn interval_to_probit_normal(lo: f64, hi: f64) -> Result<NormalPrior> {
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::InvalidArgument(format!("invalid probability interval ({lo}, {hi})")));
    }
    let (a, b) = (link::quantile(lo), link::quantile(hi));
    Ok(NormalPrior { location: 0.5 * (a + b), scale: (b - a) / 3.92 })
}

/// Priors on the two class means of one test from sensitivity and
/// specificity intervals. Specificity is `1 - Φ′(mu[.,0])`, so its interval
/// is reflected.
pub fn mean_priors_from_intervals(se: (f64, f64), sp: (f64, f64)) -> Result<[NormalPrior; 2]> {
    let p1 = interval_to_probit_normal(se.0, se.1)?;
    let p0 = interval_to_probit_normal(sp.0, sp.1)?;
    Ok([NormalPrior { location: -p0.location, scale: p0.scale }, p1])
}

/// Half-normal scale whose 97.5% quantile is `upper`.
pub fn half_normal_scale(upper: f64) -> f64 {
    upper / normal::quantile(0.9875)
}

/// Scale of a normal on `atanh(rho)` with 95% of `rho` inside `(-bound, bound)`.
pub fn atanh_normal_scale(bound: f64) -> f64 {
    bound.atanh() / 1.959_963_984_540_054
}

/// LKJ shape giving every off-diagonal entry of a `dim`-dimensional
/// correlation matrix 95% prior mass in `(-bound, bound)`.
pub fn lkj_eta(dim: usize, bound: f64) -> f64 {
    let target = 0.5 * (1.0 + bound);
    let (mut lo, mut hi) = (1e-3f64, 1e4f64);
    for _ in 0..200 {
        let a = (lo * hi).sqrt();
        let q = BetaDist::new(a, a).expect("positive shape").inverse_cdf(0.975);
        if q > target {
            lo = a;
        } else {
            hi = a;
        }
    }
    (lo * hi).sqrt() + 1.0 - dim as f64 / 2.0
}

/// Log normalising constant of the LKJ density on `dim × dim` matrices.
pub fn ln_lkj_normalizer(dim: usize, eta: f64) -> f64 {
    let mut out = 0.0;
    for k in 1..dim {
        let dk = (dim - k) as f64;
        let b = eta + (dk - 1.0) / 2.0;
        out += (2.0 * eta - 2.0 + dk) * dk * std::f64::consts::LN_2 + dk * ln_beta(b, b);
    }
    out
}

/// LKJ density of `L Lᵀ` expressed on the Cholesky factor `L`.
pub fn ln_lkj_cholesky<S: Scalar>(l: &Mat<S>, eta: f64) -> S {
    let d = l.dim();
    let mut out = S::cst(-ln_lkj_normalizer(d, eta));
    for i in 1..d {
        let c = (d - i - 1) as f64 + 2.0 * eta - 2.0;
        out += l.get(i, i).ln() * c;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Per test: priors on `mu[t,0]` and `mu[t,1]`.
    pub mu: Vec<[NormalPrior; 2]>,
    /// Half-normal scale for between-study SDs.
    pub sigma_scale: f64,
    /// Normal scale on `atanh(rho)`.
    pub rho_scale: f64,
    /// 95% bound on within-study correlation entries.
    pub corr_bound: f64,
    /// Half-normal scale for the Dirichlet concentration.
    pub kappa_scale: f64,
}

pub const REFERENCE_SE: (f64, f64) = (0.49, 0.94);
pub const REFERENCE_SP: (f64, f64) = (0.82, 0.99);
pub const VAGUE_ACCURACY: (f64, f64) = (0.04, 0.96);
pub const SIGMA_UPPER: f64 = 1.09;
pub const RHO_BOUND: f64 = 0.82;
pub const CORR_BOUND: f64 = 0.65;
pub const KAPPA_SCALE: f64 = 50.0;

impl PriorSpec {
    /// DVT case-study defaults: informative reference, vague dichotomous
    /// tests, `N(0, 1)` means for ordinal tests.
    pub fn default_for(tests: &[TestDefinition], reference: usize) -> Self {
        let mu = tests
            .iter()
            .enumerate()
            .map(|(t, test)| {
                if t == reference {
                    mean_priors_from_intervals(REFERENCE_SE, REFERENCE_SP).unwrap()
                } else if test.is_ordinal() {
                    [NormalPrior { location: 0.0, scale: 1.0 }; 2]
                } else {
                    mean_priors_from_intervals(VAGUE_ACCURACY, VAGUE_ACCURACY).unwrap()
                }
            })
            .collect();
        PriorSpec {
            mu,
            sigma_scale: half_normal_scale(SIGMA_UPPER),
            rho_scale: atanh_normal_scale(RHO_BOUND),
            corr_bound: CORR_BOUND,
            kappa_scale: KAPPA_SCALE,
        }
    }

    pub fn validate(&self, num_tests: usize) -> Result<()> {
        if self.mu.len() != num_tests {
            return Err(Error::Config(format!("{} mean priors for {num_tests} tests", self.mu.len())));
        }
        for p in self.mu.iter().flatten() {
            NormalPrior::new(p.location, p.scale).map_err(|e| Error::Config(e.to_string()))?;
        }
        for (name, v) in [("sigma_scale", self.sigma_scale), ("rho_scale", self.rho_scale), ("kappa_scale", self.kappa_scale)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.corr_bound > 0.0 && self.corr_bound < 1.0) {
            return Err(Error::Config("corr_bound must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Prior log density split by parameter block.
pub fn log_prior<S: Scalar>(p: &Params<S>, layout: &Layout, spec: &PriorSpec) -> Vec<(&'static str, S)> {
    let mut mu = S::zero();
    let mut sigma = S::zero();
    let mut rho = S::zero();
    let mut nu = S::zero();
    let half_normal = |x: S, scale: f64| x * x * (-0.5 / (scale * scale)) + (std::f64::consts::LN_2 - LN_SQRT_2PI - scale.ln());
    for (t, m) in layout.means.iter().enumerate() {
        if *m == MeanLayout::Perfect {
            continue;
        }
        let [m0, m1] = p.mu[t];
        mu += spec.mu[t][0].ln_pdf(m0) + spec.mu[t][1].ln_pdf(m1);
        let [s0, s1] = p.sigma[t];
        sigma += half_normal(s0, spec.sigma_scale) + half_normal(s1, spec.sigma_scale);
        let r = p.rho[t];
        let one_m = S::cst(1.0) - r * r;
        let y = ((r + 1.0) / (S::cst(1.0) - r)).ln() * 0.5;
        rho += y * y * (-0.5 / (spec.rho_scale * spec.rho_scale)) - (LN_SQRT_2PI + spec.rho_scale.ln()) - one_m.ln();
        // bivariate normal of (nu1, nu0)
        let norm = (s0 * s1).ln() + one_m.ln() * 0.5 + 2.0 * LN_SQRT_2PI;
        for row in &p.nu {
            let a = (row[t][1] - m1) / s1;
            let b = (row[t][0] - m0) / s0;
            let q = (a * a - a * b * r * 2.0 + b * b) / one_m;
            nu += q * -0.5 - norm;
        }
    }

    let mut kappa = S::zero();
    let mut phi = S::zero();
    let mut cut = S::zero();
    for o in p.ordinal.iter().flatten() {
        let k = o.phi[0].len();
        for d in 0..2 {
            kappa += half_normal(o.kappa[d], spec.kappa_scale);
            phi += S::cst(ln_gamma(k as f64));
            let alpha: Vec<S> = o.phi[d].iter().map(|&v| v * o.kappa[d]).collect();
            for c in &o.cutpoints {
                cut += ln_induced_dirichlet(&c[d], &alpha, S::zero());
            }
        }
    }

    let mut corr = S::zero();
    for b in &p.blocks {
        let eta = lkj_eta(b.tests.len(), spec.corr_bound);
        for d in 0..2 {
            corr += ln_lkj_cholesky(&b.global_chol[d], eta);
            for dev in &b.deviation_chol {
                corr += ln_lkj_cholesky(&dev[d], eta);
            }
        }
    }
    // beta and prevalence carry uniform priors
    vec![
        ("mu", mu),
        ("sigma", sigma),
        ("rho", rho),
        ("nu", nu),
        ("kappa", kappa),
        ("phi", phi),
        ("cutpoints", cut),
        ("correlations", corr),
    ]
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng).max(1e-300)).collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    // keep every category representable after inversion through the link
    let floor = 1e-12;
    if g.iter().any(|&v| v < floor) {
        g.iter_mut().for_each(|v| *v = v.max(floor));
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
    }
    g
}

/// Canonical partial correlations of an LKJ(`eta`) draw, on the atanh scale.
fn fill_cpc<R: Rng + ?Sized>(out: &mut [f64], d: usize, eta: f64, rng: &mut R) {
    let mut k = 0;
    for i in 1..d {
        for j in 0..i {
            let shape = eta + (d - 2 - j) as f64 / 2.0;
            let u: f64 = Beta::new(shape, shape).unwrap().sample(rng);
            out[k] = (2.0 * u - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
            k += 1;
        }
    }
}

/// One draw of every parameter from the prior.
pub fn sample_prior<R: Rng + ?Sized>(layout: &Layout, spec: &PriorSpec, rng: &mut R) -> Params<f64> {
    let mut x = vec![0.0; layout.dim()];
    for (t, m) in layout.means.iter().enumerate() {
        if let MeanLayout::Free { mu, log_sigma, atanh_rho, z, ordered } = *m {
            let draw = |p: NormalPrior, rng: &mut R| p.location + p.scale * std_normal(rng);
            let (m0, m1) = loop {
                let (a, b) = (draw(spec.mu[t][0], rng), draw(spec.mu[t][1], rng));
                if !ordered || b > a {
                    break (a, b);
                }
            };
            x[mu[0]] = m0;
            x[mu[1]] = if ordered { (m1 - m0).ln() } else { m1 };
            for i in log_sigma {
                x[i] = (spec.sigma_scale * std_normal(rng)).abs().max(1e-300).ln();
            }
            x[atanh_rho] = spec.rho_scale * std_normal(rng);
            for s in 0..2 * layout.num_studies() {
                x[z + s] = std_normal(rng);
            }
        }
    }
    let mut p = layout.constrain(&x).params;
    for (t, o) in layout.ordinal.iter().enumerate() {
        let Some(o) = o else { continue };
        let op = p.ordinal[t].as_mut().unwrap();
        for d in 0..2 {
            op.kappa[d] = (spec.kappa_scale * std_normal(rng)).abs().max(1e-8);
            op.phi[d] = dirichlet(&vec![1.0; o.categories], rng);
            let alpha: Vec<f64> = op.phi[d].iter().map(|v| v * op.kappa[d]).collect();
            for s in 0..layout.num_studies() {
                let probs = dirichlet(&alpha, rng);
                op.cutpoints[s][d] = match probs_to_cutpoints(&probs, 0.0) {
                    Ok(c) => c.values().to_vec(),
                    // ties after rounding; spread them minimally
                    Err(_) => {
                        let mut c: Vec<f64> = (1..o.categories)
                            .map(|k| link::quantile(probs[..k].iter().sum::<f64>().clamp(1e-12, 1.0 - 1e-12)))
                            .collect();
                        for k in 1..c.len() {
                            if c[k] <= c[k - 1] {
                                c[k] = c[k - 1] + 1e-9;
                            }
                        }
                        c
                    }
                };
            }
        }
    }
    let mut x = layout.unconstrain(&p).expect("prior draw inside support");
    for b in &layout.blocks {
        let d = b.tests.len();
        let eta = lkj_eta(d, spec.corr_bound);
        let n = b.num_cpc();
        for c in 0..2 {
            fill_cpc(&mut x[b.cpc_global[c]..], d, eta, rng);
            x[b.logit_beta[c]] = {
                let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                (u / (1.0 - u)).ln()
            };
            for s in 0..layout.num_studies() {
                fill_cpc(&mut x[b.cpc_dev + (2 * s + c) * n..], d, eta, rng);
            }
        }
    }
    for s in 0..layout.num_studies() {
        let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
        x[layout.prevalence + s] = (u / (1.0 - u)).ln();
    }
    layout.constrain(&x).params
}
