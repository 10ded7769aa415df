//! Multinomial NUTS transition with a diagonal Euclidean metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    /// Evaluates the target at `q`; failures give `logp = -inf`.
    pub fn at<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Point {
        let dim = q.len();
        match target.log_density_gradient(&q) {
            Ok((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => Point { q, p: vec![0.0; dim], grad: g, logp: lp },
            _ => Point { q, p: vec![0.0; dim], grad: vec![0.0; dim], logp: f64::NEG_INFINITY },
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub tree_depth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    pub energy: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

pub(crate) struct Nuts<'a, T: LogDensity + ?Sized> {
    pub target: &'a T,
    pub inv_metric: Vec<f64>,
    pub eps: f64,
    pub max_depth: u32,
    pub rng: ChaCha8Rng,
    z: Point,
    n_leapfrog: u32,
    sum_metro: f64,
    divergent: bool,
}

/// Mutable ends of a subtree.
struct Edge<'b> {
    p_sharp_beg: &'b mut Vec<f64>,
    p_sharp_end: &'b mut Vec<f64>,
    p_beg: &'b mut Vec<f64>,
    p_end: &'b mut Vec<f64>,
}

impl<'a, T: LogDensity + ?Sized> Nuts<'a, T> {
    pub fn new(target: &'a T, start: Point, rng: ChaCha8Rng, max_depth: u32) -> Self {
        let dim = start.q.len();
        Nuts { target, inv_metric: vec![1.0; dim], eps: 1.0, max_depth, rng, z: start, n_leapfrog: 0, sum_metro: 0.0, divergent: false }
    }

    pub fn position(&self) -> &[f64] {
        &self.z.q
    }

    pub fn logp(&self) -> f64 {
        self.z.logp
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let k: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum();
        -z.logp + 0.5 * k
    }

    fn p_sharp(&self, z: &Point) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&mut self) {
        for (p, m) in self.z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = self.rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&mut self, eps: f64) {
        let z = &mut self.z;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        let q: Vec<f64> = z.q.iter().zip(&z.p).zip(&self.inv_metric).map(|((q, p), m)| q + eps * m * p).collect();
        let p = std::mem::take(&mut z.p);
        let mut next = Point::at(self.target, q);
        next.p = p;
        if next.logp.is_finite() {
            for (p, g) in next.p.iter_mut().zip(&next.grad) {
                *p += 0.5 * eps * g;
            }
        }
        self.z = next;
    }

    /// Heuristic initial step size: doubles or halves until the acceptance
    /// of a single leapfrog step crosses 0.8.
    pub fn init_step_size(&mut self) {
        let start = self.z.clone();
        self.sample_momentum();
        let h0 = self.hamiltonian(&self.z);
        self.leapfrog(self.eps);
        let h = self.hamiltonian(&self.z);
        let delta = if h.is_nan() { f64::NEG_INFINITY } else { h0 - h };
        let direction = if delta > 0.8f64.ln() { 1 } else { -1 };
        self.z = start.clone();
        for _ in 0..200 {
            self.sample_momentum();
            let h0 = self.hamiltonian(&self.z);
            self.leapfrog(self.eps);
            let h = self.hamiltonian(&self.z);
            let delta = if h.is_nan() { f64::NEG_INFINITY } else { h0 - h };
            self.z = start.clone();
            if (direction == 1 && !(delta > 0.8f64.ln())) || (direction == -1 && !(delta < 0.8f64.ln())) {
                break;
            }
            self.eps = if direction == 1 { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 || self.eps == 0.0 {
                break;
            }
        }
        self.eps = self.eps.clamp(1e-10, 1e7);
    }

    pub fn transition(&mut self) -> TransitionStats {
        self.sample_momentum();
        let dim = self.z.q.len();
        let mut z_fwd = self.z.clone();
        let mut z_bck = self.z.clone();
        let mut z_sample = self.z.clone();
        let mut z_propose = self.z.clone();

        let mut p_fwd_fwd = self.z.p.clone();
        let mut p_sharp_fwd_fwd = self.p_sharp(&self.z);
        let mut p_fwd_bck = self.z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp_fwd_fwd.clone();
        let mut p_bck_fwd = self.z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
        let mut p_bck_bck = self.z.p.clone();
        let mut p_sharp_bck_bck = p_sharp_fwd_fwd.clone();

        let mut rho = self.z.p.clone();
        let mut log_sum_weight = 0.0;
        let h0 = self.hamiltonian(&self.z);
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                self.z = z_fwd.clone();
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let edge = Edge { p_sharp_beg: &mut p_sharp_fwd_bck, p_sharp_end: &mut p_sharp_fwd_fwd, p_beg: &mut p_fwd_bck, p_end: &mut p_fwd_fwd };
                let v = self.build_tree(depth, &mut z_propose, edge, &mut rho_fwd, h0, 1.0, &mut lsw_subtree);
                z_fwd = self.z.clone();
                v
            } else {
                self.z = z_bck.clone();
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let edge = Edge { p_sharp_beg: &mut p_sharp_bck_fwd, p_sharp_end: &mut p_sharp_bck_bck, p_beg: &mut p_bck_fwd, p_end: &mut p_bck_bck };
                let v = self.build_tree(depth, &mut z_propose, edge, &mut rho_bck, h0, -1.0, &mut lsw_subtree);
                z_bck = self.z.clone();
                v
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else if self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample = z_propose.clone();
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        self.z = z_sample;
        TransitionStats {
            accept_stat: if self.n_leapfrog > 0 { self.sum_metro / self.n_leapfrog as f64 } else { 0.0 },
            tree_depth: depth,
            n_leapfrog: self.n_leapfrog,
            divergent: self.divergent,
            energy: self.hamiltonian(&self.z),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(&mut self, depth: u32, z_propose: &mut Point, edge: Edge<'_>, rho: &mut Vec<f64>, h0: f64, sign: f64, log_sum_weight: &mut f64) -> bool {
        if depth == 0 {
            self.leapfrog(sign * self.eps);
            self.n_leapfrog += 1;
            let mut h = self.hamiltonian(&self.z);
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            self.sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(&self.z);
            *edge.p_sharp_beg = self.p_sharp(&self.z);
            edge.p_sharp_end.clone_from(edge.p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&self.z.p) {
                *r += p;
            }
            edge.p_beg.clone_from(&self.z.p);
            edge.p_end.clone_from(&self.z.p);
            return !self.divergent;
        }
        let dim = rho.len();

        let mut p_sharp_init_end = vec![0.0; dim];
        let mut p_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        let init_edge = Edge { p_sharp_beg: edge.p_sharp_beg, p_sharp_end: &mut p_sharp_init_end, p_beg: edge.p_beg, p_end: &mut p_init_end };
        if !self.build_tree(depth - 1, z_propose, init_edge, &mut rho_init, h0, sign, &mut lsw_init) {
            return false;
        }

        let mut z_propose_final = self.z.clone();
        let mut rho_final = vec![0.0; dim];
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        let final_edge = Edge { p_sharp_beg: &mut p_sharp_final_beg, p_sharp_end: edge.p_sharp_end, p_beg: &mut p_final_beg, p_end: edge.p_end };
        if !self.build_tree(depth - 1, &mut z_propose_final, final_edge, &mut rho_final, h0, sign, &mut lsw_final) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, v) in rho.iter_mut().zip(&rho_subtree) {
            *r += v;
        }
        let mut persist = criterion(edge.p_sharp_beg, edge.p_sharp_end, &rho_subtree);
        persist &= criterion(edge.p_sharp_beg, &p_sharp_final_beg, &add(&rho_init, &p_final_beg));
        persist &= criterion(&p_sharp_init_end, edge.p_sharp_end, &add(&rho_final, &p_init_end));
        persist
    }
}
