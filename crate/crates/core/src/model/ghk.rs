//! GHK sequential-conditioning estimator of box probabilities for the latent
//! vector `Z = L E`, `E` with independent link-distributed components.
//!
//! Each conditional step truncates one component to its bounds through the
//! link and maps a node coordinate back through the link's inverse, so the
//! estimator is smooth in the bounds and in `L`. The reverse pass is written
//! out by hand.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::link::{self, SCALE};

/// Probabilities below this are replaced by it before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// A shifted Kronecker point set in `[0,1)^dim`.
#[derive(Debug, Clone)]
pub struct GhkNodes {
    dim: usize,
    count: usize,
    points: Vec<f64>,
}

impl GhkNodes {
    /// `count` points of the `R_dim` sequence with a random shift drawn from
    /// `seed`.
    pub fn new(dim: usize, count: usize, seed: u64) -> Self {
        assert!(count > 0, "at least one node");
        // unique positive root of x^(dim+1) = x + 1
        let mut phi = 2.0f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha: Vec<f64> = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((dim as u64) << 48));
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let eps = 0.5 / count as f64 * 1e-6;
        let mut points = Vec::with_capacity(dim * count);
        for i in 0..count {
            for j in 0..dim {
                let u = (shift[j] + (i as f64 + 1.0) * alpha[j]).fract();
                points.push(u.clamp(eps, 1.0 - eps));
            }
        }
        GhkNodes { dim, count, points }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxProb {
    pub value: f64,
    /// The estimate underflowed and was replaced by [`PROBABILITY_FLOOR`].
    pub floored: bool,
}

/// Partial derivatives of the probability (not its log).
#[derive(Debug, Clone, Default)]
pub struct BoxGrad {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Lower triangle of `L`, row-major: `(0,0), (1,0), (1,1), (2,0), ...`
    pub chol: Vec<f64>,
}

impl BoxGrad {
    fn reset(&mut self, d: usize) {
        self.lo.clear();
        self.lo.resize(d, 0.0);
        self.hi.clear();
        self.hi.resize(d, 0.0);
        self.chol.clear();
        self.chol.resize(d * (d + 1) / 2, 0.0);
    }
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Clone, Copy)]
struct Step {
    alpha: f64,
    beta: f64,
    fa: f64,
    fb: f64,
    // 1 - F at the bounds
    ga: f64,
    gb: f64,
    q: f64,
}

#[inline]
fn step(lo: f64, hi: f64, m: f64, s: f64) -> Step {
    let alpha = (lo - m) / s;
    let beta = (hi - m) / s;
    let (fa, ga) = if alpha == f64::NEG_INFINITY { (0.0, 1.0) } else { link::cdf_pair(alpha) };
    let (fb, gb) = if beta == f64::INFINITY { (1.0, 0.0) } else { link::cdf_pair(beta) };
    let q = if alpha > 0.0 { ga - gb } else { fb - fa };
    Step { alpha, beta, fa, fb, ga, gb, q }
}

/// Estimate of `P(lo < L E < hi)` for lower-triangular `l` (row-major,
/// `dim × dim`) and bounds that may be infinite. When `grad` is given it
/// receives the partial derivatives of the returned value.
///
/// Independent dimensions (`L` diagonal) are computed as an exact product
/// without touching the nodes.
pub fn box_probability(lo: &[f64], hi: &[f64], l: &[f64], nodes: &GhkNodes, grad: Option<&mut BoxGrad>) -> BoxProb {
    let d = lo.len();
    debug_assert_eq!(hi.len(), d);
    debug_assert_eq!(l.len(), d * d);
    let lt = |i: usize, j: usize| l[i * d + j];

    let diagonal = (0..d).all(|i| (0..i).all(|j| lt(i, j) == 0.0));
    if diagonal || d == 1 {
        return independent(lo, hi, l, grad);
    }
    assert!(nodes.dim() + 1 >= d, "node set too small for dimension {d}");

    let first = step(lo[0], hi[0], 0.0, lt(0, 0));
    let mut total = 0.0;
    let mut e = vec![0.0; d];
    let mut steps: Vec<Step> = Vec::with_capacity(d);
    let mut want_grad = grad.is_some();
    let mut g_local = BoxGrad::default();
    if want_grad {
        g_local.reset(d);
    }
    let mut prefix = vec![0.0; d + 1];
    let mut e_bar = vec![0.0; d];
    let w_bar = 1.0 / nodes.len() as f64;

    for n in 0..nodes.len() {
        let u = nodes.point(n);
        steps.clear();
        let mut w = 1.0;
        let mut empty = false;
        for t in 0..d {
            let st = if t == 0 {
                first
            } else {
                let mut m = 0.0;
                for j in 0..t {
                    m += lt(t, j) * e[j];
                }
                step(lo[t], hi[t], m, lt(t, t))
            };
            if !(st.q > 0.0) {
                empty = true;
                break;
            }
            w *= st.q;
            if t + 1 < d {
                let ut = u[t];
                let x = st.fa * (1.0 - ut) + ut * st.fb;
                let xc = st.ga * (1.0 - ut) + ut * st.gb;
                e[t] = (x / xc).ln() / SCALE;
            }
            steps.push(st);
        }
        if empty {
            continue;
        }
        total += w;
        if !want_grad {
            continue;
        }

        prefix[0] = 1.0;
        for t in 0..d {
            prefix[t + 1] = prefix[t] * steps[t].q;
        }
        e_bar.iter_mut().for_each(|v| *v = 0.0);
        let mut suffix = 1.0;
        for t in (0..d).rev() {
            let st = &steps[t];
            let s = lt(t, t);
            let q_bar = w_bar * prefix[t] * suffix;
            suffix *= st.q;
            let (mut fa_bar, mut fb_bar) = (0.0, 0.0);
            if t + 1 < d {
                let ut = u[t];
                let x = st.fa * (1.0 - ut) + ut * st.fb;
                let xc = st.ga * (1.0 - ut) + ut * st.gb;
                let x_bar = e_bar[t] / (SCALE * x * xc);
                fa_bar = x_bar * (1.0 - ut);
                fb_bar = x_bar * ut;
            }
            fa_bar -= q_bar;
            fb_bar += q_bar;
            let mut m_bar = 0.0;
            let mut s_bar = 0.0;
            if st.alpha.is_finite() {
                let a_bar = fa_bar * SCALE * st.fa * st.ga;
                g_local.lo[t] += a_bar / s;
                m_bar -= a_bar / s;
                s_bar -= a_bar * st.alpha / s;
            }
            if st.beta.is_finite() {
                let b_bar = fb_bar * SCALE * st.fb * st.gb;
                g_local.hi[t] += b_bar / s;
                m_bar -= b_bar / s;
                s_bar -= b_bar * st.beta / s;
            }
            for j in 0..t {
                g_local.chol[tri(t, j)] += m_bar * e[j];
                e_bar[j] += m_bar * lt(t, j);
            }
            g_local.chol[tri(t, t)] += s_bar;
        }
    }

    let value = total / nodes.len() as f64;
    if !(value >= PROBABILITY_FLOOR) {
        want_grad = false;
    }
    if let Some(g) = grad {
        if want_grad {
            *g = g_local;
        } else {
            g.reset(d);
        }
    }
    if value >= PROBABILITY_FLOOR {
        BoxProb { value, floored: false }
    } else {
        BoxProb { value: PROBABILITY_FLOOR, floored: true }
    }
}

/// Prefix tree over the response patterns of one dependence block. Patterns
/// that agree on their first `t` responses share the first `t` conditioning
/// steps of the estimator.
#[derive(Debug, Clone)]
pub struct PatternTrie {
    dim: usize,
    /// Nodes in level order; `level_start[t]..level_start[t + 1]` is level `t`.
    level_start: Vec<usize>,
    category: Vec<u8>,
    /// `path[i * dim + j]`: ancestor of node `i` at level `j`, for `j` up to
    /// the node's own level.
    path: Vec<usize>,
    leaf_of: Vec<usize>,
}

impl PatternTrie {
    pub fn new(patterns: &[Vec<u8>]) -> Self {
        let dim = patterns.first().map_or(0, |p| p.len());
        // per level: (parent within previous level, category)
        let mut levels: Vec<Vec<(usize, u8)>> = vec![Vec::new(); dim];
        let mut index: Vec<HashMap<(usize, u8), usize>> = vec![HashMap::new(); dim];
        let mut local_leaf = Vec::with_capacity(patterns.len());
        for pat in patterns {
            assert_eq!(pat.len(), dim, "patterns of equal length");
            let mut parent = 0;
            for (t, &y) in pat.iter().enumerate() {
                parent = *index[t].entry((parent, y)).or_insert_with(|| {
                    levels[t].push((parent, y));
                    levels[t].len() - 1
                });
            }
            local_leaf.push(parent);
        }
        let mut level_start = vec![0];
        for lv in &levels {
            level_start.push(level_start.last().unwrap() + lv.len());
        }
        let total = *level_start.last().unwrap();
        let mut category = Vec::with_capacity(total);
        let mut path = vec![0; total * dim];
        for (t, lv) in levels.iter().enumerate() {
            for (i, &(parent, y)) in lv.iter().enumerate() {
                let node = level_start[t] + i;
                category.push(y);
                if t > 0 {
                    let p = level_start[t - 1] + parent;
                    for j in 0..t {
                        path[node * dim + j] = path[p * dim + j];
                    }
                }
                path[node * dim + t] = node;
            }
        }
        let leaf_of = local_leaf.into_iter().map(|i| level_start[dim.saturating_sub(1)] + i).collect();
        PatternTrie { dim, level_start, category, path, leaf_of }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_patterns(&self) -> usize {
        self.leaf_of.len()
    }

    fn pattern(&self, leaf: usize) -> Vec<u8> {
        (0..self.dim).map(|j| self.category[self.path[leaf * self.dim + j]]).collect()
    }
}

#[inline]
fn bound(cuts: &[f64], y: u8, upper: bool) -> f64 {
    let y = y as usize;
    if upper {
        cuts.get(y).copied().unwrap_or(f64::INFINITY)
    } else if y == 0 {
        f64::NEG_INFINITY
    } else {
        cuts[y - 1]
    }
}

/// Estimates for every pattern of `trie` at once. Category `y` of dimension
/// `t` is the interval `(cuts[t][y-1], cuts[t][y])`, open at the ends. Each
/// estimate equals [`box_probability`] for that pattern's box with the same
/// nodes; `grads`, when given, receives one [`BoxGrad`] per pattern.
pub fn pattern_probabilities(trie: &PatternTrie, cuts: &[Vec<f64>], l: &[f64], nodes: &GhkNodes, grads: Option<&mut Vec<BoxGrad>>) -> Vec<BoxProb> {
    let d = trie.dim;
    let lt = |i: usize, j: usize| l[i * d + j];
    let mut grads = grads;
    if let Some(g) = grads.as_deref_mut() {
        g.resize(trie.num_patterns(), BoxGrad::default());
    }
    let diagonal = (0..d).all(|i| (0..i).all(|j| lt(i, j) == 0.0));
    if diagonal || d == 1 {
        let mut out = Vec::with_capacity(trie.num_patterns());
        for (k, &leaf) in trie.leaf_of.iter().enumerate() {
            let y = trie.pattern(leaf);
            let lo: Vec<f64> = (0..d).map(|t| bound(&cuts[t], y[t], false)).collect();
            let hi: Vec<f64> = (0..d).map(|t| bound(&cuts[t], y[t], true)).collect();
            out.push(independent(&lo, &hi, l, grads.as_deref_mut().map(|g| &mut g[k])));
        }
        return out;
    }
    assert!(nodes.dim() + 1 >= d, "node set too small for dimension {d}");

    let total_nodes = trie.category.len();
    let first_leaf = trie.level_start[d - 1];
    let leaves = total_nodes - first_leaf;
    let level_of: Vec<usize> = (0..d).flat_map(|t| std::iter::repeat_n(t, trie.level_start[t + 1] - trie.level_start[t])).collect();
    let lo: Vec<f64> = (0..total_nodes).map(|i| bound(&cuts[level_of[i]], trie.category[i], false)).collect();
    let hi: Vec<f64> = (0..total_nodes).map(|i| bound(&cuts[level_of[i]], trie.category[i], true)).collect();
    let diag: Vec<f64> = (0..d).map(|t| lt(t, t)).collect();

    let mut steps = vec![step(0.0, 1.0, 0.0, 1.0); total_nodes];
    for i in 0..trie.level_start[1] {
        steps[i] = step(lo[i], hi[i], 0.0, diag[0]);
    }
    let mut weight = vec![0.0; total_nodes];
    let mut draw = vec![0.0; total_nodes];
    let mut alive = vec![false; total_nodes];
    let mut total = vec![0.0; leaves];
    let want_grad = grads.is_some();
    let tri_len = d * (d + 1) / 2;
    // per leaf: lo, hi, chol partials
    let stride = 2 * d + tri_len;
    let mut g_acc = if want_grad { vec![0.0; leaves * stride] } else { Vec::new() };
    let w_bar = 1.0 / nodes.len() as f64;
    let mut e_bar = vec![0.0; d];
    let mut prefix = vec![0.0; d + 1];

    for n in 0..nodes.len() {
        let u = nodes.point(n);
        for i in 0..total_nodes {
            let t = level_of[i];
            let path = &trie.path[i * d..i * d + t + 1];
            let w_parent = if t == 0 {
                1.0
            } else {
                let p = path[t - 1];
                if !alive[p] {
                    alive[i] = false;
                    continue;
                }
                let mut m = 0.0;
                for (j, &a) in path[..t].iter().enumerate() {
                    m += l[t * d + j] * draw[a];
                }
                steps[i] = step(lo[i], hi[i], m, diag[t]);
                weight[p]
            };
            let st = &steps[i];
            if !(st.q > 0.0) {
                alive[i] = false;
                continue;
            }
            alive[i] = true;
            weight[i] = w_parent * st.q;
            if t + 1 < d {
                let ut = u[t];
                let x = st.fa * (1.0 - ut) + ut * st.fb;
                let xc = st.ga * (1.0 - ut) + ut * st.gb;
                draw[i] = (x / xc).ln() / SCALE;
            }
        }
        for leaf in 0..leaves {
            let node = first_leaf + leaf;
            if !alive[node] {
                continue;
            }
            total[leaf] += weight[node];
            if !want_grad {
                continue;
            }
            let path = &trie.path[node * d..node * d + d];
            let g = &mut g_acc[leaf * stride..(leaf + 1) * stride];
            let (g_lo, rest) = g.split_at_mut(d);
            let (g_hi, g_chol) = rest.split_at_mut(d);
            prefix[0] = 1.0;
            for t in 0..d {
                prefix[t + 1] = weight[path[t]];
            }
            e_bar.iter_mut().for_each(|v| *v = 0.0);
            let mut suffix = 1.0;
            for t in (0..d).rev() {
                let st = &steps[path[t]];
                let s = diag[t];
                let q_bar = w_bar * prefix[t] * suffix;
                suffix *= st.q;
                let (mut fa_bar, mut fb_bar) = (0.0, 0.0);
                if t + 1 < d {
                    let ut = u[t];
                    let x = st.fa * (1.0 - ut) + ut * st.fb;
                    let xc = st.ga * (1.0 - ut) + ut * st.gb;
                    let x_bar = e_bar[t] / (SCALE * x * xc);
                    fa_bar = x_bar * (1.0 - ut);
                    fb_bar = x_bar * ut;
                }
                fa_bar -= q_bar;
                fb_bar += q_bar;
                let mut m_bar = 0.0;
                let mut s_bar = 0.0;
                if st.alpha.is_finite() {
                    let a_bar = fa_bar * SCALE * st.fa * st.ga;
                    g_lo[t] += a_bar / s;
                    m_bar -= a_bar / s;
                    s_bar -= a_bar * st.alpha / s;
                }
                if st.beta.is_finite() {
                    let b_bar = fb_bar * SCALE * st.fb * st.gb;
                    g_hi[t] += b_bar / s;
                    m_bar -= b_bar / s;
                    s_bar -= b_bar * st.beta / s;
                }
                let row = tri(t, 0);
                for j in 0..t {
                    g_chol[row + j] += m_bar * draw[path[j]];
                    e_bar[j] += m_bar * l[t * d + j];
                }
                g_chol[row + t] += s_bar;
            }
        }
    }

    let mut out = Vec::with_capacity(trie.num_patterns());
    for (k, &node) in trie.leaf_of.iter().enumerate() {
        let leaf = node - first_leaf;
        let value = total[leaf] / nodes.len() as f64;
        let floored = !(value >= PROBABILITY_FLOOR);
        if let Some(g) = grads.as_deref_mut() {
            let g = &mut g[k];
            g.reset(d);
            if !floored {
                let acc = &g_acc[leaf * stride..(leaf + 1) * stride];
                g.lo.copy_from_slice(&acc[..d]);
                g.hi.copy_from_slice(&acc[d..2 * d]);
                g.chol.copy_from_slice(&acc[2 * d..]);
            }
        }
        out.push(if floored { BoxProb { value: PROBABILITY_FLOOR, floored } } else { BoxProb { value, floored } });
    }
    out
}

fn independent(lo: &[f64], hi: &[f64], l: &[f64], grad: Option<&mut BoxGrad>) -> BoxProb {
    let d = lo.len();
    let steps: Vec<Step> = (0..d).map(|t| step(lo[t], hi[t], 0.0, l[t * d + t])).collect();
    let value: f64 = steps.iter().map(|s| s.q).product();
    let floored = !(value >= PROBABILITY_FLOOR);
    if let Some(g) = grad {
        g.reset(d);
        if !floored {
            for t in 0..d {
                let st = &steps[t];
                let s = l[t * d + t];
                let others: f64 = steps.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, s)| s.q).product();
                let mut s_bar = 0.0;
                if st.alpha.is_finite() {
                    let a_bar = -others * SCALE * st.fa * st.ga;
                    g.lo[t] = a_bar / s;
                    s_bar -= a_bar * st.alpha / s;
                }
                if st.beta.is_finite() {
                    let b_bar = others * SCALE * st.fb * st.gb;
                    g.hi[t] = b_bar / s;
                    s_bar -= b_bar * st.beta / s;
                }
                g.chol[tri(t, t)] = s_bar;
            }
        }
    }
    if floored {
        BoxProb { value: PROBABILITY_FLOOR, floored }
    } else {
        BoxProb { value, floored }
    }
}
