//! Gauss–Legendre quadrature.

/// Nodes and weights of the `n`-point rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite rule: `panels` equal sub-intervals of `[a, b]`, each with the
/// `n`-point rule.
#[derive(Debug, Clone)]
pub struct Composite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panels: usize,
}

impl Composite {
    pub fn new(n: usize, panels: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Composite { nodes, weights, panels }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = (b - a) / self.panels as f64;
        let mut total = 0.0;
        for p in 0..self.panels {
            let lo = a + h * p as f64;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}
