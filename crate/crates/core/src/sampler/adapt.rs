//! Warmup adaptation: dual averaging of the step size and windowed
//! estimation of a diagonal inverse metric.

#[derive(Debug, Clone)]
pub struct DualAveraging {
    delta: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(delta: f64) -> Self {
        DualAveraging { delta, gamma: 0.05, t0: 10.0, kappa: 0.75, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    /// Restarts the averaging with shrinkage target `ln(10 eps)`.
    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size after observing `accept_stat`.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Final step size: the exponentiated running average.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Fast–slow–fast warmup schedule with doubling slow windows.
#[derive(Debug, Clone)]
pub struct WindowedVariance {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    estimator: Welford,
    enabled: bool,
}

impl WindowedVariance {
    pub fn new(dim: usize, warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        let enabled = warmup >= 20;
        if enabled && init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup - (init + term);
        }
        WindowedVariance {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: init + base - 1,
            counter: 0,
            estimator: Welford::new(dim),
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer && self.counter < self.warmup - self.term_buffer && self.counter != self.warmup
    }

    fn window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Records `q`; at the end of a slow window writes the regularised
    /// variance into `inv_metric` and returns `true`.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if !self.enabled {
            return false;
        }
        if self.in_window() {
            self.estimator.add(q);
        }
        if self.window_end() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            for (v, m2) in inv_metric.iter_mut().zip(&self.estimator.m2) {
                let var = m2 / (n - 1.0);
                *v = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
            }
            self.estimator.restart();
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_schedule_for_default_warmup() {
        let mut w = WindowedVariance::new(1, 1000);
        let mut ends = vec![];
        let mut m = [1.0];
        for i in 0..1000 {
            if w.learn(&mut m, &[i as f64]) {
                ends.push(i);
            }
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_rescales_buffers() {
        let mut w = WindowedVariance::new(1, 100);
        let mut ends = vec![];
        let mut m = [1.0];
        for i in 0..100 {
            if w.learn(&mut m, &[i as f64]) {
                ends.push(i);
            }
        }
        assert_eq!(ends, vec![89]);
    }

    #[test]
    fn variance_is_regularised() {
        let mut w = WindowedVariance::new(1, 1000);
        let mut m = [0.0];
        let mut i = 0;
        while !w.learn(&mut m, &[if i % 2 == 0 { 1.0 } else { -1.0 }]) {
            i += 1;
        }
        // draws 75..=99: thirteen -1 and twelve +1
        let n = 25.0;
        let var = (25.0 - 25.0 * (1.0f64 / 25.0).powi(2)) / 24.0;
        let expect = n / (n + 5.0) * var + 1e-3 * 5.0 / (n + 5.0);
        assert!((m[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn dual_averaging_converges_to_target() {
        // accept rate falls with step size; find eps with exp(-eps) = 0.8
        let mut da = DualAveraging::new(0.8);
        da.restart(1.0);
        let mut eps: f64 = 1.0;
        for _ in 0..2000 {
            eps = da.learn((-eps).exp());
        }
        let _ = eps;
        assert!((da.final_step_size() - 0.8f64.ln().abs()).abs() < 5e-3);
    }
}
