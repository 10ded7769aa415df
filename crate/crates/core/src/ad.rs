//! Scalar reverse-mode automatic differentiation.
//!
//! Model code is written once against [`Scalar`]. Evaluating it with `f64`
//! gives plain values; evaluating it with [`Var`] records every operation on
//! a thread-local tape so that [`gradient`] can sweep it backwards. Both
//! paths perform the same floating-point operations in the same order, so
//! the value returned by [`gradient`] is bitwise identical to the `f64`
//! evaluation.
//!
//! Expensive kernels (the GHK box probability, the pairwise data sum) enter
//! the tape as a single custom node carrying precomputed partials.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use statrs::function::gamma::{digamma, ln_gamma};

use crate::math::link;

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;

    /// True when partials passed to [`Scalar::custom`] are consumed.
    const TRACKS_GRADIENT: bool;

    fn exp(self) -> Self;
    fn exp_m1(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn ln_gamma(self) -> Self;
    /// Logistic probit approximation `1 / (1 + exp(-1.702 x))`.
    fn link(self) -> Self;
    /// Natural log of the link, `-ln(1 + exp(-1.702 x))`, stable for large |x|.
    fn ln_link(self) -> Self;

    /// A node whose value and partial derivatives with respect to `inputs`
    /// were computed outside the tape.
    fn custom(inputs: &[Self], value: f64, partials: &[f64]) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    const TRACKS_GRADIENT: bool = false;

    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        ln_gamma(self)
    }
    #[inline]
    fn link(self) -> Self {
        link::cdf(self)
    }
    #[inline]
    fn ln_link(self) -> Self {
        link::ln_cdf(self)
    }
    #[inline]
    fn custom(_inputs: &[Self], value: f64, _partials: &[f64]) -> Self {
        value
    }
}

const CONST: u32 = u32::MAX;

#[derive(Default)]
struct Tape {
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Tape {
    fn clear(&mut self) {
        self.offsets.clear();
        self.parents.clear();
        self.partials.clear();
        self.offsets.push(0);
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    fn push(&mut self, deps: &[(u32, f64)]) -> u32 {
        for &(p, d) in deps {
            if p != CONST {
                self.parents.push(p);
                self.partials.push(d);
            }
        }
        let idx = self.len() as u32;
        self.offsets.push(self.parents.len() as u32);
        idx
    }
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

/// A tape-recorded scalar. Only valid inside [`gradient`].
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

impl Var {
    #[inline]
    fn node(val: f64, deps: &[(u32, f64)]) -> Var {
        if deps.iter().all(|&(p, _)| p == CONST) {
            return Var { idx: CONST, val };
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(deps));
        Var { idx, val }
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Var {
        Var::node(val, &[(self.idx, d)])
    }
}

/// Evaluates `f` on a fresh tape at `x` and returns its value and gradient.
pub fn gradient<E>(
    x: &[f64],
    f: impl FnOnce(&[Var]) -> Result<Var, E>,
) -> Result<(f64, Vec<f64>), E> {
    TAPE.with(|t| t.borrow_mut().clear());
    let inputs: Vec<Var> = x
        .iter()
        .map(|&val| Var {
            idx: TAPE.with(|t| t.borrow_mut().push(&[])),
            val,
        })
        .collect();
    let out = f(&inputs)?;
    let grad = TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; t.len()];
        if out.idx != CONST {
            adj[out.idx as usize] = 1.0;
        }
        for i in (0..t.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (t.offsets[i] as usize, t.offsets[i + 1] as usize);
            for j in s..e {
                adj[t.parents[j] as usize] += a * t.partials[j];
            }
        }
        adj.truncate(x.len());
        adj
    });
    Ok((out.val, grad))
}

impl Scalar for Var {
    const TRACKS_GRADIENT: bool = true;

    #[inline]
    fn cst(v: f64) -> Self {
        Var { idx: CONST, val: v }
    }
    #[inline]
    fn val(self) -> f64 {
        self.val
    }
    #[inline]
    fn exp(self) -> Self {
        let v = self.val.exp();
        self.unary(v, v)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        self.unary(self.val.exp_m1(), self.val.exp())
    }
    #[inline]
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        self.unary(self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }
    #[inline]
    fn sqrt(self) -> Self {
        let v = self.val.sqrt();
        self.unary(v, 0.5 / v)
    }
    #[inline]
    fn tanh(self) -> Self {
        let v = self.val.tanh();
        self.unary(v, 1.0 - v * v)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        self.unary(ln_gamma(self.val), digamma(self.val))
    }
    #[inline]
    fn link(self) -> Self {
        self.unary(link::cdf(self.val), link::pdf(self.val))
    }
    #[inline]
    fn ln_link(self) -> Self {
        // d/dx ln F(x) = k (1 - F(x))
        self.unary(link::ln_cdf(self.val), link::SCALE * link::cdf(-self.val))
    }
    fn custom(inputs: &[Self], value: f64, partials: &[f64]) -> Self {
        debug_assert_eq!(inputs.len(), partials.len());
        if inputs.iter().all(|v| v.idx == CONST) {
            return Var { idx: CONST, val: value };
        }
        let idx = TAPE.with(|t| {
            let mut t = t.borrow_mut();
            for (v, &d) in inputs.iter().zip(partials) {
                if v.idx != CONST {
                    t.parents.push(v.idx);
                    t.partials.push(d);
                }
            }
            let idx = t.len() as u32;
            let end = t.parents.len() as u32;
            t.offsets.push(end);
            idx
        });
        Var { idx, val: value }
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::node(self.val + o.val, &[(self.idx, 1.0), (o.idx, 1.0)])
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::node(self.val - o.val, &[(self.idx, 1.0), (o.idx, -1.0)])
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::node(self.val * o.val, &[(self.idx, o.val), (o.idx, self.val)])
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let v = self.val / o.val;
        Var::node(v, &[(self.idx, 1.0 / o.val), (o.idx, -v / o.val)])
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: f64) -> Var {
        self.unary(self.val + o, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: f64) -> Var {
        self.unary(self.val - o, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: f64) -> Var {
        self.unary(self.val * o, o)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: f64) -> Var {
        self.unary(self.val / o, 1.0 / o)
    }
}

impl AddAssign for Var {
    #[inline]
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}

impl SubAssign for Var {
    #[inline]
    fn sub_assign(&mut self, o: Var) {
        *self = *self - o;
    }
}

impl MulAssign for Var {
    #[inline]
    fn mul_assign(&mut self, o: Var) {
        *self = *self * o;
    }
}
