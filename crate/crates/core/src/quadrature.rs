//! One-dimensional Gauss-Legendre rules.
//!
//! Every integral in the method is a product of one-dimensional quadratures, so this
//! module only deals with rules on an interval. Composite rules split the interval
//! into equal panels and map a base rule onto each of them.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // inherent float math is std-only on older toolchains
use num_traits::Float;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl QuadratureRule1D {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weighted sum of `f` evaluated at the nodes.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// The same rule affinely mapped onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return invalid("interval requires lo < hi");
        }
        let scale = (hi - lo) / (self.hi - self.lo);
        let nodes = self
            .nodes
            .iter()
            .map(|&x| lo + (x - self.lo) * scale)
            .collect();
        let weights = self.weights.iter().map(|&w| w * scale).collect();
        Ok(Self {
            nodes,
            weights,
            lo,
            hi,
        })
    }
}

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let dp = nf * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// The `n`-point Gauss-Legendre rule on `[-1, 1]`, exact for polynomials of degree
/// `2n - 1`.
///
/// Roots are found by Newton iteration from the Tricomi initial guess; the rule is
/// symmetrized so that mirrored nodes and their weights agree bit-for-bit.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule1D> {
    if n == 0 {
        return invalid("gauss_legendre needs at least one node");
    }
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let nf = n as f64;
    let half = n / 2;
    for i in 0..half {
        // i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        let (_, dp) = legendre_with_derivative(n, 0.0);
        nodes[half] = 0.0;
        weights[half] = 2.0 / (dp * dp);
    }
    Ok(QuadratureRule1D {
        nodes,
        weights,
        lo: -1.0,
        hi: 1.0,
    })
}

/// Concatenation of `base` mapped onto `panels` equal sub-intervals of `[lo, hi]`.
pub fn composite_rule(
    base: &QuadratureRule1D,
    panels: usize,
    interval: (f64, f64),
) -> Result<QuadratureRule1D> {
    let (lo, hi) = interval;
    if panels == 0 {
        return invalid("composite rule needs at least one panel");
    }
    if !(lo < hi) {
        return invalid("interval requires lo < hi");
    }
    if panels == 1 {
        return base.mapped(lo, hi);
    }
    let width = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * base.len());
    let mut weights = Vec::with_capacity(panels * base.len());
    for k in 0..panels {
        let a = lo + width * k as f64;
        let b = if k + 1 == panels { hi } else { a + width };
        let panel = base.mapped(a, b)?;
        nodes.extend_from_slice(&panel.nodes);
        weights.extend_from_slice(&panel.weights);
    }
    Ok(QuadratureRule1D {
        nodes,
        weights,
        lo,
        hi,
    })
}

/// `sum_q weights[q] * values[q]`.
pub fn integrate_1d(values: &[f64], rule: &QuadratureRule1D) -> Result<f64> {
    if values.len() != rule.len() {
        return invalid("value count does not match rule node count");
    }
    Ok(values.iter().zip(&rule.weights).map(|(v, w)| v * w).sum())
}
