//! Fitting the network to an initial condition, and L2 error metrics.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::jet::{Jet, JET_LEN};
use crate::linalg::solve_lstsq;
use crate::quadrature::QuadratureRule1D;
use crate::separable::SeparableField;
use crate::tnn::{eval_factors, Tape, TnnParams};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// `||f||_2` by factorized quadrature.
pub fn l2_norm(field: &SeparableField, rules: &[QuadratureRule1D]) -> Result<f64> {
    field.norm(rules)
}

/// The network as a separable field (rank `p`) on the rule nodes.
pub fn network_field(params: &TnnParams, rules: &[QuadratureRule1D]) -> Result<SeparableField> {
    let f = eval_factors(params, rules, 0)?;
    SeparableField::from_factors(&f, &vec![0; params.arch().dim], 1.0)
}

/// Absolute and relative L2 error of the network against `reference`. The
/// relative error is `None` when the reference has zero norm.
pub fn l2_error(
    params: &TnnParams,
    reference: &SeparableField,
    rules: &[QuadratureRule1D],
) -> Result<(f64, Option<f64>)> {
    let u = network_field(params, rules)?;
    let abs = u.distance(reference, rules)?;
    let norm = reference.norm(rules)?;
    Ok((abs, (norm > 0.0).then(|| abs / norm)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FitConfig {
    /// Adam iterations on the full loss
    pub max_iterations: usize,
    /// initial and final learning rate of the cosine schedule
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// per-dimension fit of a rank-one target before the joint phase (0 skips)
    pub prefit_iterations: usize,
    pub prefit_learning_rate: f64,
    /// stop once `||u - u0||` drops to this
    pub target_error: f64,
    /// recorded with the run; the optimizer itself is deterministic
    pub seed: u64,
    /// loss trace cadence (0 disables the trace)
    pub trace_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            learning_rate: 1e-4,
            min_learning_rate: 1e-7,
            prefit_iterations: 2000,
            prefit_learning_rate: 1e-2,
            target_error: 1e-6,
            seed: 0,
            trace_every: 100,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return invalid("max_iterations must be at least 1");
        }
        if !(self.target_error > 0.0) {
            return invalid("target error must be positive");
        }
        if !(self.learning_rate > 0.0 && self.prefit_learning_rate > 0.0) {
            return invalid("learning rates must be positive");
        }
        if !(self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate) {
            return invalid("min_learning_rate must lie in [0, learning_rate]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: TnnParams,
    /// best `||u - u0||` reached
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, ||u - u0||)` at the trace cadence, best-so-far
    pub trace: Vec<(usize, f64)>,
}

fn check_target(
    params: &TnnParams,
    target: &SeparableField,
    rules: &[QuadratureRule1D],
) -> Result<()> {
    let d = params.arch().dim;
    if rules.len() != d || target.dim() != d {
        return invalid("target, rules and network disagree on dimension");
    }
    if (0..d).any(|i| target.node_counts()[i] != rules[i].len()) {
        return invalid("target lives on different nodes than the rules");
    }
    Ok(())
}

fn weighted_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut bw = b.clone();
    for (q, &wq) in w.iter().enumerate() {
        bw.column_mut(q).scale_mut(wq);
    }
    a * bw.transpose()
}

/// `||u - u0||^2` and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    params: &TnnParams,
    target: &SeparableField,
    rules: &[QuadratureRule1D],
) -> Result<(f64, Vec<f64>)> {
    check_target(params, target, rules)?;
    let arch = params.arch();
    let d = arch.dim;
    let p = arch.rank;
    let r = target.rank();
    let factors = eval_factors(params, rules, 0)?;
    let us: Vec<DMatrix<f64>> = (0..d)
        .map(|i| DMatrix::from_fn(p, rules[i].len(), |j, q| factors.get(i, j, q, 0)))
        .collect();
    let vs: Vec<DMatrix<f64>> = (0..d)
        .map(|i| DMatrix::from_fn(r, rules[i].len(), |s, q| target.terms()[s].factors[i][q]))
        .collect();
    let coeff: Vec<f64> = target.terms().iter().map(|t| t.coeff).collect();
    let a: Vec<DMatrix<f64>> = (0..d)
        .map(|i| weighted_gram(&us[i], &us[i], rules[i].weights()))
        .collect();
    let b: Vec<DMatrix<f64>> = (0..d)
        .map(|i| weighted_gram(&us[i], &vs[i], rules[i].weights()))
        .collect();
    let except = |mats: &[DMatrix<f64>], k: Option<usize>, rows: usize, cols: usize| {
        let mut out = DMatrix::from_element(rows, cols, 1.0);
        for (i, m) in mats.iter().enumerate() {
            if Some(i) != k {
                out.component_mul_assign(m);
            }
        }
        out
    };
    let uu = except(&a, None, p, p).sum();
    let uv: f64 = except(&b, None, p, r)
        .column_iter()
        .zip(&coeff)
        .map(|(c, s)| c.sum() * s)
        .sum();
    let vv = target.inner(target, rules)?;
    let loss = uu - 2.0 * uv + vv;

    let mut grad = vec![0.0; params.as_slice().len()];
    let n_sub = params.per_subnet();
    let mut tape = Tape::new(params.layout());
    let mut seed: Vec<Jet> = vec![[0.0; JET_LEN]; p];
    for k in 0..d {
        let ak = except(&a, Some(k), p, p);
        let mut bk = except(&b, Some(k), p, r);
        for (s, c) in coeff.iter().enumerate() {
            bk.column_mut(s).scale_mut(*c);
        }
        // residual[a][q] = sum_b A'[a,b] u_kb(q) - sum_s B'[a,s] c_s v_sk(q)
        let res = &ak * &us[k] - &bk * &vs[k];
        let w = rules[k].weights();
        let g = &mut grad[k * n_sub..(k + 1) * n_sub];
        for (q, &x) in rules[k].nodes().iter().enumerate() {
            tape.forward(params, k, x, 0);
            for j in 0..p {
                seed[j][0] = 2.0 * w[q] * res[(j, q)];
            }
            tape.backward(params, k, &seed, 0, g);
        }
    }
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite fit loss or gradient".into(),
        ));
    }
    Ok((loss, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-12;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (Float::sqrt(vh) + Self::EPS);
        }
    }
}

fn cosine_lr(hi: f64, lo: f64, it: usize, total: usize) -> f64 {
    if total <= 1 {
        return hi;
    }
    let frac = it as f64 / (total - 1) as f64;
    lo + 0.5 * (hi - lo) * (1.0 + Float::cos(PI * frac))
}

/// One-dimensional targets for a rank-one `u0 = c prod_i g_i`: every rank
/// component of dimension `i > 0` fits `|c|^{1/d} g_i`, and component `j` of
/// dimension 0 fits `omega_j sign(c) |c|^{1/d} g_0` with `sum_j omega_j = 1`, so
/// that the sum of products reproduces `u0` while the components stay distinct.
fn prefit_targets(target: &SeparableField, p: usize) -> Vec<Vec<Vec<f64>>> {
    let term = &target.terms()[0];
    let d = term.factors.len();
    let s = Float::powf(term.coeff.abs(), 1.0 / d as f64);
    let norm = (p * (p + 1)) as f64 / 2.0;
    (0..d)
        .map(|i| {
            (0..p)
                .map(|j| {
                    let scale = if i == 0 {
                        s * term.coeff.signum() * (j + 1) as f64 / norm
                    } else {
                        s
                    };
                    term.factors[i].iter().map(|v| scale * v).collect()
                })
                .collect()
        })
        .collect()
}

/// Sum over dimensions of `int (u_ij - target_ij)^2` and its gradient.
fn prefit_loss(
    params: &TnnParams,
    targets: &[Vec<Vec<f64>>],
    rules: &[QuadratureRule1D],
    tape: &mut Tape,
    grad: &mut [f64],
) -> f64 {
    let p = params.arch().rank;
    let n_sub = params.per_subnet();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut seed: Vec<Jet> = vec![[0.0; JET_LEN]; p];
    let mut loss = 0.0;
    for (k, rule) in rules.iter().enumerate() {
        let g = &mut grad[k * n_sub..(k + 1) * n_sub];
        for (q, &x) in rule.nodes().iter().enumerate() {
            tape.forward(params, k, x, 0);
            let w = rule.weights()[q];
            for j in 0..p {
                let e = tape.out[j][0] - targets[k][j][q];
                loss += w * e * e;
                seed[j][0] = 2.0 * w * e;
            }
            tape.backward(params, k, &seed, 0, g);
        }
    }
    loss
}

/// Least-squares solve for the output layer of every sub-network against the
/// one-dimensional targets, hidden layers held fixed.
fn polish_output_layers(
    params: &mut TnnParams,
    targets: &[Vec<Vec<f64>>],
    rules: &[QuadratureRule1D],
) -> Result<()> {
    let layout = params.layout().clone();
    let out = *layout.output_slot();
    let h = out.cols;
    let p = out.rows;
    let mut tape = Tape::new(&layout);
    for (k, rule) in rules.iter().enumerate() {
        let nq = rule.len();
        let mut phi = DMatrix::zeros(nq, h);
        for (q, &x) in rule.nodes().iter().enumerate() {
            tape.forward(params, k, x, 0);
            let env = tape.envelope.map(|e| e[0]).unwrap_or(1.0);
            let hidden = tape.post.last().expect("at least one hidden layer");
            for c in 0..h {
                phi[(q, c)] = env * hidden[c][0];
            }
        }
        let mut phiw = phi.clone();
        for (q, &w) in rule.weights().iter().enumerate() {
            phiw.row_mut(q).scale_mut(w);
        }
        let normal = phiw.transpose() * &phi;
        let block = params.subnet_mut(k);
        for j in 0..p {
            let y = nalgebra::DVector::from_column_slice(&targets[k][j]);
            let rhs = phiw.transpose() * y;
            let (coef, _) = solve_lstsq(&normal, rhs.as_slice(), 1e-14)?;
            let row = out.weight_offset + j * out.cols;
            block[row..row + h].copy_from_slice(&coef);
        }
    }
    Ok(())
}

/// Fits the network to `target` on the tensor grid of `rules`.
///
/// For a rank-one target the factors are first fitted dimension by dimension
/// (Adam, then an exact least-squares solve for the output layers); Adam with a
/// cosine-decayed step then refines the full loss. The best iterate seen is
/// returned, so the reported loss never increases along the trace.
pub fn fit_initial(
    init: &TnnParams,
    target: &SeparableField,
    rules: &[QuadratureRule1D],
    config: &FitConfig,
) -> Result<FitOutcome> {
    check_target(init, target, rules)?;
    config.validate()?;
    let mut params = init.clone();
    let n = params.as_slice().len();
    let mut trace = Vec::new();

    if config.prefit_iterations > 0 && target.rank() == 1 {
        let targets = prefit_targets(target, params.arch().rank);
        let mut tape = Tape::new(params.layout());
        let mut grad = vec![0.0; n];
        let mut adam = Adam::new(n);
        // variable projection: the output layer is re-solved exactly before
        // every gradient step on the hidden layers
        for it in 0..config.prefit_iterations {
            polish_output_layers(&mut params, &targets, rules)?;
            let l = prefit_loss(&params, &targets, rules, &mut tape, &mut grad);
            if l <= config.target_error * config.target_error {
                break;
            }
            let lr = cosine_lr(
                config.prefit_learning_rate,
                config.prefit_learning_rate * 1e-3,
                it,
                config.prefit_iterations,
            );
            adam.step(params.as_mut_slice(), &grad, lr);
        }
        polish_output_layers(&mut params, &targets, rules)?;
    }

    // the expanded loss cancels near the attainable accuracy, so iterates are
    // ranked by the distance (pointwise on small grids)
    let error_of = |p: &TnnParams| -> Result<f64> { Ok(l2_error(p, target, rules)?.0) };
    let mut best = (error_of(&params)?, params.clone());
    if config.trace_every > 0 {
        trace.push((0, best.0));
    }
    let mut adam = Adam::new(n);
    let mut iterations = 0;
    for it in 0..config.max_iterations {
        if best.0 <= config.target_error {
            break;
        }
        let (_, grad) = loss_and_gradient(&params, target, rules)?;
        if it > 0 {
            let err = error_of(&params)?;
            if err < best.0 {
                best = (err, params.clone());
            }
        }
        let lr = cosine_lr(
            config.learning_rate,
            config.min_learning_rate,
            it,
            config.max_iterations,
        );
        adam.step(params.as_mut_slice(), &grad, lr);
        iterations = it + 1;
        if config.trace_every > 0 && iterations % config.trace_every == 0 {
            trace.push((iterations, best.0));
        }
    }
    if iterations == config.max_iterations && iterations > 0 {
        let err = error_of(&params)?;
        if err < best.0 {
            best = (err, params);
        }
    }
    let loss = best.0;
    Ok(FitOutcome {
        params: best.1,
        loss,
        iterations,
        converged: loss <= config.target_error,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::assemble_rhs;
    use crate::jacobian::factor_param_jacobian;
    use crate::operators::Observable;
    use crate::quadrature::{composite_rule, gauss_legendre};
    use crate::tnn::{init_network, InputMap, ParamMask, TnnArchitecture};

    fn rules(d: usize) -> Vec<QuadratureRule1D> {
        let r = composite_rule(&gauss_legendre(8).unwrap(), 2, (-1.0, 1.0)).unwrap();
        vec![r; d]
    }

    fn net(d: usize, map: InputMap, seed: u64) -> TnnParams {
        let arch = TnnArchitecture::new(d, 2, vec![8, 8], map, (-1.0, 1.0)).unwrap();
        init_network(&arch, seed).unwrap()
    }

    fn sine(rs: &[QuadratureRule1D]) -> SeparableField {
        SeparableField::rank_one(rs, 1.0, |_, x| (PI * x).sin())
    }

    #[test]
    fn error_against_own_expansion_is_zero() {
        let rs = rules(3);
        let ps = net(3, InputMap::PeriodicEmbedding { a: 1.0, b: PI }, 1);
        let me = network_field(&ps, &rs).unwrap();
        let (abs, rel) = l2_error(&ps, &me, &rs).unwrap();
        assert_eq!(abs, 0.0);
        assert_eq!(rel, Some(0.0));
        let zero = SeparableField::for_rules(&rs);
        assert_eq!(l2_error(&ps, &zero, &rs).unwrap().1, None);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rs = rules(2);
        let ps = net(2, InputMap::DirichletEnvelope, 6);
        let target = sine(&rs);
        let (_, g) = loss_and_gradient(&ps, &target, &rs).unwrap();
        let h = 1e-5;
        for idx in (0..ps.as_slice().len()).step_by(5) {
            let mut a = ps.clone();
            a.as_mut_slice()[idx] += h;
            let mut b = ps.clone();
            b.as_mut_slice()[idx] -= h;
            let fd = (loss_and_gradient(&a, &target, &rs).unwrap().0
                - loss_and_gradient(&b, &target, &rs).unwrap().0)
                / (2.0 * h);
            let scale = g[idx].abs().max(1e-4);
            assert!(
                (fd - g[idx]).abs() / scale < 1e-5,
                "{idx}: {fd} vs {}",
                g[idx]
            );
        }
    }

    #[test]
    fn gradient_is_twice_projected_residual() {
        let rs = rules(2);
        let ps = net(2, InputMap::PeriodicEmbedding { a: 1.0, b: PI }, 2);
        let target = sine(&rs);
        let (_, g) = loss_and_gradient(&ps, &target, &rs).unwrap();
        let factors = eval_factors(&ps, &rs, 0).unwrap();
        let mask = ParamMask::full(ps.arch());
        let jac = factor_param_jacobian(&ps, &mask, &rs, 0).unwrap();
        let resid = network_field(&ps, &rs)
            .unwrap()
            .add(&target.scaled(-1.0))
            .unwrap();
        let b = assemble_rhs(&factors, &jac, &resid, &Observable::identity(2)).unwrap();
        for (x, y) in g.iter().zip(&b) {
            assert!((x - 2.0 * y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn representable_target_is_fitted_exactly() {
        let rs = rules(2);
        let arch =
            TnnArchitecture::new(2, 1, vec![6], InputMap::DirichletEnvelope, (-1.0, 1.0)).unwrap();
        let start = init_network(&arch, 4).unwrap();
        // same hidden layers, different output weights: the output solve recovers it
        let mut other = start.clone();
        let out = *other.layout().output_slot();
        for k in 0..2 {
            let block = other.subnet_mut(k);
            for (c, v) in block[out.weight_offset..].iter_mut().enumerate() {
                *v = 0.3 + 0.1 * c as f64 - 0.05 * k as f64;
            }
        }
        let target = network_field(&other, &rs).unwrap();
        let cfg = FitConfig {
            target_error: 1e-10,
            ..Default::default()
        };
        let fit = fit_initial(&start, &target, &rs, &cfg).unwrap();
        assert!(fit.loss <= 1e-10, "{}", fit.loss);
        assert!(fit.converged);
    }

    #[test]
    fn invalid_config_rejected() {
        let rs = rules(1);
        let ps = net(1, InputMap::Identity, 0);
        let t = sine(&rs);
        let bad = FitConfig {
            target_error: 0.0,
            ..Default::default()
        };
        assert!(fit_initial(&ps, &t, &rs, &bad).is_err());
        let bad = FitConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(fit_initial(&ps, &t, &rs, &bad).is_err());
    }

    #[test]
    fn fit_reaches_small_error() {
        let rs = rules(3);
        let ps = net(3, InputMap::PeriodicEmbedding { a: 1.0, b: PI }, 3);
        let target = sine(&rs);
        let cfg = FitConfig {
            max_iterations: 200,
            prefit_iterations: 300,
            target_error: 1e-5,
            ..Default::default()
        };
        let out = fit_initial(&ps, &target, &rs, &cfg).unwrap();
        assert!(out.loss < 1e-3, "loss {}", out.loss);
        for w in out.trace.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        let again = fit_initial(&ps, &target, &rs, &cfg).unwrap();
        assert_eq!(again.params, out.params);
    }
}
