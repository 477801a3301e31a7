//! Galerkin projection of the dynamics onto the selected parameters and the
//! explicit time integrators that consume it.
//!
//! With `L` the observable (identity, or `-lap` for the vorticity form), the
//! velocity `gamma` minimizes `J = 1/2 || L(du/dtheta) gamma - N(u) ||^2`, whose
//! normal equations are `M gamma = b`. Both `M` and `b` are integrals of sums of
//! separable products and are assembled from one-dimensional quadratures only.
//!
//! Per dimension `k`, the parameter derivative rows live in a space of dimension
//! at most `p * Q * (m + 1)` (one value per factor, node and x-derivative order).
//! When a sub-network has more selected parameters than that, its rows are
//! replaced by the `R` factor of a thin QR, the reduced system is solved, and the
//! velocity is mapped back through `Q`. This leaves the minimum-norm truncated
//! solution unchanged while shrinking the dense solve.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::jacobian::{factor_param_jacobian, JacobianTable};
use crate::linalg::{solve_lstsq, thin_qr, SolveDiagnostics};
use crate::operators::{Observable, PdeProblem};
use crate::partition::MaskSource;
use crate::quadrature::QuadratureRule1D;
use crate::separable::SeparableField;
use crate::tnn::{eval_factors, flatten, unflatten_add, FactorTable, ParamMask, TnnParams};

/// Default relative cutoff for singular values in the velocity solve.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Normal equations of one projection.
#[derive(Debug, Clone)]
pub struct GramSystem {
    pub gram: DMatrix<f64>,
    pub rhs: Vec<f64>,
    /// `||N(u)||^2`, so that `2J(gamma) = g'Mg - 2g'b + target_sq`
    pub target_sq: f64,
}

impl GramSystem {
    pub fn residual_sq(&self, gamma: &[f64]) -> f64 {
        let n = self.rhs.len();
        let mut quad = 0.0;
        for r in 0..n {
            let mut row = 0.0;
            for s in 0..n {
                row += self.gram[(r, s)] * gamma[s];
            }
            quad += gamma[r] * (row - 2.0 * self.rhs[r]);
        }
        quad + self.target_sq
    }
}

/// Observable applied to the factors, flattened over the combined index
/// `alpha = t * p + j` (term `t`, rank component `j`).
struct Structure {
    coef: Vec<f64>,
    /// `orders[alpha][i]`
    orders: Vec<Vec<usize>>,
    /// per dimension, `P' x Q`: `F[alpha][q]`
    f: Vec<DMatrix<f64>>,
    /// the same, scaled by the quadrature weights
    fw: Vec<DMatrix<f64>>,
}

impl Structure {
    fn new(factors: &FactorTable, obs: &Observable) -> Result<Self> {
        let d = factors.dim();
        let p = factors.rank();
        if obs.terms.is_empty() {
            return invalid("observable has no terms");
        }
        if obs.terms.iter().any(|(_, o)| o.len() != d) {
            return invalid("observable dimension does not match factors");
        }
        if obs.max_order() > factors.max_order() {
            return invalid("factor table lacks the observable's derivative order");
        }
        let mut coef = Vec::new();
        let mut orders = Vec::new();
        for (c, o) in &obs.terms {
            for _ in 0..p {
                coef.push(*c);
                orders.push(o.clone());
            }
        }
        let pp = coef.len();
        let mut f = Vec::with_capacity(d);
        let mut fw = Vec::with_capacity(d);
        for i in 0..d {
            let nq = factors.nodes(i);
            let w = factors.rules()[i].weights();
            let m = DMatrix::from_fn(pp, nq, |a, q| factors.get(i, a % p, q, orders[a][i]));
            let mut mw = m.clone();
            for q in 0..nq {
                mw.column_mut(q).scale_mut(w[q]);
            }
            f.push(m);
            fw.push(mw);
        }
        Ok(Self {
            coef,
            orders,
            f,
            fw,
        })
    }

    fn width(&self) -> usize {
        self.coef.len()
    }

    fn dim(&self) -> usize {
        self.f.len()
    }

    /// `n_k x (P' Q)` matrix of `L`-consistent parameter derivatives.
    fn jac_block(&self, jac: &JacobianTable, k: usize) -> DMatrix<f64> {
        let pp = self.width();
        let p = jac.rank();
        let nq = jac.nodes(k);
        DMatrix::from_fn(jac.rows(k), pp * nq, |r, c| {
            let (a, q) = (c / nq, c % nq);
            jac.get(k, r, a % p, q, self.orders[a][k])
        })
    }
}

fn check_jac(factors: &FactorTable, jac: &JacobianTable, obs: &Observable) -> Result<()> {
    if jac.dim() != factors.dim() || jac.rank() != factors.rank() {
        return invalid("jacobian table does not match factor table");
    }
    if (0..jac.dim()).any(|k| jac.nodes(k) != factors.nodes(k)) {
        return invalid("jacobian table uses different nodes");
    }
    if obs.max_order() > jac.max_order() {
        return invalid("jacobian table lacks the observable's derivative order");
    }
    Ok(())
}

fn offsets(jac: &JacobianTable) -> Vec<usize> {
    let mut off = Vec::with_capacity(jac.dim() + 1);
    let mut acc = 0;
    off.push(0);
    for k in 0..jac.dim() {
        acc += jac.rows(k);
        off.push(acc);
    }
    off
}

/// `coef_a coef_b prod_{m not in skip} A_m[a, b]`.
fn pair_weights(s: &Structure, grams: &[DMatrix<f64>], skip: (usize, usize)) -> DMatrix<f64> {
    let pp = s.width();
    let mut out = DMatrix::from_fn(pp, pp, |a, b| s.coef[a] * s.coef[b]);
    for (m, g) in grams.iter().enumerate() {
        if m != skip.0 && m != skip.1 {
            out.component_mul_assign(g);
        }
    }
    out
}

/// Factorized Gram matrix `M = int (L du/dw_r)(L du/dw_s) dx` over the rows of
/// `jac`, ordered dimension by dimension.
pub fn assemble_gram(
    factors: &FactorTable,
    jac: &JacobianTable,
    obs: &Observable,
) -> Result<DMatrix<f64>> {
    check_jac(factors, jac, obs)?;
    let s = Structure::new(factors, obs)?;
    let d = s.dim();
    let pp = s.width();
    let off = offsets(jac);
    let n = off[d];
    let grams: Vec<DMatrix<f64>> = (0..d).map(|m| &s.f[m] * s.fw[m].transpose()).collect();
    let blocks: Vec<DMatrix<f64>> = (0..d).map(|k| s.jac_block(jac, k)).collect();
    // X_k[r, a P' + b] = int G_r[a] F_k[b]
    let xs: Vec<DMatrix<f64>> = (0..d)
        .map(|k| {
            let nq = jac.nodes(k);
            let nk = jac.rows(k);
            let fwt = s.fw[k].transpose();
            let mut x = DMatrix::zeros(nk, pp * pp);
            for a in 0..pp {
                let prod = blocks[k].columns(a * nq, nq) * &fwt;
                x.columns_mut(a * pp, pp).copy_from(&prod);
            }
            x
        })
        .collect();

    let mut m = DMatrix::zeros(n, n);
    for k in 0..d {
        let nk = jac.rows(k);
        if nk == 0 {
            continue;
        }
        let nq = jac.nodes(k);
        let w = factors.rules()[k].weights();
        let pk = pair_weights(&s, &grams, (k, k));
        let g = &blocks[k];
        let mut gt = DMatrix::zeros(nk, pp * nq);
        for b in 0..pp {
            let mut col = gt.columns_mut(b * nq, nq);
            for a in 0..pp {
                let c = pk[(a, b)];
                if c != 0.0 {
                    col += g.columns(a * nq, nq) * c;
                }
            }
            for q in 0..nq {
                col.column_mut(q).scale_mut(w[q]);
            }
        }
        let diag = &gt * g.transpose();
        let mut blk = m.view_mut((off[k], off[k]), (nk, nk));
        for r in 0..nk {
            for c in 0..nk {
                blk[(r, c)] = 0.5 * (diag[(r, c)] + diag[(c, r)]);
            }
        }
        for l in k + 1..d {
            let nl = jac.rows(l);
            if nl == 0 {
                continue;
            }
            let pkl = pair_weights(&s, &grams, (k, l));
            let mut xt = xs[k].clone();
            for r in 0..nk {
                for a in 0..pp {
                    for b in 0..pp {
                        xt[(r, a * pp + b)] *= pkl[(a, b)];
                    }
                }
            }
            let z = DMatrix::from_fn(nl, pp * pp, |r, c| xs[l][(r, (c % pp) * pp + c / pp)]);
            let cross = xt * z.transpose();
            m.view_mut((off[k], off[l]), (nk, nl)).copy_from(&cross);
            m.view_mut((off[l], off[k]), (nl, nk))
                .copy_from(&cross.transpose());
        }
    }
    Ok(m)
}

/// Factorized right-hand side `b_r = int (L du/dw_r) N dx` for a separable `N`.
pub fn assemble_rhs(
    factors: &FactorTable,
    jac: &JacobianTable,
    field: &SeparableField,
    obs: &Observable,
) -> Result<Vec<f64>> {
    check_jac(factors, jac, obs)?;
    if field.dim() != factors.dim()
        || (0..factors.dim()).any(|i| field.node_counts()[i] != factors.nodes(i))
    {
        return invalid("field lives on different nodes than the factors");
    }
    let s = Structure::new(factors, obs)?;
    let d = s.dim();
    let pp = s.width();
    let off = offsets(jac);
    let mut b = vec![0.0; off[d]];
    let rank = field.rank();
    if rank == 0 {
        return Ok(b);
    }
    let vs: Vec<DMatrix<f64>> = (0..d)
        .map(|i| {
            DMatrix::from_fn(rank, factors.nodes(i), |t, q| {
                field.terms()[t].factors[i][q]
            })
        })
        .collect();
    let rs: Vec<DMatrix<f64>> = (0..d).map(|i| &s.fw[i] * vs[i].transpose()).collect();
    for k in 0..d {
        let nk = jac.rows(k);
        if nk == 0 {
            continue;
        }
        let mut h = DMatrix::from_fn(pp, rank, |a, t| s.coef[a] * field.terms()[t].coeff);
        for (m, r) in rs.iter().enumerate() {
            if m != k {
                h.component_mul_assign(r);
            }
        }
        let mut y = h * &vs[k];
        let w = factors.rules()[k].weights();
        for q in 0..y.ncols() {
            y.column_mut(q).scale_mut(w[q]);
        }
        let nq = factors.nodes(k);
        let yv = nalgebra::DVector::from_fn(pp * nq, |c, _| y[(c / nq, c % nq)]);
        let g = s.jac_block(jac, k);
        let bk = g * yv;
        b[off[k]..off[k] + nk].copy_from_slice(bk.as_slice());
    }
    Ok(b)
}

/// `L (du/dtheta) gamma` as a separable field of rank `d * P'`.
pub fn tangent_field(
    factors: &FactorTable,
    jac: &JacobianTable,
    obs: &Observable,
    gamma: &[f64],
) -> Result<SeparableField> {
    check_jac(factors, jac, obs)?;
    let off = offsets(jac);
    if gamma.len() != off[jac.dim()] {
        return invalid("velocity length does not match jacobian rows");
    }
    let s = Structure::new(factors, obs)?;
    let pp = s.width();
    let mut out = SeparableField::zero((0..s.dim()).map(|i| factors.nodes(i)).collect());
    for k in 0..s.dim() {
        if jac.rows(k) == 0 {
            continue;
        }
        let nq = jac.nodes(k);
        let g = s.jac_block(jac, k);
        let gk = nalgebra::DVector::from_column_slice(&gamma[off[k]..off[k + 1]]);
        let dir = g.transpose() * gk;
        for a in 0..pp {
            let factors_a = (0..s.dim())
                .map(|i| {
                    if i == k {
                        dir.as_slice()[a * nq..(a + 1) * nq].to_vec()
                    } else {
                        s.f[i].row(a).iter().copied().collect()
                    }
                })
                .collect();
            out.push_term(s.coef[a], factors_a)?;
        }
    }
    Ok(out)
}

/// Replaces each dimension's rows by the triangular factor of a thin QR when
/// that shrinks them. Returns the reduced table and the orthonormal bases.
pub fn compress_jacobian(
    jac: &JacobianTable,
) -> Result<(JacobianTable, Vec<Option<DMatrix<f64>>>)> {
    let d = jac.dim();
    let mut rows = Vec::with_capacity(d);
    let mut data = Vec::with_capacity(d);
    let mut bases = Vec::with_capacity(d);
    for k in 0..d {
        let nk = jac.rows(k);
        let len = jac.row_len(k);
        if nk <= len {
            rows.push(nk);
            data.push(jac.dim_data(k).to_vec());
            bases.push(None);
            continue;
        }
        let a = DMatrix::from_row_slice(nk, len, jac.dim_data(k));
        let (q, r) = thin_qr(a);
        let mut flat = Vec::with_capacity(len * len);
        for i in 0..len {
            flat.extend(r.row(i).iter());
        }
        rows.push(len);
        data.push(flat);
        bases.push(Some(q));
    }
    let node_counts = (0..d).map(|k| jac.nodes(k)).collect();
    let table = JacobianTable::from_rows(jac.max_order(), jac.rank(), node_counts, rows, data)?;
    Ok((table, bases))
}

fn expand(bases: &[Option<DMatrix<f64>>], reduced: &JacobianTable, y: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut at = 0;
    for (k, basis) in bases.iter().enumerate() {
        let n = reduced.rows(k);
        let part = &y[at..at + n];
        match basis {
            None => out.extend_from_slice(part),
            Some(q) => {
                let v = q * nalgebra::DVector::from_column_slice(part);
                out.extend(v.iter());
            }
        }
        at += n;
    }
    out
}

/// Diagnostics of one velocity evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageReport {
    /// `sqrt(2 J(gamma))`, the L2 norm of the projection residual
    pub residual: f64,
    pub solve: SolveDiagnostics,
    pub gamma_norm: f64,
}

/// A map from parameters to a parameter velocity over the selected entries.
pub trait VelocityField {
    fn velocity(
        &mut self,
        params: &TnnParams,
        mask: &ParamMask,
        t: f64,
    ) -> Result<(Vec<f64>, StageReport)>;
}

/// Adapts a closure into a [`VelocityField`].
pub struct FnVelocity<F>(pub F);

impl<F> VelocityField for FnVelocity<F>
where
    F: FnMut(&TnnParams, &ParamMask, f64) -> Result<Vec<f64>>,
{
    fn velocity(
        &mut self,
        params: &TnnParams,
        mask: &ParamMask,
        t: f64,
    ) -> Result<(Vec<f64>, StageReport)> {
        let g = (self.0)(params, mask, t)?;
        let gamma_norm = Float::sqrt(g.iter().map(|v| v * v).sum::<f64>());
        Ok((
            g,
            StageReport {
                gamma_norm,
                ..Default::default()
            },
        ))
    }
}

/// The least-squares velocity of a PDE problem.
#[derive(Debug, Clone)]
pub struct GalerkinRhs {
    pub problem: PdeProblem,
    pub rules: Vec<QuadratureRule1D>,
    pub rcond: f64,
    /// solve in the QR-reduced coordinates (same result, cheaper)
    pub compress: bool,
}

impl GalerkinRhs {
    pub fn new(problem: PdeProblem, rules: Vec<QuadratureRule1D>) -> Result<Self> {
        problem.validate()?;
        if rules.len() != problem.dim {
            return invalid("one quadrature rule per dimension required");
        }
        Ok(Self {
            problem,
            rules,
            rcond: DEFAULT_RCOND,
            compress: true,
        })
    }

    fn tables(&self, params: &TnnParams, mask: &ParamMask) -> Result<(FactorTable, JacobianTable)> {
        let factors = eval_factors(params, &self.rules, self.problem.operator_order())?;
        let obs = self.problem.observable();
        let jac = factor_param_jacobian(params, mask, &self.rules, obs.max_order())?;
        Ok((factors, jac))
    }

    /// Uncompressed normal equations over the selected parameters.
    pub fn system(&self, params: &TnnParams, mask: &ParamMask, t: f64) -> Result<GramSystem> {
        let (factors, jac) = self.tables(params, mask)?;
        let obs = self.problem.observable();
        let field = self.problem.apply_operator(&factors, t)?;
        Ok(GramSystem {
            gram: assemble_gram(&factors, &jac, &obs)?,
            rhs: assemble_rhs(&factors, &jac, &field, &obs)?,
            target_sq: field.inner(&field, &self.rules)?,
        })
    }
}

impl VelocityField for GalerkinRhs {
    fn velocity(
        &mut self,
        params: &TnnParams,
        mask: &ParamMask,
        t: f64,
    ) -> Result<(Vec<f64>, StageReport)> {
        let (factors, jac) = self.tables(params, mask)?;
        let obs = self.problem.observable();
        let field = self.problem.apply_operator(&factors, t)?;
        let (work, bases) = if self.compress {
            let (j, b) = compress_jacobian(&jac)?;
            (j, Some(b))
        } else {
            (jac, None)
        };
        let sys = GramSystem {
            gram: assemble_gram(&factors, &work, &obs)?,
            rhs: assemble_rhs(&factors, &work, &field, &obs)?,
            target_sq: field.inner(&field, &self.rules)?,
        };
        let (y, solve) = solve_lstsq(&sys.gram, &sys.rhs, self.rcond)?;
        let residual = Float::sqrt(sys.residual_sq(&y).max(0.0));
        let gamma = match bases {
            Some(b) => expand(&b, &work, &y),
            None => y,
        };
        let gamma_norm = Float::sqrt(gamma.iter().map(|v| v * v).sum::<f64>());
        Ok((
            gamma,
            StageReport {
                residual,
                solve,
                gamma_norm,
            },
        ))
    }
}

/// Parameters, the mask in force, and the time grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub params: TnnParams,
    pub mask: ParamMask,
    pub t0: f64,
    pub step: u64,
    pub t: f64,
}

impl EvolutionState {
    pub fn new(params: TnnParams, mask: ParamMask, t0: f64) -> Self {
        Self {
            params,
            mask,
            t0,
            step: 0,
            t: t0,
        }
    }

    fn next(&self, params: TnnParams, dt: f64) -> Self {
        let step = self.step + 1;
        Self {
            params,
            mask: self.mask.clone(),
            t0: self.t0,
            step,
            t: self.t0 + step as f64 * dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub stages: Vec<StageReport>,
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid("time step must be positive and finite");
    }
    Ok(())
}

fn axpy_params(state: &EvolutionState, coeffs: &[(f64, &[f64])]) -> Result<TnnParams> {
    let n = state.mask.count();
    let mut delta = vec![0.0; n];
    for (c, g) in coeffs {
        if g.len() != n {
            return invalid("velocity length does not match mask");
        }
        for (d, v) in delta.iter_mut().zip(g.iter()) {
            *d += c * v;
        }
    }
    unflatten_add(&state.params, &state.mask, &delta)
}

/// Predictor-corrector step: explicit Euler predictor, trapezoidal corrector.
/// Unselected parameters are copied unchanged.
pub fn step_modified_euler<V: VelocityField + ?Sized>(
    state: &EvolutionState,
    dt: f64,
    rhs: &mut V,
) -> Result<(EvolutionState, StepReport)> {
    check_dt(dt)?;
    let (g1, r1) = rhs.velocity(&state.params, &state.mask, state.t)?;
    let pred = axpy_params(state, &[(dt, &g1)])?;
    let (g2, r2) = rhs.velocity(&pred, &state.mask, state.t + dt)?;
    let params = axpy_params(state, &[(0.5 * dt, &g1), (0.5 * dt, &g2)])?;
    Ok((
        state.next(params, dt),
        StepReport {
            stages: vec![r1, r2],
        },
    ))
}

/// Classical fourth-order Runge-Kutta step with the mask frozen across stages.
pub fn step_rk4<V: VelocityField + ?Sized>(
    state: &EvolutionState,
    dt: f64,
    rhs: &mut V,
) -> Result<(EvolutionState, StepReport)> {
    check_dt(dt)?;
    let t = state.t;
    let (k1, r1) = rhs.velocity(&state.params, &state.mask, t)?;
    let p2 = axpy_params(state, &[(0.5 * dt, &k1)])?;
    let (k2, r2) = rhs.velocity(&p2, &state.mask, t + 0.5 * dt)?;
    let p3 = axpy_params(state, &[(0.5 * dt, &k2)])?;
    let (k3, r3) = rhs.velocity(&p3, &state.mask, t + 0.5 * dt)?;
    let p4 = axpy_params(state, &[(dt, &k3)])?;
    let (k4, r4) = rhs.velocity(&p4, &state.mask, t + dt)?;
    let h = dt / 6.0;
    let params = axpy_params(state, &[(h, &k1), (2.0 * h, &k2), (2.0 * h, &k3), (h, &k4)])?;
    Ok((
        state.next(params, dt),
        StepReport {
            stages: vec![r1, r2, r3, r4],
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Integrator {
    ModifiedEuler,
    Rk4,
}

/// One step of the masked evolution: draw the mask for this step, then
/// integrate with it frozen.
pub fn advance<V: VelocityField + ?Sized>(
    state: &EvolutionState,
    dt: f64,
    integrator: Integrator,
    rhs: &mut V,
    masks: &mut dyn MaskSource,
) -> Result<(EvolutionState, StepReport)> {
    let mut current = state.clone();
    current.mask = masks.next_mask(state.params.arch())?;
    match integrator {
        Integrator::ModifiedEuler => step_modified_euler(&current, dt, rhs),
        Integrator::Rk4 => step_rk4(&current, dt, rhs),
    }
}

/// Selected parameter values, in velocity order.
pub fn selected_values(state: &EvolutionState) -> Result<Vec<f64>> {
    flatten(&state.params, &state.mask)
}
