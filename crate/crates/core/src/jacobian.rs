//! Parameter derivatives of the per-dimension factors.
//!
//! For a selected parameter `w` of sub-network `k` the derivative of the ansatz is
//! `du/dw = sum_j (d u_kj / dw) prod_{i != k} u_ij`, so all that is needed per
//! dimension is `d(d^m u_kj / dx^m)/dw` at the nodes of that dimension's rule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::jet::{Jet, JET_LEN};
use crate::quadrature::QuadratureRule1D;
use crate::tnn::{ParamMask, Tape, TnnParams};

/// Highest x-derivative order for which parameter derivatives are produced.
pub const MAX_JACOBIAN_ORDER: usize = 2;

/// Rows of parameter derivatives, grouped by dimension.
///
/// Row `r` of dimension `k` holds `d(d^m u_kj/dx^m)(x_q)/dw_r` for all `j`, `q`,
/// `m`, stored `[(j * Q + q) * (max_order + 1) + m]`. Rows normally correspond to
/// selected parameters, but any linear recombination of them (see
/// `galerkin::compress_jacobian`) is an equally valid table.
#[derive(Debug, Clone)]
pub struct JacobianTable {
    max_order: usize,
    rank: usize,
    node_counts: Vec<usize>,
    /// local parameter index per row, when rows are actual parameters
    params: Vec<Vec<usize>>,
    rows: Vec<usize>,
    data: Vec<Vec<f64>>,
}

impl JacobianTable {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self, k: usize) -> usize {
        self.rows[k]
    }

    pub fn total_rows(&self) -> usize {
        self.rows.iter().sum()
    }

    pub fn nodes(&self, k: usize) -> usize {
        self.node_counts[k]
    }

    pub fn row_len(&self, k: usize) -> usize {
        self.rank * self.node_counts[k] * (self.max_order + 1)
    }

    /// Local parameter indices of the rows of dimension `k` (empty for
    /// recombined tables).
    pub fn params(&self, k: usize) -> &[usize] {
        &self.params[k]
    }

    pub fn row(&self, k: usize, r: usize) -> &[f64] {
        let n = self.row_len(k);
        &self.data[k][r * n..(r + 1) * n]
    }

    pub fn dim_data(&self, k: usize) -> &[f64] {
        &self.data[k]
    }

    #[inline]
    pub fn get(&self, k: usize, r: usize, j: usize, q: usize, m: usize) -> f64 {
        let nq = self.node_counts[k];
        self.data[k][r * self.row_len(k) + (j * nq + q) * (self.max_order + 1) + m]
    }

    /// A table whose rows are arbitrary vectors of the right length.
    pub fn from_rows(
        max_order: usize,
        rank: usize,
        node_counts: Vec<usize>,
        rows: Vec<usize>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if node_counts.len() != rows.len() || data.len() != rows.len() {
            return invalid("per-dimension sizes disagree");
        }
        for k in 0..rows.len() {
            if data[k].len() != rows[k] * rank * node_counts[k] * (max_order + 1) {
                return invalid("jacobian data length mismatch");
            }
        }
        Ok(Self {
            max_order,
            rank,
            params: vec![Vec::new(); rows.len()],
            node_counts,
            rows,
            data,
        })
    }

    /// Multiplies every entry of dimension `k` by `s`.
    pub fn scale_dim(&mut self, k: usize, s: f64) {
        for v in self.data[k].iter_mut() {
            *v *= s;
        }
    }
}

/// Parameter derivatives of the factors and of their x-derivatives up to
/// `x_order`, for the parameters selected by `mask`, by reverse accumulation
/// through the forward jets.
pub fn factor_param_jacobian(
    params: &TnnParams,
    mask: &ParamMask,
    rules: &[QuadratureRule1D],
    x_order: usize,
) -> Result<JacobianTable> {
    if x_order > MAX_JACOBIAN_ORDER {
        return Err(Error::UnsupportedOrder {
            requested: x_order,
            max: MAX_JACOBIAN_ORDER,
        });
    }
    let arch = params.arch();
    if rules.len() != arch.dim {
        return invalid("one quadrature rule per dimension required");
    }
    if mask.dim() != arch.dim || mask.selected().len() != params.as_slice().len() {
        return invalid("mask does not match parameters");
    }
    if mask.count() == 0 {
        return invalid("mask selects no parameters");
    }
    let p = arch.rank;
    let k_len = x_order + 1;
    let n_sub = params.per_subnet();
    let mut tape = Tape::new(params.layout());
    let mut grad = vec![0.0; n_sub];
    let mut seed: Vec<Jet> = vec![[0.0; JET_LEN]; p];

    let mut all_params = Vec::with_capacity(arch.dim);
    let mut rows = Vec::with_capacity(arch.dim);
    let mut data = Vec::with_capacity(arch.dim);
    for (k, rule) in rules.iter().enumerate() {
        let local = mask.local_indices(k);
        let nq = rule.len();
        let row_len = p * nq * k_len;
        let mut block = vec![0.0; local.len() * row_len];
        if !local.is_empty() {
            for (q, &x) in rule.nodes().iter().enumerate() {
                tape.forward(params, k, x, x_order);
                for j in 0..p {
                    for m in 0..k_len {
                        seed[j][m] = 1.0;
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        tape.backward(params, k, &seed, m, &mut grad);
                        seed[j][m] = 0.0;
                        let col = (j * nq + q) * k_len + m;
                        for (r, &w) in local.iter().enumerate() {
                            block[r * row_len + col] = grad[w];
                        }
                    }
                }
            }
        }
        rows.push(local.len());
        all_params.push(local);
        data.push(block);
    }
    Ok(JacobianTable {
        max_order: x_order,
        rank: p,
        node_counts: rules.iter().map(|r| r.len()).collect(),
        params: all_params,
        rows,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{composite_rule, gauss_legendre};
    use crate::tnn::{eval_factors, init_network, InputMap, TnnArchitecture};
    use core::f64::consts::PI;

    fn setup(map: InputMap, p: usize) -> (TnnParams, Vec<QuadratureRule1D>) {
        let arch = TnnArchitecture::new(2, p, vec![5, 4], map, (-1.0, 1.0)).unwrap();
        let params = init_network(&arch, 17).unwrap();
        let rule = composite_rule(&gauss_legendre(3).unwrap(), 2, (-1.0, 1.0)).unwrap();
        (params, vec![rule.clone(), rule])
    }

    #[test]
    fn output_weight_derivative_is_hidden_activation() {
        let (params, rules) = setup(InputMap::PeriodicEmbedding { a: 1.0, b: PI }, 3);
        let layout = params.layout().clone();
        let out = *layout.output_slot();
        let j0 = 1;
        let h0 = 2;
        let local = out.weight_offset + j0 * out.cols + h0;
        let n = params.as_slice().len();
        let sel: Vec<bool> = (0..n).map(|g| g == local).collect();
        let mask = ParamMask::from_selected(params.arch(), sel).unwrap();
        let jac = factor_param_jacobian(&params, &mask, &rules, 0).unwrap();
        assert_eq!(jac.rows(0), 1);
        assert_eq!(jac.rows(1), 0);
        let mut tape = Tape::new(&layout);
        for (q, &x) in rules[0].nodes().iter().enumerate() {
            tape.forward(&params, 0, x, 0);
            let hidden = tape.post.last().unwrap()[h0][0];
            for j in 0..3 {
                let want = if j == j0 { hidden } else { 0.0 };
                assert_eq!(jac.get(0, 0, j, q, 0), want);
            }
        }
    }

    #[test]
    fn matches_central_differences_all_orders() {
        for map in [
            InputMap::PeriodicEmbedding { a: 1.0, b: PI },
            InputMap::DirichletEnvelope,
        ] {
            let (params, rules) = setup(map, 2);
            let mask = ParamMask::full(params.arch());
            let jac = factor_param_jacobian(&params, &mask, &rules, 2).unwrap();
            let h = 1e-5;
            let n_sub = params.per_subnet();
            for k in 0..2 {
                for r in (0..n_sub).step_by(7) {
                    let g = k * n_sub + r;
                    let mut plus = params.clone();
                    plus.as_mut_slice()[g] += h;
                    let mut minus = params.clone();
                    minus.as_mut_slice()[g] -= h;
                    let fp = eval_factors(&plus, &rules, 2).unwrap();
                    let fm = eval_factors(&minus, &rules, 2).unwrap();
                    for j in 0..2 {
                        for q in 0..rules[k].len() {
                            for m in 0..=2 {
                                let fd = (fp.get(k, j, q, m) - fm.get(k, j, q, m)) / (2.0 * h);
                                let exact = jac.get(k, r, j, q, m);
                                let scale = exact.abs().max(1e-3);
                                assert!(
                                    (fd - exact).abs() / scale < 1e-6,
                                    "k={k} r={r} j={j} q={q} m={m}: {fd} vs {exact}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn doubling_output_layer_doubles_hidden_derivatives() {
        let (params, rules) = setup(InputMap::Identity, 2);
        let mask = ParamMask::full(params.arch());
        let base = factor_param_jacobian(&params, &mask, &rules, 1).unwrap();
        let mut scaled = params.clone();
        let out = *params.layout().output_slot();
        let block = scaled.subnet_mut(1);
        for v in &mut block[out.weight_offset..out.weight_offset + out.rows * out.cols] {
            *v *= 2.0;
        }
        let jac = factor_param_jacobian(&scaled, &mask, &rules, 1).unwrap();
        for r in 0..out.weight_offset {
            for (a, b) in base.row(1, r).iter().zip(jac.row(1, r)) {
                assert_eq!(2.0 * a, *b);
            }
        }
    }

    #[test]
    fn unsupported_order() {
        let (params, rules) = setup(InputMap::Identity, 1);
        let mask = ParamMask::full(params.arch());
        assert!(matches!(
            factor_param_jacobian(&params, &mask, &rules, 3),
            Err(Error::UnsupportedOrder {
                requested: 3,
                max: 2
            })
        ));
    }
}
