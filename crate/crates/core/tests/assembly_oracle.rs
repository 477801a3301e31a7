//! Factorized Gram and right-hand-side assembly against a brute-force sum over
//! the full two-dimensional tensor grid.

use nalgebra::DMatrix;
use tnn_core::galerkin::{assemble_gram, assemble_rhs};
use tnn_core::operators::Observable;
use tnn_core::partition::MaskSource;
use tnn_core::*;

struct Case {
    params: TnnParams,
    mask: ParamMask,
    rules: Vec<QuadratureRule1D>,
    problem: PdeProblem,
}

fn case(problem: PdeProblem, seed: u64) -> Case {
    let (lo, hi) = problem.domain;
    let rule = composite_rule(&gauss_legendre(5).unwrap(), 2, (lo, hi)).unwrap();
    let rules = vec![rule; 2];
    let arch =
        TnnArchitecture::new(2, 3, vec![6, 5], problem.natural_input_map(), (lo, hi)).unwrap();
    let params = init_network(&arch, seed).unwrap();
    let strategy = PartitionStrategy {
        kind: PartitionKind::Fixed,
        selection: Selection::Count(6),
        seed: seed + 100,
    };
    let mask = Partitioner::new(strategy).next_mask(&arch).unwrap();
    assert_eq!(mask.count(), 12);
    Case {
        params,
        mask,
        rules,
        problem,
    }
}

/// `L du/dw_r` at grid node `(q0, q1)` for every selected row, summed pointwise.
fn pointwise_derivs(c: &Case, obs: &Observable, q: [usize; 2]) -> Vec<f64> {
    let factors = eval_factors(&c.params, &c.rules, 4).unwrap();
    let jac = factor_param_jacobian(&c.params, &c.mask, &c.rules, 2).unwrap();
    let p = factors.rank();
    let mut out = Vec::new();
    for k in 0..2 {
        let other = 1 - k;
        for r in 0..jac.rows(k) {
            let mut v = 0.0;
            for (coef, orders) in &obs.terms {
                for j in 0..p {
                    v += coef
                        * jac.get(k, r, j, q[k], orders[k])
                        * factors.get(other, j, q[other], orders[other]);
                }
            }
            out.push(v);
        }
    }
    out
}

fn brute_force(c: &Case, obs: &Observable, field: &SeparableField) -> (DMatrix<f64>, Vec<f64>) {
    let n = c.mask.count();
    let mut m = DMatrix::zeros(n, n);
    let mut b = vec![0.0; n];
    let (r0, r1) = (&c.rules[0], &c.rules[1]);
    for q0 in 0..r0.len() {
        for q1 in 0..r1.len() {
            let w = r0.weights()[q0] * r1.weights()[q1];
            let d = pointwise_derivs(c, obs, [q0, q1]);
            let f = field.eval_at(&[q0, q1]);
            for i in 0..n {
                b[i] += w * d[i] * f;
                for j in 0..n {
                    m[(i, j)] += w * d[i] * d[j];
                }
            }
        }
    }
    (m, b)
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * b.abs().max(1e-6 * scale)
}

fn check(problem: PdeProblem) {
    for seed in 0..5 {
        let c = case(problem.clone(), seed);
        let obs = c.problem.observable();
        let factors = eval_factors(&c.params, &c.rules, c.problem.operator_order()).unwrap();
        let jac = factor_param_jacobian(&c.params, &c.mask, &c.rules, obs.max_order()).unwrap();
        let field = c.problem.apply_operator(&factors, 0.3).unwrap();
        let fast_m = assemble_gram(&factors, &jac, &obs).unwrap();
        let fast_b = assemble_rhs(&factors, &jac, &field, &obs).unwrap();
        let (m, b) = brute_force(&c, &obs, &field);
        let ms = m.amax();
        for (x, y) in fast_m.iter().zip(m.iter()) {
            assert!(
                close(*x, *y, ms),
                "{problem:?} seed {seed}: gram {x} vs {y}"
            );
        }
        let bs = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (x, y) in fast_b.iter().zip(&b) {
            assert!(close(*x, *y, bs), "{problem:?} seed {seed}: rhs {x} vs {y}");
        }
        for i in 0..fast_m.nrows() {
            for j in 0..i {
                assert_eq!(fast_m[(i, j)], fast_m[(j, i)]);
            }
        }
    }
}

#[test]
fn transport_assembly_matches_grid_sum() {
    check(PdeProblem::transport(2, 1.0));
}

#[test]
fn heat_assembly_matches_grid_sum() {
    check(PdeProblem::heat(2, 0.5));
}

#[test]
fn kdv_assembly_matches_grid_sum() {
    check(PdeProblem::kdv(2, 1.0));
}

#[test]
fn vorticity_assembly_matches_grid_sum() {
    check(PdeProblem::navier_stokes(1.0, 1.0));
}
