//! Rank-structured fields sampled on per-dimension node sets.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::quadrature::QuadratureRule1D;
use crate::tnn::FactorTable;

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTerm {
    pub coeff: f64,
    /// `factors[i][q]`: value of this term's dimension-`i` factor at node `q`
    pub factors: Vec<Vec<f64>>,
}

/// Tensor grids up to this many points are summed pointwise in `distance`.
const GRID_LIMIT: usize = 1 << 18;

/// `f(x_{q_1}, ..., x_{q_d}) = sum_s coeff_s prod_i v[s][i][q_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableField {
    node_counts: Vec<usize>,
    terms: Vec<SeparableTerm>,
}

impl SeparableField {
    /// The zero field (rank 0).
    pub fn zero(node_counts: Vec<usize>) -> Self {
        Self {
            node_counts,
            terms: Vec::new(),
        }
    }

    pub fn for_rules(rules: &[QuadratureRule1D]) -> Self {
        Self::zero(rules.iter().map(|r| r.len()).collect())
    }

    pub fn dim(&self) -> usize {
        self.node_counts.len()
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    pub fn terms(&self) -> &[SeparableTerm] {
        &self.terms
    }

    pub fn push_term(&mut self, coeff: f64, factors: Vec<Vec<f64>>) -> Result<()> {
        if factors.len() != self.dim() {
            return invalid("term has wrong number of dimensions");
        }
        if factors
            .iter()
            .zip(&self.node_counts)
            .any(|(f, &n)| f.len() != n)
        {
            return invalid("term factor length does not match node count");
        }
        self.terms.push(SeparableTerm { coeff, factors });
        Ok(())
    }

    /// Rank-one field `coeff * prod_i g_i(x_i)` sampled at the rule nodes.
    pub fn rank_one<F: FnMut(usize, f64) -> f64>(
        rules: &[QuadratureRule1D],
        coeff: f64,
        mut g: F,
    ) -> Self {
        let factors = rules
            .iter()
            .enumerate()
            .map(|(i, r)| r.nodes().iter().map(|&x| g(i, x)).collect())
            .collect();
        let mut f = Self::for_rules(rules);
        f.terms.push(SeparableTerm { coeff, factors });
        f
    }

    /// `sum_j prod_i d^{orders[i]} u_ij` from a factor table.
    pub fn from_factors(table: &FactorTable, orders: &[usize], coeff: f64) -> Result<Self> {
        if orders.len() != table.dim() {
            return invalid("one derivative order per dimension required");
        }
        if orders.iter().any(|&m| m > table.max_order()) {
            return invalid("factor table lacks the requested derivative order");
        }
        let mut f = Self::zero((0..table.dim()).map(|i| table.nodes(i)).collect());
        for j in 0..table.rank() {
            let factors = orders
                .iter()
                .enumerate()
                .map(|(i, &m)| table.factor(i, j, m))
                .collect();
            f.terms.push(SeparableTerm { coeff, factors });
        }
        Ok(f)
    }

    pub fn eval_at(&self, idx: &[usize]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coeff
                    * t.factors
                        .iter()
                        .zip(idx)
                        .map(|(f, &q)| f[q])
                        .product::<f64>()
            })
            .sum()
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        for t in &mut self.terms {
            t.coeff *= alpha;
        }
        self
    }

    /// Sum of two fields (terms concatenated).
    pub fn add(mut self, other: &Self) -> Result<Self> {
        if self.node_counts != other.node_counts {
            return invalid("fields live on different node sets");
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(self)
    }

    /// Pointwise product; the rank multiplies.
    pub fn product(&self, other: &Self) -> Result<Self> {
        if self.node_counts != other.node_counts {
            return invalid("fields live on different node sets");
        }
        let mut out = Self::zero(self.node_counts.clone());
        for a in &self.terms {
            for b in &other.terms {
                let factors = a
                    .factors
                    .iter()
                    .zip(&b.factors)
                    .map(|(fa, fb)| fa.iter().zip(fb).map(|(x, y)| x * y).collect())
                    .collect();
                out.terms.push(SeparableTerm {
                    coeff: a.coeff * b.coeff,
                    factors,
                });
            }
        }
        Ok(out)
    }

    fn check_rules(&self, rules: &[QuadratureRule1D]) -> Result<()> {
        if rules.len() != self.dim()
            || rules
                .iter()
                .zip(&self.node_counts)
                .any(|(r, &n)| r.len() != n)
        {
            return invalid("rules do not match the field's node sets");
        }
        Ok(())
    }

    /// `integral f g dx`, factorized over dimensions.
    pub fn inner(&self, other: &Self, rules: &[QuadratureRule1D]) -> Result<f64> {
        self.check_rules(rules)?;
        other.check_rules(rules)?;
        let mut total = 0.0;
        for a in &self.terms {
            for b in &other.terms {
                let mut prod = a.coeff * b.coeff;
                for (i, rule) in rules.iter().enumerate() {
                    let s: f64 = rule
                        .weights()
                        .iter()
                        .zip(&a.factors[i])
                        .zip(&b.factors[i])
                        .map(|((w, x), y)| w * x * y)
                        .sum();
                    prod *= s;
                    if prod == 0.0 {
                        break;
                    }
                }
                total += prod;
            }
        }
        Ok(total)
    }

    pub fn norm(&self, rules: &[QuadratureRule1D]) -> Result<f64> {
        Ok(Float::sqrt(self.inner(self, rules)?.max(0.0)))
    }

    /// Pointwise `||self - other||` over the full tensor grid, free of the
    /// cancellation of the expanded form.
    fn grid_distance(&self, other: &Self, rules: &[QuadratureRule1D]) -> f64 {
        let d = self.dim();
        let mut idx = vec![0usize; d];
        let mut total = 0.0;
        loop {
            let w: f64 = idx
                .iter()
                .zip(rules)
                .map(|(&q, r)| r.weights()[q])
                .product();
            let e = self.eval_at(&idx) - other.eval_at(&idx);
            total += w * e * e;
            let mut k = 0;
            loop {
                if k == d {
                    return Float::sqrt(total);
                }
                idx[k] += 1;
                if idx[k] < self.node_counts[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// `||self - other||`. Small grids are summed pointwise; otherwise the
    /// expanded form is used, with contributions grouped per term so that two
    /// bitwise-identical fields give exactly zero.
    pub fn distance(&self, other: &Self, rules: &[QuadratureRule1D]) -> Result<f64> {
        self.check_rules(rules)?;
        other.check_rules(rules)?;
        let grid = self
            .node_counts
            .iter()
            .try_fold(1usize, |a, &n| a.checked_mul(n));
        if matches!(grid, Some(g) if g <= GRID_LIMIT) {
            return Ok(self.grid_distance(other, rules));
        }
        let pair = |a: &SeparableTerm, b: &SeparableTerm| -> f64 {
            let mut prod = b.coeff;
            for (i, rule) in rules.iter().enumerate() {
                let s: f64 = rule
                    .weights()
                    .iter()
                    .zip(&a.factors[i])
                    .zip(&b.factors[i])
                    .map(|((w, x), y)| w * x * y)
                    .sum();
                prod *= s;
            }
            prod
        };
        let side = |a: &SeparableTerm| -> f64 {
            let mine: f64 = self.terms.iter().map(|b| pair(a, b)).sum();
            let theirs: f64 = other.terms.iter().map(|b| pair(a, b)).sum();
            a.coeff * (mine - theirs)
        };
        let left: f64 = self.terms.iter().map(side).sum();
        let right: f64 = other.terms.iter().map(side).sum();
        Ok(Float::sqrt((left - right).max(0.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{composite_rule, gauss_legendre};
    use core::f64::consts::PI;

    fn rules(d: usize) -> Vec<QuadratureRule1D> {
        let r = composite_rule(&gauss_legendre(8).unwrap(), 4, (-1.0, 1.0)).unwrap();
        vec![r; d]
    }

    #[test]
    fn sine_product_has_unit_norm() {
        for d in [1, 2, 5, 10] {
            let rs = rules(d);
            let f = SeparableField::rank_one(&rs, 1.0, |_, x| (PI * x).sin());
            assert!((f.norm(&rs).unwrap() - 1.0).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn product_closure() {
        let rs = rules(2);
        let mut a = SeparableField::for_rules(&rs);
        a.push_term(1.0, vec![rs[0].nodes().to_vec(), vec![1.0; 32]])
            .unwrap();
        a.push_term(
            -2.0,
            vec![vec![1.0; 32], rs[1].nodes().iter().map(|x| x * x).collect()],
        )
        .unwrap();
        let b = SeparableField::rank_one(&rs, 0.5, |i, x| if i == 0 { x.cos() } else { x + 2.0 });
        let c = a.product(&b).unwrap();
        assert_eq!(c.rank(), a.rank() * b.rank());
        for idx in [[0, 0], [3, 17], [31, 8]] {
            let want = a.eval_at(&idx) * b.eval_at(&idx);
            assert!((c.eval_at(&idx) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_terms_rejected() {
        let rs = rules(2);
        let mut a = SeparableField::for_rules(&rs);
        assert!(a.push_term(1.0, vec![vec![1.0; 32]]).is_err());
        assert!(a
            .push_term(1.0, vec![vec![1.0; 32], vec![1.0; 31]])
            .is_err());
    }

    #[test]
    fn distance_to_self_is_exactly_zero() {
        let rs = rules(4);
        let a = SeparableField::rank_one(&rs, 1.3, |i, x| (x * (i + 1) as f64).sin() + 0.2)
            .add(&SeparableField::rank_one(&rs, -0.4, |_, x| x.cos()))
            .unwrap();
        assert_eq!(a.distance(&a.clone(), &rs).unwrap(), 0.0);
        let b = a.clone().scaled(1.5);
        let want = 0.5 * a.norm(&rs).unwrap();
        assert!((a.distance(&b, &rs).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn grid_distance_resolves_tiny_differences() {
        let rs = rules(2);
        let a = SeparableField::rank_one(&rs, 1.0, |_, x| (PI * x).sin());
        let b = a.clone().scaled(1.0 + 1e-10);
        let got = a.distance(&b, &rs).unwrap();
        assert!((got / 1e-10 - 1.0).abs() < 1e-5, "{got}");
    }

    #[test]
    fn zero_field() {
        let rs = rules(3);
        let z = SeparableField::for_rules(&rs);
        assert_eq!(z.eval_at(&[1, 2, 3]), 0.0);
        assert_eq!(z.norm(&rs).unwrap(), 0.0);
    }
}
