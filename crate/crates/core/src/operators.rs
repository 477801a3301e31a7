//! Right-hand sides `N(u)` of the supported evolution equations, in separable
//! form, together with their closed-form reference solutions.
//!
//! | problem          | evolved quantity | `N`                                        |
//! |------------------|------------------|--------------------------------------------|
//! | transport        | `u`              | `-c sum_k d_k u`                           |
//! | heat             | `u`              | `nu sum_k d_kk u`                          |
//! | KdV-type         | `u`              | `-c sum_k d_kkk u + f(x, t)`               |
//! | Navier-Stokes 2D | `w = -lap psi`   | `nu lap w - (psi_y w_x - psi_x w_y)`       |
//!
//! For Navier-Stokes the network represents the streamfunction `psi`; the
//! Galerkin projection is posed on the vorticity, which avoids the pressure.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // inherent float math is std-only on older toolchains
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::quadrature::QuadratureRule1D;
use crate::separable::SeparableField;
use crate::tnn::{FactorTable, InputMap};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PdeKind {
    Transport { c: f64 },
    Heat { nu: f64 },
    Kdv { c: f64 },
    NavierStokes { nu: f64, u0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Boundary {
    Periodic,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PdeProblem {
    pub kind: PdeKind,
    pub dim: usize,
    pub domain: (f64, f64),
    pub boundary: Boundary,
}

/// A linear combination of tensor-product derivative operators,
/// `L = sum_t coeff_t prod_i d^{orders_t[i]}_i`, applied to the ansatz to obtain
/// the quantity whose time derivative is projected.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub terms: Vec<(f64, Vec<usize>)>,
}

impl Observable {
    pub fn identity(dim: usize) -> Self {
        Self {
            terms: vec![(1.0, vec![0; dim])],
        }
    }

    pub fn neg_laplacian(dim: usize) -> Self {
        let terms = (0..dim)
            .map(|k| {
                let mut o = vec![0; dim];
                o[k] = 2;
                (-1.0, o)
            })
            .collect();
        Self { terms }
    }

    pub fn max_order(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|(_, o)| o.iter().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn apply(&self, factors: &FactorTable) -> Result<SeparableField> {
        let mut out = SeparableField::zero((0..factors.dim()).map(|i| factors.nodes(i)).collect());
        for (c, orders) in &self.terms {
            out = out.add(&SeparableField::from_factors(factors, orders, *c)?)?;
        }
        Ok(out)
    }
}

fn unit_orders(dim: usize, k: usize, m: usize) -> Vec<usize> {
    let mut o = vec![0; dim];
    o[k] = m;
    o
}

impl PdeProblem {
    /// `u_t + c sum_i u_{x_i} = 0` on `[-1, 1]^d`, periodic.
    pub fn transport(dim: usize, c: f64) -> Self {
        Self {
            kind: PdeKind::Transport { c },
            dim,
            domain: (-1.0, 1.0),
            boundary: Boundary::Periodic,
        }
    }

    /// `u_t = nu lap u` on `[-1, 1]^d`, homogeneous Dirichlet.
    pub fn heat(dim: usize, nu: f64) -> Self {
        Self {
            kind: PdeKind::Heat { nu },
            dim,
            domain: (-1.0, 1.0),
            boundary: Boundary::Dirichlet,
        }
    }

    /// `u_t + c sum_i u_{x_i x_i x_i} = f` on `[-1, 1]^d`, periodic.
    pub fn kdv(dim: usize, c: f64) -> Self {
        Self {
            kind: PdeKind::Kdv { c },
            dim,
            domain: (-1.0, 1.0),
            boundary: Boundary::Periodic,
        }
    }

    /// Taylor-Green vortex on `[-pi, pi]^2`, periodic.
    pub fn navier_stokes(nu: f64, u0: f64) -> Self {
        Self {
            kind: PdeKind::NavierStokes { nu, u0 },
            dim: 2,
            domain: (-PI, PI),
            boundary: Boundary::Periodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return invalid("dimension must be positive");
        }
        if !(self.domain.0 < self.domain.1) {
            return invalid("domain requires lo < hi");
        }
        match (self.kind, self.boundary) {
            (PdeKind::Transport { .. }, Boundary::Periodic)
            | (PdeKind::Kdv { .. }, Boundary::Periodic)
            | (PdeKind::Heat { .. }, Boundary::Dirichlet) => Ok(()),
            (PdeKind::NavierStokes { .. }, Boundary::Periodic) if self.dim == 2 => Ok(()),
            _ => invalid("unsupported problem/boundary/dimension combination"),
        }
    }

    /// The input map that enforces this problem's boundary condition.
    pub fn natural_input_map(&self) -> InputMap {
        match self.boundary {
            Boundary::Dirichlet => InputMap::DirichletEnvelope,
            Boundary::Periodic => InputMap::PeriodicEmbedding {
                a: 1.0,
                b: 2.0 * PI / (self.domain.1 - self.domain.0),
            },
        }
    }

    /// Highest x-derivative of the factors that `apply_operator` reads.
    pub fn operator_order(&self) -> usize {
        match self.kind {
            PdeKind::Transport { .. } => 1,
            PdeKind::Heat { .. } => 2,
            PdeKind::Kdv { .. } => 3,
            PdeKind::NavierStokes { .. } => 4,
        }
    }

    pub fn observable(&self) -> Observable {
        match self.kind {
            PdeKind::NavierStokes { .. } => Observable::neg_laplacian(self.dim),
            _ => Observable::identity(self.dim),
        }
    }

    /// `N(u)` at time `t` as a separable field on the factor table's nodes.
    pub fn apply_operator(&self, factors: &FactorTable, t: f64) -> Result<SeparableField> {
        if factors.max_order() < self.operator_order() {
            return invalid("factor table lacks the derivative order the operator needs");
        }
        if factors.dim() != self.dim {
            return invalid("factor table dimension does not match problem");
        }
        let d = self.dim;
        let mut out = SeparableField::zero((0..d).map(|i| factors.nodes(i)).collect());
        match self.kind {
            PdeKind::Transport { c } => {
                for k in 0..d {
                    out = out.add(&SeparableField::from_factors(
                        factors,
                        &unit_orders(d, k, 1),
                        -c,
                    )?)?;
                }
            }
            PdeKind::Heat { nu } => {
                for k in 0..d {
                    out = out.add(&SeparableField::from_factors(
                        factors,
                        &unit_orders(d, k, 2),
                        nu,
                    )?)?;
                }
            }
            PdeKind::Kdv { c } => {
                for k in 0..d {
                    out = out.add(&SeparableField::from_factors(
                        factors,
                        &unit_orders(d, k, 3),
                        -c,
                    )?)?;
                }
                out = out.add(&self.source_field(factors.rules(), t)?)?;
            }
            PdeKind::NavierStokes { nu, .. } => {
                let f = |o: [usize; 2], c: f64| SeparableField::from_factors(factors, &o, c);
                // nu lap w = -nu (psi_xxxx + 2 psi_xxyy + psi_yyyy)
                out = out
                    .add(&f([4, 0], -nu)?)?
                    .add(&f([2, 2], -2.0 * nu)?)?
                    .add(&f([0, 4], -nu)?)?;
                let psi_x = f([1, 0], 1.0)?;
                let psi_y = f([0, 1], 1.0)?;
                let w_x = f([3, 0], -1.0)?.add(&f([1, 2], -1.0)?)?;
                let w_y = f([2, 1], -1.0)?.add(&f([0, 3], -1.0)?)?;
                out = out
                    .add(&psi_y.product(&w_x)?.scaled(-1.0))?
                    .add(&psi_x.product(&w_y)?)?;
            }
        }
        Ok(out)
    }

    /// Closed-form solution at time `t` (for Navier-Stokes, the streamfunction).
    pub fn analytic_solution(&self, rules: &[QuadratureRule1D], t: f64) -> Result<SeparableField> {
        if rules.len() != self.dim {
            return invalid("one quadrature rule per dimension required");
        }
        let d = self.dim as f64;
        Ok(match self.kind {
            PdeKind::Transport { c } => {
                SeparableField::rank_one(rules, 1.0, |_, x| (PI * (x - c * t)).sin())
            }
            PdeKind::Heat { nu } => {
                SeparableField::rank_one(rules, (-nu * PI * PI * d * t).exp(), |_, x| {
                    (PI * x).sin()
                })
            }
            PdeKind::Kdv { .. } => {
                SeparableField::rank_one(rules, (-t).exp(), |_, x| (PI * x).sin())
            }
            PdeKind::NavierStokes { nu, u0 } => {
                // u = psi_y = u0 cos x sin y e^{-2 nu t}, v = -psi_x = -u0 sin x cos y e^{-2 nu t}
                SeparableField::rank_one(rules, -u0 * (-2.0 * nu * t).exp(), |_, x| x.cos())
            }
        })
    }

    pub fn initial_condition(&self, rules: &[QuadratureRule1D]) -> Result<SeparableField> {
        self.analytic_solution(rules, 0.0)
    }

    /// Source term of the KdV-type problem,
    /// `f = -(prod_i s_i + c pi^3 sum_i cos(pi x_i) prod_{j != i} s_j) e^{-t}`
    /// with `s_i = sin(pi x_i)`. Rank `d + 1`.
    pub fn source_field(&self, rules: &[QuadratureRule1D], t: f64) -> Result<SeparableField> {
        let PdeKind::Kdv { c } = self.kind else {
            return invalid("source term is defined for the KdV-type problem only");
        };
        if rules.len() != self.dim {
            return invalid("one quadrature rule per dimension required");
        }
        let decay = (-t).exp();
        let sines: Vec<Vec<f64>> = rules
            .iter()
            .map(|r| r.nodes().iter().map(|&x| (PI * x).sin()).collect())
            .collect();
        let mut f = SeparableField::for_rules(rules);
        f.push_term(-decay, sines.clone())?;
        let dispersion = c * PI * PI * PI;
        for i in 0..self.dim {
            let mut factors = sines.clone();
            factors[i] = rules[i].nodes().iter().map(|&x| (PI * x).cos()).collect();
            f.push_term(-dispersion * decay, factors)?;
        }
        Ok(f)
    }

    /// Rank-one factor table of the closed-form solution at time `t`, with
    /// exact derivatives up to `max_order`. The amplitude sits on dimension 0.
    pub fn closed_form_factors(
        &self,
        rules: &[QuadratureRule1D],
        t: f64,
        max_order: usize,
    ) -> Result<FactorTable> {
        if rules.len() != self.dim {
            return invalid("one quadrature rule per dimension required");
        }
        // every factor is amp * sin(freq * x + phase)
        let d = self.dim as f64;
        let (amp, freq, phase) = match self.kind {
            PdeKind::Transport { c } => (1.0, PI, -PI * c * t),
            PdeKind::Heat { nu } => ((-nu * PI * PI * d * t).exp(), PI, 0.0),
            PdeKind::Kdv { .. } => ((-t).exp(), PI, 0.0),
            PdeKind::NavierStokes { nu, u0 } => (-u0 * (-2.0 * nu * t).exp(), 1.0, PI / 2.0),
        };
        let values: Vec<Vec<Vec<Vec<f64>>>> = rules
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let a = if i == 0 { amp } else { 1.0 };
                let orders = (0..=max_order)
                    .map(|m| {
                        let s = a * freq.powi(m as i32);
                        let shift = phase + m as f64 * PI / 2.0;
                        r.nodes()
                            .iter()
                            .map(|&x| s * (freq * x + shift).sin())
                            .collect()
                    })
                    .collect();
                vec![orders]
            })
            .collect();
        FactorTable::from_values(rules.to_vec(), max_order, &values)
    }

    /// `d/dt` of the observable of the closed-form solution, from its known
    /// time dependence, given that solution's factor table.
    pub fn closed_form_rate(&self, table: &FactorTable) -> Result<SeparableField> {
        let d = self.dim;
        let obs = self.observable().apply(table)?;
        Ok(match self.kind {
            PdeKind::Transport { c } => {
                let mut out = SeparableField::zero((0..d).map(|i| table.nodes(i)).collect());
                for k in 0..d {
                    out = out.add(&SeparableField::from_factors(
                        table,
                        &unit_orders(d, k, 1),
                        -c,
                    )?)?;
                }
                out
            }
            PdeKind::Heat { nu } => obs.scaled(-nu * PI * PI * d as f64),
            PdeKind::Kdv { .. } => obs.scaled(-1.0),
            PdeKind::NavierStokes { nu, .. } => obs.scaled(-2.0 * nu),
        })
    }

    /// `d/dt L(u) - N(u)` for the closed-form solution on the tensor grid;
    /// zero up to rounding when the closed form, source and operator agree.
    pub fn closed_form_residual(
        &self,
        rules: &[QuadratureRule1D],
        t: f64,
    ) -> Result<SeparableField> {
        let table = self.closed_form_factors(rules, t, self.operator_order())?;
        let rate = self.closed_form_rate(&table)?;
        rate.add(&self.apply_operator(&table, t)?.scaled(-1.0))
    }
}

/// Taylor-Green velocity `(u, v)` at `(x, y, t)`.
pub fn taylor_green_velocity(nu: f64, u0: f64, x: f64, y: f64, t: f64) -> (f64, f64) {
    let e = (-2.0 * nu * t).exp();
    (u0 * x.cos() * y.sin() * e, -u0 * x.sin() * y.cos() * e)
}
