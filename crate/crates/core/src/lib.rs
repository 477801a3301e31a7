//! Tensor neural network ansatz with Galerkin-projected parameter dynamics.
//!
//! A d-variate field is represented as `u(x) = sum_j prod_i u_ij(x_i)`, where each
//! `u_i` is a small feed-forward sub-network with `p` outputs. Because the ansatz is
//! a sum of separable products, every integral over the domain factors into
//! one-dimensional Gauss-Legendre quadratures, which keeps Gram matrices,
//! right-hand sides and L2 norms exact (to quadrature) in dozens of dimensions.
//!
//! Time evolution follows the least-squares parameter velocity
//! `dtheta/dt = argmin_gamma 1/2 ||(du/dtheta) gamma - N(u)||^2`, restricted to a
//! (possibly randomized) subset of the parameters.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod fit;
pub mod galerkin;
pub mod jacobian;
pub mod jet;
pub mod linalg;
pub mod operators;
pub mod partition;
pub mod quadrature;
pub mod separable;
pub mod tnn;

pub use error::{Error, Result};
pub use fit::{fit_initial, l2_error, l2_norm, FitConfig, FitOutcome};
pub use galerkin::{
    assemble_gram, assemble_rhs, step_modified_euler, step_rk4, EvolutionState, GalerkinRhs,
    GramSystem, StageReport, VelocityField,
};
pub use jacobian::{factor_param_jacobian, JacobianTable};
pub use linalg::{solve_lstsq, SolveDiagnostics};
pub use operators::{PdeKind, PdeProblem};
pub use partition::{select_mask, PartitionKind, PartitionStrategy, Partitioner, Selection};
pub use quadrature::{composite_rule, gauss_legendre, integrate_1d, QuadratureRule1D};
pub use separable::SeparableField;
pub use tnn::{
    eval_factors, init_network, Activation, FactorTable, InputMap, ParamMask, TnnArchitecture,
    TnnParams,
};
