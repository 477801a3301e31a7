//! Quick self-checks for one configuration: quadrature exactness, parameter
//! derivatives against finite differences, compressed vs dense projection,
//! the closed-form source identity and mask counts.

use tnn_core::fit::loss_and_gradient;
use tnn_core::partition::MaskSource;
use tnn_core::{
    eval_factors, factor_param_jacobian, gauss_legendre, init_network, integrate_1d, GalerkinRhs,
    ParamMask, PartitionKind, PartitionStrategy, Partitioner, QuadratureRule1D, Selection,
    TnnParams, VelocityField,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

/// Small deterministic index stream (64-bit LCG); verification needs
/// spread-out picks, not statistical quality.
struct Picks(u64);

impl Picks {
    fn next(&mut self, n: usize) -> usize {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 33) % n as u64) as usize
    }
}

const FD_STEP: f64 = 1e-5;
const PROBES: usize = 20;

/// Rescales each sub-network's output layer so its factors have mean L2 norm 1.
fn unit_factors(params: &TnnParams, rules: &[QuadratureRule1D]) -> Result<TnnParams, CliError> {
    let table = eval_factors(params, rules, 0)?;
    let slot = params.layout().output_slot().clone();
    let mut out = params.clone();
    for (i, rule) in rules.iter().enumerate() {
        let p = table.rank();
        let mut mean = 0.0;
        for j in 0..p {
            let sq: Vec<f64> = table.factor(i, j, 0).iter().map(|v| v * v).collect();
            mean += integrate_1d(&sq, rule)?.sqrt() / p as f64;
        }
        if !(mean > 0.0) {
            continue;
        }
        let s = 1.0 / mean;
        let sub = out.subnet_mut(i);
        let w = slot.weight_offset;
        sub[w..w + slot.rows * slot.cols]
            .iter_mut()
            .for_each(|v| *v *= s);
        if let Some(b) = slot.bias_offset {
            sub[b..b + slot.rows].iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

pub fn verify(config: &ExperimentConfig) -> Result<Vec<Check>, CliError> {
    config.validate()?;
    let problem = config.problem.build();
    let rules = config.rules().map_err(CliError::from_config)?;
    let arch = config.arch().map_err(CliError::from_config)?;
    let params = init_network(&arch, config.seeds.init)?;
    let mut picks = Picks(config.seeds.init ^ 0x9e37_79b9_7f4a_7c15);
    let mut checks = Vec::new();

    // monomials up to degree 2n - 1 on [-1, 1]
    let n = config.quadrature.points;
    let base = gauss_legendre(n)?;
    let worst = (0..2 * n)
        .map(|k| {
            let exact = if k % 2 == 1 {
                0.0
            } else {
                2.0 / (k as f64 + 1.0)
            };
            (base.integrate(|x| x.powi(k as i32)) - exact).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "quadrature exactness",
        worst <= 1e-13,
        format!("max monomial error {worst:.3e} for n = {n}"),
    ));

    // factor values against central differences in single parameters
    let per = arch.params_per_subnet();
    let total = per * arch.dim;
    let chosen: Vec<usize> = (0..PROBES).map(|_| picks.next(total)).collect();
    let mut sel = vec![false; total];
    for &g in &chosen {
        sel[g] = true;
    }
    let mask = ParamMask::from_selected(&arch, sel)?;
    let jac = factor_param_jacobian(&params, &mask, &rules, 0)?;
    let mut worst = 0.0f64;
    for k in 0..arch.dim {
        for (r, &local) in jac.params(k).iter().enumerate() {
            let g = k * per + local;
            let bump = |h: f64| -> Result<tnn_core::FactorTable, CliError> {
                let mut p = params.clone();
                p.as_mut_slice()[g] += h;
                Ok(eval_factors(&p, &rules, 0)?)
            };
            let (plus, minus) = (bump(FD_STEP)?, bump(-FD_STEP)?);
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for j in 0..arch.rank {
                for q in 0..rules[k].len() {
                    let fd = (plus.get(k, j, q, 0) - minus.get(k, j, q, 0)) / (2.0 * FD_STEP);
                    let an = jac.get(k, r, j, q, 0);
                    diff = diff.max((fd - an).abs());
                    scale = scale.max(an.abs());
                }
            }
            worst = worst.max(diff / scale.max(1e-8));
        }
    }
    checks.push(Check::new(
        "parameter jacobian vs finite differences",
        worst <= 1e-6,
        format!(
            "max relative deviation {worst:.3e} over {} parameters",
            mask.count()
        ),
    ));

    // initial-fit loss gradient, at a point whose factors have unit norm so
    // that high-dimensional products are not vanishingly small
    let target = problem.initial_condition(&rules)?;
    let params = unit_factors(&params, &rules)?;
    let (_, grad) = loss_and_gradient(&params, &target, &rules)?;
    let loss_at =
        |p: &TnnParams| -> Result<f64, CliError> { Ok(loss_and_gradient(p, &target, &rules)?.0) };
    let gscale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let mut worst = 0.0f64;
    for &g in &chosen {
        let mut p = params.clone();
        p.as_mut_slice()[g] += FD_STEP;
        let up = loss_at(&p)?;
        p.as_mut_slice()[g] -= 2.0 * FD_STEP;
        let down = loss_at(&p)?;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((fd - grad[g]).abs() / gscale.max(1e-12));
    }
    checks.push(Check::new(
        "fit gradient vs finite differences",
        worst <= 1e-5,
        format!("max relative deviation {worst:.3e}"),
    ));

    // the QR-reduced projection agrees with the dense normal equations
    let strategy = PartitionStrategy {
        kind: PartitionKind::Fixed,
        selection: Selection::Count(per.min(12)),
        seed: config.seeds.mask,
    };
    let small = Partitioner::new(strategy).next_mask(&arch)?;
    let mut rhs = GalerkinRhs::new(problem.clone(), rules.clone())?;
    rhs.rcond = config.evolution.rcond;
    let (_, fast) = rhs.velocity(&params, &small, 0.0)?;
    rhs.compress = false;
    let (_, dense) = rhs.velocity(&params, &small, 0.0)?;
    let target_norm = rhs.system(&params, &small, 0.0)?.target_sq.sqrt();
    let dev = (fast.residual - dense.residual).abs() / target_norm.max(1e-300);
    checks.push(Check::new(
        "compressed vs dense projection residual",
        dev <= 1e-8,
        format!(
            "residuals {:.6e} / {:.6e}, relative gap {dev:.3e}",
            fast.residual, dense.residual
        ),
    ));

    // closed form satisfies the equation at random tensor nodes
    let t = 0.5 * config.evolution.t_end.min(1.0);
    let residual = problem.closed_form_residual(&rules, t)?;
    let table = problem.closed_form_factors(&rules, t, problem.operator_order())?;
    let rate = problem.closed_form_rate(&table)?;
    let (mut worst, mut scale) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let idx: Vec<usize> = rules.iter().map(|r| picks.next(r.len())).collect();
        worst = worst.max(residual.eval_at(&idx).abs());
        scale = scale.max(rate.eval_at(&idx).abs());
    }
    checks.push(Check::new(
        "closed-form source identity",
        worst <= 1e-10 * scale,
        format!("max |u_t - N(u)| {worst:.3e} at 100 nodes (scale {scale:.3e})"),
    ));

    // masks drawn by the configured strategy have the configured size
    let strategy = config.partition_strategy()?;
    let want = strategy
        .count_per_subnet(&arch)
        .map_err(CliError::from_config)?;
    let mut parts = Partitioner::new(strategy);
    let mut ok = true;
    for _ in 0..3 {
        let m = parts.next_mask(&arch)?;
        ok &= m.counts_per_dim().iter().all(|&c| c == want);
    }
    checks.push(Check::new(
        "mask counts",
        ok,
        format!("{want} of {per} parameters per sub-network"),
    ));

    Ok(checks)
}
