//! The tensor neural network ansatz `u(x) = sum_j prod_i u_ij(x_i)`.
//!
//! Each dimension `i` owns a sub-network mapping the scalar `x_i` (through an
//! optional input map) to `p` outputs `u_i1..u_ip`. All parameters live in one
//! flat vector, dimension-major; within a sub-network the order is layer by layer,
//! each weight matrix row-major followed by its bias. The output layer is linear and
//! has no bias.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
#[allow(unused_imports)] // inherent float math is std-only on older toolchains
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::jet::{self, Jet, JET_LEN, MAX_ORDER};
use crate::quadrature::QuadratureRule1D;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Tanh,
    Sin,
}

impl Activation {
    #[inline]
    pub fn derivs(self, z: f64) -> [f64; 6] {
        match self {
            Activation::Tanh => jet::tanh_derivs(z),
            Activation::Sin => jet::sin_derivs(z),
        }
    }
}

/// How the scalar coordinate enters a sub-network.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum InputMap {
    Identity,
    /// `x -> a [cos(b x), sin(b x)]`; periodic with period `2 pi / b`.
    PeriodicEmbedding {
        a: f64,
        b: f64,
    },
    /// Identity input, with every output multiplied by
    /// `(x - lo)(hi - x) / ((hi - lo) / 2)^2`, which is `1 - x^2` on `[-1, 1]`.
    DirichletEnvelope,
}

impl InputMap {
    pub fn input_width(&self) -> usize {
        match self {
            InputMap::PeriodicEmbedding { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TnnArchitecture {
    pub dim: usize,
    pub rank: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub input_map: InputMap,
    pub domain: Vec<(f64, f64)>,
}

impl TnnArchitecture {
    pub fn new(
        dim: usize,
        rank: usize,
        hidden: Vec<usize>,
        input_map: InputMap,
        domain: (f64, f64),
    ) -> Result<Self> {
        let arch = Self {
            dim,
            rank,
            hidden,
            activation: Activation::Tanh,
            input_map,
            domain: vec![domain; dim],
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.rank == 0 {
            return invalid("dimension and rank must be positive");
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return invalid("hidden layer widths must be positive and non-empty");
        }
        if self.domain.len() != self.dim {
            return invalid("domain must list one interval per dimension");
        }
        if self.domain.iter().any(|&(lo, hi)| !(lo < hi)) {
            return invalid("every domain interval needs lo < hi");
        }
        if let InputMap::PeriodicEmbedding { a, b } = self.input_map {
            if !(a.is_finite() && a != 0.0 && b.is_finite() && b > 0.0) {
                return invalid("periodic embedding needs finite a != 0 and b > 0");
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> SubnetLayout {
        SubnetLayout::new(self)
    }

    pub fn params_per_subnet(&self) -> usize {
        self.layout().count
    }

    pub fn total_params(&self) -> usize {
        self.dim * self.params_per_subnet()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.domain)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

/// Offsets of every layer inside one sub-network's parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetLayout {
    pub layers: Vec<LayerSlot>,
    pub count: usize,
}

/// What a scalar parameter is, for partition strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRole {
    pub layer: usize,
    pub is_bias: bool,
    pub is_output: bool,
}

impl SubnetLayout {
    fn new(arch: &TnnArchitecture) -> Self {
        let mut layers = Vec::with_capacity(arch.hidden.len() + 1);
        let mut offset = 0;
        let mut cols = arch.input_map.input_width();
        for &rows in &arch.hidden {
            let weight_offset = offset;
            offset += rows * cols;
            let bias_offset = Some(offset);
            offset += rows;
            layers.push(LayerSlot {
                rows,
                cols,
                weight_offset,
                bias_offset,
            });
            cols = rows;
        }
        layers.push(LayerSlot {
            rows: arch.rank,
            cols,
            weight_offset: offset,
            bias_offset: None,
        });
        offset += arch.rank * cols;
        Self {
            layers,
            count: offset,
        }
    }

    pub fn role(&self, local: usize) -> ParamRole {
        let last = self.layers.len() - 1;
        for (l, slot) in self.layers.iter().enumerate() {
            let w_end = slot.weight_offset + slot.rows * slot.cols;
            if local < w_end {
                return ParamRole {
                    layer: l,
                    is_bias: false,
                    is_output: l == last,
                };
            }
            if let Some(b) = slot.bias_offset {
                if local < b + slot.rows {
                    return ParamRole {
                        layer: l,
                        is_bias: true,
                        is_output: false,
                    };
                }
            }
        }
        panic!("parameter index {local} out of range");
    }

    pub fn output_slot(&self) -> &LayerSlot {
        self.layers.last().expect("layout has an output layer")
    }

    fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.rows.max(l.cols))
            .max()
            .unwrap_or(1)
    }
}

/// All weights of the `d` sub-networks.
#[derive(Debug, Clone, PartialEq)]
pub struct TnnParams {
    arch: TnnArchitecture,
    layout: SubnetLayout,
    data: Vec<f64>,
}

impl TnnParams {
    pub fn from_vec(arch: TnnArchitecture, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if data.len() != arch.dim * layout.count {
            return invalid("parameter vector length does not match architecture");
        }
        Ok(Self { arch, layout, data })
    }

    pub fn arch(&self) -> &TnnArchitecture {
        &self.arch
    }

    pub fn layout(&self) -> &SubnetLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn per_subnet(&self) -> usize {
        self.layout.count
    }

    pub fn subnet(&self, i: usize) -> &[f64] {
        let n = self.layout.count;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn subnet_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.layout.count;
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Jets of the `p` outputs of sub-network `i` at `x`, up to `order`.
    pub fn factor_jets(&self, i: usize, x: f64, order: usize) -> Vec<Jet> {
        let mut tape = Tape::new(&self.layout);
        tape.forward(self, i, x, order);
        tape.out.clone()
    }

    /// `u(x) = sum_j prod_i u_ij(x_i)`. Points outside the domain are evaluated
    /// as-is; see [`TnnArchitecture::in_domain`].
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.arch.dim, "point dimension mismatch");
        let p = self.arch.rank;
        let mut prod = vec![1.0; p];
        let mut tape = Tape::new(&self.layout);
        for (i, &xi) in x.iter().enumerate() {
            tape.forward(self, i, xi, 0);
            for (acc, out) in prod.iter_mut().zip(&tape.out) {
                *acc *= out[0];
            }
        }
        prod.iter().sum()
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, from a ChaCha8
/// stream seeded with `seed`.
pub fn init_network(arch: &TnnArchitecture, seed: u64) -> Result<TnnParams> {
    arch.validate()?;
    let layout = arch.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; arch.dim * layout.count];
    for i in 0..arch.dim {
        let block = &mut data[i * layout.count..(i + 1) * layout.count];
        for slot in &layout.layers {
            let bound = 1.0 / (slot.cols as f64).sqrt();
            let w = &mut block[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols];
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            if let Some(b) = slot.bias_offset {
                for v in block[b..b + slot.rows].iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
    }
    TnnParams::from_vec(arch.clone(), data)
}

/// Forward record of one sub-network evaluation at one point, kept for the
/// reverse sweeps.
pub(crate) struct Tape {
    pub(crate) order: usize,
    pub(crate) input: Vec<Jet>,
    /// pre-activation jets per hidden layer
    pub(crate) pre: Vec<Vec<Jet>>,
    /// activation derivatives at the pre-activation values
    pub(crate) fd: Vec<Vec<[f64; 6]>>,
    pub(crate) post: Vec<Vec<Jet>>,
    pub(crate) raw_out: Vec<Jet>,
    pub(crate) envelope: Option<Jet>,
    pub(crate) out: Vec<Jet>,
    adj_a: Vec<Jet>,
    adj_z: Vec<Jet>,
    adj_prev: Vec<Jet>,
}

impl Tape {
    pub(crate) fn new(layout: &SubnetLayout) -> Self {
        let hidden = &layout.layers[..layout.layers.len() - 1];
        let w = layout.max_width();
        Self {
            order: 0,
            input: Vec::with_capacity(2),
            pre: hidden
                .iter()
                .map(|s| vec![[0.0; JET_LEN]; s.rows])
                .collect(),
            fd: hidden.iter().map(|s| vec![[0.0; 6]; s.rows]).collect(),
            post: hidden
                .iter()
                .map(|s| vec![[0.0; JET_LEN]; s.rows])
                .collect(),
            raw_out: vec![[0.0; JET_LEN]; layout.output_slot().rows],
            envelope: None,
            out: vec![[0.0; JET_LEN]; layout.output_slot().rows],
            adj_a: vec![[0.0; JET_LEN]; w],
            adj_z: vec![[0.0; JET_LEN]; w],
            adj_prev: vec![[0.0; JET_LEN]; w],
        }
    }

    pub(crate) fn forward(&mut self, params: &TnnParams, i: usize, x: f64, order: usize) {
        debug_assert!(order <= MAX_ORDER);
        self.order = order;
        let arch = &params.arch;
        let block = params.subnet(i);
        let layout = &params.layout;

        self.input.clear();
        self.envelope = None;
        match arch.input_map {
            InputMap::Identity => self.input.push([x, 1.0, 0.0, 0.0, 0.0]),
            InputMap::DirichletEnvelope => {
                self.input.push([x, 1.0, 0.0, 0.0, 0.0]);
                let (lo, hi) = arch.domain[i];
                let h = 0.5 * (hi - lo);
                let s = 1.0 / (h * h);
                self.envelope = Some([
                    (x - lo) * (hi - x) * s,
                    (hi + lo - 2.0 * x) * s,
                    -2.0 * s,
                    0.0,
                    0.0,
                ]);
            }
            InputMap::PeriodicEmbedding { a, b } => {
                let mut c = [0.0; JET_LEN];
                let mut s = [0.0; JET_LEN];
                let mut scale = a;
                for n in 0..=order {
                    let phase = b * x + n as f64 * FRAC_PI_2;
                    c[n] = scale * phase.cos();
                    s[n] = scale * phase.sin();
                    scale *= b;
                }
                self.input.push(c);
                self.input.push(s);
            }
        }

        let n_hidden = layout.layers.len() - 1;
        for l in 0..n_hidden {
            let slot = &layout.layers[l];
            let w = &block[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols];
            let bias = &block[slot.bias_offset.unwrap()..slot.bias_offset.unwrap() + slot.rows];
            let (prev_layers, rest) = self.post.split_at_mut(l);
            let prev: &[Jet] = if l == 0 {
                &self.input
            } else {
                &prev_layers[l - 1]
            };
            let pre = &mut self.pre[l];
            for r in 0..slot.rows {
                let row = &w[r * slot.cols..(r + 1) * slot.cols];
                let mut z = [0.0; JET_LEN];
                for (wv, h) in row.iter().zip(prev) {
                    for m in 0..=order {
                        z[m] += wv * h[m];
                    }
                }
                z[0] += bias[r];
                pre[r] = z;
                let fd = arch.activation.derivs(z[0]);
                self.fd[l][r] = fd;
                rest[0][r] = jet::compose(&fd, &z, order);
            }
        }

        let slot = layout.output_slot();
        let w = &block[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols];
        let last = &self.post[n_hidden - 1];
        for j in 0..slot.rows {
            let row = &w[j * slot.cols..(j + 1) * slot.cols];
            let mut o = [0.0; JET_LEN];
            for (wv, h) in row.iter().zip(last) {
                for m in 0..=order {
                    o[m] += wv * h[m];
                }
            }
            self.raw_out[j] = o;
            self.out[j] = match &self.envelope {
                Some(env) => jet::product(env, &o, order),
                None => o,
            };
        }
    }

    /// Accumulates into `grad` the gradient of `sum_j sum_m seed[j][m] * out_j^(m)`
    /// with respect to the sub-network parameters. `order` bounds the derivative
    /// orders touched by the seed and must not exceed the forward order.
    pub(crate) fn backward(
        &mut self,
        params: &TnnParams,
        i: usize,
        seed: &[Jet],
        order: usize,
        grad: &mut [f64],
    ) {
        debug_assert!(order <= self.order);
        let block = params.subnet(i);
        let layout = &params.layout;
        let n_hidden = layout.layers.len() - 1;

        let out_slot = layout.output_slot();
        let w_out =
            &block[out_slot.weight_offset..out_slot.weight_offset + out_slot.rows * out_slot.cols];
        let last = &self.post[n_hidden - 1];
        for a in self.adj_a[..out_slot.cols].iter_mut() {
            *a = [0.0; JET_LEN];
        }
        for j in 0..out_slot.rows {
            let adj_raw = match &self.envelope {
                Some(env) => jet::product_adjoint(env, &seed[j], order),
                None => seed[j],
            };
            if adj_raw[..=order].iter().all(|&v| v == 0.0) {
                continue;
            }
            let g_row = &mut grad[out_slot.weight_offset + j * out_slot.cols..][..out_slot.cols];
            let w_row = &w_out[j * out_slot.cols..(j + 1) * out_slot.cols];
            for h in 0..out_slot.cols {
                let mut acc = 0.0;
                for m in 0..=order {
                    acc += adj_raw[m] * last[h][m];
                    self.adj_a[h][m] += w_row[h] * adj_raw[m];
                }
                g_row[h] += acc;
            }
        }

        for l in (0..n_hidden).rev() {
            let slot = &layout.layers[l];
            for r in 0..slot.rows {
                self.adj_z[r] =
                    jet::compose_adjoint(&self.fd[l][r], &self.pre[l][r], &self.adj_a[r], order);
            }
            let b_off = slot.bias_offset.unwrap();
            for r in 0..slot.rows {
                grad[b_off + r] += self.adj_z[r][0];
            }
            let prev: &[Jet] = if l == 0 {
                &self.input
            } else {
                &self.post[l - 1]
            };
            let w = &block[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols];
            let need_prev_adj = l > 0;
            if need_prev_adj {
                for a in self.adj_prev[..slot.cols].iter_mut() {
                    *a = [0.0; JET_LEN];
                }
            }
            for r in 0..slot.rows {
                let az = self.adj_z[r];
                let g_row = &mut grad[slot.weight_offset + r * slot.cols..][..slot.cols];
                let w_row = &w[r * slot.cols..(r + 1) * slot.cols];
                for c in 0..slot.cols {
                    let mut acc = 0.0;
                    for m in 0..=order {
                        acc += az[m] * prev[c][m];
                    }
                    g_row[c] += acc;
                    if need_prev_adj {
                        let wv = w_row[c];
                        for m in 0..=order {
                            self.adj_prev[c][m] += wv * az[m];
                        }
                    }
                }
            }
            if need_prev_adj {
                core::mem::swap(&mut self.adj_a, &mut self.adj_prev);
            }
        }
    }
}

/// Factor values `u_ij` and their x-derivatives at the quadrature nodes of each
/// dimension.
#[derive(Debug, Clone)]
pub struct FactorTable {
    max_order: usize,
    rank: usize,
    rules: Vec<QuadratureRule1D>,
    /// per dimension, indexed `[(j * Q + q) * (max_order + 1) + m]`
    values: Vec<Vec<f64>>,
}

impl FactorTable {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn rules(&self) -> &[QuadratureRule1D] {
        &self.rules
    }

    pub fn nodes(&self, i: usize) -> usize {
        self.rules[i].len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, q: usize, m: usize) -> f64 {
        let k = self.max_order + 1;
        self.values[i][(j * self.rules[i].len() + q) * k + m]
    }

    /// Node values of `d^m u_ij / dx_i^m`.
    pub fn factor(&self, i: usize, j: usize, m: usize) -> Vec<f64> {
        (0..self.nodes(i)).map(|q| self.get(i, j, q, m)).collect()
    }

    /// Builds a table directly from node values, `values[i][j][m][q]`.
    pub fn from_values(
        rules: Vec<QuadratureRule1D>,
        max_order: usize,
        values: &[Vec<Vec<Vec<f64>>>],
    ) -> Result<Self> {
        if values.len() != rules.len() || values.is_empty() {
            return invalid("one value block per rule required");
        }
        let rank = values[0].len();
        let k = max_order + 1;
        let mut flat = Vec::with_capacity(values.len());
        for (i, per_dim) in values.iter().enumerate() {
            let q_n = rules[i].len();
            if per_dim.len() != rank {
                return invalid("rank differs between dimensions");
            }
            let mut v = vec![0.0; rank * q_n * k];
            for (j, orders) in per_dim.iter().enumerate() {
                if orders.len() != k {
                    return invalid("derivative order count mismatch");
                }
                for (m, nodes) in orders.iter().enumerate() {
                    if nodes.len() != q_n {
                        return invalid("node count mismatch");
                    }
                    for (q, &x) in nodes.iter().enumerate() {
                        v[(j * q_n + q) * k + m] = x;
                    }
                }
            }
            flat.push(v);
        }
        Ok(Self {
            max_order,
            rank,
            rules,
            values: flat,
        })
    }

    /// Multiplies every factor of dimension `i` (all orders) by `s`.
    pub fn scale_dim(&mut self, i: usize, s: f64) {
        for v in self.values[i].iter_mut() {
            *v *= s;
        }
    }
}

/// Exact x-derivatives (orders `0..=max_order`) of every factor at every node,
/// by forward jet propagation.
pub fn eval_factors(
    params: &TnnParams,
    rules: &[QuadratureRule1D],
    max_order: usize,
) -> Result<FactorTable> {
    if max_order > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            requested: max_order,
            max: MAX_ORDER,
        });
    }
    if rules.len() != params.arch.dim {
        return invalid("one quadrature rule per dimension required");
    }
    let p = params.arch.rank;
    let k = max_order + 1;
    let mut tape = Tape::new(&params.layout);
    let mut values = Vec::with_capacity(rules.len());
    for (i, rule) in rules.iter().enumerate() {
        let q_n = rule.len();
        let mut v = vec![0.0; p * q_n * k];
        for (q, &x) in rule.nodes().iter().enumerate() {
            tape.forward(params, i, x, max_order);
            for j in 0..p {
                let dst = &mut v[(j * q_n + q) * k..(j * q_n + q + 1) * k];
                dst.copy_from_slice(&tape.out[j][..k]);
            }
        }
        values.push(v);
    }
    Ok(FactorTable {
        max_order,
        rank: p,
        rules: rules.to_vec(),
        values,
    })
}

/// Split of the parameters into evolved (selected) and frozen ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    selected: Vec<bool>,
    counts_per_dim: Vec<usize>,
    per_subnet: usize,
}

impl ParamMask {
    pub fn full(arch: &TnnArchitecture) -> Self {
        let n = arch.params_per_subnet();
        Self {
            selected: vec![true; n * arch.dim],
            counts_per_dim: vec![n; arch.dim],
            per_subnet: n,
        }
    }

    pub fn from_selected(arch: &TnnArchitecture, selected: Vec<bool>) -> Result<Self> {
        let n = arch.params_per_subnet();
        if selected.len() != n * arch.dim {
            return invalid("mask length does not match parameter count");
        }
        let counts_per_dim: Vec<usize> = selected
            .chunks(n)
            .map(|c| c.iter().filter(|&&s| s).count())
            .collect();
        if counts_per_dim.iter().all(|&c| c == 0) {
            return invalid("mask selects no parameters");
        }
        Ok(Self {
            selected,
            counts_per_dim,
            per_subnet: n,
        })
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn counts_per_dim(&self) -> &[usize] {
        &self.counts_per_dim
    }

    pub fn count(&self) -> usize {
        self.counts_per_dim.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.counts_per_dim.len()
    }

    /// Local (within sub-network) indices selected in dimension `i`.
    pub fn local_indices(&self, i: usize) -> Vec<usize> {
        let n = self.per_subnet;
        self.selected[i * n..(i + 1) * n]
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| s.then_some(k))
            .collect()
    }

    fn check(&self, params: &TnnParams) -> Result<()> {
        if self.selected.len() != params.data.len() || self.per_subnet != params.per_subnet() {
            return invalid("mask does not match parameters");
        }
        Ok(())
    }
}

/// Selected parameters in flattening order.
pub fn flatten(params: &TnnParams, mask: &ParamMask) -> Result<Vec<f64>> {
    mask.check(params)?;
    Ok(params
        .data
        .iter()
        .zip(&mask.selected)
        .filter_map(|(&v, &s)| s.then_some(v))
        .collect())
}

/// Copy of `params` with the selected entries incremented by `delta`.
pub fn unflatten_add(params: &TnnParams, mask: &ParamMask, delta: &[f64]) -> Result<TnnParams> {
    mask.check(params)?;
    if delta.len() != mask.count() {
        return invalid("delta length does not match selected parameter count");
    }
    let mut out = params.clone();
    let mut it = delta.iter();
    for (v, &s) in out.data.iter_mut().zip(&mask.selected) {
        if s {
            *v += *it.next().unwrap();
        }
    }
    Ok(out)
}
