//! Choice of which parameters evolve in a given step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::tnn::{ParamMask, TnnArchitecture};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Amount of parameters drawn per sub-network.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Selection {
    Count(usize),
    /// fraction of the sub-network's parameters, rounded, at least one
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PartitionKind {
    /// every parameter, every step
    Full,
    /// one uniform draw, reused for the whole run
    Fixed,
    /// a fresh uniform draw every step
    RandomPerStep,
    /// first hidden layer always selected, the rest drawn each step
    WithFirstLayer,
    /// first hidden layer never selected
    WithoutFirstLayer,
    /// biases never selected
    WithoutBias,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PartitionStrategy {
    pub kind: PartitionKind,
    pub selection: Selection,
    pub seed: u64,
}

impl PartitionStrategy {
    pub fn full() -> Self {
        Self {
            kind: PartitionKind::Full,
            selection: Selection::Ratio(1.0),
            seed: 0,
        }
    }

    /// Number of parameters selected in each sub-network.
    pub fn count_per_subnet(&self, arch: &TnnArchitecture) -> Result<usize> {
        let n = arch.params_per_subnet();
        if self.kind == PartitionKind::Full {
            return Ok(n);
        }
        let c = match self.selection {
            Selection::Count(c) => c,
            Selection::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return invalid("selection ratio must lie in (0, 1]");
                }
                (Float::round(r * n as f64) as usize).max(1)
            }
        };
        if c == 0 {
            return invalid("selection count must be positive");
        }
        if c > n {
            return invalid(format!(
                "selection count {c} exceeds {n} parameters per sub-network"
            ));
        }
        Ok(c)
    }
}

/// One draw of a mask according to `strategy` (ignoring whether the strategy
/// redraws per step).
pub fn select_mask(
    strategy: &PartitionStrategy,
    arch: &TnnArchitecture,
    rng: &mut ChaCha8Rng,
) -> Result<ParamMask> {
    arch.validate()?;
    let n = arch.params_per_subnet();
    if strategy.kind == PartitionKind::Full {
        return Ok(ParamMask::full(arch));
    }
    let count = strategy.count_per_subnet(arch)?;
    let layout = arch.layout();
    let first = &layout.layers[0];
    let first_len = first.rows * first.cols + first.rows;
    let mut forced = Vec::new();
    let mut pool = Vec::with_capacity(n);
    for local in 0..n {
        let role = layout.role(local);
        let in_first = role.layer == 0 && !role.is_output;
        match strategy.kind {
            PartitionKind::WithFirstLayer if in_first => forced.push(local),
            PartitionKind::WithoutFirstLayer if in_first => {}
            PartitionKind::WithoutBias if role.is_bias => {}
            _ => pool.push(local),
        }
    }
    debug_assert!(strategy.kind != PartitionKind::WithFirstLayer || forced.len() == first_len);
    if forced.len() > count {
        return invalid(format!(
            "count {count} is smaller than the {} always-selected first-layer parameters",
            forced.len()
        ));
    }
    let draw = count - forced.len();
    if draw > pool.len() {
        return invalid(format!(
            "count {count} exceeds the {} eligible parameters per sub-network",
            forced.len() + pool.len()
        ));
    }
    let mut selected = vec![false; n * arch.dim];
    for i in 0..arch.dim {
        let block = &mut selected[i * n..(i + 1) * n];
        for &l in &forced {
            block[l] = true;
        }
        for idx in sample(rng, pool.len(), draw).iter() {
            block[pool[idx]] = true;
        }
    }
    ParamMask::from_selected(arch, selected)
}

/// Anything that hands out the mask for the next step.
pub trait MaskSource {
    fn next_mask(&mut self, arch: &TnnArchitecture) -> Result<ParamMask>;
}

/// Stateful mask generator: caches the mask for `Full`/`Fixed`, redraws
/// otherwise. The stream is ChaCha8 seeded from the strategy seed.
#[derive(Debug, Clone)]
pub struct Partitioner {
    strategy: PartitionStrategy,
    rng: ChaCha8Rng,
    cached: Option<ParamMask>,
}

impl Partitioner {
    pub fn new(strategy: PartitionStrategy) -> Self {
        Self {
            strategy,
            rng: ChaCha8Rng::seed_from_u64(strategy.seed),
            cached: None,
        }
    }

    pub fn strategy(&self) -> &PartitionStrategy {
        &self.strategy
    }

    /// Position in the random stream, for checkpointing.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Restores a stream position saved with [`Partitioner::word_pos`]. The
    /// cached mask of a fixed strategy is redrawn from the start of the stream.
    pub fn resume(strategy: PartitionStrategy, word_pos: u128) -> Self {
        let mut p = Self::new(strategy);
        if !matches!(strategy.kind, PartitionKind::Fixed | PartitionKind::Full) {
            p.rng.set_word_pos(word_pos);
        }
        p
    }

    fn redraws(&self) -> bool {
        !matches!(
            self.strategy.kind,
            PartitionKind::Full | PartitionKind::Fixed
        )
    }
}

impl MaskSource for Partitioner {
    fn next_mask(&mut self, arch: &TnnArchitecture) -> Result<ParamMask> {
        if !self.redraws() {
            if let Some(m) = &self.cached {
                return Ok(m.clone());
            }
        }
        let m = select_mask(&self.strategy, arch, &mut self.rng)?;
        if !self.redraws() {
            self.cached = Some(m.clone());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tnn::InputMap;
    use proptest::prelude::*;

    fn arch() -> TnnArchitecture {
        TnnArchitecture::new(
            3,
            2,
            vec![6, 5],
            InputMap::PeriodicEmbedding { a: 1.0, b: 3.0 },
            (-1.0, 1.0),
        )
        .unwrap()
    }

    fn strat(kind: PartitionKind, c: usize, seed: u64) -> PartitionStrategy {
        PartitionStrategy {
            kind,
            selection: Selection::Count(c),
            seed,
        }
    }

    #[test]
    fn full_selects_everything() {
        let a = arch();
        let mut p = Partitioner::new(PartitionStrategy::full());
        let m = p.next_mask(&a).unwrap();
        assert_eq!(m.count(), a.total_params());
    }

    #[test]
    fn fixed_is_cached_and_random_redraws() {
        let a = arch();
        let mut fixed = Partitioner::new(strat(PartitionKind::Fixed, 10, 4));
        let m0 = fixed.next_mask(&a).unwrap();
        for _ in 0..5 {
            assert_eq!(fixed.next_mask(&a).unwrap(), m0);
        }
        let mut rnd = Partitioner::new(strat(PartitionKind::RandomPerStep, 10, 4));
        let r0 = rnd.next_mask(&a).unwrap();
        assert_eq!(r0, m0, "first draw of both strategies coincides");
        let r1 = rnd.next_mask(&a).unwrap();
        assert_ne!(r0, r1);
    }

    #[test]
    fn role_constraints() {
        let a = arch();
        let layout = a.layout();
        let first = &layout.layers[0];
        let first_len = first.rows * first.cols + first.rows;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = select_mask(
            &strat(PartitionKind::WithFirstLayer, first_len + 4, 0),
            &a,
            &mut rng,
        )
        .unwrap();
        for i in 0..a.dim {
            let l = m.local_indices(i);
            assert_eq!(l.len(), first_len + 4);
            assert!((0..first_len).all(|k| l.contains(&k)));
        }
        let m = select_mask(
            &strat(PartitionKind::WithoutFirstLayer, 20, 0),
            &a,
            &mut rng,
        )
        .unwrap();
        for i in 0..a.dim {
            assert!(m.local_indices(i).iter().all(|&k| k >= first_len));
        }
        let m = select_mask(&strat(PartitionKind::WithoutBias, 30, 0), &a, &mut rng).unwrap();
        for i in 0..a.dim {
            assert!(m.local_indices(i).iter().all(|&k| !layout.role(k).is_bias));
        }
    }

    #[test]
    fn infeasible_counts_rejected() {
        let a = arch();
        let n = a.params_per_subnet();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_mask(&strat(PartitionKind::RandomPerStep, n + 1, 0), &a, &mut rng).is_err());
        assert!(select_mask(&strat(PartitionKind::RandomPerStep, 0, 0), &a, &mut rng).is_err());
        assert!(select_mask(&strat(PartitionKind::WithFirstLayer, 3, 0), &a, &mut rng).is_err());
        let bad = PartitionStrategy {
            kind: PartitionKind::Fixed,
            selection: Selection::Ratio(1.5),
            seed: 0,
        };
        assert!(select_mask(&bad, &a, &mut rng).is_err());
    }

    #[test]
    fn ratio_rounds_per_subnet() {
        let a = arch();
        let n = a.params_per_subnet();
        let s = PartitionStrategy {
            kind: PartitionKind::Fixed,
            selection: Selection::Ratio(0.25),
            seed: 1,
        };
        let want = ((0.25 * n as f64).round() as usize).max(1);
        assert_eq!(s.count_per_subnet(&a).unwrap(), want);
        let m = Partitioner::new(s).next_mask(&a).unwrap();
        assert!(m.counts_per_dim().iter().all(|&c| c == want));
    }

    #[test]
    fn resume_continues_stream() {
        let a = arch();
        let s = strat(PartitionKind::RandomPerStep, 7, 21);
        let mut p = Partitioner::new(s);
        p.next_mask(&a).unwrap();
        p.next_mask(&a).unwrap();
        let mut q = Partitioner::resume(s, p.word_pos());
        assert_eq!(p.next_mask(&a).unwrap(), q.next_mask(&a).unwrap());
    }

    proptest! {
        #[test]
        fn mask_has_exact_count(seed in any::<u64>(), c in 1usize..40) {
            let a = arch();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = select_mask(&strat(PartitionKind::RandomPerStep, c, 0), &a, &mut rng).unwrap();
            prop_assert!(m.counts_per_dim().iter().all(|&k| k == c));
        }
    }
}
