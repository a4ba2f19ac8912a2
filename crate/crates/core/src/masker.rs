//! Transmitter-side rate adaptation: choose which token positions to omit.
//!
//! [`context_aware_mask`] greedily masks the position whose contextual prior
//! has the lowest entropy, re-evaluating every remaining candidate after each
//! pick. [`random_mask`] is the context-blind baseline. Both mask exactly
//! `floor(T r)` positions.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TokenSequence;
use crate::prior::{ContextModel, MaskedSequence, PriorDistribution, PriorError, PriorQuery};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("masking ratio must lie in [0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("mask position {position} is outside a sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Entropy of one candidate at one greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub step: usize,
    pub position: usize,
    pub entropy_bits: f64,
}

/// Set of masked positions with the order in which they were chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    seq_len: usize,
    ratio: f64,
    positions: BTreeSet<usize>,
    selection_order: Vec<usize>,
    records: Vec<EntropyRecord>,
}

/// `floor(len * ratio)`, tolerant of the representation error in ratios such
/// as 0.29 (`100 * 0.29 = 28.999999999999996`).
pub fn mask_budget(len: usize, ratio: f64) -> Result<usize, MaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::InvalidRatio(ratio));
    }
    let exact = len as f64 * ratio;
    Ok(((exact + 1e-9 * exact.max(1.0)).floor() as usize).min(len))
}

impl MaskSet {
    pub fn empty(seq_len: usize) -> Self {
        Self {
            seq_len,
            ratio: 0.0,
            positions: BTreeSet::new(),
            selection_order: Vec::new(),
            records: Vec::new(),
        }
    }

    /// Mask set from explicit positions, selected in iteration order.
    pub fn from_positions<I: IntoIterator<Item = usize>>(seq_len: usize, positions: I) -> Result<Self, MaskError> {
        let mut set = Self::empty(seq_len);
        for p in positions {
            set.push(p)?;
        }
        set.ratio = if seq_len == 0 {
            0.0
        } else {
            set.len() as f64 / seq_len as f64
        };
        Ok(set)
    }

    fn push(&mut self, position: usize) -> Result<(), MaskError> {
        if position >= self.seq_len {
            return Err(MaskError::PositionOutOfRange {
                position,
                len: self.seq_len,
            });
        }
        if self.positions.insert(position) {
            self.selection_order.push(position);
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, position: usize) -> bool {
        self.positions.contains(&position)
    }

    pub fn positions(&self) -> &BTreeSet<usize> {
        &self.positions
    }

    pub fn selection_order(&self) -> &[usize] {
        &self.selection_order
    }

    /// Every candidate entropy evaluated, grouped by step.
    pub fn records(&self) -> &[EntropyRecord] {
        &self.records
    }

    pub fn apply(&self, seq: &TokenSequence) -> Result<MaskedSequence, PriorError> {
        crate::prior::mask(seq, self.positions.iter().copied())
    }
}

/// Shannon entropy of a prior, in bits.
pub fn entropy_bits(dist: &PriorDistribution) -> f64 {
    dist.entropy_bits()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingStrategy {
    /// Re-evaluate all remaining candidates after every pick.
    #[default]
    Greedy,
    /// Rank all positions once on the unmasked sequence.
    OneShot,
}

/// Lowest-entropy candidate, lowest position on ties.
fn argmin_entropy(scored: &[(usize, f64)]) -> usize {
    let mut best = scored[0];
    for &(pos, h) in &scored[1..] {
        if h < best.1 {
            best = (pos, h);
        }
    }
    best.0
}

/// Masks the `floor(T r)` most predictable positions of `seq`.
pub fn context_aware_mask<M: ContextModel + ?Sized>(
    seq: &TokenSequence,
    ratio: f64,
    model: &M,
    strategy: MaskingStrategy,
) -> Result<MaskSet, MaskError> {
    let t = seq.len();
    let budget = mask_budget(t, ratio)?;
    let mut set = MaskSet::empty(t);
    set.ratio = ratio;
    if budget == 0 {
        return Ok(set);
    }
    let mut current = MaskedSequence::unmasked(seq.ids());

    match strategy {
        MaskingStrategy::Greedy => {
            for step in 1..=budget {
                let candidates: Vec<usize> = (0..t).filter(|i| !set.contains(*i)).collect();
                let queries: Vec<PriorQuery> = candidates
                    .iter()
                    .map(|&i| PriorQuery::leave_one_out(&current, i))
                    .collect();
                let priors = model.predict_batch(&queries)?;
                let scored: Vec<(usize, f64)> = candidates
                    .iter()
                    .zip(&priors)
                    .map(|(&i, d)| (i, d.entropy_bits()))
                    .collect();
                set.records.extend(scored.iter().map(|&(position, entropy_bits)| EntropyRecord {
                    step,
                    position,
                    entropy_bits,
                }));
                let pick = argmin_entropy(&scored);
                set.push(pick)?;
                current.set(pick, None);
            }
        }
        MaskingStrategy::OneShot => {
            let queries: Vec<PriorQuery> = (0..t).map(|i| PriorQuery::leave_one_out(&current, i)).collect();
            let priors = model.predict_batch(&queries)?;
            let mut scored: Vec<(usize, f64)> = priors.iter().map(|d| d.entropy_bits()).enumerate().collect();
            set.records.extend(scored.iter().map(|&(position, entropy_bits)| EntropyRecord {
                step: 1,
                position,
                entropy_bits,
            }));
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            for &(pos, _) in scored.iter().take(budget) {
                set.push(pos)?;
            }
        }
    }
    Ok(set)
}

/// Masks `floor(T r)` positions drawn uniformly without replacement.
pub fn random_mask<R: Rng + ?Sized>(seq: &TokenSequence, ratio: f64, rng: &mut R) -> Result<MaskSet, MaskError> {
    let t = seq.len();
    let budget = mask_budget(t, ratio)?;
    let mut set = MaskSet::empty(t);
    set.ratio = ratio;
    for p in sample(rng, t, budget).into_iter() {
        set.push(p)?;
    }
    Ok(set)
}
