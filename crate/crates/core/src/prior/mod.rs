//! Contextual priors: categorical distributions over the vocabulary at masked
//! positions, conditioned on the surrounding tokens.
//!
//! Transmitter and receiver share one [`ContextModel`]. Three implementations
//! ship here: [`UniformModel`], the smoothed [`BigramModel`], and
//! [`ExternalModel`], which forwards queries to the model sidecar.

mod external;
mod ngram;

pub use external::ExternalModel;
pub use ngram::{train_ngram, BigramModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{TokenId, TokenSequence};

/// Probabilities below this are raised to it before renormalizing.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("position {position} is outside a sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("queried position {0} is not masked in the context")]
    PositionNotMasked(usize),
    #[error("model returned {got} probabilities, vocabulary size is {expected}")]
    VocabMismatch { got: usize, expected: usize },
    #[error("model returned {got} distributions for {expected} queries")]
    CountMismatch { got: usize, expected: usize },
    #[error("model returned an invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("unsupported n-gram order {0} (only 2 is implemented)")]
    UnsupportedOrder(usize),
    #[error("token {id} is outside the vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("context model transport error: {0}")]
    Transport(String),
    #[error("context model protocol error: {0}")]
    Protocol(String),
}

/// A token sequence where some entries are the `[MASK]` marker (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskedSequence(Vec<Option<TokenId>>);

impl MaskedSequence {
    pub fn new(slots: Vec<Option<TokenId>>) -> Self {
        Self(slots)
    }

    pub fn unmasked(ids: &[TokenId]) -> Self {
        Self(ids.iter().copied().map(Some).collect())
    }

    pub fn slots(&self) -> &[Option<TokenId>] {
        &self.0
    }

    pub fn get(&self, position: usize) -> Option<TokenId> {
        self.0.get(position).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_masked(&self, position: usize) -> bool {
        matches!(self.0.get(position), Some(None))
    }

    pub fn mask_count(&self) -> usize {
        self.0.iter().filter(|s| s.is_none()).count()
    }

    pub fn all_masked(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    pub fn set(&mut self, position: usize, slot: Option<TokenId>) {
        self.0[position] = slot;
    }

    /// Copy with `position` additionally masked.
    pub fn with_masked(&self, position: usize) -> Self {
        let mut out = self.clone();
        out.0[position] = None;
        out
    }

    /// The ids with every mask replaced by `mask_id`, as sent to an MLM.
    pub fn to_ids(&self, mask_id: TokenId) -> Vec<TokenId> {
        self.0.iter().map(|s| s.unwrap_or(mask_id)).collect()
    }

    /// All ids, if no entry is masked.
    pub fn to_tokens(&self) -> Option<Vec<TokenId>> {
        self.0.iter().copied().collect()
    }
}

/// Replaces the entries at `positions` with `[MASK]`. An empty set is the identity.
pub fn mask<I>(seq: &TokenSequence, positions: I) -> Result<MaskedSequence, PriorError>
where
    I: IntoIterator<Item = usize>,
{
    let mut out = MaskedSequence::unmasked(seq.ids());
    for p in positions {
        if p >= out.len() {
            return Err(PriorError::PositionOutOfRange {
                position: p,
                len: out.len(),
            });
        }
        out.0[p] = None;
    }
    Ok(out)
}

/// Floored, normalized categorical distribution stored as natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDistribution {
    log_probs: Vec<f64>,
}

impl PriorDistribution {
    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            log_probs: vec![-(vocab_size as f64).ln(); vocab_size],
        }
    }

    /// Normalizes non-negative weights, applying [`PROBABILITY_FLOOR`].
    pub fn from_probs(mut probs: Vec<f64>) -> Result<Self, PriorError> {
        if probs.is_empty() {
            return Err(PriorError::InvalidDistribution("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PriorError::InvalidDistribution("negative or non-finite weight".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(PriorError::InvalidDistribution("zero total mass".into()));
        }
        for p in probs.iter_mut() {
            *p = (*p / total).max(PROBABILITY_FLOOR);
        }
        let total: f64 = probs.iter().sum();
        Ok(Self {
            log_probs: probs.into_iter().map(|p| (p / total).ln()).collect(),
        })
    }

    /// Like [`PriorDistribution::from_probs`] for unnormalized log weights.
    pub fn from_log_probs(log_probs: &[f64]) -> Result<Self, PriorError> {
        if log_probs.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(PriorError::InvalidDistribution("NaN or +inf log weight".into()));
        }
        let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(PriorError::InvalidDistribution("zero total mass".into()));
        }
        Self::from_probs(log_probs.iter().map(|x| (x - max).exp()).collect())
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_probs.iter().map(|x| x.exp())
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.log_probs[token as usize].exp()
    }

    /// Most probable token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        argmax_lowest(&self.log_probs) as TokenId
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        let h: f64 = self
            .log_probs
            .iter()
            .map(|&lp| {
                let p = lp.exp();
                if p > 0.0 {
                    -p * lp
                } else {
                    0.0
                }
            })
            .sum();
        (h / std::f64::consts::LN_2).max(0.0)
    }
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One prior query: the distribution at `position` given `context`, where
/// `context[position]` is masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorQuery {
    pub context: MaskedSequence,
    pub position: usize,
}

impl PriorQuery {
    /// The query for `position` after additionally masking it in `seq`.
    pub fn leave_one_out(seq: &MaskedSequence, position: usize) -> Self {
        Self {
            context: seq.with_masked(position),
            position,
        }
    }
}

/// Raw model output, before flooring and normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum RawDistribution {
    Probs(Vec<f64>),
    LogProbs(Vec<f64>),
}

/// A contextual token prior shared by transmitter and receiver.
///
/// Implementors provide [`ContextModel::infer`]; callers use
/// [`ContextModel::predict_batch`] / [`ContextModel::predict`], which validate
/// queries, answer all-mask contexts with the uniform distribution, and apply
/// the probability floor to whatever the model returns.
pub trait ContextModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Answers validated queries, one raw distribution per query, in order.
    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError>;

    fn predict_batch(&self, queries: &[PriorQuery]) -> Result<Vec<PriorDistribution>, PriorError> {
        let v = self.vocab_size();
        let mut pending = Vec::new();
        for (k, q) in queries.iter().enumerate() {
            if q.position >= q.context.len() {
                return Err(PriorError::PositionOutOfRange {
                    position: q.position,
                    len: q.context.len(),
                });
            }
            if !q.context.is_masked(q.position) {
                return Err(PriorError::PositionNotMasked(q.position));
            }
            if let Some(id) = q.context.slots().iter().flatten().find(|&&id| id as usize >= v) {
                return Err(PriorError::TokenOutOfRange { id: *id, size: v });
            }
            if !q.context.all_masked() {
                pending.push(k);
            }
        }

        let mut out = vec![None; queries.len()];
        if !pending.is_empty() {
            let batch: Vec<PriorQuery> = pending.iter().map(|&k| queries[k].clone()).collect();
            let raw = self.infer(&batch)?;
            if raw.len() != batch.len() {
                return Err(PriorError::CountMismatch {
                    got: raw.len(),
                    expected: batch.len(),
                });
            }
            for (&k, r) in pending.iter().zip(raw) {
                let dist = match r {
                    RawDistribution::Probs(p) => {
                        check_width(p.len(), v)?;
                        PriorDistribution::from_probs(p)?
                    }
                    RawDistribution::LogProbs(lp) => {
                        check_width(lp.len(), v)?;
                        PriorDistribution::from_log_probs(&lp)?
                    }
                };
                out[k] = Some(dist);
            }
        }
        Ok(out
            .into_iter()
            .map(|d| d.unwrap_or_else(|| PriorDistribution::uniform(v)))
            .collect())
    }

    /// Distributions at several masked positions of one context.
    fn predict(&self, seq: &MaskedSequence, positions: &[usize]) -> Result<Vec<PriorDistribution>, PriorError> {
        let queries: Vec<PriorQuery> = positions
            .iter()
            .map(|&position| PriorQuery {
                context: seq.clone(),
                position,
            })
            .collect();
        self.predict_batch(&queries)
    }
}

fn check_width(got: usize, expected: usize) -> Result<(), PriorError> {
    if got == expected {
        Ok(())
    } else {
        Err(PriorError::VocabMismatch { got, expected })
    }
}

impl<M: ContextModel + ?Sized> ContextModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
        (**self).infer(queries)
    }
}

impl<M: ContextModel + ?Sized> ContextModel for std::sync::Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
        (**self).infer(queries)
    }
}

impl<M: ContextModel + ?Sized> ContextModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
        (**self).infer(queries)
    }
}

/// No context: every token equally likely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformModel {
    vocab_size: usize,
}

impl UniformModel {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl ContextModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
        Ok(queries
            .iter()
            .map(|_| RawDistribution::Probs(vec![1.0; self.vocab_size]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Vocabulary;
    use proptest::prelude::*;

    fn seq(ids: &[TokenId]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), &Vocabulary::new(16, 0).unwrap()).unwrap()
    }

    #[test]
    fn mask_operator() {
        let w = seq(&[5, 7]);
        assert_eq!(mask(&w, []).unwrap(), MaskedSequence::unmasked(&[5, 7]));
        assert_eq!(mask(&w, [0]).unwrap(), MaskedSequence::new(vec![None, Some(7)]));
        assert_eq!(mask(&w, [0, 1]).unwrap(), MaskedSequence::new(vec![None, None]));
        assert_eq!(
            mask(&w, [2]),
            Err(PriorError::PositionOutOfRange { position: 2, len: 2 })
        );
    }

    #[test]
    fn uniform_model_is_flat() {
        let m = UniformModel::new(10);
        let ctx = MaskedSequence::new(vec![Some(1), None, Some(3)]);
        let d = &m.predict(&ctx, &[1]).unwrap()[0];
        assert!(d.probs().all(|p| (p - 0.1).abs() < 1e-12));
        assert!((d.entropy_bits() - 10f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn query_must_be_masked() {
        let m = UniformModel::new(10);
        let ctx = MaskedSequence::new(vec![Some(1), None]);
        assert_eq!(m.predict(&ctx, &[0]), Err(PriorError::PositionNotMasked(0)));
        assert!(matches!(
            m.predict(&ctx, &[2]),
            Err(PriorError::PositionOutOfRange { .. })
        ));
        let bad = MaskedSequence::new(vec![Some(99), None]);
        assert!(matches!(m.predict(&bad, &[1]), Err(PriorError::TokenOutOfRange { .. })));
    }

    struct OneHot;
    impl ContextModel for OneHot {
        fn vocab_size(&self) -> usize {
            4
        }
        fn infer(&self, q: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
            Ok(q.iter().map(|_| RawDistribution::Probs(vec![0.0, 0.0, 1.0, 0.0])).collect())
        }
    }

    #[test]
    fn floor_keeps_log_probs_finite() {
        let d = &OneHot.predict(&MaskedSequence::new(vec![Some(1), None]), &[1]).unwrap()[0];
        assert!(d.log_probs().iter().all(|x| x.is_finite()));
        assert!((d.probs().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.argmax(), 2);
        assert!(d.prob(0) > 0.0 && d.prob(0) < 2e-12);
    }

    #[test]
    fn all_mask_context_is_uniform() {
        let d = &OneHot.predict(&MaskedSequence::new(vec![None, None]), &[1]).unwrap()[0];
        assert_eq!(d, &PriorDistribution::uniform(4));
    }

    #[test]
    fn entropy_examples() {
        let u = PriorDistribution::uniform(30522);
        assert!((u.entropy_bits() - 14.897_562).abs() < 1e-5);
        let half = PriorDistribution::from_probs(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((half.entropy_bits() - 1.0).abs() < 1e-9);
        // one-hot after flooring: (V-1) * 1e-12 * log2(1e12) bits, ~1.2e-10 for V = 4
        let one_hot = PriorDistribution::from_probs(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(one_hot.entropy_bits() < 1e-9);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(PriorDistribution::from_probs(vec![]).is_err());
        assert!(PriorDistribution::from_probs(vec![0.0, 0.0]).is_err());
        assert!(PriorDistribution::from_probs(vec![f64::NAN, 1.0]).is_err());
        assert!(PriorDistribution::from_log_probs(&[f64::NEG_INFINITY; 3]).is_err());
    }

    proptest! {
        #[test]
        fn any_weights_give_valid_distribution(w in prop::collection::vec(0.0f64..1e6, 1..200)) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let d = PriorDistribution::from_probs(w).unwrap();
            prop_assert!((d.probs().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(d.log_probs().iter().all(|x| x.is_finite()));
            let h = d.entropy_bits();
            prop_assert!(h >= 0.0 && h <= (d.len() as f64).log2() + 1e-9);
        }
    }
}
