use std::collections::HashMap;

use super::{ContextModel, PriorError, PriorQuery, RawDistribution};
use crate::codec::TokenId;

/// Laplace-smoothed bigram model used as a lightweight stand-in for a masked
/// language model.
///
/// The prediction at position `i` is the renormalized product of the forward
/// estimate `P(w_i | w_{i-1})` and the backward estimate `P(w_i | w_{i+1})`.
/// A neighbour that is masked or outside the sequence contributes nothing.
#[derive(Debug, Clone)]
pub struct BigramModel {
    vocab_size: usize,
    alpha: f64,
    /// `forward[a][b]` = count of `a b`.
    forward: HashMap<TokenId, Vec<(TokenId, u32)>>,
    forward_totals: HashMap<TokenId, u64>,
    /// `backward[b][a]` = count of `a b`.
    backward: HashMap<TokenId, Vec<(TokenId, u32)>>,
    backward_totals: HashMap<TokenId, u64>,
}

/// Trains an n-gram context model. Only `order == 2` is supported.
pub fn train_ngram<S: AsRef<[TokenId]>>(
    corpus: &[S],
    order: usize,
    alpha: f64,
    vocab_size: usize,
) -> Result<BigramModel, PriorError> {
    if order != 2 {
        return Err(PriorError::UnsupportedOrder(order));
    }
    BigramModel::train(corpus, vocab_size, alpha)
}

impl BigramModel {
    pub fn train<S: AsRef<[TokenId]>>(corpus: &[S], vocab_size: usize, alpha: f64) -> Result<Self, PriorError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(PriorError::InvalidSmoothing(alpha));
        }
        if corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(PriorError::EmptyCorpus);
        }
        let mut pairs: HashMap<(TokenId, TokenId), u32> = HashMap::new();
        for s in corpus {
            let s = s.as_ref();
            if let Some(&id) = s.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(PriorError::TokenOutOfRange { id, size: vocab_size });
            }
            for w in s.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += 1;
            }
        }
        let mut forward: HashMap<TokenId, Vec<(TokenId, u32)>> = HashMap::new();
        let mut backward: HashMap<TokenId, Vec<(TokenId, u32)>> = HashMap::new();
        let mut forward_totals: HashMap<TokenId, u64> = HashMap::new();
        let mut backward_totals: HashMap<TokenId, u64> = HashMap::new();
        let mut sorted: Vec<_> = pairs.into_iter().collect();
        sorted.sort_unstable();
        for ((a, b), c) in sorted {
            forward.entry(a).or_default().push((b, c));
            backward.entry(b).or_default().push((a, c));
            *forward_totals.entry(a).or_default() += u64::from(c);
            *backward_totals.entry(b).or_default() += u64::from(c);
        }
        Ok(Self {
            vocab_size,
            alpha,
            forward,
            forward_totals,
            backward,
            backward_totals,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Smoothed `P(next | prev)` or `P(prev | next)` row, multiplied into `acc`.
    fn apply(
        &self,
        acc: &mut [f64],
        counts: &HashMap<TokenId, Vec<(TokenId, u32)>>,
        totals: &HashMap<TokenId, u64>,
        given: TokenId,
    ) {
        let total = totals.get(&given).copied().unwrap_or(0) as f64;
        let denom = total + self.alpha * self.vocab_size as f64;
        let row = counts.get(&given).map(Vec::as_slice).unwrap_or(&[]);
        let mut next = 0;
        for (v, a) in acc.iter_mut().enumerate() {
            let c = match row.get(next) {
                Some(&(id, c)) if id as usize == v => {
                    next += 1;
                    f64::from(c)
                }
                _ => 0.0,
            };
            *a *= (c + self.alpha) / denom;
        }
    }

    fn distribution(&self, query: &PriorQuery) -> Vec<f64> {
        let mut p = vec![1.0; self.vocab_size];
        let i = query.position;
        if let Some(prev) = i.checked_sub(1).and_then(|j| query.context.get(j)) {
            self.apply(&mut p, &self.forward, &self.forward_totals, prev);
        }
        if let Some(next) = query.context.get(i + 1) {
            self.apply(&mut p, &self.backward, &self.backward_totals, next);
        }
        p
    }
}

impl ContextModel for BigramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
        Ok(queries
            .iter()
            .map(|q| RawDistribution::Probs(self.distribution(q)))
            .collect())
    }
}
