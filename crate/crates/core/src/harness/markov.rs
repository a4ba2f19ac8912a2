use rand::seq::index::sample;
use rand::Rng;

use super::HarnessError;
use crate::codec::TokenId;

/// Synthetic order-1 Markov source over a small vocabulary.
///
/// Each state moves to `successors` distinct random states with geometric
/// weights `w_j ∝ exp(-beta j)`; `beta` is tuned so every row has the
/// requested entropy.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    vocab_size: usize,
    /// Per state: successor ids and cumulative probabilities.
    rows: Vec<(Vec<TokenId>, Vec<f64>)>,
    entropy_bits: f64,
}

fn entropy_bits(w: &[f64]) -> f64 {
    -w.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

fn geometric(k: usize, beta: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|j| (-beta * j as f64).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Weights over `k` outcomes with entropy `target` bits (bisection on `beta`).
fn weights_for_entropy(k: usize, target: f64) -> Vec<f64> {
    if target >= (k as f64).log2() {
        return vec![1.0 / k as f64; k];
    }
    let (mut lo, mut hi) = (0.0f64, 50.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if entropy_bits(&geometric(k, mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    geometric(k, 0.5 * (lo + hi))
}

impl MarkovChain {
    pub fn new<R: Rng + ?Sized>(
        vocab_size: usize,
        successors: usize,
        entropy_bits_target: f64,
        rng: &mut R,
    ) -> Result<Self, HarnessError> {
        if vocab_size < 2 || successors == 0 || successors > vocab_size {
            return Err(HarnessError::Config(format!(
                "need 1 <= successors ({successors}) <= vocab_size ({vocab_size})"
            )));
        }
        if entropy_bits_target.is_nan() || entropy_bits_target < 0.0 {
            return Err(HarnessError::Config("entropy must be non-negative".into()));
        }
        let weights = weights_for_entropy(successors, entropy_bits_target);
        let h = entropy_bits(&weights);
        let cumulative: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let rows = (0..vocab_size)
            .map(|_| {
                let next: Vec<TokenId> = sample(rng, vocab_size, successors)
                    .into_iter()
                    .map(|x| x as TokenId)
                    .collect();
                (next, cumulative.clone())
            })
            .collect();
        Ok(Self {
            vocab_size,
            rows,
            entropy_bits: h,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Entropy of every transition row, in bits.
    pub fn transition_entropy_bits(&self) -> f64 {
        self.entropy_bits
    }

    /// `P(next | prev)`.
    pub fn transition_prob(&self, prev: TokenId, next: TokenId) -> f64 {
        let (ids, cum) = &self.rows[prev as usize];
        ids.iter()
            .position(|&x| x == next)
            .map_or(0.0, |j| cum[j] - if j == 0 { 0.0 } else { cum[j - 1] })
    }

    fn step<R: Rng + ?Sized>(&self, state: TokenId, rng: &mut R) -> TokenId {
        let (ids, cum) = &self.rows[state as usize];
        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
        let j = cum.partition_point(|&c| c <= u).min(ids.len() - 1);
        ids[j]
    }

    /// A sequence starting from a uniformly random state.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = rng.random_range(0..self.vocab_size) as TokenId;
        out.push(s);
        for _ in 1..len {
            s = self.step(s, rng);
            out.push(s);
        }
        out
    }
}
