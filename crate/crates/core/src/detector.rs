//! Receiver-side token detection.
//!
//! [`ml_detect`] picks each position's likelihood argmax. [`detect`] runs the
//! iterative MAP rule: iteration 1 uses a uniform prior (so it equals ML on
//! transmitted positions) and leaves masked positions as `[MASK]`; every
//! later iteration scores token `v` at position `i` by
//!
//! ```text
//! log P(y_i | v) + log P(v | previous estimate with position i masked)
//! ```
//!
//! using the previous iteration's estimate for all positions at once. Masked
//! positions keep their uniform likelihood row in every iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TokenId;
use crate::phy::LogLikTable;
use crate::prior::{argmax_lowest, ContextModel, MaskedSequence, PriorDistribution, PriorError, PriorQuery};

/// Per-position likelihood argmax, lowest id on ties.
pub fn ml_detect(table: &LogLikTable) -> Vec<TokenId> {
    (0..table.len())
        .map(|i| argmax_lowest(table.row(i)) as TokenId)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// All positions condition on the previous iteration's estimate.
    #[default]
    Jacobi,
    /// Positions update in index order, each seeing earlier updates of the
    /// same iteration.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub max_iters: usize,
    pub update: UpdateRule,
    /// Exponent on the prior; 1.0 is the plain product of likelihood and prior.
    pub prior_weight: f64,
    /// Stop once an iteration reproduces the previous estimate.
    pub early_stop: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_iters: 6,
            update: UpdateRule::Jacobi,
            prior_weight: 1.0,
            early_stop: true,
        }
    }
}

impl DetectorConfig {
    pub fn with_iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }
}

/// Estimate after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub estimate: MaskedSequence,
    /// Winning posterior log-score per position, relative to the row maxima
    /// of likelihood and prior (`None` where the estimate is `[MASK]`).
    pub scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionState {
    pub estimate: MaskedSequence,
    pub iteration: usize,
    pub trace: Vec<IterationRecord>,
    /// Iteration at which the estimate stopped changing, if it did.
    pub converged_at: Option<usize>,
}

impl DetectionState {
    /// Estimate after iteration `l`, carrying a fixed point forward past the
    /// last executed iteration.
    pub fn estimate_at(&self, l: usize) -> &MaskedSequence {
        let idx = l.clamp(1, self.trace.len()) - 1;
        &self.trace[idx].estimate
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error("likelihood table has {table} positions, mask covers {mask}")]
    LengthMismatch { table: usize, mask: usize },
    #[error("model vocabulary {model} differs from table vocabulary {table}")]
    VocabMismatch { model: usize, table: usize },
    #[error("context model failed during iteration {}: {source}", partial.iteration + 1)]
    Model {
        source: PriorError,
        /// Iterations completed before the failure.
        partial: Box<DetectionState>,
    },
}

/// `argmax_v loglik[v] + w (logprior[v] - max logprior)`, lowest id on ties.
///
/// Subtracting the prior maximum leaves the argmax unchanged and makes a
/// uniform prior contribute exactly zero.
fn map_decision(loglik: &[f64], prior: &PriorDistribution, weight: f64) -> (TokenId, f64) {
    let lp = prior.log_probs();
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (v, (&ll, &p)) in loglik.iter().zip(lp).enumerate() {
        let s = ll + weight * (p - max);
        if s > best_score {
            best_score = s;
            best = v;
        }
    }
    (best as TokenId, best_score)
}

/// Iterative MAP detection.
///
/// `masked` flags the positions the transmitter omitted; their table rows
/// must be uniform.
pub fn detect<M: ContextModel + ?Sized>(
    table: &LogLikTable,
    model: &M,
    masked: &crate::masker::MaskSet,
    config: &DetectorConfig,
) -> Result<DetectionState, DetectError> {
    if config.max_iters == 0 {
        return Err(DetectError::NoIterations);
    }
    let t = table.len();
    if masked.seq_len() != t {
        return Err(DetectError::LengthMismatch {
            table: t,
            mask: masked.seq_len(),
        });
    }
    if model.vocab_size() != table.vocab_size() {
        return Err(DetectError::VocabMismatch {
            model: model.vocab_size(),
            table: table.vocab_size(),
        });
    }

    // Iteration 1: uniform prior, masked positions stay [MASK].
    let mut first = Vec::with_capacity(t);
    let mut scores = Vec::with_capacity(t);
    for i in 0..t {
        if masked.contains(i) {
            first.push(None);
            scores.push(None);
        } else {
            let v = argmax_lowest(table.row(i));
            first.push(Some(v as TokenId));
            scores.push(Some(table.row(i)[v]));
        }
    }
    let mut state = DetectionState {
        estimate: MaskedSequence::new(first),
        iteration: 1,
        trace: Vec::new(),
        converged_at: None,
    };
    state.trace.push(IterationRecord {
        iteration: 1,
        estimate: state.estimate.clone(),
        scores,
    });

    for l in 2..=config.max_iters {
        let previous = state.estimate.clone();
        let step = match config.update {
            UpdateRule::Jacobi => jacobi_step(table, model, &previous, config.prior_weight),
            UpdateRule::GaussSeidel => gauss_seidel_step(table, model, &previous, config.prior_weight),
        };
        let (next, scores) = match step {
            Ok(r) => r,
            Err(source) => {
                return Err(DetectError::Model {
                    source,
                    partial: Box::new(state),
                })
            }
        };
        state.estimate = next;
        state.iteration = l;
        state.trace.push(IterationRecord {
            iteration: l,
            estimate: state.estimate.clone(),
            scores,
        });
        if state.estimate == previous {
            state.converged_at.get_or_insert(l);
            if config.early_stop {
                break;
            }
        } else {
            state.converged_at = None;
        }
    }
    Ok(state)
}

type Step = (MaskedSequence, Vec<Option<f64>>);

fn jacobi_step<M: ContextModel + ?Sized>(
    table: &LogLikTable,
    model: &M,
    previous: &MaskedSequence,
    weight: f64,
) -> Result<Step, PriorError> {
    let queries: Vec<PriorQuery> = (0..table.len())
        .map(|i| PriorQuery::leave_one_out(previous, i))
        .collect();
    let priors = model.predict_batch(&queries)?;
    let (ids, scores) = priors
        .iter()
        .enumerate()
        .map(|(i, prior)| {
            let (v, s) = map_decision(table.row(i), prior, weight);
            (Some(v), Some(s))
        })
        .unzip();
    Ok((MaskedSequence::new(ids), scores))
}

fn gauss_seidel_step<M: ContextModel + ?Sized>(
    table: &LogLikTable,
    model: &M,
    previous: &MaskedSequence,
    weight: f64,
) -> Result<Step, PriorError> {
    let mut current = previous.clone();
    let mut scores = Vec::with_capacity(table.len());
    for i in 0..table.len() {
        let prior = model.predict_batch(&[PriorQuery::leave_one_out(&current, i)])?;
        let (v, s) = map_decision(table.row(i), &prior[0], weight);
        current.set(i, Some(v));
        scores.push(Some(s));
    }
    Ok((current, scores))
}
