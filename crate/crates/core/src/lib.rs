//! Context-aware token communication over a simulated Rayleigh-fading QAM link.
//!
//! Tokens are serialized to bits ([`codec`]), Gray-mapped to QAM symbols and
//! sent through a block-fading channel ([`phy`]). The receiver turns the
//! samples into token log-likelihoods and detects the packet either by plain
//! maximum likelihood or iteratively, combining likelihoods with a contextual
//! prior ([`prior`], [`detector`]). The transmitter may skip predictable
//! tokens to save symbols ([`masker`]). [`harness`] drives Monte Carlo
//! experiments over SNR sweeps and writes CSV results.

pub mod codec;
pub mod detector;
pub mod harness;
pub mod masker;
pub mod phy;
pub mod prior;
pub mod sidecar;

pub use codec::{PacketLayout, TokenId, TokenSequence, Vocabulary};
pub use detector::{detect, ml_detect, DetectionState, DetectorConfig, UpdateRule};
pub use masker::{context_aware_mask, random_mask, EntropyRecord, MaskSet, MaskingStrategy};
pub use phy::{ChannelBlock, Constellation, Fading, LinkBudget, LogLikTable};
pub use prior::{BigramModel, ContextModel, ExternalModel, MaskedSequence, PriorDistribution, UniformModel};
