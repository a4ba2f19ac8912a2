use std::sync::Arc;

use super::{ContextModel, PriorError, PriorQuery, RawDistribution};
use crate::codec::TokenId;
use crate::sidecar::{decode_log_probs, MlmQuery, MlmRequest, SidecarClient, SidecarError, PROTOCOL_VERSION};

/// Context model served by the sidecar's `/v1/mlm` endpoint.
#[derive(Debug, Clone)]
pub struct ExternalModel {
    client: Arc<SidecarClient>,
    vocab_size: usize,
    mask_token_id: TokenId,
    top_k: usize,
}

impl ExternalModel {
    pub fn new(client: Arc<SidecarClient>, vocab_size: usize, mask_token_id: TokenId, top_k: usize) -> Self {
        Self {
            client,
            vocab_size,
            mask_token_id,
            top_k,
        }
    }

    /// Builds the model from the sidecar's advertised vocabulary.
    pub fn connect(client: Arc<SidecarClient>, top_k: usize) -> Result<Self, PriorError> {
        let health = client.health().map_err(PriorError::from)?;
        Ok(Self::new(client, health.vocab_size, health.mask_token_id, top_k))
    }

    pub fn mask_token_id(&self) -> TokenId {
        self.mask_token_id
    }
}

impl From<SidecarError> for PriorError {
    fn from(e: SidecarError) -> Self {
        match e {
            SidecarError::Transport(m) => PriorError::Transport(m),
            other => PriorError::Protocol(other.to_string()),
        }
    }
}

impl ContextModel for ExternalModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn infer(&self, queries: &[PriorQuery]) -> Result<Vec<RawDistribution>, PriorError> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(self.client.config().max_batch.max(1)) {
            let request = MlmRequest {
                version: PROTOCOL_VERSION.into(),
                top_k: self.top_k,
                queries: chunk
                    .iter()
                    .map(|q| MlmQuery {
                        ids: q.context.to_ids(self.mask_token_id),
                        positions: vec![q.position],
                    })
                    .collect(),
            };
            let response = self.client.mlm(&request)?;
            if response.vocab_size != self.vocab_size {
                return Err(PriorError::VocabMismatch {
                    got: response.vocab_size,
                    expected: self.vocab_size,
                });
            }
            for per_query in &response.results {
                let lp = decode_log_probs(&per_query[0].payload, self.vocab_size)?;
                out.push(RawDistribution::LogProbs(lp));
            }
        }
        Ok(out)
    }
}
