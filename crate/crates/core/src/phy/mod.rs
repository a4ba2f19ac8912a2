//! Physical layer: Gray-mapped QAM, Rayleigh block fading with AWGN, and
//! coherent symbol/token likelihoods.

mod channel;
mod constellation;
mod likelihood;

pub use channel::{noise_variance_for_snr, sample_fading, snr_db, transmit, ChannelBlock, Fading, LinkBudget};
pub use constellation::Constellation;
pub use likelihood::{symbol_loglik, token_loglik_table, LogLikTable};

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::codec::{CodecError, PacketLayout, TokenId, Vocabulary};
use crate::masker::MaskSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("transmit power must be positive and finite, got {0}")]
    InvalidPower(f64),
    #[error("noise variance must be positive and finite, got {0}")]
    InvalidNoiseVariance(f64),
    #[error("channel block integrity: {0}")]
    Integrity(String),
}

/// Symbols of one token: bits, padded groups, Gray-mapped points.
pub fn modulate_token(id: TokenId, vocab: &Vocabulary, constellation: &Constellation) -> Result<Vec<Complex64>, PhyError> {
    vocab.check(id)?;
    let layout = PacketLayout::new(vocab, constellation.bits_per_symbol())?;
    Ok(layout.symbol_labels(id).map(|l| constellation.point(l)).collect())
}

/// Sends every unmasked token of a packet through the channel.
pub fn transmit_packet<R: Rng + ?Sized>(
    tokens: &[TokenId],
    mask: &MaskSet,
    vocab: &Vocabulary,
    constellation: &Constellation,
    fading: Fading,
    link: LinkBudget,
    rng: &mut R,
) -> Result<ChannelBlock, PhyError> {
    if mask.seq_len() != tokens.len() {
        return Err(PhyError::Integrity(format!(
            "mask covers {} positions, packet has {}",
            mask.seq_len(),
            tokens.len()
        )));
    }
    let received = tokens
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if mask.contains(i) {
                Ok(None)
            } else {
                let s = modulate_token(w, vocab, constellation)?;
                Ok(Some(transmit(&s, fading.gain(i), &link, rng)))
            }
        })
        .collect::<Result<Vec<_>, PhyError>>()?;
    Ok(ChannelBlock { fading, link, received })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{group_label, pack_bits_to_symbol_groups, token_to_bits};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn demodulate_inverts_modulate_for_all_labels() {
        for c in [Constellation::qpsk(), Constellation::qam16()] {
            for label in 0..c.order() as u8 {
                assert_eq!(c.demodulate(c.modulate(&[label])[0]), label);
            }
        }
    }

    #[test]
    fn modulate_token_uses_padded_groups() {
        let vocab = Vocabulary::bert_base_uncased();
        let c = Constellation::qam16();
        let groups = pack_bits_to_symbol_groups(&token_to_bits(7777, &vocab).unwrap(), 4).unwrap();
        let want: Vec<_> = groups.iter().map(|g| c.point(group_label(g))).collect();
        assert_eq!(modulate_token(7777, &vocab, &c).unwrap(), want);
    }

    #[test]
    fn packet_skips_masked_positions() {
        let vocab = Vocabulary::new(256, 0).unwrap();
        let c = Constellation::qam16();
        let mask = MaskSet::from_positions(4, [0, 2]).unwrap();
        let block = transmit_packet(
            &[1, 2, 3, 4],
            &mask,
            &vocab,
            &c,
            Fading::Block(Complex64::new(1.0, 0.0)),
            LinkBudget::new(1.0, 0.1).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(block.received[0].is_none() && block.received[2].is_none());
        assert_eq!(block.symbols_received(), 2 * 2);
    }
}
