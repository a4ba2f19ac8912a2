//! Token id <-> bit vector <-> symbol group mapping.
//!
//! Every token occupies `ceil(log2 V)` bits, serialized MSB-first. The bit
//! vector is split into `ceil(bits / m)` groups of `m` bits for modulation;
//! the tail of the last group is zero-filled when `bits % m != 0`. The pad
//! bits are transmitted and identical for every token.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vocabulary index of a token.
pub type TokenId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("vocabulary size {0} is out of range (need 2 <= V <= 2^31)")]
    InvalidVocabularySize(usize),
    #[error("reserved token id {id} is outside the vocabulary of size {size}")]
    ReservedIdOutOfRange { id: TokenId, size: usize },
    #[error("token id {id} is outside the vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("bit vector has {got} bits, expected {expected}")]
    BitLength { got: usize, expected: usize },
    #[error("bit vector contains a value other than 0 or 1")]
    NotABit,
    #[error("non-vocabulary bit pattern: value {value} >= vocabulary size {size}")]
    NonVocabulary { value: u64, size: usize },
    #[error("unsupported bits per symbol {0} (supported: 2, 4)")]
    UnsupportedBitsPerSymbol(usize),
    #[error("sequence length {got} does not match packet length {expected}")]
    SequenceLength { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    bits_per_token: usize,
    mask_token_id: TokenId,
    pad_token_id: Option<TokenId>,
}

impl Vocabulary {
    pub fn new(size: usize, mask_token_id: TokenId) -> Result<Self, CodecError> {
        if !(2..=(1usize << 31)).contains(&size) {
            return Err(CodecError::InvalidVocabularySize(size));
        }
        if mask_token_id as usize >= size {
            return Err(CodecError::ReservedIdOutOfRange {
                id: mask_token_id,
                size,
            });
        }
        Ok(Self {
            size,
            bits_per_token: ceil_log2(size),
            mask_token_id,
            pad_token_id: None,
        })
    }

    pub fn with_pad_token(mut self, pad_token_id: TokenId) -> Result<Self, CodecError> {
        if pad_token_id as usize >= self.size {
            return Err(CodecError::ReservedIdOutOfRange {
                id: pad_token_id,
                size: self.size,
            });
        }
        self.pad_token_id = Some(pad_token_id);
        Ok(self)
    }

    /// The uncased BERT-base WordPiece vocabulary: `[PAD]` = 0, `[MASK]` = 103.
    pub fn bert_base_uncased() -> Self {
        Self::new(30522, 103)
            .and_then(|v| v.with_pad_token(0))
            .expect("valid BERT vocabulary")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits_per_token(&self) -> usize {
        self.bits_per_token
    }

    pub fn mask_token_id(&self) -> TokenId {
        self.mask_token_id
    }

    pub fn pad_token_id(&self) -> Option<TokenId> {
        self.pad_token_id
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.size
    }

    pub fn check(&self, id: TokenId) -> Result<(), CodecError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(CodecError::TokenOutOfRange {
                id,
                size: self.size,
            })
        }
    }
}

/// `ceil(log2 n)` for `n >= 2`.
fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// An ordered packet of vocabulary token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self, CodecError> {
        for &id in &ids {
            vocab.check(id)?;
        }
        Ok(Self(ids))
    }

    /// Like [`TokenSequence::new`], additionally enforcing the packet length.
    pub fn with_len(ids: Vec<TokenId>, vocab: &Vocabulary, len: usize) -> Result<Self, CodecError> {
        if ids.len() != len {
            return Err(CodecError::SequenceLength {
                got: ids.len(),
                expected: len,
            });
        }
        Self::new(ids, vocab)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

/// MSB-first bits of one token, each entry 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self, CodecError> {
        if bits.iter().any(|&b| b > 1) {
            return Err(CodecError::NotABit);
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn token_to_bits(id: TokenId, vocab: &Vocabulary) -> Result<BitVector, CodecError> {
    vocab.check(id)?;
    let n = vocab.bits_per_token();
    let bits = (0..n).map(|k| ((id >> (n - 1 - k)) & 1) as u8).collect();
    Ok(BitVector(bits))
}

/// Inverse of [`token_to_bits`]. Patterns decoding to a value `>= V` are
/// reported as [`CodecError::NonVocabulary`].
pub fn bits_to_token(bits: &BitVector, vocab: &Vocabulary) -> Result<TokenId, CodecError> {
    if bits.len() != vocab.bits_per_token() {
        return Err(CodecError::BitLength {
            got: bits.len(),
            expected: vocab.bits_per_token(),
        });
    }
    let value = bits
        .bits()
        .iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b));
    if value >= vocab.size() as u64 {
        return Err(CodecError::NonVocabulary {
            value,
            size: vocab.size(),
        });
    }
    Ok(value as TokenId)
}

/// Splits one token's bits into `m`-bit groups, zero-padding the last group.
pub fn pack_bits_to_symbol_groups(bits: &BitVector, m: usize) -> Result<Vec<Vec<u8>>, CodecError> {
    check_bits_per_symbol(m)?;
    Ok(bits
        .bits()
        .chunks(m)
        .map(|chunk| {
            let mut group = chunk.to_vec();
            group.resize(m, 0);
            group
        })
        .collect())
}

/// Integer label of an MSB-first bit group.
pub fn group_label(group: &[u8]) -> u8 {
    group.iter().fold(0u8, |acc, &b| (acc << 1) | b)
}

pub(crate) fn check_bits_per_symbol(m: usize) -> Result<(), CodecError> {
    match m {
        2 | 4 => Ok(()),
        _ => Err(CodecError::UnsupportedBitsPerSymbol(m)),
    }
}

/// Per-token framing for a `(V, m)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLayout {
    pub bits_per_token: usize,
    pub bits_per_symbol: usize,
    pub symbols_per_token: usize,
    pub pad_bits: usize,
}

impl PacketLayout {
    pub fn new(vocab: &Vocabulary, bits_per_symbol: usize) -> Result<Self, CodecError> {
        check_bits_per_symbol(bits_per_symbol)?;
        let bits_per_token = vocab.bits_per_token();
        let symbols_per_token = bits_per_token.div_ceil(bits_per_symbol);
        Ok(Self {
            bits_per_token,
            bits_per_symbol,
            symbols_per_token,
            pad_bits: symbols_per_token * bits_per_symbol - bits_per_token,
        })
    }

    /// Symbol labels of a token, equivalent to
    /// `pack_bits_to_symbol_groups(token_to_bits(id))` mapped through [`group_label`].
    pub fn symbol_labels(&self, id: TokenId) -> impl Iterator<Item = u8> + '_ {
        let padded = u64::from(id) << self.pad_bits;
        let mask = (1u64 << self.bits_per_symbol) - 1;
        (0..self.symbols_per_token).map(move |k| {
            let shift = self.bits_per_symbol * (self.symbols_per_token - 1 - k);
            ((padded >> shift) & mask) as u8
        })
    }

    /// Physical symbols needed to send `unmasked` tokens.
    pub fn symbols_for(&self, unmasked: usize) -> usize {
        unmasked * self.symbols_per_token
    }
}
