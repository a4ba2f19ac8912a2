use num_complex::Complex64;

use super::{ChannelBlock, Constellation, LinkBudget, PhyError};
use crate::codec::{PacketLayout, TokenId, Vocabulary};
use crate::masker::MaskSet;

/// Natural-log symbol likelihoods `log P(y | s)` for every constellation point,
/// indexed by label.
pub fn symbol_loglik(y: Complex64, h: Complex64, link: &LinkBudget, constellation: &Constellation) -> Vec<f64> {
    let mut out = vec![0.0; constellation.order()];
    symbol_loglik_into(y, h, link, constellation, &mut out);
    out
}

fn symbol_loglik_into(y: Complex64, h: Complex64, link: &LinkBudget, constellation: &Constellation, out: &mut [f64]) {
    let gain = h * link.amplitude();
    let norm = -(std::f64::consts::PI * link.sigma2).ln();
    for (o, &s) in out.iter_mut().zip(constellation.points()) {
        *o = norm - (y - gain * s).norm_sqr() / link.sigma2;
    }
}

/// Token-level log-likelihoods `log P(y_i | w_i = v)`, one row per position.
///
/// Rows are stored shifted so that each row maximum is 0; the shift is kept
/// in `offsets` so [`LogLikTable::raw`] recovers the absolute value.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikTable {
    vocab_size: usize,
    values: Vec<f64>,
    offsets: Vec<f64>,
    masked: Vec<bool>,
}

impl LogLikTable {
    /// Builds a table from absolute log-likelihood rows.
    pub fn from_rows(rows: Vec<Vec<f64>>, masked: Vec<bool>) -> Result<Self, PhyError> {
        let vocab_size = rows.first().map_or(0, Vec::len);
        if masked.len() != rows.len() {
            return Err(PhyError::Integrity(format!(
                "{} rows but {} mask flags",
                rows.len(),
                masked.len()
            )));
        }
        let mut values = Vec::with_capacity(rows.len() * vocab_size);
        let mut offsets = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != vocab_size || vocab_size == 0 {
                return Err(PhyError::Integrity(format!("row {i} has width {}", row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(PhyError::Integrity(format!("row {i} has non-finite entries")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            offsets.push(max);
            values.extend(row.iter().map(|x| x - max));
        }
        Ok(Self {
            vocab_size,
            values,
            offsets,
            masked,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Max-normalized row (maximum entry is exactly 0).
    pub fn row(&self, position: usize) -> &[f64] {
        &self.values[position * self.vocab_size..(position + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, position: usize) -> &mut [f64] {
        &mut self.values[position * self.vocab_size..(position + 1) * self.vocab_size]
    }

    pub fn offset(&self, position: usize) -> f64 {
        self.offsets[position]
    }

    /// Absolute `log P(y_i | v)`.
    pub fn raw(&self, position: usize, token: TokenId) -> f64 {
        self.row(position)[token as usize] + self.offsets[position]
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.masked[position]
    }
}

/// Computes the token log-likelihood table for a received packet.
///
/// Each unmasked row is built from a `K x 2^m` table of symbol
/// log-likelihoods; row entry `v` is the sum of the `K` entries selected by
/// `v`'s symbol labels. Masked rows carry `log(1/V)` everywhere.
pub fn token_loglik_table(
    block: &ChannelBlock,
    vocab: &Vocabulary,
    constellation: &Constellation,
    mask: &MaskSet,
) -> Result<LogLikTable, PhyError> {
    let layout = PacketLayout::new(vocab, constellation.bits_per_symbol())?;
    let t = block.len();
    if mask.seq_len() != t {
        return Err(PhyError::Integrity(format!(
            "mask covers {} positions, block has {t}",
            mask.seq_len()
        )));
    }
    let v_size = vocab.size();
    let k_sym = layout.symbols_per_token;
    let order = constellation.order();

    // Labels of every token, flattened V x K; shared by all positions.
    let labels: Vec<u8> = (0..v_size as TokenId).flat_map(|v| layout.symbol_labels(v)).collect();

    let uniform = -(v_size as f64).ln();
    let mut values = Vec::with_capacity(t * v_size);
    let mut offsets = Vec::with_capacity(t);
    let mut masked = Vec::with_capacity(t);
    let mut lookup = vec![0.0; k_sym * order];
    let mut row = vec![0.0; v_size];

    for i in 0..t {
        if mask.contains(i) {
            values.extend(std::iter::repeat_n(0.0, v_size));
            offsets.push(uniform);
            masked.push(true);
            continue;
        }
        let samples = block.received[i]
            .as_ref()
            .ok_or_else(|| PhyError::Integrity(format!("no samples at unmasked position {i}")))?;
        if samples.len() != k_sym {
            return Err(PhyError::Integrity(format!(
                "position {i} has {} samples, expected {k_sym}",
                samples.len()
            )));
        }
        let h = block.fading.gain(i);
        for (k, &y) in samples.iter().enumerate() {
            symbol_loglik_into(y, h, &block.link, constellation, &mut lookup[k * order..(k + 1) * order]);
        }
        let mut max = f64::NEG_INFINITY;
        for (v, r) in row.iter_mut().enumerate() {
            let lab = &labels[v * k_sym..(v + 1) * k_sym];
            let s: f64 = lab
                .iter()
                .enumerate()
                .map(|(k, &l)| lookup[k * order + l as usize])
                .sum();
            *r = s;
            max = max.max(s);
        }
        if !max.is_finite() {
            return Err(PhyError::Integrity(format!("non-finite likelihood at position {i}")));
        }
        values.extend(row.iter().map(|x| x - max));
        offsets.push(max);
        masked.push(false);
    }

    Ok(LogLikTable {
        vocab_size: v_size,
        values,
        offsets,
        masked,
    })
}
