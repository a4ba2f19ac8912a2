use num_complex::Complex64;

use crate::codec::{check_bits_per_symbol, CodecError};

/// Gray-labeled square QAM with unit mean energy.
///
/// Label bits are MSB-first; the first `m/2` bits select the in-phase level
/// and the remaining `m/2` bits the quadrature level.
///
/// | m | per-axis map (label -> level)             | scale  |
/// |---|-------------------------------------------|--------|
/// | 2 | 0 -> +1, 1 -> -1                          | 1/sqrt(2)  |
/// | 4 | 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3    | 1/sqrt(10) |
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

const QPSK_AXIS: [f64; 2] = [1.0, -1.0];
const QAM16_AXIS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

impl Constellation {
    pub fn new(bits_per_symbol: usize) -> Result<Self, CodecError> {
        check_bits_per_symbol(bits_per_symbol)?;
        let (axis, scale): (&[f64], f64) = match bits_per_symbol {
            2 => (&QPSK_AXIS, 2f64.sqrt().recip()),
            _ => (&QAM16_AXIS, 10f64.sqrt().recip()),
        };
        let half = bits_per_symbol / 2;
        let axis_mask = (1usize << half) - 1;
        let points = (0..1usize << bits_per_symbol)
            .map(|label| {
                let i = axis[label >> half];
                let q = axis[label & axis_mask];
                Complex64::new(i * scale, q * scale)
            })
            .collect();
        let c = Self {
            bits_per_symbol,
            points,
        };
        assert!((c.mean_energy() - 1.0).abs() < 1e-12);
        assert!(axis_is_gray(axis));
        Ok(c)
    }

    pub fn qpsk() -> Self {
        Self::new(2).expect("qpsk")
    }

    pub fn qam16() -> Self {
        Self::new(4).expect("16-qam")
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Points indexed by label.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: u8) -> Complex64 {
        self.points[label as usize]
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Maps group labels (see [`crate::codec::group_label`]) to points.
    pub fn modulate(&self, labels: &[u8]) -> Vec<Complex64> {
        labels.iter().map(|&l| self.point(l)).collect()
    }

    /// Hard minimum-distance decision.
    pub fn demodulate(&self, y: Complex64) -> u8 {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (label, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = label;
            }
        }
        best as u8
    }
}

/// Neighbouring levels along the axis differ in exactly one label bit.
fn axis_is_gray(axis: &[f64]) -> bool {
    let mut by_level: Vec<(f64, usize)> = axis.iter().copied().zip(0..).collect();
    by_level.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_level
        .windows(2)
        .all(|w| (w[0].1 ^ w[1].1).count_ones() == 1)
}
