use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::PhyError;

/// Transmit power and noise level of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub p_tx: f64,
    pub sigma2: f64,
}

impl LinkBudget {
    pub fn new(p_tx: f64, sigma2: f64) -> Result<Self, PhyError> {
        if !(p_tx > 0.0 && p_tx.is_finite()) {
            return Err(PhyError::InvalidPower(p_tx));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(PhyError::InvalidNoiseVariance(sigma2));
        }
        Ok(Self { p_tx, sigma2 })
    }

    /// Noise variance that yields `snr_db` for the given power and mean fading gain.
    pub fn for_snr_db(snr_db: f64, p_tx: f64, mean_h2: f64) -> Result<Self, PhyError> {
        Self::new(p_tx, noise_variance_for_snr(snr_db, p_tx, mean_h2))
    }

    pub fn amplitude(&self) -> f64 {
        self.p_tx.sqrt()
    }
}

/// `10 log10(p_tx E|h|^2 / sigma^2)`.
pub fn snr_db(p_tx: f64, mean_h2: f64, sigma2: f64) -> f64 {
    10.0 * (p_tx * mean_h2 / sigma2).log10()
}

pub fn noise_variance_for_snr(snr_db: f64, p_tx: f64, mean_h2: f64) -> f64 {
    p_tx * mean_h2 / 10f64.powf(snr_db / 10.0)
}

/// Draws `h ~ CN(0, 1)`.
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    complex_gaussian(rng, 1.0)
}

/// Circular complex Gaussian with total variance `var` (`var/2` per component).
fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

/// `y = h sqrt(p_tx) s + n`, `n ~ CN(0, sigma^2 I)`.
pub fn transmit<R: Rng + ?Sized>(
    symbols: &[Complex64],
    h: Complex64,
    link: &LinkBudget,
    rng: &mut R,
) -> Vec<Complex64> {
    let gain = h * link.amplitude();
    symbols
        .iter()
        .map(|&s| gain * s + complex_gaussian(rng, link.sigma2))
        .collect()
}

/// Fading realisation over one packet.
#[derive(Debug, Clone, PartialEq)]
pub enum Fading {
    /// One coefficient for the whole packet.
    Block(Complex64),
    /// Independent coefficient per token position.
    PerToken(Vec<Complex64>),
}

impl Fading {
    pub fn gain(&self, position: usize) -> Complex64 {
        match self {
            Fading::Block(h) => *h,
            Fading::PerToken(hs) => hs[position],
        }
    }
}

/// Everything the receiver holds about one packet: CSI, link budget and the
/// received samples of each transmitted token (`None` where masked).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBlock {
    pub fading: Fading,
    pub link: LinkBudget,
    pub received: Vec<Option<Vec<Complex64>>>,
}

impl ChannelBlock {
    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }

    pub fn symbols_received(&self) -> usize {
        self.received.iter().flatten().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn snr_examples() {
        assert!((snr_db(1.0, 1.0, 1.0) - 0.0).abs() < 1e-12);
        assert!((snr_db(1.0, 1.0, 0.1) - 10.0).abs() < 1e-12);
        assert!((snr_db(2.0, 0.5, 0.1) - 10.0).abs() < 1e-12);
        let n = noise_variance_for_snr(7.5, 2.0, 0.8);
        assert!((snr_db(2.0, 0.8, n) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn link_budget_rejects_nonpositive() {
        assert!(LinkBudget::new(0.0, 1.0).is_err());
        assert!(LinkBudget::new(1.0, 0.0).is_err());
        assert!(LinkBudget::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn noiseless_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let link = LinkBudget::new(1.0, 1e-30).unwrap();
        let s = vec![Complex64::new(0.3, -0.7), Complex64::new(-1.0, 0.1)];
        let y = transmit(&s, Complex64::new(1.0, 0.0), &link, &mut rng);
        for (a, b) in s.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_channel_is_pure_noise() {
        let link = LinkBudget::new(1.0, 0.5).unwrap();
        let s = vec![Complex64::new(1.0, 1.0); 8];
        let y = transmit(&s, Complex64::new(0.0, 0.0), &link, &mut ChaCha8Rng::seed_from_u64(9));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in y {
            assert_eq!(v, complex_gaussian(&mut rng, 0.5));
        }
    }

    #[test]
    fn noise_variance_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let link = LinkBudget::new(2.0, 0.3).unwrap();
        let h = Complex64::new(0.4, -0.9);
        let s = vec![Complex64::new(0.5, 0.5); 100_000];
        let y = transmit(&s, h, &link, &mut rng);
        let gain = h * link.amplitude();
        let var = y.iter().zip(&s).map(|(y, s)| (y - gain * s).norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((var / 0.3 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn fading_power_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let p = (0..n).map(|_| sample_fading(&mut rng).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 1.0).abs() < 0.02, "{p}");
        let a = sample_fading(&mut ChaCha8Rng::seed_from_u64(77));
        let b = sample_fading(&mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn fading_magnitude_is_rayleigh_ks() {
        // |h| with h ~ CN(0,1) is Rayleigh(1/sqrt 2): F(x) = 1 - exp(-x^2).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let mut mags: Vec<f64> = (0..n).map(|_| sample_fading(&mut rng).norm()).collect();
        mags.sort_by(f64::total_cmp);
        let d = mags
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = 1.0 - (-x * x).exp();
                let lo = k as f64 / n as f64;
                let hi = (k + 1) as f64 / n as f64;
                (f - lo).abs().max((hi - f).abs())
            })
            .fold(0.0, f64::max);
        // two-sided critical value at alpha = 0.01
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} >= {crit}");
    }
}
