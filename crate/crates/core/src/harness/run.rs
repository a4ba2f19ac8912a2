use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{DetectorKind, ExperimentConfig, FadingMode, MaskingMode, ModelKind};
use super::corpus::load_corpus;
use super::results::{summarize, write_results, write_summary, ResultRow, SummaryRow};
use super::HarnessError;
use crate::codec::{PacketLayout, TokenId, TokenSequence, Vocabulary};
use crate::detector::{detect, ml_detect};
use crate::masker::{context_aware_mask, random_mask, MaskSet};
use crate::phy::{sample_fading, token_loglik_table, transmit_packet, Constellation, Fading, LinkBudget};
use crate::prior::{BigramModel, ContextModel, ExternalModel, MaskedSequence, UniformModel};
use crate::sidecar::SidecarClient;

/// Accuracy of one detector iteration against the transmitted packet.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub token_acc: f64,
    pub masked_recovery_acc: Option<f64>,
    pub exact_match: bool,
    pub sim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub snr_db: f64,
    pub trial: usize,
    pub mask_len: usize,
    pub symbols_tx: usize,
    pub iterations: Vec<IterationMetrics>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: String,
    pub trials: Vec<TrialResult>,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Seed for trial `trial` of a run seeded with `seed`, on stream `stream`.
///
/// Trials share seeds across SNR points so every sweep point sees the same
/// packets, masks and fading draws.
pub fn trial_seed(seed: u64, trial: usize, stream: u64) -> u64 {
    let mut z = seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MASK_STREAM: u64 = 1;
const CHANNEL_STREAM: u64 = 2;

/// A prepared experiment: corpus loaded, context model ready.
pub struct Experiment {
    config: ExperimentConfig,
    vocab: Vocabulary,
    constellation: Constellation,
    layout: PacketLayout,
    packets: Vec<TokenSequence>,
    model: Arc<dyn ContextModel>,
    sidecar: Option<Arc<SidecarClient>>,
    run_id: String,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("run_id", &self.run_id)
            .field("packets", &self.packets.len())
            .finish_non_exhaustive()
    }
}

/// Hash of the config, ignoring where results are written.
fn run_id(config: &ExperimentConfig) -> String {
    let mut keyed = config.clone();
    keyed.output = PathBuf::new();
    let digest = Sha256::digest(keyed.to_toml_string().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

impl Experiment {
    /// Loads the corpus and builds the context model named by the config.
    /// Fails before any trial if the sidecar is needed but unreachable.
    pub fn prepare(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let vocab = Vocabulary::new(config.vocab_size, config.mask_token_id())?;
        let sidecar = if config.needs_sidecar() {
            let client = Arc::new(SidecarClient::new(config.sidecar.clone()));
            let health = client.health()?;
            if health.vocab_size != config.vocab_size {
                return Err(HarnessError::Config(format!(
                    "sidecar vocabulary {} differs from vocab_size {}",
                    health.vocab_size, config.vocab_size
                )));
            }
            Some(client)
        } else {
            None
        };
        let packets = load_corpus(
            &config.corpus,
            config.corpus_format,
            &vocab,
            config.packet_len,
            sidecar.as_deref(),
        )?;
        let model: Arc<dyn ContextModel> = match config.model.kind {
            ModelKind::Uniform => Arc::new(UniformModel::new(config.vocab_size)),
            ModelKind::Ngram => {
                let train = match &config.model.train_corpus {
                    Some(path) => load_corpus(path, config.corpus_format, &vocab, config.packet_len, sidecar.as_deref())?,
                    None => packets.clone(),
                };
                Arc::new(BigramModel::train(&train.iter().map(TokenSequence::ids).collect::<Vec<_>>(), config.vocab_size, config.model.alpha)?)
            }
            ModelKind::External => Arc::new(ExternalModel::new(
                Arc::clone(sidecar.as_ref().expect("sidecar prepared")),
                config.vocab_size,
                config.mask_token_id(),
                config.model.top_k,
            )),
        };
        Self::from_parts(config, packets, model, sidecar)
    }

    /// Builds an experiment from already-loaded packets and model.
    pub fn from_parts(
        config: ExperimentConfig,
        packets: Vec<TokenSequence>,
        model: Arc<dyn ContextModel>,
        sidecar: Option<Arc<SidecarClient>>,
    ) -> Result<Self, HarnessError> {
        config.validate()?;
        let vocab = Vocabulary::new(config.vocab_size, config.mask_token_id())?;
        let constellation = Constellation::new(config.bits_per_symbol)?;
        let layout = PacketLayout::new(&vocab, config.bits_per_symbol)?;
        if packets.is_empty() || packets.iter().any(|p| p.len() != config.packet_len) {
            return Err(HarnessError::Config(format!("need non-empty packets of length {}", config.packet_len)));
        }
        if model.vocab_size() != config.vocab_size {
            return Err(HarnessError::Config("context model vocabulary differs from vocab_size".into()));
        }
        if config.sim.enabled && sidecar.is_none() {
            return Err(HarnessError::Config("sim.enabled needs the sidecar".into()));
        }
        let run_id = run_id(&config);
        Ok(Self {
            config,
            vocab,
            constellation,
            layout,
            packets,
            model,
            sidecar,
            run_id,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn packets(&self) -> &[TokenSequence] {
        &self.packets
    }

    fn mask_for(&self, packet: &TokenSequence, trial: usize) -> Result<MaskSet, HarnessError> {
        let m = &self.config.masking;
        Ok(match m.mode {
            MaskingMode::None => MaskSet::empty(packet.len()),
            MaskingMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(self.config.seed, trial, MASK_STREAM));
                random_mask(packet, m.ratio, &mut rng)?
            }
            MaskingMode::ContextAware => context_aware_mask(packet, m.ratio, self.model.as_ref(), m.strategy)?,
        })
    }

    fn sim(&self, reference: &TokenSequence, estimate: &MaskedSequence) -> Option<f64> {
        let client = self.sidecar.as_ref()?;
        let a = client.detokenize(reference.ids()).ok()?;
        let b = client.detokenize(&estimate.to_ids(self.vocab.mask_token_id())).ok()?;
        client.embed_sim(&a, &b).ok()
    }

    /// Runs one packet at one SNR point.
    pub fn run_trial(&self, snr_db: f64, trial: usize) -> Result<TrialResult, HarnessError> {
        let started = Instant::now();
        let cfg = &self.config;
        let packet = &self.packets[trial % self.packets.len()];
        let mask = self.mask_for(packet, trial)?;

        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, trial, CHANNEL_STREAM));
        let fading = match cfg.fading {
            FadingMode::Block => Fading::Block(sample_fading(&mut rng)),
            FadingMode::PerToken => Fading::PerToken((0..packet.len()).map(|_| sample_fading(&mut rng)).collect()),
        };
        let link = LinkBudget::for_snr_db(snr_db, cfg.p_tx, 1.0)?;
        let block = transmit_packet(packet.ids(), &mask, &self.vocab, &self.constellation, fading, link, &mut rng)?;
        let table = token_loglik_table(&block, &self.vocab, &self.constellation, &mask)?;

        let estimates: Vec<MaskedSequence> = match cfg.detector.kind {
            DetectorKind::Ml => vec![MaskedSequence::unmasked(&ml_detect(&table))],
            DetectorKind::Iterative => {
                let state = detect(&table, self.model.as_ref(), &mask, &cfg.detector.detector_config())?;
                (1..=cfg.detector.max_iters).map(|l| state.estimate_at(l).clone()).collect()
            }
        };

        let mut iterations: Vec<IterationMetrics> = Vec::with_capacity(estimates.len());
        for (k, est) in estimates.iter().enumerate() {
            let sim = if !cfg.sim.enabled {
                None
            } else if k > 0 && estimates[k - 1] == *est {
                iterations[k - 1].sim
            } else {
                self.sim(packet, est)
            };
            iterations.push(score(packet.ids(), est, &mask, k + 1, sim));
        }

        Ok(TrialResult {
            snr_db,
            trial,
            mask_len: mask.len(),
            symbols_tx: self.layout.symbols_for(packet.len() - mask.len()),
            iterations,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs every (SNR, trial) pair in parallel; results come back in sweep order.
    pub fn run(&self) -> Result<RunOutput, HarnessError> {
        let jobs: Vec<(f64, usize)> = self
            .config
            .snr_sweep_db
            .iter()
            .flat_map(|&s| (0..self.config.trials).map(move |t| (s, t)))
            .collect();
        let trials = jobs
            .par_iter()
            .map(|&(s, t)| self.run_trial(s, t))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = self.rows(&trials);
        let summary = summarize(&rows);
        Ok(RunOutput {
            run_id: self.run_id.clone(),
            trials,
            rows,
            summary,
        })
    }

    fn rows(&self, trials: &[TrialResult]) -> Vec<ResultRow> {
        let cfg = &self.config;
        let ratio = match cfg.masking.mode {
            MaskingMode::None => 0.0,
            _ => cfg.masking.ratio,
        };
        trials
            .iter()
            .flat_map(|t| {
                t.iterations.iter().map(move |m| ResultRow {
                    run_id: self.run_id.clone(),
                    snr_db: t.snr_db,
                    trial: t.trial,
                    iteration: m.iteration,
                    masking_mode: cfg.masking.mode.as_str().to_string(),
                    ratio,
                    detector: cfg.detector.kind.as_str().to_string(),
                    token_acc: m.token_acc,
                    masked_recovery_acc: m.masked_recovery_acc,
                    exact_match: u8::from(m.exact_match),
                    sim: m.sim,
                    symbols_tx: t.symbols_tx,
                    wall_ms: t.wall_ms,
                })
            })
            .collect()
    }
}

fn score(truth: &[TokenId], est: &MaskedSequence, mask: &MaskSet, iteration: usize, sim: Option<f64>) -> IterationMetrics {
    let hit = |i: usize| est.get(i) == Some(truth[i]);
    let correct = (0..truth.len()).filter(|&i| hit(i)).count();
    let masked_recovery_acc = (!mask.is_empty())
        .then(|| mask.positions().iter().filter(|&&i| hit(i)).count() as f64 / mask.len() as f64);
    IterationMetrics {
        iteration,
        token_acc: correct as f64 / truth.len() as f64,
        masked_recovery_acc,
        exact_match: correct == truth.len(),
        sim,
    }
}

/// `results.csv` -> `results.summary.csv`.
pub fn summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.summary.csv"))
}

/// Prepares and runs `config`, writing the results CSV to `config.output` and
/// the aggregate summary next to it.
pub fn run_experiment(config: ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let exp = Experiment::prepare(config)?;
    let out = exp.run()?;
    let path = &exp.config().output;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_results(std::io::BufWriter::new(file), &out.rows)?;
    let spath = summary_path(path);
    let file = std::fs::File::create(&spath).map_err(|e| HarnessError::io(&spath, e))?;
    write_summary(std::io::BufWriter::new(file), &out.summary)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::MaskingMode;

    fn tiny(v: usize) -> (ExperimentConfig, Vec<TokenSequence>) {
        let vocab = Vocabulary::new(v, (v - 1) as TokenId).unwrap();
        let packets = (0..4)
            .map(|k| TokenSequence::new((0..16).map(|i| ((i * 7 + k) % v) as TokenId).collect(), &vocab).unwrap())
            .collect();
        let config = ExperimentConfig {
            packet_len: 16,
            vocab_size: v,
            snr_sweep_db: vec![100.0],
            trials: 8,
            ..ExperimentConfig::default()
        };
        (config, packets)
    }

    #[test]
    fn high_snr_ml_is_perfect() {
        let (mut cfg, packets) = tiny(64);
        cfg.detector.kind = DetectorKind::Ml;
        let exp = Experiment::from_parts(cfg, packets, Arc::new(UniformModel::new(64)), None).unwrap();
        let out = exp.run().unwrap();
        assert_eq!(out.rows.len(), 8);
        assert!(out.rows.iter().all(|r| r.token_acc == 1.0 && r.exact_match == 1));
        assert!(out.rows.iter().all(|r| r.symbols_tx == 16 * 2));
    }

    #[test]
    fn rate_accounting_and_iteration_rows() {
        let (mut cfg, packets) = tiny(64);
        cfg.masking.mode = MaskingMode::Random;
        cfg.masking.ratio = 0.25;
        cfg.detector.max_iters = 3;
        let model = Arc::new(BigramModel::train(&packets.iter().map(TokenSequence::ids).collect::<Vec<_>>(), 64, 0.1).unwrap());
        let exp = Experiment::from_parts(cfg, packets, model, None).unwrap();
        let out = exp.run().unwrap();
        assert_eq!(out.rows.len(), 8 * 3);
        for t in &out.trials {
            assert_eq!(t.mask_len, 4);
            // 64 tokens -> 6 bits -> 2 16-QAM symbols each
            assert_eq!(t.symbols_tx, (16 - 4) * 2);
            assert_eq!(t.iterations[0].masked_recovery_acc, Some(0.0));
        }
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for t in 0..1000 {
            for s in [MASK_STREAM, CHANNEL_STREAM] {
                assert!(seen.insert(trial_seed(7, t, s)));
            }
        }
    }

    #[test]
    fn run_id_ignores_output_location() {
        let (a, _) = tiny(64);
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere.csv");
        assert_eq!(run_id(&a), run_id(&b));
        b.seed += 1;
        assert_ne!(run_id(&a), run_id(&b));
    }

    #[test]
    fn summary_path_naming() {
        assert_eq!(summary_path(Path::new("out/results.csv")), PathBuf::from("out/results.summary.csv"));
    }

    #[test]
    fn unreachable_sidecar_fails_before_trials() {
        let (mut cfg, _) = tiny(64);
        cfg.model.kind = ModelKind::External;
        cfg.sidecar.url = "http://127.0.0.1:9".into();
        cfg.sidecar.retries = 0;
        cfg.sidecar.timeout_ms = 500;
        cfg.corpus = PathBuf::from("/nonexistent");
        assert!(matches!(Experiment::prepare(cfg), Err(HarnessError::Sidecar(_))));
    }
}
