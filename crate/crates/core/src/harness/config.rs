use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::codec::{check_bits_per_symbol, TokenId};
use crate::detector::{DetectorConfig, UpdateRule};
use crate::masker::MaskingStrategy;
use crate::sidecar::SidecarConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    #[default]
    None,
    Random,
    ContextAware,
}

impl MaskingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskingMode::None => "none",
            MaskingMode::Random => "random",
            MaskingMode::ContextAware => "context_aware",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Ml,
    #[default]
    Iterative,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::Ml => "ml",
            DetectorKind::Iterative => "iterative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Uniform,
    #[default]
    Ngram,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingMode {
    #[default]
    Block,
    PerToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One line per passage of space-separated decimal token ids.
    #[default]
    Ids,
    /// Raw UTF-8 text, one passage per line, tokenized by the sidecar.
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub mode: MaskingMode,
    pub ratio: f64,
    pub strategy: MaskingStrategy,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            mode: MaskingMode::None,
            ratio: 0.0,
            strategy: MaskingStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    pub max_iters: usize,
    pub update: UpdateRule,
    pub prior_weight: f64,
    pub early_stop: bool,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            kind: DetectorKind::Iterative,
            max_iters: d.max_iters,
            update: d.update,
            prior_weight: d.prior_weight,
            early_stop: d.early_stop,
        }
    }
}

impl DetectorSection {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            max_iters: self.max_iters,
            update: self.update,
            prior_weight: self.prior_weight,
            early_stop: self.early_stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Laplace smoothing for the n-gram model.
    pub alpha: f64,
    /// Training corpus for the n-gram model; the evaluation corpus when absent.
    pub train_corpus: Option<PathBuf>,
    /// 0 requests full-vocabulary distributions from the sidecar.
    pub top_k: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ngram,
            alpha: 0.1,
            train_corpus: None,
            top_k: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Score reconstructed text with the sidecar's sentence similarity.
    pub enabled: bool,
}

/// Complete description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub packet_len: usize,
    pub vocab_size: usize,
    pub mask_token_id: Option<TokenId>,
    pub bits_per_symbol: usize,
    pub p_tx: f64,
    pub snr_sweep_db: Vec<f64>,
    pub fading: FadingMode,
    pub trials: usize,
    pub seed: u64,
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    pub output: PathBuf,
    pub masking: MaskingConfig,
    pub detector: DetectorSection,
    pub model: ModelSection,
    pub sim: SimSection,
    pub sidecar: SidecarConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            packet_len: 128,
            vocab_size: 30522,
            mask_token_id: None,
            bits_per_symbol: 4,
            p_tx: 1.0,
            snr_sweep_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            fading: FadingMode::Block,
            trials: 1000,
            seed: 0,
            corpus: PathBuf::from("corpus.txt"),
            corpus_format: CorpusFormat::Ids,
            output: PathBuf::from("results.csv"),
            masking: MaskingConfig::default(),
            detector: DetectorSection::default(),
            model: ModelSection::default(),
            sim: SimSection::default(),
            sidecar: SidecarConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative corpus and output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.corpus = resolve(dir, &cfg.corpus);
            cfg.output = resolve(dir, &cfg.output);
            cfg.model.train_corpus = cfg.model.train_corpus.as_deref().map(|p| resolve(dir, p));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mask_token_id(&self) -> TokenId {
        self.mask_token_id
            .unwrap_or((self.vocab_size.saturating_sub(1)) as TokenId)
    }

    /// Whether any part of the run needs the sidecar.
    pub fn needs_sidecar(&self) -> bool {
        self.model.kind == ModelKind::External || self.sim.enabled || self.corpus_format == CorpusFormat::Text
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.packet_len == 0 {
            return bad("packet_len must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.mask_token_id() as usize >= self.vocab_size {
            return bad("mask_token_id must be below vocab_size".into());
        }
        check_bits_per_symbol(self.bits_per_symbol).map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.p_tx > 0.0 && self.p_tx.is_finite()) {
            return bad(format!("p_tx must be positive, got {}", self.p_tx));
        }
        if self.snr_sweep_db.is_empty() || self.snr_sweep_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_sweep_db must be a non-empty list of finite values".into());
        }
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.masking.ratio) {
            return bad(format!("masking.ratio must lie in [0, 1], got {}", self.masking.ratio));
        }
        if self.detector.max_iters == 0 {
            return bad("detector.max_iters must be at least 1".into());
        }
        if !(self.detector.prior_weight >= 0.0 && self.detector.prior_weight.is_finite()) {
            return bad("detector.prior_weight must be non-negative".into());
        }
        if !(self.model.alpha > 0.0 && self.model.alpha.is_finite()) {
            return bad("model.alpha must be positive".into());
        }
        Ok(())
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
