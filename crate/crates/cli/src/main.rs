use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokenlink::harness::{
    read_results, run_experiment, summarize, summary_path, write_id_corpus, write_summary, DetectorKind,
    ExperimentConfig, MarkovChain, MaskingMode, ModelKind, SummaryRow,
};

#[derive(Parser)]
#[command(name = "tokenlink", version, about = "Context-aware token communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a TOML config.
    Run(RunArgs),
    /// Aggregate a results CSV into per-series plot data.
    Plot {
        results: PathBuf,
        /// Defaults to `<results stem>.summary.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic order-1 Markov corpus of token ids.
    GenCorpus(GenArgs),
    /// Print the default experiment config.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Detector {
    Ml,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum Masking {
    None,
    Random,
    ContextAware,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Uniform,
    Ngram,
    External,
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_enum)]
    detector: Option<Detector>,
    #[arg(long, value_enum)]
    masking: Option<Masking>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    trials: Option<usize>,
    /// Results CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the summary table on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
    #[arg(long, default_value_t = 1000)]
    packets: usize,
    #[arg(long, default_value_t = 128)]
    packet_len: usize,
    /// Distinct successors per state.
    #[arg(long, default_value_t = 16)]
    successors: usize,
    /// Entropy of every transition row, in bits.
    #[arg(long, default_value_t = 2.0)]
    entropy_bits: f64,
    /// Seed for the sampled sequences.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the chain's transition structure; reuse it to draw train and
    /// test corpora from the same source.
    #[arg(long, default_value_t = 0)]
    chain_seed: u64,
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &RunArgs) {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = &a.snr {
        cfg.snr_sweep_db = snr.clone();
    }
    if let Some(r) = a.ratio {
        cfg.masking.ratio = r;
    }
    if let Some(n) = a.iters {
        cfg.detector.max_iters = n;
    }
    if let Some(d) = a.detector {
        cfg.detector.kind = match d {
            Detector::Ml => DetectorKind::Ml,
            Detector::Iterative => DetectorKind::Iterative,
        };
    }
    if let Some(m) = a.masking {
        cfg.masking.mode = match m {
            Masking::None => MaskingMode::None,
            Masking::Random => MaskingMode::Random,
            Masking::ContextAware => MaskingMode::ContextAware,
        };
    }
    if let Some(m) = a.model {
        cfg.model.kind = match m {
            Model::Uniform => ModelKind::Uniform,
            Model::Ngram => ModelKind::Ngram,
            Model::External => ModelKind::External,
        };
    }
    if let Some(n) = a.trials {
        cfg.trials = n;
    }
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
}

fn fmt_opt(mean: Option<f64>, stderr: Option<f64>) -> String {
    match (mean, stderr) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "-".into(),
    }
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<28} {:>7} {:>4} {:>6} {:>17} {:>17} {:>7} {:>17}",
        "series", "snr_db", "iter", "trials", "token_acc", "masked_recovery", "exact", "sim"
    );
    for r in rows {
        println!(
            "{:<28} {:>7.2} {:>4} {:>6} {:>17} {:>17} {:>7.4} {:>17}",
            r.series,
            r.snr_db,
            r.iteration,
            r.trials,
            format!("{:.4} ± {:.4}", r.token_acc_mean, r.token_acc_stderr),
            fmt_opt(r.masked_recovery_acc_mean, r.masked_recovery_acc_stderr),
            r.exact_match_rate,
            fmt_opt(r.sim_mean, r.sim_stderr),
        );
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    apply_overrides(&mut cfg, &args);
    cfg.validate()?;
    let output = cfg.output.clone();
    let out = run_experiment(cfg)?;
    if !args.quiet {
        print_summary(&out.summary);
    }
    eprintln!(
        "run {}: {} rows -> {} (summary {})",
        out.run_id,
        out.rows.len(),
        output.display(),
        summary_path(&output).display()
    );
    Ok(())
}

fn plot(results: &Path, out: Option<PathBuf>) -> Result<()> {
    let file = File::open(results).with_context(|| format!("opening {}", results.display()))?;
    let rows = read_results(file)?;
    let summary = summarize(&rows);
    let out = out.unwrap_or_else(|| summary_path(results));
    let writer = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    write_summary(writer, &summary)?;
    print_summary(&summary);
    eprintln!("{} series points -> {}", summary.len(), out.display());
    Ok(())
}

fn gen_corpus(a: GenArgs) -> Result<()> {
    let chain = MarkovChain::new(
        a.vocab,
        a.successors,
        a.entropy_bits,
        &mut ChaCha8Rng::seed_from_u64(a.chain_seed),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let packets: Vec<Vec<u32>> = (0..a.packets).map(|_| chain.sample(a.packet_len, &mut rng)).collect();
    let writer = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    write_id_corpus(writer, &packets)?;
    eprintln!(
        "{} packets of {} ids, transition entropy {:.4} bits -> {}",
        a.packets,
        a.packet_len,
        chain.transition_entropy_bits(),
        a.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Plot { results, out } => plot(&results, out),
        Command::GenCorpus(args) => gen_corpus(args),
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml_string());
            Ok(())
        }
    }
}
