//! `fltop`: benchmark harness for CTC beam search decoding with frame-level
//! token pruning: single/corpus decode, top-N and relative-threshold sweeps,
//! chosen-index statistics, and a seeded synthetic corpus generator.

mod fmt;
mod manifest;
mod runner;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fltop_core::emissions::{parse_emissions, EmissionFormat, InputKind};
use fltop_core::lm::NGramModel;
use fltop_core::{decode, DecodeResult, DecoderConfig, Instrument, Vocabulary};

use manifest::CorpusManifest;
use runner::{
    decode_corpus, generate_corpus_files, load_corpus, mean_beams, merged_stats, run_sweep,
    write_index_stats_csv, write_meta, write_summary_json, write_sweep_csv, RunMeta,
};

#[derive(Debug)]
pub enum CliError {
    /// Flag/argument validation problems; exit code 2.
    Usage(String),
    /// I/O, parse, and decode failures; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

#[derive(Parser)]
#[command(
    name = "fltop",
    version,
    about = "CTC beam search decoding with frame-level token pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode one emissions file or a whole manifest corpus
    Decode(DecodeCmd),
    /// Sweep the per-frame top-N cap over a corpus (R fixed at 0), write CSV
    SweepTopn(SweepTopnCmd),
    /// Sweep the relative threshold R at fixed top-N, write CSV
    SweepRelthres(SweepRelthresCmd),
    /// Aggregate chosen-index statistics over a corpus, write CSV
    IndexStats(IndexStatsCmd),
    /// Generate a seeded synthetic corpus (emissions, vocab, manifest)
    GenCorpus(GenCorpusCmd),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputKindArg {
    Probs,
    Logits,
}

impl From<InputKindArg> for InputKind {
    fn from(arg: InputKindArg) -> Self {
        match arg {
            InputKindArg::Probs => InputKind::Probabilities,
            InputKindArg::Logits => InputKind::Logits,
        }
    }
}

fn parse_top_n(s: &str) -> Result<usize, String> {
    let n: usize = s
        .parse()
        .map_err(|_| format!("invalid top-n value {s:?}"))?;
    if n < 1 {
        return Err("top-n must be ≥ 1".into());
    }
    Ok(n)
}

fn parse_rel_threshold(s: &str) -> Result<f64, String> {
    let r: f64 = s
        .parse()
        .map_err(|_| format!("invalid rel-threshold value {s:?}"))?;
    if !(0.0..=1.0).contains(&r) {
        return Err("rel-threshold must lie in [0, 1]".into());
    }
    Ok(r)
}

fn parse_threads(s: &str) -> Result<usize, String> {
    let n: usize = s
        .parse()
        .map_err(|_| format!("invalid thread count {s:?}"))?;
    if n < 1 {
        return Err("threads must be ≥ 1".into());
    }
    Ok(n)
}

#[derive(Args)]
struct InputArgs {
    /// Vocabulary file, one token per line (line number = token id)
    #[arg(long)]
    vocab: PathBuf,
    /// Token string used as the CTC blank
    #[arg(long, default_value = "<pad>")]
    blank_token: String,
    /// Token string used as the word separator
    #[arg(long, default_value = "|")]
    word_sep_token: String,
    /// Token string treated as unknown
    #[arg(long)]
    unk_token: Option<String>,
    /// ARPA language model for word-level fusion
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Whether emission files hold probabilities or logits
    #[arg(long, value_enum, default_value_t = InputKindArg::Probs)]
    input_kind: InputKindArg,
    /// Worker threads for corpus decoding
    #[arg(long, default_value = "1", value_parser = parse_threads)]
    threads: usize,
}

impl InputArgs {
    fn load_vocab(&self) -> Result<Vocabulary, CliError> {
        Vocabulary::load(
            &self.vocab,
            &self.blank_token,
            &self.word_sep_token,
            self.unk_token.as_deref(),
        )
        .map_err(|e| CliError::runtime(format!("vocabulary: {e}")))
    }

    fn load_lm(&self, unk_logprob: f64) -> Result<Option<NGramModel>, CliError> {
        self.lm
            .as_ref()
            .map(|path| {
                NGramModel::parse_arpa(path)
                    .map(|m| m.with_unk_logprob(unk_logprob))
                    .map_err(|e| CliError::runtime(format!("language model: {e}")))
            })
            .transpose()
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Maximum hypotheses kept per timestep
    #[arg(long, default_value_t = 1000)]
    beam_size: usize,
    /// Log-score window below the best hypothesis
    #[arg(long, default_value_t = 25.0)]
    beam_threshold: f64,
    /// Per-frame candidate cap N (defaults to the vocabulary size)
    #[arg(long, value_parser = parse_top_n)]
    top_n: Option<usize>,
    /// Relative threshold R in [0, 1]
    #[arg(long, default_value = "0.0", value_parser = parse_rel_threshold)]
    rel_threshold: f64,
    /// Weight on the LM log probability
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    lm_weight: f64,
    /// Flat bonus per completed word
    #[arg(long, default_value_t = 0.95, allow_hyphen_values = true)]
    word_score: f64,
    /// Flat bonus per word-separator emission
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sil_score: f64,
    /// Log10 probability for OOV words when the LM lacks <unk>
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    unk_logprob: f64,
}

impl SearchArgs {
    fn config(&self) -> DecoderConfig {
        DecoderConfig {
            beam_size: self.beam_size,
            beam_threshold: self.beam_threshold,
            top_n: self.top_n,
            rel_threshold: self.rel_threshold,
            lm_weight: self.lm_weight,
            word_score: self.word_score,
            sil_score: self.sil_score,
            unk_logprob: self.unk_logprob,
        }
    }
}

#[derive(Args)]
struct DecodeCmd {
    /// Emissions file for a single utterance (binary FLTP or JSON)
    #[arg(short = 'e', long)]
    emissions: Option<PathBuf>,
    /// Manifest TSV for corpus decoding
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Emit one JSON object per utterance instead of plain transcripts
    #[arg(long)]
    json: bool,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero out wall-time fields (for byte-reproducible output)
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct SweepTopnCmd {
    /// Manifest TSV with reference transcripts
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated N values (default: 1..=vocab size)
    #[arg(long, value_delimiter = ',', value_parser = parse_top_n)]
    n_values: Vec<usize>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Output CSV path (a .meta.json sidecar is written next to it)
    #[arg(long)]
    out: PathBuf,
    /// Zero out wall-time fields (for byte-reproducible output)
    #[arg(long)]
    no_timing: bool,
    /// Recorded in the metadata sidecar
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepRelthresCmd {
    /// Manifest TSV with reference transcripts
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated R values
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_rel_threshold,
        default_value = "0.0,0.001,0.003,0.007,0.01,0.05,0.1,0.5"
    )]
    r_values: Vec<f64>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Output CSV path (a .meta.json sidecar is written next to it)
    #[arg(long)]
    out: PathBuf,
    /// Zero out wall-time fields (for byte-reproducible output)
    #[arg(long)]
    no_timing: bool,
    /// Recorded in the metadata sidecar
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IndexStatsCmd {
    /// Manifest TSV
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Record every candidate expansion instead of the best beam's backtrace
    #[arg(long)]
    all_expansions: bool,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Also write a full stats summary JSON next to the CSV
    #[arg(long)]
    json: bool,
    /// Zero out wall-time fields (for byte-reproducible output)
    #[arg(long)]
    no_timing: bool,
    /// Recorded in the metadata sidecar
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenCorpusCmd {
    /// Directory for emissions, vocab.txt, and manifest.tsv
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    utterances: usize,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    vocab_size: usize,
    #[arg(long, default_value_t = 50.0)]
    peakedness: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Serialize)]
struct DecodeJson<'a> {
    id: &'a str,
    transcript: &'a str,
    log_score: f64,
    wall_time: f64,
    beams_mean: f64,
}

fn emit(out: &Option<PathBuf>, body: String) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, body)
            .map_err(|e| CliError::runtime(format!("failed to write {path:?}: {e}"))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn render_result(
    id: &str,
    result: &DecodeResult,
    json: bool,
    as_corpus: bool,
    no_timing: bool,
) -> Result<String, CliError> {
    if json {
        let beam_counts = &result.stats.beam_counts;
        let beams_mean = if beam_counts.is_empty() {
            0.0
        } else {
            beam_counts.iter().sum::<usize>() as f64 / beam_counts.len() as f64
        };
        serde_json::to_string(&DecodeJson {
            id,
            transcript: &result.transcript,
            log_score: result.best.total_score(),
            wall_time: if no_timing {
                0.0
            } else {
                result.stats.wall_time_secs
            },
            beams_mean,
        })
        .map_err(|e| CliError::runtime(format!("failed to serialize result: {e}")))
    } else if as_corpus {
        Ok(format!("{id}\t{}", result.transcript))
    } else {
        Ok(result.transcript.clone())
    }
}

fn cmd_decode(cmd: DecodeCmd) -> Result<(), CliError> {
    let vocab = cmd.input.load_vocab()?;
    let model = cmd.input.load_lm(cmd.search.unk_logprob)?;
    let cfg = cmd.search.config();
    let mut lines = Vec::new();
    match (&cmd.emissions, &cmd.manifest) {
        (Some(path), None) => {
            let bytes = fs::read(path)
                .map_err(|e| CliError::runtime(format!("failed to read {path:?}: {e}")))?;
            let format = if bytes.starts_with(b"FLTP") {
                EmissionFormat::Binary
            } else {
                EmissionFormat::Json
            };
            let emissions = parse_emissions(&bytes, format, cmd.input.input_kind.into())
                .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "-".into());
            let result = decode(&emissions, &vocab, model.as_ref(), &cfg, Instrument::Off)
                .map_err(|e| CliError::runtime(format!("{id}: {e}")))?;
            lines.push(render_result(&id, &result, cmd.json, false, cmd.no_timing)?);
        }
        (None, Some(manifest_path)) => {
            let manifest = CorpusManifest::load(manifest_path)?;
            let (utterances, _) =
                load_corpus(manifest_path, &manifest, cmd.input.input_kind.into())?;
            let results = decode_corpus(
                &utterances,
                &vocab,
                model.as_ref(),
                &cfg,
                Instrument::Off,
                cmd.input.threads,
            )?;
            for (utt, result) in utterances.iter().zip(&results) {
                lines.push(render_result(
                    &utt.id,
                    result,
                    cmd.json,
                    true,
                    cmd.no_timing,
                )?);
            }
        }
        _ => {
            return Err(CliError::usage(
                "exactly one of --emissions or --manifest is required",
            ));
        }
    }
    emit(&cmd.out, lines.join("\n") + "\n")
}

#[allow(clippy::too_many_arguments)]
fn sweep_meta(
    command: &str,
    manifest: &Path,
    corpus_hash: u64,
    utterances: usize,
    input: &InputArgs,
    cfg: &DecoderConfig,
    param_values: Vec<String>,
    no_timing: bool,
    seed: Option<u64>,
) -> RunMeta {
    RunMeta {
        command: command.to_string(),
        manifest: manifest.display().to_string(),
        corpus_hash: format!("fnv1a64:{corpus_hash:016x}"),
        utterances,
        vocab: input.vocab.display().to_string(),
        lm: input.lm.as_ref().map(|p| p.display().to_string()),
        beam_size: cfg.beam_size,
        beam_threshold: cfg.beam_threshold,
        top_n: cfg.top_n,
        rel_threshold: cfg.rel_threshold,
        lm_weight: cfg.lm_weight,
        word_score: cfg.word_score,
        sil_score: cfg.sil_score,
        unk_logprob: cfg.unk_logprob,
        input_kind: match input.input_kind {
            InputKindArg::Probs => "probs".into(),
            InputKindArg::Logits => "logits".into(),
        },
        param_values,
        threads: input.threads,
        timing_recorded: !no_timing,
        seed,
    }
}

fn cmd_sweep_topn(cmd: SweepTopnCmd) -> Result<(), CliError> {
    let vocab = cmd.input.load_vocab()?;
    let model = cmd.input.load_lm(cmd.search.unk_logprob)?;
    let manifest = CorpusManifest::load(&cmd.manifest)?;
    let (utterances, hash) = load_corpus(&cmd.manifest, &manifest, cmd.input.input_kind.into())?;
    let mut n_values = if cmd.n_values.is_empty() {
        (1..=vocab.size()).collect()
    } else {
        cmd.n_values.clone()
    };
    n_values.sort_unstable();
    n_values.dedup();
    if let Some(&max) = n_values.last() {
        if max > vocab.size() {
            return Err(CliError::usage(format!(
                "top-n {max} exceeds vocabulary size {}",
                vocab.size()
            )));
        }
    }
    // The top-N sweep holds the relative threshold at zero.
    let base = DecoderConfig {
        rel_threshold: 0.0,
        ..cmd.search.config()
    };
    let configs: Vec<(String, DecoderConfig)> = n_values
        .iter()
        .map(|&n| {
            (
                n.to_string(),
                DecoderConfig {
                    top_n: Some(n),
                    ..base.clone()
                },
            )
        })
        .collect();
    let rows = run_sweep(
        &utterances,
        &vocab,
        model.as_ref(),
        &configs,
        cmd.input.threads,
        cmd.no_timing,
    )?;
    write_sweep_csv(&cmd.out, &rows)?;
    let meta = sweep_meta(
        "sweep-topn",
        &cmd.manifest,
        hash,
        utterances.len(),
        &cmd.input,
        &base,
        n_values.iter().map(|n| n.to_string()).collect(),
        cmd.no_timing,
        cmd.seed,
    );
    write_meta(&cmd.out, &meta)
}

fn cmd_sweep_relthres(cmd: SweepRelthresCmd) -> Result<(), CliError> {
    let vocab = cmd.input.load_vocab()?;
    let model = cmd.input.load_lm(cmd.search.unk_logprob)?;
    let manifest = CorpusManifest::load(&cmd.manifest)?;
    let (utterances, hash) = load_corpus(&cmd.manifest, &manifest, cmd.input.input_kind.into())?;
    let mut r_values = cmd.r_values.clone();
    r_values.sort_by(f64::total_cmp);
    r_values.dedup();
    // Fixed N, defaulting to 4 when not given.
    let top_n = match cmd.search.top_n {
        Some(n) if n > vocab.size() => {
            return Err(CliError::usage(format!(
                "top-n {n} exceeds vocabulary size {}",
                vocab.size()
            )))
        }
        Some(n) => n,
        None => 4.min(vocab.size()),
    };
    let base = DecoderConfig {
        top_n: Some(top_n),
        ..cmd.search.config()
    };
    let configs: Vec<(String, DecoderConfig)> = r_values
        .iter()
        .map(|&r| {
            (
                fmt::fmt_f64(r),
                DecoderConfig {
                    rel_threshold: r,
                    ..base.clone()
                },
            )
        })
        .collect();
    let rows = run_sweep(
        &utterances,
        &vocab,
        model.as_ref(),
        &configs,
        cmd.input.threads,
        cmd.no_timing,
    )?;
    write_sweep_csv(&cmd.out, &rows)?;
    let meta = sweep_meta(
        "sweep-relthres",
        &cmd.manifest,
        hash,
        utterances.len(),
        &cmd.input,
        &base,
        r_values.iter().map(|&r| fmt::fmt_f64(r)).collect(),
        cmd.no_timing,
        cmd.seed,
    );
    write_meta(&cmd.out, &meta)
}

fn cmd_index_stats(cmd: IndexStatsCmd) -> Result<(), CliError> {
    let vocab = cmd.input.load_vocab()?;
    let model = cmd.input.load_lm(cmd.search.unk_logprob)?;
    let manifest = CorpusManifest::load(&cmd.manifest)?;
    let (utterances, hash) = load_corpus(&cmd.manifest, &manifest, cmd.input.input_kind.into())?;
    let cfg = cmd.search.config();
    let instrument = if cmd.all_expansions {
        Instrument::AllExpansions
    } else {
        Instrument::BestBeam
    };
    let results = decode_corpus(
        &utterances,
        &vocab,
        model.as_ref(),
        &cfg,
        instrument,
        cmd.input.threads,
    )?;
    let stats = merged_stats(&results);
    write_index_stats_csv(&cmd.out, &stats)?;
    if cmd.json {
        write_summary_json(&cmd.out.with_extension("json"), &stats, cmd.no_timing)?;
    }
    let meta = sweep_meta(
        "index-stats",
        &cmd.manifest,
        hash,
        utterances.len(),
        &cmd.input,
        &cfg,
        vec![if cmd.all_expansions {
            "all-expansions".into()
        } else {
            "best-beam".into()
        }],
        cmd.no_timing,
        cmd.seed,
    );
    write_meta(&cmd.out, &meta)?;
    eprintln!(
        "index-stats: {} selections over {} utterances (mean beams {})",
        stats.total_selections(),
        utterances.len(),
        fmt::fmt_f64(mean_beams(&stats))
    );
    Ok(())
}

fn cmd_gen_corpus(cmd: GenCorpusCmd) -> Result<(), CliError> {
    generate_corpus_files(
        &cmd.out_dir,
        cmd.utterances,
        cmd.frames,
        cmd.vocab_size,
        cmd.peakedness,
        cmd.seed,
    )?;
    println!(
        "wrote {} utterances (T={}, V={}, peakedness={}, seed={}) to {}",
        cmd.utterances,
        cmd.frames,
        cmd.vocab_size,
        fmt::fmt_f64(cmd.peakedness),
        cmd.seed,
        cmd.out_dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Decode(cmd) => cmd_decode(cmd),
        Command::SweepTopn(cmd) => cmd_sweep_topn(cmd),
        Command::SweepRelthres(cmd) => cmd_sweep_relthres(cmd),
        Command::IndexStats(cmd) => cmd_index_stats(cmd),
        Command::GenCorpus(cmd) => cmd_gen_corpus(cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
