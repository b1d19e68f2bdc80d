//! Corpus loading, parallel decoding, sweeps, and file outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use fltop_core::emissions::{generate_corpus, parse_emissions, EmissionFormat, InputKind};
use fltop_core::lm::NGramModel;
use fltop_core::metrics::corpus_wer;
use fltop_core::stats::DecodeStats;
use fltop_core::{decode, DecodeResult, DecoderConfig, EmissionMatrix, Instrument, Vocabulary};

use crate::fmt::{fmt_f64, Fnv1a};
use crate::manifest::CorpusManifest;
use crate::CliError;

pub struct LoadedUtterance {
    pub id: String,
    pub emissions: EmissionMatrix,
    pub reference: Option<String>,
}

/// Load every utterance in id order and fingerprint the corpus (manifest
/// bytes plus every emissions file). Binary files are recognized by their
/// magic; anything else parses as JSON.
pub fn load_corpus(
    manifest_path: &Path,
    manifest: &CorpusManifest,
    input_kind: InputKind,
) -> Result<(Vec<LoadedUtterance>, u64), CliError> {
    let mut hash = Fnv1a::new();
    let manifest_bytes = fs::read(manifest_path).map_err(|e| {
        CliError::runtime(format!("failed to read manifest {manifest_path:?}: {e}"))
    })?;
    hash.update(&manifest_bytes);
    let mut utterances = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let bytes = fs::read(&entry.path).map_err(|e| {
            CliError::runtime(format!(
                "utterance {}: failed to read {:?}: {e}",
                entry.id, entry.path
            ))
        })?;
        hash.update(&bytes);
        let format = if bytes.starts_with(b"FLTP") {
            EmissionFormat::Binary
        } else {
            EmissionFormat::Json
        };
        let emissions = parse_emissions(&bytes, format, input_kind)
            .map_err(|e| CliError::runtime(format!("utterance {}: {e}", entry.id)))?;
        utterances.push(LoadedUtterance {
            id: entry.id.clone(),
            emissions,
            reference: entry.reference.clone(),
        });
    }
    Ok((utterances, hash.finish()))
}

/// Decode a corpus with utterance-level parallelism; results come back in
/// utterance order regardless of completion order.
pub fn decode_corpus(
    utterances: &[LoadedUtterance],
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
    instrument: Instrument,
    threads: usize,
) -> Result<Vec<DecodeResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::runtime(format!("failed to build thread pool: {e}")))?;
    pool.install(|| {
        utterances
            .par_iter()
            .map(|utt| {
                decode(&utt.emissions, vocab, model, cfg, instrument)
                    .map_err(|e| CliError::runtime(format!("utterance {}: {e}", utt.id)))
            })
            .collect()
    })
}

pub fn merged_stats(results: &[DecodeResult]) -> DecodeStats {
    let mut total = DecodeStats::new();
    for r in results {
        total.merge(&r.stats);
    }
    total
}

pub fn mean_beams(stats: &DecodeStats) -> f64 {
    match stats.summarize().beams {
        Some(beams) => beams.mean,
        None => 0.0,
    }
}

/// One sweep row; `param` is already formatted (integer N or exact-decimal R).
pub struct SweepRow {
    pub param: String,
    pub wer: f64,
    pub wall_time_s: f64,
    pub mean_beams: f64,
    pub total_expansions: u64,
}

/// Decode the corpus once per configuration and pool WER over references.
pub fn run_sweep(
    utterances: &[LoadedUtterance],
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    configs: &[(String, DecoderConfig)],
    threads: usize,
    no_timing: bool,
) -> Result<Vec<SweepRow>, CliError> {
    for utt in utterances {
        if utt.reference.is_none() {
            return Err(CliError::runtime(format!(
                "utterance {}: missing reference transcript (WER required for sweeps)",
                utt.id
            )));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (param, cfg) in configs {
        let results = decode_corpus(utterances, vocab, model, cfg, Instrument::Off, threads)?;
        let pairs = utterances
            .iter()
            .zip(&results)
            .map(|(utt, res)| (utt.reference.as_deref().unwrap(), res.transcript.as_str()));
        let wer = corpus_wer(pairs)
            .map_err(|e| CliError::runtime(format!("WER computation failed: {e}")))?;
        let stats = merged_stats(&results);
        rows.push(SweepRow {
            param: param.clone(),
            wer: wer.wer,
            wall_time_s: if no_timing { 0.0 } else { stats.wall_time_secs },
            mean_beams: mean_beams(&stats),
            total_expansions: stats.expansions,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut out = String::from("param,wer,wall_time_s,mean_beams,total_expansions\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.param,
            fmt_f64(row.wer),
            fmt_f64(row.wall_time_s),
            fmt_f64(row.mean_beams),
            row.total_expansions
        ));
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("failed to write {path:?}: {e}")))
}

/// Self-describing sidecar written next to every sweep/stats output.
#[derive(Serialize)]
pub struct RunMeta {
    pub command: String,
    pub manifest: String,
    pub corpus_hash: String,
    pub utterances: usize,
    pub vocab: String,
    pub lm: Option<String>,
    pub beam_size: usize,
    pub beam_threshold: f64,
    pub top_n: Option<usize>,
    pub rel_threshold: f64,
    pub lm_weight: f64,
    pub word_score: f64,
    pub sil_score: f64,
    pub unk_logprob: f64,
    pub input_kind: String,
    pub param_values: Vec<String>,
    pub threads: usize,
    pub timing_recorded: bool,
    pub seed: Option<u64>,
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".meta.json");
    out.with_file_name(name)
}

pub fn write_meta(out: &Path, meta: &RunMeta) -> Result<(), CliError> {
    let path = meta_path(out);
    let body = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::runtime(format!("failed to serialize metadata: {e}")))?;
    fs::write(&path, body + "\n")
        .map_err(|e| CliError::runtime(format!("failed to write {path:?}: {e}")))
}

/// Per-index selection histogram with cumulative coverage, CSV schema
/// `index,count,mean_emission,cumulative_fraction`.
pub fn write_index_stats_csv(path: &Path, stats: &DecodeStats) -> Result<(), CliError> {
    let summary = stats.summarize();
    let total: u64 = summary.per_index.iter().map(|row| row.count).sum();
    let mut out = String::from("index,count,mean_emission,cumulative_fraction\n");
    let mut running = 0u64;
    for row in &summary.per_index {
        running += row.count;
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.index,
            row.count,
            fmt_f64(row.mean_emission),
            fmt_f64(running as f64 / total as f64)
        ));
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("failed to write {path:?}: {e}")))
}

/// Full stats summary as JSON (per-index table plus beam-count order
/// statistics), written alongside the CSV when requested.
pub fn write_summary_json(
    path: &Path,
    stats: &DecodeStats,
    no_timing: bool,
) -> Result<(), CliError> {
    let mut summary = stats.summarize();
    if no_timing {
        summary.wall_time_secs = 0.0;
    }
    let body = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::runtime(format!("failed to serialize summary: {e}")))?;
    fs::write(path, body + "\n")
        .map_err(|e| CliError::runtime(format!("failed to write {path:?}: {e}")))
}

/// Write a seeded synthetic corpus: binary emissions, a vocabulary file, and
/// a manifest with rendered reference transcripts.
pub fn generate_corpus_files(
    out_dir: &Path,
    utterances: usize,
    frames: usize,
    vocab_size: usize,
    peakedness: f64,
    seed: u64,
) -> Result<(), CliError> {
    let vocab = Vocabulary::synthetic(vocab_size)
        .map_err(|e| CliError::usage(format!("unsupported vocab size: {e}")))?;
    let corpus = generate_corpus(utterances, frames, vocab_size, peakedness, seed)
        .map_err(|e| CliError::usage(format!("invalid generator parameters: {e}")))?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("failed to create {out_dir:?}: {e}")))?;
    let vocab_path = out_dir.join("vocab.txt");
    fs::write(&vocab_path, vocab.tokens().join("\n") + "\n")
        .map_err(|e| CliError::runtime(format!("failed to write {vocab_path:?}: {e}")))?;
    let mut manifest = String::new();
    let width = utterances.saturating_sub(1).to_string().len().max(3);
    for (i, (emissions, reference)) in corpus.iter().enumerate() {
        let id = format!("utt{i:0width$}");
        let file = format!("{id}.fltp");
        emissions
            .save_binary(&out_dir.join(&file))
            .map_err(|e| CliError::runtime(format!("utterance {id}: {e}")))?;
        let text = vocab.render_transcript(reference);
        manifest.push_str(&format!("{id}\t{file}\t{text}\n"));
    }
    let manifest_path = out_dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest)
        .map_err(|e| CliError::runtime(format!("failed to write {manifest_path:?}: {e}")))?;
    Ok(())
}
