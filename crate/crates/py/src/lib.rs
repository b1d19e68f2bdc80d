// The pymethods macro expansion trips useless_conversion on PyResult returns.
#![allow(clippy::useless_conversion)]

//! Python bindings for the FLToP CTC decoder: emission matrices, token
//! tables, ARPA language models, the beam search itself, and WER metrics.
//!
//! Built as the extension module `fltop_ctc`; see `python/smoke_test.py` for
//! a usage tour.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use fltop_core::emissions::{generate_synthetic, EmissionFormat, InputKind, SyntheticSpec};
use fltop_core::lm::NGramModel;
use fltop_core::metrics;
use fltop_core::stats::best_beam_backtrace_indices;
use fltop_core::{decode, DecoderConfig, EmissionMatrix, Instrument, Vocabulary};

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn io_err(err: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(err.to_string())
}

fn parse_input_kind(kind: &str) -> PyResult<InputKind> {
    match kind {
        "probs" | "probabilities" => Ok(InputKind::Probabilities),
        "logits" => Ok(InputKind::Logits),
        other => Err(value_err(format!(
            "input_kind must be 'probs' or 'logits', got {other:?}"
        ))),
    }
}

/// T x V per-frame token probability matrix.
#[pyclass(name = "EmissionMatrix")]
struct PyEmissionMatrix {
    inner: EmissionMatrix,
}

#[pymethods]
impl PyEmissionMatrix {
    /// Load from disk; binary files are recognized by magic, otherwise JSON.
    #[staticmethod]
    #[pyo3(signature = (path, input_kind = "probs"))]
    fn load(path: &str, input_kind: &str) -> PyResult<Self> {
        let kind = parse_input_kind(input_kind)?;
        let bytes = std::fs::read(path).map_err(io_err)?;
        let format = if bytes.starts_with(b"FLTP") {
            EmissionFormat::Binary
        } else {
            EmissionFormat::Json
        };
        let inner =
            fltop_core::emissions::parse_emissions(&bytes, format, kind).map_err(value_err)?;
        Ok(PyEmissionMatrix { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (rows, vocab_size, input_kind = "probs"))]
    fn from_rows(rows: Vec<Vec<f64>>, vocab_size: usize, input_kind: &str) -> PyResult<Self> {
        let kind = parse_input_kind(input_kind)?;
        let rows = match kind {
            InputKind::Probabilities => rows,
            InputKind::Logits => rows
                .iter()
                .map(|row| fltop_core::emissions::softmax_row(row))
                .collect::<Result<_, _>>()
                .map_err(value_err)?,
        };
        Ok(PyEmissionMatrix {
            inner: EmissionMatrix::from_rows(rows, vocab_size).map_err(value_err)?,
        })
    }

    /// Seeded generator; returns `(matrix, planted_labeling)`.
    #[staticmethod]
    fn generate_synthetic(
        num_frames: usize,
        vocab_size: usize,
        peakedness: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<u32>)> {
        let spec = SyntheticSpec {
            num_frames,
            vocab_size,
            peakedness,
            seed,
        };
        let (matrix, reference) = generate_synthetic(&spec).map_err(value_err)?;
        Ok((PyEmissionMatrix { inner: matrix }, reference))
    }

    fn save_binary(&self, path: &str) -> PyResult<()> {
        self.inner.save_binary(Path::new(path)).map_err(io_err)
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.num_frames()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn row(&self, frame: usize) -> PyResult<Vec<f64>> {
        if frame >= self.inner.num_frames() {
            return Err(value_err(format!(
                "frame {frame} out of range for T = {}",
                self.inner.num_frames()
            )));
        }
        Ok(self.inner.row(frame).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "EmissionMatrix(T={}, V={})",
            self.inner.num_frames(),
            self.inner.vocab_size()
        )
    }
}

/// Ordered token table with blank/word-separator/unknown designations.
#[pyclass(name = "Vocabulary")]
struct PyVocabulary {
    inner: Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[staticmethod]
    #[pyo3(signature = (path, blank, word_sep, unk = None))]
    fn load(path: &str, blank: &str, word_sep: &str, unk: Option<&str>) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: Vocabulary::load(Path::new(path), blank, word_sep, unk).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (tokens, blank, word_sep, unk = None))]
    fn from_tokens(
        tokens: Vec<String>,
        blank: &str,
        word_sep: &str,
        unk: Option<&str>,
    ) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: Vocabulary::from_tokens(tokens, blank, word_sep, unk).map_err(value_err)?,
        })
    }

    /// The inventory the synthetic generator plants over (blank, separator,
    /// letters, apostrophe, sentence markers).
    #[staticmethod]
    fn synthetic(vocab_size: usize) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: Vocabulary::synthetic(vocab_size).map_err(value_err)?,
        })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn blank_id(&self) -> u32 {
        self.inner.blank_id()
    }

    #[getter]
    fn word_sep_id(&self) -> u32 {
        self.inner.word_sep_id()
    }

    #[getter]
    fn unk_id(&self) -> Option<u32> {
        self.inner.unk_id()
    }

    fn id_to_token(&self, id: u32) -> PyResult<String> {
        Ok(self.inner.id_to_token(id).map_err(value_err)?.to_string())
    }

    fn token_to_id(&self, token: &str) -> Option<u32> {
        self.inner.token_to_id(token)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    /// Render a labeling as text (separators to single spaces, trimmed).
    fn render_transcript(&self, labeling: Vec<u32>) -> String {
        self.inner.render_transcript(&labeling)
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary(size={})", self.inner.size())
    }
}

/// Backoff n-gram model parsed from ARPA text (log10 scores).
#[pyclass(name = "NGramModel")]
struct PyNGramModel {
    inner: NGramModel,
}

#[pymethods]
impl PyNGramModel {
    #[staticmethod]
    #[pyo3(signature = (path, unk_logprob = -10.0))]
    fn parse_arpa(path: &str, unk_logprob: f64) -> PyResult<Self> {
        Ok(PyNGramModel {
            inner: NGramModel::parse_arpa(Path::new(path))
                .map_err(value_err)?
                .with_unk_logprob(unk_logprob),
        })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    /// p(word | context words), log10, by longest-match backoff.
    fn score_word(&self, context: Vec<String>, word: &str) -> f64 {
        let mut state = self.inner.begin_state();
        for w in &context {
            state = self.inner.score_word(&state, w).1;
        }
        self.inner.score_word(&state, word).0
    }

    /// Log10 probability of the sequence framed by `<s>` and `</s>`.
    fn sentence_logprob(&self, words: Vec<String>) -> f64 {
        self.inner.sentence_logprob(&words)
    }

    fn __repr__(&self) -> String {
        format!("NGramModel(order={})", self.inner.order())
    }
}

/// Search and fusion parameters (defaults mirror the baseline setup).
#[pyclass(name = "DecoderConfig")]
#[derive(Clone)]
struct PyDecoderConfig {
    inner: DecoderConfig,
}

#[pymethods]
impl PyDecoderConfig {
    #[new]
    #[pyo3(signature = (
        beam_size = 1000,
        beam_threshold = 25.0,
        top_n = None,
        rel_threshold = 0.0,
        lm_weight = 1.0,
        word_score = 0.95,
        sil_score = 0.0,
        unk_logprob = -10.0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        beam_size: usize,
        beam_threshold: f64,
        top_n: Option<usize>,
        rel_threshold: f64,
        lm_weight: f64,
        word_score: f64,
        sil_score: f64,
        unk_logprob: f64,
    ) -> Self {
        PyDecoderConfig {
            inner: DecoderConfig {
                beam_size,
                beam_threshold,
                top_n,
                rel_threshold,
                lm_weight,
                word_score,
                sil_score,
                unk_logprob,
            },
        }
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "DecoderConfig(beam_size={}, beam_threshold={}, top_n={:?}, rel_threshold={}, \
             lm_weight={}, word_score={}, sil_score={}, unk_logprob={})",
            c.beam_size,
            c.beam_threshold,
            c.top_n,
            c.rel_threshold,
            c.lm_weight,
            c.word_score,
            c.sil_score,
            c.unk_logprob
        )
    }
}

/// Decode output: transcript, winning labeling, score breakdown, and stats.
#[pyclass(name = "DecodeResult")]
struct PyDecodeResult {
    #[pyo3(get)]
    transcript: String,
    #[pyo3(get)]
    labeling: Vec<u32>,
    #[pyo3(get)]
    log_score: f64,
    #[pyo3(get)]
    acoustic_score: f64,
    #[pyo3(get)]
    lm_score: f64,
    #[pyo3(get)]
    beam_counts: Vec<usize>,
    #[pyo3(get)]
    expansions: u64,
    #[pyo3(get)]
    wall_time_secs: f64,
    #[pyo3(get)]
    index_counts: BTreeMap<usize, u64>,
    #[pyo3(get)]
    selection_trail: Option<Vec<(usize, usize, f64)>>,
}

#[pymethods]
impl PyDecodeResult {
    #[getter]
    fn mean_beams(&self) -> f64 {
        if self.beam_counts.is_empty() {
            0.0
        } else {
            self.beam_counts.iter().sum::<usize>() as f64 / self.beam_counts.len() as f64
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "DecodeResult(transcript={:?}, log_score={:.6})",
            self.transcript, self.log_score
        )
    }
}

/// Beam search with frame-level token pruning.
///
/// `instrument` is one of `"off"`, `"best-beam"`, `"all-expansions"`.
#[pyfunction]
#[pyo3(signature = (emissions, vocab, config = None, lm = None, instrument = "off"))]
fn decode_emissions(
    emissions: &PyEmissionMatrix,
    vocab: &PyVocabulary,
    config: Option<PyDecoderConfig>,
    lm: Option<&PyNGramModel>,
    instrument: &str,
) -> PyResult<PyDecodeResult> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let mode = match instrument {
        "off" => Instrument::Off,
        "best-beam" => Instrument::BestBeam,
        "all-expansions" => Instrument::AllExpansions,
        other => {
            return Err(value_err(format!(
                "instrument must be 'off', 'best-beam', or 'all-expansions', got {other:?}"
            )))
        }
    };
    let result = decode(
        &emissions.inner,
        &vocab.inner,
        lm.map(|m| &m.inner),
        &cfg,
        mode,
    )
    .map_err(value_err)?;
    let selection_trail = if mode == Instrument::Off {
        None
    } else {
        Some(
            best_beam_backtrace_indices(&result)
                .map_err(value_err)?
                .into_iter()
                .map(|r| (r.timestep, r.sorted_index, r.emission_prob))
                .collect(),
        )
    };
    Ok(PyDecodeResult {
        transcript: result.transcript,
        labeling: result.best.prefix.clone(),
        log_score: result.best.total_score(),
        acoustic_score: result.best.acoustic_score(),
        lm_score: result.best.lm_score,
        beam_counts: result.stats.beam_counts.clone(),
        expansions: result.stats.expansions,
        wall_time_secs: result.stats.wall_time_secs,
        index_counts: result
            .stats
            .index_counts
            .iter()
            .map(|(&k, &v)| (k, v))
            .collect(),
        selection_trail,
    })
}

/// Top-N selection plus the relative-threshold break for one frame;
/// returns `(token_id, probability)` pairs in descending order.
#[pyfunction]
fn prune_frame(frame: Vec<f64>, top_n: usize, rel_threshold: f64) -> PyResult<Vec<(u32, f64)>> {
    if top_n < 1 || top_n > frame.len() {
        return Err(value_err(format!(
            "top_n {top_n} out of range for frame of length {}",
            frame.len()
        )));
    }
    if !(0.0..=1.0).contains(&rel_threshold) {
        return Err(value_err("rel_threshold must lie in [0, 1]"));
    }
    Ok(fltop_core::decoder::prune_frame(&frame, top_n, rel_threshold).entries)
}

/// Word-level edit distance; returns `(distance, substitutions, insertions,
/// deletions)`.
#[pyfunction]
fn edit_distance(a: Vec<String>, b: Vec<String>) -> (usize, usize, usize, usize) {
    let (d, counts) = metrics::edit_distance(&a, &b);
    (d, counts.substitutions, counts.insertions, counts.deletions)
}

/// Pooled corpus WER over (reference, hypothesis) pairs; returns a dict with
/// substitutions/insertions/deletions/ref_words/wer.
#[pyfunction]
fn corpus_wer(py: Python<'_>, pairs: Vec<(String, String)>) -> PyResult<PyObject> {
    let breakdown = metrics::corpus_wer(pairs.iter().map(|(r, h)| (r.as_str(), h.as_str())))
        .map_err(value_err)?;
    let dict = pyo3::types::PyDict::new_bound(py);
    dict.set_item("substitutions", breakdown.substitutions)?;
    dict.set_item("insertions", breakdown.insertions)?;
    dict.set_item("deletions", breakdown.deletions)?;
    dict.set_item("ref_words", breakdown.ref_words)?;
    dict.set_item("wer", breakdown.wer)?;
    Ok(dict.into())
}

#[pymodule]
fn fltop_ctc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmissionMatrix>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyNGramModel>()?;
    m.add_class::<PyDecoderConfig>()?;
    m.add_class::<PyDecodeResult>()?;
    m.add_function(wrap_pyfunction!(decode_emissions, m)?)?;
    m.add_function(wrap_pyfunction!(prune_frame, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_wer, m)?)?;
    Ok(())
}
