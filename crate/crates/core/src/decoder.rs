//! CTC prefix beam search with frame-level token pruning.
//!
//! Each frame's candidate set is computed once, independent of the evolving
//! hypotheses: the emission row is partially sorted, truncated to the top N
//! tokens, and cut again at the first token whose probability is at most
//! `rel_threshold` times the frame's best. Hypotheses track separate
//! natural-log probabilities for alignments ending in blank vs non-blank, so
//! duplicate prefixes merge by log-sum-exp and scores are true posteriors.
//! Word-level LM fusion happens at word-separator emissions, with flat
//! per-word and per-separator bonuses.

use std::cmp::Ordering;
use std::f64::consts::LN_10;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::emissions::EmissionMatrix;
use crate::lm::{LmState, NGramModel};
use crate::math::logaddexp;
use crate::stats::DecodeStats;
use crate::vocab::Vocabulary;
use crate::TokenId;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("emission vocab size {emissions} does not match vocabulary size {vocab}")]
    DimensionMismatch { emissions: usize, vocab: usize },
    #[error("top-n {n} out of range for vocabulary size {vocab_size}")]
    TopNOutOfRange { n: usize, vocab_size: usize },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
}

/// Search and fusion parameters. `top_n = None` means all tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Maximum hypotheses retained per timestep.
    pub beam_size: usize,
    /// Natural-log score window below the best hypothesis at selection time.
    pub beam_threshold: f64,
    /// Per-frame candidate cap N (the "beam-size-token").
    pub top_n: Option<usize>,
    /// Relative threshold R in [0, 1]: drop candidates with p <= R * p_top.
    pub rel_threshold: f64,
    /// Weight on LM log probability (applied to the LM term only).
    pub lm_weight: f64,
    /// Flat bonus per completed word.
    pub word_score: f64,
    /// Flat bonus per word-separator emission.
    pub sil_score: f64,
    /// Log10 probability for OOV words when the LM lacks `<unk>`.
    pub unk_logprob: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_size: 1000,
            beam_threshold: 25.0,
            top_n: None,
            rel_threshold: 0.0,
            lm_weight: 1.0,
            word_score: 0.95,
            sil_score: 0.0,
            unk_logprob: -10.0,
        }
    }
}

impl DecoderConfig {
    /// Validate against a vocabulary size and resolve `top_n`.
    pub fn validate(&self, vocab_size: usize) -> Result<usize, DecodeError> {
        if self.beam_size < 1 {
            return Err(DecodeError::InvalidConfig("beam_size must be >= 1".into()));
        }
        if self.beam_threshold.is_nan() || self.beam_threshold < 0.0 {
            return Err(DecodeError::InvalidConfig(
                "beam_threshold must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rel_threshold) {
            return Err(DecodeError::InvalidConfig(
                "rel_threshold must lie in [0, 1]".into(),
            ));
        }
        for (name, value) in [
            ("lm_weight", self.lm_weight),
            ("word_score", self.word_score),
            ("sil_score", self.sil_score),
            ("unk_logprob", self.unk_logprob),
        ] {
            if !value.is_finite() {
                return Err(DecodeError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        let n = self.top_n.unwrap_or(vocab_size);
        if n < 1 || n > vocab_size {
            return Err(DecodeError::TopNOutOfRange { n, vocab_size });
        }
        Ok(n)
    }
}

/// One consumed candidate in a hypothesis's history; a persistent list shared
/// between hypotheses via `Arc`.
#[derive(Debug)]
pub struct SelectionEvent {
    pub timestep: usize,
    pub sorted_index: usize,
    pub emission_prob: f64,
    pub prev: Option<Arc<SelectionEvent>>,
}

/// A decoding prefix: the collapsed token sequence (word separators included,
/// never blank) with log probabilities split by whether the alignment ends in
/// blank, plus the LM side of the score.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub prefix: Vec<TokenId>,
    /// ln P(prefix, alignment ends in blank).
    pub log_p_blank: f64,
    /// ln P(prefix, alignment ends in non-blank).
    pub log_p_nonblank: f64,
    /// Accumulated weighted LM score plus word/separator bonuses (natural log).
    pub lm_score: f64,
    pub lm_state: LmState,
    /// Token ids seen since the last word separator.
    pub current_word: Vec<TokenId>,
    /// Selection trail when decoding with instrumentation.
    pub trail: Option<Arc<SelectionEvent>>,
}

impl Hypothesis {
    /// The empty prefix: certain, with the alignment "ending in blank".
    pub fn root(lm_state: LmState) -> Self {
        Hypothesis {
            prefix: Vec::new(),
            log_p_blank: 0.0,
            log_p_nonblank: f64::NEG_INFINITY,
            lm_score: 0.0,
            lm_state,
            current_word: Vec::new(),
            trail: None,
        }
    }

    /// ln P(prefix) over both alignment endings.
    pub fn acoustic_score(&self) -> f64 {
        logaddexp(self.log_p_blank, self.log_p_nonblank)
    }

    /// Acoustic part plus the LM side.
    pub fn total_score(&self) -> f64 {
        self.acoustic_score() + self.lm_score
    }
}

/// Candidate tokens for one frame, in non-increasing probability order.
/// At most N entries; every entry after the first has probability strictly
/// above `rel_threshold` times the first's.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCandidates {
    pub entries: Vec<(TokenId, f64)>,
}

/// Decode instrumentation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instrument {
    Off,
    /// Record the winning hypothesis's selection trail (the default
    /// methodology for chosen-index histograms).
    BestBeam,
    /// Record every (hypothesis, candidate) extension instead.
    AllExpansions,
}

/// Ids of the `n` largest entries, probability-descending, ties broken by
/// ascending token id. The rest of the frame is untouched.
pub fn partial_sort_desc(frame: &[f64], n: usize) -> Result<Vec<TokenId>, DecodeError> {
    if n < 1 || n > frame.len() {
        return Err(DecodeError::TopNOutOfRange {
            n,
            vocab_size: frame.len(),
        });
    }
    let cmp = |a: &TokenId, b: &TokenId| {
        frame[*b as usize]
            .total_cmp(&frame[*a as usize])
            .then(a.cmp(b))
    };
    let mut ids: Vec<TokenId> = (0..frame.len() as TokenId).collect();
    if n < ids.len() {
        ids.select_nth_unstable_by(n - 1, cmp);
        ids.truncate(n);
    }
    ids.sort_unstable_by(cmp);
    Ok(ids)
}

/// Top-N selection followed by the relative-threshold conditional break:
/// walk the sorted ids and stop at the first whose probability is at most
/// `r` times the top probability. The top id itself is always retained.
pub fn prune_frame(frame: &[f64], n: usize, r: f64) -> FrameCandidates {
    let ids = partial_sort_desc(frame, n).expect("top_n must be validated by the caller");
    let top_prob = frame[ids[0] as usize];
    let mut entries = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        let p = frame[id as usize];
        if i > 0 && p <= r * top_prob {
            break;
        }
        entries.push((id, p));
    }
    FrameCandidates { entries }
}

/// Expand one hypothesis over a frame's candidates using the standard CTC
/// prefix-search transitions:
///
/// * blank keeps the prefix and moves all mass to the blank ending;
/// * a repeat of the last token both collapses into the same prefix (from the
///   non-blank ending) and, separated by blank, extends it (from the blank
///   ending);
/// * any other token extends the prefix from both endings.
///
/// Appending the word separator closes the pending word: LM score and word
/// bonus apply, the separator bonus applies per emission.
pub fn expand(
    hyp: &Hypothesis,
    candidates: &FrameCandidates,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
) -> Vec<Hypothesis> {
    let mut out = Vec::with_capacity(candidates.entries.len() + 1);
    expand_into(hyp, candidates, vocab, model, cfg, 0, false, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn expand_into(
    hyp: &Hypothesis,
    candidates: &FrameCandidates,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
    timestep: usize,
    record_trail: bool,
    out: &mut Vec<Hypothesis>,
) {
    let blank = vocab.blank_id();
    let last = hyp.prefix.last().copied();
    for (rank, &(token, prob)) in candidates.entries.iter().enumerate() {
        let ell = prob.ln();
        if ell == f64::NEG_INFINITY {
            continue;
        }
        let trail = |taken: &Hypothesis| -> Option<Arc<SelectionEvent>> {
            record_trail.then(|| {
                Arc::new(SelectionEvent {
                    timestep,
                    sorted_index: rank,
                    emission_prob: prob,
                    prev: taken.trail.clone(),
                })
            })
        };
        if token == blank {
            let src = hyp.acoustic_score();
            if src > f64::NEG_INFINITY {
                out.push(Hypothesis {
                    prefix: hyp.prefix.clone(),
                    log_p_blank: src + ell,
                    log_p_nonblank: f64::NEG_INFINITY,
                    lm_score: hyp.lm_score,
                    lm_state: hyp.lm_state.clone(),
                    current_word: hyp.current_word.clone(),
                    trail: trail(hyp),
                });
            }
        } else if last == Some(token) {
            // Repeat collapse: ...c + c stays the same prefix.
            if hyp.log_p_nonblank > f64::NEG_INFINITY {
                out.push(Hypothesis {
                    prefix: hyp.prefix.clone(),
                    log_p_blank: f64::NEG_INFINITY,
                    log_p_nonblank: hyp.log_p_nonblank + ell,
                    lm_score: hyp.lm_score,
                    lm_state: hyp.lm_state.clone(),
                    current_word: hyp.current_word.clone(),
                    trail: trail(hyp),
                });
            }
            // Blank-separated repeat extends the prefix.
            if hyp.log_p_blank > f64::NEG_INFINITY {
                let t = trail(hyp);
                out.push(extend_prefix(
                    hyp,
                    token,
                    hyp.log_p_blank + ell,
                    vocab,
                    model,
                    cfg,
                    t,
                ));
            }
        } else {
            let src = hyp.acoustic_score();
            if src > f64::NEG_INFINITY {
                let t = trail(hyp);
                out.push(extend_prefix(hyp, token, src + ell, vocab, model, cfg, t));
            }
        }
    }
}

/// Build `prefix + token` with the word-boundary bookkeeping applied.
fn extend_prefix(
    hyp: &Hypothesis,
    token: TokenId,
    log_p_nonblank: f64,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
    trail: Option<Arc<SelectionEvent>>,
) -> Hypothesis {
    let mut prefix = Vec::with_capacity(hyp.prefix.len() + 1);
    prefix.extend_from_slice(&hyp.prefix);
    prefix.push(token);
    let mut lm_score = hyp.lm_score;
    let mut lm_state = hyp.lm_state.clone();
    let mut current_word = hyp.current_word.clone();
    if token == vocab.word_sep_id() {
        lm_score += cfg.sil_score;
        if !current_word.is_empty() {
            lm_score += cfg.word_score;
            if let Some(m) = model {
                let word = vocab.word_string(&current_word);
                let (lp10, next) = m.score_word_with_unk(&lm_state, &word, cfg.unk_logprob);
                lm_score += cfg.lm_weight * LN_10 * lp10;
                lm_state = next;
            }
            current_word.clear();
        }
    } else {
        current_word.push(token);
    }
    Hypothesis {
        prefix,
        log_p_blank: f64::NEG_INFINITY,
        log_p_nonblank,
        lm_score,
        lm_state,
        current_word,
        trail,
    }
}

/// LM-score any pending partial word at end of utterance (word bonus applies,
/// separator bonus does not).
fn flush_pending_word(
    mut hyp: Hypothesis,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
) -> Hypothesis {
    if !hyp.current_word.is_empty() {
        hyp.lm_score += cfg.word_score;
        if let Some(m) = model {
            let word = vocab.word_string(&hyp.current_word);
            let (lp10, next) = m.score_word_with_unk(&hyp.lm_state, &word, cfg.unk_logprob);
            hyp.lm_score += cfg.lm_weight * LN_10 * lp10;
            hyp.lm_state = next;
        }
        hyp.current_word.clear();
    }
    hyp
}

/// Deterministic hypothesis order: total score descending, then shorter
/// prefix, then lexicographic prefix.
fn rank_cmp(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.total_score()
        .total_cmp(&a.total_score())
        .then_with(|| a.prefix.len().cmp(&b.prefix.len()))
        .then_with(|| a.prefix.cmp(&b.prefix))
}

/// Merge hypotheses with identical prefixes: blank and non-blank log
/// probabilities combine by log-sum-exp, folded in a fixed value-sorted order
/// so the result does not depend on expansion enumeration order. Identical
/// prefixes must agree on the LM side by construction; disagreement indicates
/// an expansion bug and aborts.
pub fn merge_duplicates(mut expanded: Vec<Hypothesis>) -> Vec<Hypothesis> {
    expanded.sort_unstable_by(|a, b| {
        a.prefix
            .cmp(&b.prefix)
            .then_with(|| a.log_p_blank.total_cmp(&b.log_p_blank))
            .then_with(|| a.log_p_nonblank.total_cmp(&b.log_p_nonblank))
    });
    let mut merged: Vec<Hypothesis> = Vec::with_capacity(expanded.len());
    // Largest single contribution within the current prefix run; its trail
    // is the one the merged hypothesis keeps.
    let mut run_best = f64::NEG_INFINITY;
    for hyp in expanded {
        let contribution = hyp.acoustic_score();
        match merged.last_mut() {
            Some(acc) if acc.prefix == hyp.prefix => {
                assert_eq!(
                    acc.lm_score.to_bits(),
                    hyp.lm_score.to_bits(),
                    "expansion bug: equal prefixes disagree on lm_score"
                );
                assert_eq!(
                    acc.lm_state, hyp.lm_state,
                    "expansion bug: equal prefixes disagree on lm_state"
                );
                assert_eq!(
                    acc.current_word, hyp.current_word,
                    "expansion bug: equal prefixes disagree on current_word"
                );
                if contribution > run_best {
                    run_best = contribution;
                    acc.trail = hyp.trail.clone();
                }
                acc.log_p_blank = logaddexp(acc.log_p_blank, hyp.log_p_blank);
                acc.log_p_nonblank = logaddexp(acc.log_p_nonblank, hyp.log_p_nonblank);
            }
            _ => {
                run_best = contribution;
                merged.push(hyp);
            }
        }
    }
    merged
}

/// Keep the `beam_size` best hypotheses and drop anything scoring below the
/// best by more than `beam_threshold`.
pub fn select_top_k(
    mut beams: Vec<Hypothesis>,
    beam_size: usize,
    beam_threshold: f64,
) -> Vec<Hypothesis> {
    beams.sort_by(rank_cmp);
    beams.truncate(beam_size);
    if let Some(best) = beams.first().map(Hypothesis::total_score) {
        let floor = best - beam_threshold;
        beams.retain(|h| h.total_score() >= floor);
    }
    beams
}

/// Everything `decode` returns: the rendered transcript, the winning
/// hypothesis, the full final beam, and instrumentation.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub transcript: String,
    pub best: Hypothesis,
    /// The final beam after end-of-utterance word flushing, best first.
    pub final_beams: Vec<Hypothesis>,
    pub stats: DecodeStats,
    pub instrument: Instrument,
}

enum CandidateSource {
    Pruned,
    Exhaustive,
}

/// Beam search over the emission matrix per the frame-level pruning scheme.
///
/// The candidate set is computed once per frame (never per hypothesis),
/// every beam expands over it, duplicate prefixes merge, and selection keeps
/// the top `beam_size` hypotheses within the score window. After the final
/// frame any pending word is LM-scored before ranking.
pub fn decode(
    emissions: &EmissionMatrix,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
    instrument: Instrument,
) -> Result<DecodeResult, DecodeError> {
    decode_impl(
        emissions,
        vocab,
        model,
        cfg,
        instrument,
        CandidateSource::Pruned,
    )
}

/// Validation reference: identical search, but frames are consumed
/// exhaustively in token-id order with no pruning. `decode` with
/// `top_n = V, rel_threshold = 0` must match it bit for bit.
pub fn decode_exhaustive_reference(
    emissions: &EmissionMatrix,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
) -> Result<DecodeResult, DecodeError> {
    decode_impl(
        emissions,
        vocab,
        model,
        cfg,
        Instrument::Off,
        CandidateSource::Exhaustive,
    )
}

fn decode_impl(
    emissions: &EmissionMatrix,
    vocab: &Vocabulary,
    model: Option<&NGramModel>,
    cfg: &DecoderConfig,
    instrument: Instrument,
    source: CandidateSource,
) -> Result<DecodeResult, DecodeError> {
    let vocab_size = emissions.vocab_size();
    if vocab.size() != vocab_size {
        return Err(DecodeError::DimensionMismatch {
            emissions: vocab_size,
            vocab: vocab.size(),
        });
    }
    let top_n = cfg.validate(vocab_size)?;
    let record_trail = instrument != Instrument::Off;
    let mut stats = DecodeStats::new();
    let begin_state = model.map(NGramModel::begin_state).unwrap_or_default();
    let mut beams = vec![Hypothesis::root(begin_state)];

    let start = Instant::now();
    for t in 0..emissions.num_frames() {
        let row = emissions.row(t);
        let candidates = match source {
            CandidateSource::Pruned => prune_frame(row, top_n, cfg.rel_threshold),
            CandidateSource::Exhaustive => FrameCandidates {
                entries: row
                    .iter()
                    .enumerate()
                    .map(|(id, &p)| (id as TokenId, p))
                    .collect(),
            },
        };
        stats.expansions += (beams.len() * candidates.entries.len()) as u64;
        if instrument == Instrument::AllExpansions {
            for _ in 0..beams.len() {
                for (rank, &(_, p)) in candidates.entries.iter().enumerate() {
                    stats.record_selection(rank, p);
                }
            }
        }
        let mut expanded = Vec::with_capacity(beams.len() * (candidates.entries.len() + 1));
        for hyp in &beams {
            expand_into(
                hyp,
                &candidates,
                vocab,
                model,
                cfg,
                t,
                record_trail,
                &mut expanded,
            );
        }
        let merged = merge_duplicates(expanded);
        beams = select_top_k(merged, cfg.beam_size, cfg.beam_threshold);
        assert!(!beams.is_empty(), "beam emptied at frame {t}");
        stats.beam_counts.push(beams.len());
    }

    let mut finals: Vec<Hypothesis> = beams
        .into_iter()
        .map(|h| flush_pending_word(h, vocab, model, cfg))
        .collect();
    finals.sort_by(rank_cmp);
    stats.wall_time_secs = start.elapsed().as_secs_f64();

    let best = finals[0].clone();
    if instrument == Instrument::BestBeam {
        let mut node = best.trail.as_deref();
        while let Some(event) = node {
            stats.record_selection(event.sorted_index, event.emission_prob);
            node = event.prev.as_deref();
        }
    }
    let transcript = vocab.render_transcript(&best.prefix);
    Ok(DecodeResult {
        transcript,
        best,
        final_beams: finals,
        stats,
        instrument,
    })
}
