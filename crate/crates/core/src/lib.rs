//! CTC prefix beam search decoding with frame-level token pruning (FLToP).
//!
//! The decoder restricts each frame's expansion to the top-N emission
//! probabilities and then applies a secondary relative threshold: walking the
//! sorted candidates, it stops at the first token whose probability is at most
//! `R` times the frame's best probability. The candidate set is computed once
//! per frame and is independent of the evolving hypotheses, so the pruning
//! cost is amortized over the whole beam.
//!
//! The crate also ships the surrounding benchmark machinery: emission matrix
//! I/O and a seeded synthetic generator, an ARPA n-gram language model with
//! incremental word scoring, exact exponential-time reference decoders for
//! validation, word error rate, and per-decode instrumentation (chosen-index
//! histograms, beam counts, expansion counts, timing).

pub mod decoder;
pub mod emissions;
pub mod lm;
pub mod metrics;
pub mod oracle;
pub mod stats;
pub mod vocab;

pub(crate) mod math;

pub use decoder::{
    decode, decode_exhaustive_reference, DecodeResult, DecoderConfig, Hypothesis, Instrument,
};
pub use emissions::{EmissionFormat, EmissionMatrix, InputKind, SyntheticSpec};
pub use lm::{LmState, NGramModel};
pub use stats::{DecodeStats, StatsSummary};
pub use vocab::Vocabulary;

/// Index into a [`Vocabulary`]; also indexes emission matrix columns.
pub type TokenId = u32;

/// Collapse a frame-level alignment into its labeling: merge adjacent
/// repeats, then drop blanks.
pub fn collapse_alignment(path: &[TokenId], blank: TokenId) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev: Option<TokenId> = None;
    for &tok in path {
        if prev != Some(tok) && tok != blank {
            out.push(tok);
        }
        prev = Some(tok);
    }
    out
}
