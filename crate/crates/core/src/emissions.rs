//! Emission matrices: loading, validation, and synthetic generation.
//!
//! Emissions are stored in probability domain (post-softmax); relative-
//! threshold pruning compares raw probabilities, and only the decoder moves
//! to natural logs for accumulation.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::{collapse_alignment, TokenId};

/// Absolute tolerance on per-frame probability sums. Loose enough to admit
/// matrices produced by 32-bit float toolchains.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

const BINARY_MAGIC: &[u8; 4] = b"FLTP";
const BINARY_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EmissionError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid emission json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dimension mismatch at frame {frame}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite emission value at frame {frame}")]
    NonFinite { frame: usize },
    #[error("negative emission value at frame {frame}")]
    Negative { frame: usize },
    #[error("row sum {sum} violates tolerance {tolerance} at frame {frame}")]
    RowSum {
        frame: usize,
        sum: f64,
        tolerance: f64,
    },
    #[error("vocabulary size {0} too small: need blank plus at least one label")]
    VocabTooSmall(usize),
    #[error("probability matrix has {found} values, expected {expected} (T*V)")]
    FlatSizeMismatch { expected: usize, found: usize },
    #[error("empty row passed to softmax")]
    SoftmaxEmptyRow,
    #[error("non-finite input passed to softmax")]
    SoftmaxNonFinite,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// On-disk representations understood by [`load_emissions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionFormat {
    /// `FLTP` magic, version u16, T and V as u32, then T*V little-endian f32.
    Binary,
    /// Object with integer fields `"T"`, `"V"` and a nested `"probs"` array.
    Json,
}

/// Whether file contents are probabilities or raw logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Probabilities,
    Logits,
}

/// A T x V matrix of per-frame token emission probabilities, row-major.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    num_frames: usize,
    vocab_size: usize,
    probs: Vec<f64>,
}

impl EmissionMatrix {
    /// Build and validate a matrix from a flat row-major probability buffer.
    pub fn new(
        num_frames: usize,
        vocab_size: usize,
        probs: Vec<f64>,
    ) -> Result<Self, EmissionError> {
        if vocab_size < 2 {
            return Err(EmissionError::VocabTooSmall(vocab_size));
        }
        if probs.len() != num_frames * vocab_size {
            return Err(EmissionError::FlatSizeMismatch {
                expected: num_frames * vocab_size,
                found: probs.len(),
            });
        }
        let m = EmissionMatrix {
            num_frames,
            vocab_size,
            probs,
        };
        m.validate()?;
        Ok(m)
    }

    /// Build from per-frame rows; `vocab_size` is explicit so T = 0 is representable.
    pub fn from_rows(rows: Vec<Vec<f64>>, vocab_size: usize) -> Result<Self, EmissionError> {
        let num_frames = rows.len();
        let mut probs = Vec::with_capacity(num_frames * vocab_size);
        for (frame, row) in rows.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(EmissionError::DimensionMismatch {
                    frame,
                    expected: vocab_size,
                    found: row.len(),
                });
            }
            probs.extend_from_slice(row);
        }
        EmissionMatrix::new(num_frames, vocab_size, probs)
    }

    fn validate(&self) -> Result<(), EmissionError> {
        for frame in 0..self.num_frames {
            let row = self.row(frame);
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() {
                    return Err(EmissionError::NonFinite { frame });
                }
                if p < 0.0 {
                    return Err(EmissionError::Negative { frame });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(EmissionError::RowSum {
                    frame,
                    sum,
                    tolerance: ROW_SUM_TOLERANCE,
                });
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.probs[frame * self.vocab_size..(frame + 1) * self.vocab_size]
    }

    /// First `num_frames` frames as a new matrix (used by conservation tests).
    pub fn truncated(&self, num_frames: usize) -> EmissionMatrix {
        assert!(num_frames <= self.num_frames);
        EmissionMatrix {
            num_frames,
            vocab_size: self.vocab_size,
            probs: self.probs[..num_frames * self.vocab_size].to_vec(),
        }
    }

    /// Serialize in the binary emission format (probabilities narrowed to f32).
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.probs.len() * 4);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.num_frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        for &p in &self.probs {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn save_binary(&self, path: &Path) -> Result<(), EmissionError> {
        fs::write(path, self.to_binary()).map_err(|source| EmissionError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Numerically stable softmax over one row: shifts by the max before
/// exponentiating, preserves the input ranking, output sums to 1 within 1e-12.
pub fn softmax_row(row: &[f64]) -> Result<Vec<f64>, EmissionError> {
    if row.is_empty() {
        return Err(EmissionError::SoftmaxEmptyRow);
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err(EmissionError::SoftmaxNonFinite);
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Deserialize)]
struct JsonEmissions {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "V")]
    v: usize,
    probs: Vec<Vec<f64>>,
}

/// Load an emission matrix from disk. With `InputKind::Logits` every row is
/// passed through [`softmax_row`] before validation, so the row-sum check can
/// only fail in probabilities mode.
pub fn load_emissions(
    path: &Path,
    format: EmissionFormat,
    input_kind: InputKind,
) -> Result<EmissionMatrix, EmissionError> {
    let bytes = fs::read(path).map_err(|source| EmissionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_emissions(&bytes, format, input_kind)
}

/// Parse emissions from an in-memory buffer (same formats as [`load_emissions`]).
pub fn parse_emissions(
    bytes: &[u8],
    format: EmissionFormat,
    input_kind: InputKind,
) -> Result<EmissionMatrix, EmissionError> {
    let (t, v, mut rows) = match format {
        EmissionFormat::Binary => parse_binary(bytes)?,
        EmissionFormat::Json => {
            let parsed: JsonEmissions = serde_json::from_slice(bytes)?;
            if parsed.probs.len() != parsed.t {
                return Err(EmissionError::MalformedHeader(format!(
                    "T = {} but probs has {} rows",
                    parsed.t,
                    parsed.probs.len()
                )));
            }
            (parsed.t, parsed.v, parsed.probs)
        }
    };
    if input_kind == InputKind::Logits {
        for (frame, row) in rows.iter_mut().enumerate() {
            *row = softmax_row(row).map_err(|e| match e {
                EmissionError::SoftmaxNonFinite => EmissionError::NonFinite { frame },
                other => other,
            })?;
        }
    }
    if v < 2 {
        return Err(EmissionError::VocabTooSmall(v));
    }
    let mut m = EmissionMatrix {
        num_frames: t,
        vocab_size: v,
        probs: Vec::with_capacity(t * v),
    };
    for (frame, row) in rows.iter().enumerate() {
        if row.len() != v {
            return Err(EmissionError::DimensionMismatch {
                frame,
                expected: v,
                found: row.len(),
            });
        }
        m.probs.extend_from_slice(row);
    }
    m.validate()?;
    Ok(m)
}

fn parse_binary(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>), EmissionError> {
    if bytes.len() < 14 {
        return Err(EmissionError::MalformedHeader(
            "file shorter than header".into(),
        ));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(EmissionError::MalformedHeader("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(EmissionError::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let t = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let v = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = 14 + t * v * 4;
    if bytes.len() != expected {
        let got_values = (bytes.len().saturating_sub(14)) / 4;
        return Err(EmissionError::DimensionMismatch {
            frame: got_values.checked_div(v).unwrap_or(0),
            expected: t * v,
            found: got_values,
        });
    }
    let mut rows = Vec::with_capacity(t);
    let mut offset = 14;
    for _ in 0..t {
        let mut row = Vec::with_capacity(v);
        for _ in 0..v {
            let raw = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            row.push(raw as f64);
            offset += 4;
        }
        rows.push(row);
    }
    Ok((t, v, rows))
}

/// Parameters for the seeded synthetic emission generator.
///
/// The generator plants a per-frame winner path using token 0 as blank and,
/// for vocabularies of three or more tokens, token 1 as the word separator;
/// remaining ids are word labels. Each row concentrates probability mass on
/// the planted winner, with the rest spread over a wide log-uniform range so
/// sorted emission scores fall off steeply, and `peakedness` scales the
/// winner's weight. Identical specs produce bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_frames: usize,
    pub vocab_size: usize,
    pub peakedness: f64,
    pub seed: u64,
}

/// Dynamic range (in decades) of the non-winner weights.
const NON_WINNER_SPREAD: f64 = 9.0;

/// Generate a synthetic emission matrix plus the planted collapsed labeling.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(EmissionMatrix, Vec<TokenId>), EmissionError> {
    if spec.vocab_size < 2 {
        return Err(EmissionError::VocabTooSmall(spec.vocab_size));
    }
    if spec.peakedness <= 0.0 || !spec.peakedness.is_finite() {
        return Err(EmissionError::InvalidSpec(format!(
            "peakedness must be a positive real, got {}",
            spec.peakedness
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let path = plant_winner_path(&mut rng, spec.num_frames, spec.vocab_size);
    let v = spec.vocab_size;
    let mut probs = Vec::with_capacity(spec.num_frames * v);
    let mut row = vec![0.0f64; v];
    for &winner in &path {
        let mut sum = 0.0;
        for (i, w) in row.iter_mut().enumerate() {
            *w = if i as TokenId == winner {
                spec.peakedness * (1.0 + rng.gen::<f64>())
            } else {
                10f64.powf(-NON_WINNER_SPREAD * rng.gen::<f64>())
            };
            sum += *w;
        }
        probs.extend(row.iter().map(|w| w / sum));
    }
    let reference = collapse_alignment(&path, 0);
    let matrix = EmissionMatrix::new(spec.num_frames, v, probs)?;
    Ok((matrix, reference))
}

/// Frame-level winner sequence: short words over the label alphabet separated
/// by separator frames, with blank runs between emissions and a forced blank
/// between repeated labels so the collapsed reference stays faithful.
fn plant_winner_path(rng: &mut ChaCha8Rng, num_frames: usize, vocab_size: usize) -> Vec<TokenId> {
    let blank: TokenId = 0;
    let (sep, first_label) = if vocab_size >= 3 {
        (Some(1 as TokenId), 2 as TokenId)
    } else {
        (None, 1 as TokenId)
    };
    let labels: Vec<TokenId> = (first_label..vocab_size as TokenId).collect();

    let mut path = Vec::with_capacity(num_frames);
    let mut prev_emitted: Option<TokenId> = None;
    let mut word_left = 0usize;
    while path.len() < num_frames {
        let symbol = if word_left == 0 {
            word_left = rng.gen_range(2..=6);
            sep.unwrap_or_else(|| labels[rng.gen_range(0..labels.len())])
        } else {
            word_left -= 1;
            labels[rng.gen_range(0..labels.len())]
        };
        // A blank must separate two runs of the same symbol.
        if prev_emitted == Some(symbol) || rng.gen::<f64>() < 0.35 {
            let blanks: usize = rng.gen_range(1..=2);
            path.extend(std::iter::repeat_n(blank, blanks));
        }
        let run: usize = rng.gen_range(1..=3);
        path.extend(std::iter::repeat_n(symbol, run));
        prev_emitted = Some(symbol);
    }
    path.truncate(num_frames);
    path
}

/// A deterministic multi-utterance corpus: utterance seeds are drawn from a
/// generator seeded with `master_seed`, so the whole corpus is reproducible
/// from one number.
pub fn generate_corpus(
    utterances: usize,
    num_frames: usize,
    vocab_size: usize,
    peakedness: f64,
    master_seed: u64,
) -> Result<Vec<(EmissionMatrix, Vec<TokenId>)>, EmissionError> {
    let mut seeder = ChaCha8Rng::seed_from_u64(master_seed);
    let mut out = Vec::with_capacity(utterances);
    for _ in 0..utterances {
        let spec = SyntheticSpec {
            num_frames,
            vocab_size,
            peakedness,
            seed: seeder.gen::<u64>(),
        };
        out.push(generate_synthetic(&spec)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn json_bytes(body: &str) -> Vec<u8> {
        body.as_bytes().to_vec()
    }

    #[test]
    fn loads_uniform_json_probabilities() {
        let m = parse_emissions(
            &json_bytes(r#"{"T":1,"V":2,"probs":[[0.5,0.5]]}"#),
            EmissionFormat::Json,
            InputKind::Probabilities,
        )
        .unwrap();
        assert_eq!(m.num_frames(), 1);
        assert_eq!(m.vocab_size(), 2);
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmaxes_logit_input_before_validation() {
        let m = parse_emissions(
            &json_bytes(r#"{"T":1,"V":2,"probs":[[0.0,0.0]]}"#),
            EmissionFormat::Json,
            InputKind::Logits,
        )
        .unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_row_sum_violation_with_frame_index() {
        let err = parse_emissions(
            &json_bytes(r#"{"T":1,"V":2,"probs":[[0.9,0.2]]}"#),
            EmissionFormat::Json,
            InputKind::Probabilities,
        )
        .unwrap_err();
        match err {
            EmissionError::RowSum { frame, sum, .. } => {
                assert_eq!(frame, 0);
                assert!((sum - 1.1).abs() < 1e-12);
            }
            other => panic!("expected RowSum, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_and_negative_rows() {
        let err =
            EmissionMatrix::from_rows(vec![vec![0.5, 0.5], vec![f64::NAN, 1.0]], 2).unwrap_err();
        assert!(matches!(err, EmissionError::NonFinite { frame: 1 }));
        let err = EmissionMatrix::from_rows(vec![vec![1.2, -0.2]], 2).unwrap_err();
        assert!(matches!(err, EmissionError::Negative { frame: 0 }));
    }

    #[test]
    fn rejects_ragged_rows_with_frame_index() {
        let err = parse_emissions(
            &json_bytes(r#"{"T":2,"V":2,"probs":[[0.5,0.5],[1.0]]}"#),
            EmissionFormat::Json,
            InputKind::Probabilities,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            EmissionError::DimensionMismatch { frame: 1, .. }
        ));
    }

    #[test]
    fn binary_header_errors() {
        assert!(matches!(
            parse_emissions(b"FLT", EmissionFormat::Binary, InputKind::Probabilities),
            Err(EmissionError::MalformedHeader(_))
        ));
        let mut bad_magic = b"XXXX".to_vec();
        bad_magic.extend_from_slice(&1u16.to_le_bytes());
        bad_magic.extend_from_slice(&0u32.to_le_bytes());
        bad_magic.extend_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            parse_emissions(&bad_magic, EmissionFormat::Binary, InputKind::Probabilities),
            Err(EmissionError::MalformedHeader(_))
        ));
    }

    #[test]
    fn binary_roundtrip_is_bit_identical() {
        // Start from values that are exactly representable in f32.
        let rows: Vec<Vec<f64>> = vec![
            vec![0.25, 0.5, 0.25],
            vec![1.0, 0.0, 0.0],
            vec![0.375, 0.375, 0.25],
        ];
        let m = EmissionMatrix::from_rows(rows, 3).unwrap();
        let bytes = m.to_binary();
        let reloaded =
            parse_emissions(&bytes, EmissionFormat::Binary, InputKind::Probabilities).unwrap();
        assert_eq!(reloaded, m);
        assert_eq!(reloaded.to_binary(), bytes);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_row(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax_row(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        let out = softmax_row(&[2f64.ln(), 0.0]).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            softmax_row(&[]),
            Err(EmissionError::SoftmaxEmptyRow)
        ));
        assert!(matches!(
            softmax_row(&[1.0, f64::INFINITY]),
            Err(EmissionError::SoftmaxNonFinite)
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_seed_sensitive() {
        let spec = SyntheticSpec {
            num_frames: 4,
            vocab_size: 3,
            peakedness: 100.0,
            seed: 7,
        };
        let (a, ref_a) = generate_synthetic(&spec).unwrap();
        let (b, ref_b) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ref_a, ref_b);
        let (c, _) = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn high_peakedness_guarantees_dominant_winner() {
        let spec = SyntheticSpec {
            num_frames: 50,
            vocab_size: 32,
            peakedness: 50.0,
            seed: 1,
        };
        let (m, reference) = generate_synthetic(&spec).unwrap();
        for t in 0..m.num_frames() {
            let max = m.row(t).iter().cloned().fold(0.0, f64::max);
            assert!(max > 0.5, "frame {t} max {max}");
        }
        // The planted reference is the collapse of the per-frame argmax path.
        let argmax_path: Vec<TokenId> = (0..m.num_frames())
            .map(|t| {
                m.row(t)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0 as TokenId
            })
            .collect();
        assert_eq!(collapse_alignment(&argmax_path, 0), reference);
    }

    #[test]
    fn rejects_bad_synthetic_specs() {
        let bad = SyntheticSpec {
            num_frames: 4,
            vocab_size: 3,
            peakedness: 0.0,
            seed: 0,
        };
        assert!(matches!(
            generate_synthetic(&bad),
            Err(EmissionError::InvalidSpec(_))
        ));
        let bad = SyntheticSpec {
            num_frames: 4,
            vocab_size: 1,
            peakedness: 1.0,
            seed: 0,
        };
        assert!(matches!(
            generate_synthetic(&bad),
            Err(EmissionError::VocabTooSmall(1))
        ));
    }

    #[test]
    fn empty_matrix_is_valid() {
        let m = EmissionMatrix::new(0, 4, vec![]).unwrap();
        assert_eq!(m.num_frames(), 0);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            row in proptest::collection::vec(-30.0f64..30.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let base = softmax_row(&row).unwrap();
            let shifted_input: Vec<f64> = row.iter().map(|x| x + shift).collect();
            let shifted = softmax_row(&shifted_input).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let sum: f64 = base.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_preserves_ranking(row in proptest::collection::vec(-20.0f64..20.0, 2..10)) {
            let out = softmax_row(&row).unwrap();
            for i in 0..row.len() {
                for j in 0..row.len() {
                    if row[i] > row[j] {
                        prop_assert!(out[i] > out[j]);
                    }
                }
            }
        }

        #[test]
        fn synthetic_matrices_satisfy_invariants(
            t in 0usize..40,
            v in 2usize..16,
            peak in 0.5f64..200.0,
            seed in 0u64..1000,
        ) {
            let spec = SyntheticSpec { num_frames: t, vocab_size: v, peakedness: peak, seed };
            let (m, reference) = generate_synthetic(&spec).unwrap();
            // Construction re-runs validation; spot-check the reference too.
            prop_assert_eq!(m.num_frames(), t);
            prop_assert!(reference.iter().all(|&tok| tok != 0 && (tok as usize) < v));
            for w in reference.windows(2) {
                // Adjacent duplicates are legal labelings; just ensure ids are in range.
                prop_assert!(w[0] != 0 && w[1] != 0);
            }
        }

        #[test]
        fn binary_roundtrip_for_f32_valued_matrices(
            t in 1usize..6,
            v in 2usize..8,
            seed in 0u64..500,
        ) {
            // Build rows whose entries are exact f32 values.
            let spec = SyntheticSpec { num_frames: t, vocab_size: v, peakedness: 20.0, seed };
            let (m, _) = generate_synthetic(&spec).unwrap();
            let bytes = m.to_binary();
            let reloaded = parse_emissions(&bytes, EmissionFormat::Binary, InputKind::Probabilities).unwrap();
            prop_assert_eq!(reloaded.to_binary(), bytes);
        }
    }
}
