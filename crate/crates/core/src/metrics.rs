//! Word-level edit distance and pooled corpus word error rate.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("corpus has zero reference words")]
    EmptyReference,
}

/// Error counts from one minimal-cost alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EditBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditBreakdown {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Pooled corpus error statistics; `wer` is a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
    pub wer: f64,
}

/// Minimal substitutions + insertions + deletions transforming `a` into `b`,
/// with the standard tie order (substitution, then deletion, then insertion)
/// so substitutions are preferred over insertion/deletion pairs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> (usize, EditBreakdown) {
    let rows = a.len() + 1;
    let cols = b.len() + 1;
    let mut table: Vec<(usize, EditBreakdown)> = vec![(0, EditBreakdown::default()); rows * cols];
    let at = |i: usize, j: usize| i * cols + j;
    for i in 1..rows {
        table[at(i, 0)] = (
            i,
            EditBreakdown {
                deletions: i,
                ..Default::default()
            },
        );
    }
    for j in 1..cols {
        table[at(0, j)] = (
            j,
            EditBreakdown {
                insertions: j,
                ..Default::default()
            },
        );
    }
    for i in 1..rows {
        for j in 1..cols {
            let hit = a[i - 1] == b[j - 1];
            let diag = table[at(i - 1, j - 1)];
            let sub_cost = diag.0 + usize::from(!hit);
            let del = table[at(i - 1, j)];
            let ins = table[at(i, j - 1)];
            // Tie order: substitution/match, deletion, insertion.
            let cell = if sub_cost <= del.0 + 1 && sub_cost <= ins.0 + 1 {
                let mut counts = diag.1;
                if !hit {
                    counts.substitutions += 1;
                }
                (sub_cost, counts)
            } else if del.0 <= ins.0 {
                let mut counts = del.1;
                counts.deletions += 1;
                (del.0 + 1, counts)
            } else {
                let mut counts = ins.1;
                counts.insertions += 1;
                (ins.0 + 1, counts)
            };
            table[at(i, j)] = cell;
        }
    }
    let (distance, counts) = table[at(a.len(), b.len())];
    debug_assert_eq!(distance, counts.distance());
    (distance, counts)
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Pooled corpus WER over (reference, hypothesis) pairs: whitespace-tokenized,
/// case-sensitive; errors and reference words are summed over the corpus
/// before dividing (not a mean of per-utterance rates).
pub fn corpus_wer<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<WerBreakdown, MetricsError> {
    let mut totals = EditBreakdown::default();
    let mut ref_words = 0usize;
    for (reference, hypothesis) in pairs {
        let r = words(reference);
        let h = words(hypothesis);
        let (_, counts) = edit_distance(&r, &h);
        totals.substitutions += counts.substitutions;
        totals.insertions += counts.insertions;
        totals.deletions += counts.deletions;
        ref_words += r.len();
    }
    if ref_words == 0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok(WerBreakdown {
        substitutions: totals.substitutions,
        insertions: totals.insertions,
        deletions: totals.deletions,
        ref_words,
        wer: 100.0 * totals.distance() as f64 / ref_words as f64,
    })
}
