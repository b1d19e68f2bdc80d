//! Decode instrumentation: chosen-index histograms, per-index emission means,
//! per-timestep beam counts, expansion counts, and wall-clock time.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::decoder::DecodeResult;
use crate::Instrument;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("decode ran without instrumentation; selection trail unavailable")]
    InstrumentationDisabled,
}

/// Per-decode measurements. Utterance-level stats merge associatively into
/// corpus-level aggregates.
#[derive(Debug, Clone, Default)]
pub struct DecodeStats {
    /// Selection count per sorted-index position.
    pub index_counts: BTreeMap<usize, u64>,
    /// Sum of emission probabilities per sorted-index position.
    pub index_emission_sum: BTreeMap<usize, f64>,
    /// Hypotheses retained after each timestep's selection; length equals T.
    pub beam_counts: Vec<usize>,
    /// Total (hypothesis, candidate) extension operations performed.
    pub expansions: u64,
    /// Seconds spent in the decode loop (excludes file I/O).
    pub wall_time_secs: f64,
}

impl DecodeStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one token selection at a sorted-index position.
    pub fn record_selection(&mut self, sorted_index: usize, emission_prob: f64) {
        *self.index_counts.entry(sorted_index).or_insert(0) += 1;
        *self.index_emission_sum.entry(sorted_index).or_insert(0.0) += emission_prob;
    }

    pub fn total_selections(&self) -> u64 {
        self.index_counts.values().sum()
    }

    /// Fold another utterance's stats into this aggregate.
    pub fn merge(&mut self, other: &DecodeStats) {
        for (&idx, &count) in &other.index_counts {
            *self.index_counts.entry(idx).or_insert(0) += count;
        }
        for (&idx, &sum) in &other.index_emission_sum {
            *self.index_emission_sum.entry(idx).or_insert(0.0) += sum;
        }
        self.beam_counts.extend_from_slice(&other.beam_counts);
        self.expansions += other.expansions;
        self.wall_time_secs += other.wall_time_secs;
    }

    /// Summarize: per-index means plus order statistics over the concatenated
    /// per-timestep beam counts (median/quartiles by linear interpolation
    /// between closest ranks).
    pub fn summarize(&self) -> StatsSummary {
        let total = self.total_selections();
        let per_index = self
            .index_counts
            .iter()
            .map(|(&index, &count)| IndexSummary {
                index,
                count,
                mean_emission: self.index_emission_sum.get(&index).copied().unwrap_or(0.0)
                    / count as f64,
            })
            .collect();
        let beams = if self.beam_counts.is_empty() {
            None
        } else {
            let mut sorted: Vec<f64> = self.beam_counts.iter().map(|&c| c as f64).collect();
            sorted.sort_by(f64::total_cmp);
            Some(BeamCountSummary {
                mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
                median: quantile_linear(&sorted, 0.5),
                q1: quantile_linear(&sorted, 0.25),
                q3: quantile_linear(&sorted, 0.75),
                min: sorted[0],
                max: sorted[sorted.len() - 1],
            })
        };
        StatsSummary {
            per_index,
            total_selections: total,
            beams,
            total_timesteps: self.beam_counts.len(),
            expansions: self.expansions,
            wall_time_secs: self.wall_time_secs,
        }
    }
}

/// One row of the chosen-index histogram.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IndexSummary {
    pub index: usize,
    pub count: u64,
    pub mean_emission: f64,
}

/// Order statistics over per-timestep beam counts.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BeamCountSummary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Corpus- or utterance-level summary of [`DecodeStats`]. `beams` is absent
/// for an empty corpus (zero timesteps).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StatsSummary {
    pub per_index: Vec<IndexSummary>,
    pub total_selections: u64,
    pub beams: Option<BeamCountSummary>,
    pub total_timesteps: usize,
    pub expansions: u64,
    pub wall_time_secs: f64,
}

/// Linear-interpolation quantile over a sorted sample.
fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One recorded selection from a hypothesis's trail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRecord {
    pub timestep: usize,
    pub sorted_index: usize,
    pub emission_prob: f64,
}

/// The winning hypothesis's full selection trail in chronological order,
/// for aggregation across a corpus.
pub fn best_beam_backtrace_indices(
    result: &DecodeResult,
) -> Result<Vec<SelectionRecord>, StatsError> {
    if result.instrument == Instrument::Off {
        return Err(StatsError::InstrumentationDisabled);
    }
    let mut records = Vec::new();
    let mut node = result.best.trail.as_deref();
    while let Some(event) = node {
        records.push(SelectionRecord {
            timestep: event.timestep,
            sorted_index: event.sorted_index,
            emission_prob: event.emission_prob,
        });
        node = event.prev.as_deref();
    }
    records.reverse();
    Ok(records)
}
