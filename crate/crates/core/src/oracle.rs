//! Exponential-time exact references used to validate the decoder.
//!
//! Two independent routes: a per-labeling forward recursion over reachable
//! alignment states, and a raw enumeration of all V^T alignment paths. They
//! cross-check each other on small instances, and the beam decoder is checked
//! against both under no-pruning configurations.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::emissions::EmissionMatrix;
use crate::{collapse_alignment, TokenId};

/// Path-count cap: instances with V^T beyond this are refused.
const MAX_PATHS: f64 = 1e7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large: V^T = {paths:.0} exceeds {max:.0}")]
    TooLarge { paths: f64, max: f64 },
    #[error("labeling contains the blank token")]
    BlankInLabeling,
}

/// A collapsed labeling with its total alignment posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingScore {
    pub labeling: Vec<TokenId>,
    pub posterior: f64,
}

fn size_guard(emissions: &EmissionMatrix) -> Result<(), OracleError> {
    let paths = (emissions.vocab_size() as f64).powi(emissions.num_frames() as i32);
    if paths > MAX_PATHS {
        return Err(OracleError::TooLarge {
            paths,
            max: MAX_PATHS,
        });
    }
    Ok(())
}

/// Exact probability that a random alignment under the emission distribution
/// collapses to `labeling`: the sum over all such paths of their per-frame
/// emission products, computed by the standard forward recursion over the
/// blank-interleaved label sequence.
pub fn alignment_posterior(
    emissions: &EmissionMatrix,
    labeling: &[TokenId],
    blank: TokenId,
) -> Result<f64, OracleError> {
    size_guard(emissions)?;
    if labeling.contains(&blank) {
        return Err(OracleError::BlankInLabeling);
    }
    let t_total = emissions.num_frames();
    if t_total == 0 {
        return Ok(if labeling.is_empty() { 1.0 } else { 0.0 });
    }
    // Extended sequence: blank, l1, blank, l2, ..., lL, blank.
    let ext_len = 2 * labeling.len() + 1;
    let ext = |s: usize| -> TokenId {
        if s.is_multiple_of(2) {
            blank
        } else {
            labeling[s / 2]
        }
    };
    let mut alpha = vec![0.0f64; ext_len];
    let row0 = emissions.row(0);
    alpha[0] = row0[blank as usize];
    if ext_len > 1 {
        alpha[1] = row0[ext(1) as usize];
    }
    let mut next = vec![0.0f64; ext_len];
    for t in 1..t_total {
        let row = emissions.row(t);
        for (s, slot) in next.iter_mut().enumerate() {
            let tok = ext(s);
            let mut mass = alpha[s];
            if s >= 1 {
                mass += alpha[s - 1];
            }
            if s >= 2 && tok != blank && ext(s - 2) != tok {
                mass += alpha[s - 2];
            }
            *slot = mass * row[tok as usize];
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    let mut total = alpha[ext_len - 1];
    if ext_len > 1 {
        total += alpha[ext_len - 2];
    }
    Ok(total)
}

/// Posterior of every labeling, via raw enumeration of all V^T alignment
/// paths: collapse each path and accumulate its emission product.
pub fn raw_path_posteriors(
    emissions: &EmissionMatrix,
    blank: TokenId,
) -> Result<BTreeMap<Vec<TokenId>, f64>, OracleError> {
    size_guard(emissions)?;
    let t_total = emissions.num_frames();
    let v = emissions.vocab_size();
    let mut posteriors: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    let mut path = vec![0usize; t_total];
    loop {
        let mut product = 1.0f64;
        for (t, &tok) in path.iter().enumerate() {
            product *= emissions.row(t)[tok];
        }
        if product > 0.0 || t_total == 0 {
            let ids: Vec<TokenId> = path.iter().map(|&t| t as TokenId).collect();
            let labeling = collapse_alignment(&ids, blank);
            *posteriors.entry(labeling).or_insert(0.0) += product;
        }
        // Next path in mixed-radix order.
        let mut pos = t_total;
        loop {
            if pos == 0 {
                return Ok(posteriors);
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// All labelings of length <= T over the non-blank alphabet, shortest first,
/// lexicographic within a length.
pub fn enumerate_labelings(
    num_frames: usize,
    vocab_size: usize,
    blank: TokenId,
) -> Vec<Vec<TokenId>> {
    let alphabet: Vec<TokenId> = (0..vocab_size as TokenId).filter(|&t| t != blank).collect();
    let mut out: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut current: Vec<Vec<TokenId>> = vec![Vec::new()];
    for _ in 0..num_frames {
        let mut longer = Vec::with_capacity(current.len() * alphabet.len());
        for labeling in &current {
            for &tok in &alphabet {
                let mut extended = Vec::with_capacity(labeling.len() + 1);
                extended.extend_from_slice(labeling);
                extended.push(tok);
                longer.push(extended);
            }
        }
        out.extend(longer.iter().cloned());
        current = longer;
    }
    out
}

/// Exhaustive argmax over all labelings of length <= T, deterministic
/// tie-break: shorter labeling first, then lexicographic.
pub fn brute_force_best(
    emissions: &EmissionMatrix,
    blank: TokenId,
) -> Result<LabelingScore, OracleError> {
    size_guard(emissions)?;
    let mut best: Option<LabelingScore> = None;
    for labeling in enumerate_labelings(emissions.num_frames(), emissions.vocab_size(), blank) {
        let posterior = alignment_posterior(emissions, &labeling, blank)?;
        // Enumeration is shortest-then-lexicographic, so a strict improvement
        // check realizes the tie-break.
        if best.as_ref().is_none_or(|b| posterior > b.posterior) {
            best = Some(LabelingScore {
                labeling,
                posterior,
            });
        }
    }
    Ok(best.expect("labeling enumeration is never empty"))
}
