//! Evaluation metrics against simulator ground truth.
//!
//! Scale-invariant SDR with optimal-permutation assignment for separated
//! sources, plus an early-vs-residual energy ratio for dereverberation.

use itertools::Itertools;
use ndarray::ArrayView1;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reported values are capped at +/- this many dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Largest source count for the exhaustive permutation search.
pub const MAX_PERMUTATION_SOURCES: usize = 6;

/// Per-source evaluation result.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Index of the reference this estimate was scored against.
    pub reference_index: usize,
    pub si_sdr_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_gain_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srr_db: Option<f64>,
    /// Full estimate-to-reference assignment this report belongs to.
    pub permutation: Vec<usize>,
}

fn cap_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        return -SI_SDR_CAP_DB;
    }
    (10.0 * ratio.log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)
}

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// Projects the estimate onto the reference (alpha = <e, r> / |r|^2) and
/// compares the target energy |alpha r|^2 to the residual |alpha r - e|^2.
/// Capped at +/- 100 dB.
pub fn si_sdr(estimate: ArrayView1<f64>, reference: ArrayView1<f64>) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::invalid(format!(
            "estimate length {} != reference length {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = reference.dot(&reference);
    if ref_energy == 0.0 {
        return Err(Error::invalid("reference signal is zero"));
    }
    let alpha = estimate.dot(&reference) / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let mut residual = 0.0;
    for (e, r) in estimate.iter().zip(reference.iter()) {
        let d = alpha * r - e;
        residual += d * d;
    }
    if residual == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok(cap_db(target_energy / residual))
}

/// Early-to-residual energy ratio in dB.
///
/// Projects the estimate onto the early reference; everything left over
/// (late reverberation and noise) counts as residual. The late reference is
/// only validated for shape and reported alongside by callers.
pub fn srr(
    estimate: ArrayView1<f64>,
    early_reference: ArrayView1<f64>,
    late_reference: ArrayView1<f64>,
) -> Result<f64> {
    if estimate.len() != early_reference.len() || estimate.len() != late_reference.len() {
        return Err(Error::invalid("srr signals must have equal length"));
    }
    let early_energy = early_reference.dot(&early_reference);
    if early_energy == 0.0 {
        return Err(Error::invalid("early reference signal is zero"));
    }
    let alpha = estimate.dot(&early_reference) / early_energy;
    let target_energy = alpha * alpha * early_energy;
    let mut residual = 0.0;
    for (e, r) in estimate.iter().zip(early_reference.iter()) {
        let d = alpha * r - e;
        residual += d * d;
    }
    if residual == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok(cap_db(target_energy / residual))
}

/// Evaluate estimates against references under the best permutation.
///
/// Searches all assignments exhaustively (source count capped at 6) and
/// returns one report per estimate, maximizing the mean SI-SDR.
pub fn best_permutation_eval(
    estimates: &[ArrayView1<f64>],
    references: &[ArrayView1<f64>],
) -> Result<Vec<EvalReport>> {
    let k = estimates.len();
    if k == 0 || references.len() != k {
        return Err(Error::invalid(format!(
            "need equal nonzero counts, got {} estimates and {} references",
            k,
            references.len()
        )));
    }
    if k > MAX_PERMUTATION_SOURCES {
        return Err(Error::invalid(format!(
            "permutation search supports at most {MAX_PERMUTATION_SOURCES} sources, got {k}"
        )));
    }
    // pairwise scores, then exhaustive assignment
    let mut scores = vec![vec![0.0; k]; k];
    for (i, est) in estimates.iter().enumerate() {
        for (j, re) in references.iter().enumerate() {
            scores[i][j] = si_sdr(*est, *re)?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| scores[i][j]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, perm));
        }
    }
    let (_, perm) = best.unwrap();
    Ok(perm
        .iter()
        .enumerate()
        .map(|(i, &j)| EvalReport {
            reference_index: j,
            si_sdr_db: scores[i][j],
            snr_gain_db: None,
            srr_db: None,
            permutation: perm.clone(),
        })
        .collect())
}
