//! The fatigue metric: similarity-weighted sum of a user's recent exposures.
//!
//! For candidate creative a and history vector h, fatigue is h . s(a) where
//! s(a) is a's column of the precomputed similarity matrix. A user who saw
//! the same creative three times and a 0.39-similar one once carries a
//! fatigue of 3.39 toward the repeated creative.

use crate::error::{Error, Result};
use crate::history::HistoryVector;
use crate::similarity::SimilarityMatrix;

/// Nonnegative fatigue level of one user toward one candidate creative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FatigueScore(pub f64);

/// Exposures to creatives no longer in the matrix (retired arms) contribute
/// nothing; the candidate itself must be known.
pub fn fatigue(
    h: &HistoryVector,
    sim: &SimilarityMatrix,
    candidate: &str,
) -> Result<FatigueScore> {
    let col = sim
        .index_of(candidate)
        .ok_or_else(|| Error::Config(format!("candidate {candidate} not in similarity matrix")))?;
    let mut total = 0.0;
    for (creative, &count) in &h.counts {
        if let Some(row) = sim.index_of(creative) {
            total += count as f64 * sim.get(row, col);
        }
    }
    Ok(FatigueScore(total))
}
