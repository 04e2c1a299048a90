use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::CreativeId;

use super::log::{ArmId, ImpressionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayEstimate {
    pub ctr: f64,
    pub clicks: u64,
    /// Records where the policy's choice matched the logged choice.
    pub consumed: u64,
    /// Random-arm records inspected.
    pub total: u64,
}

/// Replay estimator over uniformly randomized logs: iterate the random
/// arm's records in order, ask the candidate policy for its choice, and
/// score only the records where the choices coincide.
pub fn replay_evaluate(
    records: &[ImpressionRecord],
    mut policy: impl FnMut(&ImpressionRecord) -> Result<CreativeId>,
) -> Result<ReplayEstimate> {
    let mut consumed = 0u64;
    let mut clicks = 0u64;
    let mut total = 0u64;
    for r in records.iter().filter(|r| r.arm == ArmId::Random) {
        total += 1;
        if policy(r)? == r.chosen {
            consumed += 1;
            clicks += r.click as u64;
        }
    }
    if consumed == 0 {
        return Err(Error::UndefinedEstimate(format!(
            "policy matched none of {total} random-arm records"
        )));
    }
    Ok(ReplayEstimate {
        ctr: clicks as f64 / consumed as f64,
        clicks,
        consumed,
        total,
    })
}
