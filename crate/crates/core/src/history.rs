//! Real-time exposure history, keyed by (user, campaign).
//!
//! Impressions are deduplicated to one record per creative per minute and
//! only the trailing 24 hours count toward a user's history vector. The
//! window is half-open: a record exactly 24 hours old is already out.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::similarity::{CampaignId, CreativeId};

pub const WINDOW_SECS: u64 = 24 * 60 * 60;

pub fn minute_bucket(t: u64) -> u64 {
    t / 60 * 60
}

/// Per-(user, campaign) exposure counts within the trailing window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoryVector {
    pub campaign_id: CampaignId,
    pub counts: BTreeMap<CreativeId, u32>,
}

impl HistoryVector {
    pub fn count(&self, creative_id: &str) -> u32 {
        self.counts.get(creative_id).copied().unwrap_or(0)
    }

    /// Total exposures in the window (the user's 24h frequency).
    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }
}

type Key = (String, CampaignId);

/// Concurrent exposure store. Entries are (minute_bucket, creative_id)
/// pairs; the per-key sets are independently locked, so recording and
/// reading different users never contend.
#[derive(Debug, Default)]
pub struct ExposureStore {
    map: DashMap<Key, BTreeSet<(u64, CreativeId)>>,
    latest: AtomicU64,
}

impl ExposureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the first impression of a creative per minute. Returns false
    /// when the (user, campaign, creative, minute) record already exists or
    /// the timestamp is already outside the retention window.
    pub fn record_exposure(
        &self,
        user_id: &str,
        campaign_id: &str,
        creative_id: &str,
        t: u64,
    ) -> bool {
        let latest = self.latest.fetch_max(t, Ordering::SeqCst).max(t);
        // A replayed record older than the whole window would be invisible
        // to every future query; drop it instead of storing it.
        if minute_bucket(t) + WINDOW_SECS <= latest {
            return false;
        }
        let mut set = self
            .map
            .entry((user_id.to_string(), campaign_id.to_string()))
            .or_default();
        set.insert((minute_bucket(t), creative_id.to_string()))
    }

    /// Exposure counts with minute buckets in (t - 24h, t].
    pub fn get_history(&self, user_id: &str, campaign_id: &str, t: u64) -> HistoryVector {
        let mut hv = HistoryVector {
            campaign_id: campaign_id.to_string(),
            ..Default::default()
        };
        let key = (user_id.to_string(), campaign_id.to_string());
        if let Some(set) = self.map.get(&key) {
            // half-open window on buckets: lo < bucket <= t, and everything
            // counts while the clock is still inside the first window
            let lo = if t >= WINDOW_SECS { t - WINDOW_SECS + 1 } else { 0 };
            for (_, creative) in set.range((lo, String::new())..(t + 1, String::new())) {
                *hv.counts.entry(creative.clone()).or_insert(0) += 1;
            }
        }
        hv
    }

    /// Drops every record with minute bucket at or before t - 24h.
    pub fn purge_expired(&self, t: u64) -> usize {
        // nothing can be 24h old while the clock is inside the first window
        let Some(cutoff) = t.checked_sub(WINDOW_SECS) else {
            return 0;
        };
        let mut removed = 0;
        for mut entry in self.map.iter_mut() {
            let keep = entry.value_mut().split_off(&(cutoff + 1, String::new()));
            removed += entry.value().len();
            *entry.value_mut() = keep;
        }
        self.map.retain(|_, set| !set.is_empty());
        removed
    }

    pub fn record_count(&self) -> usize {
        self.map.iter().map(|e| e.value().len()).sum()
    }

    /// Writes sorted `user\tcampaign\tcreative\tminute` lines.
    pub fn dump_snapshot(&self, w: &mut dyn Write) -> Result<()> {
        let mut lines = Vec::new();
        for entry in self.map.iter() {
            let (user, campaign) = entry.key();
            for (bucket, creative) in entry.value() {
                lines.push(format!("{user}\t{campaign}\t{creative}\t{bucket}"));
            }
        }
        lines.sort();
        for l in lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    }

    pub fn load_snapshot(r: &mut dyn BufRead) -> Result<Self> {
        let store = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected user\\tcampaign\\tcreative\\tminute".into(),
                });
            }
            let bucket: u64 = parts[3].parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad minute bucket: {e}"),
            })?;
            store
                .map
                .entry((parts[0].to_string(), parts[1].to_string()))
                .or_default()
                .insert((bucket, parts[2].to_string()));
            store.latest.fetch_max(bucket, Ordering::SeqCst);
        }
        Ok(store)
    }
}
