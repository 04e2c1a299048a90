use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmId {
    Fa,
    Baseline,
    Random,
}

impl ArmId {
    pub const ALL: [ArmId; 3] = [ArmId::Fa, ArmId::Baseline, ArmId::Random];

    pub fn label(&self) -> &'static str {
        match self {
            ArmId::Fa => "FA",
            ArmId::Baseline => "Baseline",
            ArmId::Random => "Random",
        }
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionType {
    PostClick,
    PostImpression,
}

/// One decision and its outcome. Field order is fixed by this struct, so
/// serialization is stable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub t: u64,
    pub user_id: String,
    pub campaign_id: String,
    pub arm: ArmId,
    pub context: Vec<String>,
    pub candidates: Vec<String>,
    pub chosen: String,
    /// Fatigue of the chosen creative under the engine's similarity matrix
    /// (computed post hoc for the baseline and random arms).
    pub kappa: f64,
    /// Exposures in the user's 24h engine history at decision time.
    pub freq: u32,
    pub click: bool,
    pub conversion: bool,
    pub conversion_type: Option<ConversionType>,
}

const LOG_HEADER: &str = r#"{"format":"fabandit-log","version":1}"#;

pub fn write_log(path: &Path, records: &[ImpressionRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 200);
    out.push_str(LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serialize impression record"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let data = fs::read_to_string(path)?;
    let mut lines = data.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LOG_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected log header {LOG_HEADER}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImpressionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !rec.candidates.contains(&rec.chosen) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("chosen creative {} not among candidates", rec.chosen),
            });
        }
        if rec.conversion && rec.conversion_type.is_none() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "conversion without conversion_type".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn test_record(
    t: u64,
    user: &str,
    arm: ArmId,
    chosen: &str,
    kappa: f64,
    click: bool,
) -> ImpressionRecord {
    ImpressionRecord {
        t,
        user_id: user.to_string(),
        campaign_id: "A".into(),
        arm,
        context: vec!["bias".into()],
        candidates: vec!["c1".into(), "c2".into(), chosen.to_string()],
        chosen: chosen.to_string(),
        kappa,
        freq: 0,
        click,
        conversion: false,
        conversion_type: None,
    }
}
