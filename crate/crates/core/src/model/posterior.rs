use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::CreativeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    FatigueAware,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::FatigueAware => "fatigue_aware",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "fatigue_aware" | "fa" => Ok(Mode::FatigueAware),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Per-coordinate Gaussian posterior over the hashed weight space.
///
/// Stored sparsely: a coordinate never touched by training sits at the
/// prior, mean 0 and variance 1/lambda. In fatigue-aware mode the two
/// coordinates past the hash space hold the fatigue weights b1 and b2.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub m_bits: u32,
    pub mode: Mode,
    pub lambda: f64,
    coords: HashMap<u32, (f64, f64)>, // index -> (mean, variance)
    available: BTreeSet<CreativeId>,
}

impl Posterior {
    pub fn new(m_bits: u32, mode: Mode, lambda: f64) -> Self {
        assert!(lambda > 0.0, "lambda must be positive");
        Self {
            m_bits,
            mode,
            lambda,
            coords: HashMap::new(),
            available: BTreeSet::new(),
        }
    }

    /// Total weight-vector length: 2^M, plus the two fatigue coordinates in
    /// fatigue-aware mode.
    pub fn dim(&self) -> u64 {
        (1u64 << self.m_bits)
            + match self.mode {
                Mode::Baseline => 0,
                Mode::FatigueAware => 2,
            }
    }

    pub fn prior_variance(&self) -> f64 {
        1.0 / self.lambda
    }

    pub fn mean(&self, idx: u32) -> f64 {
        self.coords.get(&idx).map(|c| c.0).unwrap_or(0.0)
    }

    pub fn variance(&self, idx: u32) -> f64 {
        self.coords.get(&idx).map(|c| c.1).unwrap_or(1.0 / self.lambda)
    }

    pub fn set(&mut self, idx: u32, mean: f64, variance: f64) {
        assert!(variance > 0.0, "posterior variance must be positive");
        if mean == 0.0 && variance == 1.0 / self.lambda {
            self.coords.remove(&idx);
        } else {
            self.coords.insert(idx, (mean, variance));
        }
    }

    pub fn kappa_index(&self) -> u32 {
        1u32 << self.m_bits
    }

    /// Fatigue weights (point estimates); (0, 0) in baseline mode.
    pub fn fatigue_weights(&self) -> (f64, f64) {
        match self.mode {
            Mode::Baseline => (0.0, 0.0),
            Mode::FatigueAware => {
                (self.mean(self.kappa_index()), self.mean(self.kappa_index() + 1))
            }
        }
    }

    pub fn touched_coords(&self) -> impl Iterator<Item = (u32, f64, f64)> + '_ {
        self.coords.iter().map(|(&i, &(m, v))| (i, m, v))
    }

    pub fn mark_available(&mut self, creative_id: &str) {
        self.available.insert(creative_id.to_string());
    }

    pub fn is_available(&self, creative_id: &str) -> bool {
        self.available.contains(creative_id)
    }

    pub fn available(&self) -> &BTreeSet<CreativeId> {
        &self.available
    }

    // -- file format ---------------------------------------------------

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "fabandit-posterior v1").unwrap();
        let header = serde_json::json!({
            "m_bits": self.m_bits,
            "mode": self.mode.as_str(),
            "lambda": self.lambda,
            "available": self.available,
        });
        writeln!(out, "{header}").unwrap();
        let mut idxs: Vec<u32> = self.coords.keys().copied().collect();
        idxs.sort_unstable();
        for i in idxs {
            let (m, v) = self.coords[&i];
            writeln!(out, "{i} {m:?} {v:?}").unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = fs::read_to_string(path)?;
        let mut lines = data.lines().enumerate();
        let (_, magic) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty posterior file".into() })?;
        if magic != "fabandit-posterior v1" {
            return Err(Error::Parse { line: 1, msg: "bad magic".into() });
        }
        #[derive(Deserialize)]
        struct Header {
            m_bits: u32,
            mode: String,
            lambda: f64,
            available: BTreeSet<String>,
        }
        let (_, hline) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 2, msg: "missing header".into() })?;
        let h: Header = serde_json::from_str(hline)
            .map_err(|e| Error::Parse { line: 2, msg: e.to_string() })?;
        let mut p = Posterior::new(h.m_bits, h.mode.parse()?, h.lambda);
        p.available = h.available;
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let bad = || Error::Parse { line: ln + 1, msg: "expected `idx mean var`".into() };
            let idx: u32 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let mean: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let var: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            p.coords.insert(idx, (mean, var));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_posterior_is_prior() {
        let p = Posterior::new(8, Mode::Baseline, 0.0011);
        assert_eq!(p.mean(5), 0.0);
        assert!((p.variance(5) - 1.0 / 0.0011).abs() < 1e-9);
        assert_eq!(p.dim(), 256);
        assert!(!p.is_available("c1"));
    }

    #[test]
    fn fa_mode_reserves_two_coordinates() {
        let mut p = Posterior::new(8, Mode::FatigueAware, 0.0011);
        assert_eq!(p.dim(), 258);
        p.set(256, 0.2, 1.0);
        p.set(257, -0.05, 1.0);
        assert_eq!(p.fatigue_weights(), (0.2, -0.05));
    }

    #[test]
    fn file_round_trips_bit_exactly() {
        let mut p = Posterior::new(10, Mode::FatigueAware, 0.0011);
        p.set(3, 0.123456789012345, 0.987654321);
        p.set(1024, -0.5, 2.0 / 3.0);
        p.set(17, 1e-300, 1e300);
        p.mark_available("c1");
        p.mark_available("c2");
        let dir = tempfile::tempdir().unwrap();
        let f1 = dir.path().join("p1");
        let f2 = dir.path().join("p2");
        p.write(&f1).unwrap();
        let back = Posterior::read(&f1).unwrap();
        assert_eq!(back, p);
        back.write(&f2).unwrap();
        assert_eq!(fs::read(&f1).unwrap(), fs::read(&f2).unwrap());
    }
}
