use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::log::{ArmId, ImpressionRecord};

/// Binned fatigue analyses over an impression log:
/// - fatigue histogram per arm and campaign,
/// - mean fatigue by 24h exposure frequency per arm,
/// - CTR / post-impression CVR by fatigue bin, random arm only
///   (binned means stand in for the smoothed curves).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatigueReport {
    pub bin_width: f64,
    /// (arm, campaign, bin_lo) -> count
    pub kappa_histogram: BTreeMap<ArmId, BTreeMap<String, BTreeMap<u32, u64>>>,
    /// arm -> frequency -> (count, mean kappa)
    pub kappa_by_frequency: BTreeMap<ArmId, BTreeMap<u32, (u64, f64)>>,
    /// campaign -> bin -> (count, ctr, post-impression cvr), random arm only
    pub response_by_kappa: BTreeMap<String, BTreeMap<u32, (u64, f64, f64)>>,
}

pub fn fatigue_report(records: &[ImpressionRecord], bin_width: f64) -> FatigueReport {
    assert!(bin_width > 0.0);
    let bin = |kappa: f64| (kappa / bin_width).floor() as u32;

    let mut kappa_histogram: BTreeMap<ArmId, BTreeMap<String, BTreeMap<u32, u64>>> =
        BTreeMap::new();
    let mut freq_acc: BTreeMap<ArmId, BTreeMap<u32, (u64, f64)>> = BTreeMap::new();
    let mut resp_acc: BTreeMap<String, BTreeMap<u32, (u64, u64, u64)>> = BTreeMap::new();

    for r in records {
        *kappa_histogram
            .entry(r.arm)
            .or_default()
            .entry(r.campaign_id.clone())
            .or_default()
            .entry(bin(r.kappa))
            .or_insert(0) += 1;
        let f = freq_acc.entry(r.arm).or_default().entry(r.freq).or_insert((0, 0.0));
        f.0 += 1;
        f.1 += r.kappa;
        if r.arm == ArmId::Random {
            let e = resp_acc
                .entry(r.campaign_id.clone())
                .or_default()
                .entry(bin(r.kappa))
                .or_insert((0, 0, 0));
            e.0 += 1;
            e.1 += r.click as u64;
            e.2 += r.conversion as u64;
        }
    }

    FatigueReport {
        bin_width,
        kappa_histogram,
        kappa_by_frequency: freq_acc
            .into_iter()
            .map(|(arm, m)| {
                (
                    arm,
                    m.into_iter()
                        .map(|(f, (n, sum))| (f, (n, sum / n as f64)))
                        .collect(),
                )
            })
            .collect(),
        response_by_kappa: resp_acc
            .into_iter()
            .map(|(camp, m)| {
                (
                    camp,
                    m.into_iter()
                        .map(|(b, (n, clicks, convs))| {
                            (b, (n, clicks as f64 / n as f64, convs as f64 / n as f64))
                        })
                        .collect(),
                )
            })
            .collect(),
    }
}

impl FatigueReport {
    /// Delimited columns for external plotting, one section per analysis.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "section,arm,campaign,bin_lo,frequency,count,mean_kappa,ctr,post_imp_cvr")
            .unwrap();
        for (arm, camps) in &self.kappa_histogram {
            for (camp, bins) in camps {
                for (&b, &n) in bins {
                    writeln!(
                        out,
                        "kappa_histogram,{arm},{camp},{},,{n},,,",
                        b as f64 * self.bin_width
                    )
                    .unwrap();
                }
            }
        }
        for (arm, freqs) in &self.kappa_by_frequency {
            for (&f, &(n, mean)) in freqs {
                writeln!(out, "kappa_by_frequency,{arm},,,{f},{n},{mean},,").unwrap();
            }
        }
        for (camp, bins) in &self.response_by_kappa {
            for (&b, &(n, ctr, cvr)) in bins {
                writeln!(
                    out,
                    "response_by_kappa,Random,{camp},{},,{n},,{ctr},{cvr}",
                    b as f64 * self.bin_width
                )
                .unwrap();
            }
        }
        out
    }

    /// Impression-weighted mean kappa for one arm.
    pub fn mean_kappa(&self, records: &[ImpressionRecord], arm: ArmId) -> Option<f64> {
        let (n, sum) = records
            .iter()
            .filter(|r| r.arm == arm)
            .fold((0u64, 0.0), |(n, s), r| (n + 1, s + r.kappa));
        (n > 0).then(|| sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::log::test_record;

    #[test]
    fn all_zero_kappa_lands_in_first_bin() {
        let recs: Vec<_> = (0..7)
            .map(|i| test_record(i, "u", ArmId::Fa, "c1", 0.0, false))
            .collect();
        let rep = fatigue_report(&recs, 5.0);
        let bins = &rep.kappa_histogram[&ArmId::Fa]["A"];
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[&0], 7);
    }

    #[test]
    fn consecutive_bins() {
        let recs: Vec<_> = [1.0, 6.0, 11.0]
            .iter()
            .enumerate()
            .map(|(i, &k)| test_record(i as u64, "u", ArmId::Fa, "c1", k, false))
            .collect();
        let rep = fatigue_report(&recs, 5.0);
        let bins = &rep.kappa_histogram[&ArmId::Fa]["A"];
        assert_eq!(bins.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(bins.values().all(|&n| n == 1));
    }

    #[test]
    fn binned_means_match_brute_force() {
        let kappas = [0.5, 1.0, 4.9, 5.0, 7.2, 12.0, 13.3];
        let recs: Vec<_> = kappas
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut r = test_record(i as u64, "u", ArmId::Random, "c1", k, i % 2 == 0);
                r.freq = (i % 3) as u32;
                r
            })
            .collect();
        let rep = fatigue_report(&recs, 5.0);
        // brute-force group-by over the same width
        let mut expect: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        for r in &recs {
            let e = expect.entry((r.kappa / 5.0).floor() as u32).or_insert((0, 0));
            e.0 += 1;
            e.1 += r.click as u64;
        }
        for (b, (n, clicks)) in expect {
            let (rn, ctr, _) = rep.response_by_kappa["A"][&b];
            assert_eq!(rn, n);
            assert!((ctr - clicks as f64 / n as f64).abs() < 1e-15);
        }
        // frequency group means
        for (f, (n, mean)) in &rep.kappa_by_frequency[&ArmId::Random] {
            let group: Vec<f64> = recs
                .iter()
                .filter(|r| r.freq == *f)
                .map(|r| r.kappa)
                .collect();
            assert_eq!(group.len() as u64, *n);
            let bf = group.iter().sum::<f64>() / group.len() as f64;
            assert!((mean - bf).abs() < 1e-12);
        }
    }
}
