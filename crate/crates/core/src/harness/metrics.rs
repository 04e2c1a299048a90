use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::log::{ArmId, ConversionType, ImpressionRecord};

/// Raw outcome counts for one arm (or one arm within one campaign).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub impressions: u64,
    pub clicks: u64,
    pub post_click_conversions: u64,
    pub total_conversions: u64,
}

impl ArmCounts {
    fn add(&mut self, r: &ImpressionRecord) {
        self.impressions += 1;
        self.clicks += r.click as u64;
        if r.conversion {
            self.total_conversions += 1;
            if r.conversion_type == Some(ConversionType::PostClick) {
                self.post_click_conversions += 1;
            }
        }
    }

    pub fn ctr(&self) -> f64 {
        ratio(self.clicks, self.impressions)
    }

    /// Share of post-click conversions in all impressions.
    pub fn cvr(&self) -> f64 {
        ratio(self.post_click_conversions, self.impressions)
    }

    pub fn post_click_cvr(&self) -> f64 {
        ratio(self.post_click_conversions, self.clicks)
    }

    pub fn post_impression_cvr(&self) -> f64 {
        ratio(self.total_conversions, self.impressions)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub const METRIC_NAMES: [&str; 4] = ["ctr", "cvr", "post_click_cvr", "post_imp_cvr"];

fn metric_value(c: &ArmCounts, name: &str) -> f64 {
    match name {
        "ctr" => c.ctr(),
        "cvr" => c.cvr(),
        "post_click_cvr" => c.post_click_cvr(),
        "post_imp_cvr" => c.post_impression_cvr(),
        _ => unreachable!(),
    }
}

/// (successes, trials) pair behind each proportion metric, for the
/// significance test.
fn metric_counts(c: &ArmCounts, name: &str) -> (u64, u64) {
    match name {
        "ctr" => (c.clicks, c.impressions),
        "cvr" => (c.post_click_conversions, c.impressions),
        "post_click_cvr" => (c.post_click_conversions, c.clicks),
        "post_imp_cvr" => (c.total_conversions, c.impressions),
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: BTreeMap<ArmId, ArmCounts>,
    pub per_campaign: BTreeMap<String, BTreeMap<ArmId, ArmCounts>>,
    /// metric name -> arm -> metric divided by the random arm's value;
    /// absent when the random arm's raw value is 0.
    pub normalized: BTreeMap<String, BTreeMap<ArmId, f64>>,
    pub normalized_per_campaign: BTreeMap<String, BTreeMap<String, BTreeMap<ArmId, f64>>>,
    /// metric name -> "ARM_vs_ARM" -> two-sided p-value.
    pub p_values: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn compute_metrics(records: &[ImpressionRecord]) -> MetricsReport {
    let mut overall: BTreeMap<ArmId, ArmCounts> = BTreeMap::new();
    let mut per_campaign: BTreeMap<String, BTreeMap<ArmId, ArmCounts>> = BTreeMap::new();
    for r in records {
        overall.entry(r.arm).or_default().add(r);
        per_campaign
            .entry(r.campaign_id.clone())
            .or_default()
            .entry(r.arm)
            .or_default()
            .add(r);
    }

    let normalize = |counts: &BTreeMap<ArmId, ArmCounts>| -> BTreeMap<String, BTreeMap<ArmId, f64>> {
        let mut out = BTreeMap::new();
        let Some(random) = counts.get(&ArmId::Random) else {
            return out;
        };
        for name in METRIC_NAMES {
            let base = metric_value(random, name);
            if base <= 0.0 {
                continue;
            }
            let mut per_arm = BTreeMap::new();
            for (&arm, c) in counts {
                per_arm.insert(arm, metric_value(c, name) / base);
            }
            out.insert(name.to_string(), per_arm);
        }
        out
    };

    let normalized = normalize(&overall);
    let normalized_per_campaign = per_campaign
        .iter()
        .map(|(camp, counts)| (camp.clone(), normalize(counts)))
        .collect();

    let mut p_values: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let pairs = [
        (ArmId::Fa, ArmId::Baseline),
        (ArmId::Fa, ArmId::Random),
        (ArmId::Baseline, ArmId::Random),
    ];
    for name in METRIC_NAMES {
        let mut per_pair = BTreeMap::new();
        for (a, b) in pairs {
            let (Some(ca), Some(cb)) = (overall.get(&a), overall.get(&b)) else {
                continue;
            };
            let (sa, na) = metric_counts(ca, name);
            let (sb, nb) = metric_counts(cb, name);
            if na == 0 || nb == 0 {
                continue;
            }
            per_pair.insert(
                format!("{}_vs_{}", a.label(), b.label()),
                significance_test(sa, na, sb, nb),
            );
        }
        p_values.insert(name.to_string(), per_pair);
    }

    MetricsReport {
        overall,
        per_campaign,
        normalized,
        normalized_per_campaign,
        p_values,
    }
}

/// Two-proportion z-test (pooled variance, continuity-corrected),
/// two-sided.
pub fn significance_test(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64) -> f64 {
    assert!(n_a > 0 && n_b > 0, "both arms need impressions");
    let pa = successes_a as f64 / n_a as f64;
    let pb = successes_b as f64 / n_b as f64;
    let pooled = (successes_a + successes_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return 1.0;
    }
    let cc = 0.5 * (1.0 / n_a as f64 + 1.0 / n_b as f64);
    let z = ((pa - pb).abs() - cc).max(0.0) / se;
    let normal = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - normal.cdf(z))
}

impl MetricsReport {
    /// Aligned, human-readable tables in the shape of the paper's summary:
    /// normalized metrics per arm, then per-campaign CTRs.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<10} {:>12} {:>8} {:>8} {:>16} {:>14}",
            "Alg.", "Impressions", "CTR", "CVR", "Post-Click CVR", "Post-Imp CVR"
        )
        .unwrap();
        for arm in ArmId::ALL {
            let Some(c) = self.overall.get(&arm) else { continue };
            let norm = |name: &str| {
                self.normalized
                    .get(name)
                    .and_then(|m| m.get(&arm))
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into())
            };
            writeln!(
                out,
                "{:<10} {:>12} {:>8} {:>8} {:>16} {:>14}",
                arm.label(),
                c.impressions,
                norm("ctr"),
                norm("cvr"),
                norm("post_click_cvr"),
                norm("post_imp_cvr"),
            )
            .unwrap();
        }
        if !self.per_campaign.is_empty() {
            writeln!(out).unwrap();
            let camps: Vec<&String> = self.per_campaign.keys().collect();
            write!(out, "{:<10}", "Alg.").unwrap();
            for c in &camps {
                write!(out, " {:>8}", c).unwrap();
            }
            writeln!(out, "  (normalized CTR per campaign)").unwrap();
            for arm in ArmId::ALL {
                if !self.overall.contains_key(&arm) {
                    continue;
                }
                write!(out, "{:<10}", arm.label()).unwrap();
                for camp in &camps {
                    let v = self
                        .normalized_per_campaign
                        .get(camp.as_str())
                        .and_then(|m| m.get("ctr"))
                        .and_then(|m| m.get(&arm))
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "-".into());
                    write!(out, " {:>8}", v).unwrap();
                }
                writeln!(out).unwrap();
            }
        }
        if let Some(ctr_p) = self.p_values.get("ctr") {
            writeln!(out).unwrap();
            for (pair, p) in ctr_p {
                writeln!(out, "CTR {pair}: p = {p:.4}").unwrap();
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialize metrics report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::log::test_record;

    #[test]
    fn metric_definitions_match_brute_force() {
        let mut records = Vec::new();
        // 10 impressions: 4 clicks, 2 post-click conversions, 1 view-through
        for i in 0..10u64 {
            let mut r = test_record(i, &format!("u{i}"), ArmId::Fa, "c1", 0.0, i < 4);
            if i < 2 {
                r.conversion = true;
                r.conversion_type = Some(ConversionType::PostClick);
            } else if i == 9 {
                r.conversion = true;
                r.conversion_type = Some(ConversionType::PostImpression);
            }
            records.push(r);
        }
        let rep = compute_metrics(&records);
        let c = rep.overall[&ArmId::Fa];
        assert_eq!(c.impressions, 10);
        assert!((c.ctr() - 0.4).abs() < 1e-15);
        assert!((c.cvr() - 0.2).abs() < 1e-15);
        assert!((c.post_click_cvr() - 0.5).abs() < 1e-15);
        assert!((c.post_impression_cvr() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn random_normalizes_to_one_and_products_recover_raw() {
        let mut records = Vec::new();
        for arm in ArmId::ALL {
            for i in 0..100u64 {
                records.push(test_record(i, &format!("{arm}{i}"), arm, "c1", 0.0, i % 7 == 0));
            }
        }
        let rep = compute_metrics(&records);
        assert!((rep.normalized["ctr"][&ArmId::Random] - 1.0).abs() < 1e-15);
        for arm in ArmId::ALL {
            let raw = rep.overall[&arm].ctr();
            let norm = rep.normalized["ctr"][&arm];
            let base = rep.overall[&ArmId::Random].ctr();
            assert!((norm * base - raw).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_proportions_give_p_one() {
        assert_eq!(significance_test(5000, 100_000, 5000, 100_000), 1.0);
        assert_eq!(significance_test(0, 10, 0, 10), 1.0);
    }

    #[test]
    fn known_z_statistic() {
        // 600/10000 vs 500/10000: continuity-corrected pooled z ~ 3.0706,
        // two-sided p ~ 0.00214
        let p = significance_test(600, 10_000, 500, 10_000);
        assert!((p - 0.00214).abs() < 5e-5, "p = {p}");
    }
}
