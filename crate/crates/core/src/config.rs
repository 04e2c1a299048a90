//! Run configuration: one TOML file drives catalog generation, the
//! environment, the policies, and the experiment schedule.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stochastic component derives its stream from it.
    pub seed: u64,
    /// Experiment days (after the pre-period).
    pub days: u32,
    /// Days of baseline-generated traffic used to warm-start all arms
    /// before the experiment proper.
    pub pre_period_days: u32,
    pub out_dir: PathBuf,
    /// Bin width for the fatigue histograms.
    pub bin_width: f64,
    pub policy: PolicyConfig,
    pub environment: EnvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            days: 7,
            pre_period_days: 1,
            out_dir: PathBuf::from("out"),
            bin_width: 5.0,
            policy: PolicyConfig::default(),
            environment: EnvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Hash bits M; feature space is 2^M (+2 in fatigue-aware mode).
    pub m_bits: u32,
    /// Exploration scale on the posterior covariance.
    pub alpha: f64,
    /// L2 regularization strength.
    pub lambda: f64,
    /// Negative down-sampling rate.
    pub negative_rate: f64,
    /// SGD passes over each daily batch.
    pub epochs: u32,
    /// SGD base learning rate; the schedule is eta0 / t^power_t.
    pub eta0: f64,
    pub power_t: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            m_bits: 24,
            alpha: 0.01,
            lambda: 0.0011,
            negative_rate: 0.05,
            epochs: 1,
            eta0: 0.1,
            power_t: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub users: u32,
    /// Mean ad arrivals per user per day (Poisson).
    pub arrivals_per_user_per_day: f64,
    /// Log-normal spread of per-user arrival intensity; larger values make
    /// heavy users heavier, raising the share of repeat exposures.
    pub activity_sigma: f64,
    /// Category counts for the synthetic context features.
    pub devices: u32,
    pub sites: u32,
    pub ssps: u32,
    /// Per-user responsiveness spread (logit scale).
    pub user_sigma: f64,
    /// Per-creative appeal: logit-scale base and spread.
    pub beta_mean: f64,
    pub beta_sigma: f64,
    /// Wear-in / wear-out coefficients of the true click logit; the net
    /// effect peaks at F = c1 / (2 c2).
    pub c1: f64,
    pub c2: f64,
    /// Post-click conversion logit: gamma0 + gamma1 * F.
    pub gamma0: f64,
    pub gamma1: f64,
    /// Conversion probability without a click.
    pub view_through: f64,
    /// Noise applied to the engine's similarity matrix to form the true
    /// one (0 = the environment shares the engine's estimates).
    pub sim_noise: f64,
    /// Window for the environment's own fatigue bookkeeping. Unlike the
    /// engine, the environment counts every exposure with no minute dedup.
    pub true_window_hours: f64,
    /// Image embedding dimension for generated catalogs.
    pub embed_dim: usize,
    pub campaigns: Vec<CampaignShape>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            users: 7000,
            arrivals_per_user_per_day: 12.0,
            activity_sigma: 0.6,
            devices: 3,
            sites: 4,
            ssps: 2,
            user_sigma: 0.2,
            beta_mean: -2.2,
            beta_sigma: 0.8,
            c1: 0.4,
            c2: 0.05,
            gamma0: -2.0,
            gamma1: 0.06,
            view_through: 0.002,
            sim_noise: 0.0,
            true_window_hours: 24.0,
            embed_dim: 16,
            campaigns: vec![
                CampaignShape::new("A", 21, 5, 8, 14, 0.6),
                CampaignShape::new("B", 12, 4, 12, 17, 1.2),
                CampaignShape::new("C", 5, 3, 13, 18, 2.0),
            ],
        }
    }
}

/// Shape of one generated campaign: creative count and the token/embedding
/// structure that sets its internal similarity level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignShape {
    pub id: String,
    pub creatives: u32,
    /// Tokens shared by every creative of the campaign.
    pub shared_tokens: u32,
    /// Range of per-creative unique token counts.
    pub unique_min: u32,
    pub unique_max: u32,
    /// Noise scale on embeddings relative to the campaign's common
    /// direction; higher noise lowers image similarity.
    pub image_noise: f64,
}

impl CampaignShape {
    pub fn new(
        id: &str,
        creatives: u32,
        shared_tokens: u32,
        unique_min: u32,
        unique_max: u32,
        image_noise: f64,
    ) -> Self {
        Self {
            id: id.to_string(),
            creatives,
            shared_tokens,
            unique_min,
            unique_max,
            image_noise,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.days == 0 {
            return err("days", "must be at least 1".into());
        }
        if self.bin_width <= 0.0 {
            return err("bin_width", "must be positive".into());
        }
        let p = &self.policy;
        if !(1..=31).contains(&p.m_bits) {
            return err("policy.m_bits", format!("{} outside 1..=31", p.m_bits));
        }
        if !(p.alpha > 0.0 && p.alpha <= 1.0) {
            return err("policy.alpha", format!("{} outside (0, 1]", p.alpha));
        }
        if p.lambda <= 0.0 {
            return err("policy.lambda", format!("{} must be positive", p.lambda));
        }
        if !(p.negative_rate > 0.0 && p.negative_rate <= 1.0) {
            return err("policy.negative_rate", format!("{} outside (0, 1]", p.negative_rate));
        }
        if p.epochs == 0 {
            return err("policy.epochs", "must be at least 1".into());
        }
        if p.eta0 <= 0.0 {
            return err("policy.eta0", "must be positive".into());
        }
        let e = &self.environment;
        if e.users == 0 {
            return err("environment.users", "must be at least 1".into());
        }
        if e.arrivals_per_user_per_day <= 0.0 {
            return err("environment.arrivals_per_user_per_day", "must be positive".into());
        }
        if e.c2 <= 0.0 || e.c1 <= 0.0 {
            return err("environment.c1/c2", "wear-in and wear-out must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.view_through) {
            return err("environment.view_through", "must be in [0, 1]".into());
        }
        if e.campaigns.is_empty() {
            return err("environment.campaigns", "at least one campaign required".into());
        }
        for c in &e.campaigns {
            if c.creatives == 0 {
                return err("environment.campaigns", format!("campaign {} has no creatives", c.id));
            }
            if c.unique_min > c.unique_max {
                return err(
                    "environment.campaigns",
                    format!("campaign {}: unique_min > unique_max", c.id),
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.policy.m_bits, 24);
        assert_eq!(c.policy.alpha, 0.01);
        assert_eq!(c.policy.lambda, 0.0011);
        assert_eq!(c.policy.negative_rate, 0.05);
        assert_eq!(c.bin_width, 5.0);
        assert_eq!(c.days, 7);
        assert_eq!(c.environment.campaigns.len(), 3);
        assert_eq!(c.environment.campaigns[0].creatives, 21);
        assert_eq!(c.environment.campaigns[1].creatives, 12);
        assert_eq!(c.environment.campaigns[2].creatives, 5);
        c.validate().unwrap();
    }

    #[test]
    fn zero_days_rejected() {
        let mut c = RunConfig::default();
        c.days = 0;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("days"), "{e}");
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        let c = RunConfig::default();
        c.save(&p).unwrap();
        let back = RunConfig::load(&p).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), toml::to_string(&c).unwrap());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c: RunConfig = toml::from_str("days = 3\n[policy]\nalpha = 0.5\n").unwrap();
        assert_eq!(c.days, 3);
        assert_eq!(c.policy.alpha, 0.5);
        assert_eq!(c.policy.lambda, 0.0011);
    }
}
