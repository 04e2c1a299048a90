//! Synthetic user / campaign environment.
//!
//! Ground-truth click behavior follows an inverted-U in true fatigue: the
//! click logit gains c1 * F - c2 * F^2 where F is the similarity-weighted
//! count of *every* past exposure in the true window (no minute dedup), so
//! the engine's windowed, deduplicated kappa is an imperfect proxy of F.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::model::{sigmoid, ContextVector};
use crate::similarity::{CampaignId, Creative, CreativeId, SimilarityMatrix};

pub const DAY_SECS: u64 = 24 * 60 * 60;

/// One synthetic user: fixed context traits, a base responsiveness on the
/// logit scale, an arrival intensity, and the single campaign that
/// retargets them.
#[derive(Debug, Clone)]
pub struct SimUser {
    pub user_id: String,
    pub device: u32,
    pub site: u32,
    pub ssp: u32,
    pub responsiveness: f64,
    pub arrivals_per_day: f64,
    pub campaign_id: CampaignId,
}

impl SimUser {
    pub fn context(&self, t: u64) -> ContextVector {
        ContextVector::new([
            format!("device=d{}", self.device),
            format!("site=s{}", self.site),
            format!("ssp=p{}", self.ssp),
            format!("hour={}", t % DAY_SECS / 3600),
        ])
    }
}

/// One bid opportunity.
#[derive(Debug, Clone)]
pub struct Impression {
    pub t: u64,
    pub user_idx: usize,
    pub campaign_id: CampaignId,
    pub candidates: Vec<CreativeId>,
}

#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub click: bool,
    pub conversion: bool,
    pub f_true: f64,
}

/// Generates a creative catalog shaped by the per-campaign similarity
/// structure in the config: shared tokens raise text similarity, embedding
/// noise lowers image similarity.
pub fn generate_catalog(env: &EnvConfig, horizon_secs: u64, rng: &mut impl Rng) -> Vec<Creative> {
    let mut catalog = Vec::new();
    for camp in &env.campaigns {
        let common: Vec<f64> = (0..env.embed_dim).map(|_| rng.gen::<f64>()).collect();
        for i in 0..camp.creatives {
            let mut tokens = std::collections::BTreeMap::new();
            for k in 0..camp.shared_tokens {
                tokens.insert(format!("{}_shared{}", camp.id, k), 1);
            }
            let unique = rng.gen_range(camp.unique_min..=camp.unique_max);
            for k in 0..unique {
                tokens.insert(format!("{}_c{}_tok{}", camp.id, i, k), 1);
            }
            let embedding: Vec<f64> = common
                .iter()
                .map(|c| c + camp.image_noise * rng.gen::<f64>())
                .collect();
            catalog.push(Creative {
                creative_id: format!("{}_c{}", camp.id, i),
                campaign_id: camp.id.clone(),
                tokens,
                image_embedding: Some(embedding),
                active_from: 0,
                active_until: horizon_secs,
            });
        }
    }
    catalog
}

/// Draws the user population; users are split across campaigns round-robin
/// and their arrival intensity is log-normal around the configured mean.
pub fn generate_users(env: &EnvConfig, rng: &mut impl Rng) -> Vec<SimUser> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..env.users as usize)
        .map(|i| {
            let camp = &env.campaigns[i % env.campaigns.len()];
            let log_rate = normal.sample(rng) * env.activity_sigma
                - 0.5 * env.activity_sigma * env.activity_sigma;
            SimUser {
                user_id: format!("u{i}"),
                device: rng.gen_range(0..env.devices),
                site: rng.gen_range(0..env.sites),
                ssp: rng.gen_range(0..env.ssps),
                responsiveness: normal.sample(rng) * env.user_sigma,
                arrivals_per_day: env.arrivals_per_user_per_day * log_rate.exp(),
                campaign_id: camp.id.clone(),
            }
        })
        .collect()
}

/// Time-ordered impression stream over [t_start, t_end). Each user's
/// arrivals per day are Poisson with their own intensity; candidate sets
/// are the campaign's creatives active at the impression time.
pub fn generate_impressions(
    users: &[SimUser],
    catalog: &[Creative],
    t_start: u64,
    t_end: u64,
    rng: &mut impl Rng,
) -> Result<Vec<Impression>> {
    let mut out = Vec::new();
    let days = (t_end - t_start).div_ceil(DAY_SECS);
    for (user_idx, user) in users.iter().enumerate() {
        for d in 0..days {
            let day_start = t_start + d * DAY_SECS;
            let day_len = (t_end - day_start).min(DAY_SECS);
            let mean = user.arrivals_per_day * day_len as f64 / DAY_SECS as f64;
            if mean <= 0.0 {
                continue;
            }
            let n = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))? .sample(rng) as u64;
            for _ in 0..n {
                let t = day_start + rng.gen_range(0..day_len.max(1));
                out.push((t, user_idx));
            }
        }
    }
    out.sort_unstable();
    out.into_iter()
        .map(|(t, user_idx)| {
            let campaign_id = users[user_idx].campaign_id.clone();
            let candidates: Vec<CreativeId> = catalog
                .iter()
                .filter(|c| c.campaign_id == campaign_id && c.is_active(t))
                .map(|c| c.creative_id.clone())
                .collect();
            if candidates.is_empty() {
                return Err(Error::Config(format!(
                    "campaign {campaign_id} has no active creative at t={t}"
                )));
            }
            Ok(Impression { t, user_idx, campaign_id, candidates })
        })
        .collect()
}

/// Adds clamped Gaussian noise to the off-diagonal entries, keeping the
/// matrix symmetric and unit-diagonal.
pub fn perturb_matrix(m: &SimilarityMatrix, noise: f64, rng: &mut impl Rng) -> SimilarityMatrix {
    if noise == 0.0 {
        return m.clone();
    }
    let n = m.len();
    let normal = Normal::new(0.0, noise).unwrap();
    let mut entries = vec![0.0; n * n];
    for j in 0..n {
        entries[j * n + j] = m.get(j, j);
        for k in (j + 1)..n {
            let v = (m.get(j, k) + normal.sample(rng)).clamp(0.0, 1.0);
            entries[j * n + k] = v;
            entries[k * n + j] = v;
        }
    }
    SimilarityMatrix::from_parts(m.campaign_id.clone(), m.creative_ids.clone(), entries)
        .expect("perturbed matrix keeps the source shape")
}

/// Ground truth response parameters plus the environment's own exposure
/// bookkeeping.
pub struct Environment {
    pub users: Vec<SimUser>,
    pub beta: HashMap<CreativeId, f64>,
    pub true_sim: HashMap<CampaignId, SimilarityMatrix>,
    pub c1: f64,
    pub c2: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub view_through: f64,
    pub beta_mean: f64,
    window_secs: u64,
    exposures: HashMap<(usize, CampaignId), VecDeque<(u64, CreativeId)>>,
}

impl Environment {
    pub fn new(
        env: &EnvConfig,
        users: Vec<SimUser>,
        catalog: &[Creative],
        engine_sims: &[SimilarityMatrix],
        rng: &mut impl Rng,
    ) -> Self {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let beta = catalog
            .iter()
            .map(|c| {
                (
                    c.creative_id.clone(),
                    env.beta_mean + env.beta_sigma * normal.sample(rng),
                )
            })
            .collect();
        let true_sim = engine_sims
            .iter()
            .map(|m| (m.campaign_id.clone(), perturb_matrix(m, env.sim_noise, rng)))
            .collect();
        Self {
            users,
            beta,
            true_sim,
            c1: env.c1,
            c2: env.c2,
            gamma0: env.gamma0,
            gamma1: env.gamma1,
            view_through: env.view_through,
            beta_mean: env.beta_mean,
            window_secs: (env.true_window_hours * 3600.0) as u64,
            exposures: HashMap::new(),
        }
    }

    /// The peak of the fatigue bonus, c1 / (2 c2).
    pub fn fatigue_peak(&self) -> f64 {
        self.c1 / (2.0 * self.c2)
    }

    /// True fatigue of a user toward a candidate at time t: every past
    /// exposure inside the window counts, weighted by true similarity.
    pub fn true_fatigue(&mut self, user_idx: usize, campaign_id: &str, candidate: &str, t: u64) -> f64 {
        let key = (user_idx, campaign_id.to_string());
        let Some(log) = self.exposures.get_mut(&key) else {
            return 0.0;
        };
        let cutoff = t.saturating_sub(self.window_secs);
        while log.front().is_some_and(|&(rt, _)| rt <= cutoff) {
            log.pop_front();
        }
        let sim = &self.true_sim[campaign_id];
        let Some(col) = sim.index_of(candidate) else {
            return 0.0;
        };
        log.iter()
            .filter_map(|(_, c)| sim.index_of(c).map(|row| sim.get(row, col)))
            .sum()
    }

    pub fn true_click_prob(&self, user_idx: usize, creative: &str, f_true: f64) -> f64 {
        let base = self.beta.get(creative).copied().unwrap_or(self.beta_mean)
            + self.users[user_idx].responsiveness;
        sigmoid(base + self.c1 * f_true - self.c2 * f_true * f_true)
    }

    /// Resolves one impression: draws click and conversion and appends the
    /// exposure to the environment's own history.
    pub fn step(
        &mut self,
        user_idx: usize,
        campaign_id: &str,
        creative: &str,
        t: u64,
        rng: &mut impl Rng,
    ) -> Outcome {
        let f_true = self.true_fatigue(user_idx, campaign_id, creative, t);
        let p_click = self.true_click_prob(user_idx, creative, f_true);
        let click = rng.gen::<f64>() < p_click;
        let conversion = if click {
            rng.gen::<f64>() < sigmoid(self.gamma0 + self.gamma1 * f_true)
        } else {
            rng.gen::<f64>() < self.view_through
        };
        self.exposures
            .entry((user_idx, campaign_id.to_string()))
            .or_default()
            .push_back((t, creative.to_string()));
        Outcome { click, conversion, f_true }
    }
}
