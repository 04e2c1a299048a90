use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::fatigue::fatigue;
use crate::history::ExposureStore;
use crate::model::{
    downsample, expand_features, fnv1a64, hash_features, train_batch, Mode, Posterior, SgdConfig,
    TrainingExample,
};
use crate::policy::{select, tie_break};
use crate::similarity::{build_similarity_matrix, campaigns_of, Creative, SimilarityMatrix};
use crate::simenv::{
    generate_catalog, generate_impressions, generate_users, Environment, DAY_SECS,
};

use super::log::{ArmId, ConversionType, ImpressionRecord};
use super::metrics::{compute_metrics, MetricsReport};

/// Deterministic arm split on user id: about a third of users per arm.
pub fn assign_arm(user_id: &str) -> ArmId {
    ArmId::ALL[(fnv1a64(user_id) % 3) as usize]
}

pub struct ExperimentOutput {
    pub records: Vec<ImpressionRecord>,
    pub report: MetricsReport,
    pub posteriors: BTreeMap<ArmId, Posterior>,
    pub catalog: Vec<Creative>,
    pub sims: Vec<SimilarityMatrix>,
}

// Distinct rng streams per stochastic component, all derived from the
// master seed.
fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Runs the three-arm experiment: a pre-period of baseline-generated
/// traffic warm-starts both learned arms, then `days` days of the A/B test
/// in which each arm trains nightly on the logs it generated itself.
/// Reported metrics and the returned log cover the experiment days only.
pub fn run_experiment(cfg: &RunConfig, seed: u64) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let total_days = (cfg.pre_period_days + cfg.days) as u64;
    let horizon = total_days * DAY_SECS;
    let pre_end = cfg.pre_period_days as u64 * DAY_SECS;

    let catalog = generate_catalog(&cfg.environment, horizon, &mut stream(seed, 1));
    let sims: Vec<SimilarityMatrix> = campaigns_of(&catalog)
        .iter()
        .map(|c| build_similarity_matrix(&catalog, c))
        .collect::<Result<_>>()?;
    let sim_by_campaign: HashMap<&str, &SimilarityMatrix> =
        sims.iter().map(|m| (m.campaign_id.as_str(), m)).collect();
    let users = generate_users(&cfg.environment, &mut stream(seed, 2));
    let mut env = Environment::new(&cfg.environment, users.clone(), &catalog, &sims, &mut stream(seed, 3));
    let impressions =
        generate_impressions(&users, &catalog, 0, horizon, &mut stream(seed, 4))?;

    let p = &cfg.policy;
    let sgd = SgdConfig { eta0: p.eta0, power_t: p.power_t, epochs: p.epochs };
    let mut posteriors: BTreeMap<ArmId, Posterior> = BTreeMap::new();
    posteriors.insert(ArmId::Fa, Posterior::new(p.m_bits, Mode::FatigueAware, p.lambda));
    posteriors.insert(ArmId::Baseline, Posterior::new(p.m_bits, Mode::Baseline, p.lambda));

    let store = ExposureStore::new();
    let mut outcome_rng = stream(seed, 5);
    let mut select_rng = stream(seed, 6);
    let mut train_rngs: BTreeMap<ArmId, ChaCha8Rng> = BTreeMap::new();
    train_rngs.insert(ArmId::Fa, stream(seed, 7));
    train_rngs.insert(ArmId::Baseline, stream(seed, 8));

    let mut records: Vec<ImpressionRecord> = Vec::with_capacity(impressions.len());
    let mut day_start_idx: BTreeMap<ArmId, usize> = ArmId::ALL.iter().map(|&a| (a, 0)).collect();
    let mut current_day = 0u64;

    let train_arm = |posterior: &Posterior,
                         day_records: &[&ImpressionRecord],
                         rng: &mut ChaCha8Rng|
     -> Posterior {
        let fa = posterior.mode == Mode::FatigueAware;
        let kept = downsample(day_records.to_vec(), |r| r.click, p.negative_rate, rng);
        let mut creatives = BTreeSet::new();
        let examples: Vec<TrainingExample> = kept
            .iter()
            .map(|r| {
                creatives.insert(r.chosen.clone());
                let x = crate::model::ContextVector::new(r.context.iter().cloned());
                let mut z = hash_features(&expand_features(&x, &r.chosen), p.m_bits);
                if fa {
                    z = z.with_fatigue(r.kappa);
                }
                TrainingExample::new(z, r.click as u8)
            })
            .collect();
        if examples.is_empty() {
            return posterior.clone();
        }
        train_batch(
            &examples,
            p.m_bits,
            posterior.mode,
            p.lambda,
            Some(posterior),
            &sgd,
            &creatives,
            rng,
        )
    };

    for imp in &impressions {
        let day = imp.t / DAY_SECS;
        while day > current_day {
            // nightly batch update: each learned arm trains only on the
            // logs it generated. In the pre-period the FA arm's traffic is
            // served by the baseline algorithm, so its logs warm-start the
            // FA posterior exactly as existing-algorithm data would.
            for arm in [ArmId::Fa, ArmId::Baseline] {
                let start = day_start_idx[&arm];
                let day_records: Vec<&ImpressionRecord> = records[start..]
                    .iter()
                    .filter(|r| r.arm == arm)
                    .collect();
                let updated =
                    train_arm(&posteriors[&arm], &day_records, train_rngs.get_mut(&arm).unwrap());
                posteriors.insert(arm, updated);
            }
            for v in day_start_idx.values_mut() {
                *v = records.len();
            }
            current_day += 1;
            store.purge_expired(current_day * DAY_SECS);
        }

        let user = &users[imp.user_idx];
        let arm = assign_arm(&user.user_id);
        let x = user.context(imp.t);
        let sim = sim_by_campaign[imp.campaign_id.as_str()];
        let in_pre_period = imp.t < pre_end;

        let chosen = match arm {
            ArmId::Random => {
                let scores = vec![0.0; imp.candidates.len()];
                imp.candidates[tie_break(&scores, &mut select_rng)].clone()
            }
            ArmId::Baseline => {
                select(
                    &x,
                    &imp.candidates,
                    &user.user_id,
                    &imp.campaign_id,
                    imp.t,
                    &posteriors[&ArmId::Baseline],
                    None,
                    None,
                    p.alpha,
                    &mut select_rng,
                )?
                .chosen
            }
            ArmId::Fa => {
                let posterior = if in_pre_period {
                    // existing algorithm serves this traffic until the
                    // experiment starts
                    &posteriors[&ArmId::Baseline]
                } else {
                    &posteriors[&ArmId::Fa]
                };
                select(
                    &x,
                    &imp.candidates,
                    &user.user_id,
                    &imp.campaign_id,
                    imp.t,
                    posterior,
                    Some(sim),
                    Some(&store),
                    p.alpha,
                    &mut select_rng,
                )?
                .chosen
            }
        };

        // kappa of the chosen creative under the engine's similarity
        // matrix, logged for every arm
        let h = store.get_history(&user.user_id, &imp.campaign_id, imp.t);
        let kappa = fatigue(&h, sim, &chosen)?.0;
        let freq = h.total();

        let outcome = env.step(imp.user_idx, &imp.campaign_id, &chosen, imp.t, &mut outcome_rng);
        store.record_exposure(&user.user_id, &imp.campaign_id, &chosen, imp.t);

        records.push(ImpressionRecord {
            t: imp.t,
            user_id: user.user_id.clone(),
            campaign_id: imp.campaign_id.clone(),
            arm,
            context: x.features().to_vec(),
            candidates: imp.candidates.clone(),
            chosen,
            kappa,
            freq,
            click: outcome.click,
            conversion: outcome.conversion,
            conversion_type: if outcome.conversion {
                Some(if outcome.click {
                    ConversionType::PostClick
                } else {
                    ConversionType::PostImpression
                })
            } else {
                None
            },
        });
    }

    let experiment_records: Vec<ImpressionRecord> = records
        .into_iter()
        .filter(|r| r.t >= pre_end)
        .collect();
    let report = compute_metrics(&experiment_records);

    Ok(ExperimentOutput {
        records: experiment_records,
        report,
        posteriors,
        catalog,
        sims,
    })
}
