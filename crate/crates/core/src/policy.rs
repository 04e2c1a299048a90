//! Per-impression creative selection.
//!
//! For every available candidate the action-specific weights are Thompson
//! sampled and the predicted CTR computed (with the fatigue terms in
//! fatigue-aware mode). A candidate without a trained posterior gets a
//! +inf sentinel with probability 1/|A_t| and -inf otherwise, so fresh
//! arms win a uniform share of impressions until their first batch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fatigue::fatigue;
use crate::history::ExposureStore;
use crate::model::{expand_features, hash_features, sample_score, ContextVector, Mode, Posterior};
use crate::similarity::{CreativeId, SimilarityMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub chosen: CreativeId,
    /// Per-candidate scores in candidate order; sentinel scores are +-inf.
    pub scores: Vec<(CreativeId, f64)>,
    /// Per-candidate fatigue, in candidate order (zeros in baseline mode).
    pub kappa: Vec<(CreativeId, f64)>,
}

impl Decision {
    pub fn kappa_of(&self, creative_id: &str) -> f64 {
        self.kappa
            .iter()
            .find(|(c, _)| c == creative_id)
            .map(|(_, k)| *k)
            .unwrap_or(0.0)
    }
}

/// Uniformly random index among the maximal scores.
pub fn tie_break(scores: &[f64], rng: &mut impl Rng) -> usize {
    assert!(!scores.is_empty());
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == max)
        .map(|(i, _)| i)
        .collect();
    ties[rng.gen_range(0..ties.len())]
}

#[allow(clippy::too_many_arguments)]
pub fn select(
    x: &ContextVector,
    candidates: &[CreativeId],
    user_id: &str,
    campaign_id: &str,
    t: u64,
    posterior: &Posterior,
    sim: Option<&SimilarityMatrix>,
    history: Option<&ExposureStore>,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Decision> {
    if candidates.is_empty() {
        return Err(Error::Decision("empty candidate set".into()));
    }
    let fa = posterior.mode == Mode::FatigueAware;
    let h = if fa {
        let history = history
            .ok_or_else(|| Error::Decision("fatigue-aware mode requires a history store".into()))?;
        Some(history.get_history(user_id, campaign_id, t))
    } else {
        None
    };
    let n = candidates.len() as f64;
    let mut scores = Vec::with_capacity(candidates.len());
    let mut kappas = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let kappa = if fa {
            let sim = sim
                .ok_or_else(|| Error::Decision("fatigue-aware mode requires a similarity matrix".into()))?;
            fatigue(h.as_ref().unwrap(), sim, cand)?.0
        } else {
            0.0
        };
        kappas.push((cand.clone(), kappa));
        let score = if posterior.is_available(cand) {
            let mut z = hash_features(&expand_features(x, cand), posterior.m_bits);
            if fa {
                z = z.with_fatigue(kappa);
            }
            sample_score(posterior, &z, alpha, rng)
        } else if rng.gen::<f64>() < 1.0 / n {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        scores.push((cand.clone(), score));
    }
    let vals: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
    let idx = tie_break(&vals, rng);
    Ok(Decision {
        chosen: candidates[idx].clone(),
        scores,
        kappa: kappas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(names: &[&str]) -> Vec<CreativeId> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_candidate_always_chosen() {
        let post = Posterior::new(8, Mode::Baseline, 0.0011);
        let x = ContextVector::new(["device=a".to_string()]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let d = select(&x, &ids(&["only"]), "u", "A", 0, &post, None, None, 0.01, &mut rng)
                .unwrap();
            assert_eq!(d.chosen, "only");
        }
    }

    #[test]
    fn empty_candidates_error() {
        let post = Posterior::new(8, Mode::Baseline, 0.0011);
        let x = ContextVector::new([]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(select(&x, &[], "u", "A", 0, &post, None, None, 0.01, &mut rng).is_err());
    }

    #[test]
    fn tie_break_unique_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(tie_break(&[0.1, 0.9, 0.5], &mut rng), 1);
    }

    #[test]
    fn tie_break_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 10_000;
        let mut counts = [0u32; 2];
        for _ in 0..trials {
            counts[tie_break(&[1.0, 1.0, 0.0], &mut rng)] += 1;
        }
        let sigma = (trials as f64 * 0.25f64).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 / 2.0).abs() < 3.0 * sigma, "counts {counts:?}");
        }

        let mut counts = [0u32; 5];
        for _ in 0..trials {
            counts[tie_break(&[2.0; 5], &mut rng)] += 1;
        }
        let sigma = (trials as f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 / 5.0).abs() < 3.0 * sigma, "counts {counts:?}");
        }
    }

    #[test]
    fn unavailable_arms_get_uniform_exploration_share() {
        // 2 candidates, one trained with a confidently high score, one new:
        // the new one must win exactly when it draws the +inf sentinel,
        // i.e. with probability 1/2.
        let mut post = Posterior::new(8, Mode::Baseline, 0.0011);
        post.mark_available("old");
        // push the trained score well above 0.5
        let x = ContextVector::new(["device=a".to_string()]);
        let z = hash_features(&expand_features(&x, "old"), 8);
        for (i, _) in z.iter_all() {
            post.set(i, 2.0, 1e-9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 20_000;
        let mut new_wins = 0;
        for _ in 0..trials {
            let d = select(&x, &ids(&["old", "new"]), "u", "A", 0, &post, None, None, 0.01, &mut rng)
                .unwrap();
            if d.chosen == "new" {
                new_wins += 1;
            }
        }
        let p = 0.5;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (new_wins as f64 - trials as f64 * p).abs() < 3.0 * sigma,
            "new wins {new_wins}/{trials}"
        );
    }

    #[test]
    fn fa_prefers_low_fatigue_when_b_negative() {
        use crate::history::ExposureStore;
        use crate::similarity::{build_similarity_matrix, Creative};
        // two creatives, dissimilar, equal contextual weights, negative
        // fatigue coefficients, near-zero alpha: the unexposed one wins.
        let cat: Vec<Creative> = ["c1", "c2"]
            .iter()
            .enumerate()
            .map(|(i, id)| Creative {
                creative_id: id.to_string(),
                campaign_id: "A".into(),
                tokens: [(format!("tok{i}"), 1)].into_iter().collect(),
                image_embedding: None,
                active_from: 0,
                active_until: 1_000_000,
            })
            .collect();
        let sim = build_similarity_matrix(&cat, "A").unwrap();
        let store = ExposureStore::new();
        for i in 0..10u64 {
            store.record_exposure("u", "A", "c2", 100_000 + i * 60);
        }
        let mut post = Posterior::new(8, Mode::FatigueAware, 0.0011);
        post.mark_available("c1");
        post.mark_available("c2");
        post.set(post.kappa_index(), -0.05, 1e-12);
        post.set(post.kappa_index() + 1, -0.01, 1e-12);
        // tiny variance everywhere so sampling is effectively the mean
        let x = ContextVector::new([]);
        for c in ["c1", "c2"] {
            let z = hash_features(&expand_features(&x, c), 8);
            for (i, _) in z.iter_all() {
                post.set(i, 0.0, 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = select(
            &x, &ids(&["c1", "c2"]), "u", "A", 101_000, &post, Some(&sim), Some(&store),
            1e-9, &mut rng,
        )
        .unwrap();
        assert_eq!(d.chosen, "c1");
        assert!(d.kappa_of("c2") > d.kappa_of("c1"));
    }
}
