use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::similarity::CreativeId;

use super::features::HashedFeatures;
use super::posterior::{Mode, Posterior};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One (hashed features, click label) pair for the daily batch.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: HashedFeatures,
    pub label: u8,
    pub weight: f64,
}

impl TrainingExample {
    pub fn new(features: HashedFeatures, label: u8) -> Self {
        assert!(label <= 1);
        Self { features, label, weight: 1.0 }
    }
}

/// Negative down-sampling: clicked examples are all kept, non-clicked ones
/// survive independently with probability `rate`.
pub fn downsample<T>(
    items: Vec<T>,
    is_positive: impl Fn(&T) -> bool,
    rate: f64,
    rng: &mut impl Rng,
) -> Vec<T> {
    assert!(rate > 0.0 && rate <= 1.0, "rate must be in (0, 1]");
    items
        .into_iter()
        .filter(|it| is_positive(it) || rng.gen::<f64>() < rate)
        .collect()
}

fn linear_score(features: &HashedFeatures, weights: &HashMap<u32, f64>) -> f64 {
    features
        .iter_all()
        .map(|(i, v)| weights.get(&i).copied().unwrap_or(0.0) * v)
        .sum()
}

/// Regularized negative log-likelihood: sum of per-example NLL plus
/// (lambda/2)||w||^2. The independent reference for gradient checks.
pub fn nll(examples: &[TrainingExample], weights: &HashMap<u32, f64>, lambda: f64) -> f64 {
    let mut total = 0.0;
    for ex in examples {
        let score = linear_score(&ex.features, weights);
        // -y log p - (1-y) log(1-p), written via log1p for stability
        let loss = if ex.label == 1 {
            (1.0 + (-score).exp()).ln()
        } else {
            (1.0 + score.exp()).ln()
        };
        total += ex.weight * loss;
    }
    total + 0.5 * lambda * weights.values().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of `nll` with respect to every coordinate that is
/// either active in some example or has nonzero weight.
pub fn nll_grad(
    examples: &[TrainingExample],
    weights: &HashMap<u32, f64>,
    lambda: f64,
) -> HashMap<u32, f64> {
    let mut grad: HashMap<u32, f64> = HashMap::new();
    for ex in examples {
        let p = sigmoid(linear_score(&ex.features, weights));
        let err = ex.weight * (p - ex.label as f64);
        for (i, v) in ex.features.iter_all() {
            *grad.entry(i).or_insert(0.0) += err * v;
        }
    }
    for (&i, &w) in weights {
        *grad.entry(i).or_insert(0.0) += lambda * w;
    }
    grad
}

/// SGD schedule: eta_t = eta0 / t^power_t over shuffled passes.
#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub eta0: f64,
    pub power_t: f64,
    pub epochs: u32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { eta0: 0.1, power_t: 0.5, epochs: 1 }
    }
}

/// Fits L2-regularized logistic regression by SGD and wraps the result in a
/// diagonal Laplace posterior: variance_j = 1 / (lambda + sum_t w_t p_t
/// (1 - p_t) z_tj^2) at the fitted mean. Coordinates untouched by the batch
/// keep the warm-start mean and the prior variance 1/lambda.
#[allow(clippy::too_many_arguments)]
pub fn train_batch(
    examples: &[TrainingExample],
    m_bits: u32,
    mode: Mode,
    lambda: f64,
    prior: Option<&Posterior>,
    cfg: &SgdConfig,
    creatives_in_batch: &BTreeSet<CreativeId>,
    rng: &mut impl Rng,
) -> Posterior {
    let mut w: HashMap<u32, f64> = HashMap::new();
    if let Some(p) = prior {
        for (i, mean, _) in p.touched_coords() {
            if mean != 0.0 {
                w.insert(i, mean);
            }
        }
    }

    let n = examples.len().max(1) as f64;
    let lambda_step = lambda / n; // per-example share of the L2 penalty
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut t: u64 = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let ex = &examples[i];
            let eta = cfg.eta0 / (t as f64).powf(cfg.power_t);
            let p = sigmoid(linear_score(&ex.features, &w));
            let err = ex.weight * (p - ex.label as f64);
            for (idx, v) in ex.features.iter_all() {
                let wj = w.entry(idx).or_insert(0.0);
                *wj -= eta * (err * v + lambda_step * *wj);
            }
        }
    }

    // Hessian diagonal at the fitted mean, over the same batch.
    let mut hess: HashMap<u32, f64> = HashMap::new();
    for ex in examples {
        let p = sigmoid(linear_score(&ex.features, &w));
        let curv = ex.weight * p * (1.0 - p);
        for (idx, v) in ex.features.iter_all() {
            *hess.entry(idx).or_insert(0.0) += curv * v * v;
        }
    }

    let mut post = Posterior::new(m_bits, mode, lambda);
    if let Some(p) = prior {
        for id in p.available() {
            post.mark_available(id);
        }
        for (i, mean, _) in p.touched_coords() {
            // untouched-by-this-batch coordinates: warm-start mean, prior variance
            post.set(i, mean, 1.0 / lambda);
        }
    }
    for (&i, &h) in &hess {
        post.set(i, w.get(&i).copied().unwrap_or(0.0), 1.0 / (lambda + h));
    }
    // touched but zero-curvature coordinates still carry their fitted mean
    for (&i, &wi) in &w {
        if !hess.contains_key(&i) {
            post.set(i, wi, 1.0 / lambda);
        }
    }
    for id in creatives_in_batch {
        post.mark_available(id);
    }
    post
}

/// Thompson draw for one scoring pass: action-specific coordinates of `z`
/// are sampled from N(mean, alpha * variance); shared coordinates and the
/// fatigue weights stay at their posterior means. Returns (index, weight)
/// pairs for every active coordinate of `z`.
pub fn sample_weights(
    posterior: &Posterior,
    z: &HashedFeatures,
    alpha: f64,
    rng: &mut impl Rng,
) -> Vec<(u32, f64)> {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
    let mut out = Vec::with_capacity(z.entries.len() + 2);
    for &(i, _, action_specific) in &z.entries {
        let mean = posterior.mean(i);
        let wi = if action_specific {
            let sd = (alpha * posterior.variance(i)).sqrt();
            Normal::new(mean, sd).expect("valid normal").sample(rng)
        } else {
            mean
        };
        out.push((i, wi));
    }
    if z.fatigue.is_some() {
        let (b1, b2) = posterior.fatigue_weights();
        out.push((z.kappa_index(), b1));
        out.push((z.kappa_index() + 1, b2));
    }
    out
}

/// Linear score of `z` under one Thompson draw, through the sigmoid.
pub fn sample_score(
    posterior: &Posterior,
    z: &HashedFeatures,
    alpha: f64,
    rng: &mut impl Rng,
) -> f64 {
    let w: HashMap<u32, f64> = sample_weights(posterior, z, alpha, rng).into_iter().collect();
    sigmoid(linear_score(z, &w))
}

/// Score of `z` at the posterior mean (no sampling).
pub fn mean_score(posterior: &Posterior, z: &HashedFeatures) -> f64 {
    let mut s = 0.0;
    for &(i, v, _) in &z.entries {
        s += posterior.mean(i) * v;
    }
    if let Some((k, k2)) = z.fatigue {
        let (b1, b2) = posterior.fatigue_weights();
        s += b1 * k + b2 * k2;
    }
    sigmoid(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::features::{expand_features, hash_features, ContextVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zvec(keys: &[&str], creative: &str, m: u32) -> HashedFeatures {
        let x = ContextVector::new(keys.iter().map(|s| s.to_string()));
        hash_features(&expand_features(&x, creative), m)
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.7) - 0.8455347349164652).abs() < 1e-12);
        assert!(sigmoid(-40.0) > 0.0);
        assert!(sigmoid(30.0) < 1.0);
        // saturates without overflow at extreme logits
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(5.0) + sigmoid(-5.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn predict_matches_hand_computed_fatigue_terms() {
        // linear part 1.5, b1 = 0.2, b2 = -0.05, kappa = 2:
        // sigma(1.5 + 0.4 - 0.2) = sigma(1.7)
        let mut post = Posterior::new(4, Mode::FatigueAware, 1.0);
        let z = HashedFeatures {
            m_bits: 4,
            entries: vec![(3, 1.0, false)],
            fatigue: None,
        }
        .with_fatigue(2.0);
        post.set(3, 1.5, 1.0);
        post.set(16, 0.2, 1.0);
        post.set(17, -0.05, 1.0);
        assert!((mean_score(&post, &z) - sigmoid(1.7)).abs() < 1e-12);

        // zero fatigue weights: same as baseline on the same z
        let mut base = Posterior::new(4, Mode::Baseline, 1.0);
        base.set(3, 1.5, 1.0);
        let mut fa = Posterior::new(4, Mode::FatigueAware, 1.0);
        fa.set(3, 1.5, 1.0);
        assert_eq!(mean_score(&fa, &z), mean_score(&base, &z));
    }

    #[test]
    fn all_zero_weights_score_half() {
        let post = Posterior::new(4, Mode::FatigueAware, 1.0);
        let z = zvec(&["device=ios"], "c1", 4).with_fatigue(7.0);
        assert_eq!(mean_score(&post, &z), 0.5);
    }

    #[test]
    fn downsample_keeps_positives_and_rate_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items: Vec<u8> = vec![1; 100];
        assert_eq!(downsample(items, |&x| x == 1, 0.05, &mut rng).len(), 100);
        let items: Vec<u8> = vec![0; 100];
        assert_eq!(downsample(items, |&x| x == 1, 1.0, &mut rng).len(), 100);
    }

    #[test]
    fn downsample_rate_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let items: Vec<u8> = vec![0; 100_000];
        let kept = downsample(items, |&x| x == 1, 0.05, &mut rng).len() as f64;
        let sigma = (100_000.0f64 * 0.05 * 0.95).sqrt(); // ~68.9
        assert!((kept - 5000.0).abs() < 3.0 * sigma, "kept = {kept}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let examples: Vec<TrainingExample> = (0..20)
            .map(|i| {
                let z = zvec(
                    &[&format!("device={}", i % 3), &format!("hour={}", i % 5)],
                    &format!("c{}", i % 2),
                    10,
                )
                .with_fatigue(rng.gen::<f64>() * 3.0);
                TrainingExample::new(z, (i % 2) as u8)
            })
            .collect();
        let mut weights: HashMap<u32, f64> = HashMap::new();
        for ex in &examples {
            for (i, _) in ex.features.iter_all() {
                weights.insert(i, rng.gen::<f64>() - 0.5);
            }
        }
        let lambda = 0.0011;
        let grad = nll_grad(&examples, &weights, lambda);
        let eps = 1e-6;
        for (&i, &g) in &grad {
            let mut wp = weights.clone();
            let mut wm = weights.clone();
            *wp.entry(i).or_insert(0.0) += eps;
            *wm.entry(i).or_insert(0.0) -= eps;
            let fd = (nll(&examples, &wp, lambda) - nll(&examples, &wm, lambda)) / (2.0 * eps);
            let denom = g.abs().max(fd.abs()).max(1e-8);
            assert!(
                (g - fd).abs() / denom < 1e-5,
                "coord {i}: analytic {g}, fd {fd}"
            );
        }
    }

    #[test]
    fn training_beats_zero_weights_on_separable_toy() {
        // 4 examples, 2 raw features, linearly separable on device
        let examples: Vec<TrainingExample> = (0..4)
            .map(|i| {
                let dev = if i % 2 == 0 { "device=a" } else { "device=b" };
                TrainingExample::new(zvec(&[dev], "c1", 10), (i % 2) as u8)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SgdConfig { eta0: 0.5, power_t: 0.5, epochs: 100 };
        let creatives: BTreeSet<String> = ["c1".to_string()].into();
        let post = train_batch(
            &examples, 10, Mode::Baseline, 0.0011, None, &cfg, &creatives, &mut rng,
        );
        let fitted: HashMap<u32, f64> =
            post.touched_coords().map(|(i, m, _)| (i, m)).collect();
        let zero = HashMap::new();
        assert!(nll(&examples, &fitted, 0.0011) < nll(&examples, &zero, 0.0011));
        assert!(post.is_available("c1"));
        assert!(!post.is_available("c2"));
    }

    #[test]
    fn untouched_coordinate_has_prior_variance() {
        let examples = vec![TrainingExample::new(zvec(&["device=a"], "c1", 10), 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let post = train_batch(
            &examples, 10, Mode::Baseline, 0.0011, None, &SgdConfig::default(),
            &BTreeSet::new(), &mut rng,
        );
        // an index no example touches
        let untouched = (0..1024u32)
            .find(|i| examples[0].features.entries.iter().all(|&(j, _, _)| j != *i))
            .unwrap();
        assert_eq!(post.variance(untouched), 1.0 / 0.0011);
        // touched, high-confidence coordinates sit strictly below 1/lambda
        for (i, _) in examples[0].features.iter_all() {
            assert!(post.variance(i) < 1.0 / 0.0011);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let examples: Vec<TrainingExample> = (0..50)
            .map(|i| {
                TrainingExample::new(
                    zvec(&[&format!("device={}", i % 4)], &format!("c{}", i % 3), 12),
                    (i % 5 == 0) as u8,
                )
            })
            .collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            train_batch(
                &examples, 12, Mode::Baseline, 0.0011, None,
                &SgdConfig::default(), &BTreeSet::new(), &mut rng,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sampled_weights_leave_shared_block_fixed() {
        let mut post = Posterior::new(10, Mode::FatigueAware, 0.0011);
        let z = zvec(&["device=a", "hour=3"], "c1", 10).with_fatigue(2.0);
        for (i, _) in z.iter_all() {
            post.set(i, 0.3, 0.5);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws: Vec<Vec<(u32, f64)>> =
            (0..10).map(|_| sample_weights(&post, &z, 0.01, &mut rng)).collect();
        for (pos, &(i, _, action)) in z.entries.iter().enumerate() {
            let vals: Vec<f64> = draws.iter().map(|d| d[pos].1).collect();
            if action {
                assert!(vals.windows(2).any(|w| w[0] != w[1]), "coord {i} never varied");
            } else {
                assert!(vals.iter().all(|&v| v == 0.3), "shared coord {i} was sampled");
            }
        }
        // fatigue weights are point estimates in every draw
        for d in &draws {
            assert_eq!(d[d.len() - 2].1, 0.3);
            assert_eq!(d[d.len() - 1].1, 0.3);
        }
    }

    #[test]
    fn sample_variance_tracks_alpha() {
        let mut post = Posterior::new(8, Mode::Baseline, 1.0);
        post.set(7, 1.0, 4.0);
        let z = HashedFeatures { m_bits: 8, entries: vec![(7, 1.0, true)], fatigue: None };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let alpha = 0.25;
        let n = 20_000;
        let draws: Vec<f64> =
            (0..n).map(|_| sample_weights(&post, &z, alpha, &mut rng)[0].1).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05);
        assert!((var - alpha * 4.0).abs() / (alpha * 4.0) < 0.05, "var = {var}");
    }
}
