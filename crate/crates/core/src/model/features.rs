use std::collections::BTreeMap;

pub const BIAS_FEATURE: &str = "bias";

/// Raw categorical context of one bid request: string keys such as
/// `device=ios`, `site=news_app`, `ssp=x`, `hour=13`, plus the bias term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextVector {
    features: Vec<String>,
}

impl ContextVector {
    /// Builds a context from raw keys; the bias feature is added (once)
    /// if not already present.
    pub fn new(raw: impl IntoIterator<Item = String>) -> Self {
        let mut features: Vec<String> = Vec::new();
        let mut has_bias = false;
        for f in raw {
            if f == BIAS_FEATURE {
                if has_bias {
                    continue;
                }
                has_bias = true;
            }
            features.push(f);
        }
        if !has_bias {
            features.push(BIAS_FEATURE.to_string());
        }
        Self { features }
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }
}

/// Action-interaction expansion: the shared (creative-invariant) copies of
/// the context plus copies tagged with the chosen creative's id. Creatives
/// that were not chosen contribute nothing, which realizes the one-hot
/// action interaction without materializing zero blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFeatures {
    pub shared: Vec<String>,
    pub tagged: Vec<String>,
}

pub fn expand_features(x: &ContextVector, creative_id: &str) -> RawFeatures {
    let shared: Vec<String> = x.features().to_vec();
    let tagged = shared
        .iter()
        .map(|f| format!("a={creative_id}|{f}"))
        .collect();
    RawFeatures { shared, tagged }
}

/// FNV-1a, 64-bit. Seedless and byte-defined, so indices are identical
/// across runs, processes, and platforms.
pub fn fnv1a64(key: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Sparse hashed feature vector. Indices below 2^M come from the hash;
/// in fatigue-aware mode indices 2^M and 2^M + 1 carry kappa and kappa^2
/// and are never produced by hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedFeatures {
    pub m_bits: u32,
    /// (index, value, action_specific), sorted by index. Values at a
    /// colliding index are summed; a collision between a shared and a
    /// tagged key is treated as action-specific.
    pub entries: Vec<(u32, f64, bool)>,
    /// (kappa, kappa^2) stored at the two reserved indices.
    pub fatigue: Option<(f64, f64)>,
}

impl HashedFeatures {
    pub fn hash_dim(&self) -> u32 {
        1u32 << self.m_bits
    }

    pub fn kappa_index(&self) -> u32 {
        1u32 << self.m_bits
    }

    /// Iterates every active (index, value) pair including the fatigue
    /// coordinates.
    pub fn iter_all(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        let base = self.hash_dim();
        self.entries
            .iter()
            .map(|&(i, v, _)| (i, v))
            .chain(
                self.fatigue
                    .iter()
                    .flat_map(move |&(k, k2)| [(base, k), (base + 1, k2)]),
            )
    }

    pub fn with_fatigue(mut self, kappa: f64) -> Self {
        self.fatigue = Some((kappa, kappa * kappa));
        self
    }
}

/// Hashes raw string features into [0, 2^M), summing collisions.
pub fn hash_features(raw: &RawFeatures, m_bits: u32) -> HashedFeatures {
    assert!((1..=31).contains(&m_bits), "m_bits must be in 1..=31");
    let mask = (1u64 << m_bits) - 1;
    let mut acc: BTreeMap<u32, (f64, bool)> = BTreeMap::new();
    for key in &raw.shared {
        let idx = (fnv1a64(key) & mask) as u32;
        let e = acc.entry(idx).or_insert((0.0, false));
        e.0 += 1.0;
    }
    for key in &raw.tagged {
        let idx = (fnv1a64(key) & mask) as u32;
        let e = acc.entry(idx).or_insert((0.0, false));
        e.0 += 1.0;
        e.1 = true;
    }
    HashedFeatures {
        m_bits,
        entries: acc.into_iter().map(|(i, (v, a))| (i, v, a)).collect(),
        fatigue: None,
    }
}
