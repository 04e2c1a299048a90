//! Creative catalog and the precomputed creative-to-creative similarity
//! matrix.
//!
//! Similarity between two creatives is a 3:1 weighted average of the cosine
//! similarity of their token bags and the cosine similarity of their image
//! embeddings. Matrices are built offline per campaign and served read-only
//! at decision time.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CreativeId = String;
pub type CampaignId = String;
pub type TokenCounts = BTreeMap<String, u32>;

/// One ad variant: token bag from its description text, optional image
/// embedding, campaign membership and active lifetime (mortal arm).
#[derive(Debug, Clone, PartialEq)]
pub struct Creative {
    pub creative_id: CreativeId,
    pub campaign_id: CampaignId,
    pub tokens: TokenCounts,
    pub image_embedding: Option<Vec<f64>>,
    pub active_from: u64,
    pub active_until: u64,
}

impl Creative {
    pub fn is_active(&self, t: u64) -> bool {
        self.active_from <= t && t < self.active_until
    }
}

/// Splits description text into a token multiset. The default lowercases
/// and splits on whitespace; swap in a morphological analyzer for languages
/// where that is not enough.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> TokenCounts;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> TokenCounts {
        let mut counts = TokenCounts::new();
        for tok in text.split_whitespace() {
            *counts.entry(tok.to_lowercase()).or_insert(0) += 1;
        }
        counts
    }
}

/// Cosine similarity of two token-count vectors over the union vocabulary.
/// Empty multisets are dirty data, not errors: either side empty gives 0.
pub fn text_similarity(a: &TokenCounts, b: &TokenCounts) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut dot = 0.0;
    for (tok, &ca) in a {
        if let Some(&cb) = b.get(tok) {
            dot += ca as f64 * cb as f64;
        }
    }
    let na: f64 = a.values().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Cosine similarity of two embedding vectors, clamped below at 0 so every
/// similarity lives in [0,1]. Zero vectors give 0.
pub fn image_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Catalog(format!(
            "embedding dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

/// Text similarity gets three times the weight of image similarity.
pub fn combined_similarity(s_text: f64, s_image: f64) -> f64 {
    (3.0 * s_text + s_image) / 4.0
}

/// Symmetric per-campaign matrix of pairwise creative similarity in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub campaign_id: CampaignId,
    pub creative_ids: Vec<CreativeId>,
    index: HashMap<CreativeId, usize>,
    entries: Vec<f64>, // row-major, n x n
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.creative_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.creative_ids.is_empty()
    }

    pub fn index_of(&self, creative_id: &str) -> Option<usize> {
        self.index.get(creative_id).copied()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.len() + k]
    }

    /// Similarity between two creatives by id; None if either is unknown.
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    /// Mean and standard deviation of the off-diagonal entries
    /// (population sd; None for a 1x1 matrix).
    pub fn off_diagonal_stats(&self) -> Option<(f64, f64)> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let mut vals = Vec::with_capacity(n * n - n);
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    vals.push(self.get(j, k));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        Some((mean, var.sqrt()))
    }

    pub(crate) fn from_parts(
        campaign_id: CampaignId,
        creative_ids: Vec<CreativeId>,
        entries: Vec<f64>,
    ) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, id) in creative_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Catalog(format!("duplicate creative_id {id}")));
            }
        }
        if entries.len() != creative_ids.len() * creative_ids.len() {
            return Err(Error::Catalog("matrix size mismatch".into()));
        }
        Ok(Self { campaign_id, creative_ids, index, entries })
    }
}

/// Builds the similarity matrix over all creatives of one campaign.
/// Deterministic in the catalog contents.
pub fn build_similarity_matrix(
    catalog: &[Creative],
    campaign_id: &str,
) -> Result<SimilarityMatrix> {
    let members: Vec<&Creative> = catalog
        .iter()
        .filter(|c| c.campaign_id == campaign_id)
        .collect();
    if members.is_empty() {
        return Err(Error::Catalog(format!("campaign {campaign_id} has no creatives")));
    }
    let mut dim: Option<usize> = None;
    for c in &members {
        if c.active_from >= c.active_until {
            return Err(Error::Catalog(format!(
                "creative {} has empty active window",
                c.creative_id
            )));
        }
        if let Some(e) = &c.image_embedding {
            match dim {
                None => dim = Some(e.len()),
                Some(d) if d != e.len() => {
                    return Err(Error::Catalog(format!(
                        "creative {} embedding dimension {} != catalog dimension {}",
                        c.creative_id,
                        e.len(),
                        d
                    )))
                }
                _ => {}
            }
        }
    }
    let n = members.len();
    let ids: Vec<CreativeId> = members.iter().map(|c| c.creative_id.clone()).collect();
    let mut entries = vec![0.0; n * n];
    for j in 0..n {
        for k in j..n {
            let s = if j == k {
                // A creative with any content is maximally similar to itself;
                // a fully empty creative carries no fatigue signal at all.
                if members[j].tokens.is_empty() && members[j].image_embedding.is_none() {
                    0.0
                } else {
                    1.0
                }
            } else {
                let s_text = text_similarity(&members[j].tokens, &members[k].tokens);
                let s_image = match (&members[j].image_embedding, &members[k].image_embedding) {
                    (Some(a), Some(b)) => image_similarity(a, b)?,
                    _ => 0.0,
                };
                combined_similarity(s_text, s_image)
            };
            entries[j * n + k] = s;
            entries[k * n + j] = s;
        }
    }
    SimilarityMatrix::from_parts(campaign_id.to_string(), ids, entries)
}

/// All campaigns present in the catalog, in first-appearance order.
pub fn campaigns_of(catalog: &[Creative]) -> Vec<CampaignId> {
    let mut seen = Vec::new();
    for c in catalog {
        if !seen.contains(&c.campaign_id) {
            seen.push(c.campaign_id.clone());
        }
    }
    seen
}

// ---------------------------------------------------------------------------
// Catalog file format: one JSON record per line.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRecord {
    creative_id: String,
    campaign_id: String,
    active_from: u64,
    active_until: u64,
    #[serde(default)]
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
    /// Alternative to `embedding`: path (relative to the catalog file) of a
    /// file with one float per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_file: Option<String>,
}

pub fn read_catalog(path: &Path) -> Result<Vec<Creative>> {
    read_catalog_with(path, &WhitespaceTokenizer)
}

pub fn read_catalog_with(path: &Path, tokenizer: &dyn Tokenizer) -> Result<Vec<Creative>> {
    let data = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CatalogRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if seen.insert(rec.creative_id.clone(), i).is_some() {
            return Err(Error::Catalog(format!(
                "duplicate creative_id {} at line {}",
                rec.creative_id,
                i + 1
            )));
        }
        if rec.active_from >= rec.active_until {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!(
                    "active_from {} must precede active_until {}",
                    rec.active_from, rec.active_until
                ),
            });
        }
        let embedding = match (rec.embedding, rec.embedding_file) {
            (Some(v), _) => Some(v),
            (None, Some(f)) => {
                let text = fs::read_to_string(base.join(&f))?;
                let mut v = Vec::new();
                for (j, l) in text.lines().enumerate() {
                    let l = l.trim();
                    if l.is_empty() {
                        continue;
                    }
                    v.push(l.parse::<f64>().map_err(|e| Error::Parse {
                        line: j + 1,
                        msg: format!("{f}: {e}"),
                    })?);
                }
                Some(v)
            }
            (None, None) => None,
        };
        out.push(Creative {
            creative_id: rec.creative_id,
            campaign_id: rec.campaign_id,
            tokens: tokenizer.tokenize(&rec.text),
            image_embedding: embedding,
            active_from: rec.active_from,
            active_until: rec.active_until,
        });
    }
    Ok(out)
}

/// Writes a catalog as line-delimited JSON. Token bags are flattened back to
/// a whitespace text so the file round-trips through the default tokenizer.
pub fn write_catalog(path: &Path, catalog: &[Creative]) -> Result<()> {
    let mut out = String::new();
    for c in catalog {
        let mut words = Vec::new();
        for (tok, &n) in &c.tokens {
            for _ in 0..n {
                words.push(tok.as_str());
            }
        }
        let rec = CatalogRecord {
            creative_id: c.creative_id.clone(),
            campaign_id: c.campaign_id.clone(),
            active_from: c.active_from,
            active_until: c.active_until,
            text: words.join(" "),
            embedding: c.image_embedding.clone(),
            embedding_file: None,
        };
        out.push_str(&serde_json::to_string(&rec).expect("serialize catalog record"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Matrix file format: a text header per campaign block followed by row-major
// values. Floats are written in shortest round-trip form, so rewriting a
// parsed file reproduces it byte for byte.
// ---------------------------------------------------------------------------

const MATRIX_MAGIC: &str = "fabandit-simmatrix v1";

pub fn write_matrices(path: &Path, matrices: &[SimilarityMatrix]) -> Result<()> {
    let mut out = String::new();
    for m in matrices {
        writeln!(out, "{MATRIX_MAGIC}").unwrap();
        writeln!(out, "campaign {}", m.campaign_id).unwrap();
        writeln!(out, "creatives {}", m.len()).unwrap();
        for id in &m.creative_ids {
            writeln!(out, "{id}").unwrap();
        }
        let n = m.len();
        for j in 0..n {
            let row: Vec<String> = (0..n).map(|k| format!("{:?}", m.get(j, k))).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrices(path: &Path) -> Result<Vec<SimilarityMatrix>> {
    let data = fs::read_to_string(path)?;
    let mut lines = data.lines().enumerate().peekable();
    let mut out = Vec::new();
    let parse_err = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };
    while let Some((ln, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        if line != MATRIX_MAGIC {
            return Err(parse_err(ln, &format!("expected header `{MATRIX_MAGIC}`")));
        }
        let (ln, camp) = lines.next().ok_or_else(|| parse_err(ln, "truncated file"))?;
        let campaign_id = camp
            .strip_prefix("campaign ")
            .ok_or_else(|| parse_err(ln, "expected `campaign <id>`"))?
            .to_string();
        let (ln, cnt) = lines.next().ok_or_else(|| parse_err(ln, "truncated file"))?;
        let n: usize = cnt
            .strip_prefix("creatives ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(ln, "expected `creatives <n>`"))?;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let (_, id) = lines.next().ok_or_else(|| parse_err(ln, "truncated id list"))?;
            ids.push(id.to_string());
        }
        let mut entries = Vec::with_capacity(n * n);
        for _ in 0..n {
            let (ln, row) = lines.next().ok_or_else(|| parse_err(ln, "truncated matrix"))?;
            for tok in row.split_whitespace() {
                entries.push(
                    tok.parse::<f64>()
                        .map_err(|e| parse_err(ln, &e.to_string()))?,
                );
            }
        }
        out.push(SimilarityMatrix::from_parts(campaign_id, ids, entries)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(pairs: &[(&str, u32)]) -> TokenCounts {
        pairs.iter().map(|(s, n)| (s.to_string(), *n)).collect()
    }

    fn creative(id: &str, camp: &str, text: &str, emb: Option<Vec<f64>>) -> Creative {
        Creative {
            creative_id: id.into(),
            campaign_id: camp.into(),
            tokens: WhitespaceTokenizer.tokenize(text),
            image_embedding: emb,
            active_from: 0,
            active_until: 1_000_000,
        }
    }

    #[test]
    fn text_similarity_identical() {
        let a = toks(&[("x", 2), ("y", 1)]);
        assert!((text_similarity(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_similarity_disjoint_and_empty() {
        let a = toks(&[("x", 1)]);
        let b = toks(&[("y", 1)]);
        assert_eq!(text_similarity(&a, &b), 0.0);
        assert_eq!(text_similarity(&a, &TokenCounts::new()), 0.0);
        assert_eq!(text_similarity(&TokenCounts::new(), &TokenCounts::new()), 0.0);
    }

    #[test]
    fn text_similarity_half_overlap() {
        // {a:1,b:1} vs {a:1,c:1}: 1/(sqrt2 * sqrt2) = 0.5
        let a = toks(&[("a", 1), ("b", 1)]);
        let b = toks(&[("a", 1), ("c", 1)]);
        assert!((text_similarity(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn text_similarity_scale_invariant() {
        let a = toks(&[("a", 1), ("b", 2)]);
        let a3 = toks(&[("a", 3), ("b", 6)]);
        let b = toks(&[("a", 1), ("c", 1)]);
        assert!((text_similarity(&a, &b) - text_similarity(&a3, &b)).abs() < 1e-12);
    }

    #[test]
    fn image_similarity_basics() {
        assert!((image_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(image_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = image_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        // negative cosine clamps to 0
        assert_eq!(image_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        // zero vector
        assert_eq!(image_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(image_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn combined_weighting() {
        assert_eq!(combined_similarity(1.0, 1.0), 1.0);
        assert_eq!(combined_similarity(0.0, 0.0), 0.0);
        assert!((combined_similarity(0.5, 0.3) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn build_single_creative() {
        let cat = vec![creative("c1", "A", "hello world", None)];
        let m = build_similarity_matrix(&cat, "A").unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn build_identical_pair_is_all_ones() {
        let cat = vec![
            creative("c1", "A", "play now", Some(vec![1.0, 2.0])),
            creative("c2", "A", "play now", Some(vec![1.0, 2.0])),
        ];
        let m = build_similarity_matrix(&cat, "A").unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!((m.get(j, k) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn build_contract_holds() {
        let cat = vec![
            creative("c1", "A", "special event today", Some(vec![1.0, 0.5, 0.0])),
            creative("c2", "A", "coupons for you", Some(vec![0.2, 0.9, 0.1])),
            creative("c3", "A", "special coupons", Some(vec![0.5, 0.5, 0.5])),
            creative("other", "B", "unrelated", None),
        ];
        let m = build_similarity_matrix(&cat, "A").unwrap();
        assert_eq!(m.len(), 3);
        for j in 0..3 {
            assert_eq!(m.get(j, j), 1.0);
            for k in 0..3 {
                assert_eq!(m.get(j, k), m.get(k, j));
                assert!((0.0..=1.0).contains(&m.get(j, k)));
            }
        }
    }

    #[test]
    fn build_rejects_duplicates_and_dim_mismatch() {
        let cat = vec![
            creative("c1", "A", "x", None),
            creative("c1", "A", "y", None),
        ];
        assert!(matches!(build_similarity_matrix(&cat, "A"), Err(Error::Catalog(_))));
        let cat = vec![
            creative("c1", "A", "x", Some(vec![1.0, 2.0])),
            creative("c2", "A", "y", Some(vec![1.0])),
        ];
        assert!(matches!(build_similarity_matrix(&cat, "A"), Err(Error::Catalog(_))));
    }

    #[test]
    fn matrix_file_round_trips_bit_exactly() {
        let cat = vec![
            creative("c1", "A", "special event today", Some(vec![1.0, 0.5])),
            creative("c2", "A", "coupons today", Some(vec![0.3, 0.7])),
            creative("d1", "B", "come back", None),
            creative("d2", "B", "come back soon", None),
        ];
        let ms = vec![
            build_similarity_matrix(&cat, "A").unwrap(),
            build_similarity_matrix(&cat, "B").unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.sim");
        let p2 = dir.path().join("m2.sim");
        write_matrices(&p1, &ms).unwrap();
        let back = read_matrices(&p1).unwrap();
        assert_eq!(back, ms);
        write_matrices(&p2, &back).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn catalog_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("catalog.jsonl");
        let cat = vec![
            creative("c1", "A", "special event today", Some(vec![1.0, 0.5])),
            creative("c2", "A", "coupons today today", None),
        ];
        write_catalog(&p, &cat).unwrap();
        let back = read_catalog(&p).unwrap();
        assert_eq!(back, cat);

        fs::write(
            &p,
            "{\"creative_id\":\"c1\",\"campaign_id\":\"A\",\"active_from\":0,\"active_until\":10}\n\
             {\"creative_id\":\"c1\",\"campaign_id\":\"A\",\"active_from\":0,\"active_until\":10}\n",
        )
        .unwrap();
        assert!(matches!(read_catalog(&p), Err(Error::Catalog(_))));
    }

    #[test]
    fn embedding_file_reference() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("emb.txt"), "0.5\n0.25\n").unwrap();
        let p = dir.path().join("catalog.jsonl");
        fs::write(
            &p,
            "{\"creative_id\":\"c1\",\"campaign_id\":\"A\",\"active_from\":0,\"active_until\":10,\"text\":\"hi\",\"embedding_file\":\"emb.txt\"}\n",
        )
        .unwrap();
        let cat = read_catalog(&p).unwrap();
        assert_eq!(cat[0].image_embedding, Some(vec![0.5, 0.25]));
    }
}
