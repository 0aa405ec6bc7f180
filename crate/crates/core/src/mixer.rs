//! Multi-dataset composition: per-dataset resampling, merging, and expansion
//! of sampled queries into positive/negative explanation pairs.
//!
//! Resampling counts:
//!
//! - ratio `r ≤ 1`: `round_half_even(r · n)` records drawn uniformly without
//!   replacement (original order kept); `r = 1` is the identity.
//! - ratio `r > 1`: `⌊r⌋` full copies plus `round_half_even(frac(r) · n)`
//!   records drawn as above.
//! - target count `m`: the same rule with `⌊m/n⌋` copies and `m mod n` extra.
//!
//! Class ids stay as given; across datasets a class is identified by
//! `(dataset, class_id)`, see [`PairRecord::class_key`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::seed::{name_index, rng_for, Stream};
use crate::xbench::Language;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("corpus {0:?} is empty")]
    EmptyCorpus(String),
    #[error("sampling ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("dataset tag {0:?} appears more than once")]
    TagCollision(String),
    #[error("corpus {0:?} has a single class; negatives need at least two")]
    SingleClass(String),
    #[error("duplicate pair ({query}, {reference}) in {dataset:?}")]
    DuplicatePair { dataset: String, query: String, reference: String },
    #[error("reference {reference:?} in {dataset:?} maps to classes {first:?} and {second:?}")]
    InconsistentClass { dataset: String, reference: String, first: String, second: String },
    #[error("record tagged {found:?} in a corpus tagged {expected:?}")]
    TagMismatch { expected: String, found: String },
    #[error("manifest mixes dataset tags {0:?} and {1:?}")]
    MixedTags(String, String),
    #[error("mix spec has no entry for dataset {0:?}")]
    MissingSpec(String),
    #[error("manifest: {0}")]
    Jsonl(#[from] JsonlError),
}

/// One query/reference training pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRecord {
    pub dataset: String,
    pub query_id: String,
    pub reference_id: String,
    pub class_id: String,
    pub modality: String,
}

impl PairRecord {
    /// Class identity across datasets: `"{dataset}/{class_id}"`.
    pub fn class_key(&self) -> String {
        format!("{}/{}", self.dataset, self.class_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    tag: String,
    records: Vec<PairRecord>,
}

impl CorpusManifest {
    /// Validates a single-dataset manifest: every record carries `tag`, no
    /// (query, reference) pair repeats, and each reference has one class.
    pub fn new(tag: impl Into<String>, records: Vec<PairRecord>) -> Result<Self, MixError> {
        let tag = tag.into();
        let mut pairs = HashSet::with_capacity(records.len());
        let mut classes: HashMap<&str, &str> = HashMap::new();
        for r in &records {
            if r.dataset != tag {
                return Err(MixError::TagMismatch { expected: tag, found: r.dataset.clone() });
            }
            if !pairs.insert((r.query_id.as_str(), r.reference_id.as_str())) {
                return Err(MixError::DuplicatePair {
                    dataset: tag,
                    query: r.query_id.clone(),
                    reference: r.reference_id.clone(),
                });
            }
            if let Some(prev) = classes.insert(&r.reference_id, &r.class_id) {
                if prev != r.class_id {
                    return Err(MixError::InconsistentClass {
                        dataset: tag,
                        reference: r.reference_id.clone(),
                        first: prev.to_string(),
                        second: r.class_id.clone(),
                    });
                }
            }
        }
        Ok(Self { tag, records })
    }

    /// Builds `n_pairs` records with `pairs_per_class` queries sharing each
    /// reference, ids derived from the tag.
    pub fn synthetic(tag: &str, modality: &str, n_pairs: usize, pairs_per_class: usize) -> Self {
        let per = pairs_per_class.max(1);
        let records = (0..n_pairs)
            .map(|i| PairRecord {
                dataset: tag.to_string(),
                query_id: format!("{tag}/q{i}"),
                reference_id: format!("{tag}/r{}", i / per),
                class_id: (i / per).to_string(),
                modality: modality.to_string(),
            })
            .collect();
        Self { tag: tag.to_string(), records }
    }

    /// Reads a single-dataset JSONL manifest; the tag is taken from the records.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MixError> {
        let records: Vec<PairRecord> = jsonl::read_jsonl(path)?;
        let tag = records.first().map(|r| r.dataset.clone()).unwrap_or_default();
        if let Some(other) = records.iter().find(|r| r.dataset != tag) {
            return Err(MixError::MixedTags(tag, other.dataset.clone()));
        }
        Self::new(tag, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MixError> {
        Ok(jsonl::write_jsonl(&self.records, path)?)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record counts per dataset tag.
    pub fn counts_by_dataset(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.dataset.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// How many records to draw from one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Ratio(f64),
    Count(usize),
}

/// Per-dataset sampling plus one seed for the whole mix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSpec {
    pub seed: u64,
    pub datasets: BTreeMap<String, Sampling>,
}

impl MixSpec {
    /// Seed used for dataset `tag`; independent of the other entries.
    pub fn seed_for(&self, tag: &str) -> u64 {
        crate::seed::derive_seed(self.seed, Stream::Mixer, name_index(tag))
    }

    /// Seed for the negatives drawn when expanding dataset `tag`.
    pub fn negatives_seed_for(&self, tag: &str) -> u64 {
        crate::seed::derive_seed(self.seed, Stream::Negatives, name_index(tag))
    }
}

/// Output size of [`apply_ratio`] for a corpus of `n` records.
pub fn ratio_count(n: usize, ratio: f64) -> Result<usize, MixError> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(MixError::InvalidRatio(ratio));
    }
    if ratio <= 1.0 {
        return Ok(round_product(ratio * n as f64));
    }
    let whole = ratio.floor();
    Ok(whole as usize * n + round_product((ratio - whole) * n as f64))
}

/// Half-to-even rounding that treats values within float noise of a
/// half-integer as exact ties, so decimal ratios such as 0.38 round as written.
fn round_product(x: f64) -> usize {
    let half = (2.0 * x).round() / 2.0;
    let snapped = if (x - half).abs() <= 1e-9 * x.max(1.0) { half } else { x };
    snapped.round_ties_even() as usize
}

fn resample(corpus: &CorpusManifest, copies: usize, extra: usize, seed: u64) -> CorpusManifest {
    let n = corpus.len();
    let mut records = Vec::with_capacity(copies * n + extra);
    for _ in 0..copies {
        records.extend_from_slice(&corpus.records);
    }
    if extra > 0 {
        let mut rng = rng_for(seed, Stream::Mixer, 0);
        let mut picked = index::sample(&mut rng, n, extra).into_vec();
        picked.sort_unstable();
        records.extend(picked.into_iter().map(|i| corpus.records[i].clone()));
    }
    CorpusManifest { tag: corpus.tag.clone(), records }
}

/// Resamples a corpus by `ratio`; deterministic under `seed`.
pub fn apply_ratio(corpus: &CorpusManifest, ratio: f64, seed: u64) -> Result<CorpusManifest, MixError> {
    if corpus.is_empty() {
        return Err(MixError::EmptyCorpus(corpus.tag.clone()));
    }
    let n = corpus.len();
    let target = ratio_count(n, ratio)?;
    if ratio == 1.0 {
        return Ok(corpus.clone());
    }
    Ok(resample(corpus, target / n, target % n, seed))
}

/// Resamples a corpus to exactly `count` records.
pub fn sample_to_count(corpus: &CorpusManifest, count: usize, seed: u64) -> Result<CorpusManifest, MixError> {
    if corpus.is_empty() {
        return Err(MixError::EmptyCorpus(corpus.tag.clone()));
    }
    let n = corpus.len();
    if count == n {
        return Ok(corpus.clone());
    }
    Ok(resample(corpus, count / n, count % n, seed))
}

pub fn apply_sampling(corpus: &CorpusManifest, sampling: Sampling, seed: u64) -> Result<CorpusManifest, MixError> {
    match sampling {
        Sampling::Ratio(r) => apply_ratio(corpus, r, seed),
        Sampling::Count(c) => sample_to_count(corpus, c, seed),
    }
}

/// Concatenates corpora with distinct tags. Records keep their own tag.
pub fn merge(corpora: &[CorpusManifest]) -> Result<CorpusManifest, MixError> {
    check_unique_tags(corpora)?;
    let tag = corpora.iter().map(|c| c.tag.as_str()).collect::<Vec<_>>().join("+");
    let records = corpora.iter().flat_map(|c| c.records.iter().cloned()).collect();
    Ok(CorpusManifest { tag, records })
}

/// Resamples every corpus per `spec` and merges them in the given order.
fn check_unique_tags(corpora: &[CorpusManifest]) -> Result<(), MixError> {
    let mut seen = HashSet::new();
    for c in corpora {
        if !seen.insert(c.tag.as_str()) {
            return Err(MixError::TagCollision(c.tag.clone()));
        }
    }
    Ok(())
}

pub fn mix(corpora: &[CorpusManifest], spec: &MixSpec) -> Result<CorpusManifest, MixError> {
    check_unique_tags(corpora)?;
    let sampled = corpora
        .iter()
        .map(|c| {
            let sampling = spec.datasets.get(c.tag()).ok_or_else(|| MixError::MissingSpec(c.tag().to_string()))?;
            apply_sampling(c, *sampling, spec.seed_for(c.tag()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    merge(&sampled)
}

/// A match/mismatch pair awaiting a model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSkeleton {
    pub id: String,
    pub dataset: String,
    pub language: Language,
    pub query_id: String,
    pub reference_id: String,
    pub gt_label: u8,
}

/// For every query record: one positive pair with its own reference and one
/// negative pair with a reference drawn uniformly from the other classes,
/// each repeated for every language. Output size is `2 · |languages| · n`.
pub fn expand_xbench_pairs(
    corpus: &CorpusManifest,
    negatives_seed: u64,
    languages: &[Language],
) -> Result<Vec<PairSkeleton>, MixError> {
    // Unique references grouped contiguously by class key.
    let mut by_class: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    let mut seen_refs = HashSet::new();
    for r in &corpus.records {
        if seen_refs.insert((r.dataset.as_str(), r.reference_id.as_str())) {
            by_class.entry(r.class_key()).or_default().push(&r.reference_id);
        }
    }
    if by_class.len() < 2 {
        return Err(MixError::SingleClass(corpus.tag.clone()));
    }
    let mut flat: Vec<&str> = Vec::with_capacity(seen_refs.len());
    let mut range: HashMap<String, (usize, usize)> = HashMap::with_capacity(by_class.len());
    for (key, refs) in by_class {
        let start = flat.len();
        flat.extend(refs);
        range.insert(key, (start, flat.len()));
    }

    let mut rng = rng_for(negatives_seed, Stream::Negatives, 0);
    let mut out = Vec::with_capacity(corpus.len() * 2 * languages.len());
    for (qi, rec) in corpus.records.iter().enumerate() {
        let (start, end) = range[&rec.class_key()];
        let u = rng.random_range(0..flat.len() - (end - start));
        let negative = flat[if u < start { u } else { u + (end - start) }];
        for (label, reference, polarity) in [(1u8, rec.reference_id.as_str(), "pos"), (0, negative, "neg")] {
            for &language in languages {
                out.push(PairSkeleton {
                    id: format!("{}/{qi}/{polarity}/{}", rec.dataset, language.code()),
                    dataset: rec.dataset.clone(),
                    language,
                    query_id: rec.query_id.clone(),
                    reference_id: reference.to_string(),
                    gt_label: label,
                });
            }
        }
    }
    Ok(out)
}

/// Resamples every corpus per `spec` and expands each one separately, so
/// negatives always come from the query's own dataset.
pub fn expand_mix(corpora: &[CorpusManifest], spec: &MixSpec, languages: &[Language]) -> Result<Vec<PairSkeleton>, MixError> {
    check_unique_tags(corpora)?;
    let mut out = Vec::new();
    for c in corpora {
        let sampling = spec.datasets.get(c.tag()).ok_or_else(|| MixError::MissingSpec(c.tag().to_string()))?;
        let sampled = apply_sampling(c, *sampling, spec.seed_for(c.tag()))?;
        out.extend(expand_xbench_pairs(&sampled, spec.negatives_seed_for(c.tag()), languages)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LANGS: [Language; 2] = [Language::En, Language::Zh];

    #[test]
    fn count_law() {
        assert_eq!(ratio_count(240_544, 0.5).unwrap(), 120_272);
        assert_eq!(ratio_count(10_208, 4.0).unwrap(), 40_832);
        assert_eq!(ratio_count(37_854, 0.36).unwrap(), 13_627);
        // half to even
        assert_eq!(ratio_count(5, 0.5).unwrap(), 2);
        assert_eq!(ratio_count(7, 0.5).unwrap(), 4);
        assert_eq!(ratio_count(10, 2.25).unwrap(), 22);
        assert_eq!(ratio_count(10, 2.35).unwrap(), 24);
        assert!(matches!(ratio_count(10, 0.0), Err(MixError::InvalidRatio(_))));
        assert!(matches!(ratio_count(10, f64::NAN), Err(MixError::InvalidRatio(_))));
    }

    #[test]
    fn ratio_one_is_identity() {
        let c = CorpusManifest::synthetic("VIGOR", "panorama", 50, 1);
        assert_eq!(apply_ratio(&c, 1.0, 3).unwrap(), c);
        assert_eq!(sample_to_count(&c, 50, 3).unwrap(), c);
    }

    #[test]
    fn subsample_is_deterministic_and_ordered() {
        let c = CorpusManifest::synthetic("SetVL-480K", "ground", 1000, 2);
        let a = apply_ratio(&c, 0.3, 9).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a, apply_ratio(&c, 0.3, 9).unwrap());
        let b = apply_ratio(&c, 0.3, 10).unwrap();
        assert_eq!(b.len(), 300);
        assert_ne!(a, b);
        let pos: Vec<usize> =
            a.records().iter().map(|r| r.query_id.trim_start_matches("SetVL-480K/q").parse().unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn upsample_repeats_every_record() {
        let c = CorpusManifest::synthetic("MAP", "map", 40, 1);
        let up = apply_ratio(&c, 2.5, 1).unwrap();
        assert_eq!(up.len(), 100);
        let counts = up.records().iter().fold(HashMap::new(), |mut m, r| {
            *m.entry(&r.query_id).or_insert(0) += 1;
            m
        });
        assert!(counts.values().all(|&n| n == 2 || n == 3));
        assert_eq!(counts.values().filter(|&&n| n == 3).count(), 20);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = CorpusManifest::new("MAP", vec![]).unwrap();
        assert!(matches!(apply_ratio(&c, 0.5, 0), Err(MixError::EmptyCorpus(_))));
        assert!(matches!(sample_to_count(&c, 1, 0), Err(MixError::EmptyCorpus(_))));
    }

    #[test]
    fn manifest_validation() {
        let rec = |q: &str, r: &str, c: &str| PairRecord {
            dataset: "VIGOR".into(),
            query_id: q.into(),
            reference_id: r.into(),
            class_id: c.into(),
            modality: "panorama".into(),
        };
        assert!(matches!(
            CorpusManifest::new("VIGOR", vec![rec("q", "r", "1"), rec("q", "r", "1")]),
            Err(MixError::DuplicatePair { .. })
        ));
        assert!(matches!(
            CorpusManifest::new("VIGOR", vec![rec("q1", "r", "1"), rec("q2", "r", "2")]),
            Err(MixError::InconsistentClass { .. })
        ));
        assert!(matches!(CorpusManifest::new("MAP", vec![rec("q", "r", "1")]), Err(MixError::TagMismatch { .. })));
    }

    #[test]
    fn merge_rules() {
        let a = CorpusManifest::synthetic("A", "x", 5, 1);
        let b = CorpusManifest::synthetic("B", "y", 7, 1);
        assert_eq!(merge(std::slice::from_ref(&a)).unwrap(), a);
        let m = merge(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.tag(), "A+B");
        assert_eq!(m.counts_by_dataset(), BTreeMap::from([("A".into(), 5), ("B".into(), 7)]));
        assert_ne!(m.records()[0].class_key(), m.records()[5].class_key());
        assert!(matches!(merge(&[a.clone(), a]), Err(MixError::TagCollision(_))));
    }

    #[test]
    fn mix_uses_per_dataset_spec() {
        let a = CorpusManifest::synthetic("A", "x", 100, 1);
        let b = CorpusManifest::synthetic("B", "y", 10, 1);
        let spec = MixSpec {
            seed: 4,
            datasets: BTreeMap::from([("A".into(), Sampling::Ratio(0.25)), ("B".into(), Sampling::Count(33))]),
        };
        let m = mix(&[a.clone(), b.clone()], &spec).unwrap();
        assert_eq!(m.counts_by_dataset(), BTreeMap::from([("A".into(), 25), ("B".into(), 33)]));
        // seeds do not depend on the order corpora are listed in
        let swapped = mix(&[b, a], &spec).unwrap();
        assert_eq!(swapped.records()[..33], m.records()[25..]);
        let partial = MixSpec { seed: 4, datasets: BTreeMap::new() };
        assert!(matches!(mix(&[CorpusManifest::synthetic("C", "z", 3, 1)], &partial), Err(MixError::MissingSpec(_))));
    }

    #[test]
    fn expansion_shape_and_balance() {
        let c = CorpusManifest::synthetic("University-1652", "uav", 200, 4);
        let pairs = expand_xbench_pairs(&c, 5, &LANGS).unwrap();
        assert_eq!(pairs.len(), 800);
        for lang in LANGS {
            let pos = pairs.iter().filter(|p| p.language == lang && p.gt_label == 1).count();
            let neg = pairs.iter().filter(|p| p.language == lang && p.gt_label == 0).count();
            assert_eq!((pos, neg), (200, 200));
        }
        let ref_class: HashMap<&str, &str> =
            c.records().iter().map(|r| (r.reference_id.as_str(), r.class_id.as_str())).collect();
        let query_class: HashMap<&str, &str> =
            c.records().iter().map(|r| (r.query_id.as_str(), r.class_id.as_str())).collect();
        for p in &pairs {
            let same = ref_class[p.reference_id.as_str()] == query_class[p.query_id.as_str()];
            assert_eq!(same, p.gt_label == 1, "{p:?}");
        }
        let ids: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), pairs.len());
        assert_eq!(pairs, expand_xbench_pairs(&c, 5, &LANGS).unwrap());
    }

    #[test]
    fn negatives_cover_every_foreign_class() {
        let c = CorpusManifest::synthetic("VIGOR", "panorama", 6, 2);
        let pairs = expand_xbench_pairs(&c, 1, &[Language::En]).unwrap();
        assert_eq!(pairs.len(), 12);
        let mut negs = HashSet::new();
        for seed in 0..50 {
            for p in expand_xbench_pairs(&c, seed, &[Language::En]).unwrap() {
                if p.gt_label == 0 && p.query_id == "VIGOR/q0" {
                    negs.insert(p.reference_id);
                }
            }
        }
        assert_eq!(negs, HashSet::from(["VIGOR/r1".to_string(), "VIGOR/r2".to_string()]));
    }

    #[test]
    fn expansion_after_target_count() {
        let a = CorpusManifest::synthetic("A", "x", 50, 2);
        let b = CorpusManifest::synthetic("B", "y", 30, 3);
        let spec = MixSpec {
            seed: 2,
            datasets: BTreeMap::from([("A".into(), Sampling::Count(20)), ("B".into(), Sampling::Ratio(1.0))]),
        };
        let pairs = expand_mix(&[a, b], &spec, &LANGS).unwrap();
        assert_eq!(pairs.len(), 4 * (20 + 30));
        assert!(pairs.iter().all(|p| p.reference_id.starts_with(&format!("{}/", p.dataset))));
    }

    #[test]
    fn single_class_rejected() {
        let c = CorpusManifest::synthetic("MAP", "map", 5, 5);
        assert!(matches!(expand_xbench_pairs(&c, 0, &LANGS), Err(MixError::SingleClass(_))));
    }

    #[test]
    fn manifest_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let c = CorpusManifest::synthetic("MAP", "map", 5, 1);
        c.save(&path).unwrap();
        assert_eq!(CorpusManifest::load(&path).unwrap(), c);
        let merged = merge(&[c, CorpusManifest::synthetic("B", "b", 2, 1)]).unwrap();
        merged.save(&path).unwrap();
        assert!(matches!(CorpusManifest::load(&path), Err(MixError::MixedTags(..))));
    }
}
