//! Corpus analytics: label histograms and domain-title clustering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead};
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Stage};
use crate::labelmap::CanonicalLabel;
use crate::seedselect::{count_labels, SeedError};

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("corpus is at stage {0}; histograms need canonical labels")]
    WrongStage(Stage),
    #[error(transparent)]
    Labels(#[from] SeedError),
    #[error("vector {index} is zero")]
    ZeroVector { index: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("threshold {0} is outside (0, 1)")]
    BadThreshold(f64),
    #[error("no embedding for title {0:?}")]
    MissingEmbedding(String),
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-label (utterance, label) incidence counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelHistogram(pub [u64; CanonicalLabel::COUNT]);

impl LabelHistogram {
    pub fn get(&self, label: CanonicalLabel) -> u64 {
        self.0[label.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn to_map(&self) -> BTreeMap<CanonicalLabel, u64> {
        CanonicalLabel::ALL.iter().map(|l| (*l, self.get(*l))).collect()
    }
}

impl Add for LabelHistogram {
    type Output = LabelHistogram;

    fn add(mut self, rhs: LabelHistogram) -> LabelHistogram {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl std::iter::Sum for LabelHistogram {
    fn sum<I: Iterator<Item = LabelHistogram>>(iter: I) -> Self {
        iter.fold(LabelHistogram::default(), Add::add)
    }
}

impl Serialize for LabelHistogram {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelHistogram {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<CanonicalLabel, u64>::deserialize(deserializer)?;
        let mut h = LabelHistogram::default();
        for (l, n) in map {
            h.0[l.index()] = n;
        }
        Ok(h)
    }
}

/// Same tallying rule as the seed selector's label statistics.
pub fn label_histogram(c: &Corpus) -> Result<LabelHistogram, AnalysisError> {
    if c.stage < Stage::MappedLabels {
        return Err(AnalysisError::WrongStage(c.stage));
    }
    Ok(LabelHistogram(count_labels(&c.dialogues)?))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id of each input, dense from 0 in order of first appearance.
    pub cluster_of: Vec<usize>,
    /// Input index of each cluster's leader.
    pub leaders: Vec<usize>,
    pub threshold: f64,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.leaders.len()
    }
}

/// Greedy leader clustering over cosine similarity.
///
/// Inputs are scanned in order; each joins the first cluster whose leader
/// has cosine ≥ `threshold` with it, or else leads a new cluster. The result
/// depends on input order.
pub fn cluster_titles(vectors: &[Vec<f64>], threshold: f64) -> Result<ClusterAssignment, AnalysisError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AnalysisError::BadThreshold(threshold));
    }
    let dim = vectors.first().map(Vec::len).unwrap_or(0);
    let mut unit = Vec::with_capacity(vectors.len());
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(AnalysisError::DimensionMismatch { index, expected: dim, found: v.len() });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(AnalysisError::ZeroVector { index });
        }
        unit.push(v.iter().map(|x| x / norm).collect::<Vec<_>>());
    }

    let mut leaders: Vec<usize> = Vec::new();
    let mut cluster_of = Vec::with_capacity(unit.len());
    for (i, v) in unit.iter().enumerate() {
        let joined = leaders.iter().position(|&l| {
            let sim: f64 = unit[l].iter().zip(v).map(|(a, b)| a * b).sum();
            sim >= threshold
        });
        match joined {
            Some(c) => cluster_of.push(c),
            None => {
                cluster_of.push(leaders.len());
                leaders.push(i);
            }
        }
    }
    Ok(ClusterAssignment { cluster_of, leaders, threshold })
}

/// Source of title embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError>;
}

/// Embeddings loaded from a `title<TAB>v1,v2,...,vD` file.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn parse<R: BufRead>(input: R) -> Result<Self, AnalysisError> {
        let mut table = HashMap::new();
        let mut dimension = None;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| AnalysisError::EmbeddingFile { line: line_no, message };
            let (title, values) = line.rsplit_once('\t').ok_or_else(|| bad("missing tab separator".into()))?;
            let v = values
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| bad(format!("{x:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            match dimension {
                None => dimension = Some(v.len()),
                Some(d) if d != v.len() => return Err(bad(format!("dimension {} differs from {d}", v.len()))),
                _ => {}
            }
            table.insert(title.to_string(), v);
        }
        Ok(PrecomputedEmbeddings { dimension: dimension.unwrap_or(0), table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError> {
        texts
            .iter()
            .map(|t| self.table.get(t).cloned().ok_or_else(|| AnalysisError::MissingEmbedding(t.clone())))
            .collect()
    }
}

/// Offline embedder: signed feature hashing of lowercase character
/// trigrams and whole words.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dimension: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

impl HashingEmbedder {
    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension.max(1)];
        let lower = text.to_lowercase();
        let mut add = |feature: &str| {
            let h = fnv1a(feature.as_bytes());
            let idx = (h % v.len() as u64) as usize;
            v[idx] += if (h >> 63) == 0 { 1.0 } else { -1.0 };
        };
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            add(&format!("w:{word}"));
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                add(&tri.iter().collect::<String>());
            }
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainClusters {
    /// Distinct titles in order of first appearance.
    pub titles: Vec<String>,
    pub assignment: ClusterAssignment,
}

impl DomainClusters {
    pub fn distinct_domains(&self) -> usize {
        self.assignment.cluster_count()
    }
}

/// Embeds the distinct titles (first-appearance order) and clusters them.
pub fn cluster_domain_titles<'a, I>(
    titles: I,
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<DomainClusters, AnalysisError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = HashSet::new();
    let titles: Vec<String> = titles.into_iter().filter(|t| seen.insert(*t)).map(str::to_string).collect();
    if titles.is_empty() {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(AnalysisError::BadThreshold(threshold));
        }
        return Ok(DomainClusters {
            titles,
            assignment: ClusterAssignment { cluster_of: vec![], leaders: vec![], threshold },
        });
    }
    let vectors = provider.embed(&titles)?;
    let assignment = cluster_titles(&vectors, threshold)?;
    Ok(DomainClusters { titles, assignment })
}
