//! Skew correction: rare labels score high, dialogues score as the sum of
//! their label scores, and the top `k` dialogues of each source form the
//! seed dataset.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DatasetId, Dialogue, Stage};
use crate::labelmap::{CanonicalLabel, LabelSet, UnknownLabel};

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("corpus {0} has no labeled utterances")]
    NoLabels(DatasetId),
    #[error("corpus {dataset} is at stage {stage}; label statistics need canonical labels")]
    WrongStage { dataset: DatasetId, stage: Stage },
    #[error("dialogue {dialogue:?}: label {label} has no score")]
    MissingLabel { dialogue: String, label: CanonicalLabel },
    #[error("dialogue {dialogue:?}: utterance {index} carries no labels")]
    Unlabeled { dialogue: String, index: usize },
    #[error("dialogue {dialogue:?}: {source}")]
    BadLabel { dialogue: String, source: UnknownLabel },
    #[error("seed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("seed corpus {dataset} is missing dialogue {id:?} listed in the manifest")]
    MissingSeedDialogue { dataset: DatasetId, id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where label frequencies are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyScope {
    /// Each source is scored against its own label counts.
    #[default]
    PerSource,
    /// All sources share one pooled count table.
    Pooled,
}

/// Label incidence counts and the derived inverse-frequency scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub counts: [u64; CanonicalLabel::COUNT],
    /// `None` for labels that never occur.
    pub scores: [Option<f64>; CanonicalLabel::COUNT],
}

impl LabelStats {
    pub fn from_counts(counts: [u64; CanonicalLabel::COUNT]) -> Self {
        let scores = counts.map(|c| (c > 0).then(|| 1.0 / c as f64));
        LabelStats { counts, scores }
    }

    pub fn count(&self, label: CanonicalLabel) -> u64 {
        self.counts[label.index()]
    }

    pub fn score(&self, label: CanonicalLabel) -> Option<f64> {
        self.scores[label.index()]
    }

    /// Same counts, every score multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> LabelStats {
        LabelStats { counts: self.counts, scores: self.scores.map(|s| s.map(|v| v * factor)) }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Tallies every (utterance, label) incidence.
pub fn count_labels<'a, I>(dialogues: I) -> Result<[u64; CanonicalLabel::COUNT], SeedError>
where
    I: IntoIterator<Item = &'a Dialogue>,
{
    let mut counts = [0u64; CanonicalLabel::COUNT];
    for d in dialogues {
        for u in &d.utterances {
            let set = u
                .label_set()
                .map_err(|source| SeedError::BadLabel { dialogue: d.id.clone(), source })?;
            for l in set.iter() {
                counts[l.index()] += 1;
            }
        }
    }
    Ok(counts)
}

fn check_stage(c: &Corpus) -> Result<(), SeedError> {
    if c.stage < Stage::MappedLabels {
        return Err(SeedError::WrongStage { dataset: c.dataset, stage: c.stage });
    }
    Ok(())
}

pub fn label_stats(c: &Corpus) -> Result<LabelStats, SeedError> {
    check_stage(c)?;
    let counts = count_labels(&c.dialogues)?;
    if counts.iter().all(|&n| n == 0) {
        return Err(SeedError::NoLabels(c.dataset));
    }
    Ok(LabelStats::from_counts(counts))
}

/// Sum over utterances of the sum of their label scores.
pub fn dialogue_score(d: &Dialogue, stats: &LabelStats) -> Result<f64, SeedError> {
    let mut total = 0.0;
    for (index, u) in d.utterances.iter().enumerate() {
        let set: LabelSet = u
            .label_set()
            .map_err(|source| SeedError::BadLabel { dialogue: d.id.clone(), source })?;
        if set.is_empty() {
            return Err(SeedError::Unlabeled { dialogue: d.id.clone(), index });
        }
        let mut utterance_score = 0.0;
        for label in set.iter() {
            utterance_score += stats
                .score(label)
                .ok_or_else(|| SeedError::MissingLabel { dialogue: d.id.clone(), label })?;
        }
        total += utterance_score;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDialogue {
    pub dialogue: Dialogue,
    pub score: f64,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact ranking key: the score times the lcm of the label counts, an
/// integer. `None` if it would overflow.
fn exact_key(d: &Dialogue, stats: &LabelStats) -> Option<u128> {
    let mut lcm: u128 = 1;
    for &c in stats.counts.iter().filter(|&&c| c > 0) {
        let c = u128::from(c);
        lcm = (lcm / gcd(lcm, c)).checked_mul(c)?;
    }
    let mut key: u128 = 0;
    for u in &d.utterances {
        for l in u.label_set().ok()?.iter() {
            let c = u128::from(stats.count(l));
            if c == 0 {
                return None;
            }
            key = key.checked_add(lcm / c)?;
        }
    }
    Some(key)
}

/// Descending score, then ascending id. Scores are compared exactly when
/// possible so equal scores always fall through to the id.
fn rank_order(a: &(ScoredDialogue, Option<u128>), b: &(ScoredDialogue, Option<u128>)) -> Ordering {
    let by_score = match (a.1, b.1) {
        (Some(x), Some(y)) => y.cmp(&x),
        _ => b.0.score.total_cmp(&a.0.score),
    };
    by_score.then_with(|| a.0.dialogue.id.cmp(&b.0.dialogue.id))
}

/// Top `k` dialogues of `corpus` under `stats`, best first.
pub fn select_top_k(corpus: &Corpus, stats: &LabelStats, k: usize) -> Result<Vec<ScoredDialogue>, SeedError> {
    let mut scored = corpus
        .dialogues
        .iter()
        .map(|d| {
            let s = ScoredDialogue { dialogue: d.clone(), score: dialogue_score(d, stats)? };
            Ok((s, exact_key(d, stats)))
        })
        .collect::<Result<Vec<_>, SeedError>>()?;
    if scored.iter().any(|(_, key)| key.is_none()) {
        scored.iter_mut().for_each(|(_, key)| *key = None);
    }
    scored.sort_by(rank_order);
    scored.truncate(k);
    Ok(scored.into_iter().map(|(s, _)| s).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedDataset {
    pub k: usize,
    pub per_source: BTreeMap<DatasetId, Vec<ScoredDialogue>>,
    /// Sources that had fewer than `k` dialogues: (source, available).
    pub shortfalls: Vec<(DatasetId, usize)>,
}

impl SeedDataset {
    pub fn len(&self) -> usize {
        self.per_source.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All seed dialogues in (source, rank) order.
    pub fn dialogues(&self) -> impl Iterator<Item = &Dialogue> {
        self.per_source.values().flat_map(|v| v.iter().map(|s| &s.dialogue))
    }

    pub fn find(&self, source: DatasetId, id: &str) -> Option<&Dialogue> {
        self.per_source
            .get(&source)?
            .iter()
            .map(|s| &s.dialogue)
            .find(|d| d.id == id)
    }

    /// One stage-`seed` corpus per source.
    pub fn to_corpora(&self) -> Vec<Corpus> {
        self.per_source
            .iter()
            .map(|(source, list)| Corpus {
                dataset: *source,
                stage: Stage::Seed,
                dialogues: list.iter().map(|s| s.dialogue.clone()).collect(),
            })
            .collect()
    }

    /// `source<TAB>id<TAB>score` rows in rank order.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "source\tid\tscore")?;
        for (source, list) in &self.per_source {
            for s in list {
                writeln!(out, "{source}\t{}\t{}", s.dialogue.id, s.score)?;
            }
        }
        Ok(())
    }

    /// Rebuilds a seed dataset from its manifest and per-source seed corpora.
    pub fn from_manifest<R: BufRead>(k: usize, manifest: R, corpora: &[Corpus]) -> Result<SeedDataset, SeedError> {
        let mut per_source: BTreeMap<DatasetId, Vec<ScoredDialogue>> = BTreeMap::new();
        for (idx, line) in manifest.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line_no == 1 && line.starts_with("source\t") || line.trim().is_empty() {
                continue;
            }
            let bad = |message: &str| SeedError::Manifest { line: line_no, message: message.to_string() };
            let mut cols = line.split('\t');
            let (Some(src), Some(id), Some(score), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(bad("expected three tab-separated columns"));
            };
            let source: DatasetId = src.parse().map_err(|_| bad("unknown dataset"))?;
            let score: f64 = score.parse().map_err(|_| bad("score is not a number"))?;
            let dialogue = corpora
                .iter()
                .filter(|c| c.dataset == source)
                .flat_map(|c| c.dialogues.iter())
                .find(|d| d.id == id)
                .ok_or_else(|| SeedError::MissingSeedDialogue { dataset: source, id: id.to_string() })?;
            per_source.entry(source).or_default().push(ScoredDialogue { dialogue: dialogue.clone(), score });
        }
        Ok(SeedDataset { k, per_source, shortfalls: Vec::new() })
    }
}

/// Scores each corpus and keeps its top `k` dialogues.
pub fn select_seed(
    corpora: &BTreeMap<DatasetId, Corpus>,
    k: usize,
    scope: FrequencyScope,
) -> Result<SeedDataset, SeedError> {
    for c in corpora.values() {
        check_stage(c)?;
    }
    let pooled = match scope {
        FrequencyScope::PerSource => None,
        FrequencyScope::Pooled => {
            let counts = count_labels(corpora.values().flat_map(|c| c.dialogues.iter()))?;
            Some(LabelStats::from_counts(counts))
        }
    };

    let mut per_source = BTreeMap::new();
    let mut shortfalls = Vec::new();
    for (source, corpus) in corpora {
        if corpus.len() < k {
            log::warn!("{source}: only {} dialogues available for k={k}; taking all", corpus.len());
            shortfalls.push((*source, corpus.len()));
        }
        if k == 0 || corpus.is_empty() {
            per_source.insert(*source, Vec::new());
            continue;
        }
        let stats = match &pooled {
            Some(s) => s.clone(),
            None => label_stats(corpus)?,
        };
        per_source.insert(*source, select_top_k(corpus, &stats, k)?);
    }
    Ok(SeedDataset { k, per_source, shortfalls })
}
