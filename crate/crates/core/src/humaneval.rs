//! Human evaluation of domain mapping: pair sampling, the rating log,
//! Krippendorff's alpha and agreement summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dialogue, Speaker};
use crate::domainmap::MappedDialogue;
use crate::seedselect::SeedDataset;

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 5;

#[derive(Debug, Error)]
pub enum HumanEvalError {
    #[error("requested {requested} pairs but only {available} exist")]
    NotEnoughPairs { requested: usize, available: usize },
    #[error("generated dialogue {0:?} has no provenance")]
    MissingProvenance(String),
    #[error("generated dialogue {id:?} points at a seed dialogue that is not in the seed set")]
    DanglingSeed { id: String },
    #[error("{field} = {value} is outside 1..=5")]
    OutOfRange { field: &'static str, value: u8 },
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("not enough pairable ratings to compute alpha")]
    InsufficientData,
    #[error("no ratings")]
    NoRatings,
    #[error("{path}:{line}: {message}")]
    Log { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An original dialogue next to one of its generations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub pair_id: String,
    pub original: Dialogue,
    pub mapped: MappedDialogue,
}

/// `m` pairs drawn uniformly without replacement from every generated
/// dialogue joined to its seed.
pub fn sample_pairs(seed: &SeedDataset, generated: &Corpus, m: usize, rng_seed: u64) -> Result<Vec<DialoguePair>, HumanEvalError> {
    let mut population = Vec::with_capacity(generated.len());
    for d in &generated.dialogues {
        let mapped = MappedDialogue::from_dialogue(d).ok_or_else(|| HumanEvalError::MissingProvenance(d.id.clone()))?;
        let original = seed
            .find(mapped.seed_source, &mapped.seed_id)
            .ok_or_else(|| HumanEvalError::DanglingSeed { id: d.id.clone() })?;
        population.push((original, mapped, d.id.clone()));
    }
    if m > population.len() {
        return Err(HumanEvalError::NotEnoughPairs { requested: m, available: population.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked = rand::seq::index::sample(&mut rng, population.len(), m);
    Ok(picked
        .into_iter()
        .map(|i| {
            let (original, mapped, id) = &population[i];
            DialoguePair { pair_id: id.clone(), original: (*original).clone(), mapped: mapped.clone() }
        })
        .collect())
}

pub fn write_pairs<W: Write>(pairs: &[DialoguePair], mut out: W) -> Result<(), HumanEvalError> {
    for p in pairs {
        serde_json::to_writer(&mut out, p).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<DialoguePair>, HumanEvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HumanEvalError::Log {
            path: "pairs".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub pair_id: String,
    pub annotator_id: String,
    pub structural_similarity: u8,
    pub coherence: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub pair_id: String,
    pub annotator_id: String,
    pub structural_similarity: u8,
    pub coherence: u8,
    /// Unix time in milliseconds.
    pub timestamp: u64,
}

fn check_likert(field: &'static str, value: u8) -> Result<(), HumanEvalError> {
    if (LIKERT_MIN..=LIKERT_MAX).contains(&value) {
        Ok(())
    } else {
        Err(HumanEvalError::OutOfRange { field, value })
    }
}

impl RatingSubmission {
    pub fn validate(&self) -> Result<(), HumanEvalError> {
        if self.pair_id.trim().is_empty() {
            return Err(HumanEvalError::EmptyField("pair_id"));
        }
        if self.annotator_id.trim().is_empty() {
            return Err(HumanEvalError::EmptyField("annotator_id"));
        }
        check_likert("structural_similarity", self.structural_similarity)?;
        check_likert("coherence", self.coherence)
    }

    pub fn into_record(self, timestamp: u64) -> RatingRecord {
        RatingRecord {
            pair_id: self.pair_id,
            annotator_id: self.annotator_id,
            structural_similarity: self.structural_similarity,
            coherence: self.coherence,
            timestamp,
        }
    }
}

impl RatingRecord {
    pub fn validate(&self) -> Result<(), HumanEvalError> {
        check_likert("structural_similarity", self.structural_similarity)?;
        check_likert("coherence", self.coherence)?;
        if self.pair_id.is_empty() {
            return Err(HumanEvalError::EmptyField("pair_id"));
        }
        if self.annotator_id.is_empty() {
            return Err(HumanEvalError::EmptyField("annotator_id"));
        }
        Ok(())
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Keeps the last record per (pair, annotator), in log order.
pub fn latest_ratings(records: &[RatingRecord]) -> Vec<RatingRecord> {
    let mut last: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        last.insert((&r.pair_id, &r.annotator_id), i);
    }
    let mut keep: Vec<usize> = last.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| records[i].clone()).collect()
}

struct LogInner {
    file: Option<File>,
    records: Vec<RatingRecord>,
}

/// Append-only JSONL rating log. Each record is written with a single
/// write call under the lock.
pub struct RatingLog {
    path: Option<PathBuf>,
    inner: Mutex<LogInner>,
}

impl RatingLog {
    pub fn in_memory() -> RatingLog {
        RatingLog { path: None, inner: Mutex::new(LogInner { file: None, records: Vec::new() }) }
    }

    /// Opens or creates the log. A torn final line (no trailing newline,
    /// not parseable) is cut off; any other bad line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<RatingLog, HumanEvalError> {
        let path = path.as_ref().to_path_buf();
        let (records, valid_len) = if path.exists() { Self::read(&path)? } else { (Vec::new(), 0) };
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() > valid_len {
            file.set_len(valid_len)?;
        }
        if valid_len > 0 && std::fs::read(&path)?.last() != Some(&b'\n') {
            file.write_all(b"\n")?;
        }
        Ok(RatingLog { path: Some(path), inner: Mutex::new(LogInner { file: Some(file), records }) })
    }

    /// Records plus the byte length of the intact prefix.
    fn read(path: &Path) -> Result<(Vec<RatingRecord>, u64), HumanEvalError> {
        let text = std::fs::read_to_string(path)?;
        let complete = text.is_empty() || text.ends_with('\n');
        let mut valid_len = text.len() as u64;
        let lines: Vec<&str> = text.lines().collect();
        let mut records = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RatingRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
            match parsed {
                Ok(r) => records.push(r),
                Err(_) if i + 1 == lines.len() && !complete => {
                    log::warn!("{}: dropping torn final line {}", path.display(), i + 1);
                    valid_len -= line.len() as u64;
                }
                Err(message) => {
                    return Err(HumanEvalError::Log { path: path.display().to_string(), line: i + 1, message })
                }
            }
        }
        Ok((records, valid_len))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, record: RatingRecord) -> Result<RatingRecord, HumanEvalError> {
        record.validate()?;
        let mut line = serde_json::to_string(&record).map_err(io::Error::from)?;
        line.push('\n');
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = inner.file.as_mut() {
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        inner.records.push(record.clone());
        Ok(record)
    }

    /// Every record in log order.
    pub fn snapshot(&self) -> Vec<RatingRecord> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).records.clone()
    }

    /// The raw log as JSON lines.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in self.snapshot() {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Distance used by alpha.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMetric {
    #[default]
    Interval,
    Ordinal,
}

/// Krippendorff's alpha over an annotator × item matrix with missing
/// entries, computed through the coincidence matrix.
pub fn krippendorff_alpha(ratings: &[Vec<Option<f64>>], metric: AlphaMetric) -> Result<f64, HumanEvalError> {
    let n_items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let units: Vec<Vec<f64>> = (0..n_items)
        .map(|j| ratings.iter().filter_map(|row| row.get(j).copied().flatten()).collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    if units.len() < 2 {
        return Err(HumanEvalError::InsufficientData);
    }

    let mut values: Vec<f64> = units.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let idx = |v: f64| values.binary_search_by(|x| x.total_cmp(&v)).expect("value was collected");
    let k = values.len();

    let mut o = vec![vec![0.0; k]; k];
    for u in &units {
        let w = 1.0 / (u.len() - 1) as f64;
        for (a, va) in u.iter().enumerate() {
            for (b, vb) in u.iter().enumerate() {
                if a != b {
                    o[idx(*va)][idx(*vb)] += w;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();

    let delta = |c: usize, d: usize| -> f64 {
        match metric {
            AlphaMetric::Interval => (values[c] - values[d]).powi(2),
            AlphaMetric::Ordinal => {
                let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
                let between: f64 = n_c[lo..=hi].iter().sum();
                (between - (n_c[lo] + n_c[hi]) / 2.0).powi(2)
            }
        }
    };

    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..k {
        for d in 0..k {
            let dist = delta(c, d);
            d_o += o[c][d] * dist;
            d_e += n_c[c] * n_c[d] * dist;
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

/// What counts as agreement on one item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgreementDefinition {
    /// Every annotator of the item gave the same score.
    #[default]
    Exact,
    /// Fraction of agreeing annotator pairs, pooled over items.
    Pairwise,
    /// Scores on the item span at most one point.
    WithinOne,
}

/// Agreement over items given as lists of scores.
pub fn percentage_agreement(items: &[Vec<u8>], def: AgreementDefinition) -> f64 {
    let rated: Vec<&Vec<u8>> = items.iter().filter(|i| !i.is_empty()).collect();
    match def {
        AgreementDefinition::Exact | AgreementDefinition::WithinOne => {
            if rated.is_empty() {
                return 1.0;
            }
            let span = if def == AgreementDefinition::Exact { 0 } else { 1 };
            let ok = rated
                .iter()
                .filter(|i| i.iter().max().unwrap() - i.iter().min().unwrap() <= span)
                .count();
            ok as f64 / rated.len() as f64
        }
        AgreementDefinition::Pairwise => {
            let (mut agree, mut total) = (0u64, 0u64);
            for item in rated {
                for a in 0..item.len() {
                    for b in a + 1..item.len() {
                        total += 1;
                        agree += u64::from(item[a] == item[b]);
                    }
                }
            }
            if total == 0 {
                1.0
            } else {
                agree as f64 / total as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// `None` when there is too little pairable data.
    pub alpha_similarity: Option<f64>,
    pub alpha_coherence: Option<f64>,
    pub avg_similarity: f64,
    pub avg_coherence: f64,
    pub pct_agreement_similarity: f64,
    pub pct_agreement_coherence: f64,
    pub items: usize,
    pub annotators: usize,
    pub ratings: usize,
    pub metric: AlphaMetric,
    pub agreement: AgreementDefinition,
}

/// Summary over the latest rating per (pair, annotator).
pub fn agreement_stats(
    records: &[RatingRecord],
    metric: AlphaMetric,
    def: AgreementDefinition,
) -> Result<AgreementReport, HumanEvalError> {
    let latest = latest_ratings(records);
    if latest.is_empty() {
        return Err(HumanEvalError::NoRatings);
    }
    let items: Vec<&str> = latest.iter().map(|r| r.pair_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let annotators: Vec<&str> =
        latest.iter().map(|r| r.annotator_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let item_ix = |p: &str| items.binary_search(&p).unwrap();
    let ann_ix = |a: &str| annotators.binary_search(&a).unwrap();

    let dimension = |score: fn(&RatingRecord) -> u8| {
        let mut matrix = vec![vec![None; items.len()]; annotators.len()];
        let mut per_item = vec![Vec::new(); items.len()];
        for r in &latest {
            matrix[ann_ix(&r.annotator_id)][item_ix(&r.pair_id)] = Some(f64::from(score(r)));
            per_item[item_ix(&r.pair_id)].push(score(r));
        }
        let alpha = match krippendorff_alpha(&matrix, metric) {
            Ok(a) => Some(a),
            Err(HumanEvalError::InsufficientData) => None,
            Err(e) => unreachable!("alpha only fails on insufficient data: {e}"),
        };
        let avg = latest.iter().map(|r| f64::from(score(r))).sum::<f64>() / latest.len() as f64;
        (alpha, avg, percentage_agreement(&per_item, def))
    };
    let (alpha_similarity, avg_similarity, pct_agreement_similarity) = dimension(|r| r.structural_similarity);
    let (alpha_coherence, avg_coherence, pct_agreement_coherence) = dimension(|r| r.coherence);
    Ok(AgreementReport {
        alpha_similarity,
        alpha_coherence,
        avg_similarity,
        avg_coherence,
        pct_agreement_similarity,
        pct_agreement_coherence,
        items: items.len(),
        annotators: annotators.len(),
        ratings: latest.len(),
        metric,
        agreement: def,
    })
}

impl AgreementReport {
    /// Metric rows with one column per rated dimension.
    pub fn to_table(&self) -> String {
        let alpha = |a: Option<f64>| a.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "metric\tcoherence\tstructural_similarity\n\
             krippendorff_alpha\t{}\t{}\n\
             average_value\t{:.3}\t{:.3}\n\
             percentage_agreement\t{:.2}\t{:.2}\n",
            alpha(self.alpha_coherence),
            alpha(self.alpha_similarity),
            self.avg_coherence,
            self.avg_similarity,
            100.0 * self.pct_agreement_coherence,
            100.0 * self.pct_agreement_similarity,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// A pair as shown to a rater: text only, no labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub domain_title: String,
    pub original: Vec<Turn>,
    pub mapped: Vec<Turn>,
    pub position: usize,
    pub total: usize,
}

fn turns<'a, I: IntoIterator<Item = &'a crate::corpus::Utterance>>(utterances: I) -> Vec<Turn> {
    utterances.into_iter().map(|u| Turn { speaker: u.speaker, text: u.text.clone() }).collect()
}

/// Sampled pairs plus the rating log; shared by the annotation service.
pub struct AnnotationStore {
    pairs: Vec<DialoguePair>,
    index: BTreeMap<String, usize>,
    log: RatingLog,
    pub metric: AlphaMetric,
    pub agreement: AgreementDefinition,
}

impl AnnotationStore {
    pub fn new(pairs: Vec<DialoguePair>, log: RatingLog) -> AnnotationStore {
        let index = pairs.iter().enumerate().map(|(i, p)| (p.pair_id.clone(), i)).collect();
        AnnotationStore { pairs, index, log, metric: AlphaMetric::default(), agreement: AgreementDefinition::default() }
    }

    pub fn pairs(&self) -> &[DialoguePair] {
        &self.pairs
    }

    /// First pair in sample order this annotator has not rated.
    pub fn next_for(&self, annotator: &str) -> Option<PairView> {
        let done: BTreeSet<String> =
            self.log.snapshot().into_iter().filter(|r| r.annotator_id == annotator).map(|r| r.pair_id).collect();
        let (position, p) = self.pairs.iter().enumerate().find(|(_, p)| !done.contains(&p.pair_id))?;
        Some(PairView {
            pair_id: p.pair_id.clone(),
            domain_title: p.mapped.domain_title.clone(),
            original: turns(&p.original.utterances),
            mapped: turns(&p.mapped.utterances),
            position,
            total: self.pairs.len(),
        })
    }

    pub fn submit(&self, s: RatingSubmission) -> Result<RatingRecord, HumanEvalError> {
        s.validate()?;
        if !self.index.contains_key(&s.pair_id) {
            return Err(HumanEvalError::UnknownPair(s.pair_id));
        }
        self.log.append(s.into_record(now_millis()))
    }

    pub fn stats(&self) -> Result<AgreementReport, HumanEvalError> {
        agreement_stats(&self.log.snapshot(), self.metric, self.agreement)
    }

    pub fn export(&self) -> String {
        self.log.export()
    }
}
