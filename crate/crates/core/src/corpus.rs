//! Normalized dialogue interchange format (`.dlg.jsonl`).
//!
//! A file is an optional header line followed by one dialogue record per
//! line:
//!
//! ```text
//! {"format":"gnome-dlg","version":1,"dataset":"CaSiNo","stage":"raw"}
//! {"id":"c1","source":"CaSiNo","complete":true,"utterances":[{"speaker":"A","text":"Hi","labels":["Small-Talk"]}]}
//! ```
//!
//! Generated dialogues additionally carry a `provenance` object naming the
//! seed they were mapped from.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelmap::{CanonicalLabel, LabelSet};

pub const FORMAT_TAG: &str = "gnome-dlg";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "dlg.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    CaSiNo,
    CraigslistBargain,
    JobInterview,
    PersuasionForGood,
    /// Reserved for generated data.
    Gnome,
}

impl DatasetId {
    /// The four human-annotated source corpora.
    pub const SOURCES: [DatasetId; 4] = [
        DatasetId::CaSiNo,
        DatasetId::CraigslistBargain,
        DatasetId::JobInterview,
        DatasetId::PersuasionForGood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::CaSiNo => "CaSiNo",
            DatasetId::CraigslistBargain => "CraigslistBargain",
            DatasetId::JobInterview => "JobInterview",
            DatasetId::PersuasionForGood => "PersuasionForGood",
            DatasetId::Gnome => "Gnome",
        }
    }

    pub fn is_source(self) -> bool {
        self != DatasetId::Gnome
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown dataset tag {0:?}")]
pub struct UnknownDataset(pub String);

impl FromStr for DatasetId {
    type Err = UnknownDataset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            DatasetId::CaSiNo,
            DatasetId::CraigslistBargain,
            DatasetId::JobInterview,
            DatasetId::PersuasionForGood,
            DatasetId::Gnome,
        ]
        .into_iter()
        .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| UnknownDataset(s.to_string()))
    }
}

/// Pipeline stage of a corpus. Ordered: a corpus only ever moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Raw,
    MappedLabels,
    Seed,
    Generated,
    Postprocessed,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::MappedLabels => "mapped-labels",
            Stage::Seed => "seed",
            Stage::Generated => "generated",
            Stage::Postprocessed => "postprocessed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::A => "A",
            Speaker::B => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    /// Raw source tokens before label mapping, canonical spellings after.
    pub labels: Vec<String>,
}

impl Utterance {
    /// Canonical view of the label tokens.
    pub fn label_set(&self) -> Result<LabelSet, crate::labelmap::UnknownLabel> {
        LabelSet::from_tokens(&self.labels)
    }
}

/// Where a generated dialogue came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_id: String,
    pub seed_source: DatasetId,
    pub generation_index: u32,
    pub domain_title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub source: DatasetId,
    pub complete: bool,
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Dialogue {
    /// A complete dialogue without provenance.
    pub fn new(id: impl Into<String>, source: DatasetId, utterances: Vec<Utterance>) -> Self {
        Dialogue { id: id.into(), source, complete: true, utterances, provenance: None }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Canonical label sets, one per utterance.
    pub fn label_sets(&self) -> Result<Vec<LabelSet>, crate::labelmap::UnknownLabel> {
        self.utterances.iter().map(Utterance::label_set).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub dataset: DatasetId,
    pub stage: Stage,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown dataset tag {tag:?}")]
    UnknownDataset { line: usize, tag: String },
    #[error("line {line}: record source {found} does not belong to a {expected} corpus")]
    SourceMismatch { line: usize, expected: DatasetId, found: DatasetId },
    #[error("cannot move corpus from stage {from} back to {to}")]
    StageRegression { from: Stage, to: Stage },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CorpusError {
    /// 1-based input line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Malformed { line, .. }
            | CorpusError::DuplicateId { line, .. }
            | CorpusError::UnknownDataset { line, .. }
            | CorpusError::SourceMismatch { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dataset: String,
    stage: Stage,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    source: String,
    complete: bool,
    utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl Corpus {
    pub fn new(dataset: DatasetId, stage: Stage) -> Self {
        Corpus { dataset, stage, dialogues: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    /// Moves the corpus to `to`; staying in place is allowed, going back is not.
    pub fn advance(&mut self, to: Stage) -> Result<(), CorpusError> {
        if to < self.stage {
            return Err(CorpusError::StageRegression { from: self.stage, to });
        }
        self.stage = to;
        Ok(())
    }
}

fn malformed(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed { line, message: message.into() }
}

fn is_header(value: &serde_json::Value) -> bool {
    value.get("format").is_some()
}

fn validate_record(
    line: usize,
    rec: RawRecord,
    dataset: DatasetId,
    stage: Stage,
) -> Result<Dialogue, CorpusError> {
    let source: DatasetId = rec
        .source
        .parse()
        .map_err(|_| CorpusError::UnknownDataset { line, tag: rec.source.clone() })?;
    if source != dataset {
        return Err(CorpusError::SourceMismatch { line, expected: dataset, found: source });
    }
    if rec.id.trim().is_empty() {
        return Err(malformed(line, "empty dialogue id"));
    }
    if rec.utterances.is_empty() {
        return Err(malformed(line, "dialogue has no utterances"));
    }
    for (i, u) in rec.utterances.iter().enumerate() {
        if u.text.trim().is_empty() {
            return Err(malformed(line, format!("utterance {i} has empty text")));
        }
        let mut seen = HashSet::new();
        for l in &u.labels {
            if !seen.insert(l.as_str()) {
                return Err(malformed(line, format!("utterance {i} repeats label {l:?}")));
            }
        }
        if stage >= Stage::MappedLabels {
            if u.labels.is_empty() {
                return Err(malformed(line, format!("utterance {i} has no labels")));
            }
            for l in &u.labels {
                let canonical: CanonicalLabel =
                    l.parse().map_err(|e| malformed(line, format!("utterance {i}: {e}")))?;
                if canonical.as_str() != l {
                    return Err(malformed(line, format!("utterance {i}: non-canonical spelling {l:?}")));
                }
            }
        }
    }
    match (&rec.provenance, source) {
        (None, DatasetId::Gnome) => return Err(malformed(line, "generated dialogue without provenance")),
        (Some(p), _) => {
            if p.domain_title.trim().is_empty() {
                return Err(malformed(line, "empty domain title"));
            }
            if p.generation_index == 0 {
                return Err(malformed(line, "generation index starts at 1"));
            }
            if !p.seed_source.is_source() {
                return Err(malformed(line, "seed source must be a source dataset"));
            }
        }
        (None, _) => {}
    }
    Ok(Dialogue {
        id: rec.id,
        source,
        complete: rec.complete,
        utterances: rec.utterances,
        provenance: rec.provenance,
    })
}

struct Parsed {
    corpus: Corpus,
    errors: Vec<CorpusError>,
    records: usize,
}

fn parse_inner<R: BufRead>(input: R, dataset: DatasetId, fail_fast: bool) -> Result<Parsed, CorpusError> {
    let mut corpus = Corpus::new(dataset, Stage::Raw);
    let mut errors = Vec::new();
    let mut ids = HashSet::new();
    let mut records = 0usize;
    let mut seen_content = false;

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                records += 1;
                let err = malformed(line_no, e.to_string());
                if fail_fast {
                    return Err(err);
                }
                errors.push(err);
                seen_content = true;
                continue;
            }
        };
        if !seen_content && is_header(&value) {
            seen_content = true;
            let header: Header = serde_json::from_value(value).map_err(|e| malformed(line_no, e.to_string()))?;
            if header.format != FORMAT_TAG {
                return Err(malformed(line_no, format!("unknown format {:?}", header.format)));
            }
            if header.version != FORMAT_VERSION {
                return Err(malformed(line_no, format!("unsupported version {}", header.version)));
            }
            let tagged: DatasetId = header
                .dataset
                .parse()
                .map_err(|_| CorpusError::UnknownDataset { line: line_no, tag: header.dataset.clone() })?;
            if tagged != dataset {
                return Err(CorpusError::SourceMismatch { line: line_no, expected: dataset, found: tagged });
            }
            corpus.stage = header.stage;
            continue;
        }
        seen_content = true;
        records += 1;
        let result = serde_json::from_value::<RawRecord>(value)
            .map_err(|e| malformed(line_no, e.to_string()))
            .and_then(|rec| validate_record(line_no, rec, dataset, corpus.stage))
            .and_then(|d| {
                if ids.insert(d.id.clone()) {
                    Ok(d)
                } else {
                    Err(CorpusError::DuplicateId { line: line_no, id: d.id })
                }
            });
        match result {
            Ok(d) => corpus.dialogues.push(d),
            Err(e) if fail_fast => return Err(e),
            Err(e) => errors.push(e),
        }
    }
    Ok(Parsed { corpus, errors, records })
}

/// Parses a `.dlg.jsonl` stream. Fails on the first bad record, reporting its
/// line. Without a header line the corpus is taken to be at stage raw.
pub fn parse_corpus<R: BufRead>(input: R, dataset: DatasetId) -> Result<Corpus, CorpusError> {
    parse_inner(input, dataset, true).map(|p| p.corpus)
}

/// Parses every record it can, collecting one error per rejected record.
/// `corpus.len() + errors.len()` always equals the number of records read.
/// Header and I/O problems are still fatal.
pub fn parse_corpus_lenient<R: BufRead>(
    input: R,
    dataset: DatasetId,
) -> Result<(Corpus, Vec<CorpusError>), CorpusError> {
    let parsed = parse_inner(input, dataset, false)?;
    debug_assert_eq!(parsed.corpus.len() + parsed.errors.len(), parsed.records);
    Ok((parsed.corpus, parsed.errors))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut sink: W) -> Result<(), CorpusError> {
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        dataset: corpus.dataset.as_str().to_string(),
        stage: corpus.stage,
    };
    serde_json::to_writer(&mut sink, &header).map_err(io::Error::from)?;
    sink.write_all(b"\n")?;
    for d in &corpus.dialogues {
        serde_json::to_writer(&mut sink, d).map_err(io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_corpus_file(path: &std::path::Path, dataset: DatasetId) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_corpus(io::BufReader::new(file), dataset)
}

pub fn write_corpus_file(corpus: &Corpus, path: &std::path::Path) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)?;
    write_corpus(corpus, io::BufWriter::new(file))
}

/// Reads the dataset tag from a file's header line, if it has one.
pub fn peek_dataset(path: &std::path::Path) -> Result<Option<DatasetId>, CorpusError> {
    let file = std::fs::File::open(path)?;
    for (idx, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(idx + 1, e.to_string()))?;
        if !is_header(&value) {
            return Ok(None);
        }
        let header: Header = serde_json::from_value(value).map_err(|e| malformed(idx + 1, e.to_string()))?;
        return header
            .dataset
            .parse()
            .map(Some)
            .map_err(|_| CorpusError::UnknownDataset { line: idx + 1, tag: header.dataset });
    }
    Ok(None)
}

/// Whether a dialogue is usable for per-utterance strategy prediction:
/// flagged complete, at least two turns, and every turn labeled.
pub fn is_complete(d: &Dialogue) -> bool {
    d.complete && d.utterances.len() >= 2 && d.utterances.iter().all(|u| !u.labels.is_empty())
}

/// Keeps the complete dialogues and returns how many were removed.
pub fn filter_incomplete(corpus: Corpus) -> (Corpus, usize) {
    let before = corpus.dialogues.len();
    let dialogues: Vec<Dialogue> = corpus.dialogues.into_iter().filter(is_complete).collect();
    let removed = before - dialogues.len();
    (Corpus { dataset: corpus.dataset, stage: corpus.stage, dialogues }, removed)
}
