//! The five-label strategy schema and the per-dataset tables that rewrite
//! raw annotation tokens into it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DatasetId, Stage};

/// Unified negotiation strategy label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CanonicalLabel {
    #[serde(rename = "Rapport")]
    Rapport,
    #[serde(rename = "Assessment")]
    Assessment,
    #[serde(rename = "Self-Interest")]
    SelfInterest,
    #[serde(rename = "Coordination")]
    Coordination,
    #[serde(rename = "Non-Strategic")]
    NonStrategic,
}

impl CanonicalLabel {
    pub const ALL: [CanonicalLabel; 5] = [
        CanonicalLabel::Rapport,
        CanonicalLabel::Assessment,
        CanonicalLabel::SelfInterest,
        CanonicalLabel::Coordination,
        CanonicalLabel::NonStrategic,
    ];

    pub const COUNT: usize = 5;

    /// Position in [`CanonicalLabel::ALL`]; used as a row index by the
    /// classifier and the metrics.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CanonicalLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CanonicalLabel::Rapport => "Rapport",
            CanonicalLabel::Assessment => "Assessment",
            CanonicalLabel::SelfInterest => "Self-Interest",
            CanonicalLabel::Coordination => "Coordination",
            CanonicalLabel::NonStrategic => "Non-Strategic",
        }
    }
}

impl fmt::Display for CanonicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown canonical label {0:?}")]
pub struct UnknownLabel(pub String);

/// Spelling variants found in the published mapping tables.
const CANONICAL_ALIASES: &[(&str, CanonicalLabel)] = &[
    ("Asessment", CanonicalLabel::Assessment),
    ("Non-strategic", CanonicalLabel::NonStrategic),
    ("NonStrategic", CanonicalLabel::NonStrategic),
    ("SelfInterest", CanonicalLabel::SelfInterest),
];

impl FromStr for CanonicalLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .or_else(|| {
                CANONICAL_ALIASES
                    .iter()
                    .find(|(alias, _)| *alias == s)
                    .map(|(_, l)| *l)
            })
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// A set of canonical labels, stored as a 5-bit mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSet(u8);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    pub const FULL: LabelSet = LabelSet(0b1_1111);

    pub fn from_bits(bits: u8) -> LabelSet {
        LabelSet(bits & Self::FULL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn single(label: CanonicalLabel) -> LabelSet {
        LabelSet(1 << label.index())
    }

    pub fn insert(&mut self, label: CanonicalLabel) {
        self.0 |= 1 << label.index();
    }

    pub fn contains(self, label: CanonicalLabel) -> bool {
        self.0 & (1 << label.index()) != 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Labels in canonical order.
    pub fn iter(self) -> impl Iterator<Item = CanonicalLabel> {
        CanonicalLabel::ALL.into_iter().filter(move |l| self.contains(*l))
    }

    /// Canonical spellings, in canonical order.
    pub fn to_tokens(self) -> Vec<String> {
        self.iter().map(|l| l.as_str().to_string()).collect()
    }

    /// Parses label tokens; duplicates are absorbed.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<LabelSet, UnknownLabel> {
        let mut set = LabelSet::EMPTY;
        for t in tokens {
            set.insert(t.as_ref().parse()?);
        }
        Ok(set)
    }
}

impl FromIterator<CanonicalLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = CanonicalLabel>>(iter: I) -> Self {
        let mut set = LabelSet::EMPTY;
        for l in iter {
            set.insert(l);
        }
        set
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for l in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            f.write_str(l.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for LabelSet {
    type Err = UnknownLabel;

    /// Comma-separated canonical labels; the empty string is the empty set.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tokens: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
        LabelSet::from_tokens(&tokens)
    }
}

impl Serialize for LabelSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_tokens().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(deserializer)?;
        LabelSet::from_tokens(&tokens).map_err(serde::de::Error::custom)
    }
}

// Raw tables, spelled as published. Targets may list several labels
// separated by commas.
const CASINO: &[(&str, &str)] = &[
    ("Small-Talk", "Rapport"),
    ("Empathy", "Rapport"),
    ("Coordination", "Coordination"),
    ("No-Need", "Self-Interest"),
    ("Elicit-Pref", "Coordination"),
    ("Undervalue-Partner", "Assessment"),
    ("Vouch-Fairness", "Assessment"),
    ("Other-Need", "Self-Interest"),
    ("Non-strategic", "Non-strategic"),
];

const CRAIGSLIST: &[(&str, &str)] = &[
    ("intro", "Rapport"),
    ("propose", "Coordination"),
    ("vague-price", "Coordination"),
    ("counter", "Coordination"),
    ("inform", "Assessment"),
];

const PERSUASION: &[(&str, &str)] = &[
    ("Negotiate-Price-NoChange", "Coordination"),
    ("Ask_Clarification-Y", "Self-Interest"),
    ("Provide_Clarification-Y", "Self-Interest"),
    ("tell_price", "Coordination"),
    ("Negotiate-Remove-delivery", "Coordination"),
    ("Ask_Price", "Coordination"),
    ("Negotiate-Price-Decrease", "Coordination"),
    ("Negotiate-Price-Increase", "Coordination"),
    ("Acknowledge acceptance", "Assessment"),
    ("Accept", "Assessment"),
    ("Negotiate-Remove-X", "Coordination"),
    ("Negotiate-Remove-X_Negotiate-Price-Decrease", "Coordination"),
    ("Negotiate-Price-Remove-X", "Coordination"),
    ("Negotiate-Add-X", "Coordination"),
    ("Reject", "Assessment"),
    ("Greet-Inform", "Rapport"),
    ("Greet-Ask", "Rapport"),
    ("Greet-Ask_Negotiate-Price-Decrease", "Rapport,Self-Interest"),
    ("Greet-Inform_Negotiate-Price-Increase", "Rapport,Self-Interest"),
    ("Greet-Inform_Negotiate-Price-NoChange", "Rapport,Self-Interest"),
    ("avoid_rejection", "Coordination"),
];

const JOB_INTERVIEW: &[(&str, &str)] = &[
    ("greet", "Rapport"),
    ("disagree", "Asessment"),
    ("agree", "Asessment"),
    ("inquire", "Coordination"),
    ("propose", "Coordination"),
    ("inform", "Asessment"),
];

/// Raw-token spellings that resolve to a table key.
const RAW_ALIASES: &[(DatasetId, &str, &str)] = &[(DatasetId::CaSiNo, "Undervalue- Partner", "Undervalue-Partner")];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelMapError {
    #[error("no mapping table for {0}: generated data is already canonical")]
    NoTable(DatasetId),
    #[error("label mapping requires a raw corpus, got stage {0}")]
    WrongStage(Stage),
}

/// Raw token → canonical label set table for one source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub dataset: DatasetId,
    pub entries: BTreeMap<String, LabelSet>,
    aliases: BTreeMap<String, String>,
}

impl LabelMapping {
    /// Resolves a raw token, consulting the alias table when the exact
    /// spelling is absent.
    pub fn lookup(&self, raw: &str) -> Option<LabelSet> {
        let raw = raw.trim();
        self.entries
            .get(raw)
            .or_else(|| self.aliases.get(raw).and_then(|k| self.entries.get(k)))
            .copied()
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(a, k)| (a.as_str(), k.as_str()))
    }

    /// Writes `raw<TAB>canonical[,canonical]` rows, one per entry.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (raw, set) in &self.entries {
            writeln!(out, "{raw}\t{set}")?;
        }
        Ok(())
    }
}

pub fn mapping_for(dataset: DatasetId) -> Result<LabelMapping, LabelMapError> {
    let rows = match dataset {
        DatasetId::CaSiNo => CASINO,
        DatasetId::CraigslistBargain => CRAIGSLIST,
        DatasetId::JobInterview => JOB_INTERVIEW,
        DatasetId::PersuasionForGood => PERSUASION,
        DatasetId::Gnome => return Err(LabelMapError::NoTable(dataset)),
    };
    let entries = rows
        .iter()
        .map(|(raw, target)| {
            let set: LabelSet = target.parse().expect("built-in table uses known labels");
            debug_assert!(!set.is_empty());
            (raw.to_string(), set)
        })
        .collect();
    let aliases = RAW_ALIASES
        .iter()
        .filter(|(d, _, _)| *d == dataset)
        .map(|(_, alias, key)| (alias.to_string(), key.to_string()))
        .collect();
    Ok(LabelMapping { dataset, entries, aliases })
}

/// Writes every source table, each preceded by a `# <dataset>` line.
pub fn export_tables<W: Write>(mut out: W) -> io::Result<()> {
    for dataset in DatasetId::SOURCES {
        let table = mapping_for(dataset).expect("source datasets have tables");
        writeln!(out, "# {dataset}")?;
        table.write_tsv(&mut out)?;
    }
    Ok(())
}

/// One utterance left out of a mapped corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedUtterance {
    pub dialogue_id: String,
    pub index: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapReport {
    /// Distinct raw tokens absent from the table, sorted.
    pub unmapped: Vec<String>,
    pub excluded_utterances: Vec<ExcludedUtterance>,
    /// Dialogues left with no utterances at all.
    pub dropped_dialogues: Vec<String>,
}

/// Rewrites every raw label token into canonical labels.
///
/// An utterance carrying any token missing from the table is removed from
/// its dialogue and reported; a dialogue that loses every utterance is
/// removed as well.
pub fn map_corpus(corpus: Corpus) -> Result<(Corpus, LabelMapReport), LabelMapError> {
    if corpus.stage != Stage::Raw {
        return Err(LabelMapError::WrongStage(corpus.stage));
    }
    let table = mapping_for(corpus.dataset)?;
    let mut report = LabelMapReport::default();
    let mut unmapped = BTreeSet::new();
    let mut out = Vec::with_capacity(corpus.dialogues.len());

    for mut dialogue in corpus.dialogues {
        let mut kept = Vec::with_capacity(dialogue.utterances.len());
        for (index, mut utt) in dialogue.utterances.into_iter().enumerate() {
            let mut set = LabelSet::EMPTY;
            let mut missing = Vec::new();
            for tok in &utt.labels {
                match table.lookup(tok) {
                    Some(image) => set = set.union(image),
                    None => missing.push(tok.clone()),
                }
            }
            if missing.is_empty() && !set.is_empty() {
                utt.labels = set.to_tokens();
                kept.push(utt);
            } else {
                unmapped.extend(missing.iter().cloned());
                report.excluded_utterances.push(ExcludedUtterance {
                    dialogue_id: dialogue.id.clone(),
                    index,
                    tokens: utt.labels.clone(),
                });
            }
        }
        if kept.is_empty() {
            report.dropped_dialogues.push(dialogue.id);
            continue;
        }
        dialogue.utterances = kept;
        out.push(dialogue);
    }
    report.unmapped = unmapped.into_iter().collect();
    if !report.unmapped.is_empty() {
        log::warn!(
            "{}: {} unmapped label token(s), {} utterance(s) excluded",
            corpus.dataset,
            report.unmapped.len(),
            report.excluded_utterances.len()
        );
    }
    let mapped = Corpus { dataset: corpus.dataset, stage: Stage::MappedLabels, dialogues: out };
    Ok((mapped, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Speaker, Utterance};

    fn utt(labels: &[&str]) -> Utterance {
        Utterance {
            speaker: Speaker::A,
            text: "x".into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn raw(dataset: DatasetId, utts: Vec<Utterance>) -> Corpus {
        Corpus {
            dataset,
            stage: Stage::Raw,
            dialogues: vec![Dialogue::new("d1", dataset, utts)],
        }
    }

    #[test]
    fn casino_small_talk_is_rapport() {
        let t = mapping_for(DatasetId::CaSiNo).unwrap();
        assert_eq!(t.lookup("Small-Talk"), Some(LabelSet::single(CanonicalLabel::Rapport)));
    }

    #[test]
    fn job_interview_greet_is_rapport() {
        let t = mapping_for(DatasetId::JobInterview).unwrap();
        assert_eq!(t.lookup("greet"), Some(LabelSet::single(CanonicalLabel::Rapport)));
        // "Asessment" spelling resolves to Assessment
        assert_eq!(t.lookup("agree"), Some(LabelSet::single(CanonicalLabel::Assessment)));
    }

    #[test]
    fn gnome_has_no_table() {
        assert_eq!(mapping_for(DatasetId::Gnome), Err(LabelMapError::NoTable(DatasetId::Gnome)));
    }

    #[test]
    fn undervalue_partner_alias() {
        let t = mapping_for(DatasetId::CaSiNo).unwrap();
        let a = LabelSet::single(CanonicalLabel::Assessment);
        assert_eq!(t.lookup("Undervalue- Partner"), Some(a));
        assert_eq!(t.lookup("Undervalue-Partner"), Some(a));
        assert_eq!(t.lookup("Non-strategic"), Some(LabelSet::single(CanonicalLabel::NonStrategic)));
    }

    #[test]
    fn table_sizes_match_published_blocks() {
        assert_eq!(mapping_for(DatasetId::CaSiNo).unwrap().entries.len(), 9);
        assert_eq!(mapping_for(DatasetId::CraigslistBargain).unwrap().entries.len(), 5);
        // one row is listed twice in the published block
        assert_eq!(mapping_for(DatasetId::PersuasionForGood).unwrap().entries.len(), 21);
        assert_eq!(mapping_for(DatasetId::JobInterview).unwrap().entries.len(), 6);
    }

    #[test]
    fn maps_small_talk() {
        let (c, report) = map_corpus(raw(DatasetId::CaSiNo, vec![utt(&["Small-Talk"])])).unwrap();
        assert_eq!(c.stage, Stage::MappedLabels);
        assert_eq!(c.dialogues[0].utterances[0].labels, vec!["Rapport"]);
        assert!(report.unmapped.is_empty());
    }

    #[test]
    fn multi_label_target() {
        let (c, _) = map_corpus(raw(
            DatasetId::PersuasionForGood,
            vec![utt(&["Greet-Ask_Negotiate-Price-Decrease"])],
        ))
        .unwrap();
        assert_eq!(c.dialogues[0].utterances[0].labels, vec!["Rapport", "Self-Interest"]);
    }

    #[test]
    fn multi_token_union() {
        let (c, _) = map_corpus(raw(DatasetId::CaSiNo, vec![utt(&["Small-Talk", "No-Need", "Empathy"])])).unwrap();
        assert_eq!(c.dialogues[0].utterances[0].labels, vec!["Rapport", "Self-Interest"]);
    }

    #[test]
    fn unknown_token_excludes_utterance() {
        let (c, report) = map_corpus(raw(
            DatasetId::CaSiNo,
            vec![utt(&["made-up-token"]), utt(&["Coordination"])],
        ))
        .unwrap();
        assert_eq!(report.unmapped, vec!["made-up-token"]);
        assert_eq!(report.excluded_utterances.len(), 1);
        assert_eq!(report.excluded_utterances[0].index, 0);
        assert_eq!(c.dialogues[0].utterances.len(), 1);
        assert_eq!(c.dialogues[0].utterances[0].labels, vec!["Coordination"]);
    }

    #[test]
    fn dialogue_losing_all_utterances_is_dropped() {
        let (c, report) = map_corpus(raw(DatasetId::CaSiNo, vec![utt(&["nope"])])).unwrap();
        assert!(c.dialogues.is_empty());
        assert_eq!(report.dropped_dialogues, vec!["d1"]);
    }

    #[test]
    fn export_has_one_row_per_entry() {
        let mut buf = Vec::new();
        export_tables(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 9 + 5 + 21 + 6);
        assert!(text.contains("Greet-Ask_Negotiate-Price-Decrease\tRapport,Self-Interest\n"));
        assert!(text.contains("disagree\tAssessment\n"));
    }

    #[test]
    fn label_set_parse_display() {
        let s: LabelSet = "Coordination, Rapport".parse().unwrap();
        assert_eq!(s.to_string(), "Rapport,Coordination");
        assert_eq!(s.len(), 2);
        assert!("".parse::<LabelSet>().unwrap().is_empty());
        assert!("Bogus".parse::<LabelSet>().is_err());
    }
}
