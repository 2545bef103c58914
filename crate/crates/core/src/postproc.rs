//! Clean-up of generated dialogues: length gate, exact de-duplication and
//! removal of verbatim seed copies.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DatasetId, Dialogue, Stage};
use crate::seedselect::SeedDataset;

/// Joins normalized utterances; cannot occur in collapsed text.
const SEPARATOR: char = '\u{1f}';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PostprocError {
    #[error("generated dialogue {id:?} has no provenance")]
    MissingProvenance { id: String },
    #[error("generated dialogue {id:?} points at unknown seed {seed_source}/{seed_id}")]
    DanglingSeed { id: String, seed_source: DatasetId, seed_id: String },
}

/// Whitespace runs collapsed to one space and trimmed per utterance,
/// utterances joined by a unit separator. Case is preserved.
pub fn normalized_text(d: &Dialogue) -> String {
    let mut out = String::new();
    for (i, u) in d.utterances.iter().enumerate() {
        if i > 0 {
            out.push(SEPARATOR);
        }
        let mut first = true;
        for word in u.text.split_whitespace() {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(word);
        }
    }
    out
}

fn seed_source_of(d: &Dialogue) -> Result<DatasetId, PostprocError> {
    d.provenance
        .as_ref()
        .map(|p| p.seed_source)
        .ok_or_else(|| PostprocError::MissingProvenance { id: d.id.clone() })
}

/// Keeps dialogues whose length equals their seed's.
pub fn drop_short(generated: Corpus, seed: &SeedDataset) -> Result<(Corpus, Vec<Dialogue>), PostprocError> {
    let mut kept = Vec::with_capacity(generated.dialogues.len());
    let mut dropped = Vec::new();
    for d in generated.dialogues {
        let p = d.provenance.as_ref().ok_or_else(|| PostprocError::MissingProvenance { id: d.id.clone() })?;
        let original = seed.find(p.seed_source, &p.seed_id).ok_or_else(|| PostprocError::DanglingSeed {
            id: d.id.clone(),
            seed_source: p.seed_source,
            seed_id: p.seed_id.clone(),
        })?;
        if d.utterances.len() == original.utterances.len() {
            kept.push(d);
        } else {
            dropped.push(d);
        }
    }
    Ok((Corpus { dialogues: kept, ..generated }, dropped))
}

/// Removes exact duplicates of normalized text, keeping the first
/// occurrence in corpus order.
pub fn dedup(generated: Corpus) -> (Corpus, Vec<Dialogue>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(generated.dialogues.len());
    let mut removed = Vec::new();
    for d in generated.dialogues {
        if seen.insert(normalized_text(&d)) {
            kept.push(d);
        } else {
            removed.push(d);
        }
    }
    (Corpus { dialogues: kept, ..generated }, removed)
}

/// Removes generated dialogues whose normalized text equals any seed
/// dialogue's.
pub fn remove_leakage(generated: Corpus, seed: &SeedDataset) -> (Corpus, Vec<Dialogue>) {
    let seed_texts: HashSet<String> = seed.dialogues().map(normalized_text).collect();
    let (removed, kept): (Vec<_>, Vec<_>) =
        generated.dialogues.into_iter().partition(|d| seed_texts.contains(&normalized_text(d)));
    (Corpus { dialogues: kept, ..generated }, removed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocCounts {
    pub input: u64,
    pub dropped_short: u64,
    pub duplicates_removed: u64,
    pub leakage_removed: u64,
    pub kept: u64,
}

impl PostprocCounts {
    pub fn is_conserved(&self) -> bool {
        self.input == self.dropped_short + self.duplicates_removed + self.leakage_removed + self.kept
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocReport {
    #[serde(flatten)]
    pub total: PostprocCounts,
    pub per_source: BTreeMap<DatasetId, PostprocCounts>,
}

impl PostprocReport {
    pub fn is_conserved(&self) -> bool {
        self.total.is_conserved() && self.per_source.values().all(PostprocCounts::is_conserved)
    }

    /// Tab-separated per-source table, one row per seed source plus a total.
    pub fn to_table(&self) -> String {
        let mut out = String::from("dataset\tinput\tdropped_short\tduplicates\tleakage\tkept\n");
        let row = |name: &str, c: &PostprocCounts| {
            format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\n",
                c.input, c.dropped_short, c.duplicates_removed, c.leakage_removed, c.kept
            )
        };
        for (source, c) in &self.per_source {
            out.push_str(&row(source.as_str(), c));
        }
        out.push_str(&row("total", &self.total));
        out
    }
}

/// Length gate, then de-duplication, then leakage removal.
pub fn postprocess(generated: Corpus, seed: &SeedDataset) -> Result<(Corpus, PostprocReport), PostprocError> {
    let mut report = PostprocReport::default();
    for source in seed.per_source.keys() {
        report.per_source.insert(*source, PostprocCounts::default());
    }
    for d in &generated.dialogues {
        let source = seed_source_of(d)?;
        report.per_source.entry(source).or_default().input += 1;
        report.total.input += 1;
    }

    let (corpus, short) = drop_short(generated, seed)?;
    let (corpus, dups) = dedup(corpus);
    let (mut corpus, leaks) = remove_leakage(corpus, seed);

    let mut tally = |removed: &[Dialogue], field: fn(&mut PostprocCounts) -> &mut u64| -> Result<(), PostprocError> {
        for d in removed {
            *field(report.per_source.entry(seed_source_of(d)?).or_default()) += 1;
        }
        Ok(())
    };
    tally(&short, |c| &mut c.dropped_short)?;
    tally(&dups, |c| &mut c.duplicates_removed)?;
    tally(&leaks, |c| &mut c.leakage_removed)?;
    report.total.dropped_short = short.len() as u64;
    report.total.duplicates_removed = dups.len() as u64;
    report.total.leakage_removed = leaks.len() as u64;
    report.total.kept = corpus.len() as u64;
    for d in &corpus.dialogues {
        report.per_source.entry(seed_source_of(d)?).or_default().kept += 1;
    }
    corpus.stage = corpus.stage.max(Stage::Postprocessed);
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, Speaker, Utterance};
    use crate::seedselect::ScoredDialogue;

    fn utts(texts: &[&str]) -> Vec<Utterance> {
        texts
            .iter()
            .map(|t| Utterance { speaker: Speaker::A, text: t.to_string(), labels: vec!["Rapport".into()] })
            .collect()
    }

    fn seed() -> SeedDataset {
        let mut a = Dialogue::new("s1", DatasetId::CaSiNo, utts(&["hi", "we need water"]));
        a.source = DatasetId::CaSiNo;
        let mut per_source = BTreeMap::new();
        per_source.insert(DatasetId::CaSiNo, vec![ScoredDialogue { dialogue: a, score: 1.0 }]);
        SeedDataset { k: 1, per_source, shortfalls: vec![] }
    }

    fn generated(g: u32, texts: &[&str]) -> Dialogue {
        Dialogue {
            id: format!("CaSiNo:s1:g{g}"),
            source: DatasetId::Gnome,
            complete: true,
            utterances: utts(texts),
            provenance: Some(Provenance {
                seed_id: "s1".into(),
                seed_source: DatasetId::CaSiNo,
                generation_index: g,
                domain_title: "Auction".into(),
            }),
        }
    }

    fn corpus(dialogues: Vec<Dialogue>) -> Corpus {
        Corpus { dataset: DatasetId::Gnome, stage: Stage::Generated, dialogues }
    }

    #[test]
    fn normalization_collapses_whitespace_keeps_case() {
        let a = generated(1, &["  Hello   there ", "ok"]);
        let b = generated(2, &["Hello there", "ok\n"]);
        let c = generated(3, &["hello there", "ok"]);
        assert_eq!(normalized_text(&a), normalized_text(&b));
        assert_ne!(normalized_text(&a), normalized_text(&c));
        // utterance boundaries matter
        let d = generated(4, &["Hello", "there ok"]);
        assert_ne!(normalized_text(&b), normalized_text(&d));
    }

    #[test]
    fn drop_short_identity_and_threshold() {
        let (c, dropped) = drop_short(corpus(vec![generated(1, &["a", "b"])]), &seed()).unwrap();
        assert_eq!((c.len(), dropped.len()), (1, 0));
        let (c, dropped) = drop_short(corpus(vec![generated(1, &["a"])]), &seed()).unwrap();
        assert_eq!((c.len(), dropped.len()), (0, 1));
    }

    #[test]
    fn dangling_seed_is_named() {
        let mut d = generated(1, &["a", "b"]);
        d.provenance.as_mut().unwrap().seed_id = "ghost".into();
        let err = drop_short(corpus(vec![d]), &seed()).unwrap_err();
        assert!(matches!(err, PostprocError::DanglingSeed { ref seed_id, .. } if seed_id == "ghost"));
    }

    #[test]
    fn dedup_keeps_first() {
        let (c, removed) = dedup(corpus(vec![
            generated(1, &["a", "b"]),
            generated(2, &["x", "y"]),
            generated(3, &["a ", " b"]),
        ]));
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].id, "CaSiNo:s1:g3");
        assert_eq!(c.dialogues[0].id, "CaSiNo:s1:g1");
        let (_, none) = dedup(c);
        assert!(none.is_empty());
    }

    #[test]
    fn leakage_exact_copy_only() {
        let mut gens: Vec<_> = (1..=9).map(|g| generated(g, &["hi", &format!("we need vase {g}")])).collect();
        gens.push(generated(10, &["hi", "we  need water"]));
        let (c, removed) = remove_leakage(corpus(gens), &seed());
        assert_eq!(removed.len(), 1);
        assert_eq!(c.len(), 9);
    }

    #[test]
    fn full_postprocess_conserves_and_is_idempotent() {
        let gens = corpus(vec![
            generated(1, &["a", "b"]),
            generated(2, &["a"]),
            generated(3, &["a", "b"]),
            generated(4, &["hi", "we need water"]),
            generated(5, &["c", "d"]),
        ]);
        let (out, report) = postprocess(gens, &seed()).unwrap();
        assert_eq!(report.total, PostprocCounts { input: 5, dropped_short: 1, duplicates_removed: 1, leakage_removed: 1, kept: 2 });
        assert!(report.is_conserved());
        assert_eq!(report.per_source[&DatasetId::CaSiNo], report.total);
        assert_eq!(out.stage, Stage::Postprocessed);

        let (again, second) = postprocess(out.clone(), &seed()).unwrap();
        assert_eq!(again, out);
        assert_eq!(second.total.kept, 2);
        assert_eq!(second.total.input, 2);
    }

    #[test]
    fn table_has_total_row() {
        let (_, report) = postprocess(corpus(vec![generated(1, &["a", "b"])]), &seed()).unwrap();
        let t = report.to_table();
        assert!(t.contains("CaSiNo\t1\t0\t0\t0\t1\n"));
        assert!(t.ends_with("total\t1\t0\t0\t0\t1\n"));
    }
}
