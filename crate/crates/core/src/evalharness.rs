//! Train/validation splits, multi-label metrics and the six-regime
//! experiment matrix.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DatasetId, Dialogue};
use crate::labelmap::{CanonicalLabel, LabelSet, UnknownLabel};

pub const DEFAULT_SPLIT_RATIO: f64 = 0.6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split ratio {0} is outside (0, 1)")]
    BadRatio(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("gold has {gold} instances but prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no gold instances")]
    EmptyGold,
    #[error("no gold label has positive support")]
    NoSupport,
    #[error("missing source corpus {0}")]
    MissingSource(DatasetId),
    #[error("generated dialogue {0:?} has no provenance")]
    MissingProvenance(String),
    #[error("empty training set for {0}")]
    EmptyTraining(String),
    #[error("empty test set for {0}")]
    EmptyTest(String),
    #[error("dialogue {dialogue:?}: {source}")]
    Labels { dialogue: String, source: UnknownLabel },
    #[error("model predicted {found} labels for {expected} utterances of {dialogue:?}")]
    PredictionShape { dialogue: String, expected: usize, found: usize },
    #[error("prediction file line {line}: {message}")]
    PredictionFile { line: usize, message: String },
    #[error("no prediction for {dialogue:?} utterance {index}")]
    MissingPrediction { dialogue: String, index: usize },
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dialogue-level shuffle split; each part keeps corpus order.
pub fn split(c: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus), EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::BadRatio(ratio));
    }
    if c.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let n = c.len();
    let n_train = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let mut train = Corpus::new(c.dataset, c.stage);
    let mut validation = Corpus::new(c.dataset, c.stage);
    for (d, t) in c.dialogues.iter().zip(is_train) {
        if t {
            train.dialogues.push(d.clone());
        } else {
            validation.dialogues.push(d.clone());
        }
    }
    Ok((train, validation))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Zero when precision + recall is zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn check_lengths(gold: &[LabelSet], pred: &[LabelSet]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    Ok(())
}

pub fn confusions(gold: &[LabelSet], pred: &[LabelSet]) -> Result<[Confusion; CanonicalLabel::COUNT], EvalError> {
    check_lengths(gold, pred)?;
    let mut out = [Confusion::default(); CanonicalLabel::COUNT];
    for (g, p) in gold.iter().zip(pred) {
        for l in CanonicalLabel::ALL {
            let c = &mut out[l.index()];
            match (g.contains(l), p.contains(l)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(out)
}

/// Support-weighted mean of per-label F1; labels without gold support are
/// left out.
pub fn weighted_f1(gold: &[LabelSet], pred: &[LabelSet]) -> Result<f64, EvalError> {
    let conf = confusions(gold, pred)?;
    let total: u64 = conf.iter().map(Confusion::support).sum();
    if total == 0 {
        return Err(EvalError::NoSupport);
    }
    let weighted: f64 = conf.iter().map(|c| c.support() as f64 * c.f1()).sum();
    Ok(weighted / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAccuracy {
    pub per_class: BTreeMap<CanonicalLabel, f64>,
    pub macro_mean: f64,
}

/// Per label, the fraction of instances whose presence indicator agrees.
pub fn classwise_joint_accuracy(gold: &[LabelSet], pred: &[LabelSet]) -> Result<JointAccuracy, EvalError> {
    let conf = confusions(gold, pred)?;
    let n = gold.len() as f64;
    let per_class: BTreeMap<_, _> =
        CanonicalLabel::ALL.iter().map(|l| (*l, (conf[l.index()].tp + conf[l.index()].tn) as f64 / n)).collect();
    let macro_mean = per_class.values().sum::<f64>() / CanonicalLabel::COUNT as f64;
    Ok(JointAccuracy { per_class, macro_mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub weighted_f1: f64,
    pub joint_accuracy: JointAccuracy,
    pub instances: usize,
}

pub fn score(gold: &[LabelSet], pred: &[LabelSet]) -> Result<Scores, EvalError> {
    Ok(Scores {
        weighted_f1: weighted_f1(gold, pred)?,
        joint_accuracy: classwise_joint_accuracy(gold, pred)?,
        instances: gold.len(),
    })
}

/// Labels a dialogue, one set per utterance.
pub trait Predictor {
    fn predict(&self, d: &Dialogue) -> Vec<LabelSet>;
}

/// A training procedure.
pub trait StrategyModel: Sync {
    fn fit(&self, train: &[&Dialogue]) -> Result<Box<dyn Predictor>, EvalError>;
}

/// Reads the gold labels back; the upper bound for any model.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldOracle;

impl Predictor for GoldOracle {
    fn predict(&self, d: &Dialogue) -> Vec<LabelSet> {
        d.label_sets().unwrap_or_else(|_| vec![LabelSet::EMPTY; d.len()])
    }
}

impl StrategyModel for GoldOracle {
    fn fit(&self, _train: &[&Dialogue]) -> Result<Box<dyn Predictor>, EvalError> {
        Ok(Box::new(GoldOracle))
    }
}

/// Predicts the same label set everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel(pub LabelSet);

impl Predictor for ConstantModel {
    fn predict(&self, d: &Dialogue) -> Vec<LabelSet> {
        vec![self.0; d.len()]
    }
}

impl StrategyModel for ConstantModel {
    fn fit(&self, _train: &[&Dialogue]) -> Result<Box<dyn Predictor>, EvalError> {
        Ok(Box::new(*self))
    }
}

fn gold_of(d: &Dialogue) -> Result<Vec<LabelSet>, EvalError> {
    d.label_sets().map_err(|source| EvalError::Labels { dialogue: d.id.clone(), source })
}

/// Flattened gold and predicted label sets over all utterances of `test`.
pub fn predict_all<'a, I>(predictor: &dyn Predictor, test: I) -> Result<(Vec<LabelSet>, Vec<LabelSet>), EvalError>
where
    I: IntoIterator<Item = &'a Dialogue>,
{
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for d in test {
        let p = predictor.predict(d);
        if p.len() != d.len() {
            return Err(EvalError::PredictionShape { dialogue: d.id.clone(), expected: d.len(), found: p.len() });
        }
        gold.extend(gold_of(d)?);
        pred.extend(p);
    }
    Ok((gold, pred))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    InDomain,
    SyntheticInDomain,
    OutOfDomain,
    SyntheticOutOfDomain,
    LeaveOneOut,
    SyntheticLeaveOneOut,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::InDomain,
        Regime::SyntheticInDomain,
        Regime::OutOfDomain,
        Regime::SyntheticOutOfDomain,
        Regime::LeaveOneOut,
        Regime::SyntheticLeaveOneOut,
    ];

    pub fn is_synthetic(self) -> bool {
        matches!(self, Regime::SyntheticInDomain | Regime::SyntheticOutOfDomain | Regime::SyntheticLeaveOneOut)
    }

    pub fn title(self) -> &'static str {
        match self {
            Regime::InDomain => "In-domain",
            Regime::SyntheticInDomain => "Synthetic-in-domain",
            Regime::OutOfDomain => "Out-of-domain",
            Regime::SyntheticOutOfDomain => "Synthetic-out-of-domain",
            Regime::LeaveOneOut => "Leave-one-out",
            Regime::SyntheticLeaveOneOut => "Synthetic-leave-one-out",
        }
    }

    pub fn pattern(self) -> &'static str {
        match self {
            Regime::InDomain => "A -> A",
            Regime::SyntheticInDomain => "GNOME A -> A",
            Regime::OutOfDomain => "A -> B",
            Regime::SyntheticOutOfDomain => "GNOME A -> B",
            Regime::LeaveOneOut => "A + B + C -> D",
            Regime::SyntheticLeaveOneOut => "GNOME (A + B + C) -> D",
        }
    }
}

/// How the two in-domain regimes are run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InDomainMode {
    /// One evaluation: all sources' training data (or all of GNOME) against
    /// the union of the validation splits.
    #[default]
    Pooled,
    /// One evaluation per source, averaged.
    PerSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub regime: Regime,
    pub train_sources: BTreeSet<DatasetId>,
    /// Train on generated dialogues seeded from `train_sources`.
    pub synthetic: bool,
    pub test_sources: BTreeSet<DatasetId>,
    pub split_seed: u64,
}

impl ExperimentSpec {
    pub fn describe(&self) -> String {
        let names = |s: &BTreeSet<DatasetId>| s.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(" + ");
        let train = if self.synthetic {
            format!("GNOME({})", names(&self.train_sources))
        } else {
            names(&self.train_sources)
        };
        format!("{train} -> {}", names(&self.test_sources))
    }

    fn validate(&self) -> bool {
        match self.regime {
            Regime::OutOfDomain | Regime::SyntheticOutOfDomain => {
                self.train_sources.len() == 1 && self.train_sources.is_disjoint(&self.test_sources)
            }
            Regime::LeaveOneOut | Regime::SyntheticLeaveOneOut => {
                self.train_sources.len() == 3 && self.test_sources.len() == 1 && self.train_sources.is_disjoint(&self.test_sources)
            }
            Regime::InDomain | Regime::SyntheticInDomain => self.train_sources == self.test_sources,
        }
    }
}

/// Every evaluation of the matrix, in reporting order.
pub fn matrix_specs(split_seed: u64, mode: InDomainMode) -> Vec<ExperimentSpec> {
    let sources = DatasetId::SOURCES;
    let set = |xs: &[DatasetId]| xs.iter().copied().collect::<BTreeSet<_>>();
    let mut specs = Vec::new();
    for regime in Regime::ALL {
        let synthetic = regime.is_synthetic();
        let mut push = |train: BTreeSet<DatasetId>, test: BTreeSet<DatasetId>| {
            specs.push(ExperimentSpec { regime, train_sources: train, synthetic, test_sources: test, split_seed })
        };
        match regime {
            Regime::InDomain | Regime::SyntheticInDomain => match mode {
                InDomainMode::Pooled => push(set(&sources), set(&sources)),
                InDomainMode::PerSource => sources.iter().for_each(|a| push(set(&[*a]), set(&[*a]))),
            },
            Regime::OutOfDomain | Regime::SyntheticOutOfDomain => {
                for a in sources {
                    for b in sources.iter().filter(|b| **b != a) {
                        push(set(&[a]), set(&[*b]));
                    }
                }
            }
            Regime::LeaveOneOut | Regime::SyntheticLeaveOneOut => {
                for d in sources {
                    let train = sources.iter().copied().filter(|s| *s != d).collect();
                    push(train, set(&[d]));
                }
            }
        }
    }
    debug_assert!(specs.iter().all(ExperimentSpec::validate));
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Drop original dialogues that seeded a generation from validation sets.
    pub exclude_seed_from_test: bool,
    pub in_domain: InDomainMode,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig { split_ratio: DEFAULT_SPLIT_RATIO, split_seed: 0, exclude_seed_from_test: true, in_domain: InDomainMode::Pooled }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub spec: ExperimentSpec,
    pub train_dialogues: usize,
    pub test_dialogues: usize,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeResult {
    pub regime: Regime,
    pub pairs: Vec<PairResult>,
    pub mean_f1: f64,
    pub mean_joint_accuracy: BTreeMap<CanonicalLabel, f64>,
    pub mean_macro_joint_accuracy: f64,
}

impl RegimeResult {
    fn from_pairs(regime: Regime, pairs: Vec<PairResult>) -> RegimeResult {
        let n = pairs.len() as f64;
        let mean_f1 = pairs.iter().map(|p| p.scores.weighted_f1).sum::<f64>() / n;
        let mean_joint_accuracy = CanonicalLabel::ALL
            .iter()
            .map(|l| (*l, pairs.iter().map(|p| p.scores.joint_accuracy.per_class[l]).sum::<f64>() / n))
            .collect();
        let mean_macro_joint_accuracy = pairs.iter().map(|p| p.scores.joint_accuracy.macro_mean).sum::<f64>() / n;
        RegimeResult { regime, pairs, mean_f1, mean_joint_accuracy, mean_macro_joint_accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: MatrixConfig,
    pub regimes: Vec<RegimeResult>,
}

impl ExperimentResult {
    pub fn pair_count(&self) -> usize {
        self.regimes.iter().map(|r| r.pairs.len()).sum()
    }

    pub fn regime(&self, regime: Regime) -> Option<&RegimeResult> {
        self.regimes.iter().find(|r| r.regime == regime)
    }

    /// Averaged weighted F1 per regime, one column for `model_name`.
    pub fn to_table(&self, model_name: &str) -> String {
        let mut out = format!("Experiment\tFine-tune -> Test\t{model_name}\n");
        for r in &self.regimes {
            let _ = writeln!(out, "{}\t{}\t{:.4}", r.regime.title(), r.regime.pattern(), r.mean_f1);
        }
        out
    }

    /// One row per pair evaluation with per-class joint accuracy.
    pub fn to_pair_table(&self) -> String {
        let mut out = String::from("regime\tpair\ttrain_dialogues\ttest_utterances\tweighted_f1");
        for l in CanonicalLabel::ALL {
            let _ = write!(out, "\tacc_{}", l.as_str());
        }
        out.push_str("\tacc_macro\n");
        for r in &self.regimes {
            for p in &r.pairs {
                let _ = write!(
                    out,
                    "{}\t{}\t{}\t{}\t{:.4}",
                    r.regime.title(),
                    p.spec.describe(),
                    p.train_dialogues,
                    p.scores.instances,
                    p.scores.weighted_f1
                );
                for l in CanonicalLabel::ALL {
                    let _ = write!(out, "\t{:.4}", p.scores.joint_accuracy.per_class[&l]);
                }
                let _ = writeln!(out, "\t{:.4}", p.scores.joint_accuracy.macro_mean);
            }
        }
        out
    }
}

struct Prepared<'a> {
    train: BTreeMap<DatasetId, Vec<&'a Dialogue>>,
    validation: BTreeMap<DatasetId, Vec<Dialogue>>,
    synthetic: BTreeMap<DatasetId, Vec<&'a Dialogue>>,
}

fn prepare<'a>(
    gnome: &'a Corpus,
    splits: &'a BTreeMap<DatasetId, (Corpus, Corpus)>,
    cfg: &MatrixConfig,
) -> Result<Prepared<'a>, EvalError> {
    let mut synthetic: BTreeMap<DatasetId, Vec<&Dialogue>> = BTreeMap::new();
    let mut seeds = HashSet::new();
    for d in &gnome.dialogues {
        let p = d.provenance.as_ref().ok_or_else(|| EvalError::MissingProvenance(d.id.clone()))?;
        synthetic.entry(p.seed_source).or_default().push(d);
        seeds.insert((p.seed_source, p.seed_id.as_str()));
    }
    let mut train = BTreeMap::new();
    let mut validation = BTreeMap::new();
    for (source, (t, v)) in splits {
        let val = v
            .dialogues
            .iter()
            .filter(|d| !cfg.exclude_seed_from_test || !seeds.contains(&(*source, d.id.as_str())))
            .cloned()
            .collect();
        train.insert(*source, t.dialogues.iter().collect());
        validation.insert(*source, val);
    }
    Ok(Prepared { train, validation, synthetic })
}

fn evaluate(spec: &ExperimentSpec, data: &Prepared<'_>, model: &dyn StrategyModel) -> Result<PairResult, EvalError> {
    let pool = if spec.synthetic { &data.synthetic } else { &data.train };
    let train: Vec<&Dialogue> =
        spec.train_sources.iter().flat_map(|s| pool.get(s).into_iter().flatten().copied()).collect();
    if train.is_empty() {
        return Err(EvalError::EmptyTraining(spec.describe()));
    }
    let test: Vec<&Dialogue> = spec.test_sources.iter().flat_map(|s| data.validation[s].iter()).collect();
    if test.is_empty() {
        return Err(EvalError::EmptyTest(spec.describe()));
    }
    let predictor = model.fit(&train)?;
    let (gold, pred) = predict_all(predictor.as_ref(), test.iter().copied())?;
    Ok(PairResult { spec: spec.clone(), train_dialogues: train.len(), test_dialogues: test.len(), scores: score(&gold, &pred)? })
}

/// Runs every regime. Synthetic regimes train on generated dialogues
/// grouped by seed source and always test on original validation splits.
pub fn run_matrix(
    corpora: &BTreeMap<DatasetId, Corpus>,
    gnome: &Corpus,
    model: &dyn StrategyModel,
    cfg: &MatrixConfig,
) -> Result<ExperimentResult, EvalError> {
    let mut splits = BTreeMap::new();
    for source in DatasetId::SOURCES {
        let c = corpora.get(&source).ok_or(EvalError::MissingSource(source))?;
        splits.insert(source, split(c, cfg.split_ratio, cfg.split_seed)?);
    }
    let data = prepare(gnome, &splits, cfg)?;
    let specs = matrix_specs(cfg.split_seed, cfg.in_domain);
    let results: Vec<PairResult> =
        specs.par_iter().map(|s| evaluate(s, &data, model)).collect::<Result<_, _>>()?;

    let mut by_regime: BTreeMap<Regime, Vec<PairResult>> = BTreeMap::new();
    for r in results {
        by_regime.entry(r.spec.regime).or_default().push(r);
    }
    let regimes = by_regime.into_iter().map(|(regime, pairs)| RegimeResult::from_pairs(regime, pairs)).collect();
    Ok(ExperimentResult { config: *cfg, regimes })
}

/// Predictions keyed by (dialogue id, utterance index).
pub type PredictionMap = BTreeMap<(String, usize), LabelSet>;

/// `dialogue_id<TAB>utterance_index<TAB>labels`, one line per utterance.
pub fn write_predictions<'a, I, W>(dialogues: I, predictor: &dyn Predictor, mut out: W) -> Result<(), EvalError>
where
    I: IntoIterator<Item = &'a Dialogue>,
    W: Write,
{
    for d in dialogues {
        let pred = predictor.predict(d);
        if pred.len() != d.len() {
            return Err(EvalError::PredictionShape { dialogue: d.id.clone(), expected: d.len(), found: pred.len() });
        }
        for (i, p) in pred.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", d.id, i, p)?;
        }
    }
    Ok(())
}

pub fn parse_predictions<R: BufRead>(input: R) -> Result<PredictionMap, EvalError> {
    let mut out = PredictionMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::PredictionFile { line: line_no, message };
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(idx), labels) = (fields.next(), fields.next(), fields.next().unwrap_or("")) else {
            return Err(bad("expected dialogue_id, utterance_index and labels".into()));
        };
        let idx: usize = idx.trim().parse().map_err(|_| bad(format!("bad utterance index {idx:?}")))?;
        let set: LabelSet = labels.trim().parse().map_err(|e: UnknownLabel| bad(e.to_string()))?;
        if out.insert((id.to_string(), idx), set).is_some() {
            return Err(bad(format!("duplicate prediction for {id:?} utterance {idx}")));
        }
    }
    Ok(out)
}

/// Scores a prediction file against a gold corpus. Every gold utterance
/// needs a prediction; predictions for unknown utterances are an error.
pub fn score_predictions(gold: &Corpus, preds: &PredictionMap) -> Result<Scores, EvalError> {
    let mut g = Vec::new();
    let mut p = Vec::new();
    let mut used = 0;
    for d in &gold.dialogues {
        for (i, labels) in gold_of(d)?.into_iter().enumerate() {
            let key = (d.id.clone(), i);
            let pred = preds.get(&key).ok_or(EvalError::MissingPrediction { dialogue: d.id.clone(), index: i })?;
            g.push(labels);
            p.push(*pred);
            used += 1;
        }
    }
    if used != preds.len() {
        let known: HashSet<(&str, usize)> =
            gold.dialogues.iter().flat_map(|d| (0..d.len()).map(move |i| (d.id.as_str(), i))).collect();
        let stray = preds.keys().find(|(id, i)| !known.contains(&(id.as_str(), *i))).expect("count mismatch implies a stray key");
        return Err(EvalError::PredictionFile {
            line: 0,
            message: format!("prediction for unknown utterance {:?} #{}", stray.0, stray.1),
        });
    }
    score(&g, &p)
}

impl Scores {
    pub fn to_table(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        let _ = writeln!(out, "weighted_f1\t{:.4}", self.weighted_f1);
        for (l, a) in &self.joint_accuracy.per_class {
            let _ = writeln!(out, "acc_{}\t{:.4}", l.as_str(), a);
        }
        let _ = writeln!(out, "acc_macro\t{:.4}", self.joint_accuracy.macro_mean);
        let _ = writeln!(out, "instances\t{}", self.instances);
        out
    }
}
