//! Bag-of-words multi-label strategy classifier.
//!
//! One logistic scorer per canonical label over sparse unigram counts of the
//! utterance and its preceding context, trained by full-batch gradient
//! descent on a class-weighted cross-entropy.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialogue, Utterance};
use crate::evalharness::{EvalError, Predictor, StrategyModel};
use crate::labelmap::{CanonicalLabel, LabelSet};

const LABELS: usize = CanonicalLabel::COUNT;
pub const MODEL_FORMAT: &str = "gnome-baseline";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub min_count: u32,
}

impl Vocabulary {
    /// Tokens seen at least `min_count` times, sorted.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, min_count: u32) -> Vocabulary {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let tokens = counts.into_iter().filter(|(_, n)| *n >= min_count).map(|(t, _)| t).collect();
        Vocabulary::from_tokens(tokens, min_count)
    }

    pub fn from_tokens(tokens: Vec<String>, min_count: u32) -> Vocabulary {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index, min_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Feature dimension: utterance half plus context half.
    pub fn feature_dimension(&self) -> usize {
        2 * self.len()
    }
}

/// Sparse feature vector; entries sorted by index, indices unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub entries: Vec<(usize, f64)>,
    pub dimension: usize,
}

impl FeatureVector {
    pub fn from_map(map: BTreeMap<usize, f64>, dimension: usize) -> FeatureVector {
        debug_assert!(map.keys().all(|&i| i < dimension));
        FeatureVector { entries: map.into_iter().collect(), dimension }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |(i, _)| *i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    fn dot(&self, row: &[f64]) -> f64 {
        self.entries.iter().map(|(i, v)| row[*i] * v).sum()
    }
}

/// How much preceding dialogue the classifier sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextWindow {
    None,
    #[default]
    Previous,
    FullHistory,
}

fn add_counts(map: &mut BTreeMap<usize, f64>, text: &str, vocab: &Vocabulary, offset: usize) {
    for tok in tokenize(text) {
        if let Some(i) = vocab.get(&tok) {
            *map.entry(i + offset).or_insert(0.0) += 1.0;
        }
    }
}

/// Unigram counts of `u` in the first half, of `prev` in the second half.
pub fn featurize(u: &Utterance, prev: Option<&Utterance>, vocab: &Vocabulary) -> FeatureVector {
    let mut map = BTreeMap::new();
    add_counts(&mut map, &u.text, vocab, 0);
    if let Some(p) = prev {
        add_counts(&mut map, &p.text, vocab, vocab.len());
    }
    FeatureVector::from_map(map, vocab.feature_dimension())
}

pub fn featurize_dialogue(d: &Dialogue, vocab: &Vocabulary, context: ContextWindow) -> Vec<FeatureVector> {
    let n = vocab.len();
    d.utterances
        .iter()
        .enumerate()
        .map(|(i, u)| match context {
            ContextWindow::None => featurize(u, None, vocab),
            ContextWindow::Previous => featurize(u, i.checked_sub(1).map(|j| &d.utterances[j]), vocab),
            ContextWindow::FullHistory => {
                let mut map = BTreeMap::new();
                add_counts(&mut map, &u.text, vocab, 0);
                for p in &d.utterances[..i] {
                    add_counts(&mut map, &p.text, vocab, n);
                }
                FeatureVector::from_map(map, vocab.feature_dimension())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub dimension: usize,
    /// Row-major, one row of `dimension` weights per canonical label.
    pub weights: Vec<f64>,
    pub bias: [f64; LABELS],
    pub class_weights: [f64; LABELS],
    pub threshold: f64,
}

pub type Instance = (FeatureVector, LabelSet);

/// `N / (5 · count(ℓ))` over the training instances; 1 for absent labels.
pub fn class_weights(data: &[Instance]) -> [f64; LABELS] {
    let n = data.len() as f64;
    let mut counts = [0u64; LABELS];
    for (_, y) in data {
        for l in y.iter() {
            counts[l.index()] += 1;
        }
    }
    counts.map(|c| if c == 0 { 1.0 } else { n / (LABELS as f64 * c as f64) })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: [f64; LABELS],
}

impl Gradient {
    /// Weights then biases, as one flat vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }
}

impl ClassifierModel {
    pub fn zeros(dimension: usize, class_weights: [f64; LABELS]) -> ClassifierModel {
        ClassifierModel { dimension, weights: vec![0.0; LABELS * dimension], bias: [0.0; LABELS], class_weights, threshold: 0.5 }
    }

    fn row(&self, label: usize) -> &[f64] {
        &self.weights[label * self.dimension..(label + 1) * self.dimension]
    }

    pub fn logits(&self, x: &FeatureVector) -> [f64; LABELS] {
        std::array::from_fn(|l| x.dot(self.row(l)) + self.bias[l])
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Labels whose probability reaches the threshold; the single most
    /// probable label when none does.
    pub fn predict(&self, x: &FeatureVector) -> LabelSet {
        let z = self.logits(x);
        let mut set = LabelSet::EMPTY;
        for (l, zl) in z.iter().enumerate() {
            if sigmoid(*zl) >= self.threshold {
                set.insert(CanonicalLabel::ALL[l]);
            }
        }
        if set.is_empty() {
            let best = (0..LABELS).fold(0, |b, l| if z[l] > z[b] { l } else { b });
            set.insert(CanonicalLabel::ALL[best]);
        }
        set
    }

    fn check_dimension(&self, x: &FeatureVector) -> Result<(), BaselineError> {
        if x.dimension != self.dimension {
            return Err(BaselineError::DimensionMismatch { expected: self.dimension, found: x.dimension });
        }
        Ok(())
    }
}

/// Class-weighted binary cross-entropy averaged over the batch, summed over
/// labels, and its exact gradient. The class weight scales only the
/// positive (y = 1) term.
pub fn loss_and_gradient(m: &ClassifierModel, batch: &[Instance]) -> Result<(f64, Gradient), BaselineError> {
    if batch.is_empty() {
        return Err(BaselineError::EmptyBatch);
    }
    let mut grad = Gradient { weights: vec![0.0; m.weights.len()], bias: [0.0; LABELS] };
    let mut loss = 0.0;
    for (x, y) in batch {
        m.check_dimension(x)?;
        let z = m.logits(x);
        for l in 0..LABELS {
            let positive = y.contains(CanonicalLabel::ALL[l]);
            let (term, dz) = if positive {
                let w = m.class_weights[l];
                (w * softplus(-z[l]), w * (sigmoid(z[l]) - 1.0))
            } else {
                (softplus(z[l]), sigmoid(z[l]))
            };
            loss += term;
            let row = &mut grad.weights[l * m.dimension..(l + 1) * m.dimension];
            for (i, v) in &x.entries {
                row[*i] += dz * v;
            }
            grad.bias[l] += dz;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.weights.iter_mut().for_each(|g| *g *= scale);
    grad.bias.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Coefficient of the `l2/2 · ‖W‖²` penalty on weights (not biases).
    pub l2: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { learning_rate: 0.5, iterations: 300, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    /// Regularized objective before each update.
    pub loss_trace: Vec<f64>,
}

fn objective(m: &ClassifierModel, data: &[Instance], l2: f64) -> Result<(f64, Gradient), BaselineError> {
    let (mut loss, mut grad) = loss_and_gradient(m, data)?;
    if l2 != 0.0 {
        loss += 0.5 * l2 * m.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad.weights.iter_mut().zip(&m.weights) {
            *g += l2 * w;
        }
    }
    Ok((loss, grad))
}

/// Full-batch gradient descent from the zero model.
pub fn train(data: &[Instance], hp: &TrainParams) -> Result<TrainOutcome, BaselineError> {
    let first = data.first().ok_or(BaselineError::EmptyBatch)?;
    let init = ClassifierModel::zeros(first.0.dimension, class_weights(data));
    train_from(init, data, hp)
}

/// Full-batch gradient descent from `init`.
pub fn train_from(init: ClassifierModel, data: &[Instance], hp: &TrainParams) -> Result<TrainOutcome, BaselineError> {
    if data.is_empty() {
        return Err(BaselineError::EmptyBatch);
    }
    if !(hp.learning_rate >= 0.0) || !hp.learning_rate.is_finite() {
        return Err(BaselineError::BadLearningRate(hp.learning_rate));
    }
    let mut model = init;
    let mut loss_trace = Vec::with_capacity(hp.iterations);
    for iteration in 0..hp.iterations {
        let (loss, grad) = objective(&model, data, hp.l2)?;
        if !loss.is_finite() {
            return Err(BaselineError::Diverged { iteration });
        }
        loss_trace.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
            *w -= hp.learning_rate * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
            *b -= hp.learning_rate * g;
        }
        if !model.is_finite() {
            return Err(BaselineError::Diverged { iteration });
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Convenience wrapper over [`ClassifierModel::predict`].
pub fn predict(m: &ClassifierModel, x: &FeatureVector) -> LabelSet {
    m.predict(x)
}

/// Vocabulary, context setting and classifier: everything needed to label
/// raw dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub format: String,
    pub version: u32,
    pub context: ContextWindow,
    pub vocabulary: Vocabulary,
    pub classifier: ClassifierModel,
}

impl BaselineModel {
    pub fn predict_dialogue(&self, d: &Dialogue) -> Vec<LabelSet> {
        featurize_dialogue(d, &self.vocabulary, self.context)
            .iter()
            .map(|x| self.classifier.predict(x))
            .collect()
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        serde_json::to_writer_pretty(out, self).map_err(|e| BaselineError::Format(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<BaselineModel, BaselineError> {
        let mut m: BaselineModel = serde_json::from_reader(input).map_err(|e| BaselineError::Format(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(BaselineError::Format(format!("unexpected format {:?}", m.format)));
        }
        if m.version != MODEL_VERSION {
            return Err(BaselineError::Format(format!("unsupported version {}", m.version)));
        }
        let c = &m.classifier;
        if c.dimension != m.vocabulary.feature_dimension() || c.weights.len() != LABELS * c.dimension {
            return Err(BaselineError::Format("parameter shape does not match vocabulary".into()));
        }
        m.vocabulary = Vocabulary::from_tokens(m.vocabulary.tokens.clone(), m.vocabulary.min_count);
        Ok(m)
    }
}

/// Training recipe for the baseline, usable by the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub min_count: u32,
    pub context: ContextWindow,
    pub train: TrainParams,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { min_count: 2, context: ContextWindow::Previous, train: TrainParams::default() }
    }
}

impl BaselineConfig {
    pub fn fit_dialogues(&self, dialogues: &[&Dialogue]) -> Result<(BaselineModel, Vec<f64>), BaselineError> {
        let vocabulary = Vocabulary::build(
            dialogues.iter().flat_map(|d| d.utterances.iter().map(|u| u.text.as_str())),
            self.min_count,
        );
        let mut data = Vec::new();
        for d in dialogues {
            let sets = d.label_sets().map_err(|e| BaselineError::Format(format!("{}: {e}", d.id)))?;
            data.extend(featurize_dialogue(d, &vocabulary, self.context).into_iter().zip(sets));
        }
        let outcome = train(&data, &self.train)?;
        let model = BaselineModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            context: self.context,
            vocabulary,
            classifier: outcome.model,
        };
        Ok((model, outcome.loss_trace))
    }
}

impl Predictor for BaselineModel {
    fn predict(&self, d: &Dialogue) -> Vec<LabelSet> {
        self.predict_dialogue(d)
    }
}

impl StrategyModel for BaselineConfig {
    fn fit(&self, train: &[&Dialogue]) -> Result<Box<dyn Predictor>, EvalError> {
        let (model, _) = self.fit_dialogues(train).map_err(|e| EvalError::Model(e.to_string()))?;
        Ok(Box::new(model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(words.iter().map(|s| s.to_string()).collect(), 1)
    }

    fn utt(text: &str) -> Utterance {
        Utterance { speaker: Speaker::A, text: text.into(), labels: vec![] }
    }

    #[test]
    fn hello_hello() {
        let v = vocab(&["hello", "world"]);
        let x = featurize(&utt("Hello hello"), None, &v);
        assert_eq!(x.entries, vec![(0, 2.0)]);
        assert_eq!(x.dimension, 4);
    }

    #[test]
    fn out_of_vocabulary_is_empty() {
        let x = featurize(&utt("zzz qqq"), None, &vocab(&["hello"]));
        assert!(x.is_empty());
    }

    #[test]
    fn context_half() {
        let v = vocab(&["hello", "world"]);
        let x = featurize(&utt("world"), Some(&utt("hello, WORLD!")), &v);
        assert_eq!(x.entries, vec![(1, 1.0), (2, 1.0), (3, 1.0)]);
        let no_ctx = featurize(&utt("world"), None, &v);
        assert!(no_ctx.entries.iter().all(|(i, _)| *i < v.len()));
    }

    #[test]
    fn vocabulary_min_count() {
        let v = Vocabulary::build(["a b b", "b c"], 2);
        assert_eq!(v.tokens(), ["b"]);
        assert_eq!(v.get("b"), Some(0));
        assert_eq!(v.get("a"), None);
    }

    #[test]
    fn zero_model_loss_is_ln2_per_label() {
        let m = ClassifierModel::zeros(3, [1.0; LABELS]);
        let batch = vec![
            (FeatureVector { entries: vec![(0, 1.0)], dimension: 3 }, LabelSet::single(CanonicalLabel::Rapport)),
            (FeatureVector { entries: vec![(2, 4.0)], dimension: 3 }, LabelSet::EMPTY),
        ];
        let (loss, _) = loss_and_gradient(&m, &batch).unwrap();
        assert!((loss - LABELS as f64 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_positive_has_vanishing_loss() {
        let mut m = ClassifierModel::zeros(1, [1.0; LABELS]);
        m.bias = [-50.0; LABELS];
        m.bias[0] = 50.0;
        let batch = vec![(FeatureVector { entries: vec![], dimension: 1 }, LabelSet::single(CanonicalLabel::Rapport))];
        let (loss, _) = loss_and_gradient(&m, &batch).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = ClassifierModel::zeros(1, [1.0; LABELS]);
        assert!(matches!(loss_and_gradient(&m, &[]), Err(BaselineError::EmptyBatch)));
    }

    #[test]
    fn class_weights_inverse_frequency() {
        let x = FeatureVector { entries: vec![], dimension: 1 };
        let r = LabelSet::single(CanonicalLabel::Rapport);
        let rc: LabelSet = [CanonicalLabel::Rapport, CanonicalLabel::Coordination].into_iter().collect();
        let data = vec![(x.clone(), r), (x.clone(), r), (x.clone(), rc), (x, r)];
        let w = class_weights(&data);
        assert_eq!(w[CanonicalLabel::Rapport.index()], 4.0 / 20.0);
        assert_eq!(w[CanonicalLabel::Coordination.index()], 4.0 / 5.0);
        assert_eq!(w[CanonicalLabel::Assessment.index()], 1.0);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let data = vec![(FeatureVector { entries: vec![(0, 1.0)], dimension: 2 }, LabelSet::single(CanonicalLabel::Rapport))];
        let out = train(&data, &TrainParams { iterations: 0, ..Default::default() }).unwrap();
        assert_eq!(out.model, ClassifierModel::zeros(2, class_weights(&data)));
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn zero_rate_keeps_loss_constant() {
        let data = vec![(FeatureVector { entries: vec![(0, 1.0)], dimension: 2 }, LabelSet::single(CanonicalLabel::Rapport))];
        let out = train(&data, &TrainParams { learning_rate: 0.0, iterations: 5, l2: 0.1 }).unwrap();
        assert!(out.loss_trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![(FeatureVector { entries: vec![(0, 1e300)], dimension: 1 }, LabelSet::single(CanonicalLabel::Rapport))];
        let r = train(&data, &TrainParams { learning_rate: 1e300, iterations: 10, l2: 0.0 });
        assert!(matches!(r, Err(BaselineError::Diverged { .. })));
    }

    #[test]
    fn zero_model_predicts_all_labels() {
        let m = ClassifierModel::zeros(2, [1.0; LABELS]);
        let x = FeatureVector { entries: vec![], dimension: 2 };
        assert_eq!(predict(&m, &x), LabelSet::FULL);
    }

    #[test]
    fn saturated_logit_predicts_one_label() {
        let mut m = ClassifierModel::zeros(1, [1.0; LABELS]);
        m.bias = [-10.0; LABELS];
        m.bias[CanonicalLabel::Coordination.index()] = 10.0;
        let x = FeatureVector { entries: vec![], dimension: 1 };
        assert_eq!(m.predict(&x), LabelSet::single(CanonicalLabel::Coordination));
    }

    #[test]
    fn negative_logits_fall_back_to_argmax() {
        let mut m = ClassifierModel::zeros(1, [1.0; LABELS]);
        m.bias = [-3.0, -1.0, -2.0, -5.0, -4.0];
        let x = FeatureVector { entries: vec![], dimension: 1 };
        assert_eq!(m.predict(&x), LabelSet::single(CanonicalLabel::Assessment));
    }

    #[test]
    fn model_file_round_trip() {
        let d = Dialogue::new(
            "d",
            crate::DatasetId::CaSiNo,
            vec![
                Utterance { speaker: Speaker::A, text: "hello there friend".into(), labels: vec!["Rapport".into()] },
                Utterance { speaker: Speaker::B, text: "give me the firewood".into(), labels: vec!["Coordination".into()] },
            ],
        );
        let cfg = BaselineConfig { min_count: 1, train: TrainParams { iterations: 50, ..Default::default() }, ..Default::default() };
        let (model, trace) = cfg.fit_dialogues(&[&d]).unwrap();
        assert_eq!(trace.len(), 50);
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = BaselineModel::load(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict_dialogue(&d), model.predict_dialogue(&d));
    }
}
