//! Deterministic synthetic inputs for the benchmarks.

use std::collections::BTreeMap;

use gnome_core::baseline::{ClassifierModel, FeatureVector, Instance};
use gnome_core::{CanonicalLabel, Corpus, DatasetId, Dialogue, LabelSet, Speaker, Stage, Utterance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn label_set(rng: &mut ChaCha8Rng) -> LabelSet {
    let mut s = LabelSet::EMPTY;
    for _ in 0..rng.gen_range(1..=3) {
        s.insert(CanonicalLabel::ALL[rng.gen_range(0..CanonicalLabel::COUNT)]);
    }
    s
}

pub fn label_pairs(n: usize, seed: u64) -> (Vec<LabelSet>, Vec<LabelSet>) {
    let mut r = rng(seed);
    (0..n).map(|_| (label_set(&mut r), label_set(&mut r))).unzip()
}

/// `annotators x items` Likert matrix with roughly 10% missing cells.
pub fn rating_matrix(annotators: usize, items: usize, seed: u64) -> Vec<Vec<Option<f64>>> {
    let mut r = rng(seed);
    (0..annotators)
        .map(|_| (0..items).map(|_| (r.gen::<f64>() > 0.1).then(|| f64::from(r.gen_range(1u8..=5)))).collect())
        .collect()
}

pub fn mapped_corpus(dialogues: usize, seed: u64) -> Corpus {
    let mut r = rng(seed);
    let mut c = Corpus::new(DatasetId::CaSiNo, Stage::MappedLabels);
    for i in 0..dialogues {
        let utterances = (0..r.gen_range(4..=12))
            .map(|j| Utterance {
                speaker: if j % 2 == 0 { Speaker::A } else { Speaker::B },
                text: format!("turn {j}"),
                labels: label_set(&mut r).to_tokens(),
            })
            .collect();
        c.dialogues.push(Dialogue::new(format!("d{i:05}"), DatasetId::CaSiNo, utterances));
    }
    c
}

/// A random model and a sparse batch over `dimension` features.
pub fn model_and_batch(dimension: usize, batch: usize, seed: u64) -> (ClassifierModel, Vec<Instance>) {
    let mut r = rng(seed);
    let mut m = ClassifierModel::zeros(dimension, [1.0; CanonicalLabel::COUNT]);
    m.weights.iter_mut().for_each(|w| *w = r.gen_range(-0.1..0.1));
    let data = (0..batch)
        .map(|_| {
            let map: BTreeMap<usize, f64> = (0..20).map(|_| (r.gen_range(0..dimension), 1.0)).collect();
            (FeatureVector::from_map(map, dimension), label_set(&mut r))
        })
        .collect();
    (m, data)
}
