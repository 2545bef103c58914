use gnome_core::baseline::{self, ClassifierModel, FeatureVector, Instance, TrainParams};
use gnome_core::corpus::{filter_incomplete, parse_corpus, write_corpus};
use gnome_core::evalharness::weighted_f1;
use gnome_core::humaneval::{krippendorff_alpha, AlphaMetric};
use gnome_core::{Corpus, DatasetId, Dialogue, LabelSet, Speaker, Stage, Utterance};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn label_set() -> impl Strategy<Value = LabelSet> {
    (0u8..32).prop_map(LabelSet::from_bits)
}

fn nonempty_label_set() -> impl Strategy<Value = LabelSet> {
    (1u8..32).prop_map(LabelSet::from_bits)
}

fn utterance() -> impl Strategy<Value = Utterance> {
    (any::<bool>(), "[a-z][ -~]{0,39}", nonempty_label_set()).prop_map(|(a, text, labels)| Utterance {
        speaker: if a { Speaker::A } else { Speaker::B },
        text,
        labels: labels.to_tokens(),
    })
}

fn corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec((any::<bool>(), prop::collection::vec(utterance(), 1..6)), 0..8).prop_map(|ds| {
        let mut c = Corpus::new(DatasetId::CaSiNo, Stage::MappedLabels);
        for (i, (complete, utterances)) in ds.into_iter().enumerate() {
            let mut d = Dialogue::new(format!("c{i}"), DatasetId::CaSiNo, utterances);
            d.complete = complete;
            c.dialogues.push(d);
        }
        c
    })
}

fn instances(dim: usize) -> impl Strategy<Value = Vec<Instance>> {
    prop::collection::vec((prop::collection::vec(-2.0f64..2.0, dim), label_set()), 1..8).prop_map(move |rows| {
        rows.into_iter()
            .map(|(xs, y)| {
                let map: BTreeMap<usize, f64> = xs.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
                (FeatureVector::from_map(map, dim), y)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_survives_write_then_parse(c in corpus()) {
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let back = parse_corpus(buf.as_slice(), DatasetId::CaSiNo).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn completeness_filter_is_idempotent(c in corpus()) {
        let (once, _) = filter_incomplete(c);
        let (twice, removed) = filter_incomplete(once.clone());
        prop_assert_eq!(removed, 0);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn weighted_f1_ignores_instance_order(
        pairs in prop::collection::vec((nonempty_label_set(), label_set()), 1..40),
        rotate in 0usize..40,
    ) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rotate % pairs.len());
        shuffled.reverse();
        let (g2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = weighted_f1(&gold, &pred).unwrap();
        let b = weighted_f1(&g2, &p2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn alpha_ignores_item_and_annotator_order(
        matrix in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 1u8..=5), 6), 2..5),
    ) {
        let m: Vec<Vec<Option<f64>>> = matrix.iter().map(|r| r.iter().map(|v| v.map(f64::from)).collect()).collect();
        let mut permuted: Vec<Vec<Option<f64>>> = m.iter().rev().cloned().collect();
        for row in &mut permuted {
            row.rotate_left(2);
        }
        for metric in [AlphaMetric::Interval, AlphaMetric::Ordinal] {
            match (krippendorff_alpha(&m, metric), krippendorff_alpha(&permuted, metric)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }

    #[test]
    fn zero_model_costs_ln2_per_label(data in instances(3)) {
        let m = ClassifierModel::zeros(3, [1.0; 5]);
        let (loss, _) = baseline::loss_and_gradient(&m, &data).unwrap();
        // The loss is a batch mean, so every instance contributes ln 2 per label.
        let expected = std::f64::consts::LN_2 * 5.0;
        prop_assert!((loss - expected).abs() < 1e-9 * expected, "{} vs {}", loss, expected);
    }

    #[test]
    fn training_ignores_instance_order(data in instances(3)) {
        let hp = TrainParams { learning_rate: 0.3, iterations: 50, l2: 1e-2 };
        let a = baseline::train(&data, &hp).unwrap().model;
        let mut reversed = data.clone();
        reversed.reverse();
        let b = baseline::train(&reversed, &hp).unwrap().model;
        for (x, y) in a.weights.iter().zip(&b.weights).chain(a.bias.iter().zip(&b.bias)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn regularised_objective_has_one_minimum(mut data in instances(2), start in prop::collection::vec(-3.0f64..3.0, 15)) {
        // Every label needs a positive and a negative instance, otherwise the
        // unpenalised bias has no finite minimiser.
        data.push((FeatureVector::from_map(BTreeMap::new(), 2), LabelSet::from_bits(31)));
        data.push((FeatureVector::from_map(BTreeMap::new(), 2), LabelSet::EMPTY));
        let hp = TrainParams { learning_rate: 0.5, iterations: 4000, l2: 0.5 };
        let a = baseline::train(&data, &hp).unwrap().model;
        let mut init = ClassifierModel::zeros(2, a.class_weights);
        init.weights.copy_from_slice(&start[..10]);
        init.bias.copy_from_slice(&start[10..]);
        let b = baseline::train_from(init, &data, &hp).unwrap().model;
        for (x, y) in a.weights.iter().zip(&b.weights).chain(a.bias.iter().zip(&b.bias)) {
            prop_assert!((x - y).abs() < 1e-3, "{} vs {}", x, y);
        }
    }
}
