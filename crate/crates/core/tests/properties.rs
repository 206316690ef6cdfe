use std::collections::BTreeMap;

use proptest::prelude::*;

use treeman::autodiff::{Tape, Tensor};
use treeman::forest::{train_ensemble, TreeConfig, TreeEnsemble};
use treeman::metrics::auc;
use treeman::tabular::{
    build_feature_table, EventCategory, SingletonValue, StructuredRecordSet, TimeSeries,
};

fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(xs.to_vec()));
    let y = tape.softmax(x).unwrap();
    tape.value(y).data.clone()
}

fn record_set(id: usize, seed: &[u8]) -> StructuredRecordSet {
    let mut set = StructuredRecordSet::new(format!("adm{id:03}"));
    for (k, &b) in seed.iter().enumerate() {
        match b % 4 {
            0 => set.time_series.push(TimeSeries {
                class_id: format!("lab{}", k % 3),
                points: (0..=b % 5).map(|t| (f64::from(t), f64::from(b) / 7.0 - f64::from(t))).collect(),
            }),
            1 => set.multivalued.push((EventCategory::Drug, format!("rx{}", b % 5))),
            2 => set.singletons.push((format!("score{}", k % 2), SingletonValue::Numeric(f64::from(b)))),
            _ => set.multivalued.push((EventCategory::Organism, format!("org{}", b % 3))),
        }
    }
    set.singletons.dedup_by(|a, b| a.0 == b.0);
    set
}

proptest! {
    #[test]
    fn softmax_shift_invariant(xs in prop::collection::vec(-20.0..20.0f64, 1..12), c in -50.0..50.0f64) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for (a, b) in softmax(&xs).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_monotone_invariant(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..60),
        scale in 0.1..10.0f64,
        offset in -5.0..5.0f64,
    ) {
        let labels: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        prop_assume!(labels.iter().any(|&y| y == 1.0) && labels.iter().any(|&y| y == 0.0));
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * scale + offset).exp()).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn featurization_ignores_record_order(
        seeds in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..8), 1..12),
        rotate in 0usize..12,
    ) {
        let sets: Vec<StructuredRecordSet> = seeds.iter().enumerate().map(|(i, s)| record_set(i, s)).collect();
        let mut permuted = sets.clone();
        permuted.reverse();
        let r = rotate % permuted.len();
        permuted.rotate_left(r);
        let (table_a, schema_a) = build_feature_table(&sets).unwrap();
        let (table_b, schema_b) = build_feature_table(&permuted).unwrap();
        prop_assert_eq!(schema_a.hash(), schema_b.hash());
        let by_id = |t: &treeman::tabular::FeatureTable| -> BTreeMap<String, Vec<Option<f64>>> {
            t.rows.iter().map(|r| (r.admission_id.clone(), r.cells.clone())).collect()
        };
        prop_assert_eq!(by_id(&table_a), by_id(&table_b));
    }

    #[test]
    fn routing_survives_reload(
        seeds in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..8), 4..16),
        label_bits in prop::collection::vec(any::<u8>(), 16),
    ) {
        let sets: Vec<StructuredRecordSet> = seeds.iter().enumerate().map(|(i, s)| record_set(i, s)).collect();
        let (table, _) = build_feature_table(&sets).unwrap();
        let labels: Vec<Vec<f64>> = (0..table.rows.len())
            .map(|i| (0..2).map(|l| f64::from((label_bits[i] >> l) & 1)).collect())
            .collect();
        let config = TreeConfig { min_child_weight: 0.25, ..TreeConfig::default() };
        let ensemble = train_ensemble(&table, &labels, &config).unwrap();
        let reloaded = TreeEnsemble::from_json(&ensemble.to_json()).unwrap();
        prop_assert_eq!(&reloaded, &ensemble);
        for row in &table.rows {
            prop_assert_eq!(
                ensemble.assign_leaves(&row.cells).unwrap(),
                reloaded.assign_leaves(&row.cells).unwrap()
            );
        }
    }
}
