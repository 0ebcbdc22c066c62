use std::io::Write;

use hvfl_core::data::{
    batch_iter, load_csv, oracle_burst_score, synth_classification, synth_regression, synth_regression_with, ColumnRole, ColumnSpec, DataError, FeatureSchema,
    LabelAggregate, LabelSpec, RegressionSynth, BURST_SHIFT,
};
use hvfl_core::nn::Task;

fn schema(max_len: usize, test_fraction: f64) -> FeatureSchema {
    FeatureSchema {
        name: "toy".into(),
        version: 1,
        entity: "card".into(),
        order_key: "ts".into(),
        max_len,
        test_fraction,
        max_vocab: 2,
        label: LabelSpec { column: "fraud".into(), task: Task::Classification, aggregate: LabelAggregate::Max },
        columns: vec![ColumnSpec { name: "amount".into(), role: ColumnRole::Numeric }, ColumnSpec { name: "mcc".into(), role: ColumnRole::Categorical }],
    }
}

fn csv_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn toy_csv_becomes_one_sequence_in_key_order() {
    let f = csv_file("card,ts,amount,mcc,fraud\nA,2024-01-03,30,food,0\nA,2024-01-01,10,food,1\nA,2024-01-02,20,fuel,0\n");
    let ds = load_csv(f.path(), &schema(8, 0.0)).unwrap();
    assert_eq!(ds.records.len(), 1);
    let r = &ds.records[0];
    assert_eq!(r.label, 1.0);
    let keys: Vec<f64> = r.steps.iter().map(|s| s.order_key).collect();
    assert!(keys.windows(2).all(|w| w[1] - w[0] == 1.0), "{keys:?}");
    // amounts 10, 20, 30 are z-normalised in key order
    let amount: Vec<f64> = r.steps.iter().map(|s| s.features[0]).collect();
    let sd = (200.0f64 / 3.0).sqrt();
    for (a, raw) in amount.iter().zip([10.0, 20.0, 30.0]) {
        assert!((a - (raw - 20.0) / sd).abs() < 1e-12);
    }
    // feature layout: amount, then UNK + 2 vocab slots; "food" is most frequent
    assert_eq!(ds.feature_dim, 4);
    assert_eq!(r.steps[0].features[1..], [0.0, 1.0, 0.0]);
    assert_eq!(r.steps[1].features[1..], [0.0, 0.0, 1.0]);
}

#[test]
fn values_outside_the_vocabulary_map_to_unk() {
    let f = csv_file("card,ts,amount,mcc,fraud\nA,1,1,x,0\nA,2,2,x,0\nA,3,3,y,0\nA,4,4,z,0\n");
    let mut s = schema(8, 0.0);
    s.max_vocab = 1;
    let ds = load_csv(f.path(), &s).unwrap();
    let oh: Vec<&[f64]> = ds.records[0].steps.iter().map(|s| &s.features[1..]).collect();
    assert_eq!(oh, [[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]);
}

#[test]
fn numeric_columns_are_standardised_on_train() {
    let mut text = String::from("card,ts,amount,mcc,fraud\n");
    for e in 0..40 {
        for t in 0..5 {
            text += &format!("e{e},{t},{},m{},0\n", (e * 7 + t * 13) % 23, t % 3);
        }
    }
    let ds = load_csv(csv_file(&text).path(), &schema(8, 0.0)).unwrap();
    let x: Vec<f64> = ds.records.iter().flat_map(|r| r.steps.iter().map(|s| s.features[0])).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-9, "mean {mean}");
    assert!((std - 1.0).abs() < 1e-6, "std {std}");
}

#[test]
fn long_entities_keep_their_latest_steps() {
    let f = csv_file("card,ts,amount,mcc,fraud\nA,1,1,x,1\nA,2,2,x,0\nA,3,3,x,0\nA,4,4,x,0\n");
    let ds = load_csv(f.path(), &schema(2, 0.0)).unwrap();
    let keys: Vec<f64> = ds.records[0].steps.iter().map(|s| s.order_key).collect();
    assert_eq!(keys, [3.0, 4.0]);
    assert_eq!(ds.records[0].label, 1.0);
}

#[test]
fn malformed_input_is_rejected() {
    let dup = csv_file("card,ts,amount,mcc,fraud\nA,1,1,x,0\nA,1,2,x,0\n");
    assert!(matches!(load_csv(dup.path(), &schema(8, 0.0)), Err(DataError::Parse { line: 3, .. })));
    let bad = csv_file("card,ts,amount,mcc,fraud\nA,1,abc,x,0\n");
    assert!(matches!(load_csv(bad.path(), &schema(8, 0.0)), Err(DataError::Parse { line: 2, .. })));
    let missing = csv_file("card,ts,mcc,fraud\nA,1,x,0\n");
    assert!(matches!(load_csv(missing.path(), &schema(8, 0.0)), Err(DataError::MissingColumn(c)) if c == "amount"));
    let mut s = schema(8, 0.0);
    s.label.aggregate = LabelAggregate::LastStep;
    assert!(s.validate().is_err());
}

#[test]
fn last_step_label_history_is_an_input_without_the_label_row() {
    let s = FeatureSchema {
        name: "sales".into(),
        version: 1,
        entity: "store".into(),
        order_key: "date".into(),
        max_len: 8,
        test_fraction: 0.0,
        max_vocab: 2,
        label: LabelSpec { column: "sales".into(), task: Task::Regression, aggregate: LabelAggregate::LastStep },
        columns: vec![ColumnSpec { name: "sales".into(), role: ColumnRole::Numeric }],
    };
    let f = csv_file("store,date,sales\n1,2015-01-01,10\n1,2015-01-02,30\n1,2015-01-03,99\n");
    let ds = load_csv(f.path(), &s).unwrap();
    let r = &ds.records[0];
    assert_eq!(r.label, 99.0);
    assert_eq!(r.steps.len(), 2);
    // Train mean 20, std 10: the held-back 99 never enters the statistics.
    let xs: Vec<f64> = r.steps.iter().map(|t| t.features[0]).collect();
    assert_eq!(xs, vec![-1.0, 1.0]);
    let mut max = s.clone();
    max.label = LabelSpec { column: "sales".into(), task: Task::Classification, aggregate: LabelAggregate::Max };
    assert!(max.validate().is_err());
    let mut cat = s.clone();
    cat.columns[0].role = ColumnRole::Categorical;
    assert!(cat.validate().is_err());
}

#[test]
fn schema_round_trips_through_toml() {
    let s = schema(16, 0.25);
    let text = toml::to_string(&s).unwrap();
    assert_eq!(FeatureSchema::from_toml(&text).unwrap(), s);
}

#[test]
fn bursts_are_detectable_by_an_oracle() {
    let ds = synth_classification(1000, 3, 11);
    let thr = BURST_SHIFT / 2.0;
    let correct = ds.records.iter().filter(|r| (oracle_burst_score(r) > thr) == (r.label > 0.5)).count();
    assert!(correct as f64 / 1000.0 >= 0.95, "oracle accuracy {}", correct as f64 / 1000.0);
}

#[test]
fn class_balance_is_thirty_percent() {
    let ds = synth_classification(1000, 3, 12);
    let all: Vec<usize> = (0..1000).collect();
    assert!((ds.positive_rate(&all) - 0.3).abs() <= 0.02);
    assert_eq!(ds.train.len() + ds.test.len(), 1000);
    ds.validate().unwrap();
}

#[test]
fn noiseless_series_are_predicted_exactly() {
    let ds = synth_regression_with(200, 5, RegressionSynth { noise: 0.0, ..Default::default() });
    // Weekly differencing removes the season and leaves 7 * slope.
    let se: f64 = ds
        .records
        .iter()
        .map(|r| {
            let x: Vec<f64> = r.steps.iter().map(|s| s.features[0]).collect();
            let n = x.len();
            let pred = x[n - 7] + x[n - 1] - x[n - 8];
            (pred - r.label).powi(2)
        })
        .sum();
    assert!((se / 200.0).sqrt() < 1e-9);
}

#[test]
fn regression_floor_matches_noise() {
    let ds = synth_regression(2000, 6);
    let floor = ds.metadata["rmse_floor"];
    assert!((floor - 0.1).abs() <= 0.05 * 0.1, "floor {floor}");
}

#[test]
fn generators_are_deterministic() {
    assert_eq!(synth_classification(50, 2, 9), synth_classification(50, 2, 9));
    assert_ne!(synth_classification(50, 2, 9), synth_classification(50, 2, 10));
    assert_eq!(synth_regression(50, 9), synth_regression(50, 9));
}

#[test]
fn epochs_visit_every_record_once() {
    let ds = synth_classification(37, 3, 13);
    let batches = batch_iter(&ds, &ds.train, 8, 3, 1).unwrap();
    let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
    seen.sort();
    let mut want = ds.train.clone();
    want.sort();
    assert_eq!(seen, want);
    for b in &batches {
        assert_eq!(b.padded_len, b.indices.iter().map(|&i| ds.records[i].len()).max().unwrap());
        for (p, &i) in b.parts.iter().zip(&b.indices) {
            assert_eq!(p.reassemble(), ds.records[i].steps);
        }
    }
    let singles = batch_iter(&ds, &ds.test, 1, 3, 1).unwrap();
    assert_eq!(singles.len(), ds.test.len());
    assert!(singles.iter().all(|b| b.len() == 1 && b.padded_len == ds.records[b.indices[0]].len()));
    assert!(batch_iter(&ds, &ds.test, 0, 3, 1).is_err());
    assert_eq!(batch_iter(&ds, &ds.train, 8, 3, 1).unwrap(), batches);
}
