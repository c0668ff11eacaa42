use std::collections::BTreeMap;

use crfid::cnn::TrainConfig;
use crfid::ml::{GbtParams, ModelKind, ModelParams, TreeParams};
use crfid::pipeline::split::stratum;
use crfid::pipeline::*;
use crfid::rcs::RcsSignature;
use crfid::siggen::{
    all_labels, build_dataset, DeformationCase, GeneratorConfig, Position, TagLabel,
};
use proptest::prelude::*;
use rand::Rng;

fn dataset(readings: usize, noiseless: bool) -> Dataset {
    let base = if noiseless {
        GeneratorConfig::noiseless()
    } else {
        GeneratorConfig::default()
    };
    let cfg = GeneratorConfig {
        readings_per_group: readings,
        ..base
    };
    Dataset::from_labeled(build_dataset(&cfg).unwrap())
}

fn quick_config(kind: ModelKind) -> PipelineConfig {
    let grid = match kind {
        ModelKind::Dt => vec![ModelParams::Dt(TreeParams {
            max_depth: Some(8),
            min_samples_split: 2,
            max_features: None,
        })],
        ModelKind::Gbt => vec![ModelParams::Gbt(GbtParams {
            n_estimators: 60,
            learning_rate: 0.1,
            max_depth: Some(3),
            min_samples_split: 2,
        })],
        _ => unreachable!(),
    };
    PipelineConfig {
        rfe: false,
        grid: Some(grid),
        ..PipelineConfig::default()
    }
}

fn quiet() -> impl FnMut(&str) {
    |_: &str| {}
}

#[test]
fn full_geometry_split_counts() {
    let labels = all_labels(20);
    assert_eq!(labels.len(), 9600);
    let s = stratified_split(&labels, 7).unwrap();
    assert_eq!(s.counts(), (5760, 1920, 1920));
    let mut per_key: BTreeMap<u64, [usize; 3]> = BTreeMap::new();
    for (l, t) in labels.iter().zip(&s.tags) {
        per_key.entry(stratum(l)).or_default()[*t as usize] += 1;
    }
    assert_eq!(per_key.len(), 480);
    assert!(per_key.values().all(|c| *c == [12, 4, 4]));
    assert_eq!(s, stratified_split(&labels, 7).unwrap());
    assert_ne!(s, stratified_split(&labels, 8).unwrap());
}

#[test]
fn split_rejects_small_strata() {
    let mut labels = all_labels(5);
    labels.retain(|l| !(l.tag_id == 3 && l.reading == 4));
    assert!(matches!(
        stratified_split(&labels, 1),
        Err(PipelineError::Data(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_within_one_row_per_stratum(
        sizes in proptest::collection::vec(5usize..=20, 1..12),
        seed in any::<u64>(),
    ) {
        let mut labels = Vec::new();
        for (k, &n) in sizes.iter().enumerate() {
            for r in 0..n {
                labels.push(TagLabel {
                    tag_id: (k % 8) as u8,
                    capacitance_pf: [0.1, 0.3, 0.8][k / 8 % 3],
                    position: Position::ALL[k % 4],
                    case: DeformationCase::ALL[k % 5],
                    reading: r as u16,
                });
            }
        }
        let s = stratified_split(&labels, seed).unwrap();
        let mut per_key: BTreeMap<u64, [usize; 3]> = BTreeMap::new();
        for (l, t) in labels.iter().zip(&s.tags) {
            per_key.entry(stratum(l)).or_default()[*t as usize] += 1;
        }
        for c in per_key.values() {
            let n = (c[0] + c[1] + c[2]) as f64;
            for (got, frac) in c.iter().zip([0.6, 0.2, 0.2]) {
                prop_assert!((*got as f64 - frac * n).abs() <= 1.0, "{c:?}");
            }
        }
    }

    #[test]
    fn decode_id_stable_within_049(id in 0u8..=7, offset in -0.49f64..=0.49) {
        prop_assert_eq!(decode_id(id as f64 + offset).unwrap(), id);
    }
}

#[test]
fn metric_examples() {
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
    assert!(rmse(&[], &[]).is_err());
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    assert_eq!(
        format!("{:.2}", normalized_rmse(0.061, Task::Id.range())),
        "0.87"
    );
    assert_eq!(
        format!("{:.2}", normalized_rmse(0.0241, Task::Sensing.range())),
        "3.44"
    );
}

#[test]
fn decode_rules() {
    assert_eq!(decode_id(2.5).unwrap(), 3);
    assert_eq!(decode_id(8.6).unwrap(), 7);
    assert_eq!(decode_id(-0.7).unwrap(), 0);
    assert_eq!(decode_sensing(0.2).unwrap(), 0.1);
    assert_eq!(decode_sensing(0.55).unwrap(), 0.3);
    assert_eq!(decode_sensing(0.5501).unwrap(), 0.8);
    assert_eq!(decode_sensing(-3.0).unwrap(), 0.1);
    for bad in [f64::NAN, f64::INFINITY] {
        assert!(matches!(decode_id(bad), Err(PipelineError::Numerical(_))));
        assert!(decode_sensing(bad).is_err());
    }
}

fn grid_labels(reps: usize) -> Vec<TagLabel> {
    all_labels(reps)
        .into_iter()
        .filter(|l| l.tag_id == 0 && l.capacitance_pf == 0.1)
        .collect()
}

#[test]
fn per_case_report_groups() {
    let labels = grid_labels(3);
    assert_eq!(labels.len(), 60);
    let targets = vec![1.0; 60];
    let pred: Vec<f64> = (0..60)
        .map(|i| if i % 2 == 0 { 1.5 } else { 0.5 })
        .collect();
    let table = per_case_report(&pred, &targets, &labels).unwrap();
    assert_eq!(table.cells.len(), 20);
    assert!(table
        .cells
        .iter()
        .all(|c| c.rmse == 0.5 && c.std_abs_error == 0.0 && c.n == 3));
    let csv = table.matrix_csv(|c| c.rmse);
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next().unwrap(), "position,Ci,Cii,Ciii,Civ,Cv");

    let mut noisy = pred.clone();
    for (p, l) in noisy.iter_mut().zip(&labels) {
        if l.position == Position::P2 && l.case == DeformationCase::Civ {
            *p = 1.0 + 2.0 * (*p - 1.0);
        }
    }
    let table = per_case_report(&noisy, &targets, &labels).unwrap();
    let worst = table.worst();
    assert_eq!(
        (worst.position, worst.case),
        (Position::P2, DeformationCase::Civ)
    );

    let partial: Vec<TagLabel> = labels
        .iter()
        .filter(|l| l.case != DeformationCase::Cv)
        .copied()
        .collect();
    let n = partial.len();
    assert!(per_case_report(&pred[..n], &targets[..n], &partial).is_err());
}

#[test]
fn dataset_csv_round_trip() {
    let data = dataset(1, false);
    let text = data.to_csv_string();
    assert_eq!(text.lines().count(), 481);
    assert!(text.starts_with("tag_id,capacitance_pf,position,case,reading,f0,f1,"));
    let back = Dataset::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back, data);

    let short = text.replacen(",f699", "", 1);
    assert!(matches!(
        Dataset::read_csv(short.as_bytes()),
        Err(PipelineError::Format(_))
    ));
    let mut lines: Vec<&str> = text.lines().collect();
    let bad_row = lines[1].replacen("P1", "P9", 1);
    lines[1] = &bad_row;
    let err = Dataset::read_csv(lines.join("\n").as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn model_choice_parsing_and_compatibility() {
    assert_eq!(
        "GBT".parse::<ModelChoice>().unwrap(),
        ModelChoice::Classical(ModelKind::Gbt)
    );
    assert_eq!("cnn3".parse::<ModelChoice>().unwrap(), ModelChoice::Cnn(3));
    assert!("cnn5".parse::<ModelChoice>().is_err());
    assert!("knn".parse::<ModelChoice>().is_err());
    assert!(ModelChoice::Cnn(1).supports(Task::Id) && !ModelChoice::Cnn(1).supports(Task::Sensing));
    assert!(ModelChoice::Cnn(4).supports(Task::Sensing) && !ModelChoice::Cnn(4).supports(Task::Id));
    let data = dataset(5, true);
    let err = run_pipeline(
        Task::Sensing,
        ModelChoice::Cnn(1),
        &data,
        &PipelineConfig::default(),
        &mut quiet(),
    );
    assert!(matches!(err, Err(PipelineError::Incompatible { .. })));
}

#[test]
fn noiseless_gbt_decodes_every_test_id() {
    let data = dataset(5, true);
    let cfg = PipelineConfig {
        rfe: true,
        ..quick_config(ModelKind::Gbt)
    };
    let out = run_pipeline(
        Task::Id,
        ModelChoice::Classical(ModelKind::Gbt),
        &data,
        &cfg,
        &mut quiet(),
    )
    .unwrap();
    assert_eq!(
        (out.report.n_train, out.report.n_val, out.report.n_test),
        (1440, 480, 480)
    );
    assert_eq!(out.report.test_decode_accuracy, 1.0);
    assert!(out.report.train_rmse <= out.report.val_rmse * 10.0);
    assert!(out.rfe.is_some() && out.grid.is_some() && out.history.is_none());
    let csv = out.report.to_csv();
    for metric in ["train_rmse", "val_rmse", "test_rmse"] {
        assert!(csv.contains(&format!("gbt,id,{metric},,,")));
    }
    assert_eq!(
        EvalReport::parse_csv(&csv).unwrap(),
        vec![out.report.clone()]
    );
    let pred_csv = out.predictions.to_csv().unwrap();
    assert_eq!(pred_csv.lines().count(), 481);
}

fn random_signatures(n: usize, seed: u64) -> Vec<RcsSignature> {
    let grid = crfid::touchstone::CanonicalGrid::default();
    let mut rng = crfid::seed::rng(seed);
    (0..n)
        .map(|_| {
            let rcs = (0..grid.n_points)
                .map(|_| 1e-3 * rng.random_range(0.2..1.2))
                .collect();
            RcsSignature::on_grid(&grid, rcs)
        })
        .collect()
}

fn small_cnn_config() -> PipelineConfig {
    PipelineConfig {
        cnn_width_divisor: 64,
        cnn: TrainConfig {
            max_epochs: 10,
            patience: 5,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn persistence_round_trip_and_errors() {
    let data = dataset(5, false);
    let dir = tempfile::tempdir().unwrap();
    let inputs = random_signatures(100, 11);

    let dt = run_pipeline(
        Task::Sensing,
        ModelChoice::Classical(ModelKind::Dt),
        &data,
        &quick_config(ModelKind::Dt),
        &mut quiet(),
    )
    .unwrap();
    let dt_path = dir.path().join("dt.bin");
    save_model(&dt.model, &dt_path).unwrap();
    let loaded = load_model(&dt_path).unwrap();
    assert_eq!(loaded, dt.model);
    let before = dt.model.predict_signatures(&inputs).unwrap();
    let after = loaded.predict_signatures(&inputs).unwrap();
    assert!(before
        .iter()
        .zip(&after)
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    let cnn = run_pipeline(
        Task::Id,
        ModelChoice::Cnn(1),
        &data,
        &small_cnn_config(),
        &mut quiet(),
    )
    .unwrap();
    let epochs = cnn.history.as_ref().unwrap().len();
    assert!((6..=10).contains(&epochs), "{epochs}");
    let cnn_path = dir.path().join("cnn.bin");
    save_model(&cnn.model, &cnn_path).unwrap();
    let loaded = load_model_as(&cnn_path, ModelFamily::Cnn).unwrap();
    let before = cnn.model.predict_signatures(&inputs).unwrap();
    let after = loaded.predict_signatures(&inputs).unwrap();
    assert!(before
        .iter()
        .zip(&after)
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    match load_model_as(&cnn_path, ModelFamily::Classical) {
        Err(PipelineError::ModelFile(ModelFileError::KindMismatch { .. })) => {}
        other => panic!("expected kind mismatch, got {other:?}"),
    }

    let bytes = std::fs::read(&cnn_path).unwrap();
    for pos in [20, bytes.len() / 2, bytes.len() - 40] {
        let mut corrupt = bytes.clone();
        corrupt[pos] ^= 0x01;
        assert!(
            PersistedModel::from_bytes(&corrupt).is_err(),
            "flip at {pos} accepted"
        );
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x40;
    assert_eq!(
        PersistedModel::from_bytes(&flipped),
        Err(ModelFileError::DigestMismatch)
    );
    for cut in [4, 13, 100, bytes.len() - 1] {
        assert!(matches!(
            PersistedModel::from_bytes(&bytes[..cut]),
            Err(ModelFileError::Truncated(_))
        ));
    }
    let mut future = bytes.clone();
    future[8] = 2;
    assert_eq!(
        PersistedModel::from_bytes(&future),
        Err(ModelFileError::UnsupportedVersion {
            found: 2,
            supported: 1
        })
    );
    assert_eq!(
        PersistedModel::from_bytes(b"not a model file at all"),
        Err(ModelFileError::BadMagic)
    );

    let short_grid = crfid::touchstone::CanonicalGrid {
        n_points: 650,
        ..Default::default()
    };
    let odd = RcsSignature::on_grid(&short_grid, vec![1e-3; 650]);
    assert!(matches!(
        loaded.predict_signatures(&[odd]),
        Err(PipelineError::ModelFile(ModelFileError::Preprocessing(_)))
    ));
}

#[test]
fn cnn_validation_loss_trends_down() {
    let data = dataset(5, true);
    let out = run_pipeline(
        Task::Id,
        ModelChoice::Cnn(3),
        &data,
        &small_cnn_config(),
        &mut quiet(),
    )
    .unwrap();
    let h = out.history.unwrap();
    assert_eq!(h.len(), 10);
    let first: f64 = h[..3].iter().map(|r| r.val_loss).sum();
    let last: f64 = h[7..].iter().map(|r| r.val_loss).sum();
    assert!(last < first, "{h:?}");
}

#[test]
fn pipeline_is_deterministic() {
    let data = dataset(5, false);
    let cfg = quick_config(ModelKind::Dt);
    let run = || {
        let out = run_pipeline(
            Task::Id,
            ModelChoice::Classical(ModelKind::Dt),
            &data,
            &cfg,
            &mut quiet(),
        )
        .unwrap();
        (
            out.report.to_csv(),
            out.predictions.to_csv().unwrap(),
            out.model.to_bytes(),
        )
    };
    assert_eq!(run(), run());
}
