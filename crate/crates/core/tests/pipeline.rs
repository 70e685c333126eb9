mod common;

use common::scramble;
use npad_core::data::{generate_dataset, AttributeTable, DatasetSpec, LabData, RenderParams, SplitSizes};
use npad_core::losses::composite_class_id;
use npad_core::pipeline::{run_variant, train_two_stage, ExperimentConfig, Grouping, TrainSet, Variant, VariantRun};
use npad_core::optim::OptimizerConfig;
use npad_core::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn tiny_data(seed: u64, stripes_corr: f64) -> LabData {
    let spec = DatasetSpec {
        image_size: [16, 16],
        samples: SplitSizes {
            train: 400,
            val: 200,
            test: 200,
        },
        nonprotected_protected_correlations: vec![stripes_corr, 0.0, 0.0],
        seed,
        ..Default::default()
    };
    LabData::from_manifest(&generate_dataset(&spec).unwrap()).unwrap()
}

fn tiny_config(variant: Variant, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        variant,
        seed,
        ..Default::default()
    };
    cfg.model.input = [3, 16, 16];
    cfg.baseline.epochs = 2;
    cfg.stage1.epochs = 2;
    cfg.stage2.epochs = 2;
    cfg
}

fn run(variant: Variant, data: &LabData, seed: u64) -> VariantRun {
    let bmt = run_variant(&tiny_config(Variant::Bmt, seed), data, None).unwrap();
    if variant == Variant::Bmt {
        return bmt;
    }
    run_variant(&tiny_config(variant, seed), data, Some(&bmt.trained)).unwrap()
}

#[test]
fn every_variant_is_bit_identical_on_rerun() {
    let data = tiny_data(1, 0.95);
    for v in Variant::ALL {
        let (a, b) = (run(v, &data, 4), run(v, &data, 4));
        assert_eq!(a.trained.parameter_hash(), b.trained.parameter_hash(), "{v}");
        assert_eq!(a.trained.log, b.trained.log, "{v}");
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap(), "{v}");
        assert_eq!(a.selection, b.selection, "{v}");
    }
}

#[test]
fn different_seeds_give_different_models() {
    let data = tiny_data(1, 0.95);
    assert_ne!(
        run(Variant::Bmt, &data, 1).trained.parameter_hash(),
        run(Variant::Bmt, &data, 2).trained.parameter_hash()
    );
}

#[test]
fn training_view_refuses_protected_columns() {
    let data = tiny_data(2, 0.95);
    let view = data.train.table.training_view();
    assert!(matches!(view.column("color"), Err(Error::Firewall(_))));
    assert!(!view.attribute_names().iter().any(|n| n == "color"));
    assert!(view.column("stripes").is_ok());
}

#[test]
fn scrambled_protected_labels_leave_non_protected_variants_unchanged() {
    let data = tiny_data(3, 0.95);
    let mut scrambled = data.clone();
    scrambled.train.table = scramble(&data.train.table, 9);
    scrambled.val.table = scramble(&data.val.table, 10);
    assert_ne!(scrambled.train.table, data.train.table);

    for v in Variant::ALL.into_iter().filter(|v| !v.uses_protected_labels()) {
        let (a, b) = (run(v, &data, 5), run(v, &scrambled, 5));
        assert_eq!(a.trained.parameter_hash(), b.trained.parameter_hash(), "{v} read a protected column");
        assert_eq!(a.selection, b.selection, "{v}");
        assert_eq!(a.report.protected, b.report.protected, "{v}");
    }
    // the probe is sensitive: the protected-label variant does change
    let (a, b) = (run(Variant::Pad, &data, 5), run(Variant::Pad, &scrambled, 5));
    assert_ne!(a.trained.parameter_hash(), b.trained.parameter_hash());
}

#[test]
fn pad_and_npad_coincide_when_the_cue_copies_the_protected_attribute() {
    // an easy render so the small baseline learns shape, leaning on color
    let spec = DatasetSpec {
        image_size: [16, 16],
        samples: SplitSizes { train: 800, val: 400, test: 200 },
        nonprotected_protected_correlations: vec![1.0, 0.0, 0.0],
        seed: 4,
        render: RenderParams { jitter: 1.0, noise: 0.1, ..Default::default() },
        ..Default::default()
    };
    let data = LabData::from_manifest(&generate_dataset(&spec).unwrap()).unwrap();
    let eval = data.train.table.evaluation_view();
    assert_eq!(eval.column("stripes").unwrap(), eval.column("color").unwrap());

    // a baseline trained long enough to pick up the color shortcut, so the
    // copied cue tops the disparity ranking
    let config = |v| {
        let mut cfg = tiny_config(v, 6);
        cfg.baseline.epochs = 8;
        cfg.baseline.optimizer = OptimizerConfig::Adam { lr: 1e-3 };
        cfg
    };
    let bmt = run_variant(&config(Variant::Bmt), &data, None).unwrap();
    let arm = |v| run_variant(&config(v), &data, Some(&bmt.trained)).unwrap();
    let (npad, pad) = (arm(Variant::Npad1), arm(Variant::Pad));
    assert_eq!(npad.selection.as_ref().unwrap().selected, vec!["stripes"]);
    let (gn, gp) = (npad.grouping.as_ref().unwrap(), pad.grouping.as_ref().unwrap());
    assert_eq!(gn.class_ids, gp.class_ids);
    assert_eq!(npad.trained.parameter_hash(), pad.trained.parameter_hash());
    assert_eq!(npad.report.protected[0].dob, pad.report.protected[0].dob);
    let digests = |r: &VariantRun| -> Vec<Option<String>> {
        r.trained.log.epochs.iter().map(|e| e.cluster_digest.clone()).collect()
    };
    assert_eq!(digests(&npad), digests(&pad));
}

#[test]
fn composite_classes_follow_target_and_selected_bits() {
    let data = tiny_data(5, 0.95);
    let view = data.train.table.training_view();
    let g = Grouping::from_attributes(&view, "shape", &["stripes".into(), "border".into()]).unwrap();
    let (y, s, b) = (
        view.column("shape").unwrap(),
        view.column("stripes").unwrap(),
        view.column("border").unwrap(),
    );
    for i in 0..view.len() {
        let expected = (y[i] as usize) * 4 + (s[i] as usize) * 2 + b[i] as usize;
        assert_eq!(g.class_ids[i], expected);
        assert_eq!(g.class_ids[i], composite_class_id(y[i], &[s[i], b[i]]));
    }
    assert!(g.active() <= 8);
}

#[test]
fn stage1_needs_two_composite_classes() {
    let data = tiny_data(6, 0.95);
    let view = data.train.table.training_view();
    let zeros: Vec<Vec<u8>> = (0..view.len()).map(|_| vec![0, 0]).collect();
    let names = vec!["shape".to_string(), "constant".to_string()];
    let table = AttributeTable::new(view.sample_ids().to_vec(), names, zeros, &[]).unwrap();
    let set = TrainSet::new(&data.train.images, data.train.image_shape, table.training_view()).unwrap();
    let single = Grouping::from_attributes(set.view(), "shape", &["constant".into()]).unwrap();
    assert_eq!(single.active(), 1);
    let cfg = tiny_config(Variant::DaclOnly, 0);
    let err = train_two_stage(&cfg, &set, &single, None).unwrap_err();
    assert!(err.is_config(), "{err}");
}
