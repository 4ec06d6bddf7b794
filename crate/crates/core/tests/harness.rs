use std::fs;
use std::process::Command;

use candle_core::{DType, Device};
use kneeseg::data::{make_phantom, LabelMask, Volume, VolumeMeta};
use kneeseg::harness::report::{EVALUATION_JSON, METRICS_CSV};
use kneeseg::harness::{
    error_map, evaluate_predictions, segment_volume, write_evaluation, Mode, RunConfig,
};
use kneeseg::net::{count_parameters, ModelConfig, MtraUnet};
use kneeseg::roi::{ThresholdConfig, Tissue};
use kneeseg::Error;
use proptest::prelude::*;

fn phantoms(n: usize, slices: usize, size: usize) -> Vec<Volume> {
    (0..n)
        .map(|i| {
            let meta = VolumeMeta {
                subject_id: format!("90000{i:02}"),
                slice_count: slices,
                ..VolumeMeta::default()
            };
            make_phantom(20 + i as u64, &meta).resized(size).unwrap()
        })
        .collect()
}

#[test]
fn ground_truth_as_prediction_scores_perfectly() {
    let volumes = phantoms(3, 40, 150);
    let preds: Vec<Vec<LabelMask>> = volumes.iter().map(|v| v.masks().cloned().collect()).collect();
    let eval = evaluate_predictions(&volumes, &preds, Mode::Multiclass, &ThresholdConfig::multiclass()).unwrap();
    assert!(!eval.selected.is_empty());
    assert_eq!(eval.records.len(), 4 * eval.selected.len());
    for r in &eval.records {
        assert_eq!((r.dsc, r.voe, r.hd_mm, r.pa), (100.0, 0.0, Some(0.0), 100.0));
    }
    assert_eq!(eval.average_dsc, Some(100.0));
    assert!(eval.error_maps.iter().all(|(_, m)| m.nonzero_count() == 0));
    for a in &eval.agreement {
        assert_eq!(a.manual_mm2, a.predicted_mm2);
        let r = a.association.unwrap().r.unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{}: r = {r}", a.tissue);
    }
}

#[test]
fn background_prediction_scores_zero() {
    let volumes = phantoms(1, 40, 150);
    let preds = vec![vec![LabelMask::zeros(150, 150, 5); 40]];
    let eval = evaluate_predictions(&volumes, &preds, Mode::Multiclass, &ThresholdConfig::multiclass()).unwrap();
    assert!(!eval.records.is_empty());
    for r in &eval.records {
        assert_eq!(r.dsc, 0.0);
        assert_eq!(r.voe, 100.0);
        assert_eq!(r.hd_mm, None);
    }
    // one subject: agreement statistics are not defined
    assert!(eval.agreement.iter().all(|a| a.association.is_none()));
    let (_, map) = &eval.error_maps[0];
    assert!(map.false_positives(Tissue::FemoralBone) == 0 && map.false_negatives(Tissue::FemoralBone) > 0);
}

#[test]
fn blank_volume_gives_an_empty_selection() {
    let mut volume = phantoms(1, 6, 32).remove(0);
    for s in &mut volume.slices {
        s.mask = LabelMask::zeros(32, 32, 5);
    }
    let preds = vec![volume.masks().cloned().collect()];
    let eval = evaluate_predictions(&[volume], &preds, Mode::Multiclass, &ThresholdConfig::multiclass()).unwrap();
    assert!(eval.is_empty_selection());
    assert_eq!(eval.average_dsc, None);
    let tmp = tempfile::tempdir().unwrap();
    write_evaluation(tmp.path(), &eval, &[]).unwrap();
    let status = fs::read_to_string(tmp.path().join(EVALUATION_JSON)).unwrap();
    assert!(status.contains("empty-selection"));
    let metrics = fs::read_to_string(tmp.path().join(METRICS_CSV)).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn mismatched_prediction_counts_are_rejected() {
    let volumes = phantoms(1, 4, 32);
    let preds = vec![vec![LabelMask::zeros(32, 32, 5); 3]];
    let err = evaluate_predictions(&volumes, &preds, Mode::Multiclass, &ThresholdConfig::multiclass());
    assert!(matches!(err, Err(Error::Validation(_))));
}

#[test]
fn segmentation_timing_adds_up() {
    let volume = phantoms(1, 20, 32).remove(0);
    let cfg = ModelConfig {
        input_size: 32,
        widths: vec![4, 8],
        ..ModelConfig::default()
    };
    let model = MtraUnet::new(cfg, DType::F32, &Device::Cpu).unwrap();
    let seg = segment_volume(&model, Mode::Multiclass, &volume).unwrap();
    assert_eq!(seg.masks.len(), 20);
    assert_eq!(seg.timing.per_slice.len(), 20);
    assert!(seg.timing.compute_seconds <= seg.timing.total_seconds);
    assert!(seg.timing.discrepancy() < 0.05, "{:?}", seg.timing);
    assert!(seg.masks.iter().all(|m| m.class_count() == 5 && m.height() == 32));

    let wrong = phantoms(1, 2, 16).remove(0);
    assert!(matches!(segment_volume(&model, Mode::Multiclass, &wrong), Err(Error::Validation(_))));
    assert!(matches!(segment_volume(&model, Mode::BinaryFc, &volume), Err(Error::Validation(_))));
}

#[test]
fn config_errors_are_reported() {
    let bad = |k: &str, v: &str| RunConfig::resolve("tiny", &[(k.to_string(), v.to_string())]).unwrap_err();
    assert!(matches!(bad("no_such_key", "1"), Error::Config(_)));
    assert!(bad("epochs", "many").is_validation());
    assert!(bad("gamma", "-1").is_validation());
    assert!(bad("roi.xx", "5").is_validation());
    assert!(RunConfig::resolve("/no/such/config.txt", &[]).is_err());
    let ok = RunConfig::resolve("tiny", &[("roi.fc".into(), "none".into())]).unwrap();
    assert_eq!(ok.thresholds.fc, None);
}

fn label_map(len: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..5, len)
}

proptest! {
    #[test]
    fn error_map_partitions_the_mismatches(pred in label_map(48), gt in label_map(48)) {
        let p = LabelMask::new(pred.clone(), 6, 8, 5).unwrap();
        let g = LabelMask::new(gt.clone(), 6, 8, 5).unwrap();
        let map = error_map(&p, &g).unwrap();
        let mismatches = pred.iter().zip(&gt).filter(|(a, b)| a != b).count();
        prop_assert_eq!(map.nonzero_count(), mismatches);
        let attributed: usize = Tissue::ALL.iter().map(|&t| map.false_positives(t) + map.false_negatives(t)).sum();
        prop_assert_eq!(attributed, mismatches);
        for &t in &Tissue::ALL {
            let missed = pred.iter().zip(&gt).filter(|(a, b)| **b == t.code() && *a != *b).count();
            prop_assert_eq!(map.false_negatives(t), missed);
        }
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kneeseg")).args(args).output().unwrap()
}

#[test]
fn cli_unknown_flag_prints_usage() {
    let out = cli(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn cli_params_matches_library_count() {
    let out = cli(&["params", "--config", "tiny"]);
    assert_eq!(out.status.code(), Some(0));
    let printed: usize = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert_eq!(printed, count_parameters(&ModelConfig::tiny()));
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    // bad input: status 1
    assert_eq!(cli(&["params", "--set", "widths=8,4"]).status.code(), Some(1));
    assert_eq!(cli(&["train", "--config", "tiny", "--data", dir]).status.code(), Some(1));
    assert_eq!(cli(&["evaluate", "--data", dir]).status.code(), Some(1));
    // unreadable checkpoint: runtime failure, status 2
    let missing = tmp.path().join("missing.ckpt");
    let out = cli(&["evaluate", "--checkpoint", missing.to_str().unwrap(), "--data", dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
