mod common;

use common::random_corners;
use setpiece::checkpoint::ModelCheckpoint;
use setpiece::cornergraph::{apply, split, CornerGraph, D2Element, PlayerNode};
use setpiece::gnn::{BaseLayerKind, SymmetryMode};
use setpiece::harness::{
    ablate, binary_scores, dataset_loss, derive_seed, evaluate, mean_std, realism_probe, shift_probe, top_k_accuracy, train,
    train_with_progress, AblationBudget, HarnessError, TrainConfig, Variant, SHIFT_MIN_SAMPLES,
};
use setpiece::heads::{Model, ModelSpec, Task};
use setpiece::synth::{generate, SynthConfig};

fn synthetic(n: usize, seed: u64) -> Vec<CornerGraph> {
    generate(&SynthConfig {
        n_samples: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// A cheap configuration for smoke runs.
fn quick(task: Task, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 8,
        learning_rate: 3e-3,
        layer_count: 2,
        symmetry_mode: SymmetryMode::None,
        eval_every: 10,
        ..TrainConfig::for_task(task)
    }
}

#[test]
fn defaults_follow_the_reference_table() {
    let r = TrainConfig::for_task(Task::Receiver);
    assert_eq!((r.batch_size, r.learning_rate, r.l2, r.layer_count, r.seed), (256, 1e-4, 1e-4, 4, 42));
    let s = TrainConfig::for_task(Task::Shot);
    assert_eq!((s.batch_size, s.learning_rate, s.l2, s.layer_count), (128, 1e-4, 0.0, 2));
    let g = TrainConfig::for_task(Task::Generate);
    assert_eq!((g.batch_size, g.learning_rate, g.l2, g.layer_count), (128, 5e-5, 1e-4, 2));
    for c in [r, s, g] {
        assert_eq!((c.beta1, c.beta2, c.epsilon), (0.9, 0.999, 1e-8));
        c.validate().unwrap();
    }
}

#[test]
fn zero_steps_return_the_initialization() {
    let data = synthetic(20, 1);
    for task in [Task::Receiver, Task::Shot, Task::Generate] {
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::for_task(task)
        };
        let run = train(&cfg, &data).unwrap();
        let fresh = Model::new(cfg.model_spec(), cfg.seed).unwrap();
        assert_eq!(run.checkpoint.step, 0);
        assert_eq!(run.checkpoint.params, ModelCheckpoint::from_model(cfg, &fresh, 0, None).params);
        assert_eq!(run.history.len(), 1);
    }
}

#[test]
fn small_sets_are_overfit() {
    let data = synthetic(32, 2);
    let refs: Vec<&CornerGraph> = data.iter().collect();
    for task in [Task::Receiver, Task::Shot, Task::Generate] {
        let cfg = quick(task, 100);
        let mut snaps = Vec::new();
        let run = train_with_progress(&cfg, &data, |s| snaps.push(s.clone())).unwrap();
        assert_eq!(snaps, run.history);
        assert_eq!(snaps.first().unwrap().step, 0);
        assert_eq!(snaps.last().unwrap().step, 100);
        // Tiny sets evaluate on themselves.
        let first = snaps[0].eval_loss;
        let last = snaps.last().unwrap().eval_loss;
        assert!(last < first, "{task}: {first} -> {last}");
        // The checkpoint is the best snapshot.
        let best = snaps.iter().map(|s| s.eval_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(run.checkpoint.eval_loss, Some(best));
        let model = run.checkpoint.to_model().unwrap();
        assert_eq!(dataset_loss(&model, &refs, cfg.seed).unwrap(), best);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let data = synthetic(80, 3);
    let cfg = TrainConfig {
        symmetry_mode: SymmetryMode::GroupConvolution,
        ..quick(Task::Receiver, 12)
    };
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
    assert_eq!(a.history, b.history);
    let c = train(&TrainConfig { seed: 7, ..cfg }, &data).unwrap();
    assert_ne!(a.checkpoint.to_json(), c.checkpoint.to_json());
}

#[test]
fn missing_labels_are_rejected_before_training() {
    let unlabelled = random_corners(10, 1);
    for task in [Task::Receiver, Task::Shot, Task::Generate] {
        assert!(matches!(train(&quick(task, 5), &unlabelled), Err(HarnessError::Labels { .. })));
    }
    let receiver_only: Vec<CornerGraph> = synthetic(10, 1).iter().map(|c| c.with_labels(c.receiver_index(), None).unwrap()).collect();
    assert!(train(&quick(Task::Receiver, 1), &receiver_only).is_ok());
    assert!(matches!(
        train(&quick(Task::Shot, 1), &receiver_only),
        Err(HarnessError::Labels { field: "shot_taken", .. })
    ));
    assert!(matches!(train(&quick(Task::Receiver, 1), &[]), Err(HarnessError::EmptyDataset)));
}

#[test]
fn invalid_configs_are_rejected() {
    let data = synthetic(10, 1);
    for cfg in [
        TrainConfig { batch_size: 0, ..quick(Task::Receiver, 1) },
        TrainConfig { learning_rate: -1.0, ..quick(Task::Receiver, 1) },
        TrainConfig { layer_count: 0, ..quick(Task::Receiver, 1) },
        TrainConfig {
            symmetry_mode: SymmetryMode::FrameAveraging,
            ..quick(Task::Generate, 1)
        },
    ] {
        assert!(matches!(train(&cfg, &data), Err(HarnessError::Config(_)) | Err(HarnessError::Head(_))));
    }
}

#[test]
fn evaluation_needs_a_test_set() {
    let model = Model::new(ModelSpec::receiver(), 1).unwrap();
    assert!(matches!(evaluate(&model, &[]), Err(HarnessError::EmptyDataset)));
}

#[test]
fn metric_formulas() {
    // Perfect predictors.
    let labels = [3usize, 0, 21];
    let probs: Vec<Vec<f64>> = labels.iter().map(|&y| (0..22).map(|i| if i == y { 0.9 } else { 0.1 / 21.0 }).collect()).collect();
    assert_eq!(top_k_accuracy(&probs, &labels, 1), 1.0);
    assert_eq!(top_k_accuracy(&probs, &labels, 3), 1.0);
    assert_eq!(binary_scores(&[0.9, 0.1, 0.6], &[true, false, true]).f1, 1.0);
    // A uniform predictor over every possible label hits 3 in 22.
    let labels: Vec<usize> = (0..22).collect();
    let uniform = vec![vec![1.0 / 22.0; 22]; 22];
    assert!((top_k_accuracy(&uniform, &labels, 3) - 3.0 / 22.0).abs() < 1e-12);
    // All positives with 21% positives.
    let labels: Vec<bool> = (0..100).map(|i| i < 21).collect();
    let s = binary_scores(&[1.0; 100], &labels);
    assert!((s.precision - 0.21).abs() < 1e-12 && s.recall == 1.0);
    assert!((s.f1 - 0.347).abs() < 1e-3);
    // Nothing predicted positive.
    assert_eq!(binary_scores(&[0.1, 0.2], &[true, false]).f1, 0.0);
    let (m, sd) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!((m, sd), (2.0, 1.0));
    assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
}

#[test]
fn evaluation_ignores_order_and_reflection() {
    let data = synthetic(60, 5);
    let run = train(&quick(Task::Receiver, 10), &data).unwrap();
    let gc = Model::new(TrainConfig::for_task(Task::Receiver).model_spec(), 3).unwrap();
    let plain = run.checkpoint.to_model().unwrap();
    let mut reversed = data.clone();
    reversed.reverse();
    for model in [&gc, &plain] {
        let a = evaluate(model, &data).unwrap();
        let b = evaluate(model, &reversed).unwrap();
        assert_eq!((a.top1, a.top3), (b.top1, b.top3));
        for m in [a.top1.unwrap(), a.top3.unwrap()] {
            assert!((0.0..=1.0).contains(&m));
        }
    }
    for g in D2Element::ALL {
        let reflected: Vec<CornerGraph> = data.iter().map(|c| apply(g, c)).collect();
        let (a, b) = (evaluate(&gc, &data).unwrap(), evaluate(&gc, &reflected).unwrap());
        assert_eq!((a.top1, a.top3), (b.top1, b.top3));
    }
}

#[test]
fn shot_evaluation_reports_binary_scores() {
    let data = synthetic(40, 6);
    let run = train(&quick(Task::Shot, 5), &data).unwrap();
    let report = evaluate(&run.checkpoint.to_model().unwrap(), &data).unwrap();
    assert!(report.f1.is_some() && report.precision.is_some() && report.top3.is_none());
}

#[test]
fn ablation_is_deterministic() {
    let data = synthetic(60, 7);
    let budget = AblationBudget {
        steps: 3,
        batch_size: 4,
        learning_rate: 3e-3,
        eval_every: 3,
        split_ratio: 0.8,
        split_seed: 42,
    };
    let variants = [Variant::DeepSets, Variant::Gatv2, Variant::ShotConditional];
    let a = ablate(&variants, &data, &[1, 2], &budget).unwrap();
    let b = ablate(&variants, &data, &[1, 2], &budget).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(a.values(Variant::Gatv2, "top3").len(), 2);
    let (mean, _) = a.summary(Variant::DeepSets).unwrap();
    assert!((0.0..=1.0).contains(&mean));
    for line in a.to_jsonl().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["variant", "task", "seed", "metric", "value"] {
            assert!(v.get(key).is_some(), "{line}");
        }
    }
    assert!(a.to_jsonl().contains("\"metric\":\"reference_top3\",\"value\":0.748"));
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("cnn".parse::<Variant>().is_err());
    let budget = AblationBudget {
        steps: 1,
        batch_size: 1,
        learning_rate: 1e-3,
        eval_every: 1,
        split_ratio: 0.8,
        split_seed: 0,
    };
    assert_eq!(Variant::DeepSets.config(&budget, 4).base_layer, BaseLayerKind::DeepSets);
    assert!(!Variant::ShotUnconditional.config(&budget, 4).conditional);
    // Reference ordering of the published ladder.
    let r: Vec<f64> = Variant::ALL[..5].iter().map(|v| v.reference_value()).collect();
    assert!(r.windows(2).all(|w| w[0] <= w[1]));
}

fn shifted(c: &CornerGraph, dx: f64) -> CornerGraph {
    let players = c.players().iter().map(|p| PlayerNode { x: p.x + dx, ..*p }).collect();
    c.with_players(players).unwrap()
}

#[test]
fn realism_probe_controls() {
    let real = synthetic(400, 8);
    let copies = real.clone();
    let moved: Vec<CornerGraph> = real.iter().map(|c| shifted(c, 3.0)).collect();
    let mut chance = Vec::new();
    for seed in 0..5 {
        let same = realism_probe(&real, &copies, seed).unwrap();
        assert_eq!(same.precision, same.recall);
        chance.push(same.f1);
        let apart = realism_probe(&real, &moved, seed).unwrap();
        assert!(apart.f1 > 0.9, "{apart:?}");
        assert_eq!(apart.n_test, 120);
    }
    let (mean, _) = mean_std(&chance);
    assert!((mean - 0.5).abs() <= 0.1, "{chance:?}");
    assert!(realism_probe(&real[..10], &copies[..9], 0).is_err());
}

#[test]
fn identity_adjustment_does_not_shift() {
    let corners = synthetic(40, 9);
    let report = shift_probe(&corners, false, |c| Ok(vec![c.clone(), c.clone()]), |c| Ok(0.2 + 0.01 * c.player(3).x.abs())).unwrap();
    assert_eq!(report.mean_before, report.mean_after);
    assert_eq!(report.z, 0.0);
    assert_eq!(report.toward_fraction, 0.0);
    assert!(report.warning.is_none());
    let few = shift_probe(&corners[..SHIFT_MIN_SAMPLES - 1], true, |c| Ok(vec![c.clone()]), |_| Ok(0.5)).unwrap();
    assert!(few.warning.is_some());
    // A generator that always helps.
    let up = shift_probe(&corners, true, |c| Ok(vec![shifted(c, 0.5)]), |c| Ok(0.5 + 0.1 * c.player(1).x.tanh())).unwrap();
    assert!(up.mean_after > up.mean_before && up.toward_fraction > 0.9 && up.z > 0.0);
}

#[test]
fn seeds_derive_independently() {
    assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
    assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
    assert_eq!(derive_seed(9, &[4, 5]), derive_seed(9, &[4, 5]));
    let (a, b) = split(&synthetic(10, 0), 0.8, 1).unwrap();
    assert_eq!((a.len(), b.len()), (8, 2));
}
