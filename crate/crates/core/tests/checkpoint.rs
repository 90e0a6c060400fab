use setpiece::checkpoint::{CheckpointError, ModelCheckpoint, FORMAT_VERSION};
use setpiece::harness::{train, TrainConfig};
use setpiece::heads::{predict_receiver, Model, Task};
use setpiece::synth::{generate, SynthConfig};

fn trained(task: Task) -> ModelCheckpoint {
    let data = generate(&SynthConfig {
        n_samples: 30,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 4,
        learning_rate: 1e-2,
        eval_every: 1,
        ..TrainConfig::for_task(task)
    };
    train(&cfg, &data).unwrap().checkpoint
}

#[test]
fn files_round_trip_byte_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for task in [Task::Receiver, Task::Shot, Task::Generate] {
        let ckpt = trained(task);
        let path = dir.path().join(format!("{task}.json"));
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let loaded = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let again = dir.path().join("again.json");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes);
    }
}

#[test]
fn restored_models_predict_identically() {
    let ckpt = trained(Task::Receiver);
    let restored = ModelCheckpoint::from_json(&ckpt.to_json()).unwrap().to_model().unwrap();
    let original = ckpt.to_model().unwrap();
    let c = &generate(&SynthConfig {
        n_samples: 1,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap()[0];
    assert_eq!(predict_receiver(c, &restored).unwrap(), predict_receiver(c, &original).unwrap());
    assert_ne!(restored.params().to_named(), Model::new(ckpt.config.model_spec(), 0).unwrap().params().to_named());
}

#[test]
fn other_versions_are_refused() {
    let text = trained(Task::Shot).to_json();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["format_version"] = serde_json::json!(FORMAT_VERSION + 1);
    match ModelCheckpoint::from_json(&v.to_string()) {
        Err(CheckpointError::UnsupportedVersion { found, supported }) => {
            assert_eq!((found, supported), (u64::from(FORMAT_VERSION) + 1, FORMAT_VERSION));
        }
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn corrupt_files_are_refused() {
    let text = trained(Task::Receiver).to_json();
    assert!(matches!(ModelCheckpoint::from_json(&text[..text.len() / 2]), Err(CheckpointError::Corrupt(_))));
    assert!(matches!(ModelCheckpoint::from_json("{}"), Err(CheckpointError::Corrupt(_))));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["task"] = serde_json::json!("shot");
    assert!(matches!(ModelCheckpoint::from_json(&v.to_string()), Err(CheckpointError::Corrupt(_))));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let params = v["params"].as_object_mut().unwrap();
    let first = params.keys().next().unwrap().clone();
    params[&first]["values"].as_array_mut().unwrap().pop();
    assert!(matches!(ModelCheckpoint::from_json(&v.to_string()), Err(CheckpointError::Corrupt(_))));

    // A parameter the architecture does not have.
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["params"]["stray"] = serde_json::json!({"shape": [1], "values": [0.0]});
    let ckpt = ModelCheckpoint::from_json(&v.to_string()).unwrap();
    assert!(matches!(ckpt.to_model(), Err(CheckpointError::Corrupt(_))));

    let missing = std::path::Path::new("/nonexistent/ckpt.json");
    assert!(matches!(ModelCheckpoint::load(missing), Err(CheckpointError::Io { .. })));
}
