#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use setpiece::checkpoint::ModelCheckpoint;
use setpiece::cornergraph::{write_dataset, CornerGraph, Team};
use setpiece::harness::{train, TrainConfig};
use setpiece::heads::Task;
use setpiece::synth::{generate, SynthConfig};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: Vec<CornerGraph>,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn models(&self) -> PathBuf {
        self.path("models")
    }
}

pub fn quick_config(task: Task) -> TrainConfig {
    TrainConfig {
        steps: 3,
        batch_size: 4,
        learning_rate: 1e-2,
        eval_every: 1,
        ..TrainConfig::for_task(task)
    }
}

pub fn quick_checkpoint(cfg: &TrainConfig, data: &[CornerGraph]) -> ModelCheckpoint {
    train(cfg, data).unwrap().checkpoint
}

/// A 60-corner dataset plus receiver, shot and both generator checkpoints
/// in `models/`, with the dataset copied in as the corpus.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&SynthConfig {
            n_samples: 60,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        write_dataset(dir.path().join("data.jsonl"), &data).unwrap();
        let models = dir.path().join("models");
        std::fs::create_dir(&models).unwrap();
        write_dataset(models.join("corpus.jsonl"), &data).unwrap();
        let configs = [
            ("receiver.ckpt", quick_config(Task::Receiver)),
            ("shot.ckpt", quick_config(Task::Shot)),
            (
                "generator_attacking.ckpt",
                TrainConfig {
                    team_side: Some(Team::Attacking),
                    ..quick_config(Task::Generate)
                },
            ),
            ("generator_defending.ckpt", quick_config(Task::Generate)),
        ];
        for (name, cfg) in configs {
            quick_checkpoint(&cfg, &data).save(&models.join(name)).unwrap();
        }
        Fixture { dir, data }
    })
}

pub fn copy_models(from: &Path, to: &Path, names: &[&str]) {
    std::fs::create_dir_all(to).unwrap();
    for n in names {
        std::fs::copy(from.join(n), to.join(n)).unwrap();
    }
}
