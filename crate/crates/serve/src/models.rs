//! The immutable snapshot a running service answers from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use setpiece::checkpoint::{CheckpointError, ModelCheckpoint};
use setpiece::cornergraph::{read_dataset, CornerError, CornerGraph, Team};
use setpiece::heads::{Model, Task};
use setpiece::retrieval::{EmbeddingIndex, RetrievalError, Side};
use thiserror::Error;

/// Corpus file looked up inside the checkpoint directory when none is
/// given explicitly.
pub const CORPUS_FILE: &str = "corpus.jsonl";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: a `{slot}` checkpoint is already loaded")]
    DuplicateSlot { path: PathBuf, slot: String },
    #[error("{path}: {reason}")]
    Unusable { path: PathBuf, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CornerError),
    #[error("building the retrieval index: {0}")]
    Index(#[from] RetrievalError),
}

/// The slot a checkpoint fills, which is also its key in health reports.
pub fn slot_name(task: Task, team: Option<Team>) -> String {
    match (task, team) {
        (Task::Generate, Some(t)) => format!("generator_{t}"),
        (t, _) => t.as_str().to_string(),
    }
}

#[derive(Debug, Default)]
pub struct ModelSet {
    pub receiver: Option<Model>,
    pub shot: Option<Model>,
    pub attacking_generator: Option<Model>,
    pub defending_generator: Option<Model>,
    /// Slot name to checkpoint format version.
    pub versions: BTreeMap<String, u32>,
    pub corpus: Vec<CornerGraph>,
    indexes: BTreeMap<&'static str, EmbeddingIndex>,
}

impl ModelSet {
    pub fn generator(&self, team: Team) -> Option<&Model> {
        match team {
            Team::Attacking => self.attacking_generator.as_ref(),
            Team::Defending => self.defending_generator.as_ref(),
        }
    }

    /// The corpus index for `side`; present when a receiver model and a
    /// non-empty corpus are loaded.
    pub fn index(&self, side: Side) -> Option<&EmbeddingIndex> {
        self.indexes.get(side.as_str())
    }

    /// Adds a checkpoint to the slot its task (and team) names.
    pub fn insert(&mut self, path: &Path, ckpt: &ModelCheckpoint) -> Result<(), LoadError> {
        let model = ckpt.to_model().map_err(|source| LoadError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })?;
        let team = model.spec().team_side;
        let slot = slot_name(ckpt.task, team);
        if ckpt.task == Task::Shot && !model.spec().conditional {
            return Err(LoadError::Unusable {
                path: path.to_path_buf(),
                reason: "the service needs a receiver-conditioned shot model to marginalise over receivers".into(),
            });
        }
        let target = match (ckpt.task, team) {
            (Task::Receiver, _) => &mut self.receiver,
            (Task::Shot, _) => &mut self.shot,
            (Task::Generate, Some(Team::Attacking)) => &mut self.attacking_generator,
            (Task::Generate, Some(Team::Defending)) => &mut self.defending_generator,
            (Task::Generate, None) => unreachable!("validated generators name a team"),
        };
        if target.is_some() {
            return Err(LoadError::DuplicateSlot {
                path: path.to_path_buf(),
                slot,
            });
        }
        *target = Some(model);
        self.versions.insert(slot, ckpt.format_version);
        Ok(())
    }

    /// Sets the corpus and rebuilds the retrieval indexes.
    pub fn set_corpus(&mut self, corpus: Vec<CornerGraph>) -> Result<(), LoadError> {
        self.indexes.clear();
        if let Some(receiver) = &self.receiver {
            if !corpus.is_empty() {
                for side in [Side::Both, Side::Attacking, Side::Defending] {
                    self.indexes.insert(side.as_str(), EmbeddingIndex::build(&corpus, receiver, side)?);
                }
            }
        }
        self.corpus = corpus;
        Ok(())
    }

    /// Loads every `*.json` / `*.ckpt` checkpoint in `dir` (sorted by
    /// name) and the corpus, from `corpus` or `dir/corpus.jsonl`.
    pub fn load_dir(dir: &Path, corpus: Option<&Path>) -> Result<Self, LoadError> {
        let io = |source| LoadError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.retain(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "ckpt")));
        paths.sort();
        let mut set = ModelSet::default();
        for path in paths {
            let ckpt = ModelCheckpoint::load(&path).map_err(|source| LoadError::Checkpoint { path: path.clone(), source })?;
            set.insert(&path, &ckpt)?;
        }
        let default_corpus = dir.join(CORPUS_FILE);
        let corpus_path = corpus.map(Path::to_path_buf).or_else(|| default_corpus.is_file().then_some(default_corpus));
        if let Some(p) = corpus_path {
            set.set_corpus(read_dataset(&p)?)?;
        }
        Ok(set)
    }
}
