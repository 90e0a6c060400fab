//! Python bindings. Corners and reports cross the boundary as JSON text so
//! the Python side needs nothing beyond the standard `json` module.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use setpiece::checkpoint::{CheckpointError, ModelCheckpoint};
use setpiece::cornergraph::{parse_dataset, to_jsonl, CornerGraph, Team};
use setpiece::harness::{train as train_model, TrainConfig};
use setpiece::heads::{generate_adjustment, predict_receiver as receiver_report, predict_shot as shot_report, Model, SampleOptions, Task};
use setpiece::retrieval::{embed as embed_corner, Side};
use setpiece::synth::{generate, SynthConfig};

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn checkpoint_error(e: CheckpointError) -> PyErr {
    match e {
        CheckpointError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => invalid(other),
    }
}

fn parse_corner(text: &str) -> Result<CornerGraph, serde_json::Error> {
    serde_json::from_str(text)
}

/// A trained model together with the configuration it was trained under.
#[pyclass(frozen)]
struct Checkpoint {
    inner: ModelCheckpoint,
    model: Model,
}

impl Checkpoint {
    fn wrap(inner: ModelCheckpoint) -> PyResult<Self> {
        let model = inner.to_model().map_err(checkpoint_error)?;
        Ok(Self { inner, model })
    }

    fn role(&self, task: Task) -> PyResult<&Model> {
        self.model.expect_task(task).map_err(invalid)?;
        Ok(&self.model)
    }
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Self::wrap(ModelCheckpoint::load(&path).map_err(checkpoint_error)?)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::wrap(ModelCheckpoint::from_json(text).map_err(checkpoint_error)?)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(checkpoint_error)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.inner.task.as_str()
    }

    /// The team a generator repositions, `None` for other tasks.
    #[getter]
    fn team(&self) -> Option<&'static str> {
        self.model.spec().team_side.map(Team::as_str)
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint(task={:?}, step={})", self.inner.task.as_str(), self.inner.step)
    }
}

/// Synthetic corners as JSON lines.
#[pyfunction]
#[pyo3(signature = (n_samples, seed=42))]
fn synthesize(py: Python<'_>, n_samples: usize, seed: u64) -> PyResult<String> {
    let cfg = SynthConfig {
        n_samples,
        seed,
        ..SynthConfig::default()
    };
    let corners = py.detach(|| generate(&cfg)).map_err(invalid)?;
    Ok(to_jsonl(&corners))
}

/// Trains a model on a JSON-lines dataset. Unset options keep the task's
/// reference settings.
#[pyfunction]
#[pyo3(signature = (task, data, steps, seed=42, batch_size=None, learning_rate=None, team=None, conditional=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    task: &str,
    data: &str,
    steps: usize,
    seed: u64,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    team: Option<&str>,
    conditional: Option<bool>,
) -> PyResult<Checkpoint> {
    let task: Task = task.parse().map_err(invalid)?;
    let mut cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::for_task(task)
    };
    cfg.eval_every = cfg.eval_every.min(steps.max(1));
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
    cfg.conditional = conditional.unwrap_or(cfg.conditional);
    if let Some(t) = team {
        cfg.team_side = Some(t.parse().map_err(invalid)?);
    }
    let corners = parse_dataset(data).map_err(invalid)?;
    let run = py.detach(|| train_model(&cfg, &corners)).map_err(invalid)?;
    Checkpoint::wrap(run.checkpoint)
}

/// Receiver probabilities and top-3 as a JSON report.
#[pyfunction]
fn predict_receiver(corner: &str, receiver: &Checkpoint) -> PyResult<String> {
    let c = parse_corner(corner).map_err(invalid)?;
    let report = receiver_report(&c, receiver.role(Task::Receiver)?).map_err(invalid)?;
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

/// Marginal shot probability with its per-receiver breakdown.
#[pyfunction]
fn predict_shot(corner: &str, receiver: &Checkpoint, shot: &Checkpoint) -> PyResult<String> {
    let c = parse_corner(corner).map_err(invalid)?;
    let report = shot_report(&c, receiver.role(Task::Receiver)?, shot.role(Task::Shot)?).map_err(invalid)?;
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

/// Adjusted placements for the generator's team steering toward `outcome`.
#[pyfunction]
#[pyo3(signature = (corner, outcome, generator, receiver, shot, n_samples=4, seed=0, noise_scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn generate_adjustments(
    py: Python<'_>,
    corner: &str,
    outcome: bool,
    generator: &Checkpoint,
    receiver: &Checkpoint,
    shot: &Checkpoint,
    n_samples: usize,
    seed: u64,
    noise_scale: f64,
) -> PyResult<String> {
    let c = parse_corner(corner).map_err(invalid)?;
    let options = SampleOptions {
        n_samples,
        seed,
        noise_scale,
    };
    let (g, r, s) = (generator.role(Task::Generate)?, receiver.role(Task::Receiver)?, shot.role(Task::Shot)?);
    let report = py.detach(|| generate_adjustment(&c, outcome, options, g, r, s)).map_err(invalid)?;
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

/// The retrieval embedding of a corner under a receiver model.
#[pyfunction]
#[pyo3(signature = (corner, receiver, side="both"))]
fn embed(corner: &str, receiver: &Checkpoint, side: &str) -> PyResult<Vec<f64>> {
    let c = parse_corner(corner).map_err(invalid)?;
    let side: Side = side.parse().map_err(invalid)?;
    Ok(embed_corner(&c, &receiver.model, side).map_err(invalid)?.vector)
}

#[pymodule]
fn setpiece_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict_receiver, m)?)?;
    m.add_function(wrap_pyfunction!(predict_shot, m)?)?;
    m.add_function(wrap_pyfunction!(generate_adjustments, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_parse_from_dataset_lines() {
        let cfg = SynthConfig {
            n_samples: 3,
            seed: 1,
            ..SynthConfig::default()
        };
        let corners = generate(&cfg).unwrap();
        for (line, c) in to_jsonl(&corners).lines().zip(&corners) {
            assert_eq!(&parse_corner(line).unwrap(), c);
        }
        assert!(parse_corner("{\"id\": 1}").is_err());
    }
}
