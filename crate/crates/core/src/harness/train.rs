use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, TrainConfig};
use crate::autodiff::{AdamState, Tape};
use crate::checkpoint::ModelCheckpoint;
use crate::cornergraph::{split_indices, CornerGraph};
use crate::heads::{Model, Task};

/// Graphs per tape. Minibatch gradients are the weighted sum of the
/// per-chunk gradients, which keeps tapes small and cache friendly.
pub const TAPE_CHUNK: usize = 8;
/// Below this many corners the whole training set doubles as the
/// evaluation set.
pub const HOLDOUT_MIN: usize = 50;
const EVAL_NOISE_SALT: u64 = 0xe7a1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    /// Mean regularised minibatch loss since the previous snapshot.
    pub train_loss: Option<f64>,
    pub eval_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    /// Best-by-evaluation-loss parameters.
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<Snapshot>,
}

/// Mixes stream identifiers into a seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |acc, p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// Rejects graphs that lack a label the task trains on.
pub fn check_labels(task: Task, data: &[CornerGraph]) -> Result<(), HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    for c in data {
        let missing = match task {
            Task::Receiver => c.receiver_index().is_none().then_some("receiver_index"),
            Task::Shot | Task::Generate => {
                if c.shot_taken().is_none() {
                    Some("shot_taken")
                } else {
                    c.receiver_index().is_none().then_some("receiver_index")
                }
            }
        };
        if let Some(field) = missing {
            return Err(HarnessError::Labels {
                task,
                id: c.id().to_string(),
                field,
            });
        }
    }
    Ok(())
}

/// Mean task loss over `data`, forward only. Generators use fixed noise.
pub fn dataset_loss(model: &Model, data: &[&CornerGraph], seed: u64) -> Result<f64, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut total = 0.0;
    for (i, chunk) in data.chunks(64).enumerate() {
        let mut t = Tape::new();
        let loss = model.loss(&mut t, chunk, derive_seed(seed, &[EVAL_NOISE_SALT, i as u64]))?;
        total += t.value(loss).item()? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn train(cfg: &TrainConfig, train_set: &[CornerGraph]) -> Result<TrainRun, HarnessError> {
    train_with_progress(cfg, train_set, |_| {})
}

/// Minibatch Adam on the regularised task loss. `progress` sees every
/// snapshot as it is taken.
pub fn train_with_progress(cfg: &TrainConfig, train_set: &[CornerGraph], mut progress: impl FnMut(&Snapshot)) -> Result<TrainRun, HarnessError> {
    cfg.validate()?;
    check_labels(cfg.task, train_set)?;
    let mut model = Model::new(cfg.model_spec(), cfg.seed)?;

    let n = train_set.len();
    let (fit, held): (Vec<usize>, Vec<usize>) = if n >= HOLDOUT_MIN && cfg.eval_fraction > 0.0 {
        split_indices(n, 1.0 - cfg.eval_fraction, derive_seed(cfg.seed, &[1]))?
    } else {
        ((0..n).collect(), (0..n).collect())
    };
    let eval_set: Vec<&CornerGraph> = held.iter().map(|&i| &train_set[i]).collect();
    let batch = cfg.batch_size.min(fit.len());

    let mut adam = AdamState::new(cfg.adam(), model.params())?;
    let eval0 = dataset_loss(&model, &eval_set, cfg.seed)?;
    let mut best = (eval0, model.params().clone(), 0usize);
    let first = Snapshot {
        step: 0,
        train_loss: None,
        eval_loss: eval0,
    };
    progress(&first);
    let mut history = vec![first];

    let mut epoch = 0u64;
    let mut order = fit.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, epoch])));
    let mut cursor = 0;
    let (mut running, mut running_steps) = (0.0, 0usize);

    for step in 1..=cfg.steps {
        if cursor + batch > order.len() {
            epoch += 1;
            order = fit.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, epoch])));
            cursor = 0;
        }
        let members: Vec<&CornerGraph> = order[cursor..cursor + batch].iter().map(|&i| &train_set[i]).collect();
        cursor += batch;

        model.params_mut().zero_grads();
        let mut step_loss = 0.0;
        for (k, chunk) in members.chunks(TAPE_CHUNK).enumerate() {
            let weight = chunk.len() as f64 / batch as f64;
            let mut t = Tape::new();
            let loss = model.loss(&mut t, chunk, derive_seed(cfg.seed, &[3, step as u64, k as u64]))?;
            t.backward(loss)?;
            step_loss += weight * t.value(loss).item()?;
            model.params_mut().accumulate(&t, weight);
        }
        if cfg.l2 > 0.0 {
            step_loss += l2_penalty(&mut model, cfg.l2)?;
        }
        adam.step(model.params_mut())?;
        running += step_loss;
        running_steps += 1;

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let eval_loss = dataset_loss(&model, &eval_set, cfg.seed)?;
            let snap = Snapshot {
                step,
                train_loss: Some(running / running_steps as f64),
                eval_loss,
            };
            progress(&snap);
            history.push(snap);
            (running, running_steps) = (0.0, 0);
            if eval_loss < best.0 {
                best = (eval_loss, model.params().clone(), step);
            }
        }
    }

    let (eval_loss, params, step) = best;
    *model.params_mut() = params;
    Ok(TrainRun {
        checkpoint: ModelCheckpoint::from_model(*cfg, &model, step, Some(eval_loss)),
        history,
    })
}

/// Adds the gradient of `l2 * sum(p^2)` through its own tape and returns
/// the penalty value.
fn l2_penalty(model: &mut Model, l2: f64) -> Result<f64, HarnessError> {
    let mut t = Tape::new();
    let store = model.params();
    let mut total = None;
    for id in store.ids() {
        let p = t.param(store, id);
        let sq = t.square(p)?;
        let s = t.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => t.add(acc, s)?,
        });
    }
    let Some(total) = total else { return Ok(0.0) };
    let penalty = t.scale(total, l2)?;
    t.backward(penalty)?;
    let value = t.value(penalty).item()?;
    model.params_mut().accumulate(&t, 1.0);
    Ok(value)
}
