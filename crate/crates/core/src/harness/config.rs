use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::AdamConfig;
use crate::cornergraph::{Team, PLAYER_COUNT};
use crate::gnn::{BaseLayerKind, EncoderConfig, SymmetryMode};
use crate::heads::{ModelSpec, Task};

/// Hyperparameters of one training run. [`TrainConfig::for_task`] gives
/// the reference settings per task; `steps` defaults to the desk budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub layer_count: usize,
    pub steps: usize,
    pub seed: u64,
    pub base_layer: BaseLayerKind,
    pub symmetry_mode: SymmetryMode,
    /// Shot task: feed the ground-truth receiver as a global feature.
    pub conditional: bool,
    /// Generate task: the team the generator repositions.
    pub team_side: Option<Team>,
    /// Steps between evaluation-loss snapshots.
    pub eval_every: usize,
    /// Share of the training set held out for model selection.
    pub eval_fraction: f64,
}

pub const DEFAULT_STEPS: usize = 20_000;
pub const DEFAULT_SEED: u64 = 42;

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let base = Self {
            task,
            batch_size: 128,
            learning_rate: 1e-4,
            l2: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            layer_count: 2,
            steps: DEFAULT_STEPS,
            seed: DEFAULT_SEED,
            base_layer: BaseLayerKind::Gatv2,
            symmetry_mode: SymmetryMode::GroupConvolution,
            conditional: false,
            team_side: None,
            eval_every: 500,
            eval_fraction: 0.1,
        };
        match task {
            Task::Receiver => Self {
                batch_size: 256,
                l2: 1e-4,
                layer_count: 4,
                ..base
            },
            Task::Shot => Self {
                conditional: true,
                ..base
            },
            Task::Generate => Self {
                learning_rate: 5e-5,
                l2: 1e-4,
                symmetry_mode: SymmetryMode::None,
                conditional: true,
                team_side: Some(Team::Defending),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad(format!("eval_fraction must be in [0, 1), got {}", self.eval_fraction));
        }
        if self.task == Task::Generate && self.symmetry_mode != SymmetryMode::None {
            return bad("generators read the identity view only; symmetry_mode must be none".into());
        }
        self.model_spec().validate()?;
        self.model_spec().encoder.validate().map_err(crate::heads::HeadError::from)?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let global_width = match self.task {
            Task::Receiver => 0,
            Task::Shot if self.conditional => PLAYER_COUNT,
            Task::Shot => 0,
            Task::Generate => PLAYER_COUNT + 1,
        };
        ModelSpec {
            task: self.task,
            encoder: EncoderConfig {
                layer_count: self.layer_count,
                base_layer: self.base_layer,
                symmetry_mode: self.symmetry_mode,
                global_width,
                ..EncoderConfig::receiver()
            },
            conditional: self.conditional || self.task == Task::Generate,
            team_side: self.team_side.filter(|_| self.task == Task::Generate),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            l2_coefficient: self.l2,
        }
    }
}
