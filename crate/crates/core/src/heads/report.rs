use serde::{Deserialize, Serialize};

use super::{decompose_shot, Task};
use crate::cornergraph::{PlayerNode, Team};

/// Indices of the `k` largest probabilities, ties broken by ascending index.
pub fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverShot {
    pub index: usize,
    pub p_receiver: f64,
    pub p_shot_given_receiver: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentSample {
    pub players: Vec<PlayerNode>,
    /// Marginal shot probability of the adjusted corner.
    pub p_shot: f64,
}

/// What a prediction or generation request returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top3: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_receiver: Option<Vec<ReceiverShot>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team_side: Option<Team>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_outcome: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_shot_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<AdjustmentSample>>,
}

impl PredictionReport {
    fn empty(task: Task) -> Self {
        Self {
            task,
            receiver_probs: None,
            top3: None,
            shot_prob: None,
            per_receiver: None,
            team_side: None,
            desired_outcome: None,
            p_shot_before: None,
            samples: None,
        }
    }

    pub fn receiver(probs: Vec<f64>) -> Self {
        Self {
            top3: Some(top_k(&probs, 3)),
            receiver_probs: Some(probs),
            ..Self::empty(Task::Receiver)
        }
    }

    pub fn shot(receiver_probs: Vec<f64>, conditionals: Vec<f64>) -> Self {
        let per_receiver = receiver_probs
            .iter()
            .zip(&conditionals)
            .enumerate()
            .map(|(index, (p, q))| ReceiverShot {
                index,
                p_receiver: *p,
                p_shot_given_receiver: *q,
            })
            .collect();
        Self {
            shot_prob: Some(decompose_shot(&receiver_probs, &conditionals)),
            per_receiver: Some(per_receiver),
            top3: Some(top_k(&receiver_probs, 3)),
            receiver_probs: Some(receiver_probs),
            ..Self::empty(Task::Shot)
        }
    }

    pub fn generation(team: Team, desired_outcome: bool, before: f64, samples: Vec<AdjustmentSample>) -> Self {
        Self {
            team_side: Some(team),
            desired_outcome: Some(desired_outcome),
            p_shot_before: Some(before),
            samples: Some(samples),
            ..Self::empty(Task::Generate)
        }
    }
}
