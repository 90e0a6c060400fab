use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{binary_scores, mean_std, HarnessError};
use crate::autodiff::{AdamConfig, AdamState, DenseArray, ParamStore, Tape};
use crate::cornergraph::{CornerGraph, NODE_FEATURES, PLAYER_COUNT};
use crate::gnn::Perceptron;
use crate::heads::{predict_shot, sample_adjustments, Model, SampleOptions};

const PROBE_HIDDEN: usize = 16;
const PROBE_STEPS: usize = 300;
const PROBE_LR: f64 = 1e-2;
const PROBE_L2: f64 = 1e-2;
/// Share of pairs held out for scoring the probe.
const PROBE_TEST_SHARE: f64 = 0.3;
pub const SHIFT_MIN_SAMPLES: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains a two-layer perceptron to tell generated corners (positive)
/// from real ones and scores it on held-out corners. Pairs `(real[i],
/// generated[i])` are split together; each held-out pair contributes only
/// one side, so a corner and its own adjustment are never scored together.
pub fn realism_probe(real: &[CornerGraph], generated: &[CornerGraph], seed: u64) -> Result<RealismReport, HarnessError> {
    if real.len() != generated.len() {
        return Err(HarnessError::Config(format!(
            "realism probe needs equal class sizes, got {} real and {} generated",
            real.len(),
            generated.len()
        )));
    }
    if real.len() < 4 {
        return Err(HarnessError::Config("realism probe needs at least 4 pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<usize> = (0..real.len()).collect();
    pairs.shuffle(&mut rng);
    let n_test = ((real.len() as f64 * PROBE_TEST_SHARE).round() as usize).clamp(2, real.len() - 2) & !1;
    let (test_pairs, train_pairs) = pairs.split_at(n_test);

    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    for &i in train_pairs {
        train_x.push(real[i].node_features());
        train_y.push(0.0);
        train_x.push(generated[i].node_features());
        train_y.push(1.0);
    }
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    for (k, &i) in test_pairs.iter().enumerate() {
        let generated_side = k % 2 == 1;
        test_x.push(if generated_side { &generated[i] } else { &real[i] }.node_features());
        test_y.push(generated_side);
    }

    // Standardise with training statistics.
    let width = PLAYER_COUNT * NODE_FEATURES;
    let mut mean = vec![0.0; width];
    let mut scale = vec![0.0; width];
    for x in &train_x {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / train_x.len() as f64;
        }
    }
    for x in &train_x {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2) / train_x.len() as f64;
        }
    }
    let scale: Vec<f64> = scale.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    let standardise = |rows: &[Vec<f64>]| -> Result<DenseArray, HarnessError> {
        let data = rows.iter().flat_map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s)).collect();
        Ok(DenseArray::new(vec![rows.len(), width], data)?)
    };
    let train_x = standardise(&train_x)?;
    let test_x = standardise(&test_x)?;
    let train_y = DenseArray::vector(train_y);

    let mut store = ParamStore::new();
    let mlp = Perceptron::new(&mut store, "probe", width, PROBE_HIDDEN, 1, &mut rng);
    // Weight decay on the two weight matrices; biases stay free.
    let weights: Vec<_> = store.ids().filter(|id| store.name(*id).ends_with(".w1") || store.name(*id).ends_with(".w2")).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: PROBE_LR,
            ..AdamConfig::default()
        },
        &store,
    )?;
    let rows = train_x.shape()[0];
    for _ in 0..PROBE_STEPS {
        let mut t = Tape::new();
        let x = t.constant(train_x.clone());
        let z = mlp.forward(&mut t, &store, x).map_err(crate::heads::HeadError::from)?;
        let z = t.reshape(z, &[rows])?;
        let y = t.constant(train_y.clone());
        let sp = t.softplus(z)?;
        let yz = t.mul(z, y)?;
        let per = t.sub(sp, yz)?;
        let mut loss = t.mean(per)?;
        for id in &weights {
            let w = t.param(&store, *id);
            let sq = t.square(w)?;
            let s = t.sum(sq)?;
            let s = t.scale(s, PROBE_L2)?;
            loss = t.add(loss, s)?;
        }
        t.backward(loss)?;
        store.zero_grads();
        store.accumulate(&t, 1.0);
        adam.step(&mut store)?;
    }
    let mut t = Tape::new();
    let x = t.constant(test_x);
    let z = mlp.forward(&mut t, &store, x).map_err(crate::heads::HeadError::from)?;
    let scores = t.value(z).data().to_vec();
    // The held-out set is balanced, so the top-scoring half is called
    // generated (ties by position).
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut calls = vec![0.0; scores.len()];
    for &i in &order[..scores.len() / 2] {
        calls[i] = 1.0;
    }
    let s = binary_scores(&calls, &test_y);
    Ok(RealismReport {
        f1: s.f1,
        precision: s.precision,
        recall: s.recall,
        n_train: rows,
        n_test: test_y.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub n: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    /// Paired z statistic of `after - before`; 0 when nothing moved.
    pub z: f64,
    /// Share of corners whose shot probability moved towards the desired
    /// outcome.
    pub toward_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Compares shot probabilities before and after adjustment. Each corner's
/// "after" value is the mean over its adjusted samples.
pub fn shift_probe(
    corners: &[CornerGraph],
    desired_outcome: bool,
    mut adjust: impl FnMut(&CornerGraph) -> Result<Vec<CornerGraph>, HarnessError>,
    mut shot_probability: impl FnMut(&CornerGraph) -> Result<f64, HarnessError>,
) -> Result<ShiftReport, HarnessError> {
    if corners.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut before = Vec::with_capacity(corners.len());
    let mut after = Vec::with_capacity(corners.len());
    for c in corners {
        before.push(shot_probability(c)?);
        let samples = adjust(c)?;
        if samples.is_empty() {
            return Err(HarnessError::Config("adjustment produced no samples".into()));
        }
        let mut total = 0.0;
        for s in &samples {
            total += shot_probability(s)?;
        }
        after.push(total / samples.len() as f64);
    }
    let diffs: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
    let (mean_diff, sd) = mean_std(&diffs);
    let n = corners.len();
    let z = if diffs.iter().all(|d| *d == 0.0) {
        0.0
    } else {
        mean_diff / (sd / (n as f64).sqrt())
    };
    let toward = diffs.iter().filter(|d| if desired_outcome { **d > 0.0 } else { **d < 0.0 }).count();
    Ok(ShiftReport {
        n,
        mean_before: mean_std(&before).0,
        mean_after: mean_std(&after).0,
        z,
        toward_fraction: toward as f64 / n as f64,
        warning: (n < SHIFT_MIN_SAMPLES).then(|| format!("only {n} corners; the z statistic is unreliable below {SHIFT_MIN_SAMPLES}")),
    })
}

/// [`shift_probe`] with a trained generator and the marginal shot pipeline.
pub fn generation_shift_probe(
    corners: &[CornerGraph],
    desired_outcome: bool,
    options: SampleOptions,
    generator: &Model,
    receiver_model: &Model,
    shot_model: &Model,
) -> Result<ShiftReport, HarnessError> {
    shift_probe(
        corners,
        desired_outcome,
        |c| Ok(sample_adjustments(c, desired_outcome, options, generator, receiver_model)?),
        |c| Ok(predict_shot(c, receiver_model, shot_model)?.shot_prob.expect("shot report carries a probability")),
    )
}
