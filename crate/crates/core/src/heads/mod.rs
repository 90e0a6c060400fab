//! Task decoders on top of the encoder: receiver classification,
//! receiver-conditioned shot prediction, and the outcome-conditional VAE
//! that proposes player adjustments.

mod report;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{top_k, AdjustmentSample, PredictionReport, ReceiverShot};

use crate::autodiff::{AutodiffError, DenseArray, ParamId, ParamStore, Tape, Var};
use crate::cornergraph::{CornerError, CornerGraph, GlobalFeatures, PlayerNode, Team, PLAYER_COUNT};
use crate::gnn::{Encoder, EncoderConfig, GnnError, GraphInputs, Perceptron};

/// Per-player Gaussian latent dimension of the generator.
pub const GENERATOR_LATENT: usize = 2;
const DECODER_HIDDEN: usize = 16;
/// Kinematic outputs per player: x, y, vx, vy.
const KINEMATICS: usize = 4;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corner(#[from] CornerError),
    #[error("model is trained for `{found}`, expected `{expected}`")]
    TaskMismatch { expected: String, found: String },
    #[error("corner `{id}` lacks the `{field}` label")]
    MissingLabel { id: String, field: &'static str },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Receiver,
    Shot,
    Generate,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Receiver => "receiver",
            Task::Shot => "shot",
            Task::Generate => "generate",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "receiver" => Ok(Task::Receiver),
            "shot" => Ok(Task::Shot),
            "generate" | "generation" => Ok(Task::Generate),
            other => Err(HeadError::Invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: Task,
    pub encoder: EncoderConfig,
    /// Shot models only: feed the receiver one-hot as a global feature.
    pub conditional: bool,
    /// Generators only: the team whose players are regenerated.
    pub team_side: Option<Team>,
}

impl ModelSpec {
    pub fn receiver() -> Self {
        Self {
            task: Task::Receiver,
            encoder: EncoderConfig::receiver(),
            conditional: false,
            team_side: None,
        }
    }

    pub fn shot() -> Self {
        Self {
            task: Task::Shot,
            encoder: EncoderConfig::shot(),
            conditional: true,
            team_side: None,
        }
    }

    pub fn generator(team: Team) -> Self {
        Self {
            task: Task::Generate,
            encoder: EncoderConfig::generation(),
            conditional: true,
            team_side: Some(team),
        }
    }

    /// Global feature width implied by the task.
    pub fn global_width(&self) -> usize {
        match self.task {
            Task::Receiver => 0,
            Task::Shot if self.conditional => PLAYER_COUNT,
            Task::Shot => 0,
            Task::Generate => PLAYER_COUNT + 1,
        }
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        if self.encoder.global_width != self.global_width() {
            return Err(HeadError::Invalid(format!(
                "{} model needs global width {}, encoder has {}",
                self.task,
                self.global_width(),
                self.encoder.global_width
            )));
        }
        if (self.task == Task::Generate) != self.team_side.is_some() {
            return Err(HeadError::Invalid("team_side is required for, and only for, generators".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LinearHead {
    w: ParamId,
    b: ParamId,
}

impl LinearHead {
    fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: store.glorot(format!("{prefix}.w"), &[input, output], input, output, rng),
            b: store.zeros(format!("{prefix}.b"), &[output]),
        }
    }

    fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, HeadError> {
        let (w, b) = (t.param(store, self.w), t.param(store, self.b));
        let y = t.matmul(x, w)?;
        Ok(t.add(y, b)?)
    }
}

#[derive(Clone, Debug)]
enum Decoder {
    Receiver(LinearHead),
    Shot(LinearHead),
    Generator { mean: LinearHead, log_sigma: LinearHead, decoder: Perceptron },
}

/// An encoder plus task decoder and the parameters they read.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    encoder: Encoder,
    decoder: Decoder,
    store: ParamStore,
}

/// Encoder inputs and per-graph globals for a batch.
pub struct Batch<'a> {
    pub graphs: Vec<&'a CornerGraph>,
    pub globals: Vec<GlobalFeatures>,
}

impl Model {
    /// Seeded initialization.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, HeadError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(spec.encoder, &mut store, "encoder", &mut rng)?;
        let d = spec.encoder.latent_width;
        let decoder = match spec.task {
            Task::Receiver => Decoder::Receiver(LinearHead::new(&mut store, "head", d, 1, &mut rng)),
            Task::Shot => Decoder::Shot(LinearHead::new(&mut store, "head", d, 1, &mut rng)),
            Task::Generate => Decoder::Generator {
                mean: LinearHead::new(&mut store, "latent.mean", d, GENERATOR_LATENT, &mut rng),
                log_sigma: LinearHead::new(&mut store, "latent.log_sigma", d, GENERATOR_LATENT, &mut rng),
                decoder: Perceptron::new(&mut store, "decoder", GENERATOR_LATENT + 2, DECODER_HIDDEN, KINEMATICS, &mut rng),
            },
        };
        Ok(Self {
            spec,
            encoder,
            decoder,
            store,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn task(&self) -> Task {
        self.spec.task
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Names of the decoder's output parameters, e.g. to zero them.
    pub fn head_param_names(&self) -> Vec<String> {
        let ids = match &self.decoder {
            Decoder::Receiver(h) | Decoder::Shot(h) => vec![h.w, h.b],
            Decoder::Generator { mean, log_sigma, .. } => vec![mean.w, mean.b, log_sigma.w, log_sigma.b],
        };
        ids.into_iter().map(|id| self.store.name(id).to_string()).collect()
    }

    pub fn expect_task(&self, task: Task) -> Result<(), HeadError> {
        if self.spec.task != task {
            return Err(HeadError::TaskMismatch {
                expected: task.to_string(),
                found: self.spec.task.to_string(),
            });
        }
        Ok(())
    }

    fn inputs(&self, batch: &Batch<'_>, views: usize) -> Result<GraphInputs, HeadError> {
        Ok(GraphInputs::new(&batch.graphs, &batch.globals, views)?)
    }

    /// Training batch: ground-truth receivers (and shot flags for
    /// generators) become the globals the task expects.
    pub fn labelled_batch<'a>(&self, graphs: &[&'a CornerGraph]) -> Result<Batch<'a>, HeadError> {
        let globals = graphs
            .iter()
            .map(|c| {
                Ok(match self.spec.global_width() {
                    0 => GlobalFeatures::none(),
                    w if w == PLAYER_COUNT => GlobalFeatures::for_shot(receiver_label(c)?)?,
                    _ => GlobalFeatures::for_generation(receiver_label(c)?, shot_label(c)?)?,
                })
            })
            .collect::<Result<Vec<_>, HeadError>>()?;
        Ok(Batch {
            graphs: graphs.to_vec(),
            globals,
        })
    }

    /// Receiver logits `[batch, 22]`.
    pub fn receiver_logits(&self, t: &mut Tape, batch: &Batch<'_>) -> Result<Var, HeadError> {
        let Decoder::Receiver(head) = &self.decoder else {
            return Err(self.mismatch(Task::Receiver));
        };
        let inputs = self.inputs(batch, self.spec.encoder.view_count())?;
        let out = self.encoder.forward(t, &self.store, &inputs)?;
        let nodes = self.encoder.node_matrix(t, out)?;
        let logits = head.forward(t, &self.store, nodes)?;
        Ok(t.reshape(logits, &[inputs.batch, PLAYER_COUNT])?)
    }

    /// Shot logits `[batch]` from the player-averaged node matrix.
    pub fn shot_logits(&self, t: &mut Tape, batch: &Batch<'_>) -> Result<Var, HeadError> {
        let Decoder::Shot(head) = &self.decoder else {
            return Err(self.mismatch(Task::Shot));
        };
        let inputs = self.inputs(batch, self.spec.encoder.view_count())?;
        let out = self.encoder.forward(t, &self.store, &inputs)?;
        let nodes = self.encoder.node_matrix(t, out)?;
        let pooled = t.mean_axis(nodes, 1)?;
        let logits = head.forward(t, &self.store, pooled)?;
        Ok(t.reshape(logits, &[inputs.batch])?)
    }

    /// Mean softmax cross-entropy against the labelled receivers.
    pub fn receiver_loss(&self, t: &mut Tape, graphs: &[&CornerGraph]) -> Result<Var, HeadError> {
        let batch = self.labelled_batch(graphs)?;
        let logits = self.receiver_logits(t, &batch)?;
        let mut onehot = vec![0.0; graphs.len() * PLAYER_COUNT];
        for (i, c) in graphs.iter().enumerate() {
            onehot[i * PLAYER_COUNT + receiver_label(c)?] = 1.0;
        }
        let target = t.constant(DenseArray::new(vec![graphs.len(), PLAYER_COUNT], onehot)?);
        let logp = t.log_softmax(logits)?;
        let picked = t.mul(logp, target)?;
        let total = t.sum(picked)?;
        Ok(t.scale(total, -1.0 / graphs.len() as f64)?)
    }

    /// Mean sigmoid binary cross-entropy against the shot labels.
    pub fn shot_loss(&self, t: &mut Tape, graphs: &[&CornerGraph]) -> Result<Var, HeadError> {
        let batch = self.labelled_batch(graphs)?;
        let logits = self.shot_logits(t, &batch)?;
        let labels = graphs.iter().map(|c| Ok(shot_label(c)? as u8 as f64)).collect::<Result<Vec<_>, HeadError>>()?;
        let y = t.constant(DenseArray::vector(labels));
        let sp = t.softplus(logits)?;
        let yz = t.mul(logits, y)?;
        let per = t.sub(sp, yz)?;
        Ok(t.mean(per)?)
    }

    /// Gaussian parameters `(mean, log_sigma)`, each `[batch, 22, 2]`,
    /// from the identity view.
    fn posterior(&self, t: &mut Tape, batch: &Batch<'_>) -> Result<(Var, Var), HeadError> {
        let Decoder::Generator { mean, log_sigma, .. } = &self.decoder else {
            return Err(self.mismatch(Task::Generate));
        };
        let inputs = self.inputs(batch, 1)?;
        let out = self.encoder.forward(t, &self.store, &inputs)?;
        let h = t.reshape(out, &[inputs.batch, PLAYER_COUNT, self.spec.encoder.latent_width])?;
        Ok((mean.forward(t, &self.store, h)?, log_sigma.forward(t, &self.store, h)?))
    }

    /// Decodes latents `[batch, 22, 2]` under the batch's conditioning into
    /// `[batch, 22, 4]` kinematics.
    fn decode(&self, t: &mut Tape, z: Var, batch: &Batch<'_>) -> Result<Var, HeadError> {
        let Decoder::Generator { decoder, .. } = &self.decoder else {
            return Err(self.mismatch(Task::Generate));
        };
        let b = batch.graphs.len();
        let mut cond = Vec::with_capacity(b * PLAYER_COUNT * 2);
        for g in &batch.globals {
            let onehot = g.receiver_onehot.as_ref().ok_or_else(|| HeadError::Invalid("generator globals need a receiver".into()))?;
            let outcome = g.shot_indicator.ok_or_else(|| HeadError::Invalid("generator globals need an outcome".into()))?;
            for r in onehot {
                cond.extend([outcome, *r]);
            }
        }
        let cond = t.constant(DenseArray::new(vec![b, PLAYER_COUNT, 2], cond)?);
        let joined = t.concat(&[z, cond])?;
        Ok(decoder.forward(t, &self.store, joined)?)
    }

    fn team_mask(&self) -> Result<DenseArray, HeadError> {
        let team = self.spec.team_side.ok_or_else(|| self.mismatch(Task::Generate))?;
        let data = (0..PLAYER_COUNT).map(|i| (Team::of_index(i) == team) as u8 as f64).collect();
        Ok(DenseArray::new(vec![PLAYER_COUNT, 1], data)?)
    }

    /// Outcome-conditional VAE loss averaged over the batch: squared
    /// reconstruction error of the team's kinematics plus the closed-form
    /// KL to the unit Gaussian, both summed over the team's players.
    /// `noise` holds the `[batch, 22, 2]` reparameterisation draws.
    pub fn cvae_loss(&self, t: &mut Tape, graphs: &[&CornerGraph], noise: &DenseArray) -> Result<Var, HeadError> {
        let batch = self.labelled_batch(graphs)?;
        let (mu, log_sigma) = self.posterior(t, &batch)?;
        let sigma = t.exp(log_sigma)?;
        let eps = t.constant(noise.clone());
        let spread = t.mul(sigma, eps)?;
        let z = t.add(mu, spread)?;
        let recon = self.decode(t, z, &batch)?;
        let truth: Vec<f64> = graphs.iter().flat_map(|c| c.players().iter().flat_map(|p| [p.x, p.y, p.vx, p.vy])).collect();
        let truth = t.constant(DenseArray::new(vec![graphs.len(), PLAYER_COUNT, KINEMATICS], truth)?);
        let mask = t.constant(self.team_mask()?);
        let diff = t.sub(recon, truth)?;
        let sq = t.square(diff)?;
        let sq = t.mul(sq, mask)?;
        let recon_loss = t.sum(sq)?;
        let kl = kl_terms(t, mu, log_sigma)?;
        let kl = t.mul(kl, mask)?;
        let kl_loss = t.sum(kl)?;
        let total = t.add(recon_loss, kl_loss)?;
        Ok(t.scale(total, 1.0 / graphs.len() as f64)?)
    }

    fn mismatch(&self, expected: Task) -> HeadError {
        HeadError::TaskMismatch {
            expected: expected.to_string(),
            found: self.spec.task.to_string(),
        }
    }

    /// Loss the model is trained on, for any task. Generators draw their
    /// reparameterisation noise from `noise_seed`.
    pub fn loss(&self, t: &mut Tape, graphs: &[&CornerGraph], noise_seed: u64) -> Result<Var, HeadError> {
        match self.spec.task {
            Task::Receiver => self.receiver_loss(t, graphs),
            Task::Shot => self.shot_loss(t, graphs),
            Task::Generate => {
                let noise = standard_normal(&[graphs.len(), PLAYER_COUNT, GENERATOR_LATENT], noise_seed);
                self.cvae_loss(t, graphs, &noise)
            }
        }
    }

    /// Receiver probabilities for each graph, without gradients.
    pub fn receiver_probs(&self, graphs: &[&CornerGraph]) -> Result<Vec<Vec<f64>>, HeadError> {
        self.expect_task(Task::Receiver)?;
        let batch = Batch {
            graphs: graphs.to_vec(),
            globals: vec![GlobalFeatures::none(); graphs.len()],
        };
        let mut t = Tape::new();
        let logits = self.receiver_logits(&mut t, &batch)?;
        let probs = t.softmax(logits)?;
        Ok(t.value(probs).data().chunks(PLAYER_COUNT).map(<[f64]>::to_vec).collect())
    }

    /// Shot probabilities under explicit globals (receiver one-hots for
    /// conditional models).
    pub fn shot_probs(&self, batch: &Batch<'_>) -> Result<Vec<f64>, HeadError> {
        self.expect_task(Task::Shot)?;
        let mut t = Tape::new();
        let logits = self.shot_logits(&mut t, batch)?;
        let p = t.sigmoid(logits)?;
        Ok(t.value(p).data().to_vec())
    }
}

/// Elementwise `0.5 (mu^2 + sigma^2 - 1 - 2 log sigma)`.
pub fn kl_terms(t: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var, AutodiffError> {
    let mu2 = t.square(mu)?;
    let two_ls = t.scale(log_sigma, 2.0)?;
    let var = t.exp(two_ls)?;
    let a = t.add(mu2, var)?;
    let b = t.sub(a, two_ls)?;
    let c = t.offset(b, -1.0)?;
    t.scale(c, 0.5)
}

/// Closed-form KL of a diagonal Gaussian against the unit Gaussian.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter().zip(sigma).map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln())).sum()
}

pub fn standard_normal(shape: &[usize], seed: u64) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    DenseArray::new(shape.to_vec(), data).expect("shape matches count")
}

fn receiver_label(c: &CornerGraph) -> Result<usize, HeadError> {
    c.receiver_index().ok_or_else(|| HeadError::MissingLabel {
        id: c.id().to_string(),
        field: "receiver_index",
    })
}

fn shot_label(c: &CornerGraph) -> Result<bool, HeadError> {
    c.shot_taken().ok_or_else(|| HeadError::MissingLabel {
        id: c.id().to_string(),
        field: "shot_taken",
    })
}

/// Receiver distribution and top-3 for one corner.
pub fn predict_receiver(c: &CornerGraph, model: &Model) -> Result<PredictionReport, HeadError> {
    let probs = model.receiver_probs(&[c])?.remove(0);
    Ok(PredictionReport::receiver(probs))
}

/// `P(shot | receiver)` for one corner.
pub fn predict_shot_conditional(c: &CornerGraph, receiver: usize, model: &Model) -> Result<f64, HeadError> {
    if !model.spec().conditional {
        return Err(HeadError::Invalid("shot model is not receiver-conditioned".into()));
    }
    let batch = Batch {
        graphs: vec![c],
        globals: vec![GlobalFeatures::for_shot(receiver)?],
    };
    Ok(model.shot_probs(&batch)?[0])
}

/// Conditional shot probabilities for all 22 receivers at once.
pub fn shot_given_each_receiver(c: &CornerGraph, model: &Model) -> Result<Vec<f64>, HeadError> {
    if !model.spec().conditional {
        return Err(HeadError::Invalid("shot model is not receiver-conditioned".into()));
    }
    let batch = Batch {
        graphs: vec![c; PLAYER_COUNT],
        globals: (0..PLAYER_COUNT).map(GlobalFeatures::for_shot).collect::<Result<_, _>>()?,
    };
    model.shot_probs(&batch)
}

/// `sum_i P(shot | receiver = i) P(receiver = i)`.
pub fn decompose_shot(receiver_probs: &[f64], conditionals: &[f64]) -> f64 {
    receiver_probs.iter().zip(conditionals).map(|(p, q)| p * q).sum()
}

/// Shot probability marginalised over every possible receiver.
pub fn predict_shot(c: &CornerGraph, receiver_model: &Model, shot_model: &Model) -> Result<PredictionReport, HeadError> {
    let probs = receiver_model.receiver_probs(&[c])?.remove(0);
    let conditionals = shot_given_each_receiver(c, shot_model)?;
    Ok(PredictionReport::shot(probs, conditionals))
}

/// Sampling controls for [`generate_adjustment`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Multiplies the posterior spread; 0 decodes the mean.
    pub noise_scale: f64,
}

/// Resamples the generator team's positions and velocities conditioned on
/// `desired_outcome`, leaving everything else bit-identical. The receiver
/// conditioning is the corner's label when present, otherwise the
/// receiver model's most likely player.
pub fn generate_adjustment(
    c: &CornerGraph,
    desired_outcome: bool,
    options: SampleOptions,
    generator: &Model,
    receiver_model: &Model,
    shot_model: &Model,
) -> Result<PredictionReport, HeadError> {
    let samples = sample_adjustments(c, desired_outcome, options, generator, receiver_model)?;
    let before = predict_shot(c, receiver_model, shot_model)?.shot_prob.expect("shot report");
    let adjustments = samples
        .into_iter()
        .map(|s| {
            let p = predict_shot(&s, receiver_model, shot_model)?.shot_prob.expect("shot report");
            Ok(AdjustmentSample {
                players: s.players().to_vec(),
                p_shot: p,
            })
        })
        .collect::<Result<Vec<_>, HeadError>>()?;
    Ok(PredictionReport::generation(
        generator.spec().team_side.expect("generator"),
        desired_outcome,
        before,
        adjustments,
    ))
}

/// The sampled corners behind [`generate_adjustment`].
pub fn sample_adjustments(
    c: &CornerGraph,
    desired_outcome: bool,
    options: SampleOptions,
    generator: &Model,
    receiver_model: &Model,
) -> Result<Vec<CornerGraph>, HeadError> {
    generator.expect_task(Task::Generate)?;
    if options.n_samples < 1 {
        return Err(HeadError::Invalid("n_samples must be at least 1".into()));
    }
    if !(options.noise_scale.is_finite() && options.noise_scale >= 0.0) {
        return Err(HeadError::Invalid("noise_scale must be non-negative".into()));
    }
    let receiver = match c.receiver_index() {
        Some(r) => r,
        None => top_k(&receiver_model.receiver_probs(&[c])?[0], 1)[0],
    };
    let team = generator.spec().team_side.expect("validated generator");
    let n = options.n_samples;
    let batch = Batch {
        graphs: vec![c; n],
        globals: vec![GlobalFeatures::for_generation(receiver, desired_outcome)?; n],
    };
    let mut t = Tape::new();
    let (mu, log_sigma) = generator.posterior(&mut t, &batch)?;
    let sigma = t.exp(log_sigma)?;
    let mut noise = standard_normal(&[n, PLAYER_COUNT, GENERATOR_LATENT], options.seed);
    noise.data_mut().iter_mut().for_each(|x| *x *= options.noise_scale);
    let eps = t.constant(noise);
    let spread = t.mul(sigma, eps)?;
    let z = t.add(mu, spread)?;
    let out = generator.decode(&mut t, z, &batch)?;
    let data = t.value(out).data();
    let rows: Arc<[usize]> = team.indices().collect::<Vec<_>>().into();
    (0..n)
        .map(|s| {
            let players: Vec<PlayerNode> = c
                .players()
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if !rows.contains(&i) {
                        return *p;
                    }
                    let k = &data[(s * PLAYER_COUNT + i) * KINEMATICS..(s * PLAYER_COUNT + i + 1) * KINEMATICS];
                    PlayerNode {
                        x: k[0],
                        y: k[1],
                        vx: k[2],
                        vy: k[3],
                        ..*p
                    }
                })
                .collect();
            Ok(c.with_id(format!("{}-gen{s}", c.id())).with_players(players)?)
        })
        .collect()
}
