//! Encoders over corner graphs.
//!
//! Every encoder consumes a batch of graphs laid out as `[views, batch, 22,
//! 8]` node features plus optional per-graph globals, and produces
//! `[views, batch, 22, latent]`. The symmetry mode decides how the four
//! reflected views interact:
//!
//! - `none`: only the identity view matters downstream.
//! - `frame_averaging`: views run independently and are averaged at the end.
//! - `group_convolution`: every layer pairs view `g` with each view `g.h`
//!   and averages over `h`, so reflecting the input permutes the views.

mod layers;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{pair_types, BaseLayer, BaseLayerKind, Gatv2Layer, LayerShape, MessageLayer, Perceptron};

use crate::autodiff::{AutodiffError, DenseArray, ParamStore, Tape, Var};
use crate::cornergraph::{apply, CornerError, CornerGraph, D2Element, GlobalFeatures, NODE_FEATURES, PLAYER_COUNT};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corner(#[from] CornerError),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("global feature width {found} does not match the encoder's {expected}")]
    GlobalWidth { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryMode {
    None,
    FrameAveraging,
    GroupConvolution,
}

impl SymmetryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SymmetryMode::None => "none",
            SymmetryMode::FrameAveraging => "frame_averaging",
            SymmetryMode::GroupConvolution => "group_convolution",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layer_count: usize,
    pub base_layer: BaseLayerKind,
    pub symmetry_mode: SymmetryMode,
    /// Width of the per-graph global vector (0, 22 or 23).
    pub global_width: usize,
    pub heads: usize,
    pub latent_width: usize,
    /// Per-head width of the attention scoring perceptron.
    pub attention_width: usize,
    /// Hidden width of update and message perceptrons.
    pub hidden_width: usize,
}

impl EncoderConfig {
    pub fn receiver() -> Self {
        Self {
            layer_count: 4,
            base_layer: BaseLayerKind::Gatv2,
            symmetry_mode: SymmetryMode::GroupConvolution,
            global_width: 0,
            heads: 8,
            latent_width: 4,
            attention_width: 4,
            hidden_width: 16,
        }
    }

    pub fn shot() -> Self {
        Self {
            layer_count: 2,
            global_width: PLAYER_COUNT,
            ..Self::receiver()
        }
    }

    /// Generators only ever read the identity view.
    pub fn generation() -> Self {
        Self {
            layer_count: 2,
            global_width: PLAYER_COUNT + 1,
            symmetry_mode: SymmetryMode::None,
            ..Self::receiver()
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let positive = [
            ("layer_count", self.layer_count),
            ("heads", self.heads),
            ("latent_width", self.latent_width),
            ("attention_width", self.attention_width),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GnnError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Per-node input width: the node features plus the receiver marker
    /// whenever the globals carry a receiver one-hot.
    pub fn node_input_width(&self) -> usize {
        NODE_FEATURES + (self.global_width >= PLAYER_COUNT) as usize
    }

    /// Number of views the encoder needs to see.
    pub fn view_count(&self) -> usize {
        match self.symmetry_mode {
            SymmetryMode::None => 1,
            _ => 4,
        }
    }
}

/// Constant inputs for a batch of graphs.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    /// `[views, batch, 22, k]`; view `g` holds `apply(g, c)`. `k` is 8,
    /// plus a receiver marker column when the globals name a receiver.
    pub nodes: DenseArray,
    /// `[batch, m]`, absent when the task has no globals.
    pub globals: Option<DenseArray>,
    pub views: usize,
    pub batch: usize,
}

impl GraphInputs {
    /// Builds the first `views` reflected views (1 or 4) of every graph.
    /// Reflections leave globals untouched, so they are stored once.
    pub fn new(graphs: &[&CornerGraph], globals: &[GlobalFeatures], views: usize) -> Result<Self, GnnError> {
        if graphs.is_empty() || graphs.len() != globals.len() || !(views == 1 || views == 4) {
            return Err(GnnError::Config(format!(
                "batch of {} graphs with {} global vectors and {} views",
                graphs.len(),
                globals.len(),
                views
            )));
        }
        let batch = graphs.len();
        // A receiver one-hot is also scattered onto the nodes as a marker
        // column: the layers are permutation equivariant, so a graph-level
        // index alone could not single out the player it names.
        let markers: Option<Vec<&[f64]>> = globals.iter().map(|g| g.receiver_onehot.as_deref()).collect();
        let width = NODE_FEATURES + markers.is_some() as usize;
        let mut nodes = Vec::with_capacity(views * batch * PLAYER_COUNT * width);
        for g in &D2Element::ALL[..views] {
            for (b, c) in graphs.iter().enumerate() {
                let features = apply(*g, c).node_features();
                for (u, row) in features.chunks(NODE_FEATURES).enumerate() {
                    nodes.extend_from_slice(row);
                    if let Some(m) = &markers {
                        nodes.push(m[b][u]);
                    }
                }
            }
        }
        let node_width = width;
        let width = globals[0].width();
        let globals = if width == 0 {
            None
        } else {
            let mut data = Vec::with_capacity(batch * width);
            for g in globals {
                g.validate()?;
                if g.width() != width {
                    return Err(GnnError::GlobalWidth { expected: width, found: g.width() });
                }
                data.extend(g.to_vec());
            }
            Some(DenseArray::new(vec![batch, width], data)?)
        };
        Ok(Self {
            nodes: DenseArray::new(vec![views, batch, PLAYER_COUNT, node_width], nodes)?,
            globals,
            views,
            batch,
        })
    }

    pub fn global_width(&self) -> usize {
        self.globals.as_ref().map_or(0, |g| g.shape()[1])
    }

    pub fn node_width(&self) -> usize {
        self.nodes.shape()[3]
    }
}

/// A stack of base layers with a symmetry mode.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    layers: Vec<BaseLayer>,
}

/// Row indices into a `[4, ...]` bundle pairing output view `g` with every
/// `h`: left operand `g`, right operand `g.h`. Reflecting the input
/// relabels view `k` as `k.s`, which maps the pairs of `g` onto those of
/// `g.s`, so the output views permute with the input.
fn group_pairs() -> (Arc<[usize]>, Arc<[usize]>) {
    let mut left = Vec::with_capacity(16);
    let mut right = Vec::with_capacity(16);
    for g in D2Element::ALL {
        for h in D2Element::ALL {
            left.push(g.index());
            right.push(g.compose(h).index());
        }
    }
    (left.into(), right.into())
}

/// Mean over four row blocks as `((r0 + r1) + (r2 + r3)) / 4`, picking row
/// `stride * j + offset` for each output row `j`. Summing in pairs makes
/// the result bit-identical under any D2 relabelling of the four terms.
fn pairwise_mean4(t: &mut Tape, x: Var, outputs: usize, stride: usize) -> Result<Var, GnnError> {
    let pick = |t: &mut Tape, k: usize| -> Result<Var, GnnError> {
        let rows: Arc<[usize]> = (0..outputs).map(|j| stride * j + k).collect::<Vec<_>>().into();
        Ok(t.select_rows(x, rows)?)
    };
    let (r0, r1, r2, r3) = (pick(t, 0)?, pick(t, 1)?, pick(t, 2)?, pick(t, 3)?);
    let a = t.add(r0, r1)?;
    let b = t.add(r2, r3)?;
    let s = t.add(a, b)?;
    Ok(t.scale(s, 0.25)?)
}

impl Encoder {
    pub fn new<R: Rng>(config: EncoderConfig, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self, GnnError> {
        config.validate()?;
        let group = config.symmetry_mode == SymmetryMode::GroupConvolution;
        let layers = (0..config.layer_count)
            .map(|i| {
                let width = if i == 0 { config.node_input_width() } else { config.latent_width };
                let shape = LayerShape {
                    input: if group { 2 * width } else { width },
                    globals: config.global_width,
                    output: config.latent_width,
                    hidden: config.hidden_width,
                    heads: config.heads,
                    attention: config.attention_width,
                };
                BaseLayer::new(config.base_layer, store, &format!("{prefix}.layer{i}"), shape, rng)
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[BaseLayer] {
        &self.layers
    }

    /// Runs the stack; returns `[views, batch, 22, latent]`.
    pub fn forward(&self, t: &mut Tape, store: &ParamStore, inputs: &GraphInputs) -> Result<Var, GnnError> {
        if inputs.global_width() != self.config.global_width {
            return Err(GnnError::GlobalWidth {
                expected: self.config.global_width,
                found: inputs.global_width(),
            });
        }
        if inputs.node_width() != self.config.node_input_width() {
            return Err(GnnError::Config(format!(
                "node inputs have width {}, encoder expects {}",
                inputs.node_width(),
                self.config.node_input_width()
            )));
        }
        let (v, b, n) = (inputs.views, inputs.batch, PLAYER_COUNT);
        let globals = inputs.globals.clone().map(|g| t.constant(g));
        let nodes = t.constant(inputs.nodes.clone());
        if self.config.symmetry_mode == SymmetryMode::GroupConvolution {
            if v != 4 {
                return Err(GnnError::Config("group convolution needs all four views".into()));
            }
            let (left, right) = group_pairs();
            let mut h = nodes;
            for layer in &self.layers {
                let d = *t.shape(h).last().expect("rank 4");
                let flat = t.reshape(h, &[4, b * n * d])?;
                let l = t.select_rows(flat, left.clone())?;
                let r = t.select_rows(flat, right.clone())?;
                let l = t.reshape(l, &[16 * b, n, d])?;
                let r = t.reshape(r, &[16 * b, n, d])?;
                let joined = t.concat(&[l, r])?;
                let out = layer.forward(t, store, joined, globals, 16)?;
                let out = t.reshape(out, &[16, b * n * self.config.latent_width])?;
                let mixed = pairwise_mean4(t, out, 4, 4)?;
                h = t.reshape(mixed, &[4, b, n, self.config.latent_width])?;
            }
            Ok(h)
        } else {
            let mut h = t.reshape(nodes, &[v * b, n, inputs.node_width()])?;
            for layer in &self.layers {
                h = layer.forward(t, store, h, globals, v)?;
            }
            Ok(t.reshape(h, &[v, b, n, self.config.latent_width])?)
        }
    }

    /// Per-node matrix `[batch, 22, latent]` read from encoder output:
    /// the identity view for `none`, the mean of all views otherwise.
    pub fn node_matrix(&self, t: &mut Tape, out: Var) -> Result<Var, GnnError> {
        let s = t.shape(out).to_vec();
        let (v, rest) = (s[0], s[1..].to_vec());
        let flat = t.reshape(out, &[v, rest.iter().product()])?;
        let m = if self.config.symmetry_mode == SymmetryMode::None || v == 1 {
            t.select_rows(flat, Arc::from(vec![0]))?
        } else {
            pairwise_mean4(t, flat, 1, 0)?
        };
        Ok(t.reshape(m, &rest)?)
    }

    /// Encodes one graph into its four views.
    pub fn encode(&self, store: &ParamStore, c: &CornerGraph, globals: &GlobalFeatures) -> Result<ViewBundle, GnnError> {
        let inputs = GraphInputs::new(&[c], std::slice::from_ref(globals), 4)?;
        let mut t = Tape::new();
        let out = self.forward(&mut t, store, &inputs)?;
        let d = self.config.latent_width;
        let data = t.value(out).data();
        let views = (0..4)
            .map(|g| DenseArray::new(vec![PLAYER_COUNT, d], data[g * PLAYER_COUNT * d..(g + 1) * PLAYER_COUNT * d].to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ViewBundle {
            views,
            symmetry_mode: self.config.symmetry_mode,
        })
    }
}

/// The four per-view latent matrices of one graph, indexed by
/// [`D2Element::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBundle {
    views: Vec<DenseArray>,
    symmetry_mode: SymmetryMode,
}

impl ViewBundle {
    pub fn view(&self, g: D2Element) -> &DenseArray {
        &self.views[g.index()]
    }

    pub fn views(&self) -> &[DenseArray] {
        &self.views
    }

    /// `[22, latent]` node matrix consumed by invariant decoders.
    pub fn node_matrix(&self) -> DenseArray {
        if self.symmetry_mode == SymmetryMode::None {
            return self.views[0].clone();
        }
        let data = (0..self.views[0].len())
            .map(|i| {
                let v = |g: usize| self.views[g].data()[i];
                ((v(0) + v(1)) + (v(2) + v(3))) * 0.25
            })
            .collect();
        DenseArray::new(self.views[0].shape().to_vec(), data).expect("same shape")
    }
}

/// Averages `f` over all four reflections of `c`.
pub fn frame_average(f: impl Fn(&CornerGraph) -> Vec<f64>, c: &CornerGraph) -> Vec<f64> {
    let outs: Vec<Vec<f64>> = D2Element::ALL.iter().map(|g| f(&apply(*g, c))).collect();
    (0..outs[0].len())
        .map(|i| ((outs[0][i] + outs[1][i]) + (outs[2][i] + outs[3][i])) * 0.25)
        .collect()
}
