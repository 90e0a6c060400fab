use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GnnError;
use crate::autodiff::{DenseArray, ParamId, ParamStore, Tape, Var, LEAKY_SLOPE};
use crate::cornergraph::{edge_type, EDGE_FEATURES, PLAYER_COUNT};

/// Which message-passing layer the encoder stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLayerKind {
    /// Every node only sees itself.
    DeepSets,
    /// Perceptron messages over all pairs, max-aggregated.
    Mpnn,
    Gatv2,
}

impl BaseLayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaseLayerKind::DeepSets => "deepsets",
            BaseLayerKind::Mpnn => "mpnn",
            BaseLayerKind::Gatv2 => "gatv2",
        }
    }
}

/// Widths shared by every base layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerShape {
    pub input: usize,
    pub globals: usize,
    pub output: usize,
    pub hidden: usize,
    pub heads: usize,
    pub attention: usize,
}

/// `[22*22]` pair types, 0 teammate and 1 opponent.
pub fn pair_types() -> Arc<[u8]> {
    (0..PLAYER_COUNT * PLAYER_COUNT)
        .map(|i| edge_type(i / PLAYER_COUNT, i % PLAYER_COUNT))
        .collect::<Vec<_>>()
        .into()
}

fn edge_onehots() -> DenseArray {
    let data = (0..PLAYER_COUNT * PLAYER_COUNT)
        .flat_map(|i| {
            if edge_type(i / PLAYER_COUNT, i % PLAYER_COUNT) == 0 {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        })
        .collect();
    DenseArray::new(vec![PLAYER_COUNT, PLAYER_COUNT, EDGE_FEATURES], data).expect("static shape")
}

/// Two-layer perceptron `x -> leaky(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug)]
pub struct Perceptron {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Perceptron {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w1: store.glorot(format!("{prefix}.w1"), &[input, hidden], input, hidden, rng),
            b1: store.zeros(format!("{prefix}.b1"), &[hidden]),
            w2: store.glorot(format!("{prefix}.w2"), &[hidden, output], hidden, output, rng),
            b2: store.zeros(format!("{prefix}.b2"), &[output]),
        }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, GnnError> {
        let (w1, b1, w2, b2) = (t.param(store, self.w1), t.param(store, self.b1), t.param(store, self.w2), t.param(store, self.b2));
        let h = t.matmul(x, w1)?;
        let h = t.add(h, b1)?;
        let h = t.leaky_relu(h, LEAKY_SLOPE)?;
        let o = t.matmul(h, w2)?;
        Ok(t.add(o, b2)?)
    }
}

/// Broadcasts per-graph global projections `[batch, w]` over
/// `replicas * batch` graphs as `[replicas*batch, 1, w]`.
fn tile_globals(t: &mut Tape, proj: Var, batch: usize, replicas: usize) -> Result<Var, GnnError> {
    let w = *t.shape(proj).last().expect("projection is a matrix");
    let tiled = if replicas == 1 {
        proj
    } else {
        let rows: Arc<[usize]> = (0..replicas).flat_map(|_| 0..batch).collect::<Vec<_>>().into();
        t.select_rows(proj, rows)?
    };
    Ok(t.reshape(tiled, &[replicas * batch, 1, w])?)
}

/// Graph attention layer with dynamic (GATv2) scoring. Every node attends
/// over all 22 nodes including itself; heads are averaged.
#[derive(Clone, Debug)]
pub struct Gatv2Layer {
    shape: LayerShape,
    w_src: ParamId,
    w_dst: ParamId,
    w_edge: ParamId,
    w_glob: Option<ParamId>,
    att: ParamId,
    value: ParamId,
    update: Perceptron,
    pairs: Arc<[u8]>,
}

impl Gatv2Layer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, shape: LayerShape, rng: &mut R) -> Self {
        let hk = shape.heads * shape.attention;
        Self {
            shape,
            w_src: store.glorot(format!("{prefix}.w_src"), &[shape.input, hk], shape.input, hk, rng),
            w_dst: store.glorot(format!("{prefix}.w_dst"), &[shape.input, hk], shape.input, hk, rng),
            w_edge: store.glorot(format!("{prefix}.w_edge"), &[EDGE_FEATURES, hk], EDGE_FEATURES, hk, rng),
            w_glob: (shape.globals > 0).then(|| store.glorot(format!("{prefix}.w_glob"), &[shape.globals, hk], shape.globals, hk, rng)),
            att: store.glorot(format!("{prefix}.att"), &[hk], hk, 1, rng),
            value: store.glorot(
                format!("{prefix}.value"),
                &[shape.input, shape.heads * shape.output],
                shape.input,
                shape.heads * shape.output,
                rng,
            ),
            update: Perceptron::new(store, &format!("{prefix}.update"), shape.input + shape.output, shape.hidden, shape.output, rng),
            pairs: pair_types(),
        }
    }

    /// Attention weights `[graphs, 22, heads, 22]`, softmax-normalized over
    /// the last axis.
    pub fn attention(&self, t: &mut Tape, store: &ParamStore, h: Var, globals: Option<Var>, replicas: usize) -> Result<Var, GnnError> {
        let s = self.shape;
        let graphs = t.shape(h)[0];
        let (w_src, w_dst, w_edge, att) = (t.param(store, self.w_src), t.param(store, self.w_dst), t.param(store, self.w_edge), t.param(store, self.att));
        let mut src = t.matmul(h, w_src)?;
        if let (Some(g), Some(wg)) = (globals, self.w_glob) {
            let wg = t.param(store, wg);
            let proj = t.matmul(g, wg)?;
            let tiled = tile_globals(t, proj, graphs / replicas, replicas)?;
            src = t.add(src, tiled)?;
        }
        let dst = t.matmul(h, w_dst)?;
        let scores = t.gat_scores(src, dst, w_edge, att, self.pairs.clone(), s.heads)?;
        Ok(t.softmax(scores)?)
    }

    /// `h: [graphs, 22, input]`, `globals: [graphs / replicas, m]`.
    pub fn forward(&self, t: &mut Tape, store: &ParamStore, h: Var, globals: Option<Var>, replicas: usize) -> Result<Var, GnnError> {
        let s = self.shape;
        let graphs = t.shape(h)[0];
        let weights = self.attention(t, store, h, globals, replicas)?;
        let wv = t.param(store, self.value);
        let values = t.matmul(h, wv)?;
        let values = t.reshape(values, &[graphs, PLAYER_COUNT, s.heads, s.output])?;
        let msg = t.attend(weights, values)?;
        let msg = t.mean_axis(msg, 2)?;
        let joined = t.concat(&[h, msg])?;
        self.update.forward(t, store, joined)
    }
}

/// Message-passing layer with a perceptron message function over
/// `(h_u, h_v, e_vu, g)` and max aggregation. With `singleton` set every
/// neighbourhood is just the node itself, which gives the Deep Sets
/// baseline.
#[derive(Clone, Debug)]
pub struct MessageLayer {
    shape: LayerShape,
    singleton: bool,
    w_recv: ParamId,
    w_send: ParamId,
    w_edge: ParamId,
    w_glob: Option<ParamId>,
    bias: ParamId,
    w_out: ParamId,
    b_out: ParamId,
    update: Perceptron,
}

impl MessageLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, shape: LayerShape, singleton: bool, rng: &mut R) -> Self {
        let (i, hd) = (shape.input, shape.hidden);
        let fan_in = 2 * i + EDGE_FEATURES + shape.globals;
        Self {
            shape,
            singleton,
            w_recv: store.glorot(format!("{prefix}.msg.w_recv"), &[i, hd], fan_in, hd, rng),
            w_send: store.glorot(format!("{prefix}.msg.w_send"), &[i, hd], fan_in, hd, rng),
            w_edge: store.glorot(format!("{prefix}.msg.w_edge"), &[EDGE_FEATURES, hd], fan_in, hd, rng),
            w_glob: (shape.globals > 0).then(|| store.glorot(format!("{prefix}.msg.w_glob"), &[shape.globals, hd], fan_in, hd, rng)),
            bias: store.zeros(format!("{prefix}.msg.b1"), &[hd]),
            w_out: store.glorot(format!("{prefix}.msg.w2"), &[hd, shape.output], hd, shape.output, rng),
            b_out: store.zeros(format!("{prefix}.msg.b2"), &[shape.output]),
            update: Perceptron::new(store, &format!("{prefix}.update"), i + shape.output, hd, shape.output, rng),
        }
    }

    /// Parameters of the message perceptron's output map, exposed so tests
    /// can silence messages.
    pub fn message_output_params(&self) -> [ParamId; 2] {
        [self.w_out, self.b_out]
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, h: Var, globals: Option<Var>, replicas: usize) -> Result<Var, GnnError> {
        let s = self.shape;
        let graphs = t.shape(h)[0];
        let n = PLAYER_COUNT;
        let (wr, ws, we, b1) = (t.param(store, self.w_recv), t.param(store, self.w_send), t.param(store, self.w_edge), t.param(store, self.bias));
        let recv = t.matmul(h, wr)?;
        let send = t.matmul(h, ws)?;
        let mut pre = if self.singleton {
            // e_uu is always the teammate one-hot, i.e. the first edge row.
            let own = t.constant(DenseArray::new(vec![1, EDGE_FEATURES], vec![1.0, 0.0]).expect("static"));
            let e = t.matmul(own, we)?;
            let e = t.reshape(e, &[s.hidden])?;
            let p = t.add(recv, send)?;
            t.add(p, e)?
        } else {
            let recv = t.reshape(recv, &[graphs, n, 1, s.hidden])?;
            let send = t.reshape(send, &[graphs, 1, n, s.hidden])?;
            let edges = t.constant(edge_onehots());
            let e = t.matmul(edges, we)?;
            let p = t.add(recv, send)?;
            t.add(p, e)?
        };
        if let (Some(g), Some(wg)) = (globals, self.w_glob) {
            let wg = t.param(store, wg);
            let proj = t.matmul(g, wg)?;
            let tiled = tile_globals(t, proj, graphs / replicas, replicas)?;
            let tiled = if self.singleton { tiled } else { t.reshape(tiled, &[graphs, 1, 1, s.hidden])? };
            pre = t.add(pre, tiled)?;
        }
        let pre = t.add(pre, b1)?;
        let act = t.leaky_relu(pre, LEAKY_SLOPE)?;
        let (w2, b2) = (t.param(store, self.w_out), t.param(store, self.b_out));
        let m = t.matmul(act, w2)?;
        let m = t.add(m, b2)?;
        let msg = if self.singleton { m } else { t.max_axis(m, 2)? };
        let joined = t.concat(&[h, msg])?;
        self.update.forward(t, store, joined)
    }
}

/// One of the interchangeable base layers.
#[derive(Clone, Debug)]
pub enum BaseLayer {
    Gatv2(Gatv2Layer),
    Message(MessageLayer),
}

impl BaseLayer {
    pub fn new<R: Rng>(kind: BaseLayerKind, store: &mut ParamStore, prefix: &str, shape: LayerShape, rng: &mut R) -> Self {
        match kind {
            BaseLayerKind::Gatv2 => BaseLayer::Gatv2(Gatv2Layer::new(store, prefix, shape, rng)),
            BaseLayerKind::Mpnn => BaseLayer::Message(MessageLayer::new(store, prefix, shape, false, rng)),
            BaseLayerKind::DeepSets => BaseLayer::Message(MessageLayer::new(store, prefix, shape, true, rng)),
        }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, h: Var, globals: Option<Var>, replicas: usize) -> Result<Var, GnnError> {
        match self {
            BaseLayer::Gatv2(l) => l.forward(t, store, h, globals, replicas),
            BaseLayer::Message(l) => l.forward(t, store, h, globals, replicas),
        }
    }
}
