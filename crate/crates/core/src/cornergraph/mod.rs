//! Corner-kick situations as fully connected 22-node graphs.
//!
//! Node order is fixed: indices `0..11` are the attacking team with the
//! kicker at `0`, indices `11..22` the defending team. Every pair of nodes,
//! self-pairs included, is an edge whose feature is the one-hot
//! `(teammate, opponent)`.

mod dataset;
mod normalize;
mod symmetry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{parse_dataset, read_dataset, split, split_indices, to_jsonl, write_dataset};
pub use normalize::{denormalize, normalize, PitchDims, RawPlayer, DEFAULT_HEIGHT_CM, DEFAULT_WEIGHT_KG};
pub use symmetry::{apply, compose, D2Element};

pub const PLAYER_COUNT: usize = 22;
pub const TEAM_SIZE: usize = 11;
pub const KICKER: usize = 0;
/// Per-node input width: x, y, vx, vy, height, weight, has_ball, team flag.
pub const NODE_FEATURES: usize = 8;
pub const EDGE_FEATURES: usize = 2;

#[derive(Debug, Error)]
pub enum CornerError {
    #[error("field `players`: expected {expected} players, found {count}")]
    PlayerCount { expected: usize, count: usize },
    #[error("field `players[{index}].team`: nodes 0-10 must be attacking and 11-21 defending")]
    TeamOrder { index: usize },
    #[error("field `players[].has_ball`: {0}")]
    BallHolder(String),
    #[error("field `players[{index}].{field}`: {reason}")]
    InvalidPlayer {
        index: usize,
        field: &'static str,
        reason: String,
    },
    #[error("field `receiver_index`: {0} does not address a node")]
    ReceiverIndex(usize),
    #[error("field `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Attacking,
    Defending,
}

impl Team {
    /// Team owning node `index` under the fixed ordering.
    pub fn of_index(index: usize) -> Team {
        if index < TEAM_SIZE {
            Team::Attacking
        } else {
            Team::Defending
        }
    }

    /// Node indices of this team.
    pub fn indices(self) -> std::ops::Range<usize> {
        match self {
            Team::Attacking => 0..TEAM_SIZE,
            Team::Defending => TEAM_SIZE..PLAYER_COUNT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Team::Attacking => "attacking",
            Team::Defending => "defending",
        }
    }
}

impl std::fmt::Display for Team {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Team {
    type Err = CornerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attacking" => Ok(Team::Attacking),
            "defending" => Ok(Team::Defending),
            other => Err(CornerError::InvalidArgument {
                field: "team",
                reason: format!("unknown team `{other}`"),
            }),
        }
    }
}

/// 0/1 integer encoding for boolean flags in records.
mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, found {other}"))),
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(b) => s.serialize_some(&(*b as u8)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
            match Option::<u8>::deserialize(d)? {
                None => Ok(None),
                Some(0) => Ok(Some(false)),
                Some(1) => Ok(Some(true)),
                Some(other) => Err(serde::de::Error::custom(format!("expected 0 or 1, found {other}"))),
            }
        }
    }
}

/// One player at the moment the corner is taken, in normalized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerNode {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Metres (centimetres / 100).
    pub height: f64,
    /// Kilograms / 100.
    pub weight: f64,
    #[serde(with = "flag")]
    pub has_ball: bool,
    pub team: Team,
}

impl PlayerNode {
    pub fn features(&self) -> [f64; NODE_FEATURES] {
        let team_flag = if self.team == Team::Attacking { 1.0 } else { 0.0 };
        [
            self.x,
            self.y,
            self.vx,
            self.vy,
            self.height,
            self.weight,
            self.has_ball as u8 as f64,
            team_flag,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub receiver_index: usize,
    pub shot_taken: bool,
}

/// Line format of a dataset record and of every API corner payload.
#[derive(Serialize, Deserialize)]
struct CornerRecord {
    id: String,
    players: Vec<PlayerNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    receiver_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "flag::option")]
    shot_taken: Option<bool>,
}

/// A validated corner-kick graph. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CornerRecord", into = "CornerRecord")]
pub struct CornerGraph {
    id: String,
    players: Vec<PlayerNode>,
    receiver_index: Option<usize>,
    shot_taken: Option<bool>,
}

impl TryFrom<CornerRecord> for CornerGraph {
    type Error = CornerError;

    fn try_from(r: CornerRecord) -> Result<Self, Self::Error> {
        CornerGraph::new(r.id, r.players, r.receiver_index, r.shot_taken)
    }
}

impl From<CornerGraph> for CornerRecord {
    fn from(c: CornerGraph) -> Self {
        CornerRecord {
            id: c.id,
            players: c.players,
            receiver_index: c.receiver_index,
            shot_taken: c.shot_taken,
        }
    }
}

impl CornerGraph {
    pub fn new(
        id: impl Into<String>,
        players: Vec<PlayerNode>,
        receiver_index: Option<usize>,
        shot_taken: Option<bool>,
    ) -> Result<Self, CornerError> {
        validate_players(&players)?;
        if let Some(r) = receiver_index {
            if r >= PLAYER_COUNT {
                return Err(CornerError::ReceiverIndex(r));
            }
        }
        Ok(Self {
            id: id.into(),
            players,
            receiver_index,
            shot_taken,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn players(&self) -> &[PlayerNode] {
        &self.players
    }

    pub fn player(&self, index: usize) -> &PlayerNode {
        &self.players[index]
    }

    pub fn receiver_index(&self) -> Option<usize> {
        self.receiver_index
    }

    pub fn shot_taken(&self) -> Option<bool> {
        self.shot_taken
    }

    /// Both labels, when the record carries them.
    pub fn labels(&self) -> Option<Labels> {
        Some(Labels {
            receiver_index: self.receiver_index?,
            shot_taken: self.shot_taken?,
        })
    }

    pub fn with_id(&self, id: impl Into<String>) -> CornerGraph {
        CornerGraph {
            id: id.into(),
            ..self.clone()
        }
    }

    pub fn with_labels(&self, receiver_index: Option<usize>, shot_taken: Option<bool>) -> Result<CornerGraph, CornerError> {
        CornerGraph::new(self.id.clone(), self.players.clone(), receiver_index, shot_taken)
    }

    /// Same corner with new player records; labels are kept.
    pub fn with_players(&self, players: Vec<PlayerNode>) -> Result<CornerGraph, CornerError> {
        CornerGraph::new(self.id.clone(), players, self.receiver_index, self.shot_taken)
    }

    /// Row-major `[22, 8]` node feature matrix.
    pub fn node_features(&self) -> Vec<f64> {
        self.players.iter().flat_map(|p| p.features()).collect()
    }

    /// One-hot `(teammate, opponent)` for the directed pair `(u, v)`.
    pub fn edge_feature(&self, u: usize, v: usize) -> [f64; EDGE_FEATURES] {
        if edge_type(u, v) == 0 {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    }
}

/// 0 for teammates (including self-pairs), 1 for opponents.
pub fn edge_type(u: usize, v: usize) -> u8 {
    (Team::of_index(u) != Team::of_index(v)) as u8
}

fn validate_players(players: &[PlayerNode]) -> Result<(), CornerError> {
    if players.len() != PLAYER_COUNT {
        return Err(CornerError::PlayerCount {
            expected: PLAYER_COUNT,
            count: players.len(),
        });
    }
    let mut holders = Vec::new();
    for (i, p) in players.iter().enumerate() {
        if p.team != Team::of_index(i) {
            return Err(CornerError::TeamOrder { index: i });
        }
        for (field, v) in [("x", p.x), ("y", p.y), ("vx", p.vx), ("vy", p.vy), ("height", p.height), ("weight", p.weight)] {
            if !v.is_finite() {
                return Err(CornerError::InvalidPlayer {
                    index: i,
                    field,
                    reason: format!("{v} is not finite"),
                });
            }
        }
        for (field, v) in [("height", p.height), ("weight", p.weight)] {
            if v <= 0.0 {
                return Err(CornerError::InvalidPlayer {
                    index: i,
                    field,
                    reason: format!("{v} must be positive"),
                });
            }
        }
        if p.has_ball {
            holders.push(i);
        }
    }
    match holders.as_slice() {
        [KICKER] => Ok(()),
        [] => Err(CornerError::BallHolder("no player holds the ball".into())),
        [i] => Err(CornerError::BallHolder(format!("ball held by player {i}, expected the kicker at index 0"))),
        many => Err(CornerError::BallHolder(format!("{} players hold the ball", many.len()))),
    }
}

/// Task-dependent graph-level inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GlobalFeatures {
    pub receiver_onehot: Option<Vec<f64>>,
    pub shot_indicator: Option<f64>,
}

impl GlobalFeatures {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn for_shot(receiver: usize) -> Result<Self, CornerError> {
        Ok(Self {
            receiver_onehot: Some(onehot(receiver)?),
            shot_indicator: None,
        })
    }

    pub fn for_generation(receiver: usize, shot: bool) -> Result<Self, CornerError> {
        Ok(Self {
            receiver_onehot: Some(onehot(receiver)?),
            shot_indicator: Some(shot as u8 as f64),
        })
    }

    pub fn validate(&self) -> Result<(), CornerError> {
        if let Some(h) = &self.receiver_onehot {
            let ones = h.iter().filter(|&&x| x == 1.0).count();
            let zeros = h.iter().filter(|&&x| x == 0.0).count();
            if h.len() != PLAYER_COUNT || ones != 1 || ones + zeros != h.len() {
                return Err(CornerError::InvalidArgument {
                    field: "receiver_onehot",
                    reason: "must be a length-22 one-hot vector".into(),
                });
            }
        }
        if let Some(s) = self.shot_indicator {
            if s != 0.0 && s != 1.0 {
                return Err(CornerError::InvalidArgument {
                    field: "shot_indicator",
                    reason: format!("{s} is not 0 or 1"),
                });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.receiver_onehot.as_ref().map_or(0, Vec::len) + self.shot_indicator.map_or(0, |_| 1)
    }

    /// Receiver one-hot followed by the shot flag, skipping absent parts.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.receiver_onehot.clone().unwrap_or_default();
        v.extend(self.shot_indicator);
        v
    }
}

fn onehot(index: usize) -> Result<Vec<f64>, CornerError> {
    if index >= PLAYER_COUNT {
        return Err(CornerError::ReceiverIndex(index));
    }
    let mut v = vec![0.0; PLAYER_COUNT];
    v[index] = 1.0;
    Ok(v)
}
