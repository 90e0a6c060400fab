use serde::{Deserialize, Serialize};

use super::{CornerError, CornerGraph, PlayerNode, Team, PLAYER_COUNT};

pub const DEFAULT_HEIGHT_CM: f64 = 180.0;
pub const DEFAULT_WEIGHT_KG: f64 = 75.0;

/// Pitch size in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchDims {
    pub length: f64,
    pub width: f64,
}

impl Default for PitchDims {
    fn default() -> Self {
        Self {
            length: 110.0,
            width: 63.0,
        }
    }
}

/// A tracked player before normalization. Positions are metres from the
/// pitch corner, velocities metres per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPlayer {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
    pub has_ball: bool,
    pub team: Team,
}

/// Maps raw tracking onto the 10x10 frame centred on the pitch.
///
/// Players are reordered to the fixed layout: the ball holder first, the
/// remaining attackers in input order, then the defenders in input order.
pub fn normalize(id: impl Into<String>, raw: &[RawPlayer], pitch: Option<PitchDims>) -> Result<CornerGraph, CornerError> {
    if raw.len() != PLAYER_COUNT {
        return Err(CornerError::PlayerCount {
            expected: PLAYER_COUNT,
            count: raw.len(),
        });
    }
    let pitch = pitch.unwrap_or_default();
    if !(pitch.length > 0.0 && pitch.width > 0.0) {
        return Err(CornerError::InvalidArgument {
            field: "pitch",
            reason: format!("dimensions {}x{} must be positive", pitch.length, pitch.width),
        });
    }
    let (sx, sy) = (10.0 / pitch.length, 10.0 / pitch.width);
    let convert = |r: &RawPlayer| PlayerNode {
        x: (r.x - pitch.length / 2.0) * sx,
        y: (r.y - pitch.width / 2.0) * sy,
        vx: r.vx * sx,
        vy: r.vy * sy,
        height: r.height_cm.unwrap_or(DEFAULT_HEIGHT_CM) / 100.0,
        weight: r.weight_kg.unwrap_or(DEFAULT_WEIGHT_KG) / 100.0,
        has_ball: r.has_ball,
        team: r.team,
    };
    let mut players: Vec<PlayerNode> = raw
        .iter()
        .filter(|r| r.team == Team::Attacking && r.has_ball)
        .chain(raw.iter().filter(|r| r.team == Team::Attacking && !r.has_ball))
        .chain(raw.iter().filter(|r| r.team == Team::Defending))
        .map(convert)
        .collect();
    players.truncate(PLAYER_COUNT);
    CornerGraph::new(id, players, None, None)
}

/// Inverse of [`normalize`] for the given pitch.
pub fn denormalize(c: &CornerGraph, pitch: PitchDims) -> Vec<RawPlayer> {
    let (sx, sy) = (pitch.length / 10.0, pitch.width / 10.0);
    c.players()
        .iter()
        .map(|p| RawPlayer {
            x: p.x * sx + pitch.length / 2.0,
            y: p.y * sy + pitch.width / 2.0,
            vx: p.vx * sx,
            vy: p.vy * sy,
            height_cm: Some(p.height * 100.0),
            weight_kg: Some(p.weight * 100.0),
            has_ball: p.has_ball,
            team: p.team,
        })
        .collect()
}
