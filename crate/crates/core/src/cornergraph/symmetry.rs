use serde::{Deserialize, Serialize};

use super::{CornerGraph, PlayerNode};

/// The reflection group of the pitch: identity, horizontal flip (negates
/// x), vertical flip (negates y) and both.
///
/// Encoded as two bits (bit 0 = x flip, bit 1 = y flip) so composition is
/// XOR and every element is its own inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D2Element {
    #[serde(rename = "id")]
    Identity,
    FlipH,
    FlipV,
    FlipHv,
}

impl D2Element {
    pub const ALL: [D2Element; 4] = [D2Element::Identity, D2Element::FlipH, D2Element::FlipV, D2Element::FlipHv];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<D2Element> {
        Self::ALL.get(i).copied()
    }

    pub fn compose(self, other: D2Element) -> D2Element {
        Self::ALL[self.index() ^ other.index()]
    }

    pub fn inverse(self) -> D2Element {
        self
    }

    pub fn flips_x(self) -> bool {
        self.index() & 1 == 1
    }

    pub fn flips_y(self) -> bool {
        self.index() & 2 == 2
    }

    /// Reflects a point or vector.
    pub fn apply_xy(self, x: f64, y: f64) -> (f64, f64) {
        (if self.flips_x() { -x } else { x }, if self.flips_y() { -y } else { y })
    }

    pub fn apply_player(self, p: &PlayerNode) -> PlayerNode {
        let (x, y) = self.apply_xy(p.x, p.y);
        let (vx, vy) = self.apply_xy(p.vx, p.vy);
        PlayerNode { x, y, vx, vy, ..*p }
    }

    pub fn name(self) -> &'static str {
        match self {
            D2Element::Identity => "id",
            D2Element::FlipH => "flip_h",
            D2Element::FlipV => "flip_v",
            D2Element::FlipHv => "flip_hv",
        }
    }
}

/// Group product `g . h`.
pub fn compose(g: D2Element, h: D2Element) -> D2Element {
    g.compose(h)
}

/// Reflects every position and velocity of `c`; everything else is kept.
pub fn apply(g: D2Element, c: &CornerGraph) -> CornerGraph {
    CornerGraph {
        players: c.players.iter().map(|p| g.apply_player(p)).collect(),
        ..c.clone()
    }
}
