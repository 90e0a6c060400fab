#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setpiece::cornergraph::{CornerGraph, PlayerNode, Team, KICKER, PLAYER_COUNT};

/// Any valid corner: uniform positions and velocities, plausible profiles.
pub fn random_corner(rng: &mut ChaCha8Rng, id: &str) -> CornerGraph {
    let players = (0..PLAYER_COUNT)
        .map(|i| PlayerNode {
            x: rng.random_range(-5.0..5.0),
            y: rng.random_range(-5.0..5.0),
            vx: rng.random_range(-0.6..0.6),
            vy: rng.random_range(-0.6..0.6),
            height: rng.random_range(1.65..2.0),
            weight: rng.random_range(0.65..0.95),
            has_ball: i == KICKER,
            team: Team::of_index(i),
        })
        .collect();
    CornerGraph::new(id, players, None, None).unwrap()
}

pub fn random_corners(n: usize, seed: u64) -> Vec<CornerGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_corner(&mut rng, &format!("r{i}"))).collect()
}

pub fn labelled(c: &CornerGraph, rng: &mut ChaCha8Rng) -> CornerGraph {
    c.with_labels(Some(rng.random_range(1..PLAYER_COUNT)), Some(rng.random_bool(0.3))).unwrap()
}

pub fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}
