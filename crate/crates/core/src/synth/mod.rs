//! Synthetic corner kicks with programmatic labels.
//!
//! Scenes are drawn in a canonical frame (attacking towards the goal at
//! `x = +5`, corner taken from `y = +5`) and then mapped by a random D2
//! element, so every side and corner appears equally often. The kicker
//! aims at an attacker, preferring open players near goal; the ball lands
//! near that attacker. The receiver is whoever reaches the landing point
//! first under constant-velocity extrapolation, and a shot follows when an
//! attacker receives close to a goal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cornergraph::{apply, CornerGraph, D2Element, PlayerNode, Team, KICKER, PLAYER_COUNT, TEAM_SIZE};

const HALF_PITCH: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Normalized units per second.
    pub max_speed: f64,
    /// Seconds of extrapolation used to decide who reaches the ball.
    pub flight_time: f64,
    pub shot_zone_radius: f64,
    /// Spread of the landing point around the targeted attacker.
    pub landing_noise: f64,
    /// Softmax temperature of the kicker's choice of target.
    pub target_temperature: f64,
    /// Depth of the penalty box from the goal line.
    pub box_depth: f64,
    pub box_half_width: f64,
    /// Spread of a marker around the attacker being marked, before the
    /// per-corner compactness scaling.
    pub marking_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 8000,
            seed: 42,
            max_speed: 0.6,
            flight_time: 1.5,
            shot_zone_radius: 1.2,
            landing_noise: 0.2,
            target_temperature: 0.15,
            box_depth: 1.5,
            box_half_width: 3.2,
            marking_spread: 0.4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let scales = [
            ("max_speed", self.max_speed),
            ("flight_time", self.flight_time),
            ("shot_zone_radius", self.shot_zone_radius),
            ("landing_noise", self.landing_noise),
            ("target_temperature", self.target_temperature),
            ("box_depth", self.box_depth),
            ("box_half_width", self.box_half_width),
            ("marking_spread", self.marking_spread),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.box_depth >= 2.0 * HALF_PITCH || self.box_half_width > HALF_PITCH {
            return Err(SynthError::Config("penalty box does not fit on the pitch".into()));
        }
        Ok(())
    }
}

/// A generated corner together with the hidden landing point used to label it.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub corner: CornerGraph,
    pub landing: (f64, f64),
}

/// Position after `flight_time` seconds at constant velocity.
pub fn extrapolate(p: &PlayerNode, flight_time: f64) -> (f64, f64) {
    (p.x + p.vx * flight_time, p.y + p.vy * flight_time)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// First player to reach the ball: the non-kicker whose extrapolated
/// position is closest to `landing`, lowest index on ties.
pub fn oracle_receiver(c: &CornerGraph, landing: (f64, f64), flight_time: f64) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, p) in c.players().iter().enumerate() {
        if i == KICKER {
            continue;
        }
        let d = dist(extrapolate(p, flight_time), landing);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// A shot follows iff an attacker receives and its extrapolated position
/// lies within `shot_zone_radius` of the nearer goal centre `(±5, 0)`.
pub fn oracle_shot(c: &CornerGraph, receiver: usize, flight_time: f64, shot_zone_radius: f64) -> bool {
    if Team::of_index(receiver) != Team::Attacking {
        return false;
    }
    let (x, y) = extrapolate(c.player(receiver), flight_time);
    dist((x.abs(), y), (HALF_PITCH, 0.0)) <= shot_zone_radius
}

fn clamp_pitch(v: f64) -> f64 {
    v.clamp(-HALF_PITCH, HALF_PITCH)
}

fn random_velocity(rng: &mut ChaCha8Rng, max_speed: f64) -> (f64, f64) {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(0.0..max_speed);
    (speed * angle.cos(), speed * angle.sin())
}

fn toward(from: (f64, f64), to: (f64, f64), speed: f64) -> (f64, f64) {
    let d = dist(from, to).max(1e-9);
    ((to.0 - from.0) / d * speed, (to.1 - from.1) / d * speed)
}

fn player(rng: &mut ChaCha8Rng, pos: (f64, f64), vel: (f64, f64), team: Team, has_ball: bool) -> PlayerNode {
    let height: f64 = Normal::new(1.83f64, 0.06).expect("valid normal").sample(rng).clamp(1.6, 2.05);
    let weight: f64 = Normal::new(0.78f64, 0.06).expect("valid normal").sample(rng).clamp(0.6, 0.98);
    PlayerNode {
        x: clamp_pitch(pos.0),
        y: clamp_pitch(pos.1),
        vx: vel.0,
        vy: vel.1,
        height,
        weight,
        has_ball,
        team,
    }
}

/// Draws one scene in the canonical frame.
fn canonical_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<PlayerNode>, (f64, f64)) {
    let goal = (HALF_PITCH, 0.0);
    let n01 = Normal::new(0.0f64, 1.0).expect("valid normal");
    let box_front = HALF_PITCH - cfg.box_depth;
    // Per-corner tactics: how many attackers crowd the box, how tightly
    // the defence marks.
    let crowding: f64 = rng.random_range(0.0..1.0);
    let compactness: f64 = rng.random_range(0.0..1.0);

    let mut players = Vec::with_capacity(PLAYER_COUNT);
    players.push(player(rng, (4.95, 4.95), (0.0, 0.0), Team::Attacking, true));
    for _ in 1..TEAM_SIZE {
        let in_box = rng.random_bool(0.45 + 0.45 * crowding);
        let pos = if in_box {
            (
                rng.random_range(box_front..HALF_PITCH - 0.1),
                (n01.sample(rng) * cfg.box_half_width * 0.45).clamp(-cfg.box_half_width, cfg.box_half_width),
            )
        } else {
            (rng.random_range(box_front - 2.5..box_front), rng.random_range(-4.0..4.0))
        };
        let vel = if in_box && rng.random_bool(0.7) {
            let aim = (HALF_PITCH - 1.1 + n01.sample(rng) * 0.4, n01.sample(rng) * 1.0);
            toward(pos, aim, rng.random_range(0.2..1.0) * cfg.max_speed)
        } else {
            random_velocity(rng, cfg.max_speed * 0.5)
        };
        players.push(player(rng, pos, vel, Team::Attacking, false));
    }

    // Goalkeeper, then markers assigned to distinct attackers (never the
    // kicker); unassigned defenders hold a zone near the six-yard box.
    let keeper = (4.85, n01.sample(rng) * 0.2);
    let keeper_vel = random_velocity(rng, 0.1);
    players.push(player(rng, keeper, keeper_vel, Team::Defending, false));
    let mut targets: Vec<usize> = (1..TEAM_SIZE).collect();
    let spread = cfg.marking_spread * (1.15 - compactness);
    for _ in 0..TEAM_SIZE - 1 {
        let zonal = rng.random_bool(0.15 + 0.35 * compactness);
        let (pos, vel) = if zonal || targets.is_empty() {
            let pos = (rng.random_range(HALF_PITCH - 0.8..HALF_PITCH - 0.2), n01.sample(rng) * 1.0);
            (pos, random_velocity(rng, cfg.max_speed * 0.3))
        } else {
            let k = rng.random_range(0..targets.len());
            let a = players[targets.swap_remove(k)];
            // Goal side of the attacker, jittered by how loose the marking is.
            let lean = toward((a.x, a.y), goal, 0.25);
            let pos = (a.x + lean.0 + n01.sample(rng) * spread, a.y + lean.1 + n01.sample(rng) * spread);
            let follow = rng.random_range(0.3..1.0);
            let (jx, jy) = random_velocity(rng, cfg.max_speed * 0.3);
            (pos, (a.vx * follow + jx, a.vy * follow + jy))
        };
        players.push(player(rng, pos, vel, Team::Defending, false));
    }

    // The kicker aims at an open attacker near goal.
    let ext: Vec<(f64, f64)> = players.iter().map(|p| extrapolate(p, cfg.flight_time)).collect();
    let scores: Vec<f64> = (1..TEAM_SIZE)
        .map(|i| {
            let openness = (TEAM_SIZE..PLAYER_COUNT).map(|j| dist(ext[i], ext[j])).fold(f64::INFINITY, f64::min).min(1.5);
            openness - 0.25 * dist(ext[i], goal)
        })
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - top) / cfg.target_temperature).exp()).collect();
    let mut pick = rng.random_range(0.0..weights.iter().sum::<f64>());
    let mut target = TEAM_SIZE - 1;
    for (k, w) in weights.iter().enumerate() {
        if pick < *w {
            target = k + 1;
            break;
        }
        pick -= w;
    }
    let landing = (
        clamp_pitch(ext[target].0 + n01.sample(rng) * cfg.landing_noise),
        clamp_pitch(ext[target].1 + n01.sample(rng) * cfg.landing_noise),
    );
    (players, landing)
}

/// Scene `index` of the stream defined by `cfg.seed`; independent of
/// `cfg.n_samples`.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (players, landing) = canonical_scene(cfg, &mut rng);
    let frame = D2Element::ALL[rng.random_range(0..4)];
    let canonical = CornerGraph::new(format!("synth-{}-{index:06}", cfg.seed), players, None, None).expect("generator emits valid rosters");
    let corner = apply(frame, &canonical);
    let landing = frame.apply_xy(landing.0, landing.1);
    let receiver = oracle_receiver(&corner, landing, cfg.flight_time);
    let shot = oracle_shot(&corner, receiver, cfg.flight_time, cfg.shot_zone_radius);
    let corner = corner.with_labels(Some(receiver), Some(shot)).expect("receiver index is valid");
    SynthScene { corner, landing }
}

pub fn generate_scenes(cfg: &SynthConfig) -> Result<Vec<SynthScene>, SynthError> {
    cfg.validate()?;
    Ok((0..cfg.n_samples).map(|i| generate_scene(cfg, i)).collect())
}

/// Labelled corners; the landing points are dropped.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<CornerGraph>, SynthError> {
    Ok(generate_scenes(cfg)?.into_iter().map(|s| s.corner).collect())
}
