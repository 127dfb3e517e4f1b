use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{Projectile, SimState, Vec2, World};

/// m
pub const PROJECTILE_RADIUS: f64 = 0.1;
/// Distance from the aimed body at spawn (m).
const SPAWN_DISTANCE: f64 = 1.5;
/// Projectiles older than this are removed (s).
const MAX_AGE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    None,
    Object,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub mode: PerturbationMode,
    /// Candidate projectile masses (kg).
    pub masses: Vec<f64>,
    /// s
    pub throw_interval: f64,
    /// m/s
    pub throw_speed: f64,
    /// Standard deviation of the noise added to normalized observations.
    pub noise_scale: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            mode: PerturbationMode::None,
            masses: vec![3.0, 7.0, 15.0],
            throw_interval: 1.0,
            throw_speed: 6.0,
            noise_scale: 0.0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("projectile masses must be positive".into()));
        }
        if self.mode == PerturbationMode::Object && self.masses.is_empty() {
            return Err(Error::Config("object perturbation needs at least one mass".into()));
        }
        if !(self.throw_interval > 0.0) || !(self.throw_speed > 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::Config(
                "throw interval and speed must be positive, noise scale nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn object(mass: f64) -> Self {
        Self {
            mode: PerturbationMode::Object,
            masses: vec![mass],
            ..Self::default()
        }
    }

    pub fn noise(scale: f64) -> Self {
        Self {
            mode: PerturbationMode::Noise,
            noise_scale: scale,
            ..Self::default()
        }
    }
}

/// Projectile schedule of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturber {
    next_throw: f64,
    /// Masses of every projectile spawned so far.
    pub spawned: Vec<f64>,
}

impl Perturber {
    pub fn new(start_time: f64, cfg: &PerturbationConfig) -> Self {
        Self {
            next_throw: start_time + cfg.throw_interval,
            spawned: Vec::new(),
        }
    }

    /// Drops stale projectiles and, when a throw is due, spawns one aimed at a
    /// random body so that it reaches it under gravity after flying
    /// `SPAWN_DISTANCE / throw_speed` seconds.
    pub fn apply<R: Rng>(&mut self, world: &World, sim: &mut SimState, cfg: &PerturbationConfig, rng: &mut R) {
        sim.projectiles.retain(|p| {
            let near = sim.characters.iter().any(|c| (p.pos - c.root_pos).norm() < 10.0);
            p.age < MAX_AGE && p.pos.y > -1.0 && near
        });
        if cfg.mode != PerturbationMode::Object || sim.characters.is_empty() || sim.time + 1e-9 < self.next_throw {
            return;
        }
        self.next_throw += cfg.throw_interval;

        let character = rng.random_range(0..sim.characters.len());
        let body = rng.random_range(0..world.body_count());
        let mass = cfg.masses[rng.random_range(0..cfg.masses.len())];
        let target = sim.characters[character].bodies[body].pos;
        let clear = |p: Vec2| {
            p.y > PROJECTILE_RADIUS + 0.05
                && sim
                    .characters
                    .iter()
                    .flat_map(|c| &c.bodies)
                    .all(|b| (b.pos - p).norm() > 0.4)
        };
        let mut spawn = None;
        for _ in 0..8 {
            let theta = rng.random_range(0.1 * std::f64::consts::PI..0.9 * std::f64::consts::PI);
            let p = target + SPAWN_DISTANCE * Vec2::new(theta.cos(), theta.sin());
            if clear(p) {
                spawn = Some(p);
                break;
            }
        }
        let Some(pos) = spawn else {
            return;
        };
        let flight = SPAWN_DISTANCE / cfg.throw_speed;
        let gravity = Vec2::new(0.0, world.config.gravity);
        let vel = (target - pos) / flight - 0.5 * gravity * flight;
        sim.projectiles.push(Projectile {
            pos,
            vel,
            mass,
            radius: PROJECTILE_RADIUS,
            age: 0.0,
        });
        self.spawned.push(mass);
    }
}

/// Adds `N(0, σ²)` to every entry. `σ = 0` leaves the slice untouched and
/// draws nothing from `rng`.
pub fn add_observation_noise<R: Rng>(features: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive finite sigma");
    for v in features {
        *v += normal.sample(rng);
    }
}
