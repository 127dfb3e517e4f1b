//! Tracking environment: observations, goals, rewards, termination,
//! perturbations and the two-character episode driver.

mod episode;
mod normalizer;
mod perturb;

pub use episode::{reference_residuals, write_trace_csv, StepOutcome, StepRecord, TrackingEnv};
pub use normalizer::Normalizer;
pub use perturb::{add_observation_noise, PerturbationConfig, PerturbationMode, Perturber, PROJECTILE_RADIUS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{CharacterFrame, MotionClip};
use crate::physics::{local_frame, wrap_angle, CharacterState, SimState, Vec2, World};

/// Local body positions and linear velocities in the character's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanoidState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
}

impl HumanoidState {
    pub fn dim(bodies: usize) -> usize {
        4 * bodies
    }

    /// Positions first, then velocities.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.positions.len());
        for p in self.positions.iter().chain(&self.velocities) {
            out.extend([p.x, p.y]);
        }
        out
    }
}

/// Offsets from the simulated pose to the next target frame, plus the raw
/// target joint state. Angles use the character's own convention (mirrored
/// for characters facing `-x`).
#[derive(Debug, Clone, PartialEq)]
pub struct GoalState {
    /// Body position offsets, local frame (m).
    pub dp: Vec<Vec2>,
    /// Body heading differences, wrapped to `(-π, π]`.
    pub dq: Vec<f64>,
    /// Body linear velocity offsets, local frame (m/s).
    pub dv: Vec<Vec2>,
    /// Body angular velocity offsets (rad/s).
    pub da: Vec<f64>,
    /// Target joint angles (rad).
    pub jp: Vec<f64>,
    /// Target joint rates (rad/s).
    pub jv: Vec<f64>,
}

impl GoalState {
    pub fn dim(bodies: usize, joints: usize) -> usize {
        6 * bodies + 2 * joints
    }

    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(6 * self.dq.len() + 2 * self.jp.len());
        for p in &self.dp {
            out.extend([p.x, p.y]);
        }
        out.extend(&self.dq);
        for v in &self.dv {
            out.extend([v.x, v.y]);
        }
        out.extend(&self.da);
        out.extend(&self.jp);
        out.extend(&self.jv);
        out
    }
}

/// Policy input width for a model with `bodies` bodies and `joints` joints.
pub fn input_dim(bodies: usize, joints: usize) -> usize {
    HumanoidState::dim(bodies) + GoalState::dim(bodies, joints)
}

/// Kernel weights and scales for the six tracking terms, in the order
/// position, heading, linear velocity, angular velocity, joint angle,
/// joint rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub weights: [f64; 6],
    pub kernels: [f64; 6],
    /// Normalizer `c` of the energy penalty (1/W).
    pub energy_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: [0.3, 0.2, 0.1, 0.1, 0.2, 0.1],
            kernels: [20.0, 10.0, 2.0, 0.5, 10.0, 0.5],
            energy_scale: 5e-4,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("reward weights must be nonnegative and sum to 1".into()));
        }
        if self.kernels.iter().any(|a| !(*a >= 0.0)) || !(self.energy_scale >= 0.0) {
            return Err(Error::Config("reward kernel scales must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Control steps per episode.
    pub max_episode_steps: usize,
    /// Mean body distance (m) above which an episode terminates.
    pub termination_threshold: f64,
    pub random_start: bool,
    /// Radians of PD-target offset per unit of action.
    pub action_scale: f64,
    pub reward: RewardConfig,
    pub perturbation: PerturbationConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_episode_steps: 300,
            termination_threshold: 0.5,
            random_start: true,
            action_scale: 0.2,
            reward: RewardConfig::default(),
            perturbation: PerturbationConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_episode_steps == 0 || !(self.termination_threshold > 0.0) || !(self.action_scale > 0.0) {
            return Err(Error::Config(
                "episode length, termination threshold and action scale must be positive".into(),
            ));
        }
        self.reward.validate()?;
        self.perturbation.validate()
    }
}

/// Per-character reward terms for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub position: f64,
    pub heading: f64,
    pub velocity: f64,
    pub angular: f64,
    pub joint_position: f64,
    pub joint_velocity: f64,
    pub track: f64,
    pub energy: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Assembles the breakdown from the six kernel values.
    pub fn from_terms(terms: [f64; 6], weights: &[f64; 6], energy: f64) -> Self {
        let track = terms.iter().zip(weights).map(|(r, w)| w * r).sum::<f64>();
        Self {
            position: terms[0],
            heading: terms[1],
            velocity: terms[2],
            angular: terms[3],
            joint_position: terms[4],
            joint_velocity: terms[5],
            track,
            energy,
            total: combine_rewards(track, energy),
        }
    }

    pub fn terms(&self) -> [f64; 6] {
        [
            self.position,
            self.heading,
            self.velocity,
            self.angular,
            self.joint_position,
            self.joint_velocity,
        ]
    }
}

/// `r_total = r_track + 0.5 r_energy`
pub fn combine_rewards(track: f64, energy: f64) -> f64 {
    track + 0.5 * energy
}

pub fn observe(sim: &SimState, character: usize) -> Result<HumanoidState> {
    let frame = local_frame(sim, character)?;
    let c = &sim.characters[character];
    Ok(HumanoidState {
        positions: c.bodies.iter().map(|b| frame.point(b.pos)).collect(),
        velocities: c.bodies.iter().map(|b| frame.vector(b.vel)).collect(),
    })
}

fn target_frame<'c>(clip: &'c MotionClip, frame: usize, character: usize) -> Result<&'c CharacterFrame> {
    clip.frame(frame)?
        .get(character)
        .ok_or(Error::Lookup { kind: "character", index: character })
}

fn check_shapes(c: &CharacterState, target: &CharacterFrame) -> Result<()> {
    if c.bodies.len() != target.body_pos.len() || c.joint_angles.len() != target.joint_angles.len() {
        return Err(Error::Shape("clip does not match the simulated character".into()));
    }
    Ok(())
}

pub fn goal_features(sim: &SimState, clip: &MotionClip, frame: usize, character: usize) -> Result<GoalState> {
    let target = target_frame(clip, frame, character)?;
    let lf = local_frame(sim, character)?;
    let c = &sim.characters[character];
    check_shapes(c, target)?;
    let f = c.facing;
    let bodies = c.bodies.iter().enumerate();
    Ok(GoalState {
        dp: bodies.clone().map(|(i, b)| lf.vector(target.body_pos[i] - b.pos)).collect(),
        dq: bodies
            .clone()
            .map(|(i, b)| f * wrap_angle(b.angle - target.body_angle[i]))
            .collect(),
        dv: bodies.clone().map(|(i, b)| lf.vector(target.body_vel[i] - b.vel)).collect(),
        da: bodies.map(|(i, b)| f * (target.body_omega[i] - b.omega)).collect(),
        jp: target.joint_angles.iter().map(|q| f * q).collect(),
        jv: target.joint_rates.iter().map(|r| f * r).collect(),
    })
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean squared errors of the six tracked quantities.
pub fn tracking_errors(sim: &SimState, clip: &MotionClip, frame: usize, character: usize) -> Result<[f64; 6]> {
    let target = target_frame(clip, frame, character)?;
    let c = sim
        .characters
        .get(character)
        .ok_or(Error::Lookup { kind: "character", index: character })?;
    check_shapes(c, target)?;
    let b = &c.bodies;
    let t = target;
    Ok([
        mean(b.iter().zip(&t.body_pos).map(|(b, p)| (p - b.pos).norm_squared())),
        mean(b.iter().zip(&t.body_angle).map(|(b, q)| wrap_angle(q - b.angle).powi(2))),
        mean(b.iter().zip(&t.body_vel).map(|(b, v)| (v - b.vel).norm_squared())),
        mean(b.iter().zip(&t.body_omega).map(|(b, w)| (w - b.omega).powi(2))),
        mean(c.joint_angles.iter().zip(&t.joint_angles).map(|(q, qt)| wrap_angle(qt - q).powi(2))),
        mean(c.joint_rates.iter().zip(&t.joint_rates).map(|(r, rt)| (rt - r).powi(2))),
    ])
}

/// Kernel rewards `exp(-α mse)` combined with the configured weights. The
/// energy term is left at zero.
pub fn tracking_reward(
    sim: &SimState,
    clip: &MotionClip,
    frame: usize,
    character: usize,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown> {
    let mse = tracking_errors(sim, clip, frame, character)?;
    let mut terms = [0.0; 6];
    for ((r, e), a) in terms.iter_mut().zip(mse).zip(cfg.kernels) {
        *r = (-a * e).exp();
    }
    Ok(RewardBreakdown::from_terms(terms, &cfg.weights, 0.0))
}

/// `-c · mean |τ q̇|`
pub fn energy_reward(torques: &[f64], rates: &[f64], scale: f64) -> Result<f64> {
    if torques.len() != rates.len() {
        return Err(Error::Shape(format!(
            "{} torques for {} joint rates",
            torques.len(),
            rates.len()
        )));
    }
    let power = mean(torques.iter().zip(rates).map(|(t, r)| (t * r).abs()));
    Ok(-scale * power)
}

/// Mean world distance between simulated and target body positions (m).
pub fn mean_body_error(sim: &SimState, clip: &MotionClip, frame: usize, character: usize) -> Result<f64> {
    let target = target_frame(clip, frame, character)?;
    let c = sim
        .characters
        .get(character)
        .ok_or(Error::Lookup { kind: "character", index: character })?;
    check_shapes(c, target)?;
    Ok(mean(c.bodies.iter().zip(&target.body_pos).map(|(b, p)| (p - b.pos).norm())))
}

/// Per-joint world anchor distances between a simulated character and the
/// target pose (m).
pub fn joint_position_errors(c: &CharacterState, target: &CharacterState) -> Vec<f64> {
    c.joint_positions
        .iter()
        .zip(&target.joint_positions)
        .map(|(a, b)| (a - b).norm())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Continue,
    /// Tracking failed.
    Terminated,
    /// Horizon or clip end reached.
    Truncated,
}

impl Status {
    pub fn is_done(self) -> bool {
        self != Status::Continue
    }
}

/// Termination takes precedence over truncation. `steps` counts control
/// steps taken so far in the episode, `frame` is the frame just tracked.
pub fn check_termination(
    sim: &SimState,
    clip: &MotionClip,
    frame: usize,
    character: usize,
    cfg: &EnvConfig,
    steps: usize,
) -> Result<Status> {
    if mean_body_error(sim, clip, frame, character)? > cfg.termination_threshold {
        Ok(Status::Terminated)
    } else if frame + 1 >= clip.frame_count() || steps >= cfg.max_episode_steps {
        Ok(Status::Truncated)
    } else {
        Ok(Status::Continue)
    }
}

/// Checks that `clip` can drive `world`.
pub fn check_clip(world: &World, clip: &MotionClip) -> Result<()> {
    clip.validate()?;
    if clip.body_count() != world.body_count() || clip.joint_count() != world.joint_count() {
        return Err(Error::Shape(format!(
            "clip {} has {} bodies and {} joints, model has {} and {}",
            clip.id,
            clip.body_count(),
            clip.joint_count(),
            world.body_count(),
            world.joint_count()
        )));
    }
    if (clip.fps - world.config.control_rate).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "clip {} runs at {} fps, control rate is {} Hz",
            clip.id, clip.fps, world.config.control_rate
        )));
    }
    Ok(())
}
