use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    add_observation_noise, check_clip, check_termination, energy_reward, goal_features, joint_position_errors,
    mean_body_error, observe, tracking_reward, EnvConfig, GoalState, HumanoidState, Normalizer, PerturbationMode,
    Perturber, RewardBreakdown, Status,
};
use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::physics::{Actuation, SimState, World};

/// What one control step produced, per character.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<RewardBreakdown>,
    pub statuses: Vec<Status>,
    /// Episode status: terminated if any character terminated.
    pub status: Status,
    /// Mean body position error against the tracked frame (m).
    pub body_errors: Vec<f64>,
    /// Per-joint anchor position errors (m).
    pub joint_errors: Vec<Vec<f64>>,
    pub contacts: usize,
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub frame: usize,
    pub rewards: Vec<RewardBreakdown>,
    pub body_errors: Vec<f64>,
    /// Mean joint anchor error per character (m).
    pub joint_errors: Vec<f64>,
    pub contacts: usize,
    pub terminated: bool,
}

/// One episode of two (or more) characters tracking a clip. Actions are
/// per-character offsets, in each character's own angle convention, added to
/// the next frame's reference joint angles to form PD targets.
#[derive(Debug, Clone)]
pub struct TrackingEnv<'a> {
    world: &'a World,
    clip: &'a MotionClip,
    config: EnvConfig,
    sim: SimState,
    start: usize,
    frame: usize,
    steps: usize,
    rng: ChaCha8Rng,
    perturber: Perturber,
    status: Status,
    trace: Vec<StepRecord>,
}

impl<'a> TrackingEnv<'a> {
    /// Builds the environment and resets it.
    pub fn new(world: &'a World, clip: &'a MotionClip, config: EnvConfig, seed: u64) -> Result<Self> {
        check_clip(world, clip)?;
        config.validate()?;
        let perturber = Perturber::new(0.0, &config.perturbation);
        let mut env = Self {
            world,
            clip,
            sim: clip.sim_state(world, 0)?,
            config,
            start: 0,
            frame: 0,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            perturber,
            status: Status::Continue,
            trace: Vec::new(),
        };
        env.reset()?;
        Ok(env)
    }

    /// Starts a new episode, at a random frame when configured. Returns the
    /// start frame.
    pub fn reset(&mut self) -> Result<usize> {
        let start = if self.config.random_start {
            self.rng.random_range(0..self.clip.frame_count() - 1)
        } else {
            0
        };
        self.reset_at(start)?;
        Ok(start)
    }

    pub fn reset_at(&mut self, frame: usize) -> Result<()> {
        if frame + 1 >= self.clip.frame_count() {
            return Err(Error::Range {
                frame,
                frames: self.clip.frame_count(),
            });
        }
        self.sim = self.clip.sim_state(self.world, frame)?;
        self.start = frame;
        self.frame = frame;
        self.steps = 0;
        self.status = Status::Continue;
        self.perturber = Perturber::new(self.sim.time, &self.config.perturbation);
        self.trace.clear();
        Ok(())
    }

    pub fn world(&self) -> &'a World {
        self.world
    }

    pub fn clip(&self) -> &'a MotionClip {
        self.clip
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    pub fn start_frame(&self) -> usize {
        self.start
    }

    /// Clip frame the simulation currently corresponds to.
    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn perturber(&self) -> &Perturber {
        &self.perturber
    }

    pub fn character_count(&self) -> usize {
        self.sim.characters.len()
    }

    fn goal_frame(&self) -> usize {
        (self.frame + 1).min(self.clip.frame_count() - 1)
    }

    pub fn observation(&self, character: usize) -> Result<HumanoidState> {
        observe(&self.sim, character)
    }

    /// Goal toward the next frame (the last frame once the clip is done).
    pub fn goal(&self, character: usize) -> Result<GoalState> {
        goal_features(&self.sim, self.clip, self.goal_frame(), character)
    }

    /// Unnormalized observation and goal features, concatenated.
    pub fn raw_input(&self, character: usize) -> Result<Vec<f64>> {
        let mut x = self.observation(character)?.features();
        x.extend(self.goal(character)?.features());
        Ok(x)
    }

    /// Normalized input, with observation noise on the humanoid-state part
    /// when noise perturbation is enabled.
    pub fn policy_input(&mut self, character: usize, normalizer: &Normalizer) -> Result<Vec<f64>> {
        let mut x = normalizer.normalize(&self.raw_input(character)?)?;
        let p = &self.config.perturbation;
        if p.mode == PerturbationMode::Noise {
            let n = HumanoidState::dim(self.world.body_count());
            add_observation_noise(&mut x[..n], p.noise_scale, &mut self.rng);
        }
        Ok(x)
    }

    /// Physical PD targets for per-character actions.
    pub fn pd_targets(&self, actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        let nj = self.world.joint_count();
        if actions.len() != self.character_count() || actions.iter().any(|a| a.len() != nj) {
            return Err(Error::Shape(format!(
                "expected {} actions of {nj} entries",
                self.character_count()
            )));
        }
        let next = &self.clip.frames[self.goal_frame()];
        let scale = self.config.action_scale;
        let mut targets = Vec::with_capacity(nj * actions.len());
        for ((a, reference), c) in actions.iter().zip(next).zip(&self.sim.characters) {
            targets.extend(a.iter().zip(&reference.joint_angles).map(|(a, q)| q + c.facing * scale * a));
        }
        Ok(targets)
    }

    /// Advances one control step. A physics failure ends the episode as
    /// terminated and is returned as the error.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepOutcome> {
        if self.status.is_done() {
            return Err(Error::Input("episode is over; reset before stepping".into()));
        }
        let targets = self.pd_targets(actions)?;
        let mut sim = std::mem::replace(&mut self.sim, SimState::new(Vec::new()));
        self.perturber
            .apply(self.world, &mut sim, &self.config.perturbation, &mut self.rng);
        let next = self.world.step(&sim, &Actuation::PdTargets(targets));
        self.sim = sim;
        self.sim = match next {
            Ok(s) => s,
            Err(e) => {
                self.status = Status::Terminated;
                return Err(e);
            }
        };
        self.frame += 1;
        self.steps += 1;

        let nj = self.world.joint_count();
        let nc = self.character_count();
        let reference = self.clip.sim_state(self.world, self.frame)?;
        let mut out = StepOutcome {
            rewards: Vec::with_capacity(nc),
            statuses: Vec::with_capacity(nc),
            status: Status::Continue,
            body_errors: Vec::with_capacity(nc),
            joint_errors: Vec::with_capacity(nc),
            contacts: self.sim.inter_character_contacts(),
        };
        for c in 0..nc {
            let mut r = tracking_reward(&self.sim, self.clip, self.frame, c, &self.config.reward)?;
            let torques = &self.sim.torques[c * nj..(c + 1) * nj];
            let energy = energy_reward(torques, &self.sim.characters[c].joint_rates, self.config.reward.energy_scale)?;
            r = RewardBreakdown::from_terms(r.terms(), &self.config.reward.weights, energy);
            out.rewards.push(r);
            out.statuses
                .push(check_termination(&self.sim, self.clip, self.frame, c, &self.config, self.steps)?);
            out.body_errors
                .push(mean_body_error(&self.sim, self.clip, self.frame, c)?);
            out.joint_errors
                .push(joint_position_errors(&self.sim.characters[c], &reference.characters[c]));
        }
        out.status = if out.statuses.contains(&Status::Terminated) {
            Status::Terminated
        } else if out.statuses.contains(&Status::Truncated) {
            Status::Truncated
        } else {
            Status::Continue
        };
        self.status = out.status;
        self.trace.push(StepRecord {
            time: self.sim.time,
            frame: self.frame,
            rewards: out.rewards.clone(),
            body_errors: out.body_errors.clone(),
            joint_errors: out
                .joint_errors
                .iter()
                .map(|e| e.iter().sum::<f64>() / e.len().max(1) as f64)
                .collect(),
            contacts: out.contacts,
            terminated: out.status == Status::Terminated,
        });
        Ok(out)
    }
}

/// Actions that make the environment reproduce the PD targets stored with a
/// generated clip: `actions[t][character]`.
pub fn reference_residuals(world: &World, clip: &MotionClip, action_scale: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    let stored = clip
        .actions
        .as_ref()
        .ok_or_else(|| Error::Input(format!("clip {} has no stored targets", clip.id)))?;
    let nj = world.joint_count();
    Ok(stored
        .iter()
        .enumerate()
        .map(|(t, targets)| {
            clip.frames[t + 1]
                .iter()
                .zip(&clip.facing)
                .enumerate()
                .map(|(c, (f, facing))| {
                    (0..nj)
                        .map(|j| facing * (targets[c * nj + j] - f.joint_angles[j]) / action_scale)
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// Writes an episode trace, one row per control step.
pub fn write_trace_csv<W: Write>(records: &[StepRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let nc = records.first().map_or(0, |r| r.rewards.len());
    let mut header = vec!["time".to_string(), "frame".to_string()];
    for c in 0..nc {
        for name in [
            "position",
            "heading",
            "velocity",
            "angular",
            "joint_position",
            "joint_velocity",
            "track",
            "energy",
            "total",
            "body_error",
            "joint_error",
        ] {
            header.push(format!("c{c}_{name}"));
        }
    }
    header.extend(["contacts".to_string(), "terminated".to_string()]);
    out.write_record(&header).map_err(csv_error)?;
    for r in records {
        let mut row = vec![format!("{:.6}", r.time), r.frame.to_string()];
        for c in 0..nc {
            let b = &r.rewards[c];
            for v in b.terms().into_iter().chain([b.track, b.energy, b.total, r.body_errors[c], r.joint_errors[c]]) {
                row.push(format!("{v:.9}"));
            }
        }
        row.push(r.contacts.to_string());
        row.push(u8::from(r.terminated).to_string());
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Input(format!("csv: {other:?}")),
    }
}
