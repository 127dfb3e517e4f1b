//! Success rate, MPJPE and episode length, plus perturbation sweeps over a
//! trained policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, PerturbationConfig, PerturbationMode, StepRecord, TrackingEnv};
use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::parallel::parallel_map;
use crate::physics::World;
use crate::policy::{PolicyState, Variant};

/// Per-frame mean joint error above which an episode fails (m).
pub const SUCCESS_THRESHOLD: f64 = 0.5;

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub clip: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// The simulation blew up before the episode ended.
    pub diverged: bool,
}

impl EpisodeTrace {
    pub fn frames(&self) -> usize {
        self.records.len()
    }

    pub fn terminated(&self) -> bool {
        self.diverged || self.records.iter().any(|r| r.terminated)
    }

    pub fn succeeded(&self, threshold: f64) -> Result<bool> {
        Ok(!self.diverged && episode_success(&self.records, threshold)?)
    }

    pub fn mean_track_reward(&self) -> f64 {
        let (sum, n) = self
            .records
            .iter()
            .flat_map(|r| &r.rewards)
            .fold((0.0, 0usize), |(s, n), r| (s + r.track, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// True iff every character's mean joint error stays below `threshold` at
/// every frame and nothing terminated.
pub fn episode_success(records: &[StepRecord], threshold: f64) -> Result<bool> {
    if records.is_empty() {
        return Err(Error::Input("cannot judge an empty episode".into()));
    }
    Ok(records
        .iter()
        .all(|r| !r.terminated && r.joint_errors.iter().all(|e| *e < threshold)))
}

/// Mean joint position error over every frame, character and episode, in
/// millimetres.
pub fn mpjpe_mm<'a>(traces: impl IntoIterator<Item = &'a [StepRecord]>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in traces.into_iter().flatten() {
        for e in &r.joint_errors {
            if !(*e >= 0.0) {
                return Err(Error::Numeric(format!("joint error {e}")));
            }
            sum += e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Input("no joint errors to average".into()));
    }
    Ok(1000.0 * sum / n as f64)
}

/// Millimetres with one decimal, the precision reports are read at.
pub fn format_mm(mm: f64) -> String {
    format!("{mm:.1}")
}

/// Mean episode duration in seconds.
pub fn mean_episode_length(frame_counts: &[usize], control_rate: f64) -> Result<f64> {
    if !(control_rate > 0.0) {
        return Err(Error::Input(format!("control rate {control_rate} must be positive")));
    }
    if frame_counts.is_empty() {
        return Err(Error::Input("no episodes".into()));
    }
    let total: usize = frame_counts.iter().sum();
    Ok(total as f64 / frame_counts.len() as f64 / control_rate)
}

/// Manual-PNN subset a clip belongs to; zero for every other variant.
pub fn clip_subset(policy: &PolicyState, world: &World, clip: &MotionClip) -> usize {
    if policy.variant() == Variant::ManualPnn {
        policy.subset_of(clip.mean_separation(world))
    } else {
        0
    }
}

/// Tracks `clip` from its first frame with deterministic mean actions until
/// the episode ends.
pub fn run_episode(world: &World, clip: &MotionClip, policy: &PolicyState, env: &EnvConfig, seed: u64) -> Result<EpisodeTrace> {
    let config = EnvConfig {
        random_start: false,
        ..env.clone()
    };
    let subset = clip_subset(policy, world, clip);
    let mut env = TrackingEnv::new(world, clip, config, seed)?;
    let mut diverged = false;
    while !env.status().is_done() {
        let actions = (0..env.character_count())
            .map(|c| {
                let x = env.policy_input(c, &policy.normalizer)?;
                policy.compose_mean(&x, subset)
            })
            .collect::<Result<Vec<_>>>()?;
        match env.step(&actions) {
            Ok(_) => {}
            Err(Error::Divergence(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EpisodeTrace {
        clip: clip.id.clone(),
        seed,
        records: env.trace().to_vec(),
        diverged,
    })
}

/// One point of a perturbation sweep. `level` is a projectile mass in kg or
/// an observation noise scale; zero when unperturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mode: PerturbationMode,
    pub level: f64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation {
        mode: PerturbationMode::None,
        level: 0.0,
    };

    pub fn config(&self) -> PerturbationConfig {
        match self.mode {
            PerturbationMode::None => PerturbationConfig::default(),
            PerturbationMode::Object => PerturbationConfig::object(self.level),
            PerturbationMode::Noise => PerturbationConfig::noise(self.level),
        }
    }

    /// Sweep over `levels` of one mode.
    pub fn sweep(mode: PerturbationMode, levels: &[f64]) -> Vec<Perturbation> {
        levels.iter().map(|&level| Perturbation { mode, level }).collect()
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            PerturbationMode::None => f.write_str("none"),
            PerturbationMode::Object => write!(f, "object {} kg", self.level),
            PerturbationMode::Noise => write!(f, "noise {}", self.level),
        }
    }
}

/// Parses `none`, `object` or `noise`.
pub fn parse_mode(s: &str) -> Result<PerturbationMode> {
    match s {
        "none" => Ok(PerturbationMode::None),
        "object" => Ok(PerturbationMode::Object),
        "noise" => Ok(PerturbationMode::Noise),
        _ => Err(Error::Input(format!("unknown perturbation '{s}' (expected none, object or noise)"))),
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    /// `mode` or `mode:level`.
    fn from_str(s: &str) -> Result<Self> {
        let (mode, level) = match s.split_once(':') {
            Some((m, l)) => (m, l.parse().map_err(|_| Error::Input(format!("bad perturbation level '{l}'")))?),
            None => (s, 0.0),
        };
        Ok(Perturbation { mode: parse_mode(mode)?, level })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mpjpe_mm: f64,
    pub mean_episode_s: f64,
    pub mean_track_reward: f64,
}

/// Metrics for one perturbation level. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub checkpoint: String,
    pub clip_set: Vec<String>,
    pub perturbation: Perturbation,
    pub success_rate: f64,
    pub mpjpe_mm: f64,
    pub mean_episode_s: f64,
    pub mean_track_reward: f64,
    pub episodes: usize,
    pub per_clip: Vec<ClipMetrics>,
}

impl MetricsReport {
    /// Aggregates traces. Clips without any trace are left out of `per_clip`.
    pub fn from_traces(
        checkpoint: &str,
        clips: &[MotionClip],
        perturbation: Perturbation,
        traces: &[EpisodeTrace],
        control_rate: f64,
    ) -> Result<Self> {
        let summarize = |ts: &[&EpisodeTrace]| -> Result<(f64, f64, f64, f64)> {
            let successes = ts
                .iter()
                .map(|t| t.succeeded(SUCCESS_THRESHOLD))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|s| *s)
                .count();
            let frames: Vec<usize> = ts.iter().map(|t| t.frames()).collect();
            let reward = ts.iter().map(|t| t.mean_track_reward()).sum::<f64>() / ts.len() as f64;
            Ok((
                successes as f64 / ts.len() as f64,
                mpjpe_mm(ts.iter().map(|t| t.records.as_slice()))?,
                mean_episode_length(&frames, control_rate)?,
                reward,
            ))
        };
        if traces.is_empty() {
            return Err(Error::Input("no episodes to report".into()));
        }
        let mut per_clip = Vec::new();
        for clip in clips {
            let ts: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.clip == clip.id).collect();
            if ts.is_empty() {
                continue;
            }
            let (success_rate, mpjpe_mm, mean_episode_s, mean_track_reward) = summarize(&ts)?;
            per_clip.push(ClipMetrics {
                clip: clip.id.clone(),
                episodes: ts.len(),
                success_rate,
                mpjpe_mm,
                mean_episode_s,
                mean_track_reward,
            });
        }
        let all: Vec<&EpisodeTrace> = traces.iter().collect();
        let (success_rate, mpjpe_mm, mean_episode_s, mean_track_reward) = summarize(&all)?;
        Ok(Self {
            checkpoint: checkpoint.to_string(),
            clip_set: clips.iter().map(|c| c.id.clone()).collect(),
            perturbation,
            success_rate,
            mpjpe_mm,
            mean_episode_s,
            mean_track_reward,
            episodes: traces.len(),
            per_clip,
        })
    }

    /// One-line summary: success, MPJPE and episode length.
    pub fn headline(&self) -> String {
        format!(
            "{}: success {:.1}%, MPJPE {} mm, mean episode {:.2} s, mean tracking reward {:.4} ({} episodes)",
            self.perturbation,
            100.0 * self.success_rate,
            format_mm(self.mpjpe_mm),
            self.mean_episode_s,
            self.mean_track_reward,
            self.episodes
        )
    }
}

/// Evaluates `policy` on every clip and seed at each perturbation level (an
/// empty sweep means a single unperturbed level). Returns one report per
/// level, in sweep order.
#[allow(clippy::too_many_arguments)]
pub fn run_evaluation(
    world: &World,
    policy: &PolicyState,
    clips: &[MotionClip],
    env: &EnvConfig,
    sweep: &[Perturbation],
    seeds: &[u64],
    checkpoint: &str,
    workers: usize,
) -> Result<Vec<MetricsReport>> {
    if clips.is_empty() || seeds.is_empty() {
        return Err(Error::Input("evaluation needs at least one clip and one seed".into()));
    }
    let levels = if sweep.is_empty() { vec![Perturbation::NONE] } else { sweep.to_vec() };
    let mut jobs = Vec::new();
    for (l, _) in levels.iter().enumerate() {
        for (c, _) in clips.iter().enumerate() {
            for &seed in seeds {
                jobs.push((l, c, seed));
            }
        }
    }
    let traces = parallel_map(&jobs, workers, |_, &(l, c, seed)| {
        let cfg = EnvConfig {
            perturbation: levels[l].config(),
            ..env.clone()
        };
        run_episode(world, &clips[c], policy, &cfg, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rate = world.config.control_rate;
    levels
        .iter()
        .enumerate()
        .map(|(l, level)| {
            let ts: Vec<EpisodeTrace> = jobs
                .iter()
                .zip(&traces)
                .filter(|((jl, _, _), _)| *jl == l)
                .map(|(_, t)| t.clone())
                .collect();
            MetricsReport::from_traces(checkpoint, clips, *level, &ts, rate)
        })
        .collect()
}

mod replay;
pub use replay::{replay, write_replay_csv, CharacterRow, Controller, ReplayRow};

#[cfg(test)]
mod tests;
