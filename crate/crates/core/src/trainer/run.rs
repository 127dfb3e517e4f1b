use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    clipped_surrogate, compute_gae, gating_loss, normalize_advantages, sampling_probs, stagnation_check,
    weighted_total_loss, TrainerConfig,
};
use crate::env::{input_dim, EnvConfig, Normalizer, RewardBreakdown, Status, TrackingEnv};
use crate::error::{Error, Result};
use crate::eval::{episode_success, SUCCESS_THRESHOLD};
use crate::motion::{ClipLibrary, ClipStats, EpisodeOutcome, MotionClip};
use crate::nn::Adam;
use crate::parallel::parallel_map;
use crate::physics::World;
use crate::policy::{
    gaussian_log_prob, gaussian_log_prob_grad, routing_fraction, select_routed, BlockId, PolicyGrad, PolicyState,
    Variant,
};

/// One control step of one character.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Normalized observation and goal.
    pub input: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: RewardBreakdown,
    pub status: Status,
    pub clip: usize,
    pub expert: usize,
    /// Confidence of every gating head (progressive policies only).
    pub confidence: Vec<f64>,
    pub subset: usize,
}

/// Consecutive transitions of one character in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub clip: usize,
    pub character: usize,
    pub transitions: Vec<Transition>,
    /// Value of the state after the last transition; zero after a
    /// termination.
    pub bootstrap: f64,
}

/// A transition ready for the update, with its advantage and value target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub advantage: f64,
    pub target: f64,
    /// Tracking reward the step earned, the gating target.
    pub track: f64,
    pub subset: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub policy: f64,
    pub value: f64,
    pub adapter: f64,
    pub entropy: f64,
    pub total: f64,
}

/// The combined objective on `batch` and its gradient over `ids`.
pub fn loss_and_grad(policy: &PolicyState, batch: &[&Sample], config: &TrainerConfig, ids: &[BlockId]) -> Result<(LossBreakdown, PolicyGrad)> {
    if batch.is_empty() {
        return Err(Error::Input("empty minibatch".into()));
    }
    let n = batch.len() as f64;
    let c_ent = config.entropy_coef;
    let mut grad = policy.zero_grad(ids)?;
    let mut loss = LossBreakdown::default();
    for s in batch {
        let fwd = policy.forward(&s.input, s.subset)?;
        let log_std = policy.action_log_std(&fwd);
        let logp = gaussian_log_prob(&fwd.mean, log_std, &s.action);
        let ratio = (logp - s.log_prob).exp();
        let (objective, d_ratio) = clipped_surrogate(ratio, s.advantage, config.clip_epsilon);
        loss.policy -= objective / n;
        let entropy = log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        loss.entropy += entropy / n;

        let d_logp = -d_ratio * ratio / n;
        if d_logp != 0.0 || c_ent != 0.0 {
            let (dm, ds) = gaussian_log_prob_grad(&fwd.mean, log_std, &s.action);
            let dm: Vec<f64> = dm.iter().map(|g| g * d_logp).collect();
            let ds: Vec<f64> = ds.iter().map(|g| g * d_logp - c_ent / n).collect();
            policy.backward_action(&fwd, &dm, &ds, &mut grad)?;
        }

        let v = policy.value(&s.input)?;
        loss.value += (v - s.target).powi(2) / n;
        policy.backward_value(&s.input, 2.0 * (v - s.target) / n, &mut grad)?;
    }
    loss.adapter = policy.adapter_loss(config.adapter_loss_weight, Some(&mut grad));
    loss.total = weighted_total_loss(loss.policy, loss.value, loss.adapter, config.adapter_loss_weight)? - c_ent * loss.entropy;
    Ok((loss, grad))
}

/// Gating loss of the active head on `batch` and its gradient over `ids`.
pub fn gating_loss_and_grad(policy: &PolicyState, batch: &[&Sample], ids: &[BlockId]) -> Result<(f64, PolicyGrad)> {
    let k = policy.active;
    let head = policy.gating.get(k).ok_or(Error::Lookup { kind: "gating head", index: k })?;
    let predicted = batch
        .iter()
        .map(|s| Ok(crate::policy::sigmoid(head.net.predict(&s.input)?[0])))
        .collect::<Result<Vec<_>>>()?;
    let actual: Vec<f64> = batch.iter().map(|s| s.track).collect();
    let loss = gating_loss(&predicted, &actual)?;
    let mut grad = policy.zero_grad(ids)?;
    if loss > 0.0 {
        for ((s, p), a) in batch.iter().zip(&predicted).zip(&actual) {
            policy.backward_head(k, &s.input, (p - a) / loss, &mut grad)?;
        }
    }
    Ok((loss, grad))
}

/// Training progress that a checkpoint carries so a run can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainerConfig,
    /// Iterations completed.
    pub iteration: usize,
    /// Iteration at which the active expert was activated.
    pub expert_start: usize,
    /// Mean tracking reward per iteration since that activation.
    pub history: Vec<f64>,
    pub clip_ids: Vec<String>,
    pub library: Vec<ClipStats>,
    /// Accumulated training wall-clock time (s).
    pub elapsed_s: f64,
    pub optimizer: Adam,
    pub gating_optimizer: Adam,
}

/// Snapshot of the policy taken just before a new expert was activated.
#[derive(Debug, Clone)]
pub struct CompletedExpert {
    pub expert: usize,
    pub iteration: usize,
    pub policy: PolicyState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub wall_s: f64,
    pub mean_track: f64,
    pub mean_total: f64,
    pub success_rate: f64,
    pub mean_episode_s: f64,
    pub active_expert: usize,
    pub episodes: usize,
    pub steps: usize,
    pub loss: LossBreakdown,
    /// Routing fraction; 1 when every candidate is used.
    pub beta: f64,
    pub candidates: usize,
    pub routed: usize,
    /// Mean confidence of the active gating head over the batch.
    pub mean_confidence: f64,
    pub gating_loss: f64,
    /// Set when this iteration ended with a new expert being activated.
    pub activated: Option<usize>,
}

/// Curve CSV columns every variant writes.
pub const CURVE_COLUMNS: [&str; 14] = [
    "iteration",
    "wall_s",
    "mean_track",
    "mean_total",
    "success_rate",
    "mean_episode_s",
    "active_expert",
    "episodes",
    "steps",
    "loss_policy",
    "loss_value",
    "loss_adapter",
    "loss_entropy",
    "loss_total",
];

/// Extra columns of progressive runs.
const ROUTING_COLUMNS: [&str; 5] = ["beta", "candidates", "routed", "mean_confidence", "loss_gating"];

impl IterationMetrics {
    pub fn csv_header(routing: bool) -> Vec<&'static str> {
        let mut h = CURVE_COLUMNS.to_vec();
        if routing {
            h.extend(ROUTING_COLUMNS);
        }
        h
    }

    pub fn csv_row(&self, routing: bool) -> Vec<String> {
        let mut r = vec![
            self.iteration.to_string(),
            format!("{:.3}", self.wall_s),
            self.mean_track.to_string(),
            self.mean_total.to_string(),
            self.success_rate.to_string(),
            self.mean_episode_s.to_string(),
            self.active_expert.to_string(),
            self.episodes.to_string(),
            self.steps.to_string(),
            self.loss.policy.to_string(),
            self.loss.value.to_string(),
            self.loss.adapter.to_string(),
            self.loss.entropy.to_string(),
            self.loss.total.to_string(),
        ];
        if routing {
            r.extend([
                self.beta.to_string(),
                self.candidates.to_string(),
                self.routed.to_string(),
                self.mean_confidence.to_string(),
                self.gating_loss.to_string(),
            ]);
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    clip: usize,
    start: usize,
    seed: u64,
}

struct EpisodeResult {
    trajectories: Vec<Trajectory>,
    stats: Normalizer,
    outcome: EpisodeOutcome,
    steps: usize,
}

fn rollout_episode(
    world: &World,
    clip: &MotionClip,
    cand: Candidate,
    subset: usize,
    policy: &PolicyState,
    env_config: &EnvConfig,
) -> Result<EpisodeResult> {
    let mut env = TrackingEnv::new(world, clip, env_config.clone(), cand.seed)?;
    env.reset_at(cand.start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cand.seed);
    rng.set_stream(1);
    let nc = env.character_count();
    let progressive = policy.variant() == Variant::Progressive;
    let mut stats = Normalizer::new(policy.input_dim);
    let mut trajectories: Vec<Trajectory> = (0..nc)
        .map(|character| Trajectory {
            clip: cand.clip,
            character,
            transitions: Vec::new(),
            bootstrap: 0.0,
        })
        .collect();
    let mut diverged = false;
    loop {
        let mut pending = Vec::with_capacity(nc);
        for c in 0..nc {
            stats.update(&env.raw_input(c)?)?;
            let x = env.policy_input(c, &policy.normalizer)?;
            let (a, lp, _) = policy.sample_action(&x, subset, false, &mut rng)?;
            let v = policy.value(&x)?;
            let conf = if progressive { policy.gating_confidence(&x)? } else { Vec::new() };
            pending.push((x, a, lp, v, conf));
        }
        let actions: Vec<Vec<f64>> = pending.iter().map(|p| p.1.clone()).collect();
        let (rewards, statuses, done) = match env.step(&actions) {
            Ok(out) => {
                let done = out.status.is_done();
                (out.rewards, out.statuses, done)
            }
            Err(Error::Divergence(_)) => {
                diverged = true;
                let zero = RewardBreakdown::from_terms([0.0; 6], &env_config.reward.weights, 0.0);
                (vec![zero; nc], vec![Status::Terminated; nc], true)
            }
            Err(e) => return Err(e),
        };
        for (c, (input, action, log_prob, value, confidence)) in pending.into_iter().enumerate() {
            trajectories[c].transitions.push(Transition {
                input,
                action,
                log_prob,
                value,
                reward: rewards[c],
                status: statuses[c],
                clip: cand.clip,
                expert: policy.active,
                confidence,
                subset,
            });
        }
        if done {
            for (c, t) in trajectories.iter_mut().enumerate() {
                t.bootstrap = if statuses[c] == Status::Terminated {
                    0.0
                } else {
                    policy.value(&env.policy_input(c, &policy.normalizer)?)?
                };
            }
            break;
        }
    }
    let steps = env.steps().max(trajectories[0].transitions.len());
    let tracks: Vec<f64> = trajectories
        .iter()
        .flat_map(|t| &t.transitions)
        .map(|t| t.reward.track)
        .collect();
    let success = !diverged && !env.trace().is_empty() && episode_success(env.trace(), SUCCESS_THRESHOLD)?;
    Ok(EpisodeResult {
        trajectories,
        stats,
        outcome: EpisodeOutcome {
            mean_reward: tracks.iter().sum::<f64>() / tracks.len().max(1) as f64,
            success,
        },
        steps,
    })
}

/// The training loop state: policy, clip library, optimizers and progress.
#[derive(Debug, Clone)]
pub struct Trainer<'w> {
    world: &'w World,
    pub library: ClipLibrary,
    pub policy: PolicyState,
    pub env: EnvConfig,
    pub config: TrainerConfig,
    pub iteration: usize,
    expert_start: usize,
    history: Vec<f64>,
    elapsed_s: f64,
    optimizer: Adam,
    gating_optimizer: Adam,
    subsets: Vec<usize>,
    completed: Vec<CompletedExpert>,
}

impl<'w> Trainer<'w> {
    pub fn new(world: &'w World, library: ClipLibrary, mut policy: PolicyState, env: EnvConfig, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let expected = input_dim(world.body_count(), world.joint_count());
        if policy.input_dim != expected || policy.action_dim != world.joint_count() {
            return Err(Error::Shape(format!(
                "policy maps {} inputs to {} actions; the character needs {expected} to {}",
                policy.input_dim,
                policy.action_dim,
                world.joint_count()
            )));
        }
        for c in &library.clips {
            crate::env::check_clip(world, c)?;
        }
        let separations: Vec<f64> = library.clips.iter().map(|c| c.mean_separation(world)).collect();
        if policy.variant() == Variant::ManualPnn && policy.pnn_thresholds.is_empty() {
            policy.partition_by_separation(&separations)?;
        }
        let subsets = separations.iter().map(|s| policy.subset_of(*s)).collect();
        Ok(Self {
            world,
            library,
            policy,
            env,
            optimizer: Adam::new(config.learning_rate),
            gating_optimizer: Adam::new(config.gating_learning_rate),
            config,
            iteration: 0,
            expert_start: 0,
            history: Vec::new(),
            elapsed_s: 0.0,
            subsets,
            completed: Vec::new(),
        })
    }

    /// Continues from a checkpointed state. Library statistics are restored
    /// when the clip set is unchanged.
    pub fn resume(world: &'w World, library: ClipLibrary, policy: PolicyState, env: EnvConfig, state: TrainerState) -> Result<Self> {
        let mut t = Self::new(world, library, policy, env, state.config)?;
        t.iteration = state.iteration;
        t.expert_start = state.expert_start;
        t.history = state.history;
        t.elapsed_s = state.elapsed_s;
        t.optimizer = state.optimizer;
        t.gating_optimizer = state.gating_optimizer;
        let ids: Vec<&str> = t.library.clips.iter().map(|c| c.id.as_str()).collect();
        if ids == state.clip_ids && state.library.len() == t.library.len() {
            t.library.stats = state.library;
        }
        Ok(t)
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            config: self.config.clone(),
            iteration: self.iteration,
            expert_start: self.expert_start,
            history: self.history.clone(),
            clip_ids: self.library.clips.iter().map(|c| c.id.clone()).collect(),
            library: self.library.stats.clone(),
            elapsed_s: self.elapsed_s,
            optimizer: self.optimizer.clone(),
            gating_optimizer: self.gating_optimizer.clone(),
        }
    }

    /// Manual-PNN subset of every clip (all zero for other variants).
    pub fn subsets(&self) -> &[usize] {
        &self.subsets
    }

    /// Policies captured at expert transitions since the last call.
    pub fn take_completed(&mut self) -> Vec<CompletedExpert> {
        std::mem::take(&mut self.completed)
    }

    /// Clips the current expert trains on: all of them, except for manual
    /// PNN where each column sees its own subset.
    fn eligible_clips(&self) -> Vec<usize> {
        let all: Vec<usize> = (0..self.library.len()).collect();
        if self.policy.variant() != Variant::ManualPnn {
            return all;
        }
        let own: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| self.policy.column_for(self.subsets[i]) == self.policy.active)
            .collect();
        if own.is_empty() {
            all
        } else {
            own
        }
    }

    fn draw_candidates(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Candidate>> {
        let eligible = self.eligible_clips();
        let probs = sampling_probs(&self.library, self.config.sampling, self.config.temperature)?;
        let weights: Vec<f64> = eligible.iter().map(|&i| probs[i]).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(format!("sampling weights: {e}")))?;
        Ok((0..self.config.episodes_per_iteration)
            .map(|_| {
                let clip = eligible[dist.sample(rng)];
                let frames = self.library.clips[clip].frame_count();
                let start = if self.env.random_start { rng.random_range(0..frames - 1) } else { 0 };
                Candidate {
                    clip,
                    start,
                    seed: rng.next_u64(),
                }
            })
            .collect())
    }

    /// Batch-mean confidences of the active and previous heads at every
    /// candidate's start state, averaged over characters.
    fn candidate_confidences(&self, candidates: &[Candidate]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.policy.active;
        let mut current = Vec::with_capacity(candidates.len());
        let mut previous = Vec::with_capacity(candidates.len());
        for c in candidates {
            let clip = &self.library.clips[c.clip];
            let mut env = TrackingEnv::new(self.world, clip, self.env.clone(), c.seed)?;
            env.reset_at(c.start)?;
            let (mut cur, mut prev) = (0.0, 0.0);
            let nc = env.character_count();
            for ch in 0..nc {
                let x = self.policy.normalizer.normalize(&env.raw_input(ch)?)?;
                let conf = self.policy.gating_confidence(&x)?;
                cur += conf[k] / nc as f64;
                prev += conf[k - 1] / nc as f64;
            }
            current.push(cur);
            previous.push(prev);
        }
        Ok((current, previous))
    }

    /// One full iteration: sample, route, roll out, update, bookkeeping.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let clock = Instant::now();
        let it = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(it as u64);

        let candidates = self.draw_candidates(&mut rng)?;
        let routing = self.policy.variant() == Variant::Progressive;
        let mut beta = 1.0;
        let mut selected = candidates.clone();
        if routing && self.policy.active >= 1 && self.config.progressive_sampling {
            let (current, previous) = self.candidate_confidences(&candidates)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            beta = routing_fraction(mean(&current), mean(&previous), self.policy.config.literal_routing);
            let decision = select_routed(&previous, beta)?;
            selected = decision.selected.iter().map(|&i| candidates[i]).collect();
        }

        let results = {
            let (world, library, policy, env, subsets) = (self.world, &self.library, &self.policy, &self.env, &self.subsets);
            parallel_map(&selected, self.config.workers, |_, c| {
                rollout_episode(world, &library.clips[c.clip], *c, subsets[c.clip], policy, env)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        };

        let mut samples = Vec::new();
        let (mut sum_track, mut sum_total, mut sum_conf, mut n_steps) = (0.0, 0.0, 0.0, 0usize);
        for r in &results {
            for t in &r.trajectories {
                let rewards: Vec<f64> = t.transitions.iter().map(|x| x.reward.total).collect();
                let mut values: Vec<f64> = t.transitions.iter().map(|x| x.value).collect();
                values.push(t.bootstrap);
                let (adv, targets) = compute_gae(&rewards, &values, self.config.gamma, self.config.lambda)?;
                for ((x, a), tg) in t.transitions.iter().zip(adv).zip(targets) {
                    sum_track += x.reward.track;
                    sum_total += x.reward.total;
                    sum_conf += x.confidence.get(self.policy.active).copied().unwrap_or(0.0);
                    n_steps += 1;
                    samples.push(Sample {
                        input: x.input.clone(),
                        action: x.action.clone(),
                        log_prob: x.log_prob,
                        advantage: a,
                        target: tg,
                        track: x.reward.track,
                        subset: x.subset,
                    });
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::Input("iteration collected no samples".into()));
        }
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        samples.iter_mut().zip(adv).for_each(|(s, a)| s.advantage = a);

        for r in &results {
            self.policy.normalizer.merge(&r.stats)?;
        }

        let (loss, gating) = self.update(&samples, &mut rng)?;

        let mut by_clip: Vec<Vec<EpisodeOutcome>> = vec![Vec::new(); self.library.len()];
        for (c, r) in selected.iter().zip(&results) {
            by_clip[c.clip].push(r.outcome);
        }
        for (i, outcomes) in by_clip.iter().enumerate() {
            self.library.record(i, outcomes)?;
        }

        let episodes = results.len();
        let successes = results.iter().filter(|r| r.outcome.success).count();
        let steps: usize = results.iter().map(|r| r.steps).sum();
        let mean_track = sum_track / n_steps as f64;
        let active_expert = self.policy.active;

        self.iteration += 1;
        self.history.push(mean_track);
        let mut activated = None;
        let since = self.iteration - self.expert_start;
        let cap = self.config.max_iterations_per_expert;
        let due = stagnation_check(&self.history, self.config.stagnation_window, self.config.stagnation_delta)
            || (cap > 0 && since >= cap);
        if due && self.policy.variant().is_sequential() && self.policy.expert_count() < self.policy.config.max_experts {
            self.completed.push(CompletedExpert {
                expert: active_expert,
                iteration: self.iteration,
                policy: self.policy.clone(),
            });
            activated = Some(self.policy.activate_expert(&mut rng)?);
            self.optimizer = Adam::new(self.config.learning_rate);
            self.gating_optimizer = Adam::new(self.config.gating_learning_rate);
            self.history.clear();
            self.expert_start = self.iteration;
        }
        self.elapsed_s += clock.elapsed().as_secs_f64();

        Ok(IterationMetrics {
            iteration: self.iteration,
            wall_s: self.elapsed_s,
            mean_track,
            mean_total: sum_total / n_steps as f64,
            success_rate: successes as f64 / episodes as f64,
            mean_episode_s: steps as f64 / episodes as f64 / self.world.config.control_rate,
            active_expert,
            episodes,
            steps,
            loss,
            beta,
            candidates: candidates.len(),
            routed: selected.len(),
            mean_confidence: sum_conf / n_steps as f64,
            gating_loss: gating,
            activated,
        })
    }

    /// PPO epochs over `samples`, with a gating step per minibatch for
    /// progressive policies. Returns the minibatch-mean losses.
    fn update(&mut self, samples: &[Sample], rng: &mut ChaCha8Rng) -> Result<(LossBreakdown, f64)> {
        let ids = self.policy.trainable_blocks();
        let gating_ids = self.policy.gating_blocks();
        let std_expert = match self.policy.variant() {
            Variant::SoftMoe => 0,
            _ => self.policy.active,
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut sum = LossBreakdown::default();
        let mut gating_sum = 0.0;
        let mut batches = 0usize;
        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.config.minibatch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let (loss, grad) = loss_and_grad(&self.policy, &batch, &self.config, &ids)?;
                if !grad.is_finite() {
                    return Err(Error::Numeric(format!("policy gradient at iteration {}", self.iteration)));
                }
                {
                    let mut params = self.policy.blocks_mut(&ids)?;
                    self.optimizer.step(&mut params, &grad.slices())?;
                }
                let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
                self.policy.experts[std_expert]
                    .log_std
                    .iter_mut()
                    .for_each(|s| *s = s.clamp(lo, hi));

                if !gating_ids.is_empty() {
                    let (gl, g) = gating_loss_and_grad(&self.policy, &batch, &gating_ids)?;
                    let mut params = self.policy.blocks_mut(&gating_ids)?;
                    self.gating_optimizer.step(&mut params, &g.slices())?;
                    gating_sum += gl;
                }
                sum.policy += loss.policy;
                sum.value += loss.value;
                sum.adapter += loss.adapter;
                sum.entropy += loss.entropy;
                sum.total += loss.total;
                batches += 1;
            }
        }
        if !self.policy.is_finite() {
            return Err(Error::Numeric(format!("policy parameters at iteration {}", self.iteration)));
        }
        let b = batches as f64;
        Ok((
            LossBreakdown {
                policy: sum.policy / b,
                value: sum.value / b,
                adapter: sum.adapter / b,
                entropy: sum.entropy / b,
                total: sum.total / b,
            },
            gating_sum / b,
        ))
    }
}
