//! Progressive mixture-of-experts policy and its baselines.
//!
//! Experts share one architecture. In the progressive variant the action mean
//! is the sum of every expert's output; only the newest expert trains, fed by
//! lateral adapters from the hidden activations of the frozen ones. A gating
//! network with one sigmoid head per expert predicts the tracking reward.

mod blocks;
mod routing;

pub use blocks::{BlockId, PolicyGrad};
pub use routing::{routed_count, routing_fraction, select_routed, RoutingDecision};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{axpy, copy_except_final, zero_final, Mlp, MlpCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Progressive,
    Mlp,
    SoftMoe,
    ManualPnn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Progressive => "progressive",
            Variant::Mlp => "mlp",
            Variant::SoftMoe => "soft-moe",
            Variant::ManualPnn => "manual-pnn",
        }
    }

    /// Whether experts are added one at a time during training.
    pub fn is_sequential(self) -> bool {
        matches!(self, Variant::Progressive | Variant::ManualPnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "progressive" => Ok(Variant::Progressive),
            "mlp" => Ok(Variant::Mlp),
            "soft-moe" => Ok(Variant::SoftMoe),
            "manual-pnn" => Ok(Variant::ManualPnn),
            other => Err(Error::Config(format!("unknown policy variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub variant: Variant,
    /// Hidden widths of every expert (two entries give a 3-layer net).
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Hidden widths of each gating head and of the soft-MoE gate.
    pub gating_hidden: Vec<usize>,
    /// Upper bound on experts; the soft-MoE and manual-PNN baselines use
    /// exactly this many.
    pub max_experts: usize,
    /// Half-width of the uniform init of last-layer adapters.
    pub adapter_init_scale: f64,
    pub init_log_std: f64,
    /// Output gain of a fresh expert's final layer.
    pub output_gain: f64,
    /// Lateral adapters between experts (off for the adapter ablation).
    pub adapters: bool,
    /// Use `max(1, ratio)` for the routing fraction exactly as printed.
    pub literal_routing: bool,
    pub leaky_slope: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Progressive,
            hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            gating_hidden: vec![32],
            max_experts: 4,
            adapter_init_scale: 1e-3,
            init_log_std: -1.0,
            output_gain: 0.1,
            adapters: true,
            literal_routing: false,
            leaky_slope: crate::nn::DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.critic_hidden.contains(&0) || self.gating_hidden.contains(&0) {
            return Err(Error::Config("network widths must be positive and experts need a hidden layer".into()));
        }
        if self.max_experts == 0 {
            return Err(Error::Config("max_experts must be at least 1".into()));
        }
        if !(self.adapter_init_scale >= 0.0) || !self.init_log_std.is_finite() || !(self.output_gain >= 0.0) {
            return Err(Error::Config("adapter scale, output gain and initial log std must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// One expert column.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub net: Mlp,
    pub log_std: Vec<f64>,
    pub frozen: bool,
}

/// Weight-only lateral map `(rows, cols)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl Adapter {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
        }
    }

    pub fn add_apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.cols)) {
            *o += crate::nn::dot(row, x);
        }
    }
}

/// Gating head: one sigmoid confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingHead {
    pub net: Mlp,
    pub frozen: bool,
}

/// Forward record of one expert.
#[derive(Debug, Clone)]
pub struct ExpertPass {
    pub cache: MlpCache,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyForward {
    pub passes: Vec<ExpertPass>,
    pub mean: Vec<f64>,
    /// Soft-MoE gate cache and mixture weights.
    pub gate: Option<(MlpCache, Vec<f64>)>,
    /// Expert whose log-std defines the action distribution.
    pub std_expert: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Gradients of [`gaussian_log_prob`] with respect to the mean and log-std.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dm = Vec::with_capacity(mean.len());
    let mut ds = Vec::with_capacity(mean.len());
    for ((m, s), a) in mean.iter().zip(log_std).zip(action) {
        let inv = (-2.0 * s).exp();
        let z2 = (a - m) * (a - m) * inv;
        dm.push((a - m) * inv);
        ds.push(z2 - 1.0);
    }
    (dm, ds)
}

/// All parameters of a policy plus its observation normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub config: PolicyConfig,
    pub input_dim: usize,
    pub action_dim: usize,
    pub experts: Vec<Expert>,
    /// `adapters[k][slot][source]` feeds expert `source`'s hidden activation
    /// `slot` into expert `k`'s layer `slot + 1`.
    pub adapters: Vec<Vec<Vec<Adapter>>>,
    pub gating: Vec<GatingHead>,
    /// Soft-MoE mixture gate.
    pub moe_gate: Option<Mlp>,
    pub critic: Mlp,
    pub normalizer: Normalizer,
    /// Index of the trainable expert.
    pub active: usize,
    /// Manual-PNN subset boundaries on mean character separation, descending.
    pub pnn_thresholds: Vec<f64>,
}

impl PolicyState {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, input_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || action_dim == 0 {
            return Err(Error::Config("policy input and action sizes must be positive".into()));
        }
        let critic = {
            let mut n = Mlp::new(input_dim, &config.critic_hidden, 1, 1.0, rng);
            n.slope = config.leaky_slope;
            n
        };
        let mut p = Self {
            input_dim,
            action_dim,
            experts: Vec::new(),
            adapters: Vec::new(),
            gating: Vec::new(),
            moe_gate: None,
            critic,
            normalizer: Normalizer::new(input_dim),
            active: 0,
            pnn_thresholds: Vec::new(),
            config,
        };
        let initial = match p.config.variant {
            Variant::SoftMoe => p.config.max_experts,
            _ => 1,
        };
        for _ in 0..initial {
            let e = p.fresh_expert(rng);
            p.experts.push(e);
            p.adapters.push(Vec::new());
        }
        match p.config.variant {
            Variant::Progressive => {
                let head = p.fresh_head(rng);
                p.gating.push(head);
            }
            Variant::SoftMoe => {
                let mut g = Mlp::new(input_dim, &p.config.gating_hidden, initial, 0.1, rng);
                g.slope = p.config.leaky_slope;
                p.moe_gate = Some(g);
            }
            _ => {}
        }
        Ok(p)
    }

    fn fresh_expert<R: Rng + ?Sized>(&self, rng: &mut R) -> Expert {
        let mut net = Mlp::new(self.input_dim, &self.config.hidden, self.action_dim, self.config.output_gain, rng);
        net.slope = self.config.leaky_slope;
        Expert {
            net,
            log_std: vec![self.config.init_log_std; self.action_dim],
            frozen: false,
        }
    }

    fn fresh_head<R: Rng + ?Sized>(&self, rng: &mut R) -> GatingHead {
        let mut net = Mlp::new(self.input_dim, &self.config.gating_hidden, 1, 0.1, rng);
        net.slope = self.config.leaky_slope;
        GatingHead { net, frozen: false }
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    /// Number of adapter slots per expert (one per hidden layer).
    pub fn adapter_slots(&self) -> usize {
        self.config.hidden.len()
    }

    fn lateral_enabled(&self) -> bool {
        self.config.adapters && self.config.variant.is_sequential()
    }

    /// Runs expert `k` given the passes of experts `0..k`.
    pub fn expert_forward(&self, k: usize, input: &[f64], previous: &[ExpertPass]) -> Result<ExpertPass> {
        let expert = self.experts.get(k).ok_or(Error::Lookup { kind: "expert", index: k })?;
        let lateral = if self.lateral_enabled() && k > 0 {
            if previous.len() < k {
                return Err(Error::Sequencing(k));
            }
            let mut lat = vec![None; expert.net.depth()];
            for (slot, sources) in self.adapters[k].iter().enumerate() {
                let width = expert.net.layers[slot + 1].out_dim();
                let mut z = vec![0.0; width];
                for (src, a) in sources.iter().enumerate() {
                    a.add_apply(previous[src].cache.hidden(slot), &mut z);
                }
                lat[slot + 1] = Some(z);
            }
            lat
        } else {
            Vec::new()
        };
        let (output, cache) = expert.net.forward_lateral(input, &lateral)?;
        Ok(ExpertPass { cache, output })
    }

    /// Manual-PNN column for a clip subset: the subset's own expert once it
    /// exists, the newest one before that.
    pub fn column_for(&self, subset: usize) -> usize {
        subset.min(self.experts.len() - 1)
    }

    /// Full forward pass. `subset` only matters for the manual-PNN variant.
    pub fn forward(&self, input: &[f64], subset: usize) -> Result<PolicyForward> {
        if input.len() != self.input_dim {
            return Err(Error::Shape(format!("policy input has {} entries, expected {}", input.len(), self.input_dim)));
        }
        let mut passes: Vec<ExpertPass> = Vec::new();
        let mut mean = vec![0.0; self.action_dim];
        let mut gate = None;
        let std_expert;
        match self.config.variant {
            Variant::Progressive | Variant::Mlp => {
                for k in 0..self.experts.len() {
                    let pass = self.expert_forward(k, input, &passes)?;
                    axpy(1.0, &pass.output, &mut mean);
                    passes.push(pass);
                }
                std_expert = self.active;
            }
            Variant::ManualPnn => {
                let col = self.column_for(subset);
                for k in 0..=col {
                    let pass = self.expert_forward(k, input, &passes)?;
                    passes.push(pass);
                }
                mean.copy_from_slice(&passes[col].output);
                std_expert = col;
            }
            Variant::SoftMoe => {
                let g = self.moe_gate.as_ref().ok_or_else(|| Error::Config("soft-moe policy has no gate".into()))?;
                let (logits, cache) = g.forward(input)?;
                let probs = softmax(&logits);
                for (k, p) in probs.iter().enumerate() {
                    let pass = self.expert_forward(k, input, &[])?;
                    axpy(*p, &pass.output, &mut mean);
                    passes.push(pass);
                }
                gate = Some((cache, probs));
                std_expert = 0;
            }
        }
        Ok(PolicyForward {
            passes,
            mean,
            gate,
            std_expert,
        })
    }

    /// Deployed action mean (sum of expert contributions for the progressive
    /// variant).
    pub fn compose_mean(&self, input: &[f64], subset: usize) -> Result<Vec<f64>> {
        Ok(self.forward(input, subset)?.mean)
    }

    /// Log-std of the distribution: the active expert's only.
    pub fn action_log_std(&self, fwd: &PolicyForward) -> &[f64] {
        &self.experts[fwd.std_expert].log_std
    }

    /// Samples `a ~ N(mean, exp(2 log σ))`, or returns the mean when
    /// `deterministic`. Returns the action, its log-probability and the
    /// forward record.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        subset: usize,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64, PolicyForward)> {
        let fwd = self.forward(input, subset)?;
        let log_std = self.action_log_std(&fwd);
        let action: Vec<f64> = if deterministic {
            fwd.mean.clone()
        } else {
            fwd.mean
                .iter()
                .zip(log_std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s.exp() * z
                })
                .collect()
        };
        let lp = gaussian_log_prob(&fwd.mean, log_std, &action);
        Ok((action, lp, fwd))
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.critic.predict(input)?[0])
    }

    /// Raw gating logits, one per head.
    pub fn gating_logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.gating.iter().map(|h| Ok(h.net.predict(input)?[0])).collect()
    }

    /// Confidence `sigmoid(logit)` of every expert.
    pub fn gating_confidence(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gating_logits(input)?.into_iter().map(sigmoid).collect())
    }

    /// Ids of every parameter block the policy optimizer updates, in a fixed
    /// order.
    pub fn trainable_blocks(&self) -> Vec<BlockId> {
        let mut ids = Vec::new();
        let expert_blocks = |k: usize, ids: &mut Vec<BlockId>| {
            for l in 0..self.experts[k].net.depth() {
                ids.push(BlockId::ExpertWeights(k, l));
                ids.push(BlockId::ExpertBias(k, l));
            }
        };
        match self.config.variant {
            Variant::Progressive | Variant::ManualPnn | Variant::Mlp => {
                let k = self.active;
                expert_blocks(k, &mut ids);
                ids.push(BlockId::LogStd(k));
                if self.lateral_enabled() {
                    for (slot, sources) in self.adapters[k].iter().enumerate() {
                        for src in 0..sources.len() {
                            ids.push(BlockId::Adapter(k, slot, src));
                        }
                    }
                }
            }
            Variant::SoftMoe => {
                for k in 0..self.experts.len() {
                    expert_blocks(k, &mut ids);
                }
                if let Some(g) = &self.moe_gate {
                    for l in 0..g.depth() {
                        ids.push(BlockId::GateWeights(l));
                        ids.push(BlockId::GateBias(l));
                    }
                }
                ids.push(BlockId::LogStd(0));
            }
        }
        for l in 0..self.critic.depth() {
            ids.push(BlockId::CriticWeights(l));
            ids.push(BlockId::CriticBias(l));
        }
        ids
    }

    /// Blocks of the gating head currently being trained.
    pub fn gating_blocks(&self) -> Vec<BlockId> {
        if self.config.variant != Variant::Progressive {
            return Vec::new();
        }
        let k = self.active;
        (0..self.gating[k].net.depth())
            .flat_map(|l| [BlockId::HeadWeights(k, l), BlockId::HeadBias(k, l)])
            .collect()
    }

    pub fn zero_grad(&self, ids: &[BlockId]) -> Result<PolicyGrad> {
        let entries = ids
            .iter()
            .map(|id| Ok((*id, vec![0.0; self.block(*id)?.len()])))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyGrad::new(entries))
    }

    /// Accumulates `∂/∂θ` of a scalar whose gradient with respect to the
    /// action mean is `d_mean` and with respect to the distribution's
    /// log-std is `d_log_std`. Blocks missing from `grad` are skipped, so
    /// frozen parameters never receive anything.
    pub fn backward_action(&self, fwd: &PolicyForward, d_mean: &[f64], d_log_std: &[f64], grad: &mut PolicyGrad) -> Result<()> {
        if let Some(g) = grad.get_mut(BlockId::LogStd(fwd.std_expert)) {
            axpy(1.0, d_log_std, g);
        }
        match self.config.variant {
            Variant::Progressive | Variant::Mlp => {
                for k in 0..fwd.passes.len() {
                    self.backward_expert(k, &fwd.passes, d_mean, grad)?;
                }
            }
            Variant::ManualPnn => {
                let col = fwd.passes.len() - 1;
                self.backward_expert(col, &fwd.passes, d_mean, grad)?;
            }
            Variant::SoftMoe => {
                let (cache, probs) = fwd.gate.as_ref().ok_or_else(|| Error::Cache("soft-moe forward without gate".into()))?;
                let dots: Vec<f64> = fwd.passes.iter().map(|p| crate::nn::dot(&p.output, d_mean)).collect();
                let avg: f64 = probs.iter().zip(&dots).map(|(p, d)| p * d).sum();
                for (k, p) in probs.iter().enumerate() {
                    let scaled: Vec<f64> = d_mean.iter().map(|g| p * g).collect();
                    self.backward_expert(k, &fwd.passes, &scaled, grad)?;
                }
                let d_logits: Vec<f64> = probs.iter().zip(&dots).map(|(p, d)| p * (d - avg)).collect();
                let gate = self.moe_gate.as_ref().expect("checked above");
                let g = gate.backward(cache, &d_logits)?;
                for (l, lg) in g.layers.iter().enumerate() {
                    if let Some(b) = grad.get_mut(BlockId::GateWeights(l)) {
                        axpy(1.0, &lg.weights, b);
                    }
                    if let Some(b) = grad.get_mut(BlockId::GateBias(l)) {
                        axpy(1.0, &lg.bias, b);
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_expert(&self, k: usize, passes: &[ExpertPass], d_out: &[f64], grad: &mut PolicyGrad) -> Result<()> {
        if !grad.contains(BlockId::ExpertBias(k, 0)) {
            return Ok(());
        }
        let g = self.experts[k].net.backward(&passes[k].cache, d_out)?;
        for (l, lg) in g.layers.iter().enumerate() {
            if let Some(b) = grad.get_mut(BlockId::ExpertWeights(k, l)) {
                axpy(1.0, &lg.weights, b);
            }
            if let Some(b) = grad.get_mut(BlockId::ExpertBias(k, l)) {
                axpy(1.0, &lg.bias, b);
            }
        }
        if self.lateral_enabled() {
            for (slot, sources) in self.adapters[k].iter().enumerate() {
                let delta = &g.pre[slot + 1];
                for src in 0..sources.len() {
                    if let Some(b) = grad.get_mut(BlockId::Adapter(k, slot, src)) {
                        let h = passes[src].cache.hidden(slot);
                        for (row, d) in b.chunks_exact_mut(h.len()).zip(delta) {
                            axpy(*d, h, row);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulates the critic gradient of a scalar with `∂/∂V = d_value`.
    pub fn backward_value(&self, input: &[f64], d_value: f64, grad: &mut PolicyGrad) -> Result<f64> {
        let (v, cache) = self.critic.forward(input)?;
        let g = self.critic.backward(&cache, &[d_value])?;
        for (l, lg) in g.layers.iter().enumerate() {
            if let Some(b) = grad.get_mut(BlockId::CriticWeights(l)) {
                axpy(1.0, &lg.weights, b);
            }
            if let Some(b) = grad.get_mut(BlockId::CriticBias(l)) {
                axpy(1.0, &lg.bias, b);
            }
        }
        Ok(v[0])
    }

    /// Confidence of head `k` and the gradient of a scalar with
    /// `∂/∂confidence = d_conf` accumulated into `grad`.
    pub fn backward_head(&self, k: usize, input: &[f64], d_conf: f64, grad: &mut PolicyGrad) -> Result<f64> {
        let head = self.gating.get(k).ok_or(Error::Lookup { kind: "gating head", index: k })?;
        let (logit, cache) = head.net.forward(input)?;
        let c = sigmoid(logit[0]);
        let g = head.net.backward(&cache, &[d_conf * c * (1.0 - c)])?;
        for (l, lg) in g.layers.iter().enumerate() {
            if let Some(b) = grad.get_mut(BlockId::HeadWeights(k, l)) {
                axpy(1.0, &lg.weights, b);
            }
            if let Some(b) = grad.get_mut(BlockId::HeadBias(k, l)) {
                axpy(1.0, &lg.bias, b);
            }
        }
        Ok(c)
    }

    /// Adapter usage loss `-ln(u + 1e-6)` of the active expert and its
    /// gradient (added into `grad` scaled by `weight`). Zero without
    /// adapters and for every variant but the progressive one.
    pub fn adapter_loss(&self, weight: f64, grad: Option<&mut PolicyGrad>) -> f64 {
        const EPS: f64 = 1e-6;
        let k = self.active;
        if self.config.variant != Variant::Progressive || !self.config.adapters || k == 0 || self.adapters[k].iter().all(Vec::is_empty) {
            return 0.0;
        }
        let mut norms = Vec::new();
        for (slot, sources) in self.adapters[k].iter().enumerate() {
            for (src, a) in sources.iter().enumerate() {
                norms.push(((slot, src), crate::nn::frobenius_norm([a.weights.as_slice()])));
            }
        }
        let s_a: f64 = norms.iter().map(|(_, n)| n).sum();
        let s_e = crate::nn::frobenius_norm(self.experts[k].net.weight_slices());
        let total = s_a + s_e;
        if total == 0.0 {
            return -EPS.ln();
        }
        let u = s_a / total;
        let loss = -(u + EPS).ln();
        if let Some(grad) = grad {
            let dl_du = -1.0 / (u + EPS);
            let du_dsa = s_e / (total * total);
            let du_dse = -s_a / (total * total);
            for ((slot, src), n) in norms {
                if n > 0.0 {
                    if let Some(b) = grad.get_mut(BlockId::Adapter(k, slot, src)) {
                        let c = weight * dl_du * du_dsa / n;
                        axpy(c, &self.adapters[k][slot][src].weights, b);
                    }
                }
            }
            if s_e > 0.0 {
                let c = weight * dl_du * du_dse / s_e;
                for (l, layer) in self.experts[k].net.layers.iter().enumerate() {
                    if let Some(b) = grad.get_mut(BlockId::ExpertWeights(k, l)) {
                        axpy(c, &layer.weights, b);
                    }
                }
            }
        }
        loss
    }

    /// Freezes the active expert (and its gating head) and appends a new
    /// one: non-final layers copied, final layer zeroed, last-layer adapters
    /// drawn from `U(-s, s)`, hidden adapters copied from the predecessor
    /// where it has the same source. Manual-PNN columns start from scratch.
    pub fn activate_expert<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        if !self.config.variant.is_sequential() || self.experts.len() >= self.config.max_experts {
            return Err(Error::Capacity(self.experts.len()));
        }
        let prev = self.experts.len() - 1;
        let k = prev + 1;
        let mut expert = self.fresh_expert(rng);
        if self.config.variant == Variant::Progressive {
            copy_except_final(&self.experts[prev].net, &mut expert.net)?;
            zero_final(&mut expert.net);
            expert.log_std = self.experts[prev].log_std.clone();
        }
        let slots = self.adapter_slots();
        let last_slot = slots - 1;
        let s = self.config.adapter_init_scale;
        let mut bank = Vec::with_capacity(slots);
        for slot in 0..slots {
            let rows = expert.net.layers[slot + 1].out_dim();
            let cols = self.config.hidden[slot];
            let mut sources = Vec::with_capacity(k);
            for src in 0..k {
                let mut a = Adapter::zeros(rows, cols);
                if slot == last_slot {
                    if s > 0.0 {
                        a.weights.iter_mut().for_each(|w| *w = rng.random_range(-s..=s));
                    }
                } else if let Some(old) = self.adapters[prev].get(slot).and_then(|v| v.get(src)) {
                    a.weights.copy_from_slice(&old.weights);
                }
                sources.push(a);
            }
            bank.push(sources);
        }
        self.experts[prev].frozen = true;
        self.experts.push(expert);
        self.adapters.push(bank);
        if self.config.variant == Variant::Progressive {
            self.gating[prev].frozen = true;
            let mut head = self.gating[prev].clone();
            zero_final(&mut head.net);
            head.frozen = false;
            self.gating.push(head);
        }
        self.normalizer.frozen = true;
        self.active = k;
        Ok(k)
    }

    /// Assigns clips to manual-PNN subsets from their mean character
    /// separation: the widest-apart clips go to expert 0, the closest (most
    /// contact) to the last expert. Returns each clip's subset.
    pub fn partition_by_separation(&mut self, separations: &[f64]) -> Result<Vec<usize>> {
        if self.config.variant != Variant::ManualPnn {
            return Err(Error::Config(format!("clip partitioning needs the manual-pnn variant, not {}", self.config.variant)));
        }
        if separations.is_empty() {
            return Err(Error::Input("no clips to partition".into()));
        }
        let n = self.config.max_experts.min(separations.len());
        let mut sorted = separations.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // Boundary between consecutive groups of a descending split.
        self.pnn_thresholds = (1..n)
            .map(|g| {
                let i = g * sorted.len() / n;
                0.5 * (sorted[i - 1] + sorted[i])
            })
            .collect();
        Ok(separations.iter().map(|s| self.subset_of(*s)).collect())
    }

    pub fn subset_of(&self, separation: f64) -> usize {
        self.pnn_thresholds.iter().filter(|t| separation < **t).count()
    }

    pub fn is_finite(&self) -> bool {
        blocks::all_blocks(self)
            .iter()
            .all(|id| self.block(*id).is_ok_and(|b| b.iter().all(|v| v.is_finite())))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests;
