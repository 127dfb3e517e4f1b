use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::PolicyState;
use crate::error::{Error, Result};

/// Names one parameter block of a [`PolicyState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    ExpertWeights(usize, usize),
    ExpertBias(usize, usize),
    LogStd(usize),
    /// `(expert, slot, source)`
    Adapter(usize, usize, usize),
    HeadWeights(usize, usize),
    HeadBias(usize, usize),
    GateWeights(usize),
    GateBias(usize),
    CriticWeights(usize),
    CriticBias(usize),
    NormMean,
    NormM2,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use BlockId::*;
        match self {
            ExpertWeights(k, l) => write!(f, "expert.{k}.{l}.w"),
            ExpertBias(k, l) => write!(f, "expert.{k}.{l}.b"),
            LogStd(k) => write!(f, "expert.{k}.log_std"),
            Adapter(k, s, i) => write!(f, "adapter.{k}.{s}.{i}"),
            HeadWeights(k, l) => write!(f, "head.{k}.{l}.w"),
            HeadBias(k, l) => write!(f, "head.{k}.{l}.b"),
            GateWeights(l) => write!(f, "gate.{l}.w"),
            GateBias(l) => write!(f, "gate.{l}.b"),
            CriticWeights(l) => write!(f, "critic.{l}.w"),
            CriticBias(l) => write!(f, "critic.{l}.b"),
            NormMean => write!(f, "normalizer.mean"),
            NormM2 => write!(f, "normalizer.m2"),
        }
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use BlockId::*;
        let bad = || Error::Corrupt(format!("unknown parameter block {s:?}"));
        let parts: Vec<&str> = s.split('.').collect();
        let num = |i: usize| -> Result<usize> { parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(bad) };
        Ok(match (parts.first().copied(), parts.len(), parts.last().copied()) {
            (Some("expert"), 3, Some("log_std")) => LogStd(num(1)?),
            (Some("expert"), 4, Some("w")) => ExpertWeights(num(1)?, num(2)?),
            (Some("expert"), 4, Some("b")) => ExpertBias(num(1)?, num(2)?),
            (Some("adapter"), 4, _) => Adapter(num(1)?, num(2)?, num(3)?),
            (Some("head"), 4, Some("w")) => HeadWeights(num(1)?, num(2)?),
            (Some("head"), 4, Some("b")) => HeadBias(num(1)?, num(2)?),
            (Some("gate"), 3, Some("w")) => GateWeights(num(1)?),
            (Some("gate"), 3, Some("b")) => GateBias(num(1)?),
            (Some("critic"), 3, Some("w")) => CriticWeights(num(1)?),
            (Some("critic"), 3, Some("b")) => CriticBias(num(1)?),
            (Some("normalizer"), 2, Some("mean")) => NormMean,
            (Some("normalizer"), 2, Some("m2")) => NormM2,
            _ => return Err(bad()),
        })
    }
}

/// Gradient blocks aligned with a list of [`BlockId`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub ids: Vec<BlockId>,
    pub blocks: Vec<Vec<f64>>,
    index: HashMap<BlockId, usize>,
}

impl PolicyGrad {
    pub fn new(entries: Vec<(BlockId, Vec<f64>)>) -> Self {
        let (ids, blocks): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Self { ids, blocks, index }
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: BlockId) -> Option<&[f64]> {
        self.index.get(&id).map(|&i| self.blocks[i].as_slice())
    }

    pub fn get_mut(&mut self, id: BlockId) -> Option<&mut [f64]> {
        self.index.get(&id).map(|&i| self.blocks[i].as_mut_slice())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.blocks.iter().map(Vec::as_slice).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.blocks.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn add(&mut self, other: &PolicyGrad) {
        for (id, b) in other.ids.iter().zip(&other.blocks) {
            if let Some(dst) = self.get_mut(*id) {
                crate::nn::axpy(1.0, b, dst);
            }
        }
    }

    pub fn norm(&self) -> f64 {
        crate::nn::frobenius_norm(self.slices())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }
}

/// Every block of `p`, in serialization order.
pub(crate) fn all_blocks(p: &PolicyState) -> Vec<BlockId> {
    use BlockId::*;
    let mut ids = Vec::new();
    for (k, e) in p.experts.iter().enumerate() {
        for l in 0..e.net.depth() {
            ids.push(ExpertWeights(k, l));
            ids.push(ExpertBias(k, l));
        }
        ids.push(LogStd(k));
    }
    for (k, bank) in p.adapters.iter().enumerate() {
        for (s, sources) in bank.iter().enumerate() {
            for i in 0..sources.len() {
                ids.push(Adapter(k, s, i));
            }
        }
    }
    for (k, h) in p.gating.iter().enumerate() {
        for l in 0..h.net.depth() {
            ids.push(HeadWeights(k, l));
            ids.push(HeadBias(k, l));
        }
    }
    if let Some(g) = &p.moe_gate {
        for l in 0..g.depth() {
            ids.push(GateWeights(l));
            ids.push(GateBias(l));
        }
    }
    for l in 0..p.critic.depth() {
        ids.push(CriticWeights(l));
        ids.push(CriticBias(l));
    }
    ids.push(NormMean);
    ids.push(NormM2);
    ids
}

impl PolicyState {
    pub fn all_blocks(&self) -> Vec<BlockId> {
        all_blocks(self)
    }

    pub fn block(&self, id: BlockId) -> Result<&[f64]> {
        use BlockId::*;
        fn layer(net: &crate::nn::Mlp, l: usize, w: bool) -> Option<&[f64]> {
            net.layers.get(l).map(|x| if w { x.weights.as_slice() } else { x.bias.as_slice() })
        }
        let found = match id {
            ExpertWeights(k, l) => self.experts.get(k).and_then(|e| layer(&e.net, l, true)),
            ExpertBias(k, l) => self.experts.get(k).and_then(|e| layer(&e.net, l, false)),
            LogStd(k) => self.experts.get(k).map(|e| e.log_std.as_slice()),
            Adapter(k, s, i) => self
                .adapters
                .get(k)
                .and_then(|b| b.get(s))
                .and_then(|v| v.get(i))
                .map(|a| a.weights.as_slice()),
            HeadWeights(k, l) => self.gating.get(k).and_then(|h| layer(&h.net, l, true)),
            HeadBias(k, l) => self.gating.get(k).and_then(|h| layer(&h.net, l, false)),
            GateWeights(l) => self.moe_gate.as_ref().and_then(|g| layer(g, l, true)),
            GateBias(l) => self.moe_gate.as_ref().and_then(|g| layer(g, l, false)),
            CriticWeights(l) => layer(&self.critic, l, true),
            CriticBias(l) => layer(&self.critic, l, false),
            NormMean => Some(self.normalizer.mean.as_slice()),
            NormM2 => Some(self.normalizer.m2.as_slice()),
        };
        found.ok_or_else(|| Error::Input(format!("policy has no parameter block {id}")))
    }

    /// Disjoint mutable views of the requested blocks, in request order.
    pub fn blocks_mut(&mut self, ids: &[BlockId]) -> Result<Vec<&mut [f64]>> {
        use BlockId::*;
        let mut map: HashMap<BlockId, &mut [f64]> = HashMap::new();
        let PolicyState {
            experts,
            adapters,
            gating,
            moe_gate,
            critic,
            normalizer,
            ..
        } = self;
        for (k, e) in experts.iter_mut().enumerate() {
            for (l, layer) in e.net.layers.iter_mut().enumerate() {
                map.insert(ExpertWeights(k, l), layer.weights.as_mut_slice());
                map.insert(ExpertBias(k, l), layer.bias.as_mut_slice());
            }
            map.insert(LogStd(k), e.log_std.as_mut_slice());
        }
        for (k, bank) in adapters.iter_mut().enumerate() {
            for (s, sources) in bank.iter_mut().enumerate() {
                for (i, a) in sources.iter_mut().enumerate() {
                    map.insert(Adapter(k, s, i), a.weights.as_mut_slice());
                }
            }
        }
        for (k, h) in gating.iter_mut().enumerate() {
            for (l, layer) in h.net.layers.iter_mut().enumerate() {
                map.insert(HeadWeights(k, l), layer.weights.as_mut_slice());
                map.insert(HeadBias(k, l), layer.bias.as_mut_slice());
            }
        }
        if let Some(g) = moe_gate {
            for (l, layer) in g.layers.iter_mut().enumerate() {
                map.insert(GateWeights(l), layer.weights.as_mut_slice());
                map.insert(GateBias(l), layer.bias.as_mut_slice());
            }
        }
        for (l, layer) in critic.layers.iter_mut().enumerate() {
            map.insert(CriticWeights(l), layer.weights.as_mut_slice());
            map.insert(CriticBias(l), layer.bias.as_mut_slice());
        }
        map.insert(NormMean, normalizer.mean.as_mut_slice());
        map.insert(NormM2, normalizer.m2.as_mut_slice());
        ids.iter()
            .map(|id| {
                map.remove(id)
                    .ok_or_else(|| Error::Input(format!("parameter block {id} is missing or requested twice")))
            })
            .collect()
    }
}
