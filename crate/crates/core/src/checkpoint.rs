//! Checkpoint files: `PMOE`, u32 version, u64 manifest length, JSON
//! manifest, then every parameter block as little-endian f64 in manifest
//! order.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::motion::io::read_exact_or_corrupt;
use crate::physics::{CharacterModel, SimConfig, World};
use crate::policy::{BlockId, PolicyConfig, PolicyState};
use crate::trainer::TrainerState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMOE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A policy plus everything needed to evaluate it or resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: PolicyState,
    pub model: CharacterModel,
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    pub fn world(&self) -> Result<World> {
        World::new(self.model.clone(), self.sim.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    policy: PolicyConfig,
    input_dim: usize,
    action_dim: usize,
    experts: usize,
    active: usize,
    frozen: Vec<bool>,
    head_frozen: Vec<bool>,
    pnn_thresholds: Vec<f64>,
    normalizer_count: f64,
    normalizer_frozen: bool,
    model: CharacterModel,
    sim: SimConfig,
    env: EnvConfig,
    trainer: Option<TrainerState>,
    blocks: Vec<BlockEntry>,
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut w: W) -> Result<()> {
    let p = &ck.policy;
    let ids = p.all_blocks();
    let blocks = ids
        .iter()
        .map(|id| {
            Ok(BlockEntry {
                name: id.to_string(),
                len: p.block(*id)?.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        policy: p.config.clone(),
        input_dim: p.input_dim,
        action_dim: p.action_dim,
        experts: p.expert_count(),
        active: p.active,
        frozen: p.experts.iter().map(|e| e.frozen).collect(),
        head_frozen: p.gating.iter().map(|h| h.frozen).collect(),
        pnn_thresholds: p.pnn_thresholds.clone(),
        normalizer_count: p.normalizer.count,
        normalizer_frozen: p.normalizer.frozen,
        model: ck.model.clone(),
        sim: ck.sim.clone(),
        env: ck.env.clone(),
        trainer: ck.trainer.clone(),
        blocks,
    };
    let json = serde_json::to_vec(&manifest)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut bytes = Vec::new();
    for id in ids {
        for v in p.block(id)? {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let mut len = [0u8; 8];
    read_exact_or_corrupt(&mut r, &mut len, "manifest length")?;
    let len = u64::from_le_bytes(len);
    if len > (1 << 30) {
        return Err(Error::Corrupt(format!("implausible manifest length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact_or_corrupt(&mut r, &mut json, "manifest")?;
    let m: Manifest = serde_json::from_slice(&json).map_err(|e| Error::Corrupt(format!("checkpoint manifest: {e}")))?;
    m.policy.validate().map_err(|e| Error::Corrupt(e.to_string()))?;

    // Rebuild the architecture, then overwrite every parameter.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut policy = PolicyState::new(m.policy.clone(), m.input_dim, m.action_dim, &mut rng)?;
    while policy.expert_count() < m.experts {
        policy.activate_expert(&mut rng).map_err(|e| Error::Corrupt(format!("expert layout: {e}")))?;
    }
    if policy.expert_count() != m.experts
        || m.frozen.len() != m.experts
        || m.head_frozen.len() != policy.gating.len()
        || m.active >= m.experts
    {
        return Err(Error::Corrupt("expert bookkeeping does not match the architecture".into()));
    }
    let ids = m
        .blocks
        .iter()
        .map(|b| b.name.parse::<BlockId>())
        .collect::<Result<Vec<_>>>()?;
    if ids != policy.all_blocks() {
        return Err(Error::Corrupt("parameter block list does not match the architecture".into()));
    }
    for (id, b) in ids.iter().zip(&m.blocks) {
        if policy.block(*id)?.len() != b.len {
            return Err(Error::Corrupt(format!("block {id} has {} values, expected {}", b.len, policy.block(*id)?.len())));
        }
    }
    let total: usize = m.blocks.iter().map(|b| b.len).sum();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() != total * 8 {
        return Err(Error::Corrupt(format!("expected {} parameter bytes, found {}", total * 8, rest.len())));
    }
    let mut values = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    for dst in policy.blocks_mut(&ids)? {
        for v in dst.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    for (e, f) in policy.experts.iter_mut().zip(&m.frozen) {
        e.frozen = *f;
    }
    for (h, f) in policy.gating.iter_mut().zip(&m.head_frozen) {
        h.frozen = *f;
    }
    policy.active = m.active;
    policy.pnn_thresholds = m.pnn_thresholds;
    policy.normalizer.count = m.normalizer_count;
    policy.normalizer.frozen = m.normalizer_frozen;
    if !policy.is_finite() {
        return Err(Error::Corrupt("non-finite parameters".into()));
    }
    Ok(Checkpoint {
        policy,
        model: m.model,
        sim: m.sim,
        env: m.env,
        trainer: m.trainer,
    })
}

/// Writes through a temporary file and renames it into place, so an
/// interrupted save never clobbers an existing checkpoint.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(ck, &mut buf)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
