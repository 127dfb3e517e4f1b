use serde::{Deserialize, Serialize};

use super::MotionClip;
use crate::error::{Error, Result};

/// Decay of the rolling tracking-reward mean, per episode.
pub const LIBRARY_EMA: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    /// Recent mean tracking reward, in `[0, 1]`.
    pub mean_reward: f64,
    pub successes: u64,
    pub attempts: u64,
    /// s
    pub duration: f64,
}

impl ClipStats {
    pub fn success_fraction(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

/// Result of one finished episode, as reported to the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    /// Mean per-step tracking reward of the episode.
    pub mean_reward: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipLibrary {
    pub clips: Vec<MotionClip>,
    pub stats: Vec<ClipStats>,
}

impl ClipLibrary {
    pub fn new(clips: Vec<MotionClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Input("clip library is empty".into()));
        }
        for c in &clips {
            c.validate()?;
        }
        let stats = clips
            .iter()
            .map(|c| ClipStats {
                mean_reward: 0.0,
                successes: 0,
                attempts: 0,
                duration: c.duration(),
            })
            .collect();
        Ok(Self { clips, stats })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Folds one iteration's episodes of clip `clip` into its statistics.
    ///
    /// `n` episodes with mean reward `m` move the rolling mean to
    /// `0.95ⁿ·r̄ + (1 − 0.95ⁿ)·m`, which is what `n` single-episode updates
    /// give when every episode scores `m`, and does not depend on the order
    /// of the batch. The first batch seeds the mean directly.
    pub fn record(&mut self, clip: usize, outcomes: &[EpisodeOutcome]) -> Result<()> {
        let st = self
            .stats
            .get_mut(clip)
            .ok_or(Error::Lookup { kind: "clip", index: clip })?;
        if outcomes.is_empty() {
            return Ok(());
        }
        let n = outcomes.len();
        let batch = outcomes.iter().map(|o| o.mean_reward.clamp(0.0, 1.0)).sum::<f64>() / n as f64;
        if st.attempts == 0 {
            st.mean_reward = batch;
        } else {
            let keep = LIBRARY_EMA.powi(n as i32);
            st.mean_reward = (keep * st.mean_reward + (1.0 - keep) * batch).clamp(0.0, 1.0);
        }
        st.attempts += n as u64;
        st.successes += outcomes.iter().filter(|o| o.success).count() as u64;
        Ok(())
    }
}
