use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLAMP: f64 = 10.0;
const VAR_FLOOR: f64 = 1e-8;

/// Running per-feature mean and variance (Welford), mergeable across
/// workers. Until two samples are seen it passes inputs through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations.
    pub m2: Vec<f64>,
    pub frozen: bool,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape(format!("normalizer has {} features, got {len}", self.dim())));
        }
        Ok(())
    }

    /// Adds one sample; ignored when frozen.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        self.check(x.len())?;
        if self.frozen {
            return Ok(());
        }
        self.count += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
        Ok(())
    }

    /// Folds in statistics gathered elsewhere (Chan et al. pairwise update).
    pub fn merge(&mut self, other: &Normalizer) -> Result<()> {
        self.check(other.dim())?;
        if self.frozen || other.count == 0.0 {
            return Ok(());
        }
        let n = self.count + other.count;
        for i in 0..self.dim() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.count / n;
            self.m2[i] += other.m2[i] + d * d * self.count * other.count / n;
        }
        self.count = n;
        Ok(())
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|s| (s / self.count + VAR_FLOOR).sqrt()).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        if self.count < 2.0 {
            return Ok(x.to_vec());
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(self.std())
            .map(|((v, m), s)| ((v - m) / s).clamp(-CLAMP, CLAMP))
            .collect())
    }
}
