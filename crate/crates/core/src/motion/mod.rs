//! Reference motion: clip data model, binary clip files, velocity resampling,
//! the scripted scenario generator and the clip library used for sampling.

pub(crate) mod io;
mod library;
mod scenario;

pub use io::{load_clip, read_clip, save_clip, write_clip, CLIP_MAGIC, CLIP_VERSION};
pub use library::{ClipLibrary, ClipStats, EpisodeOutcome, LIBRARY_EMA};
pub use scenario::{bundled_suite, generate_reference_scenario, GeneratedClip, Scenario, BUNDLED_SUITE};

use crate::error::{Error, Result};
use crate::physics::{wrap_angle, BodyState, CharacterState, SimState, Vec2, World};

/// Clip frame rate (Hz).
pub const CLIP_FPS: f64 = 30.0;

/// Kinematics of one character at one clip frame. Angles are physical
/// (counter-clockwise positive), positions and velocities are in world
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterFrame {
    pub root_pos: Vec2,
    pub root_angle: f64,
    pub joint_angles: Vec<f64>,
    pub joint_rates: Vec<f64>,
    pub body_pos: Vec<Vec2>,
    pub body_angle: Vec<f64>,
    pub body_vel: Vec<Vec2>,
    pub body_omega: Vec<f64>,
}

impl CharacterFrame {
    pub fn from_state(c: &CharacterState) -> Self {
        Self {
            root_pos: c.root_pos,
            root_angle: c.root_angle,
            joint_angles: c.joint_angles.clone(),
            joint_rates: c.joint_rates.clone(),
            body_pos: c.bodies.iter().map(|b| b.pos).collect(),
            body_angle: c.bodies.iter().map(|b| b.angle).collect(),
            body_vel: c.bodies.iter().map(|b| b.vel).collect(),
            body_omega: c.bodies.iter().map(|b| b.omega).collect(),
        }
    }

    /// Number of f64 values in the serialized block.
    pub(crate) fn block_len(bodies: usize, joints: usize) -> usize {
        3 + 2 * joints + 6 * bodies
    }

    pub(crate) fn write_block(&self, out: &mut Vec<f64>) {
        out.extend([self.root_pos.x, self.root_pos.y, self.root_angle]);
        out.extend(&self.joint_angles);
        out.extend(&self.joint_rates);
        for p in &self.body_pos {
            out.extend([p.x, p.y]);
        }
        out.extend(&self.body_angle);
        for v in &self.body_vel {
            out.extend([v.x, v.y]);
        }
        out.extend(&self.body_omega);
    }

    pub(crate) fn read_block(block: &[f64], bodies: usize, joints: usize) -> Self {
        let mut it = block.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let head = take(3);
        let joint_angles = take(joints);
        let joint_rates = take(joints);
        let pairs = |v: Vec<f64>| v.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect::<Vec<_>>();
        let body_pos = pairs(take(2 * bodies));
        let body_angle = take(bodies);
        let body_vel = pairs(take(2 * bodies));
        let body_omega = take(bodies);
        Self {
            root_pos: Vec2::new(head[0], head[1]),
            root_angle: head[2],
            joint_angles,
            joint_rates,
            body_pos,
            body_angle,
            body_vel,
            body_omega,
        }
    }
}

/// A fixed-rate two-character reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub fps: f64,
    /// Facing of each character (`±1`).
    pub facing: Vec<f64>,
    /// `frames[t][character]`
    pub frames: Vec<Vec<CharacterFrame>>,
    /// Physical PD targets that produced frame `t + 1` from frame `t`,
    /// characters concatenated. Present on generated clips.
    pub actions: Option<Vec<Vec<f64>>>,
}

impl MotionClip {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn character_count(&self) -> usize {
        self.facing.len()
    }

    pub fn body_count(&self) -> usize {
        self.frames.first().and_then(|f| f.first()).map_or(0, |c| c.body_pos.len())
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().and_then(|f| f.first()).map_or(0, |c| c.joint_angles.len())
    }

    /// Clip length in seconds (`frames / fps`).
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn frame(&self, t: usize) -> Result<&[CharacterFrame]> {
        self.frames
            .get(t)
            .map(Vec::as_slice)
            .ok_or(Error::Range { frame: t, frames: self.frames.len() })
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Input(format!("clip {} needs at least 2 frames", self.id)));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Input(format!("clip {} has fps {}", self.id, self.fps)));
        }
        let (nb, nj, nc) = (self.body_count(), self.joint_count(), self.character_count());
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != nc {
                return Err(Error::Shape(format!("frame {t} has {} characters, expected {nc}", f.len())));
            }
            for c in f {
                let ok = c.joint_angles.len() == nj
                    && c.joint_rates.len() == nj
                    && c.body_pos.len() == nb
                    && c.body_angle.len() == nb
                    && c.body_vel.len() == nb
                    && c.body_omega.len() == nb;
                if !ok {
                    return Err(Error::Shape(format!("frame {t} has inconsistent per-character arrays")));
                }
            }
        }
        if let Some(actions) = &self.actions {
            if actions.len() + 1 != self.frames.len() || actions.iter().any(|a| a.len() != nc * nj) {
                return Err(Error::Shape("action table does not match the frame table".into()));
            }
        }
        Ok(())
    }

    /// Simulator state of all characters at frame `t`: root pose, joint
    /// angles and velocities copied from the clip, body kinematics derived.
    pub fn sim_state(&self, world: &World, t: usize) -> Result<SimState> {
        let frame = self.frame(t)?;
        let characters = frame
            .iter()
            .zip(&self.facing)
            .map(|(cf, &facing)| self.character_state(world, cf, facing))
            .collect::<Result<Vec<_>>>()?;
        let mut s = SimState::new(characters);
        s.time = t as f64 / self.fps;
        Ok(s)
    }

    fn character_state(&self, world: &World, cf: &CharacterFrame, facing: f64) -> Result<CharacterState> {
        let root = world.model.root;
        if cf.joint_angles.len() != world.joint_count() || cf.body_pos.len() != world.body_count() {
            return Err(Error::Shape(format!(
                "clip {} does not match the character model ({} joints, {} bodies)",
                self.id,
                world.joint_count(),
                world.body_count()
            )));
        }
        let mut c = CharacterState {
            facing,
            root_pos: cf.root_pos,
            root_angle: cf.root_angle,
            root_vel: cf.body_vel[root],
            root_omega: cf.body_omega[root],
            joint_angles: cf.joint_angles.clone(),
            joint_rates: cf.joint_rates.clone(),
            bodies: vec![BodyState::default(); cf.body_pos.len()],
            joint_positions: Vec::new(),
        };
        world.refresh(&mut c);
        Ok(c)
    }

    /// World-space joint anchor positions per frame and character, from
    /// forward kinematics of the stored pose.
    pub fn joint_positions(&self, world: &World) -> Result<Vec<Vec<Vec<Vec2>>>> {
        (0..self.frames.len())
            .map(|t| {
                Ok(self
                    .sim_state(world, t)?
                    .characters
                    .into_iter()
                    .map(|c| c.joint_positions)
                    .collect())
            })
            .collect()
    }

    /// Mean pelvis-to-pelvis distance between the first two characters.
    pub fn mean_separation(&self, world: &World) -> f64 {
        if self.character_count() < 2 {
            return 0.0;
        }
        let root = world.model.root;
        let total: f64 = self
            .frames
            .iter()
            .map(|f| (f[0].body_pos[root] - f[1].body_pos[root]).norm())
            .sum();
        total / self.frames.len() as f64
    }
}

/// Recomputes every velocity field from positions and angles: central
/// differences inside the clip, one-sided at the ends, angle differences
/// wrapped to `(-π, π]`.
pub fn resample_velocities(clip: &MotionClip) -> Result<MotionClip> {
    let n = clip.frames.len();
    if n < 2 {
        return Err(Error::Input(format!("resampling needs at least 2 frames, clip {} has {n}", clip.id)));
    }
    let fps = clip.fps;
    let span = |t: usize| -> (usize, usize, f64) {
        if t == 0 {
            (0, 1, fps)
        } else if t == n - 1 {
            (n - 2, n - 1, fps)
        } else {
            (t - 1, t + 1, 0.5 * fps)
        }
    };
    let mut out = clip.clone();
    for t in 0..n {
        let (a, b, scale) = span(t);
        for c in 0..clip.character_count() {
            let fa = &clip.frames[a][c];
            let fb = &clip.frames[b][c];
            let f = &mut out.frames[t][c];
            for (v, (pa, pb)) in f.body_vel.iter_mut().zip(fa.body_pos.iter().zip(&fb.body_pos)) {
                *v = (pb - pa) * scale;
            }
            for (w, (qa, qb)) in f.body_omega.iter_mut().zip(fa.body_angle.iter().zip(&fb.body_angle)) {
                *w = wrap_angle(qb - qa) * scale;
            }
            for (r, (qa, qb)) in f.joint_rates.iter_mut().zip(fa.joint_angles.iter().zip(&fb.joint_angles)) {
                *r = wrap_angle(qb - qa) * scale;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
