//! Character description: rigid bodies connected by actuated revolute joints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A body is a capsule along its local `y` axis: a segment from
/// `(0, -half_length)` to `(0, half_length)` swept by `radius`. A zero
/// half-length gives a circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub name: String,
    /// kg
    pub mass: f64,
    /// kg·m² about the center of mass
    pub inertia: f64,
    /// m
    pub half_length: f64,
    /// m
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Anchor in the parent's local frame (m).
    pub parent_anchor: [f64; 2],
    /// Anchor in the child's local frame (m).
    pub child_anchor: [f64; 2],
    /// rad
    pub lower: f64,
    /// rad
    pub upper: f64,
    /// N·m/rad
    pub kp: f64,
    /// N·m·s/rad
    pub kd: f64,
    /// N·m
    pub torque_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterModel {
    pub name: String,
    pub root: usize,
    pub bodies: Vec<BodySpec>,
    /// Listed parent-first: a joint's parent is the root or the child of an
    /// earlier joint.
    pub joints: Vec<JointSpec>,
}

/// Derived tree structure of a validated model.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Joint whose child is this body (`None` for the root).
    pub parent_joint: Vec<Option<usize>>,
    /// Joints on the path root → body, in order.
    pub chain: Vec<Vec<usize>>,
    /// `descendants[j]` = bodies moved by joint `j` (its child subtree).
    pub subtree: Vec<Vec<usize>>,
}

fn capsule_inertia(mass: f64, half_length: f64, radius: f64) -> f64 {
    let len = 2.0 * (half_length + radius);
    let width = 2.0 * radius;
    mass * (len * len + width * width) / 12.0
}

fn body(name: &str, mass: f64, half_length: f64, radius: f64) -> BodySpec {
    BodySpec {
        name: name.into(),
        mass,
        inertia: capsule_inertia(mass, half_length, radius),
        half_length,
        radius,
    }
}

#[allow(clippy::too_many_arguments)]
fn joint(
    name: &str,
    parent: usize,
    child: usize,
    parent_y: f64,
    child_y: f64,
    limits: (f64, f64),
    kp: f64,
    kd: f64,
    torque_limit: f64,
) -> JointSpec {
    JointSpec {
        name: name.into(),
        parent,
        child,
        parent_anchor: [0.0, parent_y],
        child_anchor: [0.0, child_y],
        lower: limits.0,
        upper: limits.1,
        kp,
        kd,
        torque_limit,
    }
}

pub mod body_index {
    pub const PELVIS: usize = 0;
    pub const ABDOMEN: usize = 1;
    pub const CHEST: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_UPPER_ARM: usize = 4;
    pub const L_FOREARM: usize = 5;
    pub const R_UPPER_ARM: usize = 6;
    pub const R_FOREARM: usize = 7;
    pub const L_THIGH: usize = 8;
    pub const L_SHIN: usize = 9;
    pub const R_THIGH: usize = 10;
    pub const R_SHIN: usize = 11;
}

pub mod joint_index {
    pub const WAIST: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const R_SHOULDER: usize = 5;
    pub const R_ELBOW: usize = 6;
    pub const L_HIP: usize = 7;
    pub const L_KNEE: usize = 8;
    pub const R_HIP: usize = 9;
    pub const R_KNEE: usize = 10;
}

impl CharacterModel {
    /// Planar humanoid facing `+x`: 12 bodies (feet merged into shins), 11
    /// actuated revolute joints. Positive joint angles rotate the child
    /// counter-clockwise, so shoulder/hip/elbow flexion is positive and knee
    /// flexion negative.
    pub fn planar_humanoid() -> Self {
        use body_index::*;
        let bodies = vec![
            body("pelvis", 10.0, 0.08, 0.10),
            body("abdomen", 8.0, 0.08, 0.09),
            body("chest", 12.0, 0.10, 0.11),
            body("head", 5.0, 0.03, 0.10),
            body("l_upper_arm", 2.0, 0.13, 0.045),
            body("l_forearm", 1.5, 0.13, 0.04),
            body("r_upper_arm", 2.0, 0.13, 0.045),
            body("r_forearm", 1.5, 0.13, 0.04),
            body("l_thigh", 7.0, 0.20, 0.06),
            body("l_shin", 4.0, 0.22, 0.05),
            body("r_thigh", 7.0, 0.20, 0.06),
            body("r_shin", 4.0, 0.22, 0.05),
        ];
        let joints = vec![
            joint("waist", PELVIS, ABDOMEN, 0.08, -0.08, (-0.6, 0.6), 600.0, 30.0, 400.0),
            joint("spine", ABDOMEN, CHEST, 0.08, -0.10, (-0.6, 0.6), 500.0, 25.0, 400.0),
            joint("neck", CHEST, HEAD, 0.12, -0.13, (-0.7, 0.7), 60.0, 3.0, 60.0),
            joint("l_shoulder", CHEST, L_UPPER_ARM, 0.10, 0.13, (-3.0, 3.0), 150.0, 6.0, 150.0),
            joint("l_elbow", L_UPPER_ARM, L_FOREARM, -0.13, 0.13, (0.0, 2.6), 60.0, 2.0, 80.0),
            joint("r_shoulder", CHEST, R_UPPER_ARM, 0.10, 0.13, (-3.0, 3.0), 150.0, 6.0, 150.0),
            joint("r_elbow", R_UPPER_ARM, R_FOREARM, -0.13, 0.13, (0.0, 2.6), 60.0, 2.0, 80.0),
            joint("l_hip", PELVIS, L_THIGH, -0.08, 0.20, (-1.6, 1.8), 800.0, 40.0, 500.0),
            joint("l_knee", L_THIGH, L_SHIN, -0.20, 0.22, (-2.4, 0.0), 700.0, 25.0, 500.0),
            joint("r_hip", PELVIS, R_THIGH, -0.08, 0.20, (-1.6, 1.8), 800.0, 40.0, 500.0),
            joint("r_knee", R_THIGH, R_SHIN, -0.20, 0.22, (-2.4, 0.0), 700.0, 25.0, 500.0),
        ];
        Self {
            name: "planar_humanoid".into(),
            root: PELVIS,
            bodies,
            joints,
        }
    }

    pub fn body_count(&self) -> usize {
        self.bodies.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        model.topology()?;
        Ok(model)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Validates the model and derives its tree structure.
    pub fn topology(&self) -> Result<Topology> {
        let nb = self.bodies.len();
        if nb == 0 || self.root >= nb {
            return Err(Error::Config(format!("root {} invalid for {nb} bodies", self.root)));
        }
        if self.joints.len() + 1 != nb {
            return Err(Error::Config(format!(
                "a tree over {nb} bodies needs {} joints, found {}",
                nb - 1,
                self.joints.len()
            )));
        }
        for b in &self.bodies {
            if !(b.mass > 0.0 && b.inertia > 0.0) {
                return Err(Error::Config(format!("body {} needs positive mass and inertia", b.name)));
            }
            if !(b.radius > 0.0 && b.half_length >= 0.0) {
                return Err(Error::Config(format!("body {} has invalid collision shape", b.name)));
            }
        }
        let mut parent_joint = vec![None; nb];
        let mut placed = vec![false; nb];
        placed[self.root] = true;
        let mut chain: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for (j, js) in self.joints.iter().enumerate() {
            if js.parent >= nb || js.child >= nb {
                return Err(Error::Config(format!("joint {} references a missing body", js.name)));
            }
            if !placed[js.parent] {
                return Err(Error::Config(format!(
                    "joint {} appears before its parent body is attached",
                    js.name
                )));
            }
            if placed[js.child] {
                return Err(Error::Config(format!("joint {} closes a loop", js.name)));
            }
            if !(js.kp >= 0.0 && js.kd >= 0.0 && js.torque_limit >= 0.0) {
                return Err(Error::Config(format!("joint {} has negative gains", js.name)));
            }
            if !(js.lower <= js.upper) {
                return Err(Error::Config(format!("joint {} has inverted limits", js.name)));
            }
            placed[js.child] = true;
            parent_joint[js.child] = Some(j);
            let mut c = chain[js.parent].clone();
            c.push(j);
            chain[js.child] = c;
        }
        let subtree = (0..self.joints.len())
            .map(|j| (0..nb).filter(|&b| chain[b].contains(&j)).collect())
            .collect();
        Ok(Topology {
            parent_joint,
            chain,
            subtree,
        })
    }
}
