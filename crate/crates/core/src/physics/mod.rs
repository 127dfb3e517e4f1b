//! Deterministic planar rigid-body simulation of two articulated characters.
//!
//! Each character is integrated in reduced coordinates: root position, root
//! angle and one angle per revolute joint. Body states are derived by forward
//! kinematics after every substep. Contacts use a penalty spring-damper with a
//! Coulomb-clamped tangential damper. The tangential and normal damping terms
//! are folded into the velocity solve (linearly implicit) so stiff friction
//! stays stable at 120 Hz; everything else is semi-implicit Euler.
//!
//! A character can be mirrored (`facing = -1`): its model is reflected through
//! its local `y` axis. Joint angles stored in [`CharacterState`] are always
//! physical (counter-clockwise positive); the mirrored "own" convention is
//! applied by the environment.

mod contact;
mod model;

pub use contact::{detect_contacts, BodyRef, ContactForces, ContactPoint};
pub use model::{body_index, joint_index, BodySpec, CharacterModel, JointSpec, Topology};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;

#[inline]
pub fn rotate(angle: f64, v: Vec2) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Counter-clockwise quarter turn.
#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Physics timestep (s).
    pub timestep: f64,
    pub substeps: usize,
    /// Vertical gravity (m/s²).
    pub gravity: f64,
    /// N/m
    pub contact_stiffness: f64,
    /// N·s/m along the normal.
    pub contact_damping: f64,
    /// Coulomb coefficient.
    pub friction: f64,
    /// N·s/m tangential damper, clamped by `friction * normal force`.
    pub friction_damping: f64,
    /// Control rate (Hz).
    pub control_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timestep: 1.0 / 120.0,
            substeps: 4,
            gravity: -9.81,
            contact_stiffness: 1.0e4,
            contact_damping: 300.0,
            friction: 0.9,
            friction_damping: 2.0e4,
            control_rate: 30.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timestep > 0.0) || self.substeps == 0 || !(self.control_rate > 0.0) {
            return Err(Error::Config("timestep, substeps and control rate must be positive".into()));
        }
        let control_dt = self.timestep * self.substeps as f64;
        if (control_dt * self.control_rate - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "timestep x substeps = {control_dt} s does not match control rate {} Hz",
                self.control_rate
            )));
        }
        if self.contact_stiffness < 0.0 || self.contact_damping < 0.0 || self.friction < 0.0 || self.friction_damping < 0.0 {
            return Err(Error::Config("contact parameters must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyState {
    pub pos: Vec2,
    pub angle: f64,
    pub vel: Vec2,
    pub omega: f64,
}

impl BodyState {
    pub fn point_velocity(&self, point: Vec2) -> Vec2 {
        self.vel + self.omega * perp(point - self.pos)
    }
}

/// Reduced coordinates of one character plus derived body kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterState {
    /// `+1` faces `+x`, `-1` is the mirrored model facing `-x`.
    pub facing: f64,
    pub root_pos: Vec2,
    pub root_angle: f64,
    pub root_vel: Vec2,
    pub root_omega: f64,
    /// Physical (counter-clockwise) joint angles, rad.
    pub joint_angles: Vec<f64>,
    pub joint_rates: Vec<f64>,
    /// Derived; refreshed by [`World::refresh`].
    pub bodies: Vec<BodyState>,
    /// World position of each joint anchor; derived.
    pub joint_positions: Vec<Vec2>,
}

impl CharacterState {
    pub fn dof(&self) -> usize {
        3 + self.joint_angles.len()
    }
}

/// Free circular body thrown at the characters.
#[derive(Debug, Clone, PartialEq)]
pub struct Projectile {
    pub pos: Vec2,
    pub vel: Vec2,
    pub mass: f64,
    pub radius: f64,
    /// Seconds since spawn.
    pub age: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub characters: Vec<CharacterState>,
    pub projectiles: Vec<Projectile>,
    pub time: f64,
    /// Contacts resolved during the last control step, all substeps.
    pub contacts: Vec<ContactPoint>,
    /// Joint torques averaged over the substeps of the last control step,
    /// characters concatenated (N·m).
    pub torques: Vec<f64>,
}

impl SimState {
    pub fn new(characters: Vec<CharacterState>) -> Self {
        Self {
            characters,
            projectiles: Vec::new(),
            time: 0.0,
            contacts: Vec::new(),
            torques: Vec::new(),
        }
    }

    pub fn inter_character_contacts(&self) -> usize {
        self.contacts.iter().filter(|c| c.is_inter_character()).count()
    }
}

/// What drives the joints over one control step.
#[derive(Debug, Clone, PartialEq)]
pub enum Actuation {
    /// Fixed torques per joint, characters concatenated (N·m).
    Torques(Vec<f64>),
    /// Physical PD targets per joint, characters concatenated (rad). Torques
    /// are recomputed from the PD law every substep.
    PdTargets(Vec<f64>),
}

/// 2D rigid transform into a character's root-centered, root-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec2,
    pub angle: f64,
    /// Mirror of the local `x` axis for characters facing `-x`.
    pub facing: f64,
}

impl LocalFrame {
    pub fn point(&self, p: Vec2) -> Vec2 {
        self.vector(p - self.origin)
    }

    pub fn vector(&self, v: Vec2) -> Vec2 {
        let r = rotate(-self.angle, v);
        Vec2::new(self.facing * r.x, r.y)
    }
}

pub fn local_frame(state: &SimState, character: usize) -> Result<LocalFrame> {
    let c = state
        .characters
        .get(character)
        .ok_or(Error::Lookup { kind: "character", index: character })?;
    Ok(LocalFrame {
        origin: c.root_pos,
        angle: c.root_angle,
        facing: c.facing,
    })
}

/// `clamp(kp (target - angle) - kd rate, ±limit)`
pub fn pd_torque(joint: &JointSpec, target: f64, angle: f64, rate: f64) -> Result<f64> {
    if !target.is_finite() {
        return Err(Error::Numeric(format!("PD target for joint {} is {target}", joint.name)));
    }
    let tau = joint.kp * (target - angle) - joint.kd * rate;
    Ok(tau.clamp(-joint.torque_limit, joint.torque_limit))
}

/// One generalized-coordinate column of a point Jacobian.
#[derive(Debug, Clone, Copy)]
pub(crate) struct JacColumn {
    pub dof: usize,
    pub col: Vec2,
}

/// Model plus configuration; all simulation entry points hang off this.
#[derive(Debug, Clone)]
pub struct World {
    pub model: CharacterModel,
    pub topology: Topology,
    pub config: SimConfig,
}

const DIVERGENCE_LIMIT: f64 = 1e6;

impl World {
    pub fn new(model: CharacterModel, config: SimConfig) -> Result<Self> {
        let topology = model.topology()?;
        config.validate()?;
        Ok(Self {
            model,
            topology,
            config,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.model.joint_count()
    }

    pub fn body_count(&self) -> usize {
        self.model.body_count()
    }

    /// Physical limits of joint `j` for a character with `facing`.
    pub fn joint_limits(&self, j: usize, facing: f64) -> (f64, f64) {
        let js = &self.model.joints[j];
        if facing >= 0.0 {
            (js.lower, js.upper)
        } else {
            (-js.upper, -js.lower)
        }
    }

    fn anchor(&self, a: [f64; 2], facing: f64) -> Vec2 {
        Vec2::new(facing * a[0], a[1])
    }

    /// Builds a character at rest from physical joint angles.
    pub fn character_at_rest(&self, facing: f64, root_pos: Vec2, root_angle: f64, joint_angles: &[f64]) -> CharacterState {
        let mut c = CharacterState {
            facing,
            root_pos,
            root_angle,
            root_vel: Vec2::zeros(),
            root_omega: 0.0,
            joint_angles: joint_angles.to_vec(),
            joint_rates: vec![0.0; joint_angles.len()],
            bodies: Vec::new(),
            joint_positions: Vec::new(),
        };
        self.refresh(&mut c);
        c
    }

    /// Lowest point of the character's collision shapes.
    pub fn lowest_point(&self, c: &CharacterState) -> f64 {
        c.bodies
            .iter()
            .zip(&self.model.bodies)
            .map(|(b, spec)| {
                let (p0, p1) = self.capsule_segment(b, spec);
                p0.y.min(p1.y) - spec.radius
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Same pose, shifted vertically so the lowest point sits `sink` below the
    /// ground plane.
    pub fn place_on_ground(&self, c: &mut CharacterState, sink: f64) {
        let low = self.lowest_point(c);
        c.root_pos.y -= low + sink;
        self.refresh(c);
    }

    pub(crate) fn capsule_segment(&self, b: &BodyState, spec: &BodySpec) -> (Vec2, Vec2) {
        let axis = rotate(b.angle, Vec2::new(0.0, spec.half_length));
        (b.pos - axis, b.pos + axis)
    }

    /// Recomputes body poses, velocities and joint anchors from the reduced
    /// coordinates.
    pub fn refresh(&self, c: &mut CharacterState) {
        let nb = self.model.body_count();
        c.bodies.resize(nb, BodyState::default());
        c.joint_positions.resize(self.model.joint_count(), Vec2::zeros());
        c.bodies[self.model.root] = BodyState {
            pos: c.root_pos,
            angle: c.root_angle,
            vel: c.root_vel,
            omega: c.root_omega,
        };
        for (j, js) in self.model.joints.iter().enumerate() {
            let p = c.bodies[js.parent];
            let pa = rotate(p.angle, self.anchor(js.parent_anchor, c.facing));
            let angle = p.angle + c.joint_angles[j];
            let omega = p.omega + c.joint_rates[j];
            let ca = rotate(angle, self.anchor(js.child_anchor, c.facing));
            let anchor = p.pos + pa;
            let anchor_vel = p.vel + p.omega * perp(pa);
            c.joint_positions[j] = anchor;
            c.bodies[js.child] = BodyState {
                pos: anchor - ca,
                angle,
                vel: anchor_vel - omega * perp(ca),
                omega,
            };
        }
    }

    /// Jacobian columns (character-local dof indices) of a point rigidly
    /// attached to `body`.
    pub(crate) fn point_jacobian(&self, c: &CharacterState, body: usize, point: Vec2) -> Vec<JacColumn> {
        let chain = &self.topology.chain[body];
        let mut cols = Vec::with_capacity(3 + chain.len());
        cols.push(JacColumn { dof: 0, col: Vec2::new(1.0, 0.0) });
        cols.push(JacColumn { dof: 1, col: Vec2::new(0.0, 1.0) });
        cols.push(JacColumn {
            dof: 2,
            col: perp(point - c.root_pos),
        });
        for &j in chain {
            cols.push(JacColumn {
                dof: 3 + j,
                col: perp(point - c.joint_positions[j]),
            });
        }
        cols
    }

    /// Joint-space mass matrix and velocity-product (Coriolis/centrifugal)
    /// vector of one character.
    pub fn mass_matrix_and_bias(&self, c: &CharacterState) -> (DMatrix<f64>, DVector<f64>) {
        let n = c.dof();
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut h = DVector::<f64>::zeros(n);

        // Bias accelerations of each body's center of mass at zero
        // generalized acceleration.
        let nb = self.model.body_count();
        let mut bias_acc = vec![Vec2::zeros(); nb];
        for js in &self.model.joints {
            let p = c.bodies[js.parent];
            let ch = c.bodies[js.child];
            let pa = rotate(p.angle, self.anchor(js.parent_anchor, c.facing));
            let ca = rotate(ch.angle, self.anchor(js.child_anchor, c.facing));
            bias_acc[js.child] = bias_acc[js.parent] - p.omega * p.omega * pa + ch.omega * ch.omega * ca;
        }

        for (b, spec) in self.model.bodies.iter().enumerate() {
            let body = c.bodies[b];
            let cols = self.point_jacobian(c, b, body.pos);
            for ci in &cols {
                for ck in &cols {
                    m[(ci.dof, ck.dof)] += spec.mass * ci.col.dot(&ck.col);
                }
                h[ci.dof] += spec.mass * ci.col.dot(&bias_acc[b]);
            }
            // Angular velocity = root rate + rates along the chain.
            let ang: Vec<usize> = std::iter::once(2)
                .chain(self.topology.chain[b].iter().map(|j| 3 + j))
                .collect();
            for &i in &ang {
                for &k in &ang {
                    m[(i, k)] += spec.inertia;
                }
            }
        }
        (m, h)
    }

    pub fn kinetic_energy(&self, state: &SimState) -> f64 {
        let mut e = 0.0;
        for c in &state.characters {
            for (b, spec) in c.bodies.iter().zip(&self.model.bodies) {
                e += 0.5 * spec.mass * b.vel.norm_squared() + 0.5 * spec.inertia * b.omega * b.omega;
            }
        }
        for p in &state.projectiles {
            e += 0.5 * p.mass * p.vel.norm_squared();
        }
        e
    }

    pub fn linear_momentum(&self, state: &SimState) -> Vec2 {
        let mut p = Vec2::zeros();
        for c in &state.characters {
            for (b, spec) in c.bodies.iter().zip(&self.model.bodies) {
                p += spec.mass * b.vel;
            }
        }
        for pr in &state.projectiles {
            p += pr.mass * pr.vel;
        }
        p
    }

    /// PD torque for joint `joint` of `character`, with a physical target.
    pub fn joint_pd_torque(&self, state: &SimState, character: usize, joint: usize, target: f64) -> Result<f64> {
        let c = state
            .characters
            .get(character)
            .ok_or(Error::Lookup { kind: "character", index: character })?;
        let js = self
            .model
            .joints
            .get(joint)
            .ok_or(Error::Lookup { kind: "joint", index: joint })?;
        pd_torque(js, target, c.joint_angles[joint], c.joint_rates[joint])
    }

    /// Advances one control step (`substeps` physics steps).
    pub fn step(&self, state: &SimState, actuation: &Actuation) -> Result<SimState> {
        let nj = self.joint_count();
        let expected = nj * state.characters.len();
        let commands = match actuation {
            Actuation::Torques(t) | Actuation::PdTargets(t) => t,
        };
        if commands.len() != expected {
            return Err(Error::Shape(format!(
                "actuation has {} entries, expected {expected}",
                commands.len()
            )));
        }
        if let Some(i) = commands.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("actuation entry {i} is {}", commands[i])));
        }
        let mut next = state.clone();
        next.contacts.clear();
        next.torques = vec![0.0; expected];
        let dt = self.config.timestep;
        for _ in 0..self.config.substeps {
            self.substep(&mut next, actuation, dt)?;
        }
        let inv = 1.0 / self.config.substeps as f64;
        next.torques.iter_mut().for_each(|t| *t *= inv);
        Ok(next)
    }

    fn substep(&self, s: &mut SimState, actuation: &Actuation, dt: f64) -> Result<()> {
        let cfg = &self.config;
        let nj = self.joint_count();
        let nc = s.characters.len();
        let char_dof = 3 + nj;
        let n = nc * char_dof + 2 * s.projectiles.len();
        let proj_offset = nc * char_dof;
        let gravity = Vec2::new(0.0, cfg.gravity);
        let total_mass = self.model.total_mass();

        let mut mass = DMatrix::<f64>::zeros(n, n);
        let mut qdot = DVector::<f64>::zeros(n);
        let mut force = DVector::<f64>::zeros(n);

        for (ci, c) in s.characters.iter().enumerate() {
            let o = ci * char_dof;
            let (m, h) = self.mass_matrix_and_bias(c);
            mass.view_mut((o, o), (char_dof, char_dof)).copy_from(&m);
            qdot[o] = c.root_vel.x;
            qdot[o + 1] = c.root_vel.y;
            qdot[o + 2] = c.root_omega;
            for j in 0..nj {
                qdot[o + 3 + j] = c.joint_rates[j];
            }
            for k in 0..char_dof {
                force[o + k] -= h[k];
            }
            for (b, spec) in self.model.bodies.iter().enumerate() {
                for col in self.point_jacobian(c, b, c.bodies[b].pos) {
                    force[o + col.dof] += col.col.dot(&(spec.mass * gravity));
                }
            }
        }
        for (pi, p) in s.projectiles.iter().enumerate() {
            let o = proj_offset + 2 * pi;
            mass[(o, o)] = p.mass;
            mass[(o + 1, o + 1)] = p.mass;
            qdot[o] = p.vel.x;
            qdot[o + 1] = p.vel.y;
            force[o] += p.mass * gravity.x;
            force[o + 1] += p.mass * gravity.y;
        }

        // Joint drive. Explicit torques go straight into the force vector; PD
        // targets are evaluated at the end-of-step velocity (stable PD), so
        // their stiffness and damping enter the system matrix until the
        // torque saturates.
        let mut pd_saturated: Vec<Option<f64>> = vec![None; nc * nj];
        let pd_targets = match actuation {
            Actuation::Torques(t) => {
                for ci in 0..nc {
                    for j in 0..nj {
                        force[ci * char_dof + 3 + j] += t[ci * nj + j];
                    }
                }
                None
            }
            Actuation::PdTargets(t) => Some(t),
        };

        let mut contacts = detect_contacts(self, s);
        let rows: Vec<(SparseRow, SparseRow)> = contacts
            .iter()
            .map(|ct| {
                (
                    self.contact_row(s, ct, ct.normal, char_dof, proj_offset),
                    self.contact_row(s, ct, perp(ct.normal), char_dof, proj_offset),
                )
            })
            .collect();

        let base_rhs = &mass * &qdot + dt * &force;
        let mut normal_active = vec![true; contacts.len()];
        let mut sliding: Vec<Option<f64>> = vec![None; contacts.len()];
        let mut normal_force = vec![0.0; contacts.len()];
        let mut solution = qdot.clone();
        let max_iter = 2 * (contacts.len() + pd_saturated.len()) + 2;
        for _ in 0..max_iter {
            let mut a = mass.clone();
            let mut rhs = base_rhs.clone();
            if let Some(targets) = pd_targets {
                for (ci, c) in s.characters.iter().enumerate() {
                    for (j, js) in self.model.joints.iter().enumerate() {
                        let d = ci * char_dof + 3 + j;
                        match pd_saturated[ci * nj + j] {
                            None => {
                                a[(d, d)] += dt * (js.kd + dt * js.kp);
                                rhs[d] += dt * js.kp * (targets[ci * nj + j] - c.joint_angles[j]);
                            }
                            Some(tau) => rhs[d] += dt * tau,
                        }
                    }
                }
            }
            for (i, ct) in contacts.iter().enumerate() {
                if !normal_active[i] {
                    continue;
                }
                let (jn, jt) = &rows[i];
                jn.add_scaled_to(&mut rhs, dt * cfg.contact_stiffness * ct.depth);
                jn.add_outer_to(&mut a, dt * cfg.contact_damping);
                match sliding[i] {
                    None => jt.add_outer_to(&mut a, dt * cfg.friction_damping),
                    Some(f) => jt.add_scaled_to(&mut rhs, dt * f),
                }
            }
            solution = solve_spd(a, rhs)?;

            let mut changed = false;
            if let Some(targets) = pd_targets {
                for (ci, c) in s.characters.iter().enumerate() {
                    for (j, js) in self.model.joints.iter().enumerate() {
                        let k = ci * nj + j;
                        if pd_saturated[k].is_none() {
                            let rate = solution[ci * char_dof + 3 + j];
                            let tau = js.kp * (targets[k] - c.joint_angles[j] - dt * rate) - js.kd * rate;
                            if tau.abs() > js.torque_limit {
                                pd_saturated[k] = Some(js.torque_limit.copysign(tau));
                                changed = true;
                            }
                        }
                    }
                }
            }
            for (i, ct) in contacts.iter().enumerate() {
                if !normal_active[i] {
                    continue;
                }
                let (jn, jt) = &rows[i];
                let nf = cfg.contact_stiffness * ct.depth - cfg.contact_damping * jn.dot(&solution);
                if nf < 0.0 {
                    normal_active[i] = false;
                    normal_force[i] = 0.0;
                    changed = true;
                    continue;
                }
                normal_force[i] = nf;
                let bound = cfg.friction * nf;
                match sliding[i] {
                    None => {
                        let slip = jt.dot(&solution);
                        if (cfg.friction_damping * slip).abs() > bound {
                            sliding[i] = Some(-bound * slip.signum());
                            changed = true;
                        }
                    }
                    Some(f) => {
                        // keep the sliding force consistent with the updated normal force
                        let updated = bound * f.signum();
                        if (updated - f).abs() > 1e-12 * (1.0 + bound) {
                            sliding[i] = Some(updated);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        for (i, ct) in contacts.iter_mut().enumerate() {
            let (_, jt) = &rows[i];
            let nf = if normal_active[i] { normal_force[i].max(0.0) } else { 0.0 };
            let tf = if !normal_active[i] {
                0.0
            } else {
                match sliding[i] {
                    None => -cfg.friction_damping * jt.dot(&solution),
                    Some(f) => f,
                }
            };
            ct.set_forces(nf, tf);
        }

        // Applied joint torques over this substep, for the energy balance.
        let applied: Vec<f64> = match actuation {
            Actuation::Torques(t) => t.clone(),
            Actuation::PdTargets(targets) => (0..nc * nj)
                .map(|k| {
                    let (ci, j) = (k / nj, k % nj);
                    let js = &self.model.joints[j];
                    pd_saturated[k].unwrap_or_else(|| {
                        let rate = solution[ci * char_dof + 3 + j];
                        js.kp * (targets[k] - s.characters[ci].joint_angles[j] - dt * rate) - js.kd * rate
                    })
                })
                .collect(),
        };

        for (acc, tau) in s.torques.iter_mut().zip(&applied) {
            *acc += tau;
        }

        // External force on each character and whether it touched anything.
        let mut external = vec![total_mass * gravity; nc];
        let mut touching = vec![false; nc];
        for ct in &contacts {
            for (r, f) in [(ct.a, ct.force_on_a), (ct.b, ct.force_on_b)] {
                if let BodyRef::Body { character, .. } = r {
                    external[character] += f;
                    touching[character] = true;
                }
            }
        }

        for (ci, c) in s.characters.iter_mut().enumerate() {
            let o = ci * char_dof;
            let momentum_before = momentum_of(&self.model, c);
            let energy_before = kinetic_energy_of(&self.model, c);
            let rates_before = c.joint_rates.clone();

            c.root_vel = Vec2::new(solution[o], solution[o + 1]);
            c.root_omega = solution[o + 2];
            c.root_pos += dt * c.root_vel;
            c.root_angle += dt * c.root_omega;
            let mut clamped = false;
            for j in 0..nj {
                let rate = solution[o + 3 + j];
                let mut angle = c.joint_angles[j] + dt * rate;
                let (lo, hi) = self.joint_limits(j, c.facing);
                let mut r = rate;
                if angle < lo {
                    angle = lo;
                    r = r.max(0.0);
                    clamped = true;
                } else if angle > hi {
                    angle = hi;
                    r = r.min(0.0);
                    clamped = true;
                }
                c.joint_angles[j] = angle;
                c.joint_rates[j] = r;
            }
            self.refresh(c);

            // The velocity solve uses the mass matrix at the start of the
            // substep, which leaves an O(dt²) momentum error once the pose
            // has moved. Put it back through the root velocity.
            let target = momentum_before + dt * external[ci];
            c.root_vel += (target - momentum_of(&self.model, c)) / total_mass;
            self.refresh(c);

            if !touching[ci] && !clamped {
                let torque_work: f64 = (0..nj)
                    .map(|j| applied[ci * nj + j] * 0.5 * (rates_before[j] + c.joint_rates[j]))
                    .sum();
                let gravity_work = gravity.dot(&(0.5 * (momentum_before + target)));
                let wanted = energy_before + dt * (torque_work + gravity_work);
                self.rescale_internal_energy(c, target, wanted);
            }
        }
        for (pi, p) in s.projectiles.iter_mut().enumerate() {
            let o = proj_offset + 2 * pi;
            p.vel = Vec2::new(solution[o], solution[o + 1]);
            p.pos += dt * p.vel;
            p.age += dt;
        }
        s.time += dt;
        s.contacts.extend(contacts);
        self.check_divergence(s)
    }

    /// Scales velocities relative to the center of mass so the kinetic energy
    /// becomes `wanted`, keeping the momentum. Corrections are limited to
    /// 0.1 % so this only ever absorbs integration drift.
    fn rescale_internal_energy(&self, c: &mut CharacterState, momentum: Vec2, wanted: f64) {
        let total_mass = self.model.total_mass();
        let com_vel = momentum / total_mass;
        let com_energy = 0.5 * total_mass * com_vel.norm_squared();
        let internal = kinetic_energy_of(&self.model, c) - com_energy;
        if internal <= 1e-12 || wanted <= com_energy {
            return;
        }
        let scale = ((wanted - com_energy) / internal).sqrt().clamp(1.0 - 1e-3, 1.0 + 1e-3);
        c.root_vel = com_vel + scale * (c.root_vel - com_vel);
        c.root_omega *= scale;
        for r in &mut c.joint_rates {
            *r *= scale;
        }
        self.refresh(c);
    }

    fn check_divergence(&self, s: &SimState) -> Result<()> {
        for (ci, c) in s.characters.iter().enumerate() {
            for b in &c.bodies {
                let vals = [b.pos.x, b.pos.y, b.angle, b.vel.x, b.vel.y, b.omega];
                if vals.iter().any(|v| !v.is_finite()) || b.pos.abs().max() > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence(format!("character {ci} left the valid state range")));
                }
            }
        }
        for p in &s.projectiles {
            if !(p.pos.x.is_finite() && p.pos.y.is_finite()) || p.pos.abs().max() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence("projectile left the valid state range".into()));
            }
        }
        Ok(())
    }

    /// Row mapping global velocities to the relative velocity of body `a`
    /// with respect to body `b` at the contact point, projected on `dir`.
    fn contact_row(&self, s: &SimState, ct: &ContactPoint, dir: Vec2, char_dof: usize, proj_offset: usize) -> SparseRow {
        let mut row = SparseRow::default();
        for (body, sign) in [(ct.a, 1.0), (ct.b, -1.0)] {
            match body {
                BodyRef::Ground => {}
                BodyRef::Body { character, body } => {
                    let c = &s.characters[character];
                    for col in self.point_jacobian(c, body, ct.position) {
                        row.push(character * char_dof + col.dof, sign * dir.dot(&col.col));
                    }
                }
                BodyRef::Projectile(p) => {
                    row.push(proj_offset + 2 * p, sign * dir.x);
                    row.push(proj_offset + 2 * p + 1, sign * dir.y);
                }
            }
        }
        row
    }
}

fn momentum_of(model: &CharacterModel, c: &CharacterState) -> Vec2 {
    c.bodies.iter().zip(&model.bodies).map(|(b, spec)| spec.mass * b.vel).sum()
}

fn kinetic_energy_of(model: &CharacterModel, c: &CharacterState) -> f64 {
    c.bodies
        .iter()
        .zip(&model.bodies)
        .map(|(b, spec)| 0.5 * spec.mass * b.vel.norm_squared() + 0.5 * spec.inertia * b.omega * b.omega)
        .sum()
}

#[derive(Debug, Default, Clone)]
struct SparseRow {
    entries: Vec<(usize, f64)>,
}

impl SparseRow {
    fn push(&mut self, i: usize, v: f64) {
        self.entries.push((i, v));
    }

    fn dot(&self, x: &DVector<f64>) -> f64 {
        self.entries.iter().map(|&(i, v)| v * x[i]).sum()
    }

    fn add_scaled_to(&self, y: &mut DVector<f64>, s: f64) {
        for &(i, v) in &self.entries {
            y[i] += s * v;
        }
    }

    fn add_outer_to(&self, a: &mut DMatrix<f64>, s: f64) {
        for &(i, vi) in &self.entries {
            for &(k, vk) in &self.entries {
                a[(i, k)] += s * vi * vk;
            }
        }
    }
}

fn solve_spd(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Divergence("singular dynamics system".into())),
    }
}

#[cfg(test)]
mod tests;
