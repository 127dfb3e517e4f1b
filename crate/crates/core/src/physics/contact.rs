//! Collision detection between capsules, circles and the ground half-plane.

use super::{perp, SimState, Vec2, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyRef {
    Ground,
    Body { character: usize, body: usize },
    Projectile(usize),
}

/// One overlapping shape pair. The normal points from `b` towards `a`, so the
/// normal force on `a` is `normal_force * normal`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub a: BodyRef,
    pub b: BodyRef,
    pub position: Vec2,
    pub normal: Vec2,
    /// m, ≥ 0
    pub depth: f64,
    /// N, ≥ 0
    pub normal_force: f64,
    /// N along `perp(normal)`, acting on `a`.
    pub tangent_force: f64,
    pub force_on_a: Vec2,
    pub force_on_b: Vec2,
}

impl ContactPoint {
    fn new(a: BodyRef, b: BodyRef, position: Vec2, normal: Vec2, depth: f64) -> Self {
        Self {
            a,
            b,
            position,
            normal,
            depth,
            normal_force: 0.0,
            tangent_force: 0.0,
            force_on_a: Vec2::zeros(),
            force_on_b: Vec2::zeros(),
        }
    }

    pub(crate) fn set_forces(&mut self, normal_force: f64, tangent_force: f64) {
        self.normal_force = normal_force;
        self.tangent_force = tangent_force;
        self.force_on_a = normal_force * self.normal + tangent_force * perp(self.normal);
        self.force_on_b = -self.force_on_a;
    }

    pub fn is_inter_character(&self) -> bool {
        matches!(
            (self.a, self.b),
            (BodyRef::Body { character: ca, .. }, BodyRef::Body { character: cb, .. }) if ca != cb
        )
    }

    pub fn involves_ground(&self) -> bool {
        self.a == BodyRef::Ground || self.b == BodyRef::Ground
    }
}

/// Closest points between segments `p1q1` and `p2q2`.
fn closest_segment_points(p1: Vec2, q1: Vec2, p2: Vec2, q2: Vec2) -> (Vec2, Vec2) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-14;
    let (s, t);
    if a <= eps && e <= eps {
        return (p1, p2);
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + s * d1, p2 + t * d2)
}

struct Shape {
    r: BodyRef,
    p0: Vec2,
    p1: Vec2,
    radius: f64,
}

impl Shape {
    fn center(&self) -> Vec2 {
        0.5 * (self.p0 + self.p1)
    }

    fn bound(&self) -> f64 {
        0.5 * (self.p1 - self.p0).norm() + self.radius
    }
}

fn shape_pair(a: &Shape, b: &Shape) -> Option<ContactPoint> {
    let reach = a.bound() + b.bound();
    if (a.center() - b.center()).norm_squared() > reach * reach {
        return None;
    }
    let (ca, cb) = closest_segment_points(a.p0, a.p1, b.p0, b.p1);
    let delta = ca - cb;
    let dist = delta.norm();
    let depth = a.radius + b.radius - dist;
    if depth <= 0.0 {
        return None;
    }
    let normal = if dist > 1e-12 {
        delta / dist
    } else {
        let d = a.center() - b.center();
        if d.norm() > 1e-12 {
            d.normalize()
        } else {
            Vec2::new(0.0, 1.0)
        }
    };
    // Midway between the two surface points.
    let sa = ca - a.radius * normal;
    let sb = cb + b.radius * normal;
    Some(ContactPoint::new(a.r, b.r, 0.5 * (sa + sb), normal, depth))
}

fn ground_contact(s: &Shape) -> Option<ContactPoint> {
    let low = if (s.p0.y - s.p1.y).abs() <= 1e-12 {
        s.center()
    } else if s.p0.y < s.p1.y {
        s.p0
    } else {
        s.p1
    };
    let depth = s.radius - low.y;
    if depth <= 0.0 {
        return None;
    }
    let position = Vec2::new(low.x, low.y - s.radius);
    Some(ContactPoint::new(s.r, BodyRef::Ground, position, Vec2::new(0.0, 1.0), depth))
}

/// All overlapping pairs: character bodies and projectiles against the ground,
/// bodies of different characters against each other, and projectiles
/// against character bodies. Self-collision is not modelled.
pub fn detect_contacts(world: &World, state: &SimState) -> Vec<ContactPoint> {
    let mut per_char: Vec<Vec<Shape>> = Vec::with_capacity(state.characters.len());
    for (ci, c) in state.characters.iter().enumerate() {
        per_char.push(
            c.bodies
                .iter()
                .zip(&world.model.bodies)
                .enumerate()
                .map(|(bi, (b, spec))| {
                    let (p0, p1) = world.capsule_segment(b, spec);
                    Shape {
                        r: BodyRef::Body { character: ci, body: bi },
                        p0,
                        p1,
                        radius: spec.radius,
                    }
                })
                .collect(),
        );
    }
    let projectiles: Vec<Shape> = state
        .projectiles
        .iter()
        .enumerate()
        .map(|(i, p)| Shape {
            r: BodyRef::Projectile(i),
            p0: p.pos,
            p1: p.pos,
            radius: p.radius,
        })
        .collect();

    let mut out = Vec::new();
    for shapes in &per_char {
        out.extend(shapes.iter().filter_map(ground_contact));
    }
    for i in 0..per_char.len() {
        for k in i + 1..per_char.len() {
            for a in &per_char[i] {
                for b in &per_char[k] {
                    out.extend(shape_pair(a, b));
                }
            }
        }
    }
    for p in &projectiles {
        out.extend(ground_contact(p));
        for shapes in &per_char {
            for b in shapes {
                out.extend(shape_pair(p, b));
            }
        }
    }
    out
}

/// Per-body force/torque accumulators produced by [`World::contact_forces`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContactForces {
    /// `[character][body] = (force, torque about the body's center)`
    pub bodies: Vec<Vec<(Vec2, f64)>>,
    pub projectiles: Vec<Vec2>,
    pub ground: Vec2,
}

impl World {
    fn body_velocity_at(&self, state: &SimState, r: BodyRef, point: Vec2) -> Vec2 {
        match r {
            BodyRef::Ground => Vec2::zeros(),
            BodyRef::Body { character, body } => state.characters[character].bodies[body].point_velocity(point),
            BodyRef::Projectile(p) => state.projectiles[p].vel,
        }
    }

    /// Explicit penalty forces for `contacts` at the current velocities:
    /// `N = max(0, k·depth + c·closing)` and a tangential damper clamped to
    /// `μN`. Fills the force fields of each contact and returns per-body
    /// accumulators. The pair forces cancel exactly.
    pub fn contact_forces(&self, state: &SimState, contacts: &mut [ContactPoint]) -> ContactForces {
        let cfg = &self.config;
        let mut acc = ContactForces {
            bodies: state
                .characters
                .iter()
                .map(|c| vec![(Vec2::zeros(), 0.0); c.bodies.len()])
                .collect(),
            projectiles: vec![Vec2::zeros(); state.projectiles.len()],
            ground: Vec2::zeros(),
        };
        for ct in contacts.iter_mut() {
            let rel = self.body_velocity_at(state, ct.a, ct.position) - self.body_velocity_at(state, ct.b, ct.position);
            let closing = -rel.dot(&ct.normal);
            let nf = (cfg.contact_stiffness * ct.depth + cfg.contact_damping * closing).max(0.0);
            let slip = rel.dot(&perp(ct.normal));
            let bound = cfg.friction * nf;
            let tf = (-cfg.friction_damping * slip).clamp(-bound, bound);
            ct.set_forces(nf, tf);
            for (r, f) in [(ct.a, ct.force_on_a), (ct.b, ct.force_on_b)] {
                match r {
                    BodyRef::Ground => acc.ground += f,
                    BodyRef::Body { character, body } => {
                        let center = state.characters[character].bodies[body].pos;
                        let arm = ct.position - center;
                        let slot = &mut acc.bodies[character][body];
                        slot.0 += f;
                        slot.1 += arm.x * f.y - arm.y * f.x;
                    }
                    BodyRef::Projectile(p) => acc.projectiles[p] += f,
                }
            }
        }
        acc
    }
}
