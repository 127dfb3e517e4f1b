use std::f64::consts::{FRAC_PI_2, PI};

use super::*;

fn world() -> World {
    World::new(CharacterModel::planar_humanoid(), SimConfig::default()).unwrap()
}

fn stance() -> Vec<f64> {
    let mut q = vec![0.0; 11];
    q[joint_index::L_HIP] = 0.25;
    q[joint_index::R_HIP] = -0.25;
    q[joint_index::L_KNEE] = -0.05;
    q[joint_index::R_KNEE] = -0.05;
    q
}

fn two_characters(w: &World, gap: f64) -> SimState {
    let mut a = w.character_at_rest(1.0, Vec2::new(-gap / 2.0, 1.0), 0.0, &stance());
    let own = stance();
    let mirrored: Vec<f64> = own.iter().map(|v| -v).collect();
    let mut b = w.character_at_rest(-1.0, Vec2::new(gap / 2.0, 1.0), 0.0, &mirrored);
    w.place_on_ground(&mut a, 0.0);
    w.place_on_ground(&mut b, 0.0);
    SimState::new(vec![a, b])
}

fn free_world() -> World {
    let cfg = SimConfig {
        gravity: 0.0,
        ..SimConfig::default()
    };
    World::new(CharacterModel::planar_humanoid(), cfg).unwrap()
}

#[test]
fn pd_torque_cases() {
    let mut j = CharacterModel::planar_humanoid().joints[0].clone();
    j.kp = 10.0;
    j.kd = 1.0;
    j.torque_limit = 50.0;
    assert_eq!(pd_torque(&j, 0.3, 0.3, 0.0).unwrap(), 0.0);
    assert!((pd_torque(&j, 0.1, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(pd_torque(&j, 100.0, 0.0, 0.0).unwrap(), 50.0);
    assert_eq!(pd_torque(&j, -100.0, 0.0, 0.0).unwrap(), -50.0);
    assert!(pd_torque(&j, f64::NAN, 0.0, 0.0).is_err());
}

#[test]
fn joint_lookup_error() {
    let w = world();
    let s = two_characters(&w, 10.0);
    assert!(matches!(w.joint_pd_torque(&s, 0, 99, 0.0), Err(Error::Lookup { .. })));
    assert!(matches!(w.joint_pd_torque(&s, 5, 0, 0.0), Err(Error::Lookup { .. })));
}

#[test]
fn far_apart_characters_do_not_touch_each_other() {
    let w = world();
    let s = two_characters(&w, 10.0);
    let contacts = detect_contacts(&w, &s);
    assert!(contacts.iter().all(|c| !c.is_inter_character()));
}

fn projectile(x: f64, y: f64, r: f64) -> Projectile {
    Projectile {
        pos: Vec2::new(x, y),
        vel: Vec2::zeros(),
        mass: 1.0,
        radius: r,
        age: 0.0,
    }
}

#[test]
fn projectile_against_head_depth() {
    let w = world();
    let mut s = two_characters(&w, 40.0);
    let head = s.characters[0].bodies[body_index::HEAD];
    let head_r = w.model.bodies[body_index::HEAD].radius;
    s.projectiles = vec![projectile(head.pos.x + 0.15, head.pos.y, 0.1)];
    let contacts = detect_contacts(&w, &s);
    let hits: Vec<_> = contacts
        .iter()
        .filter(|c| c.a == BodyRef::Projectile(0) && c.b == BodyRef::Body { character: 0, body: body_index::HEAD })
        .collect();
    assert_eq!(hits.len(), 1);
    assert!((hits[0].depth - (0.1 + head_r - 0.15)).abs() < 1e-12, "{}", hits[0].depth);
    assert!((hits[0].normal.norm() - 1.0).abs() < 1e-9);
}

fn ball_model() -> CharacterModel {
    CharacterModel {
        name: "ball".into(),
        root: 0,
        bodies: vec![BodySpec {
            name: "ball".into(),
            mass: 2.0,
            inertia: 0.02,
            half_length: 0.0,
            radius: 0.1,
        }],
        joints: vec![],
    }
}

#[test]
fn two_circles_overlap_by_five_centimetres() {
    let wb = World::new(ball_model(), SimConfig::default()).unwrap();
    let ball = wb.character_at_rest(1.0, Vec2::new(0.15, 5.0), 0.0, &[]);
    let mut state = SimState::new(vec![ball]);
    state.projectiles.push(projectile(0.0, 5.0, 0.1));
    let contacts = detect_contacts(&wb, &state);
    assert_eq!(contacts.len(), 1);
    assert!((contacts[0].depth - 0.05).abs() < 1e-12);
    assert_eq!(contacts[0].normal, Vec2::new(-1.0, 0.0));
}

#[test]
fn resting_body_gets_upward_ground_normal() {
    let w = world();
    let mut s = two_characters(&w, 10.0);
    w.place_on_ground(&mut s.characters[0], 0.01);
    let contacts = detect_contacts(&w, &s);
    let ground: Vec<_> = contacts.iter().filter(|c| c.involves_ground()).collect();
    assert!(!ground.is_empty());
    for c in ground {
        assert_eq!(c.normal, Vec2::new(0.0, 1.0));
    }
}

#[test]
fn normal_force_from_depth_and_third_law() {
    let w = world();
    let mut s = two_characters(&w, 10.0);
    for c in &mut s.characters {
        c.root_vel = Vec2::zeros();
    }
    let mut ct = vec![ContactPoint {
        a: BodyRef::Body { character: 0, body: body_index::L_SHIN },
        b: BodyRef::Ground,
        position: s.characters[0].bodies[body_index::L_SHIN].pos,
        normal: Vec2::new(0.0, 1.0),
        depth: 0.01,
        normal_force: 0.0,
        tangent_force: 0.0,
        force_on_a: Vec2::zeros(),
        force_on_b: Vec2::zeros(),
    }];
    let acc = w.contact_forces(&s, &mut ct);
    assert!((ct[0].normal_force - 100.0).abs() < 1e-9);
    assert!((ct[0].force_on_a + ct[0].force_on_b).norm() < 1e-12);
    assert!((acc.ground + acc.bodies[0][body_index::L_SHIN].0).norm() < 1e-12);

    // Fast separation: damping exceeds the spring term, force floors at zero.
    s.characters[0].root_vel = Vec2::new(0.0, 5.0);
    w.refresh(&mut s.characters[0]);
    w.contact_forces(&s, &mut ct);
    assert_eq!(ct[0].normal_force, 0.0);
}

#[test]
fn free_body_gravity_single_substep() {
    let model = ball_model();
    let cfg = SimConfig {
        timestep: 0.01,
        substeps: 1,
        control_rate: 100.0,
        ..SimConfig::default()
    };
    let w = World::new(model, cfg).unwrap();
    let ball = w.character_at_rest(1.0, Vec2::new(0.0, 10.0), 0.0, &[]);
    let s = SimState::new(vec![ball]);
    let next = w.step(&s, &Actuation::Torques(vec![])).unwrap();
    assert!((next.characters[0].root_vel.y + 0.0981).abs() < 1e-12);
    assert!((next.characters[0].root_pos.y - (10.0 - 0.000981)).abs() < 1e-12);
}

#[test]
fn step_is_bit_deterministic() {
    let w = world();
    let s = two_characters(&w, 0.9);
    let targets: Vec<f64> = (0..22).map(|i| 0.1 * (i as f64).sin()).collect();
    let act = Actuation::PdTargets(targets);
    let a = w.step(&s, &act).unwrap();
    let b = w.step(&s, &act).unwrap();
    assert_eq!(a, b);
}

#[test]
fn step_rejects_bad_actuation() {
    let w = world();
    let s = two_characters(&w, 3.0);
    assert!(matches!(w.step(&s, &Actuation::Torques(vec![0.0; 3])), Err(Error::Shape(_))));
    let mut t = vec![0.0; 22];
    t[4] = f64::INFINITY;
    assert!(matches!(w.step(&s, &Actuation::Torques(t)), Err(Error::Numeric(_))));
}

#[test]
fn divergence_is_reported() {
    let w = free_world();
    let mut s = two_characters(&w, 3.0);
    s.characters[0].root_vel = Vec2::new(1e9, 0.0);
    w.refresh(&mut s.characters[0]);
    assert!(matches!(w.step(&s, &Actuation::Torques(vec![0.0; 22])), Err(Error::Divergence(_))));
}

fn spinning_free_character(w: &World) -> SimState {
    let mut s = two_characters(w, 40.0);
    s.characters.truncate(1);
    let c = &mut s.characters[0];
    c.root_pos.y = 50.0;
    c.root_vel = Vec2::new(0.4, -0.2);
    c.root_omega = 0.3;
    for (j, r) in c.joint_rates.iter_mut().enumerate() {
        *r = 0.2 * ((j as f64) * 1.3).sin();
    }
    // stay clear of joint limits
    for (j, q) in c.joint_angles.iter_mut().enumerate() {
        *q = 0.1 * ((j as f64) * 0.7).cos();
    }
    c.joint_angles[joint_index::L_ELBOW] = 0.8;
    c.joint_angles[joint_index::R_ELBOW] = 0.8;
    c.joint_angles[joint_index::L_KNEE] = -0.8;
    c.joint_angles[joint_index::R_KNEE] = -0.8;
    w.refresh(c);
    s
}

#[test]
fn linear_momentum_conserved_without_external_forces() {
    let w = free_world();
    let mut s = spinning_free_character(&w);
    for _ in 0..30 {
        let p0 = w.linear_momentum(&s);
        s = w.step(&s, &Actuation::Torques(vec![0.0; 11])).unwrap();
        let p1 = w.linear_momentum(&s);
        assert!((p1 - p0).norm() <= 1e-6 * p0.norm().max(1.0), "{p0} -> {p1}");
    }
}

#[test]
fn kinetic_energy_drift_is_small() {
    let w = free_world();
    let mut s = spinning_free_character(&w);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let e0 = w.kinetic_energy(&s);
        s = w.step(&s, &Actuation::Torques(vec![0.0; 11])).unwrap();
        let e1 = w.kinetic_energy(&s);
        worst = worst.max((e1 - e0).abs() / e0);
    }
    assert!(worst <= 1e-6, "relative drift {worst}");
}

#[test]
fn mass_matrix_is_symmetric_positive_definite() {
    let w = world();
    let s = spinning_free_character(&w);
    let (m, _) = w.mass_matrix_and_bias(&s.characters[0]);
    assert!((m.clone() - m.transpose()).abs().max() < 1e-12);
    assert!(m.cholesky().is_some());
}

#[test]
fn kinetic_energy_matches_mass_matrix_quadratic_form() {
    let w = world();
    let s = spinning_free_character(&w);
    let c = &s.characters[0];
    let (m, _) = w.mass_matrix_and_bias(c);
    let mut qd = vec![c.root_vel.x, c.root_vel.y, c.root_omega];
    qd.extend(&c.joint_rates);
    let qd = DVector::from_vec(qd);
    let quad = 0.5 * (qd.transpose() * &m * &qd)[(0, 0)];
    assert!((quad - w.kinetic_energy(&s)).abs() < 1e-10 * quad);
}

#[test]
fn standing_pair_stays_upright_under_pd_hold() {
    let w = world();
    let mut s = two_characters(&w, 1.6);
    let mut targets = Vec::new();
    for c in &s.characters {
        targets.extend(c.joint_angles.iter().copied());
    }
    let start: Vec<f64> = s.characters.iter().map(|c| c.root_pos.y).collect();
    for _ in 0..150 {
        s = w.step(&s, &Actuation::PdTargets(targets.clone())).unwrap();
    }
    for (c, y0) in s.characters.iter().zip(start) {
        assert!((c.root_pos.y - y0).abs() < 0.06, "pelvis moved from {y0} to {}", c.root_pos.y);
        assert!(c.root_angle.abs() < 0.15, "root tilted {}", c.root_angle);
        for (j, q) in c.joint_angles.iter().enumerate() {
            let (lo, hi) = w.joint_limits(j, c.facing);
            assert!(*q >= lo && *q <= hi);
        }
    }
}

#[test]
fn joint_limits_hold_after_violent_torques() {
    let w = world();
    let mut s = two_characters(&w, 3.0);
    let torques: Vec<f64> = (0..22).map(|i| if i % 2 == 0 { 400.0 } else { -400.0 }).collect();
    for _ in 0..10 {
        s = w.step(&s, &Actuation::Torques(torques.clone())).unwrap();
        for c in &s.characters {
            for (j, q) in c.joint_angles.iter().enumerate() {
                let (lo, hi) = w.joint_limits(j, c.facing);
                assert!(*q >= lo && *q <= hi);
            }
        }
    }
}

#[test]
fn local_frame_examples() {
    let w = world();
    let mut s = two_characters(&w, 3.0);
    let c = &mut s.characters[0];
    c.root_pos = Vec2::zeros();
    c.root_angle = 0.0;
    let f = local_frame(&s, 0).unwrap();
    assert_eq!(f.point(Vec2::new(1.5, -2.0)), Vec2::new(1.5, -2.0));

    s.characters[0].root_pos = Vec2::new(2.0, 0.0);
    let f = local_frame(&s, 0).unwrap();
    assert_eq!(f.point(Vec2::new(3.0, 0.0)), Vec2::new(1.0, 0.0));

    s.characters[0].root_angle = FRAC_PI_2;
    let f = local_frame(&s, 0).unwrap();
    let p = f.point(Vec2::new(3.0, 0.0));
    assert!((p - Vec2::new(0.0, -1.0)).norm() < 1e-12);

    assert!(local_frame(&s, 7).is_err());
}

#[test]
fn wrap_angle_range() {
    assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
    assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
    assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    assert!((wrap_angle(-6.0) - (2.0 * PI - 6.0)).abs() < 1e-12);
}

#[test]
fn mirrored_character_is_a_reflection() {
    let w = world();
    let q = stance();
    let a = w.character_at_rest(1.0, Vec2::new(0.0, 1.0), 0.0, &q);
    let mirrored: Vec<f64> = q.iter().map(|v| -v).collect();
    let b = w.character_at_rest(-1.0, Vec2::new(0.0, 1.0), 0.0, &mirrored);
    for (ba, bb) in a.bodies.iter().zip(&b.bodies) {
        assert!((ba.pos.x + bb.pos.x).abs() < 1e-12);
        assert!((ba.pos.y - bb.pos.y).abs() < 1e-12);
    }
}
