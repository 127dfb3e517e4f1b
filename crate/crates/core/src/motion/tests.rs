use super::*;
use crate::physics::{Actuation, CharacterModel, SimConfig};

fn world() -> World {
    World::new(CharacterModel::planar_humanoid(), SimConfig::default()).unwrap()
}

/// One character with a single body and no joints, following the given
/// positions and headings.
fn point_clip(positions: &[(f64, f64)], headings: &[f64]) -> MotionClip {
    let frames = positions
        .iter()
        .zip(headings)
        .map(|(&(x, y), &h)| {
            vec![CharacterFrame {
                root_pos: Vec2::new(x, y),
                root_angle: h,
                joint_angles: vec![],
                joint_rates: vec![],
                body_pos: vec![Vec2::new(x, y)],
                body_angle: vec![h],
                body_vel: vec![Vec2::new(9.0, 9.0)],
                body_omega: vec![9.0],
            }]
        })
        .collect();
    MotionClip {
        id: "point".into(),
        fps: 30.0,
        facing: vec![1.0],
        frames,
        actions: None,
    }
}

#[test]
fn resample_constant_positions_gives_zero_velocity() {
    let clip = point_clip(&[(1.0, 2.0); 4], &[0.3; 4]);
    let r = resample_velocities(&clip).unwrap();
    for f in &r.frames {
        assert_eq!(f[0].body_vel[0], Vec2::zeros());
        assert_eq!(f[0].body_omega[0], 0.0);
    }
}

#[test]
fn resample_linear_ramp() {
    let pos: Vec<(f64, f64)> = (0..5).map(|i| (0.1 * i as f64, 0.0)).collect();
    let r = resample_velocities(&point_clip(&pos, &[0.0; 5])).unwrap();
    for f in &r.frames {
        assert!((f[0].body_vel[0].x - 3.0).abs() < 1e-9);
    }
}

#[test]
fn resample_wraps_headings() {
    let r = resample_velocities(&point_clip(&[(0.0, 0.0); 2], &[3.1, -3.1])).unwrap();
    let expected = (2.0 * std::f64::consts::PI - 6.2) * 30.0;
    assert!((r.frames[0][0].body_omega[0] - expected).abs() < 1e-9);
    assert!((expected - 2.496).abs() < 1e-3);
}

#[test]
fn resample_rejects_single_frame() {
    assert!(matches!(resample_velocities(&point_clip(&[(0.0, 0.0)], &[0.0])), Err(Error::Input(_))));
}

#[test]
fn resampled_interior_is_central_difference() {
    let pos: Vec<(f64, f64)> = (0..6).map(|i| ((i as f64).powi(2) * 0.01, (i as f64).sin())).collect();
    let r = resample_velocities(&point_clip(&pos, &[0.0; 6])).unwrap();
    for t in 1..5 {
        let (a, b) = (pos[t - 1], pos[t + 1]);
        let v = r.frames[t][0].body_vel[0];
        assert!((v.x - (b.0 - a.0) * 15.0).abs() < 1e-9);
        assert!((v.y - (b.1 - a.1) * 15.0).abs() < 1e-9);
    }
}

#[test]
fn push_clip_has_contact_and_frame_count() {
    let w = world();
    let g = generate_reference_scenario(&w, Scenario::Push, 4.0, 7).unwrap();
    assert_eq!(g.clip.frame_count(), 120);
    assert_eq!(g.clip.fps, 30.0);
    assert!(g.contact_steps >= 1, "no inter-character contact");
    assert!(g.contact_events >= 1);
}

#[test]
fn generation_is_deterministic_to_the_byte() {
    let w = world();
    let a = generate_reference_scenario(&w, Scenario::Boxing, 2.0, 3).unwrap();
    let b = generate_reference_scenario(&w, Scenario::Boxing, 2.0, 3).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    write_clip(&a.clip, &mut ba).unwrap();
    write_clip(&b.clip, &mut bb).unwrap();
    assert_eq!(ba, bb);
}

#[test]
fn generation_rejects_short_durations_and_unknown_names() {
    let w = world();
    assert!(generate_reference_scenario(&w, Scenario::Push, 0.5, 1).is_err());
    assert!("wrestle".parse::<Scenario>().is_err());
    assert_eq!("box".parse::<Scenario>().unwrap(), Scenario::Boxing);
}

#[test]
fn clip_round_trip_is_bit_exact() {
    let w = world();
    let clip = generate_reference_scenario(&w, Scenario::HighFive, 1.5, 9).unwrap().clip;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.mclp");
    save_clip(&clip, &path).unwrap();
    let back = load_clip(&path).unwrap();
    assert_eq!(back, clip);
}

#[test]
fn clip_format_errors() {
    let w = world();
    let clip = generate_reference_scenario(&w, Scenario::Spin, 1.0, 1).unwrap().clip;
    let mut bytes = Vec::new();
    write_clip(&clip, &mut bytes).unwrap();

    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(read_clip(wrong_version.as_slice()), Err(Error::Format(_))));

    let truncated = &bytes[..bytes.len() - 5];
    assert!(matches!(read_clip(truncated), Err(Error::Corrupt(_))));
    assert!(matches!(read_clip(&bytes[..10]), Err(Error::Corrupt(_))));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(read_clip(magic.as_slice()), Err(Error::Format(_))));
}

#[test]
fn stored_targets_replay_the_clip_exactly() {
    let w = world();
    let clip = generate_reference_scenario(&w, Scenario::Grapple, 2.0, 11).unwrap().clip;
    let actions = clip.actions.as_ref().unwrap();
    let mut s = clip.sim_state(&w, 0).unwrap();
    for (t, a) in actions.iter().enumerate() {
        s = w.step(&s, &Actuation::PdTargets(a.clone())).unwrap();
        for (c, cf) in s.characters.iter().zip(&clip.frames[t + 1]) {
            assert_eq!(&CharacterFrame::from_state(c), cf, "frame {}", t + 1);
        }
    }
}

#[test]
fn library_statistics() {
    let w = world();
    let clip = generate_reference_scenario(&w, Scenario::Spin, 2.0, 1).unwrap().clip;
    let mut lib = ClipLibrary::new(vec![clip.clone(), clip]).unwrap();
    assert_eq!(lib.stats[0].duration, 2.0);
    let o = |r: f64, s: bool| EpisodeOutcome { mean_reward: r, success: s };
    lib.record(0, &[o(0.5, true)]).unwrap();
    assert_eq!(lib.stats[0].mean_reward, 0.5);
    lib.record(0, &[o(0.9, false), o(0.1, true)]).unwrap();
    lib.record(1, &[o(0.5, true)]).unwrap();
    lib.record(1, &[o(0.1, true), o(0.9, false)]).unwrap();
    assert_eq!(lib.stats[0].mean_reward, lib.stats[1].mean_reward);
    assert_eq!(lib.stats[0].attempts, 3);
    assert_eq!(lib.stats[0].successes, 2);
    assert!(lib.record(5, &[o(0.1, true)]).is_err());
    assert!(ClipLibrary::new(vec![]).is_err());
}
