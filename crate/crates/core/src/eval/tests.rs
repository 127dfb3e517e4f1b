use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::{input_dim, RewardBreakdown};
use crate::motion::{generate_reference_scenario, Scenario};
use crate::physics::{CharacterModel, SimConfig};
use crate::policy::PolicyConfig;

fn record(errors: [f64; 2], terminated: bool) -> StepRecord {
    StepRecord {
        time: 0.0,
        frame: 0,
        rewards: vec![RewardBreakdown::from_terms([1.0; 6], &[0.3, 0.2, 0.1, 0.1, 0.2, 0.1], 0.0); 2],
        body_errors: errors.to_vec(),
        joint_errors: errors.to_vec(),
        contacts: 0,
        terminated,
    }
}

#[test]
fn success_examples() {
    assert!(episode_success(&vec![record([0.49, 0.49], false); 10], 0.5).unwrap());
    let mut rs = vec![record([0.1, 0.1], false); 10];
    rs[4] = record([0.51, 0.1], false);
    assert!(!episode_success(&rs, 0.5).unwrap());
    let perfect = vec![record([0.0, 0.0], false); 5];
    assert!(episode_success(&perfect, 0.5).unwrap());
    assert_eq!(mpjpe_mm([perfect.as_slice()]).unwrap(), 0.0);
    assert!(episode_success(&[], 0.5).is_err());
    assert!(!episode_success(&[record([0.1, 0.1], true)], 0.5).unwrap());
}

#[test]
fn mpjpe_and_episode_length_examples() {
    let rs = vec![record([0.05, 0.05], false); 7];
    assert!((mpjpe_mm([rs.as_slice(), rs.as_slice()]).unwrap() - 50.0).abs() < 1e-9);
    assert_eq!(format_mm(37.94), "37.9");
    assert_eq!(format_mm(50.0), "50.0");
    assert_eq!(mean_episode_length(&[300, 150], 30.0).unwrap(), 7.5);
    assert_eq!(mean_episode_length(&[300], 30.0).unwrap(), 10.0);
    assert!(mean_episode_length(&[], 30.0).is_err());
    assert!(mean_episode_length(&[3], 0.0).is_err());
    assert!(mpjpe_mm(std::iter::empty::<&[StepRecord]>()).is_err());
}

#[test]
fn perturbation_parsing() {
    assert_eq!("none".parse::<Perturbation>().unwrap(), Perturbation::NONE);
    let p: Perturbation = "object:7".parse().unwrap();
    assert_eq!(p.config().masses, vec![7.0]);
    assert_eq!("noise:0.3".parse::<Perturbation>().unwrap().config().noise_scale, 0.3);
    assert!("wind:2".parse::<Perturbation>().is_err());
    assert!("noise:x".parse::<Perturbation>().is_err());
}

fn setup() -> (World, MotionClip, PolicyState) {
    let world = World::new(CharacterModel::planar_humanoid(), SimConfig::default()).unwrap();
    let clip = generate_reference_scenario(&world, Scenario::HighFive, 1.5, 2).unwrap().clip;
    let cfg = PolicyConfig {
        hidden: vec![16, 16],
        ..PolicyConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = PolicyState::new(cfg, input_dim(world.body_count(), world.joint_count()), world.joint_count(), &mut rng).unwrap();
    (world, clip, policy)
}

#[test]
fn sweeps_are_tagged_and_deterministic() {
    let (world, clip, policy) = setup();
    let env = EnvConfig::default();
    let clips = [clip];
    let sweep = Perturbation::sweep(PerturbationMode::Object, &[3.0, 7.0, 15.0]);
    let a = run_evaluation(&world, &policy, &clips, &env, &sweep, &[1], "p", 2).unwrap();
    let b = run_evaluation(&world, &policy, &clips, &env, &sweep, &[1], "p", 1).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a.iter().map(|r| r.perturbation.level).collect::<Vec<_>>(), vec![3.0, 7.0, 15.0]);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let plain = run_evaluation(&world, &policy, &clips, &env, &[], &[1, 2], "p", 1).unwrap();
    assert_eq!(plain.len(), 1);
    assert_eq!(plain[0].perturbation, Perturbation::NONE);
    assert_eq!(plain[0].episodes, 2);
    let r = &plain[0];
    assert!((0.0..=1.0).contains(&r.success_rate) && r.mpjpe_mm >= 0.0);

    let json = serde_json::to_string(r).unwrap();
    let keys = ["\"checkpoint\"", "\"clip_set\"", "\"perturbation\"", "\"success_rate\"", "\"mpjpe_mm\"", "\"mean_episode_s\"", "\"per_clip\""];
    let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn successful_episodes_never_terminate() {
    let (world, clip, policy) = setup();
    let t = run_episode(&world, &clip, &policy, &EnvConfig::default(), 0).unwrap();
    assert_eq!(t.frames(), clip.frame_count() - 1);
    if t.succeeded(SUCCESS_THRESHOLD).unwrap() {
        assert!(!t.terminated());
        assert!(t.records.iter().all(|r| r.joint_errors.iter().all(|e| *e < 0.5)));
    }
}

proptest! {
    #[test]
    fn success_implies_bounded_average_and_no_termination(
        frames in prop::collection::vec((0.0..0.8f64, 0.0..0.8f64, prop::bool::weighted(0.05)), 1..40)
    ) {
        let rs: Vec<StepRecord> = frames.iter().map(|&(a, b, t)| record([a, b], t)).collect();
        if episode_success(&rs, SUCCESS_THRESHOLD).unwrap() {
            prop_assert!(rs.iter().all(|r| !r.terminated));
            prop_assert!(rs.iter().all(|r| r.joint_errors.iter().all(|e| *e < SUCCESS_THRESHOLD)));
        }
    }
}

#[test]
fn stored_target_replay_follows_the_clip() {
    let world = World::new(CharacterModel::planar_humanoid(), SimConfig::default()).unwrap();
    let clip = generate_reference_scenario(&world, Scenario::Push, 2.0, 7).unwrap().clip;
    let rows = replay(&world, &clip, Controller::StoredTargets, &EnvConfig::default()).unwrap();
    assert_eq!(rows.len(), clip.frame_count() - 1);
    assert!(rows.iter().all(|r| !r.terminated));
    let worst = rows
        .iter()
        .flat_map(|r| r.characters.iter().map(|c| c.body_error))
        .fold(0.0, f64::max);
    assert!(worst < 0.01, "{worst}");
    assert!(rows.iter().any(|r| r.contacts > 0 && r.contact_force > 0.0));

    let mut buf = Vec::new();
    write_replay_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 1);
    assert!(text.starts_with("time,frame,c0_root_x"));
}
