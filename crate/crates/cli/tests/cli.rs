use std::path::Path;
use std::process::Command;

use pmoe_cli::commands::eval_sweep;
use pmoe_cli::{run_from, RunConfig};
use pmoe_core::checkpoint::load_checkpoint;
use pmoe_core::env::PerturbationMode;
use pmoe_core::eval::MetricsReport;
use pmoe_core::motion::load_clip;
use pmoe_core::policy::Variant;

fn pmoe(args: &[&str]) -> i32 {
    run_from(["pmoe", "--quiet"].into_iter().chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path, clip: &Path, variant: &str, iterations: usize) -> std::path::PathBuf {
    let text = format!(
        r#"
iterations = {iterations}
checkpoint_every = 1
output_dir = "{out}"
clips = ["{clip}"]

[policy]
variant = "{variant}"
hidden = [16]
critic_hidden = [16]
gating_hidden = [8]
max_experts = 2

[env]
max_episode_steps = 20

[trainer]
episodes_per_iteration = 2
minibatch_size = 64
epochs = 1
max_iterations_per_expert = 2
workers = 1
seed = 3
"#,
        out = s(&dir.join(format!("{variant}-out"))),
        clip = s(clip),
    );
    let path = dir.join(format!("{variant}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn gen_clip(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("push.mclp");
    assert_eq!(pmoe(&["gendata", "--scenario", "push", "--duration", "2", "--seed", "7", "--out", s(&path)]), 0);
    path
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let default = RunConfig::default();
    assert_eq!(RunConfig::parse("").unwrap(), default);
    assert_eq!(RunConfig::parse(&default.to_toml()).unwrap(), default);

    let mut custom = RunConfig::default();
    custom.iterations = 17;
    custom.clips = vec!["a.mclp".into(), "b.mclp".into()];
    custom.model = Some("m.json".into());
    custom.policy.variant = Variant::SoftMoe;
    custom.trainer.temperature = 0.123456789012345;
    custom.env.perturbation.mode = PerturbationMode::Noise;
    let text = custom.to_toml();
    let back = RunConfig::parse(&text).unwrap();
    assert_eq!(back, custom);
    assert_eq!(back.to_toml(), text);

    let err = RunConfig::parse("[trainer]\nlearning_rat = 1e-3\n").unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("learning_rat"), "{err}");
    let err = RunConfig::parse("[trainer]\nepochs = 0\n").unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn gendata_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_clip(dir.path());
    let b = dir.path().join("again.mclp");
    assert_eq!(pmoe(&["gendata", "--scenario", "push", "--duration", "2", "--seed", "7", "--out", s(&b)]), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let clip = load_clip(&a).unwrap();
    assert_eq!(clip.frame_count(), 60);
    assert_eq!(pmoe(&["gendata", "--scenario", "tango", "--out", s(&b)]), 1);
    assert_eq!(pmoe(&["gendata", "--scenario", "push", "--duration=-1", "--out", s(&b)]), 1);
}

#[test]
fn progressive_training_resumes_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let clip = gen_clip(dir.path());
    let cfg = tiny_config(dir.path(), &clip, "progressive", 3);
    assert_eq!(pmoe(&["train", "--config", s(&cfg), ]), 0);
    let out = dir.path().join("progressive-out");
    let experts: Vec<_> = (0..4).filter(|k| out.join(format!("expert_{k}.pmoe")).exists()).collect();
    assert_eq!(experts, vec![0, 1], "at most max_experts transition checkpoints");
    assert_eq!(load_checkpoint(&out.join("expert_0.pmoe")).unwrap().policy.expert_count(), 1);

    let text = std::fs::read_to_string(&cfg).unwrap().replace("iterations = 3", "iterations = 5");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(pmoe(&["train", "--config", s(&cfg), "--resume", s(&out.join("final.pmoe")), ]), 0);
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("beta"));
    let iterations: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iterations, vec![1, 2, 3, 4, 5]);
    let ck = load_checkpoint(&out.join("final.pmoe")).unwrap();
    assert_eq!(ck.trainer.unwrap().iteration, 5);
    assert!(ck.policy.expert_count() <= 2);

    // A snapshot without training state cannot be resumed.
    assert_eq!(pmoe(&["train", "--config", s(&cfg), "--resume", s(&out.join("expert_0.pmoe"))]), 1);
}

#[test]
fn mlp_training_has_no_routing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let clip = gen_clip(dir.path());
    let cfg = tiny_config(dir.path(), &clip, "mlp", 2);
    assert_eq!(pmoe(&["train", "--config", s(&cfg), ]), 0);
    let out = dir.path().join("mlp-out");
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(!curves.lines().next().unwrap().contains("beta"));
    assert_eq!(curves.lines().count(), 3);
    assert!(!out.join("expert_0.pmoe").exists());
    assert_eq!(load_checkpoint(&out.join("final.pmoe")).unwrap().policy.expert_count(), 1);
}

#[test]
fn eval_sweeps_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let clip = gen_clip(dir.path());
    let cfg = tiny_config(dir.path(), &clip, "progressive", 1);
    assert_eq!(pmoe(&["train", "--config", s(&cfg), ]), 0);
    let ck = dir.path().join("progressive-out/final.pmoe");

    let report = dir.path().join("r.json");
    let read = |p: &Path| -> Vec<MetricsReport> { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    assert_eq!(pmoe(&["eval", "--checkpoint", s(&ck), "--clips", s(&clip), "--perturb", "object", "--levels", "3,7,15", "--out", s(&report)]), 0);
    let levels: Vec<f64> = read(&report).iter().map(|r| r.perturbation.level).collect();
    assert_eq!(levels, vec![3.0, 7.0, 15.0]);
    assert_eq!(pmoe(&["eval", "--checkpoint", s(&ck), "--clips", s(&clip), "--perturb", "noise", "--levels", "0.1,0.3,0.7", "--out", s(&report)]), 0);
    assert_eq!(read(&report).len(), 3);
    assert_eq!(pmoe(&["eval", "--checkpoint", s(&ck), "--clips", s(&clip), "--out", s(&report)]), 0);
    let single = read(&report);
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].perturbation.mode, PerturbationMode::None);

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(pmoe(&["replay", "--checkpoint", s(&ck), "--clip", s(&clip), "--out", s(&a)]), 0);
    assert_eq!(pmoe(&["replay", "--checkpoint", s(&ck), "--clip", s(&clip), "--out", s(&b)]), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    assert_eq!(pmoe(&["replay", "--stored-targets", "--clip", s(&clip), "--out", s(&a)]), 0);
    let text = std::fs::read_to_string(&a).unwrap();
    let frames = load_clip(&clip).unwrap().frame_count();
    // One row per control step (every frame after the first) plus a header.
    assert_eq!(text.lines().count(), frames - 1 + 1);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with("body_error"))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(cols.len(), 2);
    for line in text.lines().skip(1) {
        let v: Vec<&str> = line.split(',').collect();
        for &c in &cols {
            assert!(v[c].parse::<f64>().unwrap() < 0.01);
        }
    }
}

#[test]
fn eval_sweep_defaults() {
    let object = eval_sweep("object", &[]).unwrap();
    assert_eq!(object.iter().map(|p| p.level).collect::<Vec<_>>(), vec![3.0, 7.0, 15.0]);
    let noise = eval_sweep("noise", &[]).unwrap();
    assert_eq!(noise.iter().map(|p| p.level).collect::<Vec<_>>(), vec![0.1, 0.3, 0.7]);
    assert!(eval_sweep("none", &[]).unwrap().is_empty());
    assert_eq!(eval_sweep("none", &[1.0]).unwrap_err().exit_code(), 1);
    assert_eq!(eval_sweep("wind", &[]).unwrap_err().exit_code(), 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_pmoe");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&[]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["eval", "--checkpoint", "/nonexistent/ck.pmoe"]), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.pmoe");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = Command::new(bin).args(["replay", "--checkpoint", s(&junk), "--clip", s(&junk), "--out", "x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.pmoe"));
}

#[test]
fn sample_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.policy.max_experts, 3);
    assert!(cfg.clips.iter().all(|c| c.exists()), "{:?}", cfg.clips);
}
