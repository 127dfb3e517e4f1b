use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pmoe_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use pmoe_core::env::{input_dim, EnvConfig, PerturbationMode};
use pmoe_core::eval::{self, Controller, Perturbation};
use pmoe_core::motion::{bundled_suite, generate_reference_scenario, load_clip, save_clip, ClipLibrary, MotionClip, BUNDLED_SUITE};
use pmoe_core::physics::{SimConfig, World};
use pmoe_core::policy::{PolicyState, Variant};
use pmoe_core::trainer::{IterationMetrics, Trainer, TrainerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_model, RunConfig};
use crate::{CliError, Command, EvalArgs, GendataArgs, ReplayArgs, TrainArgs};

/// `println!` unless quiet.
macro_rules! say {
    ($quiet:expr, $($t:tt)*) => {
        if !$quiet {
            println!($($t)*);
        }
    };
}

pub fn run(cmd: Command, quiet: bool) -> Result<(), CliError> {
    match cmd {
        Command::Gendata(a) => gendata(&a, quiet),
        Command::Train(a) => train(&a, quiet),
        Command::Eval(a) => evaluate(&a, quiet),
        Command::Replay(a) => replay(&a, quiet),
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(std::io::Error::other(e).into())
}

pub fn gendata(a: &GendataArgs, quiet: bool) -> Result<(), CliError> {
    let world = World::new(load_model(a.model.as_deref())?, SimConfig::default())?;
    let jobs: Vec<_> = if a.suite {
        let dir = a.out_dir.as_ref().expect("clap requires --out-dir");
        std::fs::create_dir_all(dir)?;
        BUNDLED_SUITE
            .iter()
            .map(|&(sc, d, seed)| (sc, d, seed, dir.join(format!("{}-{seed}.mclp", sc.name()))))
            .collect()
    } else {
        let sc = a.scenario.expect("clap requires --scenario");
        if !(a.duration > 0.0) {
            return Err(CliError::Usage(format!("duration must be positive, got {}", a.duration)));
        }
        vec![(sc, a.duration, a.seed, a.out.clone().expect("clap requires --out"))]
    };
    for (sc, duration, seed, path) in jobs {
        let g = generate_reference_scenario(&world, sc, duration, seed)?;
        save_clip(&g.clip, &path)?;
        say!(quiet, 
            "{}: {} frames, {} contact events -> {}",
            g.clip.id,
            g.clip.frame_count(),
            g.contact_events,
            path.display()
        );
    }
    Ok(())
}

fn load_clips(world: &World, paths: &[PathBuf]) -> Result<Vec<MotionClip>, CliError> {
    if paths.is_empty() {
        return Ok(bundled_suite(world)?);
    }
    paths
        .iter()
        .map(|p| with_path(p, load_clip(p)))
        .collect()
}

/// Prefixes file errors with the path so messages say which file failed.
fn with_path<T>(path: &Path, r: pmoe_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        pmoe_core::Error::Io(io) => CliError::Runtime(pmoe_core::Error::Input(format!("{}: {io}", path.display()))),
        pmoe_core::Error::Config(m) => CliError::Usage(m),
        other => CliError::Runtime(pmoe_core::Error::Input(format!("{}: {other}", path.display()))),
    })
}

fn expert_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("expert_{k}.pmoe"))
}

struct CurveWriter {
    out: csv::Writer<BufWriter<File>>,
    routing: bool,
}

impl CurveWriter {
    /// Appends to an existing file when resuming, otherwise starts fresh.
    fn open(path: &Path, routing: bool, append: bool) -> Result<Self, CliError> {
        let existing = append && path.exists();
        let file = if existing {
            OpenOptions::new().append(true).open(path)?
        } else {
            File::create(path)?
        };
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        if !existing {
            out.write_record(IterationMetrics::csv_header(routing)).map_err(csv_err)?;
            out.flush()?;
        }
        Ok(Self { out, routing })
    }

    fn write(&mut self, m: &IterationMetrics) -> Result<(), CliError> {
        self.out.write_record(m.csv_row(self.routing)).map_err(csv_err)?;
        self.out.flush()?;
        Ok(())
    }
}

fn snapshot(world: &World, policy: &PolicyState, env: &EnvConfig, trainer: Option<TrainerState>) -> Checkpoint {
    Checkpoint {
        policy: policy.clone(),
        model: world.model.clone(),
        sim: world.config.clone(),
        env: env.clone(),
        trainer,
    }
}

pub fn train(a: &TrainArgs, quiet: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    // A resumed run keeps the checkpoint's model, physics, environment,
    // policy and trainer settings; the config supplies clips, output and
    // the iteration budget.
    let resumed = match &a.resume {
        Some(p) => {
            let ck = with_path(p, load_checkpoint(p))?;
            if ck.trainer.is_none() {
                return Err(CliError::Usage(format!("{} holds no training state", p.display())));
            }
            Some(ck)
        }
        None => None,
    };
    let world = match &resumed {
        Some(ck) => ck.world()?,
        None => cfg.world()?,
    };
    let library = ClipLibrary::new(load_clips(&world, &cfg.clips)?)?;
    let mut trainer = match resumed {
        Some(ck) => {
            let state = ck.trainer.expect("checked above");
            Trainer::resume(&world, library, ck.policy, ck.env, state)?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
            rng.set_stream(u64::MAX);
            let policy = PolicyState::new(
                cfg.policy.clone(),
                input_dim(world.body_count(), world.joint_count()),
                world.joint_count(),
                &mut rng,
            )?;
            Trainer::new(&world, library, policy, cfg.env.clone(), cfg.trainer.clone())?
        }
    };

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let variant = trainer.policy.variant();
    let mut curves = CurveWriter::open(&dir.join("curves.csv"), variant == Variant::Progressive, a.resume.is_some())?;
    while trainer.iteration < cfg.iterations {
        let m = trainer.train_iteration()?;
        curves.write(&m)?;
        if !quiet {
            eprintln!(
                "iter {:>5}  expert {}  track {:.4}  success {:.3}  episode {:.2}s  loss {:.4}  {:.1}s",
                m.iteration, m.active_expert, m.mean_track, m.success_rate, m.mean_episode_s, m.loss.total, m.wall_s
            );
        }
        for done in trainer.take_completed() {
            let path = expert_path(dir, done.expert);
            save_checkpoint(&snapshot(&world, &done.policy, &trainer.env, None), &path)?;
            say!(quiet, "expert {} done at iteration {} -> {}", done.expert, done.iteration, path.display());
        }
        if cfg.checkpoint_every > 0 && trainer.iteration % cfg.checkpoint_every == 0 {
            save_checkpoint(&snapshot(&world, &trainer.policy, &trainer.env, Some(trainer.state())), &dir.join("latest.pmoe"))?;
        }
    }
    if variant.is_sequential() {
        let path = expert_path(dir, trainer.policy.active);
        save_checkpoint(&snapshot(&world, &trainer.policy, &trainer.env, None), &path)?;
        say!(quiet, "expert {} at end of run -> {}", trainer.policy.active, path.display());
    }
    let path = dir.join("final.pmoe");
    save_checkpoint(&snapshot(&world, &trainer.policy, &trainer.env, Some(trainer.state())), &path)?;
    say!(quiet, "{} iterations, final checkpoint -> {}", trainer.iteration, path.display());
    Ok(())
}

/// Perturbation levels for `eval`, applying the default sweeps.
pub fn eval_sweep(perturb: &str, levels: &[f64]) -> Result<Vec<Perturbation>, CliError> {
    let mode = eval::parse_mode(perturb).map_err(|e| CliError::Usage(e.to_string()))?;
    let levels = match (mode, levels.is_empty()) {
        (PerturbationMode::None, true) => return Ok(Vec::new()),
        (PerturbationMode::None, false) => return Err(CliError::Usage("--levels needs --perturb object or noise".into())),
        (PerturbationMode::Object, true) => vec![3.0, 7.0, 15.0],
        (PerturbationMode::Noise, true) => vec![0.1, 0.3, 0.7],
        (_, false) => levels.to_vec(),
    };
    if levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(CliError::Usage("levels must be finite and non-negative".into()));
    }
    Ok(Perturbation::sweep(mode, &levels))
}

pub fn evaluate(a: &EvalArgs, quiet: bool) -> Result<(), CliError> {
    let sweep = eval_sweep(&a.perturb, &a.levels)?;
    if a.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let ck = with_path(&a.checkpoint, load_checkpoint(&a.checkpoint))?;
    let world = ck.world()?;
    let clips = load_clips(&world, &a.clips)?;
    let name = a.checkpoint.display().to_string();
    let reports = eval::run_evaluation(&world, &ck.policy, &clips, &ck.env, &sweep, &a.seeds, &name, a.workers)?;
    for r in &reports {
        say!(quiet, "{}", r.headline());
    }
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&reports).map_err(pmoe_core::Error::from)?;
        std::fs::write(out, json + "\n")?;
    }
    Ok(())
}

pub fn replay(a: &ReplayArgs, quiet: bool) -> Result<(), CliError> {
    let clip = with_path(&a.clip, load_clip(&a.clip))?;
    let rows = match &a.checkpoint {
        Some(p) => {
            let ck = with_path(p, load_checkpoint(p))?;
            let world = ck.world()?;
            eval::replay(&world, &clip, Controller::Policy(&ck.policy), &ck.env)?
        }
        None => {
            let world = World::new(load_model(a.model.as_deref())?, SimConfig::default())?;
            eval::replay(&world, &clip, Controller::StoredTargets, &EnvConfig::default())?
        }
    };
    eval::write_replay_csv(&rows, BufWriter::new(File::create(&a.out)?))?;
    let worst = rows
        .iter()
        .flat_map(|r| r.characters.iter().map(|c| c.body_error))
        .fold(0.0, f64::max);
    let terminated = rows.last().is_some_and(|r| r.terminated);
    say!(quiet, 
        "{}: {} frames, max body error {:.4} m{} -> {}",
        clip.id,
        rows.len(),
        worst,
        if terminated { ", terminated" } else { "" },
        a.out.display()
    );
    Ok(())
}
