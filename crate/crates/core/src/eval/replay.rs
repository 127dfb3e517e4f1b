use std::io::Write;

use crate::env::{reference_residuals, EnvConfig, TrackingEnv};
use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::physics::World;
use crate::policy::PolicyState;

/// What drives a replay.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Deterministic policy means.
    Policy(&'a PolicyState),
    /// The PD targets stored with a generated clip.
    StoredTargets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterRow {
    /// `(x, y, angle)`
    pub root: [f64; 3],
    pub target_root: [f64; 3],
    pub body_error: f64,
    pub joint_error: f64,
    pub track: f64,
}

/// One control step of a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub time: f64,
    pub frame: usize,
    pub characters: Vec<CharacterRow>,
    pub contacts: usize,
    /// Sum of inter-character normal contact forces over the step's
    /// substeps (N).
    pub contact_force: f64,
    pub terminated: bool,
}

/// Rolls a clip out from its first frame to its end (or a termination).
pub fn replay(world: &World, clip: &MotionClip, controller: Controller<'_>, env: &EnvConfig) -> Result<Vec<ReplayRow>> {
    let config = EnvConfig {
        random_start: false,
        max_episode_steps: clip.frame_count(),
        ..env.clone()
    };
    let stored = match controller {
        Controller::StoredTargets => Some(reference_residuals(world, clip, config.action_scale)?),
        Controller::Policy(_) => None,
    };
    let subset = match controller {
        Controller::Policy(p) => super::clip_subset(p, world, clip),
        Controller::StoredTargets => 0,
    };
    let mut env = TrackingEnv::new(world, clip, config, 0)?;
    let mut rows = Vec::new();
    while !env.status().is_done() {
        let actions = match (controller, &stored) {
            (Controller::Policy(p), _) => (0..env.character_count())
                .map(|c| {
                    let x = env.policy_input(c, &p.normalizer)?;
                    p.compose_mean(&x, subset)
                })
                .collect::<Result<Vec<_>>>()?,
            (Controller::StoredTargets, Some(s)) => match s.get(env.frame()) {
                Some(a) => a.clone(),
                None => break,
            },
            (Controller::StoredTargets, None) => return Err(Error::Input("no stored targets".into())),
        };
        let out = match env.step(&actions) {
            Ok(o) => o,
            Err(Error::Divergence(_)) => break,
            Err(e) => return Err(e),
        };
        let sim = env.sim();
        let reference = &clip.frames[env.frame()];
        let characters = sim
            .characters
            .iter()
            .zip(reference)
            .enumerate()
            .map(|(c, (s, r))| CharacterRow {
                root: [s.root_pos.x, s.root_pos.y, s.root_angle],
                target_root: [r.root_pos.x, r.root_pos.y, r.root_angle],
                body_error: out.body_errors[c],
                joint_error: out.joint_errors[c].iter().sum::<f64>() / out.joint_errors[c].len().max(1) as f64,
                track: out.rewards[c].track,
            })
            .collect();
        rows.push(ReplayRow {
            time: sim.time,
            frame: env.frame(),
            characters,
            contacts: out.contacts,
            contact_force: sim
                .contacts
                .iter()
                .filter(|c| c.is_inter_character())
                .map(|c| c.normal_force)
                .sum(),
            terminated: out.status == crate::env::Status::Terminated,
        });
    }
    Ok(rows)
}

/// Writes a header plus one line per row.
pub fn write_replay_csv<W: Write>(rows: &[ReplayRow], w: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut out = csv::Writer::from_writer(w);
    let nc = rows.first().map_or(0, |r| r.characters.len());
    let mut header = vec!["time".to_string(), "frame".to_string()];
    for c in 0..nc {
        for f in ["root_x", "root_y", "root_angle", "target_root_x", "target_root_y", "target_root_angle", "body_error", "joint_error", "track"] {
            header.push(format!("c{c}_{f}"));
        }
    }
    header.extend(["contacts", "contact_force", "terminated"].map(String::from));
    out.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.time.to_string(), r.frame.to_string()];
        for c in &r.characters {
            rec.extend(c.root.iter().chain(&c.target_root).map(|v| v.to_string()));
            rec.extend([c.body_error, c.joint_error, c.track].map(|v| v.to_string()));
        }
        rec.extend([r.contacts.to_string(), r.contact_force.to_string(), u8::from(r.terminated).to_string()]);
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
