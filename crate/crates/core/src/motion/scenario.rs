//! Scripted two-character scenarios. Each character follows a PD target
//! program in its own mirrored convention; the simulator produces the motion,
//! so every clip is physically feasible and exactly replayable from its
//! stored targets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CharacterFrame, MotionClip, CLIP_FPS};
use crate::error::{Error, Result};
use crate::physics::{joint_index as J, Actuation, CharacterState, SimState, Vec2, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Push,
    HighFive,
    /// Contact-free calibration motion: arm windmills at a safe distance.
    Spin,
    Boxing,
    Grapple,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::Push, Scenario::HighFive, Scenario::Spin, Scenario::Boxing, Scenario::Grapple];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Push => "push",
            Scenario::HighFive => "highfive",
            Scenario::Spin => "spin",
            Scenario::Boxing => "box",
            Scenario::Grapple => "grapple",
        }
    }

    /// Whether the scenario is expected to bring the characters into contact.
    pub fn has_contact(self) -> bool {
        self != Scenario::Spin
    }

    /// Initial pelvis-to-pelvis distance (m).
    fn separation(self) -> f64 {
        match self {
            Scenario::Spin => 1.6,
            Scenario::Grapple => 0.7,
            _ => 0.75,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown scenario '{s}' (expected push, highfive, spin, box or grapple)")))
    }
}

/// The bundled training suite: (scenario, duration s, seed). 40 s in total.
pub const BUNDLED_SUITE: [(Scenario, f64, u64); 5] = [
    (Scenario::Push, 8.0, 1),
    (Scenario::HighFive, 6.0, 2),
    (Scenario::Spin, 6.0, 3),
    (Scenario::Boxing, 10.0, 4),
    (Scenario::Grapple, 10.0, 5),
];

pub fn bundled_suite(world: &World) -> Result<Vec<MotionClip>> {
    BUNDLED_SUITE
        .iter()
        .map(|&(sc, d, seed)| generate_reference_scenario(world, sc, d, seed).map(|g| g.clip))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedClip {
    pub clip: MotionClip,
    /// Control steps whose contact log holds at least one inter-character
    /// contact.
    pub contact_steps: usize,
    /// Number of separate inter-character contact episodes (rising edges).
    pub contact_events: usize,
}

type Pose = [f64; 11];

fn stance() -> Pose {
    let mut p = [0.0; 11];
    p[J::L_SHOULDER] = 0.15;
    p[J::R_SHOULDER] = 0.15;
    p[J::L_ELBOW] = 0.25;
    p[J::R_ELBOW] = 0.25;
    p[J::L_HIP] = 0.25;
    p[J::L_KNEE] = -0.05;
    p[J::R_HIP] = -0.25;
    p[J::R_KNEE] = -0.05;
    p
}

/// Forward torso lean (positive bends towards the opponent).
fn lean(mut p: Pose, amount: f64) -> Pose {
    p[J::WAIST] -= 0.6 * amount;
    p[J::SPINE] -= 0.4 * amount;
    p
}

fn arms(mut p: Pose, left: (f64, f64), right: (f64, f64)) -> Pose {
    p[J::L_SHOULDER] = left.0;
    p[J::L_ELBOW] = left.1;
    p[J::R_SHOULDER] = right.0;
    p[J::R_ELBOW] = right.1;
    p
}

fn guard() -> Pose {
    arms(stance(), (0.9, 1.9), (0.9, 1.9))
}

/// Piecewise smoothstep interpolation through time-sorted key poses.
struct Keyframes(Vec<(f64, Pose)>);

impl Keyframes {
    fn at(&self, t: f64) -> Pose {
        let keys = &self.0;
        if t <= keys[0].0 {
            return keys[0].1;
        }
        for w in keys.windows(2) {
            let (t0, p0) = w[0];
            let (t1, p1) = w[1];
            if t <= t1 {
                let u = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                let s = u * u * (3.0 - 2.0 * u);
                let mut out = p0;
                for (o, (a, b)) in out.iter_mut().zip(p0.iter().zip(&p1)) {
                    *o = a + s * (b - a);
                }
                return out;
            }
        }
        keys[keys.len() - 1].1
    }
}

/// Per-character target programs in the characters' own convention.
struct Script {
    programs: [Box<dyn Fn(f64) -> Pose>; 2],
}

fn jitter(rng: &mut ChaCha8Rng, spread: f64) -> f64 {
    rng.random_range(-spread..=spread)
}

fn push_script(duration: f64, rng: &mut ChaCha8Rng) -> Script {
    let brace = lean(arms(stance(), (0.4, 1.7), (0.4, 1.7)), 0.05);
    let mut keys = [vec![(0.0, brace)], vec![(0.0, brace)]];
    let mut t = 0.6;
    let mut pusher = 0;
    while t < duration {
        let reach = 1.4 + jitter(rng, 0.08);
        let push = lean(arms(stance(), (reach, 0.15), (reach, 0.15)), 0.12 + jitter(rng, 0.03));
        let d = jitter(rng, 0.1);
        keys[pusher].extend([(t, brace), (t + 0.5 + d, push), (t + 1.1 + d, push), (t + 1.6 + d, brace)]);
        t += 2.2 + d;
        pusher = 1 - pusher;
    }
    let [a, b] = keys;
    Script {
        programs: [Box::new(move |t| Keyframes(a.clone()).at(t)), Box::new(move |t| Keyframes(b.clone()).at(t))],
    }
}

fn highfive_script(duration: f64, rng: &mut ChaCha8Rng) -> Script {
    let rest = stance();
    let mut keys = [vec![(0.0, rest)], vec![(0.0, rest)]];
    let mut t = 0.4;
    let mut right = true;
    while t < duration {
        for (c, k) in keys.iter_mut().enumerate() {
            let lift = 2.45 + jitter(rng, 0.05);
            // The arm swings up folded so the two reaches do not overlap on
            // the way, then extends overhead to meet the other hand.
            let side = |pose: (f64, f64)| if right { arms(rest, (0.15, 0.25), pose) } else { arms(rest, pose, (0.15, 0.25)) };
            let folded = side((1.6, 2.0));
            let up = side((lift, 0.3));
            let lag = if c == 0 { 0.0 } else { jitter(rng, 0.08) };
            k.extend([
                (t + lag, rest),
                (t + 0.35 + lag, folded),
                (t + 0.7 + lag, up),
                (t + 1.0 + lag, up),
                (t + 1.3 + lag, folded),
                (t + 1.6 + lag, rest),
            ]);
        }
        t += 2.0;
        right = !right;
    }
    let [a, b] = keys;
    Script {
        programs: [Box::new(move |t| Keyframes(a.clone()).at(t)), Box::new(move |t| Keyframes(b.clone()).at(t))],
    }
}

fn spin_script(rng: &mut ChaCha8Rng) -> Script {
    let make = |omega: f64, amp: f64, phase: f64| {
        move |t: f64| {
            // ease in over the first half second
            let ramp = (t / 0.5).min(1.0);
            let a = ramp * amp;
            let mut p = stance();
            p[J::L_SHOULDER] = 0.15 + a * (1.0 - (omega * t + phase).cos());
            p[J::R_SHOULDER] = 0.15 + a * (1.0 - (omega * t + phase + std::f64::consts::PI).cos());
            p[J::WAIST] = 0.1 * ramp * (0.5 * omega * t).sin();
            p[J::NECK] = 0.15 * ramp * (0.5 * omega * t + 1.0).sin();
            p
        }
    };
    let a = make(3.0 + jitter(rng, 0.3), 1.2 + jitter(rng, 0.1), 0.0);
    let b = make(2.6 + jitter(rng, 0.3), 1.1 + jitter(rng, 0.1), 1.3);
    Script {
        programs: [Box::new(a), Box::new(b)],
    }
}

fn boxing_script(duration: f64, rng: &mut ChaCha8Rng) -> Script {
    let g = guard();
    let back = lean(g, -0.05);
    let mut keys = [vec![(0.0, g)], vec![(0.0, g)]];
    let mut t = 0.5;
    let mut attacker = 0;
    while t < duration {
        for punch in 0..3 {
            let reach = 1.45 + jitter(rng, 0.1);
            let right = punch % 2 == 0;
            let hit = if right { arms(lean(g, 0.08), (0.9, 1.9), (reach, 0.05)) } else { arms(lean(g, 0.08), (reach, 0.05), (0.9, 1.9)) };
            let d = jitter(rng, 0.05);
            keys[attacker].extend([(t, g), (t + 0.18 + d, hit), (t + 0.3 + d, hit), (t + 0.6 + d, g)]);
            keys[1 - attacker].extend([(t, g), (t + 0.25, back), (t + 0.6, g)]);
            t += 0.75 + d;
        }
        t += 0.4;
        attacker = 1 - attacker;
    }
    for k in &mut keys {
        k.sort_by(|x, y| x.0.total_cmp(&y.0));
    }
    let [a, b] = keys;
    Script {
        programs: [Box::new(move |t| Keyframes(a.clone()).at(t)), Box::new(move |t| Keyframes(b.clone()).at(t))],
    }
}

fn grapple_script(rng: &mut ChaCha8Rng) -> Script {
    // In the plane both characters' arms share one layer, so the clinch is
    // asymmetric: one reaches over the opponent's shoulders, the other under
    // to the waist, and the arm segments never cross.
    let make = |period: f64, phase: f64, high: bool, reach: f64| {
        move |t: f64| {
            let ramp = (t / 1.0).min(1.0);
            let s = ramp * ramp * (3.0 - 2.0 * ramp);
            let base = stance();
            let hold = if high { arms(stance(), (reach, 0.4), (reach - 0.1, 0.5)) } else { arms(stance(), (reach, 0.5), (reach + 0.1, 0.4)) };
            let clinch = lean(hold, 0.16);
            let mut p = base;
            for (o, (a, b)) in p.iter_mut().zip(base.iter().zip(&clinch)) {
                *o = a + s * (b - a);
            }
            let sway = s * (std::f64::consts::TAU * t / period + phase).sin();
            p[J::WAIST] -= 0.1 * sway;
            p[J::L_ELBOW] += 0.2 * sway;
            p[J::R_ELBOW] += 0.15 * sway;
            p
        }
    };
    let period = 2.0 + jitter(rng, 0.2);
    let a = make(period, 0.0, true, 2.0 + jitter(rng, 0.05));
    let b = make(period, std::f64::consts::PI, false, 1.2 + jitter(rng, 0.05));
    Script {
        programs: [Box::new(a), Box::new(b)],
    }
}

/// Hip strategy: bend the torso against the center-of-mass offset from the
/// middle of the feet and against the root tilt, both in the character's own
/// convention.
fn balance(world: &World, c: &CharacterState) -> (f64, f64) {
    use crate::physics::body_index as B;
    let f = c.facing;
    let total = world.model.total_mass();
    let com = c
        .bodies
        .iter()
        .zip(&world.model.bodies)
        .map(|(b, spec)| spec.mass * b.pos.x)
        .sum::<f64>()
        / total;
    let com_vel = c
        .bodies
        .iter()
        .zip(&world.model.bodies)
        .map(|(b, spec)| spec.mass * b.vel.x)
        .sum::<f64>()
        / total;
    let feet = 0.5 * (c.bodies[B::L_SHIN].pos.x + c.bodies[B::R_SHIN].pos.x);
    let offset = f * (com - feet);
    let tilt = f * c.root_angle;
    let spin = f * c.root_omega;
    let correction = (BALANCE_COM * offset + BALANCE_COM_RATE * f * com_vel + BALANCE_TILT * tilt + BALANCE_SPIN * spin)
        .clamp(-0.5, 0.5);
    (0.6 * correction, 0.4 * correction)
}

const BALANCE_COM: f64 = 3.0;
const BALANCE_COM_RATE: f64 = 0.6;
const BALANCE_TILT: f64 = -1.0;
const BALANCE_SPIN: f64 = -0.1;

fn physical_targets(world: &World, script: &Script, t: f64, state: &SimState) -> Vec<f64> {
    let mut out = Vec::with_capacity(22);
    for (prog, c) in script.programs.iter().zip(&state.characters) {
        let mut pose = prog(t);
        let (waist, spine) = balance(world, c);
        pose[J::WAIST] += waist;
        pose[J::SPINE] += spine;
        out.extend(pose.iter().map(|q| c.facing * q));
    }
    out
}

const SETTLE_STEPS: usize = 30;

/// Runs the scripted controller of `scenario` for `duration` seconds and
/// records the resulting motion at 30 Hz (`round(duration·30)` frames).
pub fn generate_reference_scenario(world: &World, scenario: Scenario, duration: f64, seed: u64) -> Result<GeneratedClip> {
    if !(duration >= 1.0) || !duration.is_finite() {
        return Err(Error::Input(format!("scenario duration must be at least 1 s, got {duration}")));
    }
    if world.joint_count() != 11 || world.body_count() != 12 {
        return Err(Error::Config("scripted scenarios need the default 12-body planar humanoid".into()));
    }
    if (world.config.control_rate - CLIP_FPS).abs() > 1e-12 {
        return Err(Error::Config("scenario generation needs a 30 Hz control rate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (scenario as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let frames = (duration * CLIP_FPS).round() as usize;
    let script = match scenario {
        Scenario::Push => push_script(duration, &mut rng),
        Scenario::HighFive => highfive_script(duration, &mut rng),
        Scenario::Spin => spin_script(&mut rng),
        Scenario::Boxing => boxing_script(duration, &mut rng),
        Scenario::Grapple => grapple_script(&mut rng),
    };

    let facing = vec![1.0, -1.0];
    let half = 0.5 * scenario.separation();
    let start = script.programs.iter().map(|p| p(0.0)).collect::<Vec<_>>();
    let mut characters = Vec::new();
    for (c, &f) in facing.iter().enumerate() {
        let q: Vec<f64> = start[c].iter().map(|v| f * v).collect();
        let mut ch = world.character_at_rest(f, Vec2::new(-f * half, 1.0), 0.0, &q);
        world.place_on_ground(&mut ch, 0.0);
        characters.push(ch);
    }
    let mut state = SimState::new(characters);

    let fail = |e: Error| Error::Generation(format!("{scenario} rollout failed: {e}"));
    for _ in 0..SETTLE_STEPS {
        let hold = Actuation::PdTargets(physical_targets(world, &script, 0.0, &state));
        state = world.step(&state, &hold).map_err(fail)?;
    }
    state.time = 0.0;
    state.contacts.clear();

    let dt = world.config.control_dt();
    let mut clip_frames = Vec::with_capacity(frames);
    let mut actions = Vec::with_capacity(frames.saturating_sub(1));
    let mut contact_steps = 0;
    let mut contact_events = 0;
    let mut touching = false;
    clip_frames.push(state.characters.iter().map(CharacterFrame::from_state).collect());
    for t in 1..frames {
        let targets = physical_targets(world, &script, (t - 1) as f64 * dt, &state);
        state = world.step(&state, &Actuation::PdTargets(targets.clone())).map_err(fail)?;
        let now = state.inter_character_contacts() > 0;
        if now {
            contact_steps += 1;
            if !touching {
                contact_events += 1;
            }
        }
        touching = now;
        actions.push(targets);
        clip_frames.push(state.characters.iter().map(CharacterFrame::from_state).collect());
    }

    let clip = MotionClip {
        id: format!("{}-{seed}", scenario.name()),
        fps: CLIP_FPS,
        facing,
        frames: clip_frames,
        actions: Some(actions),
    };
    clip.validate()?;
    Ok(GeneratedClip {
        clip,
        contact_steps,
        contact_events,
    })
}
