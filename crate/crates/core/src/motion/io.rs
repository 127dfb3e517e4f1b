//! Clip files: `MCLP`, u32 version, u64 header length, JSON header, then
//! little-endian f64 frame blocks followed by the optional action table.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CharacterFrame, MotionClip};
use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"MCLP";
pub const CLIP_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    id: String,
    fps: f64,
    frames: usize,
    characters: usize,
    bodies: usize,
    joints: usize,
    facing: Vec<f64>,
    actions: bool,
}

pub fn write_clip<W: Write>(clip: &MotionClip, mut w: W) -> Result<()> {
    clip.validate()?;
    let header = Header {
        id: clip.id.clone(),
        fps: clip.fps,
        frames: clip.frame_count(),
        characters: clip.character_count(),
        bodies: clip.body_count(),
        joints: clip.joint_count(),
        facing: clip.facing.clone(),
        actions: clip.actions.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CLIP_MAGIC)?;
    w.write_all(&CLIP_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut values = Vec::new();
    for frame in &clip.frames {
        for c in frame {
            c.write_block(&mut values);
        }
    }
    if let Some(actions) = &clip.actions {
        for a in actions {
            values.extend(a);
        }
    }
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_clip<R: Read>(mut r: R) -> Result<MotionClip> {
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut magic, "magic")?;
    if &magic != CLIP_MAGIC {
        return Err(Error::Format("not a clip file".into()));
    }
    let mut word = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != CLIP_VERSION {
        return Err(Error::Format(format!("clip version {version}, expected {CLIP_VERSION}")));
    }
    let mut len = [0u8; 8];
    read_exact_or_corrupt(&mut r, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > (1 << 24) {
        return Err(Error::Corrupt(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact_or_corrupt(&mut r, &mut json, "header")?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| Error::Corrupt(format!("clip header: {e}")))?;
    if h.facing.len() != h.characters {
        return Err(Error::Corrupt("facing list does not match character count".into()));
    }

    let block = CharacterFrame::block_len(h.bodies, h.joints);
    let action_len = if h.actions { h.frames.saturating_sub(1) * h.characters * h.joints } else { 0 };
    let count = h
        .frames
        .checked_mul(h.characters)
        .and_then(|v| v.checked_mul(block))
        .and_then(|v| v.checked_add(action_len))
        .ok_or_else(|| Error::Corrupt("clip dimensions overflow".into()))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() != count * 8 {
        return Err(Error::Corrupt(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            rest.len()
        )));
    }
    let values: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let (frame_values, action_values) = values.split_at(h.frames * h.characters * block);
    let frames = frame_values
        .chunks_exact(h.characters * block)
        .map(|f| {
            f.chunks_exact(block)
                .map(|b| CharacterFrame::read_block(b, h.bodies, h.joints))
                .collect()
        })
        .collect();
    let actions = h.actions.then(|| {
        action_values
            .chunks_exact(h.characters * h.joints)
            .map(<[f64]>::to_vec)
            .collect()
    });
    let clip = MotionClip {
        id: h.id,
        fps: h.fps,
        facing: h.facing,
        frames,
        actions,
    };
    clip.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(clip)
}

pub fn save_clip(clip: &MotionClip, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_clip(clip, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<MotionClip> {
    let bytes = std::fs::read(path)?;
    read_clip(bytes.as_slice())
}
