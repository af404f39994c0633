//! Binary clip files and PGM mask export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::VideoClip;

pub const CLIP_MAGIC: &[u8; 5] = b"CLIP1";
const HEADER_LEN: usize = 5 + 4 * 4;

/// `CLIP1`, then T, H, W, C as u32 LE, then the f32 LE payload `[T, H, W, C]`.
pub fn clip_to_bytes(clip: &VideoClip) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * clip.frames.len());
    out.extend_from_slice(CLIP_MAGIC);
    for d in clip.shape {
        let d = u32::try_from(d).map_err(|_| Error::InvalidInput(format!("clip dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &clip.frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn clip_from_bytes(clip_id: &str, bytes: &[u8], label: Option<usize>) -> Result<VideoClip> {
    if bytes.len() < HEADER_LEN || &bytes[..5] != CLIP_MAGIC {
        return Err(Error::Integrity(format!("{clip_id}: not a CLIP1 file")));
    }
    let mut shape = [0usize; 4];
    for (i, d) in shape.iter_mut().enumerate() {
        let o = 5 + 4 * i;
        *d = u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    }
    let n: usize = shape.iter().product();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::Integrity(format!(
            "{clip_id}: payload holds {} bytes, header implies {}",
            payload.len(),
            4 * n
        )));
    }
    let frames = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    VideoClip::new(clip_id, shape, frames, label)
}

pub fn write_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    fs::write(path, clip_to_bytes(clip)?)?;
    Ok(())
}

pub fn read_clip(clip_id: &str, path: &Path, label: Option<usize>) -> Result<VideoClip> {
    clip_from_bytes(clip_id, &fs::read(path)?, label)
}

/// Binary 8-bit PGM (`P5`) of a `[H, W]` label map.
pub fn pgm_bytes(values: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::InvalidInput(format!(
            "pgm buffer holds {} values, expected {height}x{width}",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    Ok(out)
}

pub fn write_pgm(values: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    fs::write(path, pgm_bytes(values, height, width)?)?;
    Ok(())
}
