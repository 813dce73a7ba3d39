//! Binary clip container (little-endian):
//!
//! ```text
//! magic        8 bytes  "FILSCLIP"
//! version      u32      = 1
//! frames       u32
//! height       u32
//! width        u32
//! label        u32
//! seed         u64
//! caption_len  u32, then caption bytes (UTF-8)
//! scene_len    u32, then SceneSpec as JSON (0 = absent)
//! pixels       T*H*W*3 bytes, value = byte / 255, order (t, y, x, channel)
//! mask         ceil(T*H*W / 8) bytes, bit i (LSB first) = mask at flat index i
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array3, Array4};

use super::{SceneSpec, VideoClip};
use crate::error::FilsError;
use crate::Result;

const MAGIC: &[u8; 8] = b"FILSCLIP";
const VERSION: u32 = 1;

pub(crate) fn encode_clip(clip: &VideoClip) -> Result<Vec<u8>> {
    let (t, h, w, _) = clip.pixels.dim();
    let mut out = Vec::with_capacity(64 + t * h * w * 3 + t * h * w / 8 + 1);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, t as u32, h as u32, w as u32, clip.action_label as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&clip.rng_seed.to_le_bytes());
    out.extend_from_slice(&(clip.caption.len() as u32).to_le_bytes());
    out.extend_from_slice(clip.caption.as_bytes());
    let scene = match &clip.scene {
        Some(s) => serde_json::to_vec(s)?,
        None => Vec::new(),
    };
    out.extend_from_slice(&(scene.len() as u32).to_le_bytes());
    out.extend_from_slice(&scene);
    out.extend(clip.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut bits = vec![0u8; (t * h * w).div_ceil(8)];
    for (i, &m) in clip.motion_mask.iter().enumerate() {
        if m {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(FilsError::format(self.path, "truncated clip file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_clip(buf: &[u8], path: &Path) -> Result<VideoClip> {
    let mut cur = Cursor { buf, pos: 0, path };
    if cur.take(8)? != MAGIC {
        return Err(FilsError::format(path, "bad magic, not a clip file"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FilsError::format(path, format!("unsupported clip version {version}")));
    }
    let t = cur.u32()? as usize;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let label = cur.u32()? as usize;
    let seed = cur.u64()?;
    let cap_len = cur.u32()? as usize;
    let caption = std::str::from_utf8(cur.take(cap_len)?)
        .map_err(|_| FilsError::format(path, "caption is not UTF-8"))?
        .to_string();
    let scene_len = cur.u32()? as usize;
    let scene: Option<SceneSpec> = if scene_len == 0 {
        None
    } else {
        Some(serde_json::from_slice(cur.take(scene_len)?)?)
    };
    let n = t * h * w;
    let pixels: Vec<f32> = cur.take(n * 3)?.iter().map(|&b| b as f32 / 255.0).collect();
    let bits = cur.take(n.div_ceil(8))?;
    let mask: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    if cur.pos != buf.len() {
        return Err(FilsError::format(path, "trailing bytes after clip payload"));
    }
    Ok(VideoClip {
        pixels: Array4::from_shape_vec((t, h, w, 3), pixels).map_err(|e| FilsError::format(path, e.to_string()))?,
        motion_mask: Array3::from_shape_vec((t, h, w), mask).map_err(|e| FilsError::format(path, e.to_string()))?,
        caption,
        action_label: label,
        rng_seed: seed,
        scene,
    })
}

/// Write a clip; returns the hex SHA-256 of the written bytes.
pub fn save_clip(clip: &VideoClip, path: &Path) -> Result<String> {
    let bytes = encode_clip(clip)?;
    let mut f = std::fs::File::create(path).map_err(|e| FilsError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| FilsError::io(path, e))?;
    Ok(crate::util::sha256_hex(&bytes))
}

pub fn load_clip(path: &Path) -> Result<VideoClip> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| FilsError::io(path, e))?;
    decode_clip(&buf, path)
}
