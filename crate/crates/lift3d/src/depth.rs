//! Raw depth grids: a 16-byte header (`L3DDEPTH`, then width and height as
//! little-endian u32) followed by `width * height` little-endian f32 values
//! in row-major order.

use crate::error::{Error, Result};
use lift3d_core::image::Image;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"L3DDEPTH";

pub fn encode(depth: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * depth.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for &v in depth.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "missing depth header"));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * w * h {
        return Err(Error::format(path, format!("{w}x{h} depth needs {} bytes, found {}", 4 * w * h, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Ok(Image::from_vec(w, h, 1, data)?)
}

pub fn write(path: &Path, depth: &Image) -> Result<()> {
    if depth.channels() != 1 {
        return Err(Error::format(path, format!("depth must have one channel, got {}", depth.shape_str())));
    }
    std::fs::write(path, encode(depth)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
