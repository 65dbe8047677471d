//! Percept export: 8-bit PGM and PNG for display, and a lossless-for-f32
//! binary container for raw grids.
//!
//! Binary layout, little endian: `b"PCPT"`, `u32` height, `u32` width, then
//! `height * width` `f32` values in row-major order.

use std::io::{Read, Write};

use base64::Engine;

use crate::error::{Error, Result};
use crate::phosphene::Percept;

/// Display clipping used by default: brightness 10 saturates to white.
pub const DEFAULT_DISPLAY_CAP: f64 = 10.0;

const PCPT_MAGIC: &[u8; 4] = b"PCPT";

/// Maps brightness to 8-bit gray, clipping at `cap`.
pub fn to_gray8(percept: &Percept, cap: f64) -> Vec<u8> {
    percept
        .data
        .iter()
        .map(|&v| ((v / cap).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn write_pgm<W: Write>(percept: &Percept, cap: f64, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", percept.width, percept.height)?;
    w.write_all(&to_gray8(percept, cap))?;
    Ok(())
}

pub fn encode_png(percept: &Percept, cap: f64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, percept.width as u32, percept.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(&to_gray8(percept, cap))
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(buf)
}

pub fn encode_png_base64(percept: &Percept, cap: f64) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(encode_png(percept, cap)?))
}

/// Decodes an 8-bit grayscale PNG into `(height, width, pixels)`.
pub fn decode_png_gray8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("expected 8-bit grayscale png".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.height as usize, info.width as usize, buf))
}

pub fn write_pcpt<W: Write>(percept: &Percept, mut w: W) -> Result<()> {
    w.write_all(PCPT_MAGIC)?;
    w.write_all(&(percept.height as u32).to_le_bytes())?;
    w.write_all(&(percept.width as u32).to_le_bytes())?;
    for &v in &percept.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a raw grid. The container carries no field extent, so the caller
/// supplies it.
pub fn read_pcpt<R: Read>(mut r: R, half_extent_deg: f64) -> Result<Percept> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PCPT_MAGIC {
        return Err(Error::Format(format!("bad PCPT magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let height = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let width = u32::from_le_bytes(word) as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format("PCPT dimensions overflow".into()))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated PCPT data".into()))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Percept::from_data(height, width, half_extent_deg, data)
}
