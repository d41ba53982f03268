//! Image persistence: 8-bit portable pixmaps for human inspection and raw
//! little-endian 64-bit dumps for exact regression comparisons.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a binary PGM (1 channel) or PPM (3 channels) with max value 255.
pub fn write_image_pnm(
    path: &Path,
    pixels: &[f64],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<()> {
    if pixels.len() != height * width * channels {
        return Err(Error::DimensionMismatch {
            what: "image pixels",
            expected: height * width * channels,
            got: pixels.len(),
        });
    }
    let header = match channels {
        1 => format!("P5\n{width} {height}\n255\n"),
        3 => format!("P6\n{width} {height}\n255\n"),
        other => {
            return Err(Error::InvalidConfig(format!(
                "portable pixmap output supports 1 or 3 channels, got {other}"
            )))
        }
    };
    let mut bytes = header.into_bytes();
    bytes.extend(
        pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes)?;
    Ok(())
}

/// Raw little-endian f64 dump, exact to the bit.
pub fn write_image_raw(path: &Path, pixels: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(pixels.len() * 8);
    for p in pixels {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a raw f64 dump written by [`write_image_raw`].
pub fn read_image_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "raw image length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
