//! Sinusoidal positional encoding of coordinates and view directions.

use crate::{Error, Result};

/// Canonicalizes the floating-point zero sign. Adding a zero noise entry to
/// `-0.0` would produce `+0.0`, so encodings must never emit `-0.0` if the
/// noise-free and zero-noise render paths are to stay bit-identical.
#[inline]
fn scrub_zero(v: f32) -> f32 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Encodes each component of `p` as `(sin(2^0 pi p), cos(2^0 pi p), ...,
/// sin(2^{L-1} pi p), cos(2^{L-1} pi p))`, components concatenated; output
/// length is `2 * l * p.len()` and every entry lies in [-1, 1].
pub fn positional_encode(p: &[f32], l: usize) -> Result<Vec<f32>> {
    if l < 1 {
        return Err(Error::invalid("encoding level must be at least 1"));
    }
    let mut out = Vec::with_capacity(2 * l * p.len());
    for &component in p {
        let mut arg = std::f32::consts::PI * component;
        for _ in 0..l {
            out.push(scrub_zero(arg.sin()));
            out.push(scrub_zero(arg.cos()));
            arg *= 2.0;
        }
    }
    Ok(out)
}

/// Batch encoding of 3D points, one row of width `6 * l_pos` per point.
/// Points are divided by `coord_scale` first so scene content maps into
/// [-1, 1]^3 and the highest frequency stays in a stable trig range.
pub fn encode_position_rows(points: &[[f32; 3]], l_pos: usize, coord_scale: f32) -> Result<Vec<f32>> {
    if !(coord_scale > 0.0) || !coord_scale.is_finite() {
        return Err(Error::invalid(format!("coord_scale must be positive and finite, got {coord_scale}")));
    }
    let mut out = Vec::with_capacity(points.len() * 6 * l_pos);
    for p in points {
        let scaled = [p[0] / coord_scale, p[1] / coord_scale, p[2] / coord_scale];
        out.extend_from_slice(&positional_encode(&scaled, l_pos)?);
    }
    Ok(out)
}

/// Batch encoding of unit directions, one row of width `6 * l_dir` each.
pub fn encode_direction_rows(dirs: &[[f32; 3]], l_dir: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(dirs.len() * 6 * l_dir);
    for d in dirs {
        out.extend_from_slice(&positional_encode(d, l_dir)?);
    }
    Ok(out)
}
