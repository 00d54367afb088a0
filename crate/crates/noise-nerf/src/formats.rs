//! On-disk artifacts: binary PPM images, `NNRF` weight checkpoints, `NNSZ`
//! noise checkpoints, and the JSON files that configure a run.
//!
//! Every reader is panic-free on arbitrary bytes and every writer/reader pair
//! round-trips bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::Image8;
use crate::nerf::{RadianceFieldParams, TrainConfig};
use crate::scene::AnalyticScene;
use crate::stego::{NoiseField, StegoConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NNRF";
pub const NOISE_MAGIC: &[u8; 4] = b"NNSZ";
pub const WEIGHTS_VERSION: u16 = 1;
pub const NOISE_VERSION: u16 = 1;

/// Bounded little-endian reader over a byte buffer; all failures are errors,
/// never panics, so the decoders can face untrusted files.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| Error::format("length overflow in binary header"))?;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::format("file truncated"))?;
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format("float payload overflows"))?;
        let raw = self.take(bytes)?;
        let out: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("checkpoint contains non-finite values"));
        }
        Ok(out)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!("{} trailing bytes after payload", self.remaining())));
        }
        Ok(())
    }
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn as_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::format(format!("{what} {v} does not fit the file header")))
}

fn as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(format!("{what} {v} does not fit the file header")))
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit)
// ---------------------------------------------------------------------------

/// Serializes to canonical binary PPM: `P6\n{w} {h}\n255\n` + raw RGB bytes.
pub fn write_ppm(img: &Image8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Parses binary PPM. Header whitespace and `#` comments are accepted; the
/// maxval must be 255 and the payload must be exact with no trailing bytes.
pub fn read_ppm(bytes: &[u8]) -> Result<Image8> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format("not a binary PPM (missing P6 magic)"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = next_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("missing whitespace before PPM payload")),
    }
    if width == 0 || height == 0 || width > (1 << 15) || height > (1 << 15) {
        return Err(Error::format(format!("unsupported PPM dimensions {width}x{height}")));
    }
    let expected = width * height * 3;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != expected {
        return Err(Error::format(format!(
            "PPM payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    Image8::new(width, height, payload.to_vec())
}

/// Reads one ASCII decimal after skipping whitespace and `#` comments.
fn next_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*pos) {
                    *pos += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start || *pos - start > 6 {
        return Err(Error::format("malformed number in PPM header"));
    }
    // Only ASCII digits reach the parse, and six digits cannot overflow.
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("malformed number in PPM header"))
}

// ---------------------------------------------------------------------------
// NNRF weight checkpoints
// ---------------------------------------------------------------------------

/// Serializes field parameters: magic, version, `(l_pos, l_dir, hidden)`,
/// tensor count, then each tensor as rank, dims, and little-endian floats.
pub fn write_weights(params: &RadianceFieldParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    push_u16(&mut out, WEIGHTS_VERSION);
    push_u16(&mut out, as_u16(params.l_pos(), "l_pos")?);
    push_u16(&mut out, as_u16(params.l_dir(), "l_dir")?);
    push_u16(&mut out, as_u16(params.hidden(), "hidden width")?);
    push_u16(&mut out, as_u16(params.tensors().len(), "tensor count")?);
    for t in params.tensors() {
        push_u32(&mut out, as_u32(t.shape().len(), "tensor rank")?);
        for &d in t.shape() {
            push_u32(&mut out, as_u32(d, "tensor dimension")?);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses an `NNRF` checkpoint back into validated field parameters.
pub fn read_weights(bytes: &[u8]) -> Result<RadianceFieldParams> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format("not a weight checkpoint (missing NNRF magic)"));
    }
    let version = r.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!("unsupported weight checkpoint version {version}")));
    }
    let l_pos = r.u16()? as usize;
    let l_dir = r.u16()? as usize;
    let hidden = r.u16()? as usize;
    let n_tensors = r.u16()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::format(format!("weight tensors are rank 1 or 2, got {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            if d == 0 {
                return Err(Error::format("zero-sized tensor dimension"));
            }
            numel = numel
                .checked_mul(d)
                .filter(|&n| n * 4 <= bytes.len())
                .ok_or_else(|| Error::format("tensor larger than its file"))?;
            shape.push(d);
        }
        tensors.push(Tensor::new(&shape, r.f32s(numel)?)?);
    }
    r.finish()?;
    RadianceFieldParams::from_tensors(l_pos, l_dir, hidden, tensors)
}

// ---------------------------------------------------------------------------
// NNSZ noise checkpoints
// ---------------------------------------------------------------------------

/// Serializes a noise field: magic, version, the two binding digests, the
/// `[n_rays, n_samples, enc_dim]` shape, then little-endian floats.
pub fn write_noise(noise: &NoiseField) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(NOISE_MAGIC);
    push_u16(&mut out, NOISE_VERSION);
    out.extend_from_slice(noise.viewpoint_id());
    out.extend_from_slice(noise.grid_hash());
    push_u32(&mut out, as_u32(noise.n_rays(), "ray count")?);
    push_u32(&mut out, as_u32(noise.n_samples(), "sample count")?);
    push_u32(&mut out, as_u32(noise.enc_dim(), "encoding width")?);
    for v in noise.values().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses an `NNSZ` checkpoint back into a bound noise field.
pub fn read_noise(bytes: &[u8]) -> Result<NoiseField> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != NOISE_MAGIC {
        return Err(Error::format("not a noise checkpoint (missing NNSZ magic)"));
    }
    let version = r.u16()?;
    if version != NOISE_VERSION {
        return Err(Error::format(format!("unsupported noise checkpoint version {version}")));
    }
    let mut viewpoint_id = [0u8; 32];
    viewpoint_id.copy_from_slice(r.take(32)?);
    let mut grid_hash = [0u8; 32];
    grid_hash.copy_from_slice(r.take(32)?);
    let n_rays = r.u32()? as usize;
    let n_samples = r.u32()? as usize;
    let enc_dim = r.u32()? as usize;
    if n_rays == 0 || n_samples == 0 || enc_dim == 0 {
        return Err(Error::format("noise checkpoint has an empty dimension"));
    }
    let numel = n_rays
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(enc_dim))
        .filter(|&n| n == r.remaining() / 4)
        .ok_or_else(|| Error::format("noise payload does not match its header shape"))?;
    let values = Tensor::new(&[n_rays, n_samples, enc_dim], r.f32s(numel)?)?;
    r.finish()?;
    NoiseField::new(viewpoint_id, grid_hash, values)
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

/// How the ground-truth dataset is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSettings {
    pub n_views: usize,
    pub resolution: u32,
    pub radius: f32,
    pub seed: u64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings { n_views: 8, resolution: 64, radius: 2.5, seed: 0 }
    }
}

impl DatasetSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::config("dataset needs at least one view"));
        }
        if self.resolution == 0 {
            return Err(Error::config("dataset resolution must be nonzero"));
        }
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(Error::config(format!("camera radius must be positive, got {}", self.radius)));
        }
        Ok(())
    }
}

/// One experiment: where the scene lives, how to make its dataset, how to
/// train, how to embed, and where artifacts go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSettings,
    pub train: TrainConfig,
    #[serde(default)]
    pub stego: StegoConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.stego.validate()
    }

    /// Parses and validates a run config from JSON text (no filesystem checks).
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("bad run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates a run config, checking that the referenced scene
    /// file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::parse(&text)
            .map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
                other => other,
            })?;
        if !cfg.scene.exists() {
            return Err(Error::config(format!(
                "scene file {} does not exist",
                cfg.scene.display()
            )));
        }
        Ok(cfg)
    }
}

/// Parses and validates a scene description file.
pub fn load_scene(path: &Path) -> Result<AnalyticScene> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses and validates a scene description from JSON text.
pub fn parse_scene(text: &str) -> Result<AnalyticScene> {
    let scene: AnalyticScene =
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad scene JSON: {e}")))?;
    scene.validate()?;
    Ok(scene)
}

/// Parses and validates a camera pose from JSON text.
pub fn parse_pose(text: &str) -> Result<crate::nerf::CameraPose> {
    let pose: crate::nerf::CameraPose =
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad view JSON: {e}")))?;
    pose.validate()?;
    Ok(pose)
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

pub fn save_ppm(path: &Path, img: &Image8) -> Result<()> {
    Ok(std::fs::write(path, write_ppm(img))?)
}

pub fn load_ppm(path: &Path) -> Result<Image8> {
    read_ppm(&std::fs::read(path)?)
}

pub fn save_weights(path: &Path, params: &RadianceFieldParams) -> Result<()> {
    Ok(std::fs::write(path, write_weights(params)?)?)
}

pub fn load_weights(path: &Path) -> Result<RadianceFieldParams> {
    read_weights(&std::fs::read(path)?)
}

pub fn save_noise(path: &Path, noise: &NoiseField) -> Result<()> {
    Ok(std::fs::write(path, write_noise(noise)?)?)
}

pub fn load_noise(path: &Path) -> Result<NoiseField> {
    read_noise(&std::fs::read(path)?)
}
