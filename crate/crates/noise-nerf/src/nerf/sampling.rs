//! Depth sampling along rays: deterministic bin midpoints or one stratified
//! uniform draw per bin, plus the per-view [`SampleGrid`] container.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tensor::uniform_01;
use crate::{Error, Result};

/// Inter-sample distance assigned to the final sample of every ray, standing
/// in for an unbounded segment behind it.
pub const FAR_DELTA_CAP: f32 = 1e10;

fn check_range(near: f32, far: f32, n: usize) -> Result<()> {
    if !(near.is_finite() && far.is_finite()) || near < 0.0 || far <= near {
        return Err(Error::invalid(format!(
            "sampling range wants 0 <= near < far, got near {near}, far {far}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples per ray, got {n}")));
    }
    Ok(())
}

/// Depths and inter-sample distances for one ray.
///
/// `jitter = false` places samples at the midpoints of `n` equal bins of
/// `[near, far]`; `jitter = true` draws one uniform depth per bin from the
/// ChaCha stream `(seed, stream)`. The last delta is [`FAR_DELTA_CAP`].
pub fn sample_along_ray(
    near: f32,
    far: f32,
    n: usize,
    jitter: bool,
    seed: u64,
    stream: u64,
) -> Result<(Vec<f32>, Vec<f32>)> {
    check_range(near, far, n)?;
    let width = (far - near) / n as f32;
    let mut t = Vec::with_capacity(n);
    if jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        for i in 0..n {
            t.push(near + (i as f32 + uniform_01(&mut rng)) * width);
        }
        // Stratified draws are strictly increasing in exact arithmetic, but two
        // depths can round to the same float; nudge upward to keep deltas > 0.
        for i in 1..n {
            if t[i] <= t[i - 1] {
                t[i] = t[i - 1].next_up();
            }
        }
    } else {
        for i in 0..n {
            t.push(near + (i as f32 + 0.5) * width);
        }
    }
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n - 1 {
        deltas.push(t[i + 1] - t[i]);
    }
    deltas.push(FAR_DELTA_CAP);
    Ok((t, deltas))
}

/// Per-view sample depths: `n_rays` rows of `n_samples` strictly increasing
/// depths plus their deltas, with a digest binding noise tensors to the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    n_rays: usize,
    n_samples: usize,
    t: Vec<f32>,
    deltas: Vec<f32>,
    pub deterministic: bool,
    pub seed: u64,
}

impl SampleGrid {
    /// The deterministic (midpoint) grid shared by all stego paths; every ray
    /// gets the same depth vector and regeneration is bit-identical.
    pub fn deterministic(n_rays: usize, near: f32, far: f32, n_samples: usize) -> Result<Self> {
        if n_rays == 0 {
            return Err(Error::invalid("sample grid needs at least one ray"));
        }
        let (t_row, delta_row) = sample_along_ray(near, far, n_samples, false, 0, 0)?;
        let mut t = Vec::with_capacity(n_rays * n_samples);
        let mut deltas = Vec::with_capacity(n_rays * n_samples);
        for _ in 0..n_rays {
            t.extend_from_slice(&t_row);
            deltas.extend_from_slice(&delta_row);
        }
        Ok(SampleGrid { n_rays, n_samples, t, deltas, deterministic: true, seed: 0 })
    }

    /// Stratified grid: each ray draws from its own ChaCha stream
    /// `salt << 32 | ray_index`, so any subset of rays can be regenerated
    /// independently of the others.
    pub fn jittered(n_rays: usize, near: f32, far: f32, n_samples: usize, seed: u64, salt: u32) -> Result<Self> {
        if n_rays == 0 {
            return Err(Error::invalid("sample grid needs at least one ray"));
        }
        check_range(near, far, n_samples)?;
        let mut t = Vec::with_capacity(n_rays * n_samples);
        let mut deltas = Vec::with_capacity(n_rays * n_samples);
        for ray in 0..n_rays {
            let stream = (u64::from(salt) << 32) | ray as u64;
            let (t_row, delta_row) = sample_along_ray(near, far, n_samples, true, seed, stream)?;
            t.extend_from_slice(&t_row);
            deltas.extend_from_slice(&delta_row);
        }
        Ok(SampleGrid { n_rays, n_samples, t, deltas, deterministic: false, seed })
    }

    pub fn n_rays(&self) -> usize {
        self.n_rays
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn t_row(&self, ray: usize) -> &[f32] {
        &self.t[ray * self.n_samples..(ray + 1) * self.n_samples]
    }

    pub fn delta_row(&self, ray: usize) -> &[f32] {
        &self.deltas[ray * self.n_samples..(ray + 1) * self.n_samples]
    }

    /// SHA-256 over dimensions and the exact depth/delta bytes; two grids
    /// share a digest exactly when they are bit-identical.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n_rays as u64).to_le_bytes());
        h.update((self.n_samples as u64).to_le_bytes());
        for v in self.t.iter().chain(&self.deltas) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}
