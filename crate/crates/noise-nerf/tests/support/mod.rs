//! Double-precision reference implementations of the rendering chain.
//!
//! The acceptance suite finite-differences these mirrors and compares the
//! results against the production single-precision autodiff, so nothing in
//! here may call back into the kernels under test: every function recomputes
//! its result from scratch at f64.

use noise_nerf::nerf::RadianceFieldParams;

/// The field MLP at f64: four relu trunk layers, a relu density head read
/// before direction injection, and a sigmoid color head on the trunk output
/// concatenated with the encoded direction.
pub struct FieldF64 {
    tensors: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    hidden: usize,
}

impl FieldF64 {
    pub fn new(params: &RadianceFieldParams) -> Self {
        FieldF64 {
            tensors: params
                .tensors()
                .iter()
                .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
                .collect(),
            shapes: params.tensors().iter().map(|t| t.shape().to_vec()).collect(),
            hidden: params.hidden(),
        }
    }

    /// `x * W + b` where tensor `w` is `[in, out]` and tensor `w + 1` is the
    /// `[out]` bias.
    fn linear(&self, w: usize, x: &[f64]) -> Vec<f64> {
        let (d_in, d_out) = (self.shapes[w][0], self.shapes[w][1]);
        assert_eq!(x.len(), d_in);
        let weight = &self.tensors[w];
        let bias = &self.tensors[w + 1];
        (0..d_out)
            .map(|j| {
                let mut acc = bias[j];
                for (i, &xi) in x.iter().enumerate() {
                    acc += xi * weight[i * d_out + j];
                }
                acc
            })
            .collect()
    }

    /// One sample row: noise-added encoded position and encoded direction in,
    /// `(rgb, sigma)` out.
    pub fn forward(&self, input_pos: &[f64], enc_dir: &[f64]) -> ([f64; 3], f64) {
        let mut h = input_pos.to_vec();
        for layer in 0..4 {
            h = self.linear(2 * layer, &h);
            for v in &mut h {
                *v = v.max(0.0);
            }
        }
        let sigma = self.linear(8, &h)[0].max(0.0);
        let mut cat = Vec::with_capacity(self.hidden + enc_dir.len());
        cat.extend_from_slice(&h);
        cat.extend_from_slice(enc_dir);
        let mut ch = self.linear(10, &cat);
        for v in &mut ch {
            *v = v.max(0.0);
        }
        let rgb = self.linear(12, &ch);
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        ([s(rgb[0]), s(rgb[1]), s(rgb[2])], sigma)
    }
}

/// Front-to-back alpha compositing of one ray at f64, in the same operation
/// order as the production renderer.
pub fn composite_f64(colors: &[[f64; 3]], sigmas: &[f64], deltas: &[f64]) -> [f64; 3] {
    assert_eq!(colors.len(), sigmas.len());
    assert_eq!(deltas.len(), sigmas.len());
    let mut acc = 0.0f64;
    let mut pix = [0.0f64; 3];
    for i in 0..sigmas.len() {
        let a = sigmas[i] * deltas[i];
        let t = (-acc).exp();
        let alpha = 1.0 - (-a).exp();
        let w = t * alpha;
        pix[0] += w * colors[i][0];
        pix[1] += w * colors[i][1];
        pix[2] += w * colors[i][2];
        acc += a;
    }
    pix
}

/// A two-layer relu MLP with a mean-squared-error loss, all at f64: the
/// reference objective for the gradient finite-difference probes.
#[derive(Clone)]
pub struct MlpF64 {
    pub x: Vec<f64>,      // [rows, d_in]
    pub w1: Vec<f64>,     // [d_in, d_h]
    pub b1: Vec<f64>,     // [d_h]
    pub w2: Vec<f64>,     // [d_h, d_out]
    pub b2: Vec<f64>,     // [d_out]
    pub target: Vec<f64>, // [rows, d_out]
    pub rows: usize,
    pub d_in: usize,
    pub d_h: usize,
    pub d_out: usize,
}

impl MlpF64 {
    /// Mean over all `rows * d_out` entries of the squared prediction error.
    pub fn loss(&self) -> f64 {
        let mut acc = 0.0f64;
        for r in 0..self.rows {
            let x = &self.x[r * self.d_in..(r + 1) * self.d_in];
            let mut h = vec![0.0f64; self.d_h];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut z = self.b1[j];
                for (i, &xi) in x.iter().enumerate() {
                    z += xi * self.w1[i * self.d_h + j];
                }
                *hj = z.max(0.0);
            }
            for j in 0..self.d_out {
                let mut y = self.b2[j];
                for (k, &hk) in h.iter().enumerate() {
                    y += hk * self.w2[k * self.d_out + j];
                }
                let d = y - self.target[r * self.d_out + j];
                acc += d * d;
            }
        }
        acc / (self.rows * self.d_out) as f64
    }

    /// Smallest |pre-activation| across the hidden layer; probes only run on
    /// instances where this clears the finite-difference step by a wide
    /// margin, so no relu kink is crossed.
    pub fn min_abs_preactivation(&self) -> f64 {
        let mut min = f64::INFINITY;
        for r in 0..self.rows {
            let x = &self.x[r * self.d_in..(r + 1) * self.d_in];
            for j in 0..self.d_h {
                let mut z = self.b1[j];
                for (i, &xi) in x.iter().enumerate() {
                    z += xi * self.w1[i * self.d_h + j];
                }
                min = min.min(z.abs());
            }
        }
        min
    }
}
