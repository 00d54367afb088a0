//! Image quality metrics (PSNR, SSIM), residual visualization, and the
//! least-significant-bit steganography baseline.

use crate::image::{Image, Image8};
use crate::{Error, Result};

fn check_same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(format!(
            "images differ in shape: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn check_unit_range(img: &Image, name: &str) -> Result<()> {
    if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("{name} has values outside [0, 1]")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB against a float peak of 1.0. Identical
/// images report `f32::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f32> {
    check_same_shape(a, b)?;
    check_unit_range(a, "first image")?;
    check_unit_range(b, "second image")?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((10.0 * (1.0 / mse).log10()) as f32)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable Gaussian filtering of one channel plane.
fn gaussian_valid(plane: &[f64], width: usize, height: usize, kernel: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = width - SSIM_WINDOW + 1;
    // Horizontal pass: full height, valid width.
    let mut hpass = vec![0.0f64; height * ow];
    for row in 0..height {
        for out_col in 0..ow {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * plane[row * width + out_col + k];
            }
            hpass[row * ow + out_col] = acc;
        }
    }
    // Vertical pass: valid height.
    let oh = height - SSIM_WINDOW + 1;
    let mut out = vec![0.0f64; oh * ow];
    for out_row in 0..oh {
        for col in 0..ow {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * hpass[(out_row + k) * ow + col];
            }
            out[out_row * ow + col] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0), computed per channel
/// and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f32> {
    check_same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0f64;
    for channel in 0..3 {
        let plane = |img: &Image| -> Vec<f64> {
            img.data().iter().skip(channel).step_by(3).map(|&v| f64::from(v)).collect()
        };
        let pa = plane(a);
        let pb = plane(b);
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

        let (mu_a, ow, oh) = gaussian_valid(&pa, w, h, &kernel);
        let (mu_b, _, _) = gaussian_valid(&pb, w, h, &kernel);
        let (m_aa, _, _) = gaussian_valid(&paa, w, h, &kernel);
        let (m_bb, _, _) = gaussian_valid(&pbb, w, h, &kernel);
        let (m_ab, _, _) = gaussian_valid(&pab, w, h, &kernel);

        let mut acc = 0.0f64;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            acc += num / den;
        }
        total += acc / (ow * oh) as f64;
    }
    Ok((total / 3.0) as f32)
}

/// Amplified absolute difference: `clamp(gain * |a - b|, 0, 1)` per channel.
pub fn residual(a: &Image, b: &Image, gain: f32) -> Result<Image> {
    check_same_shape(a, b)?;
    if !gain.is_finite() || gain < 0.0 {
        return Err(Error::invalid(format!("residual gain must be finite and >= 0, got {gain}")));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (gain * (x - y).abs()).clamp(0.0, 1.0))
        .collect();
    Image::from_vec(a.width(), a.height(), data)
}

/// Writes `bits` into the least significant bit of each channel byte,
/// row-major. Capacity is one bit per channel byte.
pub fn lsb_embed(cover: &Image8, bits: &[bool]) -> Result<Image8> {
    if bits.len() > cover.data().len() {
        return Err(Error::invalid(format!(
            "secret needs {} bits but the cover holds {}",
            bits.len(),
            cover.data().len()
        )));
    }
    let mut data = cover.data().to_vec();
    for (byte, &bit) in data.iter_mut().zip(bits) {
        *byte = (*byte & !1) | u8::from(bit);
    }
    Image8::new(cover.width(), cover.height(), data)
}

/// Reads back `n_bits` least significant bits in row-major channel order.
pub fn lsb_extract(stego: &Image8, n_bits: usize) -> Result<Vec<bool>> {
    if n_bits > stego.data().len() {
        return Err(Error::invalid(format!(
            "asked for {} bits but the image holds {}",
            n_bits,
            stego.data().len()
        )));
    }
    Ok(stego.data()[..n_bits].iter().map(|&b| b & 1 == 1).collect())
}
