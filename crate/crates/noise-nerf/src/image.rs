//! In-memory image buffers: float RGB for rendering/metrics, 8-bit RGB for files.

use crate::{Error, Result};

/// Row-major RGB image with f32 channels, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new_black(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Image { width, height, data: vec![0.0; width * height * 3] })
    }

    /// Builds an image from raw channel data; rejects wrong lengths and non-finite values.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("image contains non-finite values"));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let o = (row * self.width + col) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let o = (row * self.width + col) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Quantizes to 8-bit with round-half-up on the clamped value.
    pub fn to_8bit(&self) -> Image8 {
        let data = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect();
        Image8 { width: self.width, height: self.height, data }
    }

    pub fn from_8bit(src: &Image8) -> Self {
        let data = src.data.iter().map(|&b| f32::from(b) / 255.0).collect();
        Image { width: src.width, height: src.height, data }
    }

    /// Copies the `height x width` window of `src` starting at `(row0, col0)` into `self`.
    pub fn blit_from(&mut self, src: &Image, row0: usize, col0: usize) -> Result<()> {
        if row0 + self.height > src.height || col0 + self.width > src.width {
            return Err(Error::shape("blit window exceeds source image"));
        }
        for r in 0..self.height {
            let s = ((row0 + r) * src.width + col0) * 3;
            let d = r * self.width * 3;
            self.data[d..d + self.width * 3].copy_from_slice(&src.data[s..s + self.width * 3]);
        }
        Ok(())
    }
}

/// Row-major 8-bit RGB image; the in-memory form of the binary image files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Image8 { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be nonzero"));
    }
    // Large enough for any workbench render, small enough to stop nonsense sizes
    // coming in from files.
    const MAX_SIDE: usize = 1 << 15;
    if width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::invalid(format!(
            "image dimensions {width}x{height} exceed the supported maximum"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        let img = Image::from_vec(2, 1, vec![0.0, 1.0, 0.5, 0.001, 0.999, -0.2]).unwrap();
        let q = img.to_8bit();
        // 0.5*255 + 0.5 = 128.0, 0.001*255 = 0.255 -> 0, 0.999*255 = 254.745 -> 255
        assert_eq!(q.data(), &[0, 255, 128, 0, 255, 0]);
    }

    #[test]
    fn from_vec_rejects_bad_lengths_and_nan() {
        assert!(Image::from_vec(2, 2, vec![0.0; 11]).is_err());
        assert!(Image::from_vec(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn roundtrip_through_8bit_is_exact_on_quantized_values() {
        let img = Image::from_vec(1, 1, vec![0.0, 128.0 / 255.0, 1.0]).unwrap();
        let back = Image::from_8bit(&img.to_8bit());
        assert_eq!(img.data(), back.data());
    }

    #[test]
    fn blit_copies_window() {
        let mut src = Image::new_black(4, 4).unwrap();
        src.set_pixel(2, 3, [0.1, 0.2, 0.3]);
        let mut dst = Image::new_black(2, 2).unwrap();
        dst.blit_from(&src, 2, 2).unwrap();
        assert_eq!(dst.pixel(0, 1), [0.1, 0.2, 0.3]);
        assert!(dst.blit_from(&src, 3, 3).is_err());
    }
}
