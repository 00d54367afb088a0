//! Dense f32 tensors with tape-based reverse-mode differentiation.

pub(crate) mod kernels;

mod adam;
mod tape;

pub use adam::{adam_step, adam_step_rows, AdamState};
pub use tape::{Gradients, Tape, Var};

use rand::RngCore;

use crate::{Error, Result};

/// Keeps accidental or adversarial allocations bounded (64M elements = 256 MB).
pub const MAX_TENSOR_ELEMS: usize = 1 << 26;

/// Dense row-major f32 tensor of rank 1..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/data mismatches and non-finite values.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        validate_shape(shape)?;
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("tensor data must be finite"));
        }
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![0.0; numel_of(shape)], requires_grad: false })
    }

    pub fn scalar(v: f32) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false }
    }

    /// Internal constructor for kernel outputs; skips the finiteness scan.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor { shape, data, requires_grad: false }
    }

    pub fn rand_uniform(
        shape: &[usize],
        lo: f32,
        hi: f32,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        validate_shape(shape)?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("invalid uniform range"));
        }
        let data = (0..numel_of(shape))
            .map(|_| lo + (hi - lo) * uniform_01(rng))
            .collect();
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false })
    }

    /// Seeded Gaussian init via Box-Muller on the uniform stream.
    pub fn rand_normal(
        shape: &[usize],
        mean: f32,
        sigma: f32,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        validate_shape(shape)?;
        if !(mean.is_finite() && sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid("invalid normal parameters"));
        }
        let data = (0..numel_of(shape))
            .map(|_| mean + sigma * normal_01(rng))
            .collect();
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    /// Single value of a scalar tensor.
    pub fn item(&self) -> Result<f32> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::shape(format!("rank {} unsupported (want 1..=3)", shape.len())));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape("zero-length dimension"));
    }
    let mut n: usize = 1;
    for &d in shape {
        n = n
            .checked_mul(d)
            .filter(|&n| n <= MAX_TENSOR_ELEMS)
            .ok_or_else(|| Error::invalid("tensor too large"))?;
    }
    Ok(())
}

/// Uniform draw in [0, 1) with 24 bits of precision, identical across platforms.
pub(crate) fn uniform_01(rng: &mut impl RngCore) -> f32 {
    (rng.next_u32() >> 8) as f32 / 16777216.0
}

pub(crate) fn normal_01(rng: &mut impl RngCore) -> f32 {
    // Box-Muller; u1 is shifted into (0, 1] so the log is finite.
    let u1 = 1.0 - f64::from(uniform_01(rng));
    let u2 = f64::from(uniform_01(rng));
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_validates_shape_and_payload() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        assert!(Tensor::new(&[1, 2, 3, 4], vec![0.0; 24]).is_err());
        assert!(Tensor::new(&[1], vec![f32::NAN]).is_err());
        assert!(Tensor::new(&[1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::rand_normal(&[4, 5], 0.0, 0.01, &mut r1).unwrap();
        let b = Tensor::rand_normal(&[4, 5], 0.0, 0.01, &mut r2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn normal_samples_have_plausible_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Tensor::rand_normal(&[3, 100, 100], 0.0, 1.0, &mut rng).unwrap();
        let n = t.numel() as f64;
        let mean: f64 = t.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
