//! Bias-corrected Adam with a dense step and a masked per-row variant.
//!
//! The per-row variant exists for trainable input noise: a noise tensor holds
//! one row per ray, each optimization step touches only the selected rays, and
//! each row carries its own step count so bias correction reflects how often
//! that row has actually been updated. Untouched rows are left bit-identical.
//!
//! Update arithmetic runs in f64 (moments are stored as f32, but the current
//! step uses the pre-rounded f64 recurrence values). This keeps the first-step
//! magnitude strictly at most `lr` instead of drifting a few ulps above it.

use crate::tensor::Tensor;
use crate::{Error, Result};

const DEFAULT_BETA1: f64 = 0.9;
const DEFAULT_BETA2: f64 = 0.999;
const DEFAULT_EPSILON: f64 = 1e-8;

/// First and second moment accumulators plus step counters.
///
/// A state is bound to one update style: either [`adam_step`] (one global step
/// count) or [`adam_step_rows`] (per-row step counts). Mixing the two on the
/// same state is rejected.
#[derive(Clone, Debug)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    row_steps: Vec<u64>,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamState {
    /// Fresh state for a parameter tensor with `numel` elements, default
    /// hyperparameters (β1 = 0.9, β2 = 0.999, ε = 1e-8).
    pub fn new(numel: usize) -> Self {
        AdamState {
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            step: 0,
            row_steps: Vec::new(),
            m: vec![0.0; numel],
            v: vec![0.0; numel],
        }
    }

    pub fn numel(&self) -> usize {
        self.m.len()
    }

    /// Global step count (dense updates only; 0 for a fresh or row-mode state).
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Per-row step counts, present once [`adam_step_rows`] has run.
    pub fn row_step_counts(&self) -> &[u64] {
        &self.row_steps
    }
}

/// One element span of the update; `t` is the (1-based) step count in effect.
fn update_span(p: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f32], t: u64, lr: f64, b1: f64, b2: f64, eps: f64) {
    debug_assert!(t >= 1 && t < (1 << 31));
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..p.len() {
        let gi = f64::from(g[i]);
        let mi = b1 * f64::from(m[i]) + (1.0 - b1) * gi;
        let vi = b2 * f64::from(v[i]) + (1.0 - b2) * gi * gi;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        let step = lr * m_hat / (v_hat.sqrt() + eps);
        p[i] = (f64::from(p[i]) - step) as f32;
    }
}

fn check_lr(lr: f32) -> Result<f64> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be positive and finite, got {lr}")));
    }
    Ok(f64::from(lr))
}

/// One bias-corrected descent step over the whole parameter tensor.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f32) -> Result<()> {
    let lr = check_lr(lr)?;
    if param.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "adam_step shapes differ: param {:?} vs grad {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if state.numel() != param.numel() {
        return Err(Error::shape(format!(
            "optimizer state sized for {} elements, parameter has {}",
            state.numel(),
            param.numel()
        )));
    }
    if !state.row_steps.is_empty() {
        return Err(Error::invalid("state already used for per-row updates"));
    }
    state.step += 1;
    update_span(
        param.data_mut(),
        &mut state.m,
        &mut state.v,
        grad.data(),
        state.step,
        lr,
        state.beta1,
        state.beta2,
        state.epsilon,
    );
    Ok(())
}

/// Masked Adam over selected rows of a parameter whose leading axis indexes
/// rows (rank 2 or higher; trailing axes are flattened into the row).
///
/// `rows` pairs a parameter row index with the gradient row that drives it.
/// Each touched parameter row advances its own step count; rows absent from
/// `rows` are left bit-identical (moments included).
pub fn adam_step_rows(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f32,
    rows: &[(usize, usize)],
) -> Result<()> {
    let lr = check_lr(lr)?;
    if param.shape().len() < 2 || grad.shape().len() != 2 {
        return Err(Error::shape("adam_step_rows wants a rank >= 2 param and a rank-2 grad"));
    }
    let n_rows = param.shape()[0];
    let width = param.numel() / n_rows;
    let grad_rows = grad.shape()[0];
    if grad.shape()[1] != width {
        return Err(Error::shape(format!(
            "row width mismatch: param {:?} vs grad {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if state.numel() != param.numel() {
        return Err(Error::shape(format!(
            "optimizer state sized for {} elements, parameter has {}",
            state.numel(),
            param.numel()
        )));
    }
    if state.step > 0 {
        return Err(Error::invalid("state already used for dense updates"));
    }
    if state.row_steps.is_empty() {
        state.row_steps = vec![0; n_rows];
    } else if state.row_steps.len() != n_rows {
        return Err(Error::shape(format!(
            "state tracks {} rows, parameter has {n_rows}",
            state.row_steps.len()
        )));
    }
    let mut seen = vec![false; n_rows];
    for &(pr, gr) in rows {
        if pr >= n_rows || gr >= grad_rows {
            return Err(Error::invalid(format!(
                "row pair ({pr}, {gr}) out of bounds for param {n_rows} x grad {grad_rows}"
            )));
        }
        if seen[pr] {
            return Err(Error::invalid(format!("parameter row {pr} selected twice in one step")));
        }
        seen[pr] = true;
    }
    for &(pr, gr) in rows {
        state.row_steps[pr] += 1;
        let t = state.row_steps[pr];
        let span = pr * width..(pr + 1) * width;
        update_span(
            &mut param.data_mut()[span.clone()],
            &mut state.m[span.clone()],
            &mut state.v[span],
            &grad.data()[gr * width..(gr + 1) * width],
            t,
            lr,
            state.beta1,
            state.beta2,
            state.epsilon,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_bit_identical() {
        let mut param = Tensor::new(&[4], vec![1.5, -0.0, 3.25e7, -2.75e-3]).unwrap();
        let before: Vec<u32> = param.data().iter().map(|v| v.to_bits()).collect();
        let grad = Tensor::zeros(&[4]).unwrap();
        let mut state = AdamState::new(4);
        adam_step(&mut param, &grad, &mut state, 1e-2).unwrap();
        let after: Vec<u32> = param.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_magnitude_is_between_99_percent_and_100_percent_of_lr() {
        for &lr in &[1e-2f32, 0.5] {
            for &g in &[1e-5f32, 1e-3, 0.5, -2.0, 37.0] {
                let mut param = Tensor::scalar(1.0);
                let grad = Tensor::scalar(g);
                let mut state = AdamState::new(1);
                adam_step(&mut param, &grad, &mut state, lr).unwrap();
                let delta = (param.data()[0] - 1.0).abs();
                assert!(
                    delta >= 0.99 * lr && delta <= lr,
                    "lr {lr}, grad {g}: |delta| = {delta}"
                );
                // Descent: the parameter moves against the gradient sign.
                let moved = param.data()[0] - 1.0;
                assert!(moved.signum() == -g.signum(), "lr {lr}, grad {g}: moved {moved}");
            }
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut param = Tensor::scalar(0.0);
        let grad = Tensor::scalar(3.0);
        let mut state = AdamState::new(1);
        let mut prev = 0.0f32;
        for _ in 0..5 {
            adam_step(&mut param, &grad, &mut state, 1e-2).unwrap();
            let cur = param.data()[0];
            assert!(cur < prev, "expected strict descent, got {cur} after {prev}");
            prev = cur;
        }
    }

    #[test]
    fn minimizes_a_shifted_quadratic() {
        // d/dx (x - 3)^2 = 2 (x - 3)
        let mut x = Tensor::scalar(0.0);
        let mut state = AdamState::new(1);
        for _ in 0..500 {
            let g = 2.0 * (x.data()[0] - 3.0);
            adam_step(&mut x, &Tensor::scalar(g), &mut state, 0.1).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-2, "converged to {}", x.data()[0]);
    }

    #[test]
    fn rejects_bad_learning_rates_and_shapes() {
        let mut param = Tensor::zeros(&[2]).unwrap();
        let grad = Tensor::zeros(&[2]).unwrap();
        let mut state = AdamState::new(2);
        assert!(adam_step(&mut param, &grad, &mut state, 0.0).is_err());
        assert!(adam_step(&mut param, &grad, &mut state, -1.0).is_err());
        assert!(adam_step(&mut param, &grad, &mut state, f32::NAN).is_err());
        assert!(adam_step(&mut param, &grad, &mut state, f32::INFINITY).is_err());
        assert_eq!(state.step_count(), 0);

        let grad3 = Tensor::zeros(&[3]).unwrap();
        assert!(adam_step(&mut param, &grad3, &mut state, 1e-2).is_err());
        let mut small_state = AdamState::new(1);
        assert!(adam_step(&mut param, &grad, &mut small_state, 1e-2).is_err());
    }

    #[test]
    fn row_steps_touch_only_selected_rows() {
        let mut param = Tensor::new(&[4, 3], (0..12).map(|i| i as f32 * 0.25).collect()).unwrap();
        let frozen: Vec<u32> = param.data().iter().map(|v| v.to_bits()).collect();
        let grad = Tensor::new(&[2, 3], vec![0.3, -0.1, 0.7, 1.0, 2.0, -3.0]).unwrap();
        let mut state = AdamState::new(12);
        adam_step_rows(&mut param, &grad, &mut state, 1e-2, &[(2, 0), (1, 1)]).unwrap();
        for row in [0usize, 3] {
            for j in 0..3 {
                assert_eq!(param.data()[row * 3 + j].to_bits(), frozen[row * 3 + j], "row {row} must not move");
            }
        }
        for row in [1usize, 2] {
            let moved = (0..3).any(|j| param.data()[row * 3 + j].to_bits() != frozen[row * 3 + j]);
            assert!(moved, "row {row} should have moved");
        }
        assert_eq!(state.row_step_counts(), &[0, 1, 1, 0]);
    }

    #[test]
    fn repeated_row_updates_match_a_dense_replay() {
        // Updating one row twice through the masked path must equal running the
        // dense step twice on that row in isolation, bit for bit.
        let mut param = Tensor::new(&[3, 2], vec![0.0, 0.0, 0.5, -0.5, 1.0, 2.0]).unwrap();
        let mut state = AdamState::new(6);
        let g1 = Tensor::new(&[1, 2], vec![0.4, -0.2]).unwrap();
        let g2 = Tensor::new(&[1, 2], vec![-0.1, 0.6]).unwrap();
        adam_step_rows(&mut param, &g1, &mut state, 5e-3, &[(1, 0)]).unwrap();
        adam_step_rows(&mut param, &g2, &mut state, 5e-3, &[(1, 0)]).unwrap();

        let mut lone = Tensor::new(&[1, 2], vec![0.5, -0.5]).unwrap();
        let mut lone_state = AdamState::new(2);
        adam_step(&mut lone, &g1, &mut lone_state, 5e-3).unwrap();
        adam_step(&mut lone, &g2, &mut lone_state, 5e-3).unwrap();

        for j in 0..2 {
            assert_eq!(param.data()[2 + j].to_bits(), lone.data()[j].to_bits());
        }
        assert_eq!(state.row_step_counts(), &[0, 2, 0]);
    }

    #[test]
    fn row_mode_validates_indices_and_rejects_mixing() {
        let mut param = Tensor::zeros(&[3, 2]).unwrap();
        let grad = Tensor::zeros(&[2, 2]).unwrap();
        let mut state = AdamState::new(6);
        assert!(adam_step_rows(&mut param, &grad, &mut state, 1e-2, &[(3, 0)]).is_err());
        assert!(adam_step_rows(&mut param, &grad, &mut state, 1e-2, &[(0, 2)]).is_err());
        assert!(adam_step_rows(&mut param, &grad, &mut state, 1e-2, &[(1, 0), (1, 1)]).is_err());
        adam_step_rows(&mut param, &grad, &mut state, 1e-2, &[(0, 0)]).unwrap();
        let dense_grad = Tensor::zeros(&[3, 2]).unwrap();
        assert!(adam_step(&mut param, &dense_grad, &mut state, 1e-2).is_err());

        let mut dense_state = AdamState::new(6);
        adam_step(&mut param, &dense_grad, &mut dense_state, 1e-2).unwrap();
        assert!(adam_step_rows(&mut param, &grad, &mut dense_state, 1e-2, &[(0, 0)]).is_err());
    }
}
