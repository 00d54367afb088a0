//! Training the radiance field against ground-truth views by minibatch MSE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::nerf::camera::{generate_rays, CameraPose, Ray};
use crate::nerf::encoding::{encode_direction_rows, encode_position_rows};
use crate::nerf::field::{field_forward_taped, FieldVars, RadianceFieldParams};
use crate::nerf::render::{ray_sample_points, volume_render_rows, RenderConfig};
use crate::nerf::sampling::sample_along_ray;
use crate::tensor::{adam_step, AdamState, Tape, Tensor};
use crate::{Error, Result};

/// Training settings; `render` carries the ray-marching geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch_rays: usize,
    pub lr: f32,
    pub seed: u64,
    /// Stratified depth sampling; turned off, samples sit at bin midpoints.
    pub jitter: bool,
    pub render: RenderConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rays < 1 {
            return Err(Error::config("batch_rays must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if self.iters > u32::MAX as usize {
            return Err(Error::config("iters out of range"));
        }
        self.render.validate()
    }
}

/// The ray indices drawn for one iteration's minibatch. Each iteration reads
/// its own ChaCha stream, so any iteration's batch can be regenerated without
/// replaying the ones before it (this is what makes resuming exact).
pub fn minibatch_indices(seed: u64, iteration: usize, total_rays: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + iteration as u64);
    (0..batch).map(|_| rng.random_range(0..total_rays)).collect()
}

/// Flattened dataset: every ray of every view with its ground-truth color,
/// views first brought into a canonical order so the curve cannot depend on
/// how the caller happened to arrange the list.
struct FlatDataset {
    rays: Vec<Ray>,
    gt: Vec<[f32; 3]>,
}

fn flatten_dataset(dataset: &[(CameraPose, Image)]) -> Result<FlatDataset> {
    if dataset.is_empty() {
        return Err(Error::invalid("training needs at least one view"));
    }
    for (pose, image) in dataset {
        pose.validate()?;
        if image.width() != pose.width as usize || image.height() != pose.height as usize {
            return Err(Error::shape(format!(
                "image {}x{} does not match pose {}x{}",
                image.width(),
                image.height(),
                pose.width,
                pose.height
            )));
        }
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let key = |pose: &CameraPose| {
        let mut k = [0.0f32; 10];
        k[..3].copy_from_slice(&pose.position);
        k[3..6].copy_from_slice(&pose.forward);
        k[6..9].copy_from_slice(&pose.up);
        k[9] = pose.fov_y;
        k
    };
    order.sort_by(|&a, &b| {
        key(&dataset[a].0)
            .iter()
            .zip(key(&dataset[b].0))
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rays = Vec::new();
    let mut gt = Vec::new();
    for &i in &order {
        let (pose, image) = &dataset[i];
        for ray in generate_rays(pose)? {
            gt.push(image.pixel(ray.pixel_index.0 as usize, ray.pixel_index.1 as usize));
            rays.push(ray);
        }
    }
    Ok(FlatDataset { rays, gt })
}

/// Trains in place over `cfg.iters` iterations and returns the per-iteration
/// minibatch loss history (the loss *before* each parameter update).
pub fn train_nerf(
    params: &mut RadianceFieldParams,
    dataset: &[(CameraPose, Image)],
    cfg: &TrainConfig,
) -> Result<Vec<f32>> {
    train_nerf_range(params, dataset, cfg, 0)
}

/// As [`train_nerf`], starting at an absolute iteration (resume support).
/// Minibatch and jitter streams are keyed by the absolute iteration number,
/// so the first loss a resumed run records is exactly the loss the
/// uninterrupted run would have recorded at that iteration (optimizer moments
/// restart, so later updates may drift).
pub fn train_nerf_range(
    params: &mut RadianceFieldParams,
    dataset: &[(CameraPose, Image)],
    cfg: &TrainConfig,
    start_iter: usize,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    if start_iter > cfg.iters {
        return Err(Error::config(format!(
            "start iteration {start_iter} exceeds total {}",
            cfg.iters
        )));
    }
    let flat = flatten_dataset(dataset)?;
    let n = cfg.render.n_samples;
    let width_pos = params.enc_pos_dim();
    let width_dir = params.enc_dir_dim();
    let mut states: Vec<AdamState> =
        params.tensors().iter().map(|t| AdamState::new(t.numel())).collect();
    let mut history = Vec::with_capacity(cfg.iters - start_iter);

    for t in start_iter..cfg.iters {
        let batch = minibatch_indices(cfg.seed, t, flat.rays.len(), cfg.batch_rays);
        let b = batch.len();
        let mut points = Vec::with_capacity(b * n);
        let mut dirs = Vec::with_capacity(b * n);
        let mut deltas = Vec::with_capacity(b * n);
        let mut gt = Vec::with_capacity(b * 3);
        for &ray_idx in &batch {
            let stream = ((t as u64 + 1) << 32) | ray_idx as u64;
            let (t_row, delta_row) =
                sample_along_ray(cfg.render.near, cfg.render.far, n, cfg.jitter, cfg.seed, stream)?;
            let (p, d) = ray_sample_points(&flat.rays[ray_idx], &t_row);
            points.extend_from_slice(&p);
            dirs.extend_from_slice(&d);
            deltas.extend_from_slice(&delta_row);
            gt.extend_from_slice(&flat.gt[ray_idx]);
        }
        let enc_p = encode_position_rows(&points, params.l_pos(), cfg.render.coord_scale)?;
        let enc_d = encode_direction_rows(&dirs, params.l_dir())?;

        let tape = Tape::new();
        let vars = FieldVars::new(&tape, params, true);
        let pv = tape.constant(Tensor::new(&[b * n, width_pos], enc_p)?);
        let dv = tape.constant(Tensor::new(&[b * n, width_dir], enc_d)?);
        let (rgb, sigma) = field_forward_taped(&vars, &pv, &dv)?;
        let deltas_v = tape.constant(Tensor::new(&[b, n], deltas)?);
        let pix = volume_render_rows(&rgb, &sigma, &deltas_v, b, n)?;
        let target = tape.constant(Tensor::new(&[b, 3], gt)?);
        let loss = pix.mse(&target)?;
        history.push(loss.item()?);

        let grads = tape.backward(&loss)?;
        for (k, var) in vars.vars().iter().enumerate() {
            let g = grads
                .wrt(var)
                .ok_or_else(|| Error::invalid("a field tensor received no gradient"))?;
            adam_step(&mut params.tensors_mut()[k], g, &mut states[k], cfg.lr)?;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nerf::render::render_view;

    fn constant_dataset(color: [f32; 3], views: usize, side: u32) -> Vec<(CameraPose, Image)> {
        (0..views)
            .map(|i| {
                let angle = i as f32 * 0.7;
                let pose = CameraPose::look_at(
                    [2.0 * angle.cos(), 0.6, 2.0 * angle.sin()],
                    [0.0; 3],
                    [0.0, 1.0, 0.0],
                    0.7,
                    side,
                    side,
                )
                .unwrap();
                let mut img = Image::new_black(side as usize, side as usize).unwrap();
                for v in img.data_mut() {
                    *v = 0.0;
                }
                for row in 0..side as usize {
                    for col in 0..side as usize {
                        img.set_pixel(row, col, color);
                    }
                }
                (pose, img)
            })
            .collect()
    }

    fn tiny_cfg(iters: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            iters,
            batch_rays: 64,
            lr: 1e-2,
            seed,
            jitter: true,
            render: RenderConfig { near: 0.5, far: 3.5, n_samples: 6, coord_scale: 2.0 },
        }
    }

    #[test]
    fn minibatches_are_seeded_and_iteration_addressable() {
        let a = minibatch_indices(3, 10, 1000, 32);
        let b = minibatch_indices(3, 10, 1000, 32);
        assert_eq!(a, b);
        assert_ne!(a, minibatch_indices(3, 11, 1000, 32));
        assert_ne!(a, minibatch_indices(4, 10, 1000, 32));
        assert!(a.iter().all(|&i| i < 1000));
    }

    #[test]
    fn rejects_empty_dataset_and_mismatched_resolutions() {
        let mut params = RadianceFieldParams::init(6, 2, 64, 0).unwrap();
        let cfg = tiny_cfg(1, 0);
        assert!(train_nerf(&mut params, &[], &cfg).is_err());

        let mut ds = constant_dataset([0.5, 0.5, 0.5], 1, 8);
        ds[0].1 = Image::new_black(4, 4).unwrap();
        assert!(train_nerf(&mut params, &ds, &cfg).is_err());

        let ds = constant_dataset([0.5, 0.5, 0.5], 1, 8);
        let mut bad = tiny_cfg(1, 0);
        bad.lr = 0.0;
        assert!(train_nerf(&mut params, &ds, &bad).is_err());
        bad.lr = 1e-2;
        bad.batch_rays = 0;
        assert!(train_nerf(&mut params, &ds, &bad).is_err());
    }

    #[test]
    fn first_recorded_loss_is_the_untrained_minibatch_mse() {
        let ds = constant_dataset([0.3, 0.6, 0.9], 2, 8);
        let cfg = tiny_cfg(1, 42);
        let mut params = RadianceFieldParams::init(6, 2, 64, 5).unwrap();
        let history = train_nerf(&mut params, &ds, &cfg).unwrap();

        // Recompute the same minibatch loss with the original (untrained) weights.
        let fresh = RadianceFieldParams::init(6, 2, 64, 5).unwrap();
        let mut replay = cfg.clone();
        replay.iters = 1;
        let mut fresh_mut = fresh;
        let replayed = train_nerf(&mut fresh_mut, &ds, &replay).unwrap();
        assert_eq!(history[0].to_bits(), replayed[0].to_bits());
        assert!(history[0] > 0.0);
    }

    #[test]
    fn dataset_order_does_not_change_the_loss_curve() {
        let ds = constant_dataset([0.2, 0.5, 0.8], 3, 8);
        let mut shuffled = ds.clone();
        shuffled.swap(0, 2);
        let cfg = tiny_cfg(12, 7);

        let mut p1 = RadianceFieldParams::init(6, 2, 64, 9).unwrap();
        let h1 = train_nerf(&mut p1, &ds, &cfg).unwrap();
        let mut p2 = RadianceFieldParams::init(6, 2, 64, 9).unwrap();
        let h2 = train_nerf(&mut p2, &shuffled, &cfg).unwrap();
        let bits = |h: &[f32]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&h1), bits(&h2));
        assert_eq!(p1, p2);
    }

    #[test]
    fn resuming_reproduces_the_uninterrupted_run() {
        let ds = constant_dataset([0.4, 0.4, 0.4], 2, 8);
        let cfg = tiny_cfg(10, 13);

        let mut full = RadianceFieldParams::init(6, 2, 64, 3).unwrap();
        let h_full = train_nerf(&mut full, &ds, &cfg).unwrap();

        let mut halves = RadianceFieldParams::init(6, 2, 64, 3).unwrap();
        let mut first = cfg.clone();
        first.iters = 5;
        let h1 = train_nerf(&mut halves, &ds, &first).unwrap();
        let h2 = train_nerf_range(&mut halves, &ds, &cfg, 5).unwrap();

        // Histories agree piecewise. Optimizer moments restart at the resume
        // point, so the parameters themselves may differ afterwards; the loss
        // recorded at the resume boundary is the exact continuation.
        let bits = |h: &[f32]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&h_full[..5]), bits(&h1));
        assert_eq!(h_full[5].to_bits(), h2[0].to_bits());
    }

    #[test]
    fn fits_a_constant_color_scene() {
        let color = [0.35, 0.55, 0.75];
        let ds = constant_dataset(color, 2, 12);
        let mut cfg = tiny_cfg(500, 1);
        cfg.batch_rays = 64;
        let mut params = RadianceFieldParams::init(6, 2, 64, 2).unwrap();
        let history = train_nerf(&mut params, &ds, &cfg).unwrap();
        let last = *history.last().unwrap();
        assert!(last < 1e-4, "final loss {last}");

        // Loss trend: medians of 100-iteration windows do not increase.
        let window_median = |w: &[f32]| {
            let mut v = w.to_vec();
            v.sort_by(f32::total_cmp);
            v[v.len() / 2]
        };
        let medians: Vec<f32> = history.chunks(100).map(window_median).collect();
        for pair in medians.windows(2) {
            assert!(pair[1] <= pair[0] * 1.5, "window medians rose sharply: {medians:?}");
        }

        // The trained field actually renders that color where rays hit content.
        let img = render_view(&params, &ds[0].0, &cfg.render, None).unwrap();
        let center = img.pixel(6, 6);
        for c in 0..3 {
            assert!((center[c] - color[c]).abs() < 0.05, "channel {c}: {center:?}");
        }
    }
}
