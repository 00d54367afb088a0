//! Steganography by trainable input noise.
//!
//! A [`NoiseField`] holds one additive offset per encoded position component
//! of every sample on every ray of a single viewpoint. Embedding optimizes
//! those offsets — never the model weights — so that rendering *with* the
//! noise reproduces a secret image, while rendering *without* it performs no
//! noise arithmetic at all and stays bit-identical to the clean model output.
//!
//! Each noise field is bound to the viewpoint and sample grid it was
//! optimized for via SHA-256 digests; replaying it anywhere else is rejected.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::metrics::{psnr, ssim};
use crate::nerf::{
    composite_ray, field_forward_raw, field_forward_taped, generate_rays, ray_sample_points,
    render_view, viewpoint_digest, volume_render_rows, CameraPose, FieldVars, RadianceFieldParams,
    RenderConfig, SampleGrid,
};
use crate::tensor::{adam_step_rows, AdamState, Tape, Tensor, Var};
use crate::{Error, Result};

/// Trainable additive noise for the encoded sample positions of one view.
///
/// `values` has shape `[n_rays, n_samples, enc_dim]`: row `r` perturbs every
/// sample of ray `r` (pixel `r` in row-major order), so each pixel owns a
/// disjoint slice of the field and can be optimized independently.
#[derive(Clone, Debug)]
pub struct NoiseField {
    viewpoint_id: [u8; 32],
    grid_hash: [u8; 32],
    values: Tensor,
}

impl NoiseField {
    /// Wraps an existing rank-3 tensor (used when loading checkpoints).
    pub fn new(viewpoint_id: [u8; 32], grid_hash: [u8; 32], values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(Error::shape(format!(
                "noise values must be rank 3 [rays, samples, enc], got {:?}",
                values.shape()
            )));
        }
        Ok(NoiseField { viewpoint_id, grid_hash, values })
    }

    pub fn zeros(
        viewpoint_id: [u8; 32],
        grid_hash: [u8; 32],
        n_rays: usize,
        n_samples: usize,
        enc_dim: usize,
    ) -> Result<Self> {
        NoiseField::new(viewpoint_id, grid_hash, Tensor::zeros(&[n_rays, n_samples, enc_dim])?)
    }

    /// Gaussian initialization `N(0, sigma^2)` from a seeded stream.
    pub fn random(
        viewpoint_id: [u8; 32],
        grid_hash: [u8; 32],
        n_rays: usize,
        n_samples: usize,
        enc_dim: usize,
        sigma: f32,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Tensor::rand_normal(&[n_rays, n_samples, enc_dim], 0.0, sigma, &mut rng)?;
        NoiseField::new(viewpoint_id, grid_hash, values)
    }

    pub fn viewpoint_id(&self) -> &[u8; 32] {
        &self.viewpoint_id
    }

    pub fn grid_hash(&self) -> &[u8; 32] {
        &self.grid_hash
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n_rays(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn enc_dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Refuses to pair this field with any viewpoint or sample grid other
    /// than the one it was optimized for.
    pub fn check_binding(&self, viewpoint_id: &[u8; 32], grid_hash: &[u8; 32]) -> Result<()> {
        if &self.viewpoint_id != viewpoint_id {
            return Err(Error::ViewpointMismatch(
                "noise was optimized for a different camera pose or render geometry".into(),
            ));
        }
        if &self.grid_hash != grid_hash {
            return Err(Error::ViewpointMismatch(
                "noise was optimized for a different sample grid".into(),
            ));
        }
        Ok(())
    }
}

fn default_lambda() -> f32 {
    0.5
}
fn default_mu() -> u32 {
    50
}
fn default_lr() -> f32 {
    1e-2
}
fn default_lr_decay() -> f32 {
    0.3
}
fn default_decay_every() -> u32 {
    100
}
fn default_iters() -> u32 {
    300
}
fn default_batch_sizes() -> Vec<usize> {
    vec![64, 128, 256, 512]
}
fn default_noise_init_sigma() -> f32 {
    0.01
}
fn default_seed() -> u64 {
    0
}

/// Embedding hyperparameters.
///
/// Iterations are 1-based. Through iteration `mu` the objective is
/// `lambda1 * rgb + lambda2 * perturb`; afterwards it is the rgb term alone.
/// The learning rate is `lr * lr_decay^k` where `k` counts completed
/// `decay_every`-iteration blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StegoConfig {
    pub lambda1: f32,
    pub lambda2: f32,
    pub mu: u32,
    pub lr: f32,
    pub lr_decay: f32,
    pub decay_every: u32,
    pub iters: u32,
    /// Candidate pixel batch sizes, strictly ascending.
    pub batch_sizes: Vec<usize>,
    pub noise_init_sigma: f32,
    pub seed: u64,
}

impl Default for StegoConfig {
    fn default() -> Self {
        StegoConfig {
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            mu: default_mu(),
            lr: default_lr(),
            lr_decay: default_lr_decay(),
            decay_every: default_decay_every(),
            iters: default_iters(),
            batch_sizes: default_batch_sizes(),
            noise_init_sigma: default_noise_init_sigma(),
            seed: default_seed(),
        }
    }
}

impl StegoConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda1.is_finite() || self.lambda1 < 0.0 {
            return Err(Error::config(format!("lambda1 must be finite and >= 0, got {}", self.lambda1)));
        }
        if !self.lambda2.is_finite() || self.lambda2 < 0.0 {
            return Err(Error::config(format!("lambda2 must be finite and >= 0, got {}", self.lambda2)));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !self.lr_decay.is_finite() || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay_every must be >= 1"));
        }
        if self.iters == 0 {
            return Err(Error::config("iters must be >= 1"));
        }
        if self.batch_sizes.is_empty() {
            return Err(Error::config("batch_sizes must not be empty"));
        }
        if self.batch_sizes[0] == 0 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        if self.batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "batch_sizes must be strictly ascending, got {:?}",
                self.batch_sizes
            )));
        }
        if !self.noise_init_sigma.is_finite() || self.noise_init_sigma < 0.0 {
            return Err(Error::config(format!(
                "noise_init_sigma must be finite and >= 0, got {}",
                self.noise_init_sigma
            )));
        }
        Ok(())
    }

    /// Learning rate at a 1-based iteration under the step decay schedule.
    pub fn current_lr(&self, iteration: u32) -> f32 {
        debug_assert!(iteration >= 1);
        let k = ((iteration.saturating_sub(1)) / self.decay_every).min(512);
        self.lr * self.lr_decay.powi(k as i32)
    }

    fn max_batch(&self) -> usize {
        *self.batch_sizes.last().expect("validated non-empty")
    }
}

/// Which parts of the embedding objective are active; used by the ablation
/// study. The default enables everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedVariant {
    /// Rank pixels by loss and adapt the batch size; when off, pixels are
    /// visited in fixed round-robin blocks of the largest batch size.
    pub adaptive_selection: bool,
    /// Keep the render near the clean image during the first `mu` iterations;
    /// when off, the objective is the rgb term from the start.
    pub perturbation_loss: bool,
}

impl Default for EmbedVariant {
    fn default() -> Self {
        EmbedVariant { adaptive_selection: true, perturbation_loss: true }
    }
}

/// The ablation study's variants in canonical reporting order.
pub const ABLATION_VARIANTS: [(&str, EmbedVariant); 4] = [
    ("full", EmbedVariant { adaptive_selection: true, perturbation_loss: true }),
    ("no-adaptive", EmbedVariant { adaptive_selection: false, perturbation_loss: true }),
    ("no-perturb", EmbedVariant { adaptive_selection: true, perturbation_loss: false }),
    ("neither", EmbedVariant { adaptive_selection: false, perturbation_loss: false }),
];

/// Renders labelled embed reports as the ablation CSV: a `variant` column
/// followed by `ssim_<it>,loss_<it>` per milestone iteration, one row per
/// report in the given order. All reports must share the same milestone
/// iterations; a milestone without an ssim value leaves that cell empty.
pub fn ablation_csv(rows: &[(&str, EmbedReport)]) -> Result<String> {
    let first = &rows.first().ok_or_else(|| Error::invalid("ablation CSV needs at least one row"))?.1;
    let marks: Vec<u32> = first.milestones.iter().map(|m| m.iteration).collect();
    if marks.is_empty() {
        return Err(Error::invalid("ablation CSV needs at least one milestone"));
    }
    let mut csv = String::from("variant");
    for it in &marks {
        csv.push_str(&format!(",ssim_{it},loss_{it}"));
    }
    csv.push('\n');
    for (label, report) in rows {
        let got: Vec<u32> = report.milestones.iter().map(|m| m.iteration).collect();
        if got != marks {
            return Err(Error::invalid(format!(
                "report {label:?} has milestones {got:?}, expected {marks:?}"
            )));
        }
        csv.push_str(label);
        for m in &report.milestones {
            let ssim = m.ssim.map_or_else(String::new, |v| v.to_string());
            csv.push_str(&format!(",{ssim},{}", m.full_rgb_loss));
        }
        csv.push('\n');
    }
    Ok(csv)
}

/// Piecewise objective: `lambda1 * rgb + lambda2 * perturb` through iteration
/// `mu`, the rgb term alone afterwards.
pub fn total_loss(rgb_loss: &Var, perturb_loss: &Var, iteration: u32, config: &StegoConfig) -> Result<Var> {
    if iteration == 0 {
        return Err(Error::invalid("iterations are 1-based"));
    }
    if iteration <= config.mu {
        rgb_loss.scale(config.lambda1).add(&perturb_loss.scale(config.lambda2))
    } else {
        Ok(rgb_loss.clone())
    }
}

/// Pixel indices sorted by loss, largest first; ties break toward the lower
/// index so rankings (and everything downstream) are deterministic.
pub fn rank_pixels(losses: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    idx
}

/// Probe history for the adaptive batch-size controller: the batch loss seen
/// the last time each size was chosen.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeState {
    last_loss: Vec<Option<f32>>,
}

impl ProbeState {
    pub fn new(n_sizes: usize) -> Self {
        ProbeState { last_loss: vec![None; n_sizes] }
    }

    pub fn record(&mut self, size_index: usize, batch_loss: f32) {
        self.last_loss[size_index] = Some(batch_loss);
    }

    pub fn last_loss(&self, size_index: usize) -> Option<f32> {
        self.last_loss[size_index]
    }

    pub fn len(&self) -> usize {
        self.last_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_loss.is_empty()
    }
}

/// Picks the batch-size index to probe this iteration.
///
/// Sizes that have never been probed are taken first, largest first, so the
/// very first iteration runs the largest batch. Once every size has history,
/// each size is scored by its loss reduction per queried pixel since its last
/// probe — `(last_loss - current top-s loss) / s` — and the best score wins,
/// ties and unmeasurable scores falling toward the larger size.
fn choose_size_index(losses: &[f32], ranked: &[usize], sizes: &[usize], probe: &ProbeState) -> usize {
    for i in (0..sizes.len()).rev() {
        if probe.last_loss(i).is_none() {
            return i;
        }
    }
    let mut best = 0;
    let mut best_score = f32::NEG_INFINITY;
    for (i, &s) in sizes.iter().enumerate() {
        let current: f32 = ranked[..s].iter().map(|&p| losses[p]).sum();
        let last = probe.last_loss(i).expect("all sizes probed");
        let score = if current.is_finite() && last.is_finite() {
            (last - current) / s as f32
        } else {
            f32::INFINITY
        };
        if score >= best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Adaptive pixel selection: returns the pixels to optimize this iteration
/// and the batch size chosen for them.
///
/// The batch is the top `chosen` entries of the loss ranking, so smaller
/// batches are always prefixes of larger ones and one render of the largest
/// candidate set serves every size. Unvisited pixels carry `+inf` loss, which
/// ranks them first and sweeps the whole frame during the earliest
/// iterations.
pub fn select_pixels_adaptive(
    per_pixel_losses: &[f32],
    config: &StegoConfig,
    probe: &ProbeState,
) -> Result<(Vec<usize>, usize)> {
    config.validate()?;
    if probe.len() != config.batch_sizes.len() {
        return Err(Error::invalid(format!(
            "probe history tracks {} sizes, config has {}",
            probe.len(),
            config.batch_sizes.len()
        )));
    }
    if config.max_batch() > per_pixel_losses.len() {
        return Err(Error::config(format!(
            "largest batch size {} exceeds the {} available pixels",
            config.max_batch(),
            per_pixel_losses.len()
        )));
    }
    let ranked = rank_pixels(per_pixel_losses);
    let idx = choose_size_index(per_pixel_losses, &ranked, &config.batch_sizes, probe);
    let s = config.batch_sizes[idx];
    Ok((ranked[..s].to_vec(), s))
}

/// Precomputed per-viewpoint data shared by every embedding iteration: ray
/// encodings, the deterministic sample grid, digests, and the cached clean
/// render the perturbation term pulls toward.
pub struct EmbedContext {
    pose: CameraPose,
    cfg: RenderConfig,
    viewpoint_id: [u8; 32],
    grid_hash: [u8; 32],
    n_rays: usize,
    n_samples: usize,
    enc_dim: usize,
    dir_dim: usize,
    enc_pos: Vec<f32>,
    enc_dir: Vec<f32>,
    delta_row: Vec<f32>,
    clean: Image,
}

impl EmbedContext {
    pub fn new(params: &RadianceFieldParams, pose: &CameraPose, cfg: &RenderConfig) -> Result<Self> {
        cfg.validate()?;
        pose.validate()?;
        let rays = generate_rays(pose)?;
        let n_rays = rays.len();
        let n = cfg.n_samples;
        let grid = SampleGrid::deterministic(n_rays, cfg.near, cfg.far, n)?;
        let mut points = Vec::with_capacity(n_rays * n);
        let mut dirs = Vec::with_capacity(n_rays * n);
        for (i, ray) in rays.iter().enumerate() {
            let (p, d) = ray_sample_points(ray, grid.t_row(i));
            points.extend_from_slice(&p);
            dirs.extend_from_slice(&d);
        }
        let enc_pos = crate::nerf::encode_position_rows(&points, params.l_pos(), cfg.coord_scale)?;
        let enc_dir = crate::nerf::encode_direction_rows(&dirs, params.l_dir())?;
        let clean = render_view(params, pose, cfg, None)?;
        Ok(EmbedContext {
            pose: pose.clone(),
            cfg: cfg.clone(),
            viewpoint_id: viewpoint_digest(pose, cfg),
            grid_hash: grid.digest(),
            n_rays,
            n_samples: n,
            enc_dim: params.enc_pos_dim(),
            dir_dim: params.enc_dir_dim(),
            enc_pos,
            enc_dir,
            delta_row: grid.delta_row(0).to_vec(),
            clean,
        })
    }

    pub fn viewpoint_id(&self) -> &[u8; 32] {
        &self.viewpoint_id
    }

    pub fn grid_hash(&self) -> &[u8; 32] {
        &self.grid_hash
    }

    pub fn n_rays(&self) -> usize {
        self.n_rays
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn enc_dim(&self) -> usize {
        self.enc_dim
    }

    /// The cached noise-free render of this viewpoint.
    pub fn clean(&self) -> &Image {
        &self.clean
    }

    /// Fresh zero noise bound to this viewpoint.
    pub fn zero_noise(&self) -> Result<NoiseField> {
        NoiseField::zeros(self.viewpoint_id, self.grid_hash, self.n_rays, self.n_samples, self.enc_dim)
    }

    /// Seeded Gaussian noise bound to this viewpoint.
    pub fn random_noise(&self, sigma: f32, seed: u64) -> Result<NoiseField> {
        NoiseField::random(
            self.viewpoint_id,
            self.grid_hash,
            self.n_rays,
            self.n_samples,
            self.enc_dim,
            sigma,
            seed,
        )
    }

    fn check_noise(&self, noise: &NoiseField) -> Result<()> {
        noise.check_binding(&self.viewpoint_id, &self.grid_hash)?;
        if noise.n_rays() != self.n_rays
            || noise.n_samples() != self.n_samples
            || noise.enc_dim() != self.enc_dim
        {
            return Err(Error::shape(format!(
                "noise shaped {:?} does not fit a {} ray x {} sample x {} component view",
                noise.values.shape(),
                self.n_rays,
                self.n_samples,
                self.enc_dim
            )));
        }
        Ok(())
    }

    fn check_pixels(&self, pixels: &[usize]) -> Result<()> {
        if pixels.is_empty() {
            return Err(Error::invalid("pixel batch is empty"));
        }
        if let Some(&bad) = pixels.iter().find(|&&p| p >= self.n_rays) {
            return Err(Error::invalid(format!("pixel index {bad} out of range for {} rays", self.n_rays)));
        }
        Ok(())
    }

    /// Renders the given pixels with the non-taped forward path.
    fn render_pixels(
        &self,
        params: &RadianceFieldParams,
        noise: Option<&NoiseField>,
        pixels: &[usize],
    ) -> Result<Vec<[f32; 3]>> {
        self.check_pixels(pixels)?;
        if let Some(nf) = noise {
            self.check_noise(nf)?;
        }
        let (n, d, dd) = (self.n_samples, self.enc_dim, self.dir_dim);
        let mut enc = Vec::with_capacity(pixels.len() * n * d);
        let mut dir = Vec::with_capacity(pixels.len() * n * dd);
        for &p in pixels {
            enc.extend_from_slice(&self.enc_pos[p * n * d..(p + 1) * n * d]);
            dir.extend_from_slice(&self.enc_dir[p * n * dd..(p + 1) * n * dd]);
        }
        if let Some(nf) = noise {
            for (i, &p) in pixels.iter().enumerate() {
                let span = &nf.values.data()[p * n * d..(p + 1) * n * d];
                for (e, v) in enc[i * n * d..(i + 1) * n * d].iter_mut().zip(span) {
                    *e += v;
                }
            }
        }
        let (rgb, sigma) = field_forward_raw(params, &enc, &dir)?;
        Ok((0..pixels.len())
            .map(|i| {
                composite_ray(&rgb[i * n * 3..(i + 1) * n * 3], &sigma[i * n..(i + 1) * n], &self.delta_row)
            })
            .collect())
    }
}

fn check_secret(secret: &Image, ctx: &EmbedContext) -> Result<()> {
    if secret.width() != ctx.pose.width as usize || secret.height() != ctx.pose.height as usize {
        return Err(Error::shape(format!(
            "secret is {}x{} but the viewpoint renders {}x{}",
            secret.width(),
            secret.height(),
            ctx.pose.width,
            ctx.pose.height
        )));
    }
    if secret.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("secret image has values outside [0, 1]"));
    }
    Ok(())
}

/// Sum of squared errors between the noisy render and the secret over the
/// given pixels.
pub fn stego_rgb_loss(
    ctx: &EmbedContext,
    params: &RadianceFieldParams,
    noise: &NoiseField,
    secret: &Image,
    pixels: &[usize],
) -> Result<f32> {
    check_secret(secret, ctx)?;
    let rendered = ctx.render_pixels(params, Some(noise), pixels)?;
    let mut acc = 0.0f64;
    for (&p, pix) in pixels.iter().zip(&rendered) {
        let want = secret.pixel(p / secret.width(), p % secret.width());
        for c in 0..3 {
            let d = f64::from(pix[c]) - f64::from(want[c]);
            acc += d * d;
        }
    }
    Ok(acc as f32)
}

/// Negated sum of squared differences between the noisy render and the cached
/// clean render over the given pixels; maximizing perturbation means driving
/// this term down.
pub fn perturb_loss(
    ctx: &EmbedContext,
    params: &RadianceFieldParams,
    noise: &NoiseField,
    pixels: &[usize],
) -> Result<f32> {
    let rendered = ctx.render_pixels(params, Some(noise), pixels)?;
    let mut acc = 0.0f64;
    for (&p, pix) in pixels.iter().zip(&rendered) {
        let clean = ctx.clean.pixel(p / ctx.clean.width(), p % ctx.clean.width());
        for c in 0..3 {
            let d = f64::from(pix[c]) - f64::from(clean[c]);
            acc += d * d;
        }
    }
    Ok(-(acc as f32))
}

/// Mutable optimizer state threaded through the embedding iterations.
pub struct EmbedState {
    /// Last measured rgb loss of each pixel; `+inf` until first visited.
    pub table: Vec<f32>,
    pub probe: ProbeState,
    pub adam: AdamState,
    /// Freshest known noisy value of every pixel (stale outside recent
    /// batches); drives the cheap per-iteration similarity estimate.
    pub tracked: Image,
}

impl EmbedState {
    pub fn new(ctx: &EmbedContext, config: &StegoConfig) -> Self {
        EmbedState {
            table: vec![f32::INFINITY; ctx.n_rays],
            probe: ProbeState::new(config.batch_sizes.len()),
            adam: AdamState::new(ctx.n_rays * ctx.n_samples * ctx.enc_dim),
            tracked: ctx.clean.clone(),
        }
    }
}

/// One embedding iteration's losses and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub total_loss: f32,
    pub rgb_loss: f32,
    pub perturb_loss: f32,
    pub batch_size: usize,
    /// Similarity of the tracked render buffer to the secret; `None` when the
    /// frame is too small for the similarity window.
    pub tracked_ssim: Option<f32>,
}

/// Full render measured at a milestone iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub iteration: u32,
    pub ssim: Option<f32>,
    pub psnr: f32,
    pub full_rgb_loss: f32,
}

/// Iterations at which [`embed`] measures a true full render: 50, 200, and
/// 300 when reached, plus the final iteration.
pub fn milestone_iterations(iters: u32) -> Vec<u32> {
    let mut m: Vec<u32> = [50u32, 200, 300].iter().copied().filter(|&t| t <= iters).collect();
    if iters >= 1 && !m.contains(&iters) {
        m.push(iters);
    }
    m.sort_unstable();
    m
}

/// Everything [`embed`] observed: per-iteration losses, milestone renders,
/// and the final quality of the extracted image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub iterations: Vec<IterationRecord>,
    pub milestones: Vec<Milestone>,
    pub final_ssim: Option<f32>,
    pub final_psnr: f32,
}

/// One optimization step on the noise field (the model is never touched).
///
/// Renders the largest candidate batch once, shares that pass across batch
/// sizes, updates only the chosen pixels' noise rows, refreshes the loss
/// table, and records the losses *before* the update.
pub fn noise_update_step(
    params: &RadianceFieldParams,
    ctx: &EmbedContext,
    noise: &mut NoiseField,
    secret: &Image,
    iteration: u32,
    config: &StegoConfig,
    state: &mut EmbedState,
) -> Result<IterationRecord> {
    step_impl(params, ctx, noise, secret, iteration, config, state, EmbedVariant::default())
}

#[allow(clippy::too_many_arguments)]
fn step_impl(
    params: &RadianceFieldParams,
    ctx: &EmbedContext,
    noise: &mut NoiseField,
    secret: &Image,
    iteration: u32,
    config: &StegoConfig,
    state: &mut EmbedState,
    variant: EmbedVariant,
) -> Result<IterationRecord> {
    if iteration == 0 {
        return Err(Error::invalid("iterations are 1-based"));
    }
    config.validate()?;
    ctx.check_noise(noise)?;
    check_secret(secret, ctx)?;
    let n_pixels = ctx.n_rays;
    let max_s = config.max_batch();
    if max_s > n_pixels {
        return Err(Error::config(format!(
            "largest batch size {max_s} exceeds the {n_pixels} available pixels"
        )));
    }
    if state.table.len() != n_pixels || state.probe.len() != config.batch_sizes.len() {
        return Err(Error::invalid("embedding state does not match this view and config"));
    }

    // Candidate pixels for the shared render, and how many of them (a prefix)
    // this iteration actually optimizes.
    let (candidates, chosen_idx) = if variant.adaptive_selection {
        let ranked = rank_pixels(&state.table);
        let idx = choose_size_index(&state.table, &ranked, &config.batch_sizes, &state.probe);
        (ranked[..max_s].to_vec(), idx)
    } else {
        let start = ((iteration as usize - 1) * max_s) % n_pixels;
        ((0..max_s).map(|k| (start + k) % n_pixels).collect(), config.batch_sizes.len() - 1)
    };
    let chosen_size = config.batch_sizes[chosen_idx];

    // Shared forward/backward pass over the full candidate set. Each pixel's
    // render depends only on its own noise rows, so the gradient rows of the
    // chosen prefix are exactly what a chosen-only pass would produce.
    let (n, d, dd) = (ctx.n_samples, ctx.enc_dim, ctx.dir_dim);
    let b = candidates.len();
    let mut noise_rows = Vec::with_capacity(b * n * d);
    let mut enc_rows = Vec::with_capacity(b * n * d);
    let mut dir_rows = Vec::with_capacity(b * n * dd);
    let mut secret_rows = Vec::with_capacity(b * 3);
    let mut clean_rows = Vec::with_capacity(b * 3);
    for &p in &candidates {
        noise_rows.extend_from_slice(&noise.values.data()[p * n * d..(p + 1) * n * d]);
        enc_rows.extend_from_slice(&ctx.enc_pos[p * n * d..(p + 1) * n * d]);
        dir_rows.extend_from_slice(&ctx.enc_dir[p * n * dd..(p + 1) * n * dd]);
        secret_rows.extend_from_slice(&secret.data()[p * 3..p * 3 + 3]);
        clean_rows.extend_from_slice(&ctx.clean.data()[p * 3..p * 3 + 3]);
    }
    let mut delta_rows = Vec::with_capacity(b * n);
    for _ in 0..b {
        delta_rows.extend_from_slice(&ctx.delta_row);
    }

    let tape = Tape::new();
    let noise_var = tape.leaf(Tensor::new(&[b * n, d], noise_rows)?.with_requires_grad(true));
    let enc_var = tape.constant(Tensor::new(&[b * n, d], enc_rows)?);
    let dir_var = tape.constant(Tensor::new(&[b * n, dd], dir_rows)?);
    let delta_var = tape.constant(Tensor::new(&[b, n], delta_rows)?);
    let vars = FieldVars::new(&tape, params, false);
    let input = noise_var.add(&enc_var)?;
    let (rgb, sigma) = field_forward_taped(&vars, &input, &dir_var)?;
    let pix = volume_render_rows(&rgb, &sigma, &delta_var, b, n)?;
    let secret_var = tape.constant(Tensor::new(&[b, 3], secret_rows.clone())?);
    let rgb_loss_all = pix.sub(&secret_var)?.square().sum_all();
    let use_perturb = variant.perturbation_loss && iteration <= config.mu;
    let root = if use_perturb {
        let clean_var = tape.constant(Tensor::new(&[b, 3], clean_rows.clone())?);
        let perturb_all = pix.sub(&clean_var)?.square().sum_all().scale(-1.0);
        rgb_loss_all.scale(config.lambda1).add(&perturb_all.scale(config.lambda2))?
    } else {
        rgb_loss_all
    };
    let grads = tape.backward(&root)?;
    let grad = grads.wrt(&noise_var).ok_or_else(|| Error::invalid("noise gradient missing"))?;
    let pix_values = pix.value();
    let pixv = pix_values.data();

    // Losses over the chosen prefix, recorded before the update.
    let mut rgb_acc = 0.0f64;
    let mut pert_acc = 0.0f64;
    for i in 0..chosen_size {
        for c in 0..3 {
            let dr = f64::from(pixv[i * 3 + c]) - f64::from(secret_rows[i * 3 + c]);
            rgb_acc += dr * dr;
            let dp = f64::from(pixv[i * 3 + c]) - f64::from(clean_rows[i * 3 + c]);
            pert_acc += dp * dp;
        }
    }
    let rgb_loss = rgb_acc as f32;
    let perturb = -(pert_acc as f32);
    let total = if use_perturb { config.lambda1 * rgb_loss + config.lambda2 * perturb } else { rgb_loss };

    // Only the chosen pixels' noise rows move; everything else is untouched
    // bit-for-bit. A zero effective learning rate is a null step.
    let lr_t = config.current_lr(iteration);
    if lr_t > 0.0 {
        let grad_rows = Tensor::new(&[b, n * d], grad.data().to_vec())?;
        let rows: Vec<(usize, usize)> =
            candidates[..chosen_size].iter().enumerate().map(|(i, &p)| (p, i)).collect();
        adam_step_rows(&mut noise.values, &grad_rows, &mut state.adam, lr_t, &rows)?;
    }

    // Refresh the loss table and tracked buffer from this render.
    let w = state.tracked.width();
    for (i, &p) in candidates.iter().enumerate() {
        let mut pl = 0.0f32;
        for c in 0..3 {
            let dv = pixv[i * 3 + c] - secret.data()[p * 3 + c];
            pl += dv * dv;
        }
        state.table[p] = pl;
        state.tracked.set_pixel(p / w, p % w, [pixv[i * 3], pixv[i * 3 + 1], pixv[i * 3 + 2]]);
    }
    if variant.adaptive_selection {
        state.probe.record(chosen_idx, rgb_loss);
    }
    let tracked_ssim = if w >= 11 && state.tracked.height() >= 11 {
        Some(ssim(&state.tracked, secret)?)
    } else {
        None
    };

    Ok(IterationRecord {
        iteration,
        total_loss: total,
        rgb_loss,
        perturb_loss: perturb,
        batch_size: chosen_size,
        tracked_ssim,
    })
}

fn measure_milestone(
    params: &RadianceFieldParams,
    ctx: &EmbedContext,
    noise: &NoiseField,
    secret: &Image,
    iteration: u32,
) -> Result<Milestone> {
    let img = render_view(params, &ctx.pose, &ctx.cfg, Some(noise))?;
    let mut acc = 0.0f64;
    for (&a, &b) in img.data().iter().zip(secret.data()) {
        let d = f64::from(a) - f64::from(b);
        acc += d * d;
    }
    let s = if img.width() >= 11 && img.height() >= 11 { Some(ssim(&img, secret)?) } else { None };
    Ok(Milestone { iteration, ssim: s, psnr: psnr(&img, secret)?, full_rgb_loss: acc as f32 })
}

/// Optimizes a fresh noise field so that rendering this viewpoint with it
/// reproduces `secret`. The model parameters are read, never written.
pub fn embed(
    params: &RadianceFieldParams,
    pose: &CameraPose,
    cfg: &RenderConfig,
    secret: &Image,
    config: &StegoConfig,
) -> Result<(NoiseField, EmbedReport)> {
    embed_with_variant(params, pose, cfg, secret, config, EmbedVariant::default())
}

/// [`embed`] with parts of the objective switched off (ablation support).
pub fn embed_with_variant(
    params: &RadianceFieldParams,
    pose: &CameraPose,
    cfg: &RenderConfig,
    secret: &Image,
    config: &StegoConfig,
    variant: EmbedVariant,
) -> Result<(NoiseField, EmbedReport)> {
    config.validate()?;
    let ctx = EmbedContext::new(params, pose, cfg)?;
    check_secret(secret, &ctx)?;
    if config.max_batch() > ctx.n_rays {
        return Err(Error::config(format!(
            "largest batch size {} exceeds the {} available pixels",
            config.max_batch(),
            ctx.n_rays
        )));
    }
    let mut noise = ctx.random_noise(config.noise_init_sigma, config.seed)?;
    let mut state = EmbedState::new(&ctx, config);
    let marks = milestone_iterations(config.iters);
    let mut iterations = Vec::with_capacity(config.iters as usize);
    let mut milestones = Vec::with_capacity(marks.len());
    for t in 1..=config.iters {
        iterations.push(step_impl(params, &ctx, &mut noise, secret, t, config, &mut state, variant)?);
        if marks.contains(&t) {
            milestones.push(measure_milestone(params, &ctx, &noise, secret, t)?);
        }
    }
    let last = milestones.last().expect("final milestone always measured");
    let report = EmbedReport {
        final_ssim: last.ssim,
        final_psnr: last.psnr,
        iterations,
        milestones,
    };
    Ok((noise, report))
}

/// Renders the viewpoint with its bound noise field, revealing the hidden
/// image. Purely a read: neither the model nor the noise is modified.
pub fn extract(
    params: &RadianceFieldParams,
    pose: &CameraPose,
    cfg: &RenderConfig,
    noise: &NoiseField,
) -> Result<Image> {
    render_view(params, pose, cfg, Some(noise))
}

/// Row-major layout of a large secret across per-viewpoint tiles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileMap {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_width: usize,
    pub tile_height: usize,
}

impl TileMap {
    pub fn n_tiles(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Top-left (row, col) of tile `index` in the assembled image.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        ((index / self.tiles_x) * self.tile_height, (index % self.tiles_x) * self.tile_width)
    }
}

/// Splits `secret` across `poses`: every pose must render the same
/// resolution, and the secret must divide evenly into exactly one tile per
/// pose, assigned row-major.
pub fn plan_tiles(secret: &Image, poses: &[CameraPose]) -> Result<TileMap> {
    let first = poses.first().ok_or_else(|| Error::invalid("tiling needs at least one pose"))?;
    let (tw, th) = (first.width as usize, first.height as usize);
    if poses.iter().any(|p| p.width as usize != tw || p.height as usize != th) {
        return Err(Error::invalid("all tile poses must render the same resolution"));
    }
    if secret.width() % tw != 0 || secret.height() % th != 0 {
        return Err(Error::shape(format!(
            "secret {}x{} does not divide into {}x{} tiles",
            secret.width(),
            secret.height(),
            tw,
            th
        )));
    }
    let map = TileMap {
        tiles_x: secret.width() / tw,
        tiles_y: secret.height() / th,
        tile_width: tw,
        tile_height: th,
    };
    if map.n_tiles() != poses.len() {
        return Err(Error::invalid(format!(
            "secret splits into {} tiles but {} poses were given",
            map.n_tiles(),
            poses.len()
        )));
    }
    Ok(map)
}

/// Crops tile `index` of the assembled layout out of `secret`.
pub fn tile_of(secret: &Image, map: &TileMap, index: usize) -> Result<Image> {
    if index >= map.n_tiles() {
        return Err(Error::invalid(format!("tile index {index} out of range for {} tiles", map.n_tiles())));
    }
    let (row0, col0) = map.origin(index);
    let mut tile = Image::new_black(map.tile_width, map.tile_height)?;
    tile.blit_from(secret, row0, col0)?;
    Ok(tile)
}

/// Embeds a large secret by splitting it into per-viewpoint tiles, one
/// independent noise field per pose.
pub fn embed_tiled(
    params: &RadianceFieldParams,
    poses: &[CameraPose],
    cfg: &RenderConfig,
    secret: &Image,
    config: &StegoConfig,
) -> Result<(Vec<NoiseField>, Vec<EmbedReport>, TileMap)> {
    let map = plan_tiles(secret, poses)?;
    let mut fields = Vec::with_capacity(poses.len());
    let mut reports = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let tile = tile_of(secret, &map, i)?;
        let (nf, report) = embed(params, pose, cfg, &tile, config)?;
        fields.push(nf);
        reports.push(report);
    }
    Ok((fields, reports, map))
}

/// Reassembles extracted tiles into the full secret (inverse of the tiling in
/// [`embed_tiled`]).
pub fn assemble_tiles(tiles: &[Image], map: &TileMap) -> Result<Image> {
    if tiles.len() != map.n_tiles() {
        return Err(Error::invalid(format!(
            "assembly wants {} tiles, got {}",
            map.n_tiles(),
            tiles.len()
        )));
    }
    let mut out = Image::new_black(map.tiles_x * map.tile_width, map.tiles_y * map.tile_height)?;
    for (i, tile) in tiles.iter().enumerate() {
        if tile.width() != map.tile_width || tile.height() != map.tile_height {
            return Err(Error::shape(format!(
                "tile {} is {}x{}, expected {}x{}",
                i,
                tile.width(),
                tile.height(),
                map.tile_width,
                map.tile_height
            )));
        }
        let (row0, col0) = map.origin(i);
        for r in 0..map.tile_height {
            for c in 0..map.tile_width {
                out.set_pixel(row0 + r, col0 + c, tile.pixel(r, c));
            }
        }
    }
    Ok(out)
}
