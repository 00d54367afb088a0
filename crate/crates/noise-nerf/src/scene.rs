//! Procedural analytic scenes, the oracle renderer that produces ground-truth
//! views, dataset assembly, and procedural secret images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::nerf::{composite_ray, generate_rays, ray_sample_points, CameraPose, RenderConfig, SampleGrid};
use crate::{Error, Result};

/// One constant-density primitive. `size` is a radius for spheres and the
/// full edge lengths for boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f32; 3], size: f32, color: [f32; 3], density: f32 },
    Box { center: [f32; 3], size: [f32; 3], color: [f32; 3], density: f32 },
}

impl Primitive {
    pub fn color(&self) -> [f32; 3] {
        match self {
            Primitive::Sphere { color, .. } | Primitive::Box { color, .. } => *color,
        }
    }

    pub fn density(&self) -> f32 {
        match self {
            Primitive::Sphere { density, .. } | Primitive::Box { density, .. } => *density,
        }
    }

    pub fn contains(&self, x: [f32; 3]) -> bool {
        match self {
            Primitive::Sphere { center, size, .. } => {
                let d2: f32 = (0..3).map(|k| (x[k] - center[k]).powi(2)).sum();
                d2 <= size * size
            }
            Primitive::Box { center, size, .. } => {
                (0..3).all(|k| (x[k] - center[k]).abs() <= size[k] * 0.5)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (center, color, density) = match self {
            Primitive::Sphere { center, color, density, .. }
            | Primitive::Box { center, color, density, .. } => (center, color, density),
        };
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("primitive center must be finite"));
        }
        if !density.is_finite() || *density < 0.0 {
            return Err(Error::invalid(format!("density must be finite and >= 0, got {density}")));
        }
        if color.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("primitive colors must lie in [0, 1]"));
        }
        match self {
            Primitive::Sphere { center, size, .. } => {
                if !size.is_finite() || *size <= 0.0 {
                    return Err(Error::invalid(format!("sphere radius must be positive, got {size}")));
                }
                if center.iter().any(|c| c.abs() + size > 1.0) {
                    return Err(Error::invalid("sphere leaves the [-1, 1]^3 scene cube"));
                }
            }
            Primitive::Box { center, size, .. } => {
                if size.iter().any(|s| !s.is_finite() || *s <= 0.0) {
                    return Err(Error::invalid("box edge lengths must be positive"));
                }
                if (0..3).any(|k| center[k].abs() + size[k] * 0.5 > 1.0) {
                    return Err(Error::invalid("box leaves the [-1, 1]^3 scene cube"));
                }
            }
        }
        Ok(())
    }
}

/// A scene as a union of constant-density primitives over a black background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }

    /// Names accepted by [`AnalyticScene::named`].
    pub fn names() -> &'static [&'static str] {
        &["tri-sphere", "orb", "blocks"]
    }

    /// Looks up a built-in scene by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "tri-sphere" => Some(Self::tri_sphere()),
            "orb" => Some(AnalyticScene {
                primitives: vec![Primitive::Sphere {
                    center: [0.0, 0.05, 0.0],
                    size: 0.55,
                    color: [0.85, 0.6, 0.2],
                    density: 8.0,
                }],
            }),
            "blocks" => Some(AnalyticScene {
                primitives: vec![
                    Primitive::Box {
                        center: [-0.35, -0.3, 0.1],
                        size: [0.5, 0.7, 0.5],
                        color: [0.2, 0.55, 0.85],
                        density: 8.0,
                    },
                    Primitive::Box {
                        center: [0.4, -0.45, -0.2],
                        size: [0.6, 0.4, 0.6],
                        color: [0.9, 0.8, 0.25],
                        density: 8.0,
                    },
                    Primitive::Sphere {
                        center: [0.15, 0.3, 0.2],
                        size: 0.3,
                        color: [0.85, 0.25, 0.4],
                        density: 8.0,
                    },
                ],
            }),
            _ => None,
        }
    }

    /// The standard test scene: three colored spheres of density 8.
    pub fn tri_sphere() -> Self {
        AnalyticScene {
            primitives: vec![
                Primitive::Sphere {
                    center: [-0.45, -0.1, 0.0],
                    size: 0.42,
                    color: [0.9, 0.2, 0.15],
                    density: 8.0,
                },
                Primitive::Sphere {
                    center: [0.42, -0.15, 0.25],
                    size: 0.38,
                    color: [0.15, 0.75, 0.3],
                    density: 8.0,
                },
                Primitive::Sphere {
                    center: [0.05, 0.42, -0.3],
                    size: 0.4,
                    color: [0.2, 0.35, 0.95],
                    density: 8.0,
                },
            ],
        }
    }
}

/// Ground-truth radiance at a point: densities of containing primitives sum,
/// colors blend weighted by density, and empty space is black.
pub fn scene_field(scene: &AnalyticScene, x: [f32; 3]) -> ([f32; 3], f32) {
    let mut sigma = 0.0f32;
    let mut color = [0.0f32; 3];
    for p in &scene.primitives {
        if p.contains(x) {
            let d = p.density();
            sigma += d;
            for k in 0..3 {
                color[k] += d * p.color()[k];
            }
        }
    }
    if sigma > 0.0 {
        for k in 0..3 {
            color[k] /= sigma;
        }
    }
    (color, sigma)
}

/// Renders the analytic scene through the same deterministic sample grid and
/// compositing arithmetic the neural renderer uses, with `scene_field` in
/// place of the network.
pub fn oracle_render(scene: &AnalyticScene, pose: &CameraPose, cfg: &RenderConfig) -> Result<Image> {
    scene.validate()?;
    cfg.validate()?;
    pose.validate()?;
    let rays = generate_rays(pose)?;
    let grid = SampleGrid::deterministic(rays.len(), cfg.near, cfg.far, cfg.n_samples)?;
    let mut img = Image::new_black(pose.width as usize, pose.height as usize)?;
    for (i, ray) in rays.iter().enumerate() {
        let (points, _) = ray_sample_points(ray, grid.t_row(i));
        let mut colors = Vec::with_capacity(points.len() * 3);
        let mut sigmas = Vec::with_capacity(points.len());
        for p in points {
            let (c, s) = scene_field(scene, p);
            colors.extend_from_slice(&c);
            sigmas.push(s);
        }
        let pix = composite_ray(&colors, &sigmas, grid.delta_row(i));
        img.set_pixel(ray.pixel_index.0 as usize, ray.pixel_index.1 as usize, pix);
    }
    Ok(img)
}

/// Vertical field of view shared by all generated dataset poses.
pub const DATASET_FOV_Y: f32 = 0.8;

/// Quadrature depth of ground-truth dataset renders.
pub const ORACLE_SAMPLES: usize = 192;

/// Render geometry for cameras on a ring of the given radius: the depth range
/// brackets the scene cube and positions are rescaled by `far` before
/// encoding so every sample lands in the encoder's comfortable range.
pub fn dataset_render_config(radius: f32, n_samples: usize) -> RenderConfig {
    let far = radius + 1.9;
    RenderConfig { near: (radius - 1.9).max(1e-3), far, n_samples, coord_scale: far }
}

/// Camera ring: `n_views` poses at the given radius, azimuths evenly spaced
/// with a seeded phase, elevations wobbling around a gentle base angle, every
/// camera looking at the origin.
pub fn make_poses(n_views: usize, resolution: u32, radius: f32, seed: u64) -> Result<Vec<CameraPose>> {
    if n_views == 0 {
        return Err(Error::invalid("a dataset needs at least one view"));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::invalid(format!("ring radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    let mut poses = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let azimuth = phase + std::f32::consts::TAU * i as f32 / n_views as f32;
        let elevation = 0.35 + rng.random_range(-0.15..0.15f32);
        let position = [
            radius * elevation.cos() * azimuth.cos(),
            radius * elevation.sin(),
            radius * elevation.cos() * azimuth.sin(),
        ];
        poses.push(CameraPose::look_at(position, [0.0; 3], [0.0, 1.0, 0.0], DATASET_FOV_Y, resolution, resolution)?);
    }
    Ok(poses)
}

/// Ground-truth dataset: ring poses plus their oracle renders.
pub fn make_dataset(
    scene: &AnalyticScene,
    n_views: usize,
    resolution: u32,
    radius: f32,
    seed: u64,
) -> Result<Vec<(CameraPose, Image)>> {
    let cfg = dataset_render_config(radius, ORACLE_SAMPLES);
    make_poses(n_views, resolution, radius, seed)?
        .into_iter()
        .map(|pose| {
            let img = oracle_render(scene, &pose, &cfg)?;
            Ok((pose, img))
        })
        .collect()
}

/// A close-up pose framing the first primitive from just outside, used as the
/// standard embedding viewpoint. The framing keeps every ray inside the
/// primitive's silhouette, so each pixel's ray crosses dense matter and stays
/// steerable by input noise (rays through empty space render black with zero
/// gradient everywhere).
pub fn close_up_pose(scene: &AnalyticScene, resolution: u32) -> Result<CameraPose> {
    let first = scene
        .primitives
        .first()
        .ok_or_else(|| Error::invalid("an empty scene has no embedding viewpoint"))?;
    let (center, reach) = match first {
        Primitive::Sphere { center, size, .. } => (*center, *size),
        Primitive::Box { center, size, .. } => {
            (*center, size.iter().copied().fold(f32::INFINITY, f32::min) * 0.5)
        }
    };
    // Unit offset direction, slightly off-axis so the view is not degenerate.
    let dir = [0.28, 0.23, 0.93];
    let len = (dir.iter().map(|v| v * v).sum::<f32>()).sqrt();
    let d = 2.0 * reach;
    let position = [
        center[0] + d * dir[0] / len,
        center[1] + d * dir[1] / len,
        center[2] + d * dir[2] / len,
    ];
    CameraPose::look_at(position, center, [0.0, 1.0, 0.0], 0.6, resolution, resolution)
}

/// Families of procedural secret images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecretKind {
    Checker,
    Gradient,
    TextGlyph,
    RandomSmooth,
}

/// A procedural secret plus the recipe that regenerates it bit-identically.
#[derive(Clone, Debug)]
pub struct SecretImage {
    pub image: Image,
    pub kind: SecretKind,
    pub seed: u64,
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
}

/// 5x7 bitmaps for a few capital letters, row-major, one bit per cell.
const GLYPHS: [(char, [u8; 7]); 8] = [
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('N', [0b10001, 0b11001, 0b11001, 0b10101, 0b10011, 0b10011, 0b10001]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('X', [0b10001, 0b01010, 0b01010, 0b00100, 0b01010, 0b01010, 0b10001]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
];

/// Deterministic procedural secret of at least 8x8 pixels.
pub fn make_secret(kind: SecretKind, width: usize, height: usize, seed: u64) -> Result<SecretImage> {
    if width < 8 || height < 8 {
        return Err(Error::invalid(format!("secrets must be at least 8x8, got {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new_black(width, height)?;
    match kind {
        SecretKind::Checker => {
            let a = random_color(&mut rng, 0.6, 1.0);
            let b = random_color(&mut rng, 0.0, 0.35);
            for r in 0..height {
                for c in 0..width {
                    let color = if (r / 2 + c / 2) % 2 == 0 { a } else { b };
                    img.set_pixel(r, c, color);
                }
            }
        }
        SecretKind::Gradient => {
            let a = random_color(&mut rng, 0.0, 1.0);
            let b = random_color(&mut rng, 0.0, 1.0);
            for c in 0..width {
                let v = c as f32 / (width - 1) as f32;
                for r in 0..height {
                    let mix = [
                        a[0] + v * (b[0] - a[0]),
                        a[1] + v * (b[1] - a[1]),
                        a[2] + v * (b[2] - a[2]),
                    ];
                    img.set_pixel(r, c, mix);
                }
            }
        }
        SecretKind::TextGlyph => {
            let fg = random_color(&mut rng, 0.7, 1.0);
            let bg = random_color(&mut rng, 0.0, 0.25);
            let (_, rows) = GLYPHS[(seed % GLYPHS.len() as u64) as usize];
            for r in 0..height {
                for c in 0..width {
                    // Nearest-neighbor scale of the 5x7 bitmap with a margin.
                    let gr = (r * 9 / height).saturating_sub(1);
                    let gc = (c * 7 / width).saturating_sub(1);
                    let on = gr < 7 && gc < 5 && (rows[gr] >> (4 - gc)) & 1 == 1;
                    img.set_pixel(r, c, if on { fg } else { bg });
                }
            }
        }
        SecretKind::RandomSmooth => {
            // Bilinear upsampling of a coarse 5x5 random color lattice.
            const G: usize = 5;
            let mut lattice = [[0.0f32; 3]; G * G];
            for cell in &mut lattice {
                *cell = random_color(&mut rng, 0.0, 1.0);
            }
            for r in 0..height {
                let y = r as f32 / (height - 1) as f32 * (G - 1) as f32;
                let (y0, fy) = (y.floor() as usize, y.fract());
                let y1 = (y0 + 1).min(G - 1);
                for c in 0..width {
                    let x = c as f32 / (width - 1) as f32 * (G - 1) as f32;
                    let (x0, fx) = (x.floor() as usize, x.fract());
                    let x1 = (x0 + 1).min(G - 1);
                    let mut out = [0.0f32; 3];
                    for k in 0..3 {
                        let top = lattice[y0 * G + x0][k] * (1.0 - fx) + lattice[y0 * G + x1][k] * fx;
                        let bot = lattice[y1 * G + x0][k] * (1.0 - fx) + lattice[y1 * G + x1][k] * fx;
                        out[k] = top * (1.0 - fy) + bot * fy;
                    }
                    img.set_pixel(r, c, out);
                }
            }
        }
    }
    Ok(SecretImage { image: img, kind, seed })
}
