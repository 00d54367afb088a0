//! Pinhole camera poses and per-pixel ray generation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A camera with position, orthonormal forward/up axes, vertical field of view
/// in radians, and an output resolution in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub position: [f32; 3],
    pub forward: [f32; 3],
    pub up: [f32; 3],
    pub fov_y: f32,
    pub width: u32,
    pub height: u32,
}

/// One camera ray: unit direction through a pixel center.
#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f32; 3],
    pub direction: [f32; 3],
    /// (row, col) of the pixel this ray shoots through.
    pub pixel_index: (u32, u32),
}

pub(crate) fn dot3(a: [f32; 3], b: [f32; 3]) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3(a: [f32; 3]) -> f32 {
    dot3(a, a).sqrt()
}

pub(crate) fn normalize3(a: [f32; 3]) -> [f32; 3] {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

const AXIS_TOL: f32 = 1e-5;

impl CameraPose {
    /// Builds a pose at `position` looking at `target`, roll chosen from
    /// `up_hint` (falling back to the z axis when the view is near-vertical).
    pub fn look_at(
        position: [f32; 3],
        target: [f32; 3],
        up_hint: [f32; 3],
        fov_y: f32,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let to = [
            target[0] - position[0],
            target[1] - position[1],
            target[2] - position[2],
        ];
        if norm3(to) < 1e-8 {
            return Err(Error::invalid("camera position coincides with its target"));
        }
        let forward = normalize3(to);
        let mut hint = up_hint;
        if norm3(cross3(forward, hint)) < 1e-4 {
            hint = [0.0, 0.0, 1.0];
            if norm3(cross3(forward, hint)) < 1e-4 {
                hint = [0.0, 1.0, 0.0];
            }
        }
        let right = normalize3(cross3(forward, hint));
        let up = normalize3(cross3(right, forward));
        let pose = CameraPose { position, forward, up, fov_y, width, height };
        pose.validate()?;
        Ok(pose)
    }

    /// Checks the orthonormality, field-of-view, and resolution invariants.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("position", self.position), ("forward", self.forward), ("up", self.up)] {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("camera {name} has non-finite components")));
            }
        }
        if (norm3(self.forward) - 1.0).abs() > AXIS_TOL {
            return Err(Error::invalid("camera forward is not unit length"));
        }
        if (norm3(self.up) - 1.0).abs() > AXIS_TOL {
            return Err(Error::invalid("camera up is not unit length"));
        }
        if dot3(self.forward, self.up).abs() > AXIS_TOL {
            return Err(Error::invalid("camera forward and up are not perpendicular"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f32::consts::PI) {
            return Err(Error::invalid(format!("fov_y must lie in (0, pi), got {}", self.fov_y)));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        Ok(())
    }

    /// The screen-right axis completing the orthonormal frame.
    pub fn right(&self) -> [f32; 3] {
        normalize3(cross3(self.forward, self.up))
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// One ray through every pixel center, row-major. Deterministic in the pose.
pub fn generate_rays(pose: &CameraPose) -> Result<Vec<Ray>> {
    pose.validate()?;
    let right = pose.right();
    let tan_half = (pose.fov_y * 0.5).tan();
    let aspect = pose.width as f32 / pose.height as f32;
    let (w, h) = (pose.width as f32, pose.height as f32);
    let mut rays = Vec::with_capacity(pose.n_pixels());
    for row in 0..pose.height {
        let y_ndc = 1.0 - 2.0 * (row as f32 + 0.5) / h;
        let dy = y_ndc * tan_half;
        for col in 0..pose.width {
            let x_ndc = 2.0 * (col as f32 + 0.5) / w - 1.0;
            let dx = x_ndc * tan_half * aspect;
            let dir = [
                pose.forward[0] + dx * right[0] + dy * pose.up[0],
                pose.forward[1] + dx * right[1] + dy * pose.up[1],
                pose.forward[2] + dx * right[2] + dy * pose.up[2],
            ];
            rays.push(Ray {
                origin: pose.position,
                direction: normalize3(dir),
                pixel_index: (row, col),
            });
        }
    }
    Ok(rays)
}
