//! The tiny radiance field: positional encoding, pinhole cameras and rays,
//! sample grids along rays, the MLP field, volume rendering, and training.

mod camera;
mod encoding;
mod field;
mod render;
mod sampling;
mod train;

pub use camera::{generate_rays, CameraPose, Ray};
pub use encoding::{encode_direction_rows, encode_position_rows, positional_encode};
pub use field::{
    field_eval, field_forward_raw, field_forward_taped, FieldVars, RadianceFieldParams,
    N_PARAM_TENSORS,
};
pub use render::{
    composite_ray, render_view, render_view_with_workers, transmittance_weights, viewpoint_digest,
    volume_render, volume_render_rows, RenderConfig, DEFAULT_RAY_CHUNK,
};
pub(crate) use render::ray_sample_points;
pub use sampling::{sample_along_ray, SampleGrid, FAR_DELTA_CAP};
pub use train::{minibatch_indices, train_nerf, train_nerf_range, TrainConfig};
