//! Cameras, ray sampling and the volume-rendering quadrature.

mod camera;
mod composite;
mod image;
mod rays;
mod volume;

pub use self::camera::CameraModel;
pub use self::composite::{composite_color, composite_mask, quadrature_weights, Composite, RaySample};
pub use self::image::{load_labels, load_rgb, save_labels, save_rgb, DepthRange, RenderedImage};
pub use self::rays::{all_pixels, generate_rays, intervals, linspace, sample_along_ray, Ray};
pub use self::volume::{render_image, render_rays_tape, RayBatchVars, RenderOptions};
