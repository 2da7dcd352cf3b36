//! Procedural ground truth: Gaussian blobs whose size and position are
//! driven by attributes, rendered from an orbit, plus an oracle that reads
//! attribute values back out of images.

mod dataset;
mod oracle;
mod scene;

pub use self::dataset::{attribute_trajectory, generate_dataset, SOLO_FRAMES, WAYPOINT_SPACING};
pub use self::oracle::{footprint, oracle_measure, Footprint, Oracle, FOOTPRINT_FLOOR, VISIBLE_MASS};
pub use self::scene::{
    analytic_field, analytic_labels, render_analytic, AnalyticField, AttributeBinding, BlobRegion, BlobSceneSpec,
    Effect, OrbitSpec, LABEL_THRESHOLD,
};
