//! Tracking data to training data: ingestion, temporal smoothing,
//! intensity normalization, balanced frame selection and region masks.

mod manifest;
mod normalize;
mod preprocess;
mod regions;
mod sampling;
mod savgol;
mod tracking;

pub use self::manifest::{
    read_dataset_manifest, write_dataset_manifest, DatasetManifest, FrameRecord, MANIFEST_VERSION,
};
pub use self::normalize::{normalize_au, Normalization, DEFAULT_ALPHA};
pub use self::preprocess::{frame_image, preprocess, read_poses, PoseRecord, PreprocessConfig};
pub use self::regions::{
    brow_boundary, build_region_masks, canonical_landmarks, fill_polygon, polygon_area, region_polygons, Landmarks,
    RegionMaskImage, RegionTopology,
};
pub use self::sampling::{balanced_sample, block_imbalance, build_blocks, uniform_sample, AuBlock, Quantizer};
pub use self::savgol::{savgol_coefficients, savgol_filter, smooth_au_tracks};
pub use self::tracking::{
    ingest_tracking_csv, write_tracking_csv, TrackingFrame, TrackingLog, AU_MAX_INTENSITY, AU_NAMES, LANDMARK_COUNT,
};
