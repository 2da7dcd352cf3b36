//! Image metrics and the evaluation protocols: attribute fidelity, region
//! leakage, interpolation quality and attribute transfer.

mod metrics;
mod protocols;

pub use self::metrics::{icc, ms_ssim, ms_ssim_scales, psnr, MS_SSIM_WEIGHTS, PSNR_CAP};
pub use self::protocols::{
    color_change, decoupling_score, dilate, frame_codes, frame_quality, icc_protocol, interpolation_eval,
    region_support, temporal_change, training_view_quality, transfer_controls, transfer_expressions,
    AnalyticRenderer, AttributeIcc, AttributeRenderer, DecouplingReport, FieldRenderer, FrameQuality, IccReport,
    QualityReport, SourceTrack, TransferControls, MASK_DILATION, RAMP_POINTS,
};
