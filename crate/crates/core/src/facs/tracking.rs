use std::collections::HashMap;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

/// Action units reported by the tracker, in column order.
pub const AU_NAMES: [&str; 17] = [
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12", "AU14", "AU15", "AU17", "AU20",
    "AU23", "AU25", "AU26", "AU45",
];

pub const AU_MAX_INTENSITY: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingFrame {
    pub frame: usize,
    pub timestamp: f64,
    pub landmarks: [[f64; 2]; LANDMARK_COUNT],
    pub au: [f64; 17],
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackingLog {
    pub frames: Vec<TrackingFrame>,
    pub dropped: usize,
    pub clamped: usize,
}

/// Reads an OpenFace-style CSV. Header names are trimmed; failed detections
/// are dropped and AU intensities outside `[0, 5]` are clamped.
pub fn ingest_tracking_csv(path: &Path) -> Result<TrackingLog> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |name: &str| index.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()));

    let frame_col = column("frame")?;
    let time_col = column("timestamp")?;
    let success_col = column("success")?;
    let confidence_col = index.get("confidence").copied();
    let mut xs = [0; LANDMARK_COUNT];
    let mut ys = [0; LANDMARK_COUNT];
    for k in 0..LANDMARK_COUNT {
        xs[k] = column(&format!("x_{k}"))?;
        ys[k] = column(&format!("y_{k}"))?;
    }
    let mut aus = [0; 17];
    for (slot, name) in aus.iter_mut().zip(AU_NAMES) {
        *slot = column(&format!("{name}_r"))?;
    }

    let mut log = TrackingLog::default();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        rows += 1;
        let field = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::Format(format!("row {}: column '{}' is not a number: '{raw}'", line + 2, &headers[col]))
            })
        };
        if field(success_col)? == 0.0 {
            log.dropped += 1;
            continue;
        }
        let mut frame = TrackingFrame {
            frame: field(frame_col)? as usize,
            timestamp: field(time_col)?,
            landmarks: [[0.0; 2]; LANDMARK_COUNT],
            au: [0.0; 17],
            confidence: confidence_col.map(field).transpose()?.unwrap_or(1.0),
        };
        for k in 0..LANDMARK_COUNT {
            frame.landmarks[k] = [field(xs[k])?, field(ys[k])?];
        }
        for (a, &col) in aus.iter().enumerate() {
            let v = field(col)?;
            let c = v.clamp(0.0, AU_MAX_INTENSITY);
            if c != v {
                warn!("frame {}: {} intensity {v} clamped to {c}", frame.frame, AU_NAMES[a]);
                log.clamped += 1;
            }
            frame.au[a] = c;
        }
        log.frames.push(frame);
    }
    if rows == 0 {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    if log.dropped > 0 {
        warn!("dropped {} of {rows} rows with failed detection", log.dropped);
    }
    log.frames.sort_by_key(|f| f.frame);
    Ok(log)
}

/// Writes frames back out in the same column layout (used by fixtures and tools).
pub fn write_tracking_csv(path: &Path, frames: &[TrackingFrame]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["frame".to_string(), "timestamp".into(), "confidence".into(), "success".into()];
    header.extend((0..LANDMARK_COUNT).map(|k| format!("x_{k}")));
    header.extend((0..LANDMARK_COUNT).map(|k| format!("y_{k}")));
    header.extend(AU_NAMES.iter().map(|n| format!("{n}_r")));
    w.write_record(&header)?;
    for f in frames {
        let mut row = vec![f.frame.to_string(), f.timestamp.to_string(), f.confidence.to_string(), "1".into()];
        row.extend(f.landmarks.iter().map(|p| p[0].to_string()));
        row.extend(f.landmarks.iter().map(|p| p[1].to_string()));
        row.extend(f.au.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
