use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{FieldConfig, NetShape};
use super::network::SceneField;
use crate::error::{Error, Result};
use crate::facs::Normalization;
use crate::numerics::{DenseArray, ParamStore, Real};
use crate::render::CameraModel;
use crate::synthetic::BlobSceneSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNFS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON sidecar stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: FieldConfig,
    pub attribute_names: Vec<String>,
    pub normalization: Option<Normalization>,
    pub scene: Option<BlobSceneSpec>,
    pub reference_omega: Vec<f64>,
    pub reference_psi: Vec<f64>,
    /// Camera of the first training frame; default view for renders.
    #[serde(default)]
    pub reference_camera: Option<CameraModel>,
    pub step: u64,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn header(c: &FieldConfig) -> Vec<u32> {
    let mut h = vec![
        c.attribute_count() as u32,
        c.region_count() as u32,
        c.latent_count as u32,
        c.deformation_dim as u32,
        c.appearance_dim as u32,
        c.hyper_dim as u32,
        c.position_frequencies as u32,
        c.direction_frequencies as u32,
        c.color_width as u32,
    ];
    h.extend(c.topology.attribute_region.iter().map(|&r| r as u32));
    let shape = |h: &mut Vec<u32>, s: &NetShape| {
        h.push(s.hidden.len() as u32);
        h.extend(s.hidden.iter().map(|&w| w as u32));
        h.push(s.skip.map_or(u32::MAX, |s| s as u32));
    };
    for s in [
        &c.attribute_net,
        &c.deformation_net,
        &c.slicing_net,
        &c.mask_net,
        &c.uncertainty_net,
        &c.template_net,
    ] {
        shape(&mut h, s);
    }
    h
}

/// Write the weights (little-endian f32 blocks in declaration order after
/// the magic, version and architecture header) plus the JSON sidecar.
pub fn save_checkpoint<S: Real>(
    field: &SceneField<S>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    if &meta.config != field.config() {
        return Err(Error::Checkpoint("sidecar config differs from the field".into()));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let put = |buf: &mut Vec<u8>, v: u32| buf.extend_from_slice(&v.to_le_bytes());
    put(&mut buf, CHECKPOINT_VERSION);
    let h = header(field.config());
    put(&mut buf, h.len() as u32);
    for v in h {
        put(&mut buf, v);
    }
    let blocks = field.store().blocks();
    put(&mut buf, blocks.len() as u32);
    for b in blocks {
        put(&mut buf, b.name.len() as u32);
        buf.extend_from_slice(b.name.as_bytes());
        put(&mut buf, b.value.shape().len() as u32);
        for &d in b.value.shape() {
            put(&mut buf, d as u32);
        }
        for v in b.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    fs::write(sidecar(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Load weights and sidecar; the binary header must agree with the sidecar
/// configuration.
pub fn load_checkpoint(path: &Path) -> Result<(SceneField<f32>, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    let stored = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    if stored != header(&meta.config) {
        return Err(Error::Checkpoint("architecture header does not match the sidecar".into()));
    }
    let count = c.u32()? as usize;
    let mut store = ParamStore::<f32>::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let value = DenseArray::new(shape, data)?;
        if !value.is_finite() {
            return Err(Error::Checkpoint(format!("block {name} holds non-finite values")));
        }
        store.add(name, value);
    }
    if c.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let expected = SceneField::<f32>::new(meta.config.clone(), 0)?;
    let layout_matches = expected.store().blocks().len() == store.blocks().len()
        && expected
            .store()
            .blocks()
            .iter()
            .zip(store.blocks())
            .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
    if !layout_matches {
        return Err(Error::Checkpoint("parameter blocks do not match the architecture".into()));
    }
    let mut field = SceneField::from_store(meta.config.clone(), store)?;
    if meta.reference_omega.len() != meta.config.deformation_dim
        || meta.reference_psi.len() != meta.config.appearance_dim
    {
        return Err(Error::Checkpoint("reference codes have the wrong length".into()));
    }
    field.reference_omega = meta.reference_omega.clone();
    field.reference_psi = meta.reference_psi.clone();
    Ok((field, meta))
}
