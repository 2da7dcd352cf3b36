use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facs::RegionTopology;
use crate::numerics::encoded_dim;

/// Hidden layer widths plus an optional skip (input re-concatenated before
/// that hidden layer).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub skip: Option<usize>,
}

impl NetShape {
    pub fn new(hidden: &[usize], skip: Option<usize>) -> Self {
        Self {
            hidden: hidden.to_vec(),
            skip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub topology: RegionTopology,
    /// Rows of the per-frame code tables.
    pub latent_count: usize,
    pub deformation_dim: usize,
    pub appearance_dim: usize,
    pub hyper_dim: usize,
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
    /// Positions are multiplied by this before encoding.
    pub position_scale: f64,
    pub max_offset: f64,
    pub beta_floor: f64,
    pub density_bias: f64,
    pub attribute_net: NetShape,
    pub deformation_net: NetShape,
    pub slicing_net: NetShape,
    pub mask_net: NetShape,
    pub uncertainty_net: NetShape,
    pub template_net: NetShape,
    pub color_width: usize,
}

impl FieldConfig {
    /// Widths sized for single-core CPU training on small scenes.
    pub fn desk(topology: RegionTopology, latent_count: usize) -> Self {
        Self {
            topology,
            latent_count,
            deformation_dim: 8,
            appearance_dim: 8,
            hyper_dim: 2,
            position_frequencies: 8,
            direction_frequencies: 4,
            position_scale: 0.5,
            max_offset: 0.25,
            beta_floor: 1e-3,
            density_bias: -2.0,
            attribute_net: NetShape::new(&[32; 6], Some(4)),
            deformation_net: NetShape::new(&[32, 32], None),
            slicing_net: NetShape::new(&[32, 32], None),
            mask_net: NetShape::new(&[32, 32], None),
            uncertainty_net: NetShape::new(&[128, 128, 128, 128, 64], None),
            template_net: NetShape::new(&[64; 4], Some(2)),
            color_width: 32,
        }
    }

    /// Widths of the full-size model.
    pub fn full(topology: RegionTopology, latent_count: usize) -> Self {
        Self {
            deformation_net: NetShape::new(&[128; 6], Some(4)),
            slicing_net: NetShape::new(&[64; 6], Some(4)),
            mask_net: NetShape::new(&[128, 128, 128, 128, 64], None),
            template_net: NetShape::new(&[256; 8], Some(5)),
            color_width: 128,
            ..Self::desk(topology, latent_count)
        }
    }

    pub fn attribute_count(&self) -> usize {
        self.topology.attribute_count()
    }

    pub fn region_count(&self) -> usize {
        self.topology.region_count
    }

    pub fn position_width(&self) -> usize {
        encoded_dim(3, self.position_frequencies, true)
    }

    pub fn direction_width(&self) -> usize {
        encoded_dim(3, self.direction_frequencies, true)
    }

    /// Width of the composed hyper coordinates `[w'_0, w'_1, .., w'_K]`.
    pub fn hyper_width(&self) -> usize {
        (self.attribute_count() + 1) * self.hyper_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.latent_count == 0 || self.hyper_dim == 0 || self.deformation_dim == 0 || self.appearance_dim == 0 {
            return Err(Error::Configuration("latent and hyper dimensions must be positive".into()));
        }
        if !(self.max_offset >= 0.0 && self.beta_floor > 0.0 && self.position_scale > 0.0) {
            return Err(Error::Configuration("max_offset >= 0, beta_floor > 0 and position_scale > 0 required".into()));
        }
        for (name, net) in [
            ("attribute", &self.attribute_net),
            ("deformation", &self.deformation_net),
            ("slicing", &self.slicing_net),
            ("mask", &self.mask_net),
            ("uncertainty", &self.uncertainty_net),
            ("template", &self.template_net),
        ] {
            if net.hidden.is_empty() || net.hidden.contains(&0) {
                return Err(Error::Configuration(format!("{name} network needs positive hidden widths")));
            }
            if let Some(s) = net.skip {
                if s == 0 || s >= net.hidden.len() {
                    return Err(Error::Configuration(format!("{name} skip index {s} out of range")));
                }
            }
        }
        if self.color_width == 0 {
            return Err(Error::Configuration("color width must be positive".into()));
        }
        Ok(())
    }
}
