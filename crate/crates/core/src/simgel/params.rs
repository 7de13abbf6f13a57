use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simgel::{IndenterKind, NutClass};

pub const PARAMS_VERSION: u32 = 2;

const DEFAULT_TABLE: &str = include_str!("../../assets/sim_params.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasParams {
    pub height_px: usize,
    pub width_px: usize,
    pub resolution_mm_per_px: f64,
    pub center_position_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneParams {
    pub blur_sigma_mm: f64,
    pub imprint_threshold_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingParams {
    pub azimuth_deg: [f64; 3],
    pub elevation_deg: f64,
    pub ambient: f64,
    pub diffuse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub d_max_mm: f64,
    pub k_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceTable {
    pub cylinder: Compliance,
    pub cuboid: Compliance,
    pub nut: Compliance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndenterParams {
    pub cylinder_length_mm: f64,
    pub cuboid_height_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutTemplate {
    pub length_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub relief_mm: f64,
    pub wavelength_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureTable {
    pub almond: NutTemplate,
    pub brazil_nut: NutTemplate,
    pub pecan: NutTemplate,
    pub walnut: NutTemplate,
}

/// Versioned simulator constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub version: u32,
    pub canvas: CanvasParams,
    pub membrane: MembraneParams,
    pub lighting: LightingParams,
    pub noise: NoiseParams,
    pub compliance: ComplianceTable,
    pub indenter: IndenterParams,
    pub texture: TextureTable,
}

impl Default for SimParams {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TABLE).expect("bundled parameter table parses")
    }
}

impl SimParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        let params: SimParams = toml::from_str(text).map_err(|e| Error::Config(format!("parameter table: {e}")))?;
        if params.version != PARAMS_VERSION {
            return Err(Error::UnsupportedVersion {
                found: params.version.to_string(),
                expected: PARAMS_VERSION.to_string(),
            });
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameter table serializes")
    }

    fn validate(&self) -> Result<()> {
        let c = &self.canvas;
        if c.height_px < 8 || c.width_px < 8 || c.resolution_mm_per_px <= 0.0 {
            return Err(Error::Config("canvas must be at least 8x8 with positive resolution".into()));
        }
        if self.membrane.blur_sigma_mm < 0.0 || self.noise.std < 0.0 {
            return Err(Error::Config("blur and noise must be nonnegative".into()));
        }
        for comp in [self.compliance.cylinder, self.compliance.cuboid, self.compliance.nut] {
            if comp.d_max_mm <= 0.0 || comp.k_n <= 0.0 {
                return Err(Error::Config("compliance constants must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn compliance(&self, kind: IndenterKind) -> Compliance {
        match kind {
            IndenterKind::Cylinder => self.compliance.cylinder,
            IndenterKind::Cuboid => self.compliance.cuboid,
            IndenterKind::Nut(_) => self.compliance.nut,
        }
    }

    pub fn nut(&self, class: NutClass) -> NutTemplate {
        match class {
            NutClass::Almond => self.texture.almond,
            NutClass::BrazilNut => self.texture.brazil_nut,
            NutClass::Pecan => self.texture.pecan,
            NutClass::Walnut => self.texture.walnut,
        }
    }

    /// Canvas row (fractional) imaging the given finger-axis position.
    pub fn position_to_row(&self, position_mm: f64) -> f64 {
        let c = &self.canvas;
        (c.height_px as f64 - 1.0) / 2.0 + (position_mm - c.center_position_mm) / c.resolution_mm_per_px
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_round_trips() {
        let p = SimParams::default();
        assert_eq!(p.canvas.height_px, 160);
        assert_eq!(SimParams::from_toml(&p.to_toml()).unwrap(), p);
    }

    #[test]
    fn foreign_version_rejected() {
        let text = DEFAULT_TABLE.replacen("version = 2", "version = 7", 1);
        assert!(matches!(SimParams::from_toml(&text), Err(Error::UnsupportedVersion { .. })));
    }
}
