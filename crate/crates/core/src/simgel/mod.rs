//! Synthetic tactile frames for a camera-based soft finger.
//!
//! A frame is produced in four stages: an indenter height field is built
//! ([`Simulator::make_indenter`]), the applied normal force is converted to
//! a penetration depth through a saturating compliance law
//! ([`Simulator::indentation_depth`]), the indenter is pressed into the gel
//! and smoothed ([`Simulator::deform_membrane`]), and the deformed surface is
//! lit by three coloured directional lights ([`Simulator::shade`]).
//!
//! Geometry: canvas rows run along the finger; a contact at
//! `position_mm` is centred on row [`SimParams::position_to_row`]. Columns
//! run across the finger, `lateral_offset_mm` shifts the contact sideways.

mod heightmap;
mod image;
mod indenter;
pub mod params;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use heightmap::Heightmap;
pub use image::{ImageMeta, TactileImage, CHANNELS, RAW_MAGIC};
pub use params::SimParams;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// The four nut-in-shell texture classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NutClass {
    Almond,
    BrazilNut,
    Pecan,
    Walnut,
}

impl NutClass {
    pub const ALL: [NutClass; 4] = [NutClass::Almond, NutClass::BrazilNut, NutClass::Pecan, NutClass::Walnut];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn key(self) -> &'static str {
        match self {
            NutClass::Almond => "almond",
            NutClass::BrazilNut => "brazil_nut",
            NutClass::Pecan => "pecan",
            NutClass::Walnut => "walnut",
        }
    }

    /// Plural column heading used in accuracy tables.
    pub fn heading(self) -> &'static str {
        match self {
            NutClass::Almond => "Almonds",
            NutClass::BrazilNut => "Brazil Nuts",
            NutClass::Pecan => "Pecans",
            NutClass::Walnut => "Walnuts",
        }
    }
}

impl fmt::Display for NutClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for NutClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NutClass::ALL
            .into_iter()
            .find(|c| c.key() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown nut class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndenterKind {
    Cylinder,
    Cuboid,
    Nut(NutClass),
}

impl IndenterKind {
    pub fn key(self) -> &'static str {
        match self {
            IndenterKind::Cylinder => "cylinder",
            IndenterKind::Cuboid => "cuboid",
            IndenterKind::Nut(c) => c.key(),
        }
    }
}

impl FromStr for IndenterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cylinder" => Ok(IndenterKind::Cylinder),
            "cuboid" => Ok(IndenterKind::Cuboid),
            other => other.parse().map(IndenterKind::Nut),
        }
    }
}

/// Probe pressed into the gel. `size_mm` is the cylinder diameter, the
/// cuboid edge, or the nut length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndenterSpec {
    pub kind: IndenterKind,
    pub size_mm: f64,
    pub texture_seed: u64,
}

impl IndenterSpec {
    pub fn cylinder(diameter_mm: f64) -> Self {
        IndenterSpec { kind: IndenterKind::Cylinder, size_mm: diameter_mm, texture_seed: 0 }
    }

    pub fn cuboid(edge_mm: f64) -> Self {
        IndenterSpec { kind: IndenterKind::Cuboid, size_mm: edge_mm, texture_seed: 0 }
    }

    /// Nut at its nominal template length.
    pub fn nut(params: &SimParams, class: NutClass, texture_seed: u64) -> Self {
        IndenterSpec { kind: IndenterKind::Nut(class), size_mm: params.nut(class).length_mm, texture_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size_mm > 0.0 && self.size_mm.is_finite()) {
            return Err(Error::InvalidArgument(format!("indenter size must be positive, got {}", self.size_mm)));
        }
        Ok(())
    }
}

/// Ground-truth contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub position_mm: f64,
    pub lateral_offset_mm: f64,
    pub angle_deg: f64,
    pub force_n: f64,
}

impl ContactState {
    pub const POSITION_RANGE_MM: (f64, f64) = (10.0, 50.0);
    pub const FORCE_RANGE_N: (f64, f64) = (0.0, 25.0);

    pub fn new(position_mm: f64, force_n: f64) -> Self {
        ContactState { position_mm, lateral_offset_mm: 0.0, angle_deg: 0.0, force_n }
    }

    pub fn with_angle(mut self, angle_deg: f64) -> Self {
        self.angle_deg = angle_deg;
        self
    }

    /// Whether the contact lies inside the sampled data ranges.
    pub fn in_generation_range(&self) -> bool {
        let (p0, p1) = Self::POSITION_RANGE_MM;
        let (f0, f1) = Self::FORCE_RANGE_N;
        (p0..=p1).contains(&self.position_mm) && (f0..=f1).contains(&self.force_n)
    }
}

/// Renders synthetic frames from a parameter table.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    params: SimParams,
}

impl Simulator {
    pub fn new(params: SimParams) -> Self {
        Simulator { params }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn make_indenter<T: Scalar>(&self, spec: &IndenterSpec, resolution_mm_per_px: f64) -> Result<Heightmap<T>> {
        indenter::make_indenter(&self.params, spec, resolution_mm_per_px)
    }

    /// `d_max * F / (F + k)` with per-kind constants.
    pub fn indentation_depth(&self, force_n: f64, spec: &IndenterSpec) -> Result<f64> {
        if !(force_n >= 0.0 && force_n.is_finite()) {
            return Err(Error::InvalidArgument(format!("force must be finite and nonnegative, got {force_n}")));
        }
        let c = self.params.compliance(spec.kind);
        Ok(c.d_max_mm * force_n / (force_n + c.k_n))
    }

    /// Presses the indenter into the gel at the contact pose and smooths
    /// the result. Output covers the full canvas.
    pub fn deform_membrane<T: Scalar>(
        &self,
        indenter: &Heightmap<T>,
        contact: &ContactState,
        depth_mm: f64,
    ) -> Result<Heightmap<T>> {
        if !(depth_mm >= 0.0 && depth_mm.is_finite()) {
            return Err(Error::InvalidArgument(format!("depth must be finite and nonnegative, got {depth_mm}")));
        }
        let canvas = &self.params.canvas;
        let res = canvas.resolution_mm_per_px;
        let (rows, cols) = (canvas.height_px, canvas.width_px);
        if depth_mm == 0.0 {
            return Heightmap::zeros(rows, cols, res);
        }
        let r0 = self.params.position_to_row(contact.position_mm);
        let c0 = (cols as f64 - 1.0) / 2.0 + contact.lateral_offset_mm / res;
        let (sin, cos) = contact.angle_deg.to_radians().sin_cos();
        let top = indenter.max();
        let depth = lit::<T>(depth_mm);
        let mut data = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let du = (r as f64 - r0) * res;
            for c in 0..cols {
                let dv = (c as f64 - c0) * res;
                // rotate the canvas offset into the indenter frame
                let u = cos * du + sin * dv;
                let v = -sin * du + cos * dv;
                let h = indenter.sample_centered_mm(u, v);
                let pressed = h - top + depth;
                if pressed > T::zero() {
                    data[r * cols + c] = pressed;
                }
            }
        }
        let raw = Heightmap::new(rows, cols, res, data)?;
        Ok(raw.gaussian_blur(self.params.membrane.blur_sigma_mm / res))
    }

    /// Lambertian shading under one directional light per channel plus ambient.
    pub fn shade<T: Scalar>(&self, deformed: &Heightmap<T>) -> TactileImage<T> {
        let light = &self.params.lighting;
        let elev = light.elevation_deg.to_radians();
        let dirs: Vec<[f64; 3]> = light
            .azimuth_deg
            .iter()
            .map(|az| {
                let az = az.to_radians();
                [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()]
            })
            .collect();
        let (rows, cols) = (deformed.rows(), deformed.cols());
        let res = deformed.resolution_mm_per_px();
        let h = |r: usize, c: usize| deformed.get(r, c).to_f64().unwrap();
        let slope = |lo: f64, hi: f64, span: usize| (hi - lo) / (span as f64 * res);
        TactileImage::from_fn(rows, cols, |r, c, ch| {
            let (c_lo, c_hi) = (c.saturating_sub(1), (c + 1).min(cols - 1));
            let (r_lo, r_hi) = (r.saturating_sub(1), (r + 1).min(rows - 1));
            let hx = slope(h(r, c_lo), h(r, c_hi), c_hi - c_lo);
            let hy = slope(h(r_lo, c), h(r_hi, c), r_hi - r_lo);
            let norm = (hx * hx + hy * hy + 1.0).sqrt();
            let n = [-hx / norm, -hy / norm, 1.0 / norm];
            let d = dirs[ch];
            let lambert = (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]).max(0.0);
            lit(light.ambient + light.diffuse * lambert)
        })
    }

    /// Uniform frame of an undeformed gel.
    pub fn background<T: Scalar>(&self) -> TactileImage<T> {
        let c = &self.params.canvas;
        let flat =
            Heightmap::zeros(c.height_px, c.width_px, c.resolution_mm_per_px).expect("canvas dimensions validated");
        self.shade(&flat)
    }

    /// Noise-free deformation for a contact, before shading.
    pub fn deformation<T: Scalar>(&self, contact: &ContactState, spec: &IndenterSpec) -> Result<Heightmap<T>> {
        let hm = self.make_indenter(spec, self.params.canvas.resolution_mm_per_px)?;
        let depth = self.indentation_depth(contact.force_n, spec)?;
        self.deform_membrane(&hm, contact, depth)
    }

    /// Full pipeline plus seeded additive Gaussian pixel noise.
    pub fn render<T: Scalar>(
        &self,
        contact: &ContactState,
        spec: &IndenterSpec,
        noise_std: f64,
        seed: u64,
    ) -> Result<TactileImage<T>> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std must be nonnegative, got {noise_std}")));
        }
        let deformed = self.deformation(contact, spec)?;
        let clean = self.shade(&deformed);
        let mut img = if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, noise_std).expect("valid std");
            TactileImage::from_fn(clean.height(), clean.width(), |r, c, ch| {
                clean.get(r, c, ch) + lit(normal.sample(&mut rng))
            })
        } else {
            clean
        };
        img.meta = ImageMeta { seed: Some(seed), contact: Some(*contact) };
        Ok(img)
    }

    /// Pixels whose deformation exceeds the imprint threshold.
    pub fn imprint_area<T: Scalar>(&self, deformed: &Heightmap<T>) -> usize {
        deformed.count_above(self.params.membrane.imprint_threshold_mm)
    }

    pub fn imprint_centroid<T: Scalar>(&self, deformed: &Heightmap<T>) -> Option<(f64, f64)> {
        deformed.centroid_above(self.params.membrane.imprint_threshold_mm)
    }
}

#[cfg(test)]
mod tests;
