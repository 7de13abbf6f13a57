//! Indenter height fields: analytic probes and procedural nut shells.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simgel::params::{NutTemplate, SimParams};
use crate::simgel::{Heightmap, IndenterKind, IndenterSpec, NutClass};

pub(crate) fn make_indenter<T: Scalar>(
    params: &SimParams,
    spec: &IndenterSpec,
    resolution_mm_per_px: f64,
) -> Result<Heightmap<T>> {
    spec.validate()?;
    if !(resolution_mm_per_px > 0.0 && resolution_mm_per_px.is_finite()) {
        return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution_mm_per_px}")));
    }
    match spec.kind {
        IndenterKind::Cylinder => {
            let radius = spec.size_mm / 2.0;
            let half_len = params.indenter.cylinder_length_mm / 2.0;
            grid(radius, half_len, resolution_mm_per_px, |u, v| {
                if v.abs() <= half_len && u.abs() <= radius {
                    (radius * radius - u * u).sqrt()
                } else {
                    0.0
                }
            })
        }
        IndenterKind::Cuboid => {
            let half = spec.size_mm / 2.0;
            let height = params.indenter.cuboid_height_mm;
            grid(half, half, resolution_mm_per_px, |u, v| if u.abs() <= half && v.abs() <= half { height } else { 0.0 })
        }
        IndenterKind::Nut(class) => {
            let template = params.nut(class);
            let shape = NutShape::new(class, template, spec.size_mm, spec.texture_seed);
            grid(shape.a, shape.b, resolution_mm_per_px, |u, v| shape.height(u, v))
        }
    }
}

/// Samples `f(u, v)` on a grid spanning `[-half_u, half_u] x [-half_v, half_v]`
/// plus a one-cell zero margin; `u` runs along rows.
fn grid<T: Scalar>(half_u: f64, half_v: f64, res: f64, f: impl Fn(f64, f64) -> f64) -> Result<Heightmap<T>> {
    let rows = (2 * (half_u / res).ceil() as usize + 3).max(9);
    let cols = (2 * (half_v / res).ceil() as usize + 3).max(9);
    let (cr, cc) = ((rows - 1) as f64 / 2.0, (cols - 1) as f64 / 2.0);
    Heightmap::from_fn(rows, cols, res, |r, c| {
        if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 {
            return 0.0;
        }
        f((r as f64 - cr) * res, (c as f64 - cc) * res).max(0.0)
    })
}

/// Seeded procedural shell. Lengths are already scaled to the requested size.
struct NutShape {
    class: NutClass,
    a: f64,
    b: f64,
    height: f64,
    relief: f64,
    wavelength: f64,
    phase: f64,
    phase2: f64,
    offset: f64,
    waves: Vec<(f64, f64, f64)>,
}

impl NutShape {
    fn new(class: NutClass, t: NutTemplate, size_mm: f64, seed: u64) -> Self {
        let s = size_mm / t.length_mm;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(class.index() as u64 + 1)));
        let phase = rng.random_range(0.0..2.0 * PI);
        let phase2 = rng.random_range(0.0..2.0 * PI);
        let offset = rng.random_range(-1.0..1.0);
        let waves = (0..10)
            .map(|_| {
                let dir = rng.random_range(0.0..PI);
                (dir.cos(), dir.sin(), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        NutShape {
            class,
            a: t.length_mm * s / 2.0,
            b: t.width_mm * s / 2.0,
            height: t.height_mm * s,
            relief: t.relief_mm * s,
            wavelength: t.wavelength_mm * s,
            phase,
            phase2,
            offset,
            waves,
        }
    }

    fn height(&self, u: f64, v: f64) -> f64 {
        let (a, b, lam) = (self.a, self.b, self.wavelength);
        let k = 2.0 * PI / lam;
        match self.class {
            NutClass::Almond => {
                // teardrop outline, striations running along the long axis
                let bw = b * (1.0 - 0.3 * u / a);
                let q = 1.0 - (u / a).powi(2) - (v / bw).powi(2);
                if q <= 0.0 {
                    return 0.0;
                }
                let e = q.sqrt();
                let wobble = 0.5 * (2.0 * PI * u / (4.0 * lam) + self.phase2).sin();
                let stria = (k * v + self.phase + wobble).sin();
                self.height * e + self.relief * stria * e.sqrt()
            }
            NutClass::BrazilNut => {
                // triangular cross-section: two planar facets meeting at a ridge
                let ridge = 0.12 * b * self.offset;
                let across = 1.0 - (v - ridge).abs() / b;
                let along = 1.0 - (u / a).powi(2);
                if across <= 0.0 || along <= 0.0 {
                    return 0.0;
                }
                let taper = along.sqrt();
                let grooves = (k * v + self.phase).sin();
                self.height * across * taper + self.relief * grooves * taper
            }
            NutClass::Pecan => {
                let q = 1.0 - (u / a).powi(2) - (v / b).powi(2);
                if q <= 0.0 {
                    return 0.0;
                }
                let e = q.sqrt();
                let lobes = 0.25 * self.relief * (k * u + self.phase).cos();
                let w = 0.09 * b;
                let c = 0.38 * b * (1.0 + 0.05 * self.offset);
                let groove = self.relief * ((-((v - c) / w).powi(2)).exp() + (-((v + c) / w).powi(2)).exp());
                self.height * e + (lobes - groove) * e.sqrt()
            }
            NutClass::Walnut => {
                let q = 1.0 - (u / a).powi(2) - (v / b).powi(2);
                if q <= 0.0 {
                    return 0.0;
                }
                let e = q.sqrt();
                let norm = (self.waves.len() as f64 / 2.0).sqrt();
                let s: f64 =
                    self.waves.iter().map(|&(cx, cy, ph)| (k * (cx * u + cy * v) + ph).sin()).sum::<f64>() / norm;
                let ridged = 1.0 - s.abs().min(1.0);
                let seam = 0.6 * (-(v / (0.03 * b)).powi(2)).exp();
                self.height * e + self.relief * (ridged + seam) * e.sqrt()
            }
        }
    }
}
