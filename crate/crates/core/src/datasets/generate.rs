use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::manifest::{DatasetKind, DatasetManifest, Label, Record, Split, MANIFEST_FILE, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::simgel::{ContactState, IndenterKind, IndenterSpec, NutClass, SimParams, Simulator, TactileImage};

/// Everything that determines a generated dataset besides the simulator table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub kind: DatasetKind,
    /// Images per class (classification) or per indenter (regression).
    pub n: usize,
    pub seed: u64,
    /// Pixel noise std; `None` uses the simulator table value.
    pub noise_std: Option<f64>,
    pub train_fraction: f64,
    pub cylinder_diameter_mm: f64,
    pub cuboid_edge_mm: f64,
    /// Regression indenters to include.
    pub indenters: Vec<String>,
    /// Size of the reference collection, used only for the scale note.
    pub reference_n: usize,
}

impl GenerationConfig {
    pub fn classification(n_per_class: usize, seed: u64) -> Self {
        GenerationConfig {
            kind: DatasetKind::Classification,
            n: n_per_class,
            seed,
            noise_std: None,
            train_fraction: 0.8,
            cylinder_diameter_mm: 10.0,
            cuboid_edge_mm: 10.0,
            indenters: NutClass::ALL.iter().map(|c| c.key().to_string()).collect(),
            reference_n: 500,
        }
    }

    pub fn regression(n_per_indenter: usize, seed: u64) -> Self {
        GenerationConfig {
            kind: DatasetKind::Regression,
            n: n_per_indenter,
            seed,
            noise_std: None,
            train_fraction: 0.8,
            cylinder_diameter_mm: 10.0,
            cuboid_edge_mm: 10.0,
            indenters: vec!["cylinder".into(), "cuboid".into()],
            reference_n: 60000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train fraction must lie in (0, 1)".into()));
        }
        if self.indenters.is_empty() {
            return Err(Error::InvalidArgument("no indenters selected".into()));
        }
        for key in &self.indenters {
            let kind: IndenterKind = key.parse()?;
            let ok = match self.kind {
                DatasetKind::Classification => matches!(kind, IndenterKind::Nut(_)),
                DatasetKind::Regression => !matches!(kind, IndenterKind::Nut(_)),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("indenter {key} does not fit this dataset kind")));
            }
        }
        Ok(())
    }

    /// SHA-256 over this config and the simulator table.
    pub fn hash(&self, params: &SimParams) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        h.update(params.to_toml().as_bytes());
        hex::encode(h.finalize())
    }
}

struct Plan {
    id: String,
    indenter: IndenterSpec,
    contact: ContactState,
    label: Label,
    seed: u64,
}

/// Jittered grid over the unit square: `n` distinct cells in shuffled
/// order, one uniform point per cell.
pub fn jittered_grid(n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let nx = (n as f64).sqrt().ceil() as usize;
    let ny = n.div_ceil(nx);
    let mut cells: Vec<(usize, usize)> = (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).collect();
    cells.shuffle(rng);
    cells
        .into_iter()
        .take(n)
        .map(|(i, j)| {
            let u = (i as f64 + rng.random::<f64>()) / nx as f64;
            let v = (j as f64 + rng.random::<f64>()) / ny as f64;
            (u, v)
        })
        .collect()
}

fn plan(config: &GenerationConfig, params: &SimParams) -> Result<Vec<Plan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plans = Vec::new();
    let (p0, p1) = ContactState::POSITION_RANGE_MM;
    let (f0, f1) = ContactState::FORCE_RANGE_N;
    for key in &config.indenters {
        let kind: IndenterKind = key.parse()?;
        match (config.kind, kind) {
            (DatasetKind::Classification, IndenterKind::Nut(class)) => {
                for i in 0..config.n {
                    let position = rng.random_range(p0..=p1);
                    let angle = rng.random_range(0.0..360.0);
                    let force = rng.random_range(5.0..=f1);
                    let texture = rng.random::<u64>();
                    plans.push(Plan {
                        id: format!("{key}_{i:05}"),
                        indenter: IndenterSpec::nut(params, class, texture),
                        contact: ContactState::new(position, force).with_angle(angle),
                        label: Label::Class(class),
                        seed: rng.random(),
                    });
                }
            }
            (DatasetKind::Regression, IndenterKind::Cylinder | IndenterKind::Cuboid) => {
                let spec = if kind == IndenterKind::Cylinder {
                    IndenterSpec::cylinder(config.cylinder_diameter_mm)
                } else {
                    IndenterSpec::cuboid(config.cuboid_edge_mm)
                };
                for (i, (u, v)) in jittered_grid(config.n, &mut rng).into_iter().enumerate() {
                    let position = p0 + (p1 - p0) * u;
                    let force = f0 + (f1 - f0) * v;
                    plans.push(Plan {
                        id: format!("{key}_{i:05}"),
                        indenter: spec,
                        contact: ContactState::new(position, force),
                        label: Label::PositionForce { position_mm: position, force_n: force },
                        seed: rng.random(),
                    });
                }
            }
            _ => return Err(Error::InvalidArgument(format!("indenter {key} does not fit this dataset kind"))),
        }
    }
    Ok(plans)
}

/// Renders a dataset into `out_dir/images` and writes `out_dir/manifest.jsonl`.
pub fn generate_dataset(config: &GenerationConfig, sim: &Simulator, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let noise = config.noise_std.unwrap_or(sim.params().noise.std);
    let plans = plan(config, sim.params())?;
    let mut records = Vec::with_capacity(plans.len());
    for p in plans {
        let img: TactileImage<f64> = sim.render(&p.contact, &p.indenter, noise, p.seed)?;
        let rel = Path::new("images").join(format!("{}.png", p.id));
        img.write_png(&out_dir.join(&rel))?;
        records.push(Record {
            id: p.id,
            path: rel,
            kind: config.kind,
            label: p.label,
            split: Split::Unassigned,
            seed: p.seed,
            indenter: p.indenter.kind.key().to_string(),
            angle_deg: p.contact.angle_deg,
        });
    }
    let total = records.len();
    let reference = config.reference_n * config.indenters.len();
    let mut manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        kind: config.kind,
        config_hash: config.hash(sim.params()),
        seed: config.seed,
        note: format!(
            "{total} images, {} per {}; scale {:.4} of a {reference}-image reference collection",
            config.n,
            if config.kind == DatasetKind::Classification { "class" } else { "indenter" },
            total as f64 / reference as f64
        ),
        records,
        root: out_dir.to_path_buf(),
    };
    assign_splits(&mut manifest, config.train_fraction, config.seed)?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn generate_classification_dataset(n_per_class: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    generate_dataset(&GenerationConfig::classification(n_per_class, seed), &Simulator::default(), out_dir)
}

pub fn generate_regression_dataset(n_per_indenter: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    generate_dataset(&GenerationConfig::regression(n_per_indenter, seed), &Simulator::default(), out_dir)
}

/// Keeps the split stream independent of the sampling stream for equal seeds.
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seeded shuffle-then-cut into train and validation, stratified by class
/// (classification) or by indenter (regression).
pub fn assign_splits(manifest: &mut DatasetManifest, train_fraction: f64, seed: u64) -> Result<()> {
    if manifest.records.is_empty() {
        return Err(Error::DegenerateData("cannot split an empty manifest".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument("train fraction must lie in (0, 1)".into()));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let key = match r.label {
            Label::Class(c) => c.key().to_string(),
            Label::PositionForce { .. } => r.indenter.clone(),
        };
        strata.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            manifest.records[i].split = if k < n_train { Split::Train } else { Split::Val };
        }
    }
    Ok(())
}

/// `(train, val)` manifests after a stratified split.
pub fn split(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut m = manifest.clone();
    assign_splits(&mut m, train_fraction, seed)?;
    Ok((m.subset(Split::Train), m.subset(Split::Val)))
}
