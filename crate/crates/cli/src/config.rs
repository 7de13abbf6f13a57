//! Experiment configuration: a sectioned TOML file, `--key value`
//! overrides on top, then kind-dependent defaults for anything unset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use fintact_core::datasets::{DatasetKind, DatasetManifest, GenerationConfig, Split, MANIFEST_FILE};
use fintact_core::imaging::{AugmentPolicy, UnwarpCalibration, DEFAULT_FEATURE_SIZE};
use fintact_core::models::{Arch, Head, ModelSpec};
use fintact_core::trainer::{Optimizer, TrainConfig};

use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";

/// Keys accepted in each section. `model` additionally takes any numeric
/// hyperparameter.
const SECTIONS: &[(&str, &[&str])] = &[
    ("run", &["out", "seed", "precision", "parallel"]),
    (
        "dataset",
        &[
            "path",
            "kind",
            "n",
            "seed",
            "noise_std",
            "train_fraction",
            "cylinder_diameter_mm",
            "cuboid_edge_mm",
            "indenters",
            "reference_n",
        ],
    ),
    ("model", &["arch", "head"]),
    (
        "train",
        &[
            "epochs",
            "batch_size",
            "learning_rate",
            "optimizer",
            "momentum",
            "seed",
            "grad_clip",
            "divergence_threshold",
            "input_size",
            "feature_size",
            "flip_lr",
            "brightness_jitter",
            "contrast_jitter",
            "geometric_allowed",
        ],
    ),
    ("eval", &["checkpoint", "split"]),
    ("ablation", &["archs"]),
    ("grad_check", &["seeds", "eps", "tol"]),
    ("calibration", &["homography", "radial_k1", "radial_k2", "output_size"]),
];

/// Bare keys that exist in several sections resolve here.
const ALIASES: &[(&str, &str)] = &[("seed", "run.seed"), ("data", "dataset.path")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub out: PathBuf,
    pub seed: u64,
    /// `f32` or `f64` arithmetic for the networks.
    pub precision: String,
    /// Ablation members train on separate threads.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory holding `manifest.jsonl` (input of train, eval, ablation).
    pub path: PathBuf,
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub train_fraction: f64,
    pub cylinder_diameter_mm: f64,
    pub cuboid_edge_mm: f64,
    pub indenters: Vec<String>,
    pub reference_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub arch: Arch,
    pub head: Head,
    #[serde(flatten)]
    pub hyperparams: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `sgd` or `sgd_momentum`.
    pub optimizer: String,
    pub momentum: f64,
    pub seed: u64,
    /// Global gradient norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub divergence_threshold: f64,
    pub input_size: [usize; 2],
    pub feature_size: [usize; 2],
    pub flip_lr: bool,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
    pub geometric_allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    /// `train`, `val` or `all`.
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub archs: Vec<Arch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckSection {
    pub seeds: u64,
    pub eps: f64,
    pub tol: f64,
}

/// Fully resolved experiment; every field is explicit so the echoed file
/// reproduces the run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub grad_check: GradCheckSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<UnwarpCalibration>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses the text of an override value: TOML literal if possible, a
/// comma-separated list becomes an array, anything else a string.
fn parse_value(text: &str) -> Value {
    let literal =
        |t: &str| -> Option<Value> { format!("v = {t}").parse::<Table>().ok().and_then(|mut t| t.remove("v")) };
    if let Some(v) = literal(text) {
        return v;
    }
    if text.contains(',') {
        return Value::Array(
            text.split(',').map(|p| literal(p.trim()).unwrap_or_else(|| Value::String(p.trim().to_string()))).collect(),
        );
    }
    Value::String(text.to_string())
}

/// Maps an override key to `(section, key)`.
fn locate(key: &str) -> Result<(String, String), CliError> {
    let key = key.replace('-', "_");
    if let Some((section, name)) = key.split_once('.') {
        if !SECTIONS.iter().any(|(s, _)| *s == section) {
            return Err(config_err(format!("unknown section '{section}' in --{key}")));
        }
        return Ok((section.to_string(), name.to_string()));
    }
    if let Some((_, target)) = ALIASES.iter().find(|(a, _)| *a == key) {
        let (s, k) = target.split_once('.').unwrap();
        return Ok((s.to_string(), k.to_string()));
    }
    let hits: Vec<&str> = SECTIONS.iter().filter(|(_, keys)| keys.contains(&key.as_str())).map(|(s, _)| *s).collect();
    match hits.as_slice() {
        [one] => Ok((one.to_string(), key)),
        [] => Err(config_err(format!("unknown option --{key}; use --section.key for model hyperparameters"))),
        many => Err(config_err(format!(
            "--{key} is ambiguous; use one of {}",
            many.iter().map(|s| format!("--{s}.{key}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Splits `--key value` pairs; `--flag` without a value means `true`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let raw =
            args[i].strip_prefix("--").ok_or_else(|| config_err(format!("expected --key, found '{}'", args[i])))?;
        if let Some((k, v)) = raw.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((raw.to_string(), args[i + 1].clone()));
            i += 2;
        } else {
            out.push((raw.to_string(), "true".into()));
            i += 1;
        }
    }
    Ok(out)
}

/// Layers overrides onto the file table.
pub fn layered_table(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Table, CliError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            text.parse::<Table>().map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))?
        }
        None => Table::new(),
    };
    for (section, body) in &table {
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == section) else {
            return Err(config_err(format!("unknown section [{section}]")));
        };
        let Value::Table(body) = body else {
            return Err(config_err(format!("'{section}' must be a section")));
        };
        if *section != "model" {
            if let Some(k) = body.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(config_err(format!("unknown key '{k}' in [{section}]")));
            }
        }
    }
    for (key, value) in overrides {
        let (section, name) = locate(key)?;
        let entry = table.entry(section.clone()).or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(t) = entry else { unreachable!("checked above") };
        t.insert(name, parse_value(value));
    }
    Ok(table)
}

fn get<'a>(t: &'a Table, section: &str, key: &str) -> Option<&'a Value> {
    t.get(section).and_then(|s| s.get(key))
}

fn set_default(t: &mut Table, section: &str, key: &str, value: impl Into<Value>) {
    let Value::Table(s) = t.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new())) else {
        unreachable!("sections are tables")
    };
    s.entry(key.to_string()).or_insert_with(|| value.into());
}

fn kind_key(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Classification => "classification",
        DatasetKind::Regression => "regression",
    }
}

/// Fills every unset key. The dataset kind comes from the config, else from
/// an existing manifest, else defaults to classification.
pub fn resolve(mut t: Table) -> Result<ExperimentConfig, CliError> {
    set_default(&mut t, "run", "out", "out");
    set_default(&mut t, "run", "seed", 0);
    set_default(&mut t, "run", "precision", "f32");
    set_default(&mut t, "run", "parallel", false);
    let seed = get(&t, "run", "seed").cloned().unwrap();

    set_default(&mut t, "dataset", "path", "data");
    if get(&t, "dataset", "kind").is_none() {
        let path = get(&t, "dataset", "path").and_then(Value::as_str).unwrap_or("data");
        let manifest = Path::new(path).join(MANIFEST_FILE);
        let kind = if manifest.exists() {
            DatasetManifest::parse(&manifest).map(|m| m.kind).unwrap_or(DatasetKind::Classification)
        } else {
            DatasetKind::Classification
        };
        set_default(&mut t, "dataset", "kind", kind_key(kind));
    }
    let kind: DatasetKind = get(&t, "dataset", "kind")
        .cloned()
        .unwrap()
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("dataset.kind: {}", e.message())))?;
    let gen = match kind {
        DatasetKind::Classification => GenerationConfig::classification(200, 0),
        DatasetKind::Regression => GenerationConfig::regression(3000, 0),
    };
    let head = match kind {
        DatasetKind::Classification => Head::Classify4,
        DatasetKind::Regression => Head::RegressPosForce,
    };
    set_default(&mut t, "dataset", "n", gen.n as i64);
    set_default(&mut t, "dataset", "seed", seed.clone());
    set_default(&mut t, "dataset", "noise_std", fintact_core::simgel::SimParams::default().noise.std);
    set_default(&mut t, "dataset", "train_fraction", gen.train_fraction);
    set_default(&mut t, "dataset", "cylinder_diameter_mm", gen.cylinder_diameter_mm);
    set_default(&mut t, "dataset", "cuboid_edge_mm", gen.cuboid_edge_mm);
    set_default(&mut t, "dataset", "indenters", gen.indenters.clone());
    set_default(&mut t, "dataset", "reference_n", gen.reference_n as i64);

    set_default(&mut t, "model", "arch", Arch::Cnn3.key());
    set_default(&mut t, "model", "head", head.key());
    let arch: Arch = get(&t, "model", "arch")
        .and_then(Value::as_str)
        .ok_or_else(|| config_err("model.arch must be a string"))?
        .parse()
        .map_err(|e: fintact_core::Error| config_err(e.to_string()))?;
    let defaults = ModelSpec::new(arch, head).map_err(|e| config_err(e.to_string()))?;
    for (k, v) in &defaults.hyperparams {
        if k == "seed" {
            set_default(&mut t, "model", "seed", Value::Float(seed.as_integer().unwrap_or(0) as f64));
        } else {
            set_default(&mut t, "model", k, *v);
        }
    }

    let tc = match kind {
        DatasetKind::Classification => TrainConfig::classification(),
        DatasetKind::Regression => TrainConfig::regression(),
    };
    let (optimizer, momentum) = match tc.optimizer {
        Optimizer::Sgd => ("sgd", 0.0),
        Optimizer::SgdMomentum { momentum } => ("sgd_momentum", momentum),
    };
    set_default(&mut t, "train", "epochs", tc.epochs as i64);
    set_default(&mut t, "train", "batch_size", tc.batch_size as i64);
    set_default(&mut t, "train", "learning_rate", tc.learning_rate);
    set_default(&mut t, "train", "optimizer", optimizer);
    set_default(&mut t, "train", "momentum", momentum);
    set_default(&mut t, "train", "seed", seed);
    set_default(&mut t, "train", "grad_clip", tc.grad_clip.unwrap_or(0.0));
    set_default(&mut t, "train", "divergence_threshold", tc.early_divergence_threshold);
    set_default(&mut t, "train", "input_size", vec![tc.input_size.0 as i64, tc.input_size.1 as i64]);
    set_default(&mut t, "train", "feature_size", vec![DEFAULT_FEATURE_SIZE.0 as i64, DEFAULT_FEATURE_SIZE.1 as i64]);
    set_default(&mut t, "train", "flip_lr", tc.augment.flip_lr);
    set_default(&mut t, "train", "brightness_jitter", tc.augment.brightness_jitter);
    set_default(&mut t, "train", "contrast_jitter", tc.augment.contrast_jitter);
    set_default(&mut t, "train", "geometric_allowed", tc.augment.geometric_allowed);

    let out = get(&t, "run", "out").and_then(Value::as_str).unwrap_or("out").to_string();
    set_default(&mut t, "eval", "checkpoint", format!("{out}/model.ckpt"));
    set_default(&mut t, "eval", "split", "val");

    let archs: Vec<&str> = match head {
        Head::Classify4 => Arch::ALL.iter().map(|a| a.key()).collect(),
        Head::RegressPosForce => Arch::NETWORKS.iter().map(|a| a.key()).collect(),
    };
    set_default(&mut t, "ablation", "archs", archs);

    set_default(&mut t, "grad_check", "seeds", 20);
    set_default(&mut t, "grad_check", "eps", 1e-4);
    set_default(&mut t, "grad_check", "tol", 1e-3);

    // integers are accepted wherever floats are expected, a lone value
    // wherever a list is
    for (section, body) in t.iter_mut() {
        if let Value::Table(body) = body {
            for (k, v) in body.iter_mut() {
                if LIST_KEYS.contains(&k.as_str()) && !v.is_array() {
                    *v = Value::Array(vec![v.clone()]);
                }
                if let Value::Array(items) = v {
                    if float_key(section, k) {
                        for item in items.iter_mut() {
                            if let Value::Integer(i) = item {
                                *item = Value::Float(*i as f64);
                            }
                        }
                    }
                }
                if let Value::Integer(i) = v {
                    if float_key(section, k) {
                        *v = Value::Float(*i as f64);
                    }
                }
            }
        }
    }
    let cfg: ExperimentConfig =
        Value::Table(t).try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

const LIST_KEYS: &[&str] = &["indenters", "archs"];

fn float_key(section: &str, key: &str) -> bool {
    matches!(
        (section, key),
        ("model", _)
            | ("dataset", "noise_std" | "train_fraction" | "cylinder_diameter_mm" | "cuboid_edge_mm")
            | (
                "train",
                "learning_rate"
                    | "momentum"
                    | "grad_clip"
                    | "divergence_threshold"
                    | "brightness_jitter"
                    | "contrast_jitter"
            )
            | ("grad_check", "eps" | "tol")
            | ("calibration", "homography" | "radial_k1" | "radial_k2")
    )
}

impl ExperimentConfig {
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        resolve(layered_table(file, overrides)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = |e: fintact_core::Error| config_err(e.to_string());
        self.generation().validate().map_err(c)?;
        self.model_spec().validate().map_err(c)?;
        self.train_config()?.validate(self.model.head).map_err(c)?;
        if !matches!(self.run.precision.as_str(), "f32" | "f64") {
            return Err(config_err(format!("run.precision must be f32 or f64, got '{}'", self.run.precision)));
        }
        self.split()?;
        if self.ablation.archs.is_empty() {
            return Err(config_err("ablation.archs is empty"));
        }
        if let Some(cal) = &self.calibration {
            cal.validate().map_err(c)?;
        }
        Ok(())
    }

    pub fn generation(&self) -> GenerationConfig {
        let d = &self.dataset;
        GenerationConfig {
            kind: d.kind,
            n: d.n,
            seed: d.seed,
            noise_std: Some(d.noise_std),
            train_fraction: d.train_fraction,
            cylinder_diameter_mm: d.cylinder_diameter_mm,
            cuboid_edge_mm: d.cuboid_edge_mm,
            indenters: d.indenters.clone(),
            reference_n: d.reference_n,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.spec_for(self.model.arch)
    }

    /// Spec for another architecture, sharing the seed and any
    /// hyperparameters that architecture understands.
    pub fn spec_for(&self, arch: Arch) -> ModelSpec {
        let mut spec = ModelSpec::new(arch, self.model.head).unwrap_or(ModelSpec {
            arch,
            head: self.model.head,
            hyperparams: BTreeMap::new(),
        });
        for (k, v) in &self.model.hyperparams {
            if arch == self.model.arch || spec.hyperparams.contains_key(k) {
                spec.hyperparams.insert(k.clone(), *v);
            }
        }
        spec
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            "sgd_momentum" => Optimizer::SgdMomentum { momentum: t.momentum },
            other => return Err(config_err(format!("unknown optimizer '{other}'"))),
        };
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer,
            seed: t.seed,
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
            early_divergence_threshold: t.divergence_threshold,
            input_size: (t.input_size[0], t.input_size[1]),
            augment: AugmentPolicy {
                flip_lr: t.flip_lr,
                brightness_jitter: t.brightness_jitter,
                contrast_jitter: t.contrast_jitter,
                geometric_allowed: t.geometric_allowed,
            },
            feature_size: (t.feature_size[0], t.feature_size[1]),
        })
    }

    /// Evaluation split; `None` means every record.
    pub fn split(&self) -> Result<Option<Split>, CliError> {
        match self.eval.split.as_str() {
            "train" => Ok(Some(Split::Train)),
            "val" => Ok(Some(Split::Val)),
            "all" => Ok(None),
            other => Err(config_err(format!("eval.split must be train, val or all, got '{other}'"))),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_resolve_bare_and_dotted_keys() {
        let o = parse_overrides(&args("--kind regression --n 50 --seed 1 --out d/ --model.width 4 --flip_lr false"))
            .unwrap();
        let cfg = ExperimentConfig::load(None, &o).unwrap();
        assert_eq!(cfg.dataset.kind, DatasetKind::Regression);
        assert_eq!((cfg.dataset.n, cfg.run.seed, cfg.dataset.seed, cfg.train.seed), (50, 1, 1, 1));
        assert_eq!(cfg.run.out, PathBuf::from("d/"));
        assert_eq!(cfg.model.hyperparams["width"], 4.0);
        assert_eq!(cfg.model.hyperparams["seed"], 1.0);
        assert_eq!(cfg.model.head, Head::RegressPosForce);
        assert_eq!(cfg.train.grad_clip, 5.0);
        assert_eq!(cfg.ablation.archs.len(), 4);
    }

    #[test]
    fn resolved_config_round_trips() {
        let o = parse_overrides(&args("--arch svm_rbf --archs knn,cnn3 --epochs 3")).unwrap();
        let cfg = ExperimentConfig::load(None, &o).unwrap();
        assert_eq!(cfg.ablation.archs, vec![Arch::Knn, Arch::Cnn3]);
        let single = ExperimentConfig::load(None, &parse_overrides(&args("--archs knn")).unwrap()).unwrap();
        assert_eq!(single.ablation.archs, vec![Arch::Knn]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        std::fs::write(&path, cfg.to_toml()).unwrap();
        let back = ExperimentConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), cfg.to_toml());
    }

    #[test]
    fn bad_keys_are_config_errors() {
        for bad in [
            "--nonsense 3",
            "--run.nonsense 3",
            "--epochs many",
            "--kind sideways",
            "--arch alexnet",
            "--train.optimizer adam",
        ] {
            let o = parse_overrides(&args(bad)).unwrap();
            assert!(matches!(ExperimentConfig::load(None, &o), Err(CliError::Config(_))), "{bad}");
        }
        assert!(parse_overrides(&args("stray")).is_err());
    }

    #[test]
    fn file_sections_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[train]\nepochs = 2\nbogus = 1\n").unwrap();
        assert!(matches!(ExperimentConfig::load(Some(&path), &[]), Err(CliError::Config(_))));
        std::fs::write(&path, "[train]\nepochs = 2\n[dataset]\nkind = \"regression\"\n").unwrap();
        let over = parse_overrides(&args("--epochs 5")).unwrap();
        let cfg = ExperimentConfig::load(Some(&path), &over).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert!(!cfg.train.flip_lr);
    }

    #[test]
    fn calibration_section_is_optional() {
        let o = parse_overrides(&args(
            "--calibration.homography 1,0,0,0,1,0,0,0,1 --radial_k1 0.1 --radial_k2 0 --output_size 160,120",
        ))
        .unwrap();
        let cfg = ExperimentConfig::load(None, &o).unwrap();
        assert_eq!(cfg.calibration.as_ref().unwrap().radial_k1, 0.1);
        let singular =
            parse_overrides(&args("--homography 0,0,0,0,0,0,0,0,0 --radial_k1 0 --radial_k2 0 --output_size 4,4"))
                .unwrap();
        assert!(matches!(ExperimentConfig::load(None, &singular), Err(CliError::Config(_))));
    }
}
