use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learner families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Cnn3,
    Cnn5,
    #[serde(rename = "micro_resnet")]
    MicroResNet,
    MicroInception,
    SvmPoly,
    SvmRbf,
    Knn,
}

impl Arch {
    /// Report row order.
    pub const ALL: [Arch; 7] =
        [Arch::Cnn3, Arch::Cnn5, Arch::MicroResNet, Arch::MicroInception, Arch::SvmPoly, Arch::SvmRbf, Arch::Knn];
    pub const NETWORKS: [Arch; 4] = [Arch::Cnn3, Arch::Cnn5, Arch::MicroResNet, Arch::MicroInception];

    pub fn is_network(self) -> bool {
        Self::NETWORKS.contains(&self)
    }

    pub fn key(self) -> &'static str {
        match self {
            Arch::Cnn3 => "cnn3",
            Arch::Cnn5 => "cnn5",
            Arch::MicroResNet => "micro_resnet",
            Arch::MicroInception => "micro_inception",
            Arch::SvmPoly => "svm_poly",
            Arch::SvmRbf => "svm_rbf",
            Arch::Knn => "knn",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Cnn3 => "3-layer CNN",
            Arch::Cnn5 => "5-layer CNN",
            Arch::MicroResNet => "ResNet (micro)",
            Arch::MicroInception => "GoogLeNet (micro)",
            Arch::SvmPoly => "SVM (poly)",
            Arch::SvmRbf => "SVM (rbf)",
            Arch::Knn => "KNN",
        }
    }

    pub fn rank(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).unwrap()
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Arch::ALL.into_iter().find(|a| a.key() == norm).ok_or_else(|| Error::Config(format!("unknown arch '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Classify4,
    RegressPosForce,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Classify4 => 4,
            Head::RegressPosForce => 2,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Head::Classify4 => "classify4",
            Head::RegressPosForce => "regress_pos_force",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "classify4" | "classification" => Ok(Head::Classify4),
            "regress_pos_force" | "regression" => Ok(Head::RegressPosForce),
            _ => Err(Error::Config(format!("unknown head '{s}'"))),
        }
    }
}

/// Label box of the regression head.
pub const POSITION_RANGE_MM: (f64, f64) = (10.0, 50.0);
pub const FORCE_RANGE_N: (f64, f64) = (0.0, 25.0);

/// Maps normalized outputs to `(position_mm, force_n)`, clamping to the label box.
pub fn denormalize(z_position: f64, z_force: f64) -> (f64, f64) {
    let map = |z: f64, (lo, hi): (f64, f64)| lo + (hi - lo) * z.clamp(0.0, 1.0);
    (map(z_position, POSITION_RANGE_MM), map(z_force, FORCE_RANGE_N))
}

pub fn normalize(position_mm: f64, force_n: f64) -> (f64, f64) {
    let map = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
    (map(position_mm, POSITION_RANGE_MM), map(force_n, FORCE_RANGE_N))
}

/// Declarative learner description.
///
/// Hyperparameter keys: `seed` and `width` for networks, `k` for KNN,
/// `c`, `gamma`, `degree`, `coef0` and `tol` for SVMs. A missing SVM `gamma`
/// is derived from the training features as `1 / (dim * var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub head: Head,
    pub hyperparams: BTreeMap<String, f64>,
}

impl ModelSpec {
    /// Spec with default hyperparameters.
    pub fn new(arch: Arch, head: Head) -> Result<Self> {
        let mut hp = BTreeMap::new();
        let defaults: &[(&str, f64)] = match arch {
            Arch::Cnn3 | Arch::Cnn5 | Arch::MicroResNet | Arch::MicroInception => &[("seed", 0.0), ("width", 8.0)],
            Arch::SvmPoly => &[("c", 10.0), ("degree", 3.0), ("coef0", 1.0), ("tol", 1e-3)],
            Arch::SvmRbf => &[("c", 10.0), ("tol", 1e-3)],
            Arch::Knn => &[("k", 5.0)],
        };
        for &(k, v) in defaults {
            hp.insert(k.to_string(), v);
        }
        let spec = ModelSpec { arch, head, hyperparams: hp };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyperparams.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.hyperparams.get(key).copied()
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").unwrap_or(0.0) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !self.arch.is_network() && self.head != Head::Classify4 {
            return Err(Error::InvalidArgument(format!("{} supports classification only", self.arch.display_name())));
        }
        if let Some((k, v)) = self.hyperparams.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("hyperparameter {k} = {v} is not finite")));
        }
        let positive_int = |key: &str| match self.get(key) {
            Some(v) if v < 1.0 || v.fract() != 0.0 => {
                Err(Error::InvalidArgument(format!("{key} must be a positive integer, got {v}")))
            }
            _ => Ok(()),
        };
        match self.arch {
            Arch::Knn => {
                positive_int("k")?;
                if self.get("k").is_some_and(|k| (k as u64).is_multiple_of(2)) {
                    return Err(Error::InvalidArgument("k must be odd".into()));
                }
            }
            Arch::SvmPoly | Arch::SvmRbf => {
                for key in ["c", "gamma", "tol"] {
                    if self.get(key).is_some_and(|v| v <= 0.0) {
                        return Err(Error::InvalidArgument(format!("{key} must be positive")));
                    }
                }
                positive_int("degree")?;
            }
            _ => {
                positive_int("width")?;
                if self.get("seed").is_some_and(|s| s < 0.0 || s.fract() != 0.0 || s > 2f64.powi(53)) {
                    return Err(Error::InvalidArgument("seed must be an integer in [0, 2^53]".into()));
                }
            }
        }
        Ok(())
    }
}
