use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::imaging::Standardizer;
use crate::models::knn::KnnModel;
use crate::models::network::{InputNorm, NamedTensor, Network};
use crate::models::spec::{Arch, ModelSpec};
use crate::models::svm::{Kernel, PairModel, SvmModel};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "FTCKPT1";

/// Raw-pixel preprocessing shared by the classical learners.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStage {
    pub size: (usize, usize),
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner<T> {
    Network(Network<T>),
    Svm { features: FeatureStage, model: SvmModel },
    Knn { features: FeatureStage, model: KnnModel },
}

/// A trained learner with its spec and free-form run information.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub learner: Learner<T>,
    /// Extra header entries such as the selected epoch.
    pub info: BTreeMap<String, String>,
}

struct Blob {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Blob {
    fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Blob { name: name.into(), shape, data }
    }

    fn matrix(name: &str, rows: &[Vec<f64>], dim: usize) -> Self {
        Blob::new(name, vec![rows.len(), dim], rows.iter().flatten().copied().collect())
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        let dim = self.shape.get(1).copied().unwrap_or(0);
        if dim == 0 {
            return vec![Vec::new(); self.shape[0]];
        }
        self.data.chunks(dim).map(<[f64]>::to_vec).collect()
    }
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_dims(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|d| d.parse().ok()).collect()
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(spec: ModelSpec, learner: Learner<T>) -> Self {
        Checkpoint { spec, learner, info: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header =
            vec![CHECKPOINT_MAGIC.to_string(), format!("arch={}", self.spec.arch), format!("head={}", self.spec.head)];
        for (k, v) in &self.spec.hyperparams {
            header.push(format!("hp.{k}={v:?}"));
        }
        let mut blobs = Vec::new();
        match &self.learner {
            Learner::Network(net) => {
                header.push(format!("input={}", dims(&net.input_shape())));
                let norm = net.input_norm();
                header.push(format!("input.mean={}", floats(&norm.mean)));
                header.push(format!("input.std={}", floats(&norm.std)));
                for p in net.params() {
                    let data = p.value.data().iter().map(|v| v.to_f64().unwrap()).collect();
                    blobs.push(Blob::new(p.name.clone(), p.value.shape().to_vec(), data));
                }
            }
            Learner::Svm { features, model } => {
                push_features(&mut header, &mut blobs, features);
                match model.kernel {
                    Kernel::Poly { gamma, degree, coef0 } => {
                        header.push("kernel=poly".into());
                        header.push(format!("kernel.gamma={gamma:?}"));
                        header.push(format!("kernel.degree={degree}"));
                        header.push(format!("kernel.coef0={coef0:?}"));
                    }
                    Kernel::Rbf { gamma } => {
                        header.push("kernel=rbf".into());
                        header.push(format!("kernel.gamma={gamma:?}"));
                    }
                }
                header.push(format!("classes={}", model.num_classes));
                header.push(format!("dim={}", model.dim));
                blobs.push(Blob::matrix("support", &model.support, model.dim));
                for (i, p) in model.pairs.iter().enumerate() {
                    blobs.push(Blob::new(format!("pair{i}.classes"), vec![2], vec![p.pos as f64, p.neg as f64]));
                    blobs.push(Blob::new(
                        format!("pair{i}.support"),
                        vec![p.support.len()],
                        p.support.iter().map(|&s| s as f64).collect(),
                    ));
                    blobs.push(Blob::new(format!("pair{i}.coef"), vec![p.coef.len()], p.coef.clone()));
                    blobs.push(Blob::new(format!("pair{i}.b"), vec![1], vec![p.b]));
                }
            }
            Learner::Knn { features, model } => {
                push_features(&mut header, &mut blobs, features);
                blobs.push(Blob::matrix("train.features", &model.features, model.dim()));
                blobs.push(Blob::new(
                    "train.labels",
                    vec![model.labels.len()],
                    model.labels.iter().map(|&l| l as f64).collect(),
                ));
            }
        }
        for (k, v) in &self.info {
            header.push(format!("info.{k}={v}"));
        }
        let mut out = header.join("\n").into_bytes();
        out.extend_from_slice(b"\n\n");
        out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for b in &blobs {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path, msg),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::format(Path::new("<checkpoint>"), msg);
        let split =
            bytes.windows(2).position(|w| w == b"\n\n").ok_or_else(|| bad("missing header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        let magic = lines.next().unwrap_or_default();
        if magic != CHECKPOINT_MAGIC {
            if let Some(v) = magic.strip_prefix("FTCKPT") {
                return Err(Error::UnsupportedVersion { found: v.to_string(), expected: "1".into() });
            }
            return Err(bad(format!("bad magic '{magic}'")));
        }
        let mut kv = BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line '{line}'")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing header field {k}")));
        let num = |k: &str| -> Result<f64> { field(k)?.parse().map_err(|_| bad(format!("bad number in {k}"))) };
        let arch: Arch = field("arch")?.parse()?;
        let head = field("head")?.parse()?;
        let mut hyperparams = BTreeMap::new();
        let mut info = BTreeMap::new();
        for (k, v) in &kv {
            if let Some(name) = k.strip_prefix("hp.") {
                hyperparams.insert(name.to_string(), v.parse().map_err(|_| bad(format!("bad hyperparameter {k}")))?);
            } else if let Some(name) = k.strip_prefix("info.") {
                info.insert(name.to_string(), v.clone());
            }
        }
        let spec = ModelSpec { arch, head, hyperparams };
        spec.validate()?;

        let blobs = read_blobs(&bytes[split + 2..]).map_err(bad)?;
        let mut by_name: BTreeMap<&str, &Blob> = blobs.iter().map(|b| (b.name.as_str(), b)).collect();
        let mut take = |name: &str| by_name.remove(name).ok_or_else(|| bad(format!("missing blob {name}")));

        let learner = if arch.is_network() {
            let input =
                parse_dims(&field("input")?).filter(|d| d.len() == 3).ok_or_else(|| bad("bad input shape".into()))?;
            let params = blobs
                .iter()
                .map(|b| {
                    Ok(NamedTensor {
                        name: b.name.clone(),
                        value: Tensor::new(b.shape.clone(), b.data.iter().map(|&v| crate::scalar::lit(v)).collect())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let vector = |k: &str| -> Result<Vec<f64>> {
                field(k)?.split(',').map(|v| v.parse().map_err(|_| bad(format!("bad number in {k}")))).collect()
            };
            let norm = InputNorm { mean: vector("input.mean")?, std: vector("input.std")? };
            Learner::Network(
                Network::from_params(&spec, [input[0], input[1], input[2]], params)?.with_input_norm(norm)?,
            )
        } else {
            let size = parse_dims(&field("features")?)
                .filter(|d| d.len() == 2)
                .ok_or_else(|| bad("bad feature size".into()))?;
            let features = FeatureStage {
                size: (size[0], size[1]),
                standardizer: Standardizer {
                    mean: take("standardizer.mean")?.data.clone(),
                    std: take("standardizer.std")?.data.clone(),
                },
            };
            if arch == Arch::Knn {
                let x = take("train.features")?.rows();
                let y = take("train.labels")?.data.iter().map(|&v| v as usize).collect();
                let model = KnnModel::new(spec.get("k").unwrap_or(5.0) as usize, x, y)?;
                Learner::Knn { features, model }
            } else {
                let kernel = match field("kernel")?.as_str() {
                    "poly" => Kernel::Poly {
                        gamma: num("kernel.gamma")?,
                        degree: num("kernel.degree")? as u32,
                        coef0: num("kernel.coef0")?,
                    },
                    "rbf" => Kernel::Rbf { gamma: num("kernel.gamma")? },
                    other => return Err(bad(format!("unknown kernel {other}"))),
                };
                let num_classes = num("classes")? as usize;
                let dim = num("dim")? as usize;
                let support = take("support")?.rows();
                let mut pairs = Vec::new();
                for i in 0.. {
                    let Ok(classes) = take(&format!("pair{i}.classes")) else { break };
                    pairs.push(PairModel {
                        pos: classes.data[0] as usize,
                        neg: classes.data[1] as usize,
                        support: take(&format!("pair{i}.support"))?.data.iter().map(|&v| v as usize).collect(),
                        coef: take(&format!("pair{i}.coef"))?.data.clone(),
                        b: take(&format!("pair{i}.b"))?.data[0],
                    });
                }
                if pairs.iter().any(|p| p.support.iter().any(|&s| s >= support.len())) {
                    return Err(bad("support index out of range".into()));
                }
                Learner::Svm { features, model: SvmModel { kernel, num_classes, dim, support, pairs } }
            }
        };
        Ok(Checkpoint { spec, learner, info })
    }
}

fn push_features(header: &mut Vec<String>, blobs: &mut Vec<Blob>, f: &FeatureStage) {
    header.push(format!("features={}x{}", f.size.0, f.size.1));
    let n = f.standardizer.mean.len();
    blobs.push(Blob::new("standardizer.mean", vec![n], f.standardizer.mean.clone()));
    blobs.push(Blob::new("standardizer.std", vec![n], f.standardizer.std.clone()));
}

fn read_blobs(mut buf: &[u8]) -> std::result::Result<Vec<Blob>, String> {
    fn take<'a>(buf: &mut &'a [u8], n: usize) -> std::result::Result<&'a [u8], String> {
        if buf.len() < n {
            return Err("truncated blob section".into());
        }
        let (head, rest) = buf.split_at(n);
        *buf = rest;
        Ok(head)
    }
    let u32_at = |buf: &mut &[u8]| -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()) as usize)
    };
    let count = u32_at(&mut buf)?;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(&mut buf)?;
        let name = String::from_utf8(take(&mut buf, len)?.to_vec()).map_err(|_| "blob name is not UTF-8")?;
        let ndim = u32_at(&mut buf)?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut buf, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut buf, n.checked_mul(8).ok_or("blob too large")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blobs.push(Blob { name, shape, data });
    }
    if !buf.is_empty() {
        return Err("trailing bytes after blobs".into());
    }
    Ok(blobs)
}
