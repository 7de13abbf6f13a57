use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::datasets::{DatasetKind, DatasetManifest, Label, Split};
use crate::error::{DivergenceReport, Error, Result};
use crate::imaging::{
    augment, raw_pixel_features, resample_area, unwarp, AugmentPolicy, Standardizer, UnwarpCalibration,
    DEFAULT_FEATURE_SIZE,
};
use crate::models::{
    normalize, Arch, Checkpoint, FeatureStage, Head, InputNorm, Kernel, KnnModel, Learner, Network, Prediction,
    SvmModel,
};
use crate::scalar::{lit, Scalar};
use crate::simgel::{TactileImage, CHANNELS};
use crate::trainer::metrics::{ClassificationReport, RegressionReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum { momentum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Global L2 norm bound applied to each batch gradient.
    pub grad_clip: Option<f64>,
    /// Training aborts once a batch loss exceeds this or is not finite.
    pub early_divergence_threshold: f64,
    /// Network input `(height, width)`.
    pub input_size: (usize, usize),
    pub augment: AugmentPolicy,
    /// Downsample size for raw-pixel features of the classical learners.
    pub feature_size: (usize, usize),
}

impl TrainConfig {
    pub fn classification() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.003,
            optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
            seed: 0,
            grad_clip: None,
            early_divergence_threshold: 1e3,
            input_size: (64, 64),
            augment: AugmentPolicy {
                flip_lr: true,
                brightness_jitter: 0.03,
                contrast_jitter: 0.1,
                geometric_allowed: true,
            },
            feature_size: DEFAULT_FEATURE_SIZE,
        }
    }

    /// Regression defaults. Unnormalized MSE gradients reach norms in the
    /// hundreds early on, so every network is clipped.
    pub fn regression() -> Self {
        TrainConfig {
            epochs: 40,
            input_size: (32, 32),
            augment: AugmentPolicy::photometric(0.03, 0.1),
            grad_clip: Some(5.0),
            ..Self::classification()
        }
    }

    pub fn validate(&self, head: Head) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and epochs must be at least 1".into()));
        }
        if let Optimizer::SgdMomentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
            }
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidArgument("grad_clip must be positive".into()));
        }
        self.augment.validate()?;
        if head == Head::RegressPosForce && (self.augment.geometric_allowed || self.augment.flip_lr) {
            return Err(Error::InvalidArgument("geometric augmentation would corrupt position labels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    PositionForce { position_mm: f64, force_n: f64 },
}

impl Target {
    pub fn from_label(label: &Label) -> Self {
        match *label {
            Label::Class(c) => Target::Class(c.index()),
            Label::PositionForce { position_mm, force_n } => Target::PositionForce { position_mm, force_n },
        }
    }

    fn head(&self) -> Head {
        match self {
            Target::Class(_) => Head::Classify4,
            Target::PositionForce { .. } => Head::RegressPosForce,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: TactileImage<T>,
    pub target: Target,
}

/// Reads frames referenced by a manifest, rectifying them when a
/// calibration is configured.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameReader {
    pub calibration: Option<UnwarpCalibration>,
}

impl FrameReader {
    pub fn read<T: Scalar>(
        &self,
        manifest: &DatasetManifest,
        rec: &crate::datasets::Record,
    ) -> Result<TactileImage<T>> {
        let raw = manifest.read_image(rec)?;
        match &self.calibration {
            Some(cal) => unwarp(&raw, cal),
            None => Ok(raw),
        }
    }

    /// Samples of one split, resampled to `size` when given.
    pub fn samples<T: Scalar>(
        &self,
        manifest: &DatasetManifest,
        split: Option<Split>,
        size: Option<(usize, usize)>,
    ) -> Result<Vec<Sample<T>>> {
        manifest
            .records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .map(|r| {
                let img = self.read(manifest, r)?;
                let image = match size {
                    Some((h, w)) => resample_area(&img, h, w)?,
                    None => img,
                };
                Ok(Sample { image, target: Target::from_label(&r.label) })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation accuracy (classification, higher is better) or mean
    /// normalized absolute error (regression, lower is better).
    pub val_metric: f64,
    /// Largest batch gradient norm after clipping.
    pub max_grad_norm: f64,
    /// Largest batch gradient norm before clipping.
    pub max_raw_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.9},{:.9}\n", e.epoch, e.train_loss, e.val_metric));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: History,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn check_targets<T>(head: Head, sets: &[&[Sample<T>]]) -> Result<()> {
    for s in sets.iter().flat_map(|s| s.iter()) {
        if s.target.head() != head {
            return Err(Error::LabelKind(format!("{head} model given {:?} labels", s.target.head())));
        }
    }
    Ok(())
}

fn batch_tensor<T: Scalar>(images: &[TactileImage<T>]) -> Result<Tensor<T>> {
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * CHANNELS * h * w);
    for img in images {
        data.extend(img.to_chw());
    }
    Tensor::new(vec![images.len(), CHANNELS, h, w], data)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Raw head outputs for every sample, batched.
pub fn network_outputs<T: Scalar>(net: &Network<T>, samples: &[Sample<T>]) -> Result<Vec<Vec<f64>>> {
    let [_, h, w] = net.input_shape();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let imgs = chunk.iter().map(|s| resample_area(&s.image, h, w)).collect::<Result<Vec<_>>>()?;
        let y = net.predict_batch(&batch_tensor(&imgs)?)?;
        let k = y.shape()[1];
        out.extend(y.data().chunks(k).map(|r| r.iter().map(|v| v.to_f64().unwrap()).collect::<Vec<_>>()));
    }
    Ok(out)
}

fn validation_metric<T: Scalar>(net: &Network<T>, val: &[Sample<T>]) -> Result<f64> {
    let outputs = network_outputs(net, val)?;
    match net.spec().head {
        Head::Classify4 => {
            let correct = outputs
                .iter()
                .zip(val)
                .filter(|(o, s)| matches!(net.interpret(o), Prediction::Class { class, .. } if s.target == Target::Class(class)))
                .count();
            Ok(correct as f64 / val.len() as f64)
        }
        Head::RegressPosForce => {
            let mut err = 0.0;
            for (o, s) in outputs.iter().zip(val) {
                if let (
                    Prediction::PositionForce { position_mm, force_n },
                    Target::PositionForce { position_mm: tp, force_n: tf },
                ) = (net.interpret(o), s.target)
                {
                    let (zp, zf) = normalize(position_mm, force_n);
                    let (tp, tf) = normalize(tp, tf);
                    err += ((zp - tp).abs() + (zf - tf).abs()) / 2.0;
                }
            }
            Ok(err / val.len() as f64)
        }
    }
}

/// Mini-batch SGD on a freshly initialized network.
///
/// Samples must already be at `config.input_size`. The returned checkpoint
/// holds the parameters of the best validation epoch (the last epoch when
/// `val` is empty).
pub fn train_network<T: Scalar>(
    spec: &crate::models::ModelSpec,
    train: &[Sample<T>],
    val: &[Sample<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate(spec.head)?;
    if train.is_empty() {
        return Err(Error::DegenerateData("empty training set".into()));
    }
    check_targets(spec.head, &[train, val])?;
    let (h, w) = config.input_size;
    for s in train.iter().chain(val) {
        if (s.image.height(), s.image.width()) != (h, w) {
            return Err(Error::shape("training sample", &[h, w], &[s.image.height(), s.image.width()]));
        }
    }
    let planes: Vec<Vec<T>> = train.iter().map(|s| s.image.to_chw()).collect();
    let norm = InputNorm::fit(CHANNELS, planes.iter().map(Vec::as_slice));
    let mut net = Network::<T>::build(spec, [CHANNELS, h, w])?.with_input_norm(norm)?;
    let mut velocity: Vec<Vec<T>> = net.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
    let lr = config.learning_rate;
    let higher_is_better = spec.head == Head::Classify4;
    let mut best: Option<(f64, usize, Network<T>)> = None;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut max_norm, mut max_raw) = (0.0, 0.0f64, 0.0f64);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let images = idx
                .iter()
                .map(|&i| augment(&train[i].image, &config.augment, mix(config.seed, epoch as u64, i as u64 + 1)))
                .collect::<Result<Vec<_>>>()?;
            let mut g = Graph::new();
            let params = net.bind(&mut g, true);
            let x = g.constant(batch_tensor(&images)?);
            let out = net.forward(&mut g, x, &params)?;
            let loss = match spec.head {
                Head::Classify4 => {
                    let labels: Vec<usize> = idx
                        .iter()
                        .map(|&i| match train[i].target {
                            Target::Class(c) => c,
                            _ => unreachable!("targets checked"),
                        })
                        .collect();
                    g.softmax_cross_entropy(out, &labels)?
                }
                Head::RegressPosForce => {
                    let mut t = Vec::with_capacity(2 * idx.len());
                    for &i in idx {
                        if let Target::PositionForce { position_mm, force_n } = train[i].target {
                            let (zp, zf) = normalize(position_mm, force_n);
                            t.push(lit(zp));
                            t.push(lit(zf));
                        }
                    }
                    let target = g.constant(Tensor::new(vec![idx.len(), 2], t)?);
                    g.mse(out, target)?
                }
            };
            let loss_value = g.value(loss).data()[0].to_f64().unwrap();
            if !loss_value.is_finite() || loss_value > config.early_divergence_threshold {
                return Err(Error::Diverged(DivergenceReport {
                    epoch,
                    batch: b,
                    loss: loss_value,
                    threshold: config.early_divergence_threshold,
                }));
            }
            g.backward(loss)?;
            let grads: Vec<&[T]> = params.iter().map(|&p| g.grad(p).expect("trainable")).collect();
            let norm = grads.iter().flat_map(|gr| gr.iter()).map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
            // the small offset keeps the clipped norm strictly below the bound
            let scale = match config.grad_clip {
                Some(c) if norm > c => c / (norm + 1e-6),
                _ => 1.0,
            };
            max_raw = max_raw.max(norm);
            max_norm = max_norm.max(norm * scale);
            let (scale, lr_t) = (lit::<T>(scale), lit::<T>(lr));
            for ((p, gr), v) in net.params_mut().iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                let data = p.value.data_mut();
                match config.optimizer {
                    Optimizer::Sgd => {
                        for (x, &gv) in data.iter_mut().zip(gr.iter()) {
                            *x -= lr_t * gv * scale;
                        }
                    }
                    Optimizer::SgdMomentum { momentum } => {
                        let mu = lit::<T>(momentum);
                        for ((x, &gv), vel) in data.iter_mut().zip(gr.iter()).zip(v.iter_mut()) {
                            *vel = mu * *vel + gv * scale;
                            *x -= lr_t * *vel;
                        }
                    }
                }
            }
            loss_sum += loss_value * idx.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        if net.params().iter().any(|p| !p.value.is_finite()) {
            return Err(Error::Diverged(DivergenceReport {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                loss: f64::NAN,
                threshold: config.early_divergence_threshold,
            }));
        }
        let val_metric = if val.is_empty() { f64::NAN } else { validation_metric(&net, val)? };
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_metric,
            max_grad_norm: max_norm,
            max_raw_grad_norm: max_raw,
        });
        let improved = match &best {
            None => true,
            Some(_) if val.is_empty() => true,
            Some((m, _, _)) => {
                if higher_is_better {
                    val_metric > *m
                } else {
                    val_metric < *m
                }
            }
        };
        if improved {
            best = Some((val_metric, epoch, net.clone()));
        }
    }
    let (_, best_epoch, net) = best.expect("at least one epoch");
    let mut checkpoint = Checkpoint::new(spec.clone(), Learner::Network(net));
    checkpoint.info.insert("best_epoch".into(), best_epoch.to_string());
    checkpoint.info.insert("epochs".into(), config.epochs.to_string());
    checkpoint.info.insert("train_samples".into(), train.len().to_string());
    Ok(TrainOutcome { checkpoint, history, best_epoch })
}

/// Fits SVM or KNN on standardized raw-pixel features of full-size frames.
pub fn train_classical<T: Scalar>(
    spec: &crate::models::ModelSpec,
    train: &[Sample<T>],
    val: &[Sample<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::DegenerateData("empty training set".into()));
    }
    check_targets(spec.head, &[train, val])?;
    let labels = |set: &[Sample<T>]| -> Vec<usize> {
        set.iter()
            .map(|s| match s.target {
                Target::Class(c) => c,
                _ => unreachable!("targets checked"),
            })
            .collect()
    };
    let raw = |set: &[Sample<T>]| -> Result<Vec<Vec<f64>>> {
        set.iter()
            .map(|s| {
                Ok(raw_pixel_features(&s.image, config.feature_size)?.iter().map(|v| v.to_f64().unwrap()).collect())
            })
            .collect()
    };
    let train_raw = raw(train)?;
    let standardizer = Standardizer::fit(&train_raw)?;
    let xs = standardizer.transform_all(&train_raw)?;
    let ys = labels(train);
    let features = FeatureStage { size: config.feature_size, standardizer };
    let mut info = Vec::new();
    let learner = match spec.arch {
        Arch::Knn => {
            let k = spec.get("k").unwrap_or(5.0) as usize;
            Learner::Knn { features, model: KnnModel::new(k, xs, ys.clone())? }
        }
        Arch::SvmPoly | Arch::SvmRbf => {
            let gamma = spec.get("gamma").unwrap_or_else(|| Kernel::scale_gamma(&xs));
            let kernel = if spec.arch == Arch::SvmRbf {
                Kernel::Rbf { gamma }
            } else {
                Kernel::Poly {
                    gamma,
                    degree: spec.get("degree").unwrap_or(3.0) as u32,
                    coef0: spec.get("coef0").unwrap_or(1.0),
                }
            };
            let c = spec.get("c").unwrap_or(10.0);
            let tol = spec.get("tol").unwrap_or(1e-3);
            let (model, report) = SvmModel::train(&xs, &ys, kernel, c, tol)?;
            info.push(("max_kkt_violation", format!("{:e}", report.max_kkt_violation)));
            info.push(("support_vectors", model.support.len().to_string()));
            Learner::Svm { features, model }
        }
        _ => return Err(Error::InvalidArgument(format!("{} is a network", spec.arch.display_name()))),
    };
    let mut checkpoint = Checkpoint::new(spec.clone(), learner);
    for (k, v) in info {
        checkpoint.info.insert(k.into(), v);
    }
    let accuracy = |set: &[Sample<T>]| -> Result<f64> {
        let preds = predict_classes(&checkpoint, set)?;
        let truth = labels(set);
        Ok(preds.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / set.len() as f64)
    };
    let train_error = 1.0 - accuracy(train)?;
    let val_metric = if val.is_empty() { f64::NAN } else { accuracy(val)? };
    let history = History {
        epochs: vec![EpochStats {
            epoch: 1,
            train_loss: train_error,
            val_metric,
            max_grad_norm: 0.0,
            max_raw_grad_norm: 0.0,
        }],
    };
    Ok(TrainOutcome { checkpoint, history, best_epoch: 1 })
}

fn predict_classes<T: Scalar>(checkpoint: &Checkpoint<T>, samples: &[Sample<T>]) -> Result<Vec<usize>> {
    predictions(checkpoint, samples)?
        .into_iter()
        .map(|p| match p {
            Prediction::Class { class, .. } => Ok(class),
            _ => Err(Error::LabelKind("expected class predictions".into())),
        })
        .collect()
}

/// Predictions for samples at full frame size.
pub fn predictions<T: Scalar>(checkpoint: &Checkpoint<T>, samples: &[Sample<T>]) -> Result<Vec<Prediction>> {
    match &checkpoint.learner {
        Learner::Network(net) => Ok(network_outputs(net, samples)?.iter().map(|o| net.interpret(o)).collect()),
        _ => samples.iter().map(|s| checkpoint.predict_image(&s.image)).collect(),
    }
}

/// Trains any learner on the train/val split tags of a manifest.
pub fn train<T: Scalar>(
    spec: &crate::models::ModelSpec,
    manifest: &DatasetManifest,
    reader: &FrameReader,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let expected = match spec.head {
        Head::Classify4 => DatasetKind::Classification,
        Head::RegressPosForce => DatasetKind::Regression,
    };
    if manifest.kind != expected {
        return Err(Error::LabelKind(format!("{} model given a {:?} dataset", spec.head, manifest.kind)));
    }
    if spec.arch.is_network() {
        let size = Some(config.input_size);
        let train = reader.samples(manifest, Some(Split::Train), size)?;
        let val = reader.samples(manifest, Some(Split::Val), size)?;
        train_network(spec, &train, &val, config)
    } else {
        let train = reader.samples(manifest, Some(Split::Train), None)?;
        let val = reader.samples(manifest, Some(Split::Val), None)?;
        train_classical(spec, &train, &val, config)
    }
}

fn eval_samples<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    manifest: &DatasetManifest,
    reader: &FrameReader,
    split: Option<Split>,
) -> Result<Vec<Sample<T>>> {
    let expected = match checkpoint.spec.head {
        Head::Classify4 => DatasetKind::Classification,
        Head::RegressPosForce => DatasetKind::Regression,
    };
    if manifest.kind != expected {
        return Err(Error::LabelKind(format!(
            "{} checkpoint given a {:?} dataset",
            checkpoint.spec.head, manifest.kind
        )));
    }
    reader.samples(manifest, split, None)
}

/// Scores a classification checkpoint on the records of `split` (all when `None`).
pub fn evaluate_classification<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    manifest: &DatasetManifest,
    reader: &FrameReader,
    split: Option<Split>,
) -> Result<ClassificationReport> {
    let samples = eval_samples(checkpoint, manifest, reader, split)?;
    let truth: Vec<usize> = samples
        .iter()
        .map(|s| match s.target {
            Target::Class(c) => c,
            _ => unreachable!("kind checked"),
        })
        .collect();
    ClassificationReport::from_predictions(4, &truth, &predict_classes(checkpoint, &samples)?)
}

/// `((true position, true force), (predicted position, predicted force))`.
pub type RegressionPair = ((f64, f64), (f64, f64));

/// Scores a regression checkpoint; also returns one pair per sample.
pub fn evaluate_regression<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    manifest: &DatasetManifest,
    reader: &FrameReader,
    split: Option<Split>,
) -> Result<(RegressionReport, Vec<RegressionPair>)> {
    let samples = eval_samples(checkpoint, manifest, reader, split)?;
    let mut pairs = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(predictions(checkpoint, &samples)?) {
        match (s.target, p) {
            (
                Target::PositionForce { position_mm, force_n },
                Prediction::PositionForce { position_mm: pp, force_n: pf },
            ) => {
                pairs.push(((position_mm, force_n), (pp, pf)));
            }
            _ => return Err(Error::LabelKind("expected regression predictions".into())),
        }
    }
    let (truth, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
    Ok((RegressionReport::from_predictions(&truth, &pred)?, pairs))
}
