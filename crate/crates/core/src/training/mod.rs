//! Staged training: pretraining on auxiliary data, then fine-tuning on the
//! target set, minimizing the hierarchical loss over shuffled mini-batches.
//!
//! Runs are deterministic given (seed, config, data). Per-sample gradients
//! are computed in parallel but summed in batch order, so thread count never
//! changes the result. Each epoch draws its data order from an RNG keyed by
//! (seed, stage, epoch), which also makes resumed runs match uninterrupted
//! ones.

pub mod backbone;
pub mod checkpoint;
pub mod optim;

use std::path::Path;

use image::RgbImage;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneClassifier, ConvNet, ConvNetConfig, ImageTensor};
pub use checkpoint::{config_fingerprint, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use optim::{OptimizerKind, OptimizerState};

use crate::datakit::manifest::ImageRecord;
use crate::error::{Error, Result};
use crate::evalkit::classification_report;
use crate::hloss::{hierarchical_ce_from_logits, hierarchical_ce_grad, Logits3, DEFAULT_ALPHA};
use crate::pipelines::load_image;
use crate::scalar::Scalar;
use crate::taxonomy::FineLabel;

/// Dataset reference standing for the target manifest's training split.
pub const TARGET_REF: &str = "@target";

/// Records with at least one annotated intimate body part.
pub fn select_explicit_frames(records: &[ImageRecord]) -> Vec<ImageRecord> {
    records.iter().filter(|r| !r.part_boxes.is_empty()).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub tensor: ImageTensor<T>,
    pub label: FineLabel,
    /// Has at least one body-part box.
    pub explicit: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_images(records: &[ImageRecord], images: &[RgbImage]) -> Result<Self> {
        if records.len() != images.len() {
            return Err(Error::LengthMismatch {
                expected: records.len(),
                found: images.len(),
            });
        }
        let samples = records
            .par_iter()
            .zip(images)
            .map(|(r, img)| sample(r, img))
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }

    /// Decodes every record's image, resolving relative paths against
    /// `base_dir`.
    pub fn load(records: &[ImageRecord], base_dir: &Path) -> Result<Self> {
        let samples = records
            .par_iter()
            .map(|r| sample(r, &load_image(&r.resolve_image_path(base_dir))?))
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn sample<T: Scalar>(r: &ImageRecord, img: &RgbImage) -> Result<Sample<T>> {
    Ok(Sample {
        id: r.id.clone(),
        tensor: ImageTensor::from_rgb(img)?,
        label: r.fine_label,
        explicit: !r.part_boxes.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    #[default]
    None,
    /// Only the classification head is updated.
    BackboneFrozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    /// Manifest path, or `@target`.
    pub manifest: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

fn default_datasets() -> Vec<DatasetRef> {
    vec![DatasetRef {
        manifest: TARGET_REF.into(),
        weight: 1.0,
    }]
}

fn default_lr() -> f64 {
    0.01
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_batch() -> usize {
    32
}

fn default_momentum() -> f64 {
    0.9
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    #[serde(default = "default_datasets")]
    pub datasets: Vec<DatasetRef>,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// SGD only.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub freeze: FreezePolicy,
    /// Train only on frames with annotated body parts.
    #[serde(default)]
    pub explicit_only: bool,
}

impl StageSpec {
    /// Adam, default hyper-parameters, trained on the target split.
    pub fn new(name: impl Into<String>, epochs: usize) -> Self {
        StageSpec {
            name: name.into(),
            datasets: default_datasets(),
            epochs,
            learning_rate: default_lr(),
            alpha: default_alpha(),
            batch_size: default_batch(),
            optimizer: default_optimizer(),
            momentum: default_momentum(),
            freeze: FreezePolicy::None,
            explicit_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(format!("stage '{}': {m}", self.name)));
        if self.name.is_empty() {
            return Err(Error::param("stage name must not be empty"));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.datasets.is_empty() {
            return bad("no datasets".into());
        }
        for d in &self.datasets {
            if !(d.weight.is_finite() && d.weight > 0.0) {
                return bad(format!("weight of '{}' must be positive, got {}", d.manifest, d.weight));
            }
        }
        Ok(())
    }

    /// Mixing weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.datasets.iter().map(|d| d.weight).sum();
        self.datasets.iter().map(|d| d.weight / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord<T> {
    /// 1-based within the stage.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's draws, measured before each
    /// batch's update.
    pub loss: T,
    pub val_accuracy_binary: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory<T> {
    pub stage: String,
    pub epochs: Vec<EpochRecord<T>>,
    pub checkpoints: Vec<String>,
}

impl<T: Scalar> TrainHistory<T> {
    pub fn new(stage: impl Into<String>) -> Self {
        TrainHistory {
            stage: stage.into(),
            epochs: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TrainHistory<U> {
        TrainHistory {
            stage: self.stage.clone(),
            epochs: self
                .epochs
                .iter()
                .map(|e| EpochRecord {
                    epoch: e.epoch,
                    loss: U::lit(e.loss.as_f64()),
                    val_accuracy_binary: e.val_accuracy_binary.map(|v| U::lit(v.as_f64())),
                })
                .collect(),
            checkpoints: self.checkpoints.clone(),
        }
    }
}

/// State handed to observers after every epoch.
pub struct EpochProgress<'a, T> {
    pub stage_index: usize,
    pub spec: &'a StageSpec,
    pub record: &'a EpochRecord<T>,
    pub params: &'a [T],
    pub optimizer: &'a OptimizerState<T>,
    /// Finished stages followed by the running one.
    pub histories: &'a [TrainHistory<T>],
}

pub trait TrainObserver<T: Scalar> {
    /// May persist a checkpoint; a returned reference is appended to the
    /// stage history.
    fn on_epoch(&mut self, _progress: &EpochProgress<'_, T>) -> Result<Option<String>> {
        Ok(None)
    }
}

impl<T: Scalar> TrainObserver<T> for () {}

/// One stage and the datasets its `datasets` entries resolved to.
pub struct StagePlan<'a, T> {
    pub spec: &'a StageSpec,
    pub sources: Vec<&'a Dataset<T>>,
}

/// Where to pick up an interrupted run. Parameters are restored by the
/// caller.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumePoint<T> {
    pub stage_index: usize,
    /// Epochs of `stage_index` already completed.
    pub epochs_done: usize,
    pub optimizer: OptimizerState<T>,
    /// Finished stages followed by the partial one.
    pub histories: Vec<TrainHistory<T>>,
}

/// Fraction of `data` whose predicted SE/NS group matches the label; `None`
/// for an empty set.
pub fn binary_accuracy<T: Scalar, B: Backbone<T>>(backbone: &B, data: &Dataset<T>) -> Result<Option<T>> {
    if data.is_empty() {
        return Ok(None);
    }
    let pred: Vec<FineLabel> = data
        .samples
        .par_iter()
        .map(|s| Ok(backbone.forward(&s.tensor)?.softmax().argmax()))
        .collect::<Result<_>>()?;
    let gt: Vec<FineLabel> = data.samples.iter().map(|s| s.label).collect();
    Ok(Some(classification_report::<T>(&pred, &gt)?.accuracy_binary))
}

fn epoch_rng(seed: u64, stage_index: usize, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage_index as u64) << 32) | epoch as u64);
    rng
}

/// Sample order of one epoch as (source, index) pairs. A single source is
/// one shuffled pass; several sources are mixed by weighted draws, each
/// source cycling through its own reshuffled order.
fn draw_order(pools: &[Vec<usize>], weights: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if pools.len() == 1 {
        let mut p = pools[0].clone();
        p.shuffle(rng);
        return Ok(p.into_iter().map(|i| (0, i)).collect());
    }
    let total: usize = pools.iter().map(Vec::len).sum();
    let dist = WeightedIndex::new(weights).map_err(|e| Error::param(format!("mixing weights: {e}")))?;
    let mut perms: Vec<Vec<usize>> = pools.to_vec();
    let mut cursor = vec![0usize; pools.len()];
    for p in perms.iter_mut() {
        p.shuffle(rng);
    }
    let mut order = Vec::with_capacity(total);
    for _ in 0..total {
        let s = dist.sample(rng);
        if cursor[s] == perms[s].len() {
            perms[s].shuffle(rng);
            cursor[s] = 0;
        }
        order.push((s, perms[s][cursor[s]]));
        cursor[s] += 1;
    }
    Ok(order)
}

pub fn train_stage<T: Scalar, B: Backbone<T>>(
    backbone: &mut B,
    spec: &StageSpec,
    sources: &[&Dataset<T>],
    validation: &Dataset<T>,
    seed: u64,
) -> Result<TrainHistory<T>> {
    let plan = [StagePlan {
        spec,
        sources: sources.to_vec(),
    }];
    let mut h = pretrain_then_finetune(backbone, &plan, validation, seed, None, &mut ())?;
    Ok(h.remove(0))
}

/// Runs the stages in order, carrying parameters forward. Each stage starts
/// with a fresh optimizer unless it is the one being resumed.
pub fn pretrain_then_finetune<T: Scalar, B: Backbone<T>>(
    backbone: &mut B,
    stages: &[StagePlan<'_, T>],
    validation: &Dataset<T>,
    seed: u64,
    resume: Option<ResumePoint<T>>,
    observer: &mut dyn TrainObserver<T>,
) -> Result<Vec<TrainHistory<T>>> {
    if stages.is_empty() {
        return Err(Error::Empty("pretrain_then_finetune: no stages"));
    }
    for s in stages {
        s.spec.validate()?;
        if s.sources.len() != s.spec.datasets.len() {
            return Err(Error::param(format!(
                "stage '{}' declares {} datasets but {} were supplied",
                s.spec.name,
                s.spec.datasets.len(),
                s.sources.len()
            )));
        }
    }
    let (first_stage, mut histories, mut resume_state) = match resume {
        None => (0, Vec::new(), None),
        Some(r) => {
            if r.stage_index >= stages.len() {
                return Err(Error::param(format!(
                    "resume stage {} but only {} stages configured",
                    r.stage_index,
                    stages.len()
                )));
            }
            let mut histories = r.histories;
            if histories.len() != r.stage_index + 1 {
                return Err(Error::param("resume history does not match its stage index"));
            }
            let current = histories.pop();
            (r.stage_index, histories, Some((r.epochs_done, r.optimizer, current)))
        }
    };

    for (si, plan) in stages.iter().enumerate().skip(first_stage) {
        let spec = plan.spec;
        let n = backbone.params().len();
        let (start, mut opt, mut hist) = match resume_state.take() {
            Some((done, opt, Some(h))) => (done, opt, h),
            _ => (0, OptimizerState::new(spec.optimizer, n), TrainHistory::new(&spec.name)),
        };
        if opt.first.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: opt.first.len(),
            });
        }
        let pools: Vec<Vec<usize>> = plan
            .sources
            .iter()
            .map(|d| {
                (0..d.len())
                    .filter(|&i| !spec.explicit_only || d.samples[i].explicit)
                    .collect::<Vec<_>>()
            })
            .collect();
        if pools.iter().any(Vec::is_empty) {
            return Err(Error::Empty("training stage has an empty dataset"));
        }
        let weights = spec.normalized_weights();
        let trainable = match spec.freeze {
            FreezePolicy::None => 0..n,
            FreezePolicy::BackboneFrozen => backbone.head_range(),
        };
        let lr = T::lit(spec.learning_rate);
        let momentum = T::lit(spec.momentum);
        let alpha = T::lit(spec.alpha);

        for e in start..spec.epochs {
            let epoch = e + 1;
            let diverged = |detail: String| Error::Diverged {
                stage: spec.name.clone(),
                epoch,
                detail,
            };
            let order = draw_order(&pools, &weights, &mut epoch_rng(seed, si, e))?;
            let mut loss_sum = T::zero();
            for batch in order.chunks(spec.batch_size) {
                let model = &*backbone;
                let per_sample: Vec<(T, Vec<T>)> = batch
                    .par_iter()
                    .map(|&(s, i)| {
                        let smp = &plan.sources[s].samples[i];
                        let loss = std::cell::Cell::new(T::zero());
                        let dloss = |z: &[T; 3]| {
                            let z = Logits3::from_array(*z).map_err(|_| diverged(format!("non-finite logits {z:?}")))?;
                            loss.set(hierarchical_ce_from_logits(&z, smp.label, alpha)?.total);
                            hierarchical_ce_grad(&z, smp.label, alpha)
                        };
                        let (_, g) = model.gradient(&smp.tensor, &dloss)?;
                        Ok((loss.get(), g))
                    })
                    .collect::<Result<_>>()?;
                let mut grad = vec![T::zero(); n];
                let mut batch_loss = T::zero();
                for (l, g) in &per_sample {
                    batch_loss = batch_loss + *l;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a = *a + *b;
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(diverged(format!("non-finite loss {batch_loss}")));
                }
                let inv = T::one() / T::lit(batch.len() as f64);
                grad.iter_mut().for_each(|g| *g = *g * inv);
                opt.step(backbone.params_mut(), &grad, trainable.clone(), lr, momentum)?;
                if let Some(i) = backbone.params().iter().position(|p| !p.is_finite()) {
                    return Err(diverged(format!("parameter {i} became non-finite")));
                }
                loss_sum = loss_sum + batch_loss;
            }
            let record = EpochRecord {
                epoch,
                loss: loss_sum / T::lit(order.len() as f64),
                val_accuracy_binary: binary_accuracy(&*backbone, validation)?,
            };
            hist.epochs.push(record.clone());
            histories.push(hist);
            let r = observer.on_epoch(&EpochProgress {
                stage_index: si,
                spec,
                record: &record,
                params: backbone.params(),
                optimizer: &opt,
                histories: &histories,
            })?;
            hist = histories.pop().expect("pushed above");
            if let Some(r) = r {
                hist.checkpoints.push(r);
            }
        }
        histories.push(hist);
    }
    Ok(histories)
}
