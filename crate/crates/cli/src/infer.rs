use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sescan_core::datakit::ImageRecord;
use sescan_core::pipelines::reference::MarkerPartDetector;
use sescan_core::pipelines::{
    classify_by_parts, classify_by_patches, classify_end_to_end, full_csam_pipeline, load_image,
    AgeEstimator, AnnotatedAge, AnnotatedParts, AnnotatedPersons, BodyPartDetector, EndToEnd,
    FixedAge, Patches, PipelineResult, SeStrategy, DEFAULT_CONF_THRESHOLD, DEFAULT_PADDING,
};
use sescan_core::taxonomy::AgePresence;
use sescan_core::training::{BackboneClassifier, Checkpoint, ConvNet};

use crate::common::{
    check_holdout, config, load_config, load_mapping, manifest_dir, out_dir, overlay, read_folds, read_manifest,
    rebase, require, split_by_fold, write_jsonl, CmdResult, OrFail, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    End2end,
    Patch,
    Bodyparts,
    Csam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorArg {
    /// Replay the manifest's person or body-part boxes.
    Annotations,
    /// Color-blob body-part detector for the synthetic data.
    Marker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeStubArg {
    /// Every image has a minor.
    Minor,
    /// No image has a minor.
    Adult,
    /// Minor present iff a person box is annotated as a minor.
    Annotations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeStrategyArg {
    End2end,
    Patch,
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InferArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Images to process; paths are resolved against the manifest's
    /// directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Model for the end2end, patch and csam strategies.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Person detector (patch) or body-part detector (bodyparts).
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// Age model stand-in; required by the csam strategy.
    #[arg(long, value_enum)]
    age_stub: Option<AgeStubArg>,
    /// SE stage of the csam strategy (default end2end).
    #[arg(long, value_enum)]
    se_strategy: Option<SeStrategyArg>,
    /// Detector confidence threshold (default 0.5).
    #[arg(long)]
    threshold: Option<f64>,
    /// Person-box padding as a fraction of box size (default 0.1).
    #[arg(long)]
    padding: Option<f64>,
    /// Restrict to fold `--fold-index` of this fold CSV.
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long)]
    fold_index: Option<usize>,
    /// Folds held out from `--fold-index` on (default 1, at most k - 1).
    #[arg(long)]
    holdout_folds: Option<usize>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResultLine<'a> {
    schema_version: u32,
    id: &'a str,
    #[serde(flatten)]
    result: PipelineResult<f64>,
}

/// Fully checked inference plan.
struct Plan {
    strategy: StrategyArg,
    model: Option<BackboneClassifier<ConvNet<f64>>>,
    detector: Option<DetectorArg>,
    age_stub: Option<AgeStubArg>,
    se_strategy: SeStrategyArg,
    threshold: f64,
    padding: f64,
}

impl Plan {
    fn run_one(&self, record: &ImageRecord, base: &std::path::Path) -> CmdResult<PipelineResult<f64>> {
        let image = load_image(&record.resolve_image_path(base)).config_err()?;
        let persons = AnnotatedPersons {
            boxes: record.person_boxes.clone(),
        };
        let model = self.model.as_ref();
        let result = match self.strategy {
            StrategyArg::End2end => classify_end_to_end(model.expect("checked"), &image),
            StrategyArg::Patch => classify_by_patches(&persons, model.expect("checked"), &image, self.threshold, self.padding),
            StrategyArg::Bodyparts => {
                let det: Box<dyn BodyPartDetector<f64>> = match self.detector.expect("checked") {
                    DetectorArg::Annotations => Box::new(AnnotatedParts {
                        boxes: record.part_boxes.clone(),
                    }),
                    DetectorArg::Marker => Box::new(MarkerPartDetector::default()),
                };
                classify_by_parts(det.as_ref(), &image, self.threshold)
            }
            StrategyArg::Csam => {
                let age: Box<dyn AgeEstimator> = match self.age_stub.expect("checked") {
                    AgeStubArg::Minor => Box::new(FixedAge(AgePresence::MinorPresent)),
                    AgeStubArg::Adult => Box::new(FixedAge(AgePresence::AdultsOnly)),
                    AgeStubArg::Annotations => Box::new(AnnotatedAge {
                        persons: record.person_boxes.clone(),
                    }),
                };
                let m = model.expect("checked");
                let se: Box<dyn SeStrategy<f64>> = match self.se_strategy {
                    SeStrategyArg::End2end => Box::new(EndToEnd { model: m }),
                    SeStrategyArg::Patch => Box::new(Patches {
                        detector: &persons,
                        model: m,
                        conf_threshold: self.threshold,
                        padding_fraction: self.padding,
                    }),
                };
                full_csam_pipeline(age.as_ref(), se.as_ref(), &image)
            }
        };
        result.map_err(|e| crate::common::Failure::Runtime(format!("{}: {e}", record.id)))
    }
}

pub fn run(mut args: InferArgs) -> CmdResult {
    let mut file: InferArgs = load_config(args.config.as_deref(), |f: &mut InferArgs, base| {
        rebase(base, &mut f.manifest);
        rebase(base, &mut f.checkpoint);
        rebase(base, &mut f.folds);
        rebase(base, &mut f.mapping);
    })?;
    overlay!(args, file; manifest, checkpoint, strategy, detector, age_stub, se_strategy,
        threshold, padding, folds, fold_index, holdout_folds, mapping);
    let strategy = require(args.strategy, "strategy")?;
    check_holdout(args.fold_index, args.holdout_folds)?;
    let manifest = require(args.manifest, "manifest")?;
    let threshold = args.threshold.unwrap_or(DEFAULT_CONF_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(config(format!("--threshold must lie in [0, 1], got {threshold}")));
    }
    let padding = args.padding.unwrap_or(DEFAULT_PADDING);
    if !(padding.is_finite() && padding >= 0.0) {
        return Err(config(format!("--padding must be finite and >= 0, got {padding}")));
    }
    let se_strategy = args.se_strategy.unwrap_or(SeStrategyArg::End2end);

    let needs_model = strategy != StrategyArg::Bodyparts;
    let needs_persons = strategy == StrategyArg::Patch
        || (strategy == StrategyArg::Csam && se_strategy == SeStrategyArg::Patch);
    if needs_persons && args.detector != Some(DetectorArg::Annotations) {
        return Err(config(
            "person patches need a person detector: pass --detector annotations",
        ));
    }
    if strategy == StrategyArg::Bodyparts && args.detector.is_none() {
        return Err(config("the bodyparts strategy needs --detector annotations|marker"));
    }
    if strategy == StrategyArg::Csam && args.age_stub.is_none() {
        return Err(config("the csam strategy needs --age-stub minor|adult|annotations"));
    }
    let model = if needs_model {
        let path = require(args.checkpoint, "checkpoint")?;
        let ck = Checkpoint::load(&path).config_err()?;
        Some(BackboneClassifier {
            backbone: ck.model::<f64>().config_err()?,
        })
    } else {
        None
    };

    let mapping = load_mapping(args.mapping.as_deref())?;
    let mut records = read_manifest(&manifest, &mapping)?;
    match (&args.folds, args.fold_index) {
        (Some(f), Some(i)) => records = split_by_fold(records, &read_folds(f)?, i, args.holdout_folds)?.1,
        (None, None) => {}
        _ => return Err(config("--folds and --fold-index go together")),
    }
    let plan = Plan {
        strategy,
        model,
        detector: args.detector,
        age_stub: args.age_stub,
        se_strategy,
        threshold,
        padding,
    };
    let base = manifest_dir(&manifest);
    let results: Vec<PipelineResult<f64>> = records
        .par_iter()
        .map(|r| plan.run_one(r, base))
        .collect::<CmdResult<_>>()?;

    let lines: Vec<ResultLine<'_>> = records
        .iter()
        .zip(results)
        .map(|(r, result)| ResultLine {
            schema_version: SCHEMA_VERSION,
            id: &r.id,
            result,
        })
        .collect();
    let dir = out_dir(args.out, "infer")?;
    let path = dir.join("results.jsonl");
    write_jsonl(&path, &lines)?;
    println!("wrote {} results to {}", lines.len(), path.display());
    Ok(())
}
