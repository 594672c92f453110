use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sescan_core::datakit::ImageRecord;
use sescan_core::training::{
    config_fingerprint, pretrain_then_finetune, Checkpoint, ConvNet, ConvNetConfig, Dataset,
    EpochProgress, EpochRecord, ResumePoint, StagePlan, StageSpec, TrainHistory, TrainObserver, TARGET_REF,
};
use sescan_core::fsutil::write_atomic;
use sescan_core::Error;

use crate::common::{
    check_holdout, config, load_config, load_mapping, manifest_dir, out_dir, overlay, read_folds, read_manifest,
    rebase, split_by_fold, write_json, CmdResult, Failure, OrFail, SCHEMA_VERSION,
};

#[derive(Args, Default)]
pub struct TrainArgs {
    /// Training config (TOML): seed, backbone, stages, and any of the
    /// options below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target manifest; stages refer to its training split as `@target`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Fold CSV. With `--fold-index`, that fold is held out for validation.
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long)]
    fold_index: Option<usize>,
    /// Folds held out from `--fold-index` on (default 1, at most k - 1).
    #[arg(long)]
    holdout_folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Checkpoint to continue from (normally `<out>/checkpoints/last.json`).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    seed: Option<u64>,
    manifest: Option<PathBuf>,
    folds: Option<PathBuf>,
    fold_index: Option<usize>,
    holdout_folds: Option<usize>,
    mapping: Option<PathBuf>,
    #[serde(default)]
    backbone: ConvNetConfig,
    #[serde(default)]
    stages: Vec<StageSpec>,
}

/// Everything that determines the trained parameters, hashed into each
/// checkpoint. Paths are left out so that moved data does not block resume.
#[derive(Serialize)]
struct Fingerprinted<'a> {
    seed: u64,
    backbone: &'a ConvNetConfig,
    stages: &'a [StageSpec],
    fold_index: Option<usize>,
    holdout_folds: Option<usize>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    schema_version: u32,
    stage: &'a str,
    stage_index: usize,
    epoch: usize,
    loss: f64,
    val_accuracy_binary: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    fingerprint: &'a str,
    seed: u64,
    train_samples: usize,
    validation_samples: usize,
    final_checkpoint: &'a str,
    final_val_accuracy_binary: Option<f64>,
    histories: &'a [TrainHistory<f64>],
}

const DEFAULT_EPOCHS: usize = 10;

fn file_stem(stage: &str) -> String {
    stage
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

struct Writer {
    dir: PathBuf,
    fingerprint: String,
    config: ConvNetConfig,
    log: Vec<String>,
}

impl Writer {
    fn log_line(stage_index: usize, stage: &str, e: &EpochRecord<f64>) -> sescan_core::Result<String> {
        serde_json::to_string(&LogLine {
            schema_version: SCHEMA_VERSION,
            stage,
            stage_index,
            epoch: e.epoch,
            loss: e.loss,
            val_accuracy_binary: e.val_accuracy_binary,
        })
        .map_err(|source| Error::Json {
            context: "train log".into(),
            source,
        })
    }

    fn flush_log(&self) -> sescan_core::Result<()> {
        let mut text = self.log.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_atomic(&self.dir.join("train_log.jsonl"), text.as_bytes())
    }
}

impl TrainObserver<f64> for Writer {
    fn on_epoch(&mut self, p: &EpochProgress<'_, f64>) -> sescan_core::Result<Option<String>> {
        let model = ConvNet::from_params(self.config, p.params.to_vec())?;
        let mut histories = p.histories.to_vec();
        let stage_ref = (p.record.epoch == p.spec.epochs)
            .then(|| format!("checkpoints/{}.json", file_stem(&p.spec.name)));
        if let (Some(r), Some(h)) = (&stage_ref, histories.last_mut()) {
            h.checkpoints.push(r.clone());
        }
        let mut ck = Checkpoint::from_model(&model, &p.spec.name, p.stage_index, p.record.epoch, self.fingerprint.clone());
        ck.optimizer = Some(p.optimizer.clone());
        ck.histories = histories;
        if let Some(r) = &stage_ref {
            ck.save(&self.dir.join(r))?;
        }
        ck.save(&self.dir.join("checkpoints/last.json"))?;
        self.log.push(Writer::log_line(p.stage_index, &p.spec.name, p.record)?);
        self.flush_log()?;
        Ok(stage_ref)
    }
}

pub fn run(mut args: TrainArgs) -> CmdResult {
    let config_dir = args
        .config
        .as_deref()
        .map(|p| p.parent().unwrap_or(Path::new("")).to_path_buf())
        .unwrap_or_default();
    let mut file: TrainFile = load_config(args.config.as_deref(), |f: &mut TrainFile, base| {
        rebase(base, &mut f.manifest);
        rebase(base, &mut f.folds);
        rebase(base, &mut f.mapping);
    })?;
    overlay!(args, file; manifest, folds, fold_index, holdout_folds, seed, mapping);
    let seed = args.seed.unwrap_or(0);
    check_holdout(args.fold_index, args.holdout_folds)?;
    let mut stages = std::mem::take(&mut file.stages);
    if stages.is_empty() {
        stages.push(StageSpec::new("target", DEFAULT_EPOCHS));
    }
    for s in &stages {
        s.validate().config_err()?;
    }
    let stems: std::collections::BTreeSet<String> = stages.iter().map(|s| file_stem(&s.name)).collect();
    if stems.len() != stages.len() || stems.contains("final") || stems.contains("last") {
        return Err(config("stage names must be distinct and not \"final\" or \"last\""));
    }
    let mapping = load_mapping(args.mapping.as_deref())?;

    // target split
    let needs_target = stages.iter().any(|s| s.datasets.iter().any(|d| d.manifest == TARGET_REF));
    let (target_train, validation, target_dir) = match &args.manifest {
        Some(m) => {
            let records = read_manifest(m, &mapping)?;
            let (train, val) = match (&args.folds, args.fold_index) {
                (Some(f), Some(i)) => split_by_fold(records, &read_folds(f)?, i, args.holdout_folds)?,
                (Some(_), None) => return Err(config("--folds needs --fold-index")),
                (None, Some(_)) => return Err(config("--fold-index needs --folds")),
                (None, None) => (records, Vec::new()),
            };
            (train, val, manifest_dir(m).to_path_buf())
        }
        None if needs_target => return Err(config("a stage trains on @target but no --manifest was given")),
        None => (Vec::new(), Vec::new(), PathBuf::new()),
    };

    // every distinct dataset, decoded once
    let mut datasets: BTreeMap<String, Dataset<f64>> = BTreeMap::new();
    for s in &stages {
        for d in &s.datasets {
            if datasets.contains_key(&d.manifest) {
                continue;
            }
            let data = if d.manifest == TARGET_REF {
                load_dataset(&target_train, &target_dir)?
            } else {
                let p = config_dir.join(&d.manifest);
                let recs = read_manifest(&p, &mapping)?;
                load_dataset(&recs, manifest_dir(&p))?
            };
            if data.is_empty() {
                return Err(config(format!("dataset {:?} of stage {:?} is empty", d.manifest, s.name)));
            }
            datasets.insert(d.manifest.clone(), data);
        }
    }
    let validation_set = load_dataset(&validation, &target_dir)?;

    let fingerprint = config_fingerprint(&Fingerprinted {
        seed,
        backbone: &file.backbone,
        stages: &stages,
        fold_index: args.fold_index,
        holdout_folds: args.holdout_folds.filter(|&n| n != 1),
    })
    .runtime_err()?;

    let (mut model, resume) = match &args.resume {
        None => (ConvNet::<f64>::new(file.backbone, seed).config_err()?, None),
        Some(p) => {
            let ck = Checkpoint::load(p).config_err()?;
            if ck.fingerprint != fingerprint {
                return Err(config(format!(
                    "{} was written by a different training configuration",
                    p.display()
                )));
            }
            let optimizer = ck
                .optimizer
                .clone()
                .ok_or_else(|| config(format!("{} carries no optimizer state", p.display())))?;
            let model = ck.model::<f64>().config_err()?;
            let point = ResumePoint {
                stage_index: ck.stage_index,
                epochs_done: ck.epoch,
                optimizer,
                histories: ck.histories.clone(),
            };
            (model, Some(point))
        }
    };

    let dir = out_dir(args.out, "train")?;
    std::fs::create_dir_all(dir.join("checkpoints")).runtime_err()?;
    let mut writer = Writer {
        dir: dir.clone(),
        fingerprint: fingerprint.clone(),
        config: file.backbone,
        log: Vec::new(),
    };
    if let Some(r) = &resume {
        for (si, h) in r.histories.iter().enumerate() {
            for e in &h.epochs {
                writer.log.push(Writer::log_line(si, &h.stage, e).runtime_err()?);
            }
        }
    }
    writer.flush_log().runtime_err()?;

    let plans: Vec<StagePlan<'_, f64>> = stages
        .iter()
        .map(|s| StagePlan {
            spec: s,
            sources: s.datasets.iter().map(|d| &datasets[&d.manifest]).collect(),
        })
        .collect();
    let histories = pretrain_then_finetune(&mut model, &plans, &validation_set, seed, resume, &mut writer)
        .map_err(|e| match e {
            Error::Diverged { .. } => Failure::Runtime(e.to_string()),
            Error::Io { .. } | Error::Json { .. } => Failure::Runtime(e.to_string()),
            other => Failure::Config(other.to_string()),
        })?;

    let final_ref = "checkpoints/final.json";
    let last = stages.len() - 1;
    let mut ck = Checkpoint::from_model(&model, &stages[last].name, last, stages[last].epochs, fingerprint.clone());
    ck.histories = histories.clone();
    ck.save(&dir.join(final_ref)).runtime_err()?;
    let final_acc = histories
        .last()
        .and_then(|h| h.epochs.last())
        .and_then(|e| e.val_accuracy_binary);
    write_json(
        &dir.join("summary.json"),
        &Summary {
            schema_version: SCHEMA_VERSION,
            fingerprint: &fingerprint,
            seed,
            train_samples: target_train.len(),
            validation_samples: validation.len(),
            final_checkpoint: final_ref,
            final_val_accuracy_binary: final_acc,
            histories: &histories,
        },
    )?;
    match final_acc {
        Some(a) => println!("trained {} stage(s); validation SE/NS accuracy {a:.4}", stages.len()),
        None => println!("trained {} stage(s)", stages.len()),
    }
    Ok(())
}

fn load_dataset(records: &[ImageRecord], base: &Path) -> CmdResult<Dataset<f64>> {
    Dataset::load(records, base).config_err()
}
