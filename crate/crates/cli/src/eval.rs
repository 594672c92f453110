use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use sescan_core::datakit::{AgeGroup, FoldAssignment, ImageRecord};
use sescan_core::evalkit::{
    aggregate_folds, classification_report, nudity_report, AggregateReport, ClassificationReport,
    DetectionEvalConfig, NudityEval, NudityReport,
};
use sescan_core::pipelines::{PipelineResult, Strategy};
use sescan_core::taxonomy::{csam_decision, AgePresence, FinalClass, FineLabel};

use crate::common::{
    check_holdout, config, load_config, load_mapping, out_dir, overlay, read_folds, read_manifest, rebase, require,
    split_by_fold, write_json, CmdResult, OrFail, SCHEMA_VERSION,
};

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// `results.jsonl` from `sescan infer`.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Fold CSV: adds per-fold reports and their mean/std.
    #[arg(long)]
    folds: Option<PathBuf>,
    /// Evaluate a single held-out fold of `--folds`.
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

#[derive(Deserialize)]
struct ResultLine {
    schema_version: u32,
    id: String,
    #[serde(flatten)]
    result: PipelineResult<f64>,
}

#[derive(Serialize)]
struct CsamReport {
    samples: usize,
    /// Share of images whose final class equals the one derived from the
    /// annotated ages and the ground-truth label.
    accuracy: f64,
    /// Rows ground truth, columns prediction: csam, adult_pornography, neutral.
    confusion: [[usize; 3]; 3],
}

#[derive(Serialize, Default)]
struct Section {
    samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    classification: Option<ClassificationReport<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nudity: Option<NudityReport<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    csam: Option<CsamReport>,
}

#[derive(Serialize)]
struct FoldSection {
    fold: usize,
    #[serde(flatten)]
    section: Section,
}

#[derive(Serialize, Default)]
struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none")]
    classification: Option<AggregateReport<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nudity: Option<AggregateReport<f64>>,
}

#[derive(Serialize)]
struct Report {
    schema_version: u32,
    strategy: Strategy,
    #[serde(flatten)]
    overall: Section,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    folds: Vec<FoldSection>,
    /// Unweighted mean and sample std over folds.
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<Aggregates>,
}

fn final_index(c: FinalClass) -> usize {
    match c {
        FinalClass::Csam => 0,
        FinalClass::AdultPornography => 1,
        FinalClass::Neutral => 2,
    }
}

fn section(pairs: &[(&ImageRecord, &PipelineResult<f64>)]) -> CmdResult<Section> {
    let mut s = Section {
        samples: pairs.len(),
        ..Section::default()
    };
    if pairs.is_empty() {
        return Ok(s);
    }
    let preds: Option<Vec<FineLabel>> = pairs.iter().map(|(_, r)| r.fine_label).collect();
    if let Some(preds) = preds {
        let gt: Vec<FineLabel> = pairs.iter().map(|(r, _)| r.fine_label).collect();
        s.classification = Some(classification_report(&preds, &gt).config_err()?);
    }
    if pairs.iter().all(|(_, r)| r.nudity_flag.is_some()) {
        let evals: Vec<NudityEval<f64>> = pairs
            .iter()
            .map(|(rec, r)| NudityEval {
                label: rec.fine_label,
                nudity_flag: r.nudity_flag.unwrap_or(false),
                detections: r.detections.clone(),
                gt_parts: rec.part_boxes.clone(),
            })
            .collect();
        s.nudity = Some(nudity_report(&evals, &DetectionEvalConfig::default()).config_err()?);
    }
    let finals: Option<Vec<FinalClass>> = pairs.iter().map(|(_, r)| r.final_class).collect();
    if let Some(finals) = finals {
        let mut confusion = [[0usize; 3]; 3];
        let mut correct = 0;
        for ((rec, _), pred) in pairs.iter().zip(finals) {
            let age = if rec.person_boxes.iter().any(|p| p.age_group == AgeGroup::Minor) {
                AgePresence::MinorPresent
            } else {
                AgePresence::AdultsOnly
            };
            let truth = csam_decision(age, rec.fine_label.to_binary());
            confusion[final_index(truth)][final_index(pred)] += 1;
            correct += usize::from(truth == pred);
        }
        s.csam = Some(CsamReport {
            samples: pairs.len(),
            accuracy: correct as f64 / pairs.len() as f64,
            confusion,
        });
    }
    Ok(s)
}

fn read_results(path: &PathBuf) -> CmdResult<Vec<ResultLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ResultLine = serde_json::from_str(line)
            .map_err(|e| config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(config(format!(
                "{}:{}: unsupported schema_version {}",
                path.display(),
                i + 1,
                r.schema_version
            )));
        }
        out.push(r);
    }
    Ok(out)
}

fn list(ids: &[&str]) -> String {
    const SHOWN: usize = 20;
    let mut s = ids.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" (+{} more)", ids.len() - SHOWN));
    }
    s
}

pub fn run(mut args: EvalArgs) -> CmdResult {
    let mut file: EvalArgs = load_config(args.config.as_deref(), |f: &mut EvalArgs, base| {
        rebase(base, &mut f.results);
        rebase(base, &mut f.manifest);
        rebase(base, &mut f.folds);
        rebase(base, &mut f.mapping);
    })?;
    overlay!(args, file; results, manifest, folds, fold_index, holdout_folds, mapping);
    let results_path = require(args.results, "results")?;
    check_holdout(args.fold_index, args.holdout_folds)?;
    let manifest = require(args.manifest, "manifest")?;
    let mapping = load_mapping(args.mapping.as_deref())?;
    let mut records = read_manifest(&manifest, &mapping)?;
    let folds: Option<FoldAssignment> = args.folds.as_deref().map(read_folds).transpose()?;
    match (&folds, args.fold_index) {
        (Some(f), Some(i)) => records = split_by_fold(records, f, i, args.holdout_folds)?.1,
        (None, Some(_)) => return Err(config("--fold-index needs --folds")),
        _ => {}
    }
    let results = read_results(&results_path)?;
    if results.is_empty() {
        return Err(config(format!("{} holds no results", results_path.display())));
    }

    let mut by_id: BTreeMap<&str, &PipelineResult<f64>> = BTreeMap::new();
    for r in &results {
        if by_id.insert(&r.id, &r.result).is_some() {
            return Err(config(format!("duplicate result id {:?}", r.id)));
        }
    }
    let manifest_ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let missing: Vec<&str> = manifest_ids.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    let unknown: Vec<&str> = by_id.keys().copied().filter(|id| !manifest_ids.contains(id)).collect();
    if !missing.is_empty() || !unknown.is_empty() {
        let mut msg = String::from("result ids do not match the manifest");
        if !missing.is_empty() {
            msg.push_str(&format!("; missing results for {} id(s): {}", missing.len(), list(&missing)));
        }
        if !unknown.is_empty() {
            msg.push_str(&format!("; {} id(s) not in the manifest: {}", unknown.len(), list(&unknown)));
        }
        return Err(config(msg));
    }
    let strategy = results[0].result.strategy;
    if results.iter().any(|r| r.result.strategy != strategy) {
        return Err(config("results mix several strategies"));
    }

    let pairs: Vec<(&ImageRecord, &PipelineResult<f64>)> = records.iter().map(|r| (r, by_id[r.id.as_str()])).collect();
    let overall = section(&pairs)?;
    let mut fold_sections = Vec::new();
    let mut aggregate = None;
    if let (Some(f), None) = (&folds, args.fold_index) {
        for k in 0..f.k() {
            let sel: Vec<_> = pairs
                .iter()
                .filter(|(r, _)| f.fold_of(&r.id) == Some(k))
                .copied()
                .collect();
            if sel.is_empty() {
                continue;
            }
            fold_sections.push(FoldSection {
                fold: k,
                section: section(&sel)?,
            });
        }
        let cls: Vec<_> = fold_sections.iter().filter_map(|s| s.section.classification.clone()).collect();
        let nud: Vec<_> = fold_sections.iter().filter_map(|s| s.section.nudity.clone()).collect();
        aggregate = Some(Aggregates {
            classification: (!cls.is_empty()).then(|| aggregate_folds(&cls)).transpose().config_err()?,
            nudity: (!nud.is_empty()).then(|| aggregate_folds(&nud)).transpose().config_err()?,
        });
    }

    let report = Report {
        schema_version: SCHEMA_VERSION,
        strategy,
        overall,
        folds: fold_sections,
        aggregate,
    };
    let dir = out_dir(args.out, "eval")?;
    let path = dir.join("metrics.json");
    write_json(&path, &report)?;
    if let Some(c) = &report.overall.classification {
        println!("SE/NS accuracy {:.4}, F1 {:.4} over {} images", c.accuracy_binary, c.f1_binary, c.samples);
    }
    println!("wrote {}", path.display());
    Ok(())
}
