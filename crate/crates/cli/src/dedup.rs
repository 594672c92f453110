use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use sescan_core::datakit::dedup::load_embeddings;
use sescan_core::datakit::{keep_all, near_duplicate_filter, Cluster};
use sescan_core::fsutil::write_atomic;

use crate::common::{
    config, load_config, out_dir, overlay, rebase, require, write_json, CmdResult, OrFail, SCHEMA_VERSION,
};

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DedupArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// `id,v1,v2,...` CSV, or the binary format when the name ends in `.bin`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Euclidean distance at or below which an image counts as a duplicate.
    /// 0 disables filtering.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ClusterFile<'a> {
    schema_version: u32,
    threshold: f64,
    kept: usize,
    dropped: usize,
    /// Clusters with at least one dropped member; representative first.
    clusters: Vec<&'a Cluster>,
}

pub fn run(mut args: DedupArgs) -> CmdResult {
    let mut file: DedupArgs = load_config(args.config.as_deref(), |f: &mut DedupArgs, base| {
        rebase(base, &mut f.embeddings)
    })?;
    overlay!(args, file; embeddings, threshold);
    let path = require(args.embeddings, "embeddings")?;
    let threshold = require(args.threshold, "threshold")?;
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(config(format!("--threshold must be finite and >= 0, got {threshold}")));
    }
    let embeddings = load_embeddings::<f64>(&path).config_err()?;
    // the keep rule is "distance > threshold", which at 0 would still merge
    // exact duplicates; 0 is taken to mean filtering is off
    let outcome = if threshold == 0.0 {
        keep_all(&embeddings)
    } else {
        near_duplicate_filter(&embeddings, threshold)
    }
    .config_err()?;

    let dir = out_dir(args.out, "dedup")?;
    let mut kept_txt = String::new();
    for id in &outcome.kept {
        kept_txt.push_str(id);
        kept_txt.push('\n');
    }
    write_atomic(&dir.join("kept.txt"), kept_txt.as_bytes()).runtime_err()?;
    let dropped = outcome.dropped().count();
    write_json(
        &dir.join("clusters.json"),
        &ClusterFile {
            schema_version: SCHEMA_VERSION,
            threshold,
            kept: outcome.kept.len(),
            dropped,
            clusters: outcome.duplicate_clusters().collect(),
        },
    )?;
    println!("kept {} of {} ids", outcome.kept.len(), embeddings.len());
    Ok(())
}
