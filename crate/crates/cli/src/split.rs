use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use sescan_core::datakit::folds::DEFAULT_FOLDS;
use sescan_core::datakit::stratified_folds;

use crate::common::{
    load_config, load_mapping, out_dir, overlay, read_manifest, rebase, require, CmdResult, OrFail,
};

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SplitArgs {
    /// TOML file with any of the options below; flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of folds (default 10).
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Category-to-label table (JSON or TOML).
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

pub fn run(mut args: SplitArgs) -> CmdResult {
    let mut file: SplitArgs = load_config(args.config.as_deref(), |f: &mut SplitArgs, base| {
        rebase(base, &mut f.manifest);
        rebase(base, &mut f.mapping);
    })?;
    overlay!(args, file; manifest, folds, seed, mapping);
    let manifest = require(args.manifest, "manifest")?;
    let mapping = load_mapping(args.mapping.as_deref())?;
    let records = read_manifest(&manifest, &mapping)?;
    let k = args.folds.unwrap_or(DEFAULT_FOLDS);
    let folds = stratified_folds(&records, k, args.seed.unwrap_or(0)).config_err()?;
    let dir = out_dir(args.out, "split")?;
    let path = dir.join("folds.csv");
    folds.save_csv(&path).runtime_err()?;
    println!("wrote {k} folds over {} records to {}", records.len(), path.display());
    Ok(())
}
