use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use sescan_core::datakit::synth::{write_dataset, MANIFEST_FILE};
use sescan_core::datakit::{class_counts, generate_synthetic_dataset, ClassCounts, GeneratorConfig};

use crate::common::{load_toml, out_dir, write_json, CmdResult, OrFail, SCHEMA_VERSION};

#[derive(Args)]
pub struct GenerateArgs {
    /// Generator spec (TOML). Defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec's sample count.
    #[arg(long, allow_negative_numbers = true)]
    samples: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    schema_version: u32,
    seed: u64,
    counts: ClassCounts,
    config: GeneratorConfig,
}

pub fn run(args: GenerateArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(p) => load_toml::<GeneratorConfig>(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    cfg.validate().config_err()?;
    let ds = generate_synthetic_dataset(&cfg).config_err()?;
    let dir = out_dir(args.out, "generate")?;
    write_dataset(&dir, &ds).runtime_err()?;
    let counts = class_counts(&ds.records);
    write_json(
        &dir.join("summary.json"),
        &Summary {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            counts,
            config: cfg,
        },
    )?;
    println!("wrote {} records to {}", ds.len(), dir.join(MANIFEST_FILE).display());
    Ok(())
}
