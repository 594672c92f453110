use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sescan_core::datakit::folds::holdout_folds;
use sescan_core::datakit::{load_manifest, FoldAssignment, ImageRecord};
use sescan_core::fsutil::write_atomic;
use sescan_core::taxonomy::LabelMappingConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "SESCAN_OUT_DIR";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config files or inputs. Exit code 2.
    Config(String),
    /// The command started but could not finish. Exit code 3.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait OrFail<T> {
    fn config_err(self) -> CmdResult<T>;
    fn runtime_err(self) -> CmdResult<T>;
}

impl<T, E: Display> OrFail<T> for Result<T, E> {
    fn config_err(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Config(e.to_string()))
    }

    fn runtime_err(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.to_string()))
    }
}

pub fn config(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Fills every `None` field of `$flags` from `$file`.
macro_rules! overlay {
    ($flags:expr, $file:expr; $($field:ident),+ $(,)?) => {
        $(
            if $flags.$field.is_none() {
                $flags.$field = $file.$field.take();
            }
        )+
    };
}
pub(crate) use overlay;

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> CmdResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
}

/// Loads an optional config file, rebasing its relative paths onto the
/// file's directory via `rebase`.
pub fn load_config<T: DeserializeOwned + Default>(
    path: Option<&Path>,
    rebase: impl FnOnce(&mut T, &Path),
) -> CmdResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let mut v: T = load_toml(p)?;
            rebase(&mut v, p.parent().unwrap_or(Path::new("")));
            Ok(v)
        }
    }
}

pub fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

/// `--out` if given, else `$SESCAN_OUT_DIR/<command>`, else
/// `sescan-out/<command>`.
pub fn out_dir(flag: Option<PathBuf>, command: &str) -> CmdResult<PathBuf> {
    let dir = flag.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("sescan-out"))
            .join(command)
    });
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn require<T>(v: Option<T>, flag: &str) -> CmdResult<T> {
    v.ok_or_else(|| config(format!("missing required option --{flag}")))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).runtime_err()?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).runtime_err()
}

pub fn write_jsonl<S: Serialize>(path: &Path, lines: &[S]) -> CmdResult {
    let mut text = String::new();
    for l in lines {
        text.push_str(&serde_json::to_string(l).runtime_err()?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).runtime_err()
}

/// Built-in mapping unless a JSON or TOML table of category -> label is
/// given.
pub fn load_mapping(path: Option<&Path>) -> CmdResult<LabelMappingConfig> {
    let Some(p) = path else {
        return Ok(LabelMappingConfig::default());
    };
    if p.extension().is_some_and(|e| e == "toml") {
        return load_toml(p);
    }
    let text = std::fs::read_to_string(p).map_err(|e| config(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", p.display())))
}

pub fn read_manifest(path: &Path, mapping: &LabelMappingConfig) -> CmdResult<Vec<ImageRecord>> {
    load_manifest(path, mapping).config_err()
}

pub fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

pub fn read_folds(path: &Path) -> CmdResult<FoldAssignment> {
    FoldAssignment::load_csv(path).config_err()
}

pub fn check_holdout(fold_index: Option<usize>, holdout: Option<usize>) -> CmdResult {
    if holdout.is_some() && fold_index.is_none() {
        return Err(config("--holdout-folds needs --fold-index"));
    }
    Ok(())
}

/// Splits `records` into (rest, held out), holding out fold `index` and the
/// `holdout - 1` folds after it. Every record must have a fold.
pub fn split_by_fold(
    records: Vec<ImageRecord>,
    folds: &FoldAssignment,
    index: usize,
    holdout: Option<usize>,
) -> CmdResult<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    let held_folds = holdout_folds(folds, index, holdout.unwrap_or(1)).config_err()?;
    let mut rest = Vec::new();
    let mut held = Vec::new();
    for r in records {
        match folds.fold_of(&r.id) {
            Some(f) if held_folds.contains(&f) => held.push(r),
            Some(_) => rest.push(r),
            None => return Err(config(format!("record {:?} has no fold assignment", r.id))),
        }
    }
    Ok((rest, held))
}
