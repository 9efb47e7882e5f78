//! Shared plumbing for the subcommands.

use anyhow::{Context, Result};
use std::io::Write;
use std::path::{Path, PathBuf};
use stgcl::config::RunConfig;
use stgcl::dataset::Dataset;
use stgcl::ingest::ingest_manifest;
use stgcl::TrackedClip;

/// Load the run configuration, or defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    match path {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            let base = p.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
            Ok((cfg, base))
        }
        None => Ok((RunConfig::default(), PathBuf::from("."))),
    }
}

/// Resolve a path relative to the config file unless it is absolute.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_clips(manifest: &Path, cfg: &RunConfig) -> Result<Vec<TrackedClip>> {
    let clips = ingest_manifest(manifest, &cfg.ingest_config())
        .with_context(|| format!("ingesting '{}'", manifest.display()))?;
    Ok(clips)
}

pub fn load_dataset(manifest: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let clips = load_clips(manifest, cfg)?;
    let class_count = cfg.data.classes.len().max(1);
    Ok(Dataset::from_clips(clips, &cfg.graph_config(), class_count)?)
}

/// Writer for `--out`: a file path, or stdout when the path is `-`.
pub fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(std::io::stdout().lock()))
    } else {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating '{}'", parent.display()))?;
            }
        }
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating '{}'", path.display()))?;
        Ok(Box::new(std::io::BufWriter::new(file)))
    }
}
