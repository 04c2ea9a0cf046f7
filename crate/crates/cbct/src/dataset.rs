//! Training datasets listed in a JSON manifest of (volume, projections)
//! file pairs. Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use cbct_core::trainer::TrainSample;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{read_json, read_projections, read_volume, write_json, Location};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    #[serde(default)]
    pub id: Option<String>,
    pub volume: PathBuf,
    pub projections: PathBuf,
}

pub fn read_manifest(path: &Path) -> CliResult<Vec<DatasetEntry>> {
    read_json(path)
}

pub fn write_manifest(path: &Path, entries: &[DatasetEntry]) -> CliResult<()> {
    write_json(path, &entries)
}

pub fn load_dataset(manifest: &Path) -> CliResult<Vec<TrainSample>> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(CliError::invalid(format!("{}: dataset is empty", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let volume = read_volume(&Location::File(base.join(&e.volume)))?;
            let projections = read_projections(&Location::File(base.join(&e.projections)))?;
            let id = e.id.clone().unwrap_or_else(|| format!("{i}:{}", e.volume.display()));
            Ok(TrainSample { id, projections, volume })
        })
        .collect()
}
