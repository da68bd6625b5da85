use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cross_section, Axis, CrossSection, DatasetSpec, SweepError, SweepGrid, SweepRecord};
use crate::table::{fmt_float, parse_table};

pub const DATA_HEADER: &str = "determination loss val_loss";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub determination: f64,
    pub loss: f64,
    pub val_loss: f64,
}

/// Header plus one `Q loss val_loss` row per record, Q ascending.
pub fn format_data_file(section: &CrossSection) -> String {
    let mut out = String::from(DATA_HEADER);
    out.push('\n');
    for r in &section.records {
        let (Some(loss), Some(val)) = (r.loss, r.val_loss) else {
            continue;
        };
        out.push_str(&format!(
            "{} {} {}\n",
            fmt_float(r.q.value()),
            fmt_float(loss),
            fmt_float(val)
        ));
    }
    out
}

pub fn parse_data_file(text: &str) -> Result<Vec<DataRow>, SweepError> {
    Ok(parse_table(text, DATA_HEADER)?
        .into_iter()
        .map(|r| DataRow {
            determination: r[0],
            loss: r[1],
            val_loss: r[2],
        })
        .collect())
}

fn write(path: &Path, contents: &str) -> Result<(), SweepError> {
    fs::write(path, contents).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_data_file(section: &CrossSection, path: &Path) -> Result<(), SweepError> {
    if section.records.is_empty() {
        return Err(SweepError::EmptySection { axis: section.axis });
    }
    write(path, &format_data_file(section))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub heads: usize,
    pub encoders: usize,
    pub seed: u64,
    pub params: u64,
    /// Exact `M·K/P` as `numerator/denominator`.
    pub q: String,
    pub ok: bool,
}

/// Everything needed to reproduce a sweep; contains no timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub grid: SweepGrid,
    pub dataset: DatasetSpec,
    pub train_samples: usize,
    pub test_samples: usize,
    pub configs: Vec<ConfigEntry>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputFiles {
    pub manifest: PathBuf,
    pub records: PathBuf,
    pub failures: PathBuf,
    pub sections: Vec<(Axis, PathBuf)>,
}

/// Writes `manifest.json`, `records.json`, `failures.log` and the two
/// cross-section tables `<prefix>_t<fixed>.data` and `<prefix>_h<fixed>.data`.
/// An empty section is reported in the failures log instead of a table.
#[allow(clippy::too_many_arguments)]
pub fn write_outputs(
    dir: &Path,
    prefix: &str,
    grid: &SweepGrid,
    dataset: &DatasetSpec,
    train_samples: usize,
    test_samples: usize,
    records: &[SweepRecord],
    fixed: usize,
) -> Result<OutputFiles, SweepError> {
    fs::create_dir_all(dir).map_err(|source| SweepError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut failures = String::new();
    for r in records.iter().filter(|r| !r.ok()) {
        failures.push_str(&format!(
            "h={} t={}: {}\n",
            r.heads,
            r.encoders,
            r.error.as_deref().unwrap_or("no result")
        ));
    }
    let mut sections = Vec::new();
    for (axis, tag) in [(Axis::Encoders(fixed), "t"), (Axis::Heads(fixed), "h")] {
        match cross_section(records, axis) {
            Ok(section) => {
                let path = dir.join(format!("{prefix}_{tag}{fixed}.data"));
                emit_data_file(&section, &path)?;
                sections.push((axis, path));
            }
            Err(e) => failures.push_str(&format!("{e}\n")),
        }
    }
    let failures_path = dir.join("failures.log");
    write(&failures_path, &failures)?;
    let records_path = dir.join("records.json");
    write(
        &records_path,
        &(serde_json::to_string_pretty(records).expect("records serialize") + "\n"),
    )?;

    let mut outputs: Vec<String> = sections
        .iter()
        .map(|(_, p)| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    outputs.extend(["records.json".to_string(), "failures.log".to_string()]);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        grid: grid.clone(),
        dataset: dataset.clone(),
        train_samples,
        test_samples,
        configs: records
            .iter()
            .map(|r| ConfigEntry {
                heads: r.heads,
                encoders: r.encoders,
                seed: r.seed,
                params: r.params,
                q: format!("{}/{}", r.q.numer(), r.q.denom()),
                ok: r.ok(),
            })
            .collect(),
        outputs,
    };
    let manifest_path = dir.join("manifest.json");
    write(
        &manifest_path,
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    Ok(OutputFiles {
        manifest: manifest_path,
        records: records_path,
        failures: failures_path,
        sections,
    })
}
