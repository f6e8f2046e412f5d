//! On-disk cohort: one MMF1 file per volume, a clinical CSV and a JSON
//! manifest listing both together with the split and a content hash.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use mmfuse::encoders::tabular::{read_csv, write_csv, TabularRow, TabularSchema};
use mmfuse::io::{read_tensor, write_tensor};
use mmfuse::training::{Dataset, Sample, Splits};
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::CliError;

pub const MANIFEST_NAME: &str = "dataset.json";
pub const TABULAR_NAME: &str = "clinical.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeEntry {
    pub id: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u64,
    pub geometry: [usize; 3],
    pub volumes: Vec<VolumeEntry>,
    pub tabular: String,
    pub splits: SplitIds,
    /// SHA-256 over the volume files in listed order, the CSV and the
    /// canonical JSON of `splits`.
    pub sha256: String,
}

struct Encoded {
    volumes: Vec<Vec<u8>>,
    csv: Vec<u8>,
    splits: SplitIds,
    hash: String,
}

fn split_ids(data: &Dataset) -> SplitIds {
    let ids = |idx: &[usize]| idx.iter().map(|&i| data.samples[i].id.clone()).collect();
    SplitIds { train: ids(&data.splits.train), val: ids(&data.splits.val), test: ids(&data.splits.test) }
}

fn content_hash(volumes: &[Vec<u8>], csv: &[u8], splits: &SplitIds) -> String {
    let mut all = Vec::new();
    for v in volumes {
        all.extend_from_slice(v);
    }
    all.extend_from_slice(csv);
    all.extend_from_slice(serde_json::to_string(splits).expect("splits serialise").as_bytes());
    sha256_hex(&all)
}

fn encode(data: &Dataset) -> Result<Encoded, CliError> {
    let mut volumes = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &s.volume)?;
        volumes.push(buf);
    }
    let rows: Vec<TabularRow> =
        data.samples.iter().map(|s| TabularRow { id: s.id.clone(), record: s.record.clone(), label: s.label }).collect();
    let mut csv = Vec::new();
    write_csv(&data.schema, &rows, &mut csv)?;
    let splits = split_ids(data);
    let hash = content_hash(&volumes, &csv, &splits);
    Ok(Encoded { volumes, csv, splits, hash })
}

/// Content hash of a dataset without writing it.
pub fn dataset_hash(data: &Dataset) -> Result<String, CliError> {
    Ok(encode(data)?.hash)
}

/// Writes the cohort under `dir` and returns the manifest path and hash.
pub fn export(data: &Dataset, dir: &Path) -> Result<(PathBuf, String), CliError> {
    let enc = encode(data)?;
    std::fs::create_dir_all(dir.join("volumes"))?;
    let mut entries = Vec::with_capacity(data.samples.len());
    for (s, bytes) in data.samples.iter().zip(&enc.volumes) {
        let file = format!("volumes/{}.mmf1", s.id);
        std::fs::write(dir.join(&file), bytes)?;
        entries.push(VolumeEntry { id: s.id.clone(), file });
    }
    std::fs::write(dir.join(TABULAR_NAME), &enc.csv)?;
    let manifest = DatasetManifest {
        version: 1,
        geometry: data.geometry,
        volumes: entries,
        tabular: TABULAR_NAME.into(),
        splits: enc.splits,
        sha256: enc.hash.clone(),
    };
    let path = dir.join(MANIFEST_NAME);
    crate::report::write_json(&path, &manifest)?;
    Ok((path, enc.hash))
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Failed(format!("dataset: {}", msg.into()))
}

/// Reads a cohort from its manifest and verifies the content hash.
pub fn load(manifest_path: &Path) -> Result<(Dataset, String), CliError> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| data_err(format!("cannot read {}: {e}", manifest_path.display())))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let schema = TabularSchema::default();
    let csv = std::fs::read(dir.join(&m.tabular))?;
    let rows = read_csv(&schema, csv.as_slice())?;
    let by_id: HashMap<&str, &TabularRow> = rows.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut volumes = Vec::with_capacity(m.volumes.len());
    let mut samples = Vec::with_capacity(m.volumes.len());
    for entry in &m.volumes {
        let bytes = std::fs::read(dir.join(&entry.file))?;
        let volume = read_tensor::<f64, _>(&mut bytes.as_slice())?;
        let row = by_id.get(entry.id.as_str()).ok_or_else(|| data_err(format!("no clinical row for {}", entry.id)))?;
        samples.push(Sample { id: entry.id.clone(), volume, record: row.record.clone(), label: row.label });
        volumes.push(bytes);
    }
    let hash = content_hash(&volumes, &csv, &m.splits);
    if hash != m.sha256 {
        return Err(data_err(format!("content hash {hash} does not match manifest {}", m.sha256)));
    }
    let pos: HashMap<&str, usize> = m.volumes.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
    let idx = |ids: &[String]| -> Result<Vec<usize>, CliError> {
        ids.iter().map(|id| pos.get(id.as_str()).copied().ok_or_else(|| data_err(format!("split lists unknown id {id}")))).collect()
    };
    let splits = Splits { train: idx(&m.splits.train)?, val: idx(&m.splits.val)?, test: idx(&m.splits.test)? };
    let data = Dataset { geometry: m.geometry, schema, samples, splits };
    data.validate()?;
    Ok((data, hash))
}
