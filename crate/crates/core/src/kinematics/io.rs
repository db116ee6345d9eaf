//! Line-delimited JSON files for cases (`.cases.jsonl`) and joint sequences
//! (`.frames.jsonl`). Every record carries a `schema_version`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Case, Dataset, JointSequence};
use crate::error::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

macro_rules! named_features {
    ($module:ident, $names:path) => {
        /// Serialise a feature vector as an object keyed by the fixed schema.
        pub mod $module {
            use serde::de::Error as _;
            use serde::ser::SerializeMap;
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
                let names = &$names;
                if values.len() != names.len() {
                    return Err(serde::ser::Error::custom("feature vector does not match schema"));
                }
                let mut map = s.serialize_map(Some(names.len()))?;
                for (name, v) in names.iter().zip(values) {
                    map.serialize_entry(name, v)?;
                }
                map.end()
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
                let map = std::collections::HashMap::<String, f64>::deserialize(d)?;
                let names = &$names;
                if map.len() != names.len() {
                    return Err(D::Error::custom(format!("expected {} features, found {}", names.len(), map.len())));
                }
                names
                    .iter()
                    .map(|n| map.get(*n).copied().ok_or_else(|| D::Error::custom(format!("missing feature `{n}`"))))
                    .collect()
            }
        }
    };
}

named_features!(rom_named, crate::kinematics::ROM_FEATURES);
named_features!(comp_named, crate::kinematics::COMP_FEATURES);

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, &Versioned { schema_version: DATASET_SCHEMA_VERSION, record: r })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse { line: line_no, message: "missing schema_version".into() })?;
        if version != u64::from(DATASET_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion(version as u32));
        }
        let record = serde_json::from_value(value).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), &dataset.cases)
}

/// Load cases and validate labels against `class_count`.
pub fn load_dataset(path: impl AsRef<Path>, class_count: usize) -> Result<Dataset> {
    let cases: Vec<Case> = read_lines(path.as_ref())?;
    Dataset::new(class_count, cases)
}

pub fn save_sequences(sequences: &[JointSequence], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), sequences)
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<JointSequence>> {
    let seqs: Vec<JointSequence> = read_lines(path.as_ref())?;
    for s in &seqs {
        s.validate()?;
    }
    Ok(seqs)
}
