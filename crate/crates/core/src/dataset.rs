//! Manifest CSV and the labelled dataset built from it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 5] = ["path", "species", "location", "date", "duration_s"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("dataset is empty")]
    Empty,
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub species: String,
    pub location: String,
    pub date: String,
    pub duration_s: f64,
}

fn manifest_err(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::Manifest {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| manifest_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| manifest_err(path, e))?;
    }
    w.flush()?;
    if rows.is_empty() {
        std::fs::write(path, MANIFEST_HEADER.join(",") + "\n")?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, DatasetError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(manifest_err(path, "not found"));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| manifest_err(path, e))?;
    let header = r.headers().map_err(|e| manifest_err(path, e))?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(manifest_err(
            path,
            format!("header must be {}", MANIFEST_HEADER.join(",")),
        ));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| manifest_err(path, format!("row {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Audio path, resolved against the manifest directory.
    pub path: PathBuf,
    pub label: usize,
    pub species: String,
    pub location: String,
    pub date: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Class names in order of first appearance.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn from_rows(rows: &[ManifestRow], base_dir: &Path) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut class_names = Vec::new();
        let examples = rows
            .iter()
            .map(|row| {
                let label = *index.entry(&row.species).or_insert_with(|| {
                    class_names.push(row.species.clone());
                    class_names.len() - 1
                });
                Example {
                    path: base_dir.join(&row.path),
                    label,
                    species: row.species.clone(),
                    location: row.location.clone(),
                    date: row.date.clone(),
                }
            })
            .collect();
        Ok(Self { examples, class_names })
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let rows = read_manifest(path)?;
        Self::from_rows(&rows, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(path: &str, species: &str) -> ManifestRow {
        ManifestRow {
            path: path.into(),
            species: species.into(),
            location: "site-1".into(),
            date: "2024-05-01".into(),
            duration_s: 4.0,
        }
    }

    #[test]
    fn manifest_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let rows = vec![row("a/a_0000.wav", "a"), row("b/b_0000.wav", "b")];
        write_manifest(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,species,location,date,duration_s\n"));
        assert_eq!(read_manifest(&p).unwrap(), rows);
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "file,label\nx.wav,a\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(DatasetError::Manifest { .. })));
    }

    #[test]
    fn classes_in_first_appearance_order() {
        let rows = vec![row("1.wav", "wren"), row("2.wav", "owl"), row("3.wav", "wren")];
        let ds = Dataset::from_rows(&rows, Path::new("/data")).unwrap();
        assert_eq!(ds.class_names, vec!["wren", "owl"]);
        assert_eq!(ds.labels(), vec![0, 1, 0]);
        assert_eq!(ds.examples[1].path, Path::new("/data/2.wav"));
        assert!(matches!(Dataset::from_rows(&[], Path::new(".")), Err(DatasetError::Empty)));
    }
}
