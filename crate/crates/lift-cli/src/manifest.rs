//! JSONL dataset manifests: one record per video, resolved relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lift_core::chiral::VideoMeta;
use lift_core::data::Split;
use lift_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::featureio::{self, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    /// Feature-file path, relative to the manifest.
    pub path: String,
    pub frames: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("line {line}: {source}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error("duplicate video_id '{id}' (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("unknown video_id '{id}'")]
    UnknownId { id: String },
    #[error("'{id}': header ({frames}, {dim}) disagrees with manifest ({want_frames}, {want_dim})")]
    HeaderMismatch { id: String, frames: usize, dim: usize, want_frames: usize, want_dim: usize },
    #[error("'{id}': {source}")]
    Format { id: String, source: FormatError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = fs::read_to_string(path)?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line)
            .map_err(|source| ManifestError::Malformed { line: i + 1, source })?;
        if !seen.insert(record.video_id.clone()) {
            return Err(ManifestError::DuplicateId { id: record.video_id, line: i + 1 });
        }
        records.push(record);
    }
    Ok(Manifest { records, base_dir })
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), ManifestError> {
    let mut out = String::new();
    for record in &manifest.records {
        out.push_str(&serde_json::to_string(record).expect("manifest record serializes"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: PathBuf) -> Manifest {
        Manifest { records, base_dir }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn record(&self, video_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Load one video's frames, verifying the file header against the
    /// manifest entry.
    pub fn load_frames(&self, video_id: &str) -> Result<Tensor<f32>, ManifestError> {
        let record = self
            .record(video_id)
            .ok_or_else(|| ManifestError::UnknownId { id: video_id.into() })?;
        let path = self.base_dir.join(&record.path);
        let frames = featureio::read_feature_file(&path)
            .map_err(|source| ManifestError::Format { id: video_id.into(), source })?;
        if frames.rows() != record.frames || frames.cols() != record.dim {
            return Err(ManifestError::HeaderMismatch {
                id: video_id.into(),
                frames: frames.rows(),
                dim: frames.cols(),
                want_frames: record.frames,
                want_dim: record.dim,
            });
        }
        Ok(frames)
    }

    pub fn video_meta(&self) -> Vec<VideoMeta> {
        self.records
            .iter()
            .map(|r| VideoMeta {
                video_id: r.video_id.clone(),
                verb: r.verb.clone(),
                noun: r.noun.clone(),
                split: r.split,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn record_line(id: &str) -> String {
        format!(
            r#"{{"video_id":"{id}","path":"{id}.lft","frames":2,"dim":3,"verb":"fwd","noun":"c0","split":"train"}}"#
        )
    }

    #[test]
    fn empty_file_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[]);
        let m = load_manifest(&path).unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn records_keep_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = ["a", "b", "c"].iter().map(|id| record_line(id)).collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let path = write_lines(dir.path(), &refs);
        let m = load_manifest(&path).unwrap();
        let ids: Vec<&str> = m.records.iter().map(|r| r.video_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let lines = [record_line("v1"), record_line("v1")];
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let path = write_lines(dir.path(), &refs);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("v1"), "{err}");
        assert!(matches!(err, ManifestError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let line1 = record_line("v1");
        let path = write_lines(dir.path(), &[line1.as_str(), "{not json"]);
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, ManifestError::Malformed { line: 2, .. }));
    }

    #[test]
    fn header_agreement_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let line = record_line("v1");
        let path = write_lines(dir.path(), &[line.as_str()]);
        // File has 3 rows where the manifest claims 2.
        featureio::write_feature_file(&Tensor::zeros(vec![3, 3]), &dir.path().join("v1.lft"))
            .unwrap();
        let m = load_manifest(&path).unwrap();
        assert!(matches!(
            m.load_frames("v1").unwrap_err(),
            ManifestError::HeaderMismatch { .. }
        ));
    }

    #[test]
    fn round_trip_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![ManifestRecord {
            video_id: "x".into(),
            path: "x.lft".into(),
            frames: 4,
            dim: 2,
            verb: None,
            noun: Some("c1".into()),
            split: Split::Test,
        }];
        let m = Manifest::new(records, dir.path().to_path_buf());
        let path = dir.path().join("m.jsonl");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.records, m.records);
    }
}
