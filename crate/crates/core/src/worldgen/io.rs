//! JSON-lines exchange files: `scenes.jsonl`, `qa.jsonl`, `captions.jsonl`.
//!
//! Every line is one object carrying `"schema": 1`. Scene features are
//! elided by default and recomputed on load from the seed and feature spec.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::FeatureSpec;

use super::{synth_features, CaptionExample, ObjectSpec, QAExample, SceneRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
    #[error("{path}:{line}: unsupported schema version {found}")]
    Schema { path: String, line: usize, found: u32 },
}

#[derive(Serialize, Deserialize)]
struct Line<T> {
    schema: u32,
    #[serde(flatten)]
    record: T,
}

#[derive(Serialize, Deserialize)]
struct SceneLine {
    id: u64,
    seed: u64,
    objects: Vec<ObjectSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_spec: Option<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_features: Option<Vec<Vec<f64>>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(&Line { schema: SCHEMA_VERSION, record }).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line<T> = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        if parsed.schema != SCHEMA_VERSION {
            return Err(IoError::Schema { path: path.display().to_string(), line: i + 1, found: parsed.schema });
        }
        out.push(parsed.record);
    }
    Ok(out)
}

pub fn write_scenes(path: &Path, scenes: &[SceneRecord], embed_features: bool) -> Result<(), IoError> {
    let lines: Vec<SceneLine> = scenes
        .iter()
        .map(|s| SceneLine {
            id: s.id,
            seed: s.seed,
            objects: s.objects.clone(),
            feature_spec: s.feature_spec.clone(),
            object_features: (embed_features && s.has_features()).then(|| s.object_features.clone()),
            pair_features: (embed_features && s.has_features()).then(|| s.pair_features.clone()),
        })
        .collect();
    write_jsonl(path, &lines)
}

/// Reads scenes, recomputing elided features from their feature spec.
pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>, IoError> {
    let lines: Vec<SceneLine> = read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .map(|l| {
            let mut scene = SceneRecord::from_objects(l.id, l.seed, l.objects);
            match (l.object_features, l.pair_features) {
                (Some(o), Some(p)) => {
                    scene.object_features = o;
                    scene.pair_features = p;
                    scene.feature_spec = l.feature_spec;
                }
                _ => {
                    if let Some(spec) = l.feature_spec {
                        synth_features(&mut scene, &spec);
                    }
                }
            }
            scene
        })
        .collect())
}

pub fn write_qa(path: &Path, questions: &[QAExample]) -> Result<(), IoError> {
    write_jsonl(path, questions)
}

pub fn read_qa(path: &Path) -> Result<Vec<QAExample>, IoError> {
    read_jsonl(path)
}

pub fn write_captions(path: &Path, captions: &[CaptionExample]) -> Result<(), IoError> {
    write_jsonl(path, captions)
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionExample>, IoError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::{build_dataset, DatasetSpec};

    #[test]
    fn round_trip_with_and_without_features() {
        let dir = tempfile::tempdir().unwrap();
        let d = build_dataset(&DatasetSpec::curriculum(1, 30, FeatureSpec::default())).unwrap();
        for embed in [false, true] {
            let p = dir.path().join(format!("scenes-{embed}.jsonl"));
            write_scenes(&p, &d.scenes, embed).unwrap();
            assert_eq!(read_scenes(&p).unwrap(), d.scenes);
        }
        let q = dir.path().join("qa.jsonl");
        write_qa(&q, &d.questions).unwrap();
        assert_eq!(read_qa(&q).unwrap(), d.questions);
        let first = std::fs::read_to_string(&q).unwrap();
        assert!(first.lines().next().unwrap().starts_with("{\"schema\":1,"));
    }

    #[test]
    fn rejects_other_schema_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qa.jsonl");
        std::fs::write(&p, "{\"schema\":2}\n").unwrap();
        assert!(matches!(read_qa(&p), Err(IoError::Json { .. }) | Err(IoError::Schema { .. })));
        std::fs::write(&p, "not json\n").unwrap();
        assert!(matches!(read_qa(&p), Err(IoError::Json { line: 1, .. })));
    }
}
