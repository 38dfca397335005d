use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochRecord, EvalReport, TrainError};

pub const METRICS_HEADER: &str = "model,split,fraction,question_type,n,correct,accuracy";
pub const CURVE_HEADER: &str = "model,fraction,stage,epoch,steps,train_loss,val_accuracy";

/// One evaluation cell of `metrics.csv`.
///
/// `question_type` is `overall`, a template name, or `concept:<name>` for
/// direct per-concept classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub split: String,
    pub fraction: f64,
    pub question_type: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl MetricRow {
    pub fn rows_of(model: &str, split: &str, fraction: f64, report: &EvalReport) -> Vec<MetricRow> {
        let row = |question_type: String, t: &super::Tally| MetricRow {
            model: model.into(),
            split: split.into(),
            fraction,
            question_type,
            n: t.total,
            correct: t.correct,
            accuracy: t.accuracy(),
        };
        let mut rows = vec![row("overall".into(), &report.overall)];
        rows.extend(report.per_type.iter().map(|(k, t)| row(k.clone(), t)));
        rows.extend(report.per_concept.iter().map(|(k, t)| row(format!("concept:{k}"), t)));
        rows
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<MetricRow>, _>>()?)
}

#[derive(Serialize)]
struct CurveRow<'a> {
    model: &'a str,
    fraction: f64,
    stage: usize,
    epoch: usize,
    steps: u64,
    train_loss: f64,
    val_accuracy: Option<f64>,
}

/// Loss curve rows for one or more runs, each tagged by model and fraction.
pub fn write_curve_csv(path: &Path, runs: &[(&str, f64, &[EpochRecord])]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER.split(','))?;
    w.flush()?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w.into_inner().map_err(|e| e.into_error())?);
    for (model, fraction, history) in runs {
        for e in history.iter() {
            w.serialize(CurveRow {
                model,
                fraction: *fraction,
                stage: e.stage,
                epoch: e.epoch,
                steps: e.steps,
                train_loss: e.train_loss,
                val_accuracy: e.val_accuracy,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Git-style content hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{}", hex::encode(h.finalize()))
}

/// Record of one command invocation. Wall-clock lives here, never in metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// File name to content hash, for every dataset read or written.
    pub datasets: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub wall_clock_secs: f64,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        let t = now_ms();
        Self {
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            datasets: BTreeMap::new(),
            outputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix_ms: t,
            finished_unix_ms: t,
            wall_clock_secs: 0.0,
        }
    }

    pub fn hash_file(&mut self, input: bool, path: &Path) -> Result<(), TrainError> {
        let bytes = std::fs::read(path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let map = if input { &mut self.datasets } else { &mut self.outputs };
        map.insert(name, content_hash(&bytes));
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished_unix_ms = now_ms();
        self.wall_clock_secs = (self.finished_unix_ms - self.started_unix_ms) as f64 / 1000.0;
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::Tally;

    #[test]
    fn metrics_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut report = EvalReport { overall: Tally { correct: 3, total: 4 }, ..Default::default() };
        report.per_type.insert("count".into(), Tally { correct: 1, total: 2 });
        report.per_concept.insert("red".into(), Tally { correct: 5, total: 5 });
        let rows = MetricRow::rows_of("concept", "test", 0.1, &report);
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn curve_has_header_even_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), CURVE_HEADER);
    }

    #[test]
    fn git_style_hash() {
        // `git hash-object --stdin` framing over SHA-256 of "hello\n".
        let h = content_hash(b"hello\n");
        let mut d = Sha256::new();
        d.update(b"blob 6\0hello\n");
        assert_eq!(h, format!("sha256:{}", hex::encode(d.finalize())));
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }
}
