//! Writers and readers for every tabular file a run produces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aoi_core::baselines::Summary;
use aoi_core::ppo::EpisodeMetrics;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_aoi: f64,
    pub violation_rate: f64,
    pub policy_entropy: f64,
    pub loss_total: f64,
    pub loss_clip: f64,
    pub loss_value: f64,
    pub loss_entropy: f64,
}

impl From<&EpisodeMetrics> for MetricsRow {
    fn from(m: &EpisodeMetrics) -> Self {
        MetricsRow {
            episode: m.episode,
            mean_reward: m.mean_reward,
            mean_aoi: m.mean_aoi,
            violation_rate: m.violation_rate,
            policy_entropy: m.entropy,
            loss_total: m.loss.total,
            loss_clip: m.loss.clip,
            loss_value: m.loss.value_loss,
            loss_entropy: m.loss.entropy,
        }
    }
}

/// One slot of one user during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub t: usize,
    pub user: usize,
    pub aoi: u32,
    pub residual_bits: f64,
    pub aoi_reset: u32,
    /// `-1` when idle.
    pub subcarrier: i64,
    pub power_w: f64,
    pub rate_bits: f64,
    pub done_flag: u8,
    pub violation_flag: u8,
    /// Reward of the slot, repeated on each of its rows.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub episode: usize,
    pub layer: usize,
    pub head: usize,
    pub row_user: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub episode: usize,
    pub reward: f64,
    pub smoothed: f64,
    /// Set while the window is not yet full.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub episode: usize,
    pub layer: usize,
    pub head: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Streaming CSV writer that flushes after every record.
pub struct CsvSink<T> {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    _row: std::marker::PhantomData<T>,
}

impl<T: Serialize> CsvSink<T> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(CsvSink {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(BufWriter::new(file)),
            _row: std::marker::PhantomData,
        })
    }

    pub fn push(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row).map_err(|e| HarnessError::csv(&self.path, e))?;
        self.writer.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::csv(path, e))).collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_csv(path)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(path)
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::format(path, e.to_string()))
}

/// Attention row in the export layout
/// `episode, layer, head, row_user, a_1 .. a_U`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub episode: usize,
    pub layer: usize,
    pub head: usize,
    pub row_user: usize,
    pub weights: Vec<f64>,
}

fn attention_header(users: usize) -> Vec<String> {
    let mut h: Vec<String> = ["episode", "layer", "head", "row_user"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=users).map(|j| format!("a_{j}")));
    h
}

/// Writes rows with 16 significant digits per weight.
pub fn write_attention(path: &Path, rows: &[AttentionRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let users = rows.first().map_or(0, |r| r.weights.len());
    w.write_record(attention_header(users)).map_err(|e| HarnessError::csv(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.episode.to_string(),
            r.layer.to_string(),
            r.head.to_string(),
            r.row_user.to_string(),
        ];
        rec.extend(r.weights.iter().map(|v| format!("{v:.15e}")));
        w.write_record(&rec).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_attention(path: &Path) -> Result<Vec<AttentionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let int = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::format(path, format!("column {i} of {rec:?}")))
        };
        let weights = rec
            .iter()
            .skip(4)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
        out.push(AttentionRow {
            episode: int(0)?,
            layer: int(1)?,
            head: int(2)?,
            row_user: int(3)?,
            weights,
        });
    }
    Ok(out)
}

/// Creates `path`'s parent directories.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    let mut f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| HarnessError::io(path, e))
}
