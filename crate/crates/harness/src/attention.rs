//! Attention snapshot export and the per-row concentration table.

use std::collections::BTreeSet;

use aoi_core::ppo::AttentionSnapshot;

use crate::records::{read_attention, write_attention, write_csv, AttentionRow, EntropyRow};
use crate::run_dir::RunDir;
use crate::{HarnessError, Result};

/// Flattens a snapshot into one row per `(layer, head, row_user)`.
pub fn snapshot_rows(snapshot: &AttentionSnapshot) -> Vec<AttentionRow> {
    let mut rows = Vec::new();
    for (layer, t) in snapshot.layers.iter().enumerate() {
        let (heads, users) = (t.shape()[0], t.shape()[1]);
        for head in 0..heads {
            for i in 0..users {
                let start = (head * users + i) * users;
                rows.push(AttentionRow {
                    episode: snapshot.episode,
                    layer,
                    head,
                    row_user: i,
                    weights: t.data()[start..start + users].to_vec(),
                });
            }
        }
    }
    rows
}

/// `-sum p ln p`, with `0 ln 0 = 0`.
pub fn row_entropy(weights: &[f64]) -> f64 {
    -weights.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportReport {
    pub episodes: Vec<usize>,
    pub rows: usize,
    /// Set when the run has no snapshots (or none match the filter).
    pub empty: bool,
}

/// Splits `attention/snapshots.csv` into one file per episode and writes the
/// row-entropy table. `filter` keeps only the listed episodes.
pub fn export_attention(run: &RunDir, filter: Option<&[usize]>) -> Result<ExportReport> {
    let path = run.snapshots();
    if !path.exists() {
        return Ok(ExportReport {
            episodes: Vec::new(),
            rows: 0,
            empty: true,
        });
    }
    let rows: Vec<AttentionRow> = read_attention(&path)?
        .into_iter()
        .filter(|r| filter.is_none_or(|f| f.contains(&r.episode)))
        .collect();
    let episodes: BTreeSet<usize> = rows.iter().map(|r| r.episode).collect();
    let dir = run.export_dir();
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    for &e in &episodes {
        let part: Vec<AttentionRow> = rows.iter().filter(|r| r.episode == e).cloned().collect();
        write_attention(&run.export_episode(e), &part)?;
    }
    let entropy: Vec<EntropyRow> = rows
        .iter()
        .map(|r| EntropyRow {
            episode: r.episode,
            layer: r.layer,
            head: r.head,
            row_user: r.row_user,
            entropy: row_entropy(&r.weights),
        })
        .collect();
    write_csv(&run.row_entropy(), &entropy)?;
    Ok(ExportReport {
        empty: episodes.is_empty(),
        episodes: episodes.into_iter().collect(),
        rows: rows.len(),
    })
}
