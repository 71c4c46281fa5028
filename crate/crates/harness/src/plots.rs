//! Plot-ready tables: smoothed reward curves per policy kind and long-form
//! attention heatmap grids.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::records::{read_attention, read_metrics, write_csv, HeatmapRow, SeriesRow};
use crate::run_dir::RunDir;
use crate::{HarnessError, Result};

/// Trailing moving average. Row `i` averages rows `i + 1 - w ..= i`; the
/// first `w - 1` rows average what exists and are flagged partial.
pub fn smooth(values: &[f64], window: usize) -> Vec<(f64, bool)> {
    let w = window.max(1);
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            sum += v;
            if i >= w {
                sum -= values[i - w];
            }
            let n = (i + 1).min(w);
            let mean = if w == 1 { v } else { sum / n as f64 };
            (mean, i + 1 < w)
        })
        .collect()
}

/// Training runs under `root` (the directory itself and its immediate
/// subdirectories), keyed by policy kind.
pub fn find_runs(root: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut dirs = vec![root.to_path_buf()];
    if let Ok(entries) = std::fs::read_dir(root) {
        let mut subs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subs.sort();
        dirs.extend(subs);
    }
    let mut runs: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for dir in dirs {
        let run = RunDir::new(&dir);
        if !run.metrics().exists() {
            continue;
        }
        let text = std::fs::read_to_string(run.config()).map_err(|e| HarnessError::io(&run.config(), e))?;
        let cfg = ExperimentConfig::from_toml(&text)?;
        runs.entry(cfg.experiment.policy.as_str().to_string()).or_default().push(dir);
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotReport {
    pub series: Vec<PathBuf>,
    pub heatmaps: Option<PathBuf>,
}

/// Writes `plots/reward_<kind>.csv` (runs of the same kind are averaged per
/// episode) and `plots/attention_heatmaps.csv` under `root`.
pub fn emit_plots(root: &Path, window: usize) -> Result<PlotReport> {
    let out = RunDir::new(root).plots();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let runs = find_runs(root)?;
    let mut series = Vec::new();
    let mut heat = Vec::new();
    for (kind, dirs) in &runs {
        let mut per_episode: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for dir in dirs {
            let run = RunDir::new(dir);
            for row in read_metrics(&run.metrics())? {
                let e = per_episode.entry(row.episode).or_insert((0.0, 0));
                e.0 += row.mean_reward;
                e.1 += 1;
            }
            if run.snapshots().exists() {
                for r in read_attention(&run.snapshots())? {
                    heat.extend(r.weights.iter().enumerate().map(|(col, &value)| HeatmapRow {
                        episode: r.episode,
                        layer: r.layer,
                        head: r.head,
                        row: r.row_user,
                        col,
                        value,
                    }));
                }
            }
        }
        let episodes: Vec<usize> = per_episode.keys().copied().collect();
        let rewards: Vec<f64> = per_episode.values().map(|(s, n)| s / *n as f64).collect();
        let rows: Vec<SeriesRow> = smooth(&rewards, window)
            .into_iter()
            .zip(episodes.iter().zip(&rewards))
            .map(|((smoothed, partial), (&episode, &reward))| SeriesRow {
                episode,
                reward,
                smoothed,
                partial,
            })
            .collect();
        let path = out.join(format!("reward_{kind}.csv"));
        write_csv(&path, &rows)?;
        series.push(path);
    }
    let heatmaps = if heat.is_empty() {
        None
    } else {
        let path = out.join("attention_heatmaps.csv");
        write_csv(&path, &heat)?;
        Some(path)
    };
    Ok(PlotReport { series, heatmaps })
}
