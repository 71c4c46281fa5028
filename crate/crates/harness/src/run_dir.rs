use std::path::{Path, PathBuf};

/// Layout of one experiment directory:
///
/// ```text
/// config.toml
/// metrics.csv
/// checkpoints/{latest,best}.ckpt
/// attention/snapshots.csv
/// attention/export/episode_<e>.csv
/// attention/row_entropy.csv
/// traces/eval_trace.csv
/// summary.json
/// plots/
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("latest.ckpt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("best.ckpt")
    }

    pub fn attention_dir(&self) -> PathBuf {
        self.root.join("attention")
    }

    pub fn snapshots(&self) -> PathBuf {
        self.attention_dir().join("snapshots.csv")
    }

    pub fn export_dir(&self) -> PathBuf {
        self.attention_dir().join("export")
    }

    pub fn export_episode(&self, episode: usize) -> PathBuf {
        self.export_dir().join(format!("episode_{episode}.csv"))
    }

    pub fn row_entropy(&self) -> PathBuf {
        self.attention_dir().join("row_entropy.csv")
    }

    pub fn trace(&self) -> PathBuf {
        self.root.join("traces").join("eval_trace.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}
