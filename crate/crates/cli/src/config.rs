use std::path::{Path, PathBuf};

use ivfdb::clustering::ClusteringConfig;
use ivfdb::maintenance::MaintenancePolicy;
use serde::Deserialize;

use crate::{CliResult, Failure};

/// Keys mirror the long flag names with `_` for `-`. Flags win over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub db: Option<PathBuf>,
    pub workers: Option<usize>,
    pub cache_mb: Option<usize>,
    pub metric: Option<String>,
    pub schema: Option<String>,
    pub asset_prefix: Option<String>,
    pub target_size: Option<usize>,
    pub minibatch: Option<usize>,
    pub iters: Option<usize>,
    pub balance: Option<f64>,
    pub seed: Option<u64>,
    pub growth_threshold: Option<f64>,
    pub delta_flush_trigger: Option<u64>,
    pub base_nprobe: Option<usize>,
    pub k: Option<usize>,
    pub nprobe: Option<String>,
    pub mode: Option<String>,
    pub threshold: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("config {}: {e}", path.display())))
    }
}

/// Clustering flags shared by `build` and `maintain`.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct ClusterFlags {
    /// Target vectors per partition.
    #[arg(long, global = true)]
    pub target_size: Option<usize>,
    /// Mini-batch size; defaults to min(10 k, N).
    #[arg(long, global = true)]
    pub minibatch: Option<usize>,
    /// Mini-batch iterations.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Balance penalty weight.
    #[arg(long, global = true)]
    pub balance: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl ClusterFlags {
    pub fn resolve(&self, file: &FileConfig) -> ClusteringConfig {
        let d = ClusteringConfig::default();
        ClusteringConfig {
            target_size: self.target_size.or(file.target_size).unwrap_or(d.target_size),
            minibatch: self.minibatch.or(file.minibatch).or(d.minibatch),
            iterations: self.iters.or(file.iters).unwrap_or(d.iterations),
            balance: self.balance.or(file.balance).unwrap_or(d.balance),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
        }
    }
}

/// Maintenance policy flags.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct PolicyFlags {
    /// Rebuild once average partition size grew by this fraction.
    #[arg(long, global = true)]
    pub growth_threshold: Option<f64>,
    /// Delta size above which stats recommend a flush.
    #[arg(long, global = true)]
    pub delta_flush_trigger: Option<u64>,
    /// Probe count whose scan volume `--nprobe auto` keeps.
    #[arg(long, global = true)]
    pub base_nprobe: Option<usize>,
}

impl PolicyFlags {
    pub fn resolve(&self, file: &FileConfig) -> MaintenancePolicy {
        let d = MaintenancePolicy::default();
        MaintenancePolicy {
            growth_threshold: self.growth_threshold.or(file.growth_threshold).unwrap_or(d.growth_threshold),
            delta_flush_trigger: self
                .delta_flush_trigger
                .or(file.delta_flush_trigger)
                .unwrap_or(d.delta_flush_trigger),
            base_nprobe: self.base_nprobe.or(file.base_nprobe).unwrap_or(d.base_nprobe),
        }
    }
}

pub fn parse<T: std::str::FromStr<Err = ivfdb::Error>>(text: &str) -> CliResult<T> {
    text.parse().map_err(Failure::from)
}
