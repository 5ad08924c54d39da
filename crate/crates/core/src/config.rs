//! Experiment configuration loaded from TOML.
//!
//! ```toml
//! [memory]
//! device_bytes = 1073741824
//! index_bytes = 8
//!
//! [channels]
//! gds_bandwidth = 5e9
//! h2d_latency = 20e-6
//!
//! [cost]
//! flop_time = 1e-10
//! overlap = true
//!
//! [io]
//! out_dir = "out"
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use crate::memory::{ElementSizes, MemoryBudget, MemoryError};
use crate::sim::{Channel, ChannelParams, ChannelTable, SimConfig, SimError, DEFAULT_DEVICE_BYTES, DEFAULT_HOST_BYTES};
use crate::sparse::DEFAULT_DENSE_CAP;
use crate::spgemm::KernelConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),

    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),

    #[error("config value: {0}")]
    Invalid(String),
}

impl From<SimError> for ConfigError {
    fn from(e: SimError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<MemoryError> for ConfigError {
    fn from(e: MemoryError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MemorySection {
    device_bytes: u64,
    host_bytes: u64,
    index_bytes: u64,
    value_bytes: u64,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            device_bytes: DEFAULT_DEVICE_BYTES,
            host_bytes: DEFAULT_HOST_BYTES,
            index_bytes: 8,
            value_bytes: 8,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ChannelSection {
    gds_bandwidth: Option<f64>,
    gds_latency: Option<f64>,
    s2h_bandwidth: Option<f64>,
    s2h_latency: Option<f64>,
    h2d_bandwidth: Option<f64>,
    h2d_latency: Option<f64>,
    d2h_bandwidth: Option<f64>,
    d2h_latency: Option<f64>,
    h2s_bandwidth: Option<f64>,
    h2s_latency: Option<f64>,
}

impl ChannelSection {
    fn apply(&self, table: &mut ChannelTable) {
        let pairs = [
            (Channel::Gds, self.gds_bandwidth, self.gds_latency),
            (Channel::StorageToHost, self.s2h_bandwidth, self.s2h_latency),
            (Channel::HostToDevice, self.h2d_bandwidth, self.h2d_latency),
            (Channel::DeviceToHost, self.d2h_bandwidth, self.d2h_latency),
            (Channel::HostToStorage, self.h2s_bandwidth, self.h2s_latency),
        ];
        for (ch, bw, lat) in pairs {
            let cur = table.get(ch);
            table.set(ch, ChannelParams::new(bw.unwrap_or(cur.bandwidth), lat.unwrap_or(cur.latency)));
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CostSection {
    flop_time: f64,
    host_byte_time: f64,
    overlap: bool,
    tile_width: usize,
}

impl Default for CostSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            flop_time: sim.flop_time,
            host_byte_time: sim.host_byte_time,
            overlap: sim.overlap,
            tile_width: KernelConfig::default().tile_width,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IoSection {
    out_dir: PathBuf,
    dense_cap: usize,
    write_trace: bool,
}

impl Default for IoSection {
    fn default() -> Self {
        IoConfig::default().into()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    memory: MemorySection,
    channels: ChannelSection,
    cost: CostSection,
    io: IoSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Largest dense matrix (in cells) the tools will materialize.
    pub dense_cap: usize,
    pub write_trace: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            dense_cap: DEFAULT_DENSE_CAP,
            write_trace: false,
        }
    }
}

impl From<IoConfig> for IoSection {
    fn from(c: IoConfig) -> Self {
        Self {
            out_dir: c.out_dir,
            dense_cap: c.dense_cap,
            write_trace: c.write_trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub kernel: KernelConfig,
    pub io: IoConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text)?;
        let m = &file.memory;
        if m.device_bytes == 0 || m.host_bytes == 0 {
            return Err(ConfigError::Invalid("memory budgets must be positive".into()));
        }
        let sizes = ElementSizes::new(m.index_bytes, m.value_bytes)?;
        let mut channels = ChannelTable::default();
        file.channels.apply(&mut channels);
        if file.cost.tile_width == 0 {
            return Err(ConfigError::Invalid("cost.tile_width must be positive".into()));
        }
        let sim = SimConfig {
            budget: MemoryBudget::new(m.device_bytes, m.host_bytes, sizes),
            channels,
            flop_time: file.cost.flop_time,
            host_byte_time: file.cost.host_byte_time,
            overlap: file.cost.overlap,
        };
        sim.validate()?;
        Ok(Self {
            sim,
            kernel: KernelConfig {
                tile_width: file.cost.tile_width,
            },
            io: IoConfig {
                out_dir: file.io.out_dir,
                dense_cap: file.io.dense_cap,
                write_trace: file.io.write_trace,
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
