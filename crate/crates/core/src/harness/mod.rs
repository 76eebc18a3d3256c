//! Configuration, persistence and experiment orchestration.
//!
//! Experiments are described by a TOML file (every key optional, defaults
//! below) and can be overridden from the command line:
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//! # manifest = "data/manifest.txt"   # use ESNF files instead of a synthetic stream
//!
//! [stream]        # synthetic stream, ignored when a manifest is given
//! mode = "cil"    # cil | dil | xdcil
//! num_stages = 5
//! classes_per_stage = 10
//! feature_dim = 32
//! train_per_class = 100
//! test_per_class = 50
//! separation = 6.0
//! domain_shift = 0.0
//! noise = 1.0
//! seed = 0        # data seed; the seeds list drives initialization and shuffling
//!
//! [energy]
//! anchor = -10.0
//! lambda = 0.1
//! train_temperature = 1.0
//!
//! [optimizer]
//! learning_rate = 0.01
//! momentum = 0.9
//! weight_decay = 0.0005
//! epochs = 30
//! batch_size = 128
//! cosine = true
//!
//! [psi]
//! min = 0.001
//! max = 1.0
//! step = 0.001
//!
//! [head]
//! kind = "linear"  # or "mlp" with `hidden = 64`
//!
//! [ablation]
//! disable_anchor_loss = false
//! disable_calibration = false
//! shared_head = false
//! ```

pub mod bank;
pub mod experiment;
pub mod gradcheck;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_stream, Manifest, StageDataset, StreamMode, StreamSpec};
use crate::head::{Architecture, EnergyConfig};
use crate::trainer::{CandidateGrid, OptimizerConfig, StreamOptions};
use crate::{Error, Result};

/// Seeds used when a configuration names none.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Anchor values of the standard sweep.
pub const DEFAULT_DELTAS: [f64; 6] = [0.0, -1.0, -3.0, -5.0, -10.0, -15.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub disable_anchor_loss: bool,
    pub disable_calibration: bool,
    pub shared_head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub stream: StreamSpec,
    pub energy: EnergyConfig,
    pub optimizer: OptimizerConfig,
    pub psi: CandidateGrid,
    pub head: Architecture,
    pub ablation: AblationFlags,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: DEFAULT_SEEDS.to_vec(),
            manifest: None,
            stream: StreamSpec::default(),
            energy: EnergyConfig::default(),
            optimizer: OptimizerConfig::default(),
            psi: CandidateGrid::default(),
            head: Architecture::Linear,
            ablation: AblationFlags::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; errors carry the offending line and field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            Error::Config { field, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. A relative manifest path is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config { field: "seeds".into(), message: "need at least one seed".into() });
        }
        if self.manifest.is_none() {
            self.stream.validate()?;
        }
        self.energy.validate()?;
        self.optimizer.validate()?;
        self.psi.validate()?;
        if let Architecture::Mlp { hidden: 0 } = self.head {
            return Err(Error::Config { field: "head.hidden".into(), message: "must be >= 1".into() });
        }
        Ok(())
    }

    /// Energy settings after applying the anchor-loss ablation.
    pub fn effective_energy(&self) -> EnergyConfig {
        if self.ablation.disable_anchor_loss {
            EnergyConfig { lambda: 0.0, ..self.energy }
        } else {
            self.energy
        }
    }

    pub fn stream_options(&self) -> StreamOptions {
        StreamOptions {
            architecture: self.head,
            calibrate: !self.ablation.disable_calibration,
            shared_head: self.ablation.shared_head,
        }
    }

    /// Loads the manifest or generates the synthetic stream.
    pub fn load_stages(&self) -> Result<(StreamMode, Vec<StageDataset>)> {
        match &self.manifest {
            Some(path) => {
                let m = Manifest::load(path)?;
                let stages = m.load_stages()?;
                Ok((m.mode, stages))
            }
            None => Ok((self.stream.mode, generate_stream(&self.stream)?)),
        }
    }
}
