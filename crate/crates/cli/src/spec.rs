//! Experiment specification: a TOML or JSON file with defaults, overridden
//! by command-line flags.

use std::path::Path;

use csifeed::channel::ChannelConfig;
use csifeed::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_fractions() -> (f64, f64, f64) {
    (0.4, 0.4, 0.2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_tx: usize,
    pub n_sub: usize,
    pub n_paths: usize,
    pub angle_spread: f64,
    pub delay_spread: f64,
    pub carrier_offset: f64,
    /// Samples generated for the backbone phase (split train/val/test).
    pub count: usize,
    /// Samples generated for the shifted evaluation stream.
    pub eval_count: usize,
    pub angle_shift: f64,
    pub spread_scale: f64,
    pub path_delta: i64,
    pub fractions: (f64, f64, f64),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let c = ChannelConfig::default();
        DatasetSpec {
            n_tx: c.n_tx,
            n_sub: c.n_sub,
            n_paths: c.n_paths,
            angle_spread: c.angle_spread,
            delay_spread: c.delay_spread,
            carrier_offset: c.carrier_offset,
            count: 2000,
            eval_count: 200,
            angle_shift: 0.5,
            spread_scale: 2.0,
            path_delta: 0,
            fractions: default_fractions(),
        }
    }
}

impl DatasetSpec {
    pub fn base_config(&self, seed: u64) -> ChannelConfig {
        ChannelConfig {
            n_tx: self.n_tx,
            n_sub: self.n_sub,
            n_paths: self.n_paths,
            angle_spread: self.angle_spread,
            delay_spread: self.delay_spread,
            carrier_offset: self.carrier_offset,
            seed,
        }
    }

    pub fn shifted_config(&self, seed: u64) -> ChannelConfig {
        self.base_config(seed).shift(self.angle_shift, self.spread_scale, self.path_delta)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    /// One backbone per lambda; paper grids are 5e4..1e6 for 64x64 CSI and
    /// 5e5..1e7 for 256x256.
    pub lambdas: Vec<f64>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { lambdas: vec![5e4, 1e5, 5e5, 1e6], epochs: 200, batch: 32, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSpec {
    /// Modes to run: no_ft, encoder_only, full_model, genie_aided.
    pub modes: Vec<String>,
    pub lambda: f64,
    pub lambda_m: Option<f64>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Leading slice of the evaluation stream used for fine-tuning.
    pub ft_count: usize,
    pub seeds: Vec<u64>,
    pub t: f64,
    pub n_bins: u32,
    pub sigma: f64,
    pub alpha: f64,
    /// Ablation: uniform update prior instead of spike-and-slab.
    pub uniform_prior: bool,
    pub patience: usize,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        FinetuneSpec {
            modes: vec![
                "no_ft".into(),
                "encoder_only".into(),
                "full_model".into(),
                "genie_aided".into(),
            ],
            lambda: 5e4,
            lambda_m: None,
            epochs: 1000,
            batch: 32,
            lr: 1e-4,
            ft_count: 100,
            seeds: vec![7],
            t: 0.005,
            n_bins: 50,
            sigma: 0.05,
            alpha: 1000.0,
            uniform_prior: false,
            patience: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub intervals: Vec<usize>,
    pub n_bins_list: Vec<u32>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            intervals: vec![125, 250, 500, 1000],
            n_bins_list: vec![2, 4, 8, 16, 32, 64, 128, 256],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub train: TrainSpec,
    pub finetune: FinetuneSpec,
    pub sweep: SweepSpec,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read spec {}: {}", path.display(), e)))?;
        let spec = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad JSON spec: {}", e)))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("bad TOML spec: {}", e)))?,
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.lambdas.is_empty() {
            return Err(Error::Config("train.lambdas must be non-empty".into()));
        }
        if self.finetune.modes.is_empty() {
            return Err(Error::Config("finetune.modes must be non-empty".into()));
        }
        if self.sweep.intervals.is_empty() || self.sweep.n_bins_list.is_empty() {
            return Err(Error::Config("sweep lists must be non-empty".into()));
        }
        let (f1, f2, f3) = self.dataset.fractions;
        if ((f1 + f2 + f3) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("dataset.fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// FNV-1a content hash of a file, for manifest provenance.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in &bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Ok(format!("{:016x}", h))
}
