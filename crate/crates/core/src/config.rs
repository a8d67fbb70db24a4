//! TOML run configuration. Every key is optional and unknown keys are
//! rejected.
//!
//! ```toml
//! [sim]
//! vdc = 200.0
//! f_out = 50.0
//! f_sw = 12800.0
//! r = 10.0
//! l = 0.01
//! m_a = 0.8
//! dt_sim = 1e-6
//! dt_sample = 1e-4
//!
//! [forest]
//! n_trees = 227
//! max_depth = 64
//! min_leaf = 2
//! mtry = 3
//! seed = 42
//!
//! [dataset]
//! classes = ["normal", "Sa1", ..., "Sc1+Sc2"]
//! samples_per_class = 2000
//! warmup_cycles = 5
//! onset_phases = 8
//! load_scaling = "constant-time-constant"   # or "resistance-only"
//! train_fraction = 0.7
//! train_load = 10.0
//! test_loads = [10.0, 20.0]
//! seed = 42
//!
//! [stream]
//! theta = 0.3
//! history = 5
//! confirm = 2
//! record_latency = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{ClassSet, FaultSet};
use crate::forest::ForestParams;
use crate::pipeline::{ExperimentSetup, LoadScaling};
use crate::sim::SimConfig;
use crate::stream::StreamOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Class names in id order; the first entry is usually `normal`.
    pub classes: Vec<String>,
    pub samples_per_class: usize,
    pub warmup_cycles: usize,
    pub onset_phases: usize,
    pub load_scaling: LoadScaling,
    pub train_fraction: f64,
    pub train_load: f64,
    pub test_loads: Vec<f64>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: ClassSet::standard().iter().map(|c| c.name()).collect(),
            samples_per_class: 2000,
            warmup_cycles: 5,
            onset_phases: 8,
            load_scaling: LoadScaling::default(),
            train_fraction: 0.7,
            train_load: 10.0,
            test_loads: vec![10.0, 20.0],
            seed: 42,
        }
    }
}

impl DatasetConfig {
    pub fn class_set(&self) -> Result<ClassSet> {
        let sets = self
            .classes
            .iter()
            .map(|s| s.parse::<FaultSet>())
            .collect::<Result<Vec<_>>>()?;
        ClassSet::new(sets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub forest: ForestParams,
    pub dataset: DatasetConfig,
    pub stream: StreamOptions,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.stream.validate()?;
        self.dataset.class_set()?;
        let d = &self.dataset;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                d.train_fraction
            )));
        }
        if d.onset_phases == 0 {
            return Err(Error::Config("onset_phases must be at least 1".into()));
        }
        Ok(())
    }

    /// Dataset side of the experiment. The forest seed stays in `[forest]`.
    pub fn setup(&self) -> Result<ExperimentSetup> {
        let d = &self.dataset;
        Ok(ExperimentSetup {
            sim: self.sim,
            classes: d.class_set()?,
            samples_per_class: d.samples_per_class,
            warmup_cycles: d.warmup_cycles,
            onset_phases: d.onset_phases,
            load_scaling: d.load_scaling,
            train_fraction: d.train_fraction,
            seed: d.seed,
        })
    }
}
