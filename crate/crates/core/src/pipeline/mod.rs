//! Scenario-matrix dataset generation, splitting and the cross-load
//! robustness experiment.
//!
//! Every scenario is captured as several short steady-state segments. A
//! segment simulates `warmup_cycles` healthy cycles, opens the faulted
//! switches at a per-segment onset phase, waits one more fundamental cycle
//! and then records consecutive samples. Onset phases are spread over one
//! cycle (`(j + u_j) / segments`, `u_j` uniform from a seeded generator), so
//! the captured rows never include start-up or fault transients.

mod csvio;
mod robustness;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use csvio::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_HEADER};
pub use robustness::{
    robustness_experiment, train_on_load, ExperimentSetup, LoadResult, RobustnessReport,
};

use crate::error::{Error, Result};
use crate::fault::{ClassSet, FaultClass};
use crate::features::{feature_vector, FeatureMode, FeatureVector};
use crate::forest::{derive_seed, Samples};
use crate::sim::{simulate, CurrentSample, Scenario, SimConfig};

/// How the load inductance follows a change of load resistance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadScaling {
    /// Only `R` changes; `L` keeps its configured value.
    ResistanceOnly,
    /// `L` is scaled with `R` so the load time constant `L/R` is unchanged.
    #[default]
    ConstantTimeConstant,
}

impl LoadScaling {
    /// Simulation config for a load of `load_r` ohms, starting from `base`.
    pub fn apply(self, base: &SimConfig, load_r: f64) -> SimConfig {
        let l = match self {
            LoadScaling::ResistanceOnly => base.l,
            LoadScaling::ConstantTimeConstant if base.r > 0.0 => base.l * load_r / base.r,
            LoadScaling::ConstantTimeConstant => base.l,
        };
        SimConfig {
            r: load_r,
            l,
            ..*base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub fault_class: FaultClass,
    pub load_r: f64,
    pub samples_per_class: usize,
    pub warmup_cycles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureOptions {
    pub mode: FeatureMode,
    /// Distinct fault-onset phases per scenario.
    pub onset_phases: usize,
    pub load_scaling: LoadScaling,
    pub seed: u64,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        CaptureOptions {
            mode: FeatureMode::Transformed,
            onset_phases: 8,
            load_scaling: LoadScaling::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub t: f64,
    pub currents: [f64; 3],
    /// Present for transformed-mode datasets.
    pub psi: Option<FeatureVector>,
    pub class_id: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mode: FeatureMode,
    pub classes: ClassSet,
    pub rows: Vec<DatasetRow>,
    /// Scenarios the rows were generated from. Not persisted to CSV.
    pub provenance: Vec<ScenarioSpec>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for r in &self.rows {
            counts[r.class_id as usize] += 1;
        }
        counts
    }

    /// Classifier input matrix for this dataset's feature mode.
    pub fn to_samples(&self) -> Samples {
        let mut s = Samples::new(self.mode.dim(), self.classes.len());
        for r in &self.rows {
            match (self.mode, r.psi) {
                (FeatureMode::Transformed, Some(psi)) => s.push(&psi.0, r.class_id),
                (FeatureMode::Transformed, None) => unreachable!("transformed rows carry features"),
                (FeatureMode::Raw, _) => s.push(&r.currents, r.class_id),
            }
        }
        s
    }

    /// Same rows re-expressed in another feature mode.
    pub fn with_mode(&self, mode: FeatureMode) -> Result<Dataset> {
        if mode == FeatureMode::Transformed && self.rows.iter().any(|r| r.psi.is_none()) {
            return Err(Error::Config(
                "raw dataset has no slope features; regenerate it".into(),
            ));
        }
        Ok(Dataset {
            mode,
            rows: self
                .rows
                .iter()
                .map(|r| DatasetRow {
                    psi: if mode == FeatureMode::Raw {
                        None
                    } else {
                        r.psi
                    },
                    ..*r
                })
                .collect(),
            ..self.clone()
        })
    }
}

/// One scenario per class of `classes`, all at the same load.
pub fn scenario_matrix(
    classes: &ClassSet,
    load_r: f64,
    samples_per_class: usize,
    warmup_cycles: usize,
) -> Vec<ScenarioSpec> {
    classes
        .iter()
        .map(|c| ScenarioSpec {
            fault_class: *c,
            load_r,
            samples_per_class,
            warmup_cycles,
        })
        .collect()
}

struct Segment {
    spec: usize,
    onset_fraction: f64,
    len: usize,
}

pub fn generate_dataset(
    specs: &[ScenarioSpec],
    classes: &ClassSet,
    cfg: &SimConfig,
    opts: &CaptureOptions,
) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::Config("no scenarios to generate".into()));
    }
    cfg.validate()?;
    for spec in specs {
        if classes.get(spec.fault_class.id) != Some(&spec.fault_class) {
            return Err(Error::Config(format!(
                "class {} is not in the class set",
                spec.fault_class.name()
            )));
        }
        if !(spec.load_r >= 0.0) {
            return Err(Error::Config(format!(
                "load resistance {} is invalid",
                spec.load_r
            )));
        }
    }

    let mut segments = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let n = spec.samples_per_class;
        if n == 0 {
            continue;
        }
        let parts = opts.onset_phases.clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, spec.fault_class.id as u64));
        for j in 0..parts {
            let u: f64 = rng.random();
            segments.push(Segment {
                spec: i,
                onset_fraction: (j as f64 + u) / parts as f64,
                len: n / parts + usize::from(j < n % parts),
            });
        }
    }

    let chunks: Vec<Vec<DatasetRow>> = segments
        .par_iter()
        .map(|seg| capture_segment(&specs[seg.spec], seg, cfg, opts))
        .collect::<Result<_>>()?;

    Ok(Dataset {
        mode: opts.mode,
        classes: classes.clone(),
        rows: chunks.into_iter().flatten().collect(),
        provenance: specs.to_vec(),
    })
}

fn capture_segment(
    spec: &ScenarioSpec,
    seg: &Segment,
    base: &SimConfig,
    opts: &CaptureOptions,
) -> Result<Vec<DatasetRow>> {
    let cfg = opts.load_scaling.apply(base, spec.load_r);
    let period = cfg.period();
    let onset = (spec.warmup_cycles as f64 + seg.onset_fraction) * period;
    let start = ((onset + period) / cfg.dt_sample).ceil() as usize;
    let n_samples = start + seg.len;
    let duration = n_samples as f64 * cfg.dt_sample;
    let trace = simulate(&Scenario::new(
        cfg,
        spec.fault_class.components,
        onset,
        duration,
    ))?;
    let samples = &trace.samples;
    debug_assert_eq!(samples.len(), n_samples);

    Ok((start..n_samples)
        .map(|k| row_from(&samples[k], &samples[k - 1], spec.fault_class.id, opts.mode))
        .collect())
}

fn row_from(
    curr: &CurrentSample,
    prev: &CurrentSample,
    class_id: u16,
    mode: FeatureMode,
) -> DatasetRow {
    DatasetRow {
        t: curr.t,
        currents: curr.currents(),
        psi: match mode {
            FeatureMode::Transformed => Some(feature_vector(curr, prev)),
            FeatureMode::Raw => None,
        },
        class_id,
    }
}

/// Stratified, seeded train/test partition. Within each part rows keep
/// their original order.
pub fn split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; d.rows.len()];
    for class in d.classes.iter() {
        let mut idx: Vec<usize> = (0..d.rows.len())
            .filter(|&i| d.rows[i].class_id == class.id)
            .collect();
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let pick = |want: bool| Dataset {
        rows: d
            .rows
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| *r)
            .collect(),
        ..d.clone()
    };
    Ok((pick(true), pick(false)))
}
