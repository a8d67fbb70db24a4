use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::fault::ClassSet;
use crate::features::FeatureMode;
use crate::forest::{derive_seed, evaluate, train_forest, Evaluation, Forest, ForestParams};
use crate::pipeline::{
    generate_dataset, scenario_matrix, split, CaptureOptions, Dataset, LoadScaling,
};
use crate::sim::SimConfig;

/// Everything the experiment needs besides the loads, mode and forest.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub sim: SimConfig,
    pub classes: ClassSet,
    pub samples_per_class: usize,
    pub warmup_cycles: usize,
    pub onset_phases: usize,
    pub load_scaling: LoadScaling,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        ExperimentSetup {
            sim: SimConfig::default(),
            classes: ClassSet::standard(),
            samples_per_class: 2000,
            warmup_cycles: 5,
            onset_phases: 8,
            load_scaling: LoadScaling::default(),
            train_fraction: 0.7,
            seed: 42,
        }
    }
}

impl ExperimentSetup {
    fn capture(&self, mode: FeatureMode, seed: u64) -> CaptureOptions {
        CaptureOptions {
            mode,
            onset_phases: self.onset_phases,
            load_scaling: self.load_scaling,
            seed,
        }
    }

    /// Capture seed for a load. The training load uses the base seed, any
    /// other load an independent stream.
    fn dataset_seed(&self, load_r: f64, train_load: f64) -> u64 {
        if load_r == train_load {
            self.seed
        } else {
            derive_seed(self.seed, load_r.to_bits())
        }
    }

    /// Full dataset for one load.
    pub fn dataset(&self, load_r: f64, train_load: f64, mode: FeatureMode) -> Result<Dataset> {
        let specs = scenario_matrix(
            &self.classes,
            load_r,
            self.samples_per_class,
            self.warmup_cycles,
        );
        generate_dataset(
            &specs,
            &self.classes,
            &self.sim,
            &self.capture(mode, self.dataset_seed(load_r, train_load)),
        )
    }

    /// Held-out part of the dataset for one load.
    pub fn held_out(&self, load_r: f64, train_load: f64, mode: FeatureMode) -> Result<Dataset> {
        let d = self.dataset(load_r, train_load, mode)?;
        Ok(split(&d, self.train_fraction, self.seed)?.1)
    }
}

/// Generates the training-load dataset, trains on its training split and
/// returns the forest with the held-out split.
pub fn train_on_load(
    train_load: f64,
    mode: FeatureMode,
    params: &ForestParams,
    setup: &ExperimentSetup,
) -> Result<(Forest, Dataset)> {
    let d = setup.dataset(train_load, train_load, mode)?;
    let (train, test) = split(&d, setup.train_fraction, setup.seed)?;
    let forest = train_forest(&train.to_samples(), &setup.classes, mode, params)?;
    Ok((forest, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadResult {
    pub load_r: f64,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub train_load: f64,
    pub mode: FeatureMode,
    pub classes: ClassSet,
    pub results: Vec<LoadResult>,
}

pub fn robustness_experiment(
    train_load: f64,
    test_loads: &[f64],
    mode: FeatureMode,
    params: &ForestParams,
    setup: &ExperimentSetup,
) -> Result<RobustnessReport> {
    if test_loads.is_empty() {
        return Err(Error::Config("no test loads given".into()));
    }
    let (forest, own_test) = train_on_load(train_load, mode, params, setup)?;
    let mut results = Vec::with_capacity(test_loads.len());
    for &load_r in test_loads {
        let test = if load_r == train_load {
            own_test.clone()
        } else {
            setup.held_out(load_r, train_load, mode)?
        };
        let evaluation = evaluate(&forest, &test.to_samples())?;
        log::info!(
            "{mode} model at {train_load} ohm, test at {load_r} ohm: accuracy {:.4}",
            evaluation.overall
        );
        results.push(LoadResult { load_r, evaluation });
    }
    Ok(RobustnessReport {
        train_load,
        mode,
        classes: setup.classes.clone(),
        results,
    })
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl RobustnessReport {
    pub fn result(&self, load_r: f64) -> Option<&LoadResult> {
        self.results.iter().find(|r| r.load_r == load_r)
    }

    fn columns(&self) -> Vec<String> {
        let mut cols = vec!["class".to_string(), "code".to_string()];
        for r in &self.results {
            cols.push(format!("acc_{}ohm", r.load_r));
            cols.push(format!("mis_{}ohm", r.load_r));
        }
        cols
    }

    fn body(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .classes
            .iter()
            .map(|c| {
                let mut row = vec![c.name(), c.to_label_code().to_string()];
                for r in &self.results {
                    let s = r.evaluation.score(c.id);
                    row.push(fmt_rate(s.and_then(|s| s.accuracy())));
                    row.push(fmt_rate(s.and_then(|s| s.misdiagnosis_rate())));
                }
                row
            })
            .collect();
        let mut overall = vec!["overall".to_string(), String::new()];
        for r in &self.results {
            overall.push(format!("{:.4}", r.evaluation.overall));
            overall.push(format!("{:.4}", 1.0 - r.evaluation.overall));
        }
        rows.push(overall);
        rows
    }

    /// Wide CSV: one row per class plus an overall row, an accuracy and a
    /// misdiagnosis column per test load.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns().join(",");
        s.push('\n');
        for row in self.body() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for RobustnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = self.columns();
        let body = self.body();
        let widths: Vec<usize> = (0..header.len())
            .map(|k| {
                body.iter()
                    .map(|r| r[k].len())
                    .chain([header[k].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        writeln!(
            f,
            "{} features, trained at {} ohm",
            self.mode, self.train_load
        )?;
        let mut line = String::new();
        for row in std::iter::once(&header).chain(&body) {
            line.clear();
            for (k, cell) in row.iter().enumerate() {
                if k < 2 {
                    let _ = write!(line, "{cell:<w$}  ", w = widths[k]);
                } else {
                    let _ = write!(line, "{cell:>w$}  ", w = widths[k]);
                }
            }
            writeln!(f, "{}", line.trim_end())?;
        }
        Ok(())
    }
}
