use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainRecord};
use crate::burgers::Dataset;
use crate::error::{Error, Result};
use crate::model::FnoConfig;
use crate::parametrization::{HyperParams, Parametrization};

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lr,
    BatchSize,
    AdamBeta2,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lr => "lr",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::AdamBeta2 => "adam_beta2",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &HyperParams, value: f64) -> Result<HyperParams> {
        let mut xi = base.clone();
        match self {
            SweepAxis::Lr => xi.master_lr = value,
            SweepAxis::BatchSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config("sweep.values", format!("batch size {value} is not a positive integer")));
                }
                xi.batch_size = value as usize;
            }
            SweepAxis::AdamBeta2 => xi.beta2 = value,
        }
        xi.validate()?;
        Ok(xi)
    }
}

/// Which final metric picks the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    #[default]
    TrainLoss,
    EvalError,
}

/// A rectangular grid of runs: axis value x mode count x replicate seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub modes: Vec<usize>,
    pub fixed: HyperParams,
    pub model: FnoConfig,
    pub parametrization: Parametrization,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub select_by: SelectBy,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("sweep.values", "must be strictly increasing"));
        }
        if self.modes.is_empty() {
            return Err(Error::config("sweep.modes", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "must not be empty"));
        }
        for &v in &self.values {
            self.axis.apply(&self.fixed, v)?;
        }
        for &k in &self.modes {
            self.parametrization.abc_at(k)?;
            self.model.with_modes(k).validate()?;
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.values.len() * self.modes.len() * self.seeds.len()
    }

    /// Hyperparameters and model of cell `(value, K, seed)`.
    pub fn cell(&self, value: usize, mode: usize, seed: usize) -> Result<(FnoConfig, HyperParams)> {
        let mut xi = self.axis.apply(&self.fixed, self.values[value])?;
        xi.seed = self.seeds[seed];
        Ok((self.model.with_modes(self.modes[mode]), xi))
    }
}

/// All records of a sweep and the selected optimum per K.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    /// Indexed `[value][K][seed]`, flattened.
    pub records: Vec<TrainRecord>,
    /// Optimal value index per K.
    pub argmin: Vec<usize>,
    pub optimal_values: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SweepResult {
    pub fn record(&self, value: usize, mode: usize, seed: usize) -> &TrainRecord {
        let (nk, ns) = (self.spec.modes.len(), self.spec.seeds.len());
        &self.records[(value * nk + mode) * ns + seed]
    }

    pub fn cell_records(&self, value: usize, mode: usize) -> impl Iterator<Item = &TrainRecord> {
        (0..self.spec.seeds.len()).map(move |s| self.record(value, mode, s))
    }

    /// A cell counts as diverged when any of its replicates diverged.
    pub fn cell_diverged(&self, value: usize, mode: usize) -> bool {
        self.cell_records(value, mode).any(|r| r.diverged)
    }

    /// Mean and population std of the final training loss over seeds.
    pub fn cell_train_loss(&self, value: usize, mode: usize) -> (f64, f64) {
        let xs: Vec<f64> = self.cell_records(value, mode).map(|r| r.final_train_loss).collect();
        mean_std(&xs)
    }

    pub fn cell_eval_error(&self, value: usize, mode: usize) -> (f64, f64) {
        let xs: Vec<f64> = self.cell_records(value, mode).map(|r| r.final_eval_error).collect();
        mean_std(&xs)
    }

    fn cell_score(&self, value: usize, mode: usize) -> f64 {
        match self.spec.select_by {
            SelectBy::TrainLoss => self.cell_train_loss(value, mode).0,
            SelectBy::EvalError => self.cell_eval_error(value, mode).0,
        }
    }

    /// Optimizer steps summed over every run.
    pub fn total_steps(&self) -> u64 {
        self.records.iter().map(|r| r.step_count).sum()
    }

    fn select(spec: SweepSpec, records: Vec<TrainRecord>) -> Result<Self> {
        let mut result = SweepResult {
            spec,
            records,
            argmin: Vec::new(),
            optimal_values: Vec::new(),
        };
        for k in 0..result.spec.modes.len() {
            let mut best: Option<(usize, f64)> = None;
            for v in 0..result.spec.values.len() {
                if result.cell_diverged(v, k) {
                    continue;
                }
                let score = result.cell_score(v, k);
                if best.is_none_or(|(_, s)| score < s) {
                    best = Some((v, score));
                }
            }
            let (v, _) = best.ok_or(Error::SweepFailed {
                modes: result.spec.modes[k],
            })?;
            result.argmin.push(v);
            result.optimal_values.push(result.spec.values[v]);
        }
        Ok(result)
    }
}

/// Run every cell with `trainer` and select the optimum per K. Cells run in
/// parallel on the current rayon pool and land in fixed grid positions, so
/// the result does not depend on scheduling.
pub fn sweep_with<F>(spec: &SweepSpec, trainer: F) -> Result<SweepResult>
where
    F: Fn(&FnoConfig, &Parametrization, &HyperParams) -> Result<TrainRecord> + Sync,
{
    spec.validate()?;
    let (nk, ns) = (spec.modes.len(), spec.seeds.len());
    let records = (0..spec.cells())
        .into_par_iter()
        .map(|i| {
            let (config, xi) = spec.cell(i / (nk * ns), (i / ns) % nk, i % ns)?;
            trainer(&config, &spec.parametrization, &xi)
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::select(spec.clone(), records)
}

/// Grid argmin of the final training loss.
pub fn sweep(spec: &SweepSpec, train_set: &Dataset, eval_set: &Dataset) -> Result<SweepResult> {
    sweep_with(spec, |config, p, xi| train(train_set, eval_set, config, p, xi))
}

#[derive(Debug, Serialize)]
struct LandscapeRow<'a> {
    parametrization: &'a str,
    #[serde(rename = "K")]
    modes: usize,
    axis: &'a str,
    value: f64,
    seed: i64,
    final_train_loss: f64,
    final_eval_error: f64,
    diverged: bool,
}

/// Landscape table: for each K and value, one row per seed followed by an
/// aggregate row (`seed = -1`, means over seeds, diverged if any seed did).
/// Diverged losses are written as `inf`.
pub fn write_landscape_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let spec = &result.spec;
    let name = spec.parametrization.kind.name();
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::io("<csv>", e.into());
    for k in 0..spec.modes.len() {
        for v in 0..spec.values.len() {
            let row = |seed: i64, train: f64, eval: f64, diverged: bool| LandscapeRow {
                parametrization: name,
                modes: spec.modes[k],
                axis: spec.axis.name(),
                value: spec.values[v],
                seed,
                final_train_loss: train,
                final_eval_error: eval,
                diverged,
            };
            for (s, r) in result.cell_records(v, k).enumerate() {
                w.serialize(row(spec.seeds[s] as i64, r.final_train_loss, r.final_eval_error, r.diverged))
                    .map_err(csv_err)?;
            }
            w.serialize(row(
                -1,
                result.cell_train_loss(v, k).0,
                result.cell_eval_error(v, k).0,
                result.cell_diverged(v, k),
            ))
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Serialize)]
struct OptimumRow<'a> {
    parametrization: &'a str,
    #[serde(rename = "K")]
    modes: usize,
    axis: &'a str,
    argmin_index: usize,
    optimal_value: f64,
    mean_final_train_loss: f64,
    std_final_train_loss: f64,
    mean_final_eval_error: f64,
}

/// One row per K naming the selected value.
pub fn write_optimum_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let spec = &result.spec;
    let mut w = csv::Writer::from_writer(out);
    for (k, &v) in result.argmin.iter().enumerate() {
        let (mean, std) = result.cell_train_loss(v, k);
        w.serialize(OptimumRow {
            parametrization: spec.parametrization.kind.name(),
            modes: spec.modes[k],
            axis: spec.axis.name(),
            argmin_index: v,
            optimal_value: spec.values[v],
            mean_final_train_loss: mean,
            std_final_train_loss: std,
            mean_final_eval_error: result.cell_eval_error(v, k).0,
        })
        .map_err(|e| Error::io("<csv>", e.into()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
