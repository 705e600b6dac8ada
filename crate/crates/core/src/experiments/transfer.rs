use serde::Serialize;

use super::sweep::{SweepResult, SweepSpec};
use super::train::{steps_per_epoch, train, TrainRecord};
use crate::burgers::Dataset;
use crate::error::{Error, Result};
use crate::model::FnoConfig;
use crate::parametrization::{rescale_hyperparams, HyperParams, Parametrization, Rescaled};

/// Floating-point-operation proxy for one optimizer step:
/// `batch * n * (L * (K * m^2 + n * log2(n) * m) + n * m^2)`.
/// Only ratios between runs are meaningful.
pub fn step_cost(batch_size: usize, n: usize, config: &FnoConfig) -> f64 {
    let (b, n_f) = (batch_size as f64, n as f64);
    let (l, k, m) = (config.layers as f64, config.modes as f64, config.width as f64);
    b * n_f * (l * (k * m * m + n_f * n_f.log2() * m) + n_f * m * m)
}

/// Step-count based cost of a set of runs.
pub fn records_cost(records: &[TrainRecord], n: usize, model: &FnoConfig) -> f64 {
    records
        .iter()
        .map(|r| r.step_count as f64 * step_cost(r.hyperparams.batch_size, n, &model.with_modes(r.modes)))
        .sum()
}

/// Compute spent by the transfer pipeline against sweeping the target directly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub proxy_sweep_steps: u64,
    pub proxy_sweep_cost: f64,
    pub target_steps: u64,
    pub target_cost: f64,
    /// Proxy sweep plus the single target run.
    pub transfer_cost: f64,
    /// The same grid of runs at the target K, at full step counts.
    pub direct_sweep_cost: f64,
    /// `transfer_cost / direct_sweep_cost`.
    pub ratio: f64,
}

/// Result of the full tune-small, rescale, train-large pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferOutcome {
    pub k_proxy: usize,
    pub k_target: usize,
    /// Best proxy hyperparameters, with the proxy's effective spectral rate made explicit.
    pub xi_star: HyperParams,
    pub proxy_init_std: f64,
    /// Target hyperparameters and spectral init std.
    pub target_hyperparams: HyperParams,
    pub target_init_std: f64,
    pub sweep: SweepResult,
    pub target_record: TrainRecord,
    pub cost: CostReport,
}

/// Tune on the single proxy K of `spec`, rescale the spectral learning rate
/// and init to `k_target`, then train the target once with the first seed.
pub fn mu_transfer(
    spec: &SweepSpec,
    k_target: usize,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<TransferOutcome> {
    if spec.modes.len() != 1 {
        return Err(Error::config(
            "sweep.modes",
            format!("transfer needs exactly one proxy K, got {:?}", spec.modes),
        ));
    }
    let k_proxy = spec.modes[0];
    if k_proxy < 2 || k_target < 2 {
        return Err(Error::Domain(format!(
            "transfer needs K >= 2, got proxy {k_proxy} and target {k_target}"
        )));
    }
    let target_config = spec.model.with_modes(k_target);
    target_config.validate()?;
    target_config.check_grid(train_set.grid.n())?;

    let sweep = super::sweep::sweep(spec, train_set, eval_set)?;
    let best = sweep.argmin[0];
    let mut xi_star = spec.axis.apply(&spec.fixed, spec.values[best])?;
    xi_star.seed = spec.seeds[0];
    let abc = spec.parametrization.abc_at(k_proxy)?;
    xi_star.spectral_lr = Some(xi_star.spectral_lr.unwrap_or(abc.c * xi_star.master_lr));

    let Rescaled {
        hyperparams: target_xi,
        init_std: target_std,
    } = rescale_hyperparams(&xi_star, abc.b, k_proxy, k_target, spec.parametrization.dim)?;
    let target_param = Parametrization {
        dim: spec.parametrization.dim,
        ..Parametrization::standard(target_std)
    };
    let target_record = train(train_set, eval_set, &target_config, &target_param, &target_xi)?;

    let n = train_set.grid.n();
    let proxy_sweep_cost = records_cost(&sweep.records, n, &spec.model);
    let target_cost = records_cost(std::slice::from_ref(&target_record), n, &spec.model);
    let planned = |xi: &HyperParams| (xi.epochs * steps_per_epoch(train_set.len(), xi.batch_size)) as f64;
    let mut direct_sweep_cost = 0.0;
    for v in 0..spec.values.len() {
        let xi = spec.axis.apply(&spec.fixed, spec.values[v])?;
        direct_sweep_cost += spec.seeds.len() as f64 * planned(&xi) * step_cost(xi.batch_size, n, &target_config);
    }
    let transfer_cost = proxy_sweep_cost + target_cost;
    let cost = CostReport {
        proxy_sweep_steps: sweep.total_steps(),
        proxy_sweep_cost,
        target_steps: target_record.step_count,
        target_cost,
        transfer_cost,
        direct_sweep_cost,
        ratio: transfer_cost / direct_sweep_cost,
    };
    Ok(TransferOutcome {
        k_proxy,
        k_target,
        xi_star,
        proxy_init_std: abc.b,
        target_hyperparams: target_xi,
        target_init_std: target_std,
        sweep,
        target_record,
        cost,
    })
}
