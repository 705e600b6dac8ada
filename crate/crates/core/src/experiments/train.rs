use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, relative_l2_loss};
use crate::burgers::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, init_params, FnoConfig, ModelParams};
use crate::numerics::SeededRng;
use crate::optimizer::{adam_step, clip_in_place, AdamState, ClipPlacement, LrGroups};
use crate::parametrization::{BatchOrder, HyperParams, Parametrization, ParametrizationKind};

/// A run is abandoned once a mini-batch loss exceeds this multiple of the
/// initial training loss.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub hyperparams: HyperParams,
    pub parametrization: ParametrizationKind,
    pub modes: usize,
    /// Mean mini-batch loss of each completed epoch.
    pub loss_history: Vec<f64>,
    /// Held-out relative L2 error every `eval_every` epochs.
    pub eval_history: Vec<f64>,
    pub initial_train_loss: f64,
    pub initial_eval_error: f64,
    /// Full-pass training loss after the last epoch; `+inf` if diverged.
    pub final_train_loss: f64,
    /// `+inf` if diverged.
    pub final_eval_error: f64,
    /// Seconds; the only field that varies between identical runs.
    pub wall_time: f64,
    pub step_count: u64,
    pub diverged: bool,
}

impl TrainRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &TrainRecord) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        &a == other
    }
}

/// Optimizer steps per epoch (the last batch may be partial).
pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

fn check_data(train: &Dataset, eval: &Dataset, config: &FnoConfig) -> Result<()> {
    config.validate()?;
    config.check_grid(train.grid.n())?;
    if eval.grid.n() != train.grid.n() {
        return Err(Error::Size(format!(
            "train grid {} and eval grid {} differ",
            train.grid.n(),
            eval.grid.n()
        )));
    }
    for (name, ds) in [("train", train), ("eval", eval)] {
        if ds.is_empty() {
            return Err(Error::Size(format!("{name} set is empty")));
        }
        if ds.inputs.channels() != config.in_channels || ds.targets.channels() != config.out_channels {
            return Err(Error::Size(format!(
                "{name} set has {} input / {} target channels, model expects {} / {}",
                ds.inputs.channels(),
                ds.targets.channels(),
                config.in_channels,
                config.out_channels
            )));
        }
    }
    Ok(())
}

fn evaluate(params: &ModelParams, config: &FnoConfig, ds: &Dataset) -> Result<f64> {
    relative_l2_loss(&forward(params, config, &ds.inputs)?, &ds.targets)
}

enum Stop {
    Diverged,
    Failed(Error),
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericDivergence { .. } => Stop::Diverged,
            other => Stop::Failed(other),
        }
    }
}

/// Train from the initialization of `xi.seed` and also return the final
/// parameters (the last finite state when the run diverged).
///
/// The spectral learning rate is `xi.spectral_lr`, or `c(K) * master_lr`
/// when unset. Schedule milestones count epochs.
pub fn train_model(
    train: &Dataset,
    eval: &Dataset,
    config: &FnoConfig,
    parametrization: &Parametrization,
    xi: &HyperParams,
) -> Result<(TrainRecord, ModelParams)> {
    check_data(train, eval, config)?;
    xi.validate()?;
    let abc = parametrization.abc_at(config.modes)?;
    let started = Instant::now();
    let root = SeededRng::new(xi.seed);
    let mut params = init_params(config, parametrization, &root.derive(INIT_STREAM))?;
    let mut shuffle = root.derive(SHUFFLE_STREAM);

    let initial_train_loss = evaluate(&params, config, train)?;
    let initial_eval_error = evaluate(&params, config, eval)?;
    let mut record = TrainRecord {
        hyperparams: xi.clone(),
        parametrization: parametrization.kind,
        modes: config.modes,
        loss_history: Vec::with_capacity(xi.epochs),
        eval_history: Vec::new(),
        initial_train_loss,
        initial_eval_error,
        final_train_loss: initial_train_loss,
        final_eval_error: initial_eval_error,
        wall_time: 0.0,
        step_count: 0,
        diverged: false,
    };

    let spectral_base = xi.spectral_lr.unwrap_or(abc.c * xi.master_lr);
    let mut adam = AdamState::new(&params, xi.beta1, xi.beta2, xi.eps);
    let mut grad_clip = None;
    if let Some(clip) = &xi.clip {
        match clip.placement {
            ClipPlacement::Gradient => grad_clip = Some((clip.value, clip.scope)),
            ClipPlacement::Update => adam = adam.with_update_clip(clip.value, clip.scope),
        }
    }

    let samples = train.len();
    let mut order: Vec<usize> = (0..samples).collect();
    let mut run = || -> std::result::Result<(), Stop> {
        for epoch in 0..xi.epochs {
            if xi.batch_order == BatchOrder::Shuffled {
                order.sort_unstable();
                shuffle.shuffle(&mut order);
            }
            let lr = LrGroups {
                spectral: xi.schedule.lr_at(spectral_base, epoch),
                other: xi.schedule.lr_at(xi.master_lr, epoch),
            };
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(xi.batch_size) {
                let inputs = train.inputs.gather(chunk);
                let targets = train.targets.gather(chunk);
                let (loss, mut grads) = backward(&params, config, &inputs, &targets)?;
                if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_train_loss {
                    return Err(Stop::Diverged);
                }
                if let Some((c, scope)) = grad_clip {
                    clip_in_place(&mut grads, c, scope);
                }
                adam_step(&mut params, &grads, &mut adam, lr)?;
                record.step_count += 1;
                epoch_loss += loss;
                batches += 1;
            }
            record.loss_history.push(epoch_loss / batches as f64);
            if xi.eval_every > 0 && (epoch + 1) % xi.eval_every == 0 {
                record.eval_history.push(evaluate(&params, config, eval)?);
            }
        }
        record.final_train_loss = evaluate(&params, config, train)?;
        record.final_eval_error = evaluate(&params, config, eval)?;
        Ok(())
    };
    match run() {
        Ok(()) => {}
        Err(Stop::Diverged) => {
            record.diverged = true;
            record.final_train_loss = f64::INFINITY;
            record.final_eval_error = f64::INFINITY;
        }
        Err(Stop::Failed(e)) => return Err(e),
    }
    if !record.diverged
        && (record.final_train_loss > DIVERGENCE_FACTOR * initial_train_loss
            || !record.final_train_loss.is_finite())
    {
        record.diverged = true;
        record.final_train_loss = f64::INFINITY;
        record.final_eval_error = f64::INFINITY;
    }
    record.wall_time = started.elapsed().as_secs_f64();
    Ok((record, params))
}

/// [`train_model`] without the parameters.
pub fn train(
    train: &Dataset,
    eval: &Dataset,
    config: &FnoConfig,
    parametrization: &Parametrization,
    xi: &HyperParams,
) -> Result<TrainRecord> {
    train_model(train, eval, config, parametrization, xi).map(|(r, _)| r)
}
