use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::backward;
use crate::burgers::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_features, init_params, FeatureSnapshot, FnoConfig, ModelParams};
use crate::numerics::SeededRng;
use crate::optimizer::{adam_step, clip_in_place, AdamState, ClipPlacement, LrGroups};
use crate::parametrization::{HyperParams, Parametrization, ParametrizationKind};
use crate::tensor::Tensor3;

/// Settings of a coordinate check: a fixed mini-batch of the first
/// `hyperparams.batch_size` samples, `steps` Adam updates per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheckSpec {
    pub model: FnoConfig,
    pub parametrization: Parametrization,
    pub modes: Vec<usize>,
    pub steps: usize,
    pub hyperparams: HyperParams,
    pub seeds: Vec<u64>,
}

/// Per-layer RMS sizes of one model. RMS is taken jointly over batch items,
/// grid points and channels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTrace {
    pub parametrization: ParametrizationKind,
    pub modes: usize,
    pub seed: u64,
    /// `h_0 ..= h_L` at initialization.
    pub h_init: Vec<f64>,
    /// `w_1 ..= w_L` at initialization.
    pub w_init: Vec<f64>,
    /// `w_{l,t} - w_{l,0}` after the update steps.
    pub dw: Vec<f64>,
    /// The spectral update `(r_t - r_0)` applied to `h_{l-1,t}`.
    pub dkh: Vec<f64>,
}

impl FeatureTrace {
    /// Element-wise mean of traces that share a shape.
    pub fn mean(traces: &[FeatureTrace]) -> Option<FeatureTrace> {
        let first = traces.first()?;
        let avg = |get: fn(&FeatureTrace) -> &Vec<f64>| -> Vec<f64> {
            (0..get(first).len())
                .map(|i| traces.iter().map(|t| get(t)[i]).sum::<f64>() / traces.len() as f64)
                .collect()
        };
        Some(FeatureTrace {
            parametrization: first.parametrization,
            modes: first.modes,
            seed: first.seed,
            h_init: avg(|t| &t.h_init),
            w_init: avg(|t| &t.w_init),
            dw: avg(|t| &t.dw),
            dkh: avg(|t| &t.dkh),
        })
    }
}

fn snapshots(params: &ModelParams, config: &FnoConfig, inputs: &Tensor3) -> Result<Vec<FeatureSnapshot>> {
    (0..inputs.batch())
        .map(|b| forward_features(params, config, inputs, b))
        .collect()
}

fn layer_rms<'a>(fields: impl Iterator<Item = &'a [f64]>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for f in fields {
        sum += f.iter().map(|v| v * v).sum::<f64>();
        count += f.len();
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn trace_one(
    spec: &CoordCheckSpec,
    modes: usize,
    seed: u64,
    inputs: &Tensor3,
    targets: &Tensor3,
) -> Result<FeatureTrace> {
    let config = spec.model.with_modes(modes);
    config.check_grid(inputs.n())?;
    let xi = &spec.hyperparams;
    let abc = spec.parametrization.abc_at(modes)?;
    let initial = init_params(&config, &spec.parametrization, &SeededRng::new(seed).derive(1))?;
    let before = snapshots(&initial, &config, inputs)?;

    let mut params = initial.clone();
    let mut adam = AdamState::new(&params, xi.beta1, xi.beta2, xi.eps);
    let mut grad_clip = None;
    if let Some(clip) = &xi.clip {
        match clip.placement {
            ClipPlacement::Gradient => grad_clip = Some((clip.value, clip.scope)),
            ClipPlacement::Update => adam = adam.with_update_clip(clip.value, clip.scope),
        }
    }
    let lr = LrGroups {
        spectral: xi.spectral_lr.unwrap_or(abc.c * xi.master_lr),
        other: xi.master_lr,
    };
    for _ in 0..spec.steps {
        let (_, mut grads) = backward(&params, &config, inputs, targets)?;
        if let Some((c, scope)) = grad_clip {
            clip_in_place(&mut grads, c, scope);
        }
        adam_step(&mut params, &grads, &mut adam, lr)?;
    }
    let after = snapshots(&params, &config, inputs)?;

    let layers = config.layers;
    let h_init = (0..=layers)
        .map(|l| layer_rms(before.iter().map(|s| s.post[l].as_slice())))
        .collect();
    let w_init = (0..layers)
        .map(|l| layer_rms(before.iter().map(|s| s.pre[l].as_slice())))
        .collect();
    let mut dw = Vec::with_capacity(layers);
    let mut dkh = Vec::with_capacity(layers);
    for l in 0..layers {
        let deltas: Vec<Vec<f64>> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| a.pre[l].iter().zip(&b.pre[l]).map(|(x, y)| x - y).collect())
            .collect();
        dw.push(layer_rms(deltas.iter().map(Vec::as_slice)));
        let update = params.blocks[l].spectral.difference(&initial.blocks[l].spectral)?;
        let applied = after
            .iter()
            .map(|s| update.apply(&s.post[l], inputs.n()))
            .collect::<Result<Vec<_>>>()?;
        dkh.push(layer_rms(applied.iter().map(Vec::as_slice)));
    }
    let trace = FeatureTrace {
        parametrization: spec.parametrization.kind,
        modes,
        seed,
        h_init,
        w_init,
        dw,
        dkh,
    };
    let all = trace.h_init.iter().chain(&trace.w_init).chain(&trace.dw).chain(&trace.dkh);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::NumericDivergence {
            location: format!("coordinate check at K={modes}, seed {seed}"),
        });
    }
    Ok(trace)
}

/// Traces for every `(K, seed)`, in `K`-major order.
pub fn coord_check(spec: &CoordCheckSpec, data: &Dataset) -> Result<Vec<FeatureTrace>> {
    if spec.modes.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("coordcheck", "modes and seeds must be non-empty"));
    }
    spec.hyperparams.validate()?;
    let batch = spec.hyperparams.batch_size.min(data.len());
    let idx: Vec<usize> = (0..batch).collect();
    let inputs = data.inputs.gather(&idx);
    let targets = data.targets.gather(&idx);
    let mut traces = Vec::with_capacity(spec.modes.len() * spec.seeds.len());
    for &k in &spec.modes {
        for &seed in &spec.seeds {
            traces.push(trace_one(spec, k, seed, &inputs, &targets)?);
        }
    }
    Ok(traces)
}

#[derive(Serialize)]
struct CoordRow<'a> {
    parametrization: &'a str,
    #[serde(rename = "K")]
    modes: usize,
    seed: i64,
    layer: usize,
    quantity: &'a str,
    rms: f64,
}

/// One row per trace, layer and quantity; then per-K means over seeds with
/// `seed = -1`. Layers index `h` from 0 and `w`, `dw`, `dKh` from 1.
pub fn write_coordcheck_csv<W: Write>(traces: &[FeatureTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut emit = |t: &FeatureTrace, seed: i64| -> Result<()> {
        let name = t.parametrization.name();
        let groups: [(&str, &Vec<f64>, usize); 4] =
            [("h_init", &t.h_init, 0), ("w_init", &t.w_init, 1), ("dw_t", &t.dw, 1), ("dKh_t", &t.dkh, 1)];
        for (quantity, values, first) in groups {
            for (i, &rms) in values.iter().enumerate() {
                w.serialize(CoordRow {
                    parametrization: name,
                    modes: t.modes,
                    seed,
                    layer: first + i,
                    quantity,
                    rms,
                })
                .map_err(|e| Error::io("<csv>", e.into()))?;
            }
        }
        Ok(())
    };
    for t in traces {
        emit(t, t.seed as i64)?;
    }
    let mut modes: Vec<usize> = traces.iter().map(|t| t.modes).collect();
    modes.dedup();
    for k in modes {
        let group: Vec<FeatureTrace> = traces.iter().filter(|t| t.modes == k).cloned().collect();
        if let Some(mean) = FeatureTrace::mean(&group) {
            emit(&mean, -1)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
