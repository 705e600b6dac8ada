use num_complex::Complex64;
use rayon::prelude::*;

use super::{FnoConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::RealFft;
use crate::tensor::Tensor3;

/// Everything the reverse pass needs from one sample's forward pass.
/// All fields are channel-major `[channel][n]`.
#[derive(Debug, Clone)]
pub(crate) struct SampleCache {
    /// Lifting input: function channels then the coordinate channel.
    pub lift_in: Vec<f64>,
    /// `h_0 ..= h_L`.
    pub post: Vec<Vec<f64>>,
    /// `w_1 ..= w_L`.
    pub pre: Vec<Vec<f64>>,
    /// Retained spectra of `h_{l-1}` for each block.
    pub spectra: Vec<Vec<Complex64>>,
    pub proj_pre: Vec<f64>,
    pub proj_post: Vec<f64>,
    pub output: Vec<f64>,
}

/// Pre- and post-activation features of one sample, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSnapshot {
    /// `h_0 ..= h_L` (index 0 is the lifted input).
    pub post: Vec<Vec<f64>>,
    /// `w_1 ..= w_L`.
    pub pre: Vec<Vec<f64>>,
}

pub(crate) fn forward_sample(
    params: &ModelParams,
    config: &FnoConfig,
    sample: &[f64],
    fft: &RealFft,
) -> SampleCache {
    let n = fft.len();
    let m = config.width;
    let act = config.activation;
    let cin = config.in_channels;

    let mut lift_in = vec![0.0; config.lifted_inputs() * n];
    for j in 0..n {
        for c in 0..cin {
            lift_in[c * n + j] = sample[j * cin + c];
        }
    }
    if config.append_coord {
        for j in 0..n {
            lift_in[cin * n + j] = j as f64 / n as f64;
        }
    }

    let mut h = vec![0.0; m * n];
    params.lift.apply(&lift_in, n, &mut h);
    let mut post = Vec::with_capacity(config.layers + 1);
    let mut pre = Vec::with_capacity(config.layers);
    let mut spectra = Vec::with_capacity(config.layers);
    post.push(h);

    for block in &params.blocks {
        let prev = post.last().expect("h_0 pushed above");
        let spec = block.spectral.truncated_spectra(prev, fft);
        let mixed = block.spectral.mix(&spec);
        let mut w = vec![0.0; m * n];
        block.spectral.synthesize(&mixed, fft, &mut w);
        let mut lin = vec![0.0; m * n];
        block.pointwise.apply(prev, n, &mut lin);
        for (a, b) in w.iter_mut().zip(&lin) {
            *a += b;
        }
        let next: Vec<f64> = w.iter().map(|&v| act.apply(v)).collect();
        spectra.push(spec);
        pre.push(w);
        post.push(next);
    }

    let last = post.last().expect("at least h_0");
    let mut proj_pre = vec![0.0; m * n];
    params.proj_hidden.apply(last, n, &mut proj_pre);
    let proj_post: Vec<f64> = proj_pre.iter().map(|&v| act.apply(v)).collect();
    let mut output = vec![0.0; config.out_channels * n];
    params.proj_out.apply(&proj_post, n, &mut output);

    SampleCache {
        lift_in,
        post,
        pre,
        spectra,
        proj_pre,
        proj_post,
        output,
    }
}

pub(crate) fn validate_inputs(params: &ModelParams, config: &FnoConfig, input: &Tensor3) -> Result<()> {
    config.validate()?;
    config.check_grid(input.n())?;
    if input.channels() != config.in_channels {
        return Err(Error::Size(format!(
            "input has {} channels, model expects {}",
            input.channels(),
            config.in_channels
        )));
    }
    if !params.matches_config(config) {
        return Err(Error::Size("parameter shapes do not match the model configuration".into()));
    }
    if input.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDivergence {
            location: "model input".into(),
        });
    }
    Ok(())
}

/// Point-major `[n][c]` copy of a channel-major `[c][n]` field.
pub(crate) fn to_point_major(field: &[f64], channels: usize, n: usize, out: &mut [f64]) {
    for c in 0..channels {
        for j in 0..n {
            out[j * channels + c] = field[c * n + j];
        }
    }
}

/// Evaluate the operator on `[batch, n, in_channels]`, returning
/// `[batch, n, out_channels]`. Batch items run in parallel; each result is
/// independent of scheduling.
pub fn forward(params: &ModelParams, config: &FnoConfig, input: &Tensor3) -> Result<Tensor3> {
    validate_inputs(params, config, input)?;
    let n = input.n();
    let outputs: Vec<Vec<f64>> = (0..input.batch())
        .into_par_iter()
        .map(|b| {
            let fft = crate::numerics::fft_plan(n).expect("grid validated");
            forward_sample(params, config, input.sample(b), &fft).output
        })
        .collect();
    let mut out = Tensor3::zeros(input.batch(), n, config.out_channels);
    for (b, o) in outputs.iter().enumerate() {
        to_point_major(o, config.out_channels, n, out.sample_mut(b));
    }
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDivergence {
            location: "model output".into(),
        });
    }
    Ok(out)
}

/// Hidden features of one batch item.
pub fn forward_features(
    params: &ModelParams,
    config: &FnoConfig,
    input: &Tensor3,
    index: usize,
) -> Result<FeatureSnapshot> {
    validate_inputs(params, config, input)?;
    if index >= input.batch() {
        return Err(Error::Size(format!("batch index {index} out of range")));
    }
    let fft = crate::numerics::fft_plan(input.n())?;
    let cache = forward_sample(params, config, input.sample(index), &fft);
    Ok(FeatureSnapshot {
        post: cache.post,
        pre: cache.pre,
    })
}
