//! Reverse-mode gradients of the relative L2 loss through the operator,
//! written out per layer type, and a central-difference checker.
//!
//! Complex spectral weights receive `dL/d(re) + i dL/d(im)`, so every scalar
//! component is an independent entry for the optimizer.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    forward_sample, FnoConfig, ModelParams, SampleCache, TensorGroup, TensorView, TensorViewMut,
};
use crate::numerics::{RealFft, SeededRng};
use crate::tensor::Tensor3;

/// Loss gradient with the shapes of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(ModelParams);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self(params.zeros_like())
    }

    pub fn as_params(&self) -> &ModelParams {
        &self.0
    }

    pub fn into_params(self) -> ModelParams {
        self.0
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        self.0.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        self.0.tensors_mut()
    }

    pub fn enforce_constraints(&mut self) {
        self.0.enforce_constraints();
    }

    /// Error naming the first tensor with a NaN or infinite entry.
    pub fn check_finite(&self) -> Result<()> {
        for t in self.tensors() {
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericDivergence {
                    location: format!("gradient of {} (entry {i})", t.name),
                });
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.0.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// `||pred - target|| / ||target||` for one `[n, c]` slab.
fn sample_relative_error(pred: &[f64], target: &[f64]) -> (f64, f64, f64) {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (p, t) in pred.iter().zip(target) {
        diff += (p - t) * (p - t);
        norm += t * t;
    }
    let (diff, norm) = (diff.sqrt(), norm.sqrt());
    (diff / norm, diff, norm)
}

fn check_pair(pred: &Tensor3, target: &Tensor3) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Size(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.batch() == 0 {
        return Err(Error::Size("empty batch".into()));
    }
    Ok(())
}

fn check_targets(target: &Tensor3) -> Result<()> {
    for b in 0..target.batch() {
        if target.sample(b).iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateTarget { sample: b });
        }
    }
    Ok(())
}

/// Per-sample relative L2 errors.
pub fn relative_l2_errors(pred: &Tensor3, target: &Tensor3) -> Result<Vec<f64>> {
    check_pair(pred, target)?;
    check_targets(target)?;
    Ok((0..pred.batch())
        .map(|b| sample_relative_error(pred.sample(b), target.sample(b)).0)
        .collect())
}

/// Batch mean of `||pred - target||_2 / ||target||_2`.
pub fn relative_l2_loss(pred: &Tensor3, target: &Tensor3) -> Result<f64> {
    let errors = relative_l2_errors(pred, target)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn sample_backward(
    params: &ModelParams,
    config: &FnoConfig,
    cache: &SampleCache,
    grad_out: &[f64],
    fft: &RealFft,
) -> Gradients {
    let n = fft.len();
    let m = config.width;
    let act = config.activation;
    let mut g = params.zeros_like();

    let mut g_post = vec![0.0; m * n];
    params
        .proj_out
        .backward(&cache.proj_post, grad_out, n, &mut g.proj_out, Some(&mut g_post));
    let g_pre: Vec<f64> = g_post
        .iter()
        .zip(&cache.proj_pre)
        .map(|(g, &x)| g * act.derivative(x))
        .collect();
    let mut gh = vec![0.0; m * n];
    let last = cache.post.last().expect("h_L cached");
    params
        .proj_hidden
        .backward(last, &g_pre, n, &mut g.proj_hidden, Some(&mut gh));

    for l in (0..params.blocks.len()).rev() {
        let block = &params.blocks[l];
        let gw: Vec<f64> = gh
            .iter()
            .zip(&cache.pre[l])
            .map(|(g, &x)| g * act.derivative(x))
            .collect();
        let mut g_prev = vec![0.0; m * n];
        let gb = &mut g.blocks[l];
        block
            .pointwise
            .backward(&cache.post[l], &gw, n, &mut gb.pointwise, Some(&mut g_prev));
        block
            .spectral
            .backward(&gw, &cache.spectra[l], fft, gb.spectral.raw_mut(), &mut g_prev);
        gh = g_prev;
    }
    params.lift.backward(&cache.lift_in, &gh, n, &mut g.lift, None);
    Gradients(g)
}

/// Loss and exact gradients of the relative L2 loss over a batch.
///
/// Per-sample contributions run in parallel and are reduced in sample order,
/// so results are bitwise reproducible. A zero residual contributes a zero
/// gradient.
pub fn backward(
    params: &ModelParams,
    config: &FnoConfig,
    inputs: &Tensor3,
    targets: &Tensor3,
) -> Result<(f64, Gradients)> {
    crate::model::validate_inputs(params, config, inputs)?;
    if targets.shape() != [inputs.batch(), inputs.n(), config.out_channels] {
        return Err(Error::Size(format!(
            "targets shape {:?} does not match [batch, n, out_channels]",
            targets.shape()
        )));
    }
    check_targets(targets)?;
    let n = inputs.n();
    let batch = inputs.batch();
    let out_c = config.out_channels;
    let scale = 1.0 / batch as f64;

    let per_sample: Vec<(f64, Gradients)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let fft = crate::numerics::fft_plan(n).expect("grid validated");
            let cache = forward_sample(params, config, inputs.sample(b), &fft);
            let mut pred = vec![0.0; n * out_c];
            crate::model::to_point_major(&cache.output, out_c, n, &mut pred);
            let target = targets.sample(b);
            let (err, diff, norm) = sample_relative_error(&pred, target);
            let mut grad_out = vec![0.0; out_c * n];
            if diff > 0.0 {
                let coef = scale / (diff * norm);
                for j in 0..n {
                    for c in 0..out_c {
                        grad_out[c * n + j] = coef * (pred[j * out_c + c] - target[j * out_c + c]);
                    }
                }
            }
            (err, sample_backward(params, config, &cache, &grad_out, &fft))
        })
        .collect();

    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for (err, g) in &per_sample {
        loss += err;
        grads.accumulate(g);
    }
    let loss = loss / batch as f64;
    if !loss.is_finite() {
        return Err(Error::NumericDivergence {
            location: "loss".into(),
        });
    }
    grads.check_finite()?;
    Ok((loss, grads))
}

/// Settings for [`gradcheck`].
#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Check a seeded random subset of this size when the model is larger.
    pub max_entries: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, for entries whose true
    /// gradient is numerically zero.
    pub abs_floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_entries: 10_000,
            seed: 0,
            abs_floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
    pub pass: bool,
}

/// Compare analytic gradients with fourth-order central differences. Imaginary parts of
/// forced-real spectral entries are not free parameters and are skipped.
pub fn gradcheck(
    params: &ModelParams,
    config: &FnoConfig,
    inputs: &Tensor3,
    targets: &Tensor3,
    tolerance: f64,
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let (_, grads) = backward(params, config, inputs, targets)?;

    // (tensor index, entry index) of every free scalar
    let mut entries = Vec::new();
    for (ti, (t, block)) in params.tensors().iter().zip(spectral_owner(params)).enumerate() {
        for i in 0..t.data.len() {
            let fixed = match (t.group, block) {
                (TensorGroup::Spectral, Some(l)) => {
                    let s = &params.blocks[l].spectral;
                    let mode = i / 2 / (s.channels() * s.channels());
                    i % 2 == 1 && s.is_forced_real(mode)
                }
                _ => false,
            };
            if !fixed {
                entries.push((ti, i));
            }
        }
    }
    if entries.len() > options.max_entries {
        let mut rng = SeededRng::new(options.seed);
        rng.shuffle(&mut entries);
        entries.truncate(options.max_entries);
        entries.sort_unstable();
    }

    let loss_at = |p: &ModelParams| -> Result<f64> {
        let pred = crate::model::forward(p, config, inputs)?;
        relative_l2_loss(&pred, targets)
    };
    let grad_views = grads.tensors();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: entries.len(),
        pass: false,
    };
    let mut probe = params.clone();
    for &(ti, i) in &entries {
        let original = params.tensors()[ti].data[i];
        let h = options.step;
        let mut at = |offset: f64| -> Result<f64> {
            probe.tensors_mut()[ti].data[i] = original + offset;
            loss_at(&probe)
        };
        // fourth-order central stencil
        let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
        probe.tensors_mut()[ti].data[i] = original;
        let analytic = grad_views[ti].data[i];
        let denom = analytic.abs().max(numeric.abs()).max(options.abs_floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_rel_err || report.worst_tensor.is_empty() {
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel >= report.max_rel_err {
                report.worst_tensor = grad_views[ti].name.clone();
                report.worst_index = i;
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}

/// For each tensor, the block index if it is a spectral tensor.
fn spectral_owner(params: &ModelParams) -> Vec<Option<usize>> {
    let mut owners = vec![None, None];
    for l in 0..params.blocks.len() {
        owners.extend([None, None, Some(l)]);
    }
    owners.extend([None; 4]);
    owners
}

/// Gradient of the loss scaled by `1/s`; helper for the scale-invariance
/// properties of the parametrization.
pub fn scaled(grads: &Gradients, s: f64) -> Gradients {
    let mut g = grads.clone();
    g.scale(1.0 / s);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params};
    use crate::numerics::Activation;
    use crate::parametrization::Parametrization;

    fn problem(config: &FnoConfig, batch: usize, n: usize, seed: u64) -> (ModelParams, Tensor3, Tensor3) {
        let p = init_params(config, &Parametrization::standard(0.3), &SeededRng::new(seed)).unwrap();
        let mut rng = SeededRng::new(seed + 100);
        let x: Vec<f64> = (0..batch * n * config.in_channels).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..batch * n * config.out_channels).map(|_| rng.normal()).collect();
        (
            p,
            Tensor3::from_vec(batch, n, config.in_channels, x).unwrap(),
            Tensor3::from_vec(batch, n, config.out_channels, y).unwrap(),
        )
    }

    #[test]
    fn loss_examples() {
        let t = Tensor3::from_vec(2, 4, 1, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(relative_l2_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(relative_l2_loss(&Tensor3::zeros(2, 4, 1), &t).unwrap(), 1.0);
        let mut twice = t.clone();
        twice.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        assert!((relative_l2_loss(&twice, &t).unwrap() - 1.0).abs() < 1e-15);
        let mut degenerate = t.clone();
        degenerate.sample_mut(1).iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            relative_l2_loss(&t, &degenerate),
            Err(Error::DegenerateTarget { sample: 1 })
        ));
    }

    #[test]
    fn single_entry_matches_central_difference() {
        let config = FnoConfig::new(2, 3, 3);
        let (mut p, x, y) = problem(&config, 2, 16, 4);
        for b in &mut p.blocks {
            b.spectral.raw_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (_, g) = backward(&p, &config, &x, &y).unwrap();
        let h = 1e-5;
        // real part of r[1][0][2] in block 0
        let idx = 2 * ((1 * 3) * 3 + 2);
        let loss = |p: &ModelParams| relative_l2_loss(&forward(p, &config, &x).unwrap(), &y).unwrap();
        let mut up = p.clone();
        up.blocks[0].spectral.raw_mut()[idx] += h;
        let mut down = p.clone();
        down.blocks[0].spectral.raw_mut()[idx] -= h;
        let fd = (loss(&up) - loss(&down)) / (2.0 * h);
        let analytic = g.as_params().blocks[0].spectral.raw()[idx];
        assert!((fd - analytic).abs() <= 1e-6 * analytic.abs(), "{fd} vs {analytic}");
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let config = FnoConfig::new(1, 3, 2);
        let (p, x, _) = problem(&config, 3, 8, 2);
        let y = forward(&p, &config, &x).unwrap();
        let (loss, g) = backward(&p, &config, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|v| v.abs() < 1e-9)));
    }

    #[test]
    fn loss_is_bit_identical_to_forward_then_loss() {
        let config = FnoConfig::new(2, 4, 4);
        let (p, x, y) = problem(&config, 5, 32, 6);
        let (loss, _) = backward(&p, &config, &x, &y).unwrap();
        let direct = relative_l2_loss(&forward(&p, &config, &x).unwrap(), &y).unwrap();
        assert_eq!(loss.to_bits(), direct.to_bits());
    }

    #[test]
    fn gradcheck_small_model() {
        let config = FnoConfig::new(2, 8, 6);
        let (p, x, y) = problem(&config, 2, 32, 1);
        let report = gradcheck(&p, &config, &x, &y, 1e-5, &GradcheckOptions::default()).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.checked > 500);
        let again = gradcheck(&p, &config, &x, &y, 1e-5, &GradcheckOptions::default()).unwrap();
        assert_eq!(report, again);
        let strict = gradcheck(&p, &config, &x, &y, 0.0, &GradcheckOptions::default()).unwrap();
        assert!(!strict.pass);
    }

    #[test]
    fn gradcheck_across_activations_and_depths() {
        for act in [Activation::Gelu, Activation::Tanh] {
            for layers in [1, 2, 4] {
                let mut config = FnoConfig::new(layers, 3, 3);
                config.activation = act;
                let (p, x, y) = problem(&config, 2, 16, layers as u64);
                let report = gradcheck(&p, &config, &x, &y, 1e-5, &GradcheckOptions::default()).unwrap();
                assert!(report.pass, "{act:?} L={layers}: {report:?}");
            }
        }
    }

    #[test]
    fn real_weight_mode_gradients() {
        let mut config = FnoConfig::new(2, 3, 4);
        config.real_weights = true;
        let (p, x, y) = problem(&config, 2, 16, 9);
        let (_, g) = backward(&p, &config, &x, &y).unwrap();
        for b in &g.as_params().blocks {
            assert!(b.spectral.raw().chunks(2).all(|c| c[1] == 0.0));
        }
        let report = gradcheck(&p, &config, &x, &y, 1e-5, &GradcheckOptions::default()).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn linearized_model_matches_jacobian_oracle() {
        // identity activation, one block: the output is affine in r, so the
        // Jacobian columns are exact differences and the gradient is
        // J^T dL/dy with dL/dy = (p - t) / (||p - t|| ||t||) / batch.
        let mut config = FnoConfig::new(1, 2, 3);
        config.activation = Activation::Identity;
        let (p, x, y) = problem(&config, 2, 16, 21);
        let (_, g) = backward(&p, &config, &x, &y).unwrap();
        let pred = forward(&p, &config, &x).unwrap();
        let batch = x.batch();
        let mut dl_dy = vec![0.0; pred.data().len()];
        for b in 0..batch {
            let (_, diff, norm) = sample_relative_error(pred.sample(b), y.sample(b));
            let len = pred.sample(b).len();
            for j in 0..len {
                dl_dy[b * len + j] = (pred.sample(b)[j] - y.sample(b)[j]) / (diff * norm) / batch as f64;
            }
        }
        let r = p.blocks[0].spectral.raw().to_vec();
        for idx in 0..r.len() {
            let mode = idx / 2 / 4;
            if idx % 2 == 1 && mode == 0 {
                continue;
            }
            let mut shifted = p.clone();
            shifted.blocks[0].spectral.raw_mut()[idx] += 1.0;
            let col = forward(&shifted, &config, &x).unwrap();
            let oracle: f64 = col
                .data()
                .iter()
                .zip(pred.data())
                .zip(&dl_dy)
                .map(|((a, b), d)| (a - b) * d)
                .sum();
            let analytic = g.as_params().blocks[0].spectral.raw()[idx];
            assert!((oracle - analytic).abs() < 1e-10 * (1.0 + oracle.abs()), "{idx}: {oracle} {analytic}");
        }
    }

    #[test]
    fn shifted_parametrization_gradient_scales() {
        // r' = psi r, a' = a / psi: same operator, dL/dr' = dL/dr / psi
        let config = FnoConfig::new(2, 3, 3);
        let (p, x, y) = problem(&config, 2, 16, 13);
        let psi = 2.5;
        let mut shifted = p.clone();
        for b in &mut shifted.blocks {
            b.spectral.raw_mut().iter_mut().for_each(|v| *v *= psi);
            b.spectral.scale /= psi;
        }
        let (_, g) = backward(&p, &config, &x, &y).unwrap();
        let (_, gs) = backward(&shifted, &config, &x, &y).unwrap();
        let predicted = scaled(&g, psi);
        for (a, b) in gs.as_params().blocks.iter().zip(&predicted.as_params().blocks) {
            for (u, v) in a.spectral.raw().iter().zip(b.spectral.raw()) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nan_gradient_names_tensor() {
        let config = FnoConfig::new(1, 2, 2);
        let (p, _, _) = problem(&config, 1, 8, 1);
        let mut g = Gradients::zeros_like(&p);
        g.tensors_mut()[3].data[0] = f64::INFINITY;
        match g.check_finite() {
            Err(Error::NumericDivergence { location }) => assert!(location.contains("blocks.0.pointwise.bias")),
            other => panic!("{other:?}"),
        }
    }
}
