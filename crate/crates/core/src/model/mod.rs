//! One-dimensional Fourier neural operator.
//!
//! `G = Q o phi(W_L + K_L) o ... o phi(W_1 + K_1) o P` where `P` lifts the
//! input function (plus a coordinate channel) to `m` channels, each block adds
//! a pointwise linear map to a spectral convolution, and `Q` is a two-layer
//! pointwise projection.

mod checkpoint;
mod forward;
mod spectral;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{forward, forward_features, FeatureSnapshot};
pub(crate) use forward::{forward_sample, to_point_major, validate_inputs, SampleCache};
pub use spectral::SpectralWeights;

use crate::error::{Error, Result};
use crate::numerics::{Activation, SeededRng};
use crate::parametrization::Parametrization;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnoConfig {
    /// Spatial dimensionality; only 1 is supported.
    #[serde(default = "one")]
    pub dim: usize,
    pub layers: usize,
    /// Hidden channel width `m`.
    pub width: usize,
    /// Retained Fourier modes `K`.
    pub modes: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Channels of the input function, not counting the coordinate channel.
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "one")]
    pub out_channels: usize,
    /// Append `x / domain_length` as an extra input channel.
    #[serde(default = "yes")]
    pub append_coord: bool,
    /// Constrain spectral weights to real values.
    #[serde(default)]
    pub real_weights: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

impl FnoConfig {
    pub fn new(layers: usize, width: usize, modes: usize) -> Self {
        Self {
            dim: 1,
            layers,
            width,
            modes,
            activation: Activation::Gelu,
            in_channels: 1,
            out_channels: 1,
            append_coord: true,
            real_weights: false,
        }
    }

    pub fn with_modes(&self, modes: usize) -> Self {
        Self {
            modes,
            ..self.clone()
        }
    }

    /// Channels seen by the lifting layer.
    pub fn lifted_inputs(&self) -> usize {
        self.in_channels + usize::from(self.append_coord)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 {
            return Err(Error::config("model.dim", "only one spatial dimension is supported"));
        }
        for (field, v) in [
            ("model.layers", self.layers),
            ("model.width", self.width),
            ("model.modes", self.modes),
            ("model.in_channels", self.in_channels),
            ("model.out_channels", self.out_channels),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        Ok(())
    }

    /// Grid compatibility, checked at forward time.
    pub fn check_grid(&self, n: usize) -> Result<()> {
        if !n.is_power_of_two() || n < 4 {
            return Err(Error::Size(format!("grid size {n} must be a power of two >= 4")));
        }
        if self.modes > n / 2 {
            return Err(Error::Truncation {
                modes: self.modes,
                n,
                half: n / 2,
            });
        }
        Ok(())
    }
}

/// Pointwise affine map `out = W in + bias`, `W` row-major `[rows][cols]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Fan-in init: weights `N(0, 1/cols)`, zero bias.
    fn fan_in(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let std = (1.0 / cols as f64).sqrt();
        let mut d = Self::zeros(rows, cols);
        d.weight.iter_mut().for_each(|w| *w = std * rng.normal());
        d
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Channel-major `[cols][n]` in, `[rows][n]` out.
    pub(crate) fn apply(&self, input: &[f64], n: usize, out: &mut [f64]) {
        for o in 0..self.rows {
            let dst = &mut out[o * n..(o + 1) * n];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.cols {
                let w = self.weight[o * self.cols + i];
                for (d, x) in dst.iter_mut().zip(&input[i * n..(i + 1) * n]) {
                    *d += w * x;
                }
            }
        }
    }

    /// Accumulate parameter gradients and (optionally) the input gradient.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        n: usize,
        grad: &mut Dense,
        grad_in: Option<&mut [f64]>,
    ) {
        for o in 0..self.rows {
            let g = &grad_out[o * n..(o + 1) * n];
            grad.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.cols {
                let x = &input[i * n..(i + 1) * n];
                grad.weight[o * self.cols + i] += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if let Some(gin) = grad_in {
            for i in 0..self.cols {
                let dst = &mut gin[i * n..(i + 1) * n];
                for o in 0..self.rows {
                    let w = self.weight[o * self.cols + i];
                    for (d, g) in dst.iter_mut().zip(&grad_out[o * n..(o + 1) * n]) {
                        *d += w * g;
                    }
                }
            }
        }
    }
}

/// One block: pointwise map `W_l` plus spectral convolution `K_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub pointwise: Dense,
    pub spectral: SpectralWeights,
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lift: Dense,
    pub blocks: Vec<Block>,
    pub proj_hidden: Dense,
    pub proj_out: Dense,
}

/// Optimizer group of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorGroup {
    Spectral,
    Other,
}

/// Named view of one parameter tensor. Spectral tensors are interleaved complex.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub group: TensorGroup,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: String,
    pub group: TensorGroup,
    pub data: &'a mut [f64],
}

impl ModelParams {
    /// All-zero parameters with the shapes of `config`, spectral scale 1.
    pub fn zeros(config: &FnoConfig) -> Self {
        let m = config.width;
        Self {
            lift: Dense::zeros(m, config.lifted_inputs()),
            blocks: (0..config.layers)
                .map(|_| Block {
                    pointwise: Dense::zeros(m, m),
                    spectral: SpectralWeights::zeros(config.modes, m, 1.0, config.real_weights),
                })
                .collect(),
            proj_hidden: Dense::zeros(m, m),
            proj_out: Dense::zeros(config.out_channels, m),
        }
    }

    /// Same shapes, every entry zero (spectral scale and constraints kept).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Tensors in declaration order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::with_capacity(4 + 3 * self.blocks.len() + 4);
        fn view(name: String, group: TensorGroup, data: &[f64]) -> TensorView<'_> {
            TensorView { name, group, data }
        }
        let mut push = |name, group, data| out.push(view(name, group, data));
        push("lift.weight".into(), TensorGroup::Other, &self.lift.weight);
        push("lift.bias".into(), TensorGroup::Other, &self.lift.bias);
        for (l, b) in self.blocks.iter().enumerate() {
            push(format!("blocks.{l}.pointwise.weight"), TensorGroup::Other, &b.pointwise.weight);
            push(format!("blocks.{l}.pointwise.bias"), TensorGroup::Other, &b.pointwise.bias);
            push(format!("blocks.{l}.spectral.r"), TensorGroup::Spectral, &b.spectral.data);
        }
        push("proj_hidden.weight".into(), TensorGroup::Other, &self.proj_hidden.weight);
        push("proj_hidden.bias".into(), TensorGroup::Other, &self.proj_hidden.bias);
        push("proj_out.weight".into(), TensorGroup::Other, &self.proj_out.weight);
        push("proj_out.bias".into(), TensorGroup::Other, &self.proj_out.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::with_capacity(4 + 3 * self.blocks.len() + 4);
        out.push(TensorViewMut {
            name: "lift.weight".into(),
            group: TensorGroup::Other,
            data: &mut self.lift.weight,
        });
        out.push(TensorViewMut {
            name: "lift.bias".into(),
            group: TensorGroup::Other,
            data: &mut self.lift.bias,
        });
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.push(TensorViewMut {
                name: format!("blocks.{l}.pointwise.weight"),
                group: TensorGroup::Other,
                data: &mut b.pointwise.weight,
            });
            out.push(TensorViewMut {
                name: format!("blocks.{l}.pointwise.bias"),
                group: TensorGroup::Other,
                data: &mut b.pointwise.bias,
            });
            out.push(TensorViewMut {
                name: format!("blocks.{l}.spectral.r"),
                group: TensorGroup::Spectral,
                data: &mut b.spectral.data,
            });
        }
        for (name, d) in [("proj_hidden", &mut self.proj_hidden), ("proj_out", &mut self.proj_out)] {
            out.push(TensorViewMut {
                name: format!("{name}.weight"),
                group: TensorGroup::Other,
                data: &mut d.weight,
            });
            out.push(TensorViewMut {
                name: format!("{name}.bias"),
                group: TensorGroup::Other,
                data: &mut d.bias,
            });
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn enforce_constraints(&mut self) {
        for b in &mut self.blocks {
            b.spectral.enforce_constraints();
        }
    }

    pub(crate) fn matches_config(&self, config: &FnoConfig) -> bool {
        let m = config.width;
        self.lift.rows == m
            && self.lift.cols == config.lifted_inputs()
            && self.blocks.len() == config.layers
            && self.blocks.iter().all(|b| {
                b.pointwise.rows == m
                    && b.pointwise.cols == m
                    && b.spectral.modes == config.modes
                    && b.spectral.channels == m
                    && b.spectral.real_only == config.real_weights
            })
            && self.proj_hidden.rows == m
            && self.proj_hidden.cols == m
            && self.proj_out.rows == config.out_channels
            && self.proj_out.cols == m
    }
}

/// Random initialization.
///
/// Spectral entries get variance `b(K)^2` per scalar component: real and
/// imaginary parts each `N(0, b^2/2)`, forced-real entries the full `b^2`.
/// Pointwise maps use fan-in init independent of K; biases start at zero.
pub fn init_params(
    config: &FnoConfig,
    parametrization: &Parametrization,
    rng: &SeededRng,
) -> Result<ModelParams> {
    config.validate()?;
    let abc = parametrization.abc_at(config.modes)?;
    let m = config.width;
    let mut stream = 0u64;
    let mut next = || {
        stream += 1;
        rng.derive(stream)
    };
    let lift = Dense::fan_in(m, config.lifted_inputs(), &mut next());
    let mut blocks = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let pointwise = Dense::fan_in(m, m, &mut next());
        let mut spectral = SpectralWeights::zeros(config.modes, m, abc.a, config.real_weights);
        let mut srng = next();
        for k in 0..config.modes {
            let forced = spectral.is_forced_real(k);
            for o in 0..m {
                for i in 0..m {
                    let v = if forced {
                        num_complex::Complex64::new(abc.b * srng.normal(), 0.0)
                    } else {
                        let s = abc.b * std::f64::consts::FRAC_1_SQRT_2;
                        num_complex::Complex64::new(s * srng.normal(), s * srng.normal())
                    };
                    spectral.set(k, o, i, v);
                }
            }
        }
        blocks.push(Block { pointwise, spectral });
    }
    let proj_hidden = Dense::fan_in(m, m, &mut next());
    let proj_out = Dense::fan_in(config.out_channels, m, &mut next());
    Ok(ModelParams {
        lift,
        blocks,
        proj_hidden,
        proj_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empirical_variance(params: &ModelParams) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for b in &params.blocks {
            let s = &b.spectral;
            for k in 0..s.modes() {
                for o in 0..s.channels() {
                    for i in 0..s.channels() {
                        sum += s.get(k, o, i).norm_sqr();
                        count += 1;
                    }
                }
            }
        }
        sum / count as f64
    }

    #[test]
    fn standard_init_variance_is_width_to_minus_four() {
        let config = FnoConfig::new(2, 64, 8);
        let p = init_params(&config, &Parametrization::standard_for_width(64), &SeededRng::new(1)).unwrap();
        let target = 64f64.powi(-4);
        // 2 * 8 * 4096 draws
        assert!((empirical_variance(&p) / target - 1.0).abs() < 0.03);
        assert_eq!(p.blocks[0].spectral.scale(), 1.0);
    }

    #[test]
    fn mup_anchor_matches_standard_init() {
        let config = FnoConfig::new(2, 8, 4);
        let rng = SeededRng::new(3);
        let a = init_params(&config, &Parametrization::mup(4, 0.1), &rng).unwrap();
        let b = init_params(&config, &Parametrization::standard(0.1), &rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mup_variance_multiplier() {
        let rng = SeededRng::new(4);
        let p = Parametrization::mup(4, 1.0);
        let v16 = empirical_variance(&init_params(&FnoConfig::new(4, 16, 16), &p, &rng).unwrap());
        // theory: log 4 / log 16 = 0.5
        assert!((v16 - 0.5).abs() < 0.02, "{v16}");
    }

    #[test]
    fn real_mode_has_no_imaginary_parts() {
        let mut config = FnoConfig::new(1, 4, 6);
        config.real_weights = true;
        let p = init_params(&config, &Parametrization::standard(1.0), &SeededRng::new(2)).unwrap();
        let s = &p.blocks[0].spectral;
        assert!(s.raw().chunks(2).all(|c| c[1] == 0.0));
        // full variance on the real part
        assert!((empirical_variance(&p) - 1.0).abs() < 0.25);
    }

    #[test]
    fn tensor_views_cover_every_scalar() {
        let config = FnoConfig::new(3, 5, 4);
        let p = init_params(&config, &Parametrization::standard(0.2), &SeededRng::new(5)).unwrap();
        let expected = 5 * 2 + 5 + 3 * (25 + 5 + 2 * 4 * 25) + 25 + 5 + 5 + 1;
        assert_eq!(p.num_scalars(), expected);
        assert_eq!(p.tensors().len(), 4 + 3 * 3 + 2);
        assert!(p.matches_config(&config));
        assert!(!p.matches_config(&config.with_modes(5)));
    }
}
