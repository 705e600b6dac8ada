//! abc-parametrizations of the spectral weight tensor and the rescaling rules
//! used to move tuned hyperparameters between mode counts.
//!
//! The spectral weights are `R = a(K) r` with `r ~ N(0, b(K)^2)` entrywise and
//! Adam learning rate `c(K) * master_lr`. The maximal update schedule is
//! `a = 1`, `b = c = Theta(1/sqrt(d log K))`; the constants are pinned by an
//! anchor mode count `K0` at which it coincides with the standard schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{ClipConfig, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParametrizationKind {
    Standard,
    Mup,
}

impl ParametrizationKind {
    pub fn name(self) -> &'static str {
        match self {
            ParametrizationKind::Standard => "standard",
            ParametrizationKind::Mup => "mup",
        }
    }
}

/// Multiplier, init std and learning-rate scale of the spectral weights at one K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abc {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parametrization {
    pub kind: ParametrizationKind,
    /// PDE dimensionality `d`.
    #[serde(default = "one")]
    pub dim: usize,
    /// Anchor `K0`; ignored by the standard schedule.
    #[serde(default = "two")]
    pub anchor_modes: usize,
    /// `b(K0)`.
    pub base_init_std: f64,
    /// `c(K0)`.
    #[serde(default = "unit")]
    pub base_lr_scale: f64,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn unit() -> f64 {
    1.0
}

impl Parametrization {
    pub fn standard(base_init_std: f64) -> Self {
        Self {
            kind: ParametrizationKind::Standard,
            dim: 1,
            anchor_modes: 2,
            base_init_std,
            base_lr_scale: 1.0,
        }
    }

    /// The reference-library default `b = m^-2`.
    pub fn standard_for_width(width: usize) -> Self {
        Self::standard(1.0 / (width * width) as f64)
    }

    pub fn mup(anchor_modes: usize, base_init_std: f64) -> Self {
        Self {
            kind: ParametrizationKind::Mup,
            dim: 1,
            anchor_modes,
            base_init_std,
            base_lr_scale: 1.0,
        }
    }

    /// Same kind and constants, different kind tag. Used to compare the two
    /// schedules on identical anchors.
    pub fn with_kind(mut self, kind: ParametrizationKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("parametrization.dim", "must be >= 1"));
        }
        if !(self.base_init_std > 0.0 && self.base_init_std.is_finite()) {
            return Err(Error::config(
                "parametrization.base_init_std",
                format!("must be positive, got {}", self.base_init_std),
            ));
        }
        if !(self.base_lr_scale > 0.0 && self.base_lr_scale.is_finite()) {
            return Err(Error::config(
                "parametrization.base_lr_scale",
                format!("must be positive, got {}", self.base_lr_scale),
            ));
        }
        if self.kind == ParametrizationKind::Mup && self.anchor_modes < 2 {
            return Err(Error::config(
                "parametrization.anchor_modes",
                "must be >= 2 so that log K0 > 0",
            ));
        }
        Ok(())
    }

    pub fn abc_at(&self, modes: usize) -> Result<Abc> {
        self.validate()?;
        match self.kind {
            ParametrizationKind::Standard => {
                if modes == 0 {
                    return Err(Error::Domain("mode count must be >= 1".into()));
                }
                Ok(Abc {
                    a: 1.0,
                    b: self.base_init_std,
                    c: self.base_lr_scale,
                })
            }
            ParametrizationKind::Mup => {
                if modes < 2 {
                    return Err(Error::Domain(format!(
                        "maximal update schedule needs K >= 2 (log K > 0), got K={modes}"
                    )));
                }
                let d = self.dim as f64;
                let b = self.base_init_std
                    * ((d * (self.anchor_modes as f64).ln()) / (d * (modes as f64).ln())).sqrt();
                let c = self.base_lr_scale * log_ratio(self.anchor_modes, modes).sqrt();
                Ok(Abc { a: 1.0, b, c })
            }
        }
    }
}

/// `log(from) / log(to)`.
fn log_ratio(from: usize, to: usize) -> f64 {
    (from as f64).ln() / (to as f64).ln()
}

/// Mini-batch ordering within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchOrder {
    /// Reshuffle every epoch from the run's shuffle stream.
    #[default]
    Shuffled,
    Sequential,
}

/// Training hyperparameters `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Master learning rate, independent of K.
    pub master_lr: f64,
    /// Absolute learning rate of the spectral weights. `None` means
    /// `c(K) * master_lr` from the parametrization.
    #[serde(default)]
    pub spectral_lr: Option<f64>,
    pub batch_size: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub clip: Option<ClipConfig>,
    pub epochs: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate on the held-out set every this many epochs; 0 = only at the end.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub batch_order: BatchOrder,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl HyperParams {
    pub fn new(master_lr: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            master_lr,
            spectral_lr: None,
            batch_size,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip: None,
            epochs,
            schedule: LrSchedule::default(),
            seed: 0,
            eval_every: 0,
            batch_order: BatchOrder::Shuffled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        positive("train.master_lr", self.master_lr)?;
        if let Some(lr) = self.spectral_lr {
            positive("train.spectral_lr", lr)?;
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        for (field, beta) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {beta}")));
            }
        }
        positive("train.eps", self.eps)?;
        if let Some(clip) = &self.clip {
            positive("train.clip.value", clip.value)?;
        }
        self.schedule.validate()
    }
}

/// Result of moving tuned hyperparameters from the proxy to the target K.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub hyperparams: HyperParams,
    /// Init std of the spectral weights at the target.
    pub init_std: f64,
}

/// Spectral learning rate scales by `sqrt(log K_proxy / log K_target)` and the
/// spectral init variance by `log K_proxy / log K_target`. Everything else in
/// `xi` transfers unchanged. The proxy's spectral learning rate is
/// `xi.spectral_lr`, or `xi.master_lr` when unset.
pub fn rescale_hyperparams(
    xi: &HyperParams,
    init_std: f64,
    k_proxy: usize,
    k_target: usize,
    dim: usize,
) -> Result<Rescaled> {
    if k_proxy < 2 || k_target < 2 {
        return Err(Error::Domain(format!(
            "rescaling needs K >= 2, got proxy {k_proxy} and target {k_target}"
        )));
    }
    if dim == 0 {
        return Err(Error::Domain("dimensionality must be >= 1".into()));
    }
    let d = dim as f64;
    let variance_ratio = (d * (k_proxy as f64).ln()) / (d * (k_target as f64).ln());
    let mut hyperparams = xi.clone();
    let proxy_lr = xi.spectral_lr.unwrap_or(xi.master_lr);
    hyperparams.spectral_lr = Some(proxy_lr * variance_ratio.sqrt());
    Ok(Rescaled {
        hyperparams,
        init_std: init_std * variance_ratio.sqrt(),
    })
}
