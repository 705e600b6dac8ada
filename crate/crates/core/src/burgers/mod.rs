//! Viscous Burgers data: random initial conditions, a pseudo-spectral solver
//! on the periodic unit interval, and dataset assembly.

mod io;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Grid1D, RealFft, SeededRng};
use crate::tensor::Tensor3;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};

/// Spectral density `sigma^2 (4 pi^2 k^2 + tau^2)^(-alpha)` of the initial
/// condition field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfConfig {
    pub tau: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl GrfConfig {
    /// Amplitude chosen so the pointwise standard deviation is 1.
    pub fn unit_variance(tau: f64, alpha: f64) -> Self {
        let shape = Self {
            tau,
            alpha,
            sigma: 1.0,
        };
        // two-sided sum over k != 0; the tail beyond 10^5 is far below f64 resolution for alpha >= 1
        let total: f64 = (1..100_000).map(|k| 2.0 * shape.density(k as f64)).sum();
        Self {
            sigma: 1.0 / total.sqrt(),
            ..shape
        }
    }

    pub fn density(&self, k: f64) -> f64 {
        self.sigma * self.sigma * (4.0 * PI * PI * k * k + self.tau * self.tau).powf(-self.alpha)
    }

    /// Pointwise variance of fields sampled on an `n`-point grid.
    pub fn pointwise_variance(&self, n: usize) -> f64 {
        (1..n / 2).map(|k| 2.0 * self.density(k as f64)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("grf.tau", "must be positive"));
        }
        if !(self.alpha > 0.5 && self.alpha.is_finite()) {
            return Err(Error::config("grf.alpha", "must exceed 1/2"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("grf.sigma", "must be non-negative"));
        }
        Ok(())
    }
}

impl Default for GrfConfig {
    fn default() -> Self {
        Self::unit_variance(5.0, 2.0)
    }
}

/// Zero-mean periodic Gaussian field on `grid`. Modes `1 <= k < n/2` are
/// drawn independently; the mean and Nyquist bins are zero.
pub fn sample_grf(grf: &GrfConfig, grid: &Grid1D, rng: &mut SeededRng) -> Vec<f64> {
    let n = grid.n();
    let len = grid.domain_length();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
    for (k, bin) in spectrum.iter_mut().enumerate().take(n / 2).skip(1) {
        // density is per unit wavenumber on the unit interval
        let amp = n as f64 * grf.density(k as f64 / len).sqrt() / 2f64.sqrt();
        let re = rng.normal();
        let im = rng.normal();
        *bin = Complex64::new(amp * re, amp * im);
    }
    let fft = crate::numerics::fft_plan(n).expect("grid sizes are valid FFT lengths");
    fft.inverse(&spectrum)
}

/// Integrating-factor RK4 for `u_t + (u^2/2)_x = nu u_xx` on `[0, 1)`.
///
/// The nonlinear term is evaluated in physical space with 2/3-rule
/// dealiasing; diffusion is integrated exactly per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BurgersSolver {
    pub nu: f64,
    pub t_final: f64,
    pub steps: usize,
    /// When false only the diffusion term is integrated.
    pub nonlinear: bool,
}

/// Largest `dt * max|u| * k` the advection step accepts.
const ADVECTIVE_LIMIT: f64 = 2.8;
const CHECKPOINTS: usize = 10;

impl BurgersSolver {
    pub fn new(nu: f64, t_final: f64, steps: usize) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::config("nu", format!("must be positive, got {nu}")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::config("t_final", format!("must be positive, got {t_final}")));
        }
        if steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        Ok(Self {
            nu,
            t_final,
            steps,
            nonlinear: true,
        })
    }

    pub fn diffusion_only(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    fn check_step(&self, u0: &[f64]) -> Result<()> {
        if !self.nonlinear {
            return Ok(());
        }
        let n = u0.len();
        let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // wavenumbers beyond ~u/nu are damped by diffusion before advection matters
        let k_active = (2.0 * PI * (n / 3) as f64).min(2.0 * umax / self.nu);
        let dt = self.t_final / self.steps as f64;
        let courant = dt * umax * k_active;
        if courant > ADVECTIVE_LIMIT {
            return Err(Error::config(
                "steps",
                format!(
                    "{} steps give dt*max|u|*k = {courant:.3} above {ADVECTIVE_LIMIT}",
                    self.steps
                ),
            ));
        }
        Ok(())
    }

    pub fn solve(&self, u0: &[f64]) -> Result<Vec<f64>> {
        let n = u0.len();
        let fft = crate::numerics::fft_plan(n)?;
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged {
                sample: None,
                reason: "non-finite initial condition".into(),
            });
        }
        self.check_step(u0)?;
        let dt = self.t_final / self.steps as f64;
        let half = n / 2 + 1;
        let cutoff = n / 3;
        let wavenumber: Vec<f64> = (0..half).map(|k| 2.0 * PI * k as f64).collect();
        let e_half: Vec<f64> = wavenumber
            .iter()
            .map(|kk| (-self.nu * kk * kk * dt / 2.0).exp())
            .collect();
        let e_full: Vec<f64> = e_half.iter().map(|e| e * e).collect();

        let mut scratch = Scratch::new(n);
        let mut u = fft.forward(u0);
        let zero = Complex64::new(0.0, 0.0);
        let (mut k1, mut k2, mut k3, mut k4) =
            (vec![zero; half], vec![zero; half], vec![zero; half], vec![zero; half]);
        let mut stage = vec![zero; half];

        let every = (self.steps / CHECKPOINTS).max(1);
        let mut last_norm = spectral_norm(&u);
        for step in 1..=self.steps {
            if self.nonlinear {
                let h = Complex64::new(dt / 2.0, 0.0);
                nonlinear(&u, &fft, cutoff, &wavenumber, &mut scratch, &mut k1);
                for k in 0..half {
                    stage[k] = (u[k] + h * k1[k]) * e_half[k];
                }
                nonlinear(&stage, &fft, cutoff, &wavenumber, &mut scratch, &mut k2);
                for k in 0..half {
                    stage[k] = u[k] * e_half[k] + h * k2[k];
                }
                nonlinear(&stage, &fft, cutoff, &wavenumber, &mut scratch, &mut k3);
                for k in 0..half {
                    stage[k] = u[k] * e_full[k] + k3[k] * (dt * e_half[k]);
                }
                nonlinear(&stage, &fft, cutoff, &wavenumber, &mut scratch, &mut k4);
                for k in 0..half {
                    let incr = k1[k] * e_full[k] + (k2[k] + k3[k]) * (2.0 * e_half[k]) + k4[k];
                    u[k] = u[k] * e_full[k] + incr * (dt / 6.0);
                }
            } else {
                for k in 0..half {
                    u[k] *= e_full[k];
                }
            }
            if step % every == 0 || step == self.steps {
                let norm = spectral_norm(&u);
                if !norm.is_finite() {
                    return Err(Error::SolverDiverged {
                        sample: None,
                        reason: format!("non-finite state at step {step}"),
                    });
                }
                if norm > 10.0 * last_norm && norm > 1e-300 {
                    return Err(Error::SolverDiverged {
                        sample: None,
                        reason: format!("norm grew from {last_norm:e} to {norm:e} by step {step}"),
                    });
                }
                last_norm = norm;
            }
        }
        Ok(fft.inverse(&u))
    }
}

struct Scratch {
    masked: Vec<Complex64>,
    field: Vec<f64>,
    product: Vec<Complex64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            masked: vec![Complex64::new(0.0, 0.0); n / 2 + 1],
            field: vec![0.0; n],
            product: vec![Complex64::new(0.0, 0.0); n / 2 + 1],
        }
    }
}

/// `-(i k / 2) F[(F^{-1} u)^2]` with modes above `cutoff` removed on both sides.
fn nonlinear(
    u: &[Complex64],
    fft: &RealFft,
    cutoff: usize,
    wavenumber: &[f64],
    s: &mut Scratch,
    out: &mut [Complex64],
) {
    for (k, (m, v)) in s.masked.iter_mut().zip(u).enumerate() {
        *m = if k <= cutoff { *v } else { Complex64::new(0.0, 0.0) };
    }
    fft.inverse_into(&s.masked, &mut s.field);
    s.field.iter_mut().for_each(|v| *v *= *v);
    fft.forward_into(&s.field, &mut s.product);
    for (k, o) in out.iter_mut().enumerate() {
        *o = if k <= cutoff {
            s.product[k] * Complex64::new(0.0, -wavenumber[k] / 2.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
}

fn spectral_norm(u: &[Complex64]) -> f64 {
    u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `u(., t_final)` from `u0` on the periodic unit interval.
pub fn solve_burgers(u0: &[f64], nu: f64, t_final: f64, steps: usize) -> Result<Vec<f64>> {
    BurgersSolver::new(nu, t_final, steps)?.solve(u0)
}

/// Data generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurgersConfig {
    pub nu: f64,
    pub grid_n_solver: usize,
    pub grid_n_train: usize,
    pub t_final: f64,
    pub steps: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub grf: GrfConfig,
    pub seed: u64,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            grid_n_solver: 8192,
            grid_n_train: 1024,
            t_final: 1.0,
            steps: 2000,
            n_train: 800,
            n_eval: 200,
            grf: GrfConfig::default(),
            seed: 0,
        }
    }
}

impl BurgersConfig {
    /// Small setting for quick experiments: solve at 1024, train at 256,
    /// 200 training and 50 evaluation samples.
    pub fn desk() -> Self {
        Self {
            grid_n_solver: 1024,
            grid_n_train: 256,
            steps: 500,
            n_train: 200,
            n_eval: 50,
            ..Self::default()
        }
    }

    /// Field paths in errors are prefixed with `data.generate.`.
    pub fn validate(&self) -> Result<()> {
        self.validate_fields().map_err(|e| match e {
            Error::Config { field, reason } => Error::config(format!("data.generate.{field}"), reason),
            other => other,
        })
    }

    fn validate_fields(&self) -> Result<()> {
        for (field, n) in [("grid_n_solver", self.grid_n_solver), ("grid_n_train", self.grid_n_train)] {
            if Grid1D::unit(n).is_err() {
                return Err(Error::config(field, format!("{n} is not a power of two >= 4")));
            }
        }
        if self.grid_n_train > self.grid_n_solver || self.grid_n_solver % self.grid_n_train != 0 {
            return Err(Error::config(
                "grid_n_train",
                format!(
                    "{} must divide the solver grid {}",
                    self.grid_n_train, self.grid_n_solver
                ),
            ));
        }
        if self.n_train == 0 {
            return Err(Error::config("n_train", "must be at least 1"));
        }
        self.grf.validate()?;
        BurgersSolver::new(self.nu, self.t_final, self.steps)?;
        Ok(())
    }

    pub fn solver(&self) -> Result<BurgersSolver> {
        BurgersSolver::new(self.nu, self.t_final, self.steps)
    }
}

/// Input/target pairs on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor3,
    pub targets: Tensor3,
    pub grid: Grid1D,
    /// Generation settings, when known.
    pub meta: Option<BurgersConfig>,
}

impl Dataset {
    pub fn new(inputs: Tensor3, targets: Tensor3, grid: Grid1D) -> Result<Self> {
        if inputs.batch() != targets.batch() || inputs.n() != targets.n() || inputs.n() != grid.n() {
            return Err(Error::Size(format!(
                "inputs {:?} and targets {:?} disagree on the grid of {} points",
                inputs.shape(),
                targets.shape(),
                grid.n()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            grid,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Strided subsample of both fields.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let inputs = self.inputs.subsample(stride)?;
        let grid = Grid1D::new(inputs.n(), self.grid.domain_length())?;
        Ok(Self {
            targets: self.targets.subsample(stride)?,
            inputs,
            grid,
            meta: self.meta.clone(),
        })
    }

    /// Subset of the samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.gather(indices),
            targets: self.targets.gather(indices),
            grid: self.grid,
            meta: self.meta.clone(),
        }
    }
}

/// Train and evaluation splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub eval: Dataset,
}

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

fn generate(config: &BurgersConfig, stream: u64, count: usize) -> Result<Dataset> {
    let solver = config.solver()?;
    let fine = Grid1D::unit(config.grid_n_solver)?;
    let coarse = Grid1D::unit(config.grid_n_train)?;
    let stride = config.grid_n_solver / config.grid_n_train;
    let base = SeededRng::new(config.seed).derive(stream);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.derive(i as u64);
            let u0 = sample_grf(&config.grf, &fine, &mut rng);
            let u1 = solver.solve(&u0).map_err(|e| match e {
                Error::SolverDiverged { reason, .. } => Error::SolverDiverged {
                    sample: Some(i),
                    reason,
                },
                Error::Config { field, reason } => Error::SolverDiverged {
                    sample: Some(i),
                    reason: format!("{field}: {reason}"),
                },
                other => other,
            })?;
            let down = |v: Vec<f64>| v.into_iter().step_by(stride).collect::<Vec<_>>();
            Ok((down(u0), down(u1)))
        })
        .collect::<Result<_>>()?;
    let n = coarse.n();
    let mut inputs = Vec::with_capacity(count * n);
    let mut targets = Vec::with_capacity(count * n);
    for (a, b) in pairs {
        inputs.extend(a);
        targets.extend(b);
    }
    let mut ds = Dataset::new(
        Tensor3::from_vec(count, n, 1, inputs)?,
        Tensor3::from_vec(count, n, 1, targets)?,
        coarse,
    )?;
    ds.meta = Some(config.clone());
    Ok(ds)
}

/// Solve every sample on the fine grid and subsample to the training grid.
/// Train and evaluation samples come from disjoint random substreams, and
/// each sample's stream depends only on its index.
pub fn build_dataset(config: &BurgersConfig) -> Result<Splits> {
    config.validate()?;
    Ok(Splits {
        train: generate(config, TRAIN_STREAM, config.n_train)?,
        eval: generate(config, EVAL_STREAM, config.n_eval)?,
    })
}
