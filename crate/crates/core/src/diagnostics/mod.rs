//! Empirical checks of the scaling arguments: operator norms of spectral
//! convolutions, the growth of Gaussian maxima, and per-layer coordinate sizes.

mod coord;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SpectralWeights;
use crate::numerics::SeededRng;

pub use coord::{coord_check, write_coordcheck_csv, CoordCheckSpec, FeatureTrace};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
/// Squarings of the Gram matrix before power iteration, when it is small
/// enough to square cheaply. Each squaring doubles the spectral gap exponent.
const SQUARINGS: usize = 10;
const SQUARE_LIMIT: usize = 512;

/// Dense `n*m x n*m` matrix of the spectral convolution, column `j` being
/// the response to the `j`-th unit field (channel-major).
pub fn assemble_operator(weights: &SpectralWeights, n: usize) -> Result<Vec<Vec<f64>>> {
    let dim = n * weights.channels();
    let mut columns = Vec::with_capacity(dim);
    let mut unit = vec![0.0; dim];
    for j in 0..dim {
        unit[j] = 1.0;
        columns.push(weights.apply(&unit, n)?);
        unit[j] = 0.0;
    }
    Ok(columns)
}

fn matmul(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

fn matvec(a: &[f64], v: &[f64], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| a[i * dim..(i + 1) * dim].iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

/// Largest singular value of the assembled operator, by power iteration on
/// its Gram matrix.
pub fn spectral_norm_exact(weights: &SpectralWeights, n: usize) -> Result<f64> {
    let columns = assemble_operator(weights, n)?;
    let dim = columns.len();
    // gram[i][j] = <col_i, col_j>
    let mut gram = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let g: f64 = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
            gram[i * dim + j] = g;
            gram[j * dim + i] = g;
        }
    }
    let frob = gram.iter().map(|g| g * g).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok(0.0);
    }

    let mut driver = gram.iter().map(|g| g / frob).collect::<Vec<_>>();
    if dim <= SQUARE_LIMIT {
        for _ in 0..SQUARINGS {
            driver = matmul(&driver, &driver, dim);
            let f = driver.iter().map(|g| g * g).sum::<f64>().sqrt();
            if f == 0.0 || !f.is_finite() {
                break;
            }
            driver.iter_mut().for_each(|g| *g /= f);
        }
    }

    let mut rng = SeededRng::new(0x5eed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let mut lambda = 0.0;
    let mut change = f64::INFINITY;
    for it in 0..POWER_MAX_ITERS {
        let mut w = matvec(&driver, &v, dim);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // start vector orthogonal to the dominant space; restart
            w = (0..dim).map(|_| rng.normal()).collect();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
        let gv = matvec(&gram, &v, dim);
        let next: f64 = gv.iter().zip(&v).map(|(a, b)| a * b).sum();
        change = (next - lambda).abs() / next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if it > 0 && change <= POWER_TOL {
            return Ok(lambda.max(0.0).sqrt());
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITERS,
        residual: change,
    })
}

/// One cell of the Gaussian-maximum experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormScalingRow {
    #[serde(rename = "K")]
    pub modes: usize,
    pub d: usize,
    pub b: f64,
    pub trials: usize,
    pub mean_max_abs: f64,
    /// `b * sqrt(2 d ln K)`.
    pub predicted: f64,
}

/// Largest `K^d` accepted by [`max_gaussian_mc`].
pub const MAX_VARIABLES: u64 = 1 << 24;

/// Mean over `trials` of `max |z_i|` for `K^d` i.i.d. `N(0, b^2)` draws.
/// Trial `t` uses substream `rng.derive(t)`.
pub fn max_gaussian_mc(modes: usize, d: usize, b: f64, trials: usize, rng: &SeededRng) -> Result<NormScalingRow> {
    if modes < 2 {
        return Err(Error::Domain(format!("need K >= 2, got {modes}")));
    }
    if trials == 0 || d == 0 {
        return Err(Error::Domain("trials and d must be positive".into()));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("scale b must be non-negative, got {b}")));
    }
    let count = (modes as u64)
        .checked_pow(d as u32)
        .filter(|&c| c <= MAX_VARIABLES)
        .ok_or_else(|| Error::Domain(format!("K^d = {modes}^{d} exceeds {MAX_VARIABLES} variables")))?;
    let maxima: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.derive(t as u64);
            (0..count).map(|_| (b * r.normal()).abs()).fold(0.0, f64::max)
        })
        .collect();
    Ok(NormScalingRow {
        modes,
        d,
        b,
        trials,
        mean_max_abs: maxima.iter().sum::<f64>() / trials as f64,
        predicted: b * (2.0 * d as f64 * (modes as f64).ln()).sqrt(),
    })
}

/// Least-squares line `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Size("linear fit needs two or more paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Grid of Gaussian-maximum cells and the fit of their means against
/// `b * sqrt(d ln K)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormScalingReport {
    pub rows: Vec<NormScalingRow>,
    pub fit: LinearFit,
}

/// Every `(K, d, b)` combination; cell `i` (in `K`, `d`, `b` nesting order)
/// draws from `SeededRng::new(seed).derive(i)`.
pub fn norm_scaling(
    modes: &[usize],
    dims: &[usize],
    scales: &[f64],
    trials: usize,
    seed: u64,
) -> Result<NormScalingReport> {
    let root = SeededRng::new(seed);
    let mut rows = Vec::new();
    for &k in modes {
        for &d in dims {
            for &b in scales {
                let i = rows.len() as u64;
                rows.push(max_gaussian_mc(k, d, b, trials, &root.derive(i))?);
            }
        }
    }
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| r.b * (r.d as f64 * (r.modes as f64).ln()).sqrt())
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_max_abs).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(NormScalingReport { rows, fit })
}

pub fn write_normscaling_csv<W: Write>(rows: &[NormScalingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::io("<csv>", e.into()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
