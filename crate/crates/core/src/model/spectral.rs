//! Kernel integral operator: FFT, keep the lowest `K` bins, multiply every
//! retained bin by an `m x m` complex matrix, inverse FFT.
//!
//! Fields are channel-major: channel `c` occupies `field[c*n .. (c+1)*n]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RealFft;

/// Trainable spectral weights `r` with effective value `R = scale * r`.
///
/// Stored interleaved (`re, im`) with layout `[mode][out][in]`. The DC mode is
/// always real; with `real_only` every entry is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralWeights {
    pub(crate) modes: usize,
    pub(crate) channels: usize,
    pub(crate) scale: f64,
    pub(crate) real_only: bool,
    pub(crate) data: Vec<f64>,
}

impl SpectralWeights {
    pub fn zeros(modes: usize, channels: usize, scale: f64, real_only: bool) -> Self {
        Self {
            modes,
            channels,
            scale,
            real_only,
            data: vec![0.0; 2 * modes * channels * channels],
        }
    }

    /// Build from complex entries in `[mode][out][in]` order; constraints are
    /// applied (forced-real entries lose their imaginary part).
    pub fn from_complex(
        modes: usize,
        channels: usize,
        scale: f64,
        real_only: bool,
        values: &[Complex64],
    ) -> Result<Self> {
        if values.len() != modes * channels * channels {
            return Err(Error::Size(format!(
                "expected {} spectral entries, got {}",
                modes * channels * channels,
                values.len()
            )));
        }
        let mut w = Self::zeros(modes, channels, scale, real_only);
        for (i, v) in values.iter().enumerate() {
            w.data[2 * i] = v.re;
            w.data[2 * i + 1] = v.im;
        }
        w.enforce_constraints();
        Ok(w)
    }

    /// Single-channel weights from per-mode values.
    pub fn single_channel(values: &[Complex64], real_only: bool) -> Self {
        Self::from_complex(values.len(), 1, 1.0, real_only, values)
            .expect("length matches by construction")
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// The multiplier `a(K)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn real_only(&self) -> bool {
        self.real_only
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn index(&self, mode: usize, out: usize, inp: usize) -> usize {
        (mode * self.channels + out) * self.channels + inp
    }

    /// Trainable entry `r[mode][out][in]`.
    pub fn get(&self, mode: usize, out: usize, inp: usize) -> Complex64 {
        let i = self.index(mode, out, inp);
        Complex64::new(self.data[2 * i], self.data[2 * i + 1])
    }

    pub fn set(&mut self, mode: usize, out: usize, inp: usize, value: Complex64) {
        let i = self.index(mode, out, inp);
        self.data[2 * i] = value.re;
        self.data[2 * i + 1] = if self.is_forced_real(mode) { 0.0 } else { value.im };
    }

    pub fn is_forced_real(&self, mode: usize) -> bool {
        self.real_only || mode == 0
    }

    /// Zero imaginary parts that must stay real.
    pub fn enforce_constraints(&mut self) {
        let per_mode = self.channels * self.channels;
        for mode in 0..self.modes {
            if self.is_forced_real(mode) {
                for i in mode * per_mode..(mode + 1) * per_mode {
                    self.data[2 * i + 1] = 0.0;
                }
            }
        }
    }

    /// Same shape, weights replaced by `self - other`; used for update operators.
    pub fn difference(&self, other: &SpectralWeights) -> Result<SpectralWeights> {
        if self.data.len() != other.data.len() {
            return Err(Error::Size("spectral weight shapes differ".into()));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o -= v;
        }
        Ok(out)
    }

    /// Largest singular value of the effective per-mode matrix `scale * r_k`,
    /// maximized over modes.
    pub fn max_mode_norm(&self) -> f64 {
        let m = self.channels;
        (0..self.modes)
            .map(|k| {
                if m == 1 {
                    return (self.get(k, 0, 0) * self.scale).norm();
                }
                // power iteration on R^H R for the m x m block
                let mut v = vec![Complex64::new(1.0, 0.0); m];
                let mut sigma = 0.0;
                for _ in 0..500 {
                    let rv: Vec<Complex64> = (0..m)
                        .map(|o| (0..m).map(|i| self.get(k, o, i) * v[i]).sum())
                        .collect();
                    let w: Vec<Complex64> = (0..m)
                        .map(|i| (0..m).map(|o| self.get(k, o, i).conj() * rv[o]).sum())
                        .collect();
                    let norm = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return 0.0;
                    }
                    let next = norm.sqrt();
                    v = w.into_iter().map(|c| c / norm).collect();
                    if (next - sigma).abs() <= 1e-14 * next {
                        sigma = next;
                        break;
                    }
                    sigma = next;
                }
                sigma * self.scale.abs()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_grid(&self, n: usize) -> Result<()> {
        if self.modes > n / 2 {
            return Err(Error::Truncation {
                modes: self.modes,
                n,
                half: n / 2,
            });
        }
        Ok(())
    }

    /// Retained bins of every channel, `[channel][mode]`.
    pub(crate) fn truncated_spectra(&self, field: &[f64], fft: &RealFft) -> Vec<Complex64> {
        let n = fft.len();
        let mut full = vec![Complex64::default(); n / 2 + 1];
        let mut out = Vec::with_capacity(self.channels * self.modes);
        for c in 0..self.channels {
            fft.forward_into(&field[c * n..(c + 1) * n], &mut full);
            out.extend_from_slice(&full[..self.modes]);
        }
        out
    }

    /// Per-mode matrix multiply: `Y[o][k] = scale * sum_i r[k][o][i] X[i][k]`.
    pub(crate) fn mix(&self, spectra: &[Complex64]) -> Vec<Complex64> {
        let (m, kk) = (self.channels, self.modes);
        let mut out = vec![Complex64::default(); m * kk];
        for k in 0..kk {
            for o in 0..m {
                let mut acc = Complex64::default();
                for i in 0..m {
                    acc += self.get(k, o, i) * spectra[i * kk + k];
                }
                out[o * kk + k] = acc * self.scale;
            }
        }
        out
    }

    /// Zero-pad retained bins and inverse-transform each channel.
    pub(crate) fn synthesize(&self, mixed: &[Complex64], fft: &RealFft, out: &mut [f64]) {
        let n = fft.len();
        let kk = self.modes;
        let mut full = vec![Complex64::default(); n / 2 + 1];
        for c in 0..self.channels {
            full[..kk].copy_from_slice(&mixed[c * kk..(c + 1) * kk]);
            fft.inverse_into(&full, &mut out[c * n..(c + 1) * n]);
        }
    }

    /// Apply the operator to a channel-major field of `channels * n` values.
    pub fn apply(&self, field: &[f64], n: usize) -> Result<Vec<f64>> {
        if field.len() != self.channels * n {
            return Err(Error::Size(format!(
                "field has {} values, expected {} channels x {n}",
                field.len(),
                self.channels
            )));
        }
        self.check_grid(n)?;
        let fft = crate::numerics::fft_plan(n)?;
        let mut out = vec![0.0; field.len()];
        self.apply_with(field, &fft, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_with(&self, field: &[f64], fft: &RealFft, out: &mut [f64]) {
        let spectra = self.truncated_spectra(field, fft);
        let mixed = self.mix(&spectra);
        self.synthesize(&mixed, fft, out);
    }

    /// Reverse pass. `grad_out` is dL/d(output field); `spectra_in` are the
    /// cached retained bins of the input. Accumulates dL/dr (interleaved
    /// `d/d re + i d/d im`) into `grad_r` and dL/d(input field) into `grad_in`.
    pub(crate) fn backward(
        &self,
        grad_out: &[f64],
        spectra_in: &[Complex64],
        fft: &RealFft,
        grad_r: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let n = fft.len();
        let (m, kk) = (self.channels, self.modes);
        let mut full = vec![Complex64::default(); n / 2 + 1];

        // Adjoint of the inverse transform on the retained bins: the DC bin
        // contributes with weight 1/n, the others (paired with their
        // conjugates) with 2/n.
        let mut grad_mixed = vec![Complex64::default(); m * kk];
        for o in 0..m {
            fft.forward_into(&grad_out[o * n..(o + 1) * n], &mut full);
            for k in 0..kk {
                let w = if k == 0 { 1.0 } else { 2.0 } / n as f64;
                grad_mixed[o * kk + k] = full[k] * w;
            }
        }

        let mut grad_spec = vec![Complex64::default(); m * kk];
        for k in 0..kk {
            let forced_real = self.is_forced_real(k);
            for o in 0..m {
                let g = grad_mixed[o * kk + k];
                for i in 0..m {
                    let idx = self.index(k, o, i);
                    let gr = g * spectra_in[i * kk + k].conj() * self.scale;
                    grad_r[2 * idx] += gr.re;
                    if !forced_real {
                        grad_r[2 * idx + 1] += gr.im;
                    }
                    grad_spec[i * kk + k] += self.get(k, o, i).conj() * g * self.scale;
                }
            }
        }

        // Adjoint of the truncated forward transform of a real signal.
        let mut back = vec![0.0; n];
        for i in 0..m {
            full.iter_mut().for_each(|c| *c = Complex64::default());
            for k in 0..kk {
                let g = grad_spec[i * kk + k];
                full[k] = if k == 0 {
                    Complex64::new(g.re * n as f64, 0.0)
                } else {
                    g * (n as f64 / 2.0)
                };
            }
            fft.inverse_into(&full, &mut back);
            for (dst, v) in grad_in[i * n..(i + 1) * n].iter_mut().zip(&back) {
                *dst += v;
            }
        }
    }
}
