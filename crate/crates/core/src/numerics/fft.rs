//! Radix-2 real FFT.
//!
//! The forward transform is unnormalized, `X_k = sum_j x_j exp(-2 pi i jk/n)`,
//! and returns the `n/2 + 1` non-negative frequency bins. The inverse applies
//! the `1/n` factor and assumes Hermitian symmetry for the missing bins.
//!
//! A length-`n` real transform is computed as a length-`n/2` complex
//! transform on the even/odd interleaving followed by a split step.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Iterative in-place complex FFT of a fixed power-of-two length.
#[derive(Debug, Clone)]
struct ComplexFft {
    n: usize,
    bitrev: Vec<usize>,
    // exp(-2 pi i k / n) for k < n/2
    twiddles: Vec<Complex64>,
}

impl ComplexFft {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self { n, bitrev, twiddles }
    }

    /// Forward transform when `inverse` is false; the unnormalized conjugate
    /// transform otherwise.
    fn process(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

/// Precomputed plan for the real FFT pair of one length.
#[derive(Debug, Clone)]
pub struct RealFft {
    n: usize,
    inner: ComplexFft,
    // exp(-2 pi i k / n) for k <= n/2
    split: Vec<Complex64>,
}

impl RealFft {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Size(format!(
                "FFT length {n} is not a power of two (>= 2)"
            )));
        }
        let split = (0..=n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            inner: ComplexFft::new(n / 2),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spectrum_len(&self) -> usize {
        self.n / 2 + 1
    }

    /// Forward transform into `out` (length `n/2 + 1`).
    pub fn forward_into(&self, signal: &[f64], out: &mut [Complex64]) {
        let h = self.n / 2;
        assert_eq!(signal.len(), self.n);
        assert_eq!(out.len(), h + 1);
        let mut z: Vec<Complex64> = (0..h)
            .map(|j| Complex64::new(signal[2 * j], signal[2 * j + 1]))
            .collect();
        self.inner.process(&mut z, false);
        for k in 0..=h {
            let zk = z[k % h];
            let zc = z[(h - k) % h].conj();
            let even = (zk + zc) * 0.5;
            let odd = (zk - zc) * Complex64::new(0.0, -0.5);
            out[k] = even + self.split[k] * odd;
        }
    }

    pub fn forward(&self, signal: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.spectrum_len()];
        self.forward_into(signal, &mut out);
        out
    }

    /// Inverse transform (with `1/n`) into `out` (length `n`). The imaginary
    /// parts of the DC and Nyquist bins are ignored.
    pub fn inverse_into(&self, spectrum: &[Complex64], out: &mut [f64]) {
        let h = self.n / 2;
        assert_eq!(spectrum.len(), h + 1);
        assert_eq!(out.len(), self.n);
        let bin = |k: usize| {
            let c = spectrum[k];
            if k == 0 || k == h {
                Complex64::new(c.re, 0.0)
            } else {
                c
            }
        };
        let mut z: Vec<Complex64> = (0..h)
            .map(|k| {
                let xk = bin(k);
                let xc = bin(h - k).conj();
                let even = (xk + xc) * 0.5;
                let odd = (xk - xc) * 0.5 * self.split[k].conj();
                even + Complex64::new(0.0, 1.0) * odd
            })
            .collect();
        self.inner.process(&mut z, true);
        let scale = 1.0 / h as f64;
        for j in 0..h {
            out[2 * j] = z[j].re * scale;
            out[2 * j + 1] = z[j].im * scale;
        }
    }

    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.inverse_into(spectrum, &mut out);
        out
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<RealFft>>> = RefCell::new(HashMap::new());
}

/// Cached per-thread plan for length `n`.
pub(crate) fn plan(n: usize) -> Result<Rc<RealFft>> {
    PLANS.with(|plans| {
        if let Some(p) = plans.borrow().get(&n) {
            return Ok(Rc::clone(p));
        }
        let p = Rc::new(RealFft::new(n)?);
        plans.borrow_mut().insert(n, Rc::clone(&p));
        Ok(p)
    })
}

/// Forward real FFT: `n/2 + 1` unnormalized bins.
pub fn rfft(signal: &[f64]) -> Result<Vec<Complex64>> {
    Ok(plan(signal.len())?.forward(signal))
}

/// Inverse of [`rfft`] for a length-`n` signal.
pub fn irfft(spectrum: &[Complex64], n: usize) -> Result<Vec<f64>> {
    if spectrum.len() != n / 2 + 1 {
        return Err(Error::Size(format!(
            "spectrum has {} bins, expected {} for n={n}",
            spectrum.len(),
            n / 2 + 1
        )));
    }
    Ok(plan(n)?.inverse(spectrum))
}
