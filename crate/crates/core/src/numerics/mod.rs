//! Deterministic numerical primitives shared by the model, the solver and
//! the diagnostics: real FFT pair, activations, seeded random streams and
//! the uniform periodic grid.

mod activation;
mod fft;
mod grid;
mod rng;

pub use activation::{gelu, gelu_prime, Activation};
pub use fft::{irfft, rfft, RealFft};
pub(crate) use fft::plan as fft_plan;
pub use grid::Grid1D;
pub use rng::SeededRng;

pub use num_complex::Complex64;

/// Root-mean-square of a slice; zero for an empty slice.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Euclidean norm.
pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}
