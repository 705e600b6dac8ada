use crate::error::{Error, Result};

/// Dense `[batch, n, channels]` array, row-major (channel index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    n: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, n: usize, channels: usize) -> Self {
        Self {
            batch,
            n,
            channels,
            data: vec![0.0; batch * n * channels],
        }
    }

    pub fn from_vec(batch: usize, n: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * n * channels {
            return Err(Error::Size(format!(
                "buffer of {} values does not match shape [{batch}, {n}, {channels}]",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            n,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.batch, self.n, self.channels]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `[n, channels]` slab of one batch item.
    pub fn sample(&self, index: usize) -> &[f64] {
        let len = self.n * self.channels;
        &self.data[index * len..(index + 1) * len]
    }

    pub fn sample_mut(&mut self, index: usize) -> &mut [f64] {
        let len = self.n * self.channels;
        &mut self.data[index * len..(index + 1) * len]
    }

    /// New tensor holding the listed batch items, in order.
    pub fn gather(&self, indices: &[usize]) -> Tensor3 {
        let mut data = Vec::with_capacity(indices.len() * self.n * self.channels);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor3 {
            batch: indices.len(),
            n: self.n,
            channels: self.channels,
            data,
        }
    }

    /// Keep every `stride`-th grid point.
    pub fn subsample(&self, stride: usize) -> Result<Tensor3> {
        if stride == 0 || self.n % stride != 0 {
            return Err(Error::Size(format!(
                "stride {stride} does not divide grid size {}",
                self.n
            )));
        }
        let n = self.n / stride;
        let mut out = Tensor3::zeros(self.batch, n, self.channels);
        for b in 0..self.batch {
            let src = self.sample(b);
            let dst = out.sample_mut(b);
            for j in 0..n {
                let (s, d) = (j * stride * self.channels, j * self.channels);
                dst[d..d + self.channels].copy_from_slice(&src[s..s + self.channels]);
            }
        }
        Ok(out)
    }
}
