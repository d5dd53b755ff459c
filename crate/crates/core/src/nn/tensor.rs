use crate::error::{Error, Result};
use crate::nn::Scalar;

/// A single `height × width × channels` block stored row-major as
/// `[row][col][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T = f32> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!("tensor data length {} != {height}x{width}x{channels}", data.len())));
        }
        Ok(Tensor3 { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor3 { height, width, channels, data: vec![T::zero(); height * width * channels] }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A batch of equally shaped [`Tensor3`] blocks, `[n][row][col][channel]`.
///
/// A dense activation vector batch is a batch with `height = width = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T = f32> {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(n: usize, height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * height * width * channels {
            return Err(Error::shape(format!("batch data length {} != {n}x{height}x{width}x{channels}", data.len())));
        }
        Ok(Batch { n, height, width, channels, data })
    }

    pub fn zeros(n: usize, height: usize, width: usize, channels: usize) -> Self {
        Batch { n, height, width, channels, data: vec![T::zero(); n * height * width * channels] }
    }

    /// Batch of flat vectors, each of length `len`.
    pub fn vectors(n: usize, len: usize, data: Vec<T>) -> Result<Self> {
        Self::new(n, 1, 1, len, data)
    }

    pub fn from_tensors(items: &[Tensor3<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("empty batch"))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = Vec::with_capacity(items.len() * h * w * c);
        for t in items {
            if (t.height, t.width, t.channels) != (h, w, c) {
                return Err(Error::shape(format!(
                    "mixed shapes in batch: {h}x{w}x{c} vs {}x{}x{}",
                    t.height, t.width, t.channels
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Batch { n: items.len(), height: h, width: w, channels: c, data })
    }

    pub fn item(&self, i: usize) -> Tensor3<T> {
        let len = self.item_len();
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    #[inline]
    pub fn item_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Number of `channels`-wide rows (`n·height·width`).
    #[inline]
    pub fn rows(&self) -> usize {
        self.n * self.height * self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.height, self.width, self.channels]
    }

    /// Reinterpret as a batch of flat vectors without copying.
    pub fn flatten(self) -> Batch<T> {
        let len = self.item_len();
        Batch { n: self.n, height: 1, width: 1, channels: len, data: self.data }
    }

    pub fn reshape(self, height: usize, width: usize, channels: usize) -> Result<Batch<T>> {
        if height * width * channels != self.item_len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {height}x{width}x{channels}", self.shape())));
        }
        Ok(Batch { n: self.n, height, width, channels, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Batch<T> {
        Batch { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }
}

impl<T: Scalar> From<Tensor3<T>> for Batch<T> {
    fn from(t: Tensor3<T>) -> Self {
        Batch { n: 1, height: t.height, width: t.width, channels: t.channels, data: t.data }
    }
}
