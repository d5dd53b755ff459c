use crate::error::{Error, Result};
use crate::nn::scalar::{matmul, Layout};
use crate::nn::{Activation, Batch, Scalar, Tensor3};

/// Valid 2×2 convolution with stride 1.
///
/// `kernel` is stored `[out][in][kh][kw]`, the layout written to model files.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

/// Intermediate values kept from a training forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input_shape: [usize; 4],
    cols: Vec<T>,
    output: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub const KERNEL: usize = 2;
const TAPS: usize = KERNEL * KERNEL;

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, activation: Activation) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            kernel: vec![T::zero(); out_ch * in_ch * TAPS],
            bias: vec![T::zero(); out_ch],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn check_input(&self, x: &Batch<T>) -> Result<()> {
        if x.channels != self.in_ch {
            return Err(Error::shape(format!("conv expects {} input channels, got {}", self.in_ch, x.channels)));
        }
        if x.height < KERNEL || x.width < KERNEL {
            return Err(Error::shape(format!("conv input {}x{} smaller than the 2x2 kernel", x.height, x.width)));
        }
        Ok(())
    }

    /// Kernel rearranged to `[out][kh][kw][in]` so that it lines up with
    /// the contiguous channel runs produced by [`im2col`].
    fn packed_kernel(&self) -> Vec<T> {
        let k = self.in_ch * TAPS;
        let mut packed = vec![T::zero(); self.out_ch * k];
        for o in 0..self.out_ch {
            for c in 0..self.in_ch {
                for tap in 0..TAPS {
                    packed[o * k + tap * self.in_ch + c] = self.kernel[(o * self.in_ch + c) * TAPS + tap];
                }
            }
        }
        packed
    }

    fn affine(&self, cols: &[T], rows: usize) -> Vec<T> {
        let k = self.in_ch * TAPS;
        let mut out = Vec::with_capacity(rows * self.out_ch);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        matmul(Layout::NT, rows, k, self.out_ch, cols, &self.packed_kernel(), &mut out, true);
        self.activation.apply_in_place(&mut out);
        out
    }

    pub fn forward(&self, x: &Batch<T>) -> Result<Batch<T>> {
        self.forward_train(x).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Batch<T>) -> Result<(Batch<T>, ConvCache<T>)> {
        self.check_input(x)?;
        let (ho, wo) = (x.height - 1, x.width - 1);
        let rows = x.n * ho * wo;
        let cols = im2col(x);
        let out = self.affine(&cols, rows);
        let y = Batch::new(x.n, ho, wo, self.out_ch, out.clone())?;
        Ok((y, ConvCache { input_shape: x.shape(), cols, output: out }))
    }

    /// Returns the gradient w.r.t. the layer input plus parameter gradients.
    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Batch<T>) -> Result<(Batch<T>, ConvGrads<T>)> {
        let [n, h, w, _] = cache.input_shape;
        let rows = n * (h - 1) * (w - 1);
        if grad_out.data.len() != rows * self.out_ch {
            return Err(Error::shape(format!(
                "conv output gradient has {} values, expected {}",
                grad_out.data.len(),
                rows * self.out_ch
            )));
        }
        let k = self.in_ch * TAPS;
        let mut delta = grad_out.data.clone();
        self.activation.backprop_in_place(&cache.output, &mut delta);

        let mut bias = vec![T::zero(); self.out_ch];
        for row in delta.chunks_exact(self.out_ch) {
            bias.iter_mut().zip(row).for_each(|(b, &d)| *b += d);
        }

        let mut packed_grad = vec![T::zero(); self.out_ch * k];
        matmul(Layout::TN, self.out_ch, rows, k, &delta, &cache.cols, &mut packed_grad, false);
        let mut kernel = vec![T::zero(); self.kernel.len()];
        for o in 0..self.out_ch {
            for c in 0..self.in_ch {
                for tap in 0..TAPS {
                    kernel[(o * self.in_ch + c) * TAPS + tap] = packed_grad[o * k + tap * self.in_ch + c];
                }
            }
        }

        let mut dcols = vec![T::zero(); rows * k];
        matmul(Layout::NN, rows, self.out_ch, k, &delta, &self.packed_kernel(), &mut dcols, false);
        let dx = col2im(&dcols, cache.input_shape);
        Ok((dx, ConvGrads { kernel, bias }))
    }
}

/// Rows are output positions `[n][i][j]`, columns `[kh][kw][c]`.
fn im2col<T: Scalar>(x: &Batch<T>) -> Vec<T> {
    let (h, w, c) = (x.height, x.width, x.channels);
    let (ho, wo) = (h - 1, w - 1);
    let mut cols = Vec::with_capacity(x.n * ho * wo * TAPS * c);
    for item in x.data.chunks_exact(h * w * c) {
        for i in 0..ho {
            for j in 0..wo {
                for kh in 0..KERNEL {
                    let start = ((i + kh) * w + j) * c;
                    cols.extend_from_slice(&item[start..start + KERNEL * c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(dcols: &[T], shape: [usize; 4]) -> Batch<T> {
    let [n, h, w, c] = shape;
    let (ho, wo) = (h - 1, w - 1);
    let mut dx = Batch::zeros(n, h, w, c);
    let row_len = TAPS * c;
    for (b, item) in dx.data.chunks_exact_mut(h * w * c).enumerate() {
        for i in 0..ho {
            for j in 0..wo {
                let row = &dcols[((b * ho + i) * wo + j) * row_len..][..row_len];
                for kh in 0..KERNEL {
                    let start = ((i + kh) * w + j) * c;
                    item[start..start + KERNEL * c]
                        .iter_mut()
                        .zip(&row[kh * KERNEL * c..(kh + 1) * KERNEL * c])
                        .for_each(|(d, &g)| *d += g);
                }
            }
        }
    }
    dx
}

/// Convolves a single block.
pub fn conv2d<T: Scalar>(input: &Tensor3<T>, layer: &ConvLayer<T>) -> Result<Tensor3<T>> {
    let y = layer.forward(&Batch::from(input.clone()))?;
    Ok(y.item(0))
}
