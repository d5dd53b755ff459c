use crate::error::{Error, Result};
use crate::nn::scalar::{matmul, Layout};
use crate::nn::{Activation, Batch, Scalar};

/// Fully connected layer, `weights` stored `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    input: Vec<T>,
    output: Vec<T>,
    n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Batch<T>) -> Result<Batch<T>> {
        self.forward_train(x).map(|(y, _)| y)
    }

    /// Input may be any batch whose items flatten to `inputs` values.
    pub fn forward_train(&self, x: &Batch<T>) -> Result<(Batch<T>, DenseCache<T>)> {
        if x.item_len() != self.inputs {
            return Err(Error::shape(format!("dense expects {} inputs, got {}", self.inputs, x.item_len())));
        }
        let mut out = Vec::with_capacity(x.n * self.outputs);
        for _ in 0..x.n {
            out.extend_from_slice(&self.bias);
        }
        matmul(Layout::NT, x.n, self.inputs, self.outputs, &x.data, &self.weights, &mut out, true);
        self.activation.apply_in_place(&mut out);
        let y = Batch::vectors(x.n, self.outputs, out.clone())?;
        Ok((y, DenseCache { input: x.data.clone(), output: out, n: x.n }))
    }

    /// Gradient w.r.t. the (flattened) input plus parameter gradients.
    pub fn backward(&self, cache: &DenseCache<T>, grad_out: &Batch<T>) -> Result<(Batch<T>, DenseGrads<T>)> {
        let n = cache.n;
        if grad_out.data.len() != n * self.outputs {
            return Err(Error::shape(format!(
                "dense output gradient has {} values, expected {}",
                grad_out.data.len(),
                n * self.outputs
            )));
        }
        let mut delta = grad_out.data.clone();
        self.activation.backprop_in_place(&cache.output, &mut delta);

        let mut bias = vec![T::zero(); self.outputs];
        for row in delta.chunks_exact(self.outputs) {
            bias.iter_mut().zip(row).for_each(|(b, &d)| *b += d);
        }
        let mut weights = vec![T::zero(); self.weights.len()];
        matmul(Layout::TN, self.outputs, n, self.inputs, &delta, &cache.input, &mut weights, false);
        let mut dx = vec![T::zero(); n * self.inputs];
        matmul(Layout::NN, n, self.outputs, self.inputs, &delta, &self.weights, &mut dx, false);
        Ok((Batch::vectors(n, self.inputs, dx)?, DenseGrads { weights, bias }))
    }
}

/// Applies the layer to one vector.
pub fn dense<T: Scalar>(input: &[T], layer: &DenseLayer<T>) -> Result<Vec<T>> {
    let x = Batch::vectors(1, input.len(), input.to_vec())?;
    Ok(layer.forward(&x)?.data)
}
