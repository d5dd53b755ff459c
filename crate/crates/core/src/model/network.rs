use rand::Rng;

use crate::error::{Error, Result};
use crate::model::arch::{ArchitectureConfig, ParamCount};
use crate::nn::{
    bce_loss, dropout, init_uniform, Activation, Batch, BatchNormCache, BatchNormParams, ConvCache, ConvLayer,
    DenseCache, DenseLayer, DropoutMask, Mode, Scalar,
};

/// Layer stack of the patch classifier, generic over the element type so the
/// same code can be gradient-checked in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub bn1: BatchNormParams<T>,
    pub conv3: ConvLayer<T>,
    pub conv4: ConvLayer<T>,
    pub bn2: BatchNormParams<T>,
    pub dense1: DenseLayer<T>,
    pub dense2: DenseLayer<T>,
    pub dropout_rate: f64,
}

/// Everything the backward pass needs from a training forward pass.
pub struct Tape<T> {
    conv1: ConvCache<T>,
    conv2: ConvCache<T>,
    bn1: BatchNormCache<T>,
    drop1: Option<DropoutMask<T>>,
    conv3: ConvCache<T>,
    conv4: ConvCache<T>,
    bn2: BatchNormCache<T>,
    drop2: Option<DropoutMask<T>>,
    dense1: DenseCache<T>,
    dense2: DenseCache<T>,
}

/// Gradients of every trainable tensor, in [`Network::trainable`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

/// Whether a stored blob is updated by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobKind {
    Trainable,
    NonTrainable,
}

impl<T: Scalar> Network<T> {
    /// Network with zero weights and identity batch norm.
    pub fn zeros(arch: &ArchitectureConfig) -> Result<Self> {
        arch.validate()?;
        let (a, b) = arch.block_filters;
        let bn = |ch| {
            let mut p = BatchNormParams::new(ch);
            p.epsilon = arch.bn_epsilon;
            p.momentum = arch.bn_momentum;
            p
        };
        Ok(Network {
            conv1: ConvLayer::zeros(arch.bands, a, Activation::Linear),
            conv2: ConvLayer::zeros(a, a, Activation::Tanh),
            bn1: bn(a),
            conv3: ConvLayer::zeros(a, b, Activation::Linear),
            conv4: ConvLayer::zeros(b, b, Activation::Tanh),
            bn2: bn(b),
            dense1: DenseLayer::zeros(arch.flatten_width(), arch.hidden_units, Activation::Tanh),
            dense2: DenseLayer::zeros(arch.hidden_units, 1, Activation::Sigmoid),
            dropout_rate: arch.dropout_rate,
        })
    }

    /// Conv and dense weights and biases drawn uniformly from the init bounds.
    pub fn init<R: Rng + ?Sized>(arch: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for values in [
            &mut net.conv1.kernel,
            &mut net.conv1.bias,
            &mut net.conv2.kernel,
            &mut net.conv2.bias,
            &mut net.conv3.kernel,
            &mut net.conv3.bias,
            &mut net.conv4.kernel,
            &mut net.conv4.bias,
            &mut net.dense1.weights,
            &mut net.dense1.bias,
            &mut net.dense2.weights,
            &mut net.dense2.bias,
        ] {
            init_uniform(values, rng);
        }
        Ok(net)
    }

    pub fn bands(&self) -> usize {
        self.conv1.in_ch
    }

    /// Every stored tensor in file order, tagged with its name and kind.
    pub fn blobs(&self) -> Vec<(&'static str, BlobKind, &[T])> {
        use BlobKind::*;
        vec![
            ("conv1.kernel", Trainable, &self.conv1.kernel),
            ("conv1.bias", Trainable, &self.conv1.bias),
            ("conv2.kernel", Trainable, &self.conv2.kernel),
            ("conv2.bias", Trainable, &self.conv2.bias),
            ("bn1.gamma", Trainable, &self.bn1.gamma),
            ("bn1.beta", Trainable, &self.bn1.beta),
            ("bn1.moving_mean", NonTrainable, &self.bn1.moving_mean),
            ("bn1.moving_var", NonTrainable, &self.bn1.moving_var),
            ("conv3.kernel", Trainable, &self.conv3.kernel),
            ("conv3.bias", Trainable, &self.conv3.bias),
            ("conv4.kernel", Trainable, &self.conv4.kernel),
            ("conv4.bias", Trainable, &self.conv4.bias),
            ("bn2.gamma", Trainable, &self.bn2.gamma),
            ("bn2.beta", Trainable, &self.bn2.beta),
            ("bn2.moving_mean", NonTrainable, &self.bn2.moving_mean),
            ("bn2.moving_var", NonTrainable, &self.bn2.moving_var),
            ("dense1.weights", Trainable, &self.dense1.weights),
            ("dense1.bias", Trainable, &self.dense1.bias),
            ("dense2.weights", Trainable, &self.dense2.weights),
            ("dense2.bias", Trainable, &self.dense2.bias),
        ]
    }

    pub fn blobs_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.bn1.moving_mean,
            &mut self.bn1.moving_var,
            &mut self.conv3.kernel,
            &mut self.conv3.bias,
            &mut self.conv4.kernel,
            &mut self.conv4.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.bn2.moving_mean,
            &mut self.bn2.moving_var,
            &mut self.dense1.weights,
            &mut self.dense1.bias,
            &mut self.dense2.weights,
            &mut self.dense2.bias,
        ]
    }

    /// Trainable tensors in optimizer order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv3.kernel,
            &mut self.conv3.bias,
            &mut self.conv4.kernel,
            &mut self.conv4.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.dense1.weights,
            &mut self.dense1.bias,
            &mut self.dense2.weights,
            &mut self.dense2.bias,
        ]
    }

    pub fn trainable(&self) -> Vec<&[T]> {
        self.blobs().into_iter().filter(|(_, kind, _)| *kind == BlobKind::Trainable).map(|(_, _, v)| v).collect()
    }

    /// Trainable parameters concatenated in optimizer order.
    pub fn trainable_flat(&self) -> Vec<T> {
        self.trainable().concat()
    }

    pub fn set_trainable_flat(&mut self, values: &[T]) -> Result<()> {
        let total: usize = self.trainable().iter().map(|t| t.len()).sum();
        if values.len() != total {
            return Err(Error::shape(format!("{} values for {total} trainable parameters", values.len())));
        }
        let mut offset = 0;
        for t in self.trainable_mut() {
            let len = t.len();
            t.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Count obtained by walking every stored scalar.
    pub fn enumerate_params(&self) -> ParamCount {
        let mut count = ParamCount { trainable: 0, non_trainable: 0 };
        for (_, kind, values) in self.blobs() {
            for _ in values.iter() {
                match kind {
                    BlobKind::Trainable => count.trainable += 1,
                    BlobKind::NonTrainable => count.non_trainable += 1,
                }
            }
        }
        count
    }

    fn check_input(&self, x: &Batch<T>) -> Result<()> {
        if x.height != 5 || x.width != 5 || x.channels != self.bands() {
            return Err(Error::shape(format!(
                "expected 5x5x{} patches, got {}x{}x{}",
                self.bands(),
                x.height,
                x.width,
                x.channels
            )));
        }
        Ok(())
    }

    /// Inference pass: moving batch-norm statistics, no dropout.
    pub fn forward_infer(&self, x: &Batch<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let h = self.conv1.forward(x)?;
        let h = self.conv2.forward(&h)?;
        let h = self.bn1.forward_infer(&h)?;
        let h = self.conv3.forward(&h)?;
        let h = self.conv4.forward(&h)?;
        let h = self.bn2.forward_infer(&h)?;
        let h = self.dense1.forward(&h.flatten())?;
        Ok(self.dense2.forward(&h)?.data)
    }

    /// Training pass: batch statistics (updating the moving averages) and
    /// dropout masks drawn from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, x: &Batch<T>, rng: &mut R) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        let (h, conv1) = self.conv1.forward_train(x)?;
        let (h, conv2) = self.conv2.forward_train(&h)?;
        let (h, bn1) = self.bn1.forward_train(&h)?;
        let (h, drop1) = dropout(&h, self.dropout_rate, rng, Mode::Train)?;
        let (h, conv3) = self.conv3.forward_train(&h)?;
        let (h, conv4) = self.conv4.forward_train(&h)?;
        let (h, bn2) = self.bn2.forward_train(&h)?;
        let (h, drop2) = dropout(&h, self.dropout_rate, rng, Mode::Train)?;
        let (h, dense1) = self.dense1.forward_train(&h.flatten())?;
        let (y, dense2) = self.dense2.forward_train(&h)?;
        Ok((y.data, Tape { conv1, conv2, bn1, drop1, conv3, conv4, bn2, drop2, dense1, dense2 }))
    }

    /// Probability per patch in either mode.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Batch<T>, mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        match mode {
            Mode::Infer => self.forward_infer(x),
            Mode::Train => self.forward_train(x, rng).map(|(y, _)| y),
        }
    }

    /// Backpropagates `grad_prob` (d loss / d probability) through the tape.
    pub fn backward(&self, tape: &Tape<T>, grad_prob: &[T]) -> Result<Gradients<T>> {
        let n = grad_prob.len();
        let g = Batch::vectors(n, 1, grad_prob.to_vec())?;
        let (g, d2) = self.dense2.backward(&tape.dense2, &g)?;
        let (g, d1) = self.dense1.backward(&tape.dense1, &g)?;
        let mut g = g.reshape(1, 1, self.conv4.out_ch)?;
        if let Some(mask) = &tape.drop2 {
            mask.apply(&mut g.data);
        }
        let (g, b2) = self.bn2.backward(&tape.bn2, &g)?;
        let (g, c4) = self.conv4.backward(&tape.conv4, &g)?;
        let (mut g, c3) = self.conv3.backward(&tape.conv3, &g)?;
        if let Some(mask) = &tape.drop1 {
            mask.apply(&mut g.data);
        }
        let (g, b1) = self.bn1.backward(&tape.bn1, &g)?;
        let (g, c2) = self.conv2.backward(&tape.conv2, &g)?;
        let (_, c1) = self.conv1.backward(&tape.conv1, &g)?;
        Ok(Gradients {
            tensors: vec![
                c1.kernel, c1.bias, c2.kernel, c2.bias, b1.gamma, b1.beta, c3.kernel, c3.bias, c4.kernel, c4.bias,
                b2.gamma, b2.beta, d1.weights, d1.bias, d2.weights, d2.bias,
            ],
        })
    }

    /// Mean binary cross-entropy of a training pass and its gradients.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &mut self,
        x: &Batch<T>,
        labels: &[T],
        rng: &mut R,
    ) -> Result<(f64, Gradients<T>)> {
        if labels.len() != x.n {
            return Err(Error::shape(format!("{} labels for {} patches", labels.len(), x.n)));
        }
        let (probs, tape) = self.forward_train(x, rng)?;
        let loss = bce_loss(labels, &probs)?;
        let grads = self.backward(&tape, &loss.gradient)?;
        Ok((loss.value, grads))
    }
}
