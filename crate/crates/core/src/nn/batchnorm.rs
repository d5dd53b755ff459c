use crate::error::{Error, Result};
use crate::nn::{Batch, Mode, Scalar};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Per-channel batch normalization over all `n·height·width` positions.
///
/// `gamma`/`beta` are trainable; the moving statistics are not.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNormParams<T> {
    /// gamma = 1, beta = 0, moving mean 0, moving variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            moving_mean: vec![T::zero(); channels],
            moving_var: vec![T::one(); channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn trainable_count(&self) -> usize {
        2 * self.channels()
    }

    pub fn non_trainable_count(&self) -> usize {
        2 * self.channels()
    }

    fn check(&self, x: &Batch<T>) -> Result<()> {
        if x.channels != self.channels() {
            return Err(Error::shape(format!("batch norm over {} channels got {}", self.channels(), x.channels)));
        }
        Ok(())
    }

    /// Normalizes with the moving statistics.
    pub fn forward_infer(&self, x: &Batch<T>) -> Result<Batch<T>> {
        self.check(x)?;
        let eps = T::lit(self.epsilon);
        let scale: Vec<T> = self.gamma.iter().zip(&self.moving_var).map(|(&g, &v)| g / (v + eps).sqrt()).collect();
        let mut out = x.data.clone();
        for row in out.chunks_exact_mut(x.channels) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.moving_mean[c]) * scale[c] + self.beta[c];
            }
        }
        Batch::new(x.n, x.height, x.width, x.channels, out)
    }

    /// Normalizes with batch statistics and folds them into the moving averages.
    pub fn forward_train(&mut self, x: &Batch<T>) -> Result<(Batch<T>, BatchNormCache<T>)> {
        self.check(x)?;
        if x.n < 2 {
            return Err(Error::DegenerateBatch(x.n));
        }
        let ch = x.channels;
        let m = x.rows() as f64;
        let mut mean = vec![0.0f64; ch];
        for row in x.data.chunks_exact(ch) {
            mean.iter_mut().zip(row).for_each(|(s, &v)| *s += v.as_f64());
        }
        mean.iter_mut().for_each(|s| *s /= m);
        let mut var = vec![0.0f64; ch];
        for row in x.data.chunks_exact(ch) {
            for c in 0..ch {
                let d = row[c].as_f64() - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= m);

        let inv_std: Vec<T> = var.iter().map(|&v| T::lit(1.0 / (v + self.epsilon).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::lit(v)).collect();
        let mut xhat = x.data.clone();
        let mut out = x.data.clone();
        for (xr, yr) in xhat.chunks_exact_mut(ch).zip(out.chunks_exact_mut(ch)) {
            for c in 0..ch {
                let h = (xr[c] - mean_t[c]) * inv_std[c];
                xr[c] = h;
                yr[c] = self.gamma[c] * h + self.beta[c];
            }
        }

        let mom = self.momentum;
        for c in 0..ch {
            self.moving_mean[c] = T::lit(mom * self.moving_mean[c].as_f64() + (1.0 - mom) * mean[c]);
            self.moving_var[c] = T::lit(mom * self.moving_var[c].as_f64() + (1.0 - mom) * var[c]);
        }

        Ok((Batch::new(x.n, x.height, x.width, ch, out)?, BatchNormCache { xhat, inv_std, shape: x.shape() }))
    }

    pub fn forward(&mut self, x: &Batch<T>, mode: Mode) -> Result<Batch<T>> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
            Mode::Infer => self.forward_infer(x),
        }
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Batch<T>) -> Result<(Batch<T>, BatchNormGrads<T>)> {
        let ch = self.channels();
        if grad_out.data.len() != cache.xhat.len() {
            return Err(Error::shape("batch norm gradient length mismatch"));
        }
        let m = (cache.xhat.len() / ch) as f64;
        let mut dgamma = vec![0.0f64; ch];
        let mut dbeta = vec![0.0f64; ch];
        for (dy, xh) in grad_out.data.chunks_exact(ch).zip(cache.xhat.chunks_exact(ch)) {
            for c in 0..ch {
                dgamma[c] += (dy[c] * xh[c]).as_f64();
                dbeta[c] += dy[c].as_f64();
            }
        }
        let coef: Vec<f64> = (0..ch).map(|c| self.gamma[c].as_f64() * cache.inv_std[c].as_f64() / m).collect();
        let mut dx = grad_out.data.clone();
        for (d, xh) in dx.chunks_exact_mut(ch).zip(cache.xhat.chunks_exact(ch)) {
            for c in 0..ch {
                let v = coef[c] * (m * d[c].as_f64() - dbeta[c] - xh[c].as_f64() * dgamma[c]);
                d[c] = T::lit(v);
            }
        }
        let [n, h, w, _] = cache.shape;
        Ok((
            Batch::new(n, h, w, ch, dx)?,
            BatchNormGrads {
                gamma: dgamma.into_iter().map(T::lit).collect(),
                beta: dbeta.into_iter().map(T::lit).collect(),
            },
        ))
    }
}
