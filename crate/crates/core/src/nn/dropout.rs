use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Batch, Mode, Scalar};

/// Per-element multipliers of one inverted-dropout draw: `0` for dropped
/// units, `1/(1-rate)` for kept ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    pub scale: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn apply(&self, x: &mut [T]) {
        x.iter_mut().zip(&self.scale).for_each(|(v, &s)| *v *= s);
    }

    pub fn dropped(&self) -> usize {
        self.scale.iter().filter(|s| s.is_zero()).count()
    }
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Returns the mask used, if any, so the backward pass can
/// reuse it.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Batch<T>,
    rate: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<(Batch<T>, Option<DropoutMask<T>>)> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.data.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
    let mask = DropoutMask { scale };
    let mut out = x.clone();
    mask.apply(&mut out.data);
    Ok((out, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_infer_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Batch::<f32>::new(2, 1, 1, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            let (y, mask) = dropout(&x, 0.0, &mut rng, mode).unwrap();
            assert_eq!(y, x);
            assert!(mask.is_none());
        }
        let (y, _) = dropout(&x, 0.1, &mut rng, Mode::Infer).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rate_outside_unit_interval_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Batch::<f32>::zeros(1, 1, 1, 1);
        assert!(matches!(dropout(&x, 1.0, &mut rng, Mode::Train), Err(Error::Parameter(_))));
        assert!(matches!(dropout(&x, -0.1, &mut rng, Mode::Train), Err(Error::Parameter(_))));
    }

    #[test]
    fn drop_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let x = Batch::<f32>::new(n, 1, 1, 1, vec![1.0; n]).unwrap();
        let (_, mask) = dropout(&x, 0.1, &mut rng, Mode::Train).unwrap();
        let frac = mask.unwrap().dropped() as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.001, "drop fraction {frac}");
    }

    #[test]
    fn mask_is_reproducible_from_seed() {
        let x = Batch::<f32>::new(100, 1, 1, 1, vec![1.0; 100]).unwrap();
        let a = dropout(&x, 0.3, &mut ChaCha8Rng::seed_from_u64(9), Mode::Train).unwrap().0;
        let b = dropout(&x, 0.3, &mut ChaCha8Rng::seed_from_u64(9), Mode::Train).unwrap().0;
        assert_eq!(a, b);
    }
}
