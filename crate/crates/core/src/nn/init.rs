use rand::Rng;

use crate::nn::Scalar;

/// Half-width of the uniform weight initializer.
pub const INIT_BOUND: f64 = 0.1065;

pub fn init_uniform<T: Scalar, R: Rng + ?Sized>(values: &mut [T], rng: &mut R) {
    for v in values {
        *v = T::lit(rng.random_range(-INIT_BOUND..=INIT_BOUND));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_stay_in_bounds_and_center_on_zero() {
        let mut v = vec![0.0f32; 100_000];
        init_uniform(&mut v, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(v.iter().all(|x| x.abs() <= INIT_BOUND as f32));
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
    }
}
