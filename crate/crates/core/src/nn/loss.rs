use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Predictions are clipped into `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T = f32> {
    /// Mean binary cross-entropy, accumulated in `f64`.
    pub value: f64,
    /// d loss / d prediction, one entry per prediction.
    pub gradient: Vec<T>,
}

/// Mean binary cross-entropy `-(1/N) Σ [y ln p + (1-y) ln(1-p)]`.
pub fn bce_loss<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<LossValue<T>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::shape("empty loss input"));
    }
    let n = y_true.len() as f64;
    let mut total = 0.0f64;
    let mut gradient = Vec::with_capacity(y_true.len());
    for (&y, &p) in y_true.iter().zip(y_pred) {
        let y = y.as_f64();
        let p = p.as_f64().clamp(CLIP, 1.0 - CLIP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        gradient.push(T::lit((p - y) / (p * (1.0 - p)) / n));
    }
    let value = total / n;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value}")));
    }
    Ok(LossValue { value, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let l = bce_loss(&[1.0f64], &[1.0 - 1e-7]).unwrap();
        assert!(l.value < 1e-6);
        // -½(ln 0.9 + ln 0.8)
        let l = bce_loss(&[1.0f64, 0.0], &[0.9, 0.2]).unwrap();
        assert!((l.value - 0.164_252_033_486_018_1).abs() < 1e-12);
        let l = bce_loss(&[0.0f32], &[0.5]).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn saturated_predictions_stay_finite() {
        let l = bce_loss(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap();
        assert!(l.value.is_finite() && l.value > 10.0);
        assert!(l.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let y = [1.0f64, 0.0, 1.0];
        let p = [0.3f64, 0.6, 0.95];
        let g = bce_loss(&y, &p).unwrap().gradient;
        let h = 1e-6;
        for i in 0..3 {
            let mut up = p;
            let mut dn = p;
            up[i] += h;
            dn[i] -= h;
            let fd = (bce_loss(&y, &up).unwrap().value - bce_loss(&y, &dn).unwrap().value) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(bce_loss(&[1.0f32], &[0.5, 0.5]), Err(Error::Shape(_))));
    }
}
