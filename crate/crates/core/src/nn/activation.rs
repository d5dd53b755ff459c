use serde::{Deserialize, Serialize};

use crate::nn::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }

    pub(crate) fn apply_in_place<T: Scalar>(self, values: &mut [T]) {
        if self != Activation::Linear {
            values.iter_mut().for_each(|v| *v = self.apply(*v));
        }
    }

    /// Turns `grad` (w.r.t. outputs) into the gradient w.r.t. pre-activations.
    pub(crate) fn backprop_in_place<T: Scalar>(self, output: &[T], grad: &mut [T]) {
        if self != Activation::Linear {
            grad.iter_mut().zip(output).for_each(|(g, &y)| *g *= self.derivative_from_output(y));
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
