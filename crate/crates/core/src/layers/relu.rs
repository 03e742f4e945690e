use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LayerIo;

#[derive(Clone, Debug)]
pub struct ReluCache<T> {
    input: Tensor<T>,
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> LayerIo<T, ReluCache<T>> {
    LayerIo {
        output: input.map(|v| if v > T::zero() { v } else { T::zero() }),
        cache: ReluCache { input: input.clone() },
    }
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(cache: &ReluCache<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != cache.input.shape() {
        return Err(Error::shape(
            "relu backward",
            format!("upstream {:?} vs input {:?}", upstream.shape(), cache.input.shape()),
        ));
    }
    let data = cache
        .input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(upstream.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward_definition() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1., 0., 2.]).unwrap();
        let io = relu_forward(&x);
        assert_eq!(io.output.data(), &[0., 0., 2.]);
        let g = relu_backward(&io.cache, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0., 0., 1.]);
    }
}
