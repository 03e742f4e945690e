use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LayerIo;

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    input: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    /// Shaped like the (unflattened) forward input.
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims<T: Scalar>(weights: &Tensor<T>) -> Result<(usize, usize)> {
    match *weights.shape() {
        [n, m] => Ok((n, m)),
        ref s => Err(Error::shape("dense", format!("weights must be [n,m], got {s:?}"))),
    }
}

/// Affine map `x . W + b`. The input is flattened row-major, so any shape with
/// `n` elements is accepted.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<LayerIo<T, DenseCache<T>>> {
    let (n, m) = dims(weights)?;
    if input.len() != n {
        return Err(Error::shape("dense", format!("input has {} values but weights have {n} rows", input.len())));
    }
    bias.expect_shape("dense bias", &[m])?;
    let mut out = bias.data().to_vec();
    T::gemm(1, n, m, T::one(), input.data(), (n, 1), weights.data(), (m, 1), T::one(), &mut out, (m, 1));
    Ok(LayerIo { output: Tensor::new(&[m], out)?, cache: DenseCache { input: input.clone() } })
}

pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, m) = dims(weights)?;
    upstream.expect_shape("dense backward", &[m])?;
    if cache.input.len() != n {
        return Err(Error::shape("dense backward", "cache does not match weights"));
    }
    let x = cache.input.data();
    let dy = upstream.data();

    let mut dw = vec![T::zero(); n * m];
    T::gemm(n, 1, m, T::one(), x, (1, 1), dy, (m, 1), T::zero(), &mut dw, (m, 1));

    let mut dx = vec![T::zero(); n];
    T::gemm(n, m, 1, T::one(), weights.data(), (m, 1), dy, (1, 1), T::zero(), &mut dx, (1, 1));

    Ok(DenseGrads {
        input: Tensor::new(cache.input.shape(), dx)?,
        weights: Tensor::new(&[n, m], dw)?,
        bias: upstream.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::from_f64(&[3], &[0.5, -2.0, 7.0]).unwrap();
        let w = Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let out = dense_forward(&x, &w, &Tensor::zeros(&[3])).unwrap().output;
        assert_eq!(out, x);
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::<f64>::from_f64(&[2], &[1., 2.]).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        let b = Tensor::from_f64(&[2], &[3., 4.]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().output.data(), &[4., 6.]);
    }

    #[test]
    fn flattens_input_and_restores_shape() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_f64(&[4, 1], &[1., 1., 1., 1.]).unwrap();
        let io = dense_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(io.output.data(), &[10.]);
        let g = dense_backward(&io.cache, &w, &Tensor::full(&[1], 1.0)).unwrap();
        assert_eq!(g.input.shape(), &[1, 2, 2]);
        assert_eq!(g.weights.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn rejects_length_mismatch() {
        let x = Tensor::<f64>::zeros(&[3]);
        let w = Tensor::zeros(&[4, 2]);
        let err = dense_forward(&x, &w, &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("4 rows"));
    }
}
