use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LayerIo;

#[derive(Clone, Debug)]
pub struct DropoutCache<T> {
    /// Per-element multiplier (0 or 1/(1-rate)); `None` when the layer was a passthrough.
    mask: Option<Vec<T>>,
}

/// Inverted dropout: survivors are scaled at training time so inference is
/// the identity.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<LayerIo<T, DropoutCache<T>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(LayerIo { output: input.clone(), cache: DropoutCache { mask: None } });
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok(LayerIo { output: Tensor::new(input.shape(), out)?, cache: DropoutCache { mask: Some(mask) } })
}

pub fn dropout_backward<T: Scalar>(cache: &DropoutCache<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    match &cache.mask {
        None => Ok(upstream.clone()),
        Some(mask) => {
            if mask.len() != upstream.len() {
                return Err(Error::shape("dropout backward", "upstream does not match mask"));
            }
            let data = upstream.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
            Tensor::new(upstream.shape(), data)
        }
    }
}
