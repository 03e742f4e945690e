use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LayerIo;

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winning cell for each output element.
    argmax: Vec<usize>,
}

/// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<LayerIo<T, MaxPoolCache>> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::shape("maxpool2d", format!("input must be [H,W,C], got {:?}", input.shape())));
    };
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2d", format!("spatial size {h}x{w} is below the 2x2 window")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best = ((2 * i) * w + 2 * j) * c + ch;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * i + di) * w + 2 * j + dj) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(LayerIo {
        output: Tensor::new(&[oh, ow, c], out)?,
        cache: MaxPoolCache { input_shape: input.shape().to_vec(), argmax },
    })
}

pub fn maxpool2d_backward<T: Scalar>(cache: &MaxPoolCache, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool2d backward",
            format!("upstream has {} values, forward produced {}", upstream.len(), cache.argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(&cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(upstream.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_max() {
        let x = Tensor::<f32>::from_f64(&[2, 2, 1], &[1., 2., 3., 4.]).unwrap();
        let out = maxpool2d_forward(&x).unwrap().output;
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn floor_semantics() {
        let x = Tensor::<f32>::zeros(&[5, 5, 2]);
        assert_eq!(maxpool2d_forward(&x).unwrap().output.shape(), &[2, 2, 2]);
    }

    #[test]
    fn rejects_small_input() {
        assert!(maxpool2d_forward(&Tensor::<f32>::zeros(&[1, 4, 1])).is_err());
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::<f64>::from_f64(&[2, 2, 1], &[1., 5., 3., 4.]).unwrap();
        let io = maxpool2d_forward(&x).unwrap();
        let g = maxpool2d_backward(&io.cache, &Tensor::<f64>::from_f64(&[1, 1, 1], &[2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
