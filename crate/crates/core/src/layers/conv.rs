use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LayerIo;

#[derive(Clone, Debug)]
pub struct Conv2dCache<T> {
    input: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }
}

fn geometry<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Geometry> {
    let &[h, w, cin] = input.shape() else {
        return Err(Error::shape("conv2d", format!("input must be [H,W,C], got {:?}", input.shape())));
    };
    let &[k, k2, kcin, cout] = kernels.shape() else {
        return Err(Error::shape("conv2d", format!("kernels must be [k,k,Cin,Cout], got {:?}", kernels.shape())));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel must be square and odd, got {k}x{k2}")));
    }
    if kcin != cin {
        return Err(Error::shape("conv2d", format!("input has {cin} channels but kernels expect {kcin}")));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape("conv2d", format!("bias must be [{cout}], got {:?}", bias.shape())));
    }
    Ok(Geometry { h, w, cin, k, cout })
}

/// Unfolds "same"-padded patches into a (H*W) x (k*k*Cin) matrix whose column
/// order matches the row-major kernel layout [k,k,Cin,Cout].
fn im2col<T: Scalar>(input: &[T], g: &Geometry) -> Vec<T> {
    let pad = (g.k / 2) as isize;
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.h * g.w * patch];
    for y in 0..g.h {
        for x in 0..g.w {
            let row = &mut cols[(y * g.w + x) * patch..][..patch];
            for dy in 0..g.k {
                let sy = y as isize + dy as isize - pad;
                if sy < 0 || sy >= g.h as isize {
                    continue;
                }
                for dx in 0..g.k {
                    let sx = x as isize + dx as isize - pad;
                    if sx < 0 || sx >= g.w as isize {
                        continue;
                    }
                    let src = ((sy as usize) * g.w + sx as usize) * g.cin;
                    let dst = (dy * g.k + dx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let pad = (g.k / 2) as isize;
    let patch = g.patch();
    let mut out = vec![T::zero(); g.h * g.w * g.cin];
    for y in 0..g.h {
        for x in 0..g.w {
            let row = &cols[(y * g.w + x) * patch..][..patch];
            for dy in 0..g.k {
                let sy = y as isize + dy as isize - pad;
                if sy < 0 || sy >= g.h as isize {
                    continue;
                }
                for dx in 0..g.k {
                    let sx = x as isize + dx as isize - pad;
                    if sx < 0 || sx >= g.w as isize {
                        continue;
                    }
                    let dst = ((sy as usize) * g.w + sx as usize) * g.cin;
                    let src = (dy * g.k + dx) * g.cin;
                    for c in 0..g.cin {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    out
}

/// Stride-1 convolution with "same" zero padding: [H,W,Cin] -> [H,W,Cout].
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<LayerIo<T, Conv2dCache<T>>> {
    let g = geometry(input, kernels, bias)?;
    let cols = im2col(input.data(), &g);
    let pixels = g.h * g.w;
    let mut out = Vec::with_capacity(pixels * g.cout);
    for _ in 0..pixels {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        pixels,
        g.patch(),
        g.cout,
        T::one(),
        &cols,
        (g.patch(), 1),
        kernels.data(),
        (g.cout, 1),
        T::one(),
        &mut out,
        (g.cout, 1),
    );
    Ok(LayerIo { output: Tensor::new(&[g.h, g.w, g.cout], out)?, cache: Conv2dCache { input: input.clone() } })
}

pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let cout = kernels.shape().get(3).copied().unwrap_or(0);
    let bias_shape = Tensor::<T>::zeros(&[cout.max(1)]);
    let g = geometry(&cache.input, kernels, &bias_shape)?;
    upstream.expect_shape("conv2d backward", &[g.h, g.w, g.cout])?;
    let pixels = g.h * g.w;
    let patch = g.patch();
    let cols = im2col(cache.input.data(), &g);
    let dy = upstream.data();

    let mut dk = vec![T::zero(); patch * g.cout];
    T::gemm(patch, pixels, g.cout, T::one(), &cols, (1, patch), dy, (g.cout, 1), T::zero(), &mut dk, (g.cout, 1));

    let mut db = vec![T::zero(); g.cout];
    for row in dy.chunks_exact(g.cout) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }

    let mut dcols = vec![T::zero(); pixels * patch];
    T::gemm(
        pixels,
        g.cout,
        patch,
        T::one(),
        dy,
        (g.cout, 1),
        kernels.data(),
        (1, g.cout),
        T::zero(),
        &mut dcols,
        (patch, 1),
    );
    let dx = col2im(&dcols, &g);

    Ok(Conv2dGrads {
        input: Tensor::new(cache.input.shape(), dx)?,
        kernels: Tensor::new(kernels.shape(), dk)?,
        bias: Tensor::new(&[g.cout], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = SeedStream::new(seed).rng();
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct six-loop convolution used as the reference.
    fn loop_nest(input: &Tensor<f64>, kernels: &Tensor<f64>, bias: &Tensor<f64>) -> Vec<f64> {
        let [h, w, cin] = input.shape().try_into().unwrap();
        let [k, _, _, cout] = kernels.shape().try_into().unwrap();
        let p = (k / 2) as isize;
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h {
            for x in 0..w {
                for o in 0..cout {
                    let mut acc = bias.data()[o];
                    for dy in 0..k {
                        for dx in 0..k {
                            for c in 0..cin {
                                let sy = y as isize + dy as isize - p;
                                let sx = x as isize + dx as isize - p;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let iv = input.data()[(sy as usize * w + sx as usize) * cin + c];
                                let kv = kernels.data()[((dy * k + dx) * cin + c) * cout + o];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[(y * w + x) * cout + o] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one_is_scalar_multiply() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1], &[5.0]).unwrap();
        let k = Tensor::from_f64(&[1, 1, 1, 1], &[2.0]).unwrap();
        let b = Tensor::from_f64(&[1], &[0.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, &b).unwrap().output.data(), &[10.0]);
    }

    #[test]
    fn zero_input_passes_bias() {
        let x = Tensor::<f64>::zeros(&[3, 3, 1]);
        let k = random(&[3, 3, 1, 1], 3);
        let b = Tensor::from_f64(&[1], &[0.75]).unwrap();
        let out = conv2d_forward(&x, &k, &b).unwrap().output;
        assert!(out.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn matches_loop_nest() {
        let x = random(&[5, 5, 2], 1);
        let k = random(&[3, 3, 2, 4], 2);
        let b = random(&[4], 3);
        let out = conv2d_forward(&x, &k, &b).unwrap().output;
        assert_eq!(out.shape(), &[5, 5, 4]);
        for (a, e) in out.data().iter().zip(loop_nest(&x, &k, &b)) {
            assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = random(&[4, 3, 2], 9);
        let k = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert_eq!(conv2d_forward(&x, &k, &b).unwrap().output, x);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = random(&[4, 4, 3], 1);
        let k = random(&[3, 3, 2, 4], 2);
        let b = Tensor::zeros(&[4]);
        let err = conv2d_forward(&x, &k, &b).unwrap_err();
        assert!(err.to_string().contains("3 channels"), "{err}");
    }

    #[test]
    fn rejects_even_kernel() {
        let x = random(&[4, 4, 1], 1);
        let k = random(&[2, 2, 1, 1], 2);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).is_err());
    }
}
