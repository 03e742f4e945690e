//! Central finite-difference verification of analytic gradients.
//!
//! A target exposes its differentiable arguments plus a forward and a backward
//! pass in `f64`. The check contracts the output with a fixed random vector `r`
//! so that the scalar objective is `sum(r * forward(args))` and the upstream
//! gradient handed to backward is `r` itself.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::*;
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub trait GradCheckTarget {
    /// Differentiable arguments, in the order backward returns their gradients.
    fn arguments(&self) -> Vec<Tensor<f64>>;

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub argument: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
}

/// `|a - d| / max(|a|, |d|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn contract(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Compares every analytic partial derivative of `target` against central
/// differences with step `epsilon`, returning the largest relative error.
pub fn grad_check(target: &dyn GradCheckTarget, epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let mut args = target.arguments();
    let out = target.forward(&args)?;
    let mut rng = SeedStream::new(seed).named("gradcheck").rng();
    let r = Tensor::new(out.shape(), (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let analytic = target.backward(&args, &r)?;
    if analytic.len() != args.len() {
        return Err(Error::invalid("backward returned the wrong number of gradients"));
    }

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for a in 0..args.len() {
        args[a].expect_shape("grad_check", analytic[a].shape())?;
        for i in 0..args[a].len() {
            let here = Coordinate { argument: a, index: i };
            let orig = args[a].data()[i];
            args[a].data_mut()[i] = orig + epsilon;
            let plus = contract(&target.forward(&args)?, &r);
            args[a].data_mut()[i] = orig - epsilon;
            let minus = contract(&target.forward(&args)?, &r);
            args[a].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[a].data()[i];
            if !numeric.is_finite() || !exact.is_finite() {
                return Err(Error::NonFinite { context: format!("grad_check argument {a} index {i}") });
            }
            let err = relative_error(exact, numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(here);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Input, kernels, bias.
pub struct Conv2dCheck {
    pub input: Tensor<f64>,
    pub kernels: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl GradCheckTarget for Conv2dCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        vec![self.input.clone(), self.kernels.clone(), self.bias.clone()]
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(conv2d_forward(&args[0], &args[1], &args[2])?.output)
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let io = conv2d_forward(&args[0], &args[1], &args[2])?;
        let g = conv2d_backward(&io.cache, &args[1], upstream)?;
        Ok(vec![g.input, g.kernels, g.bias])
    }
}

pub struct DenseCheck {
    pub input: Tensor<f64>,
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl GradCheckTarget for DenseCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        vec![self.input.clone(), self.weights.clone(), self.bias.clone()]
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(dense_forward(&args[0], &args[1], &args[2])?.output)
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let io = dense_forward(&args[0], &args[1], &args[2])?;
        let g = dense_backward(&io.cache, &args[1], upstream)?;
        Ok(vec![g.input, g.weights, g.bias])
    }
}

pub struct ReluCheck(pub Tensor<f64>);

impl GradCheckTarget for ReluCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        vec![self.0.clone()]
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(relu_forward(&args[0]).output)
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![relu_backward(&relu_forward(&args[0]).cache, upstream)?])
    }
}

pub struct MaxPoolCheck(pub Tensor<f64>);

impl GradCheckTarget for MaxPoolCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        vec![self.0.clone()]
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(maxpool2d_forward(&args[0])?.output)
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let io = maxpool2d_forward(&args[0])?;
        Ok(vec![maxpool2d_backward(&io.cache, upstream)?])
    }
}

/// Dropout in training mode; the mask is redrawn from the same seed on every
/// call so the function being differentiated is fixed.
pub struct DropoutCheck {
    pub input: Tensor<f64>,
    pub rate: f64,
    pub seed: u64,
}

impl GradCheckTarget for DropoutCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        vec![self.input.clone()]
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let mut rng = SeedStream::new(self.seed).rng();
        Ok(dropout_forward(&args[0], self.rate, true, &mut rng)?.output)
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut rng = SeedStream::new(self.seed).rng();
        let io = dropout_forward(&args[0], self.rate, true, &mut rng)?;
        Ok(vec![dropout_backward(&io.cache, upstream)?])
    }
}

/// Loss as a one-element output so it fits the contraction scheme.
pub struct SoftmaxCrossEntropyCheck {
    pub logits: Tensor<f64>,
    pub target: usize,
    pub class_weights: Option<Vec<f64>>,
}

impl GradCheckTarget for SoftmaxCrossEntropyCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        vec![self.logits.clone()]
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (loss, _) = softmax_cross_entropy(&args[0], self.target, self.class_weights.as_deref())?;
        Tensor::new(&[1], vec![loss])
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, mut grad) = softmax_cross_entropy(&args[0], self.target, self.class_weights.as_deref())?;
        grad.scale(upstream.data()[0]);
        Ok(vec![grad])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_epsilon_out_of_range() {
        let t = ReluCheck(Tensor::full(&[2], 1.0));
        assert!(grad_check(&t, 1e-2, 0).is_err());
        assert!(grad_check(&t, 1e-9, 0).is_err());
    }

    struct Broken;

    impl GradCheckTarget for Broken {
        fn arguments(&self) -> Vec<Tensor<f64>> {
            vec![Tensor::full(&[2], 1.0)]
        }
        fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
            Ok(args[0].map(|v| v * 3.0))
        }
        fn backward(&self, _: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
            Ok(vec![upstream.clone()])
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let report = grad_check(&Broken, 1e-6, 0).unwrap();
        assert!(report.max_rel_error > 0.5);
        assert_eq!(report.checked, 2);
    }

    struct Exploding;

    impl GradCheckTarget for Exploding {
        fn arguments(&self) -> Vec<Tensor<f64>> {
            vec![Tensor::full(&[3], 1.0)]
        }
        fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
            Ok(args[0].map(|v| if v > 1.0 { f64::INFINITY } else { v }))
        }
        fn backward(&self, _: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
            Ok(vec![upstream.clone()])
        }
    }

    #[test]
    fn reports_non_finite_coordinate() {
        let err = grad_check(&Exploding, 1e-6, 0).unwrap_err();
        assert!(err.to_string().contains("argument 0 index 0"), "{err}");
    }
}
