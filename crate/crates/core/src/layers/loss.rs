use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weighted categorical cross-entropy on raw logits.
///
/// Returns `(loss, dloss/dlogits)` with `loss = -w[t] * ln softmax(z)[t]`.
/// Without weights every class weighs 1.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: usize,
    class_weights: Option<&[T]>,
) -> Result<(T, Tensor<T>)> {
    let k = logits.len();
    if k < 2 || logits.rank() != 1 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("need [K] logits with K >= 2, got {:?}", logits.shape()),
        ));
    }
    if target >= k {
        return Err(Error::invalid(format!("target class {target} out of range for {k} classes")));
    }
    let weight = match class_weights {
        Some(w) if w.len() != k => {
            return Err(Error::shape("softmax_cross_entropy", format!("{} class weights for {k} classes", w.len())))
        }
        Some(w) => w[target],
        None => T::one(),
    };
    let z = logits.data();
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = weight * (max + sum.ln() - z[target]);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let onehot = if i == target { T::one() } else { T::zero() };
            weight * (e / sum - onehot)
        })
        .collect();
    Ok((loss, Tensor::new(&[k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, grad) = softmax_cross_entropy(&Tensor::<f64>::zeros(&[6]), 2, None).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-15);
        assert!((loss - 1.7918).abs() < 1e-4);
        assert!((grad.data()[2] + 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let z = Tensor::<f64>::from_f64(&[3], &[800.0, 0.0, -3.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&z, 0, None).unwrap();
        assert!((0.0..1e-300).contains(&loss));
    }

    #[test]
    fn weights_scale_loss_and_gradient() {
        let z = Tensor::<f64>::from_f64(&[3], &[0.3, -0.1, 0.9]).unwrap();
        let (l1, g1) = softmax_cross_entropy(&z, 1, None).unwrap();
        let (l2, g2) = softmax_cross_entropy(&z, 1, Some(&[1.0, 2.5, 1.0])).unwrap();
        assert!((l2 - 2.5 * l1).abs() < 1e-14);
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((2.5 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_target() {
        assert!(softmax_cross_entropy(&Tensor::<f32>::zeros(&[6]), 6, None).is_err());
    }
}
