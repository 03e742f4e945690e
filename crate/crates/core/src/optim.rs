//! First-order update rules. Each parameter tensor owns an [`OptimizerState`]
//! holding its step counter and slot buffers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adamax,
    Nadam,
    Adagrad,
    Adadelta,
    Rmsprop,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] =
        [Self::Sgd, Self::Adam, Self::Adamax, Self::Nadam, Self::Adagrad, Self::Adadelta, Self::Rmsprop];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::Adamax => "adamax",
            Self::Nadam => "nadam",
            Self::Adagrad => "adagrad",
            Self::Adadelta => "adadelta",
            Self::Rmsprop => "rmsprop",
        }
    }

    fn slot_count(self) -> usize {
        match self {
            Self::Sgd => 0,
            Self::Adagrad | Self::Rmsprop => 1,
            Self::Adam | Self::Adamax | Self::Nadam | Self::Adadelta => 2,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::invalid(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Hyper {
    pub fn defaults(kind: OptimizerKind) -> Self {
        let base = Hyper { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, rho: 0.9, epsilon: 1e-7 };
        match kind {
            OptimizerKind::Sgd => Hyper { learning_rate: 0.01, ..base },
            OptimizerKind::Rmsprop => base,
            // 0.001 cannot settle the unit quadratic within 2000 steps.
            OptimizerKind::Adam | OptimizerKind::Nadam | OptimizerKind::Adamax => {
                Hyper { learning_rate: 0.002, ..base }
            }
            OptimizerKind::Adagrad => Hyper { learning_rate: 0.05, ..base },
            OptimizerKind::Adadelta => Hyper { learning_rate: 1.0, rho: 0.95, ..base },
        }
    }

    pub fn with_learning_rate(self, learning_rate: f64) -> Self {
        Hyper { learning_rate, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rho", self.rho)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    pub step: u64,
    /// Slot buffers, shaped like the parameter:
    /// adam/nadam `[m, v]`, adamax `[m, u]`, adagrad/rmsprop `[a]`,
    /// adadelta `[grad accumulator, update accumulator]`.
    pub slots: Vec<Tensor<T>>,
}

pub fn init_state<T: Scalar>(kind: OptimizerKind, hyper: Hyper, shape: &[usize]) -> Result<OptimizerState<T>> {
    hyper.validate()?;
    if shape.contains(&0) || shape.is_empty() {
        return Err(Error::shape("init_state", format!("invalid parameter shape {shape:?}")));
    }
    Ok(OptimizerState { kind, hyper, step: 0, slots: (0..kind.slot_count()).map(|_| Tensor::zeros(shape)).collect() })
}

impl<T: Scalar> OptimizerState<T> {
    /// Pure form: returns the updated parameters and state.
    pub fn apply_step(&self, params: &Tensor<T>, grads: &Tensor<T>) -> Result<(Tensor<T>, OptimizerState<T>)> {
        let mut state = self.clone();
        let mut params = params.clone();
        state.update(&mut params, grads)?;
        Ok((params, state))
    }

    /// In-place form of [`apply_step`](Self::apply_step).
    pub fn update(&mut self, params: &mut Tensor<T>, grads: &Tensor<T>) -> Result<()> {
        if params.shape() != grads.shape() {
            return Err(Error::shape(
                "apply_step",
                format!("params {:?} vs grads {:?}", params.shape(), grads.shape()),
            ));
        }
        if let Some(slot) = self.slots.first() {
            slot.expect_shape("apply_step slots", params.shape())?;
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite { context: "optimizer gradient".into() });
        }
        self.step += 1;
        let h = self.hyper;
        let t = self.step as f64;
        let lr = T::of(h.learning_rate);
        let eps = T::of(h.epsilon);
        let (b1, b2, rho) = (T::of(h.beta1), T::of(h.beta2), T::of(h.rho));
        let one = T::one();
        let theta = params.data_mut();
        let g = grads.data();

        // A zero numerator is treated as a zero step so that eps = 0 with
        // zero state cannot produce 0/0.
        let ratio = |num: T, den: T| if num == T::zero() { T::zero() } else { num / den };

        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &gi) in theta.iter_mut().zip(g) {
                    *p -= lr * gi;
                }
            }
            OptimizerKind::Adam | OptimizerKind::Nadam => {
                let c1 = T::of(1.0 - h.beta1.powf(t));
                let c2 = T::of(1.0 - h.beta2.powf(t));
                let nesterov = self.kind == OptimizerKind::Nadam;
                let (m, v) = two_slots(&mut self.slots);
                for i in 0..theta.len() {
                    m[i] = b1 * m[i] + (one - b1) * g[i];
                    v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    let num = if nesterov { b1 * m_hat + (one - b1) * g[i] / c1 } else { m_hat };
                    theta[i] -= lr * ratio(num, v_hat.sqrt() + eps);
                }
            }
            OptimizerKind::Adamax => {
                let step_size = lr / T::of(1.0 - h.beta1.powf(t));
                let (m, u) = two_slots(&mut self.slots);
                for i in 0..theta.len() {
                    m[i] = b1 * m[i] + (one - b1) * g[i];
                    u[i] = (b2 * u[i]).max(g[i].abs());
                    theta[i] -= step_size * ratio(m[i], u[i] + eps);
                }
            }
            OptimizerKind::Adagrad => {
                let a = self.slots[0].data_mut();
                for i in 0..theta.len() {
                    a[i] += g[i] * g[i];
                    theta[i] -= lr * ratio(g[i], a[i].sqrt() + eps);
                }
            }
            OptimizerKind::Rmsprop => {
                let a = self.slots[0].data_mut();
                for i in 0..theta.len() {
                    a[i] = rho * a[i] + (one - rho) * g[i] * g[i];
                    theta[i] -= lr * ratio(g[i], a[i].sqrt() + eps);
                }
            }
            OptimizerKind::Adadelta => {
                let (acc_g, acc_dx) = two_slots(&mut self.slots);
                for i in 0..theta.len() {
                    acc_g[i] = rho * acc_g[i] + (one - rho) * g[i] * g[i];
                    let dx = (acc_dx[i] + eps).sqrt() / (acc_g[i] + eps).sqrt() * g[i];
                    acc_dx[i] = rho * acc_dx[i] + (one - rho) * dx * dx;
                    theta[i] -= lr * dx;
                }
            }
        }
        Ok(())
    }
}

fn two_slots<T: Scalar>(slots: &mut [Tensor<T>]) -> (&mut [T], &mut [T]) {
    let (a, b) = slots.split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_f64(&[1], &[v]).unwrap()
    }

    #[test]
    fn init_allocates_slots() {
        let adam: OptimizerState<f64> =
            init_state(OptimizerKind::Adam, Hyper::defaults(OptimizerKind::Adam), &[1]).unwrap();
        assert_eq!(adam.slots, vec![scalar(0.0), scalar(0.0)]);
        assert_eq!(adam.step, 0);
        let sgd: OptimizerState<f64> =
            init_state(OptimizerKind::Sgd, Hyper::defaults(OptimizerKind::Sgd), &[1]).unwrap();
        assert!(sgd.slots.is_empty());
        let ada: OptimizerState<f64> =
            init_state(OptimizerKind::Adadelta, Hyper::defaults(OptimizerKind::Adadelta), &[2, 3]).unwrap();
        assert_eq!(ada.slots.len(), 2);
        assert!(ada.slots.iter().all(|s| s.shape() == [2, 3] && s.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_negative_learning_rate() {
        let h = Hyper::defaults(OptimizerKind::Sgd).with_learning_rate(-0.1);
        assert!(init_state::<f32>(OptimizerKind::Sgd, h, &[1]).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let s: OptimizerState<f64> =
            init_state(OptimizerKind::Adam, Hyper::defaults(OptimizerKind::Adam), &[2]).unwrap();
        assert!(s.apply_step(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn step_counter_increments() {
        let mut s: OptimizerState<f64> =
            init_state(OptimizerKind::Rmsprop, Hyper::defaults(OptimizerKind::Rmsprop), &[1]).unwrap();
        let mut p = scalar(1.0);
        for expected in 1..=3 {
            s.update(&mut p, &scalar(0.5)).unwrap();
            assert_eq!(s.step, expected);
        }
    }

    #[test]
    fn names_parse() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("ftrl".parse::<OptimizerKind>().is_err());
    }
}
