use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Plain SGD with a step-decay schedule:
/// `lr = base_lr * gamma^floor(epoch / step_size)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub base_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub current_epoch: usize,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            base_lr: 0.01,
            step_size: 15,
            gamma: 0.1,
            current_epoch: 0,
        }
    }
}

impl OptimizerState {
    pub fn new(base_lr: f64, step_size: usize, gamma: f64) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be ≥ 0, got {base_lr}"
            )));
        }
        if step_size == 0 {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        Ok(OptimizerState {
            base_lr,
            step_size,
            gamma,
            current_epoch: 0,
        })
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.step_size) as i32;
        self.base_lr * self.gamma.powi(decays)
    }

    pub fn lr(&self) -> f64 {
        self.lr_at_epoch(self.current_epoch)
    }
}

/// `p ← p − lr·grad(p)` for every parameter, then clears the gradients.
///
/// Fails without touching anything if any parameter lacks a gradient.
pub fn sgd_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    lr: f64,
) -> Result<()> {
    let mut params: Vec<&mut Tensor<T>> = params.into_iter().collect();
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::State(format!("parameter {i} has no gradient")));
    }
    let lr = T::from_f64(lr);
    for p in params.iter_mut() {
        let grad = p.grad().expect("checked above").to_vec();
        p.data_mut()
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, &g)| *w = *w - lr * g);
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_schedule() {
        let s = OptimizerState::default();
        assert_eq!(s.lr_at_epoch(0), 0.01);
        assert_eq!(s.lr_at_epoch(14), 0.01);
        assert!((s.lr_at_epoch(15) - 0.001).abs() < 1e-15);
        assert!((s.lr_at_epoch(32) - 0.0001).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            let lr = s.lr_at_epoch(e);
            assert!(lr <= prev);
            assert_eq!(lr, s.lr_at_epoch(e - e % 15));
            prev = lr;
        }
    }

    #[test]
    fn sgd_hand_case() {
        let mut p = Tensor::<f32>::from_vec(&[1], vec![1.0]).unwrap();
        p.accumulate_grad(&[1.0]).unwrap();
        sgd_step([&mut p], 0.01).unwrap();
        assert_eq!(p.data(), &[0.99]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn zero_grad_and_zero_lr_are_no_ops() {
        let mut p = Tensor::<f32>::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        p.accumulate_grad(&[0.0, 0.0]).unwrap();
        sgd_step([&mut p], 0.5).unwrap();
        assert_eq!(p.data(), &[0.3, -0.7]);
        p.accumulate_grad(&[3.0, 4.0]).unwrap();
        sgd_step([&mut p], 0.0).unwrap();
        assert_eq!(p.data(), &[0.3, -0.7]);
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut a = Tensor::<f32>::zeros(&[1]);
        let mut b = Tensor::<f32>::zeros(&[1]);
        a.accumulate_grad(&[1.0]).unwrap();
        assert!(matches!(
            sgd_step([&mut a, &mut b], 0.1),
            Err(Error::State(_))
        ));
        assert_eq!(a.data(), &[0.0]);
    }

    #[test]
    fn descends_on_parabola() {
        let mut p = Tensor::<f64>::from_vec(&[1], vec![2.0]).unwrap();
        let f = |x: f64| x * x;
        let mut last = f(p.data()[0]);
        for _ in 0..2 {
            let x = p.data()[0];
            p.accumulate_grad(&[2.0 * x]).unwrap();
            sgd_step([&mut p], 0.3).unwrap();
            let now = f(p.data()[0]);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OptimizerState::new(0.01, 0, 0.1).is_err());
        assert!(OptimizerState::new(0.01, 15, 1.0).is_err());
        assert!(OptimizerState::new(-1.0, 15, 0.1).is_err());
    }
}
