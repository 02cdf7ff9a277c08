//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    /// Moment buffers are shaped after `params`.
    pub fn new(lr: f64, params: &[&Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` of `None` counts as a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.is_some_and(|g| g.shape() != p.shape()) {
                return Err(Error::Shape(format!("parameter {i} changed shape")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let pd = p.data_mut();
            match grads[i] {
                Some(g) => {
                    for (((w, m), v), &g) in pd.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                    }
                }
                None => {
                    for ((w, m), v) in pd.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= self.beta1;
                        *v *= self.beta2;
                        *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::scalar(2.0);
        let mut opt = Adam::new(0.1, &[&w]);
        let g = Tensor::scalar(1.0);
        opt.step(&mut [&mut w], &[Some(&g)]).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        assert!((w.item() - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut w = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let before = w.clone();
        let mut opt = Adam::new(0.1, &[&w]);
        let g = Tensor::zeros(1, 2);
        opt.step(&mut [&mut w], &[Some(&g)]).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn equal_grads_equal_updates() {
        let mut a = Tensor::scalar(0.5);
        let mut b = Tensor::scalar(0.5);
        let mut opt = Adam::new(0.01, &[&a, &b]);
        for k in 0..5 {
            let g = Tensor::scalar(0.3 * k as f64 - 0.4);
            opt.step(&mut [&mut a, &mut b], &[Some(&g), Some(&g)]).unwrap();
        }
        assert_eq!(a.item().to_bits(), b.item().to_bits());
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = Tensor::zeros(2, 2);
        let mut opt = Adam::new(0.1, &[&w]);
        let g = Tensor::zeros(1, 2);
        assert!(opt.step(&mut [&mut w], &[Some(&g)]).is_err());
    }
}
