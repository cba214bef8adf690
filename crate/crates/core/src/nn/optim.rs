use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};

/// One Adam update on a flat parameter slice. `t` is the 1-based step index.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.as_f64();
        let mn = beta1 * mi.as_f64() + (1.0 - beta1) * g;
        let vn = beta2 * vi.as_f64() + (1.0 - beta2) * g * g;
        *mi = T::of_f64(mn);
        *vi = T::of_f64(vn);
        let m_hat = mn / c1;
        let v_hat = vn / c2;
        *p = T::of_f64(p.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
    }
}

/// One RMSprop update on a flat parameter slice.
pub fn rmsprop_step<T: Real>(params: &mut [T], grads: &[T], v: &mut [T], lr: f64, rho: f64, eps: f64) {
    for ((p, &g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
        let g = g.as_f64();
        let vn = rho * vi.as_f64() + (1.0 - rho) * g * g;
        *vi = T::of_f64(vn);
        *p = T::of_f64(p.as_f64() - lr * g / (vn.sqrt() + eps));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Rmsprop { rho: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        Optimizer::Rmsprop { rho: 0.9, eps: 1e-8 }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

/// Per-tensor moment buffers, aligned with a network's parameter order.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub optimizer: Optimizer,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(optimizer: Optimizer, params: &[Tensor<T>]) -> Self {
        let zeros = |p: &Tensor<T>| vec![T::zero(); p.len()];
        Self {
            optimizer,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match self.optimizer {
                Optimizer::Adam { beta1, beta2, eps } => adam_step(
                    &mut p.data,
                    &g.data,
                    &mut self.m[i],
                    &mut self.v[i],
                    lr,
                    beta1,
                    beta2,
                    eps,
                    self.step,
                ),
                Optimizer::Rmsprop { rho, eps } => rmsprop_step(&mut p.data, &g.data, &mut self.v[i], lr, rho, eps),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 0.01, 0.9, 0.999, 1e-8, 1);
        assert_eq!(p, vec![0.3, -1.2]);
        rmsprop_step(&mut p, &[0.0, 0.0], &mut v, 0.01, 0.9, 1e-8);
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let lr = 1e-3;
        for g in [0.5, -3.0, 0.02] {
            let mut p = vec![1.0f64];
            let (mut m, mut v) = (vec![0.0], vec![0.0]);
            adam_step(&mut p, &[g], &mut m, &mut v, lr, 0.9, 0.999, 1e-8, 1);
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-12);
            assert!((p[0] - (1.0 - lr * g.signum())).abs() < 1e-6 * lr);
        }
    }

    #[test]
    fn adam_two_steps_hand_recurrence() {
        let (lr, b1, b2, eps, g) = (0.1, 0.9, 0.999, 1e-8, 2.0);
        let mut p = vec![0.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut p, &[g], &mut m, &mut v, lr, b1, b2, eps, 1);
        adam_step(&mut p, &[g], &mut m, &mut v, lr, b1, b2, eps, 2);
        // m1 = 0.2, v1 = 0.004; m2 = 0.38, v2 = 0.007996
        let step1 = lr * (0.2 / 0.1) / ((0.004f64 / 0.001).sqrt() + eps);
        let step2 = lr * (0.38 / 0.19) / ((0.007996f64 / (1.0 - 0.998001)).sqrt() + eps);
        assert!((m[0] - 0.38).abs() < 1e-12 && (v[0] - 0.007996).abs() < 1e-12);
        assert!((p[0] + step1 + step2).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_first_step_closed_form() {
        let (lr, rho, eps, g) = (0.01, 0.9, 1e-8, -0.7f64);
        let mut p = vec![0.5f64];
        let mut v = vec![0.0];
        rmsprop_step(&mut p, &[g], &mut v, lr, rho, eps);
        let expected = 0.5 - lr * g / ((1.0 - rho).sqrt() * g.abs() + eps);
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn rmsprop_three_steps_hand_recurrence() {
        let (lr, rho, eps, g) = (0.01, 0.9, 1e-8, 1.5f64);
        let mut p = vec![0.0f64];
        let mut v = vec![0.0];
        for _ in 0..3 {
            rmsprop_step(&mut p, &[g], &mut v, lr, rho, eps);
        }
        // v1 = 0.225, v2 = 0.4275, v3 = 0.60975
        let expected = -lr * g * (1.0 / (0.225f64.sqrt() + eps) + 1.0 / (0.4275f64.sqrt() + eps) + 1.0 / (0.60975f64.sqrt() + eps));
        assert!((v[0] - 0.60975).abs() < 1e-12);
        assert!((p[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn state_tracks_each_tensor() {
        let mut params = vec![Tensor::<f64>::full(&[2], 1.0), Tensor::full(&[3], -1.0)];
        let grads = vec![Tensor::full(&[2], 1.0), Tensor::zeros(&[3])];
        let mut st = OptimizerState::new(Optimizer::adam(), &params);
        st.step(&mut params, &grads, 0.1);
        assert_eq!(st.steps(), 1);
        assert!(params[0].data.iter().all(|&x| (x - 0.9).abs() < 1e-6));
        assert!(params[1].data.iter().all(|&x| x == -1.0));
    }
}
