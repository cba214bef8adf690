//! Central finite-difference checks of the analytic gradients, in f64.

use rand::Rng;
use serde::Serialize;

use super::network::{Network, NetworkConfig};
use super::ops::{self, BnState, Mode, SeWeights};
use super::tensor::Tensor;
use super::{he_init, NnError};

pub const FD_STEP: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Compares `analytic` with central differences of `f` around `x`, one coordinate at a time.
pub fn compare(name: &str, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> CheckResult {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    CheckResult {
        name: name.to_string(),
        checked: x.len(),
        max_rel_error: worst,
    }
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).expect("shape matches data")
}

/// Fixed random projection so every layer output reduces to a scalar loss.
struct Projection(Tensor<f64>);

impl Projection {
    fn new(shape: &[usize], seed: u64) -> Self {
        Self(he_init(shape, seed))
    }
    fn loss(&self, y: &Tensor<f64>) -> f64 {
        y.data.iter().zip(&self.0.data).map(|(a, b)| a * b).sum()
    }
}

/// Gradient checks of every layer kernel in isolation; batch norm in both modes.
pub fn layer_checks(seed: u64) -> Result<Vec<CheckResult>, NnError> {
    let s = |i: u64| crate::seed::derive(seed, &[i]);
    let mut out = Vec::new();

    for (stride, padding, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1)] {
        let x = he_init::<f64>(&[2, 3, 7, 6], s(1));
        let w = he_init::<f64>(&[4, 3, k, k], s(2));
        let b = he_init::<f64>(&[4, 1], s(3));
        let b = t(&[4], &b.data);
        let y = ops::conv2d(&x, &w, Some(&b), stride, padding)?;
        let proj = Projection::new(y.shape(), s(4));
        let g = ops::conv2d_backward(&x, &w, stride, padding, &proj.0)?;
        let tag = format!("conv2d k{k} s{stride} p{padding}");
        out.push(compare(&format!("{tag} input"), &x.data, &g.input.data, |v| {
            proj.loss(&ops::conv2d(&t(x.shape(), v), &w, Some(&b), stride, padding).unwrap())
        }));
        out.push(compare(&format!("{tag} weights"), &w.data, &g.weights.data, |v| {
            proj.loss(&ops::conv2d(&x, &t(w.shape(), v), Some(&b), stride, padding).unwrap())
        }));
        out.push(compare(&format!("{tag} bias"), &b.data, &g.bias.data, |v| {
            proj.loss(&ops::conv2d(&x, &w, Some(&t(&[4], v)), stride, padding).unwrap())
        }));
    }

    for stride in [1, 2] {
        let x = he_init::<f64>(&[2, 3, 7, 8], s(5));
        let w = he_init::<f64>(&[3, 1, 3, 3], s(6));
        let y = ops::depthwise_conv2d(&x, &w, stride, 1)?;
        let proj = Projection::new(y.shape(), s(7));
        let (dx, dw) = ops::depthwise_conv2d_backward(&x, &w, stride, 1, &proj.0)?;
        out.push(compare(&format!("depthwise s{stride} input"), &x.data, &dx.data, |v| {
            proj.loss(&ops::depthwise_conv2d(&t(x.shape(), v), &w, stride, 1).unwrap())
        }));
        out.push(compare(&format!("depthwise s{stride} weights"), &w.data, &dw.data, |v| {
            proj.loss(&ops::depthwise_conv2d(&x, &t(w.shape(), v), stride, 1).unwrap())
        }));
    }

    for mode in [Mode::Train, Mode::Infer] {
        let x = he_init::<f64>(&[3, 2, 3, 4], s(8));
        let gamma = t(&[2], &[1.3, 0.7]);
        let beta = t(&[2], &[0.2, -0.4]);
        let state = BnState {
            running_mean: vec![0.1, -0.3],
            running_var: vec![0.8, 1.9],
        };
        let (y, cache, _) = ops::batch_norm_apply(&x, &gamma, &beta, &state, mode)?;
        let proj = Projection::new(y.shape(), s(9));
        let (dx, dg, db) = ops::batch_norm_backward(&cache, &gamma, &proj.0)?;
        let run = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            proj.loss(&ops::batch_norm_apply(x, g, b, &state, mode).unwrap().0)
        };
        let tag = format!("batch_norm {mode:?}");
        out.push(compare(&format!("{tag} input"), &x.data, &dx.data, |v| run(&t(x.shape(), v), &gamma, &beta)));
        out.push(compare(&format!("{tag} gamma"), &gamma.data, &dg.data, |v| run(&x, &t(&[2], v), &beta)));
        out.push(compare(&format!("{tag} beta"), &beta.data, &db.data, |v| run(&x, &gamma, &t(&[2], v))));
    }

    {
        let x = he_init::<f64>(&[2, 3, 4, 5], s(10)).map(|v| v * 3.0);
        let proj = Projection::new(x.shape(), s(11));
        let dx = ops::swish_backward(&x, &proj.0);
        out.push(compare("swish", &x.data, &dx.data, |v| proj.loss(&ops::swish(&t(x.shape(), v)))));
    }

    {
        let x = he_init::<f64>(&[2, 4, 3, 5], s(12));
        let rw = he_init::<f64>(&[2, 4], s(13));
        let rb = t(&[2], &[0.1, -0.2]);
        let ew = he_init::<f64>(&[4, 2], s(14));
        let eb = t(&[4], &[0.3, 0.0, -0.1, 0.2]);
        let weights = SeWeights {
            reduce_w: &rw,
            reduce_b: &rb,
            expand_w: &ew,
            expand_b: &eb,
        };
        let (y, cache) = ops::squeeze_excite_forward(&x, &weights)?;
        let proj = Projection::new(y.shape(), s(15));
        let g = ops::squeeze_excite_backward(&cache, &weights, &proj.0)?;
        let run = |x: &Tensor<f64>, rw: &Tensor<f64>, rb: &Tensor<f64>, ew: &Tensor<f64>, eb: &Tensor<f64>| {
            let w = SeWeights {
                reduce_w: rw,
                reduce_b: rb,
                expand_w: ew,
                expand_b: eb,
            };
            proj.loss(&ops::squeeze_excite(x, &w).unwrap())
        };
        out.push(compare("squeeze_excite input", &x.data, &g.input.data, |v| {
            run(&t(x.shape(), v), &rw, &rb, &ew, &eb)
        }));
        out.push(compare("squeeze_excite reduce.weight", &rw.data, &g.reduce_w.data, |v| {
            run(&x, &t(rw.shape(), v), &rb, &ew, &eb)
        }));
        out.push(compare("squeeze_excite reduce.bias", &rb.data, &g.reduce_b.data, |v| {
            run(&x, &rw, &t(rb.shape(), v), &ew, &eb)
        }));
        out.push(compare("squeeze_excite expand.weight", &ew.data, &g.expand_w.data, |v| {
            run(&x, &rw, &rb, &t(ew.shape(), v), &eb)
        }));
        out.push(compare("squeeze_excite expand.bias", &eb.data, &g.expand_b.data, |v| {
            run(&x, &rw, &rb, &ew, &t(eb.shape(), v))
        }));
    }

    {
        let x = he_init::<f64>(&[2, 3, 4, 5], s(16));
        let y = ops::global_average_pool(&x)?;
        let proj = Projection::new(y.shape(), s(17));
        let dx = ops::global_average_pool_backward(&proj.0, 4, 5)?;
        out.push(compare("global_average_pool", &x.data, &dx.data, |v| {
            proj.loss(&ops::global_average_pool(&t(x.shape(), v)).unwrap())
        }));
    }

    {
        let x = he_init::<f64>(&[3, 4], s(18));
        let w = he_init::<f64>(&[5, 4], s(19));
        let b = t(&[5], &[0.1, 0.2, -0.3, 0.0, 0.5]);
        let y = ops::dense(&x, &w, &b)?;
        let proj = Projection::new(y.shape(), s(20));
        let (dx, dw, db) = ops::dense_backward(&x, &w, &proj.0)?;
        out.push(compare("dense input", &x.data, &dx.data, |v| {
            proj.loss(&ops::dense(&t(x.shape(), v), &w, &b).unwrap())
        }));
        out.push(compare("dense weights", &w.data, &dw.data, |v| {
            proj.loss(&ops::dense(&x, &t(w.shape(), v), &b).unwrap())
        }));
        out.push(compare("dense bias", &b.data, &db.data, |v| {
            proj.loss(&ops::dense(&x, &w, &t(&[5], v)).unwrap())
        }));
    }

    {
        let z = he_init::<f64>(&[3, 5], s(21)).map(|v| v * 2.0);
        let labels = [4, 0, 2];
        let dz = ops::softmax_cross_entropy_grad(&ops::softmax(&z)?, &labels)?;
        out.push(compare("softmax cross_entropy", &z.data, &dz.data, |v| {
            ops::cross_entropy(&ops::softmax(&t(z.shape(), v)).unwrap(), &labels).unwrap()
        }));
    }

    Ok(out)
}

/// Micro network with non-trivial normalization state, a batch and labels for a full-network check.
pub fn micro_setup(seed: u64) -> Result<(Network<f64>, Tensor<f64>, Vec<usize>), NnError> {
    let n_classes = 3;
    let mut net = Network::<f64>::new(NetworkConfig::micro(n_classes, 8), seed)?;
    let mut rng = crate::seed::rng(crate::seed::derive(seed, &[1]));
    for name in net.param_names().to_vec() {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            let base = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
            for v in &mut net.param_mut(&name).expect("listed name").data {
                *v = base + rng.gen_range(-0.3..0.3);
            }
        }
    }
    for st in net.bn_states_mut() {
        for m in &mut st.running_mean {
            *m = rng.gen_range(-0.2..0.2);
        }
        for v in &mut st.running_var {
            *v = rng.gen_range(0.5..2.0);
        }
    }
    net.set_mode(Mode::Infer);
    let x = he_init(&[3, 1, 8, 12], crate::seed::derive(seed, &[2]));
    Ok((net, x, vec![0, 2, 1]))
}

/// Every parameter of the micro network against central differences, frozen statistics.
pub fn network_check(seed: u64) -> Result<Vec<CheckResult>, NnError> {
    let (net, x, labels) = micro_setup(seed)?;
    let analytic = net.backward_frozen(&x, &labels)?;
    let mut probe = net.clone();
    let mut out = Vec::new();
    for (i, name) in net.param_names().iter().enumerate() {
        let base = net.params()[i].data.clone();
        let res = compare(name, &base, &analytic.grads.tensors[i].data, |v| {
            probe.params_mut()[i].data.copy_from_slice(v);
            probe.loss(&x, &labels).expect("valid batch")
        });
        probe.params_mut()[i].data.copy_from_slice(&base);
        out.push(res);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for r in layer_checks(1).unwrap() {
            assert!(r.passed(), "{} rel err {:e}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn full_micro_network_passes() {
        let results = network_check(2).unwrap();
        assert!(results.iter().all(|r| r.checked > 0));
        for r in results {
            assert!(r.passed(), "{} rel err {:e}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
