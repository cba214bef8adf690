//! Layer kernels with their backward passes.
//!
//! Activations are NCHW. Convolutions are cross-correlations; a forward
//! function returns what its backward needs, and every backward returns
//! gradients for the input and for each parameter it consumed.

use super::tensor::{axpy, dot, r, sum, Real, Tensor};
use super::NnError;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
const MATMUL_TILE: usize = 512;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (input + 2 * padding)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

/// Output indices `o` whose input index `o * stride + k - padding` lies in `0..input`.
fn valid_range(k: usize, input: usize, out: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let top = input as isize - 1 + padding as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: ConvSpec,
    depthwise: bool,
) -> Result<Geometry, NnError> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wi, kh, kw) = weights.dims4()?;
    if kh != kw {
        return Err(NnError::ShapeMismatch(format!("non-square kernel {kh}x{kw}")));
    }
    if spec.stride == 0 {
        return Err(NnError::ShapeMismatch("stride must be positive".into()));
    }
    if depthwise {
        if wi != 1 || cout != cin {
            return Err(NnError::ShapeMismatch(format!(
                "depthwise weights {:?} do not match {cin} input channels",
                weights.shape()
            )));
        }
    } else if wi != cin {
        return Err(NnError::ShapeMismatch(format!(
            "weights expect {wi} input channels, input has {cin}"
        )));
    }
    let oh = conv_out_dim(h, kh, spec.stride, spec.padding);
    let ow = conv_out_dim(w, kw, spec.stride, spec.padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            oh,
            ow,
        }),
        _ => Err(NnError::ShapeMismatch(format!(
            "{h}x{w} input too small for kernel {kh} with padding {}",
            spec.padding
        ))),
    }
}

/// Accumulates the correlation of one input plane with one kernel into one output plane.
fn correlate_plane<T: Real>(out: &mut [T], input: &[T], kernel: &[T], g: &Geometry, spec: ConvSpec) {
    let (s, p) = (spec.stride, spec.padding);
    for kh in 0..g.k {
        let (oh_lo, oh_hi) = valid_range(kh, g.h, g.oh, s, p);
        for kw in 0..g.k {
            let wv = kernel[kh * g.k + kw];
            let (ow_lo, ow_hi) = valid_range(kw, g.w, g.ow, s, p);
            if ow_lo >= ow_hi {
                continue;
            }
            for oh in oh_lo..oh_hi {
                let ih = oh * s + kh - p;
                let orow = &mut out[oh * g.ow..(oh + 1) * g.ow];
                let irow = &input[ih * g.w..(ih + 1) * g.w];
                if s == 1 {
                    let off = ow_lo + kw - p;
                    axpy(&mut orow[ow_lo..ow_hi], wv, &irow[off..off + (ow_hi - ow_lo)]);
                } else {
                    for ow in ow_lo..ow_hi {
                        orow[ow] += wv * irow[ow * s + kw - p];
                    }
                }
            }
        }
    }
}

/// Input-gradient and kernel-gradient contributions of one (input plane, output plane) pair.
fn correlate_plane_backward<T: Real>(
    d_in: &mut [T],
    d_kernel: &mut [T],
    input: &[T],
    kernel: &[T],
    d_out: &[T],
    g: &Geometry,
    spec: ConvSpec,
) {
    let (s, p) = (spec.stride, spec.padding);
    for kh in 0..g.k {
        let (oh_lo, oh_hi) = valid_range(kh, g.h, g.oh, s, p);
        for kw in 0..g.k {
            let wv = kernel[kh * g.k + kw];
            let (ow_lo, ow_hi) = valid_range(kw, g.w, g.ow, s, p);
            if ow_lo >= ow_hi {
                continue;
            }
            let mut acc = T::zero();
            for oh in oh_lo..oh_hi {
                let ih = oh * s + kh - p;
                let drow = &d_out[oh * g.ow..(oh + 1) * g.ow];
                let irow = &input[ih * g.w..(ih + 1) * g.w];
                let dirow = &mut d_in[ih * g.w..(ih + 1) * g.w];
                if s == 1 {
                    let off = ow_lo + kw - p;
                    let len = ow_hi - ow_lo;
                    acc += dot(&drow[ow_lo..ow_hi], &irow[off..off + len]);
                    axpy(&mut dirow[off..off + len], wv, &drow[ow_lo..ow_hi]);
                } else {
                    for ow in ow_lo..ow_hi {
                        let iw = ow * s + kw - p;
                        acc += drow[ow] * irow[iw];
                        dirow[iw] += wv * drow[ow];
                    }
                }
            }
            d_kernel[kh * g.k + kw] += acc;
        }
    }
}

fn is_pointwise(g: &Geometry, spec: ConvSpec) -> bool {
    g.k == 1 && spec.stride == 1 && spec.padding == 0
}

/// out[o, :] += sum_i w[o, i] * x[i, :] over one sample, tiled along the spatial axis.
fn pointwise_forward<T: Real>(out: &mut [T], x: &[T], w: &[T], cin: usize, cout: usize, hw: usize) {
    let mut start = 0;
    while start < hw {
        let end = (start + MATMUL_TILE).min(hw);
        for o in 0..cout {
            let orow = &mut out[o * hw + start..o * hw + end];
            for i in 0..cin {
                axpy(orow, w[o * cin + i], &x[i * hw + start..i * hw + end]);
            }
        }
        start = end;
    }
}

fn pointwise_backward<T: Real>(
    dx: &mut [T],
    dw: &mut [T],
    x: &[T],
    w: &[T],
    dy: &[T],
    cin: usize,
    cout: usize,
    hw: usize,
) {
    let mut start = 0;
    while start < hw {
        let end = (start + MATMUL_TILE).min(hw);
        for o in 0..cout {
            let drow = &dy[o * hw + start..o * hw + end];
            for i in 0..cin {
                dw[o * cin + i] += dot(drow, &x[i * hw + start..i * hw + end]);
                axpy(&mut dx[i * hw + start..i * hw + end], w[o * cin + i], drow);
            }
        }
        start = end;
    }
}

/// 2-D cross-correlation; weights `O x I x K x K`, optional bias of length `O`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    let spec = ConvSpec { stride, padding };
    let g = conv_geometry(input, weights, spec, false)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(NnError::ShapeMismatch(format!("bias length {} != {}", b.len(), g.cout)));
        }
    }
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let (in_plane, out_plane, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for n in 0..g.n {
        let x = &input.data[n * g.cin * in_plane..(n + 1) * g.cin * in_plane];
        let y = &mut out.data[n * g.cout * out_plane..(n + 1) * g.cout * out_plane];
        if let Some(b) = bias {
            for o in 0..g.cout {
                y[o * out_plane..(o + 1) * out_plane].fill(b.data[o]);
            }
        }
        if is_pointwise(&g, spec) {
            pointwise_forward(y, x, &weights.data, g.cin, g.cout, in_plane);
            continue;
        }
        for o in 0..g.cout {
            let yo = &mut y[o * out_plane..(o + 1) * out_plane];
            for i in 0..g.cin {
                let kernel = &weights.data[(o * g.cin + i) * kk..(o * g.cin + i + 1) * kk];
                correlate_plane(yo, &x[i * in_plane..(i + 1) * in_plane], kernel, &g, spec);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let spec = ConvSpec { stride, padding };
    let g = conv_geometry(input, weights, spec, false)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(NnError::ShapeMismatch("conv2d grad_out shape".into()));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weights.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let (in_plane, out_plane, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for n in 0..g.n {
        let x = &input.data[n * g.cin * in_plane..(n + 1) * g.cin * in_plane];
        let dy = &grad_out.data[n * g.cout * out_plane..(n + 1) * g.cout * out_plane];
        let dxn = &mut dx.data[n * g.cin * in_plane..(n + 1) * g.cin * in_plane];
        for o in 0..g.cout {
            db.data[o] += sum(&dy[o * out_plane..(o + 1) * out_plane]);
        }
        if is_pointwise(&g, spec) {
            pointwise_backward(dxn, &mut dw.data, x, &weights.data, dy, g.cin, g.cout, in_plane);
            continue;
        }
        for o in 0..g.cout {
            let dyo = &dy[o * out_plane..(o + 1) * out_plane];
            for i in 0..g.cin {
                let widx = (o * g.cin + i) * kk;
                correlate_plane_backward(
                    &mut dxn[i * in_plane..(i + 1) * in_plane],
                    &mut dw.data[widx..widx + kk],
                    &x[i * in_plane..(i + 1) * in_plane],
                    &weights.data[widx..widx + kk],
                    dyo,
                    &g,
                    spec,
                );
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

/// Per-channel spatial correlation; weights `C x 1 x K x K`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    let spec = ConvSpec { stride, padding };
    let g = conv_geometry(input, weights, spec, true)?;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let (in_plane, out_plane, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for n in 0..g.n {
        for c in 0..g.cin {
            let plane = n * g.cin + c;
            correlate_plane(
                &mut out.data[plane * out_plane..(plane + 1) * out_plane],
                &input.data[plane * in_plane..(plane + 1) * in_plane],
                &weights.data[c * kk..(c + 1) * kk],
                &g,
                spec,
            );
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let spec = ConvSpec { stride, padding };
    let g = conv_geometry(input, weights, spec, true)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(NnError::ShapeMismatch("depthwise grad_out shape".into()));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weights.shape());
    let (in_plane, out_plane, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for n in 0..g.n {
        for c in 0..g.cin {
            let plane = n * g.cin + c;
            correlate_plane_backward(
                &mut dx.data[plane * in_plane..(plane + 1) * in_plane],
                &mut dw.data[c * kk..(c + 1) * kk],
                &input.data[plane * in_plane..(plane + 1) * in_plane],
                &weights.data[c * kk..(c + 1) * kk],
                &grad_out.data[plane * out_plane..(plane + 1) * out_plane],
                &g,
                spec,
            );
        }
    }
    Ok((dx, dw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BnState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }
}

pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// `sum((x - mean)^2)` with eight accumulators.
fn sum_sq_dev<T: Real>(a: &[T], mean: T) -> T {
    let mut acc = [T::zero(); 8];
    let mut c = a.chunks_exact(8);
    for x in &mut c {
        for l in 0..8 {
            let d = x[l] - mean;
            acc[l] += d * d;
        }
    }
    let tail: T = c.remainder().iter().map(|&x| (x - mean) * (x - mean)).sum();
    acc.iter().copied().sum::<T>() + tail
}

/// Batch statistics gathered by a train-mode pass, per channel.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl<T: Real> BnState<T> {
    /// Folds one batch's statistics into the running averages.
    pub fn update(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        for (rm, &bm) in self.running_mean.iter_mut().zip(&stats.mean) {
            *rm = r(m * rm.as_f64() + (1.0 - m) * bm);
        }
        for (rv, &bv) in self.running_var.iter_mut().zip(&stats.var) {
            *rv = r(m * rv.as_f64() + (1.0 - m) * bv);
        }
    }
}

/// Normalization without touching the running state; train mode returns the batch statistics.
pub fn batch_norm_apply<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BnState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>, Option<BatchStats>), NnError> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.len() != c || beta.len() != c || state.running_mean.len() != c || state.running_var.len() != c {
        return Err(NnError::ShapeMismatch(format!("batch norm over {c} channels")));
    }
    let plane = h * w;
    let count = n * plane;
    if mode == Mode::Train && count < 2 {
        return Err(NnError::ModeMisuse(
            "train-mode batch norm needs more than one value per channel".into(),
        ));
    }
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];
    let mut stats = BatchStats {
        mean: Vec::new(),
        var: Vec::new(),
    };
    for ch in 0..c {
        let planes = (0..n).map(|b| &input.data[(b * c + ch) * plane..(b * c + ch + 1) * plane]);
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = planes.clone().map(|p| sum(p).as_f64()).sum::<f64>() / count as f64;
                let var = planes.map(|p| sum_sq_dev(p, r(mean)).as_f64()).sum::<f64>() / count as f64;
                stats.mean.push(mean);
                stats.var.push(var);
                (mean, var)
            }
            Mode::Infer => (state.running_mean[ch].as_f64(), state.running_var[ch].as_f64()),
        };
        let istd = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = r(istd);
        let (mean_t, istd_t) = (r::<T>(mean), r::<T>(istd));
        let (g, b) = (gamma.data[ch], beta.data[ch]);
        for bi in 0..n {
            let range = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
            for ((xh, y), &x) in x_hat.data[range.clone()]
                .iter_mut()
                .zip(&mut out.data[range.clone()])
                .zip(&input.data[range])
            {
                *xh = (x - mean_t) * istd_t;
                *y = g * *xh + b;
            }
        }
    }
    let stats = (mode == Mode::Train).then_some(stats);
    Ok((out, BnCache { x_hat, inv_std, mode }, stats))
}

pub fn batch_norm_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BnState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let (out, cache, stats) = batch_norm_apply(input, gamma, beta, state, mode)?;
    if let Some(stats) = stats {
        state.update(&stats);
    }
    Ok((out, cache))
}

/// Batch normalization; `Train` normalizes by batch statistics and updates the
/// running averages, `Infer` uses the running averages.
pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BnState<T>,
    mode: Mode,
) -> Result<Tensor<T>, NnError> {
    batch_norm_forward(input, gamma, beta, state, mode).map(|(out, _)| out)
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for bi in 0..n {
            let range = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
            sum_dy += sum(&grad_out.data[range.clone()]);
            sum_dy_xhat += dot(&grad_out.data[range.clone()], &cache.x_hat.data[range]);
        }
        dgamma.data[ch] = sum_dy_xhat;
        dbeta.data[ch] = sum_dy;
        let scale = gamma.data[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Infer => {
                for bi in 0..n {
                    let range = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
                    for (d, &dy) in dx.data[range.clone()].iter_mut().zip(&grad_out.data[range]) {
                        *d = scale * dy;
                    }
                }
            }
            Mode::Train => {
                let mean_dy = sum_dy / r(count);
                let mean_dy_xhat = sum_dy_xhat / r(count);
                for bi in 0..n {
                    let range = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
                    for ((d, &dy), &xh) in dx.data[range.clone()]
                        .iter_mut()
                        .zip(&grad_out.data[range.clone()])
                        .zip(&cache.x_hat.data[range])
                    {
                        *d = scale * (dy - mean_dy - xh * mean_dy_xhat);
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    x.sigmoid()
}

/// `x * sigmoid(x)` elementwise.
pub fn swish<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x * sigmoid(x))
}

pub fn swish_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut out = grad_out.clone();
    for (d, &x) in out.data.iter_mut().zip(&input.data) {
        let s = sigmoid(x);
        *d *= s + x * s * (T::one() - s);
    }
    out
}

/// Mean over the spatial axes: `N x C x H x W -> N x C`.
pub fn global_average_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    if plane == 0 {
        return Err(NnError::ShapeMismatch("empty spatial extent".into()));
    }
    let inv = r::<T>(1.0 / plane as f64);
    let data = input.data.chunks_exact(plane).map(|p| sum(p) * inv).collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_average_pool_backward<T: Real>(grad_out: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>, NnError> {
    let (n, c) = grad_out.dims2()?;
    let plane = h * w;
    let inv = r::<T>(1.0 / plane as f64);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for (p, &g) in out.data.chunks_exact_mut(plane).zip(&grad_out.data) {
        p.fill(g * inv);
    }
    Ok(out)
}

/// `input * W^T + bias`; input `N x C`, weights `K x C`.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c) = input.dims2()?;
    let (k, wc) = weights.dims2()?;
    if wc != c || bias.len() != k {
        return Err(NnError::ShapeMismatch(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let x = &input.data[i * c..(i + 1) * c];
        for j in 0..k {
            out.data[i * k + j] = dot(x, &weights.data[j * c..(j + 1) * c]) + bias.data[j];
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_weights, d_bias)`.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, c) = input.dims2()?;
    let (k, _) = weights.dims2()?;
    let mut dx = Tensor::zeros(&[n, c]);
    let mut dw = Tensor::zeros(&[k, c]);
    let mut db = Tensor::zeros(&[k]);
    for i in 0..n {
        let x = &input.data[i * c..(i + 1) * c];
        for j in 0..k {
            let g = grad_out.data[i * k + j];
            db.data[j] += g;
            axpy(&mut dw.data[j * c..(j + 1) * c], g, x);
            axpy(&mut dx.data[i * c..(i + 1) * c], g, &weights.data[j * c..(j + 1) * c]);
        }
    }
    Ok((dx, dw, db))
}

/// Squeeze-excitation parameters: reduce `R x C` + `R`, expand `C x R` + `C`.
pub struct SeWeights<'a, T> {
    pub reduce_w: &'a Tensor<T>,
    pub reduce_b: &'a Tensor<T>,
    pub expand_w: &'a Tensor<T>,
    pub expand_b: &'a Tensor<T>,
}

pub struct SeCache<T> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    reduced_pre: Tensor<T>,
    reduced: Tensor<T>,
    gate: Tensor<T>,
}

pub struct SeGrads<T> {
    pub input: Tensor<T>,
    pub reduce_w: Tensor<T>,
    pub reduce_b: Tensor<T>,
    pub expand_w: Tensor<T>,
    pub expand_b: Tensor<T>,
}

/// Reduced width of a squeeze-excitation block on `channels` inputs.
pub fn se_reduced_dim(channels: usize, se_ratio: f64) -> usize {
    ((channels as f64 * se_ratio).round() as usize).max(1)
}

pub fn squeeze_excite_forward<T: Real>(
    input: &Tensor<T>,
    wts: &SeWeights<'_, T>,
) -> Result<(Tensor<T>, SeCache<T>), NnError> {
    let (n, c, h, w) = input.dims4()?;
    let pooled = global_average_pool(input)?;
    let reduced_pre = dense(&pooled, wts.reduce_w, wts.reduce_b)?;
    let reduced = swish(&reduced_pre);
    let gate_pre = dense(&reduced, wts.expand_w, wts.expand_b)?;
    if gate_pre.shape() != [n, c] {
        return Err(NnError::ShapeMismatch("squeeze-excite expand width".into()));
    }
    let gate = gate_pre.map(sigmoid);
    let plane = h * w;
    let mut out = input.clone();
    for (p, &s) in out.data.chunks_exact_mut(plane).zip(&gate.data) {
        for x in p {
            *x *= s;
        }
    }
    Ok((
        out,
        SeCache {
            input: input.clone(),
            pooled,
            reduced_pre,
            reduced,
            gate,
        },
    ))
}

/// Channel gating `x * sigmoid(W2 swish(W1 GAP(x) + b1) + b2)`.
pub fn squeeze_excite<T: Real>(input: &Tensor<T>, wts: &SeWeights<'_, T>) -> Result<Tensor<T>, NnError> {
    squeeze_excite_forward(input, wts).map(|(out, _)| out)
}

pub fn squeeze_excite_backward<T: Real>(
    cache: &SeCache<T>,
    wts: &SeWeights<'_, T>,
    grad_out: &Tensor<T>,
) -> Result<SeGrads<T>, NnError> {
    let (_, _, h, w) = cache.input.dims4()?;
    let plane = h * w;
    let mut dx = grad_out.clone();
    let mut dgate = Tensor::zeros(cache.gate.shape());
    for (((dxp, xp), &s), ds) in dx
        .data
        .chunks_exact_mut(plane)
        .zip(cache.input.data.chunks_exact(plane))
        .zip(&cache.gate.data)
        .zip(dgate.data.iter_mut())
    {
        *ds = dot(dxp, xp);
        for d in dxp.iter_mut() {
            *d *= s;
        }
    }
    let mut dgate_pre = dgate;
    for (d, &s) in dgate_pre.data.iter_mut().zip(&cache.gate.data) {
        *d *= s * (T::one() - s);
    }
    let (dreduced, dexpand_w, dexpand_b) = dense_backward(&cache.reduced, wts.expand_w, &dgate_pre)?;
    let dreduced_pre = swish_backward(&cache.reduced_pre, &dreduced);
    let (dpooled, dreduce_w, dreduce_b) = dense_backward(&cache.pooled, wts.reduce_w, &dreduced_pre)?;
    let dpool_in = global_average_pool_backward(&dpooled, h, w)?;
    for (d, &g) in dx.data.iter_mut().zip(&dpool_in.data) {
        *d += g;
    }
    Ok(SeGrads {
        input: dx,
        reduce_w: dreduce_w,
        reduce_b: dreduce_b,
        expand_w: dexpand_w,
        expand_b: dexpand_b,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data.chunks_exact_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    Ok(out)
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Mean of `-ln p[label]` over the batch, with `p` floored at 1e-12.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64, NnError> {
    let (n, k) = probs.dims2()?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(NnError::LabelOutOfRange { label: y, classes: k });
        }
        total -= probs.data[i * k + y].as_f64().max(PROB_FLOOR).ln();
    }
    Ok(total / n as f64)
}

/// Gradient of mean cross-entropy with respect to the logits: `(p - onehot(y)) / N`.
pub fn softmax_cross_entropy_grad<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, NnError> {
    let (n, k) = probs.dims2()?;
    let inv_n = r::<T>(1.0 / n as f64);
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(NnError::LabelOutOfRange { label: y, classes: k });
        }
        g.data[i * k + y] -= T::one();
    }
    for x in &mut g.data {
        *x *= inv_n;
    }
    Ok(g)
}
