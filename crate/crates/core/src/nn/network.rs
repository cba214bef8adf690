use serde::{Deserialize, Serialize};

use super::ops::{
    self, batch_norm_apply, batch_norm_backward, BatchStats, BnCache, BnState, Mode, SeCache, SeWeights,
};
use super::tensor::{Real, Tensor};
use super::{he_init, NnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub expand_ratio: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub repeats: usize,
    pub se_ratio: f64,
}

impl BlockSpec {
    pub fn new(expand_ratio: usize, out_channels: usize, stride: usize, repeats: usize, se_ratio: f64) -> Self {
        Self {
            expand_ratio,
            out_channels,
            stride,
            repeats,
            se_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_classes: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub head_channels: usize,
    pub in_mels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_classes: 182,
            stem_channels: 16,
            blocks: vec![
                BlockSpec::new(1, 16, 1, 1, 0.25),
                BlockSpec::new(4, 24, 2, 2, 0.25),
                BlockSpec::new(4, 40, 2, 2, 0.25),
                BlockSpec::new(4, 80, 2, 2, 0.25),
            ],
            head_channels: 128,
            in_mels: 64,
        }
    }
}

/// One MBConv instance after expanding `repeats`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockShape {
    in_ch: usize,
    mid: usize,
    out_ch: usize,
    stride: usize,
    se_dim: usize,
    expand: bool,
}

impl BlockShape {
    fn residual(&self) -> bool {
        self.stride == 1 && self.in_ch == self.out_ch
    }
}

impl NetworkConfig {
    /// Same block pattern as the default at a width small enough for finite differences.
    pub fn micro(n_classes: usize, in_mels: usize) -> Self {
        Self {
            n_classes,
            stem_channels: 4,
            blocks: vec![BlockSpec::new(1, 4, 1, 1, 0.5), BlockSpec::new(3, 6, 2, 2, 0.25)],
            head_channels: 8,
            in_mels,
        }
    }

    pub fn with_classes(mut self, n_classes: usize) -> Self {
        self.n_classes = n_classes;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes {} < 2", self.n_classes));
        }
        if self.stem_channels == 0 || self.head_channels == 0 || self.in_mels == 0 {
            return bad("channel counts and in_mels must be positive".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !matches!(b.stride, 1 | 2) {
                return bad(format!("block {i}: stride {} not in {{1, 2}}", b.stride));
            }
            if !(b.se_ratio > 0.0 && b.se_ratio <= 1.0) {
                return bad(format!("block {i}: se_ratio {} not in (0, 1]", b.se_ratio));
            }
            if b.expand_ratio == 0 || b.out_channels == 0 || b.repeats == 0 {
                return bad(format!("block {i}: expand_ratio, out_channels and repeats must be positive"));
            }
        }
        Ok(())
    }

    fn block_shapes(&self) -> Vec<BlockShape> {
        let mut shapes = Vec::new();
        let mut in_ch = self.stem_channels;
        for b in &self.blocks {
            for rep in 0..b.repeats {
                let mid = in_ch * b.expand_ratio;
                shapes.push(BlockShape {
                    in_ch,
                    mid,
                    out_ch: b.out_channels,
                    stride: if rep == 0 { b.stride } else { 1 },
                    se_dim: ops::se_reduced_dim(mid, b.se_ratio),
                    expand: b.expand_ratio > 1,
                });
                in_ch = b.out_channels;
            }
        }
        shapes
    }

    /// Product of all strides, stem included.
    pub fn total_stride(&self) -> usize {
        self.blocks.iter().fold(2, |acc, b| acc * b.stride)
    }

    pub fn min_frames(&self) -> usize {
        self.total_stride()
    }

    /// Trainable parameter count by closed-form arithmetic on the config.
    pub fn param_count(&self) -> usize {
        let bn = |c: usize| 2 * c;
        let mut total = self.stem_channels * 9 + bn(self.stem_channels);
        for s in self.block_shapes() {
            if s.expand {
                total += s.in_ch * s.mid + bn(s.mid);
            }
            total += s.mid * 9 + bn(s.mid);
            total += 2 * s.se_dim * s.mid + s.se_dim + s.mid;
            total += s.mid * s.out_ch + bn(s.out_ch);
        }
        let last = self.blocks.last().map_or(self.stem_channels, |b| b.out_channels);
        total += last * self.head_channels + bn(self.head_channels);
        total + self.head_channels * self.n_classes + self.n_classes
    }
}

/// Convolution, batch norm and optional swish. Indices point into the network's
/// parameter and running-state tables.
#[derive(Debug, Clone)]
struct ConvBn {
    weight: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    stride: usize,
    padding: usize,
    depthwise: bool,
    act: bool,
}

#[derive(Debug, Clone)]
struct Se {
    reduce_w: usize,
    reduce_b: usize,
    expand_w: usize,
    expand_b: usize,
}

#[derive(Debug, Clone)]
struct Block {
    expand: Option<ConvBn>,
    dw: ConvBn,
    se: Se,
    project: ConvBn,
    residual: bool,
}

struct ConvBnCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    pre_act: Option<Tensor<T>>,
}

struct BlockCache<T> {
    expand: Option<ConvBnCache<T>>,
    dw: ConvBnCache<T>,
    se: SeCache<T>,
    project: ConvBnCache<T>,
}

struct Caches<T> {
    stem: ConvBnCache<T>,
    blocks: Vec<BlockCache<T>>,
    head: ConvBnCache<T>,
    head_hw: (usize, usize),
    pooled: Tensor<T>,
}

/// Gradients keyed by parameter name, in the network's parameter order.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Loss, logits and parameter gradients of one batch.
pub struct Backward<T> {
    pub loss: f64,
    pub logits: Tensor<T>,
    pub grads: ParamGrads<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<BnState<T>>,
    mode: Mode,
    stem: ConvBn,
    blocks: Vec<Block>,
    head: ConvBn,
    fc_w: usize,
    fc_b: usize,
}

struct Builder<T> {
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<BnState<T>>,
}

impl<T: Real> Builder<T> {
    fn param(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.names.push(name);
        self.params.push(tensor);
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        depthwise: bool,
        act: bool,
    ) -> ConvBn {
        let wshape = if depthwise { [cout, 1, k, k] } else { [cout, cin, k, k] };
        let weight = self.param(format!("{prefix}.conv.weight"), Tensor::zeros(&wshape));
        let gamma = self.param(format!("{prefix}.bn.gamma"), Tensor::full(&[cout], T::one()));
        let beta = self.param(format!("{prefix}.bn.beta"), Tensor::zeros(&[cout]));
        self.bn_names.push(format!("{prefix}.bn"));
        self.bn.push(BnState::new(cout));
        ConvBn {
            weight,
            gamma,
            beta,
            bn: self.bn.len() - 1,
            stride,
            padding: k / 2,
            depthwise,
            act,
        }
    }
}

impl<T: Real> Network<T> {
    /// Network with conv and dense weights drawn by `he_init`, unit BN scales and zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeroed(config)?;
        for (i, (name, p)) in net.names.iter().zip(net.params.iter_mut()).enumerate() {
            if name.ends_with(".weight") {
                *p = he_init(p.shape(), crate::seed::derive(seed, &[i as u64]));
            }
        }
        Ok(net)
    }

    /// Network with every weight zero, unit BN scales and default running statistics.
    pub fn zeroed(config: NetworkConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            bn_names: Vec::new(),
            bn: Vec::new(),
        };
        let stem = b.conv_bn("stem", 1, config.stem_channels, 3, 2, false, true);
        let mut blocks = Vec::new();
        for (i, s) in config.block_shapes().into_iter().enumerate() {
            let p = format!("blocks.{i}");
            let expand = s
                .expand
                .then(|| b.conv_bn(&format!("{p}.expand"), s.in_ch, s.mid, 1, 1, false, true));
            let dw = b.conv_bn(&format!("{p}.dw"), s.mid, s.mid, 3, s.stride, true, true);
            let se = Se {
                reduce_w: b.param(format!("{p}.se.reduce.weight"), Tensor::zeros(&[s.se_dim, s.mid])),
                reduce_b: b.param(format!("{p}.se.reduce.bias"), Tensor::zeros(&[s.se_dim])),
                expand_w: b.param(format!("{p}.se.expand.weight"), Tensor::zeros(&[s.mid, s.se_dim])),
                expand_b: b.param(format!("{p}.se.expand.bias"), Tensor::zeros(&[s.mid])),
            };
            let project = b.conv_bn(&format!("{p}.project"), s.mid, s.out_ch, 1, 1, false, false);
            blocks.push(Block {
                expand,
                dw,
                se,
                project,
                residual: s.residual(),
            });
        }
        let last = config.blocks.last().map_or(config.stem_channels, |bl| bl.out_channels);
        let head = b.conv_bn("head", last, config.head_channels, 1, 1, false, true);
        let fc_w = b.param(
            "classifier.weight".into(),
            Tensor::zeros(&[config.n_classes, config.head_channels]),
        );
        let fc_b = b.param("classifier.bias".into(), Tensor::zeros(&[config.n_classes]));
        Ok(Self {
            config,
            names: b.names,
            params: b.params,
            bn_names: b.bn_names,
            bn: b.bn,
            mode: Mode::Train,
            stem,
            blocks,
            head,
            fc_w,
            fc_b,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    /// Sum of parameter tensor sizes.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Names of the batch-norm layers, e.g. `stem.bn`, in the order of `bn_states`.
    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_states(&self) -> &[BnState<T>] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnState<T>] {
        &mut self.bn
    }

    /// Same weights and statistics in another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let cast_state = |s: &BnState<T>| BnState {
            running_mean: s.running_mean.iter().map(|x| U::of_f64(x.as_f64())).collect(),
            running_var: s.running_var.iter().map(|x| U::of_f64(x.as_f64())).collect(),
        };
        Network {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            bn_names: self.bn_names.clone(),
            bn: self.bn.iter().map(cast_state).collect(),
            mode: self.mode,
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
            fc_w: self.fc_w,
            fc_b: self.fc_b,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h != self.config.in_mels {
            return Err(NnError::ShapeMismatch(format!(
                "expected N x 1 x {} x frames, got {:?}",
                self.config.in_mels,
                x.shape()
            )));
        }
        let min = self.config.min_frames();
        if w < min {
            return Err(NnError::TooFewFrames { frames: w, min });
        }
        Ok(())
    }

    fn conv_bn_forward(
        &self,
        layer: &ConvBn,
        x: &Tensor<T>,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<(Tensor<T>, ConvBnCache<T>), NnError> {
        let w = &self.params[layer.weight];
        let z = if layer.depthwise {
            ops::depthwise_conv2d(x, w, layer.stride, layer.padding)?
        } else {
            ops::conv2d(x, w, None, layer.stride, layer.padding)?
        };
        let (y, bn_cache, batch) = batch_norm_apply(
            &z,
            &self.params[layer.gamma],
            &self.params[layer.beta],
            &self.bn[layer.bn],
            mode,
        )?;
        if let Some(b) = batch {
            stats.push((layer.bn, b));
        }
        let (out, pre_act) = if layer.act { (ops::swish(&y), Some(y)) } else { (y, None) };
        Ok((
            out,
            ConvBnCache {
                input: x.clone(),
                bn: bn_cache,
                pre_act,
            },
        ))
    }

    fn conv_bn_backward(
        &self,
        layer: &ConvBn,
        cache: &ConvBnCache<T>,
        grad: Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Result<Tensor<T>, NnError> {
        let grad = match &cache.pre_act {
            Some(pre) => ops::swish_backward(pre, &grad),
            None => grad,
        };
        let (dz, dgamma, dbeta) = batch_norm_backward(&cache.bn, &self.params[layer.gamma], &grad)?;
        grads[layer.gamma] = dgamma;
        grads[layer.beta] = dbeta;
        let w = &self.params[layer.weight];
        let dx = if layer.depthwise {
            let (dx, dw) = ops::depthwise_conv2d_backward(&cache.input, w, layer.stride, layer.padding, &dz)?;
            grads[layer.weight] = dw;
            dx
        } else {
            let g = ops::conv2d_backward(&cache.input, w, layer.stride, layer.padding, &dz)?;
            grads[layer.weight] = g.weights;
            g.input
        };
        Ok(dx)
    }

    fn se_weights(&self, se: &Se) -> SeWeights<'_, T> {
        SeWeights {
            reduce_w: &self.params[se.reduce_w],
            reduce_b: &self.params[se.reduce_b],
            expand_w: &self.params[se.expand_w],
            expand_b: &self.params[se.expand_b],
        }
    }

    fn run(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Caches<T>, Vec<(usize, BatchStats)>), NnError> {
        self.check_input(x)?;
        let mut stats = Vec::new();
        let (mut h, stem) = self.conv_bn_forward(&self.stem, x, mode, &mut stats)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = h;
            let (mut y, expand) = match &block.expand {
                Some(layer) => {
                    let (y, c) = self.conv_bn_forward(layer, &input, mode, &mut stats)?;
                    (y, Some(c))
                }
                None => (input.clone(), None),
            };
            let dw;
            (y, dw) = self.conv_bn_forward(&block.dw, &y, mode, &mut stats)?;
            let se;
            (y, se) = ops::squeeze_excite_forward(&y, &self.se_weights(&block.se))?;
            let project;
            (y, project) = self.conv_bn_forward(&block.project, &y, mode, &mut stats)?;
            if block.residual {
                for (o, &i) in y.data.iter_mut().zip(&input.data) {
                    *o += i;
                }
            }
            block_caches.push(BlockCache { expand, dw, se, project });
            h = y;
        }
        let (h, head) = self.conv_bn_forward(&self.head, &h, mode, &mut stats)?;
        let (_, _, hh, hw) = h.dims4()?;
        let pooled = ops::global_average_pool(&h)?;
        let logits = ops::dense(&pooled, &self.params[self.fc_w], &self.params[self.fc_b])?;
        let caches = Caches {
            stem,
            blocks: block_caches,
            head,
            head_hw: (hh, hw),
            pooled,
        };
        Ok((logits, caches, stats))
    }

    fn apply_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (i, s) in stats {
            self.bn[*i].update(s);
        }
    }

    /// Logits in the current mode; train mode updates the running statistics.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (logits, _, stats) = self.run(x, self.mode)?;
        self.apply_stats(&stats);
        Ok(logits)
    }

    /// Infer-mode logits regardless of the mode flag.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.run(x, Mode::Infer).map(|(logits, _, _)| logits)
    }

    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::softmax(&self.infer(x)?)
    }

    /// Mean cross-entropy of a batch and its exact gradient for every parameter.
    /// Train mode uses batch statistics and folds them into the running averages.
    pub fn backward(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<Backward<T>, NnError> {
        let (result, stats) = self.backward_impl(x, labels, self.mode)?;
        self.apply_stats(&stats);
        Ok(result)
    }

    /// Gradients with frozen running statistics; leaves the network untouched.
    pub fn backward_frozen(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Backward<T>, NnError> {
        self.backward_impl(x, labels, Mode::Infer).map(|(b, _)| b)
    }

    /// Mean cross-entropy under frozen statistics.
    pub fn loss(&self, x: &Tensor<T>, labels: &[usize]) -> Result<f64, NnError> {
        ops::cross_entropy(&ops::softmax(&self.infer(x)?)?, labels)
    }

    fn backward_impl(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(Backward<T>, Vec<(usize, BatchStats)>), NnError> {
        let (n, _, _, _) = x.dims4()?;
        if labels.len() != n {
            return Err(NnError::ShapeMismatch(format!("{} labels for batch of {n}", labels.len())));
        }
        let (logits, caches, stats) = self.run(x, mode)?;
        let probs = ops::softmax(&logits)?;
        let loss = ops::cross_entropy(&probs, labels)?;
        let dlogits = ops::softmax_cross_entropy_grad(&probs, labels)?;

        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let (dpooled, dw, db) = ops::dense_backward(&caches.pooled, &self.params[self.fc_w], &dlogits)?;
        grads[self.fc_w] = dw;
        grads[self.fc_b] = db;
        let (hh, hw) = caches.head_hw;
        let g = ops::global_average_pool_backward(&dpooled, hh, hw)?;
        let mut g = self.conv_bn_backward(&self.head, &caches.head, g, &mut grads)?;
        for (block, cache) in self.blocks.iter().zip(&caches.blocks).rev() {
            let residual = block.residual.then(|| g.clone());
            let mut d = self.conv_bn_backward(&block.project, &cache.project, g, &mut grads)?;
            let se = ops::squeeze_excite_backward(&cache.se, &self.se_weights(&block.se), &d)?;
            grads[block.se.reduce_w] = se.reduce_w;
            grads[block.se.reduce_b] = se.reduce_b;
            grads[block.se.expand_w] = se.expand_w;
            grads[block.se.expand_b] = se.expand_b;
            d = self.conv_bn_backward(&block.dw, &cache.dw, se.input, &mut grads)?;
            if let (Some(layer), Some(c)) = (&block.expand, &cache.expand) {
                d = self.conv_bn_backward(layer, c, d, &mut grads)?;
            }
            if let Some(r) = residual {
                for (a, b) in d.data.iter_mut().zip(&r.data) {
                    *a += *b;
                }
            }
            g = d;
        }
        self.conv_bn_backward(&self.stem, &caches.stem, g, &mut grads)?;
        Ok((
            Backward {
                loss,
                logits,
                grads: ParamGrads {
                    names: self.names.clone(),
                    tensors: grads,
                },
            },
            stats,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::softmax;

    fn batch<T: Real>(n: usize, mels: usize, frames: usize, seed: u64) -> Tensor<T> {
        he_init(&[n, 1, mels, frames], seed)
    }

    #[test]
    fn default_logits_shape_and_variable_length() {
        let net = Network::<f32>::new(NetworkConfig::default(), 1).unwrap();
        for frames in [40, 80] {
            let logits = net.infer(&batch(2, 64, frames, 2)).unwrap();
            assert_eq!(logits.shape(), &[2, 182]);
            let p = softmax(&logits).unwrap();
            for row in p.data.chunks(182) {
                assert!((row.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_few_frames_and_wrong_mels() {
        let net = Network::<f32>::new(NetworkConfig::default(), 1).unwrap();
        assert!(matches!(
            net.infer(&batch(1, 64, 15, 0)),
            Err(NnError::TooFewFrames { frames: 15, min: 16 })
        ));
        assert!(matches!(net.infer(&batch(1, 32, 40, 0)), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn infer_is_bitwise_deterministic() {
        let net = Network::<f32>::new(NetworkConfig::micro(5, 8), 3).unwrap();
        let x = batch(3, 8, 20, 4);
        assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());
    }

    #[test]
    fn param_count_two_ways() {
        for cfg in [NetworkConfig::default(), NetworkConfig::micro(3, 8), NetworkConfig::default().with_classes(8)] {
            let net = Network::<f32>::zeroed(cfg.clone()).unwrap();
            assert_eq!(net.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn grads_cover_every_parameter() {
        let mut net = Network::<f64>::new(NetworkConfig::micro(3, 8), 5).unwrap();
        let b = net.backward(&batch(2, 8, 12, 6), &[0, 2]).unwrap();
        assert_eq!(b.grads.names, net.param_names());
        for (name, g) in b.grads.iter() {
            assert_eq!(Some(g.shape()), net.param(name).map(|p| p.shape()));
        }
    }

    #[test]
    fn classifier_gradient_closed_form() {
        let net = Network::<f64>::new(NetworkConfig::micro(3, 8), 7).unwrap();
        let x = batch(2, 8, 12, 8);
        let labels = [1, 2];
        let b = net.backward_frozen(&x, &labels).unwrap();
        let (_, caches, _) = net.run(&x, Mode::Infer).unwrap();
        let p = softmax(&b.logits).unwrap();
        let feats = &caches.pooled;
        let gw = b.grads.get("classifier.weight").unwrap();
        for k in 0..3 {
            for c in 0..8 {
                let mut expect = 0.0;
                for i in 0..2 {
                    let y = if labels[i] == k { 1.0 } else { 0.0 };
                    expect += (p.data[i * 3 + k] - y) * feats.data[i * 8 + c] / 2.0;
                }
                assert!((gw.data[k * 8 + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confident_correct_prediction_zeroes_bias_gradient() {
        let mut net = Network::<f64>::zeroed(NetworkConfig::micro(3, 8)).unwrap();
        net.param_mut("classifier.bias").unwrap().data = vec![0.0, 800.0, 0.0];
        let b = net.backward_frozen(&batch(2, 8, 12, 9), &[1, 1]).unwrap();
        assert!(b.grads.get("classifier.bias").unwrap().data.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn zero_projection_residual_blocks_are_identity() {
        let cfg = NetworkConfig {
            n_classes: 4,
            stem_channels: 6,
            blocks: vec![BlockSpec::new(1, 6, 1, 2, 0.5), BlockSpec::new(3, 6, 1, 1, 0.25)],
            head_channels: 10,
            in_mels: 8,
        };
        let mut deep = Network::<f64>::new(cfg.clone(), 10).unwrap();
        for name in deep.param_names().to_vec() {
            if name.contains(".project.conv.") {
                deep.param_mut(&name).unwrap().data.fill(0.0);
            }
        }
        let shallow_cfg = NetworkConfig { blocks: vec![], ..cfg };
        let mut shallow = Network::<f64>::zeroed(shallow_cfg).unwrap();
        for name in shallow.param_names().to_vec() {
            let src = deep.param(&name).unwrap().clone();
            *shallow.param_mut(&name).unwrap() = src;
        }
        let x = batch(2, 8, 16, 11);
        let a = deep.infer(&x).unwrap();
        let b = shallow.infer(&x).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn train_forward_updates_running_stats() {
        let mut net = Network::<f32>::new(NetworkConfig::micro(3, 8), 12).unwrap();
        let before = net.bn_states()[0].clone();
        net.forward(&batch(4, 8, 16, 13)).unwrap();
        assert_ne!(net.bn_states()[0], before);
        net.set_mode(Mode::Infer);
        let after = net.bn_states().to_vec();
        net.forward(&batch(4, 8, 16, 14)).unwrap();
        assert_eq!(net.bn_states(), &after[..]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = NetworkConfig::default();
        cfg.blocks[1].stride = 3;
        assert!(Network::<f32>::zeroed(cfg).is_err());
        let mut cfg = NetworkConfig::default();
        cfg.blocks[0].se_ratio = 0.0;
        assert!(cfg.validate().is_err());
        assert!(NetworkConfig::default().with_classes(1).validate().is_err());
    }
}
