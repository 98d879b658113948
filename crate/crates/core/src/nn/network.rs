use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fixed-topology classifier: architecture, trainable parameters and
/// batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: ParamTree,
    bn_stats: ParamTree,
    seed: u64,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense {
        input: Tensor,
    },
    Conv {
        input: Tensor,
    },
    BatchNorm {
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        count: usize,
    },
    Relu {
        mask: Vec<bool>,
    },
    Flatten {
        shape: Vec<usize>,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Dropout {
        scale: Option<Vec<f64>>,
    },
}

/// Intermediates recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    layers: Vec<LayerCache>,
    logits: Tensor,
    mode: Mode,
}

impl ActivationCache {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Views a 2-D or 3-D activation as (batch, channels, length).
fn ncl(t: &Tensor) -> (usize, usize, usize) {
    match *t.shape() {
        [n, c] => (n, c, 1),
        [n, c, l] => (n, c, l),
        ref s => panic!("unexpected activation rank {s:?}"),
    }
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Network {
    /// Builds a network with Kaiming-uniform weights, zero biases, unit
    /// batch-norm scale and fresh running statistics.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamTree::new();
        let mut bn_stats = ParamTree::new();
        for spec in &arch.layers {
            let name = &spec.name;
            match spec.kind {
                LayerKind::Dense { inputs, outputs } => {
                    let w = kaiming_uniform(&mut rng, inputs, inputs * outputs);
                    params.insert(format!("{name}.weight"), Tensor::new(vec![outputs, inputs], w)?)?;
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
                }
                LayerKind::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel;
                    let w = kaiming_uniform(&mut rng, fan_in, out_channels * fan_in);
                    params.insert(
                        format!("{name}.weight"),
                        Tensor::new(vec![out_channels, in_channels, kernel], w)?,
                    )?;
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
                }
                LayerKind::BatchNorm1d { features } => {
                    params.insert(format!("{name}.weight"), Tensor::full(&[features], 1.0))?;
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[features]))?;
                    bn_stats.insert(format!("{name}.running_mean"), Tensor::zeros(&[features]))?;
                    bn_stats.insert(format!("{name}.running_var"), Tensor::full(&[features], 1.0))?;
                }
                LayerKind::Relu | LayerKind::Flatten | LayerKind::MaxPool1d { .. } | LayerKind::Dropout { .. } => {}
            }
        }
        Ok(Self {
            arch,
            params,
            bn_stats,
            seed,
        })
    }

    /// Assembles a network from existing state, checking that the trees
    /// carry exactly the slots the architecture implies.
    pub fn from_parts(arch: Architecture, params: ParamTree, bn_stats: ParamTree, seed: u64) -> Result<Self> {
        let template = Network::new(arch, seed)?;
        template.params.check_same_layout(&params)?;
        template.bn_stats.check_same_layout(&bn_stats)?;
        for (key, t) in bn_stats.iter() {
            if key.ends_with(".running_var") && t.data().iter().any(|&v| v < 0.0) {
                return Err(Error::Tensor(format!("negative running variance in `{key}`")));
            }
        }
        Ok(Self {
            arch: template.arch,
            params,
            bn_stats,
            seed,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamTree {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &ParamTree {
        &self.bn_stats
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    /// Widens the class head to `n_classes`. Existing rows are kept; new
    /// weight rows are Kaiming-uniform from `seed`, new biases zero.
    pub fn grow_head(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        let idx = self.arch.head_index().expect("validated architecture has a head");
        let spec = &mut self.arch.layers[idx];
        let (inputs, outputs) = match &mut spec.kind {
            LayerKind::Dense { inputs, outputs } => (*inputs, outputs),
            _ => unreachable!("head is dense"),
        };
        if n_classes < *outputs {
            return Err(Error::Architecture(format!(
                "cannot shrink head from {outputs} to {n_classes} classes"
            )));
        }
        if n_classes == *outputs {
            return Ok(());
        }
        let extra = n_classes - *outputs;
        *outputs = n_classes;
        let name = spec.name.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wkey = format!("{name}.weight");
        let bkey = format!("{name}.bias");
        let mut w = self.params.get(&wkey).expect("head weight").data().to_vec();
        w.extend(kaiming_uniform(&mut rng, inputs, extra * inputs));
        let mut b = self.params.get(&bkey).expect("head bias").data().to_vec();
        b.extend(std::iter::repeat_n(0.0, extra));
        self.params.set(&wkey, Tensor::new(vec![n_classes, inputs], w)?);
        self.params.set(&bkey, Tensor::new(vec![n_classes], b)?);
        self.arch.validate()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        match batch.shape() {
            [_, d] if *d == self.arch.input_dim => Ok(()),
            s => Err(Error::Shape {
                layer: self.arch.layers.first().map(|l| l.name.clone()).unwrap_or_default(),
                msg: format!("expected input (batch, {}), got {s:?}", self.arch.input_dim),
            }),
        }
    }

    /// Runs the network. Train mode normalizes with batch statistics and
    /// samples dropout masks from `rng`; eval mode is deterministic.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Tensor, ActivationCache)> {
        let (logits, layers) = self.run(batch, mode, Some(rng), None)?;
        let cache = ActivationCache {
            layers,
            logits: logits.clone(),
            mode,
        };
        Ok((logits, cache))
    }

    /// Eval-mode logits.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run(batch, Mode::Eval, None, None)?.0)
    }

    /// Eval-mode output of the layer called `layer`.
    pub fn activations(&self, batch: &Tensor, layer: &str) -> Result<Tensor> {
        if self.arch.layer(layer).is_none() {
            return Err(Error::Shape {
                layer: layer.to_owned(),
                msg: "no such layer".into(),
            });
        }
        Ok(self.run(batch, Mode::Eval, None, Some(layer))?.0)
    }

    fn run(
        &self,
        batch: &Tensor,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
        stop_after: Option<&str>,
    ) -> Result<(Tensor, Vec<LayerCache>)> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        for spec in &self.arch.layers {
            let (y, cache) = self.layer_forward(spec, x, mode, rng.as_deref_mut())?;
            caches.push(cache);
            x = y;
            if stop_after == Some(spec.name.as_str()) {
                break;
            }
        }
        Ok((x, caches))
    }

    fn param(&self, layer: &str, slot: &str) -> &[f64] {
        self.params
            .get(&format!("{layer}.{slot}"))
            .unwrap_or_else(|| panic!("missing parameter {layer}.{slot}"))
            .data()
    }

    fn layer_forward(
        &self,
        spec: &LayerSpec,
        x: Tensor,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, LayerCache)> {
        let name = spec.name.as_str();
        match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                let n = x.rows();
                let w = self.param(name, "weight");
                let b = self.param(name, "bias");
                let mut y = vec![0.0; n * outputs];
                for i in 0..n {
                    let xi = x.row(i);
                    for o in 0..outputs {
                        let wo = &w[o * inputs..(o + 1) * inputs];
                        y[i * outputs + o] = b[o] + wo.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Ok((Tensor::from_parts(vec![n, outputs], y), LayerCache::Dense { input: x }))
            }
            LayerKind::Conv1d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let (n, c, l) = match *x.shape() {
                    [n, d] => (n, 1, d),
                    [n, c, l] => (n, c, l),
                    _ => unreachable!(),
                };
                let x = x.reshape(vec![n, c, l])?;
                let lo = (l - kernel) / stride + 1;
                let w = self.param(name, "weight");
                let b = self.param(name, "bias");
                let xd = x.data();
                let mut y = vec![0.0; n * out_channels * lo];
                for s in 0..n {
                    for o in 0..out_channels {
                        let out = &mut y[(s * out_channels + o) * lo..(s * out_channels + o + 1) * lo];
                        out.fill(b[o]);
                        for ci in 0..c {
                            let wk = &w[(o * c + ci) * kernel..(o * c + ci + 1) * kernel];
                            let xs = &xd[(s * c + ci) * l..(s * c + ci + 1) * l];
                            for (t, yv) in out.iter_mut().enumerate() {
                                let start = t * stride;
                                *yv += wk.iter().zip(&xs[start..start + kernel]).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
                Ok((
                    Tensor::from_parts(vec![n, out_channels, lo], y),
                    LayerCache::Conv { input: x },
                ))
            }
            LayerKind::BatchNorm1d { features } => {
                let (n, c, l) = ncl(&x);
                debug_assert_eq!(c, features);
                let gamma = self.param(name, "weight");
                let beta = self.param(name, "bias");
                let count = n * l;
                let xd = x.data();
                let idx = |s: usize, ch: usize, t: usize| (s * c + ch) * l + t;
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mut mean = vec![0.0; c];
                        let mut var = vec![0.0; c];
                        for ch in 0..c {
                            let mut sum = 0.0;
                            for s in 0..n {
                                for t in 0..l {
                                    sum += xd[idx(s, ch, t)];
                                }
                            }
                            let m = sum / count as f64;
                            let mut sq = 0.0;
                            for s in 0..n {
                                for t in 0..l {
                                    let d = xd[idx(s, ch, t)] - m;
                                    sq += d * d;
                                }
                            }
                            mean[ch] = m;
                            var[ch] = sq / count as f64;
                        }
                        (mean, var)
                    }
                    Mode::Eval => (
                        self.bn_stats.get(&format!("{name}.running_mean")).expect("bn stats").data().to_vec(),
                        self.bn_stats.get(&format!("{name}.running_var")).expect("bn stats").data().to_vec(),
                    ),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut x_hat = vec![0.0; xd.len()];
                let mut y = vec![0.0; xd.len()];
                for s in 0..n {
                    for ch in 0..c {
                        for t in 0..l {
                            let i = idx(s, ch, t);
                            x_hat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                            y[i] = gamma[ch] * x_hat[i] + beta[ch];
                        }
                    }
                }
                let shape = x.shape().to_vec();
                Ok((
                    Tensor::from_parts(shape, y),
                    LayerCache::BatchNorm {
                        x_hat,
                        inv_std,
                        mean,
                        var,
                        count,
                    },
                ))
            }
            LayerKind::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                let mut y = x;
                for v in y.data_mut() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
                Ok((y, LayerCache::Relu { mask }))
            }
            LayerKind::Flatten => {
                let shape = x.shape().to_vec();
                let n = shape[0];
                let f = x.row_len();
                Ok((x.reshape(vec![n, f])?, LayerCache::Flatten { shape }))
            }
            LayerKind::MaxPool1d { width } => {
                let (n, c, l) = ncl(&x);
                let lo = l / width;
                let xd = x.data();
                let mut y = vec![0.0; n * c * lo];
                let mut argmax = vec![0usize; n * c * lo];
                for row in 0..n * c {
                    for t in 0..lo {
                        let base = row * l + t * width;
                        let mut best = base;
                        for j in base + 1..base + width {
                            if xd[j] > xd[best] {
                                best = j;
                            }
                        }
                        y[row * lo + t] = xd[best];
                        argmax[row * lo + t] = best;
                    }
                }
                Ok((
                    Tensor::from_parts(vec![n, c, lo], y),
                    LayerCache::MaxPool {
                        argmax,
                        in_shape: x.shape().to_vec(),
                    },
                ))
            }
            LayerKind::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    return Ok((x, LayerCache::Dropout { scale: None }));
                }
                let rng = rng.expect("train-mode dropout needs an rng");
                let keep = 1.0 / (1.0 - rate);
                let scale: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let mut y = x;
                for (v, s) in y.data_mut().iter_mut().zip(&scale) {
                    *v *= s;
                }
                Ok((y, LayerCache::Dropout { scale: Some(scale) }))
            }
        }
    }

    /// Mean softmax cross-entropy of the cached logits against `labels`, and
    /// its gradient with respect to every parameter.
    pub fn backward(&self, cache: &ActivationCache, labels: &[usize]) -> Result<(f64, ParamTree)> {
        let (loss, mut grad) = softmax_cross_entropy(&cache.logits, labels)?;
        let mut grads = self.params.zeros_like();
        for (i, (spec, lc)) in self.arch.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_input_grad = i > 0;
            grad = self.layer_backward(spec, lc, grad, cache.mode, &mut grads, need_input_grad);
        }
        Ok((loss, grads))
    }

    fn layer_backward(
        &self,
        spec: &LayerSpec,
        cache: &LayerCache,
        dy: Tensor,
        mode: Mode,
        grads: &mut ParamTree,
        need_input_grad: bool,
    ) -> Tensor {
        let name = spec.name.as_str();
        match (&spec.kind, cache) {
            (LayerKind::Dense { inputs, outputs }, LayerCache::Dense { input }) => {
                let (inputs, outputs) = (*inputs, *outputs);
                let n = input.rows();
                let dyd = dy.data();
                let xd = input.data();
                {
                    let gw = grads.get_mut(&format!("{name}.weight")).expect("grad slot").data_mut();
                    for s in 0..n {
                        let xs = &xd[s * inputs..(s + 1) * inputs];
                        for o in 0..outputs {
                            let g = dyd[s * outputs + o];
                            if g != 0.0 {
                                for (gv, xv) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(xs) {
                                    *gv += g * xv;
                                }
                            }
                        }
                    }
                }
                {
                    let gb = grads.get_mut(&format!("{name}.bias")).expect("grad slot").data_mut();
                    for s in 0..n {
                        for o in 0..outputs {
                            gb[o] += dyd[s * outputs + o];
                        }
                    }
                }
                if !need_input_grad {
                    return Tensor::zeros(&[1]);
                }
                let w = self.param(name, "weight");
                let mut dx = vec![0.0; n * inputs];
                for s in 0..n {
                    let dxs = &mut dx[s * inputs..(s + 1) * inputs];
                    for o in 0..outputs {
                        let g = dyd[s * outputs + o];
                        for (d, wv) in dxs.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                            *d += g * wv;
                        }
                    }
                }
                Tensor::from_parts(vec![n, inputs], dx)
            }
            (
                LayerKind::Conv1d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                },
                LayerCache::Conv { input },
            ) => {
                let (oc, k, st) = (*out_channels, *kernel, *stride);
                let (n, c, l) = ncl(input);
                let lo = dy.shape()[2];
                let xd = input.data();
                let dyd = dy.data();
                {
                    let gw = grads.get_mut(&format!("{name}.weight")).expect("grad slot").data_mut();
                    for s in 0..n {
                        for o in 0..oc {
                            let dys = &dyd[(s * oc + o) * lo..(s * oc + o + 1) * lo];
                            for ci in 0..c {
                                let xs = &xd[(s * c + ci) * l..(s * c + ci + 1) * l];
                                let gk = &mut gw[(o * c + ci) * k..(o * c + ci + 1) * k];
                                for (t, &g) in dys.iter().enumerate() {
                                    for (j, gv) in gk.iter_mut().enumerate() {
                                        *gv += g * xs[t * st + j];
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let gb = grads.get_mut(&format!("{name}.bias")).expect("grad slot").data_mut();
                    for s in 0..n {
                        for (o, gbo) in gb.iter_mut().enumerate() {
                            *gbo += dyd[(s * oc + o) * lo..(s * oc + o + 1) * lo].iter().sum::<f64>();
                        }
                    }
                }
                if !need_input_grad {
                    return Tensor::zeros(&[1]);
                }
                let w = self.param(name, "weight");
                let mut dx = vec![0.0; n * c * l];
                for s in 0..n {
                    for o in 0..oc {
                        let dys = &dyd[(s * oc + o) * lo..(s * oc + o + 1) * lo];
                        for ci in 0..c {
                            let wk = &w[(o * c + ci) * k..(o * c + ci + 1) * k];
                            let dxs = &mut dx[(s * c + ci) * l..(s * c + ci + 1) * l];
                            for (t, &g) in dys.iter().enumerate() {
                                for (j, wv) in wk.iter().enumerate() {
                                    dxs[t * st + j] += g * wv;
                                }
                            }
                        }
                    }
                }
                Tensor::from_parts(vec![n, c, l], dx)
            }
            (
                LayerKind::BatchNorm1d { .. },
                LayerCache::BatchNorm {
                    x_hat,
                    inv_std,
                    count,
                    ..
                },
            ) => {
                let (n, c, l) = ncl(&dy);
                let dyd = dy.data();
                let gamma = self.param(name, "weight");
                let idx = |s: usize, ch: usize, t: usize| (s * c + ch) * l + t;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        for t in 0..l {
                            let i = idx(s, ch, t);
                            dgamma[ch] += dyd[i] * x_hat[i];
                            dbeta[ch] += dyd[i];
                        }
                    }
                }
                for (g, d) in grads
                    .get_mut(&format!("{name}.weight"))
                    .expect("grad slot")
                    .data_mut()
                    .iter_mut()
                    .zip(&dgamma)
                {
                    *g += d;
                }
                for (g, d) in grads
                    .get_mut(&format!("{name}.bias"))
                    .expect("grad slot")
                    .data_mut()
                    .iter_mut()
                    .zip(&dbeta)
                {
                    *g += d;
                }
                let mut dx = vec![0.0; dyd.len()];
                let m = *count as f64;
                for s in 0..n {
                    for ch in 0..c {
                        for t in 0..l {
                            let i = idx(s, ch, t);
                            dx[i] = match mode {
                                // batch statistics depend on the input
                                Mode::Train => {
                                    gamma[ch] * inv_std[ch] / m
                                        * (m * dyd[i] - dbeta[ch] - x_hat[i] * dgamma[ch])
                                }
                                Mode::Eval => gamma[ch] * inv_std[ch] * dyd[i],
                            };
                        }
                    }
                }
                Tensor::from_parts(dy.shape().to_vec(), dx)
            }
            (LayerKind::Relu, LayerCache::Relu { mask }) => {
                let mut dx = dy;
                for (v, &keep) in dx.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
                dx
            }
            (LayerKind::Flatten, LayerCache::Flatten { shape }) => {
                dy.reshape(shape.clone()).expect("flatten is a reshape")
            }
            (LayerKind::MaxPool1d { .. }, LayerCache::MaxPool { argmax, in_shape }) => {
                let mut dx = vec![0.0; in_shape.iter().product()];
                for (&src, &g) in argmax.iter().zip(dy.data()) {
                    dx[src] += g;
                }
                Tensor::from_parts(in_shape.clone(), dx)
            }
            (LayerKind::Dropout { .. }, LayerCache::Dropout { scale }) => match scale {
                None => dy,
                Some(scale) => {
                    let mut dx = dy;
                    for (v, s) in dx.data_mut().iter_mut().zip(scale) {
                        *v *= s;
                    }
                    dx
                }
            },
            _ => unreachable!("cache does not match layer `{name}`"),
        }
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// estimates (momentum [`BN_MOMENTUM`], unbiased variance).
    pub fn update_bn_stats(&mut self, cache: &ActivationCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for (spec, lc) in self.arch.layers.iter().zip(&cache.layers) {
            if let LayerCache::BatchNorm { mean, var, count, .. } = lc {
                let unbias = if *count > 1 {
                    *count as f64 / (*count as f64 - 1.0)
                } else {
                    1.0
                };
                let rm = self
                    .bn_stats
                    .get_mut(&format!("{}.running_mean", spec.name))
                    .expect("bn stats")
                    .data_mut();
                for (r, m) in rm.iter_mut().zip(mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                let rv = self
                    .bn_stats
                    .get_mut(&format!("{}.running_var", spec.name))
                    .expect("bn stats")
                    .data_mut();
                for (r, v) in rv.iter_mut().zip(var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
                }
            }
        }
    }

    /// Mean cross-entropy of `labels` under eval-mode logits.
    pub fn eval_loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.predict(batch)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }
}

/// Mean cross-entropy and its gradient `(softmax - onehot) / batch` with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.rows(), logits.row_len());
    if labels.len() != n {
        return Err(Error::Shape {
            layer: "loss".into(),
            msg: format!("{} labels for {n} logits rows", labels.len()),
        });
    }
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            grad[i * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, Tensor::from_parts(vec![n, k], grad)))
}
