//! Define-by-run tape. Each forward call appends a node; `backward` walks the
//! tape in reverse and accumulates gradients into parents.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;

use super::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use super::params::{ParamStore, StatUpdate};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization; running statistics are updated.
    Train,
    /// Running statistics; every op is a smooth function of its inputs.
    Eval,
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(usize),
}

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(usize),
    MaxPool {
        x: usize,
        argmax: Vec<u32>,
    },
    Upsample(usize),
    Concat(Vec<usize>),
    Add(usize, usize),
    Max(usize, usize),
    Sigmoid(usize),
    SpatialMean(usize),
    ScaleChannels {
        x: usize,
        s: usize,
    },
    ScalePixels {
        x: usize,
        s: usize,
    },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    label: String,
}

pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    mode: Mode,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<usize, Var>,
    stat_updates: Vec<StatUpdate<T>>,
    scope: Vec<String>,
    kinks: Option<DefaultHasher>,
    input_grads: bool,
}

/// Gradients from one backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradient of the store entry with id `id` (None if it was unused).
    pub fn param(&self, id: usize) -> Option<&Tensor<T>> {
        self.params.get(id).and_then(|g| g.as_ref())
    }

    pub fn into_params(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}

fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    // half-pixel centers, edges clamped
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            let t = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, t)
        })
        .collect()
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>, mode: Mode) -> Self {
        Self {
            store,
            mode,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            stat_updates: Vec::new(),
            scope: Vec::new(),
            kinks: None,
            input_grads: false,
        }
    }

    /// Also propagate gradients into tensors added with [`Graph::input`].
    pub fn with_input_grads(mut self) -> Self {
        self.input_grads = true;
        self
    }

    /// Records ReLU activation patterns and max-pool winners so callers can
    /// detect when a perturbation crosses a non-differentiable point.
    pub fn track_kinks(mut self) -> Self {
        self.kinks = Some(DefaultHasher::new());
        self
    }

    pub fn kink_fingerprint(&self) -> Option<u64> {
        self.kinks.as_ref().map(|h| h.finish())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn push_scope(&mut self, s: impl Into<String>) {
        self.scope.push(s.into());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    pub fn scoped(&self, name: &str) -> String {
        if self.scope.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.scope.join("."))
        }
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v.0)
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        match &self.nodes[i].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, kind: &str) -> Var {
        let label = self.scoped(kind);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            label,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, "input")
    }

    /// Leaf referencing a stored parameter by fully qualified name.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            label: name.to_string(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// Parameter named relative to the current scope.
    pub fn scoped_param(&mut self, name: &str) -> Result<Var> {
        let full = self.scoped(name);
        self.param(&full)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.push(
            y,
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                spec,
            },
            "conv",
        ))
    }

    /// Per-channel normalization. `prefix` names `{prefix}.weight`,
    /// `.bias`, `.running_mean` and `.running_var` relative to the scope.
    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.scoped_param(&format!("{prefix}.weight"))?;
        let beta = self.scoped_param(&format!("{prefix}.bias"))?;
        let mean_id = self.store.id(&self.scoped(&format!("{prefix}.running_mean")))?;
        let var_id = self.store.id(&self.scoped(&format!("{prefix}.running_var")))?;
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).len() != c {
            return Err(Error::Shape(format!(
                "{prefix}: norm has {} channels, input has {c}",
                self.value(gamma).len()
            )));
        }
        let hw = h * w;
        let m = n * hw;
        let eps = T::from_f64(BN_EPS);
        let xd = self.value(x).data();
        let batch_stats = self.mode == Mode::Train;
        let mut pending = None;
        let (mean, inv_std) = if batch_stats {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = 0.0f64;
                for s_i in 0..n {
                    s += xd[(s_i * c + ch) * hw..(s_i * c + ch + 1) * hw]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mu = s / m as f64;
                let mut ss = 0.0f64;
                for s_i in 0..n {
                    for &v in &xd[(s_i * c + ch) * hw..(s_i * c + ch + 1) * hw] {
                        let d = v.as_f64() - mu;
                        ss += d * d;
                    }
                }
                mean[ch] = T::from_f64(mu);
                var[ch] = T::from_f64(ss / m as f64);
            }
            let unbiased = var
                .iter()
                .map(|&v| if m > 1 { v * T::from_f64(m as f64 / (m - 1) as f64) } else { v })
                .collect();
            pending = Some(StatUpdate {
                mean_id,
                var_id,
                mean: mean.clone(),
                var: unbiased,
            });
            let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        } else {
            let mean = self.store.value(mean_id).data().to_vec();
            let inv: Vec<T> = self
                .store
                .value(var_id)
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            (mean, inv)
        };
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![T::zero(); xd.len()];
        for s_i in 0..n {
            for ch in 0..c {
                let base = (s_i * c + ch) * hw;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for (o, &v) in out[base..base + hw].iter_mut().zip(&xd[base..base + hw]) {
                    *o = ga * (v - mu) * is + be;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.stat_updates.extend(pending);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                inv_std,
                batch_stats,
            },
            "batch_norm",
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        if let Some(h) = self.kinks.as_mut() {
            for (i, v) in out.iter().enumerate() {
                if *v > T::zero() {
                    h.write_usize(i);
                }
            }
            h.write_u8(0xfe);
        }
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(&shape, out).unwrap(), Op::Relu(x.0), "relu")
    }

    /// 2×2 max pooling with stride 2; ties go to the first element in
    /// row-major window order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::Shape(format!("max pool needs at least 2x2 input, got {h}x{w}")));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = 2 * oh * w + 2 * ow;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oh + di) * w + 2 * ow + dj;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                    out.push(plane[best]);
                    argmax.push(best as u32);
                }
            }
        }
        if let Some(hs) = self.kinks.as_mut() {
            for &a in &argmax {
                hs.write_u32(a);
            }
            hs.write_u8(0xfd);
        }
        Ok(self.push(Tensor::new(&[n, c, ho, wo], out)?, Op::MaxPool { x: x.0, argmax }, "max_pool"))
    }

    /// Bilinear ×2 upsampling with half-pixel centers.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (ho, wo) = (2 * h, 2 * w);
        let rt = bilinear_taps(ho, h);
        let ct = bilinear_taps(wo, w);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oh, &(r0, r1, ty)) in rt.iter().enumerate() {
                let ty = T::from_f64(ty);
                for (ow, &(c0, c1, tx)) in ct.iter().enumerate() {
                    let tx = T::from_f64(tx);
                    let top = src[r0 * w + c0] * (T::one() - tx) + src[r0 * w + c1] * tx;
                    let bot = src[r1 * w + c0] * (T::one() - tx) + src[r1 * w + c1] * tx;
                    dst[oh * wo + ow] = top * (T::one() - ty) + bot * ty;
                }
            }
        }
        Ok(self.push(Tensor::new(&[n, c, ho, wo], out)?, Op::Upsample(x.0), "upsample"))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self.value(parts[0]).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat: part shape {:?} does not match {n}x?x{h}x{w}",
                    self.value(p).shape()
                )));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for s in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[s * pc * hw..(s + 1) * pc * hw]);
            }
        }
        Ok(self.push(
            Tensor::new(&[n, total_c, h, w], out)?,
            Op::Concat(parts.iter().map(|v| v.0).collect()),
            "concat",
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a.0, b.0), "add"))
    }

    /// Elementwise maximum; ties take `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "maximum")?;
        let mut out = Vec::with_capacity(self.value(a).len());
        let mut pick_b = Vec::new();
        for (k, (&x, &y)) in self.value(a).data().iter().zip(self.value(b).data()).enumerate() {
            if x >= y {
                out.push(x);
            } else {
                out.push(y);
                pick_b.push(k);
            }
        }
        if let Some(h) = self.kinks.as_mut() {
            for k in pick_b {
                h.write_usize(k);
            }
            h.write_u8(0xfc);
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Max(a.0, b.0), "maximum"))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, out).unwrap(), Op::Sigmoid(x.0), "sigmoid")
    }

    /// `N×C×H×W → N×C×1×1` spatial average.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::from_f64(1.0 / hw as f64);
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(Tensor::new(&[n, c, 1, 1], out)?, Op::SpatialMean(x.0), "spatial_mean"))
    }

    /// `x[n, c, :, :] · s[n, c]` with `s` shaped `N×C×1×1`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(s).shape() != [n, c, 1, 1] {
            return Err(Error::Shape(format!(
                "channel scale must be {n}x{c}x1x1, got {:?}",
                self.value(s).shape()
            )));
        }
        let hw = h * w;
        let sd = self.value(s).data();
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .zip(sd)
            .flat_map(|(p, &k)| p.iter().map(move |&v| v * k))
            .collect();
        Ok(self.push(Tensor::new(&[n, c, h, w], out)?, Op::ScaleChannels { x: x.0, s: s.0 }, "scale_channels"))
    }

    /// `x[n, :, i, j] · s[n, 0, i, j]` with `s` shaped `N×1×H×W`.
    pub fn scale_pixels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(s).shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "pixel scale must be {n}x1x{h}x{w}, got {:?}",
                self.value(s).shape()
            )));
        }
        let hw = h * w;
        let sd = self.value(s).data();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(xd.len());
        for smp in 0..n {
            let sp = &sd[smp * hw..(smp + 1) * hw];
            for ch in 0..c {
                let p = &xd[(smp * c + ch) * hw..(smp * c + ch + 1) * hw];
                out.extend(p.iter().zip(sp).map(|(&v, &k)| v * k));
            }
        }
        Ok(self.push(Tensor::new(&[n, c, h, w], out)?, Op::ScalePixels { x: x.0, s: s.0 }, "scale_pixels"))
    }

    /// Label of the first node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        (0..self.nodes.len())
            .find(|&i| !self.val(i).all_finite())
            .map(|i| self.nodes[i].label.as_str())
    }

    /// Back-propagates `seed` (∂L/∂out) through the tape.
    pub fn backward(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::Shape(format!(
                "seed gradient {:?} does not match output {:?}",
                seed.shape(),
                self.value(out).shape()
            )));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n_nodes).map(|_| None).collect();
        grads[out.0] = Some(seed);

        fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let y = self.val(i);
            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, spec } => {
                    let need_dx = self.requires_grad(*x);
                    let g = conv2d_backward(self.val(*x), self.val(*w), &gy, *spec, need_dx)?;
                    if let Some(dx) = g.dx {
                        acc(&mut grads, *x, dx);
                    }
                    acc(&mut grads, *w, g.dw);
                    if let Some(b) = b {
                        acc(&mut grads, *b, g.db);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let xt = self.val(*x);
                    let (n, c, h, w) = xt.dims4()?;
                    let hw = h * w;
                    let m = (n * hw) as f64;
                    let xd = xt.data();
                    let gd = gy.data();
                    let ga = self.val(*gamma).data();
                    let mut dx = vec![T::zero(); xd.len()];
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for ch in 0..c {
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let mut sum_dy = T::zero();
                        let mut sum_dy_xhat = T::zero();
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for k in base..base + hw {
                                let xhat = (xd[k] - mu) * is;
                                sum_dy += gd[k];
                                sum_dy_xhat += gd[k] * xhat;
                            }
                        }
                        dgamma[ch] = sum_dy_xhat;
                        dbeta[ch] = sum_dy;
                        let scale = ga[ch] * is;
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for k in base..base + hw {
                                dx[k] = if *batch_stats {
                                    let xhat = (xd[k] - mu) * is;
                                    let mm = T::from_f64(m);
                                    scale * (gd[k] * mm - sum_dy - xhat * sum_dy_xhat) / mm
                                } else {
                                    scale * gd[k]
                                };
                            }
                        }
                    }
                    let shape = xt.shape().to_vec();
                    acc(&mut grads, *x, Tensor::new(&shape, dx)?);
                    acc(&mut grads, *gamma, Tensor::new(&[c], dgamma)?);
                    acc(&mut grads, *beta, Tensor::new(&[c], dbeta)?);
                }
                Op::Relu(x) => {
                    let dx = gy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    acc(&mut grads, *x, Tensor::new(y.shape(), dx)?);
                }
                Op::MaxPool { x, argmax } => {
                    let xt = self.val(*x);
                    let (n, c, h, w) = xt.dims4()?;
                    let (ho, wo) = (h / 2, w / 2);
                    let mut dx = vec![T::zero(); xt.len()];
                    for p in 0..n * c {
                        for k in 0..ho * wo {
                            let o = p * ho * wo + k;
                            dx[p * h * w + argmax[o] as usize] += gy.data()[o];
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(xt.shape(), dx)?);
                }
                Op::Upsample(x) => {
                    let xt = self.val(*x);
                    let (n, c, h, w) = xt.dims4()?;
                    let (ho, wo) = (2 * h, 2 * w);
                    let rt = bilinear_taps(ho, h);
                    let ct = bilinear_taps(wo, w);
                    let mut dx = vec![T::zero(); xt.len()];
                    for p in 0..n * c {
                        let g = &gy.data()[p * ho * wo..(p + 1) * ho * wo];
                        let d = &mut dx[p * h * w..(p + 1) * h * w];
                        for (oh, &(r0, r1, ty)) in rt.iter().enumerate() {
                            let ty = T::from_f64(ty);
                            for (ow, &(c0, c1, tx)) in ct.iter().enumerate() {
                                let tx = T::from_f64(tx);
                                let v = g[oh * wo + ow];
                                let top = v * (T::one() - ty);
                                let bot = v * ty;
                                d[r0 * w + c0] += top * (T::one() - tx);
                                d[r0 * w + c1] += top * tx;
                                d[r1 * w + c0] += bot * (T::one() - tx);
                                d[r1 * w + c1] += bot * tx;
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(xt.shape(), dx)?);
                }
                Op::Concat(parts) => {
                    let (n, _, h, w) = y.dims4()?;
                    let hw = h * w;
                    let total_c = y.shape()[1];
                    let mut c_off = 0;
                    for &p in parts {
                        let pc = self.val(p).shape()[1];
                        let mut d = Vec::with_capacity(n * pc * hw);
                        for s in 0..n {
                            let start = (s * total_c + c_off) * hw;
                            d.extend_from_slice(&gy.data()[start..start + pc * hw]);
                        }
                        c_off += pc;
                        acc(&mut grads, p, Tensor::new(self.val(p).shape(), d)?);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::Max(a, b) => {
                    let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                    let mut da = vec![T::zero(); ad.len()];
                    let mut db = vec![T::zero(); ad.len()];
                    for k in 0..ad.len() {
                        if ad[k] >= bd[k] {
                            da[k] = gy.data()[k];
                        } else {
                            db[k] = gy.data()[k];
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(y.shape(), da)?);
                    acc(&mut grads, *b, Tensor::new(y.shape(), db)?);
                }
                Op::Sigmoid(x) => {
                    let dx = gy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect();
                    acc(&mut grads, *x, Tensor::new(y.shape(), dx)?);
                }
                Op::SpatialMean(x) => {
                    let xt = self.val(*x);
                    let (_, _, h, w) = xt.dims4()?;
                    let hw = h * w;
                    let inv = T::from_f64(1.0 / hw as f64);
                    let dx = gy
                        .data()
                        .iter()
                        .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
                        .collect();
                    acc(&mut grads, *x, Tensor::new(xt.shape(), dx)?);
                }
                Op::ScaleChannels { x, s } => {
                    let xt = self.val(*x);
                    let (_, _, h, w) = xt.dims4()?;
                    let hw = h * w;
                    let sd = self.val(*s).data();
                    let mut dx = Vec::with_capacity(xt.len());
                    let mut ds = Vec::with_capacity(sd.len());
                    for ((gp, xp), &k) in gy.data().chunks(hw).zip(xt.data().chunks(hw)).zip(sd) {
                        dx.extend(gp.iter().map(|&g| g * k));
                        ds.push(gp.iter().zip(xp).map(|(&g, &v)| g * v).sum::<T>());
                    }
                    acc(&mut grads, *x, Tensor::new(xt.shape(), dx)?);
                    acc(&mut grads, *s, Tensor::new(self.val(*s).shape(), ds)?);
                }
                Op::ScalePixels { x, s } => {
                    let xt = self.val(*x);
                    let (n, c, h, w) = xt.dims4()?;
                    let hw = h * w;
                    let sd = self.val(*s).data();
                    let xd = xt.data();
                    let gd = gy.data();
                    let mut dx = vec![T::zero(); xd.len()];
                    let mut ds = vec![T::zero(); sd.len()];
                    for smp in 0..n {
                        let sp = &sd[smp * hw..(smp + 1) * hw];
                        let dsp = &mut ds[smp * hw..(smp + 1) * hw];
                        for ch in 0..c {
                            let base = (smp * c + ch) * hw;
                            for k in 0..hw {
                                dx[base + k] = gd[base + k] * sp[k];
                                dsp[k] += gd[base + k] * xd[base + k];
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(xt.shape(), dx)?);
                    acc(&mut grads, *s, Tensor::new(self.val(*s).shape(), ds)?);
                }
            }
        }

        let mut params: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        for (&id, &v) in &self.param_vars {
            params[id] = grads[v.0].take();
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn requires_grad(&self, i: usize) -> bool {
        let n = &self.nodes[i];
        self.input_grads || !matches!((&n.op, &n.value), (Op::Leaf, Value::Owned(_)))
    }

    /// Number of distinct store entries referenced so far.
    pub fn params_used(&self) -> usize {
        self.param_vars.len()
    }
}
