use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{ConvSpec, PadMode};
use super::graph::{Graph, Mode, Var};
use super::params::ParamStore;
use super::real::Real;
use super::tensor::{softmax_channels, Tensor};
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScseMode {
    Add,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub classes: usize,
    /// `widths[0]` is the stem width; `widths[s]` is the output width of
    /// residual stage `s`.
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    /// Width of decoder row `i` (nodes `X(i, j)`, `j ≥ 1`).
    pub decoder_widths: Vec<usize>,
    pub scse_reduction: usize,
    /// Number of dense decoder diagonals; `None` builds the full grid and
    /// `Some(1)` the plain skip-connected decoder.
    pub nested_depth: Option<usize>,
    pub attention: bool,
    pub scse_mode: ScseMode,
    pub stem_kernel: usize,
    pub pad_mode: PadMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            in_channels: 30,
            classes: NUM_CLASSES,
            widths: vec![16, 32, 64, 128, 256],
            blocks: vec![2, 2, 3, 2],
            decoder_widths: vec![16, 32, 64, 128],
            scse_reduction: 16,
            nested_depth: None,
            attention: true,
            scse_mode: ScseMode::Add,
            stem_kernel: 7,
            pad_mode: PadMode::Replicate,
        }
    }

    /// ResNet-101 encoder widths and depths.
    pub fn full() -> Self {
        Self {
            widths: vec![64, 256, 512, 1024, 2048],
            blocks: vec![3, 4, 23, 3],
            decoder_widths: vec![64, 128, 256, 512],
            ..Self::desk()
        }
    }

    /// One residual stage of width 8 on a width-4 stem.
    pub fn tiny() -> Self {
        Self {
            widths: vec![4, 8],
            blocks: vec![1],
            decoder_widths: vec![4],
            ..Self::desk()
        }
    }

    /// Number of residual stages (deepest row index of the decoder grid).
    pub fn stages(&self) -> usize {
        self.blocks.len()
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.stages() + 1)
    }

    pub fn depth(&self) -> usize {
        self.nested_depth.unwrap_or(self.stages())
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.stages();
        if l == 0 {
            return Err(Error::Config("at least one residual stage is required".into()));
        }
        if self.widths.len() != l + 1 {
            return Err(Error::Config(format!(
                "{} widths given for {l} stages; expected {}",
                self.widths.len(),
                l + 1
            )));
        }
        if self.widths.windows(2).any(|w| w[1] <= w[0]) || self.widths[0] == 0 {
            return Err(Error::Config(format!("widths must be positive and strictly increasing: {:?}", self.widths)));
        }
        if self.blocks.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        if self.decoder_widths.len() != l || self.decoder_widths.contains(&0) {
            return Err(Error::Config(format!(
                "decoder_widths must list {l} positive widths, got {:?}",
                self.decoder_widths
            )));
        }
        if self.scse_reduction == 0 {
            return Err(Error::Config("scse_reduction must be >= 1".into()));
        }
        if self.in_channels == 0 || self.classes < 2 {
            return Err(Error::Config("need in_channels >= 1 and classes >= 2".into()));
        }
        if let Some(d) = self.nested_depth {
            if d == 0 || d > l {
                return Err(Error::Config(format!("nested_depth must be in 1..={l}, got {d}")));
            }
        }
        if self.stem_kernel.is_multiple_of(2) {
            return Err(Error::Config("stem_kernel must be odd".into()));
        }
        Ok(())
    }

    /// Whether decoder node `X(i, j)` (`j ≥ 1`) is built.
    pub fn has_node(&self, i: usize, j: usize) -> bool {
        let l = self.stages();
        j >= 1 && i + j <= l && i + j + self.depth() > l
    }

    fn node_width(&self, i: usize, j: usize) -> usize {
        if j == 0 {
            self.widths[i]
        } else {
            self.decoder_widths[i]
        }
    }

    /// Inputs of `X(i, j)`: same-row predecessors, then the node below-left.
    fn node_inputs(&self, i: usize, j: usize) -> (Vec<(usize, usize)>, (usize, usize)) {
        let same_row = (0..j).filter(|&k| k == 0 || self.has_node(i, k)).map(|k| (i, k)).collect();
        (same_row, (i + 1, j - 1))
    }

    /// Column of the output node `X(0, J)`.
    pub fn output_column(&self) -> usize {
        self.stages()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 {
            return Err(Error::Shape(format!("expected N×C×H×W input, got {shape:?}")));
        }
        if shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.in_channels, shape[1]
            )));
        }
        let m = self.size_multiple();
        let (h, w) = (shape[2], shape[3]);
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            let up = |v: usize| v.max(1).div_ceil(m) * m;
            return Err(Error::Size(format!(
                "input {h}x{w} must be a non-zero multiple of {m}; pad to {}x{}",
                up(h),
                up(w)
            )));
        }
        Ok(())
    }

    /// Every parameter the forward pass references, in a fixed order.
    pub fn layout(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        let mut out = Vec::new();
        let conv = |out: &mut Vec<ParamSpec>, name: &str, o: usize, i: usize, k: usize, bias: bool| {
            out.push(ParamSpec::new(format!("{name}.weight"), vec![o, i, k, k], ParamKind::ConvWeight));
            if bias {
                out.push(ParamSpec::new(format!("{name}.bias"), vec![o], ParamKind::Zeros));
            }
        };
        let norm = |out: &mut Vec<ParamSpec>, name: &str, c: usize, zero_scale: bool| {
            let scale = if zero_scale { ParamKind::Zeros } else { ParamKind::Ones };
            out.push(ParamSpec::new(format!("{name}.weight"), vec![c], scale));
            out.push(ParamSpec::new(format!("{name}.bias"), vec![c], ParamKind::Zeros));
            out.push(ParamSpec::new(format!("{name}.running_mean"), vec![c], ParamKind::RunningMean));
            out.push(ParamSpec::new(format!("{name}.running_var"), vec![c], ParamKind::RunningVar));
        };

        conv(&mut out, "stem.conv", self.widths[0], self.in_channels, self.stem_kernel, false);
        norm(&mut out, "stem.bn", self.widths[0], false);
        for s in 1..=self.stages() {
            for b in 0..self.blocks[s - 1] {
                let p = format!("enc{s}.{b}");
                let cin = if b == 0 { self.widths[s - 1] } else { self.widths[s] };
                let cout = self.widths[s];
                let mid = (cout / 4).max(1);
                conv(&mut out, &format!("{p}.conv1"), mid, cin, 1, false);
                norm(&mut out, &format!("{p}.bn1"), mid, false);
                conv(&mut out, &format!("{p}.conv2"), mid, mid, 3, false);
                norm(&mut out, &format!("{p}.bn2"), mid, false);
                conv(&mut out, &format!("{p}.conv3"), cout, mid, 1, false);
                norm(&mut out, &format!("{p}.bn3"), cout, true);
                if b == 0 {
                    conv(&mut out, &format!("{p}.down.conv"), cout, cin, 1, false);
                    norm(&mut out, &format!("{p}.down.bn"), cout, false);
                }
            }
        }
        for (i, j) in self.decoder_nodes() {
            let p = format!("dec.{i}_{j}");
            let (row, below) = self.node_inputs(i, j);
            let cin: usize =
                row.iter().map(|&(a, b)| self.node_width(a, b)).sum::<usize>() + self.node_width(below.0, below.1);
            let c = self.decoder_widths[i];
            conv(&mut out, &format!("{p}.conv1"), c, cin, 3, false);
            norm(&mut out, &format!("{p}.bn1"), c, false);
            conv(&mut out, &format!("{p}.conv2"), c, c, 3, false);
            norm(&mut out, &format!("{p}.bn2"), c, false);
            if self.attention {
                let hidden = c.div_ceil(self.scse_reduction).max(1);
                conv(&mut out, &format!("{p}.cse.fc1"), hidden, c, 1, true);
                conv(&mut out, &format!("{p}.cse.fc2"), c, hidden, 1, true);
                conv(&mut out, &format!("{p}.sse.conv"), 1, c, 1, true);
            }
        }
        conv(&mut out, "head", self.classes, self.decoder_widths[0], 1, true);
        Ok(out)
    }

    /// Decoder nodes in evaluation order (column by column).
    pub fn decoder_nodes(&self) -> Vec<(usize, usize)> {
        let l = self.stages();
        let mut v = Vec::new();
        for j in 1..=l {
            for i in 0..=l - j {
                if self.has_node(i, j) {
                    v.push((i, j));
                }
            }
        }
        v
    }

    pub fn trainable_parameter_count(&self) -> Result<usize> {
        Ok(self.layout()?.iter().filter(|p| p.kind.trainable()).map(|p| p.numel()).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Zeros,
    Ones,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, kind: ParamKind) -> Self {
        Self { name, shape, kind }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Fan-in scaled uniform weights, unit norm scales, zero biases and shifts;
/// the last norm of each residual branch starts at zero.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in config.layout()? {
        let n = spec.numel();
        let data: Vec<T> = match spec.kind {
            ParamKind::ConvWeight => {
                let fan_in: usize = spec.shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
            }
            ParamKind::Zeros | ParamKind::RunningMean => vec![T::zero(); n],
            ParamKind::Ones | ParamKind::RunningVar => vec![T::one(); n],
        };
        store.insert(spec.name, Tensor::new(&spec.shape, data)?, spec.kind.trainable())?;
    }
    Ok(store)
}

fn conv_bn_relu<T: Real>(g: &mut Graph<'_, T>, x: Var, conv: &str, bn: &str, spec: ConvSpec, relu: bool) -> Result<Var> {
    let w = g.scoped_param(&format!("{conv}.weight"))?;
    let y = g.conv2d(x, w, None, spec)?;
    let y = g.batch_norm(y, bn)?;
    Ok(if relu { g.relu(y) } else { y })
}

fn pointwise<T: Real>(g: &mut Graph<'_, T>, x: Var, name: &str) -> Result<Var> {
    let w = g.scoped_param(&format!("{name}.weight"))?;
    let b = g.scoped_param(&format!("{name}.bias"))?;
    g.conv2d(x, w, Some(b), ConvSpec::new(1, 0, PadMode::Zeros))
}

/// Channel excitation: spatial mean, bottleneck MLP, sigmoid gate per channel.
pub fn cse<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    g.push_scope("cse");
    let z = g.spatial_mean(x)?;
    let h = pointwise(g, z, "fc1")?;
    let h = g.relu(h);
    let s = pointwise(g, h, "fc2")?;
    let s = g.sigmoid(s);
    let y = g.scale_channels(x, s);
    g.pop_scope();
    y
}

/// Spatial excitation: 1×1 conv to one map, sigmoid gate per pixel.
pub fn sse<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    g.push_scope("sse");
    let q = pointwise(g, x, "conv")?;
    let q = g.sigmoid(q);
    let y = g.scale_pixels(x, q);
    g.pop_scope();
    y
}

pub fn scse<T: Real>(g: &mut Graph<'_, T>, x: Var, mode: ScseMode) -> Result<Var> {
    let a = cse(g, x)?;
    let b = sse(g, x)?;
    match mode {
        ScseMode::Add => g.add(a, b),
        ScseMode::Max => g.maximum(a, b),
    }
}

fn bottleneck<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, x: Var, stride: usize, project: bool) -> Result<Var> {
    let pm = cfg.pad_mode;
    let one = ConvSpec::new(1, 0, pm);
    let y = conv_bn_relu(g, x, "conv1", "bn1", one, true)?;
    let y = conv_bn_relu(g, y, "conv2", "bn2", ConvSpec::new(stride, 1, pm), true)?;
    let y = conv_bn_relu(g, y, "conv3", "bn3", one, false)?;
    let shortcut = if project {
        conv_bn_relu(g, x, "down.conv", "down.bn", ConvSpec::new(stride, 0, pm), false)?
    } else {
        x
    };
    let s = g.add(y, shortcut)?;
    Ok(g.relu(s))
}

/// Stem and residual stages; returns `X(0,0)` (half resolution) followed by
/// every stage output `X(s,0)`.
pub fn encoder_forward<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, x: Var) -> Result<Vec<Var>> {
    cfg.check_input(g.value(x).shape())?;
    g.push_scope("stem");
    let k = cfg.stem_kernel;
    let x0 = conv_bn_relu(g, x, "conv", "bn", ConvSpec::new(2, k / 2, cfg.pad_mode), true)?;
    g.pop_scope();
    let mut feats = vec![x0];
    let mut h = g.max_pool2(x0)?;
    for s in 1..=cfg.stages() {
        for b in 0..cfg.blocks[s - 1] {
            g.push_scope(format!("enc{s}.{b}"));
            let stride = if b == 0 && s > 1 { 2 } else { 1 };
            h = bottleneck(g, cfg, h, stride, b == 0)?;
            g.pop_scope();
        }
        feats.push(h);
    }
    Ok(feats)
}

fn conv_block<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let spec = ConvSpec::new(1, 1, cfg.pad_mode);
    let y = conv_bn_relu(g, x, "conv1", "bn1", spec, true)?;
    conv_bn_relu(g, y, "conv2", "bn2", spec, true)
}

/// Dense grid of decoder nodes over the encoder features; returns `X(0, J)`.
pub fn nested_decoder_forward<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, feats: &[Var]) -> Result<Var> {
    let l = cfg.stages();
    if feats.len() != l + 1 {
        return Err(Error::Shape(format!("decoder needs {} encoder maps, got {}", l + 1, feats.len())));
    }
    let mut grid: Vec<Vec<Option<Var>>> = (0..=l).map(|_| vec![None; l + 1]).collect();
    for (i, &f) in feats.iter().enumerate() {
        grid[i][0] = Some(f);
    }
    for (i, j) in cfg.decoder_nodes() {
        g.push_scope(format!("dec.{i}_{j}"));
        let (row, below) = cfg.node_inputs(i, j);
        let mut parts: Vec<Var> = row.iter().map(|&(a, b)| grid[a][b].expect("row input built")).collect();
        let up = g.upsample2(grid[below.0][below.1].expect("lower input built"))?;
        parts.push(up);
        let cat = g.concat(&parts)?;
        let mut y = conv_block(g, cfg, cat)?;
        if cfg.attention {
            y = scse(g, y, cfg.scse_mode)?;
        }
        grid[i][j] = Some(y);
        g.pop_scope();
    }
    Ok(grid[0][cfg.output_column()].expect("output node built"))
}

/// Full network; returns `N×classes×H×W` logits.
pub fn cryonet_forward<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let feats = encoder_forward(g, cfg, x)?;
    let top = nested_decoder_forward(g, cfg, &feats)?;
    let logits = pointwise(g, top, "head")?;
    g.upsample2(logits)
}

/// A configuration with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CryoNet {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
}

impl CryoNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let xv = g.input(x);
        let y = cryonet_forward(&mut g, &self.config, xv)?;
        if let Some(label) = g.first_non_finite() {
            return Err(Error::Numerical(format!("non-finite activation at {label}")));
        }
        Ok(g.value(y).clone())
    }

    /// Eval-mode per-pixel class probabilities.
    pub fn probabilities(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        softmax_channels(&self.logits(x)?)
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}
