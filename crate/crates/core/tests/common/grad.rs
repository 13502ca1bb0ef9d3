//! Finite-difference gradient cases for every differentiable layer and for
//! small complete networks.

use cryostack::nn::*;
use cryostack::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;

type Forward = Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub store: ParamStore<f64>,
    pub inputs: Vec<Tensor<f64>>,
    pub mode: Mode,
    pub forward: Forward,
}

pub fn randn(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0) * scale).collect()).unwrap()
}

fn put(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng, name: &str, shape: &[usize]) {
    store.insert(name, randn(r, shape, 0.5), true).unwrap();
}

fn put_bn(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng, prefix: &str, c: usize) {
    let gamma = (0..c).map(|_| r.gen_range(0.5..1.5)).collect();
    store.insert(format!("{prefix}.weight"), Tensor::new(&[c], gamma).unwrap(), true).unwrap();
    put(store, r, &format!("{prefix}.bias"), &[c]);
    store.insert(format!("{prefix}.running_mean"), randn(r, &[c], 0.3), false).unwrap();
    let var = (0..c).map(|_| r.gen_range(0.5..2.0)).collect();
    store.insert(format!("{prefix}.running_var"), Tensor::new(&[c], var).unwrap(), false).unwrap();
}

fn put_pointwise(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng, name: &str, o: usize, i: usize) {
    put(store, r, &format!("{name}.weight"), &[o, i, 1, 1]);
    put(store, r, &format!("{name}.bias"), &[o]);
}

fn case(name: &'static str, store: ParamStore<f64>, inputs: Vec<Tensor<f64>>, mode: Mode, forward: Forward) -> Case {
    Case {
        name,
        store,
        inputs,
        mode,
        forward,
    }
}

fn conv_case(name: &'static str, r: &mut ChaCha8Rng, k: usize, spec: ConvSpec, bias: bool, size: usize) -> Case {
    let mut s = ParamStore::new();
    put(&mut s, r, "w", &[4, 3, k, k]);
    if bias {
        put(&mut s, r, "b", &[4]);
    }
    let x = randn(r, &[2, 3, size, size], 1.0);
    case(
        name,
        s,
        vec![x],
        Mode::Eval,
        Box::new(move |g, v| {
            let w = g.param("w")?;
            let b = if bias { Some(g.param("b")?) } else { None };
            g.conv2d(v[0], w, b, spec)
        }),
    )
}

/// Two-stage network small enough for exhaustive checking but with every
/// decoder connection type present.
pub fn two_stage_config() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        classes: 3,
        widths: vec![4, 8, 12],
        blocks: vec![1, 2],
        decoder_widths: vec![4, 6],
        scse_reduction: 2,
        stem_kernel: 3,
        ..ModelConfig::desk()
    }
}

/// Initialized parameters with every trainable tensor perturbed, so that
/// zero-initialized scales and biases are exercised away from zero.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut store = init_params::<f64>(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0xA5A5);
    for id in 0..store.len() {
        let name = store.entry(id).name.clone();
        let trainable = store.entry(id).trainable;
        for v in store.value_mut(id).data_mut() {
            if trainable {
                *v += r.gen_range(-0.2..0.2);
            } else if name.ends_with("running_var") {
                *v = r.gen_range(0.5..2.0);
            } else {
                *v = r.gen_range(-0.3..0.3);
            }
        }
    }
    store
}

fn net_case(name: &'static str, cfg: ModelConfig, seed: u64, mode: Mode, batch: usize, r: &mut ChaCha8Rng) -> Case {
    // at least 16x16 and twice the minimum size, so the bottleneck batch
    // statistics in train mode average over enough values for a 1e-3 step
    let m = 16usize.max(2 * cfg.size_multiple());
    let x = randn(r, &[batch, cfg.in_channels, m, m], 1.0);
    let store = perturbed_params(&cfg, seed);
    case(name, store, vec![x], mode, Box::new(move |g, v| cryonet_forward(g, &cfg, v[0])))
}

pub fn cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    let mut out = vec![
        conv_case("conv3x3_zeros_bias", r, 3, ConvSpec::new(1, 1, PadMode::Zeros), true, 6),
        conv_case("conv3x3_replicate_stride2", r, 3, ConvSpec::new(2, 1, PadMode::Replicate), false, 7),
        conv_case("conv7x7_stem", r, 7, ConvSpec::new(2, 3, PadMode::Replicate), false, 8),
        conv_case("conv1x1_pointwise", r, 1, ConvSpec::new(1, 0, PadMode::Zeros), true, 5),
        conv_case("conv1x1_stride2", r, 1, ConvSpec::new(2, 0, PadMode::Replicate), false, 6),
    ];
    for (name, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_eval", Mode::Eval)] {
        let mut s = ParamStore::new();
        put_bn(&mut s, r, "bn", 3);
        out.push(case(name, s, vec![randn(r, &[3, 3, 4, 4], 2.0)], mode, Box::new(|g, v| g.batch_norm(v[0], "bn"))));
    }
    let unary: [(&'static str, Forward); 5] = [
        ("relu", Box::new(|g, v| Ok(g.relu(v[0])))),
        ("max_pool2", Box::new(|g, v| g.max_pool2(v[0]))),
        ("upsample2", Box::new(|g, v| g.upsample2(v[0]))),
        ("sigmoid", Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("spatial_mean", Box::new(|g, v| g.spatial_mean(v[0]))),
    ];
    for (name, f) in unary {
        out.push(case(name, ParamStore::new(), vec![randn(r, &[2, 3, 6, 6], 1.0)], Mode::Eval, f));
    }
    let binary: [(&'static str, Forward); 3] = [
        ("add", Box::new(|g, v| g.add(v[0], v[1]))),
        ("maximum", Box::new(|g, v| g.maximum(v[0], v[1]))),
        ("concat", Box::new(|g, v| g.concat(&[v[0], v[1], v[0]]))),
    ];
    for (name, f) in binary {
        let inputs = vec![randn(r, &[2, 3, 4, 5], 1.0), randn(r, &[2, 3, 4, 5], 1.0)];
        out.push(case(name, ParamStore::new(), inputs, Mode::Eval, f));
    }
    out.push(case(
        "scale_channels",
        ParamStore::new(),
        vec![randn(r, &[2, 3, 4, 4], 1.0), randn(r, &[2, 3, 1, 1], 1.0)],
        Mode::Eval,
        Box::new(|g, v| g.scale_channels(v[0], v[1])),
    ));
    out.push(case(
        "scale_pixels",
        ParamStore::new(),
        vec![randn(r, &[2, 3, 4, 4], 1.0), randn(r, &[2, 1, 4, 4], 1.0)],
        Mode::Eval,
        Box::new(|g, v| g.scale_pixels(v[0], v[1])),
    ));

    let attention_store = |r: &mut ChaCha8Rng| {
        let mut s = ParamStore::new();
        put_pointwise(&mut s, r, "cse.fc1", 2, 6);
        put_pointwise(&mut s, r, "cse.fc2", 6, 2);
        put_pointwise(&mut s, r, "sse.conv", 1, 6);
        s
    };
    let attention: [(&'static str, Forward); 4] = [
        ("cse", Box::new(|g, v| cse(g, v[0]))),
        ("sse", Box::new(|g, v| sse(g, v[0]))),
        ("scse_add", Box::new(|g, v| scse(g, v[0], ScseMode::Add))),
        ("scse_max", Box::new(|g, v| scse(g, v[0], ScseMode::Max))),
    ];
    for (name, f) in attention {
        let s = attention_store(r);
        out.push(case(name, s, vec![randn(r, &[2, 6, 4, 4], 1.0)], Mode::Eval, f));
    }

    let tiny = ModelConfig { in_channels: 3, ..ModelConfig::tiny() };
    out.push(net_case("tiny_net_30_bands", ModelConfig::tiny(), seed, Mode::Eval, 1, r));
    out.push(net_case("tiny_net_eval", tiny.clone(), seed, Mode::Eval, 2, r));
    out.push(net_case("tiny_net_train", tiny, seed, Mode::Train, 2, r));
    out.push(net_case("two_stage_net_eval", two_stage_config(), seed, Mode::Eval, 2, r));
    out.push(net_case("two_stage_net_train", two_stage_config(), seed, Mode::Train, 2, r));
    out.push(net_case(
        "two_stage_unet_max_attention",
        ModelConfig {
            nested_depth: Some(1),
            scse_mode: ScseMode::Max,
            ..two_stage_config()
        },
        seed,
        Mode::Eval,
        2,
        r,
    ));
    out
}

pub fn check(case: &Case, seed: u64) -> GradCheckReport {
    let opts = GradCheckOptions {
        mode: case.mode,
        seed,
        extrapolate: true,
        ..GradCheckOptions::default()
    };
    grad_check(&case.store, &case.inputs, |g, v| (case.forward)(g, v), &opts).unwrap()
}
