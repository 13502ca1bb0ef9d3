//! Central finite differences against the analytic backward pass, in f64.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub mode: Mode,
    /// Coordinates probed per tensor; smaller tensors are probed fully.
    pub samples_per_tensor: usize,
    pub seed: u64,
    pub check_inputs: bool,
    pub check_params: bool,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Richardson-extrapolate the central differences at `eps` and `eps/2`,
    /// cancelling the second-order truncation term.
    pub extrapolate: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            mode: Mode::Eval,
            samples_per_tensor: 8,
            seed: 0,
            check_inputs: true,
            check_params: true,
            floor: 1e-6,
            extrapolate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation changed a ReLU, max-pool or max
    /// decision and were therefore not compared.
    pub skipped: usize,
    /// Label of the first non-finite node when the forward pass is invalid.
    pub non_finite_at: Option<String>,
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

enum Target {
    Input(usize),
    Param(usize),
}

/// Compares the gradient of `Σ f(inputs)·R` (fixed random `R`) with central
/// differences for a sample of input and trainable-parameter coordinates.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let run = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<(Tensor<f64>, u64, Option<String>)> {
        let mut g = Graph::new(store, opts.mode).track_kinks();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let bad = g.first_non_finite().map(str::to_string);
        Ok((g.value(out).clone(), g.kink_fingerprint().unwrap_or(0), bad))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (base_out, base_kinks, bad) = run(store, inputs)?;
    if bad.is_some() {
        return Ok(GradCheckReport {
            max_rel_error: f64::NAN,
            worst: None,
            checked: 0,
            skipped: 0,
            non_finite_at: bad,
        });
    }
    let proj: Vec<f64> = (0..base_out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |out: &Tensor<f64>| out.data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>();

    let (input_grads, param_grads) = {
        let mut g = Graph::new(store, opts.mode).with_input_grads();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let seed = Tensor::new(g.value(out).shape(), proj.clone())?;
        let grads = g.backward(out, seed)?;
        let ig: Vec<Option<Tensor<f64>>> = vars.iter().map(|&v| grads.of(v).cloned()).collect();
        (ig, grads.into_params())
    };

    let mut targets = Vec::new();
    if opts.check_inputs {
        targets.extend((0..inputs.len()).map(Target::Input));
    }
    if opts.check_params {
        targets.extend((0..store.len()).filter(|&id| store.entry(id).trainable).map(Target::Param));
    }

    let mut work_store = store.clone();
    let mut work_inputs = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        non_finite_at: None,
    };
    for t in targets {
        let (name, len) = match t {
            Target::Input(i) => (format!("input{i}"), inputs[i].len()),
            Target::Param(id) => (store.entry(id).name.clone(), store.value(id).len()),
        };
        let picks: Vec<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, opts.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for k in picks {
            let analytic = match t {
                Target::Input(i) => input_grads[i].as_ref().map_or(0.0, |g| g.data()[k]),
                Target::Param(id) => param_grads[id].as_ref().map_or(0.0, |g| g.data()[k]),
            };
            let mut eval_at = |delta: f64| -> Result<(f64, u64)> {
                let slot = match t {
                    Target::Input(i) => &mut work_inputs[i].data_mut()[k],
                    Target::Param(id) => &mut work_store.value_mut(id).data_mut()[k],
                };
                let orig = *slot;
                *slot = orig + delta;
                let (out, kinks, _) = run(&work_store, &work_inputs)?;
                let slot = match t {
                    Target::Input(i) => &mut work_inputs[i].data_mut()[k],
                    Target::Param(id) => &mut work_store.value_mut(id).data_mut()[k],
                };
                *slot = orig;
                Ok((objective(&out), kinks))
            };
            let mut central = |h: f64| -> Result<Option<f64>> {
                let (fp, kp) = eval_at(h)?;
                let (fm, km) = eval_at(-h)?;
                Ok((kp == base_kinks && km == base_kinks).then(|| (fp - fm) / (2.0 * h)))
            };
            let numeric = match central(opts.eps)? {
                Some(d) if opts.extrapolate => central(opts.eps / 2.0)?.map(|d2| (4.0 * d2 - d) / 3.0),
                d => d,
            };
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for {name}[{k}]")));
            }
            let e = relative_error(analytic, numeric, opts.floor);
            report.checked += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}
