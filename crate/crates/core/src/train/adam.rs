use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// `p ← p − lr·λ·p` before the moment update.
    Decoupled,
    /// `g ← g + λ·p` before the moment update.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    _elem: std::marker::PhantomData<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            _elem: std::marker::PhantomData,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `grads[id]` is the gradient of store entry `id`; missing gradients
    /// count as zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(store.entry(id).name.clone()));
                }
            }
        }
        if self.m.is_empty() {
            self.m = store.entries().iter().map(|e| vec![0.0; e.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for id in 0..store.len() {
            if !store.entry(id).trainable {
                continue;
            }
            let grad = grads.get(id).and_then(|g| g.as_ref());
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                let mut x = p[k].as_f64();
                let mut g = grad.map_or(0.0, |g| g.data()[k].as_f64());
                match c.decay_mode {
                    DecayMode::Decoupled => x -= c.learning_rate * c.weight_decay * x,
                    DecayMode::L2 => g += c.weight_decay * x,
                }
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                x -= c.learning_rate * mh / (vh.sqrt() + c.eps);
                p[k] = T::from_f64(x);
            }
        }
        Ok(())
    }
}
