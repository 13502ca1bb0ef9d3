use super::real::Real;
use crate::error::{Error, Result};

/// Dense row-major array. Activations are `N×C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v as f64)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(N, C, H, W)`; fails for tensors that are not 4-D.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!("expected a 4-D tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v.as_f64() as f32).collect()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks `N` equally shaped `C×H×W` samples into `N×C×H×W`.
    pub fn stack_samples(samples: &[&[f32]], chw: (usize, usize, usize)) -> Result<Self> {
        let (c, h, w) = chw;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            if s.len() != c * h * w {
                return Err(Error::Shape(format!(
                    "sample has {} values, expected {c}x{h}x{w}",
                    s.len()
                )));
            }
            data.extend(s.iter().map(|&v| T::from_f64(v as f64)));
        }
        Self::new(&[samples.len(), c, h, w], data)
    }
}

/// Per-pixel softmax over the channel axis of `N×K×H×W` logits.
pub fn softmax_channels<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, h, w) = logits.dims4()?;
    let hw = h * w;
    let x = logits.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * k * hw;
        for p in 0..hw {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(x[base + c * hw + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                let e = (x[base + c * hw + p] - m).exp();
                out[base + c * hw + p] = e;
                z += e;
            }
            for c in 0..k {
                out[base + c * hw + p] = out[base + c * hw + p] / z;
            }
        }
    }
    Tensor::new(logits.shape(), out)
}
