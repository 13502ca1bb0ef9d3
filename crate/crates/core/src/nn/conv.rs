//! 2-D cross-correlation via im2col + gemm. Samples are processed in
//! parallel; kernel gradients are reduced over samples in index order.

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zeros,
    /// Out-of-range taps read the nearest edge pixel.
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl ConvSpec {
    pub fn new(stride: usize, pad: usize, pad_mode: PadMode) -> Self {
        Self { stride, pad, pad_mode }
    }

    pub fn out_size(&self, size: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Shape("convolution stride must be positive".into()));
        }
        let padded = size + 2 * self.pad;
        if padded < k {
            return Err(Error::Shape(format!(
                "kernel {k} does not fit input {size} with padding {}",
                self.pad
            )));
        }
        Ok((padded - k) / self.stride + 1)
    }

    fn is_pointwise(&self, k: usize) -> bool {
        k == 1 && self.stride == 1 && self.pad == 0
    }
}

struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geom {
    #[inline]
    fn src(&self, o: usize, kk: usize, size: usize) -> Option<usize> {
        let i = (o * self.spec.stride + kk) as isize - self.spec.pad as isize;
        if i >= 0 && (i as usize) < size {
            Some(i as usize)
        } else {
            match self.spec.pad_mode {
                PadMode::Zeros => None,
                PadMode::Replicate => Some(i.clamp(0, size as isize - 1) as usize),
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let howo = self.ho * self.wo;
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * howo..(row + 1) * howo];
                    for oh in 0..self.ho {
                        let d = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        match self.src(oh, ki, self.h) {
                            None => d.iter_mut().for_each(|v| *v = T::zero()),
                            Some(ih) => {
                                let srow = &plane[ih * self.w..(ih + 1) * self.w];
                                for (ow, v) in d.iter_mut().enumerate() {
                                    *v = match self.src(ow, kj, self.w) {
                                        Some(iw) => srow[iw],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let howo = self.ho * self.wo;
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &col[row * howo..(row + 1) * howo];
                    for oh in 0..self.ho {
                        let Some(ih) = self.src(oh, ki, self.h) else { continue };
                        let s = &src[oh * self.wo..(oh + 1) * self.wo];
                        for (ow, &g) in s.iter().enumerate() {
                            if let Some(iw) = self.src(ow, kj, self.w) {
                                plane[ih * self.w + iw] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<(usize, usize, Geom)> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, ci, k, k2) = w.dims4()?;
    if ci != c {
        return Err(Error::Shape(format!("conv kernel expects {ci} input channels, input has {c}")));
    }
    if k != k2 {
        return Err(Error::Shape(format!("conv kernel must be square, got {k}x{k2}")));
    }
    let ho = spec.out_size(h, k)?;
    let wo = spec.out_size(wd, k)?;
    Ok((
        n,
        o,
        Geom {
            c,
            h,
            w: wd,
            k,
            ho,
            wo,
            spec,
        },
    ))
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: ConvSpec) -> Result<Tensor<T>> {
    let (n, o, g) = geometry(x, w, spec)?;
    if let Some(b) = b {
        if b.len() != o {
            return Err(Error::Shape(format!("conv bias has {} entries, expected {o}", b.len())));
        }
    }
    let ckk = g.c * g.k * g.k;
    let howo = g.ho * g.wo;
    let in_stride = g.c * g.h * g.w;
    let pointwise = spec.is_pointwise(g.k);
    let mut out = vec![T::zero(); n * o * howo];
    let xd = x.data();
    let wd = w.data();
    par::for_each_chunk_mut(&mut out, o * howo, |s, dst| {
        let xs = &xd[s * in_stride..(s + 1) * in_stride];
        let mut col_buf;
        let col: &[T] = if pointwise {
            xs
        } else {
            col_buf = vec![T::zero(); ckk * howo];
            g.im2col(xs, &mut col_buf);
            &col_buf
        };
        T::gemm(o, ckk, howo, T::one(), wd, ckk as isize, 1, col, howo as isize, 1, T::zero(), dst, howo as isize, 1);
        if let Some(b) = b {
            for (oc, plane) in dst.chunks_mut(howo).enumerate() {
                let bv = b.data()[oc];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new(&[n, o, g.ho, g.wo], out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: ConvSpec,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let (n, o, g) = geometry(x, w, spec)?;
    let ckk = g.c * g.k * g.k;
    let howo = g.ho * g.wo;
    let in_stride = g.c * g.h * g.w;
    let pointwise = spec.is_pointwise(g.k);
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    if dyd.len() != n * o * howo {
        return Err(Error::Shape("conv output gradient has the wrong size".into()));
    }

    let per_sample = par::map_range(n, |s| {
        let xs = &xd[s * in_stride..(s + 1) * in_stride];
        let dys = &dyd[s * o * howo..(s + 1) * o * howo];
        let mut col_buf;
        let col: &[T] = if pointwise {
            xs
        } else {
            col_buf = vec![T::zero(); ckk * howo];
            g.im2col(xs, &mut col_buf);
            &col_buf
        };
        let mut dw = vec![T::zero(); o * ckk];
        // dW = dY · colᵀ
        T::gemm(o, howo, ckk, T::one(), dys, howo as isize, 1, col, 1, howo as isize, T::zero(), &mut dw, ckk as isize, 1);
        let db: Vec<T> = dys.chunks(howo).map(|p| p.iter().copied().sum()).collect();
        let dx = need_dx.then(|| {
            let mut dx = vec![T::zero(); in_stride];
            if pointwise {
                T::gemm(ckk, o, howo, T::one(), wd, 1, ckk as isize, dys, howo as isize, 1, T::zero(), &mut dx, howo as isize, 1);
            } else {
                let mut dcol = vec![T::zero(); ckk * howo];
                T::gemm(ckk, o, howo, T::one(), wd, 1, ckk as isize, dys, howo as isize, 1, T::zero(), &mut dcol, howo as isize, 1);
                g.col2im(&dcol, &mut dx);
            }
            dx
        });
        (dw, db, dx)
    });

    let mut dw = vec![T::zero(); o * ckk];
    let mut db = vec![T::zero(); o];
    let mut dx = need_dx.then(|| Vec::with_capacity(n * in_stride));
    for (sdw, sdb, sdx) in per_sample {
        dw.iter_mut().zip(&sdw).for_each(|(a, &b)| *a += b);
        db.iter_mut().zip(&sdb).for_each(|(a, &b)| *a += b);
        if let (Some(dx), Some(sdx)) = (dx.as_mut(), sdx) {
            dx.extend_from_slice(&sdx);
        }
    }
    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        dw: Tensor::new(w.shape(), dw)?,
        db: Tensor::new(&[o], db)?,
    })
}
