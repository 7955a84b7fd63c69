//! Minimal dense tensors and the row-major kernels the model needs, each
//! with its backward pass.

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn add_scaled(&mut self, other: &Tensor<T>, scale: T) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `y = W x + b` for a single vector; `W` is `out × in`.
pub fn matvec<T: Scalar>(w: &Tensor<T>, x: &[T], b: Option<&Tensor<T>>) -> Vec<T> {
    (0..w.rows())
        .map(|i| {
            let v = dot(w.row(i), x);
            b.map_or(v, |b| v + b.data()[i])
        })
        .collect()
}

/// Backward of [`matvec`]: accumulates `dW += dy ⊗ x`, `db += dy`, and
/// returns `Wᵀ dy`.
pub fn matvec_backward<T: Scalar>(
    w: &Tensor<T>,
    x: &[T],
    dy: &[T],
    dw: &mut Tensor<T>,
    db: Option<&mut Tensor<T>>,
) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    for (i, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        for ((dwij, &xj), (dxj, &wij)) in dw
            .row_mut(i)
            .iter_mut()
            .zip(x)
            .zip(dx.iter_mut().zip(w.row(i)))
        {
            *dwij += g * xj;
            *dxj += g * wij;
        }
    }
    if let Some(db) = db {
        for (b, &g) in db.data_mut().iter_mut().zip(dy) {
            *b += g;
        }
    }
    dx
}

/// Row-wise linear map of an `n × in` matrix: returns `n × out`.
pub fn linear_rows<T: Scalar>(x: &[T], n: usize, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let d_in = w.cols();
    let mut out = Vec::with_capacity(n * w.rows());
    for r in 0..n {
        out.extend(matvec(w, &x[r * d_in..(r + 1) * d_in], Some(b)));
    }
    out
}

/// Backward of [`linear_rows`]; returns `dx`.
pub fn linear_rows_backward<T: Scalar>(
    x: &[T],
    n: usize,
    w: &Tensor<T>,
    dy: &[T],
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Vec<T> {
    let (d_in, d_out) = (w.cols(), w.rows());
    let mut dx = Vec::with_capacity(n * d_in);
    for r in 0..n {
        dx.extend(matvec_backward(
            w,
            &x[r * d_in..(r + 1) * d_in],
            &dy[r * d_out..(r + 1) * d_out],
            dw,
            Some(db),
        ));
    }
    dx
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Backward of softmax: `dz = p ⊙ (dp − ⟨p, dp⟩)`.
pub fn softmax_backward<T: Scalar>(p: &[T], dp: &[T]) -> Vec<T> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(&pi, &g)| pi * (g - inner)).collect()
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer norm cache.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(
    x: &[T],
    n: usize,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> (Vec<T>, LayerNormCache<T>) {
    let d = gain.len();
    let eps = T::of(LAYER_NORM_EPS);
    let df = T::of_usize(d);
    let mut out = Vec::with_capacity(n * d);
    let mut normalized = Vec::with_capacity(n * d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for (j, &v) in row.iter().enumerate() {
            let xh = (v - mean) * is;
            normalized.push(xh);
            out.push(gain.data()[j] * xh + bias.data()[j]);
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    dy: &[T],
    dgain: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Vec<T> {
    let d = gain.len();
    let n = cache.inv_std.len();
    let df = T::of_usize(d);
    let mut dx = Vec::with_capacity(n * d);
    for r in 0..n {
        let xh = &cache.normalized[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let mut dxh = Vec::with_capacity(d);
        for j in 0..d {
            dgain.data_mut()[j] += g[j] * xh[j];
            dbias.data_mut()[j] += g[j];
            dxh.push(g[j] * gain.data()[j]);
        }
        let mean_dxh = dxh.iter().copied().sum::<T>() / df;
        let mean_dxh_xh = dot(&dxh, xh) / df;
        let is = cache.inv_std[r];
        for j in 0..d {
            dx.push(is * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh));
        }
    }
    dx
}

const GELU_K: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + T::of(GELU_K) * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let k = T::of(GELU_K);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}
