use super::scalar::Real;
use crate::error::{shape_err, Result};

/// `(N, C, H, W)`.
pub type Shape = [usize; 4];

/// Dense rank-4 array in NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Shape, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(shape_err!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: Shape, value: S) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// A length-`n` vector stored as `(1, n, 1, 1)`.
    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: [1, data.len(), 1, 1],
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        let [_, cc, hh, ww] = self.shape;
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Softmax over the channel axis for every `(n, h, w)`.
pub fn softmax_channels<S: Real>(logits: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    let mut out = vec![S::zero(); logits.numel()];
    let x = logits.data();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut m = S::neg_infinity();
            for k in 0..c {
                m = m.max(x[base + k * hw + p]);
            }
            let mut z = S::zero();
            for k in 0..c {
                let e = (x[base + k * hw + p] - m).exp();
                out[base + k * hw + p] = e;
                z += e;
            }
            for k in 0..c {
                out[base + k * hw + p] = out[base + k * hw + p] / z;
            }
        }
    }
    Tensor {
        shape: logits.shape(),
        data: out,
    }
}
