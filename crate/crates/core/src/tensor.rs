use rand::Rng;

use crate::scalar::{c, Scalar};

/// Dense row-major tensor. Only 1-D and 2-D shapes are used.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Independent uniform draws on `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| c(rng.random_range(-scale..=scale)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
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
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.cols();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let w = self.cols();
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out[m×n] = a[m×k] · b[k×n] + bias[n]`.
pub fn matmul_bias<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        if let Some(bias) = bias {
            orow.copy_from_slice(bias);
        }
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(av, &b[p * n..(p + 1) * n], orow);
        }
    }
    out
}

/// Backward of `out = a·b + bias`. Accumulates into `da`, `db`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_bias_backward<T: Scalar>(
    dout: &[T],
    a: &[T],
    m: usize,
    k: usize,
    b: &[T],
    n: usize,
    da: &mut [T],
    db: &mut [T],
    dbias: Option<&mut [T]>,
) {
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        let darow = &mut da[i * k..(i + 1) * k];
        for p in 0..k {
            darow[p] += dot(drow, &b[p * n..(p + 1) * n]);
            let av = arow[p];
            if av != T::zero() {
                axpy(av, drow, &mut db[p * n..(p + 1) * n]);
            }
        }
    }
    if let Some(dbias) = dbias {
        for i in 0..m {
            for (g, &d) in dbias.iter_mut().zip(&dout[i * n..(i + 1) * n]) {
                *g += d;
            }
        }
    }
}

/// Numerically stable softmax in place.
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
