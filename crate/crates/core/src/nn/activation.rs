use crate::error::Result;
use crate::tensor::{Matrix, Real};

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Chain rule through an elementwise sigmoid given its output `p`.
pub fn sigmoid_backward<T: Real>(p: &Matrix<T>, grad_p: &Matrix<T>) -> Result<Matrix<T>> {
    grad_p.ensure_shape("sigmoid_backward", p.shape())?;
    let mut out = grad_p.clone();
    for (g, &pv) in out.data_mut().iter_mut().zip(p.data()) {
        *g *= pv * (T::one() - pv);
    }
    Ok(out)
}

pub fn relu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the pre-activation input.
pub fn relu_backward<T: Real>(input: &Matrix<T>, grad: &Matrix<T>) -> Result<Matrix<T>> {
    grad.ensure_shape("relu_backward", input.shape())?;
    let mut out = grad.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// In-place softmax of one vector.
pub fn softmax<T: Real>(v: &mut [T]) {
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

pub fn softmax_rows<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax(out.row_mut(r));
    }
    out
}

/// Row-wise softmax Jacobian-vector product: `y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_backward<T: Real>(y: &Matrix<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
    dy.ensure_shape("softmax_backward", y.shape())?;
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dr = dy.row(r);
        let inner = crate::tensor::dot(yr, dr);
        for ((o, &yv), &dv) in out.row_mut(r).iter_mut().zip(yr).zip(dr) {
            *o = yv * (dv - inner);
        }
    }
    Ok(out)
}
