//! Elementwise activations and dense-layer helpers shared by the forward and
//! backward passes. Node features are stored row-wise (`N × D`) and weights as
//! `out × in`, so a dense layer is `X · Wᵀ + b`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::Real;

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

/// ReLU derivative as a function of the activation output; the subgradient at 0 is 0.
pub fn relu_grad_from_output<F: Real>(y: F) -> F {
    if y > F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

pub fn leaky_relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x * F::of(LEAKY_SLOPE)
    }
}

pub fn leaky_relu_grad<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        F::of(LEAKY_SLOPE)
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `x · wᵀ + b` with `b` broadcast over rows.
pub fn linear<F: Real>(x: ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Accumulates `dW += dyᵀ · x` and `db += Σ_rows dy`; returns `dx = dy · W`.
pub fn linear_backward<F: Real>(
    x: ArrayView2<F>,
    w: ArrayView2<F>,
    dy: ArrayView2<F>,
    dw: &mut Array2<F>,
    db: Option<&mut Array1<F>>,
) -> Array2<F> {
    *dw += &dy.t().dot(&x);
    if let Some(db) = db {
        *db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w)
}

pub fn map_inplace<F: Real>(a: &mut Array2<F>, f: impl Fn(F) -> F) {
    a.mapv_inplace(f);
}

/// Broadcasts a row vector into an `n × len` matrix.
pub fn repeat_row<F: Real>(row: ArrayView1<F>, n: usize) -> Array2<F> {
    let mut out = Array2::zeros((n, row.len()));
    for mut r in out.rows_mut() {
        r.assign(&row);
    }
    out
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn activations() {
        assert_eq!(relu(-1.0f64), 0.0);
        assert_eq!(relu(2.0f64), 2.0);
        assert_eq!(leaky_relu(-2.0f64), -0.02);
        assert_eq!(relu_grad_from_output(0.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0f64).is_finite());
        assert!(sigmoid(800.0f64) <= 1.0);
    }

    #[test]
    fn single_linear_layer_gradient_is_x_transpose_delta() {
        let x = array![[1.0f64, 2.0], [3.0, -1.0]];
        let w = array![[0.5f64, -0.25], [1.0, 2.0], [0.0, 1.0]];
        let b = array![0.1f64, 0.2, 0.3];
        let y = linear(x.view(), w.view(), b.view());
        assert_eq!(y[[0, 1]], 1.0 + 4.0 + 0.2);
        let delta = array![[1.0f64, 0.0, -1.0], [0.5, 2.0, 1.0]];
        let mut dw = Array2::zeros((3, 2));
        let mut db = Array1::zeros(3);
        let dx = linear_backward(x.view(), w.view(), delta.view(), &mut dw, Some(&mut db));
        assert_eq!(dw, delta.t().dot(&x));
        assert_eq!(db, array![1.5, 2.0, 0.0]);
        assert_eq!(dx, delta.dot(&w));
    }
}
