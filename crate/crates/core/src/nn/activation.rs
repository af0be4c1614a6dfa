//! Elementwise activations and row softmax, each with its backward pass.
//!
//! Backward functions take the forward *output* (not the input), which is all
//! tanh, sigmoid and softmax need.

use super::Matrix;

pub fn tanh(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

pub fn tanh_backward(output: &Matrix, grad_out: &Matrix) -> Matrix {
    zip_map(output, grad_out, |y, g| g * (1.0 - y * y))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward(output: &Matrix, grad_out: &Matrix) -> Matrix {
    zip_map(output, grad_out, |y, g| g * y * (1.0 - y))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Given `p = softmax(s)` and `∂L/∂p`, returns `∂L/∂s`.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let s = softmax(x.row(r));
        out.row_mut(r).copy_from_slice(&s);
    }
    out
}

/// `log Σ exp(v)` computed without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        // all -inf (empty sum) or an +inf term
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.shape(), b.shape(), "activation backward shape");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::new(a.rows(), a.cols(), data).expect("same shape")
}
