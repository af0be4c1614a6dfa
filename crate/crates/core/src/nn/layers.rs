use rand::Rng;

use super::{Matrix, NnError};

/// Fully connected layer computing `y = x·W + b` on row-major batches.
///
/// `weight` is stored `in × out` so a batch of row vectors multiplies on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(input_dim, output_dim),
            bias: vec![0.0; output_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let data = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Matrix::new(input_dim, output_dim, data).expect("sized by construction"),
            bias: vec![0.0; output_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        forward_linear(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<LinearGrads, NnError> {
        backward_linear(x, &self.weight, grad_out)
    }
}

pub fn forward_linear(x: &Matrix, weight: &Matrix, bias: &[f64]) -> Result<Matrix, NnError> {
    let mut y = x.matmul(weight)?;
    y.add_row_broadcast(bias)?;
    Ok(y)
}

/// Gradients of `y = x·W + b` given `∂L/∂y`.
pub fn backward_linear(
    x: &Matrix,
    weight: &Matrix,
    grad_out: &Matrix,
) -> Result<LinearGrads, NnError> {
    if grad_out.rows() != x.rows() || grad_out.cols() != weight.cols() {
        return Err(NnError::ShapeMismatch {
            op: "backward_linear",
            left: (x.rows(), weight.cols()),
            right: grad_out.shape(),
        });
    }
    Ok(LinearGrads {
        input: grad_out.matmul_t(weight)?,
        weight: x.t_matmul(grad_out)?,
        bias: grad_out.column_sums(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Linear {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5], [0.0, 0.5, 9.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn scalar_affine() {
        let layer = Linear {
            weight: Matrix::from_rows(&[[2.0]]).unwrap(),
            bias: vec![1.0],
        };
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[7.0]);
        let g = layer
            .backward(&x, &Matrix::from_rows(&[[1.0]]).unwrap())
            .unwrap();
        assert_eq!(g.input.data(), &[2.0]);
        assert_eq!(g.weight.data(), &[3.0]);
        assert_eq!(g.bias, vec![1.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let layer = Linear::zeros(3, 2);
        assert!(layer.forward(&Matrix::zeros(1, 4)).is_err());
        assert!(layer
            .backward(&Matrix::zeros(1, 3), &Matrix::zeros(1, 3))
            .is_err());
    }

    // Loss = Σ c ⊙ (xW + b) with fixed random c, so ∂L/∂y = c.
    #[test]
    fn random_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, din, dout) = (4, 3, 2);
        let layer = Linear::glorot(din, dout, &mut rng);
        let x = Matrix::new(
            n,
            din,
            (0..n * din).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let c = Matrix::new(
            n,
            dout,
            (0..n * dout).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let g = layer.backward(&x, &c).unwrap();

        let loss = |x: &Matrix, w: &Matrix, b: &[f64]| -> f64 {
            let y = forward_linear(x, w, b).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };

        let report = gradient_check(
            |p| {
                let w = Matrix::new(din, dout, p.to_vec()).unwrap();
                loss(&x, &w, &layer.bias)
            },
            layer.weight.data(),
            g.weight.data(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");

        let report = gradient_check(
            |p| {
                let xp = Matrix::new(n, din, p.to_vec()).unwrap();
                loss(&xp, &layer.weight, &layer.bias)
            },
            x.data(),
            g.input.data(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");

        let report = gradient_check(
            |p| loss(&x, &layer.weight, p),
            &layer.bias,
            &g.bias,
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");
    }
}
