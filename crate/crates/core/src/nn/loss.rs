use super::activation::{log_sum_exp, softmax};
use super::NnError;

/// Loss value and gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Softmax cross-entropy: `-log softmax(logits)[label]`, gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad, NnError> {
    if label >= logits.len() {
        return Err(NnError::InvalidLabel {
            label,
            classes: logits.len(),
        });
    }
    let loss = log_sum_exp(logits) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok(LossGrad { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln2() {
        let lg = cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(lg.grad, vec![-0.5, 0.5]);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let lg = cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!(lg.loss < 1e-8);
    }

    #[test]
    fn invalid_label() {
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(NnError::InvalidLabel { label: 2, .. })
        ));
    }

    #[test]
    fn random_logits_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let logits = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let label = rng.random_range(0..2);
            let lg = cross_entropy(&logits, label).unwrap();
            for i in 0..2 {
                let h = 1e-5;
                let mut p = logits;
                p[i] += h;
                let up = cross_entropy(&p, label).unwrap().loss;
                p[i] -= 2.0 * h;
                let down = cross_entropy(&p, label).unwrap().loss;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - lg.grad[i]).abs() < 1e-6, "{fd} vs {}", lg.grad[i]);
            }
            let report = gradient_check(
                |p| cross_entropy(p, label).unwrap().loss,
                &logits,
                &lg.grad,
                1e-5,
                1e-4,
            );
            assert!(report.passed);
        }
    }
}
