use super::NnError;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam with coupled L2: `l2_weight · θ` is added to the gradient before the
/// moment updates.
///
/// One state owns the moments for a fixed list of parameter tensors. The
/// shapes are fixed by the first call to [`AdamState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
    l2_weight: f64,
}

impl AdamState {
    pub fn new(learning_rate: f64, l2_weight: f64) -> Self {
        Self::with_betas(
            learning_rate,
            l2_weight,
            DEFAULT_BETA1,
            DEFAULT_BETA2,
            DEFAULT_EPSILON,
        )
        .expect("default betas are valid")
    }

    pub fn with_betas(
        learning_rate: f64,
        l2_weight: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self, NnError> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(NnError::InvalidHyperparameter { name, value: b });
            }
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(NnError::InvalidHyperparameter {
                name: "learning_rate",
                value: learning_rate,
            });
        }
        if !(l2_weight >= 0.0 && l2_weight.is_finite()) {
            return Err(NnError::InvalidHyperparameter {
                name: "l2_weight",
                value: l2_weight,
            });
        }
        Ok(Self {
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            beta1,
            beta2,
            epsilon,
            learning_rate,
            l2_weight,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn l2_weight(&self) -> f64 {
        self.l2_weight
    }

    /// Applies one update. On error nothing is modified.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam_step",
                left: (params.len(), 0),
                right: (grads.len(), 0),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    left: (i, p.len()),
                    right: (i, g.len()),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite("gradient"));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self
                .first_moment
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(NnError::ShapeMismatch {
                op: "adam_step (state)",
                left: (self.first_moment.len(), 0),
                right: (params.len(), 0),
            });
        }

        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            for i in 0..p.len() {
                let grad = g[i] + self.l2_weight * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Single-tensor convenience wrapper around [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), NnError> {
    state.step(&mut [params], &[grads])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(0.01, 0.0);
        let mut theta = [0.0];
        adam_step(&mut theta, &[1.0], &mut state).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr · 1/(1 + ε)
        let expected = -0.01 / (1.0 + DEFAULT_EPSILON);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_without_l2_is_noop() {
        let mut state = AdamState::new(0.1, 0.0);
        let mut theta = [1.5, -2.0];
        for _ in 0..5 {
            adam_step(&mut theta, &[0.0, 0.0], &mut state).unwrap();
        }
        assert_eq!(theta, [1.5, -2.0]);
    }

    #[test]
    fn l2_shrinks_toward_zero_like_adam_on_l2_gradient() {
        let mut state = AdamState::new(0.1, 0.5);
        let mut reference = AdamState::new(0.1, 0.0);
        let mut theta = [1.5, -2.0];
        let mut theta_ref = theta;
        for _ in 0..3 {
            adam_step(&mut theta, &[0.0, 0.0], &mut state).unwrap();
            let g = [0.5 * theta_ref[0], 0.5 * theta_ref[1]];
            adam_step(&mut theta_ref, &g, &mut reference).unwrap();
        }
        assert_eq!(theta, theta_ref);
        assert!(theta[0].abs() < 1.5 && theta[1].abs() < 2.0);
    }

    #[test]
    fn zero_learning_rate_never_moves() {
        let mut state = AdamState::new(0.0, 0.3);
        let mut theta = [0.25, 7.0, -1.0];
        for k in 0..10 {
            let g = [k as f64, -1.0, 3.0];
            adam_step(&mut theta, &g, &mut state).unwrap();
        }
        assert_eq!(theta, [0.25, 7.0, -1.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_side_effects() {
        let mut state = AdamState::new(0.1, 0.0);
        let mut theta = [1.0, 2.0];
        let err = adam_step(&mut theta, &[f64::NAN, 0.0], &mut state);
        assert!(matches!(err, Err(NnError::NonFinite(_))));
        assert_eq!(theta, [1.0, 2.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn betas_validated() {
        assert!(AdamState::with_betas(0.1, 0.0, 1.0, 0.999, 1e-8).is_err());
        assert!(AdamState::with_betas(0.1, 0.0, 0.9, 0.0, 1e-8).is_err());
    }

    #[test]
    fn shape_change_rejected() {
        let mut state = AdamState::new(0.1, 0.0);
        let mut a = [0.0; 2];
        adam_step(&mut a, &[1.0, 1.0], &mut state).unwrap();
        let mut b = [0.0; 3];
        assert!(adam_step(&mut b, &[1.0; 3], &mut state).is_err());
    }
}
