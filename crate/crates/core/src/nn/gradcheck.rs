/// Relative errors are computed against `max(|analytic|, |numeric|, FLOOR)` so
/// that gradients near zero are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` with central finite differences of `loss` around `params`.
///
/// The closure must be deterministic (dropout in inference mode or fixed masks).
pub fn gradient_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut probe = params.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe);
        probe[i] = orig - step;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i]
            .abs()
            .max(numeric.abs())
            .max(RELATIVE_ERROR_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if !(rel <= max_rel_error) {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_index,
        checked: params.len(),
        tolerance,
        passed: max_rel_error < tolerance,
    }
}
