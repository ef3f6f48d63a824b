/// Central-difference gradient of `f` at `params`.
pub fn numerical_gradient<F>(f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Worst relative error between the analytic gradient returned by
/// `loss_and_grad` and central finite differences.
///
/// Each entry is `|analytic - numeric| / max(|numeric|, floor)` where `floor`
/// is 1e-3 of the largest numeric component, so entries that are negligible
/// next to the overall gradient are not judged on finite-difference noise.
pub fn grad_check<F>(loss_and_grad: F, params: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_and_grad(params);
    let numeric = numerical_gradient(|p| loss_and_grad(p).0, params, eps);
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}
