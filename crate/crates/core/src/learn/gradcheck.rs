//! Central finite differences for gradient checks.

/// Central-difference gradient of `f` at `params` with step `1e-5`.
///
/// `params` is perturbed in place and restored.
pub fn finite_difference<F>(params: &mut [f64], mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    const H: f64 = 1e-5;
    let mut g = vec![0.0; params.len()];
    for i in 0..params.len() {
        let x = params[i];
        params[i] = x + H;
        let up = f(params);
        params[i] = x - H;
        let down = f(params);
        params[i] = x;
        g[i] = (up - down) / (2.0 * H);
    }
    g
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
