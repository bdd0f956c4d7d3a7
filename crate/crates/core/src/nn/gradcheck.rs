use super::Parameters;

/// Central-difference gradient of `loss` with respect to every parameter,
/// in visiting order. Test oracle for the hand-written backward passes.
pub fn finite_difference_gradient<P, F>(params: &P, loss: F, h: f64) -> Vec<f64>
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut flat = base.clone();
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.assign_flat(&flat).expect("same layout");
        let up = loss(&probe);
        flat[i] = base[i] - h;
        probe.assign_flat(&flat).expect("same layout");
        let down = loss(&probe);
        flat[i] = base[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
