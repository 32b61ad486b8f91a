//! Central finite differences. Only forward evaluations are used, so these
//! helpers serve as an independent oracle for the analytic backward passes.

use super::Mlp;

/// `∂loss/∂θ_i ≈ (loss(θ + h e_i) − loss(θ − h e_i)) / 2h` for every
/// parameter of `net`.
pub fn central_difference(net: &Mlp, h: f64, mut loss: impl FnMut(&Mlp) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    let n = net.param_count();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let original = *probe.params().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = original + h;
        let plus = loss(&probe);
        *probe.params_mut().nth(i).unwrap() = original - h;
        let minus = loss(&probe);
        *probe.params_mut().nth(i).unwrap() = original;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Same as [`central_difference`] over a plain parameter vector.
pub fn central_difference_vec(params: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let original = probe[i];
            probe[i] = original + h;
            let plus = loss(&probe);
            probe[i] = original - h;
            let minus = loss(&probe);
            probe[i] = original;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
