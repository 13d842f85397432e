/// Root mean squared error.
///
/// # Panics
///
/// Panics on empty or unequal inputs.
pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    assert!(!pred.is_empty(), "rmse of empty vectors");
    assert_eq!(pred.len(), truth.len(), "rmse length mismatch");
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (sq / pred.len() as f64).sqrt()
}

/// Pearson correlation in percent; 0 when either side is constant.
///
/// # Panics
///
/// Panics on fewer than two points or unequal inputs.
pub fn pearson_corr(pred: &[f64], truth: &[f64]) -> f64 {
    assert!(pred.len() >= 2, "correlation needs at least two points");
    assert_eq!(pred.len(), truth.len(), "correlation length mismatch");
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    // Relative guard so a constant vector with rounding noise counts as constant.
    let tiny = |v: f64, m: f64| v <= 1e-24 * n * (1.0 + m * m);
    if tiny(vp, mp) || tiny(vt, mt) {
        return 0.0;
    }
    (100.0 * cov / (vp.sqrt() * vt.sqrt())).clamp(-100.0, 100.0)
}
