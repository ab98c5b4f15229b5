//! The two clipped objectives, as pure functions: value and per-sample
//! gradient with respect to the new log-probabilities / value estimates.

/// Clipped importance-ratio surrogate, averaged over all samples:
/// `J = mean( min(r * A, clip(r, 1-eps, 1+eps) * A) )` with
/// `r = exp(logp_new - logp_old)`.
///
/// Returns `(J, dJ/dlogp_new)` per sample. Advantages are treated as
/// constants. Whenever the clipped branch is strictly smaller, the ratio is
/// saturated and its gradient is zero; ties take the unclipped branch, so at
/// the first pass (`r = 1`) the gradient is exactly the plain
/// advantage-weighted likelihood gradient `A / N`.
pub fn surrogate_objective(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    clip_eps: f64,
) -> (f64, Vec<f64>) {
    assert_eq!(logp_new.len(), logp_old.len());
    assert_eq!(logp_new.len(), advantages.len());
    let n = logp_new.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logp_new.len());
    for ((&lpn, &lpo), &adv) in logp_new.iter().zip(logp_old).zip(advantages) {
        let ratio = (lpn - lpo).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        if unclipped <= clipped {
            total += unclipped;
            grad.push(adv * ratio / n);
        } else {
            total += clipped;
            grad.push(0.0);
        }
    }
    (total / n, grad)
}

/// Clipped value loss, averaged over all samples:
/// `L = mean( max(|v - R|, |v_clip - R|)^2 )` with
/// `v_clip = clamp(v, v_old - eps, v_old + eps)`.
///
/// Returns `(L, dL/dv)` per sample. When the clipped branch dominates, `v`
/// is saturated against the old estimate and receives no gradient.
pub fn clipped_value_loss(
    v_new: &[f64],
    v_old: &[f64],
    returns: &[f64],
    clip_eps: f64,
) -> (f64, Vec<f64>) {
    assert_eq!(v_new.len(), v_old.len());
    assert_eq!(v_new.len(), returns.len());
    let n = v_new.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(v_new.len());
    for ((&v, &vo), &ret) in v_new.iter().zip(v_old).zip(returns) {
        let v_clip = v.clamp(vo - clip_eps, vo + clip_eps);
        let a = (v - ret).abs();
        let b = (v_clip - ret).abs();
        if a >= b {
            total += a * a;
            grad.push(2.0 * (v - ret) / n);
        } else {
            total += b * b;
            grad.push(0.0);
        }
    }
    (total / n, grad)
}
