/// Backward n-step return recursion with a bootstrapped tail, plus
/// advantages against the current value estimates.
///
/// `rewards[t][b]` and `values[t][b]` cover the segment's steps,
/// `bootstrap[b]` is the value of the state after the last step. Returns
/// `(returns, advantages)` with the same `[step][batch]` layout.
pub fn returns_and_advantages(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    bootstrap: &[f64],
    gamma: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let steps = rewards.len();
    assert_eq!(values.len(), steps);
    let batch = bootstrap.len();
    let mut returns = vec![vec![0.0; batch]; steps];
    let mut advantages = vec![vec![0.0; batch]; steps];
    let mut tail = bootstrap.to_vec();
    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = rewards[t][b] + gamma * tail[b];
            returns[t][b] = r;
            advantages[t][b] = r - values[t][b];
        }
        tail = returns[t].clone();
    }
    (returns, advantages)
}
