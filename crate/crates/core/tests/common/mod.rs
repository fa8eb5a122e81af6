//! Closed-form oracles shared by the integration tests. Each is coded
//! directly from the governing ODE/algebra, independent of the library's
//! estimators.

/// Stationary variance of dX = -theta X dt + sigma dB.
pub fn ou_stationary_variance(theta: f64, sigma: f64) -> f64 {
    sigma * sigma / (2.0 * theta)
}

/// Second moment m2(t) = E[X_t^2] for the OU process from a deterministic
/// start: m2' = -2 theta m2 + sigma^2.
pub fn ou_second_moment(theta: f64, sigma: f64, x0: f64, t: f64) -> f64 {
    let stat = ou_stationary_variance(theta, sigma);
    stat + (x0 * x0 - stat) * (-2.0 * theta * t).exp()
}

/// integral_0^T E[X_t^2] dt in closed form.
pub fn ou_second_moment_integral(theta: f64, sigma: f64, x0: f64, horizon: f64) -> f64 {
    let stat = ou_stationary_variance(theta, sigma);
    stat * horizon + (x0 * x0 - stat) * (1.0 - (-2.0 * theta * horizon).exp()) / (2.0 * theta)
}

/// Stationary feedback gain for the scalar linear-quadratic regulator
/// dX = (a X + b u) dt + sigma dB, cost integral q x^2 + r u^2 dt: the
/// positive Riccati root of (b^2 / r) P^2 - 2 a P - q = 0 gives u = -K x
/// with K = b P / r.
pub fn lqr_gain(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let p = (a + (a * a + b * b * q / r).sqrt()) * r / (b * b);
    b * p / r
}
