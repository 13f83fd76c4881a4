/// Smoothed rectifier: zero below `-delta`, identity above `delta`, and the
/// quadratic `t^2/(4 delta) + t/2 + delta/4` in between.
#[inline]
pub fn sigma(t: f64, delta: f64) -> f64 {
    if t <= -delta {
        0.0
    } else if t >= delta {
        t
    } else {
        t * t / (4.0 * delta) + 0.5 * t + 0.25 * delta
    }
}

#[inline]
pub fn sigma_prime(t: f64, delta: f64) -> f64 {
    if t <= -delta {
        0.0
    } else if t >= delta {
        1.0
    } else {
        t / (2.0 * delta) + 0.5
    }
}
