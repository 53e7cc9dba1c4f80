//! Float helpers routed through `libm` so results are identical with and without `std`.

/// Clamp applied inside logarithms so that `0 · ln 0` evaluates to `0`.
pub const LOG_EPS: f64 = 1e-12;

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn clamped_ln(x: f64) -> f64 {
    libm::log(if x < LOG_EPS { LOG_EPS } else { x })
}

/// `x ln x` with the log clamped.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    x * clamped_ln(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
