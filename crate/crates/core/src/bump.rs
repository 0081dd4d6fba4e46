//! One-dimensional polynomial bump `(35/32)(1 - t^2)^3` on `[-1, 1]` and the
//! smooth profiles built from it (mollifiers, partitions of unity, cutoffs).

const NORM: f64 = 35.0 / 32.0;

/// Bump density of half-width `width`, integrating to one.
pub fn density(x: f64, width: f64) -> f64 {
    let t = x / width;
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - t * t;
    NORM * s * s * s / width
}

/// Derivative of [`density`] in `x`.
pub fn density_derivative(x: f64, width: f64) -> f64 {
    let t = x / width;
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - t * t;
    NORM * 3.0 * s * s * (-2.0 * t) / (width * width)
}

/// Cumulative distribution of [`density`]: exact antiderivative.
pub fn cdf(x: f64, width: f64) -> f64 {
    let t = x / width;
    if t <= -1.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let t2 = t * t;
    let poly = t * (1.0 - t2 + 0.6 * t2 * t2 - t2 * t2 * t2 / 7.0);
    0.5 + NORM * poly
}

/// Mollified indicator of `[lo, hi]`: `(1_[lo,hi] * rho_width)(x)`.
pub fn smooth_indicator(x: f64, lo: f64, hi: f64, width: f64) -> f64 {
    cdf(x - lo, width) - cdf(x - hi, width)
}

/// Quintic smoothstep, `0` for `t <= 0` and `1` for `t >= 1`, C^2.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}
