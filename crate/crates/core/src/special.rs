//! Log-gamma, digamma and trigamma for positive arguments.
//!
//! Arguments below [`SHIFT`] are moved up with the recurrences
//! Γ(x+1) = xΓ(x), ψ(x+1) = ψ(x) + 1/x and ψ'(x+1) = ψ'(x) − 1/x², then the
//! asymptotic (Stirling / Bernoulli) series is summed. Dirichlet parameters
//! are always ≥ 1, so the reflection formula is never needed; non-positive
//! arguments return NaN.

use std::f64::consts::PI;

const SHIFT: f64 = 10.0;

/// B_{2k} / (2k (2k − 1)), k = 1..7, highest order first.
const LN_GAMMA_SERIES: [f64; 7] = [
    1.0 / 156.0,
    -691.0 / 360_360.0,
    1.0 / 1188.0,
    -1.0 / 1680.0,
    1.0 / 1260.0,
    -1.0 / 360.0,
    1.0 / 12.0,
];

/// B_{2k} / 2k, k = 1..7, highest order first.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -691.0 / 32_760.0,
    1.0 / 132.0,
    -1.0 / 240.0,
    1.0 / 252.0,
    -1.0 / 120.0,
    1.0 / 12.0,
];

/// B_{2k}, k = 1..7, highest order first.
const TRIGAMMA_SERIES: [f64; 7] = [
    7.0 / 6.0,
    -691.0 / 2730.0,
    5.0 / 66.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    1.0 / 6.0,
];

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * t + c)
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut product = 1.0;
    while x < SHIFT {
        product *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let series = horner(&LN_GAMMA_SERIES, inv * inv) * inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series - product.ln()
}

/// ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < SHIFT {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    shift + x.ln() - 0.5 / x - horner(&DIGAMMA_SERIES, inv2) * inv2
}

/// ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < SHIFT {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    shift + inv + 0.5 * inv2 + horner(&TRIGAMMA_SERIES, inv2) * inv2 * inv
}
