//! Knot weights for interpolants through equally spaced knots at 0..K-1.
//!
//! Every path kind used here is linear in the knot values, so evaluating at a
//! position reduces to a weight vector `w` with `f(p) = sum_k w[k] * y[k]`.

use super::PathKind;

/// Piecewise-linear weights.
pub fn linear(knots: usize, position: f64) -> Vec<f64> {
    let mut w = vec![0.0; knots];
    let last = knots - 1;
    let i = (position.floor() as usize).min(last - 1);
    let frac = position - i as f64;
    w[i] = 1.0 - frac;
    w[i + 1] = frac;
    w
}

/// Second derivatives of the natural cubic spline through `ys` at unit
/// spacing, via the Thomas algorithm on `M[i-1] + 4 M[i] + M[i+1] = rhs`.
fn natural_second_derivatives(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let mut diag = vec![4.0; inner];
    let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (ys[i + 1] - 2.0 * ys[i] + ys[i - 1])).collect();
    for i in 1..inner {
        let factor = 1.0 / diag[i - 1];
        diag[i] -= factor;
        rhs[i] -= factor * rhs[i - 1];
    }
    m[inner] = rhs[inner - 1] / diag[inner - 1];
    for i in (0..inner - 1).rev() {
        m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
    }
    m
}

/// Natural cubic spline weights; fewer than three knots degrade to linear.
pub fn cubic_spline(knots: usize, position: f64) -> Vec<f64> {
    if knots < 3 {
        return linear(knots, position);
    }
    let i = (position.floor() as usize).min(knots - 2);
    let b = position - i as f64;
    let a = 1.0 - b;
    if b == 0.0 {
        let mut w = vec![0.0; knots];
        w[i] = 1.0;
        return w;
    }
    if a == 0.0 {
        let mut w = vec![0.0; knots];
        w[i + 1] = 1.0;
        return w;
    }
    // the spline is linear in the data: evaluate the cardinal basis
    (0..knots)
        .map(|k| {
            let mut unit = vec![0.0; knots];
            unit[k] = 1.0;
            let m = natural_second_derivatives(&unit);
            a * unit[i] + b * unit[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) / 6.0
        })
        .collect()
}

/// Barycentric Lagrange weights of the degree-(K-1) interpolant.
pub fn polynomial(knots: usize, position: f64) -> Vec<f64> {
    if position.fract() == 0.0 {
        let mut w = vec![0.0; knots];
        w[position as usize] = 1.0;
        return w;
    }
    let bary: Vec<f64> = (0..knots)
        .map(|k| {
            let prod: f64 = (0..knots).filter(|&j| j != k).map(|j| k as f64 - j as f64).product();
            1.0 / prod
        })
        .collect();
    let terms: Vec<f64> = bary
        .iter()
        .enumerate()
        .map(|(k, b)| b / (position - k as f64))
        .collect();
    let total: f64 = terms.iter().sum();
    terms.iter().map(|t| t / total).collect()
}

pub fn weights(kind: &PathKind, knots: usize, position: f64) -> Vec<f64> {
    match kind {
        PathKind::Linear => linear(knots, position),
        PathKind::CubicSpline { .. } => cubic_spline(knots, position),
        PathKind::Polynomial { .. } => polynomial(knots, position),
    }
}
