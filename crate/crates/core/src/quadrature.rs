//! One-dimensional quadrature and spectral node sets.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, t);
        let wt = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wt;
        w[n - 1 - i] = wt;
    }
    (x, w)
}

/// Legendre polynomial `P_n(t)` and its derivative.
pub fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// Legendre polynomials `P_0 … P_lmax` at `t`.
pub fn legendre_all(lmax: usize, t: f64) -> Vec<f64> {
    let mut out = vec![1.0; lmax + 1];
    if lmax >= 1 {
        out[1] = t;
    }
    for k in 2..=lmax {
        out[k] = ((2 * k - 1) as f64 * t * out[k - 1] - (k - 1) as f64 * out[k - 2]) / k as f64;
    }
    out
}

/// Chebyshev–Lobatto points `cos(πj/n)` mapped to `[a, b]`, ascending.
pub fn chebyshev_lobatto(n: usize, a: f64, b: f64) -> Vec<f64> {
    (0..=n)
        .map(|j| {
            let t = -(PI * j as f64 / n as f64).cos();
            a + (b - a) * (t + 1.0) / 2.0
        })
        .collect()
}

/// Spectral differentiation matrix on the ascending Chebyshev–Lobatto grid
/// of [`chebyshev_lobatto`] over `[a, b]`.
pub fn chebyshev_diff_matrix(n: usize, a: f64, b: f64) -> nalgebra::DMatrix<f64> {
    let x: Vec<f64> = (0..=n).map(|j| -(PI * j as f64 / n as f64).cos()).collect();
    let c: Vec<f64> = (0..=n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n {
                2.0 * s
            } else {
                s
            }
        })
        .collect();
    let mut d = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c[i] / c[j] / (x[i] - x[j]);
            }
        }
    }
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    d * (2.0 / (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        for deg in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn chebyshev_derivative_exact_on_polynomials() {
        let n = 12;
        let x = chebyshev_lobatto(n, 0.0, 1.0);
        let d = chebyshev_diff_matrix(n, 0.0, 1.0);
        let f = nalgebra::DVector::from_iterator(n + 1, x.iter().map(|t| t.powi(5) - 2.0 * t));
        let df = &d * f;
        for (i, t) in x.iter().enumerate() {
            assert!((df[i] - (5.0 * t.powi(4) - 2.0)).abs() < 1e-11);
        }
    }
}
