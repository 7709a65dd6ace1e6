//! Round-sphere model of `ℙ¹`: charts, real spherical harmonics and product
//! quadrature.
//!
//! Chart 0 uses `z` with `x₁ + i x₂ = 2z/(1+|z|²)`, `x₃ = (1−|z|²)/(1+|z|²)`;
//! chart 1 uses `w = 1/z`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::jet::{Jet, Ring};
use crate::quadrature::gauss_legendre;

/// Index of the real harmonic `Y_{l,m}` in the flat ordering `l² + l + m`.
pub fn sh_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Degree and order of a flat harmonic index.
pub fn sh_degree_order(idx: usize) -> (usize, i64) {
    let l = (idx as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
    (l, idx as i64 - (l * l + l) as i64)
}

/// Number of real harmonics of degree at most `lmax`.
pub fn sh_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// Real spherical harmonics of degree ≤ `lmax`, orthonormal on the unit
/// sphere, evaluated from `u = x₁+ix₂`, `ū = x₁−ix₂` and `x₃`.
/// `Y_{l,m}` uses `Re(u^m)` for `m > 0` and `Im(u^{|m|})` for `m < 0`.
pub fn real_sh<T: Ring>(lmax: usize, u: &T, ub: &T, x3: &T, one: &T) -> Vec<T> {
    let mut out: Vec<Option<T>> = vec![None; sh_count(lmax)];
    let mut qmm = (1.0 / (4.0 * PI)).sqrt();
    let mut upow = one.clone();
    let mut ubpow = one.clone();
    for m in 0..=lmax {
        if m > 0 {
            qmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
            upow = upow.rmul(u);
            ubpow = ubpow.rmul(ub);
        }
        let mut prev2: Option<T> = None;
        let mut prev = one.rscale(qmm);
        for l in m..=lmax {
            let q = if l == m {
                prev.clone()
            } else if l == m + 1 {
                x3.rmul(&prev).rscale(((2 * m + 3) as f64).sqrt())
            } else {
                let lf = l as f64;
                let mf = m as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
                let p2 = prev2.as_ref().expect("recurrence state");
                x3.rmul(&prev).rsub(&p2.rscale(b)).rscale(a)
            };
            if l > m {
                prev2 = Some(prev.clone());
                prev = q.clone();
            }
            if m == 0 {
                out[sh_index(l, 0)] = Some(q);
            } else {
                let re = upow.radd(&ubpow).rscale(0.5);
                let im = upow.rsub(&ubpow).rcscale(C64::new(0.0, -0.5));
                let s = 2f64.sqrt();
                out[sh_index(l, m as i64)] = Some(q.rmul(&re).rscale(s));
                out[sh_index(l, -(m as i64))] = Some(q.rmul(&im).rscale(s));
            }
        }
    }
    out.into_iter().map(|x| x.expect("all harmonics filled")).collect()
}

/// Sphere coordinate jets `(u, ū, x₃)` of a chart coordinate `(z, z̄)`.
pub fn sphere_jets(chart: u8, z: &Jet, zb: &Jet) -> (Jet, Jet, Jet) {
    let zz = z * zb;
    let q = zz.add_const(C64::new(1.0, 0.0)).recip();
    if chart == 0 {
        let u = (z * &q).scale_re(2.0);
        let ub = (zb * &q).scale_re(2.0);
        let x3 = (zz.scale_re(-1.0).add_const(C64::new(1.0, 0.0))) * &q;
        (u, ub, x3)
    } else {
        let u = (zb * &q).scale_re(2.0);
        let ub = (z * &q).scale_re(2.0);
        let x3 = zz.add_const(C64::new(-1.0, 0.0)) * &q;
        (u, ub, x3)
    }
}

/// Unit vector of a chart point.
pub fn chart_to_sphere(chart: u8, z: C64) -> [f64; 3] {
    let q = 1.0 + z.norm_sqr();
    let (u, x3) = if chart == 0 {
        (z * 2.0 / q, (1.0 - z.norm_sqr()) / q)
    } else {
        (z.conj() * 2.0 / q, (z.norm_sqr() - 1.0) / q)
    };
    [u.re, u.im, x3]
}

/// Chart point of a unit vector, preferring the chart with `|z| ≤ 1`.
pub fn sphere_to_chart(x: [f64; 3]) -> (u8, C64) {
    let u = C64::new(x[0], x[1]);
    if x[2] >= 0.0 {
        (0, u / (1.0 + x[2]))
    } else {
        (1, u.conj() / (1.0 - x[2]))
    }
}

/// Rotation of a unit vector about the `x₃` axis.
pub fn rotate_x3(x: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1], x[2]]
}

/// Rotation of a unit vector about the `x₁` axis.
pub fn rotate_x1(x: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [x[0], c * x[1] - s * x[2], s * x[1] + c * x[2]]
}

/// Gauss–Legendre in `x₃` times uniform azimuth; weights sum to `4π`.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    /// Unit vectors.
    pub nodes: Vec<[f64; 3]>,
    /// Area weights.
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    /// Rule exact for polynomials of degree `< 2·order` on the sphere.
    pub fn new(order: usize) -> SphereQuadrature {
        let (xs, ws) = gauss_legendre(order);
        let nphi = 2 * order;
        let mut nodes = Vec::with_capacity(order * nphi);
        let mut weights = Vec::with_capacity(order * nphi);
        for (x3, w) in xs.iter().zip(&ws) {
            let s = (1.0 - x3 * x3).sqrt();
            for k in 0..nphi {
                let phi = 2.0 * PI * (k as f64 + 0.5) / nphi as f64;
                nodes.push([s * phi.cos(), s * phi.sin(), *x3]);
                weights.push(w * 2.0 * PI / nphi as f64);
            }
        }
        SphereQuadrature { nodes, weights }
    }
}

/// Harmonic values at a unit vector.
pub fn real_sh_at(lmax: usize, x: [f64; 3]) -> Vec<f64> {
    let u = C64::new(x[0], x[1]);
    real_sh(lmax, &u, &u.conj(), &C64::new(x[2], 0.0), &C64::new(1.0, 0.0))
        .into_iter()
        .map(|v| v.re)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        for l in 0..6 {
            for m in -(l as i64)..=(l as i64) {
                assert_eq!(sh_degree_order(sh_index(l, m)), (l, m));
            }
        }
    }

    #[test]
    fn harmonics_orthonormal() {
        let lmax = 8;
        let q = SphereQuadrature::new(lmax + 2);
        let n = sh_count(lmax);
        let mut gram = vec![0.0; n * n];
        for (x, w) in q.nodes.iter().zip(&q.weights) {
            let y = real_sh_at(lmax, *x);
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] += w * y[i] * y[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i * n + j] - t).abs() < 1e-12, "{i} {j}");
            }
        }
    }

    #[test]
    fn chart_roundtrip() {
        for x in [[0.6, 0.0, 0.8], [0.0, -0.6, -0.8], [1.0, 0.0, 0.0]] {
            let (c, z) = sphere_to_chart(x);
            let y = chart_to_sphere(c, z);
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-14);
            }
        }
    }
}
