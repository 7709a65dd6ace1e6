//! Hermitian–Einstein solves on split bundles, the momentum construction on
//! `ℙ(O(a₁)⊕O(a₂))*` over `ℙ¹`, Calabi's extremal profiles, and the
//! symmetry-reduced fixed-point solver for the extremal equation.
//!
//! On the ruled surface the fiber rotation has moment map
//! `σ = λ₂₂ ∈ [0, 1]` for every `ω_k`, the horizontal part of `ω_k` is
//! `p(σ)ω_FS` with `p(σ) = ks + a₁(1−σ) + a₂σ`, and an invariant metric in
//! the class is given by a profile `Θ(σ)` with `Θ(0) = Θ(1) = 0`,
//! `Θ'(0) = 2`, `Θ'(1) = −2`. Its scalar curvature is
//! `2/p − (pΘ)''/(2p)`; `ω_k` itself has `Θ = 2σ(1−σ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basegeom::{BaseKind, BaseManifold, BasePoint};
use crate::error::{Error, Result};
use crate::quadrature::{chebyshev_diff_matrix, chebyshev_lobatto};
use crate::ruledgeom::{BundlePerturbation, HermitianBundleData, TotalPoint};
use crate::C64;

/// Target sup-norm of `Λ_ω iF − μI` for [`he_solve`].
pub const HE_TOL: f64 = 1e-9;

/// Makes a split bundle with equal degrees Hermitian–Einstein by conformal
/// changes `h_i ← h_i e^{ψ_i}` with `Δψ_i = μ − Λ_ω iF_{h_i}`.
pub fn he_solve(bundle: &HermitianBundleData) -> Result<HermitianBundleData> {
    if bundle.degrees.iter().any(|d| *d != bundle.degrees[0]) {
        return Err(Error::NotPolystable);
    }
    if !bundle.is_diagonal() {
        return Err(Error::Unsupported(
            "Hermitian–Einstein solve for non-diagonal metrics".into(),
        ));
    }
    let base = &bundle.base;
    let mu = bundle.slope();
    let vol = base.quadrature_volume();
    let mut out = bundle.clone();
    for _ in 0..4 {
        if out.he_residual()? < HE_TOL {
            return Ok(out);
        }
        let mut next = out.clone();
        for i in 0..out.rank() {
            let rho: Vec<f64> = base
                .nodes()
                .iter()
                .map(|x| Ok(out.mean_curvature_at(x)?[(i, i)].re))
                .collect::<Result<_>>()?;
            let rhs: Vec<f64> = rho.iter().map(|r| mu - r).collect();
            let mean = base.integrate(&rhs) / vol;
            let rhs: Vec<f64> = rhs.iter().map(|v| v - mean).collect();
            let psi = base.poisson_solve(&rhs)?;
            next = next.with_perturbation(BundlePerturbation::Conformal {
                summand: i,
                amplitude: 1.0,
                field: psi,
            })?;
        }
        out = next;
    }
    let res = out.he_residual()?;
    if res < 1e-7 {
        Ok(out)
    } else {
        Err(Error::NotHermitianEinstein(res))
    }
}

/// Class data of `ω_k` on `ℙ(O(a₁)⊕O(a₂))*` over `ℙ¹` of scale `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuledSurface {
    /// Degrees `(a₁, a₂)`.
    pub a: [i32; 2],
    /// Base scale `s`.
    pub scale: f64,
    /// Parameter `k`.
    pub k: f64,
}

impl RuledSurface {
    /// `p(σ) = p₀ + p₁σ`.
    pub fn p_coeffs(&self) -> (f64, f64) {
        (
            self.k * self.scale + self.a[0] as f64,
            (self.a[1] - self.a[0]) as f64,
        )
    }

    /// `p(σ)`.
    pub fn p(&self, sigma: f64) -> f64 {
        let (p0, p1) = self.p_coeffs();
        p0 + p1 * sigma
    }

    /// Errors unless `p > 0` on `[0, 1]`.
    pub fn check_positive(&self) -> Result<()> {
        if self.p(0.0) <= 0.0 || self.p(1.0) <= 0.0 {
            return Err(Error::KBelowThreshold(self.k));
        }
        Ok(())
    }

    /// The split bundle with its model metric.
    pub fn bundle(&self) -> Result<HermitianBundleData> {
        let base = BaseManifold::new(BaseKind::ProjectiveLine).scaled(self.scale);
        HermitianBundleData::split(base, &self.a)
    }

    /// A point of the total space over `x` with moment `σ ∈ (0, 1)`.
    pub fn point_at(&self, x: &BasePoint, sigma: f64) -> Result<TotalPoint> {
        if !(0.0..1.0).contains(&sigma) || sigma == 0.0 {
            return Err(Error::InvalidInput("moment must lie in (0, 1)".into()));
        }
        let h = self.bundle()?.h_at(x);
        let (h1, h2) = (h[(0, 0)].re, h[(1, 1)].re);
        let xi = (sigma / (1.0 - sigma) * h2 / h1).sqrt();
        TotalPoint::from_functional(x.clone(), &[C64::new(1.0, 0.0), C64::new(xi, 0.0)])
    }
}

/// Barycentric interpolation on the Chebyshev–Lobatto grid of
/// [`chebyshev_lobatto`].
pub fn lobatto_interpolate(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len() - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..=n {
        let d = x - nodes[j];
        if d == 0.0 {
            return values[j];
        }
        let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == n {
            w *= 0.5;
        }
        num += w / d * values[j];
        den += w / d;
    }
    num / den
}

/// An invariant metric in the class of `ω_k`, given by its profile `Θ` at the
/// Chebyshev–Lobatto nodes of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumProfile {
    /// Class data.
    pub surface: RuledSurface,
    /// Moment interval.
    pub interval: [f64; 2],
    /// Nodes in `σ`.
    pub nodes: Vec<f64>,
    /// `Θ` at the nodes.
    pub theta: Vec<f64>,
}

impl MomentumProfile {
    /// Profile sampled from a function on `n + 1` nodes.
    pub fn from_fn(surface: RuledSurface, n: usize, f: impl Fn(f64) -> f64) -> MomentumProfile {
        let nodes = chebyshev_lobatto(n, 0.0, 1.0);
        let theta = nodes.iter().map(|s| f(*s)).collect();
        MomentumProfile {
            surface,
            interval: [0.0, 1.0],
            nodes,
            theta,
        }
    }

    /// The profile `2σ(1−σ)` of `ω_k`.
    pub fn fubini_study(surface: RuledSurface, n: usize) -> MomentumProfile {
        MomentumProfile::from_fn(surface, n, |s| 2.0 * s * (1.0 - s))
    }

    fn diff(&self) -> DMatrix<f64> {
        chebyshev_diff_matrix(self.nodes.len() - 1, 0.0, 1.0)
    }

    /// `Θ(σ)`.
    pub fn theta_at(&self, sigma: f64) -> f64 {
        lobatto_interpolate(&self.nodes, &self.theta, sigma)
    }

    /// Scalar curvature `2/p − (pΘ)''/(2p)` at the nodes.
    pub fn scal_nodes(&self) -> Vec<f64> {
        let d = self.diff();
        let p: Vec<f64> = self.nodes.iter().map(|s| self.surface.p(*s)).collect();
        let pt = DVector::from_iterator(p.len(), p.iter().zip(&self.theta).map(|(a, b)| a * b));
        let pt2 = &d * (&d * pt);
        p.iter()
            .zip(pt2.iter())
            .map(|(p, q)| 2.0 / p - q / (2.0 * p))
            .collect()
    }

    /// Scalar curvature at `σ`.
    pub fn scal_at(&self, sigma: f64) -> f64 {
        lobatto_interpolate(&self.nodes, &self.scal_nodes(), sigma)
    }

    /// Largest deviation from `Θ(0) = Θ(1) = 0`, `Θ'(0) = 2`, `Θ'(1) = −2`.
    pub fn boundary_defect(&self) -> f64 {
        let d = self.diff();
        let dt = &d * DVector::from_row_slice(&self.theta);
        let n = self.theta.len() - 1;
        [
            self.theta[0].abs(),
            self.theta[n].abs(),
            (dt[0] - 2.0).abs(),
            (dt[n] + 2.0).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Errors unless `Θ > 0` at the interior nodes and the boundary data
    /// hold to `1e−9`.
    pub fn validate(&self) -> Result<()> {
        let n = self.theta.len() - 1;
        if self.theta[1..n].iter().any(|t| *t <= 0.0) {
            return Err(Error::NotPositive);
        }
        let b = self.boundary_defect();
        if b > 1e-9 {
            return Err(Error::InvalidInput(format!("boundary defect {b:.3e}")));
        }
        Ok(())
    }

    /// Volume `4π² ∫ p dσ`.
    pub fn volume(&self) -> f64 {
        let (p0, p1) = self.surface.p_coeffs();
        4.0 * std::f64::consts::PI.powi(2) * (p0 + 0.5 * p1)
    }

    /// `sup |Scal − (A + Bσ)|` at the nodes.
    pub fn extremal_residual(&self, ab: [f64; 2]) -> f64 {
        self.scal_nodes()
            .iter()
            .zip(&self.nodes)
            .map(|(s, x)| (s - ab[0] - ab[1] * x).abs())
            .fold(0.0, f64::max)
    }
}

/// Scalar curvature of a profile at moment `σ`.
pub fn momentum_scal(profile: &MomentumProfile, sigma: f64) -> f64 {
    profile.scal_at(sigma)
}

/// Calabi's extremal profile in closed form: `P = pΘ` is the quartic with
/// `P'' = 4 − 2p(A + Bσ)` and the boundary data; returns it with `(A, B)`.
pub fn calabi_extremal(surface: RuledSurface, n: usize) -> Result<(MomentumProfile, [f64; 2])> {
    surface.check_positive()?;
    let (p0, p1) = surface.p_coeffs();
    // P(1) = 0 and P'(1) = −2p(1) as linear equations in (A, B).
    let m = nalgebra::Matrix2::new(
        p0 + p1 / 3.0,
        p0 / 3.0 + p1 / 6.0,
        2.0 * p0 + p1,
        p0 + 2.0 * p1 / 3.0,
    );
    let rhs = nalgebra::Vector2::new(2.0 * p0 + 2.0, 4.0 * p0 + 4.0 + 2.0 * p1);
    let ab = m.lu().solve(&rhs).ok_or(Error::Singular)?;
    let (a, b) = (ab[0], ab[1]);
    let big_p = |s: f64| {
        2.0 * p0 * s + 2.0 * s * s
            - (p0 * a * s * s + (p0 * b + p1 * a) * s.powi(3) / 3.0 + p1 * b * s.powi(4) / 6.0)
    };
    let prof = MomentumProfile::from_fn(surface, n, |s| big_p(s) / surface.p(s));
    prof.validate()?;
    Ok((prof, [a, b]))
}

/// Independent collocation solve of the extremal profile equation.
pub fn calabi_collocation(surface: RuledSurface, n: usize) -> Result<(MomentumProfile, [f64; 2])> {
    surface.check_positive()?;
    let nodes = chebyshev_lobatto(n, 0.0, 1.0);
    let d = chebyshev_diff_matrix(n, 0.0, 1.0);
    let d2 = &d * &d;
    let p: Vec<f64> = nodes.iter().map(|s| surface.p(*s)).collect();
    let dim = n + 3;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for i in 1..n {
        for j in 0..=n {
            m[(i - 1, j)] = d2[(i, j)] * p[j];
        }
        m[(i - 1, n + 1)] = 2.0 * p[i];
        m[(i - 1, n + 2)] = 2.0 * p[i] * nodes[i];
        rhs[i - 1] = 4.0;
    }
    let r0 = n - 1;
    m[(r0, 0)] = 1.0;
    m[(r0 + 1, n)] = 1.0;
    for j in 0..=n {
        m[(r0 + 2, j)] = d[(0, j)];
        m[(r0 + 3, j)] = d[(n, j)];
    }
    rhs[r0 + 2] = 2.0;
    rhs[r0 + 3] = -2.0;
    let sol = m.lu().solve(&rhs).ok_or(Error::Singular)?;
    let prof = MomentumProfile {
        surface,
        interval: [0.0, 1.0],
        nodes,
        theta: sol.iter().take(n + 1).copied().collect(),
    };
    Ok((prof, [sol[n + 1], sol[n + 2]]))
}

/// Settings of the reduced fixed-point solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Chebyshev degree in `σ₀`.
    pub nodes: usize,
    /// Iteration cap.
    pub max_iter: usize,
    /// Sup-norm residual target.
    pub tol: f64,
    /// Order of the approximate solution used as start (recorded only).
    pub p: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            nodes: 24,
            max_iter: 60,
            tol: 1e-10,
            p: 2,
        }
    }
}

/// State of the reduced fixed-point iteration. The unknown is an invariant
/// potential `φ = ψ(σ₀)` with `ω = ω_k + i∂̄∂φ`, together with the
/// Hamiltonian `l(b) = A + Bσ` of the extremal field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointState {
    /// Class data.
    pub surface: RuledSurface,
    /// Nodes in the moment `σ₀` of `ω_k`.
    pub nodes: Vec<f64>,
    /// `ψ` at the nodes.
    pub psi: Vec<f64>,
    /// `(A, B)`.
    pub b: [f64; 2],
    /// Sup-norm residual after each iteration (entry 0 is the start).
    pub residuals: Vec<f64>,
    /// Iterations performed.
    pub iterations: usize,
    /// Norm of the pseudo-inverse used as right inverse.
    pub right_inverse_norm: f64,
    /// Sup-norm of the final correction `(ψ, b − b_start)`.
    pub iterate_norm: f64,
}

impl FixedPointState {
    /// Moment `σ` of the solution and its profile `Θ(σ)` at the nodes.
    pub fn profile_samples(&self) -> (Vec<f64>, Vec<f64>) {
        let d = chebyshev_diff_matrix(self.nodes.len() - 1, 0.0, 1.0);
        let psi = DVector::from_row_slice(&self.psi);
        let d1 = &d * &psi;
        let d2 = &d * &d1;
        let mut sig = Vec::with_capacity(self.nodes.len());
        let mut th = Vec::with_capacity(self.nodes.len());
        for (j, u) in self.nodes.iter().enumerate() {
            let t0 = u * (1.0 - u);
            let s = u - t0 * d1[j];
            let sp = 1.0 - (1.0 - 2.0 * u) * d1[j] - t0 * d2[j];
            sig.push(s);
            th.push(2.0 * t0 * sp);
        }
        (sig, th)
    }
}

/// Extremal-equation residual `Scal(ω_k + i∂̄∂φ) + ½⟨∇l,∇φ⟩ − l` at the
/// nodes, in complex arithmetic for complex-step differentiation.
fn reduced_residual(
    surface: &RuledSurface,
    nodes: &[f64],
    d: &DMatrix<f64>,
    x: &[C64],
) -> Vec<C64> {
    let n = nodes.len();
    let (p0, p1) = surface.p_coeffs();
    let (a, b) = (x[n], x[n + 1]);
    let dc = |v: &[C64]| -> Vec<C64> {
        (0..n)
            .map(|i| (0..n).map(|j| v[j] * d[(i, j)]).sum())
            .collect()
    };
    let d1 = dc(&x[..n]);
    let d2 = dc(&d1);
    let mut s = vec![C64::new(0.0, 0.0); n];
    let mut sp = vec![C64::new(0.0, 0.0); n];
    let mut q = vec![C64::new(0.0, 0.0); n];
    let mut p = vec![C64::new(0.0, 0.0); n];
    for (j, u) in nodes.iter().enumerate() {
        let t0 = u * (1.0 - u);
        s[j] = *u - d1[j] * t0;
        sp[j] = C64::new(1.0, 0.0) - d1[j] * (1.0 - 2.0 * u) - d2[j] * t0;
        p[j] = s[j] * p1 + p0;
        q[j] = p[j] * sp[j] * (2.0 * t0);
    }
    let q1: Vec<C64> = dc(&q).iter().zip(&sp).map(|(a, b)| a / b).collect();
    let q2: Vec<C64> = dc(&q1).iter().zip(&sp).map(|(a, b)| a / b).collect();
    (0..n)
        .map(|j| p[j].inv() * 2.0 - q2[j] / (p[j] * 2.0) - a - b * s[j])
        .collect()
}

fn residual_real(surface: &RuledSurface, nodes: &[f64], d: &DMatrix<f64>, x: &[f64]) -> DVector<f64> {
    let xc: Vec<C64> = x.iter().map(|v| C64::new(*v, 0.0)).collect();
    DVector::from_iterator(nodes.len(), reduced_residual(surface, nodes, d, &xc).iter().map(|c| c.re))
}

fn jacobian(surface: &RuledSurface, nodes: &[f64], d: &DMatrix<f64>, x: &[f64]) -> DMatrix<f64> {
    let h = 1e-30;
    let n = nodes.len();
    let mut j = DMatrix::<f64>::zeros(n, x.len());
    for c in 0..x.len() {
        let mut xc: Vec<C64> = x.iter().map(|v| C64::new(*v, 0.0)).collect();
        xc[c].im = h;
        let r = reduced_residual(surface, nodes, d, &xc);
        for i in 0..n {
            j[(i, c)] = r[i].im / h;
        }
    }
    j
}

fn pinv_with_norm(j: &DMatrix<f64>, cutoff: f64) -> Result<(DMatrix<f64>, f64)> {
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd
        .singular_values
        .iter()
        .filter(|s| **s > cutoff * smax)
        .fold(f64::INFINITY, |a, b| a.min(*b));
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff * smax).count();
    if rank < j.nrows() {
        return Err(Error::IllConditioned(smin / smax));
    }
    let p = svd.pseudo_inverse(cutoff * smax).map_err(|e| Error::InvalidInput(e.into()))?;
    Ok((p, 1.0 / smin))
}

fn start_vector(surface: &RuledSurface, nodes: &[f64], d: &DMatrix<f64>, psi: &[f64]) -> Vec<f64> {
    let mut x: Vec<f64> = psi.to_vec();
    x.extend([0.0, 0.0]);
    let r = residual_real(surface, nodes, d, &x);
    let n = nodes.len() as f64;
    let mx = nodes.iter().sum::<f64>() / n;
    let my = r.iter().sum::<f64>() / n;
    let sxy: f64 = nodes.iter().zip(r.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = nodes.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    x[nodes.len()] = my - b * mx;
    x[nodes.len() + 1] = b;
    x
}

/// Contraction iteration `x ← x − P R(x)` with `P` the pseudo-inverse of
/// the linearization at the start. `start_psi` defaults to `ψ = 0`.
pub fn fixed_point_solve(
    surface: RuledSurface,
    cfg: &FixedPointConfig,
    start_psi: Option<&[f64]>,
) -> Result<FixedPointState> {
    surface.check_positive()?;
    let nodes = chebyshev_lobatto(cfg.nodes, 0.0, 1.0);
    let d = chebyshev_diff_matrix(cfg.nodes, 0.0, 1.0);
    let zeros = vec![0.0; nodes.len()];
    let psi0 = start_psi.unwrap_or(&zeros);
    if psi0.len() != nodes.len() {
        return Err(Error::InvalidInput("start potential has wrong length".into()));
    }
    let mut x = start_vector(&surface, &nodes, &d, psi0);
    let x0 = x.clone();
    let (pinv, pnorm) = pinv_with_norm(&jacobian(&surface, &nodes, &d, &x), 1e-10)?;
    let mut r = residual_real(&surface, &nodes, &d, &x);
    let mut history = vec![r.amax()];
    let mut it = 0;
    while history[it] > cfg.tol {
        if it == cfg.max_iter {
            return Err(Error::Divergence {
                iterations: it,
                history,
            });
        }
        let step = &pinv * &r;
        for (xi, s) in x.iter_mut().zip(step.iter()) {
            *xi -= s;
        }
        r = residual_real(&surface, &nodes, &d, &x);
        let res = r.amax();
        it += 1;
        history.push(res);
        if !res.is_finite() || (it >= 2 && res > history[it - 1]) {
            return Err(Error::Divergence {
                iterations: it,
                history,
            });
        }
    }
    let n = nodes.len();
    let iterate_norm = x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(FixedPointState {
        surface,
        psi: x[..n].to_vec(),
        b: [x[n], x[n + 1]],
        nodes,
        residuals: history,
        iterations: it,
        right_inverse_norm: pnorm,
        iterate_norm,
    })
}

/// `‖P_k‖` for the linearization at `ω_k` on the reduced problem.
pub fn right_inverse_norm(surface: RuledSurface, nodes: usize) -> Result<f64> {
    surface.check_positive()?;
    let xs = chebyshev_lobatto(nodes, 0.0, 1.0);
    let d = chebyshev_diff_matrix(nodes, 0.0, 1.0);
    let x = start_vector(&surface, &xs, &d, &vec![0.0; xs.len()]);
    Ok(pinv_with_norm(&jacobian(&surface, &xs, &d, &x), 1e-10)?.1)
}

/// `‖P‖` for the leading vertical operator `Δ_V(Δ_V − 2)` on the same grid,
/// which does not depend on `k`.
pub fn vertical_operator_norm(nodes: usize) -> Result<f64> {
    let xs = chebyshev_lobatto(nodes, 0.0, 1.0);
    let d = chebyshev_diff_matrix(nodes, 0.0, 1.0);
    let t0 = DMatrix::from_diagonal(&DVector::from_iterator(xs.len(), xs.iter().map(|u| u * (1.0 - u))));
    // Δ_V = −d/dσ(2σ(1−σ) d/dσ) on invariant fiber functions.
    let lap = -(&d * (t0 * 2.0) * &d);
    let eye = DMatrix::<f64>::identity(xs.len(), xs.len());
    let op = &lap * (&lap - eye * 2.0);
    Ok(pinv_with_norm(&op, 1e-10).map(|x| x.1).unwrap_or_else(|_| {
        let s = op.svd(false, false).singular_values;
        let smax = s.max();
        1.0 / s.iter().filter(|v| **v > 1e-10 * smax).fold(f64::INFINITY, |a, b| a.min(*b))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basegeom::{MetricPerturbation, SpectralField};
    use crate::ruledgeom::TotalJets;

    #[test]
    fn he_rejects_unequal_degrees() {
        let b = HermitianBundleData::split(BaseManifold::new(BaseKind::ProjectiveLine), &[-1, 0]).unwrap();
        assert!(matches!(he_solve(&b), Err(Error::NotPolystable)));
    }

    #[test]
    fn he_on_perturbed_base_and_start() {
        let mut eta = SpectralField::zeros(BaseKind::ProjectiveLine, 3);
        eta.coeffs[6] = 1.0;
        eta.coeffs[10] = 0.5;
        let base = BaseManifold::with_band(BaseKind::ProjectiveLine, 16).perturbed(MetricPerturbation { amplitude: 0.08, eta: eta.clone() });
        let b = HermitianBundleData::split(base, &[1, 1])
            .unwrap()
            .with_perturbation(BundlePerturbation::Conformal { summand: 0, amplitude: 0.2, field: eta })
            .unwrap();
        assert!(b.he_residual().unwrap() > 1e-3);
        let he = he_solve(&b).unwrap();
        assert!(he.he_residual().unwrap() < 1e-7);
    }

    #[test]
    fn he_returns_model_up_to_gauge() {
        let base = BaseManifold::with_band(BaseKind::ProjectiveLine, 12);
        let mut q = SpectralField::zeros(BaseKind::ProjectiveLine, 2);
        q.coeffs[2] = 1.0;
        q.coeffs[7] = -0.4;
        let model = HermitianBundleData::split(base.clone(), &[2, 2]).unwrap();
        let b = model
            .clone()
            .with_perturbation(BundlePerturbation::Conformal { summand: 1, amplitude: 0.3, field: q })
            .unwrap();
        let he = he_solve(&b).unwrap();
        let ratios: Vec<f64> = base
            .nodes()
            .iter()
            .take(40)
            .map(|x| he.h_at(x)[(1, 1)].re / model.h_at(x)[(1, 1)].re)
            .collect();
        let spread = ratios.iter().fold(0.0f64, |m, r| m.max((r - ratios[0]).abs()));
        assert!(spread < 1e-7, "{spread}");
    }

    #[test]
    fn product_profile_has_constant_curvature() {
        let s = RuledSurface { a: [0, 0], scale: 1.0, k: 3.0 };
        let prof = MomentumProfile::fubini_study(s, 16);
        for v in prof.scal_nodes() {
            assert!((v - (2.0 + 2.0 / 3.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn momentum_oracle_matches_total_space() {
        for k in [10.0, 50.0, 250.0] {
            let s = RuledSurface { a: [0, -1], scale: 1.0, k };
            let prof = MomentumProfile::fubini_study(s, 24);
            let bundle = s.bundle().unwrap();
            for (x, sig) in [(C64::new(0.3, 0.1), 0.25), (C64::new(-1.2, 0.7), 0.5), (C64::new(0.0, 0.0), 0.9)] {
                let pt = s.point_at(&BasePoint::single(0, x), sig).unwrap();
                let tj = TotalJets::new(&bundle, &pt, 4).unwrap();
                let exact = tj.scal_k(k).unwrap();
                let lam = tj.lambda.value()[(1, 1)].re;
                assert!((lam - sig).abs() < 1e-12);
                assert!((exact - momentum_scal(&prof, sig)).abs() < 1e-9, "{exact} vs {}", momentum_scal(&prof, sig));
            }
        }
    }

    #[test]
    fn calabi_closed_form_and_collocation_agree() {
        let s = RuledSurface { a: [0, -1], scale: 1.0, k: 2.0 };
        let (a, ab) = calabi_extremal(s, 32).unwrap();
        let (b, ab2) = calabi_collocation(s, 32).unwrap();
        assert!(a.extremal_residual(ab) < 1e-9);
        assert!(b.extremal_residual(ab2) < 1e-9);
        assert!((ab[0] - ab2[0]).abs() < 1e-9 && (ab[1] - ab2[1]).abs() < 1e-9);
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_product_case_is_immediate() {
        let s = RuledSurface { a: [1, 1], scale: 1.0, k: 5.0 };
        let st = fixed_point_solve(s, &FixedPointConfig::default(), None).unwrap();
        assert_eq!(st.iterations, 0);
        assert!(st.residuals[0] < 1e-10);
        assert!(st.b[1].abs() < 1e-10);
    }

    #[test]
    fn fixed_point_reaches_calabi_metric() {
        for k in [50.0, 25.0] {
            let s = RuledSurface { a: [0, -1], scale: 1.0, k };
            let st = fixed_point_solve(s, &FixedPointConfig::default(), None).unwrap();
            assert!(st.iterations > 0);
            let (cal, ab) = calabi_extremal(s, 32).unwrap();
            assert!((st.b[0] - ab[0]).abs() < 1e-8 && (st.b[1] - ab[1]).abs() < 1e-8, "{:?} vs {ab:?}", st.b);
            let (sig, th) = st.profile_samples();
            let dev = sig
                .iter()
                .zip(&th)
                .map(|(s, t)| (cal.theta_at(*s) - t).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-6, "{dev}");
        }
    }
}
