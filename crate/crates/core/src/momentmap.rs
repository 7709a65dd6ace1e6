//! Moment maps on families of unitary connections: the projection onto
//! holomorphy potentials, `μ^e`, the full `μ`, equivariance, gauge
//! invariance and the relative-stability rank.

use nalgebra::{DMatrix, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::solve_ux;
use crate::basegeom::{ham_basis, BaseCoords, BaseField, BaseManifold, BasePoint, HamiltonianSpace, SpectralField, TorusChoice};
use crate::error::{Error, Result};
use crate::jet::{Jet, JetMatrix};
use crate::kahler::LocalMetric;
use crate::ruledgeom::HermitianBundleData;
use crate::C64;

/// Coefficients of a projected field in the orthonormal basis of `N̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    /// Coefficients.
    pub coeffs: Vec<f64>,
    /// Node values of the field before projection.
    pub raw: Vec<f64>,
}

/// `L²` projection of node values onto `N̄`.
pub fn project_n(base: &BaseManifold, ham: &HamiltonianSpace, values: &[f64]) -> MomentValue {
    MomentValue {
        coeffs: ham.coefficients(base, values),
        raw: values.to_vec(),
    }
}

/// Sup over basis elements of `|⟨f − π_N f, eᵢ⟩|`.
pub fn projection_residual(base: &BaseManifold, ham: &HamiltonianSpace, values: &[f64]) -> f64 {
    let p = ham.field_values(base, &ham.coefficients(base, values));
    let res: Vec<f64> = values.iter().zip(&p).map(|(a, b)| a - b).collect();
    ham.coefficients(base, &res)
        .iter()
        .map(|c| c.abs())
        .fold(0.0, f64::max)
}

/// Deformation direction: the harmonic representative
/// `(1 + |z_f|²)^{−2} dz̄_f` of `H¹(ℙ¹, O(−2))` pulled back from factor `f`,
/// in the `(i, j)` entry (a map from summand `j` to summand `i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// Target summand.
    pub i: usize,
    /// Source summand.
    pub j: usize,
    /// Sphere factor.
    pub factor: usize,
    /// Normalization making the direction `L²`-unit.
    pub scale: f64,
}

/// Unitary connections `∂̄_A = ∂̄ + Σ εₙβₙ` with the Chern connection of a
/// split Hermitian–Einstein metric as base point.
#[derive(Clone, Debug)]
pub struct ConnectionFamily {
    /// Bundle with its base metric.
    pub bundle: HermitianBundleData,
    /// Deformation directions.
    pub directions: Vec<Direction>,
}

/// A point of a family, optionally acted on by the unitary gauge
/// transformation `exp(iθ·diag(1, −1, …))`.
#[derive(Clone, Debug)]
pub struct Connection<'a> {
    /// Family.
    pub family: &'a ConnectionFamily,
    /// Parameters `εₙ`.
    pub params: Vec<C64>,
    /// Gauge phase `θ`.
    pub gauge: Option<SpectralField>,
}

impl ConnectionFamily {
    /// All extension directions of a diagonal split bundle over sphere
    /// factors, `L²`-normalized.
    pub fn extensions(bundle: &HermitianBundleData) -> Result<ConnectionFamily> {
        if !bundle.is_diagonal() {
            return Err(Error::Unsupported("families over non-diagonal metrics".into()));
        }
        let nf = bundle.base.kind.sphere_factors();
        let r = bundle.rank();
        let mut directions = Vec::new();
        for i in 0..r {
            for j in 0..r {
                for f in 0..nf {
                    let ok = (0..nf).all(|g| {
                        let d = bundle.degrees[i][g] - bundle.degrees[j][g];
                        if g == f {
                            d == -2
                        } else {
                            d == 0
                        }
                    });
                    if ok {
                        directions.push(Direction { i, j, factor: f, scale: 1.0 });
                    }
                }
            }
        }
        let mut fam = ConnectionFamily {
            bundle: bundle.clone(),
            directions,
        };
        for n in 0..fam.directions.len() {
            let norm = fam.direction_norm(n)?;
            fam.directions[n].scale = 1.0 / norm;
        }
        Ok(fam)
    }

    /// Family without deformation directions.
    pub fn fixed(bundle: &HermitianBundleData) -> ConnectionFamily {
        ConnectionFamily {
            bundle: bundle.clone(),
            directions: Vec::new(),
        }
    }

    /// Number of complex parameters.
    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// The connection with parameters `params`.
    pub fn at(&self, params: &[C64]) -> Connection<'_> {
        Connection {
            family: self,
            params: params.to_vec(),
            gauge: None,
        }
    }

    fn direction_jet(&self, n: usize, bc: &BaseCoords) -> Jet {
        let d = &self.directions[n];
        let zz = &bc.z[d.factor] * &bc.zb[d.factor];
        zz.add_const(C64::new(1.0, 0.0)).powf(-2.0).scale_re(d.scale)
    }

    /// `L²` norm of direction `n` with respect to `h` and `ω`.
    pub fn direction_norm(&self, n: usize) -> Result<f64> {
        let base = &self.bundle.base;
        let d = &self.directions[n];
        let vals: Vec<f64> = base
            .nodes()
            .iter()
            .map(|pt| -> Result<f64> {
                let ch = base.chart(pt, 2);
                let bc = base.coords(pt, &ch);
                let g = LocalMetric::from_potential(&ch, &base.potential(&bc))?;
                let h = self.bundle.h_jets(&bc).value();
                let b = self.direction_jet(n, &bc).value().norm_sqr();
                let gi = g.ginv.get(d.factor, d.factor).value().re;
                Ok(b * (h[(d.i, d.i)] / h[(d.j, d.j)]).re * gi)
            })
            .collect::<Result<_>>()?;
        Ok(base.integrate(&vals).sqrt())
    }

    /// Sup over nodes of `|∂̄β|` for every direction.
    pub fn closedness_residual(&self) -> f64 {
        let base = &self.bundle.base;
        let m = base.dim();
        let mut worst: f64 = 0.0;
        for pt in base.nodes() {
            let ch = base.chart(pt, 2);
            let bc = base.coords(pt, &ch);
            for n in 0..self.dim() {
                let f = self.directions[n].factor;
                let b = self.direction_jet(n, &bc);
                for c in 0..m {
                    if c != f {
                        worst = worst.max(ch.dbar(&b, c).value().norm());
                    }
                }
            }
        }
        worst
    }
}

/// Curvature of a connection at a base point, with the base metric there.
pub struct CurvatureAt {
    /// Base metric.
    pub metric: LocalMetric,
    /// Coefficients `F_ab` (matrices) of `iF = i F_ab dz_a∧dz̄_b`.
    pub f: Vec<Vec<DMatrix<C64>>>,
}

fn lambda2_values(ginv: &DMatrix<C64>, a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let ga = ginv * a;
    let gb = ginv * b;
    (ga.trace() * gb.trace() - (ga * gb).trace()) * 0.5
}

impl Connection<'_> {
    /// The same connection acted on by the gauge phase `θ`.
    pub fn gauged(&self, theta: SpectralField) -> Self {
        let mut c = self.clone();
        c.gauge = Some(theta);
        c
    }

    fn beta_jets(&self, bc: &BaseCoords, m: usize) -> Vec<JetMatrix> {
        let fam = self.family;
        let r = fam.bundle.rank();
        let space = bc.z[0].space().clone();
        let mut beta: Vec<JetMatrix> = (0..m).map(|_| JetMatrix::from_fn(r, |_, _| Jet::zero(&space))).collect();
        for (n, eps) in self.params.iter().enumerate() {
            let d = &fam.directions[n];
            let b = fam.direction_jet(n, bc).scale(*eps);
            let e = beta[d.factor].get(d.i, d.j) + &b;
            *beta[d.factor].get_mut(d.i, d.j) = e;
        }
        if let Some(theta) = &self.gauge {
            let t = theta.eval(&fam.bundle.base, bc);
            let sign = |i: usize| if i.is_multiple_of(2) { 1.0 } else { -1.0 };
            for (b, beta_b) in beta.iter_mut().enumerate() {
                let dt = t.diff(m + b);
                let conj = JetMatrix::from_fn(r, |i, j| {
                    let ph = t.scale_re(sign(j) - sign(i)).scale(C64::new(0.0, 1.0)).exp();
                    beta_b.get(i, j) * &ph
                });
                *beta_b = JetMatrix::from_fn(r, |i, j| {
                    if i == j {
                        conj.get(i, i) + &dt.scale(C64::new(0.0, sign(i)))
                    } else {
                        conj.get(i, j).clone()
                    }
                });
            }
        }
        beta
    }

    /// Curvature at `pt`.
    pub fn curvature(&self, pt: &BasePoint) -> Result<CurvatureAt> {
        let bundle = &self.family.bundle;
        let base = &bundle.base;
        let m = base.dim();
        let ch = base.chart(pt, 4);
        let bc = base.coords(pt, &ch);
        let metric = LocalMetric::from_potential(&ch, &base.potential(&bc))?;
        let h = bundle.h_jets(&bc);
        let (hinv, _) = h.inverse_det().ok_or(Error::Singular)?;
        let beta = self.beta_jets(&bc, m);
        let alpha: Vec<JetMatrix> = (0..m)
            .map(|a| {
                let conn = hinv.matmul(&h.map(|x| x.diff(a)));
                let bdag = beta[a].adjoint(m);
                conn.sub(&hinv.matmul(&bdag).matmul(&h))
            })
            .collect();
        let f = (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| {
                        let t = beta[b]
                            .map(|x| x.diff(a))
                            .sub(&alpha[a].map(|x| x.diff(m + b)))
                            .add(&alpha[a].matmul(&beta[b]))
                            .sub(&beta[b].matmul(&alpha[a]));
                        t.value()
                    })
                    .collect()
            })
            .collect();
        Ok(CurvatureAt { metric, f })
    }
}

impl CurvatureAt {
    fn entry(&self, i: usize, j: usize) -> DMatrix<C64> {
        let m = self.f.len();
        DMatrix::from_fn(m, m, |a, b| self.f[a][b][(i, j)])
    }

    fn trace_form(&self) -> DMatrix<C64> {
        let m = self.f.len();
        DMatrix::from_fn(m, m, |a, b| self.f[a][b].trace())
    }

    /// `Λ²tr(iF∧iF)`.
    pub fn lambda2_trace_square(&self) -> f64 {
        let ginv = self.metric.ginv.value();
        let r = self.f[0][0].nrows();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..r {
            for j in 0..r {
                acc += lambda2_values(&ginv, &self.entry(i, j), &self.entry(j, i));
            }
        }
        acc.re
    }

    /// Terms of the correction: `(2/r)Λ²(Ric∧tr iF)`,
    /// `−2/(r(r+1))Λ²(tr iF∧tr iF)`, `−μS`.
    pub fn correction_terms(&self, slope: f64) -> [f64; 3] {
        let ginv = self.metric.ginv.value();
        let r = self.f[0][0].nrows() as f64;
        let ric = self.metric.ricci_matrix().value();
        let tr = self.trace_form();
        [
            2.0 / r * lambda2_values(&ginv, &ric, &tr).re,
            -2.0 / (r * (r + 1.0)) * lambda2_values(&ginv, &tr, &tr).re,
            -slope * self.metric.scal().value().re,
        ]
    }
}

/// Node values of `Λ²tr(iF_A∧iF_A)`.
pub fn moment_e_raw(conn: &Connection<'_>) -> Result<Vec<f64>> {
    conn.family
        .bundle
        .base
        .nodes()
        .par_iter()
        .map(|pt| Ok(conn.curvature(pt)?.lambda2_trace_square()))
        .collect()
}

/// Node values of the correction, including `tr(u_{X_s})/r`.
pub fn correction_raw(conn: &Connection<'_>, ham: &HamiltonianSpace) -> Result<Vec<f64>> {
    let bundle = &conn.family.bundle;
    let base = &bundle.base;
    let slope = bundle.slope();
    let mut vals: Vec<f64> = base
        .nodes()
        .par_iter()
        .map(|pt| Ok(conn.curvature(pt)?.correction_terms(slope).iter().sum()))
        .collect::<Result<_>>()?;
    let u = tr_u_extremal(bundle, ham, conn.params.iter().any(|e| e.norm() > 0.0))?;
    for (v, t) in vals.iter_mut().zip(u) {
        *v += t / bundle.rank() as f64;
    }
    Ok(vals)
}

/// `tr(u_{X_s})` at the nodes, with `X_s` the field of `π_N S(ω)`.
fn tr_u_extremal(bundle: &HermitianBundleData, ham: &HamiltonianSpace, deformed: bool) -> Result<Vec<f64>> {
    let base = &bundle.base;
    let s: Vec<f64> = base.nodes().iter().map(|p| base.scal(p)).collect::<Result<_>>()?;
    let mut c = ham.coefficients(base, &s);
    c[0] = 0.0;
    if c.iter().all(|x| x.abs() < 1e-12) {
        return Ok(vec![0.0; s.len()]);
    }
    if deformed {
        return Err(Error::Unsupported("u_X for deformed connections".into()));
    }
    let lift = solve_ux(bundle, &ham.field(&c))?;
    let mut out = vec![0.0; s.len()];
    for u in &lift.u {
        for (o, v) in out.iter_mut().zip(base.synthesize(u)) {
            *o += v;
        }
    }
    Ok(out)
}

/// `μ^e([A]) = π_N(Λ²tr(iF_A∧iF_A))`.
pub fn moment_e(conn: &Connection<'_>, ham: &HamiltonianSpace) -> Result<MomentValue> {
    let base = &conn.family.bundle.base;
    Ok(project_n(base, ham, &moment_e_raw(conn)?))
}

/// `μ([A]) = μ^e([A]) + π_N(correction)`.
pub fn moment_full(conn: &Connection<'_>, ham: &HamiltonianSpace) -> Result<MomentValue> {
    let base = &conn.family.bundle.base;
    let e = moment_e_raw(conn)?;
    let c = correction_raw(conn, ham)?;
    let raw: Vec<f64> = e.iter().zip(&c).map(|(a, b)| a + b).collect();
    Ok(project_n(base, ham, &raw))
}

/// Which subgroup plays the role of `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KChoice {
    /// All isometries: `k̄ = N̄`.
    Isometries,
    /// `K = T`.
    Torus,
}

/// Result of the relative-stability test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Dimension of `k̄/t̄`.
    pub quotient_dim: usize,
    /// Numerical rank of `∂μ/∂A` composed with the quotient map.
    pub rank: usize,
    /// Whether the composition is surjective.
    pub surjective: bool,
    /// Singular values of the composition.
    pub singular_values: Vec<f64>,
    /// Explanatory note.
    pub note: String,
}

const RANK_TOL: f64 = 1e-7;

/// Orthonormal basis (in `N̄` coordinates) of the complement of `t̄` in `k̄`.
fn quotient_basis(ham: &HamiltonianSpace, k: KChoice) -> DMatrix<f64> {
    if k == KChoice::Torus {
        return DMatrix::zeros(ham.dim(), 0);
    }
    let t = &ham.t_bar;
    let proj = &ham.k_bar - t * (t.transpose() * &ham.k_bar);
    let svd = SVD::new(proj, true, false);
    let u = svd.u.expect("left singular vectors");
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-9)
        .collect();
    DMatrix::from_fn(ham.dim(), cols.len(), |i, j| u[(i, cols[j])])
}

/// Rank of `∂μ/∂A` along the family directions at `params`, composed with
/// `k̄ → k̄/t̄`, by central differences in the real and imaginary parts.
pub fn stability_rank(
    family: &ConnectionFamily,
    params: &[C64],
    torus: TorusChoice,
    k: KChoice,
) -> Result<StabilityReport> {
    let base = &family.bundle.base;
    let ham = ham_basis(base, torus)?;
    let q = quotient_basis(&ham, k);
    if q.ncols() == 0 {
        return Ok(StabilityReport {
            quotient_dim: 0,
            rank: 0,
            surjective: true,
            singular_values: Vec::new(),
            note: "k̄/t̄ = 0: trivially surjective".into(),
        });
    }
    let step = 1e-3;
    let mut cols = Vec::new();
    for n in 0..family.dim() {
        for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
            let mut plus = params.to_vec();
            let mut minus = params.to_vec();
            plus[n] += dir * step;
            minus[n] -= dir * step;
            let a = moment_full(&family.at(&plus), &ham)?.coeffs;
            let b = moment_full(&family.at(&minus), &ham)?.coeffs;
            cols.push(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * step)).collect::<Vec<f64>>());
        }
    }
    if cols.is_empty() {
        return Ok(StabilityReport {
            quotient_dim: q.ncols(),
            rank: 0,
            surjective: false,
            singular_values: Vec::new(),
            note: "family has no deformation directions".into(),
        });
    }
    let jac = DMatrix::from_fn(ham.dim(), cols.len(), |i, j| cols[j][i]);
    let comp = q.transpose() * jac;
    let sv: Vec<f64> = SVD::new(comp, false, false).singular_values.iter().copied().collect();
    let rank = sv.iter().filter(|s| **s > RANK_TOL).count();
    Ok(StabilityReport {
        quotient_dim: q.ncols(),
        rank,
        surjective: rank == q.ncols(),
        singular_values: sv,
        note: String::new(),
    })
}

/// Outcome of an equivariance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    /// Whether `c₁(L)` is proportional to `c₁(E)`.
    pub proportional: bool,
    /// Proportionality constant when it exists.
    pub lambda: Option<f64>,
    /// `‖μ(g·A) − g·μ(A)‖` in `N̄` coordinates.
    pub deviation: f64,
}

/// `λ` with `[ω] = λ·2π c₁(E)` when it exists.
pub fn c1_proportionality(bundle: &HermitianBundleData) -> Option<f64> {
    let nf = bundle.base.kind.sphere_factors();
    if nf == 0 {
        return None;
    }
    let c1: Vec<f64> = (0..nf)
        .map(|f| bundle.degrees.iter().map(|d| d[f] as f64).sum())
        .collect();
    if c1.iter().any(|c| c.abs() < 1e-12) {
        return None;
    }
    let lam = bundle.base.scale / c1[0];
    c1.iter().all(|c| (bundle.base.scale / c - lam).abs() < 1e-12).then_some(lam)
}

/// Compares `μ(g·A)` with `g·μ(A)` for the rotation `g` with the given
/// angles (one per sphere factor, about the `x₁` axis).
pub fn equivariance_check(conn: &Connection<'_>, angles: &[f64]) -> Result<EquivarianceReport> {
    let bundle = &conn.family.bundle;
    let base = &bundle.base;
    let ham = ham_basis(base, TorusChoice::Trivial)?;
    let rot = |p: &BasePoint| -> BasePoint {
        let xs: Vec<[f64; 3]> = (0..base.kind.sphere_factors())
            .map(|f| crate::sphere::rotate_x1(p.sphere_point(f), angles[f]))
            .collect();
        BasePoint::from_sphere(&xs)
    };
    let moved: Vec<f64> = base
        .nodes()
        .par_iter()
        .map(|p| {
            let q = rot(p);
            let c = conn.curvature(&q)?;
            let corr: f64 = c.correction_terms(bundle.slope()).iter().sum();
            Ok(c.lambda2_trace_square() + corr)
        })
        .collect::<Result<_>>()?;
    let lhs = ham.coefficients(base, &moved);
    let mu = moment_full(conn, &ham)?;
    let field = ham.field(&mu.coeffs);
    let rotated: Vec<f64> = base
        .nodes()
        .iter()
        .map(|p| {
            let q = rot(p);
            let ch = base.chart(&q, 0);
            field.eval(base, &base.coords(&q, &ch)).value().re
        })
        .collect();
    let rhs = ham.coefficients(base, &rotated);
    let deviation = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let lambda = c1_proportionality(bundle);
    Ok(EquivarianceReport {
        proportional: lambda.is_some(),
        lambda,
        deviation,
    })
}

/// Sup over nodes of `|Λ²tr(iF∧iF)(u·A) − Λ²tr(iF∧iF)(A)|` and of the
/// correction for the gauge phase `θ`.
pub fn gauge_deviation(conn: &Connection<'_>, theta: SpectralField) -> Result<f64> {
    let g = conn.gauged(theta);
    let slope = conn.family.bundle.slope();
    let d: Vec<f64> = conn
        .family
        .bundle
        .base
        .nodes()
        .par_iter()
        .map(|p| {
            let a = conn.curvature(p)?;
            let b = g.curvature(p)?;
            let ca: f64 = a.correction_terms(slope).iter().sum();
            let cb: f64 = b.correction_terms(slope).iter().sum();
            Ok((a.lambda2_trace_square() - b.lambda2_trace_square()).abs().max((ca - cb).abs()))
        })
        .collect::<Result<_>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}
