//! Approximate extremal metrics on the total space: lifts of base
//! Hamiltonians, the linearized scalar curvature, the operators `S₁` and
//! `S₁,₁`, and the order-`p` approximate solutions.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basegeom::{ham_basis, BaseCoords, BaseField, BaseManifold, BasePoint, SpectralField, TorusChoice};
use crate::error::{Error, Result};
use crate::expansion::{check_he_at, fit_slope, scal_series};
use crate::jet::{Jet, JetMatrix};
use crate::kahler::LocalMetric;
use crate::ruledgeom::{BundlePerturbation, FiberQuadrature, HermitianBundleData, TotalField, TotalJets, TotalPoint};
use crate::sphere::{real_sh, sh_count, sh_degree_order};
use crate::C64;

const HOLOMORPHY_TOL: f64 = 1e-9;

/// Lift data of a base Hamiltonian `b`: the endomorphism `u_X` (diagonal,
/// one field per summand) with `∂̄u_X = ι_X iF`, and residuals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftData {
    /// Hamiltonian `b` with `ι_Xω = ∂̄b`.
    pub b: SpectralField,
    /// Diagonal entries of `u_X`.
    pub u: Vec<SpectralField>,
    /// `∫ tr(u_X) ω^m`.
    pub trace_integral: f64,
    /// Sup over nodes of `|Λ∂(∂̄u_X − ι_X iF)|`.
    pub equation_residual: f64,
    /// Sup over nodes of `|∂̄u_X − ι_X iF|`.
    pub liftability_residual: f64,
    /// Sup over nodes of `|∂̄X|`.
    pub holomorphy_residual: f64,
}

impl LiftData {
    /// Jet of `θ_X = Tr(u_X λ)`.
    pub fn theta(&self, bundle: &HermitianBundleData, tj: &TotalJets) -> Jet {
        let mut acc = Jet::zero(&tj.chart.space);
        for (i, u) in self.u.iter().enumerate() {
            acc = &acc + &(&u.eval(&bundle.base, &tj.bc) * tj.lambda.get(i, i));
        }
        acc
    }

    /// Jet of `l_k(b) = b + k⁻¹θ_X`.
    pub fn lift_k(&self, bundle: &HermitianBundleData, tj: &TotalJets, k: f64) -> Jet {
        &self.b.eval(&bundle.base, &tj.bc) + &self.theta(bundle, tj).scale_re(1.0 / k)
    }
}

/// The lift `l_k(b)` as a total-space field.
pub struct LiftField<'a> {
    /// Lift data.
    pub data: &'a LiftData,
    /// Parameter `k`.
    pub k: f64,
}

impl TotalField for LiftField<'_> {
    fn eval(&self, bundle: &HermitianBundleData, tj: &TotalJets) -> Jet {
        self.data.lift_k(bundle, tj, self.k)
    }
}

fn base_metric_at(base: &BaseManifold, pt: &BasePoint, order: usize) -> Result<(LocalMetric, BaseCoords)> {
    let ch = base.chart(pt, order);
    let bc = base.coords(pt, &ch);
    let g = LocalMetric::from_potential(&ch, &base.potential(&bc))?;
    Ok((g, bc))
}

/// Per-node data of the `u_X` problem for summand `i`: `(rhs, X, ν)`.
struct UxNode {
    rhs: Vec<f64>,
    holo: f64,
}

/// `ν_b̄ = i Σ_a C_ab X^a`, the coefficients of `ι_X iF` for summand `i`.
fn iota_curvature(curv: &[Vec<JetMatrix>], x: &[Jet], i: usize) -> Vec<Jet> {
    let m = x.len();
    (0..m)
        .map(|b| {
            let mut acc = Jet::zero(x[0].space());
            for a in 0..m {
                acc = &acc + &(curv[a][b].get(i, i) * &x[a]);
            }
            acc.scale(C64::new(0.0, 1.0))
        })
        .collect()
}

/// Solves `Λ∂(∂̄u − ι_X iF) = 0` with `∫u_i = 0` per summand, where `X` is
/// the Hamiltonian field of `b`. Diagonal metrics only.
pub fn solve_ux(bundle: &HermitianBundleData, b: &SpectralField) -> Result<LiftData> {
    if !bundle.is_diagonal() {
        return Err(Error::Unsupported("u_X for non-diagonal bundle metrics".into()));
    }
    let base = &bundle.base;
    let (m, r) = (base.dim(), bundle.rank());
    let nodes: Vec<UxNode> = base
        .nodes()
        .par_iter()
        .map(|pt| -> Result<UxNode> {
            let (g, bc) = base_metric_at(base, pt, 3)?;
            let x = g.hamiltonian_field(&b.eval(base, &bc));
            let holo = (0..m)
                .flat_map(|a| (0..m).map(move |c| (a, c)))
                .map(|(a, c)| g.chart.dbar(&x[a], c).value().norm())
                .fold(0.0, f64::max);
            let curv = bundle.curvature_jets(&bc, m);
            let rhs = (0..r)
                .map(|i| {
                    let nu = iota_curvature(&curv, &x, i);
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..m {
                        for bb in 0..m {
                            acc -= g.ginv.get(bb, a).value() * g.chart.d(&nu[bb], a).value();
                        }
                    }
                    acc.re
                })
                .collect();
            Ok(UxNode { rhs, holo })
        })
        .collect::<Result<_>>()?;
    let holomorphy_residual = nodes.iter().map(|n| n.holo).fold(0.0, f64::max);
    if holomorphy_residual > HOLOMORPHY_TOL {
        return Err(Error::NotHolomorphic(holomorphy_residual));
    }
    let mut u = Vec::with_capacity(r);
    for i in 0..r {
        let rhs: Vec<f64> = nodes.iter().map(|n| n.rhs[i]).collect();
        u.push(base.poisson_solve(&rhs)?);
    }
    let trace_integral = (0..r).map(|i| base.integrate(&base.synthesize(&u[i]))).sum();
    let mut data = LiftData {
        b: b.clone(),
        u,
        trace_integral,
        equation_residual: 0.0,
        liftability_residual: 0.0,
        holomorphy_residual,
    };
    let (eq, lift) = ux_residuals(bundle, &data, &nodes)?;
    data.equation_residual = eq;
    data.liftability_residual = lift;
    Ok(data)
}

fn ux_residuals(bundle: &HermitianBundleData, data: &LiftData, nodes: &[UxNode]) -> Result<(f64, f64)> {
    let base = &bundle.base;
    let m = base.dim();
    let out: Vec<(f64, f64)> = base
        .nodes()
        .par_iter()
        .zip(nodes)
        .map(|(pt, node)| -> Result<(f64, f64)> {
            let (g, bc) = base_metric_at(base, pt, 3)?;
            let x = g.hamiltonian_field(&data.b.eval(base, &bc));
            let curv = bundle.curvature_jets(&bc, m);
            let mut eq: f64 = 0.0;
            let mut lift: f64 = 0.0;
            for (i, ui) in data.u.iter().enumerate() {
                let uj = ui.eval(base, &bc);
                eq = eq.max((g.laplacian(&uj).value().re - node.rhs[i]).abs());
                let nu = iota_curvature(&curv, &x, i);
                for (bb, n) in nu.iter().enumerate() {
                    lift = lift.max((g.chart.dbar(&uj, bb).value() - n.value()).norm());
                }
            }
            Ok((eq, lift))
        })
        .collect::<Result<_>>()?;
    Ok(out.iter().fold((0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1))))
}

/// Defect of the lift at `pt`: with `H = k·b + θ_X`, the sup of `|∂̄X̃|` for
/// the `ω_k`-Hamiltonian field `X̃` of `H` plus `|π_*X̃ − X|`.
pub fn lift_defect(bundle: &HermitianBundleData, lift: &LiftData, pt: &TotalPoint, k: f64) -> Result<f64> {
    let tj = TotalJets::new(bundle, pt, 4)?;
    let h = lift.lift_k(bundle, &tj, k).scale_re(k);
    let g = tj.metric_k(k)?;
    let xt = g.hamiltonian_field(&h);
    let n = tj.n();
    let mut defect: f64 = 0.0;
    for xa in &xt {
        for c in 0..n {
            defect = defect.max(tj.chart.dbar(xa, c).value().norm());
        }
    }
    let (_, ginv) = tj.base_metric()?;
    let bj = lift.b.eval(&bundle.base, &tj.bc);
    for a in 0..tj.m {
        let mut xa = C64::new(0.0, 0.0);
        for bb in 0..tj.m {
            xa += ginv.get(bb, a).value() * tj.chart.dbar(&bj, bb).value();
        }
        xa *= C64::new(0.0, -1.0);
        defect = defect.max((xt[a].value() - xa).norm());
    }
    Ok(defect)
}

/// Linearization `L_kφ` of `Scal` along `ω_k + t i∂̄∂φ` at `pt`.
pub fn linearize_scal(bundle: &HermitianBundleData, phi: &dyn TotalField, pt: &TotalPoint, k: f64) -> Result<f64> {
    let tj = TotalJets::new(bundle, pt, 4)?;
    let g = tj.metric_k(k)?;
    Ok(g.scal_linearization(&phi.eval(bundle, &tj)).value().re)
}

/// Leading vertical operator `Δ_V(Δ_V − r)φ` at `pt`.
pub fn vertical_operator(bundle: &HermitianBundleData, phi: &dyn TotalField, pt: &TotalPoint) -> Result<f64> {
    let tj = TotalJets::new(bundle, pt, 4)?;
    let f = phi.eval(bundle, &tj);
    let lv = tj.laplacian_v_jet(&f)?;
    let llv = tj.laplacian_v_jet(&lv)?;
    Ok((llv - lv.scale_re(tj.r as f64)).value().re)
}

/// `Scal(ω_k + t i∂̄∂φ)` at `pt`.
pub fn scal_perturbed(bundle: &HermitianBundleData, phi: &dyn TotalField, pt: &TotalPoint, k: f64, t: f64) -> Result<f64> {
    let tj = TotalJets::new(bundle, pt, 4)?;
    let psi = &(&tj.psi_g + &tj.psi_m.scale_re(k)) - &phi.eval(bundle, &tj).scale_re(t);
    let g = LocalMetric::from_potential(&tj.chart, &psi).map_err(|e| match e {
        Error::NotPositive => Error::KBelowThreshold(k),
        e => e,
    })?;
    Ok(g.scal().value().re)
}

fn lambda_value(h: &DMatrix<C64>, f: &[C64]) -> Result<DMatrix<C64>> {
    let r = f.len();
    let hinv = h.clone().try_inverse().ok_or(Error::Singular)?;
    let row = DMatrix::from_row_slice(1, r, f);
    let num = &hinv * row.adjoint() * &row;
    let den = (&row * &hinv * row.adjoint())[(0, 0)];
    Ok(num / den)
}

fn traceless(a: &DMatrix<C64>) -> DMatrix<C64> {
    let r = a.nrows();
    a - DMatrix::identity(r, r) * (a.trace() / r as f64)
}

/// `Σ_{ab} g^{ab̄} C_ab` at the centre.
fn contract_curvature(g: &LocalMetric, curv: &[Vec<JetMatrix>]) -> DMatrix<C64> {
    let m = curv.len();
    let r = curv[0][0].dim();
    let mut out = DMatrix::<C64>::zeros(r, r);
    for a in 0..m {
        for b in 0..m {
            out += curv[a][b].value() * g.ginv.get(b, a).value();
        }
    }
    out
}

fn s1_from(g: &LocalMetric, curv: &[Vec<JetMatrix>], lam: &DMatrix<C64>) -> f64 {
    let a = traceless(&contract_curvature(g, curv));
    g.scal().value().re + (lam * a).trace().re / (2.0 * PI)
}

/// `S₁ = Tr(A₁λ)` with `A₁ = S(ω)I + (i/2π)Λ_ωF⁰`, at `pt`.
pub fn s1(bundle: &HermitianBundleData, pt: &TotalPoint) -> Result<f64> {
    let base = &bundle.base;
    let (g, bc) = base_metric_at(base, &pt.base, 4)?;
    let h = bundle.h_jets(&bc);
    let lam = lambda_value(&h.value(), &pt.functional())?;
    Ok(s1_from(&g, &bundle.curvature_jets(&bc, base.dim()), &lam))
}

/// Ratio of the traceless curvature terms of the expansion's `s₁` and of
/// `S₁`; equals `4πr` wherever the term is nonzero.
pub fn s1_ratio(bundle: &HermitianBundleData, pt: &TotalPoint) -> Result<f64> {
    let rec = scal_series(bundle, pt)?;
    let a = rec.term("traceless_curvature").unwrap_or(0.0);
    let b = s1(bundle, pt)? - bundle.base.scal(&pt.base)?;
    if b.abs() < 1e-14 {
        return Err(Error::ZeroDenominator);
    }
    Ok(a / b)
}

/// Jets of `δH` for the direction `dir`, linear in each perturbation.
fn delta_h(bundle: &HermitianBundleData, dir: &[BundlePerturbation], bc: &BaseCoords, h: &JetMatrix) -> JetMatrix {
    let r = bundle.rank();
    let space = bc.z[0].space().clone();
    let mut d = JetMatrix::from_fn(r, |_, _| Jet::zero(&space));
    for p in dir {
        match p {
            BundlePerturbation::Conformal {
                summand,
                amplitude,
                field,
            } => {
                let q = field.eval(&bundle.base, bc);
                let e = d.get(*summand, *summand) + &(&q * h.get(*summand, *summand)).scale_re(*amplitude);
                *d.get_mut(*summand, *summand) = e;
            }
            BundlePerturbation::OffDiagonal { i, j, amplitude, field } => {
                let q = &field.eval(&bundle.base, bc) * &bundle.model_log_h(*i, bc).exp();
                let e = d.get(*i, *j) + &q.scale(*amplitude);
                *d.get_mut(*i, *j) = e;
                let e = d.get(*j, *i) + &q.scale(amplitude.conj());
                *d.get_mut(*j, *i) = e;
            }
        }
    }
    d
}

/// `S₁,₁(η, Φ)` at `pt`: the derivative of `S₁` along
/// `(ω + t i∂̄∂η, H + tδH)` with `δH` given by `dir`. Requires `h` HE.
pub fn s11(
    bundle: &HermitianBundleData,
    eta: &dyn BaseField,
    dir: &[BundlePerturbation],
    pt: &TotalPoint,
) -> Result<f64> {
    check_he_at(bundle, &pt.base)?;
    let base = &bundle.base;
    let m = base.dim();
    let (g, bc) = base_metric_at(base, &pt.base, 4)?;
    let ej = eta.eval(base, &bc);
    let lin = g.scal_linearization(&ej).value().re;
    let h = bundle.h_jets(&bc);
    let r = h.dim();
    let lam = lambda_value(&h.value(), &pt.functional())?;
    let curv = bundle.curvature_jets(&bc, m);
    let alpha = g.chart.ddbar(&ej).map(|x| -x);
    let w_eta = DMatrix::from_fn(r, r, |i, j| {
        let c = JetMatrix::from_fn(m, |a, b| curv[a][b].get(i, j).clone());
        g.lambda2(&alpha, &c).value() * 2.0
    });
    let dh = delta_h(bundle, dir, &bc, &h);
    let (hinv, _) = h.inverse_det().ok_or(Error::Singular)?;
    let mut dlam = DMatrix::<C64>::zeros(r, r);
    for a in 0..m {
        let conn = hinv.matmul(&h.map(|x| x.diff(a)));
        let dconn = hinv
            .matmul(&dh.map(|x| x.diff(a)))
            .sub(&hinv.matmul(&dh).matmul(&conn));
        for b in 0..m {
            let dc = dconn.map(|x| -x.diff(m + b)).value();
            dlam += dc * g.ginv.get(b, a).value();
        }
    }
    let tl = traceless(&(w_eta + dlam));
    Ok(lin + (&lam * tl).trace().re / (2.0 * PI))
}

/// `S₁` along the curve `(ω + t i∂̄∂η, H_t)` with `H_t` the metric of
/// `bundle` deformed by `dir` scaled by `t`.
pub fn s1_along(
    bundle: &HermitianBundleData,
    eta: &dyn BaseField,
    dir: &[BundlePerturbation],
    pt: &TotalPoint,
    t: f64,
) -> Result<f64> {
    let mut b = bundle.clone();
    for p in dir {
        let scaled = match p.clone() {
            BundlePerturbation::Conformal {
                summand,
                amplitude,
                field,
            } => BundlePerturbation::Conformal {
                summand,
                amplitude: amplitude * t,
                field,
            },
            BundlePerturbation::OffDiagonal { i, j, amplitude, field } => BundlePerturbation::OffDiagonal {
                i,
                j,
                amplitude: amplitude * t,
                field,
            },
        };
        b = b.with_perturbation(scaled)?;
    }
    let base = &bundle.base;
    let ch = base.chart(&pt.base, 4);
    let bc = base.coords(&pt.base, &ch);
    let psi = &base.potential(&bc) - &eta.eval(base, &bc).scale_re(t);
    let g = LocalMetric::from_potential(&ch, &psi)?;
    let lam = lambda_value(&b.h_jets(&bc).value(), &pt.functional())?;
    Ok(s1_from(&g, &b.curvature_jets(&bc, base.dim()), &lam))
}

/// Discretization of the order-two construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    /// Highest fiber harmonic degree kept in `φ₂`.
    pub fiber_lmax: usize,
    /// Order of the fiber quadrature.
    pub fiber_order: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            fiber_lmax: 4,
            fiber_order: 5,
        }
    }
}

/// Discretization diagnostics of the builder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproxDiagnostics {
    /// Sup over quadrature points of `|s₂ − Σ c_lm Y_lm|`.
    pub fiber_defect: f64,
    /// Sup over nodes of the base-band truncation error of the fiber modes.
    pub base_defect: f64,
    /// Sup of the off-diagonal `W` components of `s₂` (must vanish).
    pub w_offdiagonal: f64,
    /// Mean of the fiber average of `s₂`.
    pub fiber_mean_average: f64,
}

/// Order-`p` approximate solution: `ω_{k,p} = ω_k(h_k) + i∂̄∂φ_{k,p}` with
/// `h_k = h·exp(k⁻¹Φ)` and `φ_{k,p} = η + k⁻²φ₂`, and
/// `b_{k,p} = b₀ + k⁻¹b₁ + k⁻²b₂`.
#[derive(Clone, Debug)]
pub struct ApproxSolution {
    /// Order `p`.
    pub order: usize,
    /// The Hermitian–Einstein bundle.
    pub bundle: HermitianBundleData,
    /// `b₀ = r(r−1)`.
    pub b0: f64,
    /// `b₁ = S(ω)`.
    pub b1: f64,
    /// `b₂` as a base field, if `p = 2`.
    pub b2: Option<SpectralField>,
    /// `b₂` in coordinates of the orthonormal basis of `N̄`.
    pub b2_coords: Vec<f64>,
    /// Lift data of `b₂`.
    pub b2_lift: Option<LiftData>,
    /// Base correction `η`.
    pub eta: Option<SpectralField>,
    /// `Φ = φ_W·diag(1, −1)` coefficient field.
    pub phi_w: Option<SpectralField>,
    /// Fiber average of `s₂`.
    pub fiber_mean: Option<SpectralField>,
    /// Diagonal `W` component of `s₂`: coefficient of `x₃`.
    pub w3: Option<SpectralField>,
    /// Highest fiber degree in `fiber_modes`.
    pub fiber_lmax: usize,
    /// Coefficients of `φ₂` per fiber harmonic index (zero below degree 2).
    pub fiber_modes: Vec<SpectralField>,
    /// Diagnostics.
    pub diagnostics: ApproxDiagnostics,
}

/// Residual sweep of an approximate solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualFit {
    /// Values of `k`.
    pub ks: Vec<f64>,
    /// Sup of `|R(k)|` over the sample points.
    pub residuals: Vec<f64>,
    /// Log-log slope.
    pub slope: f64,
}

fn base_scal_constant(base: &BaseManifold) -> Result<f64> {
    let vals: Vec<f64> = base.nodes().iter().map(|p| base.scal(p)).collect::<Result<_>>()?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-8 {
        return Err(Error::Unsupported("base scalar curvature is not constant".into()));
    }
    Ok(base.integrate(&vals) / base.quadrature_volume())
}

struct FiberNode {
    coeffs: Vec<f64>,
    defect: f64,
}

fn fiber_node(bundle: &HermitianBundleData, x: &BasePoint, cfg: &ApproxConfig) -> Result<FiberNode> {
    let q = FiberQuadrature::new(bundle, x, cfg.fiber_order)?;
    let n = sh_count(cfg.fiber_lmax);
    let mut coeffs = vec![0.0; n];
    let mut vals = Vec::with_capacity(q.nodes.len());
    for ((p, y), w) in q.points(x).iter().zip(&q.nodes).zip(&q.weights) {
        let s2 = scal_series(bundle, p)?.coefficients[2];
        let ys = crate::sphere::real_sh_at(cfg.fiber_lmax, *y);
        for (c, yv) in coeffs.iter_mut().zip(&ys) {
            *c += 2.0 * w * s2 * yv;
        }
        vals.push((s2, ys));
    }
    let defect = vals
        .iter()
        .map(|(s, ys)| (s - ys.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>()).abs())
        .fold(0.0, f64::max);
    Ok(FiberNode { coeffs, defect })
}

/// Builds the order-`p` approximate solution (`p ≤ 2`) for a
/// Hermitian–Einstein bundle over a base of constant scalar curvature.
pub fn build_approx(bundle: &HermitianBundleData, p: usize, cfg: &ApproxConfig) -> Result<ApproxSolution> {
    if p > 2 {
        return Err(Error::Unsupported("approximate solutions beyond order 2".into()));
    }
    let he = bundle.he_residual()?;
    if he > 1e-6 {
        return Err(Error::NotHermitianEinstein(he));
    }
    let base = &bundle.base;
    let r = bundle.rank();
    let mut sol = ApproxSolution {
        order: p,
        bundle: bundle.clone(),
        b0: (r * (r - 1)) as f64,
        b1: base_scal_constant(base)?,
        b2: None,
        b2_coords: Vec::new(),
        b2_lift: None,
        eta: None,
        phi_w: None,
        fiber_mean: None,
        w3: None,
        fiber_lmax: cfg.fiber_lmax,
        fiber_modes: Vec::new(),
        diagnostics: ApproxDiagnostics::default(),
    };
    if p < 2 {
        return Ok(sol);
    }
    if r != 2 {
        return Err(Error::Unsupported("order-two construction for rank other than 2".into()));
    }
    let nodes: Vec<FiberNode> = base
        .nodes()
        .par_iter()
        .map(|x| fiber_node(bundle, x, cfg))
        .collect::<Result<_>>()?;
    sol.diagnostics.fiber_defect = nodes.iter().map(|n| n.defect).fold(0.0, f64::max);
    let column = |idx: usize| -> Vec<f64> { nodes.iter().map(|n| n.coeffs[idx]).collect() };
    let y00 = 1.0 / (4.0 * PI).sqrt();
    let mean: Vec<f64> = column(0).iter().map(|c| c * y00).collect();
    let mut psi = [vec![0.0; nodes.len()], vec![0.0; nodes.len()], vec![0.0; nodes.len()]];
    for (a, e) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
        let ys = crate::sphere::real_sh_at(1, *e);
        for (idx, yv) in ys.iter().enumerate().skip(1) {
            for (o, c) in psi[a].iter_mut().zip(column(idx)) {
                *o += c * yv;
            }
        }
    }
    sol.diagnostics.fiber_mean_average = base.integrate(&mean) / base.quadrature_volume();

    let ham = ham_basis(base, TorusChoice::Trivial)?;
    let coords = ham.coefficients(base, &mean);
    let b2_vals = ham.field_values(base, &coords);
    let b2 = ham.field(&coords);
    let eta_rhs: Vec<f64> = b2_vals.iter().zip(&mean).map(|(b, m)| b - m).collect();
    let eta = base.lichnerowicz_solve(&eta_rhs).map_err(|e| match e {
        Error::KernelComponent(s) => Error::KernelComponent(format!("constants/N: {s}")),
        e => e,
    })?;

    let m = base.dim();
    let w_eta: Vec<[f64; 3]> = base
        .nodes()
        .par_iter()
        .map(|x| -> Result<[f64; 3]> {
            if m < 2 {
                return Ok([0.0; 3]);
            }
            let (g, bc) = base_metric_at(base, x, 4)?;
            let alpha = g.chart.ddbar(&eta.eval(base, &bc)).map(|v| -v);
            let curv = bundle.curvature_jets(&bc, m);
            let w = DMatrix::from_fn(2, 2, |i, j| {
                let c = JetMatrix::from_fn(m, |a, b| curv[a][b].get(i, j).clone());
                g.lambda2(&alpha, &c).value() * (4.0 * r as f64)
            });
            let w = traceless(&w);
            let h = bundle.h_jets(&bc).value();
            let l = nalgebra::Cholesky::new(h).ok_or(Error::NotPositive)?.l();
            let linv = l.clone().try_inverse().ok_or(Error::Singular)?;
            let wh = l.adjoint() * w * linv.adjoint();
            Ok([wh[(0, 1)].re, wh[(0, 1)].im, 0.5 * (wh[(0, 0)] - wh[(1, 1)]).re])
        })
        .collect::<Result<_>>()?;
    for (a, row) in psi.iter_mut().enumerate() {
        for (o, w) in row.iter_mut().zip(&w_eta) {
            *o += w[a];
        }
    }
    sol.diagnostics.w_offdiagonal = psi[0].iter().chain(&psi[1]).map(|x| x.abs()).fold(0.0, f64::max);
    if sol.diagnostics.w_offdiagonal > 1e-8 {
        return Err(Error::Unsupported(format!(
            "off-diagonal W component {:e}",
            sol.diagnostics.w_offdiagonal
        )));
    }
    let phi_rhs: Vec<f64> = psi[2].iter().map(|v| -v / (2.0 * r as f64)).collect();
    let phi_w = base.poisson_solve(&phi_rhs).map_err(|e| match e {
        Error::NonzeroMean(c) => Error::KernelComponent(format!("W: parallel traceless endomorphism component {c:e}")),
        e => e,
    })?;

    let nsh = sh_count(cfg.fiber_lmax);
    let mut modes = Vec::with_capacity(nsh);
    let mut base_defect: f64 = 0.0;
    for idx in 0..nsh {
        let (l, _) = sh_degree_order(idx);
        if l < 2 {
            modes.push(SpectralField::zeros(base.kind, base.band_limit));
            continue;
        }
        let col = column(idx);
        let f = base.analyze(&col);
        let back = base.synthesize(&f);
        base_defect = base_defect.max(col.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let lam = (l * (l + 1)) as f64;
        modes.push(SpectralField {
            band: f.band,
            coeffs: f.coeffs.iter().map(|c| -c / (lam * (lam - r as f64))).collect(),
        });
    }
    sol.diagnostics.base_defect = base_defect;
    let fiber_mean = base.analyze(&mean);
    let w3 = base.analyze(&psi[2]);
    sol.b2_lift = Some(solve_ux(bundle, &b2)?);
    sol.b2 = Some(b2);
    sol.b2_coords = coords;
    sol.eta = Some(eta);
    sol.phi_w = Some(phi_w);
    sol.fiber_mean = Some(fiber_mean);
    sol.w3 = Some(w3);
    sol.fiber_modes = modes;
    Ok(sol)
}

impl ApproxSolution {
    /// Bundle metric `h·exp(k⁻¹Φ)`.
    pub fn bundle_at(&self, k: f64) -> Result<HermitianBundleData> {
        let mut b = self.bundle.clone();
        if let Some(f) = &self.phi_w {
            if f.coeffs.iter().any(|c| *c != 0.0) {
                for (summand, sign) in [(0, 1.0), (1, -1.0)] {
                    b = b.with_perturbation(BundlePerturbation::Conformal {
                        summand,
                        amplitude: sign / k,
                        field: f.clone(),
                    })?;
                }
            }
        }
        Ok(b)
    }

    /// `b_{k,p}` as a constant plus the `k⁻²` field.
    pub fn b_constant(&self, k: f64) -> f64 {
        match self.order {
            0 => self.b0,
            _ => self.b0 + self.b1 / k,
        }
    }

    fn phi2_jet(&self, tj: &TotalJets) -> Result<Jet> {
        let space = &tj.chart.space;
        if self.fiber_modes.is_empty() {
            return Ok(Jet::zero(space));
        }
        let (u, ub, x3) = tj.fiber_frame_coords()?;
        let ys = real_sh(self.fiber_lmax, &u, &ub, &x3, &Jet::real(space, 1.0));
        let mut acc = Jet::zero(space);
        for (mode, y) in self.fiber_modes.iter().zip(&ys) {
            if mode.coeffs.iter().any(|c| *c != 0.0) {
                acc = &acc + &(&mode.eval(&self.bundle.base, &tj.bc) * y);
            }
        }
        Ok(acc)
    }

    /// Jet of `φ_{k,p}` in the chart of `tj`.
    pub fn phi_jet(&self, tj: &TotalJets, k: f64) -> Result<Jet> {
        let space = &tj.chart.space;
        let mut acc = Jet::zero(space);
        if let Some(eta) = &self.eta {
            acc = &acc + &eta.eval(&self.bundle.base, &tj.bc);
        }
        Ok(&acc + &self.phi2_jet(tj)?.scale_re(1.0 / (k * k)))
    }

    /// Jet of `l_k(b_{k,p})`.
    pub fn lift_jet(&self, tj: &TotalJets, k: f64) -> Jet {
        let mut acc = Jet::real(&tj.chart.space, self.b_constant(k));
        if let Some(lift) = &self.b2_lift {
            acc = &acc + &lift.lift_k(&self.bundle, tj, k).scale_re(1.0 / (k * k));
        }
        acc
    }

    fn metric_at(&self, pt: &TotalPoint, k: f64) -> Result<(TotalJets, LocalMetric, Jet)> {
        let bk = self.bundle_at(k)?;
        let tj = TotalJets::new(&bk, pt, 4)?;
        let phi = self.phi_jet(&tj, k)?;
        let psi = &(&tj.psi_g + &tj.psi_m.scale_re(k)) - &phi;
        let g = LocalMetric::from_potential(&tj.chart, &psi).map_err(|e| match e {
            Error::NotPositive => Error::KBelowThreshold(k),
            e => e,
        })?;
        Ok((tj, g, phi))
    }

    /// `Scal(ω_{k,p})` at `pt`.
    pub fn scal(&self, pt: &TotalPoint, k: f64) -> Result<f64> {
        Ok(self.metric_at(pt, k)?.1.scal().value().re)
    }

    /// `R(k) = Scal(ω_{k,p}) + ½⟨∇l_k(b),∇φ_{k,p}⟩ − l_k(b)` at `pt`.
    pub fn residual(&self, pt: &TotalPoint, k: f64) -> Result<f64> {
        let (tj, g, phi) = self.metric_at(pt, k)?;
        let l = self.lift_jet(&tj, k);
        let pair = g.grad_pair(&l, &phi).value().re;
        Ok(g.scal().value().re + 0.5 * pair - l.value().re)
    }

    /// `l_{k,p}(b) = l_k(b) − ½⟨∇l_k(b),∇φ_{k,p}⟩_{ω_{k,p}}` at `pt`.
    pub fn lift_lkp(&self, pt: &TotalPoint, k: f64) -> Result<f64> {
        let (tj, g, phi) = self.metric_at(pt, k)?;
        let l = self.lift_jet(&tj, k);
        Ok(l.value().re - 0.5 * g.grad_pair(&l, &phi).value().re)
    }

    /// Sup of `|R(k)|` over `pts` for each `k`, with the log-log slope.
    pub fn residual_fit(&self, pts: &[TotalPoint], ks: &[f64]) -> Result<ResidualFit> {
        let residuals: Vec<f64> = ks
            .iter()
            .map(|&k| {
                pts.par_iter()
                    .map(|p| self.residual(p, k).map(f64::abs))
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.into_iter().fold(0.0, f64::max))
            })
            .collect::<Result<_>>()?;
        let slope = fit_slope(ks, &residuals);
        Ok(ResidualFit {
            ks: ks.to_vec(),
            residuals,
            slope,
        })
    }

    /// `|Δ_V(Δ_V − r)φ₂ + (s₂ − s̄₂ − x₃w₃)|` at `pt`: the fiberwise
    /// residual of the vertical solve.
    pub fn vertical_residual(&self, pt: &TotalPoint) -> Result<f64> {
        let (Some(mean), Some(w3)) = (&self.fiber_mean, &self.w3) else {
            return Ok(0.0);
        };
        let tj = TotalJets::new(&self.bundle, pt, 4)?;
        let f = self.phi2_jet(&tj)?;
        let lv = tj.laplacian_v_jet(&f)?;
        let op = (&tj.laplacian_v_jet(&lv)? - &lv.scale_re(tj.r as f64)).value().re;
        let (_, _, x3) = tj.fiber_frame_coords()?;
        let base = &self.bundle.base;
        let higher = scal_series(&self.bundle, pt)?.coefficients[2]
            - mean.eval(base, &tj.bc).value().re
            - x3.value().re * w3.eval(base, &tj.bc).value().re;
        Ok((op + higher).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basegeom::{BaseKind, ConstField};
    use crate::ruledgeom::FnTotalField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p1() -> BaseManifold {
        BaseManifold::with_band(BaseKind::ProjectiveLine, 6)
    }

    fn killing(base: &BaseManifold) -> SpectralField {
        ham_basis(base, TorusChoice::Trivial).unwrap().basis[2].clone()
    }

    fn points(bundle: &HermitianBundleData, n: usize, seed: u64) -> Vec<TotalPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| bundle.random_point(&mut rng)).collect()
    }

    #[test]
    fn constant_hamiltonian_has_zero_lift() {
        let e = HermitianBundleData::split(p1(), &[0, -1]).unwrap();
        let mut b = SpectralField::zeros(BaseKind::ProjectiveLine, 0);
        b.coeffs[0] = 1.0;
        let d = solve_ux(&e, &b).unwrap();
        for u in &d.u {
            assert!(u.coeffs.iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn split_bundle_lift_is_diagonal_multiple_of_hamiltonian() {
        let base = p1().scaled(1.5);
        let e = HermitianBundleData::split(base.clone(), &[1, -2]).unwrap();
        let b = killing(&base);
        let d = solve_ux(&e, &b).unwrap();
        let bv = base.synthesize(&b);
        for (u, a) in d.u.iter().zip([1.0, -2.0]) {
            let uv = base.synthesize(u);
            for (x, y) in uv.iter().zip(&bv) {
                assert!((x - a / 1.5 * y).abs() < 1e-9);
            }
        }
        assert!(d.liftability_residual < 1e-7);
        assert!(d.equation_residual < 1e-8);
        assert!(d.trace_integral.abs() < 1e-8);
        for p in points(&e, 4, 3) {
            assert!(lift_defect(&e, &d, &p, 7.0).unwrap() < 1e-7);
        }
    }

    #[test]
    fn flat_bundle_rotation_lift() {
        let base = p1();
        let e = HermitianBundleData::trivial(base.clone(), 2).unwrap();
        let d = solve_ux(&e, &killing(&base)).unwrap();
        assert!(d.u.iter().all(|u| u.coeffs.iter().all(|c| c.abs() < 1e-12)));
        for p in points(&e, 3, 5) {
            assert!(lift_defect(&e, &d, &p, 10.0).unwrap() < 1e-7);
        }
    }

    #[test]
    fn deformed_bundle_lift_satisfies_the_projected_equation() {
        let base = p1();
        let mut q = SpectralField::zeros(BaseKind::ProjectiveLine, 2);
        q.coeffs[4] = 0.3;
        q.coeffs[7] = -0.2;
        let e = HermitianBundleData::split(base.clone(), &[0, -1])
            .unwrap()
            .with_perturbation(BundlePerturbation::Conformal {
                summand: 0,
                amplitude: 1.0,
                field: q,
            })
            .unwrap();
        let d = solve_ux(&e, &killing(&base)).unwrap();
        assert!(d.equation_residual < 1e-6);
        assert!(d.trace_integral.abs() < 1e-8);
    }

    #[test]
    fn non_hamiltonian_function_is_rejected() {
        let base = p1();
        let e = HermitianBundleData::split(base.clone(), &[0, -1]).unwrap();
        let mut b = SpectralField::zeros(BaseKind::ProjectiveLine, 2);
        b.coeffs[6] = 1.0;
        assert!(matches!(solve_ux(&e, &b), Err(Error::NotHolomorphic(_))));
    }

    fn test_phi() -> FnTotalField<impl Fn(&HermitianBundleData, &TotalJets) -> Jet + Send + Sync> {
        FnTotalField(|_: &HermitianBundleData, tj: &TotalJets| {
            let a = tj.lambda.get(0, 0).clone();
            let b = tj.bc.z[0].clone() + tj.bc.zb[0].clone();
            (&(&a * &a) + &(&b * &a).scale_re(0.3)).sin()
        })
    }

    #[test]
    fn linearization_matches_finite_difference() {
        let e = HermitianBundleData::split(p1(), &[0, -1]).unwrap();
        let phi = test_phi();
        let k = 6.0;
        for p in points(&e, 3, 11) {
            let lin = linearize_scal(&e, &phi, &p, k).unwrap();
            let t = 1e-4;
            let fd = (scal_perturbed(&e, &phi, &p, k, t).unwrap() - scal_perturbed(&e, &phi, &p, k, -t).unwrap())
                / (2.0 * t);
            assert!((lin - fd).abs() < 1e-5 * (1.0 + lin.abs()), "{lin} {fd}");
        }
    }

    #[test]
    fn linearization_leading_term_is_vertical() {
        let e = HermitianBundleData::split(p1(), &[1, -1]).unwrap();
        let phi = test_phi();
        let eig = FnTotalField(|_: &HermitianBundleData, tj: &TotalJets| tj.lambda.get(0, 0) - tj.lambda.get(1, 1));
        let ks = [20.0, 40.0, 80.0, 160.0];
        for p in points(&e, 3, 2) {
            let lead = vertical_operator(&e, &phi, &p).unwrap();
            let d: Vec<f64> = ks
                .iter()
                .map(|&k| (linearize_scal(&e, &phi, &p, k).unwrap() - lead).abs())
                .collect();
            assert!(fit_slope(&ks, &d) <= -0.9, "{d:?}");
            assert!(vertical_operator(&e, &eig, &p).unwrap().abs() < 1e-10);
            let l: Vec<f64> = ks
                .iter()
                .map(|&k| linearize_scal(&e, &eig, &p, k).unwrap().abs())
                .collect();
            assert!(fit_slope(&ks, &l) <= -0.9, "{l:?}");
        }
        let c = FnTotalField(|_: &HermitianBundleData, tj: &TotalJets| Jet::real(&tj.chart.space, 2.0));
        assert!(linearize_scal(&e, &c, &points(&e, 1, 9)[0], 5.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn s1_ratio_is_four_pi_r() {
        let e = HermitianBundleData::split(p1(), &[0, -1]).unwrap();
        for p in points(&e, 3, 4) {
            let ratio = s1_ratio(&e, &p).unwrap();
            assert!((ratio - 8.0 * PI).abs() < 1e-9, "{ratio}");
        }
    }

    fn product_example() -> HermitianBundleData {
        let base = BaseManifold::with_band(BaseKind::ProductP1P1, 1);
        HermitianBundleData::new(base, vec![vec![-1, 0], vec![0, -1]]).unwrap()
    }

    #[test]
    fn s11_matches_finite_difference() {
        let e = product_example();
        let mut eta = SpectralField::zeros(BaseKind::ProductP1P1, 1);
        eta.coeffs[1] = 0.4;
        eta.coeffs[5] = -0.3;
        let mut q = SpectralField::zeros(BaseKind::ProductP1P1, 1);
        q.coeffs[2] = 0.5;
        q.coeffs[9] = 0.2;
        let dir = vec![
            BundlePerturbation::Conformal {
                summand: 0,
                amplitude: 1.0,
                field: q.clone(),
            },
            BundlePerturbation::Conformal {
                summand: 1,
                amplitude: -1.0,
                field: q,
            },
        ];
        for p in points(&e, 3, 8) {
            let a = s11(&e, &eta, &dir, &p).unwrap();
            let t = 1e-4;
            let fd = (s1_along(&e, &eta, &dir, &p, t).unwrap() - s1_along(&e, &eta, &dir, &p, -t).unwrap()) / (2.0 * t);
            assert!((a - fd).abs() < 1e-4 * (1.0 + a.abs()), "{a} {fd}");
        }
        let z = s11(&e, &ConstField(0.0), &[], &points(&e, 1, 1)[0]).unwrap();
        assert!(z.abs() < 1e-12);
    }

    #[test]
    fn s11_requires_hermitian_einstein() {
        let e = HermitianBundleData::split(p1(), &[0, -1]).unwrap();
        let r = s11(&e, &ConstField(0.0), &[], &points(&e, 1, 1)[0]);
        assert!(matches!(r, Err(Error::NotHermitianEinstein(_))));
    }

    #[test]
    fn trivial_bundle_needs_no_correction() {
        let e = HermitianBundleData::trivial(p1(), 2).unwrap();
        let cfg = ApproxConfig {
            fiber_lmax: 3,
            fiber_order: 3,
        };
        let sol = build_approx(&e, 2, &cfg).unwrap();
        assert_eq!(sol.b0, 2.0);
        assert!((sol.b1 - 2.0).abs() < 1e-9);
        let b2 = sol.b2.as_ref().unwrap();
        assert!(b2.coeffs.iter().all(|c| c.abs() < 1e-9));
        for m in &sol.fiber_modes {
            assert!(m.coeffs.iter().all(|c| c.abs() < 1e-9));
        }
        for p in points(&e, 3, 6) {
            assert!(sol.residual(&p, 30.0).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn flat_torus_needs_no_correction() {
        let base = BaseManifold::with_band(BaseKind::FlatTorus, 1);
        let e = HermitianBundleData::trivial(base, 2).unwrap();
        let cfg = ApproxConfig {
            fiber_lmax: 2,
            fiber_order: 3,
        };
        let sol = build_approx(&e, 2, &cfg).unwrap();
        assert_eq!(sol.b_constant(10.0), 2.0);
        for p in points(&e, 2, 6) {
            assert!(sol.residual(&p, 30.0).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn non_hermitian_einstein_bundle_is_rejected() {
        let e = HermitianBundleData::split(p1(), &[0, -1]).unwrap();
        assert!(matches!(
            build_approx(&e, 1, &ApproxConfig::default()),
            Err(Error::NotHermitianEinstein(_))
        ));
    }

    #[test]
    fn order_two_on_homogeneous_line_bundle_sum() {
        let e = HermitianBundleData::split(p1(), &[1, 1]).unwrap();
        let cfg = ApproxConfig {
            fiber_lmax: 4,
            fiber_order: 4,
        };
        let ks = [20.0, 40.0, 80.0, 160.0];
        let pts = points(&e, 4, 12);
        for p in 0..=2 {
            let sol = build_approx(&e, p, &cfg).unwrap();
            let fit = sol.residual_fit(&pts, &ks).unwrap();
            assert!(
                fit.slope <= -(p as f64 + 1.0) + 0.15 || fit.residuals.iter().all(|r| *r < 1e-11),
                "p = {p}: {fit:?}"
            );
        }
    }
}
