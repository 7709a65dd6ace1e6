//! Large-`k` expansions of `Λ_{ω_k}`, `Δ_k` and `Scal(ω_k)` on the total
//! space, fiber averages, `Σ_E`, and a residual-order harness.
//!
//! Every series is stored as three coefficients `(c₀, c₁, c₂)` meaning
//! `c₀ + k⁻¹c₁ + k⁻²c₂`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basegeom::{BaseManifold, BasePoint, SpectralField};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::pointalg::{contract_j, lambda, FormAtPoint};
use crate::ruledgeom::{FiberQuadrature, HermitianBundleData, TotalJets, TotalPoint};

/// Residuals below this floor carry no slope information.
pub const SATURATION_FLOOR: f64 = 1e-13;

/// Default `k` sweep for order checks.
pub const DEFAULT_KS: [f64; 4] = [20.0, 40.0, 80.0, 160.0];

/// Jet order used for total-space curvature evaluations.
pub const TOTAL_ORDER: usize = 4;

/// `c₀ + k⁻¹c₁ + k⁻²c₂`.
pub fn series3(c: &[f64; 3], k: f64) -> f64 {
    c[0] + c[1] / k + c[2] / (k * k)
}

/// Result of a residual-order check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    /// The `k` values.
    pub ks: Vec<f64>,
    /// Exact values.
    pub exact: Vec<f64>,
    /// Series values.
    pub series: Vec<f64>,
    /// `|exact − series|`.
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log|residual|` against `log k`.
    pub slope: Option<f64>,
    /// True when some residual is below [`SATURATION_FLOOR`].
    pub saturated: bool,
}

impl OrderFit {
    /// True when saturated or when the slope is at most `max_slope`.
    pub fn passes(&self, max_slope: f64) -> bool {
        self.saturated || self.slope.is_some_and(|s| s <= max_slope)
    }

    /// True when saturated or the slope lies in `[lo, hi]`.
    pub fn in_band(&self, lo: f64, hi: f64) -> bool {
        self.saturated || self.slope.is_some_and(|s| (lo..=hi).contains(&s))
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fits the decay of `|exact(k) − series(k)|` over `ks`.
pub fn verify_order<E, S>(exact: E, series: S, ks: &[f64]) -> Result<OrderFit>
where
    E: Fn(f64) -> Result<f64>,
    S: Fn(f64) -> f64,
{
    if ks.len() < 4 || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "need at least 4 strictly increasing k values".into(),
        ));
    }
    let exact: Vec<f64> = ks.iter().map(|k| exact(*k)).collect::<Result<_>>()?;
    let series: Vec<f64> = ks.iter().map(|k| series(*k)).collect();
    let residuals: Vec<f64> = exact.iter().zip(&series).map(|(a, b)| (a - b).abs()).collect();
    let saturated = residuals.iter().any(|r| *r < SATURATION_FLOOR);
    let slope = (!saturated).then(|| fit_slope(ks, &residuals));
    Ok(OrderFit {
        ks: ks.to_vec(),
        exact,
        series,
        residuals,
        slope,
        saturated,
    })
}

/// `(g₀, g₁, g₂)` of a (1,1)-form `α` on the total space:
/// `g₀ = Λ̃α_V`, `g₁ = Λα_H + g₀f₁`, `g₂ = 2Λ²(α∧ω_g)_H + g₀f₂`.
pub fn contraction_g_terms(tj: &TotalJets, alpha: &FormAtPoint) -> Result<[f64; 3]> {
    let f = tj.f_coeffs()?;
    let f1 = f[1];
    let f2 = f.get(2).copied().unwrap_or(0.0);
    let g0 = tj.lambda_vertical(alpha)?;
    let g1 = tj.lambda_horizontal(alpha)? + g0 * f1;
    let g2 = 2.0 * tj.lambda2_horizontal(&alpha.wedge(&tj.omega_g())?)? + g0 * f2;
    Ok([g0, g1, g2])
}

/// Series coefficients of `Λ_{ω_k}α` from `(g₀, g₁, g₂)`:
/// `g₀ + k⁻¹(g₁−g₀f₁) + k⁻²(g₂−g₁f₁−g₀f₂+g₀f₁²)`.
pub fn contraction_series(g: &[f64; 3], f1: f64, f2: f64) -> [f64; 3] {
    [
        g[0],
        g[1] - g[0] * f1,
        g[2] - g[1] * f1 - g[0] * f2 + g[0] * f1 * f1,
    ]
}

/// Series coefficients of `Λ_{ω_k}α` at the centre of `tj`.
pub fn contraction_series_at(tj: &TotalJets, alpha: &FormAtPoint) -> Result<[f64; 3]> {
    let g = contraction_g_terms(tj, alpha)?;
    let f = tj.f_coeffs()?;
    Ok(contraction_series(&g, f[1], f.get(2).copied().unwrap_or(0.0)))
}

/// Series coefficients of `Δ_k f`:
/// `Δ_V f`, `Δ̃_H f`, `−f₁Δ̃_H f + 2Λ²(i∂̄∂f∧ω_g)_H`.
pub fn laplacian_k_series(tj: &TotalJets, f: &Jet) -> Result<[f64; 3]> {
    let f1 = tj.f_coeffs()?[1];
    let alpha = tj.chart.i_dbar_d(f);
    let lv = tj.laplacian_v(f)?;
    let lh = tj.laplacian_h_tilde(f)?;
    let l2 = 2.0 * tj.lambda2_horizontal(&alpha.wedge(&tj.omega_g())?)?;
    Ok([lv, lh, -f1 * lh + l2])
}

/// A named summand of a scalar-curvature coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    /// Summand name.
    pub name: String,
    /// Power of `k⁻¹`.
    pub order: usize,
    /// Value.
    pub value: f64,
}

/// Expansion of `Scal(ω_k)` at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    /// Point of the total space.
    pub point: TotalPoint,
    /// `(s₀, s₁, s₂)`.
    pub coefficients: [f64; 3],
    /// Named summands; each coefficient is the sum of its summands.
    pub terms: Vec<SeriesTerm>,
    /// Order check against the exact scalar curvature, when run.
    pub fit: Option<OrderFit>,
}

impl ExpansionRecord {
    /// Truncated series at `k`.
    pub fn eval(&self, k: f64) -> f64 {
        series3(&self.coefficients, k)
    }

    /// Value of a named summand.
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    /// Runs the order check over `ks` against the exact scalar curvature.
    pub fn verify(&mut self, bundle: &HermitianBundleData, ks: &[f64]) -> Result<&OrderFit> {
        let tj = TotalJets::new(bundle, &self.point, TOTAL_ORDER)?;
        let fit = verify_order(|k| tj.scal_k(k), |k| self.eval(k), ks)?;
        Ok(self.fit.insert(fit))
    }
}

/// Ingredients shared by the scalar-curvature series.
struct ScalData {
    tj: TotalJets,
    f1: Jet,
    f2: Jet,
    s: f64,
    ric: FormAtPoint,
    trf: FormAtPoint,
    ltrf: f64,
}

impl ScalData {
    fn new(bundle: &HermitianBundleData, pt: &TotalPoint) -> Result<ScalData> {
        let tj = TotalJets::new(bundle, pt, TOTAL_ORDER)?;
        let (f1, f2) = tj.f_jets()?;
        let base = &bundle.base;
        let s = base.scal(&pt.base)?;
        let ric = base.ricci(&pt.base)?;
        let trf = tj.trace_curvature();
        let ltrf = lambda(&trf, &tj.base_omega())?.re;
        Ok(ScalData {
            tj,
            f1,
            f2,
            s,
            ric,
            trf,
            ltrf,
        })
    }
}

/// Three-term expansion of `Scal(ω_k)` at `pt` with every summand stored.
pub fn scal_series(bundle: &HermitianBundleData, pt: &TotalPoint) -> Result<ExpansionRecord> {
    let d = ScalData::new(bundle, pt)?;
    let tj = &d.tj;
    let (m, r) = (tj.m, tj.r as f64);
    let n = tj.n();
    let f1 = d.f1.value().re;
    let f2 = if m >= 2 { d.f2.value().re } else { 0.0 };
    let b = d.s - d.ltrf;
    let ric_minus = d.ric.sub(&d.trf).embed_leading(n);
    let half_sq = if m >= 2 {
        &d.f2 - (&d.f1 * &d.f1).scale_re(0.5)
    } else {
        (&d.f1 * &d.f1).scale_re(-0.5)
    };
    let mut terms = vec![SeriesTerm {
        name: "fiber".into(),
        order: 0,
        value: r * (r - 1.0),
    }];
    let mut push = |name: &str, order: usize, value: f64| {
        terms.push(SeriesTerm {
            name: name.into(),
            order,
            value,
        })
    };
    push("base_scal", 1, d.s);
    push("traceless_curvature", 1, 2.0 * r * f1 - 2.0 * d.ltrf);
    push(
        "lambda2_ric_minus_trace_curvature",
        2,
        2.0 * tj.lambda2_horizontal(&ric_minus.wedge(&tj.omega_g())?)?,
    );
    push("f1_times_b", 2, -f1 * b);
    push("vertical_laplacian_log", 2, tj.laplacian_v(&half_sq)?);
    push("horizontal_laplacian_f1", 2, tj.laplacian_h_tilde(&d.f1)?);
    push("quadratic_f", 2, -r * f1 * f1 + 2.0 * r * f2);
    let mut coefficients = [0.0; 3];
    for t in &terms {
        coefficients[t.order] += t.value;
    }
    Ok(ExpansionRecord {
        point: pt.clone(),
        coefficients,
        terms,
        fit: None,
    })
}

/// The same coefficients assembled from the contraction and Laplacian
/// series applied to `Ric(ω_k) = rω_g − π*Tr(iF) + π*Ric(ω) + i∂̄∂ log Σk^{−j}f_j`.
pub fn scal_series_via_contraction(bundle: &HermitianBundleData, pt: &TotalPoint) -> Result<[f64; 3]> {
    let d = ScalData::new(bundle, pt)?;
    let tj = &d.tj;
    let n = tj.n();
    let a = tj
        .omega_g()
        .scale_re(tj.r as f64)
        .add(&d.ric.sub(&d.trf).embed_leading(n));
    let c = contraction_series_at(tj, &a)?;
    let l1 = laplacian_k_series(tj, &d.f1)?;
    let g = if tj.m >= 2 {
        &d.f2 - (&d.f1 * &d.f1).scale_re(0.5)
    } else {
        (&d.f1 * &d.f1).scale_re(-0.5)
    };
    let l2 = laplacian_k_series(tj, &g)?;
    Ok([c[0], c[1] + l1[0], c[2] + l1[1] + l2[0]])
}

/// Fiber mean `(2π)^{1−r}∫ Scal(ω_k) ω_g^{r−1}` over `x` (rank 2), after
/// checking `Λ_ω iF = μI` at `x` to `1e−6`.
pub fn fiber_average_scal(
    bundle: &HermitianBundleData,
    x: &BasePoint,
    k: f64,
    fiber_order: usize,
) -> Result<f64> {
    check_he_at(bundle, x)?;
    let q = FiberQuadrature::new(bundle, x, fiber_order)?;
    let vals: Vec<f64> = q
        .points(x)
        .par_iter()
        .map(|p| TotalJets::new(bundle, p, TOTAL_ORDER)?.scal_k(k))
        .collect::<Result<_>>()?;
    Ok(q.integrate(&vals) / crate::ruledgeom::fiber_volume(2))
}

/// Fiber means of the series coefficients over `x` (rank 2).
pub fn fiber_average_series(
    bundle: &HermitianBundleData,
    x: &BasePoint,
    fiber_order: usize,
) -> Result<[f64; 3]> {
    let q = FiberQuadrature::new(bundle, x, fiber_order)?;
    let recs: Vec<[f64; 3]> = q
        .points(x)
        .par_iter()
        .map(|p| Ok(scal_series(bundle, p)?.coefficients))
        .collect::<Result<_>>()?;
    let vol = crate::ruledgeom::fiber_volume(2);
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let v: Vec<f64> = recs.iter().map(|c| c[j]).collect();
        *o = q.integrate(&v) / vol;
    }
    Ok(out)
}

/// Fails with `NotHermitianEinstein` unless `‖Λ_ω iF − μI‖ ≤ 1e−6` at `x`.
pub fn check_he_at(bundle: &HermitianBundleData, x: &BasePoint) -> Result<()> {
    let r = bundle.rank();
    let k = bundle.mean_curvature_at(x)?
        - nalgebra::DMatrix::identity(r, r) * crate::C64::new(bundle.slope(), 0.0);
    let res = k.norm();
    if res > 1e-6 {
        return Err(Error::NotHermitianEinstein(res));
    }
    Ok(())
}

/// Pointwise summands of `Σ_E` without the `tr(u_X)/r` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTerms {
    /// `(2/r) Λ²(Ric(ω)∧tr iF)`.
    pub ric_trace: f64,
    /// `−2/(r(r+1)) Λ²(tr iF∧tr iF)`.
    pub trace_square: f64,
    /// `(2/(r+1)) Λ² tr(iF∧iF)`.
    pub curvature_square: f64,
    /// `−μS(ω)`.
    pub slope_scal: f64,
}

impl SigmaTerms {
    /// Sum of the summands.
    pub fn total(&self) -> f64 {
        self.ric_trace + self.trace_square + self.curvature_square + self.slope_scal
    }
}

/// Summands of `Σ_E` at a base point.
pub fn sigma_terms_at(bundle: &HermitianBundleData, x: &BasePoint) -> Result<SigmaTerms> {
    let base = &bundle.base;
    let r = bundle.rank() as f64;
    let s = base.scal(x)?;
    let slope_scal = -bundle.slope() * s;
    if base.dim() < 2 {
        return Ok(SigmaTerms {
            ric_trace: 0.0,
            trace_square: 0.0,
            curvature_square: 0.0,
            slope_scal,
        });
    }
    let om = base.omega(x)?;
    let ric = base.ricci(x)?;
    let f = bundle.curvature_at(x);
    let trf = f.trace();
    let l2 = |a: &FormAtPoint| -> Result<f64> { Ok(contract_j(a, &om, 2)?.re) };
    Ok(SigmaTerms {
        ric_trace: 2.0 / r * l2(&ric.wedge(&trf)?)?,
        trace_square: -2.0 / (r * (r + 1.0)) * l2(&trf.wedge(&trf)?)?,
        curvature_square: 2.0 / (r + 1.0) * l2(&f.wedge(&f)?.trace())?,
        slope_scal,
    })
}

/// `Σ_E` sampled on the base quadrature nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaE {
    /// Values without the `tr(u_X)/r` term.
    pub without_u: Vec<f64>,
    /// Values of `tr(u_X)/r`, zero when not supplied.
    pub u_term: Vec<f64>,
    /// Spectral coefficients of the full `Σ_E`.
    pub field: SpectralField,
}

impl SigmaE {
    /// Full values on the nodes.
    pub fn values(&self) -> Vec<f64> {
        self.without_u.iter().zip(&self.u_term).map(|(a, b)| a + b).collect()
    }
}

/// Evaluates `Σ_E`, optionally adding `tr(u_X)` sampled on the nodes.
pub fn sigma_e(bundle: &HermitianBundleData, tr_u: Option<&[f64]>) -> Result<SigmaE> {
    let base: &BaseManifold = &bundle.base;
    let without_u: Vec<f64> = base
        .nodes()
        .par_iter()
        .map(|x| Ok(sigma_terms_at(bundle, x)?.total()))
        .collect::<Result<_>>()?;
    let r = bundle.rank() as f64;
    let u_term = match tr_u {
        Some(u) => u.iter().map(|v| v / r).collect(),
        None => vec![0.0; without_u.len()],
    };
    let full: Vec<f64> = without_u.iter().zip(&u_term).map(|(a, b)| a + b).collect();
    Ok(SigmaE {
        field: base.analyze(&full),
        without_u,
        u_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basegeom::{BaseKind, MetricPerturbation};
    use crate::ruledgeom::BundlePerturbation;
    use crate::C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hirzebruch() -> HermitianBundleData {
        HermitianBundleData::split(BaseManifold::new(BaseKind::ProjectiveLine), &[-1, 0]).unwrap()
    }

    fn deformed_product() -> HermitianBundleData {
        let base = BaseManifold::new(BaseKind::ProductP1P1);
        let mut q = SpectralField::zeros(base.kind, 1);
        q.coeffs[1] = 0.4;
        q.coeffs[6] = -0.3;
        q.coeffs[9] = 0.2;
        HermitianBundleData::new(base, vec![vec![1, 0], vec![1, 0]])
            .unwrap()
            .with_perturbation(BundlePerturbation::OffDiagonal {
                i: 0,
                j: 1,
                amplitude: C64::new(0.2, -0.1),
                field: q.clone(),
            })
            .unwrap()
            .with_perturbation(BundlePerturbation::Conformal {
                summand: 1,
                amplitude: 0.3,
                field: q,
            })
            .unwrap()
    }

    #[test]
    fn synthetic_slopes() {
        let ks = DEFAULT_KS;
        let fit = verify_order(|k| Ok(1.0 + k.powi(-3)), |_| 1.0, &ks).unwrap();
        assert!((fit.slope.unwrap() + 3.0).abs() < 0.01);
        let fit = verify_order(|_| Ok(2.0), |_| 2.0, &ks).unwrap();
        assert!(fit.saturated);
        assert!(verify_order(|_| Ok(0.0), |_| 0.0, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn contraction_series_matches_exact() {
        for bundle in [hirzebruch(), deformed_product()] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let p = bundle.random_point(&mut rng);
            let tj = TotalJets::new(&bundle, &p, 2).unwrap();
            let n = tj.n();
            let mut a = nalgebra::DMatrix::<C64>::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = C64::new(0.3 * (i + 2 * j) as f64 - 0.5, 0.2 * (i as f64 - j as f64));
                }
            }
            let a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
            let alpha = FormAtPoint::from_hermitian(&a);
            let c = contraction_series_at(&tj, &alpha).unwrap();
            let fit = verify_order(
                |k| Ok(lambda(&alpha, &tj.omega_k(k))?.re),
                |k| series3(&c, k),
                &DEFAULT_KS,
            )
            .unwrap();
            assert!(fit.in_band(-3.15, -2.85), "{fit:?}");
        }
    }

    #[test]
    fn pullback_of_omega_contracts_to_inverse_trace() {
        let bundle = deformed_product();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = bundle.random_point(&mut rng);
        let tj = TotalJets::new(&bundle, &p, 2).unwrap();
        let c = contraction_series_at(&tj, &tj.pi_omega()).unwrap();
        let f1 = tj.f_coeffs().unwrap()[1];
        assert!(c[0].abs() < 1e-12);
        assert!((c[1] - 2.0).abs() < 1e-12);
        assert!((c[2] + f1).abs() < 1e-12);
    }

    #[test]
    fn laplacian_series_matches_exact_and_contraction() {
        let bundle = deformed_product();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = bundle.random_point(&mut rng);
        let tj = TotalJets::new(&bundle, &p, 4).unwrap();
        let (f1, _) = tj.f_jets().unwrap();
        let f = (&f1 * &tj.psi_g).sin() + tj.trace_lambda(&tj.h);
        let l = laplacian_k_series(&tj, &f).unwrap();
        let c = contraction_series_at(&tj, &tj.chart.i_dbar_d(&f)).unwrap();
        for j in 0..3 {
            assert!((l[j] - c[j]).abs() < 1e-10, "{l:?} vs {c:?}");
        }
        let fit = verify_order(|k| tj.laplacian_k(&f, k), |k| series3(&l, k), &DEFAULT_KS).unwrap();
        assert!(fit.in_band(-3.15, -2.85), "{fit:?}");
    }

    #[test]
    fn scal_series_terms_and_order() {
        for bundle in [hirzebruch(), deformed_product()] {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let p = bundle.random_point(&mut rng);
            let mut rec = scal_series(&bundle, &p).unwrap();
            let alt = scal_series_via_contraction(&bundle, &p).unwrap();
            for j in 0..3 {
                assert!((rec.coefficients[j] - alt[j]).abs() < 1e-10, "{:?} vs {alt:?}", rec.coefficients);
            }
            let fit = rec.verify(&bundle, &DEFAULT_KS).unwrap();
            assert!(fit.in_band(-3.15, -2.85), "{fit:?}");
        }
    }

    #[test]
    fn trivial_bundle_series() {
        let bundle = HermitianBundleData::trivial(BaseManifold::new(BaseKind::ProjectiveLine), 2).unwrap();
        let p = TotalPoint {
            base: BasePoint::single(0, C64::new(0.3, 0.2)),
            fiber_chart: 0,
            xi: vec![C64::new(0.5, -0.4)],
        };
        let rec = scal_series(&bundle, &p).unwrap();
        assert!((rec.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((rec.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(rec.coefficients[2].abs() < 1e-12);
    }

    #[test]
    fn projectively_flat_fiber_average_is_homogeneous() {
        let bundle = HermitianBundleData::split(BaseManifold::new(BaseKind::ProjectiveLine), &[1, 1]).unwrap();
        let xs = [BasePoint::single(0, C64::new(0.0, 0.0)), BasePoint::single(0, C64::new(0.7, -0.4))];
        let a = fiber_average_scal(&bundle, &xs[0], 30.0, 8).unwrap();
        let b = fiber_average_scal(&bundle, &xs[1], 30.0, 8).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn fiber_average_requires_he() {
        let x = BasePoint::single(0, C64::new(0.1, 0.0));
        assert!(matches!(
            fiber_average_scal(&hirzebruch(), &x, 30.0, 6),
            Err(Error::NotHermitianEinstein(_))
        ));
    }

    #[test]
    fn he_traceless_term_has_zero_fiber_mean() {
        let base = BaseManifold::new(BaseKind::ProjectiveLine).perturbed(MetricPerturbation {
            amplitude: 0.1,
            eta: {
                let mut e = SpectralField::zeros(BaseKind::ProjectiveLine, 2);
                e.coeffs[6] = 1.0;
                e
            },
        });
        let bundle = HermitianBundleData::split(base.clone(), &[1, 1]).unwrap();
        let x = BasePoint::single(0, C64::new(0.4, 0.3));
        let avg = fiber_average_series(&bundle, &x, 8).unwrap();
        let s = base.scal(&x).unwrap();
        assert!((avg[1] - s).abs() < 1e-8, "{avg:?} vs {s}");
    }

    #[test]
    fn sigma_vanishes_for_flat_data() {
        let bundle = HermitianBundleData::trivial(BaseManifold::new(BaseKind::FlatTorus), 2).unwrap();
        let s = sigma_e(&bundle, None).unwrap();
        assert!(s.values().iter().all(|v| v.abs() < 1e-12));
    }
}
