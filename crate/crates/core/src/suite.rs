//! Verification runs behind the command-line front end. Each run returns a
//! [`RunReport`] with tolerance gates and CSV tables; nothing here touches
//! the filesystem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::approx::{build_approx, linearize_scal, s1_along, s11, scal_perturbed, vertical_operator, ApproxConfig};
use crate::basegeom::{ham_basis, BaseKind, BaseManifold, BasePoint, SpectralField, TorusChoice};
use crate::config::{standard_field, RunConfig};
use crate::error::{Error, Result};
use crate::expansion::{
    contraction_series_at, fiber_average_scal, fiber_average_series, fit_slope, laplacian_k_series, scal_series,
    series3, sigma_e, sigma_terms_at, verify_order, OrderFit, SATURATION_FLOOR, TOTAL_ORDER,
};
use crate::jet::{Jet, JetMatrix};
use crate::momentmap::{
    equivariance_check, gauge_deviation, moment_e, moment_full, project_n, stability_rank, ConnectionFamily, KChoice,
};
use crate::pointalg::{lambda, FormAtPoint};
use crate::report::{fmt_f64, fmt_opt, Gate, RunReport, Table};
use crate::ruledgeom::{BundlePerturbation, FnTotalField, HermitianBundleData, TotalJets, TotalPoint};
use crate::solver::{calabi_extremal, fixed_point_solve, he_solve, right_inverse_norm, FixedPointConfig, RuledSurface};
use crate::C64;

/// Commands that produce a report from a config.
pub const COMMANDS: [&str; 7] = [
    "verify-expansion",
    "fiber-average",
    "linearize-check",
    "approx-build",
    "extremal-solve",
    "he-solve",
    "moment-map",
];

/// Dispatches a command by name.
pub fn run_command(command: &str, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    match command {
        "verify-expansion" => verify_expansion(cfg),
        "fiber-average" => fiber_average(cfg),
        "linearize-check" => linearize_check(cfg),
        "approx-build" => approx_build(cfg),
        "extremal-solve" => extremal_solve(cfg),
        "he-solve" => he_solve_run(cfg),
        "moment-map" => moment_map(cfg),
        _ => Err(Error::InvalidInput(format!("unknown command `{command}`"))),
    }
}

/// `n` points of the total space drawn from a seeded stream.
pub fn sample_points(bundle: &HermitianBundleData, n: usize, seed: u64) -> Vec<TotalPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| bundle.random_point(&mut rng)).collect()
}

fn sample_base(base: &BaseManifold, n: usize, seed: u64) -> Vec<BasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| base.random_point(&mut rng)).collect()
}

fn finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        f64::MAX
    }
}

fn slope_cell(fit: &OrderFit) -> String {
    if fit.saturated {
        "saturated".into()
    } else {
        fmt_opt(fit.slope)
    }
}

fn order_fit<E, S>(exact: E, series: S, ks: &[f64]) -> Result<OrderFit>
where
    E: Fn(f64) -> Result<f64>,
    S: Fn(f64) -> f64,
{
    if ks.len() >= 4 {
        return verify_order(exact, series, ks);
    }
    let exact: Vec<f64> = ks.iter().map(|k| exact(*k)).collect::<Result<_>>()?;
    let series: Vec<f64> = ks.iter().map(|k| series(*k)).collect();
    let residuals: Vec<f64> = exact.iter().zip(&series).map(|(a, b)| (a - b).abs()).collect();
    Ok(OrderFit {
        ks: ks.to_vec(),
        saturated: residuals.iter().any(|r| *r < SATURATION_FLOOR),
        exact,
        series,
        residuals,
        slope: None,
    })
}

fn push_fit_rows(t: &mut Table, example: &str, id: usize, fit: &OrderFit) {
    for i in 0..fit.ks.len() {
        t.push(vec![
            example.into(),
            id.to_string(),
            fmt_f64(fit.ks[i]),
            fmt_f64(fit.exact[i]),
            fmt_f64(fit.series[i]),
            fmt_f64(fit.residuals[i]),
            slope_cell(fit),
        ]);
    }
}

const FIT_HEADER: [&str; 7] = ["example_id", "point_id", "k", "exact", "series", "residual", "slope"];

/// Gates on a set of order fits over the same `ks`: the slope of the sup
/// over fits of the residual must lie in `band` (or the sup saturates); the
/// per-fit slopes are reported in an informational gate.
fn band_gates(name: &str, fits: &[OrderFit], band: [f64; 2]) -> [Gate; 2] {
    let ks = &fits[0].ks;
    let sup: Vec<f64> = (0..ks.len())
        .map(|i| fits.iter().map(|f| f.residuals[i]).fold(0.0, f64::max))
        .collect();
    let saturated = sup.iter().any(|r| *r < SATURATION_FLOOR);
    let slope = if saturated { band[0] } else { fit_slope(ks, &sup) };
    let sup_gate = Gate::check(name, saturated || (band[0]..=band[1]).contains(&slope), finite(slope), band[1]).with_detail(
        if saturated {
            "sup residual saturated".to_string()
        } else {
            format!("slope of sup residual over {} fits, band [{}, {}]", fits.len(), band[0], band[1])
        },
    );
    let slopes: Vec<f64> = fits.iter().filter(|f| !f.saturated).filter_map(|f| f.slope).collect();
    let inside = fits.iter().filter(|f| f.in_band(band[0], band[1])).count();
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let detail = if slopes.is_empty() {
        format!("{} fits, all saturated", fits.len())
    } else {
        format!("{inside} of {} fits in band, slopes in [{lo:.4}, {hi:.4}]", fits.len())
    };
    let point_gate = Gate::check(
        &format!("{name}_pointwise"),
        inside == fits.len(),
        inside as f64,
        fits.len() as f64,
    )
    .informational()
    .with_detail(detail);
    [sup_gate, point_gate]
}

fn is_product(bundle: &HermitianBundleData) -> bool {
    bundle.perturbations.is_empty() && bundle.degrees.iter().all(|d| d.iter().all(|a| *a == 0))
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> nalgebra::DMatrix<C64> {
    let a = nalgebra::DMatrix::<C64>::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Scalar-curvature expansion sweep, product exactness, the contraction
/// and Laplacian expansions, and the pointwise vertical identities.
pub fn verify_expansion(cfg: &RunConfig) -> Result<RunReport> {
    let bundle = cfg.bundle_data()?;
    let ks = cfg.ks();
    let tol = &cfg.tolerances;
    let ex = cfg.example.as_str();
    let pts = sample_points(&bundle, cfg.points, cfg.seed);
    let mut rep = RunReport::new("verify-expansion", ex, cfg.seed);

    let fits: Vec<OrderFit> = pts
        .par_iter()
        .map(|p| {
            let rec = scal_series(&bundle, p)?;
            let tj = TotalJets::new(&bundle, p, TOTAL_ORDER)?;
            order_fit(|k| tj.scal_k(k), |k| rec.eval(k), ks)
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new("scal", &FIT_HEADER);
    for (i, f) in fits.iter().enumerate() {
        push_fit_rows(&mut t, ex, i, f);
    }
    rep.tables.push(t);
    if ks.len() >= 4 {
        rep.gates.extend(band_gates("scal_order", &fits, tol.slope_band));
    }

    if is_product(&bundle) {
        let r = bundle.rank() as f64;
        let mut worst: f64 = 0.0;
        let mut t = Table::new("product", &["example_id", "point_id", "k", "exact", "expected", "residual"]);
        for (i, p) in pts.iter().enumerate() {
            let tj = TotalJets::new(&bundle, p, TOTAL_ORDER)?;
            let s = bundle.base.scal(&p.base)?;
            for &k in ks {
                let exact = tj.scal_k(k)?;
                let expected = r * (r - 1.0) + s / k;
                worst = worst.max((exact - expected).abs());
                t.push(vec![ex.into(), i.to_string(), fmt_f64(k), fmt_f64(exact), fmt_f64(expected), fmt_f64((exact - expected).abs())]);
            }
        }
        rep.tables.push(t);
        rep.gates.push(Gate::at_most("product_exactness", worst, tol.exact));
    }

    if ks.len() >= 4 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let samples = 10;
        let mut cfits = Vec::new();
        let mut lfits = Vec::new();
        let mut ct = Table::new("contraction", &FIT_HEADER);
        let mut lt = Table::new("laplacian", &FIT_HEADER);
        for s in 0..samples {
            let p = &pts[s % pts.len()];
            let tj = TotalJets::new(&bundle, p, TOTAL_ORDER)?;
            let alpha = FormAtPoint::from_hermitian(&random_hermitian(&mut rng, tj.n()));
            let c = contraction_series_at(&tj, &alpha)?;
            let f = verify_order(|k| Ok(lambda(&alpha, &tj.omega_k(k))?.re), |k| series3(&c, k), ks)?;
            push_fit_rows(&mut ct, ex, s, &f);
            cfits.push(f);

            let (a, b, c) = (rng.gen_range(0.5..1.5), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (f1, _) = tj.f_jets()?;
            let arg = &f1.scale_re(a) + &tj.psi_g.scale_re(b);
            let func = &arg.sin() + &tj.trace_lambda(&tj.h).scale_re(c);
            let l = laplacian_k_series(&tj, &func)?;
            let f = verify_order(|k| tj.laplacian_k(&func, k), |k| series3(&l, k), ks)?;
            push_fit_rows(&mut lt, ex, s, &f);
            lfits.push(f);
        }
        rep.tables.push(ct);
        rep.tables.push(lt);
        rep.gates.extend(band_gates("contraction_order", &cfits, tol.slope_band));
        rep.gates.extend(band_gates("laplacian_order", &lfits, tol.slope_band));
    }

    let ids: Vec<[f64; 2]> = pts
        .par_iter()
        .map(|p| {
            let tj = TotalJets::new(&bundle, p, TOTAL_ORDER)?;
            Ok([vertical_f1_residual(&tj)?, tj.euler_residual()?])
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new("identities", &["example_id", "point_id", "vertical_f1", "euler"]);
    for (i, v) in ids.iter().enumerate() {
        t.push(vec![ex.into(), i.to_string(), fmt_f64(v[0]), fmt_f64(v[1])]);
    }
    rep.tables.push(t);
    let worst = |j: usize| ids.iter().map(|v| v[j]).fold(0.0, f64::max);
    rep.gates.push(Gate::at_most("vertical_f1_identity", worst(0), tol.identity));
    rep.gates.push(Gate::at_most("euler_identity", worst(1), tol.identity));
    Ok(rep)
}

/// `|Δ_V f₁ − (r f₁ − Λ_ω Tr(iF))|` at the centre of `tj`.
pub fn vertical_f1_residual(tj: &TotalJets) -> Result<f64> {
    let (f1, _) = tj.f_jets()?;
    let (_, ginv) = tj.base_metric()?;
    let ltrf = ginv
        .matmul(&JetMatrix::from_fn(tj.m, |a, b| tj.curv[a][b].trace()))
        .trace()
        .value()
        .re;
    Ok((tj.laplacian_v(&f1)? - (tj.r as f64 * f1.value().re - ltrf)).abs())
}

fn ensure_he(bundle: HermitianBundleData) -> Result<HermitianBundleData> {
    if bundle.he_residual()? <= 1e-6 {
        Ok(bundle)
    } else {
        he_solve(&bundle)
    }
}

/// Fiber averages of the series coefficients against `r(r−1)`, `S` and
/// `Σ_E`, and the base-point difference of the exact fiber average.
pub fn fiber_average(cfg: &RunConfig) -> Result<RunReport> {
    let bundle = ensure_he(cfg.bundle_data()?)?;
    if bundle.rank() != 2 {
        return Err(Error::Unsupported("fiber averages need rank 2".into()));
    }
    let tol = &cfg.tolerances;
    let ex = cfg.example.as_str();
    let r = bundle.rank() as f64;
    let xs = sample_base(&bundle.base, cfg.points.clamp(2, 6), cfg.seed);
    let order = 8;
    let rows: Vec<[f64; 5]> = xs
        .iter()
        .map(|x| {
            let a = fiber_average_series(&bundle, x, order)?;
            Ok([a[0], a[1], a[2], bundle.base.scal(x)?, sigma_terms_at(&bundle, x)?.total()])
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new("series", &["example_id", "point_id", "s0_mean", "s1_mean", "s2_mean", "base_scal", "sigma"]);
    for (i, v) in rows.iter().enumerate() {
        let mut row = vec![ex.to_string(), i.to_string()];
        row.extend(v.iter().map(|x| fmt_f64(*x)));
        t.push(row);
    }
    let mut rep = RunReport::new("fiber-average", ex, cfg.seed);
    rep.tables.push(t);
    let sup = |f: &dyn Fn(&[f64; 5]) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    rep.gates.push(Gate::at_most("fiber_mean_s0", sup(&|v| (v[0] - r * (r - 1.0)).abs()), tol.identity));
    rep.gates.push(Gate::at_most("fiber_mean_s1", sup(&|v| (v[1] - v[3]).abs()), tol.identity));
    let d0 = rows[0][2] - rows[0][4];
    rep.gates.push(Gate::at_most(
        "fiber_mean_s2_minus_sigma_variation",
        sup(&|v| (v[2] - v[4] - d0).abs()),
        tol.identity,
    ));
    rep.gates.push(
        Gate::at_most("fiber_mean_s2_minus_sigma", sup(&|v| (v[2] - v[4]).abs()), tol.identity)
            .informational()
            .with_detail(format!("offset {}", fmt_f64(d0))),
    );

    let ks = cfg.ks();
    if ks.len() >= 4 {
        let mut fits = Vec::new();
        let mut t = Table::new("difference", &FIT_HEADER);
        for (i, x) in xs.iter().enumerate().skip(1) {
            let (v, v0) = (rows[i], rows[0]);
            let f = verify_order(
                |k| Ok(fiber_average_scal(&bundle, x, k, order)? - fiber_average_scal(&bundle, &xs[0], k, order)?),
                |k| (v[1] - v0[1]) / k + (v[2] - v0[2]) / (k * k),
                ks,
            )?;
            push_fit_rows(&mut t, ex, i, &f);
            fits.push(f);
        }
        rep.tables.push(t);
        rep.gates.extend(band_gates("fiber_difference_order", &fits, tol.slope_band));
    }
    rep.data = json!({ "slope": bundle.slope(), "offset": d0 });
    Ok(rep)
}

fn probe_field() -> FnTotalField<impl Fn(&HermitianBundleData, &TotalJets) -> Jet + Send + Sync> {
    FnTotalField(|_: &HermitianBundleData, tj: &TotalJets| {
        let a = tj.lambda.get(0, 0).clone();
        let b = &tj.bc.z[0] + &tj.bc.zb[0];
        (&(&a * &a) + &(&b * &a).scale_re(0.3)).sin()
    })
}

/// Linearization against finite differences and its vertical leading term;
/// the `S₁` variation against centered differences when the bundle is
/// Hermitian–Einstein.
pub fn linearize_check(cfg: &RunConfig) -> Result<RunReport> {
    let bundle = cfg.bundle_data()?;
    let tol = &cfg.tolerances;
    let ex = cfg.example.as_str();
    let ks = cfg.ks();
    let pts = sample_points(&bundle, cfg.points.min(5), cfg.seed);
    let phi = probe_field();
    let mut rep = RunReport::new("linearize-check", ex, cfg.seed);

    let k0 = ks[0];
    let step = 1e-4;
    let mut t = Table::new("linearization", &["example_id", "point_id", "k", "linearized", "finite_difference", "relative_error"]);
    let mut worst: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let lin = linearize_scal(&bundle, &phi, p, k0)?;
        let fd = (scal_perturbed(&bundle, &phi, p, k0, step)? - scal_perturbed(&bundle, &phi, p, k0, -step)?) / (2.0 * step);
        let rel = (lin - fd).abs() / (1.0 + lin.abs());
        worst = worst.max(rel);
        t.push(vec![ex.into(), i.to_string(), fmt_f64(k0), fmt_f64(lin), fmt_f64(fd), fmt_f64(rel)]);
    }
    rep.tables.push(t);
    rep.gates.push(Gate::at_most("linearization_finite_difference", worst, tol.finite_difference));

    let mut t = Table::new("leading", &["example_id", "point_id", "k", "deviation", "slope"]);
    let mut devs = Vec::new();
    let mut inside = 0;
    for (i, p) in pts.iter().enumerate() {
        let lead = vertical_operator(&bundle, &phi, p)?;
        let d: Vec<f64> = ks.iter().map(|&k| Ok((linearize_scal(&bundle, &phi, p, k)? - lead).abs())).collect::<Result<_>>()?;
        let saturated = d.iter().all(|x| *x < SATURATION_FLOOR);
        let s = if saturated { None } else { Some(fit_slope(ks, &d)) };
        if s.is_none_or(|s| s <= tol.linear_slope) {
            inside += 1;
        }
        for (k, v) in ks.iter().zip(&d) {
            t.push(vec![ex.into(), i.to_string(), fmt_f64(*k), fmt_f64(*v), if saturated { "saturated".into() } else { fmt_opt(s) }]);
        }
        devs.push(d);
    }
    rep.tables.push(t);
    let sup: Vec<f64> = (0..ks.len()).map(|j| devs.iter().map(|d| d[j]).fold(0.0, f64::max)).collect();
    let saturated = sup.iter().all(|x| *x < SATURATION_FLOOR);
    let ws = if saturated { -f64::MAX } else { fit_slope(ks, &sup) };
    rep.gates.push(
        Gate::check("linearization_leading_term", ws <= tol.linear_slope, finite(ws), tol.linear_slope)
            .with_detail("slope of the sup deviation over the sample points"),
    );
    rep.gates.push(
        Gate::check("linearization_leading_term_pointwise", inside == pts.len(), inside as f64, pts.len() as f64)
            .informational(),
    );

    if bundle.he_residual()? <= 1e-6 {
        s11_sweep(&bundle, &pts, cfg, &mut rep)?;
    }
    Ok(rep)
}

fn s11_sweep(bundle: &HermitianBundleData, pts: &[TotalPoint], cfg: &RunConfig, rep: &mut RunReport) -> Result<()> {
    let kind = bundle.base.kind;
    let band = if kind == BaseKind::ProductP1P1 { 1 } else { 2 };
    let eta = standard_field(kind).rebanded(kind, band);
    let mut q = SpectralField::zeros(kind, band);
    for (i, c) in q.coeffs.iter_mut().enumerate().skip(1) {
        *c = 0.3 / i as f64 * if i % 2 == 0 { 1.0 } else { -1.0 };
    }
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
    let steps = [1e-2, 5e-3, 2.5e-3];
    let ex = cfg.example.as_str();
    let mut t = Table::new("s11", &["example_id", "point_id", "step", "analytic", "finite_difference", "error", "slope"]);
    let mut worst_rel: f64 = 0.0;
    let mut worst_slope = f64::INFINITY;
    for (i, p) in pts.iter().enumerate().take(3) {
        let a = s11(bundle, &eta, &dir, p)?;
        let errs: Vec<(f64, f64)> = steps
            .iter()
            .map(|&h| {
                let fd = (s1_along(bundle, &eta, &dir, p, h)? - s1_along(bundle, &eta, &dir, p, -h)?) / (2.0 * h);
                Ok((fd, (fd - a).abs()))
            })
            .collect::<Result<_>>()?;
        let e: Vec<f64> = errs.iter().map(|x| x.1).collect();
        let saturated = e.iter().any(|x| *x < 1e-10 * (1.0 + a.abs()));
        let s = (!saturated).then(|| fit_slope(&steps, &e));
        if let Some(s) = s {
            worst_slope = worst_slope.min(s);
        }
        worst_rel = worst_rel.max(e[2] / (1.0 + a.abs()));
        for (h, (fd, err)) in steps.iter().zip(&errs) {
            t.push(vec![
                ex.into(),
                i.to_string(),
                fmt_f64(*h),
                fmt_f64(a),
                fmt_f64(*fd),
                fmt_f64(*err),
                if saturated { "saturated".into() } else { fmt_opt(s) },
            ]);
        }
    }
    rep.tables.push(t);
    rep.gates.push(Gate::at_most("s11_finite_difference", worst_rel, cfg.tolerances.finite_difference));
    let ws = if worst_slope.is_finite() { worst_slope } else { f64::MAX };
    rep.gates.push(Gate::check("s11_step_order", ws >= 1.8, finite(ws), 1.8).with_detail("centered difference error slope in the step"));
    Ok(())
}

/// Order-`p` approximate solution: residual decay and the constants
/// `b₀, b₁, b₂`.
pub fn approx_build(cfg: &RunConfig) -> Result<RunReport> {
    let bundle = cfg.bundle_data()?;
    let tol = &cfg.tolerances;
    let ex = cfg.example.as_str();
    let acfg = ApproxConfig {
        fiber_lmax: 4,
        fiber_order: 4,
    };
    let sol = build_approx(&bundle, cfg.p, &acfg)?;
    let pts = sample_points(&bundle, cfg.points, cfg.seed);
    let fit = sol.residual_fit(&pts, cfg.ks())?;
    let mut rep = RunReport::new("approx-build", ex, cfg.seed);
    let mut t = Table::new("residual", &["k", "residual"]);
    for (k, r) in fit.ks.iter().zip(&fit.residuals) {
        t.push(vec![fmt_f64(*k), fmt_f64(*r)]);
    }
    rep.tables.push(t);
    let target = if cfg.p == 2 { tol.approx_slope } else { -(cfg.p as f64 + 1.0) + 0.15 };
    let saturated = fit.residuals.iter().all(|r| *r < 1e-11);
    rep.gates.push(
        Gate::check("residual_slope", saturated || fit.slope <= target, finite(fit.slope), target)
            .with_detail(if saturated { "saturated" } else { "" }),
    );

    let r = bundle.rank() as f64;
    rep.gates.push(Gate::check("b0", sol.b0 == r * (r - 1.0), sol.b0, r * (r - 1.0)));
    let base = &bundle.base;
    let s: Vec<f64> = base.nodes().iter().map(|p| base.scal(p)).collect::<Result<_>>()?;
    let smean = base.integrate(&s) / base.quadrature_volume();
    rep.gates.push(Gate::at_most("b1", (sol.b1 - smean).abs(), tol.b1));

    if cfg.p == 2 {
        let ham = ham_basis(base, TorusChoice::Trivial)?;
        let sig = sigma_e(&bundle, None)?;
        let proj = project_n(base, &ham, &sig.values()).coeffs;
        let dev = |sign: f64| {
            sol.b2_coords
                .iter()
                .zip(&proj)
                .map(|(b, p)| (b - sign * p).abs())
                .fold(0.0, f64::max)
        };
        let mut t = Table::new("b2", &["index", "b2", "projected_sigma"]);
        for (i, (b, p)) in sol.b2_coords.iter().zip(&proj).enumerate() {
            t.push(vec![i.to_string(), fmt_f64(*b), fmt_f64(*p)]);
        }
        rep.tables.push(t);
        rep.gates.push(
            Gate::at_most("b2_equals_minus_projected_sigma", dev(-1.0), tol.b2)
                .with_detail(format!("b2 against -pi_N(Sigma_E); b2[0] = {}", fmt_f64(sol.b2_coords.first().copied().unwrap_or(0.0)))),
        );
        rep.gates.push(
            Gate::at_most("b2_equals_plus_projected_sigma", dev(1.0), tol.b2)
                .informational()
                .with_detail("b2 against +pi_N(Sigma_E)"),
        );
        let vmax = pts.iter().take(5).map(|p| sol.vertical_residual(p)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
        rep.gates.push(Gate::at_most("vertical_solve", vmax, tol.identity).informational());
    }
    rep.data = json!({
        "order": sol.order,
        "b0": sol.b0,
        "b1": sol.b1,
        "b2_coords": sol.b2_coords,
        "b2": sol.b2,
        "eta": sol.eta,
        "phi_w": sol.phi_w,
        "fiber_mean": sol.fiber_mean,
        "w3": sol.w3,
        "fiber_lmax": sol.fiber_lmax,
        "fiber_modes": sol.fiber_modes,
        "diagnostics": sol.diagnostics,
        "residual_fit": fit,
    });
    Ok(rep)
}

fn ruled_surface(cfg: &RunConfig, k: f64) -> Result<RuledSurface> {
    let bundle = cfg.bundle_data()?;
    if bundle.base.kind != BaseKind::ProjectiveLine || bundle.rank() != 2 || !bundle.perturbations.is_empty() || !bundle.base.is_model() {
        return Err(Error::Unsupported("the reduced solve needs a split rank-2 bundle over the round line".into()));
    }
    Ok(RuledSurface {
        a: [bundle.degrees[0][0], bundle.degrees[1][0]],
        scale: bundle.base.scale,
        k,
    })
}

/// Reduced fixed-point solve against the Calabi profile, with the
/// right-inverse growth sweep.
pub fn extremal_solve(cfg: &RunConfig) -> Result<RunReport> {
    let sc = &cfg.solver;
    let tol = &cfg.tolerances;
    let surface = ruled_surface(cfg, sc.k)?;
    let fp = FixedPointConfig {
        nodes: sc.nodes,
        max_iter: sc.max_iter,
        tol: sc.tol,
        p: sc.p,
    };
    let st = fixed_point_solve(surface, &fp, None)?;
    let mut rep = RunReport::new("extremal-solve", &cfg.example, cfg.seed);
    let mut t = Table::new("residuals", &["iteration", "residual"]);
    for (i, r) in st.residuals.iter().enumerate() {
        t.push(vec![i.to_string(), fmt_f64(*r)]);
    }
    rep.tables.push(t);
    let last = *st.residuals.last().unwrap_or(&f64::MAX);
    rep.gates.push(Gate::at_most("extremal_residual", last, tol.solver).with_detail(format!("{} iterations", st.iterations)));

    let (cal, ab) = calabi_extremal(surface, 32)?;
    let (sig, th) = st.profile_samples();
    let mut t = Table::new("profile", &["sigma", "theta", "theta_calabi"]);
    let mut dev: f64 = 0.0;
    for (s, v) in sig.iter().zip(&th) {
        let c = cal.theta_at(*s);
        dev = dev.max((c - v).abs());
        t.push(vec![fmt_f64(*s), fmt_f64(*v), fmt_f64(c)]);
    }
    rep.tables.push(t);
    rep.gates.push(Gate::at_most("calabi_profile", dev, tol.calabi));
    let bdev = (st.b[0] - ab[0]).abs().max((st.b[1] - ab[1]).abs());
    rep.gates.push(Gate::at_most("calabi_extremal_field", bdev, tol.calabi));

    let mut norms = Vec::new();
    let mut t = Table::new("right_inverse", &["k", "norm"]);
    for &k in &sc.sweep {
        let n = right_inverse_norm(ruled_surface(cfg, k)?, sc.nodes)?;
        t.push(vec![fmt_f64(k), fmt_f64(n)]);
        norms.push(n);
    }
    rep.tables.push(t);
    let slope = fit_slope(&sc.sweep, &norms);
    rep.gates.push(Gate::at_most("right_inverse_growth", slope, tol.right_inverse_slope).informational());
    rep.data = json!({ "state": st, "calabi_b": ab });
    Ok(rep)
}

/// Hermitian–Einstein solve by conformal changes.
pub fn he_solve_run(cfg: &RunConfig) -> Result<RunReport> {
    let bundle = cfg.bundle_data()?;
    let before = bundle.he_residual()?;
    let he = he_solve(&bundle)?;
    let after = he.he_residual()?;
    let mut rep = RunReport::new("he-solve", &cfg.example, cfg.seed);
    let mut t = Table::new("residual", &["stage", "residual"]);
    t.push(vec!["initial".into(), fmt_f64(before)]);
    t.push(vec!["final".into(), fmt_f64(after)]);
    rep.tables.push(t);
    rep.gates.push(Gate::at_most("he_residual", after, cfg.tolerances.identity));
    rep.data = json!({ "perturbations": he.perturbations });
    Ok(rep)
}

/// Moment-map checks: projection, flat data, equivariance, gauge
/// invariance and the stability rank.
pub fn moment_map(cfg: &RunConfig) -> Result<RunReport> {
    let bundle = cfg.bundle_data()?;
    let tol = &cfg.tolerances;
    let base = &bundle.base;
    let kind = base.kind;
    let ham = ham_basis(base, TorusChoice::Trivial)?;
    let mut rep = RunReport::new("moment-map", &cfg.example, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let band = base.band_limit.min(3);
    let mut rand_field = || {
        let mut f = SpectralField::zeros(kind, band);
        for c in f.coeffs.iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        base.synthesize(&f)
    };
    let (f, g) = (rand_field(), rand_field());
    let p = |v: &[f64]| ham.field_values(base, &project_n(base, &ham, v).coeffs);
    let (pf, pg) = (p(&f), p(&g));
    let ppf = p(&pf);
    let idem = pf.iter().zip(&ppf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let adj = (base.inner(&pf, &g) - base.inner(&f, &pg)).abs();
    rep.gates.push(Gate::at_most("projection_idempotent", idem, tol.projection));
    rep.gates.push(Gate::at_most("projection_self_adjoint", adj, tol.projection));

    let torus = HermitianBundleData::trivial(BaseManifold::with_band(BaseKind::FlatTorus, 1), 2)?;
    let tham = ham_basis(&torus.base, TorusChoice::Trivial)?;
    let fam0 = ConnectionFamily::fixed(&torus);
    let flat = moment_full(&fam0.at(&[]), &tham)?;
    let fmax = flat.coeffs.iter().chain(&flat.raw).map(|c| c.abs()).fold(0.0, f64::max);
    rep.gates.push(Gate::check("flat_data_zero", fmax == 0.0, fmax, 0.0));

    let fam = if bundle.is_diagonal() {
        ConnectionFamily::extensions(&bundle)?
    } else {
        ConnectionFamily::fixed(&bundle)
    };
    let params = vec![C64::new(0.3, 0.2); fam.dim()];
    let conn = fam.at(&params);
    let mu_e = moment_e(&conn, &ham)?;
    let mu = moment_full(&conn, &ham)?;
    let mut t = Table::new("mu", &["index", "mu_e", "mu"]);
    for (i, (a, b)) in mu_e.coeffs.iter().zip(&mu.coeffs).enumerate() {
        t.push(vec![i.to_string(), fmt_f64(*a), fmt_f64(*b)]);
    }
    rep.tables.push(t);

    let nf = kind.sphere_factors();
    if nf > 0 {
        let angles: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let eq = equivariance_check(&conn, &angles)?;
        let g = Gate::at_most("equivariance", eq.deviation, tol.moment);
        rep.gates.push(if eq.proportional {
            g.with_detail(format!("lambda = {}", fmt_opt(eq.lambda)))
        } else {
            Gate { passed: true, ..g }
                .informational()
                .with_detail("c1 not proportional; deviation reported only")
        });
    }
    if fam.dim() > 0 {
        let dev = gauge_deviation(&conn, standard_field(kind))?;
        rep.gates.push(Gate::at_most("gauge_invariance", dev, tol.moment));
    }
    let st = stability_rank(&fam, &params, TorusChoice::Trivial, KChoice::Isometries)?;
    let mut t = Table::new("stability", &["index", "singular_value"]);
    for (i, s) in st.singular_values.iter().enumerate() {
        t.push(vec![i.to_string(), fmt_f64(*s)]);
    }
    rep.tables.push(t);
    rep.gates.push(
        Gate::check("stability_surjective", st.surjective, st.rank as f64, st.quotient_dim as f64)
            .informational()
            .with_detail(st.note.clone()),
    );
    rep.data = json!({ "mu_e": mu_e.coeffs, "mu": mu.coeffs, "stability": st, "directions": fam.directions });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(id: &str) -> RunConfig {
        let mut c = RunConfig::preset(id).unwrap();
        c.points = 3;
        c
    }

    #[test]
    fn unknown_command_is_rejected() {
        assert!(matches!(run_command("nope", &quick("product_p1")), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn product_expansion_is_saturated() {
        let rep = verify_expansion(&quick("product_p1")).unwrap();
        assert!(rep.passed(), "{:?}", rep.gates);
        assert!(rep.gate("product_exactness").unwrap().passed);
        assert!(rep.table("scal").unwrap().rows.iter().all(|r| r[6] == "saturated"));
    }

    #[test]
    fn he_solve_run_reaches_tolerance() {
        let rep = he_solve_run(&quick("he_perturbed_p1")).unwrap();
        assert!(rep.passed(), "{:?}", rep.gates);
    }

    #[test]
    fn sampled_points_are_reproducible() {
        let b = quick("hirzebruch1").bundle_data().unwrap();
        assert_eq!(sample_points(&b, 4, 9), sample_points(&b, 4, 9));
        assert_ne!(sample_points(&b, 4, 9), sample_points(&b, 4, 10));
    }

    #[test]
    fn vertical_identity_holds_on_deformed_product() {
        let cfg = quick("deformed_p1p1");
        let b = cfg.bundle_data().unwrap();
        for p in sample_points(&b, 3, 1) {
            let tj = TotalJets::new(&b, &p, TOTAL_ORDER).unwrap();
            assert!(vertical_f1_residual(&tj).unwrap() < 1e-10);
        }
    }
}
