//! Geometry of the base `(M, ω)`: model metrics, curvature, Laplacian and
//! Lichnerowicz operators, spectral bases and quadrature, and the spaces of
//! Hamiltonians `N̄ ⊇ k̄ ⊇ t̄`.
//!
//! Supported bases are the round `ℙ¹` (optionally with a potential
//! perturbation `ω = ω_FS + ε i∂̄∂η`), the square flat torus with
//! `ω = i dz∧dz̄`, and `ℙ¹×ℙ¹` with the product metric. Every model can be
//! scaled by a constant `c`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::kahler::{Chart, LocalMetric};
use crate::pointalg::FormAtPoint;
use crate::sphere::{self, real_sh, sh_count, sphere_jets, SphereQuadrature};

/// Model base manifolds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    /// Round `ℙ¹` with `ω = c·i∂∂̄ log(1+|z|²)`.
    ProjectiveLine,
    /// `ℂ/(ℤ+iℤ)` with `ω = c·i dz∧dz̄`.
    FlatTorus,
    /// `ℙ¹×ℙ¹` with the sum of the factor metrics.
    ProductP1P1,
}

impl BaseKind {
    /// Complex dimension.
    pub fn dim(self) -> usize {
        match self {
            BaseKind::ProductP1P1 => 2,
            _ => 1,
        }
    }

    /// Number of `ℙ¹` factors.
    pub fn sphere_factors(self) -> usize {
        match self {
            BaseKind::ProjectiveLine => 1,
            BaseKind::FlatTorus => 0,
            BaseKind::ProductP1P1 => 2,
        }
    }
}

/// Potential perturbation `ω = ω_model + amplitude · i∂̄∂η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPerturbation {
    /// Amplitude `ε`.
    pub amplitude: f64,
    /// The potential `η`.
    pub eta: SpectralField,
}

/// A point of the base given in chart coordinates (one chart per factor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    /// Chart index per factor (0 or 1 on `ℙ¹`, 0 on the torus).
    pub charts: Vec<u8>,
    /// Coordinates per factor.
    pub z: Vec<C64>,
}

impl BasePoint {
    /// Point of `ℙ¹` or the torus from a single chart coordinate.
    pub fn single(chart: u8, z: C64) -> BasePoint {
        BasePoint {
            charts: vec![chart],
            z: vec![z],
        }
    }

    /// Point of a sphere-factor base from unit vectors.
    pub fn from_sphere(xs: &[[f64; 3]]) -> BasePoint {
        let (charts, z) = xs.iter().map(|x| sphere::sphere_to_chart(*x)).unzip();
        BasePoint { charts, z }
    }

    /// Unit vector of sphere factor `f`.
    pub fn sphere_point(&self, f: usize) -> [f64; 3] {
        sphere::chart_to_sphere(self.charts[f], self.z[f])
    }
}

/// Base coordinate jets inside a possibly larger chart.
#[derive(Clone, Debug)]
pub struct BaseCoords {
    /// Chart indices per factor.
    pub charts: Vec<u8>,
    /// Holomorphic coordinate jets.
    pub z: Vec<Jet>,
    /// Antiholomorphic coordinate jets.
    pub zb: Vec<Jet>,
}

/// A scalar field on the base, evaluated as a jet in base coordinates.
pub trait BaseField: Send + Sync {
    /// Jet of the field at the centre of `bc`.
    fn eval(&self, base: &BaseManifold, bc: &BaseCoords) -> Jet;
}

/// Constant field.
#[derive(Clone, Debug)]
pub struct ConstField(pub f64);

impl BaseField for ConstField {
    fn eval(&self, _base: &BaseManifold, bc: &BaseCoords) -> Jet {
        Jet::real(bc.z[0].space(), self.0)
    }
}

/// Field given by a closure.
pub struct FnField<F>(pub F);

impl<F> BaseField for FnField<F>
where
    F: Fn(&BaseManifold, &BaseCoords) -> Jet + Send + Sync,
{
    fn eval(&self, base: &BaseManifold, bc: &BaseCoords) -> Jet {
        (self.0)(base, bc)
    }
}

/// Band-limited field given by coefficients in the base's orthonormal
/// spectral basis of band `band`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    /// Band limit of the coefficient layout.
    pub band: usize,
    /// Coefficients.
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    /// The zero field in the given band.
    pub fn zeros(kind: BaseKind, band: usize) -> SpectralField {
        SpectralField {
            band,
            coeffs: vec![0.0; basis_count(kind, band)],
        }
    }

    /// Linear combination `a·self + b·other` (same band).
    pub fn combine(&self, a: f64, other: &SpectralField, b: f64) -> SpectralField {
        assert_eq!(self.band, other.band);
        SpectralField {
            band: self.band,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// Coefficient vector re-laid out for another band (truncating or padding).
    pub fn rebanded(&self, kind: BaseKind, band: usize) -> SpectralField {
        let mut out = SpectralField::zeros(kind, band);
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            if let Some(j) = reindex(kind, self.band, band, i) {
                out.coeffs[j] = *c;
            }
        }
        out
    }
}

impl BaseField for SpectralField {
    fn eval(&self, base: &BaseManifold, bc: &BaseCoords) -> Jet {
        let basis = base.basis_jets(bc, self.band);
        let mut acc = Jet::zero(bc.z[0].space());
        for (c, b) in self.coeffs.iter().zip(&basis) {
            if *c != 0.0 {
                acc = acc + b.scale_re(*c);
            }
        }
        acc
    }
}

/// Number of spectral basis functions of band `band`.
pub fn basis_count(kind: BaseKind, band: usize) -> usize {
    match kind {
        BaseKind::ProjectiveLine => sh_count(band),
        BaseKind::FlatTorus => (2 * band + 1) * (2 * band + 1),
        BaseKind::ProductP1P1 => sh_count(band) * sh_count(band),
    }
}

fn torus_modes(band: usize) -> Vec<(i64, i64, bool)> {
    let b = band as i64;
    let mut out = vec![(0, 0, true)];
    for j in 0..=b {
        for l in -b..=b {
            if j > 0 || l > 0 {
                out.push((j, l, true));
                out.push((j, l, false));
            }
        }
    }
    out
}

fn reindex(kind: BaseKind, from: usize, to: usize, i: usize) -> Option<usize> {
    match kind {
        BaseKind::ProjectiveLine => {
            let (l, _) = sphere::sh_degree_order(i);
            (l <= to).then_some(i)
        }
        BaseKind::FlatTorus => {
            let m = torus_modes(from)[i];
            if m.0.unsigned_abs() as usize > to || m.1.unsigned_abs() as usize > to {
                return None;
            }
            torus_modes(to).iter().position(|x| *x == m)
        }
        BaseKind::ProductP1P1 => {
            let n1 = sh_count(from);
            let (a, b) = (i / n1, i % n1);
            let (la, _) = sphere::sh_degree_order(a);
            let (lb, _) = sphere::sh_degree_order(b);
            (la <= to && lb <= to).then(|| a * sh_count(to) + b)
        }
    }
}

/// Quadrature nodes and cached spectral data of a base.
#[derive(Debug)]
pub struct Spectral {
    /// Nodes.
    pub nodes: Vec<BasePoint>,
    /// Weights of the model measure `ω_model^m/m!`.
    pub model_weights: Vec<f64>,
    /// Weights of the actual measure `ω^m/m!`.
    pub weights: Vec<f64>,
    /// Basis values at nodes (nodes × basis).
    pub basis: DMatrix<f64>,
    /// Laplacian eigenvalue of each basis function for the model metric.
    pub eigenvalues: Vec<f64>,
}

/// A model base with its reference Kähler form.
#[derive(Clone, Debug)]
pub struct BaseManifold {
    /// Model type.
    pub kind: BaseKind,
    /// Scale `c` of the model metric.
    pub scale: f64,
    /// Spectral band limit.
    pub band_limit: usize,
    /// Quadrature order.
    pub quadrature_order: usize,
    /// Optional potential perturbation of the model metric.
    pub perturbation: Option<MetricPerturbation>,
    cache: Arc<OnceLock<Spectral>>,
}

impl BaseManifold {
    /// Model base with default band and quadrature.
    pub fn new(kind: BaseKind) -> BaseManifold {
        let band = match kind {
            BaseKind::ProjectiveLine => 24,
            BaseKind::FlatTorus => 12,
            BaseKind::ProductP1P1 => 4,
        };
        BaseManifold::with_band(kind, band)
    }

    /// Model base with the given band and a quadrature integrating products
    /// of band-limited functions exactly.
    pub fn with_band(kind: BaseKind, band: usize) -> BaseManifold {
        let order = match kind {
            BaseKind::FlatTorus => 2 * band + 2,
            _ => band + 2,
        };
        BaseManifold {
            kind,
            scale: 1.0,
            band_limit: band,
            quadrature_order: order,
            perturbation: None,
            cache: Arc::new(OnceLock::new()),
        }
    }

    /// Same base with the metric multiplied by `c`.
    pub fn scaled(mut self, c: f64) -> BaseManifold {
        self.scale = c;
        self.cache = Arc::new(OnceLock::new());
        self
    }

    /// Same base with a potential perturbation.
    pub fn perturbed(mut self, p: MetricPerturbation) -> BaseManifold {
        self.perturbation = Some(p);
        self.cache = Arc::new(OnceLock::new());
        self
    }

    /// Overrides the quadrature order.
    pub fn with_quadrature_order(mut self, order: usize) -> BaseManifold {
        self.quadrature_order = order;
        self.cache = Arc::new(OnceLock::new());
        self
    }

    /// Complex dimension `m`.
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Whether the metric is the (scaled) model, hence cscK.
    pub fn is_model(&self) -> bool {
        self.perturbation.as_ref().is_none_or(|p| p.amplitude == 0.0)
    }

    /// Volume `∫ω^m/m!` of the model class.
    pub fn volume(&self) -> f64 {
        match self.kind {
            BaseKind::ProjectiveLine => 2.0 * PI * self.scale,
            BaseKind::FlatTorus => 2.0 * self.scale,
            BaseKind::ProductP1P1 => (2.0 * PI * self.scale).powi(2),
        }
    }

    /// Scalar curvature of the model metric.
    pub fn model_scal(&self) -> f64 {
        match self.kind {
            BaseKind::ProjectiveLine => 2.0 / self.scale,
            BaseKind::FlatTorus => 0.0,
            BaseKind::ProductP1P1 => 4.0 / self.scale,
        }
    }

    /// Base coordinate jets using the first `m` variables of `chart`.
    pub fn coords(&self, pt: &BasePoint, chart: &Chart) -> BaseCoords {
        let m = self.dim();
        assert!(chart.n >= m);
        BaseCoords {
            charts: pt.charts.clone(),
            z: chart.z[..m].to_vec(),
            zb: chart.zb[..m].to_vec(),
        }
    }

    /// Chart of dimension `m` centred at `pt`.
    pub fn chart(&self, pt: &BasePoint, order: usize) -> Chart {
        Chart::new(&pt.z, order)
    }

    /// Kähler potential jet of the model metric.
    pub fn model_potential(&self, bc: &BaseCoords) -> Jet {
        let one = C64::new(1.0, 0.0);
        let p = match self.kind {
            BaseKind::FlatTorus => &bc.z[0] * &bc.zb[0],
            _ => {
                let mut acc = (&bc.z[0] * &bc.zb[0]).add_const(one).ln();
                for f in 1..bc.z.len() {
                    acc = acc + (&bc.z[f] * &bc.zb[f]).add_const(one).ln();
                }
                acc
            }
        };
        p.scale_re(self.scale)
    }

    /// Kähler potential jet of the actual metric.
    pub fn potential(&self, bc: &BaseCoords) -> Jet {
        let base = self.model_potential(bc);
        match &self.perturbation {
            Some(p) if p.amplitude != 0.0 => {
                let eta = p.eta.eval(self, bc);
                base - eta.scale_re(p.amplitude)
            }
            _ => base,
        }
    }

    /// Local metric at `pt` with jets of the given order.
    pub fn metric(&self, pt: &BasePoint, order: usize) -> Result<LocalMetric> {
        let ch = self.chart(pt, order);
        let bc = self.coords(pt, &ch);
        LocalMetric::from_potential(&ch, &self.potential(&bc))
    }

    /// Reference Kähler form at `pt`.
    pub fn omega(&self, pt: &BasePoint) -> Result<FormAtPoint> {
        Ok(self.metric(pt, 2)?.omega_form())
    }

    /// Ricci form at `pt`.
    pub fn ricci(&self, pt: &BasePoint) -> Result<FormAtPoint> {
        Ok(self.metric(pt, 4)?.ricci_form())
    }

    /// Scalar curvature at `pt`.
    pub fn scal(&self, pt: &BasePoint) -> Result<f64> {
        Ok(self.metric(pt, 4)?.scal().value().re)
    }

    /// Laplacian `Δη` at `pt`.
    pub fn laplacian(&self, eta: &dyn BaseField, pt: &BasePoint) -> Result<f64> {
        let ch = self.chart(pt, 4);
        let bc = self.coords(pt, &ch);
        let g = LocalMetric::from_potential(&ch, &self.potential(&bc))?;
        Ok(g.laplacian(&eta.eval(self, &bc)).value().re)
    }

    /// Lichnerowicz operator `D*Dη = dS/dt + ½⟨∇S, ∇η⟩` along
    /// `ω + t i∂̄∂η`, at `pt`.
    pub fn lichnerowicz(&self, eta: &dyn BaseField, pt: &BasePoint) -> Result<f64> {
        let order = if self.is_model() { 4 } else { 5 };
        let ch = self.chart(pt, order);
        let bc = self.coords(pt, &ch);
        let g = LocalMetric::from_potential(&ch, &self.potential(&bc))?;
        let e = eta.eval(self, &bc);
        let mut v = g.scal_linearization(&e).value().re;
        if !self.is_model() {
            v += 0.5 * g.grad_pair(&g.scal(), &e.truncate(1)).value().re;
        }
        Ok(v)
    }

    /// Jets of all spectral basis functions of band `band` at the centre of `bc`.
    pub fn basis_jets(&self, bc: &BaseCoords, band: usize) -> Vec<Jet> {
        match self.kind {
            BaseKind::ProjectiveLine => {
                let (u, ub, x3) = sphere_jets(bc.charts[0], &bc.z[0], &bc.zb[0]);
                let one = Jet::real(u.space(), 1.0);
                let norm = (2.0 / self.scale).sqrt();
                real_sh(band, &u, &ub, &x3, &one)
                    .into_iter()
                    .map(|y| y.scale_re(norm))
                    .collect()
            }
            BaseKind::ProductP1P1 => {
                let f: Vec<Vec<Jet>> = (0..2)
                    .map(|k| {
                        let (u, ub, x3) = sphere_jets(bc.charts[k], &bc.z[k], &bc.zb[k]);
                        let one = Jet::real(u.space(), 1.0);
                        let norm = (2.0 / self.scale).sqrt();
                        real_sh(band, &u, &ub, &x3, &one)
                            .into_iter()
                            .map(|y| y.scale_re(norm))
                            .collect()
                    })
                    .collect();
                let mut out = Vec::with_capacity(f[0].len() * f[1].len());
                for a in &f[0] {
                    for b in &f[1] {
                        out.push(a * b);
                    }
                }
                out
            }
            BaseKind::FlatTorus => {
                let i = C64::new(0.0, 1.0);
                let x = (&bc.z[0] + &bc.zb[0]).scale_re(0.5);
                let y = (&bc.z[0] - &bc.zb[0]).scale(-i * 0.5);
                let s = self.scale;
                torus_modes(band)
                    .into_iter()
                    .map(|(j, l, cos)| {
                        if j == 0 && l == 0 {
                            return Jet::real(x.space(), 1.0 / (2.0 * s).sqrt());
                        }
                        let arg = (&x * (2.0 * PI * j as f64)) + (&y * (2.0 * PI * l as f64));
                        let v = if cos { arg.cos() } else { arg.sin() };
                        v.scale_re(1.0 / s.sqrt())
                    })
                    .collect()
            }
        }
    }

    /// Basis values at a point.
    pub fn basis_values(&self, pt: &BasePoint, band: usize) -> Vec<f64> {
        let ch = self.chart(pt, 0);
        let bc = self.coords(pt, &ch);
        self.basis_jets(&bc, band).iter().map(|j| j.value().re).collect()
    }

    /// Laplacian eigenvalues of the model metric for the basis of band `band`.
    pub fn eigenvalues(&self, band: usize) -> Vec<f64> {
        let s = self.scale;
        match self.kind {
            BaseKind::ProjectiveLine => (0..sh_count(band))
                .map(|i| {
                    let l = sphere::sh_degree_order(i).0 as f64;
                    l * (l + 1.0) / s
                })
                .collect(),
            BaseKind::ProductP1P1 => {
                let n = sh_count(band);
                (0..n * n)
                    .map(|i| {
                        let a = sphere::sh_degree_order(i / n).0 as f64;
                        let b = sphere::sh_degree_order(i % n).0 as f64;
                        (a * (a + 1.0) + b * (b + 1.0)) / s
                    })
                    .collect()
            }
            BaseKind::FlatTorus => torus_modes(band)
                .into_iter()
                .map(|(j, l, _)| PI * PI * ((j * j + l * l) as f64) / s)
                .collect(),
        }
    }

    /// Quadrature nodes and model weights (no caching).
    pub fn quadrature(&self) -> (Vec<BasePoint>, Vec<f64>) {
        let s = self.scale;
        match self.kind {
            BaseKind::ProjectiveLine => {
                let q = SphereQuadrature::new(self.quadrature_order);
                let nodes = q.nodes.iter().map(|x| BasePoint::from_sphere(&[*x])).collect();
                let w = q.weights.iter().map(|w| w * s / 2.0).collect();
                (nodes, w)
            }
            BaseKind::ProductP1P1 => {
                let q = SphereQuadrature::new(self.quadrature_order);
                let mut nodes = Vec::new();
                let mut ws = Vec::new();
                for (x, wx) in q.nodes.iter().zip(&q.weights) {
                    for (y, wy) in q.nodes.iter().zip(&q.weights) {
                        nodes.push(BasePoint::from_sphere(&[*x, *y]));
                        ws.push(wx * wy * s * s / 4.0);
                    }
                }
                (nodes, ws)
            }
            BaseKind::FlatTorus => {
                let n = self.quadrature_order;
                let mut nodes = Vec::new();
                for a in 0..n {
                    for b in 0..n {
                        let z = C64::new(a as f64 / n as f64, b as f64 / n as f64);
                        nodes.push(BasePoint::single(0, z));
                    }
                }
                let w = vec![2.0 * s / (n * n) as f64; n * n];
                (nodes, w)
            }
        }
    }

    /// Cached spectral data.
    pub fn spectral(&self) -> &Spectral {
        self.cache.get_or_init(|| {
            let (nodes, model_weights) = self.quadrature();
            let band = self.band_limit;
            let rows: Vec<Vec<f64>> = nodes
                .par_iter()
                .map(|p| self.basis_values(p, band))
                .collect();
            let nb = basis_count(self.kind, band);
            let basis = DMatrix::from_fn(nodes.len(), nb, |i, j| rows[i][j]);
            let weights = if self.is_model() {
                model_weights.clone()
            } else {
                nodes
                    .par_iter()
                    .zip(&model_weights)
                    .map(|(p, w)| w * self.density(p))
                    .collect()
            };
            Spectral {
                nodes,
                model_weights,
                weights,
                basis,
                eigenvalues: self.eigenvalues(band),
            }
        })
    }

    /// Ratio `ω^m / ω_model^m` at `pt`.
    pub fn density(&self, pt: &BasePoint) -> f64 {
        let ch = self.chart(pt, 2);
        let bc = self.coords(pt, &ch);
        let g = ch.ddbar(&self.potential(&bc)).value().determinant();
        let g0 = ch.ddbar(&self.model_potential(&bc)).value().determinant();
        (g / g0).re
    }

    /// Quadrature nodes.
    pub fn nodes(&self) -> &[BasePoint] {
        &self.spectral().nodes
    }

    /// Values of a field at the quadrature nodes.
    pub fn sample(&self, f: &dyn BaseField) -> Vec<f64> {
        self.spectral()
            .nodes
            .par_iter()
            .map(|p| {
                let ch = self.chart(p, 0);
                let bc = self.coords(p, &ch);
                f.eval(self, &bc).value().re
            })
            .collect()
    }

    /// Values of a pointwise function at the quadrature nodes.
    pub fn sample_fn<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&BasePoint) -> f64 + Sync + Send,
    {
        self.spectral().nodes.par_iter().map(f).collect()
    }

    /// `∫ f ω^m/m!` from node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.spectral().weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Actual volume `∫ω^m/m!` by quadrature.
    pub fn quadrature_volume(&self) -> f64 {
        self.spectral().weights.iter().sum()
    }

    /// `L²(ω)` inner product of node values.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.spectral().weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Spectral coefficients (model measure) of node values.
    pub fn analyze(&self, values: &[f64]) -> SpectralField {
        let sp = self.spectral();
        let wf = DVector::from_iterator(
            values.len(),
            values.iter().zip(&sp.model_weights).map(|(v, w)| v * w),
        );
        let c = sp.basis.transpose() * wf;
        SpectralField {
            band: self.band_limit,
            coeffs: c.iter().copied().collect(),
        }
    }

    /// Node values of a spectral field of the base's band.
    pub fn synthesize(&self, f: &SpectralField) -> Vec<f64> {
        let f = f.rebanded(self.kind, self.band_limit);
        let c = DVector::from_column_slice(&f.coeffs);
        (&self.spectral().basis * c).iter().copied().collect()
    }

    /// Solves `Δu = rhs` with `∫u ω^m = 0` for node values `rhs`.
    pub fn poisson_solve(&self, rhs: &[f64]) -> Result<SpectralField> {
        let vol = self.quadrature_volume();
        let mean = self.integrate(rhs) / vol;
        let scale = rhs.iter().map(|x| x.abs()).fold(1.0, f64::max);
        if mean.abs() > 1e-9 * scale {
            return Err(Error::NonzeroMean(mean));
        }
        if !self.is_model() && self.kind != BaseKind::ProjectiveLine {
            return Err(Error::Unsupported(
                "Poisson solve on perturbed higher-dimensional bases".into(),
            ));
        }
        let sp = self.spectral();
        let weighted: Vec<f64> = if self.is_model() {
            rhs.to_vec()
        } else {
            rhs.iter()
                .zip(sp.weights.iter().zip(&sp.model_weights))
                .map(|(r, (w, w0))| r * w / w0)
                .collect()
        };
        let mut c = self.analyze(&weighted);
        for (ci, lam) in c.coeffs.iter_mut().zip(&sp.eigenvalues) {
            *ci = if *lam > 1e-12 { *ci / lam } else { 0.0 };
        }
        if !self.is_model() {
            let u = self.synthesize(&c);
            let shift = self.integrate(&u) / vol;
            c.coeffs[0] -= shift / sp.basis[(0, 0)];
        }
        Ok(c)
    }

    /// Eigenvalues of `D*D` on the model spectral basis.
    pub fn lichnerowicz_eigenvalues(&self, band: usize) -> Vec<f64> {
        let ric = match self.kind {
            BaseKind::FlatTorus => 0.0,
            _ => 2.0 / self.scale,
        };
        self.eigenvalues(band)
            .into_iter()
            .map(|l| l * (l - ric))
            .collect()
    }

    /// Solves `D*Dη = rhs` on a model base, orthogonally to `ker D*D`.
    pub fn lichnerowicz_solve(&self, rhs: &[f64]) -> Result<SpectralField> {
        if !self.is_model() {
            return Err(Error::Unsupported("Lichnerowicz solve on a non-model metric".into()));
        }
        let mut c = self.analyze(rhs);
        let eig = self.lichnerowicz_eigenvalues(self.band_limit);
        let scale = c.coeffs.iter().map(|x| x.abs()).fold(1e-300, f64::max);
        for (ci, mu) in c.coeffs.iter_mut().zip(&eig) {
            if mu.abs() < 1e-9 {
                if ci.abs() > 1e-8 * scale.max(1.0) {
                    return Err(Error::KernelComponent(format!(
                        "Lichnerowicz right-hand side not orthogonal to ker D*D (component {ci:e})"
                    )));
                }
                *ci = 0.0;
            } else {
                *ci /= mu;
            }
        }
        Ok(c)
    }

    /// Random point; uniform for the model measure.
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> BasePoint {
        match self.kind {
            BaseKind::FlatTorus => BasePoint::single(0, C64::new(rng.gen(), rng.gen())),
            _ => {
                let xs: Vec<[f64; 3]> = (0..self.kind.sphere_factors())
                    .map(|_| {
                        let x3: f64 = rng.gen_range(-1.0..1.0);
                        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
                        let s = (1.0 - x3 * x3).sqrt();
                        [s * phi.cos(), s * phi.sin(), x3]
                    })
                    .collect();
                BasePoint::from_sphere(&xs)
            }
        }
    }

    /// Image of `pt` under rotations about the `x₃` axis (one angle per
    /// sphere factor) or translation along the real axis on the torus.
    pub fn rotate(&self, pt: &BasePoint, angles: &[f64]) -> BasePoint {
        match self.kind {
            BaseKind::FlatTorus => {
                let z = pt.z[0] + C64::new(angles[0] / (2.0 * PI), 0.0);
                BasePoint::single(0, C64::new(z.re.rem_euclid(1.0), z.im))
            }
            _ => {
                let xs: Vec<[f64; 3]> = (0..pt.z.len())
                    .map(|f| sphere::rotate_x3(pt.sphere_point(f), angles[f]))
                    .collect();
                BasePoint::from_sphere(&xs)
            }
        }
    }

    /// Image of `pt` under a rotation about the `x₁` axis of every factor.
    pub fn tilt(&self, pt: &BasePoint, angle: f64) -> BasePoint {
        match self.kind {
            BaseKind::FlatTorus => pt.clone(),
            _ => {
                let xs: Vec<[f64; 3]> = (0..pt.z.len())
                    .map(|f| sphere::rotate_x1(pt.sphere_point(f), angle))
                    .collect();
                BasePoint::from_sphere(&xs)
            }
        }
    }
}

/// Choice of the torus `T` whose Hamiltonians form `t̄`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorusChoice {
    /// `T` trivial: `t̄` is the constants.
    Trivial,
    /// Rotations about the `x₃` axis of every `ℙ¹` factor.
    Rotations,
}

/// Orthonormal basis of `N̄ = ker D*D` with the sub-spaces `t̄ ⊆ k̄`.
#[derive(Clone, Debug)]
pub struct HamiltonianSpace {
    /// Band of the stored fields.
    pub band: usize,
    /// Orthonormal basis of `N̄`; the first element is the constant.
    pub basis: Vec<SpectralField>,
    /// Orthonormal basis of `t̄` in `N̄` coordinates (dim N̄ × dim t̄).
    pub t_bar: DMatrix<f64>,
    /// Orthonormal basis of `k̄` in `N̄` coordinates (dim N̄ × dim k̄).
    pub k_bar: DMatrix<f64>,
    /// Galerkin eigenvalues of `D*D` on the discovery band (ascending).
    pub galerkin_spectrum: Vec<f64>,
}

impl HamiltonianSpace {
    /// Dimension of `N̄`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `L²`-projection coefficients of node values onto the basis.
    pub fn coefficients(&self, base: &BaseManifold, values: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|e| base.inner(values, &base.synthesize(e)))
            .collect()
    }

    /// Node values of `Σ cᵢeᵢ`.
    pub fn field_values(&self, base: &BaseManifold, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; base.nodes().len()];
        for (c, e) in coeffs.iter().zip(&self.basis) {
            for (o, v) in out.iter_mut().zip(base.synthesize(e)) {
                *o += c * v;
            }
        }
        out
    }

    /// Spectral field `Σ cᵢeᵢ`.
    pub fn field(&self, coeffs: &[f64]) -> SpectralField {
        let mut out = SpectralField::zeros(
            kind_of_len(self.basis[0].coeffs.len(), self.band),
            self.band,
        );
        for (c, e) in coeffs.iter().zip(&self.basis) {
            out = out.combine(1.0, e, *c);
        }
        out
    }
}

fn kind_of_len(len: usize, band: usize) -> BaseKind {
    if len == basis_count(BaseKind::ProjectiveLine, band) {
        BaseKind::ProjectiveLine
    } else if len == basis_count(BaseKind::ProductP1P1, band) {
        BaseKind::ProductP1P1
    } else {
        BaseKind::FlatTorus
    }
}

fn discovery_band(kind: BaseKind) -> usize {
    match kind {
        BaseKind::ProjectiveLine => 3,
        BaseKind::FlatTorus => 2,
        BaseKind::ProductP1P1 => 1,
    }
}

/// Orthonormal basis of the column space of `m` (rank by relative cutoff).
fn column_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let u = svd.u.expect("left singular vectors");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol * smax.max(1e-300))
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Orthonormal basis of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let mtm = m.transpose() * m;
    let eig = SymmetricEigen::new(mtm);
    let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt();
    let mut keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i].max(0.0).sqrt() <= tol * smax.max(1.0))
        .collect();
    keep.sort();
    DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])])
}

/// Canonical orthonormal basis of the span of `v` (columns), obtained by
/// projecting the standard basis vectors in order and applying Gram–Schmidt.
pub fn canonical_basis(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let k = v.ncols();
    let proj = v * v.transpose();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        if cols.len() == k {
            break;
        }
        let mut x = proj.column(i).into_owned();
        for c in &cols {
            let d = c.dot(&x);
            x -= c * d;
        }
        let nrm = x.norm();
        if nrm > 1e-6 {
            cols.push(x / nrm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Computes `N̄ = ker D*D` by a Galerkin discretization of the Lichnerowicz
/// operator, together with `t̄` (torus-averaged Hamiltonians) and `k̄` (the
/// Poisson commutant of `t̄` in `N̄`).
pub fn ham_basis(base: &BaseManifold, torus: TorusChoice) -> Result<HamiltonianSpace> {
    if !base.is_model() {
        return Err(Error::Unsupported("Hamiltonian space of a perturbed base".into()));
    }
    let band = discovery_band(base.kind);
    let work = BaseManifold::with_band(base.kind, band).scaled(base.scale);
    let sp = work.spectral();
    let nb = basis_count(base.kind, band);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = sp
        .nodes
        .par_iter()
        .map(|p| {
            let ch = work.chart(p, 4);
            let bc = work.coords(p, &ch);
            let g = LocalMetric::from_potential(&ch, &work.potential(&bc)).expect("model metric");
            let bj = work.basis_jets(&bc, band);
            let vals = bj.iter().map(|j| j.value().re).collect();
            let ops = bj.iter().map(|j| g.scal_linearization(j).value().re).collect();
            (vals, ops)
        })
        .collect();
    let mut k = DMatrix::<f64>::zeros(nb, nb);
    for ((vals, ops), w) in rows.iter().zip(&sp.weights) {
        for i in 0..nb {
            for j in 0..nb {
                k[(i, j)] += w * vals[i] * ops[j];
            }
        }
    }
    let ks = (&k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(ks);
    let mut spectrum: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    spectrum.sort_by(f64::total_cmp);
    let emax = spectrum.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let kernel_idx: Vec<usize> = (0..nb)
        .filter(|&i| eig.eigenvalues[i].abs() < 1e-8 * emax)
        .collect();
    let kernel = DMatrix::from_fn(nb, kernel_idx.len(), |i, j| eig.eigenvectors[(i, kernel_idx[j])]);
    let canon = canonical_basis(&kernel);
    let basis: Vec<SpectralField> = (0..canon.ncols())
        .map(|j| SpectralField {
            band,
            coeffs: canon.column(j).iter().copied().collect(),
        })
        .collect();
    let dim = basis.len();

    let t_bar = match torus {
        TorusChoice::Trivial => {
            let mut t = DMatrix::zeros(dim, 1);
            t[(0, 0)] = 1.0;
            t
        }
        TorusChoice::Rotations => {
            let navg = 2 * band + 1;
            let nf = base.kind.sphere_factors().max(1);
            let values: Vec<Vec<f64>> = basis.iter().map(|e| work.synthesize(e)).collect();
            let mut avg = DMatrix::<f64>::zeros(dim, dim);
            for (j, e) in basis.iter().enumerate() {
                let averaged = torus_average(&work, e, navg, nf);
                for (i, vi) in values.iter().enumerate() {
                    avg[(i, j)] = work.inner(vi, &averaged);
                }
            }
            canonical_basis(&column_space(&avg, 1e-8))
        }
    };

    let nontrivial: Vec<usize> = (0..t_bar.ncols())
        .filter(|&j| t_bar.column(j).iter().skip(1).any(|x| x.abs() > 1e-9))
        .collect();
    let k_bar = if nontrivial.is_empty() {
        DMatrix::identity(dim, dim)
    } else {
        let rows: Vec<Vec<f64>> = sp
            .nodes
            .par_iter()
            .flat_map(|p| {
                let ch3 = work.chart(p, 3);
                let bc3 = work.coords(p, &ch3);
                let g = LocalMetric::from_potential(&ch3, &work.potential(&bc3)).expect("model metric");
                let bj = work.basis_jets(&bc3, band);
                let fields: Vec<Jet> = basis
                    .iter()
                    .map(|e| {
                        let mut acc = Jet::zero(&ch3.space);
                        for (c, b) in e.coeffs.iter().zip(&bj) {
                            acc = acc + b.scale_re(*c);
                        }
                        acc
                    })
                    .collect();
                nontrivial
                    .iter()
                    .map(|&tj| {
                        let mut t = Jet::zero(&ch3.space);
                        for (c, f) in t_bar.column(tj).iter().zip(&fields) {
                            t = t + f.scale_re(*c);
                        }
                        fields
                            .iter()
                            .map(|f| g.poisson(f, &t).value().re)
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        canonical_basis(&null_space(&m, 1e-7))
    };

    Ok(HamiltonianSpace {
        band,
        basis,
        t_bar,
        k_bar,
        galerkin_spectrum: spectrum,
    })
}

fn torus_average(base: &BaseManifold, f: &SpectralField, navg: usize, nf: usize) -> Vec<f64> {
    let nodes = base.nodes();
    let total = navg.pow(nf as u32);
    nodes
        .par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for idx in 0..total {
                let mut rem = idx;
                let angles: Vec<f64> = (0..nf)
                    .map(|_| {
                        let a = rem % navg;
                        rem /= navg;
                        2.0 * PI * a as f64 / navg as f64
                    })
                    .collect();
                let q = base.rotate(p, &angles);
                let ch = base.chart(&q, 0);
                let bc = base.coords(&q, &ch);
                acc += f.eval(base, &bc).value().re;
            }
            acc / total as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volumes_match_models() {
        for kind in [BaseKind::ProjectiveLine, BaseKind::FlatTorus, BaseKind::ProductP1P1] {
            let b = BaseManifold::with_band(kind, 3);
            assert!((b.quadrature_volume() - b.volume()).abs() < 1e-9 * b.volume());
        }
    }

    #[test]
    fn scalar_curvatures() {
        let p1 = BaseManifold::new(BaseKind::ProjectiveLine);
        let pt = BasePoint::single(1, C64::new(0.3, -1.2));
        assert!((p1.scal(&pt).unwrap() - 2.0).abs() < 1e-12);
        let p1c = BaseManifold::new(BaseKind::ProjectiveLine).scaled(3.0);
        assert!((p1c.scal(&pt).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let t = BaseManifold::new(BaseKind::FlatTorus);
        assert!(t.scal(&BasePoint::single(0, C64::new(0.2, 0.7))).unwrap().abs() < 1e-14);
        assert!(t.ricci(&BasePoint::single(0, C64::new(0.2, 0.7))).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn poisson_eigenfunction() {
        let b = BaseManifold::with_band(BaseKind::ProjectiveLine, 6);
        let mut f = SpectralField::zeros(BaseKind::ProjectiveLine, 6);
        f.coeffs[sphere::sh_index(3, -2)] = 1.0;
        let u = b.poisson_solve(&b.synthesize(&f)).unwrap();
        let v = u.coeffs[sphere::sh_index(3, -2)];
        assert!((v - 1.0 / 12.0).abs() < 1e-12, "{v} {:?}", &u.coeffs[..16]);
    }

    #[test]
    fn poisson_rejects_mean() {
        let b = BaseManifold::with_band(BaseKind::ProjectiveLine, 4);
        let ones = vec![1.0; b.nodes().len()];
        assert!(matches!(b.poisson_solve(&ones), Err(Error::NonzeroMean(_))));
    }

    #[test]
    fn hamiltonian_dimensions() {
        let dims = [
            (BaseKind::ProjectiveLine, 4, 2),
            (BaseKind::FlatTorus, 1, 1),
            (BaseKind::ProductP1P1, 7, 3),
        ];
        for (kind, n, t) in dims {
            let b = BaseManifold::new(kind);
            let h = ham_basis(&b, TorusChoice::Rotations).unwrap();
            assert_eq!(h.dim(), n, "{kind:?}");
            assert_eq!(h.t_bar.ncols(), t, "{kind:?}");
            assert_eq!(h.k_bar.ncols(), t, "{kind:?}");
        }
        let b = BaseManifold::new(BaseKind::ProjectiveLine);
        let h = ham_basis(&b, TorusChoice::Trivial).unwrap();
        assert_eq!(h.t_bar.ncols(), 1);
        assert_eq!(h.k_bar.ncols(), 4);
    }
}
