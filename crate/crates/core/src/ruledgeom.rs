//! Geometry of the projectivization `X = ℙ(E*) → M` of a hermitian bundle.
//!
//! Bundle metrics are hermitian matrices `H` with `h(w, v) = v^†Hw` in a
//! holomorphic frame. A point of `X` is the line of a row functional
//! `f ∈ E*`, written in fiber chart `c` as `f_c = 1` and the remaining
//! entries `ξ`. The fiberwise Fubini–Study form is `ω_g = i∂∂̄ log(fH⁻¹f^†)`
//! and `λ = H⁻¹f^†f / (fH⁻¹f^†)` is the `h`-orthogonal projector onto the
//! line dual to `f`. Curvature is `iF = i C_{ab} dz_a∧dz̄_b` with
//! `C_{ab} = −∂_{b̄}(H⁻¹∂_a H)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basegeom::{BaseCoords, BaseField, BaseKind, BaseManifold, BasePoint, SpectralField};
use crate::error::{Error, Result};
use crate::jet::{Jet, JetMatrix};
use crate::kahler::{Chart, LocalMetric};
use crate::pointalg::{contract_j, lambda, top_form_quotient, EndValuedFormAtPoint, FormAtPoint};
use crate::sphere::SphereQuadrature;

/// Deformation of a split model metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BundlePerturbation {
    /// `h_i ← h_i · exp(amplitude · q)`.
    Conformal {
        /// Summand index.
        summand: usize,
        /// Amplitude.
        amplitude: f64,
        /// Field `q`.
        field: SpectralField,
    },
    /// `H_ij += amplitude · q · h_i` and the conjugate entry; requires equal
    /// degrees for summands `i` and `j`.
    OffDiagonal {
        /// Row summand.
        i: usize,
        /// Column summand.
        j: usize,
        /// Complex amplitude.
        amplitude: C64,
        /// Field `q`.
        field: SpectralField,
    },
}

/// A hermitian metric on a split bundle `⊕ O(a_i)` over the base, possibly
/// deformed.
#[derive(Clone, Debug)]
pub struct HermitianBundleData {
    /// Base manifold.
    pub base: BaseManifold,
    /// Degrees per summand and per sphere factor.
    pub degrees: Vec<Vec<i32>>,
    /// Deformations applied on top of the model metric.
    pub perturbations: Vec<BundlePerturbation>,
}

impl HermitianBundleData {
    /// Model metric with `h_i = Π_f (1+|z_f|²)^{−a_{i,f}}`.
    pub fn new(base: BaseManifold, degrees: Vec<Vec<i32>>) -> Result<HermitianBundleData> {
        let nf = base.kind.sphere_factors();
        if degrees.is_empty() {
            return Err(Error::InvalidInput("bundle rank must be positive".into()));
        }
        if degrees.len() > 3 {
            return Err(Error::Unsupported("rank above 3".into()));
        }
        for d in &degrees {
            if d.len() != nf.max(1) {
                return Err(Error::InvalidInput(format!(
                    "expected {} degree(s) per summand, got {}",
                    nf.max(1),
                    d.len()
                )));
            }
            if nf == 0 && d[0] != 0 {
                return Err(Error::Unsupported("nonzero degree on the torus".into()));
            }
        }
        if base.dim() + degrees.len() - 1 > 3 {
            return Err(Error::Unsupported("total dimension above 3".into()));
        }
        Ok(HermitianBundleData {
            base,
            degrees,
            perturbations: Vec::new(),
        })
    }

    /// `⊕ O(a_i)` over a one-factor base.
    pub fn split(base: BaseManifold, degrees: &[i32]) -> Result<HermitianBundleData> {
        HermitianBundleData::new(base, degrees.iter().map(|a| vec![*a]).collect())
    }

    /// Trivial bundle of rank `r`.
    pub fn trivial(base: BaseManifold, r: usize) -> Result<HermitianBundleData> {
        let nf = base.kind.sphere_factors().max(1);
        HermitianBundleData::new(base, vec![vec![0; nf]; r])
    }

    /// Adds a deformation.
    pub fn with_perturbation(mut self, p: BundlePerturbation) -> Result<HermitianBundleData> {
        let r = self.rank();
        match &p {
            BundlePerturbation::Conformal { summand, .. } if *summand >= r => {
                return Err(Error::InvalidInput("summand index out of range".into()))
            }
            BundlePerturbation::OffDiagonal { i, j, .. } => {
                if *i >= r || *j >= r || i == j {
                    return Err(Error::InvalidInput("bad off-diagonal indices".into()));
                }
                if self.degrees[*i] != self.degrees[*j] {
                    return Err(Error::InvalidInput(
                        "off-diagonal deformation needs equal degrees".into(),
                    ));
                }
            }
            _ => {}
        }
        self.perturbations.push(p);
        Ok(self)
    }

    /// Rank `r`.
    pub fn rank(&self) -> usize {
        self.degrees.len()
    }

    /// Fiber dimension `r − 1`.
    pub fn fiber_dim(&self) -> usize {
        self.rank() - 1
    }

    /// Total complex dimension `m + r − 1`.
    pub fn total_dim(&self) -> usize {
        self.base.dim() + self.rank() - 1
    }

    /// True when the metric is diagonal.
    pub fn is_diagonal(&self) -> bool {
        !self
            .perturbations
            .iter()
            .any(|p| matches!(p, BundlePerturbation::OffDiagonal { .. }))
    }

    /// Slope `μ = ∫ tr(iF)∧ω^{m−1}/(m−1)! / (r·Vol)`.
    pub fn slope(&self) -> f64 {
        let s = self.base.scale;
        let total: i32 = self.degrees.iter().flat_map(|d| d.iter()).sum();
        match self.base.kind {
            BaseKind::FlatTorus => 0.0,
            _ => total as f64 / (self.rank() as f64 * s),
        }
    }

    /// Degree-weighted constant `ΛTr(iF)` of the model metric: `r·μ`.
    pub fn trace_slope(&self) -> f64 {
        self.rank() as f64 * self.slope()
    }

    pub(crate) fn model_log_h(&self, i: usize, bc: &BaseCoords) -> Jet {
        let space = bc.z[0].space();
        let one = C64::new(1.0, 0.0);
        let mut acc = Jet::zero(space);
        if self.base.kind != BaseKind::FlatTorus {
            for (f, a) in self.degrees[i].iter().enumerate() {
                if *a != 0 {
                    let q = (&bc.z[f] * &bc.zb[f]).add_const(one).ln();
                    acc = acc - q.scale_re(*a as f64);
                }
            }
        }
        acc
    }

    /// Jets of the metric matrix `H` in base coordinates `bc`.
    pub fn h_jets(&self, bc: &BaseCoords) -> JetMatrix {
        let r = self.rank();
        let mut logs: Vec<Jet> = (0..r).map(|i| self.model_log_h(i, bc)).collect();
        let model: Vec<Jet> = logs.iter().map(|l| l.exp()).collect();
        for p in &self.perturbations {
            if let BundlePerturbation::Conformal {
                summand,
                amplitude,
                field,
            } = p
            {
                let q = field.eval(&self.base, bc);
                logs[*summand] = &logs[*summand] + q.scale_re(*amplitude);
            }
        }
        let diag: Vec<Jet> = logs.iter().map(|l| l.exp()).collect();
        let space = bc.z[0].space();
        let mut h = JetMatrix::from_fn(r, |i, j| {
            if i == j {
                diag[i].clone()
            } else {
                Jet::zero(space)
            }
        });
        for p in &self.perturbations {
            if let BundlePerturbation::OffDiagonal {
                i,
                j,
                amplitude,
                field,
            } = p
            {
                let q = &field.eval(&self.base, bc) * &model[*i];
                let e = h.get(*i, *j) + q.scale(*amplitude);
                *h.get_mut(*i, *j) = e;
                let e = h.get(*j, *i) + q.scale(amplitude.conj());
                *h.get_mut(*j, *i) = e;
            }
        }
        h
    }

    /// Metric matrix at a base point.
    pub fn h_at(&self, pt: &BasePoint) -> DMatrix<C64> {
        let ch = self.base.chart(pt, 0);
        let bc = self.base.coords(pt, &ch);
        self.h_jets(&bc).value()
    }

    /// Curvature coefficient matrices `C_{ab}` as jets in the chart of `bc`
    /// (complex dimension `n` of that chart).
    pub fn curvature_jets(&self, bc: &BaseCoords, n: usize) -> Vec<Vec<JetMatrix>> {
        let m = self.base.dim();
        let h = self.h_jets(bc);
        let (hinv, _) = h.inverse_det().expect("bundle metric must be invertible");
        (0..m)
            .map(|a| {
                let da = hinv.matmul(&h.map(|x| x.diff(a)));
                (0..m)
                    .map(|b| da.map(|x| -x.diff(n + b)))
                    .collect()
            })
            .collect()
    }

    /// Curvature `iF` at a base point.
    pub fn curvature_at(&self, pt: &BasePoint) -> EndValuedFormAtPoint {
        let m = self.base.dim();
        let ch = self.base.chart(pt, 2);
        let bc = self.base.coords(pt, &ch);
        let c = self.curvature_jets(&bc, m);
        let vals: Vec<Vec<DMatrix<C64>>> = c
            .iter()
            .map(|row| row.iter().map(|x| x.value()).collect())
            .collect();
        EndValuedFormAtPoint::from_matrix_coeffs(m, self.rank(), &vals)
    }

    /// Matrix `Λ_ω iF` at a base point.
    pub fn mean_curvature_at(&self, pt: &BasePoint) -> Result<DMatrix<C64>> {
        let m = self.base.dim();
        let metric = self.base.metric(pt, 2)?;
        let ginv = metric.ginv.value();
        let ch = self.base.chart(pt, 2);
        let bc = self.base.coords(pt, &ch);
        let c = self.curvature_jets(&bc, m);
        let r = self.rank();
        let mut out = DMatrix::<C64>::zeros(r, r);
        for a in 0..m {
            for b in 0..m {
                out += c[a][b].value() * ginv[(b, a)];
            }
        }
        Ok(out)
    }

    /// `sup_x ‖Λ_ω iF − μ·Id‖` over the base quadrature nodes.
    pub fn he_residual(&self) -> Result<f64> {
        let mu = self.slope();
        let r = self.rank();
        let mut worst: f64 = 0.0;
        for pt in self.base.nodes() {
            let k = self.mean_curvature_at(pt)? - DMatrix::<C64>::identity(r, r) * C64::new(mu, 0.0);
            worst = worst.max(k.norm());
        }
        Ok(worst)
    }

    /// Random point of the total space, in the fiber chart where the
    /// functional's largest entry is normalized to one.
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> TotalPoint {
        let x = self.base.random_point(rng);
        let r = self.rank();
        let f: Vec<C64> = (0..r)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        TotalPoint::from_functional(x, &f).expect("random functional is nonzero")
    }
}

/// `λ(v, h) = v v^† H / (v^† H v)` for `v ∈ E`.
pub fn lambda_endo(v: &DVector<C64>, h: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let hv = h * v;
    let n2 = v.dotc(&hv);
    if n2.norm() <= 1e-300 {
        return Err(Error::ZeroVector);
    }
    Ok(v * v.adjoint() * h / n2)
}

/// A point of the total space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalPoint {
    /// Base point.
    pub base: BasePoint,
    /// Index of the functional entry normalized to one.
    pub fiber_chart: usize,
    /// Remaining entries of the functional.
    pub xi: Vec<C64>,
}

impl TotalPoint {
    /// The line of the functional `f`, in the chart of its largest entry.
    pub fn from_functional(base: BasePoint, f: &[C64]) -> Result<TotalPoint> {
        let (c, fc) = f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .ok_or(Error::ZeroVector)?;
        if fc.norm() == 0.0 {
            return Err(Error::ZeroVector);
        }
        let xi = f
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != c)
            .map(|(_, x)| x / fc)
            .collect();
        Ok(TotalPoint {
            base,
            fiber_chart: c,
            xi,
        })
    }

    /// Representative functional.
    pub fn functional(&self) -> Vec<C64> {
        let r = self.xi.len() + 1;
        let mut it = self.xi.iter();
        (0..r)
            .map(|i| {
                if i == self.fiber_chart {
                    C64::new(1.0, 0.0)
                } else {
                    *it.next().expect("fiber coordinate")
                }
            })
            .collect()
    }
}

/// Jets of all bundle quantities at a point of the total space.
#[derive(Clone, Debug)]
pub struct TotalJets {
    /// Chart of dimension `m + r − 1` centred at the point; base variables
    /// first.
    pub chart: Chart,
    /// Base dimension `m`.
    pub m: usize,
    /// Rank `r`.
    pub r: usize,
    /// Base coordinates inside the chart.
    pub bc: BaseCoords,
    /// Bundle metric.
    pub h: JetMatrix,
    /// Its inverse.
    pub hinv: JetMatrix,
    /// Functional entries.
    pub f: Vec<Jet>,
    /// `log(fH⁻¹f^†)`.
    pub psi_g: Jet,
    /// Base Kähler potential.
    pub psi_m: Jet,
    /// Projector `λ`.
    pub lambda: JetMatrix,
    /// Curvature coefficients `C_{ab}`.
    pub curv: Vec<Vec<JetMatrix>>,
}

impl TotalJets {
    /// Jets of the given order at `pt`.
    pub fn new(bundle: &HermitianBundleData, pt: &TotalPoint, order: usize) -> Result<TotalJets> {
        TotalJets::build(bundle, pt, order, None)
    }

    /// Same quantities computed in a holomorphic frame that is normal at the
    /// base point: `H(x) = I` and `dH(x) = 0`.
    pub fn new_normal(bundle: &HermitianBundleData, pt: &TotalPoint, order: usize) -> Result<TotalJets> {
        let m = bundle.base.dim();
        let ch = bundle.base.chart(&pt.base, 1);
        let bc = bundle.base.coords(&pt.base, &ch);
        let hj = bundle.h_jets(&bc);
        let h0 = hj.value();
        let (h0inv, h0_isqrt) = herm_inv_and_isqrt(&h0)?;
        let ms: Vec<DMatrix<C64>> = (0..m)
            .map(|a| {
                let da = hj.map(|x| x.diff(a)).value();
                &h0inv * da
            })
            .collect();
        let f = DMatrix::from_row_slice(1, bundle.rank(), &pt.functional());
        let f_new = f * &h0_isqrt;
        let new_pt = TotalPoint::from_functional(pt.base.clone(), f_new.as_slice())?;
        let frame = NormalFrame {
            center: pt.base.z.clone(),
            ms,
            a0: h0_isqrt,
        };
        TotalJets::build(bundle, &new_pt, order, Some(&frame))
    }

    fn build(
        bundle: &HermitianBundleData,
        pt: &TotalPoint,
        order: usize,
        frame: Option<&NormalFrame>,
    ) -> Result<TotalJets> {
        let base = &bundle.base;
        let m = base.dim();
        let r = bundle.rank();
        if pt.xi.len() != r - 1 || pt.fiber_chart >= r {
            return Err(Error::InvalidInput("point does not match bundle rank".into()));
        }
        let n = m + r - 1;
        let mut center = pt.base.z.clone();
        center.extend_from_slice(&pt.xi);
        let chart = Chart::new(&center, order);
        let bc = base.coords(&pt.base, &chart);
        let mut h = bundle.h_jets(&bc);
        if let Some(fr) = frame {
            let a = fr.jets(&chart, m);
            h = a.adjoint(n).matmul(&h).matmul(&a);
        }
        let (hinv, _) = h.inverse_det().ok_or(Error::Singular)?;
        let one = Jet::real(&chart.space, 1.0);
        let mut f = Vec::with_capacity(r);
        let mut fb = Vec::with_capacity(r);
        let mut k = 0;
        for i in 0..r {
            if i == pt.fiber_chart {
                f.push(one.clone());
                fb.push(one.clone());
            } else {
                f.push(chart.z[m + k].clone());
                fb.push(chart.zb[m + k].clone());
                k += 1;
            }
        }
        let v: Vec<Jet> = (0..r)
            .map(|i| {
                let mut acc = Jet::zero(&chart.space);
                for j in 0..r {
                    acc = acc + hinv.get(i, j) * &fb[j];
                }
                acc
            })
            .collect();
        let mut nf = Jet::zero(&chart.space);
        for i in 0..r {
            nf = nf + &f[i] * &v[i];
        }
        let inv_n = nf.recip();
        let lambda = JetMatrix::from_fn(r, |i, j| &(&v[i] * &f[j]) * &inv_n);
        let psi_g = nf.ln();
        let psi_m = base.potential(&bc);
        let curv: Vec<Vec<JetMatrix>> = (0..m)
            .map(|a| {
                let da = hinv.matmul(&h.map(|x| x.diff(a)));
                (0..m).map(|b| da.map(|x| -x.diff(n + b))).collect()
            })
            .collect();
        Ok(TotalJets {
            chart,
            m,
            r,
            bc,
            h,
            hinv,
            f,
            psi_g,
            psi_m,
            lambda,
            curv,
        })
    }

    /// Total dimension.
    pub fn n(&self) -> usize {
        self.m + self.r - 1
    }

    /// `ω_g` at the centre.
    pub fn omega_g(&self) -> FormAtPoint {
        FormAtPoint::from_hermitian(&self.chart.ddbar(&self.psi_g).value())
    }

    /// `π*ω` at the centre.
    pub fn pi_omega(&self) -> FormAtPoint {
        FormAtPoint::from_hermitian(&self.chart.ddbar(&self.psi_m).value())
    }

    /// `ω_k = ω_g + k π*ω` at the centre.
    pub fn omega_k(&self, k: f64) -> FormAtPoint {
        self.omega_g().add(&self.pi_omega().scale_re(k))
    }

    /// Base metric jets (leading `m×m` block of `∂∂̄Ψ_M`) and its inverse.
    pub fn base_metric(&self) -> Result<(JetMatrix, JetMatrix)> {
        let g = self.chart.ddbar(&self.psi_m).leading(self.m);
        let (ginv, _) = g.inverse_det().ok_or(Error::Singular)?;
        Ok((g, ginv))
    }

    /// Base Kähler form at the centre, on `ℂᵐ`.
    pub fn base_omega(&self) -> FormAtPoint {
        self.pi_omega().restrict_leading(self.m)
    }

    /// Coframe change `P` from `(dz, dξ)` to the adapted coframe `(dz, θ)`
    /// whose vertical part annihilates the `ω_g`-orthogonal complement of the
    /// fibers.
    pub fn adapted_frame(&self) -> Result<DMatrix<C64>> {
        let (m, n) = (self.m, self.n());
        let g = self.chart.ddbar(&self.psi_g).value();
        let ghv = g.view((0, m), (m, n - m)).clone_owned();
        let gvv = g.view((m, m), (n - m, n - m)).clone_owned();
        let gvv_inv = gvv.try_inverse().ok_or(Error::Singular)?;
        let b = -(ghv * gvv_inv);
        let mut p = DMatrix::<C64>::identity(n, n);
        for a in 0..m {
            for al in 0..n - m {
                p[(m + al, a)] = b[(a, al)];
            }
        }
        Ok(p)
    }

    /// Horizontal part of a form, as a form on the base tangent space.
    pub fn horizontal(&self, form: &FormAtPoint) -> Result<FormAtPoint> {
        Ok(form.pullback(&self.adapted_frame()?).restrict_leading(self.m))
    }

    /// `Tr(λ iF)` at the centre as a form on the base.
    pub fn beta(&self) -> FormAtPoint {
        let m = self.m;
        let mat = DMatrix::from_fn(m, m, |a, b| self.lambda.matmul(&self.curv[a][b]).trace().value());
        FormAtPoint::from_hermitian(&mat)
    }

    /// `Tr(iF)` at the centre as a form on the base.
    pub fn trace_curvature(&self) -> FormAtPoint {
        let m = self.m;
        let mat = DMatrix::from_fn(m, m, |a, b| self.curv[a][b].trace().value());
        FormAtPoint::from_hermitian(&mat)
    }

    /// Jet of `Tr(λΦ)`.
    pub fn trace_lambda(&self, phi: &JetMatrix) -> Jet {
        self.lambda.matmul(phi).trace()
    }

    /// Coefficient matrix jets of `Tr(λ iF)`.
    pub fn beta_jets(&self) -> JetMatrix {
        JetMatrix::from_fn(self.m, |a, b| self.lambda.matmul(&self.curv[a][b]).trace())
    }

    /// Jets of `f₁ = ΛTr(λiF)` and `f₂ = Λ²(Tr(λiF))²`.
    pub fn f_jets(&self) -> Result<(Jet, Jet)> {
        let (_, ginv) = self.base_metric()?;
        let beta = ginv.matmul(&self.beta_jets());
        let t = beta.trace();
        let f2 = (&t * &t - beta.matmul(&beta).trace()) * 0.5;
        Ok((t, f2))
    }

    /// `f_j` for `j = 0..=m` from the contraction formula `Λ^j (Tr(λiF))^j`.
    pub fn f_coeffs(&self) -> Result<Vec<f64>> {
        let beta = self.beta();
        let om = self.base_omega();
        let mut out = vec![1.0];
        let mut pow = FormAtPoint::scalar(self.m, C64::new(1.0, 0.0));
        for j in 1..=self.m {
            pow = pow.wedge(&beta)?;
            out.push(contract_j(&pow, &om, j)?.re);
        }
        Ok(out)
    }

    /// `f_j` from the defining identity
    /// `ω_g^{r−1+j}/(r−1+j)! ∧ π*ω^{m−j}/(m−j)! = f_j ω_g^{r−1}/(r−1)! ∧ π*ω^m/m!`.
    pub fn f_coeffs_wedge(&self) -> Result<Vec<f64>> {
        let (m, r) = (self.m, self.r);
        let og = self.omega_g();
        let om = self.pi_omega();
        let den = og
            .power(r - 1)
            .wedge(&om.power(m))?
            .scale_re(1.0 / (fact(r - 1) * fact(m)));
        (0..=m)
            .map(|j| {
                let num = og
                    .power(r - 1 + j)
                    .wedge(&om.power(m - j))?
                    .scale_re(1.0 / (fact(r - 1 + j) * fact(m - j)));
                Ok(top_form_quotient(&num, &den)?.re)
            })
            .collect()
    }

    fn vertical_den(&self) -> Result<FormAtPoint> {
        let r = self.r;
        self.omega_g().power(r - 1).wedge(&self.pi_omega().power(self.m))
    }

    /// `Λ̃α_V` from `Λ̃α_V ω_g^{r−1}∧π*ω^m = (r−1) α∧ω_g^{r−2}∧π*ω^m`.
    pub fn lambda_vertical(&self, alpha: &FormAtPoint) -> Result<f64> {
        let r = self.r;
        if r < 2 {
            return Ok(0.0);
        }
        let num = alpha
            .wedge(&self.omega_g().power(r - 2))?
            .wedge(&self.pi_omega().power(self.m))?
            .scale_re((r - 1) as f64);
        Ok(top_form_quotient(&num, &self.vertical_den()?)?.re)
    }

    /// `Λ_ω α_H` for a (1,1)-form on the total space.
    pub fn lambda_horizontal(&self, alpha: &FormAtPoint) -> Result<f64> {
        Ok(lambda(&self.horizontal(alpha)?, &self.base_omega())?.re)
    }

    /// `Λ²_ω β_H` for a 4-form `β` on the total space.
    pub fn lambda2_horizontal(&self, beta: &FormAtPoint) -> Result<f64> {
        if self.m < 2 {
            return Ok(0.0);
        }
        Ok(contract_j(&self.horizontal(beta)?, &self.base_omega(), 2)?.re)
    }

    /// `Δ_V f` from the wedge definition.
    pub fn laplacian_v(&self, f: &Jet) -> Result<f64> {
        self.lambda_vertical(&self.chart.i_dbar_d(f))
    }

    /// `Δ_H f` from `m i∂̄∂f∧ω_g^{r−1}∧π*ω^{m−1} = Δ_H f ω_g^{r−1}∧π*ω^m`.
    pub fn laplacian_h(&self, f: &Jet) -> Result<f64> {
        let (m, r) = (self.m, self.r);
        let num = self
            .chart
            .i_dbar_d(f)
            .wedge(&self.omega_g().power(r - 1))?
            .wedge(&self.pi_omega().power(m - 1))?
            .scale_re(m as f64);
        Ok(top_form_quotient(&num, &self.vertical_den()?)?.re)
    }

    /// `Δ̃_H f = Δ_H f − f₁ Δ_V f`.
    pub fn laplacian_h_tilde(&self, f: &Jet) -> Result<f64> {
        let f1 = self.f_coeffs()?[1];
        Ok(self.laplacian_h(f)? - f1 * self.laplacian_v(f)?)
    }

    /// Local metric of `ω_k`, or `KBelowThreshold` when it is not positive.
    pub fn metric_k(&self, k: f64) -> Result<LocalMetric> {
        let psi = &self.psi_g + self.psi_m.scale_re(k);
        LocalMetric::from_potential(&self.chart, &psi).map_err(|e| match e {
            Error::NotPositive => Error::KBelowThreshold(k),
            e => e,
        })
    }

    /// Scalar curvature of `ω_k` at the centre.
    pub fn scal_k(&self, k: f64) -> Result<f64> {
        Ok(self.metric_k(k)?.scal().value().re)
    }

    /// `Δ_{ω_k} f` at the centre.
    pub fn laplacian_k(&self, f: &Jet, k: f64) -> Result<f64> {
        Ok(self.metric_k(k)?.laplacian(f).value().re)
    }

    /// Curvature form `Tr(iF)` of the vertical tangent bundle with the metric
    /// induced by `ω_g`, at the centre. Needs jets of order at least 4.
    pub fn vertical_ricci(&self) -> Result<FormAtPoint> {
        let (m, n) = (self.m, self.n());
        let g = self.chart.ddbar(&self.psi_g);
        let gvv = JetMatrix::from_fn(n - m, |i, j| g.get(m + i, m + j).clone());
        let (_, det) = gvv.inverse_det().ok_or(Error::Singular)?;
        Ok(self.chart.i_dbar_d(&det.ln()))
    }

    /// Sup-norm of `Tr(iF_V) − (rω_g − π*Tr(iF))` at the centre.
    pub fn euler_residual(&self) -> Result<f64> {
        let (m, n) = (self.m, self.n());
        let mut tr = DMatrix::<C64>::zeros(n, n);
        for a in 0..m {
            for b in 0..m {
                tr[(a, b)] = self.curv[a][b].trace().value();
            }
        }
        let rhs = self
            .omega_g()
            .scale_re(self.r as f64)
            .sub(&FormAtPoint::from_hermitian(&tr));
        Ok(self.vertical_ricci()?.sub(&rhs).sup_norm())
    }

    /// Jet of `Δ_V f = −Σ (G_VV⁻¹)_{βα} f_{αβ̄}` over fiber indices, the
    /// large-`k` limit of `Δ_{ω_k}`.
    pub fn laplacian_v_jet(&self, f: &Jet) -> Result<Jet> {
        let (m, n) = (self.m, self.n());
        let g = self.chart.ddbar(&self.psi_g);
        let gvv = JetMatrix::from_fn(n - m, |i, j| g.get(m + i, m + j).clone());
        let (inv, _) = gvv.inverse_det().ok_or(Error::Singular)?;
        let ff = self.chart.ddbar(f);
        let mut acc = Jet::zero(&self.chart.space);
        for a in 0..n - m {
            for b in 0..n - m {
                acc = acc - inv.get(b, a) * ff.get(m + a, m + b);
            }
        }
        Ok(acc)
    }

    /// Unitary fiber coordinates `(u, ū, x₃)` of a rank-2 bundle:
    /// `λ̂ = L^†λL^{−†} = ½(I + x·σ)` with `H = LL^†` the Cholesky factor,
    /// `u = x₁ + ix₂ = 2λ̂₁₂`, `x₃ = λ̂₁₁ − λ̂₂₂`.
    pub fn fiber_frame_coords(&self) -> Result<(Jet, Jet, Jet)> {
        if self.r != 2 {
            return Err(Error::Unsupported("fiber coordinates need rank 2".into()));
        }
        let n = self.n();
        let h = &self.h;
        let l11 = h.get(0, 0).sqrt();
        let l21 = h.get(1, 0) * &l11.recip();
        let l21b = l21.conj_swap(n);
        let l22 = (h.get(1, 1) - &l21 * &l21b).sqrt();
        let zero = Jet::zero(&self.chart.space);
        let i11 = l11.recip();
        let i22 = l22.recip();
        let i21 = -(&(&l21 * &i11) * &i22);
        let linv = JetMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => i11.clone(),
            (1, 1) => i22.clone(),
            (1, 0) => i21.clone(),
            _ => zero.clone(),
        });
        let l = JetMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => l11.clone(),
            (1, 1) => l22.clone(),
            (1, 0) => l21.clone(),
            _ => zero.clone(),
        });
        let lh = l.adjoint(n).matmul(&self.lambda).matmul(&linv.adjoint(n));
        let u = lh.get(0, 1).scale_re(2.0);
        let ub = lh.get(1, 0).scale_re(2.0);
        let x3 = lh.get(0, 0) - lh.get(1, 1);
        Ok((u, ub, x3))
    }

    /// Jet of a base field pulled back to the total space.
    pub fn pullback(&self, base: &BaseManifold, field: &dyn BaseField) -> Jet {
        field.eval(base, &self.bc)
    }
}

struct NormalFrame {
    center: Vec<C64>,
    ms: Vec<DMatrix<C64>>,
    a0: DMatrix<C64>,
}

impl NormalFrame {
    fn jets(&self, chart: &Chart, m: usize) -> JetMatrix {
        let r = self.a0.nrows();
        let mut lin = JetMatrix::identity(&chart.space, r);
        for a in 0..m {
            let dz = chart.z[a].add_const(-self.center[a]);
            for i in 0..r {
                for j in 0..r {
                    let e = lin.get(i, j) - dz.scale(self.ms[a][(i, j)]);
                    *lin.get_mut(i, j) = e;
                }
            }
        }
        JetMatrix::from_fn(r, |i, j| {
            let mut acc = Jet::zero(&chart.space);
            for k in 0..r {
                acc = acc + lin.get(i, k).scale(self.a0[(k, j)]);
            }
            acc
        })
    }
}

fn herm_inv_and_isqrt(h: &DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
        return Err(Error::NotPositive);
    }
    let u = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(1.0 / l.sqrt(), 0.0)));
    let isqrt = u * d * u.adjoint();
    let inv = &isqrt * &isqrt;
    Ok((inv, isqrt))
}

/// `h^{1/2}` of a positive hermitian matrix.
pub fn herm_sqrt(h: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
        return Err(Error::NotPositive);
    }
    let u = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.sqrt(), 0.0)));
    Ok(u * d * u.adjoint())
}

fn fact(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Volume of a fiber `ℙ^{r−1}` for the Fubini–Study form of `ω_g`:
/// `(2π)^{r−1}/(r−1)!`.
pub fn fiber_volume(r: usize) -> f64 {
    (2.0 * PI).powi(r as i32 - 1) / fact(r - 1)
}

/// Reproducing-kernel constant `C_r = (2π)^{r−1}/r!`.
pub fn reproducing_constant(r: usize) -> f64 {
    (2.0 * PI).powi(r as i32 - 1) / fact(r)
}

/// Quadrature on the fiber over `x` of a rank-2 bundle.
///
/// A unit vector `y` of the sphere corresponds to the unit functional
/// `f = e^T L^†` with `H = LL^†` the Cholesky factor and
/// `e = (cos θ/2, sin θ/2 e^{iφ})`, so that `y` is the point's value of
/// [`TotalJets::fiber_frame_coords`]; weights integrate against `ω_g`
/// restricted to the fiber.
#[derive(Clone, Debug)]
pub struct FiberQuadrature {
    /// Unit functionals at the nodes.
    pub functionals: Vec<Vec<C64>>,
    /// Sphere nodes.
    pub nodes: Vec<[f64; 3]>,
    /// Weights summing to the fiber volume `2π`.
    pub weights: Vec<f64>,
}

impl FiberQuadrature {
    /// Fiber rule of the given order over `x`.
    pub fn new(bundle: &HermitianBundleData, x: &BasePoint, order: usize) -> Result<FiberQuadrature> {
        if bundle.rank() != 2 {
            return Err(Error::Unsupported("fiber quadrature needs rank 2".into()));
        }
        let hs = nalgebra::Cholesky::new(bundle.h_at(x))
            .ok_or(Error::NotPositive)?
            .l()
            .adjoint();
        let q = SphereQuadrature::new(order);
        let functionals = q
            .nodes
            .iter()
            .map(|y| {
                let e = hopf_lift(*y);
                let row = DMatrix::from_row_slice(1, 2, &e) * &hs;
                row.iter().copied().collect()
            })
            .collect();
        Ok(FiberQuadrature {
            functionals,
            nodes: q.nodes,
            weights: q.weights.iter().map(|w| 0.5 * w).collect(),
        })
    }

    /// Total points at the nodes.
    pub fn points(&self, x: &BasePoint) -> Vec<TotalPoint> {
        self.functionals
            .iter()
            .map(|f| TotalPoint::from_functional(x.clone(), f).expect("unit functional"))
            .collect()
    }

    /// `∫ f ω_g^{r−1}/(r−1)!` over the fiber.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// `e = (cos θ/2, sin θ/2 e^{iφ})` for the unit vector `y`.
pub fn hopf_lift(y: [f64; 3]) -> [C64; 2] {
    let c = ((1.0 + y[2]) / 2.0).max(0.0).sqrt();
    let s = ((1.0 - y[2]) / 2.0).max(0.0).sqrt();
    let phi = y[1].atan2(y[0]);
    [C64::new(c, 0.0), C64::from_polar(s, phi)]
}

/// `C_r⁻¹ ∫ f(v) conj(f(w)) / ‖f‖² ω_g^{r−1}/(r−1)!` over the fiber over `x`,
/// which reproduces `h(v, w)`.
pub fn fiber_reproducing(
    bundle: &HermitianBundleData,
    x: &BasePoint,
    v: &[C64],
    w: &[C64],
    order: usize,
) -> Result<C64> {
    let q = FiberQuadrature::new(bundle, x, order)?;
    let mut acc = C64::new(0.0, 0.0);
    for (f, wt) in q.functionals.iter().zip(&q.weights) {
        let fv: C64 = f.iter().zip(v).map(|(a, b)| a * b).sum();
        let fw: C64 = f.iter().zip(w).map(|(a, b)| a * b).sum();
        acc += fv * fw.conj() * *wt;
    }
    Ok(acc / reproducing_constant(bundle.rank()))
}

/// A scalar field on the total space, evaluated as a jet in the chart of a
/// [`TotalJets`].
pub trait TotalField: Send + Sync {
    /// Jet of the field at the centre of `tj`.
    fn eval(&self, bundle: &HermitianBundleData, tj: &TotalJets) -> Jet;
}

/// Field given by a closure.
pub struct FnTotalField<F>(pub F);

impl<F> TotalField for FnTotalField<F>
where
    F: Fn(&HermitianBundleData, &TotalJets) -> Jet + Send + Sync,
{
    fn eval(&self, bundle: &HermitianBundleData, tj: &TotalJets) -> Jet {
        (self.0)(bundle, tj)
    }
}

/// Pullback of a base field.
pub struct PulledBack<B>(pub B);

impl<B: BaseField> TotalField for PulledBack<B> {
    fn eval(&self, bundle: &HermitianBundleData, tj: &TotalJets) -> Jet {
        self.0.eval(&bundle.base, &tj.bc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p1() -> BaseManifold {
        BaseManifold::new(BaseKind::ProjectiveLine)
    }

    fn q1(base: &BaseManifold) -> SpectralField {
        let mut q = SpectralField::zeros(base.kind, 2);
        q.coeffs[1] = 0.3;
        q.coeffs[2] = -0.2;
        q.coeffs[5] = 0.15;
        q
    }

    fn deformed() -> HermitianBundleData {
        let base = p1();
        let q = q1(&base);
        HermitianBundleData::split(base, &[1, 1])
            .unwrap()
            .with_perturbation(BundlePerturbation::Conformal {
                summand: 0,
                amplitude: 0.4,
                field: q.clone(),
            })
            .unwrap()
            .with_perturbation(BundlePerturbation::OffDiagonal {
                i: 0,
                j: 1,
                amplitude: C64::new(0.2, 0.1),
                field: q,
            })
            .unwrap()
    }

    fn pt(x: C64, xi: C64) -> TotalPoint {
        TotalPoint {
            base: BasePoint::single(0, x),
            fiber_chart: 0,
            xi: vec![xi],
        }
    }

    #[test]
    fn lambda_is_h_orthogonal_projector() {
        let h = DMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.3, 0.4), C64::new(0.3, -0.4), C64::new(1.0, 0.0)]);
        let v = DVector::from_vec(vec![C64::new(0.5, 0.1), C64::new(-0.2, 0.7)]);
        let l = lambda_endo(&v, &h).unwrap();
        assert!((&l * &l - &l).norm() < 1e-14);
        assert!((l.trace() - 1.0).norm() < 1e-14);
        assert!((&h * &l - (&h * &l).adjoint()).norm() < 1e-14);
        assert!(lambda_endo(&DVector::zeros(2), &h).is_err());
    }

    #[test]
    fn slope_of_split_bundles() {
        let e = HermitianBundleData::split(p1(), &[1, -1]).unwrap();
        assert_eq!(e.slope(), 0.0);
        let e = HermitianBundleData::split(p1().scaled(2.0), &[1, 2]).unwrap();
        assert!((e.slope() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn model_metric_is_hermitian_einstein_when_degrees_agree() {
        let e = HermitianBundleData::split(p1(), &[2, 2]).unwrap();
        assert!(e.he_residual().unwrap() < 1e-12);
        let e = HermitianBundleData::split(p1(), &[1, 0]).unwrap();
        assert!(e.he_residual().unwrap() > 0.1);
    }

    #[test]
    fn f_coefficients_agree() {
        let e = deformed();
        let tj = TotalJets::new(&e, &pt(C64::new(0.3, -0.2), C64::new(0.4, 0.5)), 2).unwrap();
        let a = tj.f_coeffs().unwrap();
        let b = tj.f_coeffs_wedge().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn horizontal_part_of_omega_g_is_trace_lambda_curvature() {
        let e = deformed();
        let tj = TotalJets::new(&e, &pt(C64::new(-0.5, 0.1), C64::new(0.2, -0.9)), 2).unwrap();
        let h = tj.horizontal(&tj.omega_g()).unwrap();
        let d = h.sub(&tj.beta()).sup_norm();
        assert!(d < 1e-12, "difference {d}");
    }

    #[test]
    fn normal_frame_has_no_mixed_block_and_same_invariants() {
        let e = deformed();
        let p = pt(C64::new(0.2, 0.3), C64::new(-0.3, 0.6));
        let a = TotalJets::new(&e, &p, 4).unwrap();
        let b = TotalJets::new_normal(&e, &p, 4).unwrap();
        let g = b.chart.ddbar(&b.psi_g).value();
        assert!(g[(0, 1)].norm() < 1e-12);
        let hb = b.omega_g().restrict_leading(1);
        assert!(hb.sub(&b.beta()).sup_norm() < 1e-12);
        assert!((a.scal_k(3.0).unwrap() - b.scal_k(3.0).unwrap()).abs() < 1e-10);
        assert!((a.f_coeffs().unwrap()[1] - b.f_coeffs().unwrap()[1]).abs() < 1e-12);
    }

    #[test]
    fn trivial_bundle_scalar_curvature() {
        let e = HermitianBundleData::trivial(p1(), 2).unwrap();
        let tj = TotalJets::new(&e, &pt(C64::new(0.7, 0.2), C64::new(-1.1, 0.3)), 4).unwrap();
        for k in [1.0, 2.5, 10.0] {
            assert!((tj.scal_k(k).unwrap() - (2.0 + 2.0 / k)).abs() < 1e-11);
        }
    }

    #[test]
    fn negative_bundle_fails_below_threshold() {
        let e = HermitianBundleData::split(p1(), &[-3, 0]).unwrap();
        let tj = TotalJets::new(&e, &pt(C64::new(0.0, 0.0), C64::new(0.0, 0.0)), 4).unwrap();
        let s2 = tj.scal_k(2.0);
        assert!(matches!(s2, Err(Error::KBelowThreshold(_))), "{s2:?} {:?}", tj.omega_k(2.0).hermitian_matrix());
        assert!(tj.scal_k(4.0).is_ok());
    }

    #[test]
    fn vertical_laplacian_identities() {
        let e = deformed();
        let p = pt(C64::new(0.1, 0.4), C64::new(0.5, -0.2));
        let tj = TotalJets::new(&e, &p, 4).unwrap();
        let r = 2.0;
        let (f1, _) = tj.f_jets().unwrap();
        let (_, ginv) = tj.base_metric().unwrap();
        let ltrf = ginv
            .matmul(&JetMatrix::from_fn(1, |a, b| tj.curv[a][b].trace()))
            .trace()
            .value()
            .re;
        let lhs = tj.laplacian_v(&f1).unwrap();
        assert!((lhs - (r * f1.value().re - ltrf)).abs() < 1e-11, "{lhs}");
        let phi = JetMatrix::from_fn(2, |i, j| {
            let v = [[0.7, 0.2], [0.2, -0.7]][i][j];
            Jet::real(&tj.chart.space, v)
        });
        let t = tj.trace_lambda(&phi);
        assert!((tj.laplacian_v(&t).unwrap() - r * t.value().re).abs() < 1e-11);
    }

    #[test]
    fn euler_identity() {
        let e = deformed();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let p = e.random_point(&mut rng);
            let tj = TotalJets::new(&e, &p, 4).unwrap();
            assert!(tj.euler_residual().unwrap() < 1e-10);
        }
    }

    #[test]
    fn fiber_quadrature_volume_and_average() {
        let e = deformed();
        let x = BasePoint::single(0, C64::new(0.3, 0.1));
        let q = FiberQuadrature::new(&e, &x, 8).unwrap();
        let ones = vec![1.0; q.weights.len()];
        assert!((q.integrate(&ones) - fiber_volume(2)).abs() < 1e-12);
        let f1: Vec<f64> = q
            .points(&x)
            .iter()
            .map(|p| TotalJets::new(&e, p, 2).unwrap().f_coeffs().unwrap()[1])
            .collect();
        let avg = q.integrate(&f1) / reproducing_constant(2);
        let tr = e.mean_curvature_at(&x).unwrap().trace().re;
        assert!((avg - tr).abs() < 1e-10, "{avg} vs {tr}");
    }

    #[test]
    fn fiber_coordinates_match_quadrature_nodes() {
        let e = deformed();
        let x = BasePoint::single(0, C64::new(-0.2, 0.6));
        let q = FiberQuadrature::new(&e, &x, 3).unwrap();
        for (p, y) in q.points(&x).iter().zip(&q.nodes) {
            let tj = TotalJets::new(&e, p, 2).unwrap();
            let (u, _, x3) = tj.fiber_frame_coords().unwrap();
            assert!((u.value() - C64::new(y[0], y[1])).norm() < 1e-12);
            assert!((x3.value().re - y[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_laplacian_jet_matches_wedge_definition() {
        let e = deformed();
        let p = pt(C64::new(0.3, 0.3), C64::new(-0.7, 0.1));
        let tj = TotalJets::new(&e, &p, 3).unwrap();
        let f = (&tj.psi_g * &tj.psi_m).sin();
        let a = tj.laplacian_v_jet(&f).unwrap().value().re;
        let b = tj.laplacian_v(&f).unwrap();
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn reproducing_property() {
        let e = deformed();
        let x = BasePoint::single(0, C64::new(-0.4, 0.25));
        let h = e.h_at(&x);
        let v = [C64::new(0.3, 0.2), C64::new(-1.0, 0.5)];
        let w = [C64::new(0.8, -0.1), C64::new(0.1, 0.4)];
        let got = fiber_reproducing(&e, &x, &v, &w, 6).unwrap();
        let vv = DVector::from_row_slice(&v);
        let ww = DVector::from_row_slice(&w);
        let expect = ww.dotc(&(&h * &vv));
        assert!((got - expect).norm() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn random_points_are_in_range() {
        let e = deformed();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = e.random_point(&mut rng);
            assert!(p.xi.iter().all(|x| x.norm() <= 1.0 + 1e-12));
        }
    }
}
