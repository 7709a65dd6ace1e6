//! Local Kähler geometry from a jet of a Kähler potential.
//!
//! A chart of complex dimension `n` uses `2n` jet variables: variable `a` is
//! `δz_a` and variable `n+a` is `δz̄_a`. A potential `Ψ` defines
//! `ω = i ∂∂̄Ψ = i Ψ_{ab̄} dz^a∧dz̄^b`; in this convention `i∂̄∂f` has
//! coefficient matrix `−f_{ab̄}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::jet::{Jet, JetMatrix, JetSpace};
use crate::pointalg::FormAtPoint;

/// Jet coordinates centred at a point of `ℂⁿ`.
#[derive(Clone, Debug)]
pub struct Chart {
    /// Complex dimension.
    pub n: usize,
    /// Jet space with `2n` variables.
    pub space: Arc<JetSpace>,
    /// Holomorphic coordinate jets.
    pub z: Vec<Jet>,
    /// Antiholomorphic coordinate jets.
    pub zb: Vec<Jet>,
}

impl Chart {
    /// Coordinates centred at `center`, truncated at `order`.
    pub fn new(center: &[C64], order: usize) -> Chart {
        let n = center.len();
        let space = JetSpace::get(2 * n, order);
        let z = (0..n).map(|a| Jet::variable(&space, a, center[a])).collect();
        let zb = (0..n)
            .map(|a| Jet::variable(&space, n + a, center[a].conj()))
            .collect();
        Chart { n, space, z, zb }
    }

    /// Constant jet.
    pub fn constant(&self, c: f64) -> Jet {
        Jet::real(&self.space, c)
    }

    /// `∂f/∂z_a`.
    pub fn d(&self, f: &Jet, a: usize) -> Jet {
        f.diff(a)
    }

    /// `∂f/∂z̄_b`.
    pub fn dbar(&self, f: &Jet, b: usize) -> Jet {
        f.diff(self.n + b)
    }

    /// Matrix `M_{ab} = ∂_a∂_{b̄} f`.
    pub fn ddbar(&self, f: &Jet) -> JetMatrix {
        let df: Vec<Jet> = (0..self.n).map(|a| self.d(f, a)).collect();
        JetMatrix::from_fn(self.n, |a, b| self.dbar(&df[a], b))
    }

    /// The (1,1)-form `i∂̄∂f` at the centre.
    pub fn i_dbar_d(&self, f: &Jet) -> FormAtPoint {
        FormAtPoint::from_hermitian(&(-self.ddbar(f).value()))
    }
}

/// Kähler metric given by a potential jet.
#[derive(Clone, Debug)]
pub struct LocalMetric {
    /// Underlying chart.
    pub chart: Chart,
    /// Metric matrix `g_{ab̄}`.
    pub g: JetMatrix,
    /// Inverse matrix of `g`.
    pub ginv: JetMatrix,
    /// `log det g`.
    pub logdet: Jet,
}

impl LocalMetric {
    /// Metric `g_{ab̄} = ∂_a∂_{b̄}Ψ`.
    pub fn from_potential(chart: &Chart, psi: &Jet) -> Result<LocalMetric> {
        let g = chart.ddbar(psi);
        LocalMetric::from_matrix(chart, g)
    }

    /// Metric from an explicit coefficient matrix.
    pub fn from_matrix(chart: &Chart, g: JetMatrix) -> Result<LocalMetric> {
        let gv = g.value();
        let herm = (&gv - gv.adjoint()).norm() <= 1e-9 * (1.0 + gv.norm());
        if !herm || !crate::pointalg::is_positive_definite(&gv) {
            return Err(Error::NotPositive);
        }
        let (ginv, det) = g.inverse_det().ok_or(Error::Singular)?;
        Ok(LocalMetric {
            chart: chart.clone(),
            g,
            ginv,
            logdet: det.ln(),
        })
    }

    /// Complex dimension.
    pub fn dim(&self) -> usize {
        self.chart.n
    }

    /// Metric matrix at the centre.
    pub fn metric_value(&self) -> DMatrix<C64> {
        self.g.value()
    }

    /// The Kähler form at the centre.
    pub fn omega_form(&self) -> FormAtPoint {
        FormAtPoint::from_hermitian(&self.g.value())
    }

    /// Coefficient matrix of `Ric = i∂̄∂ log det g`.
    pub fn ricci_matrix(&self) -> JetMatrix {
        self.chart.ddbar(&self.logdet).map(|x| -x)
    }

    /// Ricci form at the centre.
    pub fn ricci_form(&self) -> FormAtPoint {
        FormAtPoint::from_hermitian(&self.ricci_matrix().value())
    }

    /// `Λ_ω` of the (1,1)-form with coefficient matrix `a`: `tr(g⁻¹a)`.
    pub fn trace(&self, a: &JetMatrix) -> Jet {
        self.ginv.matmul(a).trace()
    }

    /// `Λ²_ω(α∧β) = ½(tr A tr B − tr(AB))` with `A = g⁻¹α`, `B = g⁻¹β`.
    pub fn lambda2(&self, a: &JetMatrix, b: &JetMatrix) -> Jet {
        let ga = self.ginv.matmul(a);
        let gb = self.ginv.matmul(b);
        (&ga.trace() * &gb.trace() - ga.matmul(&gb).trace()) * 0.5
    }

    /// Scalar curvature `Λ_ω Ric`.
    pub fn scal(&self) -> Jet {
        self.trace(&self.ricci_matrix())
    }

    /// `Δf = Λ_ω(i∂̄∂f)`.
    pub fn laplacian(&self, f: &Jet) -> Jet {
        -self.trace(&self.chart.ddbar(f))
    }

    /// `⟨∇f, ∇h⟩ = g^{ab̄}(f_a h_{b̄} + h_a f_{b̄})`.
    pub fn grad_pair(&self, f: &Jet, h: &Jet) -> Jet {
        let n = self.dim();
        let c = &self.chart;
        let mut acc = Jet::zero(&c.space);
        for a in 0..n {
            let fa = c.d(f, a);
            let ha = c.d(h, a);
            for b in 0..n {
                let t = &fa * &c.dbar(h, b) + &ha * &c.dbar(f, b);
                acc = acc + self.ginv.get(b, a) * &t;
            }
        }
        acc
    }

    /// Poisson bracket `{f, h} = −i g^{ab̄}(f_a h_{b̄} − h_a f_{b̄})`.
    pub fn poisson(&self, f: &Jet, h: &Jet) -> Jet {
        let n = self.dim();
        let c = &self.chart;
        let mut acc = Jet::zero(&c.space);
        for a in 0..n {
            let fa = c.d(f, a);
            let ha = c.d(h, a);
            for b in 0..n {
                let t = &fa * &c.dbar(h, b) - &ha * &c.dbar(f, b);
                acc = acc + self.ginv.get(b, a) * &t;
            }
        }
        acc.scale(C64::new(0.0, -1.0))
    }

    /// Components `X^a = −i g^{ab̄} ∂_{b̄} f` of the holomorphic part of the
    /// Hamiltonian vector field of `f` (`ι_X ω = df`).
    pub fn hamiltonian_field(&self, f: &Jet) -> Vec<Jet> {
        let n = self.dim();
        let c = &self.chart;
        (0..n)
            .map(|a| {
                let mut acc = Jet::zero(&c.space);
                for b in 0..n {
                    acc = acc + self.ginv.get(b, a) * &c.dbar(f, b);
                }
                acc.scale(C64::new(0.0, -1.0))
            })
            .collect()
    }

    /// Fine's linearization `L φ = Δ²φ + R^{ab̄}φ_{ab̄}` of the scalar
    /// curvature along `ω + t i∂̄∂φ`.
    pub fn scal_linearization(&self, phi: &Jet) -> Jet {
        let lap = self.laplacian(phi);
        let lap2 = self.laplacian(&lap);
        let ric = self.ricci_matrix();
        let ginv_ric_ginv = self.ginv.matmul(&ric).matmul(&self.ginv);
        let pp = self.chart.ddbar(phi);
        lap2 + ginv_ric_ginv.matmul(&pp).trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs_potential(ch: &Chart) -> Jet {
        (&ch.z[0] * &ch.zb[0]).add_const(C64::new(1.0, 0.0)).ln()
    }

    #[test]
    fn fubini_study_curvature() {
        let ch = Chart::new(&[C64::new(0.4, -0.7)], 4);
        let m = LocalMetric::from_potential(&ch, &fs_potential(&ch)).unwrap();
        let s = m.scal();
        assert!((s.value().re - 2.0).abs() < 1e-12);
        let ric = m.ricci_matrix().value()[(0, 0)];
        let g = m.metric_value()[(0, 0)];
        assert!((ric - g * 2.0).norm() < 1e-12);
    }

    #[test]
    fn degree_one_harmonic_is_eigenfunction() {
        let z0 = C64::new(0.3, 0.2);
        let ch = Chart::new(&[z0], 4);
        let m = LocalMetric::from_potential(&ch, &fs_potential(&ch)).unwrap();
        let q = (&ch.z[0] * &ch.zb[0]).add_const(C64::new(1.0, 0.0));
        let x3 = (&ch.z[0] * &ch.zb[0]).scale_re(-1.0).add_const(C64::new(1.0, 0.0)) * q.recip();
        let lap = m.laplacian(&x3);
        assert!((lap.value() - x3.value() * 2.0).norm() < 1e-12);
        let l = m.scal_linearization(&x3);
        assert!(l.value().norm() < 1e-11);
    }

    #[test]
    fn linearization_matches_finite_difference() {
        let z0 = C64::new(0.25, -0.4);
        let eps = 1e-3;
        let scal_at = |t: f64| {
            let ch = Chart::new(&[z0], 4);
            let zz = &ch.z[0] * &ch.zb[0];
            let phi = (&zz * &zz + &ch.z[0] + &ch.zb[0]) * zz.add_const(C64::new(1.0, 0.0)).powf(-2.0);
            let psi = fs_potential(&ch) - phi.scale_re(t);
            let m = LocalMetric::from_potential(&ch, &psi).unwrap();
            (m.scal().value().re, m.scal_linearization(&phi).value().re)
        };
        let (_, lin) = scal_at(0.0);
        let fd = (scal_at(eps).0 - scal_at(-eps).0) / (2.0 * eps);
        assert!((lin - fd).abs() < 1e-5 * (1.0 + lin.abs()));
    }
}
