//! Pointwise exterior algebra of complex forms in a fixed coordinate frame.
//!
//! A form on `ℂⁿ` (n ≤ 3) is stored densely over all `2^{2n}` wedge monomials
//! in the generators `dz_1 … dz_n, dz̄_1 … dz̄_n`, in that canonical order.
//! Bit `a` of a monomial mask stands for `dz_{a+1}` and bit `n+b` for
//! `dz̄_{b+1}`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Largest supported ambient complex dimension.
pub const MAX_DIM: usize = 3;

const I: C64 = C64::new(0.0, 1.0);

/// A complex differential form at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct FormAtPoint {
    n: usize,
    coeffs: Vec<C64>,
}

fn wedge_sign(a: usize, b: usize) -> f64 {
    let mut swaps = 0u32;
    let mut bb = b;
    while bb != 0 {
        let bit = bb.trailing_zeros();
        swaps += (a >> (bit + 1)).count_ones();
        bb &= bb - 1;
    }
    if swaps.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl FormAtPoint {
    /// The zero form on `ℂⁿ`.
    pub fn zero(n: usize) -> FormAtPoint {
        assert!((1..=MAX_DIM).contains(&n), "dimension must be 1..={MAX_DIM}");
        FormAtPoint {
            n,
            coeffs: vec![C64::new(0.0, 0.0); 1 << (2 * n)],
        }
    }

    /// The constant 0-form `c`.
    pub fn scalar(n: usize, c: C64) -> FormAtPoint {
        let mut f = FormAtPoint::zero(n);
        f.coeffs[0] = c;
        f
    }

    /// `dz_a` (zero-based index).
    pub fn dz(n: usize, a: usize) -> FormAtPoint {
        let mut f = FormAtPoint::zero(n);
        f.coeffs[1 << a] = C64::new(1.0, 0.0);
        f
    }

    /// `dz̄_b` (zero-based index).
    pub fn dzbar(n: usize, b: usize) -> FormAtPoint {
        let mut f = FormAtPoint::zero(n);
        f.coeffs[1 << (n + b)] = C64::new(1.0, 0.0);
        f
    }

    /// The (1,1)-form `i Σ A_{ab} dz_a∧dz̄_b`.
    pub fn from_hermitian(a: &DMatrix<C64>) -> FormAtPoint {
        let n = a.nrows();
        let mut f = FormAtPoint::zero(n);
        for p in 0..n {
            for q in 0..n {
                f.coeffs[(1 << p) | (1 << (n + q))] = I * a[(p, q)];
            }
        }
        f
    }

    /// Coefficient matrix `A` of a (1,1)-form written as `i Σ A_{ab} dz_a∧dz̄_b`.
    pub fn hermitian_matrix(&self) -> DMatrix<C64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |p, q| self.coeffs[(1 << p) | (1 << (n + q))] / I)
    }

    /// Ambient complex dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Coefficient of the monomial with the given mask.
    pub fn coeff(&self, mask: usize) -> C64 {
        self.coeffs[mask]
    }

    /// Sets the coefficient of the monomial with the given mask.
    pub fn set_coeff(&mut self, mask: usize, c: C64) {
        self.coeffs[mask] = c;
    }

    /// All coefficients, indexed by mask.
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    fn bideg_of(&self, mask: usize) -> (usize, usize) {
        let low = (1usize << self.n) - 1;
        (
            (mask & low).count_ones() as usize,
            (mask >> self.n).count_ones() as usize,
        )
    }

    /// Bidegree if the form is homogeneous and nonzero.
    pub fn bidegree(&self) -> Option<(usize, usize)> {
        let mut found = None;
        for (m, c) in self.coeffs.iter().enumerate() {
            if c.norm() > 0.0 {
                let bd = self.bideg_of(m);
                match found {
                    None => found = Some(bd),
                    Some(f) if f != bd => return None,
                    _ => {}
                }
            }
        }
        found
    }

    /// Largest total degree carrying a nonzero coefficient.
    pub fn max_degree(&self) -> usize {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(m, _)| m.count_ones() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Coefficient of `dz_1∧…∧dz_n∧dz̄_1∧…∧dz̄_n`.
    pub fn top_coeff(&self) -> C64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    /// Wedge product, with the usual graded sign.
    pub fn wedge(&self, other: &FormAtPoint) -> Result<FormAtPoint> {
        assert_eq!(self.n, other.n, "ambient dimensions differ");
        if self.max_degree() + other.max_degree() > 2 * self.n {
            return Err(Error::DegreeOverflow);
        }
        Ok(self.wedge_unchecked(other))
    }

    fn wedge_unchecked(&self, other: &FormAtPoint) -> FormAtPoint {
        let mut out = FormAtPoint::zero(self.n);
        for (a, ca) in self.coeffs.iter().enumerate() {
            if ca.norm() == 0.0 {
                continue;
            }
            for (b, cb) in other.coeffs.iter().enumerate() {
                if a & b != 0 || cb.norm() == 0.0 {
                    continue;
                }
                out.coeffs[a | b] += ca * cb * wedge_sign(a, b);
            }
        }
        out
    }

    /// `self^k` under the wedge product (with `self^0 = 1`).
    pub fn power(&self, k: usize) -> FormAtPoint {
        let mut out = FormAtPoint::scalar(self.n, C64::new(1.0, 0.0));
        for _ in 0..k {
            out = out.wedge_unchecked(self);
        }
        out
    }

    /// Sum.
    pub fn add(&self, other: &FormAtPoint) -> FormAtPoint {
        FormAtPoint {
            n: self.n,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    /// Difference.
    pub fn sub(&self, other: &FormAtPoint) -> FormAtPoint {
        FormAtPoint {
            n: self.n,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        }
    }

    /// Scalar multiple.
    pub fn scale(&self, c: C64) -> FormAtPoint {
        FormAtPoint {
            n: self.n,
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    /// Real scalar multiple.
    pub fn scale_re(&self, c: f64) -> FormAtPoint {
        self.scale(C64::new(c, 0.0))
    }

    /// Largest coefficient modulus.
    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// A (1,1)-form is real iff its coefficient matrix is hermitian.
    pub fn is_real_11(&self, tol: f64) -> bool {
        let a = self.hermitian_matrix();
        (&a - a.adjoint()).iter().all(|x| x.norm() <= tol)
    }

    /// Pullback under the linear change of coframe `dz_old = P dz_new`.
    pub fn pullback(&self, p: &DMatrix<C64>) -> FormAtPoint {
        let n = self.n;
        let images: Vec<FormAtPoint> = (0..2 * n)
            .map(|g| {
                let mut f = FormAtPoint::zero(n);
                if g < n {
                    for b in 0..n {
                        f.coeffs[1 << b] = p[(g, b)];
                    }
                } else {
                    for b in 0..n {
                        f.coeffs[1 << (n + b)] = p[(g - n, b)].conj();
                    }
                }
                f
            })
            .collect();
        let mut out = FormAtPoint::zero(n);
        for (m, c) in self.coeffs.iter().enumerate() {
            if c.norm() == 0.0 {
                continue;
            }
            let mut term = FormAtPoint::scalar(n, *c);
            for (g, img) in images.iter().enumerate() {
                if m & (1 << g) != 0 {
                    term = term.wedge_unchecked(img);
                }
            }
            out = out.add(&term);
        }
        out
    }

    /// Keeps only monomials built from the first `k` holomorphic and
    /// antiholomorphic generators and re-expresses them on `ℂᵏ`.
    pub fn restrict_leading(&self, k: usize) -> FormAtPoint {
        let n = self.n;
        let mut out = FormAtPoint::zero(k);
        let keep = ((1usize << k) - 1) | (((1usize << k) - 1) << n);
        for (m, c) in self.coeffs.iter().enumerate() {
            if m & !keep != 0 {
                continue;
            }
            let hol = m & ((1 << k) - 1);
            let anti = (m >> n) & ((1 << k) - 1);
            out.coeffs[hol | (anti << k)] = *c;
        }
        out
    }

    /// Inverse of [`FormAtPoint::restrict_leading`]: views a form on `ℂᵏ` as a
    /// form on `ℂⁿ` in the first `k` generators.
    pub fn embed_leading(&self, n: usize) -> FormAtPoint {
        let k = self.n;
        assert!(n >= k);
        let mut out = FormAtPoint::zero(n);
        for (m, c) in self.coeffs.iter().enumerate() {
            let hol = m & ((1 << k) - 1);
            let anti = m >> k;
            out.coeffs[hol | (anti << n)] = *c;
        }
        out
    }

    /// Positivity of a real (1,1)-form.
    pub fn is_positive_11(&self) -> bool {
        let a = self.hermitian_matrix();
        if (&a - a.adjoint()).iter().any(|x| x.norm() > 1e-10 * (1.0 + a.norm())) {
            return false;
        }
        is_positive_definite(&a)
    }
}

/// Positive-definiteness of a hermitian matrix via its smallest eigenvalue.
pub fn is_positive_definite(a: &DMatrix<C64>) -> bool {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    eig.eigenvalues.iter().all(|l| *l > 0.0)
}

/// The scalar `q` with `num = q·den` for top-degree forms.
pub fn top_form_quotient(num: &FormAtPoint, den: &FormAtPoint) -> Result<C64> {
    let d = den.top_coeff();
    if d.norm() == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num.top_coeff() / d)
}

/// `Λ^j_ω α` defined by `C(n,j) α∧ω^{n−j} = (Λ^j_ω α) ω^n`.
pub fn contract_j(alpha: &FormAtPoint, omega: &FormAtPoint, j: usize) -> Result<C64> {
    let n = omega.dim();
    if j > n {
        return Err(Error::InvalidInput(format!("j = {j} exceeds n = {n}")));
    }
    if !omega.is_positive_11() {
        return Err(Error::NotPositive);
    }
    let num = alpha.wedge(&omega.power(n - j))?.scale_re(binomial(n, j));
    top_form_quotient(&num, &omega.power(n))
}

/// `Λ_ω α` for a (1,1)-form.
pub fn lambda(alpha: &FormAtPoint, omega: &FormAtPoint) -> Result<C64> {
    contract_j(alpha, omega, 1)
}

/// Binomial coefficient as a float.
pub fn choose(n: usize, k: usize) -> f64 {
    binomial(n, k)
}

/// An `r×r` matrix of forms.
#[derive(Clone, Debug, PartialEq)]
pub struct EndValuedFormAtPoint {
    r: usize,
    entries: Vec<FormAtPoint>,
}

impl EndValuedFormAtPoint {
    /// Builds from entries in row-major order.
    pub fn from_entries(r: usize, entries: Vec<FormAtPoint>) -> EndValuedFormAtPoint {
        assert_eq!(entries.len(), r * r);
        EndValuedFormAtPoint { r, entries }
    }

    /// The (1,1)-form `i Σ C_{ab} dz_a∧dz̄_b` with matrix-valued `C_{ab}`,
    /// given as `coeff[a][b]`.
    pub fn from_matrix_coeffs(n: usize, r: usize, coeff: &[Vec<DMatrix<C64>>]) -> Self {
        let entries = (0..r * r)
            .map(|e| {
                let (i, j) = (e / r, e % r);
                FormAtPoint::from_hermitian(&DMatrix::from_fn(n, n, |a, b| coeff[a][b][(i, j)]))
            })
            .collect();
        EndValuedFormAtPoint { r, entries }
    }

    /// Rank of the endomorphism bundle.
    pub fn rank(&self) -> usize {
        self.r
    }

    /// Entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> &FormAtPoint {
        &self.entries[i * self.r + j]
    }

    /// Entrywise trace.
    pub fn trace(&self) -> FormAtPoint {
        let mut acc = self.entries[0].clone();
        for i in 1..self.r {
            acc = acc.add(self.entry(i, i));
        }
        acc
    }

    /// Matrix product with the wedge product on entries.
    pub fn wedge(&self, other: &EndValuedFormAtPoint) -> Result<EndValuedFormAtPoint> {
        let r = self.r;
        let n = self.entries[0].dim();
        let mut entries = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let mut acc = FormAtPoint::zero(n);
                for k in 0..r {
                    acc = acc.add(&self.entry(i, k).wedge(other.entry(k, j))?);
                }
                entries.push(acc);
            }
        }
        Ok(EndValuedFormAtPoint { r, entries })
    }

    /// Left multiplication by a constant matrix.
    pub fn left_mul(&self, m: &DMatrix<C64>) -> EndValuedFormAtPoint {
        let r = self.r;
        let n = self.entries[0].dim();
        let entries = (0..r * r)
            .map(|e| {
                let (i, j) = (e / r, e % r);
                let mut acc = FormAtPoint::zero(n);
                for k in 0..r {
                    acc = acc.add(&self.entry(k, j).scale(m[(i, k)]));
                }
                acc
            })
            .collect();
        EndValuedFormAtPoint { r, entries }
    }

    /// Traceless part `F − (tr F / r) I`.
    pub fn traceless(&self) -> EndValuedFormAtPoint {
        let t = self.trace().scale_re(1.0 / self.r as f64);
        let mut out = self.clone();
        for i in 0..self.r {
            out.entries[i * self.r + i] = out.entries[i * self.r + i].sub(&t);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid(n: usize) -> FormAtPoint {
        FormAtPoint::from_hermitian(&DMatrix::identity(n, n))
    }

    #[test]
    fn dz_wedge_dz_vanishes() {
        let a = FormAtPoint::dz(2, 0);
        assert_eq!(a.wedge(&a).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn omega_squared_coefficient() {
        let w = euclid(2);
        let w2 = w.wedge(&w).unwrap();
        let basis = FormAtPoint::from_hermitian(&DMatrix::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0),
        ]))
        .wedge(&FormAtPoint::from_hermitian(&DMatrix::from_row_slice(2, 2, &[
            C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0),
        ])))
        .unwrap();
        let q = top_form_quotient(&w2, &basis).unwrap();
        assert!((q - C64::new(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn degree_overflow() {
        let w = euclid(1);
        assert_eq!(w.wedge(&w), Err(Error::DegreeOverflow));
    }

    #[test]
    fn contraction_of_omega() {
        for n in 1..=3 {
            let w = euclid(n);
            for j in 0..=n {
                let v = contract_j(&w.power(j), &w, j).unwrap();
                assert!((v.re - choose(n, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_omega_rejected() {
        let w = FormAtPoint::from_hermitian(&DMatrix::from_diagonal_element(2, 2, C64::new(0.0, 0.0)));
        assert_eq!(contract_j(&euclid(2), &w, 1), Err(Error::NotPositive));
    }

    #[test]
    fn pullback_identity_and_restriction() {
        let a = FormAtPoint::from_hermitian(&DMatrix::from_fn(2, 2, |i, j| {
            C64::new(1.0 + i as f64, j as f64 - i as f64)
        }));
        let p = DMatrix::identity(2, 2);
        assert_eq!(a.pullback(&p), a);
        let r = a.restrict_leading(1);
        assert!((r.hermitian_matrix()[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn traceless_has_zero_trace() {
        let f = EndValuedFormAtPoint::from_entries(
            2,
            vec![euclid(1), FormAtPoint::zero(1), FormAtPoint::zero(1), euclid(1).scale_re(3.0)],
        );
        assert!(f.traceless().trace().sup_norm() < 1e-15);
    }
}
