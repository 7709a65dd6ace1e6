//! Truncated multivariate Taylor jets with complex coefficients.
//!
//! A [`Jet`] stores the Taylor coefficients of a smooth function of at most
//! [`MAX_VARS`] independent variables about a fixed centre, truncated at a
//! total order. Holomorphic and antiholomorphic coordinates are treated as
//! independent variables, so `∂_a` and `∂_{b̄}` are ordinary partial
//! derivatives. Every jet tracks the order up to which its coefficients are
//! exact; differentiation lowers it by one.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Largest number of independent variables a jet space supports.
pub const MAX_VARS: usize = 6;
/// Largest truncation order a jet space supports.
pub const MAX_ORDER: usize = 6;

type Exps = [u8; MAX_VARS];

/// Monomial layout and multiplication tables for a given (variables, order).
pub struct JetSpace {
    nvars: usize,
    order: usize,
    exps: Vec<Exps>,
    index: HashMap<Exps, usize>,
    deg_end: Vec<usize>,
    products: Vec<(u32, u32, u32)>,
    prod_end: Vec<usize>,
    derivs: Vec<Vec<(u32, u32, f64)>>,
}

impl std::fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JetSpace")
            .field("nvars", &self.nvars)
            .field("order", &self.order)
            .finish()
    }
}

fn registry() -> &'static Mutex<HashMap<(usize, usize), Arc<JetSpace>>> {
    static REG: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();
    REG.get_or_init(|| Mutex::new(HashMap::new()))
}

impl JetSpace {
    /// Shared space for `nvars` variables truncated at total degree `order`.
    pub fn get(nvars: usize, order: usize) -> Arc<JetSpace> {
        assert!(nvars <= MAX_VARS, "at most {MAX_VARS} jet variables");
        assert!(order <= MAX_ORDER, "jet order at most {MAX_ORDER}");
        let mut reg = registry().lock().expect("jet registry poisoned");
        reg.entry((nvars, order))
            .or_insert_with(|| Arc::new(JetSpace::build(nvars, order)))
            .clone()
    }

    fn build(nvars: usize, order: usize) -> JetSpace {
        let mut exps: Vec<Exps> = Vec::new();
        let mut deg_end = Vec::with_capacity(order + 1);
        for d in 0..=order {
            let mut cur = [0u8; MAX_VARS];
            push_degree(nvars, d, 0, &mut cur, &mut exps);
            deg_end.push(exps.len());
        }
        let degree: Vec<usize> = exps
            .iter()
            .map(|e| e.iter().map(|&x| x as usize).sum())
            .collect();
        let index: HashMap<Exps, usize> = exps.iter().enumerate().map(|(i, e)| (*e, i)).collect();

        let mut products = Vec::new();
        for (i, ei) in exps.iter().enumerate() {
            for (j, ej) in exps.iter().enumerate() {
                if degree[i] + degree[j] > order {
                    continue;
                }
                let mut s = [0u8; MAX_VARS];
                for v in 0..MAX_VARS {
                    s[v] = ei[v] + ej[v];
                }
                products.push((i as u32, j as u32, index[&s] as u32));
            }
        }
        products.sort_by_key(|&(_, _, k)| degree[k as usize]);
        let prod_end = (0..=order)
            .map(|d| products.partition_point(|&(_, _, k)| degree[k as usize] <= d))
            .collect();

        let derivs = (0..nvars)
            .map(|v| {
                exps.iter()
                    .enumerate()
                    .filter(|(_, e)| e[v] > 0)
                    .map(|(src, e)| {
                        let mut t = *e;
                        t[v] -= 1;
                        (src as u32, index[&t] as u32, e[v] as f64)
                    })
                    .collect()
            })
            .collect();

        JetSpace {
            nvars,
            order,
            exps,
            index,
            deg_end,
            products,
            prod_end,
            derivs,
        }
    }

    /// Number of independent variables.
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Truncation order.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of stored monomials.
    pub fn len(&self) -> usize {
        self.exps.len()
    }

    /// Always false; a space contains at least the constant monomial.
    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Index of the monomial with the given exponents, if it is stored.
    pub fn index_of(&self, exps: &[u8]) -> Option<usize> {
        if exps.len() > self.nvars {
            return None;
        }
        let mut e = [0u8; MAX_VARS];
        e[..exps.len()].copy_from_slice(exps);
        self.index.get(&e).copied()
    }
}

fn push_degree(nvars: usize, remaining: usize, var: usize, cur: &mut Exps, out: &mut Vec<Exps>) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(*cur);
        }
        return;
    }
    if var + 1 == nvars {
        cur[var] = remaining as u8;
        out.push(*cur);
        cur[var] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        cur[var] = k as u8;
        push_degree(nvars, remaining - k, var + 1, cur, out);
    }
    cur[var] = 0;
}

/// Truncated Taylor expansion of a function about a fixed centre.
#[derive(Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    coeffs: Vec<C64>,
    valid: usize,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("value", &self.value())
            .field("valid", &self.valid)
            .finish()
    }
}

impl Jet {
    /// The zero function.
    pub fn zero(space: &Arc<JetSpace>) -> Jet {
        Jet {
            space: space.clone(),
            coeffs: vec![C64::new(0.0, 0.0); space.len()],
            valid: space.order,
        }
    }

    /// A constant function.
    pub fn constant(space: &Arc<JetSpace>, c: C64) -> Jet {
        let mut j = Jet::zero(space);
        j.coeffs[0] = c;
        j
    }

    /// A real constant function.
    pub fn real(space: &Arc<JetSpace>, c: f64) -> Jet {
        Jet::constant(space, C64::new(c, 0.0))
    }

    /// The coordinate function `center + δ_var`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, center: C64) -> Jet {
        assert!(var < space.nvars, "variable index out of range");
        let mut j = Jet::constant(space, center);
        let mut e = [0u8; MAX_VARS];
        e[var] = 1;
        if let Some(&i) = space.index.get(&e) {
            j.coeffs[i] = C64::new(1.0, 0.0);
        }
        j
    }

    /// Builds a jet from raw Taylor coefficients in the space's monomial order.
    pub fn from_coeffs(space: &Arc<JetSpace>, coeffs: Vec<C64>, valid: usize) -> Jet {
        assert_eq!(coeffs.len(), space.len());
        let mut j = Jet {
            space: space.clone(),
            coeffs,
            valid: valid.min(space.order),
        };
        j.clear_above_valid();
        j
    }

    /// The jet space this jet lives in.
    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    /// Raw Taylor coefficients.
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Order up to which the coefficients are exact.
    pub fn valid_order(&self) -> usize {
        self.valid
    }

    /// Value at the centre.
    pub fn value(&self) -> C64 {
        self.coeffs[0]
    }

    /// Taylor coefficient of the monomial with the given exponents.
    pub fn coeff(&self, exps: &[u8]) -> C64 {
        let d: usize = exps.iter().map(|&x| x as usize).sum();
        assert!(d <= self.valid, "requested coefficient beyond valid order");
        self.space
            .index_of(exps)
            .map(|i| self.coeffs[i])
            .unwrap_or(C64::new(0.0, 0.0))
    }

    /// Value at the centre of the partial derivative with multi-index `exps`.
    pub fn partial(&self, exps: &[u8]) -> C64 {
        let fact: f64 = exps
            .iter()
            .map(|&k| (1..=k as u64).product::<u64>() as f64)
            .product();
        self.coeff(exps) * fact
    }

    /// First partial derivative in variable `var` as a jet of one lower order.
    pub fn diff(&self, var: usize) -> Jet {
        assert!(self.valid >= 1, "cannot differentiate an order-0 jet");
        let mut out = vec![C64::new(0.0, 0.0); self.space.len()];
        for &(src, dst, f) in &self.space.derivs[var] {
            out[dst as usize] += self.coeffs[src as usize] * f;
        }
        Jet::from_coeffs(&self.space, out, self.valid - 1)
    }

    /// Drops coefficients above the given order.
    pub fn truncate(&self, order: usize) -> Jet {
        Jet::from_coeffs(&self.space, self.coeffs.clone(), order.min(self.valid))
    }

    fn clear_above_valid(&mut self) {
        let end = self.space.deg_end[self.valid];
        for c in &mut self.coeffs[end..] {
            *c = C64::new(0.0, 0.0);
        }
    }

    /// Complex conjugate of the function in a chart of dimension `n` whose
    /// variables are `(δz_1..δz_n, δz̄_1..δz̄_n)`.
    pub fn conj_swap(&self, n: usize) -> Jet {
        assert_eq!(self.space.nvars, 2 * n, "conjugation needs a 2n-variable chart");
        let mut out = vec![C64::new(0.0, 0.0); self.space.len()];
        for (i, e) in self.space.exps.iter().enumerate() {
            let mut t = [0u8; MAX_VARS];
            for a in 0..n {
                t[a] = e[n + a];
                t[n + a] = e[a];
            }
            out[self.space.index[&t]] = self.coeffs[i].conj();
        }
        Jet::from_coeffs(&self.space, out, self.valid)
    }

    /// Multiplies every coefficient by `c`.
    pub fn scale(&self, c: C64) -> Jet {
        Jet {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|x| x * c).collect(),
            valid: self.valid,
        }
    }

    /// Multiplies every coefficient by the real number `c`.
    pub fn scale_re(&self, c: f64) -> Jet {
        self.scale(C64::new(c, 0.0))
    }

    /// Adds a constant.
    pub fn add_const(&self, c: C64) -> Jet {
        let mut j = self.clone();
        j.coeffs[0] += c;
        j
    }

    /// Evaluates `Σ t_k (self − self(0))^k`, i.e. composes with a univariate
    /// function whose normalized Taylor coefficients at `self(0)` are `t`.
    pub fn compose(&self, t: &[C64]) -> Jet {
        let mut x = self.clone();
        x.coeffs[0] = C64::new(0.0, 0.0);
        let mut out = Jet::constant(&self.space, t[0]);
        out.valid = self.valid;
        let mut pw = Jet::real(&self.space, 1.0);
        for tk in t.iter().take(self.valid + 1).skip(1) {
            pw = &pw * &x;
            out = &out + &pw.scale(*tk);
        }
        out.valid = self.valid;
        out.clear_above_valid();
        out
    }

    fn taylor_len(&self) -> usize {
        self.valid + 1
    }

    /// Multiplicative inverse.
    pub fn recip(&self) -> Jet {
        let a = self.value();
        let r = -1.0 / a;
        let mut t = Vec::with_capacity(self.taylor_len());
        let mut c = 1.0 / a;
        for _ in 0..self.taylor_len() {
            t.push(c);
            c *= r;
        }
        self.compose(&t)
    }

    /// Principal natural logarithm.
    pub fn ln(&self) -> Jet {
        let a = self.value();
        let mut t = vec![a.ln()];
        let mut p = C64::new(1.0, 0.0);
        for k in 1..self.taylor_len() {
            p /= a;
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            t.push(p * (s / k as f64));
        }
        self.compose(&t)
    }

    /// Exponential.
    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let mut t = Vec::with_capacity(self.taylor_len());
        let mut f = 1.0;
        for k in 0..self.taylor_len() {
            if k > 0 {
                f *= k as f64;
            }
            t.push(e / f);
        }
        self.compose(&t)
    }

    /// Principal real power.
    pub fn powf(&self, p: f64) -> Jet {
        let a = self.value();
        let mut t = Vec::with_capacity(self.taylor_len());
        let mut binom = 1.0;
        let base = a.powf(p);
        let mut ak = C64::new(1.0, 0.0);
        for k in 0..self.taylor_len() {
            if k > 0 {
                binom *= (p - (k as f64 - 1.0)) / k as f64;
                ak *= a;
            }
            t.push(base * binom / ak);
        }
        self.compose(&t)
    }

    /// Principal square root.
    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    /// Sine.
    pub fn sin(&self) -> Jet {
        self.trig(0)
    }

    /// Cosine.
    pub fn cos(&self) -> Jet {
        self.trig(1)
    }

    fn trig(&self, shift: usize) -> Jet {
        let a = self.value();
        let cyc = [a.sin(), a.cos(), -a.sin(), -a.cos()];
        let mut t = Vec::with_capacity(self.taylor_len());
        let mut f = 1.0;
        for k in 0..self.taylor_len() {
            if k > 0 {
                f *= k as f64;
            }
            t.push(cyc[(k + shift) % 4] / f);
        }
        self.compose(&t)
    }

    /// Integer power by repeated multiplication.
    pub fn powi(&self, n: u32) -> Jet {
        let mut out = Jet::real(&self.space, 1.0);
        out.valid = self.valid;
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    fn binary(&self, other: &Jet, f: impl Fn(C64, C64) -> C64) -> Jet {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space), "jets from different spaces");
        let valid = self.valid.min(other.valid);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Jet::from_coeffs(&self.space, coeffs, valid)
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.binary(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.binary(rhs, |a, b| a - b)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        debug_assert!(Arc::ptr_eq(&self.space, &rhs.space), "jets from different spaces");
        let valid = self.valid.min(rhs.valid);
        let sp = &self.space;
        let mut out = vec![C64::new(0.0, 0.0); sp.len()];
        for &(i, j, k) in &sp.products[..sp.prod_end[valid]] {
            out[k as usize] += self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        Jet {
            space: sp.clone(),
            coeffs: out,
            valid,
        }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale_re(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        (&self).neg()
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale_re(rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale_re(rhs)
    }
}

impl Mul<C64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: C64) -> Jet {
        self.scale(rhs)
    }
}

impl Mul<C64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: C64) -> Jet {
        self.scale(rhs)
    }
}

/// Minimal ring interface shared by complex scalars and jets, used by
/// recurrences that must run on both.
pub trait Ring: Clone {
    /// Sum.
    fn radd(&self, other: &Self) -> Self;
    /// Difference.
    fn rsub(&self, other: &Self) -> Self;
    /// Product.
    fn rmul(&self, other: &Self) -> Self;
    /// Product with a real scalar.
    fn rscale(&self, c: f64) -> Self;
    /// Product with a complex scalar.
    fn rcscale(&self, c: C64) -> Self;
}

impl Ring for C64 {
    fn radd(&self, o: &Self) -> Self {
        self + o
    }
    fn rsub(&self, o: &Self) -> Self {
        self - o
    }
    fn rmul(&self, o: &Self) -> Self {
        self * o
    }
    fn rscale(&self, c: f64) -> Self {
        self * c
    }
    fn rcscale(&self, c: C64) -> Self {
        self * c
    }
}

impl Ring for Jet {
    fn radd(&self, o: &Self) -> Self {
        self + o
    }
    fn rsub(&self, o: &Self) -> Self {
        self - o
    }
    fn rmul(&self, o: &Self) -> Self {
        self * o
    }
    fn rscale(&self, c: f64) -> Self {
        self.scale_re(c)
    }
    fn rcscale(&self, c: C64) -> Self {
        self.scale(c)
    }
}

/// Square matrix of jets.
#[derive(Clone, Debug)]
pub struct JetMatrix {
    n: usize,
    data: Vec<Jet>,
}

impl JetMatrix {
    /// Builds an `n×n` matrix from a generator.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Jet) -> JetMatrix {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        JetMatrix { n, data }
    }

    /// The identity matrix.
    pub fn identity(space: &Arc<JetSpace>, n: usize) -> JetMatrix {
        JetMatrix::from_fn(n, |i, j| Jet::real(space, if i == j { 1.0 } else { 0.0 }))
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Entry `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> &Jet {
        &self.data[i * self.n + j]
    }

    /// Mutable entry `(i, j)`.
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Jet {
        &mut self.data[i * self.n + j]
    }

    /// Leading `k×k` block.
    pub fn leading(&self, k: usize) -> JetMatrix {
        JetMatrix::from_fn(k, |i, j| self.get(i, j).clone())
    }

    /// Conjugate transpose, where conjugation of a jet swaps the holomorphic
    /// and antiholomorphic variables of a chart of dimension `n`.
    pub fn adjoint(&self, n: usize) -> JetMatrix {
        JetMatrix::from_fn(self.n, |i, j| self.get(j, i).conj_swap(n))
    }

    /// Entrywise map.
    pub fn map(&self, f: impl Fn(&Jet) -> Jet) -> JetMatrix {
        JetMatrix {
            n: self.n,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Matrix of values at the centre.
    pub fn value(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j).value())
    }

    /// Matrix product.
    pub fn matmul(&self, other: &JetMatrix) -> JetMatrix {
        let n = self.n;
        JetMatrix::from_fn(n, |i, j| {
            let mut acc = self.get(i, 0) * other.get(0, j);
            for k in 1..n {
                acc = acc + self.get(i, k) * other.get(k, j);
            }
            acc
        })
    }

    /// Entrywise sum.
    pub fn add(&self, other: &JetMatrix) -> JetMatrix {
        JetMatrix::from_fn(self.n, |i, j| self.get(i, j) + other.get(i, j))
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &JetMatrix) -> JetMatrix {
        JetMatrix::from_fn(self.n, |i, j| self.get(i, j) - other.get(i, j))
    }

    /// Trace.
    pub fn trace(&self) -> Jet {
        let mut acc = self.get(0, 0).clone();
        for i in 1..self.n {
            acc = acc + self.get(i, i);
        }
        acc
    }

    /// Inverse and determinant by Gauss–Jordan elimination, pivoting on the
    /// largest centre value. Returns `None` for a singular centre value.
    pub fn inverse_det(&self) -> Option<(JetMatrix, Jet)> {
        let n = self.n;
        let space = self.data[0].space().clone();
        let mut a = self.clone();
        let mut inv = JetMatrix::identity(&space, n);
        let mut det = Jet::real(&space, 1.0);
        let scale = self
            .data
            .iter()
            .map(|x| x.value().norm())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| {
                    a.get(x, col)
                        .value()
                        .norm()
                        .total_cmp(&a.get(y, col).value().norm())
                })
                .unwrap_or(col);
            if a.get(piv, col).value().norm() <= 1e-14 * scale {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    inv.data.swap(piv * n + j, col * n + j);
                }
                det = -det;
            }
            let p = a.get(col, col).clone();
            det = &det * &p;
            let pr = p.recip();
            for j in 0..n {
                *a.get_mut(col, j) = a.get(col, j) * &pr;
                *inv.get_mut(col, j) = inv.get(col, j) * &pr;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a.get(i, col).clone();
                for j in 0..n {
                    *a.get_mut(i, j) = a.get(i, j) - &f * a.get(col, j);
                    *inv.get_mut(i, j) = inv.get(i, j) - &f * inv.get(col, j);
                }
            }
        }
        Some((inv, det))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(JetSpace::get(6, 4).len(), 210);
        assert_eq!(JetSpace::get(4, 4).len(), 70);
        assert_eq!(JetSpace::get(0, 3).len(), 1);
    }

    #[test]
    fn product_of_variables() {
        let sp = JetSpace::get(2, 3);
        let x = Jet::variable(&sp, 0, c(2.0, 0.0));
        let y = Jet::variable(&sp, 1, c(-1.0, 0.5));
        let p = &x * &y;
        assert!((p.value() - c(-2.0, 1.0)).norm() < 1e-15);
        assert!((p.partial(&[1, 1]) - c(1.0, 0.0)).norm() < 1e-15);
        assert!((p.partial(&[1, 0]) - c(-1.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn log_of_exp_is_identity() {
        let sp = JetSpace::get(2, 5);
        let x = Jet::variable(&sp, 0, c(0.3, 0.1));
        let y = Jet::variable(&sp, 1, c(-0.2, 0.4));
        let f = &(&x * &y) + &x.sin();
        let g = f.exp().ln();
        for (a, b) in f.coeffs().iter().zip(g.coeffs()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn recip_and_powers() {
        let sp = JetSpace::get(1, 6);
        let x = Jet::variable(&sp, 0, c(1.5, 0.0));
        let r = x.recip();
        for k in 0..=6u8 {
            let expect = (-1.0f64).powi(k as i32) * 1.5f64.powi(-(k as i32) - 1);
            assert!((r.coeff(&[k]).re - expect).abs() < 1e-13);
        }
        let s = x.sqrt();
        let back = &s * &s;
        assert!((back.coeff(&[1]).re - 1.0).abs() < 1e-13);
        assert!(back.coeff(&[3]).norm() < 1e-13);
        let p = x.powf(3.0);
        let q = x.powi(3);
        for (a, b) in p.coeffs().iter().zip(q.coeffs()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn diff_lowers_valid_order() {
        let sp = JetSpace::get(2, 4);
        let x = Jet::variable(&sp, 0, c(0.2, 0.0));
        let f = x.powi(4);
        let d = f.diff(0);
        assert_eq!(d.valid_order(), 3);
        assert!((d.partial(&[0, 0]) - c(4.0 * 0.2f64.powi(3), 0.0)).norm() < 1e-14);
        assert!((d.partial(&[3, 0]) - c(24.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn matrix_inverse() {
        let sp = JetSpace::get(2, 3);
        let x = Jet::variable(&sp, 0, c(0.1, 0.2));
        let y = Jet::variable(&sp, 1, c(0.3, -0.1));
        let m = JetMatrix::from_fn(3, |i, j| {
            let base = Jet::real(&sp, if i == j { 2.0 } else { 0.3 });
            &base + &(&x * (i as f64 + 1.0)) + &(&y * &x) * (j as f64)
        });
        let (inv, det) = m.inverse_det().unwrap();
        let prod = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = prod.get(i, j);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((e.value() - target).norm() < 1e-13);
                assert!(e.coeff(&[1, 1]).norm() < 1e-12);
                assert!(e.coeff(&[2, 1]).norm() < 1e-12);
            }
        }
        let d = m.value().determinant();
        assert!((det.value() - d).norm() < 1e-13);
    }
}
