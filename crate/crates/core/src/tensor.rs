//! Dense complex matrices and operators on tensor powers of `C^n`.
//!
//! Multi-indices are ordered with leg 1 as the most significant digit, so
//! `A (x) B` is the Kronecker product `kron(A, B)`. Legs are numbered from 1.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64 as C;

use crate::error::{LabError, Result};

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<C>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_vec(dim: usize, data: Vec<C>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(LabError::Argument(format!(
                "{} entries cannot fill a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn diag(entries: &[C]) -> Self {
        Self::from_fn(entries.len(), |i, j| if i == j { entries[i] } else { ZERO })
    }

    /// Matrix unit `E_ij`.
    pub fn unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(i, j)] = ONE;
        m
    }

    /// Column vector times row vector.
    pub fn outer(col: &[C], row: &[C]) -> Self {
        assert_eq!(col.len(), row.len());
        Self::from_fn(col.len(), |i, j| col[i] * row[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C] {
        &self.data
    }

    pub fn trace(&self) -> C {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: C) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// `self . other` applied to a vector.
    pub fn apply(&self, v: &[C]) -> Vec<C> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn pow(&self, k: usize) -> Self {
        let mut out = Self::identity(self.dim);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn kron(&self, other: &Matrix) -> Self {
        let (a, b) = (self.dim, other.dim);
        Self::from_fn(a * b, |i, j| self[(i / b, j / b)] * other[(i % b, j % b)])
    }

    /// Largest absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential by scaling and squaring of a Taylor polynomial.
    pub fn exp(&self) -> Self {
        let norm = self.norm1();
        let s = if norm > 0.25 {
            (norm / 0.25).log2().ceil() as i32
        } else {
            0
        };
        let a = self.scale(C::new(0.5f64.powi(s), 0.0));
        let mut term = Self::identity(self.dim);
        let mut sum = term.clone();
        for k in 1..=18 {
            term = (&term * &a).scale(C::new(1.0 / k as f64, 0.0));
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = C;
    fn index(&self, (i, j): (usize, usize)) -> &C {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C {
        &mut self.data[i * self.dim + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * d..(k + 1) * d];
                let o = &mut out[i * d..(i + 1) * d];
                for j in 0..d {
                    o[j] += a * row[j];
                }
            }
        }
        Matrix { dim: d, data: out }
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&Matrix> for Matrix {
    fn sub_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-ONE)
    }
}

impl Mul<C> for &Matrix {
    type Output = Matrix;
    fn mul(self, s: C) -> Matrix {
        self.scale(s)
    }
}

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, s: f64) -> Matrix {
        self.scale(C::new(s, 0.0))
    }
}

/// `[a, b] = ab - ba`.
pub fn commutator(a: &Matrix, b: &Matrix) -> Matrix {
    &(a * b) - &(b * a)
}

/// Basis element `T_a = exp(pi i a1 a2 / n) Q1^a1 Q2^a2`.
///
/// Indices are taken as signed integers; the phase uses them as given, so
/// `belavin_t(n, -a1, -a2)` is the partner of `belavin_t(n, a1, a2)` with
/// `tr(T_a T_-a) = n` for every `n`.
pub fn belavin_t(n: usize, a1: i64, a2: i64) -> Matrix {
    let nn = n as i64;
    let q1 = Matrix::diag(
        &(1..=n)
            .map(|k| C::from_polar(1.0, 2.0 * PI * k as f64 / n as f64))
            .collect::<Vec<_>>(),
    );
    let q2 = Matrix::from_fn(n, |k, l| {
        if (k as i64 - l as i64 + 1).rem_euclid(nn) == 0 {
            ONE
        } else {
            ZERO
        }
    });
    let phase = C::from_polar(1.0, PI * (a1 * a2) as f64 / n as f64);
    let p = &q1.pow(a1.rem_euclid(nn) as usize) * &q2.pow(a2.rem_euclid(nn) as usize);
    p.scale(phase)
}

/// Element of `Mat(n)^{(x) legs}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorOp {
    n: usize,
    legs: usize,
    mat: Matrix,
}

impl TensorOp {
    pub fn new(n: usize, legs: usize, mat: Matrix) -> Result<Self> {
        if n == 0 || legs == 0 || mat.dim() != n.pow(legs as u32) {
            return Err(LabError::Argument(format!(
                "a {}x{} block is not an operator on {legs} legs of dimension {n}",
                mat.dim(),
                mat.dim()
            )));
        }
        Ok(Self { n, legs, mat })
    }

    pub fn identity(n: usize, legs: usize) -> Self {
        Self {
            n,
            legs,
            mat: Matrix::identity(n.pow(legs as u32)),
        }
    }

    pub fn zeros(n: usize, legs: usize) -> Self {
        Self {
            n,
            legs,
            mat: Matrix::zeros(n.pow(legs as u32)),
        }
    }

    /// `factors[0] (x) factors[1] (x) ...`.
    pub fn product(factors: &[&Matrix]) -> Self {
        let n = factors[0].dim();
        let mut mat = factors[0].clone();
        for f in &factors[1..] {
            assert_eq!(f.dim(), n, "factor dimension mismatch");
            mat = mat.kron(f);
        }
        Self {
            n,
            legs: factors.len(),
            mat,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn legs(&self) -> usize {
        self.legs
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C {
        self.mat[(row, col)]
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.max_abs()
    }

    pub fn scale(&self, s: C) -> Self {
        Self {
            n: self.n,
            legs: self.legs,
            mat: self.mat.scale(s),
        }
    }

    pub fn map_matrix(&self, f: impl FnOnce(&Matrix) -> Matrix) -> Self {
        Self {
            n: self.n,
            legs: self.legs,
            mat: f(&self.mat),
        }
    }

    fn check_legs(&self, legs: &[usize], total: usize) -> Result<()> {
        for (i, &p) in legs.iter().enumerate() {
            if p == 0 || p > total {
                return Err(LabError::Argument(format!("leg {p} outside 1..={total}")));
            }
            if legs[..i].contains(&p) {
                return Err(LabError::Argument(format!("leg {p} listed twice")));
            }
        }
        Ok(())
    }

    /// Multi-index of `total` legs built from digits on `chosen` legs and on
    /// the remaining legs in increasing order.
    fn compose_table(&self, chosen: &[usize], total: usize) -> Vec<Vec<usize>> {
        let n = self.n;
        let rest: Vec<usize> = (1..=total).filter(|p| !chosen.contains(p)).collect();
        let a = n.pow(chosen.len() as u32);
        let b = n.pow(rest.len() as u32);
        let mut table = vec![vec![0; b]; a];
        for (s, row) in table.iter_mut().enumerate() {
            for (r, slot) in row.iter_mut().enumerate() {
                let mut digits = vec![0; total];
                let mut x = s;
                for &p in chosen.iter().rev() {
                    digits[p - 1] = x % n;
                    x /= n;
                }
                let mut y = r;
                for &p in rest.iter().rev() {
                    digits[p - 1] = y % n;
                    y /= n;
                }
                *slot = digits.iter().fold(0, |acc, d| acc * n + d);
            }
        }
        table
    }

    /// Operator acting as `self` on the listed legs (in order) of `total`
    /// legs and as the identity elsewhere.
    pub fn embed(&self, positions: &[usize], total: usize) -> Result<TensorOp> {
        if positions.len() != self.legs {
            return Err(LabError::Argument(format!(
                "{} positions for an operator on {} legs",
                positions.len(),
                self.legs
            )));
        }
        self.check_legs(positions, total)?;
        let table = self.compose_table(positions, total);
        let mut out = TensorOp::zeros(self.n, total);
        let a = self.mat.dim();
        for i in 0..a {
            for j in 0..a {
                let v = self.mat[(i, j)];
                if v == ZERO {
                    continue;
                }
                for (&ri, &rj) in table[i].iter().zip(&table[j]) {
                    out.mat[(ri, rj)] = v;
                }
            }
        }
        Ok(out)
    }

    /// Trace over the listed legs.
    pub fn partial_trace(&self, legs: &[usize]) -> Result<TensorOp> {
        self.check_legs(legs, self.legs)?;
        if legs.len() >= self.legs {
            return Err(LabError::Argument(
                "partial trace must keep at least one leg; use full_trace".into(),
            ));
        }
        let keep: Vec<usize> = (1..=self.legs).filter(|p| !legs.contains(p)).collect();
        let table = self.compose_table(&keep, self.legs);
        let a = self.n.pow(keep.len() as u32);
        let mut out = TensorOp::zeros(self.n, keep.len());
        for i in 0..a {
            for j in 0..a {
                out.mat[(i, j)] = table[i]
                    .iter()
                    .zip(&table[j])
                    .map(|(&ri, &rj)| self.mat[(ri, rj)])
                    .sum();
            }
        }
        Ok(out)
    }

    pub fn full_trace(&self) -> C {
        self.mat.trace()
    }

    /// Exchange of the two legs of a two-leg operator, `X_12 -> X_21`.
    pub fn swap(&self) -> TensorOp {
        assert_eq!(self.legs, 2, "swap needs a two-leg operator");
        self.embed(&[2, 1], 2).expect("valid legs")
    }

    /// `(1/n) tr_2(K_12 S_2)` for a two-leg kernel `K`.
    pub fn contract(&self, s: &Matrix) -> Matrix {
        assert_eq!(self.legs, 2, "contraction needs a two-leg kernel");
        let n = self.n;
        assert_eq!(s.dim(), n, "contraction dimension mismatch");
        let inv = 1.0 / n as f64;
        Matrix::from_fn(n, |i, j| {
            let mut acc = ZERO;
            for k in 0..n {
                for l in 0..n {
                    acc += self.mat[(i * n + k, j * n + l)] * s[(l, k)];
                }
            }
            acc * inv
        })
    }

    /// `tr_12(K_12 A_1 B_2)` for a two-leg kernel `K`.
    pub fn pair_trace(&self, a: &Matrix, b: &Matrix) -> C {
        assert_eq!(self.legs, 2, "pair trace needs a two-leg kernel");
        let n = self.n;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        acc += self.mat[(i * n + k, j * n + l)] * a[(j, i)] * b[(l, k)];
                    }
                }
            }
        }
        acc
    }
}

/// Permutation operator `P = sum E_ij (x) E_ji`.
pub fn permutation(n: usize) -> TensorOp {
    let mat = Matrix::from_fn(n * n, |r, c| {
        let (i, k) = (r / n, r % n);
        let (j, l) = (c / n, c % n);
        if i == l && k == j {
            ONE
        } else {
            ZERO
        }
    });
    TensorOp { n, legs: 2, mat }
}

macro_rules! tensor_binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for &TensorOp {
            type Output = TensorOp;
            fn $f(self, rhs: &TensorOp) -> TensorOp {
                assert!(
                    self.n == rhs.n && self.legs == rhs.legs,
                    "tensor shape mismatch"
                );
                TensorOp {
                    n: self.n,
                    legs: self.legs,
                    mat: &self.mat $op &rhs.mat,
                }
            }
        }
    };
}

tensor_binop!(Add, add, +);
tensor_binop!(Sub, sub, -);
tensor_binop!(Mul, mul, *);

impl AddAssign<&TensorOp> for TensorOp {
    fn add_assign(&mut self, rhs: &TensorOp) {
        assert!(self.n == rhs.n && self.legs == rhs.legs, "tensor shape mismatch");
        self.mat += &rhs.mat;
    }
}

impl Mul<C> for &TensorOp {
    type Output = TensorOp;
    fn mul(self, s: C) -> TensorOp {
        self.scale(s)
    }
}

impl Neg for &TensorOp {
    type Output = TensorOp;
    fn neg(self) -> TensorOp {
        self.scale(-ONE)
    }
}

/// `[a, b]` for tensor operators of equal shape.
pub fn tcommutator(a: &TensorOp, b: &TensorOp) -> TensorOp {
    &(a * b) - &(b * a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn sample(n: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            c(a, b)
        })
    }

    #[test]
    fn pauli_basis() {
        let i = c(0.0, 1.0);
        let sx = Matrix::from_vec(2, vec![ZERO, ONE, ONE, ZERO]).unwrap();
        let sy = Matrix::from_vec(2, vec![ZERO, -i, i, ZERO]).unwrap();
        let sz = Matrix::diag(&[ONE, -ONE]);
        assert!((&belavin_t(2, 0, 0) - &Matrix::identity(2)).max_abs() < 1e-15);
        assert!((&belavin_t(2, 1, 0) + &sz).max_abs() < 1e-15);
        assert!((&belavin_t(2, 0, 1) - &sx).max_abs() < 1e-15);
        assert!((&belavin_t(2, 1, 1) - &sy).max_abs() < 1e-15);
    }

    #[test]
    fn trace_orthogonality() {
        for n in [2usize, 3, 4] {
            let ni = n as i64;
            for a1 in 0..ni {
                for a2 in 0..ni {
                    for b1 in 0..ni {
                        for b2 in 0..ni {
                            let t = (&belavin_t(n, a1, a2) * &belavin_t(n, b1, b2)).trace();
                            let want = if (a1 + b1) % ni == 0 && (a2 + b2) % ni == 0 {
                                Some(())
                            } else {
                                None
                            };
                            match want {
                                None => assert!(t.norm() < 1e-12),
                                Some(()) => assert!((t.norm() - n as f64).abs() < 1e-12),
                            }
                        }
                    }
                    let t = (&belavin_t(n, a1, a2) * &belavin_t(n, -a1, -a2)).trace();
                    assert!((t - n as f64).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_action() {
        let p = permutation(2);
        assert!((&(&p * &p) - &TensorOp::identity(2, 2)).max_abs() < 1e-15);
        // e1 (x) e2 has flat index 1, e2 (x) e1 has flat index 2
        assert_eq!(p.get(2, 1), ONE);
        assert_eq!(p.get(1, 2), ONE);
        assert_eq!(p.get(1, 1), ZERO);
        let p3 = permutation(3);
        let m = sample(3, 5);
        let t = (&p3 * &TensorOp::product(&[&Matrix::identity(3), &m]))
            .partial_trace(&[2])
            .unwrap();
        assert!((t.matrix() - &m).max_abs() < 1e-14);
        let t = p3.partial_trace(&[2]).unwrap();
        assert!((t.matrix() - &Matrix::identity(3)).max_abs() < 1e-15);
    }

    #[test]
    fn embed_and_trace() {
        let a = sample(2, 1);
        let b = sample(2, 2);
        let ab = TensorOp::product(&[&a, &b]);
        let swapped = ab.embed(&[2, 1], 2).unwrap();
        assert!((swapped.matrix() - &b.kron(&a)).max_abs() < 1e-15);
        let e = ab.embed(&[1, 3], 3).unwrap();
        assert!((e.matrix() - &a.kron(&Matrix::identity(2)).kron(&b)).max_abs() < 1e-15);
        let t = e.partial_trace(&[2]).unwrap();
        assert!((t.matrix() - &ab.matrix().scale(c(2.0, 0.0))).max_abs() < 1e-14);
        let t = ab.partial_trace(&[2]).unwrap();
        assert!((t.matrix() - &a.scale(b.trace())).max_abs() < 1e-15);
        assert!((TensorOp::identity(2, 3).full_trace() - 8.0).norm() < 1e-15);
        assert!(ab.embed(&[1, 1], 3).is_err());
        assert!(ab.embed(&[1, 4], 3).is_err());
        assert!(ab.partial_trace(&[3]).is_err());
    }

    #[test]
    fn contraction_matches_trace_definition() {
        let n = 3;
        let k = TensorOp::new(n, 2, sample(9, 4)).unwrap();
        let s = sample(3, 8);
        let direct = (&k * &TensorOp::product(&[&Matrix::identity(n), &s]))
            .partial_trace(&[2])
            .unwrap()
            .into_matrix()
            .scale(c(1.0 / 3.0, 0.0));
        assert!((&k.contract(&s) - &direct).max_abs() < 1e-14);
        let a = sample(3, 9);
        let full = (&k * &TensorOp::product(&[&a, &s])).full_trace();
        assert!((k.pair_trace(&a, &s) - full).norm() < 1e-13);
    }

    #[test]
    fn exponential() {
        let a = Matrix::diag(&[c(0.3, 0.1), c(-2.0, 1.0)]);
        let e = a.exp();
        assert!((e[(0, 0)] - c(0.3, 0.1).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - c(-2.0, 1.0).exp()).norm() < 1e-14);
        let m = sample(3, 3).scale(c(6.0, 0.0));
        let prod = &m.exp() * &m.scale(c(-1.0, 0.0)).exp();
        assert!((&prod - &Matrix::identity(3)).max_abs() < 1e-12);
        let nil = Matrix::from_vec(2, vec![ZERO, c(5.0, 0.0), ZERO, ZERO]).unwrap();
        let e = nil.exp();
        assert!((e[(0, 1)] - 5.0).norm() < 1e-13 && (e[(0, 0)] - 1.0).norm() < 1e-15);
    }
}
