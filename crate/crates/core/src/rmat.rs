//! R-matrix families and their quasi-classical expansion data.
//!
//! `eval_r` returns the matrices in their standard printed normalization.
//! Everything downstream (classical r-matrix, m, the constant terms and all
//! models) uses the rescaled matrix `R^h(kappa z / n)`, where `kappa` is the
//! residue coefficient of the printed family. The rescaling preserves the
//! associative Yang-Baxter equation and fixes `Res_{z=0} r(z) = n P` for every
//! family, so that `L(S, z) = (1/n) tr_2(r_12(z) S_2)` has residue `S`.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{singular, LabError, Result};
use crate::specfn::{
    e1_jet, kronecker_phi_with, phi_partial_with, rho_dz, wp_shift, EllipticModulus, Flavor,
};
use crate::tensor::{belavin_t, permutation, Matrix, TensorOp};

/// Distance to a pole below which the R-matrix evaluators refuse to work.
pub const EVAL_GUARD: f64 = 1e-9;

/// Radius and node count of the circle used to read off Laurent coefficients
/// in the Planck constant.
pub const HBAR_CONTOUR: (f64, usize) = (0.25, 32);
/// Circle used to read off the constant terms at `z = 0`.
pub const Z_CONTOUR: (f64, usize) = (0.5, 32);
/// Residue quadrature: radius and node count.
pub const RESIDUE_CONTOUR: (f64, usize) = (0.02, 16);

/// Step for finite-difference z-derivatives where no closed form exists.
pub const FD_STEP: f64 = 1e-5;

const ORACLE_STEP: f64 = 1e-3;
const ORACLE_TOLERANCE: f64 = 1e-5;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// One R-matrix family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RFamily {
    /// Baxter-Belavin elliptic R-matrix in `Mat(n)`.
    Elliptic { n: usize, tau: EllipticModulus },
    /// Seven-vertex trigonometric deformation, `n = 2`.
    Trig7v { lambda: C },
    /// Eleven-vertex rational deformation, `n = 2`.
    Rat11v,
    /// Yang's R-matrix `1/h + P/z` in `Mat(n)`.
    Yang { n: usize },
}

impl RFamily {
    pub fn elliptic(n: usize, tau: C) -> Result<Self> {
        let f = RFamily::Elliptic {
            n,
            tau: EllipticModulus::new(tau)?,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn trig7v(lambda: C) -> Result<Self> {
        let f = RFamily::Trig7v { lambda };
        f.validate()?;
        Ok(f)
    }

    pub fn rat11v() -> Self {
        RFamily::Rat11v
    }

    pub fn yang(n: usize) -> Result<Self> {
        let f = RFamily::Yang { n };
        f.validate()?;
        Ok(f)
    }

    /// Checks parameters, for descriptors that came from a file.
    pub fn validate(&self) -> Result<()> {
        match self {
            RFamily::Elliptic { n, .. } | RFamily::Yang { n } if *n == 0 => {
                Err(LabError::Argument("matrix size n must be positive".into()))
            }
            RFamily::Trig7v { lambda } if !(lambda.re.is_finite() && lambda.im.is_finite()) => {
                Err(LabError::Argument("lambda must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Size of the matrices on one leg.
    pub fn n(&self) -> usize {
        match self {
            RFamily::Elliptic { n, .. } | RFamily::Yang { n } => *n,
            RFamily::Trig7v { .. } | RFamily::Rat11v => 2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RFamily::Elliptic { .. } => "elliptic",
            RFamily::Trig7v { .. } => "trig7v",
            RFamily::Rat11v => "rat11v",
            RFamily::Yang { .. } => "yang",
        }
    }

    /// Short human-readable descriptor.
    pub fn descriptor(&self) -> String {
        match self {
            RFamily::Elliptic { n, tau } => {
                let t = tau.tau();
                format!("elliptic(n={n}, tau={}{:+}i)", t.re, t.im)
            }
            RFamily::Trig7v { lambda } => format!("trig7v(lambda={}{:+}i)", lambda.re, lambda.im),
            RFamily::Rat11v => "rat11v".into(),
            RFamily::Yang { n } => format!("yang(n={n})"),
        }
    }

    pub fn modulus(&self) -> Option<EllipticModulus> {
        match self {
            RFamily::Elliptic { tau, .. } => Some(*tau),
            _ => None,
        }
    }

    /// Coefficient `kappa` in `Res_{z=0} r(z) = kappa P` for the printed matrix.
    pub fn residue_coefficient(&self) -> f64 {
        match self {
            RFamily::Elliptic { n, .. } => *n as f64,
            _ => 1.0,
        }
    }

    /// Distance from a spectral parameter to the poles of the rescaled r(z).
    pub fn spectral_distance(&self, z: C) -> f64 {
        match self {
            RFamily::Elliptic { tau, .. } => tau.lattice_distance(z),
            // coth(z/2) has poles at 2 pi i k
            RFamily::Trig7v { .. } => {
                let k = (z.im / (2.0 * PI)).round();
                (z - c(0.0, 2.0 * PI * k)).norm()
            }
            RFamily::Rat11v | RFamily::Yang { .. } => z.norm(),
        }
    }

    /// Distance from a Planck constant to the poles of the R-matrix in `h`.
    pub fn hbar_distance(&self, h: C) -> f64 {
        match self {
            RFamily::Elliptic { n, tau } => {
                let mut d = f64::INFINITY;
                for (a1, a2) in indices(*n) {
                    d = d.min(tau.lattice_distance(h + omega(*n, tau, a1, a2)));
                }
                d
            }
            RFamily::Trig7v { .. } => {
                let k = (h.im / PI).round();
                (h - c(0.0, PI * k)).norm()
            }
            RFamily::Rat11v | RFamily::Yang { .. } => h.norm(),
        }
    }
}

fn indices(n: usize) -> impl Iterator<Item = (i64, i64)> {
    let n = n as i64;
    (0..n).flat_map(move |a1| (0..n).map(move |a2| (a1, a2)))
}

fn omega(n: usize, tau: &EllipticModulus, a1: i64, a2: i64) -> C {
    (tau.tau() * a2 as f64 + a1 as f64) / n as f64
}

/// `T_a (x) T_-a` for every `a`, with the z-dependent phase frequency.
fn elliptic_terms(n: usize) -> Vec<(i64, i64, Matrix)> {
    indices(n)
        .map(|(a1, a2)| {
            let k = belavin_t(n, a1, a2).kron(&belavin_t(n, -a1, -a2));
            (a1, a2, k)
        })
        .collect()
}

fn accumulate(out: &mut Matrix, k: &Matrix, w: C) {
    *out += &k.scale(w);
}

fn check_finite(t: TensorOp, what: &str, at: C) -> Result<TensorOp> {
    if t.matrix().is_finite() {
        Ok(t)
    } else {
        Err(singular(what, at))
    }
}

/// Printed R-matrix `R^h_12(z)`.
pub fn eval_r(family: &RFamily, hbar: C, z: C) -> Result<TensorOp> {
    family.validate()?;
    let n = family.n();
    let out = match family {
        RFamily::Elliptic { tau, .. } => {
            let fl = Flavor::Elliptic(*tau);
            let mut acc = Matrix::zeros(n * n);
            for (a1, a2, k) in elliptic_terms(n) {
                let ph = (c(0.0, 2.0 * PI * a2 as f64 / n as f64) * z).exp();
                let v = kronecker_phi_with(fl, z, omega(n, tau, a1, a2) + hbar, EVAL_GUARD)?;
                accumulate(&mut acc, &k, ph * v);
            }
            TensorOp::new(n, 2, acc)?
        }
        RFamily::Trig7v { lambda } => {
            guard(family.spectral_distance(2.0 * z), "trig7v: z at a pole", z)?;
            guard(family.hbar_distance(hbar), "trig7v: hbar at a pole", hbar)?;
            let coth = |x: C| x.cosh() / x.sinh();
            let mut m = Matrix::zeros(4);
            m[(0, 0)] = coth(z) + coth(hbar);
            m[(3, 3)] = m[(0, 0)];
            m[(1, 1)] = 1.0 / hbar.sinh();
            m[(2, 2)] = m[(1, 1)];
            m[(1, 2)] = 1.0 / z.sinh();
            m[(2, 1)] = m[(1, 2)];
            m[(3, 0)] = -4.0 * (-2.0 * lambda).exp() * (z + hbar).sinh();
            TensorOp::new(2, 2, m)?
        }
        RFamily::Rat11v => {
            guard(z.norm(), "rat11v: z at the pole", z)?;
            guard(hbar.norm(), "rat11v: hbar at the pole", hbar)?;
            let mut m = Matrix::zeros(4);
            m[(0, 0)] = 1.0 / hbar + 1.0 / z;
            m[(3, 3)] = m[(0, 0)];
            m[(1, 1)] = 1.0 / hbar;
            m[(2, 2)] = m[(1, 1)];
            m[(1, 2)] = 1.0 / z;
            m[(2, 1)] = m[(1, 2)];
            m[(1, 0)] = -z - hbar;
            m[(2, 0)] = -z - hbar;
            m[(3, 0)] = -z * z * z - hbar * hbar * hbar - 2.0 * z * z * hbar - 2.0 * z * hbar * hbar;
            m[(3, 1)] = z + hbar;
            m[(3, 2)] = z + hbar;
            TensorOp::new(2, 2, m)?
        }
        RFamily::Yang { .. } => {
            guard(z.norm(), "yang: z at the pole", z)?;
            guard(hbar.norm(), "yang: hbar at the pole", hbar)?;
            &TensorOp::identity(n, 2).scale(1.0 / hbar) + &permutation(n).scale(1.0 / z)
        }
    };
    check_finite(out, "R-matrix evaluation", z)
}

fn guard(dist: f64, what: &str, at: C) -> Result<()> {
    if dist < EVAL_GUARD {
        Err(singular(what, at))
    } else {
        Ok(())
    }
}

/// Rescaled R-matrix `R^h(kappa z / n)` with `Res_z r = n P`.
pub fn eval_r_normalized(family: &RFamily, hbar: C, z: C) -> Result<TensorOp> {
    let s = family.residue_coefficient() / family.n() as f64;
    eval_r(family, hbar, z * s)
}

/// Mean of `f` over `points` equispaced nodes of a circle, weighted by
/// `w^-power` where `w` is the offset from the centre: the Laurent
/// coefficient of order `power` for functions analytic on an annulus.
pub fn laurent_coefficient(
    f: impl Fn(C) -> Result<TensorOp>,
    center: C,
    radius: f64,
    points: usize,
    power: i32,
) -> Result<TensorOp> {
    let mut acc: Option<TensorOp> = None;
    for q in 0..points {
        let w = C::from_polar(radius, 2.0 * PI * (q as f64 + 0.5) / points as f64);
        let term = f(center + w)?.scale(w.powi(-power) / points as f64);
        match acc.as_mut() {
            Some(a) => *a += &term,
            None => acc = Some(term),
        }
    }
    Ok(acc.expect("at least one node"))
}

/// Residue of `f` at `center` by trapezoidal quadrature.
pub fn residue(
    f: impl Fn(C) -> Result<TensorOp>,
    center: C,
    radius: f64,
    points: usize,
) -> Result<TensorOp> {
    laurent_coefficient(f, center, radius, points, -1)
}

/// Where the expansion data come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionSource {
    /// Closed forms for the elliptic family, exact contour extraction otherwise.
    Exact,
    /// Richardson-extrapolated limits in the Planck constant for every family.
    Oracle,
}

/// One sample of the limit-extraction oracle.
#[derive(Clone, Debug)]
pub struct ExpansionSample {
    pub r: TensorOp,
    pub m: TensorOp,
    /// Disagreement between two successive extrapolations.
    pub disagreement: f64,
}

/// `r(z)` and `m(z)` by symmetric two-step Richardson extrapolation of
/// `R^h(z) - 1/h` at `h = 1e-3` and `5e-4`. A second extrapolation at half the
/// step guards against instability.
pub fn expansion_oracle(family: &RFamily, z: C) -> Result<ExpansionSample> {
    let n = family.n();
    let one = TensorOp::identity(n, 2);
    let parts = |h: f64| -> Result<(TensorOp, TensorOp)> {
        let h = c(h, 0.0);
        let gp = &eval_r_normalized(family, h, z)? - &one.scale(1.0 / h);
        let gm = &eval_r_normalized(family, -h, z)? - &one.scale(-1.0 / h);
        let a = (&gp + &gm).scale(c(0.5, 0.0));
        let b = (&gp - &gm).scale(0.5 / h);
        Ok((a, b))
    };
    let rich = |x: &TensorOp, y: &TensorOp| (&y.scale(c(4.0, 0.0)) - x).scale(c(1.0 / 3.0, 0.0));
    let (a1, b1) = parts(ORACLE_STEP)?;
    let (a2, b2) = parts(ORACLE_STEP / 2.0)?;
    let (a3, b3) = parts(ORACLE_STEP / 4.0)?;
    let r = rich(&a1, &a2);
    let m = rich(&b1, &b2);
    let disagreement = (&r - &rich(&a2, &a3))
        .max_abs()
        .max((&m - &rich(&b2, &b3)).max_abs());
    if disagreement > ORACLE_TOLERANCE || !disagreement.is_finite() {
        return Err(LabError::Instability(disagreement));
    }
    Ok(ExpansionSample { r, m, disagreement })
}

/// Classical r-matrix and m-coefficient together with the constant terms
/// `r0` and `m(0)` of the expansion at `z = 0`.
#[derive(Clone, Debug)]
pub struct Expansion {
    family: RFamily,
    source: ExpansionSource,
    r0: TensorOp,
    m0: TensorOp,
}

impl Expansion {
    pub fn new(family: &RFamily) -> Result<Self> {
        Self::with_source(family, ExpansionSource::Exact)
    }

    pub fn with_source(family: &RFamily, source: ExpansionSource) -> Result<Self> {
        family.validate()?;
        let mut e = Expansion {
            family: family.clone(),
            source,
            r0: TensorOp::zeros(family.n(), 2),
            m0: TensorOp::zeros(family.n(), 2),
        };
        match (family, source) {
            (RFamily::Elliptic { n, tau }, ExpansionSource::Exact) => {
                let (r0, m0) = elliptic_constants(*n, tau);
                e.r0 = r0;
                e.m0 = m0;
            }
            _ => {
                let (rad, q) = Z_CONTOUR;
                let zero = c(0.0, 0.0);
                e.r0 = laurent_coefficient(|z| e.r(z), zero, rad, q, 0)?;
                e.m0 = laurent_coefficient(|z| e.m(z), zero, rad, q, 0)?;
            }
        }
        Ok(e)
    }

    pub fn family(&self) -> &RFamily {
        &self.family
    }

    pub fn source(&self) -> ExpansionSource {
        self.source
    }

    pub fn n(&self) -> usize {
        self.family.n()
    }

    /// Constant term of `r(z) - n P / z` at `z = 0`.
    pub fn r0(&self) -> &TensorOp {
        &self.r0
    }

    /// `m(0)`.
    pub fn m0(&self) -> &TensorOp {
        &self.m0
    }

    fn check_z(&self, z: C) -> Result<()> {
        if self.family.spectral_distance(z) < EVAL_GUARD {
            Err(singular("classical r-matrix: z at a pole", z))
        } else {
            Ok(())
        }
    }

    fn hbar_coefficient(&self, z: C, power: i32) -> Result<TensorOp> {
        let (rad, q) = HBAR_CONTOUR;
        laurent_coefficient(
            |h| eval_r_normalized(&self.family, h, z),
            c(0.0, 0.0),
            rad,
            q,
            power,
        )
    }

    /// Classical r-matrix `r_12(z)`.
    pub fn r(&self, z: C) -> Result<TensorOp> {
        self.check_z(z)?;
        match (&self.family, self.source) {
            (RFamily::Elliptic { n, tau }, ExpansionSource::Exact) => elliptic_r(*n, tau, z),
            (_, ExpansionSource::Exact) => self.hbar_coefficient(z, 0),
            (_, ExpansionSource::Oracle) => Ok(expansion_oracle(&self.family, z)?.r),
        }
    }

    /// `m_12(z)`, the next coefficient of the expansion.
    pub fn m(&self, z: C) -> Result<TensorOp> {
        self.check_z(z)?;
        match (&self.family, self.source) {
            (RFamily::Elliptic { n, tau }, ExpansionSource::Exact) => elliptic_m(*n, tau, z),
            (_, ExpansionSource::Exact) => self.hbar_coefficient(z, 1),
            (_, ExpansionSource::Oracle) => Ok(expansion_oracle(&self.family, z)?.m),
        }
    }

    /// `d r_12(z) / dz`; analytic for the elliptic family.
    pub fn r_dz(&self, z: C) -> Result<TensorOp> {
        self.check_z(z)?;
        match (&self.family, self.source) {
            (RFamily::Elliptic { n, tau }, ExpansionSource::Exact) => elliptic_r_dz(*n, tau, z),
            _ => central_difference(|w| self.r(w), z),
        }
    }

    /// `d m_12(z) / dz`; analytic for the elliptic family.
    pub fn m_dz(&self, z: C) -> Result<TensorOp> {
        self.check_z(z)?;
        match (&self.family, self.source) {
            (RFamily::Elliptic { n, tau }, ExpansionSource::Exact) => elliptic_m_dz(*n, tau, z),
            _ => central_difference(|w| self.m(w), z),
        }
    }
}

fn central_difference(f: impl Fn(C) -> Result<TensorOp>, z: C) -> Result<TensorOp> {
    let h = FD_STEP;
    Ok((&f(z + h)? - &f(z - h)?).scale(c(0.5 / h, 0.0)))
}

/// `(r(z), m(z))` from the exact sources.
pub fn classical_parts(family: &RFamily, z: C) -> Result<(TensorOp, TensorOp)> {
    let e = Expansion::new(family)?;
    Ok((e.r(z)?, e.m(z)?))
}

/// `(r0, m(0))` from the exact sources.
pub fn constant_parts(family: &RFamily) -> Result<(TensorOp, TensorOp)> {
    let e = Expansion::new(family)?;
    Ok((e.r0, e.m0))
}

fn elliptic_sum(
    n: usize,
    tau: &EllipticModulus,
    z: C,
    identity_part: C,
    mut term: impl FnMut(C, C) -> Result<C>,
) -> Result<TensorOp> {
    let mut acc = Matrix::identity(n * n).scale(identity_part);
    for (a1, a2, k) in elliptic_terms(n) {
        if a1 == 0 && a2 == 0 {
            continue;
        }
        let nu = c(0.0, 2.0 * PI * a2 as f64 / n as f64);
        let w = term(nu, omega(n, tau, a1, a2))?;
        accumulate(&mut acc, &k, (nu * z).exp() * w);
    }
    check_finite(TensorOp::new(n, 2, acc)?, "elliptic expansion", z)
}

fn elliptic_r(n: usize, tau: &EllipticModulus, z: C) -> Result<TensorOp> {
    let fl = Flavor::Elliptic(*tau);
    elliptic_sum(n, tau, z, e1_jet(z, tau).0, |_, w| {
        kronecker_phi_with(fl, z, w, EVAL_GUARD)
    })
}

fn elliptic_m(n: usize, tau: &EllipticModulus, z: C) -> Result<TensorOp> {
    let fl = Flavor::Elliptic(*tau);
    let (e1, de1, _) = e1_jet(z, tau);
    let rho = (e1 * e1 + de1 - wp_shift(tau)) / 2.0;
    elliptic_sum(n, tau, z, rho, |_, w| phi_partial_with(fl, z, w, EVAL_GUARD))
}

fn elliptic_r_dz(n: usize, tau: &EllipticModulus, z: C) -> Result<TensorOp> {
    let fl = Flavor::Elliptic(*tau);
    let de1 = e1_jet(z, tau).1;
    elliptic_sum(n, tau, z, de1, |nu, w| {
        let phi = kronecker_phi_with(fl, z, w, EVAL_GUARD)?;
        let dphi = phi * (e1_jet(z + w, tau).0 - e1_jet(z, tau).0);
        Ok(nu * phi + dphi)
    })
}

fn elliptic_m_dz(n: usize, tau: &EllipticModulus, z: C) -> Result<TensorOp> {
    let fl = Flavor::Elliptic(*tau);
    elliptic_sum(n, tau, z, rho_dz(z, tau), |nu, w| {
        let phi = kronecker_phi_with(fl, z, w, EVAL_GUARD)?;
        let (e_zw, de_zw, _) = e1_jet(z + w, tau);
        let e_w = e1_jet(w, tau).0;
        let e_z = e1_jet(z, tau).0;
        let f = phi * (e_zw - e_w);
        let dphi = phi * (e_zw - e_z);
        // d/dz f(z, w) = phi_z (E1(z+w) - E1(w)) + phi E1'(z+w)
        Ok(nu * f + dphi * (e_zw - e_w) + phi * de_zw)
    })
}

fn elliptic_constants(n: usize, tau: &EllipticModulus) -> (TensorOp, TensorOp) {
    let mut r0 = Matrix::zeros(n * n);
    let mut m0 = Matrix::identity(n * n).scale(wp_shift(tau));
    for (a1, a2, k) in elliptic_terms(n) {
        if a1 == 0 && a2 == 0 {
            continue;
        }
        let w = omega(n, tau, a1, a2);
        let (e1, de1, _) = e1_jet(w, tau);
        accumulate(&mut r0, &k, c(0.0, 2.0 * PI * a2 as f64 / n as f64) + e1);
        // -E2 = E1'
        accumulate(&mut m0, &k, de1);
    }
    (
        TensorOp::new(n, 2, r0).expect("shape"),
        TensorOp::new(n, 2, m0).expect("shape"),
    )
}

/// `F` with `R_12^h(z) R_21^h(-z) = F 1 (x) 1`, and the off-identity residual.
pub fn unitarity_scalar(family: &RFamily, hbar: C, z: C) -> Result<(C, f64)> {
    let x = &eval_r(family, hbar, z)? * &eval_r(family, hbar, -z)?.swap();
    let d = x.matrix().dim();
    let f = x.full_trace() / d as f64;
    let residual = (x.matrix() - &Matrix::identity(d).scale(f)).max_abs();
    if !(residual <= 1e-8 * f.norm().max(1.0)) {
        return Err(LabError::NonUnitary(residual));
    }
    Ok((f, residual))
}

/// Closed form of the unitarity scalar for each family, with a label.
///
/// Determined by comparing against `unitarity_scalar`: the elliptic family
/// takes `n^2 phi(n h, z) phi(n h, -z)`, the rational ones `1/h^2 - 1/z^2`
/// and the seven-vertex matrix `coth^2 h - coth^2 z`, independent of lambda.
pub fn unitarity_closed_form(family: &RFamily, hbar: C, z: C) -> Result<(C, &'static str)> {
    Ok(match family {
        RFamily::Elliptic { n, tau } => {
            let fl = Flavor::Elliptic(*tau);
            let nh = hbar * *n as f64;
            let v = (*n * *n) as f64
                * kronecker_phi_with(fl, nh, z, EVAL_GUARD)?
                * kronecker_phi_with(fl, nh, -z, EVAL_GUARD)?;
            (v, "n^2 phi(n h, z) phi(n h, -z)")
        }
        RFamily::Trig7v { .. } => {
            let coth = |x: C| x.cosh() / x.sinh();
            (coth(hbar).powi(2) - coth(z).powi(2), "coth^2 h - coth^2 z")
        }
        RFamily::Rat11v | RFamily::Yang { .. } => {
            (1.0 / (hbar * hbar) - 1.0 / (z * z), "1/h^2 - 1/z^2")
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfn::kronecker_phi;

    fn tau_i() -> C {
        c(0.0, 1.0)
    }

    fn ell(n: usize) -> RFamily {
        RFamily::elliptic(n, tau_i()).unwrap()
    }

    #[test]
    fn rank_one_is_scalar_phi() {
        let (h, z) = (c(0.21, 0.05), c(0.37, -0.1));
        let r = eval_r(&ell(1), h, z).unwrap();
        let fl = Flavor::Elliptic(EllipticModulus::new(tau_i()).unwrap());
        assert!((r.get(0, 0) - kronecker_phi(fl, h, z).unwrap()).norm() < 1e-13);
    }

    #[test]
    fn elliptic_two_has_eight_vertex_pattern() {
        let r = eval_r(&ell(2), c(0.3, 0.1), c(0.45, -0.2)).unwrap();
        let nonzero = [(0, 0), (0, 3), (1, 1), (1, 2), (2, 1), (2, 2), (3, 0), (3, 3)];
        for i in 0..4 {
            for j in 0..4 {
                let v = r.get(i, j).norm();
                if nonzero.contains(&(i, j)) {
                    assert!(v > 1e-3);
                } else {
                    assert!(v < 1e-14, "({i},{j}) = {v}");
                }
            }
        }
        assert!((r.get(0, 0) - r.get(3, 3)).norm() < 1e-13);
        assert!((r.get(1, 2) - r.get(2, 1)).norm() < 1e-13);
    }

    #[test]
    fn yang_entries() {
        let r = eval_r(&RFamily::yang(3).unwrap(), c(0.7, 0.0), c(1.3, 0.0)).unwrap();
        let want = &TensorOp::identity(3, 2).scale(c(1.0 / 0.7, 0.0))
            + &permutation(3).scale(c(1.0 / 1.3, 0.0));
        assert!((&r - &want).max_abs() < 1e-15);
    }

    #[test]
    fn singular_points_are_refused() {
        assert!(eval_r(&RFamily::Rat11v, c(0.3, 0.0), c(0.0, 0.0)).is_err());
        assert!(eval_r(&ell(2), c(0.3, 0.0), c(1.0, 1.0)).is_err());
        // h + omega_a on the lattice
        assert!(eval_r(&ell(2), c(-0.5, 0.0), c(0.3, 0.0)).is_err());
        assert!(Expansion::new(&ell(2)).unwrap().r(c(0.0, 0.0)).is_err());
    }

    #[test]
    fn residue_of_r_is_n_p() {
        for f in [ell(2), ell(3), RFamily::Rat11v, RFamily::yang(3).unwrap()] {
            let e = Expansion::new(&f).unwrap();
            let (rad, q) = RESIDUE_CONTOUR;
            let res = residue(|z| e.r(z), c(0.0, 0.0), rad, q).unwrap();
            let n = f.n() as f64;
            assert!((&res - &permutation(f.n()).scale(c(n, 0.0))).max_abs() < 1e-6);
        }
    }

    #[test]
    fn residue_in_hbar_is_identity() {
        let f = RFamily::trig7v(c(1.0, 0.0)).unwrap();
        let res = residue(|h| eval_r(&f, h, c(0.4, 0.1)), c(0.0, 0.0), 0.02, 16).unwrap();
        assert!((&res - &TensorOp::identity(2, 2)).max_abs() < 1e-6);
    }

    #[test]
    fn closed_forms_match_oracle() {
        for (n, tau) in [(2, tau_i()), (3, c(0.3, 0.8))] {
            let f = RFamily::elliptic(n, tau).unwrap();
            let e = Expansion::new(&f).unwrap();
            let z = c(0.37, 0.0);
            let s = expansion_oracle(&f, z).unwrap();
            assert!((&s.r - &e.r(z).unwrap()).max_abs() < 1e-6);
            assert!((&s.m - &e.m(z).unwrap()).max_abs() < 1e-6);
            let o = Expansion::with_source(&f, ExpansionSource::Oracle).unwrap();
            assert!((o.r0() - e.r0()).max_abs() < 1e-6);
            assert!((o.m0() - e.m0()).max_abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let f = RFamily::elliptic(3, c(0.3, 0.8)).unwrap();
        let e = Expansion::new(&f).unwrap();
        let z = c(0.31, 0.17);
        let fd_r = central_difference(|w| e.r(w), z).unwrap();
        let fd_m = central_difference(|w| e.m(w), z).unwrap();
        assert!((&fd_r - &e.r_dz(z).unwrap()).max_abs() < 1e-7);
        assert!((&fd_m - &e.m_dz(z).unwrap()).max_abs() < 1e-6);
    }

    #[test]
    fn yang_expansion_is_exact() {
        let f = RFamily::yang(2).unwrap();
        let e = Expansion::new(&f).unwrap();
        let z = c(0.6, -0.3);
        let want = permutation(2).scale(2.0 / z);
        assert!((&e.r(z).unwrap() - &want).max_abs() < 1e-13);
        assert!(e.m(z).unwrap().max_abs() < 1e-13);
        assert!(e.r0().max_abs() < 1e-13 && e.m0().max_abs() < 1e-13);
        let s = expansion_oracle(&f, z).unwrap();
        assert!((&s.r - &want).max_abs() < 1e-9);
    }

    #[test]
    fn r0_fourier_property_and_symmetries() {
        for f in [
            ell(2),
            ell(3),
            RFamily::trig7v(c(0.0, 0.0)).unwrap(),
            RFamily::Rat11v,
        ] {
            let e = Expansion::new(&f).unwrap();
            let p = permutation(f.n());
            assert!((e.r0() - &(e.r0() * &p)).max_abs() < 1e-10, "{}", f.descriptor());
            assert!((e.r0() + &e.r0().swap()).max_abs() < 1e-10);
            assert!((e.m0() - &e.m0().swap()).max_abs() < 1e-10);
        }
        // nonzero for n = 3: the property is not vacuous there
        assert!(Expansion::new(&ell(3)).unwrap().r0().max_abs() > 0.1);
    }

    #[test]
    fn rat11v_oracle_m_symmetry() {
        let s1 = expansion_oracle(&RFamily::Rat11v, c(0.5, 0.0)).unwrap();
        let s2 = expansion_oracle(&RFamily::Rat11v, c(-0.5, 0.0)).unwrap();
        assert!(s1.m.matrix().is_finite());
        assert!((&s1.m - &s2.m.swap()).max_abs() < 1e-8);
    }

    #[test]
    fn unitarity_forms() {
        let (h, z) = (c(0.3, 0.05), c(0.4, -0.1));
        for f in [
            ell(2),
            ell(3),
            RFamily::trig7v(c(0.0, 0.0)).unwrap(),
            RFamily::trig7v(c(1.0, 0.0)).unwrap(),
            RFamily::trig7v(c(5.0, 0.0)).unwrap(),
            RFamily::Rat11v,
            RFamily::yang(2).unwrap(),
        ] {
            let (fv, res) = unitarity_scalar(&f, h, z).unwrap();
            assert!(res < 1e-10, "{}", f.descriptor());
            let (want, _) = unitarity_closed_form(&f, h, z).unwrap();
            assert!((fv - want).norm() < 1e-10 * want.norm().max(1.0), "{}", f.descriptor());
        }
        // the other candidate normalization does not match the elliptic family
        let tau = EllipticModulus::new(tau_i()).unwrap();
        let fl = Flavor::Elliptic(tau);
        let plain = kronecker_phi(fl, h, z).unwrap() * kronecker_phi(fl, h, -z).unwrap();
        let (fv, _) = unitarity_scalar(&ell(2), h, z).unwrap();
        assert!((fv - plain).norm() > 1e-3);
    }

    #[test]
    fn descriptor_round_trip() {
        for f in [ell(2), RFamily::trig7v(c(1.0, 0.5)).unwrap(), RFamily::Rat11v] {
            let s = serde_json::to_string(&f).unwrap();
            let g: RFamily = serde_json::from_str(&s).unwrap();
            assert_eq!(f, g);
        }
        let bad = r#"{"kind":"elliptic","n":2,"tau":[0.0,-1.0]}"#;
        assert!(serde_json::from_str::<RFamily>(bad).is_err());
    }
}
