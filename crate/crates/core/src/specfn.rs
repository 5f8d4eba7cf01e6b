//! Jacobi theta function, the Kronecker function and the Eisenstein family.
//!
//! The theta function is the odd one,
//! `theta(z) = -sum_k exp(pi i tau (k+1/2)^2 + 2 pi i (z+1/2)(k+1/2))`,
//! and derivatives are taken term by term.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{singular, LabError, Result};

/// Default exclusion radius around the singular set.
pub const POLE_EXCLUSION: f64 = 0.05;

const TERM_CUTOFF: f64 = 1e-18;
const MAX_TERMS: i64 = 256;

/// Modular parameter with `Im tau > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "C", into = "C")]
pub struct EllipticModulus {
    tau: C,
}

impl EllipticModulus {
    pub fn new(tau: C) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() || !tau.im.is_finite() {
            return Err(LabError::Domain(format!(
                "modular parameter needs Im(tau) > 0, got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> C {
        self.tau
    }

    /// Distance from `z` to the nearest lattice point `m + n tau`.
    pub fn lattice_distance(&self, z: C) -> f64 {
        let n0 = (z.im / self.tau.im).round() as i64;
        let mut best = f64::INFINITY;
        for n in n0 - 1..=n0 + 1 {
            let w = z - self.tau * n as f64;
            let m0 = w.re.round() as i64;
            for m in m0 - 1..=m0 + 1 {
                best = best.min((w - m as f64).norm());
            }
        }
        best
    }
}

impl TryFrom<C> for EllipticModulus {
    type Error = LabError;
    fn try_from(tau: C) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<EllipticModulus> for C {
    fn from(m: EllipticModulus) -> C {
        m.tau
    }
}

/// Which scalar solution of the Fay identity is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Flavor {
    Elliptic(EllipticModulus),
    Trigonometric,
    Rational,
}

impl Flavor {
    /// Distance from `z` to the singular set of the flavor.
    pub fn singular_distance(&self, z: C) -> f64 {
        match self {
            Flavor::Elliptic(m) => m.lattice_distance(z),
            Flavor::Trigonometric => (z - z.re.round()).norm(),
            Flavor::Rational => z.norm(),
        }
    }

    fn guard(&self, what: &str, z: C, radius: f64) -> Result<()> {
        if self.singular_distance(z) < radius.max(1e-300) {
            Err(singular(what, z))
        } else {
            Ok(())
        }
    }
}

/// Theta function and its first three derivatives at `z`.
pub fn theta_jet(z: C, m: &EllipticModulus) -> [C; 4] {
    let tau = m.tau;
    let mut acc = [C::new(0.0, 0.0); 4];
    // the Gaussian peaks at h* = -Im z / Im tau; walk outwards on both sides
    let peak = -z.im / tau.im;
    let mut add = |k: i64| -> f64 {
        let h = k as f64 + 0.5;
        let e = (C::i() * PI * tau * h * h + C::i() * 2.0 * PI * (z + 0.5) * h).exp();
        let w = C::new(0.0, 2.0 * PI * h);
        let mut t = e;
        for a in acc.iter_mut() {
            *a += t;
            t *= w;
        }
        e.norm() * (1.0 + (2.0 * PI * h).abs()).powi(3)
    };
    let k0 = peak.floor() as i64;
    for k in k0..k0 + MAX_TERMS {
        let size = add(k);
        if size < TERM_CUTOFF && (k as f64 + 0.5) > peak {
            break;
        }
    }
    for k in (k0 - MAX_TERMS..k0).rev() {
        let size = add(k);
        if size < TERM_CUTOFF && (k as f64 + 0.5) < peak {
            break;
        }
    }
    acc.map(|a| -a)
}

pub fn theta(z: C, m: &EllipticModulus) -> C {
    theta_jet(z, m)[0]
}

/// `(theta'(0), theta'''(0))`.
pub fn theta_constants(m: &EllipticModulus) -> (C, C) {
    let j = theta_jet(C::new(0.0, 0.0), m);
    (j[1], j[3])
}

/// `E1 = theta'/theta` together with its first two z-derivatives.
pub fn e1_jet(z: C, m: &EllipticModulus) -> (C, C, C) {
    let t = theta_jet(z, m);
    let l1 = t[1] / t[0];
    let l2 = t[2] / t[0];
    let l3 = t[3] / t[0];
    (l1, l2 - l1 * l1, l3 - 3.0 * l1 * l2 + 2.0 * l1 * l1 * l1)
}

fn finite(v: C, what: &str, at: C) -> Result<C> {
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(singular(what, at))
    }
}

/// Kronecker function `phi(hbar, z)` outside the default exclusion radius.
pub fn kronecker_phi(flavor: Flavor, hbar: C, z: C) -> Result<C> {
    kronecker_phi_with(flavor, hbar, z, POLE_EXCLUSION)
}

pub fn kronecker_phi_with(flavor: Flavor, hbar: C, z: C, radius: f64) -> Result<C> {
    flavor.guard("kronecker_phi: hbar on singular set", hbar, radius)?;
    flavor.guard("kronecker_phi: z on singular set", z, radius)?;
    let v = match flavor {
        Flavor::Elliptic(m) => {
            let (d1, _) = theta_constants(&m);
            d1 * theta(hbar + z, &m) / (theta(hbar, &m) * theta(z, &m))
        }
        Flavor::Trigonometric => {
            PI * (PI * (hbar + z)).sin() / ((PI * hbar).sin() * (PI * z).sin())
        }
        Flavor::Rational => (hbar + z) / (hbar * z),
    };
    finite(v, "kronecker_phi", z)
}

/// `f(z, u) = d/du phi(z, u)`.
pub fn phi_partial(flavor: Flavor, z: C, u: C) -> Result<C> {
    phi_partial_with(flavor, z, u, POLE_EXCLUSION)
}

pub fn phi_partial_with(flavor: Flavor, z: C, u: C, radius: f64) -> Result<C> {
    flavor.guard("phi_partial: z on singular set", z, radius)?;
    flavor.guard("phi_partial: u on singular set", u, radius)?;
    let v = match flavor {
        Flavor::Elliptic(m) => {
            let phi = kronecker_phi_with(flavor, z, u, 0.0)?;
            phi * (e1_jet(u + z, &m).0 - e1_jet(u, &m).0)
        }
        Flavor::Trigonometric => {
            let phi = kronecker_phi_with(flavor, z, u, 0.0)?;
            phi * PI * (1.0 / (PI * (u + z)).tan() - 1.0 / (PI * u).tan())
        }
        Flavor::Rational => -1.0 / (u * u),
    };
    finite(v, "phi_partial", u)
}

/// `d/dz phi(z, u)`, by the symmetry of phi the same product form as `f`.
pub fn phi_partial_z_with(flavor: Flavor, z: C, u: C, radius: f64) -> Result<C> {
    phi_partial_with(flavor, u, z, radius)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eisenstein {
    E1,
    E2,
    Wp,
    Rho,
}

/// Elliptic E1, E2, Weierstrass wp and `rho = (E1^2 - wp)/2`.
pub fn eisenstein(kind: Eisenstein, z: C, m: &EllipticModulus) -> Result<C> {
    eisenstein_with(kind, z, m, POLE_EXCLUSION)
}

pub fn eisenstein_with(kind: Eisenstein, z: C, m: &EllipticModulus, radius: f64) -> Result<C> {
    Flavor::Elliptic(*m).guard("eisenstein: z on lattice", z, radius)?;
    let (e1, de1, _) = e1_jet(z, m);
    let e2 = -de1;
    let v = match kind {
        Eisenstein::E1 => e1,
        Eisenstein::E2 => e2,
        Eisenstein::Wp => e2 + wp_shift(m),
        Eisenstein::Rho => (e1 * e1 - e2 - wp_shift(m)) / 2.0,
    };
    finite(v, "eisenstein", z)
}

/// `theta'''(0) / (3 theta'(0))`, the constant relating wp and E2.
pub fn wp_shift(m: &EllipticModulus) -> C {
    let (d1, d3) = theta_constants(m);
    d3 / (3.0 * d1)
}

/// `d/dz rho(z) = -E1 E2 + E1''/2`.
pub fn rho_dz(z: C, m: &EllipticModulus) -> C {
    let (e1, de1, dde1) = e1_jet(z, m);
    e1 * de1 + 0.5 * dde1
}
