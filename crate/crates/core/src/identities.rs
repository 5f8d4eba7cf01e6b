//! Residual engine for the functional identities satisfied by the R-matrix
//! families and their expansion coefficients.
//!
//! Each identity is a registry entry: a name, an anchor describing the
//! formula, an applicability rule, a tolerance class, a parameter sampler and
//! an assembly function returning the max-entry residual `|LHS - RHS|`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rmat::{
    eval_r, residue, unitarity_closed_form, unitarity_scalar, Expansion, ExpansionSource, RFamily,
    RESIDUE_CONTOUR,
};
use crate::specfn::{
    e1_jet, eisenstein_with, kronecker_phi_with, EllipticModulus, Eisenstein, Flavor,
    POLE_EXCLUSION,
};
use crate::tensor::{commutator, permutation, tcommutator, Matrix, TensorOp};

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Named complex and matrix parameters of one identity evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdentityParams {
    pub scalars: BTreeMap<String, C>,
    pub matrices: BTreeMap<String, Matrix>,
}

impl IdentityParams {
    pub fn scalar(&self, key: &str) -> Result<C> {
        self.scalars
            .get(key)
            .copied()
            .ok_or_else(|| LabError::Argument(format!("missing parameter '{key}'")))
    }

    pub fn matrix(&self, key: &str) -> Result<&Matrix> {
        self.matrices
            .get(key)
            .ok_or_else(|| LabError::Argument(format!("missing matrix parameter '{key}'")))
    }

    pub fn with(mut self, key: &str, v: C) -> Self {
        self.scalars.insert(key.into(), v);
        self
    }

    pub fn with_matrix(mut self, key: &str, m: Matrix) -> Self {
        self.matrices.insert(key.into(), m);
        self
    }

    /// JSON rendering with complex numbers as `[re, im]`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in &self.scalars {
            map.insert(k.clone(), serde_json::json!([v.re, v.im]));
        }
        for (k, m) in &self.matrices {
            let rows: Vec<Vec<[f64; 2]>> = (0..m.dim())
                .map(|i| (0..m.dim()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect();
            map.insert(k.clone(), serde_json::json!(rows));
        }
        serde_json::Value::Object(map)
    }
}

/// One identity to evaluate.
#[derive(Clone, Debug)]
pub struct IdentityCase {
    pub name: String,
    pub family: RFamily,
    pub params: IdentityParams,
    pub source: ExpansionSource,
}

/// Tolerance class of an identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Built from the quantum R-matrix alone.
    Quantum,
    /// Built from the expansion coefficients without derivatives.
    Classical,
    /// Needs z-derivatives of the expansion coefficients.
    Derivative,
    /// Needs finite differences in the modular parameter.
    FiniteDifference,
}

/// Tolerance for a precision class, family and expansion source.
pub fn tolerance(p: Precision, family: &RFamily, source: ExpansionSource) -> f64 {
    let elliptic = matches!(family, RFamily::Elliptic { .. });
    match (p, source) {
        (Precision::Quantum, _) if elliptic => 1e-9,
        (Precision::Quantum, _) => 1e-11,
        (_, ExpansionSource::Oracle) => 1e-5,
        (Precision::Classical, _) => 1e-9,
        (Precision::Derivative, _) if elliptic => 1e-9,
        (Precision::Derivative, _) | (Precision::FiniteDifference, _) => 1e-5,
    }
}

/// Which families an identity applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Applies {
    All,
    EllipticOnly,
    EllipticOrYang,
}

type Assemble = fn(&Expansion, &IdentityParams) -> Result<f64>;
type SampleFn = fn(&mut Sampler) -> IdentityParams;

/// Registry entry.
pub struct Entry {
    pub name: &'static str,
    pub anchor: &'static str,
    pub precision: Precision,
    pub applies: Applies,
    /// Both sides vanish identically when `m` and `r0` vanish (Yang family).
    pub trivial_without_m: bool,
    assemble: Assemble,
    sample: SampleFn,
}

impl Entry {
    pub fn applies_to(&self, family: &RFamily) -> bool {
        match self.applies {
            Applies::All => true,
            Applies::EllipticOnly => matches!(family, RFamily::Elliptic { .. }),
            Applies::EllipticOrYang => {
                matches!(family, RFamily::Elliptic { .. } | RFamily::Yang { .. })
            }
        }
    }
}

macro_rules! entry {
    ($name:expr, $anchor:expr, $prec:ident, $applies:ident, $triv:expr, $asm:expr, $smp:expr) => {
        Entry {
            name: $name,
            anchor: $anchor,
            precision: Precision::$prec,
            applies: Applies::$applies,
            trivial_without_m: $triv,
            assemble: $asm,
            sample: $smp,
        }
    };
}

/// The identity registry.
pub fn catalogue() -> &'static [Entry] {
    static CATALOGUE: std::sync::OnceLock<Vec<Entry>> = std::sync::OnceLock::new();
    CATALOGUE.get_or_init(|| {
        vec![
            entry!("fay", "phi(h,z12)phi(e,z23) = phi(h-e,z12)phi(e,z13) + phi(e-h,z23)phi(h,z13)",
                Quantum, All, false, asm_fay, smp_yb),
            entry!("aybe", "R^h_12 R^e_23 = R^e_13 R^(h-e)_12 + R^(e-h)_23 R^h_13",
                Quantum, All, false, asm_aybe, smp_yb),
            entry!("qybe", "R_12 R_13 R_23 = R_23 R_13 R_12",
                Quantum, All, false, asm_qybe, smp_yb),
            entry!("cybe", "[r12,r13] + [r12,r23] + [r13,r23] = 0",
                Classical, All, false, asm_cybe, smp_triple),
            entry!("skew-symmetry", "R^h_12(z) = -R^(-h)_21(-z)",
                Quantum, All, false, asm_skew, smp_hz),
            entry!("unitarity", "R^h_12(z) R^h_21(-z) = F^h(z) 1",
                Quantum, All, false, asm_unitarity, smp_hz),
            entry!("residue-hbar", "Res_(h=0) R^h_12(z) = 1",
                Quantum, All, false, asm_residue_hbar, smp_hz),
            entry!("residue-z", "Res_(z=0) r_12(z) = N P_12",
                Classical, All, false, asm_residue_z, smp_hz),
            entry!("coefficient-symmetry", "r12(z) = -r21(-z), m12(z) = m21(-z), r0 = -r0_21, m(0) = m(0)_21",
                Classical, All, false, asm_coefficients, smp_hz),
            entry!("fourier-r0", "r0_12 = r0_12 P_12",
                Classical, All, false, asm_fourier, smp_hz),
            entry!("wp-cubic", "(r12(z12) + r23(z23) + r31(z31))^2 = N^2 (wp(z12) + wp(z23) + wp(z31)) 1",
                Classical, EllipticOrYang, false, asm_wp_cubic, smp_triple),
            entry!("e1-wp-scalar", "(E1(z12) + E1(z23) + E1(z31))^2 = wp(z12) + wp(z23) + wp(z31)",
                Classical, EllipticOnly, false, asm_e1_wp, smp_triple),
            entry!("m-r-commutator", "[m13(z13), r12(z12)] = [r12(z12), m23(z23)] + [m12(z12), r23(z23)] + [m13(z13), r23(z23)]",
                Classical, All, true, asm_mr, smp_triple),
            entry!("m-r-commutator-coincident", "[m13(0), r12(zab)] = [r12(zab), m23(zba)] + [m12(zab), r23(zba)] + [m13(0), r23(zba)]",
                Classical, All, true, asm_mr_coincident, smp_triple),
            entry!("m-r-commutator-limit", "[m13(z), r12(z)] = [r12(z), m23(0)] - [m12'(z), N P23] + [m12(z), r0_23] + [m13(z), r0_23]",
                Derivative, All, true, asm_mr_limit, smp_hz),
            entry!("r-triple-product", "r12(z) r13(z+w) - r23(w) r12(z) + r13(z+w) r23(w) = m12(z) + m23(w) + m13(z+w)",
                Classical, All, false, asm_rrr, smp_zw),
            entry!("r-triple-product-limit", "r12(z) r13(z) = r0_23 r12(z) - r13(z) r0_23 - N r13'(z) P23 + m12(z) + m23(0) + m13(z)",
                Derivative, All, false, asm_rrr_limit, smp_hz),
            entry!("m0-trace-cancellation", "tr23(m23(0) S^a_2 [I^ab(S^b),S^a]_3) + tr23(m23(0) [I^ab(S^b),S^a]_2 S^a_3) + tr23(m23(zab) S^a_2 [S^b,I^ba(S^a)]_3) + tr23(m23(zba) [S^b,I^ba(S^a)]_2 S^a_3) = 0",
                Classical, All, true, asm_m0_trace, smp_sites),
            entry!("lm-two-point", "[L(S^b,z-zb), M(S^a,z-za)] = L([S^b,J^ba(S^a)],z-zb) + M([S^b,I^ba(S^a)],z-zb) - M([S^a,I^ab(S^b)],z-za)",
                Classical, All, true, asm_lm_two_point, smp_sites),
            entry!("ll-product", "L(T,z-za) L(S,z-zb) = L(T I^ab(S),z-za) + L(I^ba(T) S,z-zb) + tr(S)/N M(T,z-za) + tr(T)/N M(S,z-zb) + tr23(m23(zab) T_2 S_3)/N^2",
                Classical, All, false, asm_ll_product, smp_sites),
            entry!("ll-commutator", "[L(S,z-zb), L(T,z-za)] = L([I^ab(S),T],z-za) + L([S,I^ba(T)],z-zb)",
                Classical, All, false, asm_ll_commutator, smp_sites),
            entry!("l-square-orbit", "-c L'(S,z) + L(E(S)S,z) + L(S E(S),z) = L(S,z)^2 - 2 tr(S)/N M(S,z) - tr23(m23(0) S_2 S_3)/N^2 for S^2 = cS",
                Derivative, All, false, asm_l_square, smp_orbit),
            entry!("ll-commutator-coincident", "[L(S,z), L(T,z)] = -L'([S,T],z) + L([S,E(T)],z) + L([E(S),T],z)",
                Derivative, All, false, asm_ll_coincident, smp_coincident),
            entry!("lm-coincident", "[L(S,z), M(S,z)] = L([S,J(S)],z)",
                Classical, All, true, asm_lm_coincident, smp_coincident),
            entry!("ll-product-coincident", "L(A,z) L(B,z) = L(A E(B),z) + L(E(A) B,z) - L'(AB,z) + tr(B)/N M(A,z) + tr(A)/N M(B,z) + tr23(m23(0) A_2 B_3)/N^2",
                Derivative, All, false, asm_ll_product_coincident, smp_coincident),
            entry!("orbit-se", "S E(S) = 0 for S = xi eta",
                Classical, All, true, asm_orbit_se, smp_orbit),
            entry!("orbit-se-xs", "S E(S_x S) = 0",
                Classical, All, true, asm_orbit_se_xs, smp_orbit),
            entry!("orbit-se-sx", "S E(S S_x) = -c S_x E(S)",
                Classical, All, true, asm_orbit_se_sx, smp_orbit),
            entry!("orbit-derivative", "c d_x(S E(S) + E(S) S) + [E([S,S_x]),S] + [[S,S_x],E(S)] = 2c [E(S_x),S]",
                Classical, All, true, asm_orbit_derivative, smp_orbit),
            entry!("orbit-cross-left", "S^a E(I^ab(S^b) S^a) = 0",
                Classical, All, true, asm_orbit_cross_left, smp_orbit),
            entry!("orbit-cross-right", "S^a E(S^a I^ab(S^b)) = -S^a I^ab(S^b) E(S^a)",
                Classical, All, true, asm_orbit_cross_right, smp_orbit),
            entry!("orbit-cross-outer", "E(I^ab(S^b) S^a) S^a = E(S^a) I^ab(S^b) S^a",
                Classical, All, true, asm_orbit_cross_outer, smp_orbit),
            entry!("heat", "2 pi i d_tau R^h(z) = d_h d_z R^h(z)",
                FiniteDifference, EllipticOnly, false, asm_heat_quantum, smp_heat),
            entry!("heat-classical", "2 pi i d_tau r(z) = d_z m(z)",
                FiniteDifference, EllipticOnly, false, asm_heat_classical, smp_heat),
        ]
    })
}

pub fn lookup(name: &str) -> Result<&'static Entry> {
    catalogue()
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| LabError::Argument(format!("unknown identity '{name}'")))
}

/// Residual of a named identity.
pub fn check_identity(case: &IdentityCase) -> Result<f64> {
    let entry = lookup(&case.name)?;
    if !entry.applies_to(&case.family) {
        return Err(LabError::Argument(format!(
            "identity '{}' does not apply to {}",
            entry.name,
            case.family.descriptor()
        )));
    }
    let e = Expansion::with_source(&case.family, case.source)?;
    (entry.assemble)(&e, &case.params)
}

/// Kinds of Yang-Baxter equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YbKind {
    Aybe,
    Qybe,
    Cybe,
}

/// Residual of one Yang-Baxter equation; `params` holds `h`, `eta`, `z1..z3`.
pub fn check_yb(kind: YbKind, family: &RFamily, params: &IdentityParams) -> Result<f64> {
    let name = match kind {
        YbKind::Aybe => "aybe",
        YbKind::Qybe => "qybe",
        YbKind::Cybe => "cybe",
    };
    check_identity(&IdentityCase {
        name: name.into(),
        family: family.clone(),
        params: params.clone(),
        source: ExpansionSource::Exact,
    })
}

/// Residuals of the heat equations `(quantum, classical)` with step `dtau`
/// in every finite difference.
pub fn check_heat(family: &RFamily, hbar: C, z: C, dtau: f64) -> Result<(f64, f64)> {
    if family.modulus().is_none() {
        return Err(LabError::Argument("the heat equation needs the elliptic family".into()));
    }
    let p = IdentityParams::default()
        .with("h", hbar)
        .with("z", z)
        .with("dtau", c(dtau, 0.0));
    let e = Expansion::new(family)?;
    Ok((asm_heat_quantum(&e, &p)?, asm_heat_classical(&e, &p)?))
}

// ---------------------------------------------------------------------------
// sampling

/// Seeded sampler respecting pole and pairwise-difference exclusion.
pub struct Sampler {
    rng: ChaCha8Rng,
    family: RFamily,
    orbit_c: C,
}

impl Sampler {
    pub fn new(family: &RFamily, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            family: family.clone(),
            orbit_c: c(1.0, 0.0),
        }
    }

    /// Sampler on an independent stream of the same seed.
    pub fn with_stream(family: &RFamily, seed: u64, stream: u64) -> Self {
        let mut s = Self::new(family, seed);
        s.rng.set_stream(stream);
        s
    }

    pub fn set_orbit_c(&mut self, c: C) {
        self.orbit_c = c;
    }

    fn unit(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    /// Point `x + y tau` (or `x + iy`) with `x, y` uniform in `[0.1, 0.9]`.
    pub fn point(&mut self) -> C {
        let (x, y) = (self.unit(0.1, 0.9), self.unit(0.1, 0.9));
        match self.family.modulus() {
            Some(m) => m.tau() * y + x,
            None => c(x, y),
        }
    }

    fn far(&self, z: C) -> bool {
        self.family.spectral_distance(z) >= POLE_EXCLUSION
    }

    /// `k` points with all pairwise differences away from the singular set.
    pub fn points(&mut self, k: usize) -> Vec<C> {
        loop {
            let p: Vec<C> = (0..k).map(|_| self.point()).collect();
            let ok = (0..k).all(|i| (0..i).all(|j| self.far(p[i] - p[j])));
            if ok {
                return p;
            }
        }
    }

    /// Small Planck constant away from the poles of the family in `h`.
    pub fn hbar(&mut self) -> C {
        loop {
            let h = c(self.unit(-0.4, 0.4), self.unit(-0.4, 0.4));
            if self.family.hbar_distance(h) >= POLE_EXCLUSION {
                return h;
            }
        }
    }

    /// Spectral point away from the poles.
    pub fn spectral(&mut self) -> C {
        loop {
            let z = self.point();
            if self.far(z) {
                return z;
            }
        }
    }

    pub fn matrix(&mut self) -> Matrix {
        let n = self.family.n();
        Matrix::from_fn(n, |_, _| c(self.rng.gen_range(-1.0..1.0), self.rng.gen_range(-1.0..1.0)))
    }

    fn vector(&mut self) -> Vec<C> {
        (0..self.family.n())
            .map(|_| c(self.rng.gen_range(-1.0..1.0), self.rng.gen_range(-1.0..1.0)))
            .collect()
    }

    /// Rank-one `S = xi eta` with `eta xi = c`, and a tangent vector `S_x`
    /// to the orbit at `S`.
    pub fn orbit_pair(&mut self) -> (Matrix, Matrix) {
        let cc = self.orbit_c;
        loop {
            let xi = self.vector();
            let mut eta = self.vector();
            let pairing: C = eta.iter().zip(&xi).map(|(a, b)| a * b).sum();
            if pairing.norm() < 0.2 {
                continue;
            }
            for v in eta.iter_mut() {
                *v *= cc / pairing;
            }
            let dxi = self.vector();
            let mut deta = self.vector();
            let t: C = deta.iter().zip(&xi).map(|(a, b)| a * b).sum::<C>()
                + eta.iter().zip(&dxi).map(|(a, b)| a * b).sum::<C>();
            for (d, e) in deta.iter_mut().zip(&eta) {
                *d -= t * e / cc;
            }
            let s = Matrix::outer(&xi, &eta);
            let sx = &Matrix::outer(&dxi, &eta) + &Matrix::outer(&xi, &deta);
            return (s, sx);
        }
    }

    fn avoiding(&mut self, marks: &[C]) -> C {
        loop {
            let z = self.spectral();
            if marks.iter().all(|m| self.far(z - m)) {
                return z;
            }
        }
    }
}

fn smp_yb(s: &mut Sampler) -> IdentityParams {
    let z = s.points(3);
    loop {
        let (h, e) = (s.hbar(), s.hbar());
        let fam = &s.family;
        if fam.hbar_distance(h - e) >= POLE_EXCLUSION && fam.hbar_distance(e - h) >= POLE_EXCLUSION {
            return IdentityParams::default()
                .with("h", h)
                .with("eta", e)
                .with("z1", z[0])
                .with("z2", z[1])
                .with("z3", z[2]);
        }
    }
}

fn smp_triple(s: &mut Sampler) -> IdentityParams {
    let z = s.points(3);
    IdentityParams::default()
        .with("z1", z[0])
        .with("z2", z[1])
        .with("z3", z[2])
}

fn smp_hz(s: &mut Sampler) -> IdentityParams {
    let h = s.hbar();
    let z = s.spectral();
    IdentityParams::default().with("h", h).with("z", z)
}

fn smp_zw(s: &mut Sampler) -> IdentityParams {
    loop {
        let (z, w) = (s.spectral(), s.spectral());
        if s.far(z + w) {
            return IdentityParams::default().with("z", z).with("w", w);
        }
    }
}

fn smp_sites(s: &mut Sampler) -> IdentityParams {
    let p = s.points(2);
    let z = s.avoiding(&p);
    let (sa, sb) = (s.matrix(), s.matrix());
    IdentityParams::default()
        .with("za", p[0])
        .with("zb", p[1])
        .with("z", z)
        .with_matrix("Sa", sa)
        .with_matrix("Sb", sb)
}

fn smp_coincident(s: &mut Sampler) -> IdentityParams {
    let z = s.spectral();
    let (a, b) = (s.matrix(), s.matrix());
    IdentityParams::default()
        .with("z", z)
        .with_matrix("A", a)
        .with_matrix("B", b)
}

fn smp_orbit(s: &mut Sampler) -> IdentityParams {
    let p = s.points(2);
    let z = s.spectral();
    let (sa, sx) = s.orbit_pair();
    let (sb, _) = s.orbit_pair();
    IdentityParams::default()
        .with("za", p[0])
        .with("zb", p[1])
        .with("z", z)
        .with("c", s.orbit_c)
        .with_matrix("S", sa)
        .with_matrix("Sx", sx)
        .with_matrix("Sb", sb)
}

/// Finite-difference stencils need a wider margin around the poles, and the
/// lower half of the period cell keeps the quasi-periodic growth moderate.
const HEAT_MARGIN: f64 = 0.25;

fn smp_heat(s: &mut Sampler) -> IdentityParams {
    let h = loop {
        let h = s.hbar();
        // the poles in h form a lattice refined N times
        if s.family.hbar_distance(h) >= HEAT_MARGIN.min(0.3 / s.family.n() as f64) {
            break h;
        }
    };
    let z = loop {
        let (x, y) = (s.unit(0.1, 0.9), s.unit(0.1, 0.5));
        let z = match s.family.modulus() {
            Some(m) => m.tau() * y + x,
            None => c(x, y),
        };
        if s.family.spectral_distance(z) >= HEAT_MARGIN {
            break z;
        }
    };
    IdentityParams::default()
        .with("h", h)
        .with("z", z)
        .with("dtau", c(1e-3, 0.0))
        .with("richardson", c(1.0, 0.0))
}

// ---------------------------------------------------------------------------
// assembly helpers

fn e3(op: &TensorOp, legs: [usize; 2]) -> Result<TensorOp> {
    op.embed(&legs, 3)
}

fn scalar_flavor(family: &RFamily) -> Flavor {
    match family {
        RFamily::Elliptic { tau, .. } => Flavor::Elliptic(*tau),
        RFamily::Trig7v { .. } => Flavor::Trigonometric,
        RFamily::Rat11v | RFamily::Yang { .. } => Flavor::Rational,
    }
}

fn lop(k: &TensorOp, s: &Matrix) -> Matrix {
    k.contract(s)
}

fn id(n: usize) -> Matrix {
    Matrix::identity(n)
}

fn diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).max_abs()
}

fn tdiff(a: &TensorOp, b: &TensorOp) -> f64 {
    (a - b).max_abs()
}

// ---------------------------------------------------------------------------
// assemblies

fn asm_fay(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let fl = scalar_flavor(e.family());
    let (h, et) = (p.scalar("h")?, p.scalar("eta")?);
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    let phi = |a: C, b: C| kronecker_phi_with(fl, a, b, 1e-9);
    let lhs = phi(h, z1 - z2)? * phi(et, z2 - z3)?;
    let rhs = phi(h - et, z1 - z2)? * phi(et, z1 - z3)? + phi(et - h, z2 - z3)? * phi(h, z1 - z3)?;
    Ok((lhs - rhs).norm())
}

fn asm_aybe(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let f = e.family();
    let (h, et) = (p.scalar("h")?, p.scalar("eta")?);
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    let r = |u: C, z: C, legs: [usize; 2]| -> Result<TensorOp> { e3(&eval_r(f, u, z)?, legs) };
    let lhs = &r(h, z1 - z2, [1, 2])? * &r(et, z2 - z3, [2, 3])?;
    let rhs = &(&r(et, z1 - z3, [1, 3])? * &r(h - et, z1 - z2, [1, 2])?)
        + &(&r(et - h, z2 - z3, [2, 3])? * &r(h, z1 - z3, [1, 3])?);
    Ok(tdiff(&lhs, &rhs))
}

fn asm_qybe(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let f = e.family();
    let h = p.scalar("h")?;
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    let r = |z: C, legs: [usize; 2]| -> Result<TensorOp> { e3(&eval_r(f, h, z)?, legs) };
    let (r12, r13, r23) = (r(z1 - z2, [1, 2])?, r(z1 - z3, [1, 3])?, r(z2 - z3, [2, 3])?);
    Ok(tdiff(&(&(&r12 * &r13) * &r23), &(&(&r23 * &r13) * &r12)))
}

fn classical_triple(
    e: &Expansion,
    p: &IdentityParams,
) -> Result<(TensorOp, TensorOp, TensorOp, C, C, C)> {
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    Ok((
        e3(&e.r(z1 - z2)?, [1, 2])?,
        e3(&e.r(z1 - z3)?, [1, 3])?,
        e3(&e.r(z2 - z3)?, [2, 3])?,
        z1,
        z2,
        z3,
    ))
}

fn asm_cybe(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (r12, r13, r23, ..) = classical_triple(e, p)?;
    let s = &(&tcommutator(&r12, &r13) + &tcommutator(&r12, &r23)) + &tcommutator(&r13, &r23);
    Ok(s.max_abs())
}

fn asm_skew(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (h, z) = (p.scalar("h")?, p.scalar("z")?);
    let f = e.family();
    Ok((&eval_r(f, h, z)? + &eval_r(f, -h, -z)?.swap()).max_abs())
}

fn asm_unitarity(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (h, z) = (p.scalar("h")?, p.scalar("z")?);
    let (fv, res) = unitarity_scalar(e.family(), h, z)?;
    let (want, _) = unitarity_closed_form(e.family(), h, z)?;
    Ok(res.max((fv - want).norm() / want.norm().max(1.0)))
}

fn asm_residue_hbar(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let f = e.family();
    let (rad, q) = RESIDUE_CONTOUR;
    let res = residue(|h| eval_r(f, h, z), c(0.0, 0.0), rad, q)?;
    Ok(tdiff(&res, &TensorOp::identity(f.n(), 2)))
}

fn asm_residue_z(e: &Expansion, _: &IdentityParams) -> Result<f64> {
    let (rad, q) = RESIDUE_CONTOUR;
    let res = residue(|z| e.r(z), c(0.0, 0.0), rad, q)?;
    let n = e.n();
    Ok(tdiff(&res, &permutation(n).scale(c(n as f64, 0.0))))
}

fn asm_coefficients(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let a = (&e.r(z)? + &e.r(-z)?.swap()).max_abs();
    let b = (&e.m(z)? - &e.m(-z)?.swap()).max_abs();
    let r0 = (e.r0() + &e.r0().swap()).max_abs();
    let m0 = (e.m0() - &e.m0().swap()).max_abs();
    Ok(a.max(b).max(r0).max(m0))
}

fn asm_fourier(e: &Expansion, _: &IdentityParams) -> Result<f64> {
    Ok(tdiff(e.r0(), &(e.r0() * &permutation(e.n()))))
}

fn wp_of(family: &RFamily, z: C) -> Result<C> {
    match family {
        RFamily::Elliptic { tau, .. } => eisenstein_with(Eisenstein::Wp, z, tau, 1e-9),
        RFamily::Yang { .. } => Ok(1.0 / (z * z)),
        _ => Err(LabError::Argument("no wp-function for this family".into())),
    }
}

fn asm_wp_cubic(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    let n = e.n();
    let s = &(&e3(&e.r(z1 - z2)?, [1, 2])? + &e3(&e.r(z2 - z3)?, [2, 3])?) + &e3(&e.r(z3 - z1)?, [3, 1])?;
    let f = e.family();
    let w = wp_of(f, z1 - z2)? + wp_of(f, z2 - z3)? + wp_of(f, z3 - z1)?;
    let rhs = TensorOp::identity(n, 3).scale(w * (n * n) as f64);
    Ok(tdiff(&(&s * &s), &rhs))
}

fn asm_e1_wp(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let tau: EllipticModulus = e
        .family()
        .modulus()
        .ok_or_else(|| LabError::Argument("elliptic family required".into()))?;
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    let e1 = |z: C| e1_jet(z, &tau).0;
    let wp = |z: C| eisenstein_with(Eisenstein::Wp, z, &tau, 1e-9);
    let s = e1(z1 - z2) + e1(z2 - z3) + e1(z3 - z1);
    Ok((s * s - (wp(z1 - z2)? + wp(z2 - z3)? + wp(z3 - z1)?)).norm())
}

fn asm_mr(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (z1, z2, z3) = (p.scalar("z1")?, p.scalar("z2")?, p.scalar("z3")?);
    let m13 = e3(&e.m(z1 - z3)?, [1, 3])?;
    let r12 = e3(&e.r(z1 - z2)?, [1, 2])?;
    let m23 = e3(&e.m(z2 - z3)?, [2, 3])?;
    let m12 = e3(&e.m(z1 - z2)?, [1, 2])?;
    let r23 = e3(&e.r(z2 - z3)?, [2, 3])?;
    let lhs = tcommutator(&m13, &r12);
    let rhs = &(&tcommutator(&r12, &m23) + &tcommutator(&m12, &r23)) + &tcommutator(&m13, &r23);
    Ok(tdiff(&lhs, &rhs))
}

fn asm_mr_coincident(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (za, zb) = (p.scalar("z1")?, p.scalar("z2")?);
    let m13 = e3(e.m0(), [1, 3])?;
    let r12 = e3(&e.r(za - zb)?, [1, 2])?;
    let m23 = e3(&e.m(zb - za)?, [2, 3])?;
    let m12 = e3(&e.m(za - zb)?, [1, 2])?;
    let r23 = e3(&e.r(zb - za)?, [2, 3])?;
    let lhs = tcommutator(&m13, &r12);
    let rhs = &(&tcommutator(&r12, &m23) + &tcommutator(&m12, &r23)) + &tcommutator(&m13, &r23);
    Ok(tdiff(&lhs, &rhs))
}

fn asm_mr_limit(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let n = e.n() as f64;
    let m13 = e3(&e.m(z)?, [1, 3])?;
    let r12 = e3(&e.r(z)?, [1, 2])?;
    let m12 = e3(&e.m(z)?, [1, 2])?;
    let dm12 = e3(&e.m_dz(z)?, [1, 2])?;
    let m0_23 = e3(e.m0(), [2, 3])?;
    let r0_23 = e3(e.r0(), [2, 3])?;
    let p23 = e3(&permutation(e.n()), [2, 3])?.scale(c(n, 0.0));
    let lhs = tcommutator(&m13, &r12);
    let rhs = &(&(&tcommutator(&r12, &m0_23) - &tcommutator(&dm12, &p23))
        + &tcommutator(&m12, &r0_23))
        + &tcommutator(&m13, &r0_23);
    Ok(tdiff(&lhs, &rhs))
}

fn asm_rrr(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (z, w) = (p.scalar("z")?, p.scalar("w")?);
    let r12 = e3(&e.r(z)?, [1, 2])?;
    let r13 = e3(&e.r(z + w)?, [1, 3])?;
    let r23 = e3(&e.r(w)?, [2, 3])?;
    let lhs = &(&(&r12 * &r13) - &(&r23 * &r12)) + &(&r13 * &r23);
    let rhs = &(&e3(&e.m(z)?, [1, 2])? + &e3(&e.m(w)?, [2, 3])?) + &e3(&e.m(z + w)?, [1, 3])?;
    Ok(tdiff(&lhs, &rhs))
}

fn asm_rrr_limit(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let n = e.n() as f64;
    let r12 = e3(&e.r(z)?, [1, 2])?;
    let r13 = e3(&e.r(z)?, [1, 3])?;
    let r0_23 = e3(e.r0(), [2, 3])?;
    let dr13 = e3(&e.r_dz(z)?, [1, 3])?;
    let p23 = e3(&permutation(e.n()), [2, 3])?;
    let ms = &(&e3(&e.m(z)?, [1, 2])? + &e3(e.m0(), [2, 3])?) + &e3(&e.m(z)?, [1, 3])?;
    let lhs = &r12 * &r13;
    let rhs = &(&(&(&r0_23 * &r12) - &(&r13 * &r0_23)) - &(&dr13 * &p23).scale(c(n, 0.0))) + &ms;
    Ok(tdiff(&lhs, &rhs))
}

struct TwoSites<'a> {
    e: &'a Expansion,
    za: C,
    zb: C,
    z: C,
}

impl TwoSites<'_> {
    fn l(&self, s: &Matrix, at: C) -> Result<Matrix> {
        Ok(lop(&self.e.r(self.z - at)?, s))
    }
    fn m(&self, s: &Matrix, at: C) -> Result<Matrix> {
        Ok(lop(&self.e.m(self.z - at)?, s))
    }
    fn i_ab(&self, s: &Matrix) -> Result<Matrix> {
        Ok(lop(&self.e.r(self.za - self.zb)?, s))
    }
    fn i_ba(&self, s: &Matrix) -> Result<Matrix> {
        Ok(lop(&self.e.r(self.zb - self.za)?, s))
    }
    fn j_ba(&self, s: &Matrix) -> Result<Matrix> {
        Ok(lop(&self.e.m(self.zb - self.za)?, s))
    }
}

fn two_sites<'a>(e: &'a Expansion, p: &IdentityParams) -> Result<TwoSites<'a>> {
    Ok(TwoSites {
        e,
        za: p.scalar("za")?,
        zb: p.scalar("zb")?,
        z: p.scalar("z")?,
    })
}

fn asm_m0_trace(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let t = two_sites(e, p)?;
    let (sa, sb) = (p.matrix("Sa")?, p.matrix("Sb")?);
    let cm = commutator(&t.i_ab(sb)?, sa);
    let dm = commutator(sb, &t.i_ba(sa)?);
    let m_ab = e.m(t.za - t.zb)?;
    let m_ba = e.m(t.zb - t.za)?;
    let total = e.m0().pair_trace(sa, &cm)
        + e.m0().pair_trace(&cm, sa)
        + m_ab.pair_trace(sa, &dm)
        + m_ba.pair_trace(&dm, sa);
    Ok(total.norm())
}

fn asm_lm_two_point(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let t = two_sites(e, p)?;
    let (sa, sb) = (p.matrix("Sa")?, p.matrix("Sb")?);
    let lhs = commutator(&t.l(sb, t.zb)?, &t.m(sa, t.za)?);
    let rhs = &(&t.l(&commutator(sb, &t.j_ba(sa)?), t.zb)? + &t.m(&commutator(sb, &t.i_ba(sa)?), t.zb)?)
        - &t.m(&commutator(sa, &t.i_ab(sb)?), t.za)?;
    Ok(diff(&lhs, &rhs))
}

fn asm_ll_product(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let t = two_sites(e, p)?;
    let (ta, sb) = (p.matrix("Sa")?, p.matrix("Sb")?);
    let n = e.n() as f64;
    let lhs = &t.l(ta, t.za)? * &t.l(sb, t.zb)?;
    let mut rhs = &t.l(&(ta * &t.i_ab(sb)?), t.za)? + &t.l(&(&t.i_ba(ta)? * sb), t.zb)?;
    rhs += &t.m(ta, t.za)?.scale(sb.trace() / n);
    rhs += &t.m(sb, t.zb)?.scale(ta.trace() / n);
    rhs += &id(e.n()).scale(e.m(t.za - t.zb)?.pair_trace(ta, sb) / (n * n));
    Ok(diff(&lhs, &rhs))
}

fn asm_ll_commutator(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let t = two_sites(e, p)?;
    let (ta, sb) = (p.matrix("Sa")?, p.matrix("Sb")?);
    let lhs = commutator(&t.l(sb, t.zb)?, &t.l(ta, t.za)?);
    let rhs = &t.l(&commutator(&t.i_ab(sb)?, ta), t.za)? + &t.l(&commutator(sb, &t.i_ba(ta)?), t.zb)?;
    Ok(diff(&lhs, &rhs))
}

fn asm_l_square(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let cc = p.scalar("c")?;
    let s = p.matrix("S")?;
    let n = e.n() as f64;
    let r = e.r(z)?;
    let es = lop(e.r0(), s);
    let lhs = &(&lop(&e.r_dz(z)?, s).scale(-cc) + &lop(&r, &(&es * s))) + &lop(&r, &(s * &es));
    let l = lop(&r, s);
    let rhs = &(&(&l * &l) - &lop(&e.m(z)?, s).scale(2.0 * s.trace() / n))
        - &id(e.n()).scale(e.m0().pair_trace(s, s) / (n * n));
    Ok(diff(&lhs, &rhs))
}

fn asm_ll_coincident(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let (s, t) = (p.matrix("A")?, p.matrix("B")?);
    let r = e.r(z)?;
    let emap = |x: &Matrix| lop(e.r0(), x);
    let lhs = commutator(&lop(&r, s), &lop(&r, t));
    let rhs = &(&lop(&r, &commutator(s, &emap(t))) + &lop(&r, &commutator(&emap(s), t)))
        - &lop(&e.r_dz(z)?, &commutator(s, t));
    Ok(diff(&lhs, &rhs))
}

fn asm_lm_coincident(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let s = p.matrix("A")?;
    let r = e.r(z)?;
    let lhs = commutator(&lop(&r, s), &lop(&e.m(z)?, s));
    let rhs = lop(&r, &commutator(s, &lop(e.m0(), s)));
    Ok(diff(&lhs, &rhs))
}

fn asm_ll_product_coincident(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let (a, b) = (p.matrix("A")?, p.matrix("B")?);
    let n = e.n() as f64;
    let r = e.r(z)?;
    let m = e.m(z)?;
    let emap = |x: &Matrix| lop(e.r0(), x);
    let lhs = &lop(&r, a) * &lop(&r, b);
    let mut rhs = &lop(&r, &(a * &emap(b))) + &lop(&r, &(&emap(a) * b));
    rhs -= &lop(&e.r_dz(z)?, &(a * b));
    rhs += &lop(&m, a).scale(b.trace() / n);
    rhs += &lop(&m, b).scale(a.trace() / n);
    rhs += &id(e.n()).scale(e.m0().pair_trace(a, b) / (n * n));
    Ok(diff(&lhs, &rhs))
}

fn orbit_data(p: &IdentityParams) -> Result<(&Matrix, &Matrix, C)> {
    Ok((p.matrix("S")?, p.matrix("Sx")?, p.scalar("c")?))
}

fn asm_orbit_se(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, ..) = orbit_data(p)?;
    Ok((s * &lop(e.r0(), s)).max_abs())
}

fn asm_orbit_se_xs(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, sx, _) = orbit_data(p)?;
    Ok((s * &lop(e.r0(), &(sx * s))).max_abs())
}

fn asm_orbit_se_sx(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, sx, cc) = orbit_data(p)?;
    let lhs = s * &lop(e.r0(), &(s * sx));
    let rhs = (sx * &lop(e.r0(), s)).scale(-cc);
    Ok(diff(&lhs, &rhs))
}

fn asm_orbit_derivative(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, sx, cc) = orbit_data(p)?;
    let em = |x: &Matrix| lop(e.r0(), x);
    let (es, esx) = (em(s), em(sx));
    // d_x(S E(S) + E(S) S) by the product rule, E being linear
    let mut dx = &(sx * &es) + &(s * &esx);
    dx += &(&esx * s);
    dx += &(&es * sx);
    let br = commutator(s, sx);
    let lhs = &(&dx.scale(cc) + &commutator(&em(&br), s)) + &commutator(&br, &es);
    let rhs = commutator(&esx, s).scale(2.0 * cc);
    Ok(diff(&lhs, &rhs))
}

fn cross(e: &Expansion, p: &IdentityParams) -> Result<(Matrix, Matrix)> {
    let (za, zb) = (p.scalar("za")?, p.scalar("zb")?);
    let x = lop(&e.r(za - zb)?, p.matrix("Sb")?);
    Ok((p.matrix("S")?.clone(), x))
}

fn asm_orbit_cross_left(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, x) = cross(e, p)?;
    Ok((&s * &lop(e.r0(), &(&x * &s))).max_abs())
}

fn asm_orbit_cross_right(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, x) = cross(e, p)?;
    let lhs = &s * &lop(e.r0(), &(&s * &x));
    let rhs = -&(&(&s * &x) * &lop(e.r0(), &s));
    Ok(diff(&lhs, &rhs))
}

fn asm_orbit_cross_outer(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (s, x) = cross(e, p)?;
    let lhs = &lop(e.r0(), &(&x * &s)) * &s;
    let rhs = &(&lop(e.r0(), &s) * &x) * &s;
    Ok(diff(&lhs, &rhs))
}

fn shifted_family(e: &Expansion, d: f64) -> Result<RFamily> {
    match e.family() {
        RFamily::Elliptic { n, tau } => RFamily::elliptic(*n, tau.tau() + d),
        _ => Err(LabError::Argument("the heat equation needs the elliptic family".into())),
    }
}

fn heat_quantum_terms(e: &Expansion, h: C, z: C, d: f64) -> Result<(TensorOp, TensorOp)> {
    let (fp, fm) = (shifted_family(e, d)?, shifted_family(e, -d)?);
    let f = e.family();
    let dtau = (&eval_r(&fp, h, z)? - &eval_r(&fm, h, z)?).scale(c(0.0, 2.0 * PI) / (2.0 * d));
    let r = |a: f64, b: f64| eval_r(f, h + a, z + b);
    let mixed = (&(&r(d, d)? - &r(d, -d)?) - &(&r(-d, d)? - &r(-d, -d)?)).scale(c(0.25 / (d * d), 0.0));
    Ok((dtau, mixed))
}

fn heat_classical_terms(e: &Expansion, z: C, d: f64) -> Result<TensorOp> {
    let ep = Expansion::new(&shifted_family(e, d)?)?;
    let em = Expansion::new(&shifted_family(e, -d)?)?;
    Ok((&ep.r(z)? - &em.r(z)?).scale(c(0.0, 2.0 * PI) / (2.0 * d)))
}

/// Central differences with step `dtau`; with `richardson` set, the
/// combination of steps `dtau` and `dtau/2` cancelling the second-order error.
fn heat_params(p: &IdentityParams) -> Result<(f64, bool)> {
    let rich = p.scalars.get("richardson").is_some_and(|v| v.re != 0.0);
    Ok((p.scalar("dtau")?.re, rich))
}

fn richardson(coarse: TensorOp, fine: TensorOp) -> TensorOp {
    (&fine.scale(c(4.0, 0.0)) - &coarse).scale(c(1.0 / 3.0, 0.0))
}

fn asm_heat_quantum(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let (h, z) = (p.scalar("h")?, p.scalar("z")?);
    let (d, rich) = heat_params(p)?;
    let (mut dt, mut mx) = heat_quantum_terms(e, h, z, d)?;
    if rich {
        let (dt2, mx2) = heat_quantum_terms(e, h, z, d / 2.0)?;
        dt = richardson(dt, dt2);
        mx = richardson(mx, mx2);
    }
    Ok(tdiff(&dt, &mx))
}

fn asm_heat_classical(e: &Expansion, p: &IdentityParams) -> Result<f64> {
    let z = p.scalar("z")?;
    let (d, rich) = heat_params(p)?;
    let mut dt = heat_classical_terms(e, z, d)?;
    if rich {
        dt = richardson(dt, heat_classical_terms(e, z, d / 2.0)?);
    }
    Ok(tdiff(&dt, &e.m_dz(z)?))
}

// ---------------------------------------------------------------------------
// suites

/// Groups of identities selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Fay,
    Aybe,
    Qybe,
    Cybe,
    Structure,
    Catalogue,
    Kernels,
    Orbit,
    Heat,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 10] = [
        "fay", "aybe", "qybe", "cybe", "structure", "catalogue", "kernels", "orbit", "heat", "all",
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fay" => Suite::Fay,
            "aybe" => Suite::Aybe,
            "qybe" => Suite::Qybe,
            "cybe" => Suite::Cybe,
            "structure" => Suite::Structure,
            "catalogue" => Suite::Catalogue,
            "kernels" => Suite::Kernels,
            "orbit" => Suite::Orbit,
            "heat" => Suite::Heat,
            "all" => Suite::All,
            _ => {
                return Err(LabError::Argument(format!(
                    "unknown suite '{s}', expected one of {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn members(&self) -> Vec<&'static str> {
        let all: Vec<&'static str> = catalogue().iter().map(|e| e.name).collect();
        match self {
            Suite::Fay => vec!["fay"],
            Suite::Aybe => vec!["aybe"],
            Suite::Qybe => vec!["qybe"],
            Suite::Cybe => vec!["cybe"],
            Suite::Structure => vec![
                "skew-symmetry",
                "unitarity",
                "residue-hbar",
                "residue-z",
                "coefficient-symmetry",
                "fourier-r0",
            ],
            Suite::Catalogue => vec![
                "wp-cubic",
                "e1-wp-scalar",
                "m-r-commutator",
                "m-r-commutator-coincident",
                "m-r-commutator-limit",
                "r-triple-product",
                "r-triple-product-limit",
            ],
            Suite::Kernels => vec![
                "m0-trace-cancellation",
                "lm-two-point",
                "ll-product",
                "ll-commutator",
                "l-square-orbit",
                "ll-commutator-coincident",
                "lm-coincident",
                "ll-product-coincident",
            ],
            Suite::Orbit => all.into_iter().filter(|n| n.starts_with("orbit-")).collect(),
            Suite::Heat => vec!["heat", "heat-classical"],
            Suite::All => all,
        }
    }
}

/// One evaluated identity sample.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckRecord {
    pub identity: String,
    pub anchor: String,
    pub family: String,
    pub sample: usize,
    pub params: serde_json::Value,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Options for a suite run.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub samples: usize,
    pub seed: u64,
    pub source: ExpansionSource,
    /// Overrides every per-identity tolerance when set.
    pub tolerance: Option<f64>,
    pub orbit_c: C,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            seed: 0,
            source: ExpansionSource::Exact,
            tolerance: None,
            orbit_c: c(1.0, 0.0),
        }
    }
}

fn stream_id(name: &str, sample: usize) -> u64 {
    // FNV-1a of the name, so streams do not depend on registry order
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h.wrapping_add(sample as u64)
}

/// Runs every applicable identity of `suite` on `opts.samples` seeded samples.
pub fn run_suite(suite: Suite, family: &RFamily, opts: &SuiteOptions) -> Result<Vec<CheckRecord>> {
    let expansion = Expansion::with_source(family, opts.source)?;
    let mut jobs = Vec::new();
    for name in suite.members() {
        let entry = lookup(name)?;
        if !entry.applies_to(family) {
            continue;
        }
        for k in 0..opts.samples {
            jobs.push((entry, k));
        }
    }
    let kernel_vanishes = matches!(family, RFamily::Yang { .. });
    let records = jobs
        .par_iter()
        .map(|&(entry, k)| {
            let tol = opts
                .tolerance
                .unwrap_or_else(|| tolerance(entry.precision, family, opts.source));
            let mut sampler = Sampler::with_stream(family, opts.seed, stream_id(entry.name, k));
            sampler.set_orbit_c(opts.orbit_c);
            let params = (entry.sample)(&mut sampler);
            let mut rec = CheckRecord {
                identity: entry.name.into(),
                anchor: entry.anchor.into(),
                family: family.descriptor(),
                sample: k,
                params: params.to_json(),
                residual: 0.0,
                tolerance: tol,
                passed: true,
                skipped: false,
                note: None,
            };
            if kernel_vanishes && entry.trivial_without_m {
                rec.skipped = true;
                rec.note = Some("kernel vanishes: m and r0 are identically zero".into());
                return rec;
            }
            match (entry.assemble)(&expansion, &params) {
                Ok(r) => {
                    rec.residual = r;
                    rec.passed = r <= tol;
                }
                Err(err) => {
                    rec.residual = f64::INFINITY;
                    rec.passed = false;
                    rec.note = Some(err.to_string());
                }
            }
            rec
        })
        .collect();
    Ok(records)
}

/// Per-identity maximum residual of a record list, in first-seen order.
pub fn summarize(records: &[CheckRecord]) -> Vec<(String, f64, f64, bool, bool)> {
    let mut out: Vec<(String, f64, f64, bool, bool)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|o| o.0 == r.identity) {
            Some(o) => {
                o.1 = o.1.max(r.residual);
                o.3 &= r.passed;
                o.4 &= r.skipped;
            }
            None => out.push((r.identity.clone(), r.residual, r.tolerance, r.passed, r.skipped)),
        }
    }
    out
}

/// Structure checks over seeded samples: per-check maximum residual.
pub fn check_structure(family: &RFamily, samples: usize, seed: u64) -> Result<BTreeMap<String, f64>> {
    let opts = SuiteOptions {
        samples,
        seed,
        ..Default::default()
    };
    let recs = run_suite(Suite::Structure, family, &opts)?;
    Ok(summarize(&recs)
        .into_iter()
        .map(|(name, res, ..)| (name, res))
        .collect())
}
