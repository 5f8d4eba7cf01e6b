//! 1+1 field theories built from the same R-matrix data: U-V pairs on a
//! periodic grid, minimal orbits, the auxiliary `T^a` solve, equations of
//! motion of the Landau-Lifshitz, principal chiral and 1+1 Gaudin models,
//! pointwise Zakharov-Shabat residuals and twist-function deformations.
//!
//! The Zakharov-Shabat equation is `d_t U - k d_x V = [U, V]` with
//! `U(z) = sum_a L(S^a(x), z - z_a)`.

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{singular, LabError, Result};
use crate::evolve::{grid, spectral_derivative, spectral_dx};
use crate::models_fd::Reading;
use crate::rmat::{Expansion, RFamily};
use crate::specfn::{e1_jet, kronecker_phi, theta, theta_jet, EllipticModulus, Flavor, POLE_EXCLUSION};
use crate::tensor::{belavin_t, commutator, Matrix, TensorOp};

/// A matrix field sampled on the uniform grid of `[0, 2 pi)`.
pub type Field = Vec<Matrix>;

/// Tolerance of the orbit condition `S^2 = cS` at construction.
pub const ORBIT_TOL: f64 = 1e-10;
/// Tolerance of the orbit condition while solving for `T^a` on evolved data.
pub const ORBIT_SOLVE_TOL: f64 = 1e-6;
/// Tolerance of the defining constraint of `T^a`.
pub const CONSTRAINT_TOL: f64 = 1e-8;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// One marked point with its residue field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSite {
    pub z: C,
    pub s: Field,
}

/// Residue fields at the marked points of a 1+1 model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "FieldStateDoc", try_from = "FieldStateDoc")]
pub struct FieldState {
    pub family: RFamily,
    /// Coefficient of `d_x` in the Zakharov-Shabat equation.
    pub k: C,
    /// Eigenvalue `c` of the special orbit `S^2 = cS`, when imposed.
    pub orbit_c: Option<C>,
    pub sites: Vec<FieldSite>,
}

#[derive(Serialize, Deserialize)]
struct SiteDoc {
    z: [f64; 2],
    #[serde(rename = "S")]
    s: Vec<Vec<Vec<[f64; 2]>>>,
}

#[derive(Serialize, Deserialize)]
struct FieldStateDoc {
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    k: [f64; 2],
    family: RFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orbit_c: Option<[f64; 2]>,
    sites: Vec<SiteDoc>,
}

fn pair(z: C) -> [f64; 2] {
    [z.re, z.im]
}

fn unpair(p: [f64; 2]) -> C {
    c(p[0], p[1])
}

impl From<FieldState> for FieldStateDoc {
    fn from(st: FieldState) -> Self {
        let sites = st
            .sites
            .iter()
            .map(|site| SiteDoc {
                z: pair(site.z),
                s: site
                    .s
                    .iter()
                    .map(|mat| {
                        (0..mat.dim())
                            .map(|i| (0..mat.dim()).map(|j| pair(mat[(i, j)])).collect())
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        FieldStateDoc {
            n: st.family.n(),
            m: st.grid_len(),
            k: pair(st.k),
            family: st.family,
            orbit_c: st.orbit_c.map(pair),
            sites,
        }
    }
}

impl TryFrom<FieldStateDoc> for FieldState {
    type Error = LabError;

    fn try_from(doc: FieldStateDoc) -> Result<Self> {
        let mut sites = Vec::with_capacity(doc.sites.len());
        for sd in doc.sites {
            let mut s = Vec::with_capacity(sd.s.len());
            for rows in sd.s {
                let dim = rows.len();
                let mut data = Vec::with_capacity(dim * dim);
                for row in rows {
                    if row.len() != dim {
                        return Err(LabError::Argument("ragged matrix in field state".into()));
                    }
                    data.extend(row.into_iter().map(unpair));
                }
                s.push(Matrix::from_vec(dim, data)?);
            }
            sites.push(FieldSite { z: unpair(sd.z), s });
        }
        let st = FieldState::new(doc.family, unpair(doc.k), doc.orbit_c.map(unpair), sites)?;
        if st.family.n() != doc.n || st.grid_len() != doc.m {
            return Err(LabError::Argument("declared n or M does not match the data".into()));
        }
        Ok(st)
    }
}

impl FieldState {
    /// Validated state: common grid, matching matrix size, distinct marked
    /// points and, when `orbit_c` is set, `S^2 = cS` at every grid point.
    pub fn new(family: RFamily, k: C, orbit_c: Option<C>, sites: Vec<FieldSite>) -> Result<Self> {
        let st = Self::unchecked(family, k, orbit_c, sites)?;
        if let Some(cc) = st.orbit_c {
            let res = st.orbit_residual(cc);
            if res > ORBIT_TOL {
                return Err(LabError::Orbit(res));
            }
        }
        Ok(st)
    }

    /// Structural validation only, for states produced by time stepping.
    pub fn unchecked(family: RFamily, k: C, orbit_c: Option<C>, sites: Vec<FieldSite>) -> Result<Self> {
        family.validate()?;
        if sites.is_empty() {
            return Err(LabError::Argument("at least one marked point is needed".into()));
        }
        if k.norm() == 0.0 || !k.is_finite() {
            return Err(LabError::Argument("k must be finite and non-zero".into()));
        }
        let m = sites[0].s.len();
        if m < 4 {
            return Err(LabError::Argument(format!("grid of {m} points is too small")));
        }
        let n = family.n();
        for (a, site) in sites.iter().enumerate() {
            if site.s.len() != m {
                return Err(LabError::Argument(format!("site {a} has {} grid points, expected {m}", site.s.len())));
            }
            if site.s.iter().any(|s| s.dim() != n) {
                return Err(LabError::Argument(format!("site {a} has matrices of the wrong size")));
            }
            for b in 0..a {
                if family.spectral_distance(site.z - sites[b].z) < POLE_EXCLUSION {
                    return Err(LabError::Argument(format!("marked points {b} and {a} coincide")));
                }
            }
        }
        Ok(FieldState { family, k, orbit_c, sites })
    }

    pub fn grid_len(&self) -> usize {
        self.sites.first().map_or(0, |s| s.s.len())
    }

    pub fn n(&self) -> usize {
        self.family.n()
    }

    /// Max over sites and grid points of `|S^2 - cS|`.
    pub fn orbit_residual(&self, cc: C) -> f64 {
        self.sites
            .iter()
            .flat_map(|site| site.s.iter())
            .map(|s| (&(s * s) - &s.scale(cc)).max_abs())
            .fold(0.0, f64::max)
    }

    /// Same marked points and parameters with new residue fields.
    pub fn with_fields(&self, fields: Vec<Field>) -> Result<Self> {
        let sites = self
            .sites
            .iter()
            .zip(fields)
            .map(|(site, s)| FieldSite { z: site.z, s })
            .collect();
        Self::unchecked(self.family.clone(), self.k, self.orbit_c, sites)
    }

    pub fn fields(&self) -> Vec<Field> {
        self.sites.iter().map(|s| s.s.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| LabError::Argument(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LabError::Argument(e.to_string()))
    }

    /// Band-limited random rank-one fields with eigenvalue `c` at every
    /// marked point, scaled by `scale` (the orbit constraint is imposed only
    /// for `scale == 1`).
    pub fn random_orbit(spec: &RandomOrbitSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.family.n();
        let sites = spec
            .points
            .iter()
            .map(|&z| {
                let s = orbit_field(n, spec.c, spec.eps, spec.grid, &mut rng)
                    .into_iter()
                    .map(|m| m.scale(c(spec.scale, 0.0)))
                    .collect();
                FieldSite { z, s }
            })
            .collect();
        let orbit = if spec.scale == 1.0 { Some(spec.c) } else { None };
        Self::new(spec.family.clone(), spec.k, orbit, sites)
    }
}

/// Parameters of [`FieldState::random_orbit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomOrbitSpec {
    pub family: RFamily,
    #[serde(with = "complex_pair")]
    pub k: C,
    #[serde(with = "complex_pair")]
    pub c: C,
    #[serde(with = "complex_list")]
    pub points: Vec<C>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_eps() -> f64 {
    0.2
}

fn default_scale() -> f64 {
    1.0
}

fn default_grid() -> usize {
    64
}

pub(crate) mod complex_pair {
    use num_complex::Complex64 as C;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(z: &C, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq([z.re, z.im])
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C::new(re, im))
    }
}

pub(crate) mod complex_list {
    use num_complex::Complex64 as C;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(zs: &[C], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(zs.iter().map(|z| [z.re, z.im]))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C>, D::Error> {
        let v = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(v.into_iter().map(|[re, im]| C::new(re, im)).collect())
    }
}

fn random_vector(n: usize, rng: &mut impl Rng) -> Vec<C> {
    (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank-one field `S(x) = A(x) xi eta A(x)^-1` with `eta xi = c`, where
/// `A(x) = (1 + n_1(x))(1 + n_2(x))` and each `n_t` is a nilpotent rank-one
/// matrix with first-harmonic amplitude; the field has at most four modes.
pub fn orbit_field(n: usize, cc: C, eps: f64, m: usize, rng: &mut impl Rng) -> Field {
    let norm = |v: &[C]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let xi = random_vector(n, rng);
    // redraw until the pairing is well conditioned
    let mut eta = random_vector(n, rng);
    while dot(&eta, &xi).norm() < 0.25 * norm(&xi) * norm(&eta) {
        eta = random_vector(n, rng);
    }
    let p = dot(&eta, &xi);
    for v in eta.iter_mut() {
        *v *= cc / p;
    }
    let factors: Vec<(Matrix, C, C)> = (0..2)
        .map(|_| {
            let u = random_vector(n, rng);
            let mut w = random_vector(n, rng);
            let t = dot(&w, &u) / dot(&u, &u);
            for (wi, ui) in w.iter_mut().zip(&u) {
                *wi -= t * ui;
            }
            let a = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * eps;
            let b = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * eps;
            (Matrix::outer(&u, &w), a, b)
        })
        .collect();
    let s0 = Matrix::outer(&xi, &eta);
    grid(m)
        .into_iter()
        .map(|x| {
            let mut a = Matrix::identity(n);
            let mut ai = Matrix::identity(n);
            for (nil, p, q) in &factors {
                let nt = nil.scale(p * x.cos() + q * x.sin());
                a = &a * &(&Matrix::identity(n) + &nt);
                ai = &(&Matrix::identity(n) - &nt) * &ai;
            }
            &(&a * &s0) * &ai
        })
        .collect()
}

/// Report of [`minimal_orbit`].
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitReport {
    pub c: C,
    /// `|S^2 - cS|`.
    pub square_residual: f64,
    /// `|tr S - c|`.
    pub trace_residual: f64,
    /// `|S E(S)|`, when an expansion is supplied.
    pub se_residual: Option<f64>,
}

/// Rank-one matrix `S = xi eta` with `c = eta xi`.
pub fn minimal_orbit(xi: &[C], eta: &[C], expansion: Option<&Expansion>) -> Result<(Matrix, OrbitReport)> {
    if xi.len() != eta.len() {
        return Err(LabError::Argument("xi and eta differ in length".into()));
    }
    let cc = dot(eta, xi);
    let scale = xi.iter().chain(eta).map(|v| v.norm()).fold(0.0, f64::max);
    if cc.norm() <= 1e-14 * scale.max(1e-300) * scale.max(1.0) {
        return Err(LabError::DegenerateOrbit(cc));
    }
    let s = Matrix::outer(xi, eta);
    let se_residual = expansion.map(|e| (&s * &e.r0().contract(&s)).max_abs());
    let report = OrbitReport {
        c: cc,
        square_residual: (&(&s * &s) - &s.scale(cc)).max_abs(),
        trace_residual: (s.trace() - cc).norm(),
        se_residual,
    };
    Ok((s, report))
}

/// Which flow of the 1+1 hierarchy drives the fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowSpec {
    /// `V = -L(S^a, z - z_a)`.
    First { a: usize },
    /// `V = L(S^a, z - z_a) - L(S^b, z - z_b)`.
    FirstDifference { a: usize, b: usize },
    /// `V = -c d_z L(S^a) + c L(T^a) + L(S^a E(S^a) + E(S^a) S^a)`.
    Second { a: usize },
}

/// Right-hand side form of the second-flow equations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EomForm {
    /// Valid on any orbit `S^2 = cS`.
    #[default]
    General,
    /// Simplified with the rank-one identities; needs `S = xi eta`.
    Minimal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EomOptions {
    #[serde(default)]
    pub form: EomForm,
    #[serde(default)]
    pub reading: Reading,
}

/// Kernels of a field state that do not depend on the fields: the
/// expansion and `r`, `m` at every difference of marked points.
#[derive(Clone, Debug)]
pub struct Model2d {
    expansion: Expansion,
    zs: Vec<C>,
    r_ab: Vec<Vec<Option<TensorOp>>>,
    m_ab: Vec<Vec<Option<TensorOp>>>,
}

fn pointwise(fields: &[&Field], f: impl Fn(&[&Matrix]) -> Matrix + Sync) -> Field {
    let m = fields[0].len();
    (0..m)
        .map(|j| {
            let at: Vec<&Matrix> = fields.iter().map(|fl| &fl[j]).collect();
            f(&at)
        })
        .collect()
}

fn add_into(acc: &mut Field, other: &Field) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

fn scale_field(f: &Field, s: C) -> Field {
    f.iter().map(|m| m.scale(s)).collect()
}

fn zero_field(n: usize, m: usize) -> Field {
    vec![Matrix::zeros(n); m]
}

impl Model2d {
    pub fn new(state: &FieldState) -> Result<Self> {
        Self::with_expansion(state, Expansion::new(&state.family)?)
    }

    pub fn with_expansion(state: &FieldState, expansion: Expansion) -> Result<Self> {
        if expansion.family() != &state.family {
            return Err(LabError::Argument("expansion built for another family".into()));
        }
        let zs: Vec<C> = state.sites.iter().map(|s| s.z).collect();
        let p = zs.len();
        let mut r_ab = vec![vec![None; p]; p];
        let mut m_ab = vec![vec![None; p]; p];
        for a in 0..p {
            for b in 0..p {
                if a != b {
                    r_ab[a][b] = Some(expansion.r(zs[a] - zs[b])?);
                    m_ab[a][b] = Some(expansion.m(zs[a] - zs[b])?);
                }
            }
        }
        Ok(Model2d { expansion, zs, r_ab, m_ab })
    }

    pub fn expansion(&self) -> &Expansion {
        &self.expansion
    }

    fn check_state(&self, st: &FieldState) -> Result<()> {
        let same = st.sites.len() == self.zs.len() && st.sites.iter().zip(&self.zs).all(|(s, z)| s.z == *z);
        if !same || st.family != *self.expansion.family() {
            return Err(LabError::Argument("field state does not match the model".into()));
        }
        Ok(())
    }

    /// `I^ab(S) = L(S, z_a - z_b)`.
    pub fn i_map(&self, a: usize, b: usize, s: &Matrix) -> Matrix {
        self.r_ab[a][b].as_ref().expect("distinct sites").contract(s)
    }

    /// `J^ab(S) = M(S, z_a - z_b)`.
    pub fn j_ab_map(&self, a: usize, b: usize, s: &Matrix) -> Matrix {
        self.m_ab[a][b].as_ref().expect("distinct sites").contract(s)
    }

    pub fn e_map(&self, s: &Matrix) -> Matrix {
        self.expansion.r0().contract(s)
    }

    pub fn j_map(&self, s: &Matrix) -> Matrix {
        self.expansion.m0().contract(s)
    }

    fn contract_field(k: &TensorOp, f: &Field) -> Field {
        f.iter().map(|s| k.contract(s)).collect()
    }

    fn guard_point(&self, z: C) -> Result<()> {
        for (a, za) in self.zs.iter().enumerate() {
            if self.expansion.family().spectral_distance(z - za) < POLE_EXCLUSION {
                return Err(singular("spectral point on marked point", z).with_site(a));
            }
        }
        Ok(())
    }

    /// `U(z, x_j) = sum_a L(S^a(x_j), z - z_a)`.
    pub fn build_u(&self, st: &FieldState, z: C) -> Result<Field> {
        self.check_state(st)?;
        self.guard_point(z)?;
        let mut u = zero_field(st.n(), st.grid_len());
        for (site, za) in st.sites.iter().zip(&self.zs) {
            add_into(&mut u, &Self::contract_field(&self.expansion.r(z - za)?, &site.s));
        }
        Ok(u)
    }

    fn orbit_c(&self, st: &FieldState) -> Result<C> {
        let cc = st
            .orbit_c
            .ok_or_else(|| LabError::Argument("second flows need the orbit eigenvalue c".into()))?;
        let res = st.orbit_residual(cc);
        if res > ORBIT_SOLVE_TOL {
            return Err(LabError::Orbit(res));
        }
        Ok(cc)
    }

    /// `sum_{i != a} I^ai(S^i)` per grid point.
    fn sum_i(&self, st: &FieldState, a: usize) -> Field {
        let mut acc = zero_field(st.n(), st.grid_len());
        for (i, site) in st.sites.iter().enumerate() {
            if i != a {
                let f: Field = site.s.iter().map(|s| self.i_map(a, i, s)).collect();
                add_into(&mut acc, &f);
            }
        }
        acc
    }

    /// `T^a = -(k/c^2)[S^a, d_x S^a] + sum_{i != a} I^ai(S^i)`, validated
    /// against `k d_x S^a = [S^a, sum_i I^ai(S^i) - T^a]`.
    pub fn solve_t(&self, st: &FieldState, a: usize) -> Result<Field> {
        self.check_state(st)?;
        self.check_site(a)?;
        let cc = self.orbit_c(st)?;
        let sa = &st.sites[a].s;
        let sx = spectral_dx(sa);
        let sum = self.sum_i(st, a);
        let coef = -st.k / (cc * cc);
        let t: Field = pointwise(&[sa, &sx, &sum], |p| &commutator(p[0], p[1]).scale(coef) + p[2]);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..sa.len() {
            let lhs = sx[j].scale(st.k);
            let rhs = commutator(&sa[j], &(&sum[j] - &t[j]));
            worst = worst.max((&lhs - &rhs).max_abs());
            scale = scale.max(lhs.max_abs());
        }
        if worst > CONSTRAINT_TOL * scale {
            return Err(LabError::Solve(worst));
        }
        Ok(t)
    }

    fn check_site(&self, a: usize) -> Result<()> {
        if a >= self.zs.len() {
            return Err(LabError::Argument(format!("site {a} out of range ({} sites)", self.zs.len())));
        }
        Ok(())
    }

    fn check_flow(&self, flow: FlowSpec) -> Result<()> {
        match flow {
            FlowSpec::First { a } | FlowSpec::Second { a } => self.check_site(a),
            FlowSpec::FirstDifference { a, b } => {
                self.check_site(a)?;
                self.check_site(b)?;
                if a == b {
                    return Err(LabError::Argument("first_difference needs two distinct sites".into()));
                }
                Ok(())
            }
        }
    }

    /// Coefficients `c_i` of `V = sum_i c_i L(S^i, z - z_i)` for first flows.
    fn first_coefficients(&self, flow: FlowSpec) -> Vec<f64> {
        let mut cs = vec![0.0; self.zs.len()];
        match flow {
            FlowSpec::First { a } => cs[a] = -1.0,
            FlowSpec::FirstDifference { a, b } => {
                cs[a] = 1.0;
                cs[b] = -1.0;
            }
            FlowSpec::Second { .. } => unreachable!("not a first flow"),
        }
        cs
    }

    /// `V(z, x_j)` of the flow.
    pub fn build_v(&self, st: &FieldState, flow: FlowSpec, z: C) -> Result<Field> {
        self.check_state(st)?;
        self.check_flow(flow)?;
        self.guard_point(z)?;
        let e = &self.expansion;
        match flow {
            FlowSpec::First { .. } | FlowSpec::FirstDifference { .. } => {
                let mut v = zero_field(st.n(), st.grid_len());
                for (i, cf) in self.first_coefficients(flow).into_iter().enumerate() {
                    if cf != 0.0 {
                        let r = e.r(z - self.zs[i])?;
                        add_into(&mut v, &scale_field(&Self::contract_field(&r, &st.sites[i].s), c(cf, 0.0)));
                    }
                }
                Ok(v)
            }
            FlowSpec::Second { a } => {
                let cc = self.orbit_c(st)?;
                let t = self.solve_t(st, a)?;
                let sa = &st.sites[a].s;
                let w = z - self.zs[a];
                let (r, dr) = (e.r(w)?, e.r_dz(w)?);
                Ok(pointwise(&[sa, &t], |p| {
                    let s = p[0];
                    let es = self.e_map(s);
                    let sym = &(s * &es) + &(&es * s);
                    let mut v = dr.contract(s).scale(-cc);
                    v += &r.contract(p[1]).scale(cc);
                    v += &r.contract(&sym);
                    v
                }))
            }
        }
    }

    /// Second-flow `V` rewritten through the orbit identity:
    /// `c L(T) + L(S)^2 - 2 s_0 M(S) - tr_23(m_23(0) S_2 S_3)/N^2`.
    pub fn build_v_rewritten(&self, st: &FieldState, a: usize, z: C) -> Result<Field> {
        self.check_state(st)?;
        self.check_site(a)?;
        self.guard_point(z)?;
        let cc = self.orbit_c(st)?;
        let t = self.solve_t(st, a)?;
        let e = &self.expansion;
        let w = z - self.zs[a];
        let (r, m) = (e.r(w)?, e.m(w)?);
        let n = st.n() as f64;
        Ok(pointwise(&[&st.sites[a].s, &t], |p| {
            let s = p[0];
            let l = r.contract(s);
            let mut v = r.contract(p[1]).scale(cc);
            v += &(&l * &l);
            v -= &m.contract(s).scale(2.0 * s.trace() / n);
            v -= &Matrix::identity(st.n()).scale(e.m0().pair_trace(s, s) / (n * n));
            v
        }))
    }

    /// Time derivatives `d_t S^i` of every site under the flow.
    pub fn eom(&self, st: &FieldState, flow: FlowSpec, opts: EomOptions) -> Result<Vec<Field>> {
        self.check_state(st)?;
        self.check_flow(flow)?;
        match flow {
            FlowSpec::First { .. } | FlowSpec::FirstDifference { .. } => Ok(self.eom_first(st, flow, opts.reading)),
            FlowSpec::Second { a } => match opts.form {
                EomForm::General => self.eom_second_general(st, a, opts.reading),
                EomForm::Minimal => self.eom_second_minimal(st, a),
            },
        }
    }

    /// `d_t S^j = k c_j d_x S^j + sum_{i != j} (c_i - c_j)[S^j, I^ji(S^i)]`.
    /// The printed single-site flow has the commutator terms reversed.
    fn eom_first(&self, st: &FieldState, flow: FlowSpec, reading: Reading) -> Vec<Field> {
        let cs = self.first_coefficients(flow);
        let flip = matches!((flow, reading), (FlowSpec::First { .. }, Reading::Printed));
        let sign = if flip { -1.0 } else { 1.0 };
        let p = st.sites.len();
        (0..p)
            .map(|j| {
                let sj = &st.sites[j].s;
                let mut out = if cs[j] != 0.0 {
                    scale_field(&spectral_dx(sj), st.k * cs[j])
                } else {
                    zero_field(st.n(), st.grid_len())
                };
                for i in 0..p {
                    let w = cs[i] - cs[j];
                    if i == j || w == 0.0 {
                        continue;
                    }
                    let term = pointwise(&[sj, &st.sites[i].s], |q| {
                        commutator(q[0], &self.i_map(j, i, q[1])).scale(c(sign * w, 0.0))
                    });
                    add_into(&mut out, &term);
                }
                out
            })
            .collect()
    }

    fn eom_second_general(&self, st: &FieldState, a: usize, reading: Reading) -> Result<Vec<Field>> {
        let cc = self.orbit_c(st)?;
        let k = st.k;
        let n = st.n() as f64;
        let t = self.solve_t(st, a)?;
        let sa = &st.sites[a].s;
        let sym: Field = sa
            .iter()
            .map(|s| {
                let es = self.e_map(s);
                &(s * &es) + &(&es * s)
            })
            .collect();
        let mut out_a = scale_field(&spectral_dx(&sym), k);
        add_into(&mut out_a, &scale_field(&spectral_dx(&t), k * cc));
        let local = pointwise(&[sa, &t], |p| {
            let (s, tt) = (p[0], p[1]);
            let mut v = commutator(s, &self.e_map(tt)).scale(cc);
            v += &commutator(&self.e_map(s), tt).scale(cc);
            v -= &commutator(s, &self.j_map(s)).scale(2.0 * s.trace() / n);
            v
        });
        add_into(&mut out_a, &local);
        let mut out = Vec::with_capacity(st.sites.len());
        for (j, site) in st.sites.iter().enumerate() {
            if j == a {
                out.push(Vec::new());
                continue;
            }
            let cross = pointwise(&[sa, &site.s, &t], |p| {
                let (s, sj, tt) = (p[0], p[1], p[2]);
                let x = self.i_map(a, j, sj);
                let cm = commutator(&x, s);
                let es = self.e_map(s);
                let ecm = self.e_map(&cm);
                let back = match reading {
                    Reading::Consistent => self.i_map(j, a, s),
                    Reading::Printed => self.i_map(a, j, s),
                };
                let inner = self.i_map(a, j, &commutator(sj, &back));
                let mut v = commutator(&x, tt).scale(cc);
                v += &(s * &ecm);
                v += &(&ecm * s);
                v += &(&es * &cm);
                v += &(&cm * &es);
                v += &(s * &inner);
                v += &(&inner * s);
                v
            });
            add_into(&mut out_a, &cross);
            let site_eq = pointwise(&[&site.s, sa, &t], |p| {
                let (si, s, tt) = (p[0], p[1], p[2]);
                let x = self.i_map(j, a, s);
                let sx = commutator(si, &x);
                let mut v = commutator(si, &self.i_map(j, a, tt)).scale(cc);
                v -= &commutator(si, &self.j_ab_map(j, a, s)).scale(2.0 * s.trace() / n);
                v += &(&sx * &x);
                v += &(&x * &sx);
                v
            });
            out.push(site_eq);
        }
        out[a] = out_a;
        Ok(out)
    }

    fn eom_second_minimal(&self, st: &FieldState, a: usize) -> Result<Vec<Field>> {
        let cc = self.orbit_c(st)?;
        for s in &st.sites[a].s {
            if (s.trace() - cc).norm() > ORBIT_SOLVE_TOL {
                return Err(LabError::Orbit((s.trace() - cc).norm()));
            }
        }
        let k = st.k;
        let n = st.n() as f64;
        let sa = &st.sites[a].s;
        let sx = spectral_dx(sa);
        let sxx = spectral_derivative(sa, 2);
        let sum = self.sum_i(st, a);
        let mut out_a = scale_field(&spectral_dx(&sum), k * cc);
        let local = pointwise(&[sa, &sx, &sxx, &sum], |p| {
            let (s, s1, s2, si) = (p[0], p[1], p[2], p[3]);
            let mut v = commutator(s, s2).scale(-k * k / cc);
            v -= &commutator(s, &self.j_map(s)).scale(2.0 * s.trace() / n);
            v += &commutator(&self.e_map(s1), s).scale(2.0 * k);
            v += &commutator(s, &self.e_map(si)).scale(cc);
            v += &commutator(&self.e_map(s), si).scale(cc);
            v
        });
        add_into(&mut out_a, &local);
        let mut out = Vec::with_capacity(st.sites.len());
        for (i, site) in st.sites.iter().enumerate() {
            if i == a {
                out.push(Vec::new());
                continue;
            }
            let cross = pointwise(&[sa, &sx, &site.s], |p| {
                let (s, s1, si) = (p[0], p[1], p[2]);
                let x = self.i_map(a, i, si);
                let inner = self.i_map(a, i, &commutator(si, &self.i_map(i, a, s)));
                let es = self.e_map(s);
                let mut v = commutator(&x, &commutator(s, s1)).scale(-k / cc);
                v += &(s * &inner);
                v += &(&inner * s);
                v += &(&(&es * &x) * s).scale(c(2.0, 0.0));
                v -= &(&(&es * s) * &x);
                v -= &(&self.e_map(&(s * &x)) * s);
                v
            });
            add_into(&mut out_a, &cross);
            let site_eq = pointwise(&[&site.s, sa, &sx, &sum], |p| {
                let (si, s, s1, sm) = (p[0], p[1], p[2], p[3]);
                let x = self.i_map(i, a, s);
                let sxm = commutator(si, &x);
                let mut v = commutator(si, &self.i_map(i, a, sm)).scale(cc);
                v -= &commutator(si, &self.i_map(i, a, &commutator(s, s1))).scale(k / cc);
                v -= &commutator(si, &self.j_ab_map(i, a, s)).scale(2.0 * s.trace() / n);
                v += &(&x * &sxm);
                v += &(&sxm * &x);
                v
            });
            out.push(site_eq);
        }
        out[a] = out_a;
        Ok(out)
    }

    /// `max_j |d_t U - k d_x V - [U, V]|` at each spectral sample, with
    /// `d_t U = sum_i L(d_t S^i, z - z_i)` from the equations of motion.
    pub fn zs_residual(&self, st: &FieldState, flow: FlowSpec, opts: EomOptions, zs: &[C]) -> Result<Vec<f64>> {
        let rates = self.eom(st, flow, opts)?;
        zs.par_iter()
            .map(|&z| {
                let u = self.build_u(st, z)?;
                let v = self.build_v(st, flow, z)?;
                let vx = spectral_dx(&v);
                let mut ut = zero_field(st.n(), st.grid_len());
                for (rate, za) in rates.iter().zip(&self.zs) {
                    add_into(&mut ut, &Self::contract_field(&self.expansion.r(z - za)?, rate));
                }
                let mut worst: f64 = 0.0;
                for j in 0..u.len() {
                    let res = &(&ut[j] - &vx[j].scale(st.k)) - &commutator(&u[j], &v[j]);
                    worst = worst.max(res.max_abs());
                }
                Ok(worst)
            })
            .collect()
    }

    /// Elliptic U assembled independently in the basis `T_a`:
    /// `sum_j sum_{a != 0} S^j_a T_a exp(2 pi i a_2 (z - z_j)/N) phi(z - z_j, w_a)`,
    /// plus `1 sum_j S^j_0 E1(z - z_j)` when `identity_part` is set, which
    /// requires `sum_j S^j_0 = 0` at every grid point.
    pub fn build_u_tbasis(&self, st: &FieldState, z: C, identity_part: bool) -> Result<Field> {
        self.check_state(st)?;
        self.guard_point(z)?;
        let (n, tau) = match st.family {
            RFamily::Elliptic { n, tau } => (n, tau),
            _ => return Err(LabError::Argument("the T-basis form needs the elliptic family".into())),
        };
        let nf = n as f64;
        let mut basis = Vec::new();
        for a1 in 0..n as i64 {
            for a2 in 0..n as i64 {
                let t = belavin_t(n, a1, a2);
                let dual = Matrix::from_fn(n, |i, j| t[(j, i)].conj());
                basis.push((a1, a2, t, dual));
            }
        }
        let mut out = zero_field(n, st.grid_len());
        for j in 0..st.grid_len() {
            let mut s0_sum = c(0.0, 0.0);
            for site in &st.sites {
                let s = &site.s[j];
                let w = z - site.z;
                for (a1, a2, t, dual) in &basis {
                    let coef = (dual * s).trace() / nf;
                    if *a1 == 0 && *a2 == 0 {
                        s0_sum += coef;
                        if identity_part {
                            out[j] += &Matrix::identity(n).scale(coef * e1_jet(w, &tau).0);
                        }
                        continue;
                    }
                    let om = (tau.tau() * *a2 as f64 + *a1 as f64) / nf;
                    let phase = C::from_polar(1.0, 0.0) * (c(0.0, 2.0 * std::f64::consts::PI * *a2 as f64 / nf) * w).exp();
                    let ph = kronecker_phi(Flavor::Elliptic(tau), om, w)?;
                    out[j] += &t.scale(coef * phase * ph);
                }
            }
            if identity_part && s0_sum.norm() > 1e-12 {
                return Err(LabError::Argument(format!(
                    "identity part needs sum_j S^j_(0,0) = 0, found {s0_sum}"
                )));
            }
        }
        Ok(out)
    }
}

trait WithSite {
    fn with_site(self, a: usize) -> LabError;
}

impl WithSite for LabError {
    fn with_site(self, a: usize) -> LabError {
        match self {
            LabError::Singularity { what, point } => LabError::Singularity {
                what: format!("{what} {a}"),
                point,
            },
            other => other,
        }
    }
}

// convenience wrappers building the kernels on the fly

pub fn build_u(state: &FieldState, z: C) -> Result<Field> {
    Model2d::new(state)?.build_u(state, z)
}

pub fn solve_t(state: &FieldState, a: usize) -> Result<Field> {
    Model2d::new(state)?.solve_t(state, a)
}

pub fn build_v(state: &FieldState, flow: FlowSpec, z: C) -> Result<Field> {
    Model2d::new(state)?.build_v(state, flow, z)
}

pub fn eom_2d(state: &FieldState, flow: FlowSpec, opts: EomOptions) -> Result<Vec<Field>> {
    Model2d::new(state)?.eom(state, flow, opts)
}

pub fn zs_residual(state: &FieldState, flow: FlowSpec, opts: EomOptions, z_samples: &[C]) -> Result<Vec<f64>> {
    Model2d::new(state)?.zs_residual(state, flow, opts, z_samples)
}

// ---------------------------------------------------------------------------
// twist functions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwistKind {
    Rational,
    Elliptic,
}

/// `k(z)/k = prod_b (z - y_b)/(z - w_b)` (rational) or
/// `prod_b theta(z - y_b)/theta(z - w_b)` (elliptic).
#[derive(Clone, Debug, PartialEq)]
pub struct TwistFunction {
    kind: TwistKind,
    poles: Vec<C>,
    zeros: Vec<C>,
    tau: Option<EllipticModulus>,
}

impl TwistFunction {
    pub fn kind(&self) -> TwistKind {
        self.kind
    }

    pub fn poles(&self) -> &[C] {
        &self.poles
    }

    pub fn zeros(&self) -> &[C] {
        &self.zeros
    }
}

/// Validated twist function.
pub fn twist_make(kind: TwistKind, poles: &[C], zeros: &[C], tau: Option<C>) -> Result<TwistFunction> {
    if poles.len() != zeros.len() {
        return Err(LabError::Argument(format!(
            "{} poles but {} zeros",
            poles.len(),
            zeros.len()
        )));
    }
    for (i, p) in poles.iter().enumerate() {
        if poles[..i].iter().any(|q| (p - q).norm() < POLE_EXCLUSION) {
            return Err(LabError::Argument("twist poles must be distinct".into()));
        }
    }
    let tau = match kind {
        TwistKind::Rational => None,
        TwistKind::Elliptic => {
            let m = EllipticModulus::new(
                tau.ok_or_else(|| LabError::Argument("elliptic twist needs tau".into()))?,
            )?;
            let gap: C = zeros.iter().sum::<C>() - poles.iter().sum::<C>();
            if gap.norm() > 1e-10 {
                return Err(LabError::Periodicity(format!(
                    "sum of zeros minus sum of poles is {gap}, must vanish"
                )));
            }
            Some(m)
        }
    };
    Ok(TwistFunction {
        kind,
        poles: poles.to_vec(),
        zeros: zeros.to_vec(),
        tau,
    })
}

fn twist_factor(t: &TwistFunction, z: C) -> C {
    match t.tau {
        None => z,
        Some(m) => theta(z, &m),
    }
}

fn twist_guard(t: &TwistFunction, z: C) -> f64 {
    match t.tau {
        None => z.norm(),
        Some(m) => m.lattice_distance(z),
    }
}

/// `k(z)/k`.
pub fn twist_eval(t: &TwistFunction, z: C) -> Result<C> {
    let mut v = c(1.0, 0.0);
    for (&w, &y) in t.poles.iter().zip(&t.zeros) {
        if twist_guard(t, z - w) < 1e-12 {
            return Err(singular("twist function pole", z));
        }
        v *= twist_factor(t, z - y) / twist_factor(t, z - w);
    }
    Ok(v)
}

/// Residues `s_b` of `k(z)/k` at its poles.
pub fn twist_residues(t: &TwistFunction) -> Vec<C> {
    let d1 = t.tau.map(|m| theta_jet(c(0.0, 0.0), &m)[1]).unwrap_or(c(1.0, 0.0));
    t.poles
        .iter()
        .enumerate()
        .map(|(b, &wb)| {
            let num: C = t.zeros.iter().map(|&y| twist_factor(t, wb - y)).product();
            let den: C = t
                .poles
                .iter()
                .enumerate()
                .filter(|&(cix, _)| cix != b)
                .map(|(_, &wc)| twist_factor(t, wb - wc))
                .product();
            num / (d1 * den)
        })
        .collect()
}

/// Deformed `U~(z) = (k/k(z)) U(z)` per grid point.
pub fn twist_apply(state: &FieldState, t: &TwistFunction, z: C) -> Result<Field> {
    let kz = twist_eval(t, z)?;
    if kz.norm() < 1e-12 {
        return Err(singular("zero of the twist function", z));
    }
    Ok(scale_field(&build_u(state, z)?, kz.inv()))
}

/// `r~_12(z, w) = (k(z)/k) r_12(z - w)`.
pub fn twisted_r(family: &RFamily, t: &TwistFunction, z: C, w: C) -> Result<TensorOp> {
    let e = Expansion::new(family)?;
    Ok(e.r(z - w)?.scale(twist_eval(t, z)?))
}

/// Partial fractions of `U~(z) = (k/k(z)) sum_a S^a/(z - z_a)` for a rational
/// twist and a rational U with constant residues: the poles and residues of
/// `U~`, the marked points first, then the zeros of `k(z)`.
pub fn twist_partial_fractions(residues: &[(C, Matrix)], t: &TwistFunction) -> Result<Vec<(C, Matrix)>> {
    if t.kind != TwistKind::Rational {
        return Err(LabError::Argument("partial fractions need a rational twist".into()));
    }
    let n = residues
        .first()
        .map(|r| r.1.dim())
        .ok_or_else(|| LabError::Argument("no residues".into()))?;
    let inv = |z: C| -> Result<C> { Ok(twist_eval(t, z)?.inv()) };
    let mut out = Vec::new();
    for (za, sa) in residues {
        out.push((*za, sa.scale(inv(*za)?)));
    }
    for (b, &yb) in t.zeros.iter().enumerate() {
        // residue of k/k(z) = prod (z - w)/(z - y) at y_b
        let num: C = t.poles.iter().map(|&w| yb - w).product();
        let den: C = t
            .zeros
            .iter()
            .enumerate()
            .filter(|&(cix, _)| cix != b)
            .map(|(_, &y)| yb - y)
            .product();
        let rho = num / den;
        let mut acc = Matrix::zeros(n);
        for (za, sa) in residues {
            if (yb - za).norm() < POLE_EXCLUSION {
                return Err(singular("twist zero on a marked point", yb));
            }
            acc += &sa.scale(rho / (yb - za));
        }
        out.push((yb, acc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models_fd::{GaudinFlow, GaudinState, Site, TopState};
    use crate::rmat::{residue, RESIDUE_CONTOUR};

    fn tau_i() -> C {
        c(0.0, 1.0)
    }

    fn spec(family: RFamily, cc: C, points: Vec<C>, seed: u64) -> RandomOrbitSpec {
        RandomOrbitSpec {
            family,
            k: c(0.7, 0.2),
            c: cc,
            points,
            eps: 0.2,
            scale: 1.0,
            grid: 64,
            seed,
        }
    }

    fn three_points() -> Vec<C> {
        vec![c(0.1, 0.05), c(0.45, -0.1), c(0.7, 0.3)]
    }

    fn probes() -> Vec<C> {
        vec![c(0.3, 0.4), c(0.9, -0.2), c(0.23, 0.61), c(-0.35, 0.12)]
    }

    #[test]
    fn orbit_field_is_rank_one_and_band_limited() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = orbit_field(3, c(2.0, 0.5), 0.3, 64, &mut rng);
        for s in &f {
            assert!((&(s * s) - &s.scale(c(2.0, 0.5))).max_abs() < 1e-12);
            assert!((s.trace() - c(2.0, 0.5)).norm() < 1e-12);
        }
        // at most four harmonics: the 32-point grid reproduces the 64-point field
        let coarse: Field = f.iter().step_by(2).cloned().collect();
        let fine = crate::evolve::spectral_interpolate(&coarse, &grid(64));
        for (a, b) in fine.iter().zip(&f) {
            assert!((a - b).max_abs() < 1e-11);
        }
    }

    #[test]
    fn minimal_orbit_report() {
        let e = Expansion::new(&RFamily::elliptic(2, tau_i()).unwrap()).unwrap();
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let (s, rep) = minimal_orbit(&[one, zero], &[one, zero], Some(&e)).unwrap();
        assert_eq!(s, Matrix::unit(2, 0, 0));
        assert_eq!(rep.c, one);
        assert!(rep.square_residual == 0.0 && rep.se_residual.unwrap() < 1e-14);
        assert!(matches!(
            minimal_orbit(&[one, zero], &[zero, one], None),
            Err(LabError::DegenerateOrbit(_))
        ));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let st = FieldState::random_orbit(&spec(RFamily::elliptic(2, c(0.3, 0.8)).unwrap(), c(1.0, 0.0), three_points(), 1)).unwrap();
        let text = st.to_json().unwrap();
        let back = FieldState::from_json(&text).unwrap();
        assert_eq!(back, st);
        assert_eq!(back.to_json().unwrap(), text);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["M"], 64);
        assert_eq!(v["n"], 2);
    }

    #[test]
    fn state_validation() {
        let fam = RFamily::yang(2).unwrap();
        let s = vec![Matrix::identity(2); 8];
        let site = |z| FieldSite { z, s: s.clone() };
        assert!(FieldState::new(fam.clone(), c(1.0, 0.0), None, vec![site(c(0.1, 0.0)), site(c(0.1, 0.0))]).is_err());
        assert!(FieldState::new(fam.clone(), c(0.0, 0.0), None, vec![site(c(0.1, 0.0))]).is_err());
        assert!(matches!(
            FieldState::new(fam, c(1.0, 0.0), Some(c(2.0, 0.0)), vec![site(c(0.1, 0.0))]),
            Err(LabError::Orbit(_))
        ));
    }

    #[test]
    fn single_site_yang_u_and_residue() {
        let st = FieldState::random_orbit(&spec(RFamily::yang(2).unwrap(), c(1.0, 0.0), vec![c(0.2, 0.1)], 4)).unwrap();
        let m = Model2d::new(&st).unwrap();
        let z = c(0.9, -0.4);
        let u = m.build_u(&st, z).unwrap();
        for (uj, sj) in u.iter().zip(&st.sites[0].s) {
            assert!((uj - &sj.scale((z - st.sites[0].z).inv())).max_abs() < 1e-12);
        }
        // residue at the marked point by quadrature
        let (rad, q) = RESIDUE_CONTOUR;
        let res = residue(
            |w| TensorOp::new(2, 1, m.expansion().r(w - st.sites[0].z)?.contract(&st.sites[0].s[5])),
            st.sites[0].z,
            rad,
            q,
        )
        .unwrap();
        assert!((res.matrix() - &st.sites[0].s[5]).max_abs() < 1e-6);
    }

    #[test]
    fn elliptic_u_matches_tbasis_form() {
        let pts = vec![c(0.1, 0.05), c(0.55, 0.3)];
        let st = FieldState::random_orbit(&spec(RFamily::elliptic(2, tau_i()).unwrap(), c(1.0, 0.0), pts, 2)).unwrap();
        let m = Model2d::new(&st).unwrap();
        let z = c(0.3, 0.62);
        let u = m.build_u(&st, z).unwrap();
        let tb = m.build_u_tbasis(&st, z, false).unwrap();
        let tau = EllipticModulus::new(tau_i()).unwrap();
        for j in 0..u.len() {
            let mut ident = Matrix::zeros(2);
            for site in &st.sites {
                ident += &Matrix::identity(2).scale(site.s[j].trace() / 2.0 * e1_jet(z - site.z, &tau).0);
            }
            assert!((&(&u[j] - &ident) - &tb[j]).max_abs() < 1e-9);
        }
        // identity part on request needs traceless total residue
        assert!(m.build_u_tbasis(&st, z, true).is_err());
    }

    #[test]
    fn tbasis_identity_part_with_balanced_traces() {
        let fam = RFamily::elliptic(3, c(0.3, 0.8)).unwrap();
        let base = FieldState::random_orbit(&spec(fam.clone(), c(1.0, 0.0), vec![c(0.1, 0.05), c(0.55, 0.3)], 5)).unwrap();
        let mut fields = base.fields();
        fields[1] = fields[1].iter().map(|s| s.scale(c(-1.0, 0.0))).collect();
        let st = FieldState::unchecked(fam, base.k, None, base.sites.iter().zip(fields).map(|(s, f)| FieldSite { z: s.z, s: f }).collect()).unwrap();
        let m = Model2d::new(&st).unwrap();
        let z = c(0.31, 0.44);
        let u = m.build_u(&st, z).unwrap();
        let tb = m.build_u_tbasis(&st, z, true).unwrap();
        for (a, b) in u.iter().zip(&tb) {
            assert!((a - b).max_abs() < 1e-9);
        }
    }

    #[test]
    fn t_solve_constraint_and_reductions() {
        let st = FieldState::random_orbit(&spec(RFamily::elliptic(2, tau_i()).unwrap(), c(1.0, 0.0), three_points()[..2].to_vec(), 6)).unwrap();
        let m = Model2d::new(&st).unwrap();
        let t = m.solve_t(&st, 0).unwrap();
        assert_eq!(t.len(), 64);
        // constant fields: T = sum I
        let consts: Vec<Field> = st.sites.iter().map(|s| vec![s.s[0].clone(); 64]).collect();
        let flat = st.with_fields(consts).unwrap();
        let t = m.solve_t(&flat, 0).unwrap();
        let want = m.i_map(0, 1, &flat.sites[1].s[0]);
        assert!(t.iter().all(|x| (x - &want).max_abs() < 1e-12));
        // no orbit eigenvalue: refuse
        let mut free = st.clone();
        free.orbit_c = None;
        assert!(m.solve_t(&free, 0).is_err());
    }

    #[test]
    fn v_forms_agree_on_orbit() {
        for cc in [c(1.0, 0.0), c(2.0, 0.5)] {
            let st = FieldState::random_orbit(&spec(RFamily::elliptic(3, tau_i()).unwrap(), cc, three_points()[..2].to_vec(), 8)).unwrap();
            let m = Model2d::new(&st).unwrap();
            let z = c(0.33, 0.41);
            let flow = FlowSpec::Second { a: 0 };
            let v1 = m.build_v(&st, flow, z).unwrap();
            let v2 = m.build_v_rewritten(&st, 0, z).unwrap();
            for (a, b) in v1.iter().zip(&v2) {
                assert!((a - b).max_abs() < 1e-9, "{}", (a - b).max_abs());
            }
        }
    }

    #[test]
    fn yang_second_flow_v_two_sites() {
        let pts = vec![c(0.1, 0.05), c(0.6, -0.2)];
        let st = FieldState::random_orbit(&spec(RFamily::yang(2).unwrap(), c(1.0, 0.0), pts.clone(), 3)).unwrap();
        let m = Model2d::new(&st).unwrap();
        let z = c(0.4, 0.7);
        let v = m.build_v(&st, FlowSpec::Second { a: 0 }, z).unwrap();
        let sx = spectral_dx(&st.sites[0].s);
        let (za, zb) = (pts[0], pts[1]);
        for j in 0..64 {
            let s = &st.sites[0].s[j];
            let want = &(&s.scale((z - za).powi(-2)) - &commutator(s, &sx[j]).scale(st.k / (z - za)))
                + &st.sites[1].s[j].scale(((z - za) * (za - zb)).inv());
            assert!((&v[j] - &want).max_abs() < 1e-9);
        }
    }

    fn zs_max(st: &FieldState, flow: FlowSpec, opts: EomOptions) -> f64 {
        zs_residual(st, flow, opts, &probes()).unwrap().into_iter().fold(0.0, f64::max)
    }

    #[test]
    fn first_flows_close_on_general_fields() {
        for fam in [RFamily::elliptic(2, tau_i()).unwrap(), RFamily::trig7v(c(0.5, 0.0)).unwrap(), RFamily::yang(3).unwrap()] {
            let mut st = FieldState::random_orbit(&spec(fam, c(1.0, 0.0), three_points(), 9)).unwrap();
            // break the orbit: first flows do not need it
            let f = st.fields().into_iter().map(|fl| fl.into_iter().map(|s| &s + &Matrix::identity(s.dim()).scale(c(0.3, 0.1))).collect()).collect();
            st = st.with_fields(f).unwrap();
            st.orbit_c = None;
            for flow in [FlowSpec::First { a: 1 }, FlowSpec::FirstDifference { a: 0, b: 2 }] {
                let r = zs_max(&st, flow, EomOptions::default());
                assert!(r < 1e-9, "{flow:?} {r}");
            }
            let printed = EomOptions { reading: Reading::Printed, ..Default::default() };
            assert!(zs_max(&st, FlowSpec::First { a: 1 }, printed) > 1e-3);
        }
    }

    #[test]
    fn second_flow_zero_curvature() {
        let fam = RFamily::elliptic(2, tau_i()).unwrap();
        for (npts, cc) in [(1, c(1.0, 0.0)), (2, c(1.0, 0.0)), (3, c(2.0, 0.5))] {
            let st = FieldState::random_orbit(&spec(fam.clone(), cc, three_points()[..npts].to_vec(), 10)).unwrap();
            for form in [EomForm::General, EomForm::Minimal] {
                let r = zs_max(&st, FlowSpec::Second { a: 0 }, EomOptions { form, reading: Reading::Consistent });
                assert!(r < 1e-8, "{npts} sites {form:?}: {r}");
            }
        }
    }

    #[test]
    fn printed_inner_index_fails_for_elliptic() {
        let fam = RFamily::elliptic(3, tau_i()).unwrap();
        let st = FieldState::random_orbit(&spec(fam, c(1.0, 0.0), three_points()[..2].to_vec(), 12)).unwrap();
        let opts = EomOptions { form: EomForm::General, reading: Reading::Printed };
        assert!(zs_max(&st, FlowSpec::Second { a: 0 }, opts) > 1e-4);
    }

    #[test]
    fn general_and_minimal_forms_agree() {
        let fam = RFamily::elliptic(3, c(0.3, 0.8)).unwrap();
        let st = FieldState::random_orbit(&spec(fam, c(2.0, 0.5), three_points(), 13)).unwrap();
        let m = Model2d::new(&st).unwrap();
        let flow = FlowSpec::Second { a: 1 };
        let g = m.eom(&st, flow, EomOptions::default()).unwrap();
        let mn = m.eom(&st, flow, EomOptions { form: EomForm::Minimal, ..Default::default() }).unwrap();
        for (a, b) in g.iter().flatten().zip(mn.iter().flatten()) {
            assert!((a - b).max_abs() < 1e-9);
        }
    }

    #[test]
    fn yang_pcm_reproduces_two_point_system() {
        let pts = vec![c(0.3, 0.0), c(-0.4, 0.1)];
        let mut st = FieldState::random_orbit(&spec(RFamily::yang(2).unwrap(), c(1.0, 0.0), pts.clone(), 14)).unwrap();
        st.k = c(1.0, 0.0);
        let out = eom_2d(&st, FlowSpec::FirstDifference { a: 0, b: 1 }, EomOptions::default()).unwrap();
        let (s1, s2) = (&st.sites[0].s, &st.sites[1].s);
        let (d1, d2) = (spectral_dx(s1), spectral_dx(s2));
        let w = 2.0 / (pts[0] - pts[1]);
        for j in 0..64 {
            let br = commutator(&s1[j], &s2[j]);
            assert!((&(&out[0][j] - &d1[j]) + &br.scale(w)).max_abs() < 1e-12);
            assert!((&(&out[1][j] + &d2[j]) - &br.scale(w)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn x_independent_reduction() {
        let fam = RFamily::elliptic(3, tau_i()).unwrap();
        let st = FieldState::random_orbit(&spec(fam.clone(), c(1.0, 0.0), three_points(), 15)).unwrap();
        let consts: Vec<Field> = st.sites.iter().map(|s| vec![s.s[7].clone(); 16]).collect();
        let flat = FieldState::unchecked(fam.clone(), st.k, None, st.sites.iter().zip(consts).map(|(s, f)| FieldSite { z: s.z, s: f }).collect()).unwrap();
        let gd = GaudinState::new(st.sites.iter().map(|s| Site { z: s.z, s: s.s[7].clone() }).collect(), &fam).unwrap();
        let m = Model2d::new(&flat).unwrap();
        for a in 0..3 {
            let two = m.eom(&flat, FlowSpec::First { a }, EomOptions::default()).unwrap();
            let fd = gd.eom(GaudinFlow::Site(a), Reading::Consistent).unwrap();
            for (f2, f1) in two.iter().zip(&fd) {
                assert!(f2.iter().all(|x| (x - f1).max_abs() < 1e-12));
            }
        }
        let two = m.eom(&flat, FlowSpec::FirstDifference { a: 0, b: 2 }, EomOptions::default()).unwrap();
        let fa = gd.eom(GaudinFlow::Site(0), Reading::Consistent).unwrap();
        let fb = gd.eom(GaudinFlow::Site(2), Reading::Consistent).unwrap();
        for i in 0..3 {
            let want = &fb[i] - &fa[i];
            assert!(two[i].iter().all(|x| (x - &want).max_abs() < 1e-12));
        }
        // single-site second flow of constant data is the top scaled by -2 tr(S)/N
        let one = FieldState::new(fam.clone(), st.k, Some(c(1.0, 0.0)), vec![FieldSite { z: c(0.0, 0.0), s: vec![st.sites[0].s[7].clone(); 16] }]).unwrap();
        let ll = eom_2d(&one, FlowSpec::Second { a: 0 }, EomOptions::default()).unwrap();
        let top = TopState::new(st.sites[0].s[7].clone(), &fam).unwrap();
        let want = top.eom().scale(c(-2.0 / 3.0, 0.0));
        assert!(ll[0].iter().all(|x| (x - &want).max_abs() < 1e-12));
    }

    #[test]
    fn flow_validation() {
        let st = FieldState::random_orbit(&spec(RFamily::yang(2).unwrap(), c(1.0, 0.0), three_points()[..2].to_vec(), 16)).unwrap();
        let opts = EomOptions::default();
        assert!(eom_2d(&st, FlowSpec::First { a: 2 }, opts).is_err());
        assert!(eom_2d(&st, FlowSpec::FirstDifference { a: 1, b: 1 }, opts).is_err());
        assert!(build_u(&st, st.sites[0].z).is_err());
    }

    #[test]
    fn twist_rational() {
        let t = twist_make(TwistKind::Rational, &[c(0.3, 0.1)], &[c(-0.2, 0.4)], None).unwrap();
        assert!((twist_residues(&t)[0] - (c(0.3, 0.1) - c(-0.2, 0.4))).norm() < 1e-15);
        assert!((twist_eval(&t, c(1e8, 0.0)).unwrap() - 1.0).norm() < 1e-7);
        let t2 = twist_make(TwistKind::Rational, &[c(0.3, 0.1), c(0.9, -0.5)], &[c(-0.2, 0.4), c(0.1, 0.7)], None).unwrap();
        let (rad, q) = RESIDUE_CONTOUR;
        for (w, s) in t2.poles().iter().zip(twist_residues(&t2)) {
            let num = residue(|z| Ok(TensorOp::new(1, 1, Matrix::diag(&[twist_eval(&t2, z).unwrap()])).unwrap()), *w, rad, q).unwrap();
            assert!((num.get(0, 0) - s).norm() < 1e-10);
        }
        assert!(twist_make(TwistKind::Rational, &[c(0.3, 0.1)], &[], None).is_err());
    }

    #[test]
    fn twist_elliptic() {
        let tau = c(0.1, 1.1);
        let poles = [c(0.2, 0.1), c(0.6, 0.5)];
        let zeros = [c(0.35, 0.3), c(0.45, 0.3)];
        let t = twist_make(TwistKind::Elliptic, &poles, &zeros, Some(tau)).unwrap();
        for z in [c(0.13, 0.77), c(-0.4, 0.2)] {
            let a = twist_eval(&t, z).unwrap();
            assert!((twist_eval(&t, z + 1.0).unwrap() - a).norm() < 1e-10);
            assert!((twist_eval(&t, z + tau).unwrap() - a).norm() < 1e-10);
        }
        let (rad, q) = RESIDUE_CONTOUR;
        for (w, s) in poles.iter().zip(twist_residues(&t)) {
            let num = residue(|z| Ok(TensorOp::new(1, 1, Matrix::diag(&[twist_eval(&t, z).unwrap()])).unwrap()), *w, rad, q).unwrap();
            assert!((num.get(0, 0) - s).norm() < 1e-9);
        }
        assert!(matches!(
            twist_make(TwistKind::Elliptic, &poles, &[c(0.0, 0.0), c(0.1, 0.0)], Some(tau)),
            Err(LabError::Periodicity(_))
        ));
    }

    #[test]
    fn heisenberg_twist_partial_fractions() {
        let s = Matrix::from_fn(2, |i, j| c(1.0 + i as f64, 0.5 - j as f64));
        let (z1, w1, y1) = (c(0.2, 0.1), c(-0.5, 0.3), c(0.8, -0.4));
        let t = twist_make(TwistKind::Rational, &[w1], &[y1], None).unwrap();
        let pf = twist_partial_fractions(&[(z1, s.clone())], &t).unwrap();
        let s1 = s.scale((z1 - w1) / (z1 - y1));
        let s2 = s.scale(-(y1 - w1) / (z1 - y1));
        assert!((pf[0].0 - z1).norm() == 0.0 && (&pf[0].1 - &s1).max_abs() < 1e-12);
        assert!((pf[1].0 - y1).norm() == 0.0 && (&pf[1].1 - &s2).max_abs() < 1e-12);
        assert!((&(&pf[0].1 + &pf[1].1) - &s).max_abs() < 1e-12);
        // trivial twist
        let triv = twist_make(TwistKind::Rational, &[w1], &[w1], None).unwrap();
        let st = FieldState::random_orbit(&spec(RFamily::yang(2).unwrap(), c(1.0, 0.0), vec![z1], 1)).unwrap();
        let z = c(0.7, 0.9);
        let (a, b) = (twist_apply(&st, &triv, z).unwrap(), build_u(&st, z).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).max_abs() < 1e-14));
        assert!(twist_apply(&st, &t, w1).is_err());
        let tr = twisted_r(&RFamily::yang(2).unwrap(), &t, z, c(0.1, 0.0)).unwrap();
        assert!(tr.max_abs() > 0.0);
    }
}
