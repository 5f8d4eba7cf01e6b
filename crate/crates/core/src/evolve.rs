//! Time integration of the 2d equations of motion on the periodic grid,
//! spectral differentiation, monodromy matrices and conservation logging.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{singular, LabError, Result};
use crate::models_2d::{complex_list, EomOptions, Field, FieldState, FlowSpec, Model2d, RandomOrbitSpec};
use crate::specfn::POLE_EXCLUSION;
use crate::tensor::{commutator, Matrix};

/// Integer wavenumbers of an `m`-point periodic grid in FFT order, with the
/// Nyquist mode (even `m`) mapped to zero.
fn wavenumbers(m: usize) -> Vec<f64> {
    (0..m)
        .map(|j| {
            let j = j as i64;
            let m = m as i64;
            if 2 * j < m {
                j as f64
            } else if 2 * j == m {
                0.0
            } else {
                (j - m) as f64
            }
        })
        .collect()
}

/// Entry-wise discrete Fourier transform of a gridded matrix field:
/// `coeffs[(i, j)][q]` for each entry, unnormalized.
fn forward(field: &[Matrix]) -> Vec<Vec<C>> {
    let m = field.len();
    let n = field[0].dim();
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut out = Vec::with_capacity(n * n);
    for e in 0..n * n {
        let mut buf: Vec<C> = field.iter().map(|s| s.as_slice()[e]).collect();
        fft.process(&mut buf);
        out.push(buf);
    }
    out
}

fn backward(n: usize, coeffs: Vec<Vec<C>>) -> Vec<Matrix> {
    let m = coeffs[0].len();
    let fft = FftPlanner::new().plan_fft_inverse(m);
    let scale = 1.0 / m as f64;
    let mut entries = Vec::with_capacity(n * n);
    for mut buf in coeffs {
        fft.process(&mut buf);
        entries.push(buf);
    }
    (0..m)
        .map(|j| Matrix::from_fn(n, |a, b| entries[a * n + b][j] * scale))
        .collect()
}

/// Spectral derivative of order `order` on the uniform grid of `[0, 2 pi)`.
pub fn spectral_derivative(field: &[Matrix], order: u32) -> Vec<Matrix> {
    if field.is_empty() {
        return Vec::new();
    }
    let n = field[0].dim();
    let ks = wavenumbers(field.len());
    let mut coeffs = forward(field);
    for buf in coeffs.iter_mut() {
        for (v, &k) in buf.iter_mut().zip(&ks) {
            *v *= C::new(0.0, k).powu(order);
        }
    }
    backward(n, coeffs)
}

/// `d/dx` of a band-limited periodic field.
pub fn spectral_dx(field: &[Matrix]) -> Vec<Matrix> {
    spectral_derivative(field, 1)
}

/// Trigonometric interpolant of a gridded field evaluated at arbitrary
/// points; the Nyquist mode is split symmetrically.
pub fn spectral_interpolate(field: &[Matrix], xs: &[f64]) -> Vec<Matrix> {
    let m = field.len();
    let n = field[0].dim();
    let coeffs = forward(field);
    let half = m as i64 / 2;
    xs.iter()
        .map(|&x| {
            let mut phases = Vec::with_capacity(m);
            for q in 0..m {
                let k = if (q as i64) < half || (m % 2 == 1 && q as i64 == half) {
                    q as f64
                } else {
                    q as f64 - m as f64
                };
                let w = if m.is_multiple_of(2) && q as i64 == half {
                    (k * x).cos() * C::new(1.0, 0.0)
                } else {
                    C::from_polar(1.0, k * x)
                };
                phases.push(w / m as f64);
            }
            Matrix::from_fn(n, |a, b| {
                coeffs[a * n + b]
                    .iter()
                    .zip(&phases)
                    .map(|(c, p)| c * p)
                    .sum()
            })
        })
        .collect()
}

/// Grid points `x_j = 2 pi j / m`.
pub fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).collect()
}

/// How the path-ordered exponential is discretized per grid cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonodromyScheme {
    /// `exp(U(x_mid) dx / k)`, second order in the cell width.
    Midpoint,
    /// Two-point Gauss-Legendre Magnus expansion, fourth order.
    #[default]
    Magnus4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonodromyOptions {
    #[serde(default)]
    pub scheme: MonodromyScheme,
    /// Sub-cells per grid cell.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    8
}

impl Default for MonodromyOptions {
    fn default() -> Self {
        MonodromyOptions {
            scheme: MonodromyScheme::default(),
            substeps: default_substeps(),
        }
    }
}

/// `U(z, x)` at arbitrary points from the trigonometric interpolants of the
/// residue fields.
pub fn u_at(model: &Model2d, state: &FieldState, z: C, xs: &[f64]) -> Result<Vec<Matrix>> {
    let n = state.n();
    let mut out = vec![Matrix::zeros(n); xs.len()];
    for site in &state.sites {
        if state.family.spectral_distance(z - site.z) < POLE_EXCLUSION {
            return Err(singular("monodromy probe on marked point", z));
        }
        let r = model.expansion().r(z - site.z)?;
        for (o, s) in out.iter_mut().zip(spectral_interpolate(&site.s, xs)) {
            *o += &r.contract(&s);
        }
    }
    Ok(out)
}

/// Monodromy `T(z, 2 pi)` of `k d_x T = T U`, base point `x = 0`: the
/// product of cell propagators with `x` increasing to the right.
pub fn monodromy(model: &Model2d, state: &FieldState, z: C, opts: MonodromyOptions) -> Result<Matrix> {
    let m = state.grid_len();
    let sub = opts.substeps.max(1);
    let cells = m * sub;
    let h = 2.0 * PI / cells as f64;
    let kinv = state.k.inv();
    let mut t = Matrix::identity(state.n());
    match opts.scheme {
        MonodromyScheme::Midpoint => {
            let xs: Vec<f64> = (0..cells).map(|j| (j as f64 + 0.5) * h).collect();
            for u in u_at(model, state, z, &xs)? {
                t = &t * &u.scale(kinv * h).exp();
            }
        }
        MonodromyScheme::Magnus4 => {
            let d = 3f64.sqrt() / 6.0 * h;
            let xs: Vec<f64> = (0..cells)
                .flat_map(|j| {
                    let mid = (j as f64 + 0.5) * h;
                    [mid - d, mid + d]
                })
                .collect();
            let us = u_at(model, state, z, &xs)?;
            for pair in us.chunks(2) {
                let (a1, a2) = (pair[0].scale(kinv), pair[1].scale(kinv));
                let mut omega = (&a1 + &a2).scale(C::new(h / 2.0, 0.0));
                omega += &commutator(&a1, &a2).scale(C::new(3f64.sqrt() * h * h / 12.0, 0.0));
                t = &t * &omega.exp();
            }
        }
    }
    if !t.is_finite() {
        return Err(LabError::NonFinite(format!("monodromy at {z}")));
    }
    Ok(t)
}

fn combine(base: &[Field], rates: &[Field], h: C) -> Vec<Field> {
    base.iter()
        .zip(rates)
        .map(|(f, r)| f.iter().zip(r).map(|(a, b)| a + &b.scale(h)).collect())
        .collect()
}

/// One classical Runge-Kutta step; the orbit residual after the step is
/// returned for orbit-constrained states.
pub fn step_rk4(model: &Model2d, state: &FieldState, flow: FlowSpec, opts: EomOptions, dt: f64) -> Result<(FieldState, Option<f64>)> {
    let y0 = state.fields();
    let h = C::new(dt, 0.0);
    let k1 = model.eom(state, flow, opts)?;
    let s2 = state.with_fields(combine(&y0, &k1, h / 2.0))?;
    let k2 = model.eom(&s2, flow, opts)?;
    let s3 = state.with_fields(combine(&y0, &k2, h / 2.0))?;
    let k3 = model.eom(&s3, flow, opts)?;
    let s4 = state.with_fields(combine(&y0, &k3, h))?;
    let k4 = model.eom(&s4, flow, opts)?;
    let mut y = y0;
    for (i, f) in y.iter_mut().enumerate() {
        for (j, v) in f.iter_mut().enumerate() {
            let mut inc = &k1[i][j] + &k4[i][j];
            inc += &(&k2[i][j] + &k3[i][j]).scale(C::new(2.0, 0.0));
            *v += &inc.scale(h / 6.0);
        }
    }
    let next = state.with_fields(y)?;
    let drift = next.orbit_c.map(|c| next.orbit_residual(c));
    Ok((next, drift))
}

/// Orbit residual above which a drift warning is recorded.
pub const ORBIT_DRIFT_WARN: f64 = 1e-6;

/// Initial data of a simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    State(FieldState),
    RandomOrbit(RandomOrbitSpec),
}

impl Initial {
    pub fn build(&self) -> Result<FieldState> {
        match self {
            Initial::State(s) => Ok(s.clone()),
            Initial::RandomOrbit(spec) => FieldState::random_orbit(spec),
        }
    }
}

/// Drift bounds checked by [`conservation_summary`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Bound on `|tr T - tr T(0)|` and `|tr T^2 - tr T^2(0)|`.
    #[serde(default = "default_monodromy_bound")]
    pub monodromy: f64,
    /// Bound on the drift of grid means of `tr (S^a)^k`.
    #[serde(default = "default_power_bound")]
    pub power_traces: f64,
}

fn default_monodromy_bound() -> f64 {
    1e-6
}

fn default_power_bound() -> f64 {
    1e-9
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            monodromy: default_monodromy_bound(),
            power_traces: default_power_bound(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub flow: FlowSpec,
    #[serde(default)]
    pub eom: EomOptions,
    pub initial: Initial,
    /// Time step; `None` picks `0.1 / max |RHS|` at `t = 0`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub steps: usize,
    #[serde(default, with = "complex_list")]
    pub z_probes: Vec<C>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub monodromy: MonodromyOptions,
    #[serde(default)]
    pub bounds: Bounds,
}

fn default_record_every() -> usize {
    1
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Argument(format!("config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| LabError::Argument(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt != 0.0) {
                return Err(LabError::Argument("dt must be finite and non-zero".into()));
            }
        }
        if self.record_every == 0 {
            return Err(LabError::Argument("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// One logged value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub t: f64,
    /// `site<a>` or `probe<p>`.
    pub subject: String,
    pub name: String,
    pub value: C,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshots: Vec<(f64, FieldState)>,
    pub log: Vec<LogRow>,
    pub warnings: Vec<String>,
    /// Reason of an early stop; the last snapshot is the last finite state.
    pub aborted: Option<String>,
}

/// Largest entry of the right-hand side, for the default step.
pub fn rhs_scale(model: &Model2d, state: &FieldState, flow: FlowSpec, opts: EomOptions) -> Result<f64> {
    Ok(model
        .eom(state, flow, opts)?
        .iter()
        .flatten()
        .map(Matrix::max_abs)
        .fold(0.0, f64::max))
}

fn grid_mean(f: &Field, g: impl Fn(&Matrix) -> C) -> C {
    f.iter().map(g).sum::<C>() / f.len() as f64
}

fn log_invariants(model: &Model2d, st: &FieldState, t: f64, cfg: &SimConfig, log: &mut Vec<LogRow>) -> Result<()> {
    for (a, site) in st.sites.iter().enumerate() {
        for k in 1..=st.n() {
            let powers: Vec<Matrix> = site.s.iter().map(|s| s.pow(k)).collect();
            let v = grid_mean(&powers, Matrix::trace);
            log.push(LogRow {
                t,
                subject: format!("site{a}"),
                name: format!("tr_S^{k}"),
                value: v,
            });
        }
    }
    let rows: Vec<Result<(C, C)>> = cfg
        .z_probes
        .par_iter()
        .map(|&z| {
            let tm = monodromy(model, st, z, cfg.monodromy)?;
            Ok((tm.trace(), (&tm * &tm).trace()))
        })
        .collect();
    for (p, row) in rows.into_iter().enumerate() {
        let (t1, t2) = row?;
        for (name, value) in [("tr_T", t1), ("tr_T^2", t2)] {
            log.push(LogRow {
                t,
                subject: format!("probe{p}"),
                name: name.into(),
                value,
            });
        }
    }
    Ok(())
}

/// Integrates the configured flow with RK4, recording every
/// `record_every` steps. A non-finite state stops the run.
pub fn run(cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let state = cfg.initial.build()?;
    let model = Model2d::new(&state)?;
    for &z in &cfg.z_probes {
        for site in &state.sites {
            if state.family.spectral_distance(z - site.z) < POLE_EXCLUSION {
                return Err(singular("probe on marked point", z));
            }
        }
    }
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => {
            let s = rhs_scale(&model, &state, cfg.flow, cfg.eom)?;
            if s > 0.0 { 0.1 / s } else { 0.1 }
        }
    };
    let mut traj = Trajectory {
        dt,
        snapshots: vec![(0.0, state.clone())],
        log: Vec::new(),
        warnings: Vec::new(),
        aborted: None,
    };
    log_invariants(&model, &state, 0.0, cfg, &mut traj.log)?;
    let mut cur = state;
    let mut warned = false;
    for step in 1..=cfg.steps {
        let t = step as f64 * dt;
        let (next, drift) = match step_rk4(&model, &cur, cfg.flow, cfg.eom, dt) {
            Ok(v) => v,
            Err(e) => {
                traj.aborted = Some(format!("step {step}: {e}"));
                break;
            }
        };
        if next.sites.iter().flat_map(|s| &s.s).any(|m| !m.is_finite()) {
            traj.aborted = Some(format!("non-finite field at step {step} (t = {t})"));
            break;
        }
        if let Some(d) = drift {
            if d > ORBIT_DRIFT_WARN && !warned {
                traj.warnings.push(format!("orbit drift {d:e} at step {step} (t = {t})"));
                warned = true;
            }
        }
        cur = next;
        if step % cfg.record_every == 0 {
            if let Err(e) = log_invariants(&model, &cur, t, cfg, &mut traj.log) {
                traj.aborted = Some(format!("step {step}: {e}"));
                break;
            }
            traj.snapshots.push((t, cur.clone()));
        }
    }
    Ok(traj)
}

/// Drift of one logged quantity over a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftRow {
    pub subject: String,
    pub name: String,
    pub initial: C,
    pub max_drift: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Max deviation of every logged quantity from its initial value.
pub fn conservation_summary(traj: &Trajectory, bounds: Bounds) -> Vec<DriftRow> {
    let mut rows: Vec<DriftRow> = Vec::new();
    for row in &traj.log {
        let bound = if row.subject.starts_with("probe") {
            bounds.monodromy
        } else {
            bounds.power_traces
        };
        match rows.iter_mut().find(|r| r.subject == row.subject && r.name == row.name) {
            Some(r) => {
                let d = (row.value - r.initial).norm();
                if d > r.max_drift || d.is_nan() {
                    r.max_drift = d;
                }
                r.passed = r.max_drift <= r.bound;
            }
            None => rows.push(DriftRow {
                subject: row.subject.clone(),
                name: row.name.clone(),
                initial: row.value,
                max_drift: 0.0,
                bound,
                passed: true,
            }),
        }
    }
    rows
}

/// CSV with header `t,subject,name,re,im`.
pub fn write_csv<W: std::io::Write>(traj: &Trajectory, out: W) -> Result<()> {
    let io = |e: csv::Error| LabError::Argument(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "subject", "name", "re", "im"]).map_err(io)?;
    for r in &traj.log {
        w.write_record([
            format!("{}", r.t),
            r.subject.clone(),
            r.name.clone(),
            format!("{:e}", r.value.re),
            format!("{:e}", r.value.im),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| LabError::Argument(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod spectral_tests {
    use super::*;

    fn sample(m: usize, f: impl Fn(f64) -> Matrix) -> Vec<Matrix> {
        grid(m).into_iter().map(f).collect()
    }

    #[test]
    fn derivative_of_cosine() {
        let a = Matrix::from_fn(2, |i, j| C::new(i as f64 + 1.0, j as f64 - 0.5));
        let f = sample(64, |x| a.scale(C::new(x.cos(), 0.0)));
        let d = spectral_dx(&f);
        for (dj, x) in d.iter().zip(grid(64)) {
            assert!((dj - &a.scale(C::new(-x.sin(), 0.0))).max_abs() < 1e-13);
        }
    }

    #[test]
    fn constant_has_zero_derivative() {
        let f = vec![Matrix::identity(3); 16];
        assert!(spectral_dx(&f).iter().all(|d| d.max_abs() < 1e-15));
    }

    #[test]
    fn second_derivative_symbol() {
        let a = Matrix::from_fn(2, |i, j| C::new(0.3 * i as f64, 1.0 - j as f64));
        let f = sample(64, |x| a.scale(C::new((3.0 * x).sin() + 0.5 * (5.0 * x).cos(), 0.2 * (2.0 * x).cos())));
        let twice = spectral_dx(&spectral_dx(&f));
        let direct = spectral_derivative(&f, 2);
        for (p, q) in twice.iter().zip(&direct) {
            assert!((p - q).max_abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_exact_for_band_limited_data() {
        let a = Matrix::from_fn(2, |i, j| C::new(1.0 + i as f64, j as f64));
        let g = |x: f64| a.scale(C::new((2.0 * x).cos(), (7.0 * x).sin()));
        let f = sample(32, g);
        let xs = [0.1, 1.234, 4.0, 6.2];
        for (v, &x) in spectral_interpolate(&f, &xs).iter().zip(&xs) {
            assert!((v - &g(x)).max_abs() < 1e-12);
        }
    }
}

#[cfg(test)]
mod sim_tests {
    use super::*;
    use crate::models_2d::FieldSite;
    use crate::models_fd::{GaudinFlow, GaudinState, Reading, Site};
    use crate::rmat::RFamily;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn pcm_spec(seed: u64) -> RandomOrbitSpec {
        RandomOrbitSpec {
            family: RFamily::yang(2).unwrap(),
            k: c(1.0, 0.0),
            c: c(1.0, 0.0),
            points: vec![c(1.0, 0.0), c(-1.0, 0.0)],
            eps: 0.2,
            scale: 0.5,
            grid: 64,
            seed,
        }
    }

    fn pcm_config(steps: usize, dt: f64) -> SimConfig {
        SimConfig {
            flow: FlowSpec::FirstDifference { a: 0, b: 1 },
            eom: EomOptions::default(),
            initial: Initial::RandomOrbit(pcm_spec(1)),
            dt: Some(dt),
            steps,
            z_probes: vec![c(0.3, 0.7), c(0.1, -1.2), c(0.0, 2.0)],
            record_every: 10,
            monodromy: MonodromyOptions::default(),
            bounds: Bounds::default(),
        }
    }

    fn max_diff(a: &FieldState, b: &FieldState) -> f64 {
        a.sites
            .iter()
            .zip(&b.sites)
            .flat_map(|(x, y)| x.s.iter().zip(&y.s))
            .map(|(p, q)| (p - q).max_abs())
            .fold(0.0, f64::max)
    }

    fn constant_state(fam: RFamily, s: &[Matrix], zs: &[C], m: usize) -> FieldState {
        let sites = s.iter().zip(zs).map(|(s, &z)| FieldSite { z, s: vec![s.clone(); m] }).collect();
        FieldState::unchecked(fam, c(0.8, 0.3), None, sites).unwrap()
    }

    #[test]
    fn monodromy_of_zero_and_constant_fields() {
        let fam = RFamily::elliptic(2, c(0.0, 1.0)).unwrap();
        let zs = [c(0.1, 0.05), c(0.55, 0.3)];
        let zero = constant_state(fam.clone(), &[Matrix::zeros(2), Matrix::zeros(2)], &zs, 16);
        let model = Model2d::new(&zero).unwrap();
        let z = c(0.3, 0.7);
        for scheme in [MonodromyScheme::Midpoint, MonodromyScheme::Magnus4] {
            let opts = MonodromyOptions { scheme, substeps: 1 };
            assert!((&monodromy(&model, &zero, z, opts).unwrap() - &Matrix::identity(2)).max_abs() < 1e-15);
        }
        let s = [
            Matrix::from_fn(2, |i, j| c(0.3 * i as f64 - 0.1, 0.2 * j as f64)),
            Matrix::from_fn(2, |i, j| c(0.1 + 0.1 * j as f64, -0.2 * i as f64)),
        ];
        let st = constant_state(fam, &s, &zs, 16);
        let u = model.build_u(&st, z).unwrap()[0].clone();
        let want = u.scale(c(2.0 * PI, 0.0) / st.k).exp();
        for scheme in [MonodromyScheme::Midpoint, MonodromyScheme::Magnus4] {
            let t = monodromy(&model, &st, z, MonodromyOptions { scheme, substeps: 2 }).unwrap();
            assert!((&t - &want).max_abs() < 1e-10);
        }
    }

    #[test]
    fn monodromy_convergence_orders() {
        let st = FieldState::random_orbit(&pcm_spec(3)).unwrap();
        let model = Model2d::new(&st).unwrap();
        let z = c(0.3, 0.7);
        let tr = |scheme, substeps| monodromy(&model, &st, z, MonodromyOptions { scheme, substeps }).unwrap().trace();
        let reference = tr(MonodromyScheme::Magnus4, 16);
        let e1 = (tr(MonodromyScheme::Midpoint, 1) - reference).norm();
        let e2 = (tr(MonodromyScheme::Midpoint, 2) - reference).norm();
        assert!((e1 / e2 - 4.0).abs() < 0.4, "midpoint ratio {}", e1 / e2);
        let f1 = (tr(MonodromyScheme::Magnus4, 1) - reference).norm();
        let f2 = (tr(MonodromyScheme::Magnus4, 2) - reference).norm();
        assert!(f1 / f2 > 12.0, "magnus ratio {}", f1 / f2);
    }

    #[test]
    fn elliptic_monodromy_traces_are_periodic() {
        let spec = RandomOrbitSpec {
            family: RFamily::elliptic(2, c(0.0, 1.0)).unwrap(),
            k: c(4.0, 0.0),
            c: c(1.0, 0.0),
            points: vec![c(0.1, 0.05), c(0.55, 0.3)],
            eps: 0.2,
            scale: 0.3,
            grid: 64,
            seed: 4,
        };
        let st = FieldState::random_orbit(&spec).unwrap();
        let model = Model2d::new(&st).unwrap();
        let z = c(0.3, 0.62);
        let opts = MonodromyOptions::default();
        let (a, b) = (monodromy(&model, &st, z, opts).unwrap(), monodromy(&model, &st, z + 1.0, opts).unwrap());
        assert!((a.trace() - b.trace()).norm() < 1e-8);
        assert!(((&a * &a).trace() - (&b * &b).trace()).norm() < 1e-8);
        assert!((a.trace() - c(2.0, 0.0)).norm() > 1e-3);
    }

    #[test]
    fn zero_field_is_fixed() {
        let fam = RFamily::yang(2).unwrap();
        let st = constant_state(fam, &[Matrix::zeros(2), Matrix::zeros(2)], &[c(1.0, 0.0), c(-1.0, 0.0)], 16);
        let model = Model2d::new(&st).unwrap();
        let (next, drift) = step_rk4(&model, &st, FlowSpec::FirstDifference { a: 0, b: 1 }, EomOptions::default(), 0.1).unwrap();
        assert_eq!(next, st);
        assert!(drift.is_none());
    }

    #[test]
    fn steps_zero_gives_initial_snapshot() {
        let cfg = pcm_config(0, 0.01);
        let traj = run(&cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0].1, cfg.initial.build().unwrap());
        assert!(traj.aborted.is_none());
    }

    #[test]
    fn pcm_run_conserves_invariants() {
        let cfg = pcm_config(100, 0.005);
        let traj = run(&cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 11);
        let summary = conservation_summary(&traj, cfg.bounds);
        assert_eq!(summary.iter().filter(|r| r.subject.starts_with("probe")).count(), 6);
        for r in &summary {
            assert!(r.passed, "{} {} drift {:e}", r.subject, r.name, r.max_drift);
        }
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,subject,name,re,im\n"));
        assert_eq!(text.lines().count(), 1 + traj.log.len());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let st = FieldState::random_orbit(&pcm_spec(2)).unwrap();
        let model = Model2d::new(&st).unwrap();
        let flow = FlowSpec::FirstDifference { a: 0, b: 1 };
        let integrate = |dt: f64, steps: usize| {
            let mut s = st.clone();
            for _ in 0..steps {
                s = step_rk4(&model, &s, flow, EomOptions::default(), dt).unwrap().0;
            }
            s
        };
        let reference = integrate(0.0125, 16);
        let e1 = max_diff(&integrate(0.1, 2), &reference);
        let e2 = max_diff(&integrate(0.05, 4), &reference);
        let ratio = e1 / e2;
        assert!(ratio > 13.0 && ratio < 19.0, "ratio {ratio}");
    }

    #[test]
    fn forward_then_backward_returns() {
        let st = FieldState::random_orbit(&pcm_spec(5)).unwrap();
        let model = Model2d::new(&st).unwrap();
        let flow = FlowSpec::FirstDifference { a: 0, b: 1 };
        let (fwd, _) = step_rk4(&model, &st, flow, EomOptions::default(), 0.01).unwrap();
        let (back, _) = step_rk4(&model, &fwd, flow, EomOptions::default(), -0.01).unwrap();
        assert!(max_diff(&back, &st) < 1e-9);
    }

    #[test]
    fn constant_data_follows_finite_dimensional_rk4() {
        let fam = RFamily::elliptic(2, c(0.0, 1.0)).unwrap();
        let zs = [c(0.1, 0.05), c(0.55, 0.3), c(0.8, -0.2)];
        let s: Vec<Matrix> = (0..3)
            .map(|a| Matrix::from_fn(2, |i, j| c(0.3 * (i + a) as f64 - 0.2, 0.1 * j as f64 + 0.05 * a as f64)))
            .collect();
        let st = constant_state(fam.clone(), &s, &zs, 8);
        let model = Model2d::new(&st).unwrap();
        let (next, _) = step_rk4(&model, &st, FlowSpec::First { a: 1 }, EomOptions::default(), 0.05).unwrap();
        let gd = |s: &[Matrix]| GaudinState::new(s.iter().zip(&zs).map(|(s, &z)| Site { z, s: s.clone() }).collect(), &fam).unwrap();
        let f = |s: &[Matrix]| gd(s).eom(GaudinFlow::Site(1), Reading::Consistent).unwrap();
        let h = c(0.05, 0.0);
        let add = |a: &[Matrix], b: &[Matrix], w: C| a.iter().zip(b).map(|(x, y)| x + &y.scale(w)).collect::<Vec<_>>();
        let k1 = f(&s);
        let k2 = f(&add(&s, &k1, h / 2.0));
        let k3 = f(&add(&s, &k2, h / 2.0));
        let k4 = f(&add(&s, &k3, h));
        for a in 0..3 {
            let mut want = &k1[a] + &k4[a];
            want += &(&k2[a] + &k3[a]).scale(c(2.0, 0.0));
            let want = &s[a] + &want.scale(h / 6.0);
            assert!(next.sites[a].s.iter().all(|x| (x - &want).max_abs() < 1e-12));
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = pcm_config(5, 0.01);
        let back = SimConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(SimConfig::from_json("{").is_err());
    }
}
