//! Adaptive Dormand-Prince 5(4) integration with dense output and
//! Poincare-section event detection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDefinition, ParameterVector};

/// Tolerance bounds accepted by [`integrate`].
pub const MIN_TOL: f64 = 1e-13;
pub const MAX_TOL: f64 = 1e-3;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// A first-order system `y' = F(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Clone, Debug)]
pub struct IntegrationOptions {
    /// Relative and absolute local error target.
    pub tol: f64,
    pub max_steps: usize,
    pub h_max: f64,
    /// Keep the dense interpolant for every step.
    pub dense: bool,
    /// Record every accepted step. When false only the start, the
    /// requested stop times and the end point are kept.
    pub record_steps: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_steps: 5_000_000,
            h_max: f64::INFINITY,
            dense: true,
            record_steps: true,
        }
    }
}

impl IntegrationOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn sparse(tol: f64) -> Self {
        Self {
            tol,
            dense: false,
            record_steps: false,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    h: f64,
    // rcont[0..5], each of length dim, concatenated
    coeffs: Vec<f64>,
}

impl Segment {
    fn eval(&self, t: f64, dim: usize, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.coeffs;
        for i in 0..dim {
            out[i] = c[i]
                + s * (c[dim + i]
                    + s1 * (c[2 * dim + i] + s * (c[3 * dim + i] + s1 * c[4 * dim + i])));
        }
    }

    fn eval_derivative(&self, t: f64, dim: usize, i: usize) -> f64 {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.coeffs;
        let (r2, r3, r4, r5) = (c[dim + i], c[2 * dim + i], c[3 * dim + i], c[4 * dim + i]);
        let sv = r4 + s1 * r5;
        let rv = r3 + s * sv;
        let qv = r2 + s1 * rv;
        let dsv = -r5;
        let drv = sv + s * dsv;
        let dqv = -rv + s1 * drv;
        (qv + s * dqv) / self.h
    }
}

/// Samples of a solution, optionally with a dense interpolant.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    segments: Vec<Segment>,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }

    pub fn is_dense(&self) -> bool {
        !self.segments.is_empty() || self.times.len() == 1
    }

    /// Index of the sample taken exactly at `t`, if any.
    pub fn sample_index(&self, t: f64) -> Option<usize> {
        self.times
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("times are finite"))
            .ok()
    }

    fn segment_for(&self, t: f64) -> Option<&Segment> {
        if self.segments.is_empty() || t < self.t_start() || t > self.t_end() {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.t0 + s.h < t);
        self.segments.get(idx.min(self.segments.len() - 1))
    }

    /// Dense output at `t`; recorded samples are returned verbatim.
    pub fn at(&self, t: f64) -> Option<Vec<f64>> {
        if let Some(i) = self.sample_index(t) {
            return Some(self.state(i).to_vec());
        }
        let seg = self.segment_for(t)?;
        let mut out = vec![0.0; self.dim];
        seg.eval(t, self.dim, &mut out);
        Some(out)
    }

    /// Time derivative of component `i` of the dense interpolant.
    pub fn derivative_at(&self, t: f64, i: usize) -> Option<f64> {
        self.segment_for(t).map(|s| s.eval_derivative(t, self.dim, i))
    }

    /// Component `i` of the dense interpolant.
    pub fn component_at(&self, t: f64, i: usize) -> Option<f64> {
        self.at(t).map(|v| v[i])
    }
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    tol: f64,
    h_max: f64,
) -> f64 {
    let n = y0.len();
    let sc = |y: f64| tol + tol * y.abs();
    let d0 = (y0.iter().map(|&y| (y / sc(y)).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (y0
        .iter()
        .zip(f0)
        .map(|(&y, &f)| (f / sc(y)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(&y, &f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t0 + h0, &y1, &mut f1);
    let d2 = (y0
        .iter()
        .zip(f0.iter().zip(&f1))
        .map(|(&y, (&a, &b))| ((b - a) / sc(y)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(h_max)
}

/// Integrates `sys` from `t0` to `t1 > t0`. Steps are shortened to land
/// exactly on every time in `stops` (which must be increasing); those
/// samples are always recorded.
pub fn integrate_system<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t1: f64,
    stops: &[f64],
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            actual: y0.len(),
        });
    }
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Precondition(format!("empty time span [{t0}, {t1}]")));
    }
    if !(MIN_TOL..=MAX_TOL).contains(&opts.tol) {
        return Err(Error::Precondition(format!(
            "tolerance {:e} outside [{MIN_TOL:e}, {MAX_TOL:e}]",
            opts.tol
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { t: t0 });
    }
    let tol = opts.tol;
    let span = t1 - t0;
    let h_max = opts.h_max.min(span);

    let mut traj = Trajectory {
        dim: n,
        times: vec![t0],
        states: y0.to_vec(),
        segments: Vec::new(),
        stats: IntegrationStats::default(),
    };

    let mut stop_iter = stops.iter().copied().filter(|&s| s > t0 && s < t1).peekable();

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut yt = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    sys.rhs(t0, &y, &mut k1);
    traj.stats.evaluations += 1;
    let mut h = initial_step(sys, t0, &y, &k1, tol, h_max);
    traj.stats.evaluations += 1;
    let mut t = t0;
    let mut last_rejected = false;

    loop {
        if traj.stats.steps + traj.stats.rejected >= opts.max_steps {
            return Err(Error::Stiffness { t, h });
        }
        let target = stop_iter.peek().copied().unwrap_or(t1);
        let mut hit_target = false;
        if t + h >= target - 1e-14 * target.abs().max(1.0) {
            h = target - t;
            hit_target = true;
        }
        if h <= 1e-14 * t.abs().max(span) {
            return Err(Error::Stiffness { t, h });
        }

        for i in 0..n {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, &yt, &mut k2);
        for i in 0..n {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, &yt, &mut k3);
        for i in 0..n {
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, &yt, &mut k4);
        for i in 0..n {
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, &yt, &mut k5);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.rhs(t + h, &yt, &mut k6);
        for i in 0..n {
            ynew[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t + h, &ynew, &mut k7);
        traj.stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol + tol * y[i].abs().max(ynew[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();

        if !err.is_finite() {
            traj.stats.rejected += 1;
            h *= 0.2;
            if h <= 1e-14 * t.abs().max(span) {
                return Err(Error::Divergence { t });
            }
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            traj.stats.steps += 1;
            if opts.dense {
                let mut coeffs = vec![0.0; 5 * n];
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    coeffs[i] = y[i];
                    coeffs[n + i] = ydiff;
                    coeffs[2 * n + i] = bspl;
                    coeffs[3 * n + i] = ydiff - h * k7[i] - bspl;
                    coeffs[4 * n + i] = h
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                }
                traj.segments.push(Segment { t0: t, h, coeffs });
            }
            t = if hit_target { target } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            if y.iter().any(|v| !v.is_finite() || v.abs() > 1e150) {
                return Err(Error::Divergence { t });
            }
            let is_end = hit_target && stop_iter.peek().is_none();
            if hit_target && !is_end {
                stop_iter.next();
            }
            if opts.record_steps || hit_target {
                traj.times.push(t);
                traj.states.extend_from_slice(&y);
            }
            if is_end {
                break;
            }
            let mut fac = 0.9 * err.powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h = (h * fac).min(h_max);
        } else {
            traj.stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    Ok(traj)
}

/// Crossing direction for a coordinate section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

/// Coordinate Poincare section `x[index] = level`, crossed in `direction`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub index: usize,
    pub level: f64,
    pub direction: Direction,
}

impl Section {
    pub fn new(index: usize, level: f64, direction: Direction) -> Self {
        Self {
            index,
            level,
            direction,
        }
    }

    /// Signed distance, positive on the side reached after a crossing.
    pub fn signed(&self, x: &[f64]) -> f64 {
        self.direction.sign() * (x[self.index] - self.level)
    }
}

fn polish_crossing(traj: &Trajectory, section: &Section, mut lo: f64, mut hi: f64) -> f64 {
    let g = |t: f64| section.signed(&traj.at(t).expect("inside span"));
    // bisection to a narrow bracket, then safeguarded Newton
    while hi - lo > 1e-6 * (hi.abs().max(1.0)) {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..50 {
        let val = g(t);
        if val == 0.0 {
            return t;
        }
        if val < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let slope = section.direction.sign()
            * traj.derivative_at(t, section.index).unwrap_or(f64::NAN);
        let mut next = t - val / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let done = (next - t).abs() <= 1e-14 * t.abs().max(1.0) || hi - lo <= 1e-13;
        t = next;
        if done {
            break;
        }
    }
    t
}

/// All section crossings of a dense trajectory, in time order. A start
/// exactly on the section is not a crossing.
pub fn find_section_crossings(traj: &Trajectory, section: &Section) -> Result<Vec<f64>> {
    if section.index >= traj.dim() {
        return Err(Error::Precondition(format!(
            "section index {} out of range for dimension {}",
            section.index,
            traj.dim()
        )));
    }
    if !traj.is_dense() {
        return Err(Error::Precondition(
            "section crossing needs a dense trajectory".into(),
        ));
    }
    let mut out = Vec::new();
    for seg in &traj.segments {
        let a = seg.t0;
        let b = seg.t0 + seg.h;
        let mut ya = vec![0.0; traj.dim()];
        let mut yb = vec![0.0; traj.dim()];
        seg.eval(a, traj.dim(), &mut ya);
        seg.eval(b, traj.dim(), &mut yb);
        if section.signed(&ya) < 0.0 && section.signed(&yb) >= 0.0 {
            out.push(polish_crossing(traj, section, a, b));
        }
    }
    Ok(out)
}

/// First section crossing strictly after the start of the trajectory.
pub fn find_section_crossing(traj: &Trajectory, section: &Section) -> Result<f64> {
    find_section_crossings(traj, section)?
        .first()
        .copied()
        .ok_or(Error::NoCrossing {
            index: section.index,
            level: section.level,
            direction: section.direction.as_str(),
        })
}

/// Unforced or forced model flow `x' = f(x, p) + g(x, p) u(t)`.
pub struct ModelFlow<'a> {
    pub model: &'a ModelDefinition,
    pub params: &'a [f64],
    pub input: Option<&'a (dyn Fn(f64) -> f64 + Sync)>,
}

impl OdeSystem for ModelFlow<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.model.f_into(y, self.params, dy);
        if let Some(u) = self.input {
            let n = self.model.dim();
            let mut g = [0.0f64; 16];
            let mut heap;
            let g: &mut [f64] = if n <= 16 {
                &mut g[..n]
            } else {
                heap = vec![0.0; n];
                &mut heap
            };
            self.model.g_into(y, self.params, g);
            let ut = u(t);
            for (d, gi) in dy.iter_mut().zip(g.iter()) {
                *d += gi * ut;
            }
        }
    }
}

/// State plus row-major fundamental matrix, `Phi' = A(x) Phi`.
pub struct VariationalFlow<'a> {
    pub model: &'a ModelDefinition,
    pub params: &'a [f64],
}

impl OdeSystem for VariationalFlow<'_> {
    fn dim(&self) -> usize {
        let n = self.model.dim();
        n + n * n
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.dim();
        let (x, phi) = y.split_at(n);
        let (dx, dphi) = dy.split_at_mut(n);
        self.model.f_into(x, self.params, dx);
        let mut a = vec![0.0; n * n];
        self.model.jacobian_into(x, self.params, &mut a);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += a[i * n + l] * phi[l * n + j];
                }
                dphi[i * n + j] = acc;
            }
        }
    }
}

/// Integrates the model from `x0` over `t_span`, with an optional scalar
/// input signal.
pub fn integrate(
    model: &ModelDefinition,
    x0: &[f64],
    params: &ParameterVector,
    input: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    t_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory> {
    model.check_parameters(params)?;
    let flow = ModelFlow {
        model,
        params: params.values(),
        input,
    };
    integrate_system(&flow, t_span.0, x0, t_span.1, &[], &IntegrationOptions::with_tol(tol))
}

/// Solution of the state together with its fundamental matrix.
#[derive(Clone, Debug)]
pub struct VariationalTrajectory {
    pub trajectory: Trajectory,
    dim: usize,
}

impl VariationalTrajectory {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.trajectory.state(i)[..self.dim]
    }

    pub fn fundamental(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.trajectory.state(i)[self.dim..])
    }

    pub fn final_fundamental(&self) -> DMatrix<f64> {
        self.fundamental(self.trajectory.len() - 1)
    }
}

/// Integrates the state and `Phi' = A(x(t)) Phi`, `Phi(t0) = I`, under the
/// same error control. Returns the trajectory and `Phi(t1)`.
pub fn integrate_variational(
    model: &ModelDefinition,
    x0: &[f64],
    params: &ParameterVector,
    t_span: (f64, f64),
    tol: f64,
) -> Result<(VariationalTrajectory, DMatrix<f64>)> {
    integrate_variational_with(model, x0, params.values(), t_span, &[], &IntegrationOptions::with_tol(tol))
        .map(|v| {
            let phi = v.final_fundamental();
            (v, phi)
        })
}

pub(crate) fn integrate_variational_with(
    model: &ModelDefinition,
    x0: &[f64],
    params: &[f64],
    t_span: (f64, f64),
    stops: &[f64],
    opts: &IntegrationOptions,
) -> Result<VariationalTrajectory> {
    let n = model.dim();
    if x0.len() != n {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            actual: x0.len(),
        });
    }
    let mut y0 = x0.to_vec();
    for i in 0..n {
        for j in 0..n {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    let flow = VariationalFlow { model, params };
    let trajectory = integrate_system(&flow, t_span.0, &y0, t_span.1, stops, opts)?;
    Ok(VariationalTrajectory { trajectory, dim: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use std::f64::consts::PI;

    struct Harmonic;
    impl OdeSystem for Harmonic {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    struct Still;
    impl OdeSystem for Still {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
            dy.fill(0.0);
        }
    }

    #[test]
    fn constant_field_keeps_state() {
        let tr = integrate_system(&Still, 0.0, &[3.0, -2.0], 17.0, &[], &IntegrationOptions::default())
            .unwrap();
        assert_eq!(tr.final_state(), &[3.0, -2.0]);
        assert_eq!(tr.at(5.5).unwrap(), vec![3.0, -2.0]);
    }

    #[test]
    fn harmonic_returns_after_full_turn() {
        let tr = integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 2.0 * PI, &[], &IntegrationOptions::with_tol(1e-10))
            .unwrap();
        let y = tr.final_state();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn dense_output_tracks_analytic_solution() {
        let tr = integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 10.0, &[], &IntegrationOptions::with_tol(1e-10))
            .unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let t = 10.0 * k as f64 / 999.0;
            let y = tr.at(t).unwrap();
            worst = worst.max((y[0] - t.cos()).abs()).max((y[1] + t.sin()).abs());
            let dy = tr.derivative_at(t, 0).unwrap();
            assert!((dy + t.sin()).abs() < 1e-6);
        }
        assert!(worst < 1e-8, "dense error {worst}");
    }

    #[test]
    fn dense_output_matches_step_endpoints() {
        let tr = integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 3.0, &[], &IntegrationOptions::with_tol(1e-8))
            .unwrap();
        for seg in &tr.segments {
            let mut out = vec![0.0; 2];
            seg.eval(seg.t0, 2, &mut out);
            let i = tr.sample_index(seg.t0).unwrap();
            assert_eq!(out, tr.state(i));
            seg.eval(seg.t0 + seg.h, 2, &mut out);
            let j = tr.sample_index(seg.t0 + seg.h).unwrap();
            for c in 0..2 {
                assert!((out[c] - tr.state(j)[c]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn stops_are_hit_exactly() {
        let stops: Vec<f64> = (1..10).map(|k| k as f64 * 0.3).collect();
        let tr = integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 3.0, &stops, &IntegrationOptions::sparse(1e-12))
            .unwrap();
        assert_eq!(tr.len(), 11);
        for (k, &s) in stops.iter().enumerate() {
            assert_eq!(tr.times()[k + 1], s);
            assert!((tr.state(k + 1)[0] - s.cos()).abs() < 1e-10);
        }
        assert_eq!(tr.t_end(), 3.0);
    }

    #[test]
    fn observed_error_decreases_with_nominal_order() {
        // global error scales like tol^(p/(p+1)) with p = 4 for the controlled
        // embedded estimate; halving tol three times must shrink the error
        let mut errs = Vec::new();
        for &tol in &[1e-6, 1e-7, 1e-8, 1e-9] {
            let tr = integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 20.0, &[], &IntegrationOptions::with_tol(tol))
                .unwrap();
            let y = tr.final_state();
            errs.push(((y[0] - 20f64.cos()).powi(2) + (y[1] + 20f64.sin()).powi(2)).sqrt());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.0 && ratio < 30.0, "ratio {ratio} for {errs:?}");
        }
    }

    #[test]
    fn harmonic_section_crossing() {
        let tr = integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 9.0, &[], &IntegrationOptions::with_tol(1e-11))
            .unwrap();
        let s = Section::new(0, 0.0, Direction::Decreasing);
        let t = find_section_crossing(&tr, &s).unwrap();
        assert!((t - PI / 2.0).abs() < 1e-8);
        assert!(tr.component_at(t, 0).unwrap().abs() <= 1e-10);
        let all = find_section_crossings(&tr, &s).unwrap();
        assert_eq!(all.len(), 2);
        assert!((all[1] - 2.5 * PI).abs() < 1e-8);
    }

    #[test]
    fn constant_trajectory_has_no_crossing() {
        let tr = integrate_system(&Still, 0.0, &[3.0, -2.0], 5.0, &[], &IntegrationOptions::default()).unwrap();
        let err = find_section_crossing(&tr, &Section::new(0, 1.0, Direction::Increasing)).unwrap_err();
        assert!(matches!(err, Error::NoCrossing { .. }));
    }

    #[test]
    fn van_der_pol_crossing_gaps_converge() {
        let m = builtin::van_der_pol();
        let tr = integrate(&m, &[2.0, 0.0], m.default_parameters(), None, (0.0, 80.0), 1e-10).unwrap();
        let c = find_section_crossings(&tr, &m.section()).unwrap();
        let gaps: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
        let n = gaps.len();
        assert!(n >= 8);
        assert!((gaps[n - 1] - gaps[n - 2]).abs() < 1e-7);
        assert!((gaps[n - 1] - 6.6633).abs() < 1e-3);
    }

    #[test]
    fn tolerance_and_span_preconditions() {
        let opts = IntegrationOptions::with_tol(1e-2);
        assert!(matches!(
            integrate_system(&Harmonic, 0.0, &[1.0, 0.0], 1.0, &[], &opts),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            integrate_system(&Harmonic, 1.0, &[1.0, 0.0], 1.0, &[], &IntegrationOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn blow_up_is_divergence() {
        struct Blow;
        impl OdeSystem for Blow {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
                dy[0] = y[0] * y[0];
            }
        }
        let err = integrate_system(&Blow, 0.0, &[1.0], 2.0, &[], &IntegrationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. } | Error::Stiffness { .. }), "{err:?}");
    }

    #[test]
    fn stiff_problem_exhausts_step_budget() {
        struct Stiff;
        impl OdeSystem for Stiff {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
                dy[0] = -1e7 * (y[0] - t.cos());
            }
        }
        let opts = IntegrationOptions {
            max_steps: 10_000,
            ..IntegrationOptions::default()
        };
        let err = integrate_system(&Stiff, 0.0, &[0.0], 10.0, &[], &opts).unwrap_err();
        assert!(matches!(err, Error::Stiffness { .. }));
        assert!(err.to_string().contains("stiff"));
    }

    fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
        // scaling and squaring with a long Taylor series
        let s = 8;
        let scaled = m / 2f64.powi(s);
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn linear_fundamental_matrix_is_exponential() {
        let mm = DMatrix::from_row_slice(3, 3, &[-0.3, 1.0, 0.2, -1.1, 0.1, 0.0, 0.4, -0.5, -0.7]);
        let m = builtin::linear(mm.clone());
        let t = 0.8;
        let (_, phi) = integrate_variational(&m, &[1.0, 0.5, -0.2], m.default_parameters(), (0.0, t), 1e-12).unwrap();
        let oracle = expm_series(&(mm * t));
        assert!((phi - oracle).amax() < 1e-10);
    }

    #[test]
    fn still_system_keeps_identity_fundamental() {
        let m = builtin::linear(DMatrix::zeros(2, 2));
        let (_, phi) = integrate_variational(&m, &[1.0, 0.5], m.default_parameters(), (0.0, 4.0), 1e-10).unwrap();
        assert_eq!(phi, DMatrix::identity(2, 2));
    }

    #[test]
    fn abel_liouville_on_van_der_pol() {
        let m = builtin::van_der_pol();
        let p = m.default_parameters();
        let t1 = 3.0;
        let (vt, phi) = integrate_variational(&m, &[1.0, 1.0], p, (0.0, t1), 1e-12).unwrap();
        // trace A = mu (1 - x^2); Simpson quadrature on the dense state
        let tr = &vt.trajectory;
        let k = 4000;
        let hq = t1 / k as f64;
        let trace = |t: f64| {
            let x = tr.at(t).unwrap()[0];
            1.0 - x * x
        };
        let mut integral = trace(0.0) + trace(t1);
        for j in 1..k {
            integral += trace(j as f64 * hq) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        integral *= hq / 3.0;
        assert!((phi.determinant() - integral.exp()).abs() < 1e-8 * integral.exp().max(1.0));
    }
}
