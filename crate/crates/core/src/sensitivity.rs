//! Parameter sensitivities of the frequency, the orbit and the iPRC.
//!
//! For parameter `p_k` the orbit sensitivity `Z = dx/dp_k` (at fixed
//! phase) and `S_omega = d omega / dp_k` solve the linear periodic problem
//!
//! ```text
//! Z' - (1/omega) A Z + (S_omega / omega^2) v - (1/omega) b = 0,   e_i . Z(0) = 0
//! ```
//!
//! and the iPRC sensitivity `Z_qx` solves
//!
//! ```text
//! Z_qx' + (1/omega) (A^T Z_qx + C^T q_x) = 0
//! <Z_qx, v> + <q_x, A Z + b> = S_omega
//! ```
//!
//! with `C_ij = sum_l d2f_i/dx_j dx_l Z_l + d2f_i/dx_j dp_k - (S_omega/omega) A_ij`.
//! Both are solved by shooting (one pass carrying the fundamental matrix
//! and a particular solution, then a bordered linear solve). A dense
//! Fourier collocation solve on the phase grid is used instead when the
//! shooting system is badly conditioned.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DerivativeBundle, ModelDefinition, ParameterVector};
use crate::odeint::{integrate_system, IntegrationOptions, OdeSystem};
use crate::orbit::{find_periodic_orbit, OrbitOptions, PeriodicOrbit};
use crate::prc::{bordered_adjoint_solve, compute_iprc, PhaseResponse, PrcOptions};
use crate::spectral::{FourierSeries, PeriodicInterpolant};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    /// Shooting, falling back to collocation when ill-conditioned.
    #[default]
    Auto,
    Shooting,
    Collocation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityOptions {
    pub tol: f64,
    pub method: SolveMethod,
    /// Shooting systems with a larger 2-norm condition number are
    /// re-solved by collocation under [`SolveMethod::Auto`].
    pub condition_limit: f64,
    /// Allowed violation of the differentiated normalization, relative
    /// to `omega`.
    pub normalization_tol: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            method: SolveMethod::Auto,
            condition_limit: 1e10,
            normalization_tol: 1e-6,
        }
    }
}

/// `S_omega` and `Z` for one parameter.
#[derive(Clone, Debug)]
pub struct OrbitSensitivity {
    pub k: usize,
    pub s_omega: f64,
    /// Column `j` is `Z(theta_j)`.
    pub z_x: DMatrix<f64>,
    /// Route actually used (never `Auto`).
    pub method: SolveMethod,
    /// Condition number of the shooting system (NaN if not formed).
    pub condition: f64,
    /// Max grid residual of the linearized orbit equation, spectral
    /// derivative.
    pub residual: f64,
}

/// `Z_qx` and `Z_q` for one parameter.
#[derive(Clone, Debug)]
pub struct PrcSensitivity {
    pub z_qx: DMatrix<f64>,
    pub z_q: DVector<f64>,
    pub method: SolveMethod,
    /// Max over the grid of `|<Z_qx, v> + <q_x, Z_v> - S_omega|`.
    pub normalization_residual: f64,
}

/// Every sensitivity of one parameter.
#[derive(Clone, Debug, Serialize)]
pub struct SensitivityBundle {
    pub k: usize,
    pub name: String,
    pub omega: f64,
    pub period: f64,
    pub s_omega: f64,
    #[serde(skip)]
    pub z_x: DMatrix<f64>,
    #[serde(skip)]
    pub z_qx: DMatrix<f64>,
    #[serde(skip)]
    pub z_q: DVector<f64>,
    /// Sensitivities are with respect to `log p_k` when set.
    pub relative: bool,
}

impl SensitivityBundle {
    /// `d T / dp_k = -2 pi S_omega / omega^2`.
    pub fn s_period(&self) -> f64 {
        -2.0 * PI * self.s_omega / (self.omega * self.omega)
    }

    pub fn grid_size(&self) -> usize {
        self.z_q.len()
    }
}

fn grid_derivatives(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
) -> Result<Vec<DerivativeBundle>> {
    (0..orbit.grid_size())
        .map(|j| model.derivatives(&orbit.state(j), params, k))
        .collect()
}

fn check_inputs(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
) -> Result<()> {
    model.check_parameters(params)?;
    if k >= params.len() {
        return Err(Error::Precondition(format!(
            "parameter index {k} out of range (model has {})",
            params.len()
        )));
    }
    if params != &orbit.params {
        return Err(Error::Precondition(
            "orbit was computed for different parameters".into(),
        ));
    }
    if !orbit.hyperbolic {
        return Err(Error::Precondition("orbit is not hyperbolic".into()));
    }
    Ok(())
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Fourier differentiation matrix on `n` equispaced points of `[0, 2 pi)`
/// (even `n`).
pub(crate) fn fourier_differentiation(n: usize) -> DMatrix<f64> {
    assert!(n % 2 == 0, "differentiation matrix needs an even grid");
    let h = 2.0 * PI / n as f64;
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            0.0
        } else {
            let d = j as i64 - k as i64;
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            0.5 * sign / (d as f64 * h / 2.0).tan()
        }
    })
}

/// Solves `Y_j' - L_j Y_j + c_j sigma = r_j` for all grid points together
/// with `<row, Y_0> = row_rhs`, using spectral differentiation. Returns
/// the grid solution (column `j` is `Y_j`) and `sigma`.
fn bordered_collocation(
    l: &[DMatrix<f64>],
    c: &[DVector<f64>],
    r: &[DVector<f64>],
    row: &DVector<f64>,
    row_rhs: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let grid = l.len();
    let n = row.len();
    let size = n * grid + 1;
    let d = fourier_differentiation(grid);
    let mut mat = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for j in 0..grid {
        for m in 0..grid {
            let djm = d[(j, m)];
            if djm != 0.0 {
                for i in 0..n {
                    mat[(j * n + i, m * n + i)] = djm;
                }
            }
        }
        for i in 0..n {
            for q in 0..n {
                mat[(j * n + i, j * n + q)] -= l[j][(i, q)];
            }
            mat[(j * n + i, size - 1)] = c[j][i];
            rhs[j * n + i] = r[j][i];
        }
    }
    for i in 0..n {
        mat[(size - 1, i)] = row[i];
    }
    rhs[size - 1] = row_rhs;
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateSection("collocation matrix is singular".into()))?;
    let y = DMatrix::from_fn(n, grid, |i, j| sol[j * n + i]);
    Ok((y, sol[size - 1]))
}

// (x, Phi, r) with x' = f, Phi' = A Phi, r' = A r + b
struct ForwardSensitivityFlow<'a> {
    model: &'a ModelDefinition,
    params: &'a [f64],
    k: usize,
}

impl OdeSystem for ForwardSensitivityFlow<'_> {
    fn dim(&self) -> usize {
        let n = self.model.dim();
        2 * n + n * n
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.dim();
        let x = &y[..n];
        let phi = &y[n..n + n * n];
        let r = &y[n + n * n..];
        let mut a = vec![0.0; n * n];
        self.model.jacobian_into(x, self.params, &mut a);
        let mut b = vec![0.0; n];
        self.model.parameter_derivative_into(x, self.params, self.k, &mut b);
        let (dx, rest) = dy.split_at_mut(n);
        let (dphi, dr) = rest.split_at_mut(n * n);
        self.model.f_into(x, self.params, dx);
        for i in 0..n {
            for j in 0..n {
                dphi[i * n + j] = (0..n).map(|l| a[i * n + l] * phi[l * n + j]).sum();
            }
            dr[i] = (0..n).map(|l| a[i * n + l] * r[l]).sum::<f64>() + b[i];
        }
    }
}


fn orbit_equation_residual(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    derivs: &[DerivativeBundle],
    z: &DMatrix<f64>,
    s_omega: f64,
) -> f64 {
    let n = z.nrows();
    let omega = orbit.omega;
    let dz: Vec<Vec<f64>> = (0..n)
        .map(|i| FourierSeries::from_samples(&z.row(i).iter().copied().collect::<Vec<_>>()).derivative_samples())
        .collect();
    let mut v = vec![0.0; n];
    let mut worst = 0.0f64;
    for (j, d) in derivs.iter().enumerate() {
        model.f_into(&orbit.state(j), orbit.params.values(), &mut v);
        let az = &d.a * z.column(j);
        for i in 0..n {
            let res = dz[i][j] - (az[i] + d.b[i]) / omega + s_omega * v[i] / (omega * omega);
            worst = worst.max(res.abs());
        }
    }
    worst
}

/// Solves for `S_omega` and `Z` of parameter `k` on the orbit grid.
pub fn orbit_sensitivity(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
    options: &SensitivityOptions,
) -> Result<OrbitSensitivity> {
    check_inputs(orbit, model, params, k)?;
    let derivs = grid_derivatives(orbit, model, params, k)?;
    orbit_sensitivity_with(orbit, model, params, k, &derivs, options)
}

fn orbit_sensitivity_with(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
    derivs: &[DerivativeBundle],
    options: &SensitivityOptions,
) -> Result<OrbitSensitivity> {
    let n = model.dim();
    let grid = orbit.grid_size();
    let omega = orbit.omega;
    let p = params.values();
    let section = orbit.section;

    let (z_x, s_omega, method, condition) = match shoot_orbit_sensitivity(orbit, model, p, k, options)? {
        Some((z, s, cond)) => (z, s, SolveMethod::Shooting, cond),
        None => {
            let mut l = Vec::with_capacity(grid);
            let mut c = Vec::with_capacity(grid);
            let mut r = Vec::with_capacity(grid);
            let mut v = vec![0.0; n];
            for (j, d) in derivs.iter().enumerate() {
                model.f_into(&orbit.state(j), p, &mut v);
                l.push(&d.a / omega);
                c.push(DVector::from_iterator(n, v.iter().map(|vi| vi / (omega * omega))));
                r.push(&d.b / omega);
            }
            let mut row = DVector::zeros(n);
            row[section.index] = 1.0;
            let (z, s) = bordered_collocation(&l, &c, &r, &row, 0.0)?;
            (z, s, SolveMethod::Collocation, f64::NAN)
        }
    };
    let residual = orbit_equation_residual(orbit, model, derivs, &z_x, s_omega);
    Ok(OrbitSensitivity {
        k,
        s_omega,
        z_x,
        method,
        condition,
        residual,
    })
}

// Returns None when the caller should fall back to collocation.
fn shoot_orbit_sensitivity(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    p: &[f64],
    k: usize,
    options: &SensitivityOptions,
) -> Result<Option<(DMatrix<f64>, f64, f64)>> {
    if options.method == SolveMethod::Collocation {
        return Ok(None);
    }
    let n = model.dim();
    let grid = orbit.grid_size();
    let omega = orbit.omega;
    let t = orbit.period;
    let x0 = orbit.state(0);
    let mut y0 = x0.clone();
    for i in 0..n {
        for j in 0..n {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    y0.extend(std::iter::repeat(0.0).take(n));
    let stops: Vec<f64> = (1..grid).map(|j| orbit.time_of(j)).collect();
    let flow = ForwardSensitivityFlow { model, params: p, k };
    let tr = integrate_system(&flow, 0.0, &y0, t, &stops, &IntegrationOptions::sparse(options.tol))?;
    let split = |y: &[f64]| {
        (
            y[..n].to_vec(),
            DMatrix::from_row_slice(n, n, &y[n..n + n * n]),
            DVector::from_column_slice(&y[n + n * n..]),
        )
    };
    let (_, phi_t, r_t) = split(tr.final_state());
    let mut v0 = vec![0.0; n];
    model.f_into(&x0, p, &mut v0);

    let mut mat = DMatrix::zeros(n + 1, n + 1);
    mat.view_mut((0, 0), (n, n))
        .copy_from(&(&phi_t - DMatrix::identity(n, n)));
    for i in 0..n {
        mat[(i, n)] = -t / omega * v0[i];
    }
    mat[(n, orbit.section.index)] = 1.0;
    let condition = condition_number(&mat);
    if options.method == SolveMethod::Auto && !(condition <= options.condition_limit) {
        return Ok(None);
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&(-r_t));
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateSection("orbit sensitivity shooting matrix is singular".into()))?;
    let z0 = sol.rows(0, n).into_owned();
    let s_omega = sol[n];

    let mut z = DMatrix::zeros(n, grid);
    z.set_column(0, &z0);
    let mut v = vec![0.0; n];
    for j in 1..grid {
        let (xj, phi_j, r_j) = split(tr.state(j));
        model.f_into(&xj, p, &mut v);
        let tj = orbit.time_of(j);
        let col = &phi_j * &z0 + r_j - DVector::from_column_slice(&v) * (tj / omega * s_omega);
        z.set_column(j, &col);
    }
    Ok(Some((z, s_omega, condition)))
}

/// `C(theta_j)` for every grid point: the parameter derivative of
/// `A(x(theta), p)` at fixed phase, minus `(S_omega/omega) A`.
pub fn c_matrix_field(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    sens: &OrbitSensitivity,
) -> Result<Vec<DMatrix<f64>>> {
    check_inputs(orbit, model, params, sens.k)?;
    let derivs = grid_derivatives(orbit, model, params, sens.k)?;
    Ok(c_field_from(&derivs, sens, orbit.omega))
}

fn c_field_from(derivs: &[DerivativeBundle], sens: &OrbitSensitivity, omega: f64) -> Vec<DMatrix<f64>> {
    derivs
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let zj: Vec<f64> = sens.z_x.column(j).iter().copied().collect();
            d.contract_hessian(&zj) + &d.h_xp - &d.a * (sens.s_omega / omega)
        })
        .collect()
}

// (Psi, w_p) in reversed time s = T - t:
// Psi' = A^T Psi, w_p' = A^T w_p + C^T q_x
struct BackwardSensitivityFlow<'a> {
    model: &'a ModelDefinition,
    orbit: &'a PeriodicOrbit,
    c: &'a PeriodicInterpolant,
    q: &'a PeriodicInterpolant,
}

impl OdeSystem for BackwardSensitivityFlow<'_> {
    fn dim(&self) -> usize {
        let n = self.model.dim();
        n * n + n
    }

    fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.dim();
        let theta = self.orbit.omega * (self.orbit.period - s);
        let mut x = vec![0.0; n];
        self.orbit.orbit_derivative_into(theta, 0, &mut x);
        let mut a = vec![0.0; n * n];
        self.model.jacobian_into(&x, self.orbit.params.values(), &mut a);
        let mut c = vec![0.0; n * n];
        self.c.eval_into(theta, 0, &mut c);
        let mut q = vec![0.0; n];
        self.q.eval_into(theta, 0, &mut q);
        let (psi, w) = y.split_at(n * n);
        let (dpsi, dw) = dy.split_at_mut(n * n);
        for i in 0..n {
            for j in 0..n {
                dpsi[i * n + j] = (0..n).map(|l| a[l * n + i] * psi[l * n + j]).sum();
            }
            dw[i] = (0..n).map(|l| a[l * n + i] * w[l] + c[l * n + i] * q[l]).sum();
        }
    }
}

/// Solves for `Z_qx` and assembles `Z_q` for the parameter of `sens`.
pub fn prc_sensitivity(
    orbit: &PeriodicOrbit,
    prc: &PhaseResponse,
    sens: &OrbitSensitivity,
    model: &ModelDefinition,
    params: &ParameterVector,
    options: &SensitivityOptions,
) -> Result<PrcSensitivity> {
    check_inputs(orbit, model, params, sens.k)?;
    if prc.grid_size() != orbit.grid_size() || sens.z_x.ncols() != orbit.grid_size() {
        return Err(Error::Alignment(format!(
            "orbit grid {} vs iPRC grid {} vs sensitivity grid {}",
            orbit.grid_size(),
            prc.grid_size(),
            sens.z_x.ncols()
        )));
    }
    let derivs = grid_derivatives(orbit, model, params, sens.k)?;
    prc_sensitivity_with(orbit, prc, sens, model, params, &derivs, options)
}

fn prc_sensitivity_with(
    orbit: &PeriodicOrbit,
    prc: &PhaseResponse,
    sens: &OrbitSensitivity,
    model: &ModelDefinition,
    params: &ParameterVector,
    derivs: &[DerivativeBundle],
    options: &SensitivityOptions,
) -> Result<PrcSensitivity> {
    let n = model.dim();
    let grid = orbit.grid_size();
    let omega = orbit.omega;
    let p = params.values();
    let c_field = c_field_from(derivs, sens, omega);
    let v: Vec<DVector<f64>> = (0..grid)
        .map(|j| {
            let mut out = vec![0.0; n];
            model.f_into(&orbit.state(j), p, &mut out);
            DVector::from_vec(out)
        })
        .collect();
    let q: Vec<DVector<f64>> = (0..grid).map(|j| prc.state.column(j).into_owned()).collect();
    // derivative of v(theta) = f(x(theta), p) at fixed phase
    let z_v: Vec<DVector<f64>> = derivs
        .iter()
        .enumerate()
        .map(|(j, d)| &d.a * sens.z_x.column(j) + &d.b)
        .collect();
    let norm_rhs = sens.s_omega - q[0].dot(&z_v[0]);

    let shot = if options.method == SolveMethod::Collocation {
        None
    } else {
        shoot_prc_sensitivity(orbit, prc, model, &c_field, &v[0], norm_rhs, options)?
    };
    let (z_qx, method) = match shot {
        Some(z) => (z, SolveMethod::Shooting),
        None => {
            let l: Vec<DMatrix<f64>> = derivs.iter().map(|d| -d.a.transpose() / omega).collect();
            let r: Vec<DVector<f64>> = (0..grid)
                .map(|j| -(c_field[j].transpose() * &q[j]) / omega)
                .collect();
            let (z, _) = bordered_collocation(&l, &v, &r, &v[0], norm_rhs)?;
            (z, SolveMethod::Collocation)
        }
    };

    let mut worst = (0.0f64, 0usize);
    let mut z_q = DVector::zeros(grid);
    let mut g = vec![0.0; n];
    for j in 0..grid {
        let zq = z_qx.column(j);
        let r = (zq.dot(&v[j]) + q[j].dot(&z_v[j]) - sens.s_omega).abs();
        if r > worst.0 {
            worst = (r, j);
        }
        model.g_into(&orbit.state(j), p, &mut g);
        let gv = DVector::from_column_slice(&g);
        let dg = &derivs[j].g_x * sens.z_x.column(j) + &derivs[j].g_p;
        z_q[j] = zq.dot(&gv) + q[j].dot(&dg);
    }
    if worst.0 > options.normalization_tol * omega {
        return Err(Error::Accuracy {
            what: "iPRC sensitivity normalization",
            residual: worst.0,
            tolerance: options.normalization_tol * omega,
            phase: orbit.phases()[worst.1],
        });
    }
    Ok(PrcSensitivity {
        z_qx,
        z_q,
        method,
        normalization_residual: worst.0,
    })
}

fn shoot_prc_sensitivity(
    orbit: &PeriodicOrbit,
    prc: &PhaseResponse,
    model: &ModelDefinition,
    c_field: &[DMatrix<f64>],
    v0: &DVector<f64>,
    norm_rhs: f64,
    options: &SensitivityOptions,
) -> Result<Option<DMatrix<f64>>> {
    let n = model.dim();
    let grid = orbit.grid_size();
    let t = orbit.period;
    let c_interp = PeriodicInterpolant::from_columns(n * n, |idx, j| c_field[j][(idx / n, idx % n)], grid);
    let flow = BackwardSensitivityFlow {
        model,
        orbit,
        c: &c_interp,
        q: prc.state_interpolant(),
    };
    let mut y0 = vec![0.0; n * n + n];
    for i in 0..n {
        y0[i * n + i] = 1.0;
    }
    let stops: Vec<f64> = (1..grid).rev().map(|j| t - orbit.time_of(j)).collect();
    let tr = integrate_system(&flow, 0.0, &y0, t, &stops, &IntegrationOptions::sparse(options.tol))?;
    let split = |y: &[f64]| {
        (
            DMatrix::from_row_slice(n, n, &y[..n * n]),
            DVector::from_column_slice(&y[n * n..]),
        )
    };
    let (psi_t, wp_t) = split(tr.final_state());

    let mut mat = DMatrix::zeros(n + 1, n + 1);
    mat.view_mut((0, 0), (n, n))
        .copy_from(&(&psi_t - DMatrix::identity(n, n)));
    mat.view_mut((0, n), (n, 1)).copy_from(v0);
    mat.view_mut((n, 0), (1, n)).copy_from(&v0.transpose());
    if options.method == SolveMethod::Auto && !(condition_number(&mat) <= options.condition_limit) {
        return Ok(None);
    }
    // psi_t plays the role of M^T
    let (w0, _) = bordered_adjoint_solve(&psi_t.transpose(), v0, &(-wp_t), norm_rhs)?;
    let mut z = DMatrix::zeros(n, grid);
    z.set_column(0, &w0);
    for j in 1..grid {
        let (psi, wp) = split(tr.state(grid - j));
        z.set_column(j, &(psi * &w0 + wp));
    }
    Ok(Some(z))
}

/// Full sensitivity bundle of parameter `k` (absolute).
pub fn compute_sensitivity(
    orbit: &PeriodicOrbit,
    prc: &PhaseResponse,
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
    options: &SensitivityOptions,
) -> Result<SensitivityBundle> {
    check_inputs(orbit, model, params, k)?;
    let derivs = grid_derivatives(orbit, model, params, k)?;
    let os = orbit_sensitivity_with(orbit, model, params, k, &derivs, options)?;
    let ps = prc_sensitivity_with(orbit, prc, &os, model, params, &derivs, options)?;
    Ok(SensitivityBundle {
        k,
        name: params.name(k).to_string(),
        omega: orbit.omega,
        period: orbit.period,
        s_omega: os.s_omega,
        z_x: os.z_x,
        z_qx: ps.z_qx,
        z_q: ps.z_q,
        relative: false,
    })
}

/// Rescales every sensitivity by `p_k`, giving derivatives with respect
/// to `log p_k`.
pub fn relative_sensitivities(bundle: &SensitivityBundle, params: &ParameterVector) -> Result<SensitivityBundle> {
    if bundle.relative {
        return Err(Error::Precondition("bundle is already relative".into()));
    }
    if bundle.k >= params.len() {
        return Err(Error::Precondition(format!(
            "parameter index {} out of range (vector has {})",
            bundle.k,
            params.len()
        )));
    }
    let value = params.value(bundle.k);
    if value == 0.0 {
        return Err(Error::UndefinedRelative(params.name(bundle.k).to_string()));
    }
    Ok(SensitivityBundle {
        k: bundle.k,
        name: bundle.name.clone(),
        omega: bundle.omega,
        period: bundle.period,
        s_omega: bundle.s_omega * value,
        z_x: &bundle.z_x * value,
        z_qx: &bundle.z_qx * value,
        z_q: &bundle.z_q * value,
        relative: true,
    })
}

/// Default central-difference step for parameter value `value`.
pub fn default_fd_step(value: f64) -> f64 {
    1e-4 * value.abs().max(1.0)
}

/// Central finite differences of freshly solved orbits and iPRCs.
#[derive(Clone, Debug)]
pub struct FiniteDifferenceEstimate {
    pub k: usize,
    pub h: f64,
    pub s_omega: f64,
    pub z_x: DMatrix<f64>,
    pub z_qx: DMatrix<f64>,
    pub z_q: DVector<f64>,
}

/// Recomputes orbit and iPRC at `p_k +- h` from scratch. Both orbits are
/// anchored on the same section, so their phase grids line up.
pub fn finite_difference_oracle(
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
    h: f64,
    orbit_options: &OrbitOptions,
    prc_options: &PrcOptions,
) -> Result<FiniteDifferenceEstimate> {
    model.check_parameters(params)?;
    if k >= params.len() {
        return Err(Error::Precondition(format!(
            "parameter index {k} out of range (model has {})",
            params.len()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!("finite-difference step {h} must be positive")));
    }
    let solve = |value: f64| -> Result<(PeriodicOrbit, PhaseResponse)> {
        let p = params.with_value(k, value);
        let orbit = find_periodic_orbit(model, &p, model.seed(), orbit_options)?;
        let prc = compute_iprc(&orbit, model, &p, prc_options)?;
        Ok((orbit, prc))
    };
    let base = params.value(k);
    let (op, qp) = solve(base + h)?;
    let (om, qm) = solve(base - h)?;
    let scale = 1.0 / (2.0 * h);
    Ok(FiniteDifferenceEstimate {
        k,
        h,
        s_omega: (op.omega - om.omega) * scale,
        z_x: (&op.states - &om.states) * scale,
        z_qx: (&qp.state - &qm.state) * scale,
        z_q: (&qp.input - &qm.input) * scale,
    })
}
