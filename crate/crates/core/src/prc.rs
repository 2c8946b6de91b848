//! Phase response curves.
//!
//! The state iPRC `q_x` solves the periodic adjoint problem
//! `q_x' = -(1/omega) A^T q_x` with `<q_x, f> = omega`. Its value at phase 0
//! is the left eigenvector of the monodromy matrix for multiplier 1
//! (obtained from a bordered solve that also fixes the normalization); the
//! rest of the curve comes from integrating the adjoint backward in time,
//! which is the contracting direction for a stable orbit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDefinition, ParameterVector};
use crate::odeint::{integrate_system, IntegrationOptions, ModelFlow, OdeSystem};
use crate::orbit::PeriodicOrbit;
use crate::spectral::{wrap_2pi, wrap_pm_pi, PeriodicInterpolant};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrcOptions {
    pub tol: f64,
    /// Bound on the relative drift of `<q_x, f> / omega` before
    /// re-normalization.
    pub normalization_tol: f64,
    /// Convergence radius relative to the orbit diameter.
    pub convergence: f64,
    /// Give up on asymptotic phase after this many periods.
    pub max_periods: usize,
    /// States farther than this many orbit diameters are rejected outright.
    pub basin_radius: f64,
}

impl Default for PrcOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            normalization_tol: 1e-6,
            convergence: 1e-8,
            max_periods: 200,
            basin_radius: 50.0,
        }
    }
}

/// State and input iPRCs on the orbit's phase grid.
#[derive(Clone, Debug)]
pub struct PhaseResponse {
    /// Column `j` is `q_x(theta_j)`.
    pub state: DMatrix<f64>,
    /// `q(theta_j) = <q_x(theta_j), g(x(theta_j))>`.
    pub input: DVector<f64>,
    /// `<q_x, f> / omega - 1` at each grid point before re-normalization.
    pub normalization_residual: Vec<f64>,
    /// `|q_x(2 pi) - q_x(0)|` of the transported solution.
    pub periodicity_defect: f64,
    pub omega: f64,
    interpolant: PeriodicInterpolant,
}

impl PhaseResponse {
    pub fn grid_size(&self) -> usize {
        self.state.ncols()
    }

    pub fn state_at(&self, j: usize) -> Vec<f64> {
        self.state.column(j).iter().copied().collect()
    }

    /// Trigonometric interpolant of `q_x`.
    pub fn state_interpolant(&self) -> &PeriodicInterpolant {
        &self.interpolant
    }

    pub fn max_normalization_residual(&self) -> f64 {
        self.normalization_residual
            .iter()
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

// Adjoint transported in reversed time s = T - t:
// dw/ds = A(x(omega (T - s)))^T w.
struct BackwardAdjoint<'a> {
    model: &'a ModelDefinition,
    orbit: &'a PeriodicOrbit,
}

impl OdeSystem for BackwardAdjoint<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn rhs(&self, s: f64, w: &[f64], dw: &mut [f64]) {
        let n = self.model.dim();
        let theta = self.orbit.omega * (self.orbit.period - s);
        let mut x = vec![0.0; n];
        self.orbit.orbit_derivative_into(theta, 0, &mut x);
        let mut a = vec![0.0; n * n];
        self.model.jacobian_into(&x, self.orbit.params.values(), &mut a);
        for j in 0..n {
            dw[j] = (0..n).map(|i| a[i * n + j] * w[i]).sum();
        }
    }
}

/// Solves `[[M^T - I, v0], [v0^T, 0]] [w; sigma] = rhs`. The matrix is
/// nonsingular whenever 1 is a simple multiplier and `<q, v0> != 0`.
pub(crate) fn bordered_adjoint_solve(
    monodromy: &DMatrix<f64>,
    v0: &DVector<f64>,
    rhs_top: &DVector<f64>,
    rhs_last: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = monodromy.nrows();
    let mut mat = DMatrix::zeros(n + 1, n + 1);
    mat.view_mut((0, 0), (n, n))
        .copy_from(&(monodromy.transpose() - DMatrix::identity(n, n)));
    mat.view_mut((0, n), (n, 1)).copy_from(v0);
    mat.view_mut((n, 0), (1, n)).copy_from(&v0.transpose());
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(rhs_top);
    rhs[n] = rhs_last;
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateSection("adjoint bordered matrix is singular".into()))?;
    Ok((sol.rows(0, n).into_owned(), sol[n]))
}

/// Computes `q_x` and `q` on the orbit grid.
pub fn compute_iprc(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    options: &PrcOptions,
) -> Result<PhaseResponse> {
    model.check_parameters(params)?;
    if params != &orbit.params {
        return Err(Error::Precondition(
            "orbit was computed for different parameters".into(),
        ));
    }
    let n = model.dim();
    let grid = orbit.grid_size();
    let p = params.values();
    let omega = orbit.omega;
    let x0 = orbit.state(0);
    let v0 = model.eval_f(&x0, params)?;

    let (q0, _) = bordered_adjoint_solve(&orbit.monodromy, &v0, &DVector::zeros(n), omega)?;

    let t = orbit.period;
    // s_j = T - t_j for j = N-1, ..., 1, increasing in s
    let stops: Vec<f64> = (1..grid).rev().map(|j| t - orbit.time_of(j)).collect();
    let sys = BackwardAdjoint { model, orbit };
    let tr = integrate_system(&sys, 0.0, q0.as_slice(), t, &stops, &IntegrationOptions::sparse(options.tol))?;

    let mut state = DMatrix::zeros(n, grid);
    state.set_column(0, &q0);
    for j in 1..grid {
        // sample index: 0 is s = 0, then s = T - t_{N-1}, ..., s = T - t_1
        let idx = grid - j;
        state.set_column(j, &DVector::from_column_slice(tr.state(idx)));
    }
    let periodicity_defect = tr
        .final_state()
        .iter()
        .zip(q0.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut normalization_residual = vec![0.0; grid];
    let mut input = DVector::zeros(grid);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut worst = (0.0f64, 0usize);
    for j in 0..grid {
        let xj = orbit.state(j);
        model.f_into(&xj, p, &mut f);
        let dot: f64 = (0..n).map(|i| state[(i, j)] * f[i]).sum();
        let r = dot / omega - 1.0;
        normalization_residual[j] = r;
        if r.abs() > worst.0 {
            worst = (r.abs(), j);
        }
        let scale = 1.0 / (1.0 + r);
        for i in 0..n {
            state[(i, j)] *= scale;
        }
        model.g_into(&xj, p, &mut g);
        input[j] = (0..n).map(|i| state[(i, j)] * g[i]).sum();
    }
    if worst.0 > options.normalization_tol {
        return Err(Error::Accuracy {
            what: "iPRC normalization",
            residual: worst.0,
            tolerance: options.normalization_tol,
            phase: orbit.phases()[worst.1],
        });
    }
    let interpolant = PeriodicInterpolant::from_columns(n, |i, j| state[(i, j)], grid);
    Ok(PhaseResponse {
        state,
        input,
        normalization_residual,
        periodicity_defect,
        omega,
        interpolant,
    })
}

/// Asymptotic phase read-out with diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPhase {
    /// Phase in `[0, 2 pi)`.
    pub phase: f64,
    /// Whole periods integrated before convergence.
    pub periods: usize,
    /// Distance to the orbit when read out.
    pub distance: f64,
}

/// Asymptotic phase of `x`: integrate whole periods until the state is
/// within `convergence * diameter` of the orbit, then project onto the
/// orbit. Since `omega T = 2 pi`, unwinding whole periods leaves the
/// projected phase unchanged.
pub fn asymptotic_phase(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    x: &[f64],
    options: &PrcOptions,
) -> Result<AsymptoticPhase> {
    asymptotic_phase_with_diameter(orbit, model, params, x, options, orbit.diameter())
}

fn asymptotic_phase_with_diameter(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    x: &[f64],
    options: &PrcOptions,
    diameter: f64,
) -> Result<AsymptoticPhase> {
    model.check_parameters(params)?;
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            what: "state",
            expected: model.dim(),
            actual: x.len(),
        });
    }
    let threshold = options.convergence * diameter;
    let (mut theta, mut dist) = orbit.project(x);
    if !dist.is_finite() || dist > options.basin_radius * diameter {
        return Err(Error::BasinEscape {
            periods: 0,
            distance: dist,
        });
    }
    let flow = ModelFlow {
        model,
        params: params.values(),
        input: None,
    };
    let opts = IntegrationOptions::sparse(options.tol);
    let mut state = x.to_vec();
    let mut periods = 0;
    while dist > threshold {
        if periods >= options.max_periods {
            return Err(Error::BasinEscape {
                periods,
                distance: dist,
            });
        }
        let tr = integrate_system(&flow, 0.0, &state, orbit.period, &[], &opts).map_err(|_| {
            Error::BasinEscape {
                periods,
                distance: f64::INFINITY,
            }
        })?;
        state = tr.final_state().to_vec();
        periods += 1;
        (theta, dist) = orbit.project(&state);
        if !dist.is_finite() || dist > options.basin_radius * diameter {
            return Err(Error::BasinEscape {
                periods,
                distance: dist,
            });
        }
    }
    Ok(AsymptoticPhase {
        phase: wrap_2pi(theta),
        periods,
        distance: dist,
    })
}

/// One direct phase-shift measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinitePrcSample {
    /// Stimulus phase.
    pub theta: f64,
    pub epsilon: f64,
    /// Phase shift in `(-pi, pi]`.
    pub shift: f64,
    /// Periods integrated for the perturbed state.
    pub periods: usize,
    /// Distance to the orbit at read-out.
    pub residual: f64,
}

/// Finite-amplitude PRC: the state jumps by `epsilon g(x)` at phase
/// `theta`; the shift is the asymptotic phase of the jumped state minus
/// that of the unperturbed one, both read out after the same number of
/// whole periods. Samples fail independently.
pub fn compute_finite_prc(
    orbit: &PeriodicOrbit,
    model: &ModelDefinition,
    params: &ParameterVector,
    epsilon: f64,
    phases: &[f64],
    options: &PrcOptions,
) -> Result<Vec<Result<FinitePrcSample>>> {
    model.check_parameters(params)?;
    if epsilon == 0.0 || !epsilon.is_finite() {
        return Err(Error::Precondition("finite PRC amplitude must be nonzero".into()));
    }
    let diameter = orbit.diameter();
    let flow = ModelFlow {
        model,
        params: params.values(),
        input: None,
    };
    let n = model.dim();
    let sample = |theta: f64| -> Result<FinitePrcSample> {
        let base = orbit.orbit_point(theta);
        let g = model.eval_input_field(base.as_slice(), params)?;
        let jumped: Vec<f64> = (0..n).map(|i| base[i] + epsilon * g[i]).collect();
        let post = asymptotic_phase_with_diameter(orbit, model, params, &jumped, options, diameter)?;
        // unperturbed reference carried through the same integration span
        let pre = if post.periods == 0 {
            wrap_2pi(theta)
        } else {
            let tr = integrate_system(
                &flow,
                0.0,
                base.as_slice(),
                post.periods as f64 * orbit.period,
                &[],
                &IntegrationOptions::sparse(options.tol),
            )?;
            orbit.project(tr.final_state()).0
        };
        Ok(FinitePrcSample {
            theta,
            epsilon,
            shift: wrap_pm_pi(post.phase - pre),
            periods: post.periods,
            residual: post.distance,
        })
    };
    Ok(phases.iter().map(|&th| sample(th)).collect())
}

/// `count` equally spaced stimulus phases starting at 0.
pub fn uniform_phases(count: usize) -> Vec<f64> {
    (0..count).map(|j| 2.0 * PI * j as f64 / count as f64).collect()
}
