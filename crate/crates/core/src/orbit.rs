//! Periodic orbits by Newton shooting on `(x0, T)` with a Poincare-section
//! phase condition, sampled on a uniform phase grid.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDefinition, OrbitSeed, ParameterVector};
use crate::odeint::{
    find_section_crossings, integrate_system, integrate_variational_with, IntegrationOptions,
    ModelFlow, Section,
};
use crate::spectral::{phase_grid, PeriodicInterpolant};

/// Modulus bound for nontrivial Floquet multipliers of a hyperbolic orbit.
pub const HYPERBOLIC_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitOptions {
    /// Number of phase grid points.
    pub grid: usize,
    /// Integrator tolerance.
    pub tol: f64,
    /// Target for `|x(T) - x(0)|` and the section residual.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Seed periods integrated before the first section crossing is taken.
    pub transient_periods: f64,
    /// Overrides the model's default phase section.
    pub section: Option<Section>,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            grid: 256,
            tol: 1e-12,
            newton_tol: 1e-10,
            max_newton: 40,
            transient_periods: 30.0,
            section: None,
        }
    }
}

/// A periodic orbit sampled at `theta_j = 2 pi j / N`.
#[derive(Clone, Debug)]
pub struct PeriodicOrbit {
    /// Column `j` is the state at `theta_j`.
    pub states: DMatrix<f64>,
    pub omega: f64,
    pub period: f64,
    /// Monodromy matrix `Phi(T)` from the orbit point at phase 0.
    pub monodromy: DMatrix<f64>,
    /// Multiplier closest to 1 (the flow direction).
    pub trivial_multiplier: Complex64,
    /// Remaining `n - 1` multipliers, sorted by decreasing modulus.
    pub multipliers: Vec<Complex64>,
    pub hyperbolic: bool,
    /// `|x(T) - x(0)|` of the final shooting solve.
    pub periodicity_residual: f64,
    pub newton_iterations: usize,
    pub params: ParameterVector,
    pub section: Section,
    interpolant: PeriodicInterpolant,
}

impl PeriodicOrbit {
    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn grid_size(&self) -> usize {
        self.states.ncols()
    }

    pub fn phases(&self) -> Vec<f64> {
        phase_grid(self.grid_size())
    }

    pub fn state(&self, j: usize) -> Vec<f64> {
        self.states.column(j).iter().copied().collect()
    }

    /// Time along the orbit corresponding to grid index `j`.
    pub fn time_of(&self, j: usize) -> f64 {
        self.period * j as f64 / self.grid_size() as f64
    }

    /// Point on the orbit at phase `theta` (any real; taken mod 2 pi).
    /// Grid phases return the stored samples exactly.
    pub fn orbit_point(&self, theta: f64) -> DVector<f64> {
        let n = self.grid_size();
        let pos = theta.rem_euclid(2.0 * PI) * n as f64 / (2.0 * PI);
        if pos.fract() == 0.0 {
            let j = (pos as usize) % n;
            return self.states.column(j).into_owned();
        }
        DVector::from_vec(self.interpolant.eval(theta))
    }

    /// `d^order x / d theta^order` of the trigonometric interpolant.
    pub fn orbit_derivative_into(&self, theta: f64, order: u32, out: &mut [f64]) {
        self.interpolant.eval_into(theta, order, out)
    }

    pub fn interpolant(&self) -> &PeriodicInterpolant {
        &self.interpolant
    }

    /// Largest distance between any two grid points (a scale for
    /// convergence thresholds).
    pub fn diameter(&self) -> f64 {
        let n = self.grid_size();
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                d = d.max((self.states.column(i) - self.states.column(j)).norm());
            }
        }
        d
    }

    /// Trigonometric resampling onto a grid of `n_new` points.
    pub fn resample(&self, n_new: usize) -> PeriodicOrbit {
        let dim = self.dim();
        let grid = phase_grid(n_new);
        let mut states = DMatrix::zeros(dim, n_new);
        for (j, &th) in grid.iter().enumerate() {
            states.set_column(j, &self.orbit_point(th));
        }
        let interpolant = PeriodicInterpolant::from_columns(dim, |i, j| states[(i, j)], n_new);
        PeriodicOrbit {
            states,
            interpolant,
            ..self.clone()
        }
    }

    /// `max_j |omega x'(theta_j) - f(x(theta_j))|` with spectral derivatives.
    pub fn spectral_residual(&self, model: &ModelDefinition) -> f64 {
        let n = self.grid_size();
        let dim = self.dim();
        let derivs: Vec<Vec<f64>> = (0..dim)
            .map(|i| self.interpolant.component(i).derivative_samples())
            .collect();
        let mut f = vec![0.0; dim];
        let mut worst: f64 = 0.0;
        for j in 0..n {
            model.f_into(&self.state(j), self.params.values(), &mut f);
            for i in 0..dim {
                worst = worst.max((self.omega * derivs[i][j] - f[i]).abs());
            }
        }
        worst
    }

    /// Nearest orbit point to `x`: returns `(theta, distance)`. Coarse grid
    /// search (ties to the smallest phase) refined by Newton on the
    /// closest-point condition of the interpolant.
    pub fn project(&self, x: &[f64]) -> (f64, f64) {
        let n = self.grid_size();
        let dim = self.dim();
        let dist2 = |col: &[f64]| -> f64 { col.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum() };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            let d = dist2(self.states.column(j).as_slice());
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        let h = 2.0 * PI / n as f64;
        let mut theta = best as f64 * h;
        let (lo, hi) = (theta - h, theta + h);
        let mut p = vec![0.0; dim];
        let mut d1 = vec![0.0; dim];
        let mut d2 = vec![0.0; dim];
        for _ in 0..30 {
            self.interpolant.eval_into(theta, 0, &mut p);
            self.interpolant.eval_into(theta, 1, &mut d1);
            self.interpolant.eval_into(theta, 2, &mut d2);
            let g: f64 = (0..dim).map(|i| (p[i] - x[i]) * d1[i]).sum();
            let gp: f64 = (0..dim).map(|i| d1[i] * d1[i] + (p[i] - x[i]) * d2[i]).sum();
            if gp <= 0.0 {
                break;
            }
            let step = g / gp;
            let next = (theta - step).clamp(lo, hi);
            let done = (next - theta).abs() < 1e-15;
            theta = next;
            if done {
                break;
            }
        }
        self.interpolant.eval_into(theta, 0, &mut p);
        let d = dist2(&p).sqrt();
        if d.powi(2) > best_d {
            // refinement wandered; keep the grid point
            return (best as f64 * h, best_d.sqrt());
        }
        (theta.rem_euclid(2.0 * PI), d)
    }
}

fn bordered_shooting_matrix(
    phi: &DMatrix<f64>,
    column: &DVector<f64>,
    section: &Section,
) -> DMatrix<f64> {
    let n = phi.nrows();
    let mut j = DMatrix::zeros(n + 1, n + 1);
    j.view_mut((0, 0), (n, n)).copy_from(&(phi - DMatrix::identity(n, n)));
    j.view_mut((0, n), (n, 1)).copy_from(column);
    j[(n, section.index)] = 1.0;
    j
}

/// Floquet multipliers of `monodromy`: (closest to 1, the rest sorted by
/// decreasing modulus).
pub fn floquet_multipliers(monodromy: &DMatrix<f64>) -> (Complex64, Vec<Complex64>) {
    let eig: Vec<Complex64> = monodromy.complex_eigenvalues().iter().copied().collect();
    let one = Complex64::new(1.0, 0.0);
    let trivial_idx = eig
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - one).norm().total_cmp(&(b.1 - one).norm()))
        .map(|(i, _)| i)
        .expect("non-empty spectrum");
    let trivial = eig[trivial_idx];
    let mut rest: Vec<Complex64> = eig
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != trivial_idx)
        .map(|(_, v)| v)
        .collect();
    rest.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    (trivial, rest)
}

/// Solves the periodic orbit boundary value problem by shooting.
pub fn find_periodic_orbit(
    model: &ModelDefinition,
    params: &ParameterVector,
    seed: &OrbitSeed,
    options: &OrbitOptions,
) -> Result<PeriodicOrbit> {
    model.check_parameters(params)?;
    let n = model.dim();
    if seed.state.len() != n {
        return Err(Error::Dimension {
            what: "orbit seed",
            expected: n,
            actual: seed.state.len(),
        });
    }
    if !(seed.period > 0.0) {
        return Err(Error::Precondition("seed period must be positive".into()));
    }
    if options.grid < 8 {
        return Err(Error::Precondition("orbit grid needs at least 8 points".into()));
    }
    let section = options.section.unwrap_or_else(|| model.section());
    let p = params.values();
    let flow = ModelFlow {
        model,
        params: p,
        input: None,
    };
    let seed_error = |residual: f64| Error::OrbitSeed {
        iterations: 0,
        residual,
    };

    // relax onto the attractor, then anchor on the section
    let mut x = seed.state.clone();
    if options.transient_periods > 0.0 {
        let tr = integrate_system(
            &flow,
            0.0,
            &x,
            options.transient_periods * seed.period,
            &[],
            &IntegrationOptions::sparse(options.tol.max(1e-10)),
        )
        .map_err(|_| seed_error(f64::INFINITY))?;
        x = tr.final_state().to_vec();
    }
    let probe = integrate_system(
        &flow,
        0.0,
        &x,
        3.0 * seed.period,
        &[],
        &IntegrationOptions::with_tol(options.tol),
    )
    .map_err(|_| seed_error(f64::INFINITY))?;
    let crossings = find_section_crossings(&probe, &section)?;
    let Some(&first) = crossings.first() else {
        return Err(Error::NoCrossing {
            index: section.index,
            level: section.level,
            direction: section.direction.as_str(),
        });
    };
    let mut x0 = probe.at(first).expect("crossing inside span");
    x0[section.index] = section.level;
    let mut period = match crossings.get(1) {
        Some(&second) => second - first,
        None => seed.period,
    };

    // Newton on (x0, T)
    let var_opts = IntegrationOptions::sparse(options.tol);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..=options.max_newton {
        iterations = it;
        let vt = integrate_variational_with(model, &x0, p, (0.0, period), &[], &var_opts)?;
        let xt = vt.state(vt.trajectory.len() - 1).to_vec();
        let phi = vt.final_fundamental();
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = xt[i] - x0[i];
        }
        rhs[n] = x0[section.index] - section.level;
        residual = rhs.amax();
        if residual <= options.newton_tol {
            converged = true;
            break;
        }
        if it == options.max_newton {
            break;
        }
        let mut fx = vec![0.0; n];
        model.f_into(&xt, p, &mut fx);
        let jac = bordered_shooting_matrix(&phi, &DVector::from_vec(fx), &section);
        let step = jac
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::DegenerateSection(e.to_string()))?;
        let mut damping = 1.0;
        while period - damping * step[n] <= 0.25 * period {
            damping *= 0.5;
        }
        for i in 0..n {
            x0[i] -= damping * step[i];
        }
        period -= damping * step[n];
        if !x0.iter().all(|v| v.is_finite()) || !period.is_finite() {
            break;
        }
    }
    if !converged {
        return Err(Error::OrbitSeed {
            iterations,
            residual,
        });
    }

    build_orbit(model, params, x0, period, section, options, iterations)
}

fn build_orbit(
    model: &ModelDefinition,
    params: &ParameterVector,
    x0: Vec<f64>,
    period: f64,
    section: Section,
    options: &OrbitOptions,
    newton_iterations: usize,
) -> Result<PeriodicOrbit> {
    let n = model.dim();
    let grid = options.grid;
    let stops: Vec<f64> = (1..grid).map(|j| period * j as f64 / grid as f64).collect();
    let vt = integrate_variational_with(
        model,
        &x0,
        params.values(),
        (0.0, period),
        &stops,
        &IntegrationOptions::sparse(options.tol),
    )?;
    let mut states = DMatrix::zeros(n, grid);
    for j in 0..grid {
        let xj = vt.state(j);
        for i in 0..n {
            states[(i, j)] = xj[i];
        }
    }
    let last = vt.trajectory.len() - 1;
    let periodicity_residual = vt
        .state(last)
        .iter()
        .zip(&x0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let monodromy = vt.fundamental(last);
    let (trivial_multiplier, multipliers) = floquet_multipliers(&monodromy);
    let hyperbolic = multipliers.iter().all(|m| m.norm() <= 1.0 - HYPERBOLIC_MARGIN);
    let interpolant = PeriodicInterpolant::from_columns(n, |i, j| states[(i, j)], grid);
    let orbit = PeriodicOrbit {
        states,
        omega: 2.0 * PI / period,
        period,
        monodromy,
        trivial_multiplier,
        multipliers,
        hyperbolic,
        periodicity_residual,
        newton_iterations,
        params: params.clone(),
        section,
        interpolant,
    };
    if !orbit.hyperbolic {
        let modulus = orbit.multipliers.first().map(|m| m.norm()).unwrap_or(0.0);
        return Err(Error::NonHyperbolic {
            modulus,
            orbit: Box::new(orbit),
        });
    }
    Ok(orbit)
}

/// Recomputes `Phi(T)` around a solved orbit.
pub fn monodromy(orbit: &PeriodicOrbit, model: &ModelDefinition, tol: f64) -> Result<DMatrix<f64>> {
    let vt = integrate_variational_with(
        model,
        &orbit.state(0),
        orbit.params.values(),
        (0.0, orbit.period),
        &[],
        &IntegrationOptions::sparse(tol),
    )?;
    Ok(vt.final_fundamental())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    fn solve(model: &ModelDefinition) -> PeriodicOrbit {
        find_periodic_orbit(model, model.default_parameters(), model.seed(), &OrbitOptions::default())
            .unwrap()
    }

    #[test]
    fn radial_orbit_is_unit_circle() {
        let m = builtin::radial();
        let o = solve(&m);
        assert!((o.omega - 1.0).abs() < 1e-8);
        assert!((o.period - 2.0 * PI).abs() < 1e-7);
        for j in 0..o.grid_size() {
            let r = o.states.column(j).norm();
            assert!((r - 1.0).abs() < 1e-8);
        }
        let expected = (-4.0 * PI).exp();
        assert_eq!(o.multipliers.len(), 1);
        assert!((o.multipliers[0].re - expected).abs() < 1e-6);
        assert!((o.trivial_multiplier.re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn radial_orbit_point_at_quarter_turn() {
        let o = solve(&builtin::radial());
        let p = o.orbit_point(PI / 2.0);
        assert!(p[0].abs() < 1e-8 && (p[1] - 1.0).abs() < 1e-8);
        assert_eq!(o.orbit_point(0.0), o.states.column(0).into_owned());
        let mid = o.orbit_point(0.3 * PI / 128.0 + PI / 3.0);
        let ang = 0.3 * PI / 128.0 + PI / 3.0;
        assert!((mid[0] - ang.cos()).abs() < 1e-8);
    }

    #[test]
    fn van_der_pol_period() {
        let o = solve(&builtin::van_der_pol());
        assert!((o.period - 6.663286859323).abs() < 1e-6 * 6.66);
        assert!(o.hyperbolic);
        assert!(o.periodicity_residual <= 1e-9);
    }

    #[test]
    fn harmonic_center_is_not_hyperbolic() {
        let m = builtin::harmonic();
        let err = find_periodic_orbit(&m, m.default_parameters(), m.seed(), &OrbitOptions::default())
            .unwrap_err();
        match err {
            Error::NonHyperbolic { modulus, orbit } => {
                assert!((modulus - 1.0).abs() < 1e-6);
                assert!(!orbit.hyperbolic);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_residual_and_anchor() {
        for m in [builtin::radial(), builtin::van_der_pol(), builtin::goodwin()] {
            let o = solve(&m);
            assert!(o.spectral_residual(&m) <= 1e-7, "{}: {}", m.name(), o.spectral_residual(&m));
            let s = o.section;
            assert!((o.states[(s.index, 0)] - s.level).abs() < 1e-10);
        }
    }

    #[test]
    fn monodromy_properties() {
        let m = builtin::van_der_pol();
        let o = solve(&m);
        let phi = monodromy(&o, &m, 1e-12).unwrap();
        let v0 = m.eval_f(&o.state(0), &o.params).unwrap();
        assert!((&phi * &v0 - &v0).amax() < 1e-6);
        // Abel-Liouville: det = exp(int trace A dt) = exp(int mu (1 - x^2) dt)
        let integral: f64 = (0..o.grid_size())
            .map(|j| 1.0 - o.states[(0, j)].powi(2))
            .sum::<f64>()
            * o.period
            / o.grid_size() as f64;
        assert!((phi.determinant() - integral.exp()).abs() < 1e-6);
    }

    #[test]
    fn resample_round_trip() {
        let o = solve(&builtin::van_der_pol());
        let back = o.resample(512).resample(256);
        assert!((back.states - &o.states).amax() <= 1e-8);
    }

    #[test]
    fn time_scale_family_scales_frequency() {
        let m = builtin::radial_timescale();
        for s in [0.5, 1.0, 2.0] {
            let p = m.parameters_with([("timescale", s)]).unwrap();
            let seed = OrbitSeed {
                state: vec![1.0, 0.0],
                period: 2.0 * PI / s,
            };
            let o = find_periodic_orbit(&m, &p, &seed, &OrbitOptions::default()).unwrap();
            assert!((o.omega - s).abs() < 1e-9 * s.max(1.0));
        }
    }

    #[test]
    fn projection_recovers_grid_phase() {
        let o = solve(&builtin::goodwin());
        let j = 37;
        let (theta, d) = o.project(&o.state(j));
        assert!((theta - o.phases()[j]).abs() < 1e-8 && d < 1e-12);
    }
}
