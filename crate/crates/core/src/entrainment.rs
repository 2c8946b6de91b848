//! Averaged coupling functions, 1:1 locking points and their parameter
//! sensitivities.
//!
//! With oscillator phase `theta` and forcing phase `theta_u = omega_u t`,
//! the averaged phase difference `chi = theta - theta_u` obeys
//! `chi' = V(chi) = (omega - omega_u) + eps * Gamma(chi)`, where
//! `Gamma(chi)` is the one-period average of `q(s + chi) h(s)`. Stable
//! locking points are roots of `V` with `V' < 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDefinition, ParameterVector};
use crate::odeint::{integrate_system, IntegrationOptions, ModelFlow};
use crate::orbit::{find_periodic_orbit, OrbitOptions, PeriodicOrbit};
use crate::prc::{asymptotic_phase, compute_iprc, PhaseResponse, PrcOptions};
use crate::spectral::{band_limited_samples, circular_cross_correlation, phase_grid, wrap_pm_pi, FourierSeries};

/// Oversampling factor used to project forcing waveforms onto the grid.
const OVERSAMPLE: usize = 32;

/// One period of a forcing waveform `h(s)`, `s` in `[0, 2 pi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WaveShape {
    /// `sin s`
    Sine,
    /// `mean + sum_m cos[m-1] cos(m s) + sin[m-1] sin(m s)`
    Fourier {
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// Square wave, `+1` on `[0, 2 pi duty)` and `-1` elsewhere, with
    /// logistic edges.
    Square {
        #[serde(default = "default_duty")]
        duty: f64,
        #[serde(default = "default_steepness")]
        steepness: f64,
    },
    /// Square wave truncated to its first `harmonics` Fourier modes,
    /// rescaled if the Gibbs overshoot would leave `[-1, 1]`.
    SquareFourier {
        #[serde(default = "default_duty")]
        duty: f64,
        #[serde(default = "default_harmonics")]
        harmonics: usize,
    },
}

fn default_duty() -> f64 {
    0.5
}

fn default_steepness() -> f64 {
    50.0
}

fn default_harmonics() -> usize {
    16
}

/// Forcing signal `u(t) = h(omega_u t)`; amplitude is carried separately
/// by `eps`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputWaveform {
    pub shape: WaveShape,
    pub omega_u: f64,
    #[serde(skip)]
    gain: f64,
}

impl InputWaveform {
    pub fn new(shape: WaveShape, omega_u: f64) -> Result<Self> {
        if !(omega_u > 0.0 && omega_u.is_finite()) {
            return Err(Error::Precondition(format!("forcing frequency {omega_u} must be positive")));
        }
        match &shape {
            WaveShape::Sine => {}
            WaveShape::Fourier { mean, cos, sin } => {
                if !mean.is_finite() || cos.iter().chain(sin).any(|v| !v.is_finite()) {
                    return Err(Error::Precondition("non-finite Fourier coefficient".into()));
                }
            }
            WaveShape::Square { duty, steepness } => {
                if !(*duty > 0.0 && *duty < 1.0) || !(*steepness > 0.0 && steepness.is_finite()) {
                    return Err(Error::Precondition(format!(
                        "square wave needs 0 < duty < 1 and positive steepness (got {duty}, {steepness})"
                    )));
                }
            }
            WaveShape::SquareFourier { duty, harmonics } => {
                if !(*duty > 0.0 && *duty < 1.0) || *harmonics == 0 {
                    return Err(Error::Precondition(format!(
                        "truncated square wave needs 0 < duty < 1 and at least one harmonic (got {duty}, {harmonics})"
                    )));
                }
            }
        }
        let mut wave = Self {
            shape,
            omega_u,
            gain: 1.0,
        };
        let peak = phase_grid(8192).iter().fold(0.0f64, |m, &s| m.max(wave.raw(s).abs()));
        match wave.shape {
            WaveShape::SquareFourier { .. } if peak > 1.0 => wave.gain = 1.0 / peak,
            WaveShape::Fourier { .. } if peak > 1.0 + 1e-12 => {
                return Err(Error::Precondition(format!(
                    "forcing waveform must satisfy |h| <= 1 (peak {peak})"
                )))
            }
            _ => {}
        }
        Ok(wave)
    }

    pub fn sine(omega_u: f64) -> Result<Self> {
        Self::new(WaveShape::Sine, omega_u)
    }

    fn raw(&self, s: f64) -> f64 {
        match &self.shape {
            WaveShape::Sine => s.sin(),
            WaveShape::Fourier { mean, cos, sin } => {
                let mut acc = *mean;
                for (m, c) in cos.iter().enumerate() {
                    acc += c * ((m + 1) as f64 * s).cos();
                }
                for (m, b) in sin.iter().enumerate() {
                    acc += b * ((m + 1) as f64 * s).sin();
                }
                acc
            }
            WaveShape::Square { duty, steepness } => {
                // cos(s - pi d) > cos(pi d) exactly on (0, 2 pi d)
                let arg = steepness * ((s - PI * duty).cos() - (PI * duty).cos());
                2.0 / (1.0 + (-arg).exp()) - 1.0
            }
            WaveShape::SquareFourier { duty, harmonics } => {
                let mut acc = 2.0 * duty - 1.0;
                for m in 1..=*harmonics {
                    let mf = m as f64;
                    let a = (2.0 * PI * mf * duty).sin() / (PI * mf);
                    let b = (1.0 - (2.0 * PI * mf * duty).cos()) / (PI * mf);
                    acc += 2.0 * (a * (mf * s).cos() + b * (mf * s).sin());
                }
                acc
            }
        }
    }

    /// `h(s)` at forcing phase `s`.
    pub fn value(&self, s: f64) -> f64 {
        self.gain * self.raw(s)
    }

    /// `u(t) = h(omega_u t)`.
    pub fn at_time(&self, t: f64) -> f64 {
        self.value(self.omega_u * t)
    }

    /// Cycle average of `h`.
    pub fn mean(&self) -> f64 {
        band_limited_samples(|s| self.value(s), 2, 4096).iter().sum::<f64>() / 2.0
    }

    /// Band-limited samples on an `n`-point phase grid.
    pub fn grid_samples(&self, n: usize) -> Vec<f64> {
        band_limited_samples(|s| self.value(s), n, OVERSAMPLE)
    }
}

/// `Gamma(chi_j)` and `Gamma'(chi_j)` on a uniform grid.
#[derive(Clone, Debug)]
pub struct CouplingFunction {
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
    series: FourierSeries,
}

impl CouplingFunction {
    pub fn from_samples(values: Vec<f64>) -> Self {
        let series = FourierSeries::from_samples(&values);
        let derivative = series.derivative_samples();
        Self {
            values,
            derivative,
            series,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn phases(&self) -> Vec<f64> {
        phase_grid(self.values.len())
    }

    pub fn eval(&self, chi: f64) -> f64 {
        self.series.eval(chi)
    }

    pub fn eval_derivative(&self, chi: f64) -> f64 {
        self.series.eval_derivative(chi, 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Averages a phase curve against the forcing waveform. Used both for
/// `Gamma` (from `q`) and for its parameter sensitivity (from `Z_q`).
pub fn coupling_function(curve: &[f64], input: &InputWaveform) -> Result<CouplingFunction> {
    if curve.len() < 4 {
        return Err(Error::Alignment(format!("phase grid of {} points is too small", curve.len())));
    }
    let h = input.grid_samples(curve.len());
    Ok(CouplingFunction::from_samples(circular_cross_correlation(curve, &h)))
}

pub fn coupling_from_prc(prc: &PhaseResponse, input: &InputWaveform) -> Result<CouplingFunction> {
    coupling_function(prc.input.as_slice(), input)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockingRoot {
    pub chi: f64,
    /// `V'(chi)`
    pub slope: f64,
    pub stable: bool,
}

/// Sensitivity of the selected locking phase to one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockingSensitivity {
    pub k: usize,
    pub name: String,
    pub s_chi: f64,
    /// Contribution through the frequency, `-S_omega / V'`.
    pub from_omega: f64,
    /// Contribution through the coupling function, `-eps S_Gamma / V'`.
    pub from_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockingReport {
    pub detuning: f64,
    pub epsilon: f64,
    /// Roots of `V` in `[0, 2 pi)`, increasing.
    pub roots: Vec<LockingRoot>,
    /// Index into `roots` of the locking point used downstream.
    pub selected: Option<usize>,
    pub sensitivities: Vec<LockingSensitivity>,
}

impl LockingReport {
    /// No stable root: the phase difference drifts.
    pub fn drifts(&self) -> bool {
        !self.roots.iter().any(|r| r.stable)
    }

    pub fn selected_root(&self) -> Option<LockingRoot> {
        self.selected.map(|i| self.roots[i])
    }

    pub fn stable_roots(&self) -> impl Iterator<Item = &LockingRoot> {
        self.roots.iter().filter(|r| r.stable)
    }

    /// Re-selects the stable root nearest (on the circle) to `chi`.
    pub fn select_nearest(&mut self, chi: f64) {
        self.selected = self
            .roots
            .iter()
            .enumerate()
            .filter(|(_, r)| r.stable)
            .min_by(|a, b| {
                wrap_pm_pi(a.1.chi - chi)
                    .abs()
                    .total_cmp(&wrap_pm_pi(b.1.chi - chi).abs())
            })
            .map(|(i, _)| i);
    }
}

/// Finds every sign change of `V` on the grid and polishes it to
/// `|V| <= 1e-10`. The stable root with the most negative slope is
/// selected.
pub fn locking_points(gamma: &CouplingFunction, detuning: f64, epsilon: f64) -> Result<LockingReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) || !detuning.is_finite() {
        return Err(Error::Precondition(format!(
            "locking needs eps > 0 and finite detuning (got {epsilon}, {detuning})"
        )));
    }
    let v = |chi: f64| detuning + epsilon * gamma.eval(chi);
    let dv = |chi: f64| epsilon * gamma.eval_derivative(chi);
    let n = gamma.grid_size();
    let grid = gamma.phases();
    let h = 2.0 * PI / n as f64;
    let samples: Vec<f64> = gamma.values.iter().map(|g| detuning + epsilon * g).collect();
    let mut roots = Vec::new();
    for j in 0..n {
        let (a, b) = (samples[j], samples[(j + 1) % n]);
        if a == 0.0 {
            if dv(grid[j]) != 0.0 {
                roots.push(grid[j]);
            }
            continue;
        }
        if b == 0.0 || a.signum() == b.signum() {
            continue;
        }
        let (mut lo, mut hi) = (grid[j], grid[j] + h);
        let mut f_lo = a;
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let fm = v(mid);
            if fm.signum() == f_lo.signum() {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..50 {
            let d = dv(x);
            if d == 0.0 {
                break;
            }
            let next = (x - v(x) / d).clamp(lo, hi);
            let done = (next - x).abs() < 1e-15;
            x = next;
            if done {
                break;
            }
        }
        roots.push(x.rem_euclid(2.0 * PI));
    }
    let mut roots: Vec<LockingRoot> = roots
        .into_iter()
        .map(|chi| {
            let slope = dv(chi);
            LockingRoot {
                chi,
                slope,
                stable: slope < 0.0,
            }
        })
        .collect();
    roots.sort_by(|a, b| a.chi.total_cmp(&b.chi));
    for r in &roots {
        let res = v(r.chi).abs();
        if res > 1e-10 {
            return Err(Error::Accuracy {
                what: "locking root",
                residual: res,
                tolerance: 1e-10,
                phase: r.chi,
            });
        }
    }
    let selected = roots
        .iter()
        .enumerate()
        .filter(|(_, r)| r.stable)
        .min_by(|a, b| a.1.slope.total_cmp(&b.1.slope))
        .map(|(i, _)| i);
    Ok(LockingReport {
        detuning,
        epsilon,
        roots,
        selected,
        sensitivities: Vec::new(),
    })
}

/// Sensitivity of the selected locking phase:
/// `S_chi = -(S_omega + eps S_Gamma(chi*)) / V'(chi*)`, split into the
/// frequency and coupling contributions.
pub fn locking_sensitivity(
    report: &LockingReport,
    gamma: &CouplingFunction,
    s_omega: f64,
    s_gamma: &CouplingFunction,
) -> Result<(f64, f64, f64)> {
    let root = report
        .selected_root()
        .ok_or_else(|| Error::Precondition("no stable locking point".into()))?;
    if s_gamma.grid_size() != gamma.grid_size() {
        return Err(Error::Alignment(format!(
            "coupling grid {} vs sensitivity grid {}",
            gamma.grid_size(),
            s_gamma.grid_size()
        )));
    }
    let slope = report.epsilon * gamma.eval_derivative(root.chi);
    if slope.abs() < 1e-8 {
        return Err(Error::NearTangency(slope.abs()));
    }
    let from_omega = -s_omega / slope;
    let from_gamma = -report.epsilon * s_gamma.eval(root.chi) / slope;
    Ok((from_omega + from_gamma, from_omega, from_gamma))
}

/// Adds the per-parameter sensitivities to `report`. `items` yields
/// `(k, name, S_omega, Z_q)` in parameter order.
pub fn attach_sensitivities<'a>(
    report: &mut LockingReport,
    gamma: &CouplingFunction,
    input: &InputWaveform,
    items: impl IntoIterator<Item = (usize, &'a str, f64, &'a [f64])>,
) -> Result<()> {
    let mut out = Vec::new();
    for (k, name, s_omega, z_q) in items {
        let s_gamma = coupling_function(z_q, input)?;
        let (s_chi, from_omega, from_gamma) = locking_sensitivity(report, gamma, s_omega, &s_gamma)?;
        out.push(LockingSensitivity {
            k,
            name: name.to_string(),
            s_chi,
            from_omega,
            from_gamma,
        });
    }
    report.sensitivities = out;
    Ok(())
}

/// Locking phase from a full recomputation (orbit, iPRC, coupling) at
/// `params`, with the forcing frequency held fixed. The stable root
/// nearest `near` is returned.
pub fn locking_phase_at(
    model: &ModelDefinition,
    params: &ParameterVector,
    input: &InputWaveform,
    epsilon: f64,
    near: f64,
    orbit_options: &OrbitOptions,
    prc_options: &PrcOptions,
) -> Result<f64> {
    let orbit = find_periodic_orbit(model, params, model.seed(), orbit_options)?;
    let prc = compute_iprc(&orbit, model, params, prc_options)?;
    let gamma = coupling_from_prc(&prc, input)?;
    let mut report = locking_points(&gamma, orbit.omega - input.omega_u, epsilon)?;
    report.select_nearest(near);
    report
        .selected_root()
        .map(|r| r.chi)
        .ok_or_else(|| Error::Precondition("no stable locking point at perturbed parameters".into()))
}

/// Central difference of the locking phase in parameter `k`.
#[allow(clippy::too_many_arguments)]
pub fn locking_fd_oracle(
    model: &ModelDefinition,
    params: &ParameterVector,
    k: usize,
    h: f64,
    input: &InputWaveform,
    epsilon: f64,
    base_chi: f64,
    orbit_options: &OrbitOptions,
    prc_options: &PrcOptions,
) -> Result<f64> {
    if k >= params.len() {
        return Err(Error::Precondition(format!("parameter index {k} out of range")));
    }
    let at = |value: f64| {
        locking_phase_at(
            model,
            &params.with_value(k, value),
            input,
            epsilon,
            base_chi,
            orbit_options,
            prc_options,
        )
    };
    let plus = at(params.value(k) + h)?;
    let minus = at(params.value(k) - h)?;
    Ok(wrap_pm_pi(plus - minus) / (2.0 * h))
}

/// Direct simulation of the forced oscillator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntrainmentSimulation {
    /// Forcing-period boundaries `2 pi k / omega_u`.
    pub times: Vec<f64>,
    /// Phase difference at each boundary, wrapped to `(-pi, pi]`.
    pub chi: Vec<f64>,
    /// Same, unwrapped continuously.
    pub chi_unwrapped: Vec<f64>,
    /// Last wrapped phase difference.
    pub final_chi: f64,
    /// Spread of the last ten samples below `lock_tol`.
    pub locked: bool,
    /// Net number of full cycles slipped (sign follows the drift).
    pub slips: i64,
}

/// Integrates `x' = f(x) + eps g(x) h(omega_u t)` from `x0` for
/// `periods` forcing periods and reads the asymptotic phase at every
/// period boundary, where the forcing phase is a multiple of `2 pi`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_entrainment(
    model: &ModelDefinition,
    params: &ParameterVector,
    orbit: &PeriodicOrbit,
    input: &InputWaveform,
    epsilon: f64,
    x0: &[f64],
    periods: usize,
    prc_options: &PrcOptions,
) -> Result<EntrainmentSimulation> {
    if periods < 50 {
        return Err(Error::Precondition(format!(
            "entrainment horizon must cover at least 50 forcing periods (got {periods})"
        )));
    }
    model.check_parameters(params)?;
    let forcing_period = 2.0 * PI / input.omega_u;
    let times: Vec<f64> = (0..=periods).map(|k| k as f64 * forcing_period).collect();
    let u = |t: f64| epsilon * input.at_time(t);
    let flow = ModelFlow {
        model,
        params: params.values(),
        input: Some(&u),
    };
    let tr = integrate_system(
        &flow,
        0.0,
        x0,
        times[periods],
        &times[1..periods],
        &IntegrationOptions::sparse(prc_options.tol.max(1e-11)),
    )?;
    let mut chi = Vec::with_capacity(periods + 1);
    let mut unwrapped: Vec<f64> = Vec::with_capacity(periods + 1);
    for i in 0..=periods {
        let theta = asymptotic_phase(orbit, model, params, tr.state(i), prc_options)?.phase;
        let c = wrap_pm_pi(theta);
        let u = match unwrapped.last() {
            Some(&prev) => prev + wrap_pm_pi(c - prev),
            None => c,
        };
        chi.push(c);
        unwrapped.push(u);
    }
    let tail = &unwrapped[unwrapped.len() - 10..];
    let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let drift = unwrapped[periods] - unwrapped[0];
    Ok(EntrainmentSimulation {
        final_chi: chi[periods],
        locked: spread < 1e-3,
        slips: (drift / (2.0 * PI)).trunc() as i64,
        times,
        chi,
        chi_unwrapped: unwrapped,
    })
}
