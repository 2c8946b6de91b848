//! Trigonometric interpolation on uniform periodic grids.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

fn fft(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn ifft_real(coeffs: &[Complex64]) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Signed harmonic number of DFT bin `j` on an `n`-point grid.
fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Trigonometric interpolant of one periodic signal sampled at
/// `theta_j = 2 pi j / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries {
    // c_m for m = 0..=N/2, normalized so that f(theta) = sum_m c_m e^{i m theta}
    half: Vec<Complex64>,
    n: usize,
}

impl FourierSeries {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n >= 2, "need at least two samples");
        let spec = fft(samples);
        let half = spec[..=n / 2].iter().map(|c| c / n as f64).collect();
        Self { half, n }
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    /// Coefficient of `e^{i m theta}` for `|m| <= N/2` (zero beyond).
    pub fn coefficient(&self, m: i64) -> Complex64 {
        let a = m.unsigned_abs() as usize;
        if a >= self.half.len() {
            return Complex64::new(0.0, 0.0);
        }
        let c = self.half[a];
        let c = if self.n % 2 == 0 && a == self.n / 2 { c * 0.5 } else { c };
        if m >= 0 {
            c
        } else {
            c.conj()
        }
    }

    fn weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        // real form: c_0 + sum 2 Re(c_m e^{i m t}); a Nyquist bin counts once
        let nyq = if self.n % 2 == 0 { Some(self.n / 2) } else { None };
        (0..self.half.len()).map(move |m| {
            let w = if m == 0 || Some(m) == nyq { 1.0 } else { 2.0 };
            (m, w)
        })
    }

    /// `d^order f / d theta^order` at `theta`. The Nyquist mode is dropped
    /// for `order > 0`.
    pub fn eval_derivative(&self, theta: f64, order: u32) -> f64 {
        let step = Complex64::from_polar(1.0, theta);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = 0.0;
        let nyq = if self.n % 2 == 0 { Some(self.n / 2) } else { None };
        for (m, w) in self.weights() {
            if order > 0 && Some(m) == nyq {
                continue;
            }
            let factor = Complex64::new(0.0, m as f64).powu(order);
            acc += w * (self.half[m] * factor * rot).re;
            rot *= step;
        }
        acc
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.eval_derivative(theta, 0)
    }

    /// Spectral derivative sampled on the native grid.
    pub fn derivative_samples(&self) -> Vec<f64> {
        let n = self.n;
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for (j, slot) in full.iter_mut().enumerate() {
            let m = wavenumber(j, n);
            if n % 2 == 0 && j == n / 2 {
                continue;
            }
            let c = self.coefficient(m) * n as f64;
            *slot = c * Complex64::new(0.0, m as f64);
        }
        ifft_real(&full).iter().map(|v| v / n as f64).collect()
    }

    /// Samples of the interpolant on a uniform grid of `m` points.
    pub fn resample(&self, m: usize) -> Vec<f64> {
        (0..m).map(|j| self.eval(2.0 * PI * j as f64 / m as f64)).collect()
    }

    /// Magnitude of the highest retained harmonics relative to the largest,
    /// a cheap resolution diagnostic.
    pub fn tail_ratio(&self) -> f64 {
        let mags: Vec<f64> = self.half.iter().skip(1).map(|c| c.norm()).collect();
        let peak = mags.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let tail = mags.len() / 8;
        mags[mags.len() - tail.max(1)..]
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            / peak
    }
}

/// Trigonometric interpolant of a vector-valued periodic signal.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicInterpolant {
    components: Vec<FourierSeries>,
}

impl PeriodicInterpolant {
    /// `columns[j]` is the sample at `theta_j`.
    pub fn from_columns(dim: usize, samples: impl Fn(usize, usize) -> f64, n: usize) -> Self {
        let components = (0..dim)
            .map(|i| FourierSeries::from_samples(&(0..n).map(|j| samples(i, j)).collect::<Vec<_>>()))
            .collect();
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &FourierSeries {
        &self.components[i]
    }

    /// Evaluates all components (or their `order`-th derivatives) at once,
    /// sharing the harmonic rotations.
    pub fn eval_into(&self, theta: f64, order: u32, out: &mut [f64]) {
        let first = &self.components[0];
        let nyq = if first.n % 2 == 0 { Some(first.n / 2) } else { None };
        let step = Complex64::from_polar(1.0, theta);
        let mut rot = Complex64::new(1.0, 0.0);
        out.fill(0.0);
        for (m, w) in first.weights() {
            if !(order > 0 && Some(m) == nyq) {
                let factor = Complex64::new(0.0, m as f64).powu(order) * rot * w;
                for (o, c) in out.iter_mut().zip(&self.components) {
                    *o += (c.half[m] * factor).re;
                }
            }
            rot *= step;
        }
    }

    pub fn eval(&self, theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(theta, 0, &mut out);
        out
    }
}

/// `out_j = (1/N) sum_i a_{(i + j) mod N} b_i`: the one-period average of
/// `a(s + chi_j) b(s)`, exact for band-limited signals.
pub fn circular_cross_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "correlation operands must share a grid");
    let n = a.len();
    let fa = fft(a);
    let fb = fft(b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    ifft_real(&prod)
        .iter()
        .map(|v| v / (n as f64 * n as f64))
        .collect()
}

/// Samples on an `n`-point grid of the band-limited projection of a
/// periodic function: `f` is sampled `oversample` times finer, and only
/// harmonics below `n / 2` are kept. Aliasing of unresolved harmonics
/// onto the coarse grid is avoided.
pub fn band_limited_samples(f: impl Fn(f64) -> f64, n: usize, oversample: usize) -> Vec<f64> {
    assert!(n >= 2 && oversample >= 1);
    let fine = n * oversample;
    let spec = fft(&phase_grid(fine).iter().map(|&t| f(t)).collect::<Vec<_>>());
    let mut coarse = vec![Complex64::new(0.0, 0.0); n];
    let scale = n as f64 / fine as f64;
    for (j, slot) in coarse.iter_mut().enumerate() {
        let m = wavenumber(j, n);
        if n % 2 == 0 && j == n / 2 {
            continue;
        }
        let src = m.rem_euclid(fine as i64) as usize;
        *slot = spec[src] * scale;
    }
    ifft_real(&coarse).iter().map(|v| v / n as f64).collect()
}

/// Uniform phase grid `2 pi j / n`.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pm_pi(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Wraps an angle into `[0, 2 pi)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y >= 2.0 * PI {
        0.0
    } else {
        y
    }
}

/// Trapezoid rule over one period on a uniform grid.
pub fn periodic_integral(samples: &[f64]) -> f64 {
    2.0 * PI * samples.iter().sum::<f64>() / samples.len() as f64
}
