//! Built-in models and the name registry.

use nalgebra::DMatrix;

use super::{ModelDefinition, OrbitSeed, ParameterVector, RateLaws, Scalar};
use crate::error::{Error, Result};
use crate::odeint::{Direction, Section};

/// Which parameters the radial normal form exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadialVariant {
    /// `timescale` and `rho`
    Full,
    /// `timescale` only
    TimeScale,
    /// `rho` only
    Radius,
}

/// `x' = s [x (rho - r^2) - y]`, `y' = s [y (rho - r^2) + x]`.
///
/// The orbit is the circle of radius `sqrt(rho)` traversed at angular speed
/// `s`; isochrons are rays. Input enters additively on the first coordinate.
#[derive(Clone, Copy, Debug)]
pub struct RadialNormalForm {
    pub variant: RadialVariant,
}

impl RadialNormalForm {
    fn split<S: Scalar>(&self, p: &[S]) -> (S, S) {
        match self.variant {
            RadialVariant::Full => (p[0], p[1]),
            RadialVariant::TimeScale => (p[0], S::from(1.0)),
            RadialVariant::Radius => (S::from(1.0), p[0]),
        }
    }
}

impl RateLaws for RadialNormalForm {
    fn vector_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]) {
        let (s, rho) = self.split(p);
        let growth = rho - (x[0] * x[0] + x[1] * x[1]);
        out[0] = s * (x[0] * growth - x[1]);
        out[1] = s * (x[1] * growth + x[0]);
    }

    fn input_field<S: Scalar>(&self, _x: &[S], _p: &[S], out: &mut [S]) {
        out[0] = S::from(1.0);
        out[1] = S::from(0.0);
    }
}

/// `x' = y`, `y' = mu (1 - x^2) y - x`; input is a force on `y`.
#[derive(Clone, Copy, Debug)]
pub struct VanDerPol;

impl RateLaws for VanDerPol {
    fn vector_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]) {
        let mu = p[0];
        out[0] = x[1];
        out[1] = mu * (-(x[0] * x[0]) + 1.0) * x[1] - x[0];
    }

    fn input_field<S: Scalar>(&self, _x: &[S], _p: &[S], out: &mut [S]) {
        out[0] = S::from(0.0);
        out[1] = S::from(1.0);
    }
}

/// How the external input enters the Goodwin loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoodwinInput {
    /// Modulates the maximal transcription rate `a`.
    Rate,
    /// Adds directly to the mRNA equation.
    Additive,
}

/// Three-stage negative feedback loop (mRNA `X`, protein `Y`, repressor `Z`):
///
/// ```text
/// X' = a / (K^n + Z^n) - b X
/// Y' = c X - d Y
/// Z' = e Y - g Z
/// ```
#[derive(Clone, Copy, Debug)]
pub struct Goodwin {
    pub input: GoodwinInput,
}

impl RateLaws for Goodwin {
    fn vector_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]) {
        let [a, k, n, b, c, d, e, g] = [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]];
        out[0] = a / (k.pow(n) + x[2].pow(n)) - b * x[0];
        out[1] = c * x[0] - d * x[1];
        out[2] = e * x[1] - g * x[2];
    }

    fn input_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]) {
        out[0] = match self.input {
            GoodwinInput::Rate => S::from(1.0) / (p[1].pow(p[2]) + x[2].pow(p[2])),
            GoodwinInput::Additive => S::from(1.0),
        };
        out[1] = S::from(0.0);
        out[2] = S::from(0.0);
    }
}

/// `x' = s M x` with input on the first coordinate. Not an oscillator in
/// general; used for integrator and derivative checks.
#[derive(Clone, Debug)]
pub struct Linear {
    pub matrix: DMatrix<f64>,
}

impl RateLaws for Linear {
    fn vector_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]) {
        let n = self.matrix.nrows();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = S::from(0.0);
            for j in 0..n {
                acc = acc + x[j] * self.matrix[(i, j)];
            }
            *o = p[0] * acc;
        }
    }

    fn input_field<S: Scalar>(&self, _x: &[S], _p: &[S], out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = S::from(if i == 0 { 1.0 } else { 0.0 });
        }
    }
}

fn params(entries: &[(&str, f64)]) -> ParameterVector {
    ParameterVector::new(entries.iter().copied()).expect("built-in parameters are valid")
}

fn radial_with(variant: RadialVariant, name: &str) -> ModelDefinition {
    let p = match variant {
        RadialVariant::Full => params(&[("timescale", 1.0), ("rho", 1.0)]),
        RadialVariant::TimeScale => params(&[("timescale", 1.0)]),
        RadialVariant::Radius => params(&[("rho", 1.0)]),
    };
    ModelDefinition::new(
        name,
        2,
        RadialNormalForm { variant },
        p,
        OrbitSeed {
            state: vec![1.0, 0.0],
            period: 2.0 * std::f64::consts::PI,
        },
        Section::new(1, 0.0, Direction::Increasing),
    )
    .expect("radial model is well formed")
    .with_description("Radial (Hopf) normal form with time-scale and squared-radius parameters")
}

pub fn radial() -> ModelDefinition {
    radial_with(RadialVariant::Full, "radial")
}

pub fn radial_timescale() -> ModelDefinition {
    radial_with(RadialVariant::TimeScale, "radial-timescale")
}

pub fn radial_radius() -> ModelDefinition {
    radial_with(RadialVariant::Radius, "radial-radius")
}

pub fn van_der_pol() -> ModelDefinition {
    ModelDefinition::new(
        "vdp",
        2,
        VanDerPol,
        params(&[("mu", 1.0)]),
        OrbitSeed {
            state: vec![2.0, 0.0],
            period: 6.6,
        },
        Section::new(0, 0.0, Direction::Increasing),
    )
    .expect("van der Pol model is well formed")
    .with_description("Van der Pol oscillator with additive force on the velocity")
}

fn goodwin_with(input: GoodwinInput, name: &str) -> ModelDefinition {
    ModelDefinition::new(
        name,
        3,
        Goodwin { input },
        params(&[
            ("a", 1.0),
            ("K", 1.0),
            ("n", 16.0),
            ("b", 0.2),
            ("c", 0.2),
            ("d", 0.15),
            ("e", 0.2),
            ("g", 0.25),
        ]),
        OrbitSeed {
            state: vec![1.0, 1.3, 1.15],
            period: 19.2,
        },
        Section::new(2, 1.15, Direction::Increasing),
    )
    .expect("Goodwin model is well formed")
    .with_description("Goodwin three-stage genetic feedback loop")
    .with_groups([
        ("a", "transcription"),
        ("K", "transcription"),
        ("n", "transcription"),
        ("b", "mrna"),
        ("c", "protein"),
        ("d", "protein"),
        ("e", "repressor"),
        ("g", "repressor"),
    ])
}

/// Goodwin loop with the input modulating the transcription rate.
pub fn goodwin() -> ModelDefinition {
    goodwin_with(GoodwinInput::Rate, "goodwin")
}

/// Goodwin loop with an additive input on the mRNA equation.
pub fn goodwin_additive() -> ModelDefinition {
    goodwin_with(GoodwinInput::Additive, "goodwin-additive")
}

/// Harmonic center `x' = w y`, `y' = -w x`. Every orbit is periodic and
/// none is hyperbolic; not part of the registry.
pub fn harmonic() -> ModelDefinition {
    ModelDefinition::new(
        "harmonic",
        2,
        Linear {
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        },
        params(&[("omega", 1.0)]),
        OrbitSeed {
            state: vec![1.0, 0.0],
            period: 2.0 * std::f64::consts::PI,
        },
        Section::new(1, 0.0, Direction::Decreasing),
    )
    .expect("harmonic model is well formed")
}

/// `x' = s M x` for an arbitrary square matrix; not part of the registry.
pub fn linear(matrix: DMatrix<f64>) -> ModelDefinition {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "linear model needs a square matrix");
    let mut seed = vec![0.0; n];
    seed[0] = 1.0;
    ModelDefinition::new(
        "linear",
        n,
        Linear { matrix },
        params(&[("scale", 1.0)]),
        OrbitSeed { state: seed, period: 1.0 },
        Section::new(0, 0.0, Direction::Increasing),
    )
    .expect("linear model is well formed")
}

/// Lookup of the built-in oscillators by name.
#[derive(Clone, Debug)]
pub struct ModelRegistry {
    entries: Vec<ModelDefinition>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn builtin() -> Self {
        Self {
            entries: vec![
                radial(),
                radial_timescale(),
                radial_radius(),
                van_der_pol(),
                goodwin(),
                goodwin_additive(),
            ],
        }
    }

    pub fn register(&mut self, model: ModelDefinition) {
        self.entries.retain(|m| m.name() != model.name());
        self.entries.push(model);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(ModelDefinition::name).collect()
    }

    pub fn get(&self, name: &str) -> Result<ModelDefinition> {
        self.entries
            .iter()
            .find(|m| m.name() == name)
            .cloned()
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelDefinition> {
        self.entries.iter()
    }
}
