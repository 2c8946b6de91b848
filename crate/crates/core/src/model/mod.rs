//! Parameterized open oscillator models `x' = f(x, p) + g(x, p) u`,
//! `y = h(x, p)` and their exact derivatives.

pub mod builtin;
pub mod dual;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use self::dual::{Dual, HyperDual, Scalar};
use crate::error::{Error, Result};
use crate::odeint::Section;

/// Named real parameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let (names, values): (Vec<String>, Vec<f64>) =
            entries.into_iter().map(|(n, v)| (n.into(), v)).unzip();
        if names.is_empty() {
            return Err(Error::InvalidParameters("at least one parameter is required".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::InvalidParameters(format!("duplicate name `{name}`")));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "`{}` is not finite",
                names[i]
            )));
        }
        Ok(Self { names, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn name(&self, k: usize) -> &str {
        &self.names[k]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|k| self.values[k])
    }

    /// Overwrites one entry. Unknown names and non-finite values are rejected.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let k = self.index_of(name).ok_or_else(|| Error::UnknownParameter {
            model: String::new(),
            name: name.to_string(),
        })?;
        if !value.is_finite() {
            return Err(Error::InvalidParameters(format!("`{name}` is not finite")));
        }
        self.values[k] = value;
        Ok(())
    }

    /// Copy with parameter `k` replaced.
    pub fn with_value(&self, k: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.values[k] = value;
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Rate laws of a model, written once over any [`Scalar`] so that values
/// and derivatives come from the same code.
pub trait RateLaws: Send + Sync + 'static {
    fn vector_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]);

    fn input_field<S: Scalar>(&self, x: &[S], p: &[S], out: &mut [S]);

    /// Measurement map; the first coordinate unless overridden.
    fn output<S: Scalar>(&self, x: &[S], _p: &[S]) -> S {
        x[0]
    }
}

// Object-safe monomorphizations of `RateLaws`.
trait Evaluate: Send + Sync {
    fn f(&self, x: &[f64], p: &[f64], out: &mut [f64]);
    fn f_dual(&self, x: &[Dual<f64>], p: &[Dual<f64>], out: &mut [Dual<f64>]);
    fn f_hyper(&self, x: &[HyperDual], p: &[HyperDual], out: &mut [HyperDual]);
    fn g(&self, x: &[f64], p: &[f64], out: &mut [f64]);
    fn g_dual(&self, x: &[Dual<f64>], p: &[Dual<f64>], out: &mut [Dual<f64>]);
    fn h(&self, x: &[f64], p: &[f64]) -> f64;
}

impl<L: RateLaws> Evaluate for L {
    fn f(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.vector_field(x, p, out)
    }
    fn f_dual(&self, x: &[Dual<f64>], p: &[Dual<f64>], out: &mut [Dual<f64>]) {
        self.vector_field(x, p, out)
    }
    fn f_hyper(&self, x: &[HyperDual], p: &[HyperDual], out: &mut [HyperDual]) {
        self.vector_field(x, p, out)
    }
    fn g(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.input_field(x, p, out)
    }
    fn g_dual(&self, x: &[Dual<f64>], p: &[Dual<f64>], out: &mut [Dual<f64>]) {
        self.input_field(x, p, out)
    }
    fn h(&self, x: &[f64], p: &[f64]) -> f64 {
        self.output(x, p)
    }
}

/// Initial guess for the periodic-orbit solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSeed {
    pub state: Vec<f64>,
    pub period: f64,
}

/// A registered oscillator model with default parameters and the metadata
/// the orbit solver needs (seed and phase section).
#[derive(Clone)]
pub struct ModelDefinition {
    name: String,
    description: String,
    dim: usize,
    parameters: ParameterVector,
    seed: OrbitSeed,
    section: Section,
    groups: BTreeMap<String, String>,
    laws: Arc<dyn Evaluate>,
}

impl fmt::Debug for ModelDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelDefinition")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("parameters", &self.parameters)
            .field("section", &self.section)
            .finish()
    }
}

impl ModelDefinition {
    pub fn new<L: RateLaws>(
        name: impl Into<String>,
        dim: usize,
        laws: L,
        parameters: ParameterVector,
        seed: OrbitSeed,
        section: Section,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Precondition(format!(
                "oscillator models need dimension >= 2, got {dim}"
            )));
        }
        if seed.state.len() != dim {
            return Err(Error::Dimension {
                what: "orbit seed",
                expected: dim,
                actual: seed.state.len(),
            });
        }
        if section.index >= dim {
            return Err(Error::Precondition(format!(
                "section index {} out of range for dimension {dim}",
                section.index
            )));
        }
        Ok(Self {
            name: name.into(),
            description: String::new(),
            dim,
            parameters,
            seed,
            section,
            groups: BTreeMap::new(),
            laws: Arc::new(laws),
        })
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    /// Attaches free-form group labels to parameters (e.g. loop membership).
    pub fn with_groups<'a>(mut self, groups: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        self.groups = groups
            .into_iter()
            .map(|(p, g)| (p.to_string(), g.to_string()))
            .collect();
        self
    }

    pub fn with_section(mut self, section: Section) -> Self {
        self.section = section;
        self
    }

    pub fn with_seed(mut self, seed: OrbitSeed) -> Self {
        self.seed = seed;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn default_parameters(&self) -> &ParameterVector {
        &self.parameters
    }

    pub fn seed(&self) -> &OrbitSeed {
        &self.seed
    }

    pub fn section(&self) -> Section {
        self.section
    }

    pub fn group_of(&self, parameter: &str) -> Option<&str> {
        self.groups.get(parameter).map(String::as_str)
    }

    /// Checks that `params` has exactly this model's parameter names.
    pub fn check_parameters(&self, params: &ParameterVector) -> Result<()> {
        if params.names() != self.parameters.names() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.parameters.len(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    /// Applies named overrides to the default parameters.
    pub fn parameters_with<'a>(
        &self,
        overrides: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<ParameterVector> {
        let mut p = self.parameters.clone();
        for (name, value) in overrides {
            p.set(name, value).map_err(|e| match e {
                Error::UnknownParameter { name, .. } => Error::UnknownParameter {
                    model: self.name.clone(),
                    name,
                },
                other => other,
            })?;
        }
        Ok(p)
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                what: "state",
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_finite(&self, field: &'static str, values: &[f64]) -> Result<()> {
        match values.iter().position(|v| !v.is_finite()) {
            Some(component) => Err(Error::ModelDomain {
                model: self.name.clone(),
                field,
                component,
            }),
            None => Ok(()),
        }
    }

    /// `f(x, p)` with dimension and finiteness checks.
    pub fn eval_f(&self, x: &[f64], params: &ParameterVector) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_parameters(params)?;
        let mut out = vec![0.0; self.dim];
        self.laws.f(x, params.values(), &mut out);
        self.check_finite("f", &out)?;
        Ok(DVector::from_vec(out))
    }

    /// `g(x, p)` with dimension and finiteness checks.
    pub fn eval_input_field(&self, x: &[f64], params: &ParameterVector) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_parameters(params)?;
        let mut out = vec![0.0; self.dim];
        self.laws.g(x, params.values(), &mut out);
        self.check_finite("g", &out)?;
        Ok(DVector::from_vec(out))
    }

    /// `h(x, p)`.
    pub fn eval_output(&self, x: &[f64], params: &ParameterVector) -> Result<f64> {
        self.check_state(x)?;
        self.check_parameters(params)?;
        let y = self.laws.h(x, params.values());
        self.check_finite("h", &[y])?;
        Ok(y)
    }

    /// Unchecked `f` for integrator inner loops.
    #[inline]
    pub fn f_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.laws.f(x, p, out)
    }

    /// Unchecked `g` for integrator inner loops.
    #[inline]
    pub fn g_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.laws.g(x, p, out)
    }

    /// `A = df/dx` at `(x, p)`, written column by column into `jac`
    /// (row-major `n x n` slice: `jac[i * n + j] = df_i/dx_j`).
    pub fn jacobian_into(&self, x: &[f64], p: &[f64], jac: &mut [f64]) {
        let n = self.dim;
        let mut xd: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
        let pd: Vec<Dual<f64>> = p.iter().map(|&v| Dual::constant(v)).collect();
        let mut out = vec![Dual::constant(0.0); n];
        for j in 0..n {
            xd[j].eps = 1.0;
            self.laws.f_dual(&xd, &pd, &mut out);
            xd[j].eps = 0.0;
            for i in 0..n {
                jac[i * n + j] = out[i].eps;
            }
        }
    }

    pub fn jacobian(&self, x: &[f64], p: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut buf = vec![0.0; n * n];
        self.jacobian_into(x, p, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// `df/dp_k` at `(x, p)`.
    pub fn parameter_derivative_into(&self, x: &[f64], p: &[f64], k: usize, out: &mut [f64]) {
        let xd: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
        let mut pd: Vec<Dual<f64>> = p.iter().map(|&v| Dual::constant(v)).collect();
        pd[k].eps = 1.0;
        let mut res = vec![Dual::constant(0.0); self.dim];
        self.laws.f_dual(&xd, &pd, &mut res);
        for (o, r) in out.iter_mut().zip(&res) {
            *o = r.eps;
        }
    }

    /// All first and mixed second derivatives with respect to state and
    /// parameter `k` at `(x, p)`.
    pub fn derivatives(&self, x: &[f64], params: &ParameterVector, k: usize) -> Result<DerivativeBundle> {
        self.check_state(x)?;
        self.check_parameters(params)?;
        if k >= params.len() {
            return Err(Error::Precondition(format!(
                "parameter index {k} out of range (model has {})",
                params.len()
            )));
        }
        let n = self.dim;
        let p = params.values();

        let a = self.jacobian(x, p);
        let mut b = vec![0.0; n];
        self.parameter_derivative_into(x, p, k, &mut b);

        // second derivatives: outer tangent along x_j, inner along x_l or p_k
        let hyper_const = |v: f64| HyperDual::constant(Dual::constant(v));
        let mut xh: Vec<HyperDual> = x.iter().map(|&v| hyper_const(v)).collect();
        let mut ph: Vec<HyperDual> = p.iter().map(|&v| hyper_const(v)).collect();
        let mut out = vec![hyper_const(0.0); n];
        let mut h_xx = vec![DMatrix::zeros(n, n); n];
        let mut h_xp = DMatrix::zeros(n, n);
        for j in 0..n {
            xh[j].eps = Dual::constant(1.0);
            for l in j..n {
                xh[l].re.eps = 1.0;
                self.laws.f_hyper(&xh, &ph, &mut out);
                xh[l].re.eps = 0.0;
                for i in 0..n {
                    let v = out[i].eps.eps;
                    h_xx[i][(j, l)] = v;
                    h_xx[i][(l, j)] = v;
                }
            }
            ph[k].re.eps = 1.0;
            self.laws.f_hyper(&xh, &ph, &mut out);
            ph[k].re.eps = 0.0;
            for i in 0..n {
                h_xp[(i, j)] = out[i].eps.eps;
            }
            xh[j].eps = Dual::constant(0.0);
        }

        let mut xd: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
        let mut pd: Vec<Dual<f64>> = p.iter().map(|&v| Dual::constant(v)).collect();
        let mut gout = vec![Dual::constant(0.0); n];
        let mut g_x = DMatrix::zeros(n, n);
        for j in 0..n {
            xd[j].eps = 1.0;
            self.laws.g_dual(&xd, &pd, &mut gout);
            xd[j].eps = 0.0;
            for i in 0..n {
                g_x[(i, j)] = gout[i].eps;
            }
        }
        pd[k].eps = 1.0;
        self.laws.g_dual(&xd, &pd, &mut gout);
        let g_p = DVector::from_iterator(n, gout.iter().map(|v| v.eps));

        let bundle = DerivativeBundle {
            a,
            b: DVector::from_vec(b),
            h_xx,
            h_xp,
            g_x,
            g_p,
        };
        bundle.check_finite(&self.name)?;
        Ok(bundle)
    }
}

/// First and mixed second derivatives of `f` and first derivatives of `g`
/// at one point, with respect to the state and one parameter `p_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    /// `df/dx`
    pub a: DMatrix<f64>,
    /// `df/dp_k`
    pub b: DVector<f64>,
    /// `h_xx[i][(j, l)] = d2 f_i / dx_j dx_l`
    pub h_xx: Vec<DMatrix<f64>>,
    /// `h_xp[(i, j)] = d2 f_i / dx_j dp_k`
    pub h_xp: DMatrix<f64>,
    /// `dg/dx`
    pub g_x: DMatrix<f64>,
    /// `dg/dp_k`
    pub g_p: DVector<f64>,
}

impl DerivativeBundle {
    fn check_finite(&self, model: &str) -> Result<()> {
        let blocks: [(&'static str, &[f64]); 5] = [
            ("df/dx", self.a.as_slice()),
            ("df/dp", self.b.as_slice()),
            ("d2f/dxdp", self.h_xp.as_slice()),
            ("dg/dx", self.g_x.as_slice()),
            ("dg/dp", self.g_p.as_slice()),
        ];
        let hxx = self.h_xx.iter().map(|m| ("d2f/dx2", m.as_slice()));
        for (field, values) in blocks.into_iter().chain(hxx) {
            if let Some(component) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::ModelDomain {
                    model: model.to_string(),
                    field,
                    component,
                });
            }
        }
        Ok(())
    }

    /// Directional second derivative `sum_l H_xx[i][(j, l)] z_l`.
    pub fn contract_hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.a.nrows();
        DMatrix::from_fn(n, n, |i, j| (0..n).map(|l| self.h_xx[i][(j, l)] * z[l]).sum())
    }
}
