//! Run configuration: file formats, `key=value` overrides and validation
//! against the model registry.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::entrainment::WaveShape;
use crate::error::{Error, Result};
use crate::model::builtin::ModelRegistry;
use crate::model::{ModelDefinition, ParameterVector};

/// Stimulus phases for direct PRC measurements: a count of equally
/// spaced phases or an explicit list.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseList {
    Count(usize),
    List(Vec<f64>),
}

impl Default for PhaseList {
    fn default() -> Self {
        PhaseList::Count(16)
    }
}

impl PhaseList {
    /// Parses `"16"` or `"0, 1.5, 3.1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Config("empty phase list".into()));
        }
        if !text.contains(',') {
            if let Ok(n) = text.parse::<usize>() {
                return PhaseList::Count(n).validated();
            }
        }
        let list = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("invalid phase `{}`", s.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        PhaseList::List(list).validated()
    }

    fn validated(self) -> Result<Self> {
        match &self {
            PhaseList::Count(0) => Err(Error::Config("phase count must be positive".into())),
            PhaseList::Count(n) if *n > 100_000 => Err(Error::Config(format!("phase count {n} is too large"))),
            PhaseList::List(v) if v.is_empty() => Err(Error::Config("empty phase list".into())),
            PhaseList::List(v) if v.iter().any(|p| !p.is_finite() || *p < 0.0 || *p >= 2.0 * PI) => {
                Err(Error::Config("phases must lie in [0, 2 pi)".into()))
            }
            _ => Ok(self),
        }
    }

    pub fn phases(&self) -> Vec<f64> {
        match self {
            PhaseList::Count(n) => crate::prc::uniform_phases(*n),
            PhaseList::List(v) => v.clone(),
        }
    }
}

impl fmt::Display for PhaseList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseList::Count(n) => write!(f, "{n}"),
            PhaseList::List(v) => {
                let parts: Vec<String> = v.iter().map(|p| p.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl Serialize for PhaseList {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PhaseList::Count(n) => s.serialize_u64(*n as u64),
            PhaseList::List(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PhaseList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            List(Vec<f64>),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Count(n) => usize::try_from(n)
                .map_err(|_| Error::Config(format!("phase count {n} is too large")))
                .and_then(|n| PhaseList::Count(n).validated()),
            Raw::List(v) => PhaseList::List(v).validated(),
            Raw::Text(t) => PhaseList::parse(&t),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrcMethod {
    #[default]
    Adjoint,
    Direct,
    Both,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrcConfig {
    /// Impulse amplitude for direct measurements.
    pub epsilon: f64,
    pub phases: PhaseList,
    pub method: PrcMethod,
    /// Read-out radius of direct measurements relative to the orbit
    /// diameter. The phase read-out error scales with it, so it must
    /// stay well below `epsilon` times the expected accuracy.
    pub convergence: f64,
}

impl Default for PrcConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            phases: PhaseList::default(),
            method: PrcMethod::Adjoint,
            convergence: 1e-8,
        }
    }
}

/// Everything that determines the numbers a run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: String,
    /// Overrides of the model's default parameters.
    pub params: BTreeMap<String, f64>,
    /// Parameters to analyze; empty means all.
    pub parameters: Vec<String>,
    pub grid: usize,
    /// Integration tolerance.
    pub tol: f64,
    /// Newton tolerance of the orbit solve.
    pub newton_tol: f64,
    /// Finite-difference step relative to `max(|p|, 1)`.
    pub fd_step: f64,
    pub relative: bool,
    pub check_fd: bool,
    pub prc: PrcConfig,
    pub input: WaveShape,
    pub epsilon: f64,
    /// `omega - omega_u`.
    pub detune: f64,
    /// Run the forced simulation as a check of the locking prediction.
    pub validate: bool,
    /// Horizon of that simulation in forcing periods.
    pub periods: usize,
    pub threshold: f64,
    /// Tags for parameters; defaults come from the model.
    pub groups: BTreeMap<String, String>,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "goodwin".into(),
            params: BTreeMap::new(),
            parameters: Vec::new(),
            grid: 256,
            tol: 1e-12,
            newton_tol: 1e-10,
            fd_step: 1e-4,
            relative: true,
            check_fd: false,
            prc: PrcConfig::default(),
            input: WaveShape::Sine,
            epsilon: 0.05,
            detune: 0.0,
            validate: false,
            periods: 200,
            threshold: 0.1,
            groups: BTreeMap::new(),
            format: OutputFormat::Csv,
        }
    }
}

/// One `--set key=value` item.
#[derive(Clone, Debug, PartialEq)]
pub struct SetOverride {
    /// Dotted path, e.g. `params.a` or `prc.method`.
    pub path: Vec<String>,
    pub value: Value,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "model",
    "params",
    "parameters",
    "grid",
    "tol",
    "newton_tol",
    "fd_step",
    "relative",
    "check_fd",
    "prc",
    "input",
    "epsilon",
    "detune",
    "validate",
    "periods",
    "threshold",
    "groups",
    "format",
];

/// Parses `key=value`. Values are read as JSON scalars or arrays where
/// possible and as plain strings otherwise. A bare key that is not a
/// configuration field names a model parameter.
pub fn parse_set_override(item: &str) -> Result<SetOverride> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{item}` has an empty key")));
    }
    let mut path: Vec<String> = key.split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override key `{key}` has an empty segment")));
    }
    if path.len() == 1 && !TOP_LEVEL_KEYS.contains(&path[0].as_str()) {
        path.insert(0, "params".into());
    }
    let value = match serde_json::from_str::<Value>(raw) {
        Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::Array(_))) => v,
        _ => Value::String(raw.to_string()),
    };
    Ok(SetOverride { path, value })
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` or `.toml` file (anything else is tried as TOML).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn apply(&mut self, ov: &SetOverride) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut value = ov.value.clone();
        if ov.path == ["input"] {
            if let Value::String(kind) = &value {
                value = serde_json::json!({ "kind": kind });
            }
        }
        if ov.path.first().map(String::as_str) == Some("parameters") {
            if let Value::String(list) = &value {
                value = if list == "all" {
                    Value::Array(vec![])
                } else {
                    Value::Array(list.split(',').map(|s| Value::String(s.trim().to_string())).collect())
                };
            }
        }
        let mut node = &mut tree;
        let (last, parents) = ov.path.split_last().expect("override path is non-empty");
        for seg in parents {
            node = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("`{}` is not a table", ov.path.join("."))))?
                .entry(seg.clone())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        node.as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a table", ov.path.join("."))))?
            .insert(last.clone(), value);
        *self = serde_json::from_value(tree)
            .map_err(|e| Error::Config(format!("override `{}`: {e}", ov.path.join("."))))?;
        Ok(())
    }

    /// Checks everything that can be checked without solving and returns
    /// the model and the resolved parameter vector.
    pub fn resolve(&self, registry: &ModelRegistry) -> Result<(ModelDefinition, ParameterVector)> {
        let model = registry.get(&self.model)?;
        let params = model.parameters_with(self.params.iter().map(|(k, v)| (k.as_str(), *v)))?;
        for name in self.parameters.iter().chain(self.groups.keys()) {
            if params.index_of(name).is_none() {
                return Err(Error::UnknownParameter {
                    model: self.model.clone(),
                    name: name.clone(),
                });
            }
        }
        let check = |ok: bool, what: String| if ok { Ok(()) } else { Err(Error::Config(what)) };
        check(
            self.grid >= 16 && self.grid % 2 == 0 && self.grid <= 1 << 16,
            format!("grid must be an even number between 16 and 65536 (got {})", self.grid),
        )?;
        check(
            (1e-13..=1e-3).contains(&self.tol),
            format!("tol must lie in [1e-13, 1e-3] (got {})", self.tol),
        )?;
        check(
            self.newton_tol > 0.0 && self.newton_tol < 1e-2,
            format!("newton_tol must lie in (0, 1e-2) (got {})", self.newton_tol),
        )?;
        check(
            self.fd_step > 0.0 && self.fd_step < 0.1,
            format!("fd_step must lie in (0, 0.1) (got {})", self.fd_step),
        )?;
        check(
            self.epsilon > 0.0 && self.epsilon.is_finite(),
            format!("epsilon must be positive (got {})", self.epsilon),
        )?;
        check(self.detune.is_finite(), "detune must be finite".into())?;
        check(
            self.prc.epsilon != 0.0 && self.prc.epsilon.is_finite(),
            format!("prc.epsilon must be nonzero (got {})", self.prc.epsilon),
        )?;
        check(
            self.prc.convergence > 0.0 && self.prc.convergence < 1e-2,
            format!("prc.convergence must lie in (0, 1e-2) (got {})", self.prc.convergence),
        )?;
        check(
            self.threshold >= 0.0 && self.threshold.is_finite(),
            format!("threshold must be non-negative (got {})", self.threshold),
        )?;
        check(
            self.periods >= 50 && self.periods <= 100_000,
            format!("periods must lie in [50, 100000] (got {})", self.periods),
        )?;
        // waveform parameters are validated by constructing it
        crate::entrainment::InputWaveform::new(self.input.clone(), 1.0)?;
        Ok((model, params))
    }

    /// Indices of the parameters to analyze, in model order.
    pub fn selected_parameters(&self, params: &ParameterVector) -> Vec<usize> {
        if self.parameters.is_empty() {
            (0..params.len()).collect()
        } else {
            (0..params.len())
                .filter(|&k| self.parameters.iter().any(|n| n == params.name(k)))
                .collect()
        }
    }

    pub fn group_of(&self, model: &ModelDefinition, name: &str) -> Option<String> {
        self.groups
            .get(name)
            .cloned()
            .or_else(|| model.group_of(name).map(str::to_string))
    }
}
