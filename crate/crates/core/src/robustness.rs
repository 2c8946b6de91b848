//! Scalar robustness measures built from sensitivity bundles, their
//! normalization across parameters, and rankings.

use serde::Serialize;

use crate::entrainment::LockingReport;
use crate::error::{Error, Result};
use crate::sensitivity::SensitivityBundle;
use crate::spectral::periodic_integral;

/// Measures for one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub k: usize,
    pub name: String,
    pub group: Option<String>,
    pub s_omega: f64,
    pub s_period: f64,
    /// `|S_omega|`
    pub r_omega: f64,
    /// `|S_T|`
    pub r_period: f64,
    /// L2 norm of `Z_q` over one cycle.
    pub r_q: f64,
    /// `|S_chi*|`, absent when there is no locking point.
    pub r_chi: Option<f64>,
    pub s_chi: Option<f64>,
    pub s_chi_omega: Option<f64>,
    pub s_chi_gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
    pub relative: bool,
}

/// `sqrt(int_0^{2 pi} z(theta)^2 d theta)` by the trapezoid rule.
pub fn l2_norm(samples: &[f64]) -> f64 {
    periodic_integral(&samples.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
}

/// Builds the per-parameter measures. Rows follow the bundle order.
/// `group` maps a parameter name to its tag.
pub fn measure(
    bundles: &[SensitivityBundle],
    locking: Option<&LockingReport>,
    group: impl Fn(&str) -> Option<String>,
) -> Result<RobustnessReport> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Precondition("no sensitivity bundles".into()))?;
    for b in bundles {
        if b.grid_size() != first.grid_size() {
            return Err(Error::Alignment(format!(
                "parameter `{}` uses a {}-point grid, `{}` a {}-point grid",
                b.name,
                b.grid_size(),
                first.name,
                first.grid_size()
            )));
        }
        if b.omega != first.omega || b.relative != first.relative {
            return Err(Error::Alignment(format!(
                "parameter `{}` was computed on a different orbit or scaling",
                b.name
            )));
        }
    }
    let rows = bundles
        .iter()
        .map(|b| {
            let lock = locking.and_then(|l| l.sensitivities.iter().find(|s| s.k == b.k));
            let s_period = b.s_period();
            RobustnessRow {
                k: b.k,
                name: b.name.clone(),
                group: group(&b.name),
                s_omega: b.s_omega,
                s_period,
                r_omega: b.s_omega.abs(),
                r_period: s_period.abs(),
                r_q: l2_norm(b.z_q.as_slice()),
                r_chi: lock.map(|s| s.s_chi.abs()),
                s_chi: lock.map(|s| s.s_chi),
                s_chi_omega: lock.map(|s| s.from_omega),
                s_chi_gamma: lock.map(|s| s.from_gamma),
            }
        })
        .collect();
    Ok(RobustnessReport {
        rows,
        relative: first.relative,
    })
}

/// Measures divided by their largest value across parameters; the
/// entrainment contributions share the scale of `S_chi*`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizedRow {
    pub k: usize,
    pub name: String,
    pub group: Option<String>,
    pub r_omega: f64,
    pub r_period: f64,
    pub r_q: f64,
    pub r_chi: Option<f64>,
    pub s_chi: Option<f64>,
    pub s_chi_omega: Option<f64>,
    pub s_chi_gamma: Option<f64>,
}

impl NormalizedRow {
    /// Frequency-dominant parameters lie below the diagonal of the
    /// `(R_q, R_omega)` scatter.
    pub fn period_dominant(&self) -> bool {
        period_dominant(self.r_omega, self.r_q)
    }
}

pub fn period_dominant(r_omega: f64, r_q: f64) -> bool {
    r_omega > r_q
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizedReport {
    pub rows: Vec<NormalizedRow>,
    pub relative: bool,
}

fn column_scale(name: &str, values: impl Iterator<Item = f64>) -> Result<f64> {
    let max = values.fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return Err(Error::DegenerateNormalization(format!(
            "column `{name}` has no nonzero finite entry"
        )));
    }
    Ok(max)
}

pub fn normalize(report: &RobustnessReport) -> Result<NormalizedReport> {
    let rows = &report.rows;
    let so = column_scale("R_omega", rows.iter().map(|r| r.r_omega))?;
    let st = column_scale("R_T", rows.iter().map(|r| r.r_period))?;
    let sq = column_scale("R_q", rows.iter().map(|r| r.r_q))?;
    let has_chi = rows.iter().all(|r| r.r_chi.is_some());
    let sc = if has_chi {
        Some(column_scale("R_chi", rows.iter().filter_map(|r| r.r_chi))?)
    } else {
        None
    };
    let scale = |v: Option<f64>| match (v, sc) {
        (Some(v), Some(s)) => Some(v / s),
        _ => None,
    };
    Ok(NormalizedReport {
        rows: rows
            .iter()
            .map(|r| NormalizedRow {
                k: r.k,
                name: r.name.clone(),
                group: r.group.clone(),
                r_omega: r.r_omega / so,
                r_period: r.r_period / st,
                r_q: r.r_q / sq,
                r_chi: scale(r.r_chi),
                s_chi: scale(r.s_chi),
                s_chi_omega: scale(r.s_chi_omega),
                s_chi_gamma: scale(r.s_chi_gamma),
            })
            .collect(),
        relative: report.relative,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranking {
    /// Row indices by decreasing normalized entrainment sensitivity,
    /// ties broken by parameter name.
    pub order: Vec<usize>,
    /// Prefix of `order` with value strictly above the threshold.
    pub retained: Vec<usize>,
    pub threshold: f64,
}

pub fn rank_and_partition(report: &NormalizedReport, threshold: f64) -> Result<Ranking> {
    let values: Vec<f64> = report
        .rows
        .iter()
        .map(|r| {
            r.r_chi
                .ok_or_else(|| Error::Precondition(format!("parameter `{}` has no entrainment sensitivity", r.name)))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| report.rows[a].name.cmp(&report.rows[b].name))
    });
    let retained = order.iter().copied().filter(|&i| values[i] > threshold).collect();
    Ok(Ranking {
        order,
        retained,
        threshold,
    })
}
