//! Entropy, partial Fisher information and the a-priori bound monitor.

use serde::{Deserialize, Serialize};

use crate::model::{MeanVoltage, WeightParams};
use crate::pde::grid::{compensated_sum, Density};
use crate::pde::norms::{l1_big_m_norm, l1m_norm, l2m_norm};

/// Cells with `f` below this value are skipped by [`fisher_v`].
pub const FISHER_FLOOR: f64 = 1e-30;

/// `∫ f ln f` with `0 ln 0 = 0`.
pub fn entropy(f: &Density) -> f64 {
    let s = compensated_sum(f.values().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()));
    s * f.grid().cell_area()
}

/// Partial Fisher information together with the number of vacuum cells skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherInfo {
    pub value: f64,
    pub skipped: usize,
}

/// `∫ |∂v f|² / f` with centred differences (one-sided at the `v` ends).
/// Cells with `f < floor` contribute nothing and are counted.
pub fn fisher_v_with_floor(f: &Density, floor: f64) -> FisherInfo {
    let g = f.grid();
    let (nv, dv) = (g.nv, g.dv());
    let vals = f.values();
    let mut skipped = 0usize;
    let mut terms = Vec::with_capacity(vals.len());
    for row in vals.chunks_exact(nv) {
        for iv in 0..nv {
            let c = row[iv];
            if c < floor {
                skipped += 1;
                continue;
            }
            let d = if iv == 0 {
                (row[1] - row[0]) / dv
            } else if iv + 1 == nv {
                (row[nv - 1] - row[nv - 2]) / dv
            } else {
                (row[iv + 1] - row[iv - 1]) / (2.0 * dv)
            };
            terms.push(d * d / c);
        }
    }
    FisherInfo {
        value: compensated_sum(terms) * g.cell_area(),
        skipped,
    }
}

pub fn fisher_v(f: &Density) -> f64 {
    fisher_v_with_floor(f, FISHER_FLOOR).value
}

/// Every functional recorded along a PDE run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    /// `mean_voltage(f)`, the coupling value of the next step.
    pub j: f64,
    pub mean_x: f64,
    pub var_v: f64,
    pub var_x: f64,
    pub min_f: f64,
    pub l1_big_m: f64,
    pub l1m: f64,
    pub l2m: f64,
    pub entropy: f64,
    pub fisher_v: f64,
    pub fisher_skipped: usize,
    pub boundary_mass: f64,
}

impl DiagnosticsRecord {
    pub fn of(f: &Density, w: &WeightParams) -> crate::error::Result<Self> {
        let m = f.moments()?;
        let fi = fisher_v_with_floor(f, FISHER_FLOOR);
        Ok(Self {
            t: f.time,
            mass: m.mass,
            j: f.mean_voltage()?,
            mean_x: m.mean_x,
            var_v: m.var_v,
            var_x: m.var_x,
            min_f: f.min_value(),
            l1_big_m: l1_big_m_norm(f),
            l1m: l1m_norm(f, w),
            l2m: l2m_norm(f, w),
            entropy: entropy(f),
            fisher_v: fi.value,
            fisher_skipped: fi.skipped,
            boundary_mass: f.boundary_mass_fraction(),
        })
    }
}

/// Thresholds for [`monitor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorBounds {
    /// Allowed overshoot of `‖f‖_{L¹(M)}` above `max(plateau, initial)`.
    pub l1_overshoot: f64,
    /// Tail fraction of the records that defines the plateau.
    pub plateau_fraction: f64,
    /// Allowed relative spread of `‖f‖_{L¹(M)}` over the plateau.
    pub plateau_spread: f64,
    /// Allowed ratio of late to early Fisher accumulation rate.
    pub fisher_rate_ratio: f64,
}

impl Default for MonitorBounds {
    fn default() -> Self {
        Self {
            l1_overshoot: 0.05,
            plateau_fraction: 0.25,
            plateau_spread: 0.05,
            fisher_rate_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Time of the first violating record, when the check is pointwise.
    pub first_violation: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub checks: Vec<Check>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Entropy lower bound `-2π/e - ‖f‖_{L¹(M)}`.
pub fn entropy_lower_bound(l1_big_m: f64) -> f64 {
    -2.0 * std::f64::consts::PI / std::f64::consts::E - l1_big_m
}

/// Checks a run against the structural a-priori estimates:
///
/// * `l1M`: `‖f_t‖_{L¹(M)}` stays within the overshoot of `max(plateau, initial)`
///   and is flat over the tail;
/// * `mean-voltage`: `|j| ≤ √(2 ‖f_t‖_{L¹(M)})` at every record;
/// * `entropy`: finite and above [`entropy_lower_bound`];
/// * `fisher`: the trapezoidal integral of `I_v` grows at most linearly.
///
/// # Panics
///
/// If fewer than two records are given.
pub fn monitor(series: &[DiagnosticsRecord], bounds: &MonitorBounds) -> MonitorReport {
    assert!(series.len() >= 2, "monitor needs at least two records");
    let n = series.len();
    let mut checks = Vec::with_capacity(4);

    let tail_start = ((1.0 - bounds.plateau_fraction) * n as f64).floor() as usize;
    let tail = &series[tail_start.min(n - 1)..];
    let plateau = tail.iter().map(|r| r.l1_big_m).fold(f64::NEG_INFINITY, f64::max);
    let plateau_min = tail.iter().map(|r| r.l1_big_m).fold(f64::INFINITY, f64::min);
    let cap = plateau.max(series[0].l1_big_m) * (1.0 + bounds.l1_overshoot);
    let over = series.iter().find(|r| !(r.l1_big_m <= cap));
    let spread = (plateau - plateau_min) / plateau;
    checks.push(Check {
        name: "l1M".into(),
        passed: over.is_none() && spread <= bounds.plateau_spread,
        first_violation: over.map(|r| r.t),
        detail: format!("plateau {plateau:.6}, cap {cap:.6}, tail spread {spread:.3e}"),
    });

    let bad_j = series.iter().find(|r| !(r.j.abs() <= (2.0 * r.l1_big_m).sqrt()));
    checks.push(Check {
        name: "mean-voltage".into(),
        passed: bad_j.is_none(),
        first_violation: bad_j.map(|r| r.t),
        detail: match bad_j {
            Some(r) => format!("|j| = {} > sqrt(2 l1M) = {}", r.j.abs(), (2.0 * r.l1_big_m).sqrt()),
            None => "ok".into(),
        },
    });

    let bad_h = series
        .iter()
        .find(|r| !r.entropy.is_finite() || r.entropy < entropy_lower_bound(r.l1_big_m));
    let h_max = series.iter().map(|r| r.entropy).fold(f64::NEG_INFINITY, f64::max);
    let h_min = series.iter().map(|r| r.entropy).fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "entropy".into(),
        passed: bad_h.is_none(),
        first_violation: bad_h.map(|r| r.t),
        detail: format!("range [{h_min:.6}, {h_max:.6}]"),
    });

    // cumulative trapezoid of I_v
    let mut cum = vec![0.0; n];
    for k in 1..n {
        let dt = series[k].t - series[k - 1].t;
        cum[k] = cum[k - 1] + 0.5 * dt * (series[k].fisher_v + series[k - 1].fisher_v);
    }
    let (t0, t1) = (series[0].t, series[n - 1].t);
    let tm = 0.5 * (t0 + t1);
    let mid = series.iter().position(|r| r.t >= tm).unwrap_or(n - 1);
    let rate = |a: usize, b: usize| {
        let span = series[b].t - series[a].t;
        if span > 0.0 {
            (cum[b] - cum[a]) / span
        } else {
            0.0
        }
    };
    let (early, late) = (rate(0, mid), rate(mid, n - 1));
    let times: Vec<f64> = series.iter().map(|r| r.t).collect();
    let slope = if t1 > t0 {
        crate::linalg::linear_fit(&times, &cum).1
    } else {
        0.0
    };
    let fisher_ok = slope.is_finite()
        && cum.iter().all(|c| c.is_finite())
        && late <= bounds.fisher_rate_ratio * early + 1e-12 * (1.0 + early.abs());
    checks.push(Check {
        name: "fisher".into(),
        passed: fisher_ok,
        first_violation: None,
        detail: format!("fitted slope {slope:.6e}, early rate {early:.6e}, late rate {late:.6e}"),
    });

    MonitorReport { checks }
}
