//! Time integration of the nonlinear kinetic equation with recorded
//! diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::grid::Density;
use super::scheme::{PhaseField, Stepper};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::model::{MeanVoltage, WeightParams};

/// How the mean voltage entering the drift is obtained at each step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// `j = mean_voltage(f)` recomputed before every step.
    #[default]
    SelfConsistent,
    /// `j` held fixed: the linear equation `∂t f = Q[j] f`.
    Frozen(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub t_final: f64,
    pub dt: f64,
    /// Steps between recorded diagnostics. The initial and final states are
    /// always recorded.
    pub stride: usize,
    /// Abort once the outer ring of cells holds more than this mass fraction.
    pub boundary_tol: f64,
    pub coupling: Coupling,
    pub weight: WeightParams,
}

impl SolveOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            stride: 100,
            boundary_tol: 1e-8,
            coupling: Coupling::SelfConsistent,
            weight: WeightParams::default(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_boundary_tol(mut self, tol: f64) -> Self {
        self.boundary_tol = tol;
        self
    }

    pub fn with_weight(mut self, weight: WeightParams) -> Self {
        self.weight = weight;
        self
    }

    /// Number of steps: `t_final / dt` when that is an integer to rounding,
    /// otherwise rounded up with a shortened last step.
    pub fn steps(&self) -> usize {
        let r = self.t_final / self.dt;
        let k = r.round();
        if (r - k).abs() <= 1e-9 * r.max(1.0) {
            k as usize
        } else {
            r.ceil() as usize
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParams(format!("T = {} must be >= 0", self.t_final)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt = {} must be > 0", self.dt)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParams("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Recorded diagnostics of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub records: Vec<DiagnosticsRecord>,
}

pub const SERIES_HEADER: &str =
    "t,mean_v,mean_x,var_v,var_x,j_emp,mass_defect,min_f,l1M,entropy,fisher_v,boundary_mass";

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&DiagnosticsRecord> {
        self.records.last()
    }

    /// Delimited text with [`SERIES_HEADER`]. The mass defect is relative to 1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SERIES_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{:e},{:e},{},{},{},{:e}",
                r.t,
                r.j,
                r.mean_x,
                r.var_v,
                r.var_x,
                r.j,
                r.mass - 1.0,
                r.min_f,
                r.l1_big_m,
                r.entropy,
                r.fisher_v,
                r.boundary_mass
            )?;
        }
        Ok(())
    }
}

/// Integrates from `f0` to `t_final`, recording diagnostics every `stride`
/// steps.
///
/// `f0` is rescaled to unit mass first; a warning is logged when its mass was
/// off by more than `1e-6`.
pub fn solve(f0: Density, field: &dyn PhaseField, opts: &SolveOptions) -> Result<(Density, TimeSeries)> {
    solve_with(f0, field, opts, |_, _| {})
}

/// [`solve`] with a callback invoked on every recorded state.
pub fn solve_with(
    mut f: Density,
    field: &dyn PhaseField,
    opts: &SolveOptions,
    mut on_record: impl FnMut(&Density, &DiagnosticsRecord),
) -> Result<(Density, TimeSeries)> {
    opts.validate()?;
    let m0 = f.mass();
    if (m0 - 1.0).abs() > 1e-6 {
        log::warn!("initial density has mass {m0}; renormalizing");
    }
    f.normalize()?;

    let mut stepper = Stepper::new(*f.grid(), field);
    let steps = opts.steps();
    let t0 = f.time;
    let mut series = TimeSeries::default();
    let mut record = |f: &Density, series: &mut TimeSeries| -> Result<()> {
        let r = DiagnosticsRecord::of(f, &opts.weight)?;
        if r.boundary_mass > opts.boundary_tol {
            return Err(Error::BoundaryMass {
                fraction: r.boundary_mass,
                tol: opts.boundary_tol,
                t: r.t,
            });
        }
        on_record(f, &r);
        series.records.push(r);
        Ok(())
    };
    record(&f, &mut series)?;
    for k in 0..steps {
        let j = match opts.coupling {
            Coupling::SelfConsistent => f.mean_voltage()?,
            Coupling::Frozen(j) => j,
        };
        let target = t0 + opts.t_final.min((k + 1) as f64 * opts.dt);
        let h = if k + 1 == steps {
            (target - f.time).min(opts.dt)
        } else {
            opts.dt
        };
        if h > 0.0 {
            stepper.step(&mut f, h, j)?;
        }
        if k + 1 == steps {
            f.time = t0 + opts.t_final;
        }
        if (k + 1) % opts.stride == 0 || k + 1 == steps {
            record(&f, &mut series)?;
        }
    }
    Ok((f, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Preset};
    use crate::pde::grid::Grid2D;
    use crate::pde::scheme::Stencil;
    use approx::assert_relative_eq;

    fn setup(eps: f64) -> (Grid2D, ModelParams, f64) {
        let g = Grid2D::new(-4.0, 4.0, -3.0, 3.5, 32, 40).unwrap();
        let p = Preset::WeakCoupling.params().with_eps(eps);
        let dt = 0.5 * Stencil::new(g, &p).max_stable_dt(0.0);
        (g, p, dt)
    }

    #[test]
    fn exact_step_count_and_final_time() {
        let opts = SolveOptions::new(1.0, 0.1);
        assert_eq!(opts.steps(), 10);
        assert_eq!(SolveOptions::new(1.0, 0.3).steps(), 4);
        let (g, p, _) = setup(0.1);
        let f0 = Density::gaussian(g, [0.0, 0.0], [[0.2, 0.0], [0.0, 0.2]]).unwrap();
        let dt = 1e-3;
        let (f, s) = solve(f0, &p, &SolveOptions::new(0.0105, dt).with_stride(3)).unwrap();
        assert_eq!(f.time, 0.0105);
        // records at steps 0, 3, 6, 9 and the final 11th
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn moment_identity_holds_discretely() {
        // d/dt ∫ v f = ∫ (-B) f up to O(dt + Δ)
        let (g, p, dt) = setup(0.3);
        let f0 = Density::gaussian(g, [0.3, -0.3], [[0.2, 0.0], [0.0, 0.2]]).unwrap();
        let h = 50.0 * dt;
        // coarse-grid numerical diffusion reaches the boundary ring quickly
        let opts = SolveOptions::new(h, dt).with_boundary_tol(1e-6);
        let (f1, _) = solve(f0.clone(), &p, &opts).unwrap();
        let lhs = (f1.mean_voltage().unwrap() - f0.mean_voltage().unwrap()) / h;
        let j = f0.mean_voltage().unwrap();
        let mid: Vec<f64> = f0.values().iter().zip(f1.values()).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut rhs = 0.0;
        for ix in 0..g.nx {
            for iv in 0..g.nv {
                let (x, v) = (g.x_center(ix), g.v_center(iv));
                rhs -= crate::model::drift_b(x, v, j, &p) * mid[g.index(ix, iv)] * g.cell_area();
            }
        }
        assert!((lhs - rhs).abs() < 0.1 * (1.0 + rhs.abs()), "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn boundary_mass_guard_fires() {
        let (g, p, dt) = setup(0.1);
        let f0 = Density::gaussian(g, [3.7, 0.0], [[0.3, 0.0], [0.0, 0.3]]).unwrap();
        let err = solve(f0, &p, &SolveOptions::new(10.0 * dt, dt)).unwrap_err();
        assert!(matches!(err, Error::BoundaryMass { .. }));
    }

    #[test]
    fn renormalizes_initial_mass() {
        let (g, p, dt) = setup(0.1);
        let f0 = Density::gaussian(g, [0.0, 0.0], [[0.2, 0.0], [0.0, 0.2]]).unwrap().scaled(3.0);
        let (f, s) = solve(f0, &p, &SolveOptions::new(2.0 * dt, dt)).unwrap();
        assert_relative_eq!(f.mass(), 1.0, epsilon = 1e-13);
        assert_relative_eq!(s.records[0].mass, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (g, p, dt) = setup(0.1);
        let f0 = Density::gaussian(g, [0.0, 0.0], [[0.2, 0.0], [0.0, 0.2]]).unwrap();
        let (_, s) = solve(f0, &p, &SolveOptions::new(4.0 * dt, dt).with_stride(2)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], SERIES_HEADER);
        assert_eq!(lines.len(), 1 + s.len());
        assert_eq!(lines[1].split(',').count(), 12);
    }
}
