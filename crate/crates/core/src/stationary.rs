//! Stationary solutions of the nonlinear kinetic equation.
//!
//! For frozen `j` the operator `Q[j]` is linear with a one-dimensional
//! nonnegative kernel; the nonlinearity only enters through the scalar fixed
//! point `j = 𝒥(G_j)`. [`find_stationary`] iterates on that scalar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeanVoltage, ModelParams, WeightParams};
use crate::pde::grid::{compensated_sum, Density, Grid2D};
use crate::pde::norms::l2m_distance;
use crate::pde::scheme::{PhaseField, Stencil};
use crate::pde::solve::{solve, Coupling, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    /// Target for `|𝒥(G) - j|`.
    pub tol: f64,
    /// Target for `‖Q[j] G‖₁ / ‖G‖₁`.
    pub residual_tol: f64,
    /// Outer fixed-point iterations per seed.
    pub max_iter: usize,
    /// `θ` in `j ← (1 - θ) j + θ 𝒥(G_j)`.
    pub damping: f64,
    /// `μ` in the inverse iteration `(Q - μ I) g_{k+1} = g_k`.
    pub shift: f64,
    pub inverse_max_iter: usize,
    /// Solutions closer than this in `L¹` are the same solution.
    pub dedup_l1: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            residual_tol: 1e-8,
            max_iter: 400,
            damping: 0.5,
            shift: 1e-10,
            inverse_max_iter: 30,
            dedup_l1: 1e-3,
        }
    }
}

/// Discrete `‖Q[j] g‖₁`.
pub fn residual_l1(stencil: &Stencil, g: &[f64], j: f64) -> f64 {
    let mut out = vec![0.0; g.len()];
    stencil.apply(g, &mut out, j);
    compensated_sum(out.iter().map(|v| v.abs())) * stencil.grid().cell_area()
}

fn l1_change(a: &[f64], b: &[f64], area: f64) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs())) * area
}

fn finish_kernel(grid: Grid2D, mut g: Vec<f64>) -> Result<Density> {
    let area = grid.cell_area();
    let mass = compensated_sum(g.iter().copied()) * area;
    if !(mass.abs() > 0.0) || !mass.is_finite() {
        return Err(Error::DegenerateDensity { mass });
    }
    g.iter_mut().for_each(|v| *v /= mass);
    let max = g.iter().copied().fold(0.0, f64::max);
    if let Some((k, &v)) = g.iter().enumerate().find(|(_, v)| **v < -1e-12 * max) {
        return Err(Error::NegativeDensity {
            value: v,
            ix: k / grid.nv,
            iv: k % grid.nv,
        });
    }
    g.iter_mut().for_each(|v| *v = v.max(0.0));
    Density::new(grid, g, 0.0)
}

/// Inverse iteration for the kernel of `Q[j]`; `None` if it stalls.
fn inverse_iteration(stencil: &Stencil, j: f64, opts: &StationaryOptions) -> Result<Option<Density>> {
    let grid = *stencil.grid();
    let mut a = stencil.assemble(j);
    a.shift_diagonal(-opts.shift);
    let lu = match a.factorize() {
        Ok(lu) => lu,
        Err(e) => {
            log::warn!("stationary factorization failed at j = {j}: {e}");
            return Ok(None);
        }
    };
    let area = grid.cell_area();
    let mut g = vec![1.0 / (grid.len() as f64 * area); grid.len()];
    for _ in 0..opts.inverse_max_iter {
        let mut next = lu.solve(&g);
        let mass = compensated_sum(next.iter().copied()) * area;
        if !(mass.abs() > 0.0) || !mass.is_finite() {
            return Ok(None);
        }
        next.iter_mut().for_each(|v| *v /= mass);
        let change = l1_change(&next, &g, area);
        g = next;
        if change < 1e-13 {
            break;
        }
    }
    let d = finish_kernel(grid, g)?;
    if residual_l1(stencil, d.values(), j) <= opts.residual_tol {
        Ok(Some(d))
    } else {
        Ok(None)
    }
}

/// Relaxes `f0` under the frozen-`j` dynamics until `‖Q[j] f‖₁` drops below
/// `residual_tol` or `t_max` is reached.
pub fn relax_to_stationary(
    f0: Density,
    field: &dyn PhaseField,
    j: f64,
    residual_tol: f64,
    t_max: f64,
) -> Result<Density> {
    let stencil = Stencil::new(*f0.grid(), field);
    let dt = stencil.max_stable_dt(j);
    let chunk = 200.0 * dt;
    let mut f = f0;
    let mut history = Vec::new();
    let mut t = 0.0;
    while t < t_max {
        let opts = SolveOptions::new(chunk, dt)
            .with_stride(usize::MAX)
            .with_coupling(Coupling::Frozen(j))
            .with_boundary_tol(f64::INFINITY);
        f = solve(f, field, &opts)?.0;
        t += chunk;
        let r = residual_l1(&stencil, f.values(), j);
        history.push(r);
        if r <= residual_tol {
            return Ok(f);
        }
    }
    Err(Error::NonConvergence {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Unit-mass nonnegative kernel of the discrete `Q[j]`.
///
/// Uses inverse iteration with a small negative shift; `Q - μ I` is then
/// strictly column diagonally dominant, so elimination without pivoting is
/// stable. Falls back to long-time integration if the iteration stalls.
pub fn solve_linear_stationary(
    j: f64,
    grid: &Grid2D,
    field: &dyn PhaseField,
    opts: &StationaryOptions,
) -> Result<Density> {
    let stencil = Stencil::new(*grid, field);
    if let Some(g) = inverse_iteration(&stencil, j, opts)? {
        return Ok(g);
    }
    log::warn!("inverse iteration stalled at j = {j}; falling back to time integration");
    let f0 = Density::gaussian(*grid, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])?;
    relax_to_stationary(f0, field, j, opts.residual_tol, 1e4)
}

/// A converged stationary density with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    pub g: Density,
    /// The fixed point `j`; `|𝒥(g) - j| = fixed_point_gap`.
    pub j: f64,
    /// `‖Q[𝒥(g)] g‖₁`.
    pub residual_l1: f64,
    pub fixed_point_gap: f64,
    pub iterations: usize,
    pub seed_j: f64,
    pub j_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryMeta {
    pub j: f64,
    pub residual_l1: f64,
    pub fixed_point_gap: f64,
    pub iterations: usize,
    pub seed_j: f64,
    pub j_history: Vec<f64>,
}

impl StationaryResult {
    pub fn meta(&self) -> StationaryMeta {
        StationaryMeta {
            j: self.j,
            residual_l1: self.residual_l1,
            fixed_point_gap: self.fixed_point_gap,
            iterations: self.iterations,
            seed_j: self.seed_j,
            j_history: self.j_history.clone(),
        }
    }

    /// Writes `<stem>.density` and the JSON sidecar `<stem>.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let dp = dir.as_ref().join(format!("{stem}.density"));
        let mp = dir.as_ref().join(format!("{stem}.json"));
        self.g.save(&dp)?;
        let json = serde_json::to_string_pretty(&self.meta()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(&mp, json)?;
        Ok((dp, mp))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let g = Density::load(dir.as_ref().join(format!("{stem}.density")))?;
        let text = std::fs::read_to_string(dir.as_ref().join(format!("{stem}.json")))?;
        let m: StationaryMeta = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Self {
            g,
            j: m.j,
            residual_l1: m.residual_l1,
            fixed_point_gap: m.fixed_point_gap,
            iterations: m.iterations,
            seed_j: m.seed_j,
            j_history: m.j_history,
        })
    }
}

/// Damped fixed-point iteration on `j` from one seed, with a bisection
/// fallback once the damped iteration stops making progress.
pub fn solve_fixed_point(
    seed_j: f64,
    grid: &Grid2D,
    field: &dyn PhaseField,
    opts: &StationaryOptions,
) -> Result<StationaryResult> {
    let eval = |j: f64| -> Result<(Density, f64)> {
        let g = solve_linear_stationary(j, grid, field, opts)?;
        let m = g.mean_voltage()?;
        Ok((g, m))
    };
    let mut history = vec![seed_j];
    let mut j = seed_j;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut iterations = 0usize;
    let mut done: Option<(Density, f64)> = None;
    while iterations < opts.max_iter {
        let (g, m) = eval(j)?;
        iterations += 1;
        let r = (m - j).abs();
        if r <= opts.tol {
            done = Some((g, j));
            break;
        }
        if r < 0.9 * best {
            best = r;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= 10 {
            break;
        }
        j = (1.0 - opts.damping) * j + opts.damping * m;
        history.push(j);
    }
    if done.is_none() && iterations < opts.max_iter {
        // bracket a sign change of r(j) = 𝒥(G_j) - j around the current j
        let r = |j: f64| eval(j).map(|(_, m)| m - j);
        let mut h = 0.1;
        let (mut lo, mut hi) = (j - h, j + h);
        let (mut rlo, mut rhi) = (r(lo)?, r(hi)?);
        iterations += 2;
        while rlo * rhi > 0.0 && iterations < opts.max_iter {
            h *= 2.0;
            lo = j - h;
            hi = j + h;
            rlo = r(lo)?;
            rhi = r(hi)?;
            iterations += 2;
        }
        while rlo * rhi <= 0.0 && iterations < opts.max_iter {
            let mid = 0.5 * (lo + hi);
            let (g, m) = eval(mid)?;
            iterations += 1;
            history.push(mid);
            let rm = m - mid;
            if rm.abs() <= opts.tol || hi - lo < 1e-14 {
                done = Some((g, mid));
                break;
            }
            if rm * rlo > 0.0 {
                lo = mid;
                rlo = rm;
            } else {
                hi = mid;
            }
        }
    }
    let Some((g, j)) = done else {
        let gaps: Vec<f64> = history.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        return Err(Error::NonConvergence {
            iterations,
            residual: gaps.last().copied().unwrap_or(f64::NAN),
            history,
        });
    };
    let jg = g.mean_voltage()?;
    let stencil = Stencil::new(*grid, field);
    Ok(StationaryResult {
        residual_l1: residual_l1(&stencil, g.values(), jg),
        fixed_point_gap: (jg - j).abs(),
        g,
        j,
        iterations,
        seed_j,
        j_history: history,
    })
}

/// All distinct solutions reached from `seeds`, sorted by `j`, together
/// with the seeds that failed.
#[derive(Debug, Clone)]
pub struct StationarySearch {
    pub solutions: Vec<StationaryResult>,
    pub failures: Vec<(f64, String)>,
}

pub fn find_stationary(
    seeds: &[f64],
    grid: &Grid2D,
    field: &(dyn PhaseField + Sync),
    opts: &StationaryOptions,
) -> StationarySearch {
    use rayon::prelude::*;
    let outcomes: Vec<(f64, Result<StationaryResult>)> = seeds
        .par_iter()
        .map(|&s| (s, solve_fixed_point(s, grid, field, opts)))
        .collect();
    let mut solutions: Vec<StationaryResult> = Vec::new();
    let mut failures = Vec::new();
    for (s, o) in outcomes {
        match o {
            Ok(r) => {
                let dup = solutions
                    .iter()
                    .any(|e| e.g.l1_distance(&r.g).map(|d| d < opts.dedup_l1).unwrap_or(false));
                if !dup {
                    solutions.push(r);
                }
            }
            Err(e) => failures.push((s, e.to_string())),
        }
    }
    solutions.sort_by(|a, b| a.j.total_cmp(&b.j));
    StationarySearch { solutions, failures }
}

/// Default seeds: stable deterministic equilibrium voltages plus `{-1, 0, 1}`.
pub fn default_seeds(p: &ModelParams) -> Vec<f64> {
    let mut s: Vec<f64> = crate::model::deterministic_fixed_points(&p.with_eps(0.0))
        .into_iter()
        .filter(|f| f.stability.is_stable())
        .map(|f| f.v)
        .collect();
    s.extend([-1.0, 0.0, 1.0]);
    s
}

/// Two-point estimate of `d𝒥(G_j)/dj`.
pub fn fixed_point_map_slope(
    j: f64,
    h: f64,
    grid: &Grid2D,
    field: &dyn PhaseField,
    opts: &StationaryOptions,
) -> Result<f64> {
    let a = solve_linear_stationary(j - h, grid, field, opts)?.mean_voltage()?;
    let b = solve_linear_stationary(j + h, grid, field, opts)?.mean_voltage()?;
    Ok((b - a) / (2.0 * h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityRow {
    pub eps: f64,
    pub distance: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityScan {
    /// Sorted by increasing `ε`.
    pub rows: Vec<ProximityRow>,
    /// Least-squares line through `(ε, distance)`: `[intercept, slope]`.
    pub linear: [f64; 2],
    /// Least-squares quadratic: `[c0, c1, c2]`.
    pub quadratic: [f64; 3],
}

impl ProximityScan {
    /// Whether the distance shrinks along decreasing `ε`, allowing `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[0].distance <= w[1].distance + slack)
    }
}

/// `‖G_ε - G_0‖_{L²(m)}` along `eps_list`, all on one grid.
pub fn epsilon_proximity_scan(
    eps_list: &[f64],
    p: &ModelParams,
    grid: &Grid2D,
    w: &WeightParams,
    opts: &StationaryOptions,
) -> Result<ProximityScan> {
    use rayon::prelude::*;
    let p0 = p.with_eps(0.0);
    let g0 = solve_linear_stationary(0.0, grid, &p0, opts)?;
    let j0 = g0.mean_voltage()?;
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(f64::total_cmp);
    let rows: Vec<ProximityRow> = eps
        .par_iter()
        .map(|&e| {
            if e == 0.0 {
                return Ok(ProximityRow {
                    eps: 0.0,
                    distance: 0.0,
                    j: j0,
                });
            }
            let r = solve_fixed_point(j0, grid, &p.with_eps(e), opts)?;
            Ok(ProximityRow {
                eps: e,
                distance: l2m_distance(&r.g, &g0, w)?,
                j: r.j,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.distance).collect();
    let (linear, quadratic) = if rows.len() >= 3 {
        let (c, s) = crate::linalg::linear_fit(&xs, &ys);
        ([c, s], crate::linalg::quadratic_fit(&xs, &ys))
    } else if rows.len() == 2 {
        let (c, s) = crate::linalg::linear_fit(&xs, &ys);
        ([c, s], [f64::NAN; 3])
    } else {
        ([f64::NAN; 2], [f64::NAN; 3])
    };
    Ok(ProximityScan { rows, linear, quadratic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub min_interior: f64,
    pub ix: usize,
    pub iv: usize,
    pub passed: bool,
}

/// Minimum over cells more than two cells away from the boundary.
pub fn positivity_check(g: &Density) -> PositivityReport {
    let grid = g.grid();
    let mut best = PositivityReport {
        min_interior: f64::INFINITY,
        ix: 0,
        iv: 0,
        passed: false,
    };
    for ix in 3..grid.nx.saturating_sub(3) {
        for iv in 3..grid.nv.saturating_sub(3) {
            let v = g.at(ix, iv);
            if v < best.min_interior {
                best = PositivityReport {
                    min_interior: v,
                    ix,
                    iv,
                    passed: false,
                };
            }
        }
    }
    best.passed = best.min_interior > 0.0 && best.min_interior.is_finite();
    best
}
