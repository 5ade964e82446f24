//! Linearization around a stationary solution and its rightmost spectrum.
//!
//! The discrete linearized operator is
//!
//! ```text
//! ℒ h = Q[j*] h + u (wᵀ h),   w_k = v_k Δx Δv,   u = ∂(Q[j] G)/∂j at j*,
//! ```
//!
//! where `u` is the exact `j`-derivative of the upwind fluxes, so `ℒ` is the
//! Jacobian of the discrete right-hand side and its column sums vanish.
//! Eigenvalues are extracted in `m`-weighted coordinates `y = m ⊙ h`.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};
use crate::model::{MeanVoltage, WeightParams};
use crate::pde::grid::{compensated_sum, Density, Grid2D};
use crate::pde::norms::l2m_distance;
use crate::pde::scheme::{PhaseField, Stencil};
use crate::pde::solve::{solve_with, SolveOptions, TimeSeries};
use crate::stationary::StationaryResult;

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    stencil: Stencil,
    q: BandMatrix,
    u: Vec<f64>,
    w: Vec<f64>,
    j: f64,
}

impl LinearizedOperator {
    /// Linearizes around the stationary density `g` with mean voltage `j`.
    pub fn new(g: &Density, j: f64, field: &dyn PhaseField) -> Self {
        let grid = *g.grid();
        let stencil = Stencil::new(grid, field);
        let q = stencil.assemble(j);
        let u = stencil.transport_j_derivative(g.values(), j);
        let area = grid.cell_area();
        let w = (0..grid.len()).map(|k| grid.v_center(k % grid.nv) * area).collect();
        Self { stencil, q, u, w, j }
    }

    pub fn assemble(g: &StationaryResult, field: &dyn PhaseField) -> Self {
        Self::new(&g.g, g.j, field)
    }

    pub fn grid(&self) -> &Grid2D {
        self.stencil.grid()
    }

    pub fn j(&self) -> f64 {
        self.j
    }

    /// The rank-one column `u`.
    pub fn rank_one_column(&self) -> &[f64] {
        &self.u
    }

    pub fn sparse_part(&self) -> &BandMatrix {
        &self.q
    }

    pub fn apply(&self, h: &[f64], out: &mut [f64]) {
        self.q.matvec(h, out);
        let s = compensated_sum(self.w.iter().zip(h).map(|(a, b)| a * b));
        if s != 0.0 {
            out.iter_mut().zip(&self.u).for_each(|(o, u)| *o += u * s);
        }
    }

    /// Column sums of the full operator relative to its largest diagonal entry.
    pub fn column_sum_defect(&self) -> f64 {
        let cs = self.q.column_sums();
        let su = compensated_sum(self.u.iter().copied());
        let scale = (0..self.q.n()).map(|i| self.q.get(i, i).abs()).fold(0.0, f64::max);
        cs.iter().zip(&self.w).map(|(c, w)| (c + su * w).abs()).fold(0.0, f64::max) / scale
    }

    /// Largest eigenvalue modulus, estimated by power iteration.
    pub fn spectral_scale(&self, iterations: usize) -> f64 {
        let n = self.q.n();
        let mut x: Vec<f64> = (0..n).map(|k| ((k as f64) * 0.618_033_988_75).fract() - 0.5).collect();
        let mut y = vec![0.0; n];
        let mut est = 0.0;
        for _ in 0..iterations {
            let nx = norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            self.apply(&x, &mut y);
            est = norm(&y);
            std::mem::swap(&mut x, &mut y);
        }
        est
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(ℒ - s I)^{-1}` via a band factorization of `Q - s I` and the
/// Sherman–Morrison correction for the rank-one part.
struct ShiftInvert<'a> {
    op: &'a LinearizedOperator,
    lu: BandLu,
    z: Vec<f64>,
    denom: f64,
}

impl<'a> ShiftInvert<'a> {
    fn new(op: &'a LinearizedOperator, shift: f64) -> Result<Self> {
        let mut a = op.q.clone();
        a.shift_diagonal(-shift);
        let lu = a.factorize()?;
        let z = lu.solve(&op.u);
        let denom = 1.0 + dot(&op.w, &z);
        if !(denom.abs() > 1e-14) {
            return Err(Error::Factorization { row: op.q.n() });
        }
        Ok(Self { op, lu, z, denom })
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        self.lu.solve_in_place(b);
        let c = dot(&self.op.w, b) / self.denom;
        b.iter_mut().zip(&self.z).for_each(|(x, z)| *x -= c * z);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Number of eigenvalues to report (at least 2).
    pub k: usize,
    /// Relative residual target `‖ℒx - μx‖ ≤ tol · scale · ‖x‖`.
    pub tol: f64,
    /// Real shift `s > 0` of the shift-invert iteration.
    pub shift: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
    pub weight: WeightParams,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            k: 6,
            tol: 1e-9,
            shift: 0.05,
            krylov_dim: 60,
            max_restarts: 12,
            weight: WeightParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub re: f64,
    pub im: f64,
    /// `‖ℒx - μx‖ / ‖x‖` in weighted coordinates.
    pub residual: f64,
    pub is_mass_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Sorted by real part, descending.
    pub eigenvalues: Vec<Eigenpair>,
    pub mass_mode_defect: f64,
    /// `-max Re μ` over the non-mass eigenvalues, when the mass mode is
    /// separated from them.
    pub gap: Option<f64>,
    pub eps: f64,
    pub shift: f64,
    pub kappa: f64,
    /// Largest eigenvalue modulus (power-iteration estimate).
    pub scale: f64,
    pub grid: Grid2D,
    /// Every reported residual met the tolerance.
    pub converged: bool,
}

pub const SPECTRUM_HEADER: &str = "re,im,residual,is_mass_mode";

#[derive(Serialize)]
struct SpectrumMeta<'a> {
    eps: f64,
    grid: &'a Grid2D,
    shift: f64,
    kappa: f64,
    scale: f64,
    gap: Option<f64>,
    mass_mode_defect: f64,
    converged: bool,
}

impl SpectralReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SPECTRUM_HEADER}")?;
        for e in &self.eigenvalues {
            writeln!(w, "{:e},{:e},{:e},{}", e.re, e.im, e.residual, e.is_mass_mode)?;
        }
        Ok(())
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&SpectrumMeta {
            eps: self.eps,
            grid: &self.grid,
            shift: self.shift,
            kappa: self.kappa,
            scale: self.scale,
            gap: self.gap,
            mass_mode_defect: self.mass_mode_defect,
            converged: self.converged,
        })
        .expect("plain data serializes")
    }

    pub fn mass_mode(&self) -> Option<&Eigenpair> {
        self.eigenvalues.iter().find(|e| e.is_mass_mode)
    }

    /// Non-mass eigenvalues.
    pub fn others(&self) -> impl Iterator<Item = &Eigenpair> {
        self.eigenvalues.iter().filter(|e| !e.is_mass_mode)
    }
}

/// Eigenvector of a small complex matrix for the eigenvalue `theta`, by two
/// steps of inverse iteration.
fn small_eigenvector(h: &DMatrix<Complex<f64>>, theta: Complex<f64>) -> DVector<Complex<f64>> {
    let m = h.nrows();
    let hn = h.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let perturbed = theta + Complex::new(hn * 1e-12, hn * 1e-12);
    let a = h - DMatrix::<Complex<f64>>::identity(m, m) * perturbed;
    let lu = a.lu();
    let mut y = DVector::from_fn(m, |i, _| Complex::new(1.0 + 0.1 * (i as f64).sin(), 0.0));
    for _ in 0..3 {
        if let Some(next) = lu.solve(&y) {
            let nrm = next.norm();
            if nrm.is_finite() && nrm > 0.0 {
                y = next / Complex::new(nrm, 0.0);
            }
        }
    }
    y
}

struct Ritz {
    mu: Complex<f64>,
    theta_abs: f64,
    xr: Vec<f64>,
    xi: Vec<f64>,
    residual: f64,
}

/// `k` rightmost eigenvalues of `op` by shift-invert Arnoldi with explicit
/// restarts.
///
/// The iteration favours eigenvalues closest to the shift, so for a real
/// positive shift it returns the rightmost part of the spectrum near the
/// real axis. Factorization failures retry with a ten times larger shift.
pub fn rightmost_eigenvalues(op: &LinearizedOperator, eps: f64, opts: &SpectralOptions) -> Result<SpectralReport> {
    if opts.k < 2 {
        return Err(Error::InvalidParams("k must be >= 2".into()));
    }
    let grid = *op.grid();
    let n = grid.len();
    let mut shift = opts.shift;
    let mut si = None;
    for _ in 0..4 {
        match ShiftInvert::new(op, shift) {
            Ok(s) => {
                si = Some(s);
                break;
            }
            Err(e) => {
                log::warn!("shift {shift} failed ({e}); retrying with {}", 10.0 * shift);
                shift *= 10.0;
            }
        }
    }
    let si = si.ok_or(Error::Factorization { row: 0 })?;
    let scale = op.spectral_scale(40);

    // similarity transform y = m ⊙ h
    let mw: Vec<f64> = (0..n)
        .map(|k| {
            let (x, v) = (grid.x_center(k / grid.nv), grid.v_center(k % grid.nv));
            opts.weight.log_weight(x, v).map(f64::exp).unwrap_or(f64::MAX.sqrt())
        })
        .collect();
    let apply_si = |y: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(y.iter().zip(&mw).map(|(a, m)| a / m));
        si.solve_in_place(out);
        out.iter_mut().zip(&mw).for_each(|(a, m)| *a *= m);
    };
    let apply_l = |y: &[f64]| -> Vec<f64> {
        let h: Vec<f64> = y.iter().zip(&mw).map(|(a, m)| a / m).collect();
        let mut out = vec![0.0; n];
        op.apply(&h, &mut out);
        out.iter_mut().zip(&mw).for_each(|(a, m)| *a *= m);
        out
    };

    let mdim = opts.krylov_dim.max(opts.k + 10).min(n - 1);
    let mut start: Vec<f64> = (0..n).map(|k| 1.0 + 0.3 * ((k as f64) * 0.754_877_666).fract()).collect();
    let mut best: Vec<Ritz> = Vec::new();
    let mut converged = false;
    for _restart in 0..=opts.max_restarts {
        let nrm = norm(&start);
        let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / nrm).collect()];
        let mut hm = DMatrix::<f64>::zeros(mdim + 1, mdim);
        let mut w = Vec::with_capacity(n);
        let mut dim = mdim;
        for jcol in 0..mdim {
            apply_si(&basis[jcol], &mut w);
            // two passes of modified Gram–Schmidt
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    hm[(i, jcol)] += c;
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let hn = norm(&w);
            hm[(jcol + 1, jcol)] = hn;
            if hn < 1e-14 {
                dim = jcol + 1;
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let h = hm.view((0, 0), (dim, dim)).into_owned();
        let thetas = h.complex_eigenvalues();
        let hc = h.map(|v| Complex::new(v, 0.0));
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| thetas[b].norm().total_cmp(&thetas[a].norm()));
        let want = opts.k.min(dim);
        let mut ritz = Vec::with_capacity(want);
        for &i in order.iter().take(want) {
            let theta = thetas[i];
            let y = small_eigenvector(&hc, theta);
            let mut xr = vec![0.0; n];
            let mut xi = vec![0.0; n];
            for (k, b) in basis.iter().take(dim).enumerate() {
                let (yr, yi) = (y[k].re, y[k].im);
                for ((r, im), bv) in xr.iter_mut().zip(xi.iter_mut()).zip(b) {
                    *r += yr * bv;
                    *im += yi * bv;
                }
            }
            let mu = Complex::new(shift, 0.0) + Complex::new(1.0, 0.0) / theta;
            let lr = apply_l(&xr);
            let li = apply_l(&xi);
            let mut acc = 0.0;
            for k in 0..n {
                let re = lr[k] - mu.re * xr[k] + mu.im * xi[k];
                let im = li[k] - mu.re * xi[k] - mu.im * xr[k];
                acc += re * re + im * im;
            }
            let xn = (dot(&xr, &xr) + dot(&xi, &xi)).sqrt();
            ritz.push(Ritz {
                mu,
                theta_abs: theta.norm(),
                xr,
                xi,
                residual: acc.sqrt() / xn,
            });
        }
        converged = ritz.iter().all(|r| r.residual <= opts.tol * scale);
        // restart vector: sum of the unconverged wanted Ritz vectors, plus the
        // converged ones with a small weight to keep them in the subspace
        let mut next = vec![0.0; n];
        for r in &ritz {
            let wgt = if r.residual <= opts.tol * scale { 1e-3 } else { 1.0 };
            let xn = norm(&r.xr).max(norm(&r.xi)).max(1e-300);
            for k in 0..n {
                next[k] += wgt * (r.xr[k] + r.xi[k]) / xn;
            }
        }
        best = ritz;
        if converged || norm(&next) == 0.0 {
            break;
        }
        start = next;
    }
    if !converged {
        log::warn!("shift-invert Arnoldi did not converge all requested eigenvalues");
    }
    best.sort_by(|a, b| b.theta_abs.total_cmp(&a.theta_abs));
    let mut eigenvalues: Vec<Eigenpair> = best
        .iter()
        .map(|r| Eigenpair {
            re: r.mu.re,
            im: r.mu.im,
            residual: r.residual,
            is_mass_mode: false,
        })
        .collect();
    let mass_idx = (0..eigenvalues.len())
        .min_by(|&a, &b| {
            let na = eigenvalues[a].re.hypot(eigenvalues[a].im);
            let nb = eigenvalues[b].re.hypot(eigenvalues[b].im);
            na.total_cmp(&nb)
        })
        .expect("k >= 2");
    eigenvalues[mass_idx].is_mass_mode = true;
    let mass_mode_defect = eigenvalues[mass_idx].re.hypot(eigenvalues[mass_idx].im);
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re));
    let rightmost_other = eigenvalues
        .iter()
        .filter(|e| !e.is_mass_mode)
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let separation = eigenvalues
        .iter()
        .filter(|e| !e.is_mass_mode)
        .map(|e| (e.re - eigenvalues.iter().find(|m| m.is_mass_mode).unwrap().re).hypot(e.im))
        .fold(f64::INFINITY, f64::min);
    let gap = (separation > opts.tol * scale && rightmost_other.is_finite()).then_some(-rightmost_other);
    Ok(SpectralReport {
        eigenvalues,
        mass_mode_defect,
        gap,
        eps,
        shift,
        kappa: opts.weight.kappa,
        scale,
        grid,
        converged,
    })
}

/// Largest distance from an eigenvalue of `a` to its nearest partner in `b`.
pub fn matching_distance(a: &SpectralReport, b: &SpectralReport) -> f64 {
    a.eigenvalues
        .iter()
        .map(|x| {
            b.eigenvalues
                .iter()
                .map(|y| (x.re - y.re).hypot(x.im - y.im))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Taylor remainders `‖N(G + τh) - N(G) - τ ℒh‖₂` of the discrete nonlinear
/// right-hand side `N(f) = Q[𝒥(f)] f` along a fixed mass-neutral direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub taus: Vec<f64>,
    pub remainders: Vec<f64>,
    /// `remainder(τ_k) / remainder(τ_{k+1})`; close to 4 under halving.
    pub ratios: Vec<f64>,
}

/// Runs the remainder test on the smooth direction `h = G (tanh(v - j) - c)`,
/// which moves `j` at first order so the quadratic term clears roundoff.
pub fn gradient_check(g: &StationaryResult, field: &dyn PhaseField, taus: &[f64]) -> GradientCheck {
    let op = LinearizedOperator::assemble(g, field);
    let grid = *op.grid();
    let n = grid.len();
    let gv = g.g.values();
    let phi: Vec<f64> = (0..n).map(|k| (grid.v_center(k % grid.nv) - g.j).tanh()).collect();
    let c = compensated_sum(gv.iter().zip(&phi).map(|(a, b)| a * b)) / compensated_sum(gv.iter().copied());
    let h: Vec<f64> = gv.iter().zip(&phi).map(|(a, b)| a * (b - c)).collect();
    let nonlinear = |f: &[f64]| -> Vec<f64> {
        // no positivity clamp: j of the raw vector keeps N smooth in τ
        let j = compensated_sum((0..n).map(|k| grid.v_center(k % grid.nv) * f[k])) / compensated_sum(f.iter().copied());
        let mut out = vec![0.0; n];
        op.stencil.apply(f, &mut out, j);
        out
    };
    let base = nonlinear(gv);
    let mut lh = vec![0.0; n];
    op.apply(&h, &mut lh);
    let remainders: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let f: Vec<f64> = gv.iter().zip(&h).map(|(a, b)| a + tau * b).collect();
            let nf = nonlinear(&f);
            norm(&nf.iter().zip(&base).zip(&lh).map(|((a, b), l)| a - b - tau * l).collect::<Vec<_>>())
        })
        .collect();
    let ratios = remainders.windows(2).map(|w| w[0] / w[1]).collect();
    GradientCheck {
        taus: taus.to_vec(),
        remainders,
        ratios,
    }
}

/// Mean-zero perturbation `G · a (tanh(v - j) - c)` scaled to the requested
/// `L²(m)` size. Stays nonnegative while `a ≤ 1/2`.
pub fn default_perturbation(g: &Density, amplitude: f64, w: &WeightParams) -> Result<Vec<f64>> {
    let grid = *g.grid();
    let j = g.mean_voltage()?;
    let phi: Vec<f64> = (0..grid.len()).map(|k| (grid.v_center(k % grid.nv) - j).tanh()).collect();
    let c = compensated_sum(g.values().iter().zip(&phi).map(|(a, b)| a * b)) / compensated_sum(g.values().iter().copied());
    let shape: Vec<f64> = g.values().iter().zip(&phi).map(|(gv, p)| gv * (p - c)).collect();
    let size = crate::pde::norms::l2_m(&grid, &shape, w);
    if amplitude == 0.0 {
        return Ok(vec![0.0; grid.len()]);
    }
    let a = amplitude / size;
    if a > 0.5 {
        return Err(Error::InvalidParams(format!(
            "perturbation amplitude {amplitude} is too large to keep the density nonnegative"
        )));
    }
    Ok(shape.iter().map(|s| a * s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub times: Vec<f64>,
    /// `‖f_t - G‖_{L²(m)}`.
    pub distances: Vec<f64>,
    /// Fitted rate `-d ln‖f_t - G‖/dt`, when a decay window was found.
    pub rate: Option<f64>,
    pub window: Option<(f64, f64)>,
    /// Diagnostics of the perturbed run at the same records.
    pub series: TimeSeries,
}

/// Picks the decay window: after the distance has fallen by `e^{-1}` from its
/// start, and while it stays a hundred times above the floor (the tail
/// level, if the run reached one).
pub fn fit_decay(times: &[f64], d: &[f64]) -> (Option<f64>, Option<(f64, f64)>) {
    let n = d.len();
    if n < 5 || !(d[0] > 0.0) || d.iter().any(|x| !x.is_finite()) {
        return (None, None);
    }
    let tail = &d[n - n / 10 - 1..];
    let tmax = tail.iter().copied().fold(0.0, f64::max);
    let tmin = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = if tmax <= 1.1 * tmin { tmin } else { 0.0 };
    let start = match d.iter().position(|&x| x <= d[0] * (-1.0f64).exp()) {
        Some(s) => s,
        None => return (None, None),
    };
    let end = d.iter().rposition(|&x| x >= 100.0 * floor && x > 0.0).unwrap_or(0);
    if end <= start + 4 {
        return (None, None);
    }
    let ts = &times[start..=end];
    let ls: Vec<f64> = d[start..=end].iter().map(|x| x.ln()).collect();
    let (_, slope) = crate::linalg::linear_fit(ts, &ls);
    if !(slope < 0.0) {
        return (None, Some((ts[0], ts[ts.len() - 1])));
    }
    (Some(-slope), Some((ts[0], ts[ts.len() - 1])))
}

/// Integrates the nonlinear equation from `G + perturbation` and fits the
/// exponential decay of `‖f_t - G‖_{L²(m)}`.
pub fn measure_decay(
    g: &Density,
    perturbation: &[f64],
    field: &dyn PhaseField,
    t_final: f64,
    dt: f64,
    stride: usize,
    w: &WeightParams,
) -> Result<DecayFit> {
    let vals: Vec<f64> = g.values().iter().zip(perturbation).map(|(a, b)| a + b).collect();
    let f0 = Density::new(*g.grid(), vals, 0.0)?;
    let mut times = Vec::new();
    let mut distances = Vec::new();
    let opts = SolveOptions::new(t_final, dt)
        .with_stride(stride)
        .with_weight(*w)
        .with_boundary_tol(f64::INFINITY);
    let (_, series) = solve_with(f0, field, &opts, |f, r| {
        times.push(r.t);
        distances.push(l2m_distance(f, g, w).unwrap_or(f64::NAN));
    })?;
    let (rate, window) = fit_decay(&times, &distances);
    Ok(DecayFit {
        times,
        distances,
        rate,
        window,
        series,
    })
}

/// Spectral gap next to the measured relaxation rate from a perturbation of
/// `L²(m)` size `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayComparison {
    pub gap: Option<f64>,
    pub fit: DecayFit,
}

pub fn predicted_vs_measured_decay(
    g: &StationaryResult,
    field: &dyn PhaseField,
    eps: f64,
    amplitude: f64,
    t_final: f64,
    spectral: &SpectralOptions,
) -> Result<DecayComparison> {
    let op = LinearizedOperator::assemble(g, field);
    let report = rightmost_eigenvalues(&op, eps, spectral)?;
    let h = default_perturbation(&g.g, amplitude, &spectral.weight)?;
    let dt = 0.5 * op.stencil.max_stable_dt(g.j);
    let steps = (t_final / dt).ceil() as usize;
    let stride = (steps / 400).max(1);
    let fit = measure_decay(&g.g, &h, field, t_final, dt, stride, &spectral.weight)?;
    Ok(DecayComparison { gap: report.gap, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;
    use crate::stationary::{solve_fixed_point, StationaryOptions};

    fn grid() -> Grid2D {
        Grid2D::new(-4.0, 4.0, -3.0, 3.5, 24, 28).unwrap()
    }

    fn stationary(eps: f64) -> (StationaryResult, crate::model::ModelParams) {
        let p = Preset::WeakCoupling.params().with_eps(eps);
        (solve_fixed_point(0.0, &grid(), &p, &StationaryOptions::default()).unwrap(), p)
    }

    #[test]
    fn decoupled_rank_one_part_vanishes() {
        let (g, p) = stationary(0.0);
        let op = LinearizedOperator::assemble(&g, &p);
        assert!(op.rank_one_column().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn columns_sum_to_zero() {
        let (g, p) = stationary(0.3);
        let op = LinearizedOperator::assemble(&g, &p);
        assert!(op.column_sum_defect() < 1e-13);
        let h: Vec<f64> = (0..op.grid().len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; h.len()];
        op.apply(&h, &mut out);
        let total: f64 = out.iter().sum();
        let scale: f64 = out.iter().map(|v| v.abs()).sum();
        assert!(total.abs() < 1e-12 * scale);
    }

    #[test]
    fn gradient_check_is_second_order() {
        let (g, p) = stationary(0.4);
        let gc = gradient_check(&g, &p, &[1e-2, 5e-3, 2.5e-3]);
        for r in &gc.ratios {
            assert!((3.5..4.5).contains(r), "{gc:?}");
        }
    }

    #[test]
    fn spectrum_has_simple_mass_mode_and_gap() {
        let (g, p) = stationary(0.1);
        let op = LinearizedOperator::assemble(&g, &p);
        let r = rightmost_eigenvalues(&op, 0.1, &SpectralOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.mass_mode_defect <= 1e-6 * r.scale);
        assert!(r.gap.unwrap() > 0.0);
        assert_eq!(r.eigenvalues.iter().filter(|e| e.is_mass_mode).count(), 1);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(SPECTRUM_HEADER));
    }

    #[test]
    fn eigenvalues_move_continuously_in_eps() {
        let spec = SpectralOptions::default();
        let rep = |e: f64| {
            let (g, p) = stationary(e);
            rightmost_eigenvalues(&LinearizedOperator::assemble(&g, &p), e, &spec).unwrap()
        };
        let r0 = rep(0.0);
        let d1 = matching_distance(&r0, &rep(0.05));
        let d2 = matching_distance(&r0, &rep(0.025));
        assert!(d2 < d1, "{d2} vs {d1}");
    }

    #[test]
    fn zero_perturbation_declines_fit() {
        let (g, p) = stationary(0.1);
        let h = vec![0.0; g.g.grid().len()];
        let w = WeightParams::default();
        let fit = measure_decay(&g.g, &h, &p, 0.5, 1e-3, 10, &w).unwrap();
        assert!(fit.rate.is_none());
    }

    #[test]
    fn fit_decay_recovers_synthetic_rate() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let d: Vec<f64> = t.iter().map(|s| 1e-2 * (-0.8 * s).exp() + 1e-2 * (-5.0 * s).exp()).collect();
        let (rate, _) = fit_decay(&t, &d);
        assert!((rate.unwrap() - 0.8).abs() < 0.02);
    }
}
