//! Euler–Maruyama simulation of the `N`-neuron network and of the
//! synchronously coupled nonlinear SDE.
//!
//! Each particle owns a ChaCha8 stream selected by its index, so a run is a
//! pure function of `(seed, N, params, dt)` regardless of thread count; the
//! mean voltage is reduced sequentially for the same reason.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sde_drift_v, sde_drift_x, MeanVoltage, ModelParams};
use crate::pde::grid::{Density, Grid2D};

/// Law of the i.i.d. initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    Gaussian { mean: [f64; 2], cov: [[f64; 2]; 2] },
    Uniform { x: [f64; 2], v: [f64; 2] },
    Point { x: f64, v: f64 },
}

impl InitialLaw {
    /// Rejects non-positive-definite covariances, empty boxes and non-finite
    /// points.
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Gaussian { cov, .. } => {
                cholesky2(cov)?;
            }
            InitialLaw::Uniform { x, v } => {
                if !(x[0] < x[1] && v[0] < v[1]) {
                    return Err(Error::InvalidParams(format!("empty uniform box {x:?} x {v:?}")));
                }
            }
            InitialLaw::Point { x, v } => {
                if !(x.is_finite() && v.is_finite()) {
                    return Err(Error::InvalidParams("non-finite point law".into()));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match *self {
            InitialLaw::Gaussian { mean, cov } => {
                let l = cholesky2(cov).expect("validated");
                let z0: f64 = StandardNormal.sample(rng);
                let z1: f64 = StandardNormal.sample(rng);
                (mean[0] + l[0] * z0, mean[1] + l[1] * z0 + l[2] * z1)
            }
            InitialLaw::Uniform { x, v } => {
                let ux = Uniform::new(x[0], x[1]).expect("validated");
                let uv = Uniform::new(v[0], v[1]).expect("validated");
                (ux.sample(rng), uv.sample(rng))
            }
            InitialLaw::Point { x, v } => (x, v),
        }
    }
}

impl InitialLaw {
    /// The law discretized on `grid` with unit mass.
    pub fn density(&self, grid: Grid2D) -> Result<Density> {
        self.validate()?;
        match *self {
            InitialLaw::Gaussian { mean, cov } => Density::gaussian(grid, mean, cov),
            InitialLaw::Uniform { x, v } => {
                let inside = |a: f64, r: [f64; 2]| (r[0]..=r[1]).contains(&a);
                let mut f = Density::from_fn(grid, |xc, vc| if inside(xc, x) && inside(vc, v) { 1.0 } else { 0.0 });
                f.normalize()?;
                Ok(f)
            }
            InitialLaw::Point { x, v } => Density::point_mass(grid, x, v),
        }
    }
}

/// Lower Cholesky factor `[l11, l21, l22]` of a 2×2 SPD matrix.
fn cholesky2(c: [[f64; 2]; 2]) -> Result<[f64; 3]> {
    let sym = (c[0][1] - c[1][0]).abs() <= 1e-12 * (c[0][1].abs() + 1.0);
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if !(sym && c[0][0] > 0.0 && det > 0.0) {
        return Err(Error::InvalidParams(format!("covariance {c:?} is not positive definite")));
    }
    let l11 = c[0][0].sqrt();
    let l21 = c[1][0] / l11;
    Ok([l11, l21, (c[1][1] - l21 * l21).sqrt()])
}

/// Electrical coupling between neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingSpec {
    /// All-to-all `J_ik = J / N`, equivalent to connectivity `ε = J`.
    MeanField(f64),
    /// Row-major `N × N` nonnegative matrix `J_ik`.
    Matrix { n: usize, entries: Vec<f64> },
}

impl CouplingSpec {
    pub fn from_params(p: &ModelParams) -> Self {
        CouplingSpec::MeanField(p.eps)
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            CouplingSpec::MeanField(j) if !(*j >= 0.0 && j.is_finite()) => {
                Err(Error::InvalidParams(format!("J = {j} must be >= 0")))
            }
            CouplingSpec::Matrix { n: m, entries } => {
                if *m != n || entries.len() != n * n {
                    Err(Error::InvalidParams(format!("coupling matrix is not {n} x {n}")))
                } else if entries.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                    Err(Error::InvalidParams("coupling matrix entries must be >= 0".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Ensemble of `N` neurons with per-particle random streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
    seed: u64,
    rngs: Vec<ChaCha8Rng>,
}

/// Seed of trial `k` derived from a base seed (SplitMix64 finalizer).
pub fn trial_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

/// Draws `n` i.i.d. states from `law`.
pub fn init_ensemble(n: usize, law: &InitialLaw, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    law.validate()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| particle_rng(seed, i)).collect();
    let (x, v) = rngs.iter_mut().map(|r| law.sample(r)).unzip();
    Ok(ParticleEnsemble {
        x,
        v,
        t: 0.0,
        seed,
        rngs,
    })
}

/// Summary statistics of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub t: f64,
    pub mean_v: f64,
    pub mean_x: f64,
    pub var_v: f64,
    pub var_x: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stats(&self) -> EnsembleStats {
        let n = self.len() as f64;
        let mean_v = self.v.iter().sum::<f64>() / n;
        let mean_x = self.x.iter().sum::<f64>() / n;
        let var_v = self.v.iter().map(|v| (v - mean_v).powi(2)).sum::<f64>() / n;
        let var_x = self.x.iter().map(|x| (x - mean_x).powi(2)).sum::<f64>() / n;
        EnsembleStats {
            t: self.t,
            mean_v,
            mean_x,
            var_v,
            var_x,
        }
    }

    /// Applies `perm` to the particle labels, streams included.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            x: perm.iter().map(|&i| self.x[i]).collect(),
            v: perm.iter().map(|&i| self.v[i]).collect(),
            t: self.t,
            seed: self.seed,
            rngs: perm.iter().map(|&i| self.rngs[i].clone()).collect(),
        }
    }
}

impl MeanVoltage for ParticleEnsemble {
    fn mean_voltage(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        Ok(self.v.iter().sum::<f64>() / self.len() as f64)
    }
}

/// Coupling contribution to each neuron's voltage drift, with the sign of
/// `p.coupling`.
fn coupling_drift(v: &[f64], c: &CouplingSpec, p: &ModelParams) -> Vec<f64> {
    let s = p.coupling.factor();
    match c {
        CouplingSpec::MeanField(j) => {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|vi| s * j * (vi - mean)).collect()
        }
        CouplingSpec::Matrix { n, entries } => (0..*n)
            .into_par_iter()
            .map(|i| {
                let row = &entries[i * n..(i + 1) * n];
                s * row.iter().zip(v).map(|(jik, vk)| jik * (v[i] - vk)).sum::<f64>()
            })
            .collect(),
    }
}

fn check_finite(ens: &ParticleEnsemble) -> Result<()> {
    if let Some(index) = (0..ens.len()).find(|&i| !(ens.x[i].is_finite() && ens.v[i].is_finite())) {
        return Err(Error::NonFinite { index, t: ens.t });
    }
    Ok(())
}

/// One Euler–Maruyama step of size `dt`.
///
/// The uncoupled drift comes from `p` with `ε = 0`; the coupling term is
/// supplied by `c` (so `p.eps` is ignored).
pub fn step(ens: &mut ParticleEnsemble, dt: f64, p: &ModelParams, c: &CouplingSpec) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be > 0")));
    }
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    c.validate(ens.len())?;
    let free = p.with_eps(0.0);
    let cd = coupling_drift(&ens.v, c, p);
    let sq = p.sigma * dt.sqrt();
    ens.x
        .par_iter_mut()
        .zip(ens.v.par_iter_mut())
        .zip(ens.rngs.par_iter_mut())
        .zip(cd.par_iter())
        .for_each(|(((x, v), rng), cdi)| {
            let xi: f64 = StandardNormal.sample(rng);
            let dv = sde_drift_v(*x, *v, 0.0, &free) + cdi;
            let dx = sde_drift_x(*x, *v, &free);
            *v += dv * dt + sq * xi;
            *x += dx * dt;
        });
    ens.t += dt;
    check_finite(ens)
}

/// Number of steps to reach `t_final`; `t_final = k dt` gives exactly `k`.
pub fn step_count(t_final: f64, dt: f64) -> usize {
    let r = t_final / dt;
    let k = r.round();
    if (r - k).abs() <= 1e-9 * r.max(1.0) {
        k as usize
    } else {
        r.ceil() as usize
    }
}

/// What [`simulate`] keeps along the way.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recorder {
    /// Steps between summary rows. The initial and final states are always
    /// recorded.
    pub stride: usize,
    /// Histogram snapshots on this grid every `snapshot_stride` steps.
    pub snapshots: Option<(Grid2D, usize)>,
}

impl Recorder {
    pub fn every(stride: usize) -> Self {
        Self {
            stride,
            snapshots: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub rows: Vec<EnsembleStats>,
    pub snapshots: Vec<Density>,
    /// Number of Euler–Maruyama steps taken.
    pub steps: usize,
}

pub const TRAJECTORY_HEADER: &str = "t,mean_v,mean_x,var_v,var_x,j_emp";

impl Trajectory {
    pub fn mean_v(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_v).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.t, r.mean_v, r.mean_x, r.var_v, r.var_x, r.mean_v)?;
        }
        Ok(())
    }
}

/// Advances `ens` by `t_final` in steps of `dt` (the last one shortened if
/// `t_final` is not a multiple of `dt`).
pub fn simulate(
    ens: &mut ParticleEnsemble,
    t_final: f64,
    dt: f64,
    p: &ModelParams,
    c: &CouplingSpec,
    rec: &Recorder,
) -> Result<Trajectory> {
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("need T > 0 and dt > 0, got T = {t_final}, dt = {dt}")));
    }
    if rec.stride == 0 {
        return Err(Error::InvalidParams("stride must be >= 1".into()));
    }
    let steps = step_count(t_final, dt);
    let t0 = ens.t;
    let mut out = Trajectory::default();
    let snap = |ens: &ParticleEnsemble, out: &mut Trajectory, k: usize| -> Result<()> {
        if let Some((g, s)) = rec.snapshots {
            if s > 0 && (k % s == 0 || k == steps) {
                out.snapshots.push(empirical_density(ens, &g)?);
            }
        }
        Ok(())
    };
    out.rows.push(ens.stats());
    snap(ens, &mut out, 0)?;
    for k in 0..steps {
        let h = if k + 1 == steps { (t0 + t_final - ens.t).min(dt) } else { dt };
        step(ens, h, p, c)?;
        if k + 1 == steps {
            ens.t = t0 + t_final;
        }
        if (k + 1) % rec.stride == 0 || k + 1 == steps {
            out.rows.push(ens.stats());
        }
        snap(ens, &mut out, k + 1)?;
    }
    out.steps = steps;
    Ok(out)
}

/// Time-step self-check: reruns from the same initial draws with `dt / 2`
/// and returns the largest difference between the two mean-voltage paths at
/// the shared record times. Noise increments differ between the runs, so the
/// gap is the weak discretization error plus `O(N^{-1/2})` sampling noise.
#[allow(clippy::too_many_arguments)]
pub fn dt_halving_gap(
    n: usize,
    law: &InitialLaw,
    seed: u64,
    t_final: f64,
    dt: f64,
    stride: usize,
    p: &ModelParams,
    c: &CouplingSpec,
) -> Result<f64> {
    let mut coarse = init_ensemble(n, law, seed)?;
    let mut fine = init_ensemble(n, law, seed)?;
    let a = simulate(&mut coarse, t_final, dt, p, c, &Recorder::every(stride))?;
    let b = simulate(&mut fine, t_final, 0.5 * dt, p, c, &Recorder::every(2 * stride))?;
    Ok(a.rows
        .iter()
        .zip(&b.rows)
        .map(|(r, s)| (r.mean_v - s.mean_v).abs())
        .fold(0.0, f64::max))
}

/// Fraction of particles outside the grid rectangle.
pub fn out_of_grid_fraction(ens: &ParticleEnsemble, grid: &Grid2D) -> f64 {
    let outside = ens.x.iter().zip(&ens.v).filter(|(x, v)| grid.locate(**x, **v).is_none()).count();
    outside as f64 / ens.len().max(1) as f64
}

/// Histogram density `count / (N Δx Δv)`; particles outside the grid are
/// dropped, so the mass is the in-grid fraction. Warns above 1% loss.
pub fn empirical_density(ens: &ParticleEnsemble, grid: &Grid2D) -> Result<Density> {
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut counts = vec![0.0; grid.len()];
    let mut outside = 0usize;
    for (x, v) in ens.x.iter().zip(&ens.v) {
        match grid.locate(*x, *v) {
            Some((ix, iv)) => counts[grid.index(ix, iv)] += 1.0,
            None => outside += 1,
        }
    }
    let frac = outside as f64 / ens.len() as f64;
    if frac > 0.01 {
        log::warn!("{outside} of {} particles ({:.2}%) lie outside the grid", ens.len(), 100.0 * frac);
    }
    let scale = 1.0 / (ens.len() as f64 * grid.cell_area());
    counts.iter_mut().for_each(|c| *c *= scale);
    Density::new(*grid, counts, ens.t)
}

/// Mean-square distance between particles and their nonlinear copies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosRow {
    pub n: usize,
    pub t: f64,
    pub mse: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosTable {
    pub rows: Vec<ChaosRow>,
    /// Least-squares slope of `ln mse(T)` against `ln N`.
    pub slope: f64,
}

pub const CHAOS_HEADER: &str = "N,t,mse,stderr,trials";

impl ChaosTable {
    pub fn final_rows(&self) -> Vec<ChaosRow> {
        let t_max = self.rows.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
        self.rows.iter().copied().filter(|r| r.t == t_max).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHAOS_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:e},{:e},{}", r.n, r.t, r.mse, r.stderr, r.trials)?;
        }
        Ok(())
    }
}

/// Setup of [`chaos_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosConfig {
    pub n_list: Vec<usize>,
    pub t_final: f64,
    pub dt: f64,
    pub trials: usize,
    /// Steps between recorded rows; the final time is always recorded.
    pub stride: usize,
    pub initial: InitialLaw,
    pub seed: u64,
}

/// One trial: particle system and nonlinear copies from shared initial draws
/// and shared Brownian increments. Returns the particle-averaged squared
/// distance at each recorded step.
fn chaos_trial(
    n: usize,
    cfg: &ChaosConfig,
    p: &ModelParams,
    j_of_t: &(dyn Fn(f64) -> f64 + Sync),
    seed: u64,
    record: &[usize],
) -> Result<Vec<f64>> {
    let mut sys = init_ensemble(n, &cfg.initial, seed)?;
    let (mut bx, mut bv) = (sys.x.clone(), sys.v.clone());
    let free = p.with_eps(0.0);
    let s = p.coupling.factor() * p.eps;
    let steps = step_count(cfg.t_final, cfg.dt);
    let mut out = Vec::with_capacity(record.len());
    let dist = |sys: &ParticleEnsemble, bx: &[f64], bv: &[f64]| -> f64 {
        let acc: f64 = (0..n).map(|i| (sys.x[i] - bx[i]).powi(2) + (sys.v[i] - bv[i]).powi(2)).sum();
        acc / n as f64
    };
    let mut next = record.iter().peekable();
    if next.peek() == Some(&&0) {
        out.push(dist(&sys, &bx, &bv));
        next.next();
    }
    for k in 0..steps {
        let h = if k + 1 == steps { (cfg.t_final - sys.t).min(cfg.dt) } else { cfg.dt };
        let sq = p.sigma * h.sqrt();
        let mean = sys.v.iter().sum::<f64>() / n as f64;
        let jt = j_of_t(sys.t);
        for i in 0..n {
            let xi: f64 = StandardNormal.sample(&mut sys.rngs[i]);
            let (x, v) = (sys.x[i], sys.v[i]);
            sys.v[i] = v + (sde_drift_v(x, v, 0.0, &free) + s * (v - mean)) * h + sq * xi;
            sys.x[i] = x + sde_drift_x(x, v, &free) * h;
            let (y, w) = (bx[i], bv[i]);
            bv[i] = w + (sde_drift_v(y, w, 0.0, &free) + s * (w - jt)) * h + sq * xi;
            bx[i] = y + sde_drift_x(y, w, &free) * h;
        }
        sys.t = if k + 1 == steps { cfg.t_final } else { sys.t + h };
        check_finite(&sys)?;
        if let Some(index) = (0..n).find(|&i| !(bx[i].is_finite() && bv[i].is_finite())) {
            return Err(Error::NonFinite { index, t: sys.t });
        }
        if next.peek() == Some(&&(k + 1)) {
            out.push(dist(&sys, &bx, &bv));
            next.next();
        }
    }
    Ok(out)
}

/// Propagation-of-chaos harness.
///
/// For each `N`, runs `trials` independent realizations of the `N`-particle
/// system next to `N` copies of the nonlinear SDE whose coupling reads the
/// mean voltage from `j_of_t`. Both start from the same draws and share every
/// Brownian increment. Trials run on the rayon pool; results do not depend on
/// the scheduling.
pub fn chaos_experiment(
    cfg: &ChaosConfig,
    p: &ModelParams,
    j_of_t: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<ChaosTable> {
    if cfg.n_list.is_empty() || cfg.trials == 0 || cfg.stride == 0 {
        return Err(Error::InvalidParams("need a nonempty N list, trials >= 1 and stride >= 1".into()));
    }
    if !(cfg.t_final > 0.0 && cfg.dt > 0.0) {
        return Err(Error::InvalidParams("need T > 0 and dt > 0".into()));
    }
    let steps = step_count(cfg.t_final, cfg.dt);
    let mut record: Vec<usize> = (0..=steps).step_by(cfg.stride).collect();
    if *record.last().unwrap() != steps {
        record.push(steps);
    }
    let times: Vec<f64> = record
        .iter()
        .map(|&k| if k == steps { cfg.t_final } else { k as f64 * cfg.dt })
        .collect();
    let mut n_sorted = cfg.n_list.clone();
    n_sorted.sort_unstable();
    let mut rows = Vec::new();
    for &n in &n_sorted {
        let per_trial: Vec<Vec<f64>> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| chaos_trial(n, cfg, p, j_of_t, trial_seed(cfg.seed ^ n as u64, k as u64), &record))
            .collect::<Result<_>>()?;
        for (r, &t) in times.iter().enumerate() {
            let vals: Vec<f64> = per_trial.iter().map(|tr| tr[r]).collect();
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            rows.push(ChaosRow {
                n,
                t,
                mse: mean,
                stderr: (var / m).sqrt(),
                trials: cfg.trials,
            });
        }
    }
    let fin: Vec<&ChaosRow> = rows.iter().filter(|r| r.t == cfg.t_final).collect();
    let slope = if fin.len() >= 2 && fin.iter().all(|r| r.mse > 0.0) {
        let lx: Vec<f64> = fin.iter().map(|r| (r.n as f64).ln()).collect();
        let ly: Vec<f64> = fin.iter().map(|r| r.mse.ln()).collect();
        crate::linalg::linear_fit(&lx, &ly).1
    } else {
        f64::NAN
    };
    Ok(ChaosTable { rows, slope })
}

/// Mean voltage path of a large reference ensemble, linearly interpolated.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ReferencePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert!(!times.is_empty() && times.len() == values.len());
        Self { times, values }
    }

    /// Records the mean voltage of a frozen reference run at every step.
    pub fn from_particles(
        n: usize,
        law: &InitialLaw,
        t_final: f64,
        dt: f64,
        p: &ModelParams,
        seed: u64,
    ) -> Result<Self> {
        let mut ens = init_ensemble(n, law, seed)?;
        let tr = simulate(&mut ens, t_final, dt, p, &CouplingSpec::from_params(p), &Recorder::every(1))?;
        Ok(Self::new(
            tr.rows.iter().map(|r| r.t).collect(),
            tr.rows.iter().map(|r| r.mean_v).collect(),
        ))
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.times.len() {
            return *self.values.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.values[k - 1] + w * self.values[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{deterministic_fixed_points, Preset};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gauss() -> InitialLaw {
        InitialLaw::Gaussian {
            mean: [0.0, 0.0],
            cov: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    #[test]
    fn point_law_puts_everyone_at_the_point() {
        let e = init_ensemble(10, &InitialLaw::Point { x: 0.0, v: 0.0 }, 1).unwrap();
        assert!(e.x.iter().chain(&e.v).all(|&z| z == 0.0));
    }

    #[test]
    fn laws_discretize_to_unit_mass() {
        let g = Grid2D::new(-2.0, 2.0, -2.0, 2.0, 16, 16).unwrap();
        let box_law = InitialLaw::Uniform {
            x: [-0.5, 0.5],
            v: [0.0, 1.0],
        };
        for law in [gauss(), box_law, InitialLaw::Point { x: 0.1, v: -0.3 }] {
            let f = law.density(g).unwrap();
            assert_relative_eq!(f.mass(), 1.0, epsilon = 1e-12);
        }
        let m = box_law.density(g).unwrap().moments().unwrap();
        assert_relative_eq!(m.mean_v, 0.5, epsilon = 1e-12);
        let empty = InitialLaw::Uniform {
            x: [0.01, 0.02],
            v: [0.01, 0.02],
        };
        assert!(empty.density(g).is_err());
    }

    #[test]
    fn halving_gap_is_small_for_a_smooth_run() {
        let p = Preset::WeakCoupling.params();
        let gap = dt_halving_gap(4000, &gauss(), 3, 1.0, 1e-2, 10, &p, &CouplingSpec::from_params(&p)).unwrap();
        // sampling noise of a 4000-particle mean is about 0.015
        assert!(gap < 0.08, "gap {gap}");
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let n = 100_000;
        let e = init_ensemble(n, &gauss(), 42).unwrap();
        let s = e.stats();
        let bound = 4.0 / (n as f64).sqrt();
        assert!(s.mean_x.abs() < bound && s.mean_v.abs() < bound, "{s:?}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = Preset::WeakCoupling.params();
        let run = || {
            let mut e = init_ensemble(50, &gauss(), 7).unwrap();
            simulate(&mut e, 0.1, 0.01, &p, &CouplingSpec::MeanField(0.5), &Recorder::every(1)).unwrap();
            (e.x, e.v)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bad_covariance_and_empty_ensemble_rejected() {
        let bad = InitialLaw::Gaussian {
            mean: [0.0, 0.0],
            cov: [[1.0, 2.0], [2.0, 1.0]],
        };
        assert!(matches!(init_ensemble(5, &bad, 0), Err(Error::InvalidParams(_))));
        assert!(matches!(init_ensemble(0, &gauss(), 0), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn deterministic_equilibrium_is_fixed() {
        let p = Preset::Bistable.params().with_sigma(1e-300).with_eps(0.0);
        let fp = deterministic_fixed_points(&p).into_iter().find(|f| f.stability.is_stable()).unwrap();
        let mut e = init_ensemble(1, &InitialLaw::Point { x: fp.x, v: fp.v }, 0).unwrap();
        simulate(&mut e, 1.0, 1e-3, &p, &CouplingSpec::MeanField(0.0), &Recorder::every(100)).unwrap();
        assert!((e.v[0] - fp.v).abs() < 1e-9 && (e.x[0] - fp.x).abs() < 1e-9);
    }

    #[test]
    fn equal_voltages_stay_equal() {
        let p = Preset::WeakCoupling.params().with_sigma(1e-300);
        let mut e = init_ensemble(2, &InitialLaw::Point { x: 0.3, v: -0.4 }, 0).unwrap();
        simulate(&mut e, 2.0, 1e-3, &p, &CouplingSpec::MeanField(2.0), &Recorder::every(100)).unwrap();
        assert_eq!(e.v[0], e.v[1]);
    }

    fn rk4(p: &ModelParams, (x, v): (f64, f64), t: f64, h: f64) -> (f64, f64) {
        let f = |x: f64, v: f64| (sde_drift_x(x, v, p), sde_drift_v(x, v, 0.0, p));
        let (mut x, mut v) = (x, v);
        for _ in 0..(t / h).round() as usize {
            let k1 = f(x, v);
            let k2 = f(x + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
            let k3 = f(x + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
            let k4 = f(x + h * k3.0, v + h * k3.1);
            x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (x, v)
    }

    #[test]
    fn noiseless_trajectory_is_first_order() {
        let p = Preset::WeakCoupling.params().with_sigma(1e-300).with_eps(0.0);
        let start = (0.5, 1.2);
        let exact = rk4(&p, start, 1.0, 1e-4);
        let err = |dt: f64| {
            let mut e = init_ensemble(1, &InitialLaw::Point { x: start.0, v: start.1 }, 0).unwrap();
            simulate(&mut e, 1.0, dt, &p, &CouplingSpec::MeanField(0.0), &Recorder::every(1000)).unwrap();
            ((e.x[0] - exact.0).powi(2) + (e.v[0] - exact.1).powi(2)).sqrt()
        };
        let ratio = err(2e-3) / err(1e-3);
        assert!((1.8..2.2).contains(&ratio), "halving ratio {ratio}");
    }

    #[test]
    fn exact_step_count() {
        let p = Preset::WeakCoupling.params();
        let mut e = init_ensemble(3, &gauss(), 0).unwrap();
        let tr = simulate(&mut e, 0.25, 0.01, &p, &CouplingSpec::MeanField(0.1), &Recorder::every(5)).unwrap();
        assert_eq!(tr.steps, 25);
        assert_eq!(tr.rows.len(), 6);
        assert_eq!(e.t, 0.25);
    }

    #[test]
    fn matrix_coupling_matches_mean_field() {
        let p = Preset::WeakCoupling.params();
        let n = 20;
        let j = 0.8;
        let mut a = init_ensemble(n, &gauss(), 3).unwrap();
        let mut b = a.clone();
        let mf = CouplingSpec::MeanField(j);
        let mx = CouplingSpec::Matrix {
            n,
            entries: vec![j / n as f64; n * n],
        };
        simulate(&mut a, 0.5, 1e-3, &p, &mf, &Recorder::every(100)).unwrap();
        simulate(&mut b, 0.5, 1e-3, &p, &mx, &Recorder::every(100)).unwrap();
        for i in 0..n {
            assert_relative_eq!(a.v[i], b.v[i], epsilon = 1e-10);
            assert_relative_eq!(a.x[i], b.x[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn permutation_commutes_with_mean_field_dynamics() {
        let p = Preset::WeakCoupling.params();
        let e = init_ensemble(8, &gauss(), 11).unwrap();
        let perm = [3, 1, 7, 0, 2, 6, 5, 4];
        let (mut a, mut b) = (e.clone(), e.permuted(&perm));
        let c = CouplingSpec::MeanField(0.5);
        simulate(&mut a, 0.2, 1e-3, &p, &c, &Recorder::every(50)).unwrap();
        simulate(&mut b, 0.2, 1e-3, &p, &c, &Recorder::every(50)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_relative_eq!(b.v[k], a.v[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_state_aborts_with_index() {
        let p = Preset::WeakCoupling.params();
        let mut e = init_ensemble(4, &gauss(), 0).unwrap();
        e.v[2] = 1e200;
        match step(&mut e, 0.1, &p, &CouplingSpec::MeanField(0.0)) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lyapunov_ball_is_absorbing() {
        let p = Preset::WeakCoupling.params().with_sigma(1e-300).with_eps(0.0);
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let start = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let mut e = init_ensemble(1, &InitialLaw::Point { x: start.0, v: start.1 }, 0).unwrap();
            simulate(&mut e, 20.0, 1e-3, &p, &CouplingSpec::MeanField(0.0), &Recorder::every(1000)).unwrap();
            let tr = simulate(&mut e, 20.0, 1e-3, &p, &CouplingSpec::MeanField(0.0), &Recorder::every(10)).unwrap();
            for r in &tr.rows {
                assert!(crate::model::weight_big_m(r.mean_x, r.mean_v) < 3.0);
            }
        }
    }

    #[test]
    fn single_cell_histogram() {
        let g = Grid2D::new(-1.0, 1.0, -1.0, 1.0, 4, 4).unwrap();
        let e = init_ensemble(7, &InitialLaw::Point { x: 0.1, v: 0.1 }, 0).unwrap();
        let d = empirical_density(&e, &g).unwrap();
        let (ix, iv) = g.locate(0.1, 0.1).unwrap();
        assert_relative_eq!(d.at(ix, iv), 1.0 / g.cell_area());
        assert_relative_eq!(d.mass(), 1.0);
    }

    #[test]
    fn uniform_histogram_within_binomial_error() {
        let g = Grid2D::new(0.0, 1.0, 0.0, 1.0, 5, 5).unwrap();
        let n = 200_000;
        let law = InitialLaw::Uniform { x: [0.0, 1.0], v: [0.0, 1.0] };
        let e = init_ensemble(n, &law, 9).unwrap();
        let d = empirical_density(&e, &g).unwrap();
        let p = 1.0 / 25.0;
        let se = (p * (1.0 - p) / n as f64).sqrt() / g.cell_area();
        for &v in d.values() {
            assert!((v - 1.0).abs() < 5.0 * se, "{v}");
        }
    }

    #[test]
    fn out_of_grid_particles_lose_mass() {
        let g = Grid2D::new(-1.0, 1.0, -1.0, 1.0, 4, 4).unwrap();
        let mut e = init_ensemble(4, &InitialLaw::Point { x: 0.0, v: 0.0 }, 0).unwrap();
        e.x[0] = 5.0;
        assert_relative_eq!(out_of_grid_fraction(&e, &g), 0.25);
        assert_relative_eq!(empirical_density(&e, &g).unwrap().mass(), 0.75);
    }

    fn small_chaos(p: &ModelParams, t_final: f64) -> ChaosTable {
        let cfg = ChaosConfig {
            n_list: vec![20, 10],
            t_final,
            dt: 0.01,
            trials: 3,
            stride: 5,
            initial: gauss(),
            seed: 1,
        };
        chaos_experiment(&cfg, p, &|_| 0.0).unwrap()
    }

    #[test]
    fn chaos_starts_at_zero_and_decoupled_case_stays_zero() {
        let p = Preset::WeakCoupling.params();
        let t = small_chaos(&p, 0.2);
        assert!(t.rows.iter().filter(|r| r.t == 0.0).all(|r| r.mse == 0.0));
        assert_eq!(t.rows[0].n, 10);
        assert!(t.rows.iter().any(|r| r.mse > 0.0));
        let t0 = small_chaos(&p.with_eps(0.0), 0.2);
        assert!(t0.rows.iter().all(|r| r.mse == 0.0));
    }

    #[test]
    fn reference_path_interpolates() {
        let r = ReferencePath::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0]);
        assert_eq!(r.at(-1.0), 0.0);
        assert_eq!(r.at(0.5), 1.0);
        assert_eq!(r.at(1.5), 1.0);
        assert_eq!(r.at(3.0), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mean_voltage_matches_stats(seed in 0u64..1000, n in 1usize..50) {
            let e = init_ensemble(n, &gauss(), seed).unwrap();
            prop_assert_eq!(e.mean_voltage().unwrap(), e.stats().mean_v);
        }
    }
}
