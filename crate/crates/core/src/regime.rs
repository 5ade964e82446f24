//! Classification of long particle runs into stationary, oscillatory and
//! bistable regimes.
//!
//! A run is summarized by its mean-voltage series after burn-in, sampled at a
//! fixed time step. Two runs are made per coupling value, each started near
//! one stable equilibrium of the uncoupled neuron.
//!
//! * Oscillatory: in both runs the Welch spectrum of the first-differenced
//!   series has a peak at least `spectral_ratio` times its median. The
//!   differencing whitens the red background of a noisy relaxation, so the
//!   ratio stays near 2 without a rhythm.
//! * Bistable: the two time-averaged means differ by more than `separation`
//!   pooled standard deviations.
//! * Otherwise stationary-unimodal.

use std::io::Write;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{deterministic_fixed_points, ModelParams};
use crate::particle::{init_ensemble, simulate, trial_seed, CouplingSpec, InitialLaw, Recorder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    StationaryUnimodal,
    Oscillatory,
    Bistable,
    Inconclusive,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::StationaryUnimodal => "stationary-unimodal",
            Regime::Oscillatory => "oscillatory",
            Regime::Bistable => "bistable",
            Regime::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub spectral_ratio: f64,
    pub separation: f64,
    /// Fraction of each run discarded before classification.
    pub burn_in: f64,
    /// Time between samples of the mean voltage.
    pub sample_dt: f64,
    /// Welch segment count (segments overlap by half).
    pub segments: usize,
    /// Fewer post-burn-in samples than this make the spectral test inconclusive.
    pub min_samples: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            spectral_ratio: 5.0,
            separation: 4.0,
            burn_in: 0.2,
            sample_dt: 0.1,
            segments: 8,
            min_samples: 256,
        }
    }
}

/// Peak-to-median ratio of the Welch spectrum of `diff(series)`, zero
/// frequency excluded. `None` for series too short to split.
pub fn spectral_peak_ratio(series: &[f64], segments: usize) -> Option<f64> {
    if series.len() < 2 || segments == 0 {
        return None;
    }
    let d: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let len = d.len() / segments;
    if len < 8 {
        return None;
    }
    let step = len / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let hann: Vec<f64> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        .collect();
    let nfreq = len / 2 + 1;
    let mut power = vec![0.0; nfreq];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut k = 0;
    while k + len <= d.len() {
        let seg = &d[k..k + len];
        let mean = seg.iter().sum::<f64>() / len as f64;
        for i in 0..len {
            buf[i] = Complex::new((seg[i] - mean) * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, z) in power.iter_mut().zip(&buf) {
            *p += z.norm_sqr();
        }
        k += step;
    }
    let mut nonzero = power[1..].to_vec();
    let peak = nonzero.iter().copied().fold(0.0, f64::max);
    nonzero.sort_by(f64::total_cmp);
    let m = nonzero.len();
    let median = if m % 2 == 1 {
        nonzero[m / 2]
    } else {
        0.5 * (nonzero[m / 2 - 1] + nonzero[m / 2])
    };
    (median > 0.0).then(|| peak / median)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub regime: Regime,
    pub ratios: [f64; 2],
    pub means: [f64; 2],
    /// `|mean_a - mean_b|` over the pooled standard deviation.
    pub separation: f64,
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    (m, s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

/// Classifies two post-burn-in sample series, one per initialization.
pub fn classify(a: &[f64], b: &[f64], thr: &Thresholds) -> Verdict {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let pooled = (0.5 * (va + vb)).sqrt();
    let separation = if pooled > 0.0 { (ma - mb).abs() / pooled } else { f64::INFINITY };
    let ra = spectral_peak_ratio(a, thr.segments);
    let rb = spectral_peak_ratio(b, thr.segments);
    let ratios = [ra.unwrap_or(f64::NAN), rb.unwrap_or(f64::NAN)];
    let too_short = a.len().min(b.len()) < thr.min_samples;
    let regime = match (ra, rb) {
        _ if too_short => Regime::Inconclusive,
        (Some(x), Some(y)) if x >= thr.spectral_ratio && y >= thr.spectral_ratio => Regime::Oscillatory,
        (Some(_), Some(_)) if separation > thr.separation => Regime::Bistable,
        (Some(_), Some(_)) => Regime::StationaryUnimodal,
        _ => Regime::Inconclusive,
    };
    Verdict {
        regime,
        ratios,
        means: [ma, mb],
        separation,
    }
}

/// Two initial points near stable equilibria of the uncoupled neuron: the
/// outermost two if there are several, the single one and the origin
/// otherwise.
pub fn attractor_starts(p: &ModelParams) -> [(f64, f64); 2] {
    let stable: Vec<(f64, f64)> = deterministic_fixed_points(&p.with_eps(0.0))
        .into_iter()
        .filter(|f| f.stability.is_stable())
        .map(|f| (f.x, f.v))
        .collect();
    match stable.len() {
        0 => [(0.0, -1.0), (0.0, 1.0)],
        1 => [stable[0], (0.0, 0.0)],
        n => [stable[0], stable[n - 1]],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub j_list: Vec<f64>,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    pub seeds: usize,
    pub seed: u64,
    /// Variance of the Gaussian cloud around each starting point.
    pub init_var: f64,
    pub thresholds: Thresholds,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            j_list: vec![0.1, 1.0, 3.0],
            n: 2000,
            t_final: 400.0,
            dt: 0.01,
            seeds: 5,
            seed: 1,
            init_var: 0.01,
            thresholds: Thresholds::default(),
        }
    }
}

/// Post-burn-in mean voltage of one run, sampled every `sample_dt`.
pub fn regime_series(
    p: &ModelParams,
    j: f64,
    start: (f64, f64),
    cfg: &ScanConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let stride = (cfg.thresholds.sample_dt / cfg.dt).round().max(1.0) as usize;
    let law = InitialLaw::Gaussian {
        mean: [start.0, start.1],
        cov: [[cfg.init_var, 0.0], [0.0, cfg.init_var]],
    };
    let mut ens = init_ensemble(cfg.n, &law, seed)?;
    let tr = simulate(&mut ens, cfg.t_final, cfg.dt, p, &CouplingSpec::MeanField(j), &Recorder::every(stride))?;
    let t_burn = cfg.thresholds.burn_in * cfg.t_final;
    Ok(tr.rows.iter().filter(|r| r.t >= t_burn).map(|r| r.mean_v).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub j: f64,
    pub seed_index: usize,
    pub verdict: Verdict,
}

pub const SCAN_HEADER: &str = "J,seed,regime,ratio_a,ratio_b,mean_a,mean_b,separation";

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut w: W) -> Result<()> {
    writeln!(w, "{SCAN_HEADER}")?;
    for r in rows {
        let v = &r.verdict;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.j, r.seed_index, v.regime, v.ratios[0], v.ratios[1], v.means[0], v.means[1], v.separation
        )?;
    }
    Ok(())
}

/// Runs every `(J, seed)` pair with both initializations and classifies it.
/// Rows come back ordered by `J`, then seed.
pub fn regime_scan(p: &ModelParams, cfg: &ScanConfig) -> Result<Vec<ScanRow>> {
    Ok(regime_scan_traces(p, cfg)?.into_iter().map(|(row, _)| row).collect())
}

/// [`regime_scan`] that also returns the two post-burn-in series of each row.
pub fn regime_scan_traces(p: &ModelParams, cfg: &ScanConfig) -> Result<Vec<(ScanRow, [Vec<f64>; 2])>> {
    if cfg.j_list.is_empty() || cfg.seeds == 0 {
        return Err(Error::InvalidParams("need a nonempty J list and seeds >= 1".into()));
    }
    let starts = attractor_starts(p);
    let jobs: Vec<(usize, f64, usize)> = cfg
        .j_list
        .iter()
        .enumerate()
        .flat_map(|(ji, &j)| (0..cfg.seeds).map(move |s| (ji, j, s)))
        .collect();
    jobs.par_iter()
        .map(|&(ji, j, s)| {
            let base = trial_seed(cfg.seed, (ji * 1000 + s) as u64);
            let a = regime_series(p, j, starts[0], cfg, trial_seed(base, 0))?;
            let b = regime_series(p, j, starts[1], cfg, trial_seed(base, 1))?;
            let row = ScanRow {
                j,
                seed_index: s,
                verdict: classify(&a, &b, &cfg.thresholds),
            };
            Ok((row, [a, b]))
        })
        .collect()
}
