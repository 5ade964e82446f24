//! One function per subcommand. Each validates its whole configuration before
//! computing, writes its data files into the output directory and returns a
//! JSON summary for the manifest.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use fhn_kinetic::diagnostics::{monitor, MonitorBounds};
use fhn_kinetic::model::{MeanVoltage, ModelParams};
use fhn_kinetic::particle::{
    chaos_experiment, dt_halving_gap, init_ensemble, out_of_grid_fraction, simulate, ChaosConfig, CouplingSpec,
    InitialLaw, Recorder, ReferencePath,
};
use fhn_kinetic::pde::{solve_with, Coupling, Density, Grid2D, SolveOptions, Stencil, TimeSeries};
use fhn_kinetic::regime::{regime_scan_traces, write_scan_csv, ScanConfig, Thresholds};
use fhn_kinetic::spectral::{
    default_perturbation, gradient_check, measure_decay, rightmost_eigenvalues, LinearizedOperator, SpectralOptions,
};
use fhn_kinetic::stationary::{
    default_seeds, epsilon_proximity_scan, find_stationary, solve_fixed_point, StationaryOptions, StationaryResult,
};

use crate::config::{check_law, nonzero_opt, positive_opt, Resolved};
use crate::error::CliError;
use crate::svg::{heatmap, Plot, Series};

/// Files written by a command, in order.
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, data: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, data).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?;
        self.files.push(p);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> fhn_kinetic::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, buf)
    }

    pub fn density(&mut self, name: &str, f: &Density) -> Result<(), CliError> {
        let mut buf = BufWriter::new(Vec::new());
        f.write_to(&mut buf)?;
        self.write(name, buf.into_inner().map_err(|e| CliError::Io(e.to_string()))?)
    }

    pub fn json(&mut self, name: &str, v: &impl serde::Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, text + "\n")
    }
}

fn default_law() -> InitialLaw {
    InitialLaw::Gaussian {
        mean: [0.0, 0.0],
        cov: [[0.2, 0.0], [0.0, 0.2]],
    }
}

/// Stable step for a run whose mean voltage starts at `j0`, with a margin for
/// the drift of `j` along the run.
fn auto_dt(grid: Grid2D, p: &ModelParams, j0: f64) -> f64 {
    let st = Stencil::new(grid, p);
    0.9 * st.max_stable_dt(j0.abs() + 1.0).min(st.max_stable_dt(-(j0.abs() + 1.0)))
}

fn pde_dt(cfg: &Resolved, f0: &Density) -> Result<f64, CliError> {
    let j0 = f0.mean_voltage()?;
    match cfg.file.run.dt {
        Some(dt) => {
            Stencil::new(cfg.grid, &cfg.params).check_cfl(dt, j0)?;
            Ok(dt)
        }
        None => Ok(auto_dt(cfg.grid, &cfg.params, j0)),
    }
}

fn line_plot(title: &str, x: &str, y: &str, series: Vec<Series>) -> String {
    Plot {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        series,
        ..Default::default()
    }
    .render()
}

pub fn simulate_particles(cfg: &Resolved, out: &mut Outputs) -> Result<Value, CliError> {
    let s = &cfg.file.particles;
    let n = s.n.unwrap_or(2000);
    nonzero_opt("particles.n", Some(n))?;
    nonzero_opt("particles.snapshot_every", s.snapshot_every)?;
    let law = s.initial.unwrap_or_else(default_law);
    check_law("particles.initial", &law)?;
    let t_final = cfg.file.run.t_final.unwrap_or(10.0);
    let dt = cfg.file.run.dt.unwrap_or(1e-3);
    let stride = cfg.file.run.stride.unwrap_or(10);

    let coupling = CouplingSpec::from_params(&cfg.params);
    let mut ens = init_ensemble(n, &law, cfg.seed)?;
    let rec = Recorder {
        stride,
        snapshots: s.snapshot_every.map(|k| (cfg.grid, k * stride)),
    };
    let tr = simulate(&mut ens, t_final, dt, &cfg.params, &coupling, &rec)?;
    let steps_check = (t_final.min(1.0) / dt).round().max(1.0) as usize;
    let gap = dt_halving_gap(n, &law, cfg.seed, steps_check as f64 * dt, dt, stride, &cfg.params, &coupling)?;

    out.csv("particles.csv", |w| tr.write_csv(w))?;
    for (k, f) in tr.snapshots.iter().enumerate() {
        out.density(&format!("snapshot_{k:04}.density"), f)?;
    }
    let pts: Vec<(f64, f64)> = tr.rows.iter().map(|r| (r.t, r.mean_v)).collect();
    out.write(
        "mean_voltage.svg",
        line_plot(&format!("mean voltage, N = {n}, J = {}", cfg.params.eps), "t", "mean v", vec![Series::line("mean v", pts)]),
    )?;
    let last = tr.rows.last().expect("initial row is always recorded");
    Ok(json!({
        "n": n,
        "t_final": t_final,
        "dt": dt,
        "steps": tr.steps,
        "final": last,
        "out_of_grid_fraction": out_of_grid_fraction(&ens, &cfg.grid),
        "dt_halving_gap": gap,
    }))
}

pub fn solve_pde(cfg: &Resolved, out: &mut Outputs) -> Result<Value, CliError> {
    let s = &cfg.file.pde;
    let law = s.initial.unwrap_or_else(default_law);
    check_law("pde.initial", &law)?;
    positive_opt("pde.boundary_tol", s.boundary_tol)?;
    nonzero_opt("pde.snapshot_every", s.snapshot_every)?;
    let f0 = law.density(cfg.grid)?;
    let dt = pde_dt(cfg, &f0)?;
    let t_final = cfg.file.run.t_final.unwrap_or(5.0);
    let mut opts = SolveOptions::new(t_final, dt)
        .with_stride(cfg.file.run.stride.unwrap_or(100))
        .with_weight(cfg.weight)
        .with_boundary_tol(s.boundary_tol.unwrap_or(1e-8));
    if let Some(j) = s.frozen_j {
        opts = opts.with_coupling(Coupling::Frozen(j));
        Stencil::new(cfg.grid, &cfg.params).check_cfl(dt, j)?;
    }

    let mut snaps = Vec::new();
    let mut count = 0usize;
    let (f, series) = solve_with(f0, &cfg.params, &opts, |f, _| {
        if let Some(every) = s.snapshot_every {
            if count % every == 0 {
                snaps.push(f.clone());
            }
        }
        count += 1;
    })?;

    out.csv("series.csv", |w| series.write_csv(w))?;
    out.density("final.density", &f)?;
    for (k, g) in snaps.iter().enumerate() {
        out.density(&format!("density_{k:04}.density", ), g)?;
    }
    out.write("final.svg", heatmap(&f, &format!("f at t = {}", f.time)))?;
    out.write("series.svg", series_plot(&series))?;
    let report = (series.len() >= 2).then(|| monitor(&series.records, &MonitorBounds::default()));
    if let Some(r) = &report {
        out.json("monitors.json", r)?;
    }
    let max_defect = series.records.iter().map(|r| (r.mass - 1.0).abs()).fold(0.0, f64::max);
    let drift = match series.records.as_slice() {
        [.., a, b] if b.t > a.t => (b.j - a.j).abs() / (b.t - a.t),
        _ => f64::NAN,
    };
    Ok(json!({
        "t_final": t_final,
        "dt": dt,
        "steps": opts.steps(),
        "final": series.last(),
        "max_mass_defect": max_defect,
        "final_j_drift_rate": drift,
        "monitors_passed": report.map(|r| r.passed()),
    }))
}

fn series_plot(series: &TimeSeries) -> String {
    let pick = |f: fn(&fhn_kinetic::diagnostics::DiagnosticsRecord) -> f64| -> Vec<(f64, f64)> {
        series.records.iter().map(|r| (r.t, f(r))).collect()
    };
    line_plot(
        "moments",
        "t",
        "",
        vec![
            Series::line("mean v", pick(|r| r.j)),
            Series::line("mean x", pick(|r| r.mean_x)),
            Series::line("var v", pick(|r| r.var_v)),
            Series::line("var x", pick(|r| r.var_x)),
        ],
    )
}

fn stationary_options(cfg: &Resolved) -> Result<StationaryOptions, CliError> {
    let s = &cfg.file.stationary;
    positive_opt("stationary.tol", s.tol)?;
    positive_opt("stationary.residual_tol", s.residual_tol)?;
    nonzero_opt("stationary.max_iter", s.max_iter)?;
    if let Some(d) = s.damping {
        if !(d > 0.0 && d <= 1.0) {
            return Err(CliError::Config(format!("stationary.damping = {d} must be in (0, 1]")));
        }
    }
    let d = StationaryOptions::default();
    Ok(StationaryOptions {
        tol: s.tol.unwrap_or(d.tol),
        residual_tol: s.residual_tol.unwrap_or(d.residual_tol),
        max_iter: s.max_iter.unwrap_or(d.max_iter),
        damping: s.damping.unwrap_or(d.damping),
        ..d
    })
}

pub fn find_stationary_cmd(cfg: &Resolved, out: &mut Outputs) -> Result<Value, CliError> {
    let opts = stationary_options(cfg)?;
    let seeds = cfg.file.stationary.j_seeds.clone().unwrap_or_else(|| default_seeds(&cfg.params));
    if seeds.is_empty() || seeds.iter().any(|s| !s.is_finite()) {
        return Err(CliError::Config("stationary.j_seeds must be nonempty and finite".into()));
    }
    if let Some(list) = &cfg.file.stationary.eps_list {
        if list.is_empty() || list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(CliError::Config("stationary.eps_list must be nonempty with entries >= 0".into()));
        }
    }
    let search = find_stationary(&seeds, &cfg.grid, &cfg.params, &opts);
    for (s, e) in &search.failures {
        log::warn!("seed j = {s} failed: {e}");
    }
    if search.solutions.is_empty() {
        return Err(CliError::Numerical(format!(
            "no stationary solution from seeds {seeds:?}: {}",
            search.failures.iter().map(|(_, e)| e.as_str()).collect::<Vec<_>>().join("; ")
        )));
    }
    let mut table = String::from("k,j,residual_l1,fixed_point_gap,iterations,seed_j\n");
    for (k, r) in search.solutions.iter().enumerate() {
        let stem = format!("stationary_{k}");
        let (dp, mp) = r.save(out.dir(), &stem)?;
        out.files.extend([dp, mp]);
        out.write(&format!("{stem}.svg"), heatmap(&r.g, &format!("stationary solution, j = {:.6}", r.j)))?;
        table += &format!("{k},{},{:e},{:e},{},{}\n", r.j, r.residual_l1, r.fixed_point_gap, r.iterations, r.seed_j);
    }
    out.write("stationary.csv", table)?;

    let mut summary = json!({
        "seeds": seeds,
        "solutions": search.solutions.iter().map(|r| r.meta()).collect::<Vec<_>>(),
        "failures": search.failures,
    });
    if let Some(list) = &cfg.file.stationary.eps_list {
        let scan = epsilon_proximity_scan(list, &cfg.params, &cfg.grid, &cfg.weight, &opts)?;
        let mut csv = String::from("eps,distance,j\n");
        for r in &scan.rows {
            csv += &format!("{},{:e},{}\n", r.eps, r.distance, r.j);
        }
        out.write("proximity.csv", csv)?;
        let pts: Vec<(f64, f64)> = scan.rows.iter().map(|r| (r.eps, r.distance)).collect();
        out.write(
            "proximity.svg",
            line_plot("distance to the decoupled solution", "eps", "L2(m) distance", vec![Series::markers("distance", pts)]),
        )?;
        summary["proximity"] = json!({
            "monotone": scan.is_monotone(1e-8),
            "linear": scan.linear,
            "quadratic": scan.quadratic,
        });
    }
    Ok(summary)
}

fn spectral_options(cfg: &Resolved) -> Result<SpectralOptions, CliError> {
    let s = &cfg.file.spectrum;
    nonzero_opt("spectrum.k", s.k)?;
    nonzero_opt("spectrum.max_restarts", s.max_restarts)?;
    positive_opt("spectrum.shift", s.shift)?;
    positive_opt("spectrum.tol", s.tol)?;
    let d = SpectralOptions::default();
    let o = SpectralOptions {
        k: s.k.unwrap_or(d.k),
        krylov_dim: s.krylov_dim.unwrap_or(d.krylov_dim),
        max_restarts: s.max_restarts.unwrap_or(d.max_restarts),
        shift: s.shift.unwrap_or(d.shift),
        tol: s.tol.unwrap_or(d.tol),
        weight: cfg.weight,
    };
    if o.krylov_dim < o.k + 2 {
        return Err(CliError::Config(format!(
            "spectrum.krylov_dim = {} must be at least k + 2 = {}",
            o.krylov_dim,
            o.k + 2
        )));
    }
    Ok(o)
}

fn load_or_solve_stationary(cfg: &Resolved) -> Result<StationaryResult, CliError> {
    let s = &cfg.file.spectrum;
    match &s.stationary {
        Some(path) => {
            let p = Path::new(path);
            let dir = p.parent().unwrap_or(Path::new("."));
            let stem = p
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::Config(format!("bad stationary path {path:?}")))?;
            StationaryResult::load(dir, stem)
                .map_err(|e| CliError::Config(format!("cannot load stationary solution {path}: {e}")))
        }
        None => Ok(solve_fixed_point(s.j_seed.unwrap_or(0.0), &cfg.grid, &cfg.params, &stationary_options(cfg)?)?),
    }
}

pub fn spectrum(cfg: &Resolved, out: &mut Outputs) -> Result<Value, CliError> {
    let opts = spectral_options(cfg)?;
    let s = &cfg.file.spectrum;
    positive_opt("spectrum.decay_amplitude", s.decay_amplitude)?;
    positive_opt("spectrum.decay_t_final", s.decay_t_final)?;
    let g = load_or_solve_stationary(cfg)?;
    let op = LinearizedOperator::assemble(&g, &cfg.params);
    let report = rightmost_eigenvalues(&op, cfg.params.eps, &opts)?;
    out.csv("spectrum.csv", |w| report.write_csv(w))?;
    out.write("spectrum.json", report.sidecar_json() + "\n")?;
    let pts = |mass: bool| -> Vec<(f64, f64)> {
        report.eigenvalues.iter().filter(|e| e.is_mass_mode == mass).map(|e| (e.re, e.im)).collect()
    };
    out.write(
        "spectrum.svg",
        line_plot(
            "rightmost eigenvalues",
            "Re",
            "Im",
            vec![Series::markers("mass mode", pts(true)), Series::markers("others", pts(false))],
        ),
    )?;
    let gc = gradient_check(&g, &cfg.params, &[1e-2, 5e-3, 2.5e-3]);
    out.json("gradient_check.json", &gc)?;

    let mut summary = json!({
        "j": g.j,
        "gap": report.gap,
        "mass_mode_defect": report.mass_mode_defect,
        "scale": report.scale,
        "column_sum_defect": op.column_sum_defect(),
        "converged": report.converged,
        "gradient_check_ratios": gc.ratios,
    });
    if let Some(amp) = s.decay_amplitude {
        let t_final = s.decay_t_final.unwrap_or(12.0);
        let h = default_perturbation(&g.g, amp, &cfg.weight)?;
        let dt = 0.5 * Stencil::new(cfg.grid, &cfg.params).max_stable_dt(g.j);
        let stride = ((t_final / dt).ceil() as usize / 400).max(1);
        let fit = measure_decay(&g.g, &h, &cfg.params, t_final, dt, stride, &cfg.weight)?;
        let mut csv = String::from("t,distance\n");
        for (t, d) in fit.times.iter().zip(&fit.distances) {
            csv += &format!("{t},{d:e}\n");
        }
        out.write("decay.csv", csv)?;
        let pts: Vec<(f64, f64)> = fit.times.iter().copied().zip(fit.distances.iter().copied()).collect();
        out.write(
            "decay.svg",
            Plot {
                title: "distance to the stationary solution".into(),
                x_label: "t".into(),
                y_label: "L2(m) distance".into(),
                log_y: true,
                series: vec![Series::line("distance", pts)],
                ..Default::default()
            }
            .render(),
        )?;
        summary["decay"] = json!({ "amplitude": amp, "rate": fit.rate, "window": fit.window });
    }
    Ok(summary)
}

pub fn chaos_rate(cfg: &Resolved, out: &mut Outputs) -> Result<Value, CliError> {
    let s = &cfg.file.chaos;
    let n_list = s.n_list.clone().unwrap_or_else(|| vec![100, 200, 400, 800, 1600, 3200]);
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(CliError::Config("chaos.n_list must be nonempty with entries >= 1".into()));
    }
    let trials = s.trials.unwrap_or(64);
    nonzero_opt("chaos.trials", Some(trials))?;
    let law = s.initial.unwrap_or_else(default_law);
    check_law("chaos.initial", &law)?;
    let t_final = cfg.file.run.t_final.unwrap_or(1.0);
    let dt = cfg.file.run.dt.unwrap_or(1e-3);
    positive_opt("pde.boundary_tol", cfg.file.pde.boundary_tol)?;

    // mean voltage of the nonlinear process from the PDE
    let f0 = law.density(cfg.grid)?;
    let pde_step = auto_dt(cfg.grid, &cfg.params, f0.mean_voltage()?);
    let (_, series) = solve_with(
        f0,
        &cfg.params,
        &SolveOptions::new(t_final, pde_step)
            .with_stride(1)
            .with_weight(cfg.weight)
            .with_boundary_tol(cfg.file.pde.boundary_tol.unwrap_or(1e-8)),
        |_, _| {},
    )?;
    let path = ReferencePath::new(
        series.records.iter().map(|r| r.t).collect(),
        series.records.iter().map(|r| r.j).collect(),
    );
    let ccfg = ChaosConfig {
        n_list,
        t_final,
        dt,
        trials,
        stride: cfg.file.run.stride.unwrap_or(100),
        initial: law,
        seed: cfg.seed,
    };
    let table = chaos_experiment(&ccfg, &cfg.params, &|t| path.at(t))?;
    out.csv("chaos.csv", |w| table.write_csv(w))?;
    let fin = table.final_rows();
    let pts: Vec<(f64, f64)> = fin.iter().map(|r| (r.n as f64, r.mse)).collect();
    let mut series = vec![Series::markers("alpha(T)", pts.clone())];
    if table.slope.is_finite() && !pts.is_empty() {
        // reference line through the geometric centre with the fitted slope
        let cx = pts.iter().map(|p| p.0.ln()).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p.1.ln()).sum::<f64>() / pts.len() as f64;
        let line = [pts[0].0, pts[pts.len() - 1].0]
            .iter()
            .map(|&n| (n, (cy + table.slope * (n.ln() - cx)).exp()))
            .collect();
        series.push(Series::line(format!("slope {:.3}", table.slope), line));
    }
    out.write(
        "chaos.svg",
        Plot {
            title: format!("propagation of chaos at T = {t_final}"),
            x_label: "N".into(),
            y_label: "mean squared distance".into(),
            log_x: true,
            log_y: true,
            series,
        }
        .render(),
    )?;
    Ok(json!({ "slope": table.slope, "final": fin, "trials": trials, "t_final": t_final, "dt": dt }))
}

fn scan_config(cfg: &Resolved) -> Result<ScanConfig, CliError> {
    let s = &cfg.file.regime;
    let d = ScanConfig::default();
    let td = Thresholds::default();
    for (name, v) in [
        ("regime.init_var", s.init_var),
        ("regime.spectral_ratio", s.spectral_ratio),
        ("regime.separation", s.separation),
        ("regime.sample_dt", s.sample_dt),
    ] {
        positive_opt(name, v)?;
    }
    nonzero_opt("regime.n", s.n)?;
    nonzero_opt("regime.seeds", s.seeds)?;
    nonzero_opt("regime.min_samples", s.min_samples)?;
    if let Some(b) = s.burn_in {
        if !(0.0..1.0).contains(&b) {
            return Err(CliError::Config(format!("regime.burn_in = {b} must be in [0, 1)")));
        }
    }
    if let Some(k) = s.segments {
        if k < 2 {
            return Err(CliError::Config("regime.segments must be >= 2".into()));
        }
    }
    let j_list = s.j_list.clone().unwrap_or(d.j_list);
    if j_list.is_empty() || j_list.iter().any(|j| !(*j >= 0.0 && j.is_finite())) {
        return Err(CliError::Config("regime.j_list must be nonempty with entries >= 0".into()));
    }
    Ok(ScanConfig {
        j_list,
        n: s.n.unwrap_or(d.n),
        t_final: cfg.file.run.t_final.unwrap_or(d.t_final),
        dt: cfg.file.run.dt.unwrap_or(d.dt),
        seeds: s.seeds.unwrap_or(d.seeds),
        seed: cfg.seed,
        init_var: s.init_var.unwrap_or(d.init_var),
        thresholds: Thresholds {
            spectral_ratio: s.spectral_ratio.unwrap_or(td.spectral_ratio),
            separation: s.separation.unwrap_or(td.separation),
            burn_in: s.burn_in.unwrap_or(td.burn_in),
            sample_dt: s.sample_dt.unwrap_or(td.sample_dt),
            segments: s.segments.unwrap_or(td.segments),
            min_samples: s.min_samples.unwrap_or(td.min_samples),
        },
    })
}

pub fn regime_scan_cmd(cfg: &Resolved, out: &mut Outputs) -> Result<Value, CliError> {
    let sc = scan_config(cfg)?;
    let traces = regime_scan_traces(&cfg.params, &sc)?;
    let rows: Vec<_> = traces.iter().map(|(r, _)| r.clone()).collect();
    out.csv("regime.csv", |w| write_scan_csv(&rows, w))?;

    // one panel per J: both initializations of the first seed
    let t0 = sc.thresholds.burn_in * sc.t_final;
    let panels: Vec<String> = sc
        .j_list
        .iter()
        .filter_map(|&j| traces.iter().find(|(r, _)| r.j == j && r.seed_index == 0))
        .map(|(r, [a, b])| {
            let pts = |s: &[f64]| -> Vec<(f64, f64)> {
                s.iter().enumerate().map(|(k, v)| (t0 + k as f64 * sc.thresholds.sample_dt, *v)).collect()
            };
            line_plot(
                &format!("J = {}: {}", r.j, r.verdict.regime),
                "t",
                "mean v",
                vec![Series::line("start a", pts(a)), Series::line("start b", pts(b))],
            )
        })
        .collect();
    out.write("regime.svg", crate::svg::stack(&panels))?;
    let mut per_j = serde_json::Map::new();
    for &j in &sc.j_list {
        let names: Vec<&str> = rows.iter().filter(|r| r.j == j).map(|r| r.verdict.regime.name()).collect();
        per_j.insert(j.to_string(), json!(names));
    }
    Ok(json!({ "config": sc, "regimes": per_j }))
}
