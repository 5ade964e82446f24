//! Checks that cut across modules: file formats, the PDE against closed-form
//! solutions, and particles against the PDE.

use fhn_kinetic::model::{MeanVoltage, ModelParams, Preset};
use fhn_kinetic::particle::{empirical_density, init_ensemble, simulate, CouplingSpec, InitialLaw, Recorder};
use fhn_kinetic::pde::{solve, Density, Grid2D, PhaseField, SolveOptions, Stencil};
use fhn_kinetic::stationary::{solve_fixed_point, StationaryOptions, StationaryResult};
use proptest::prelude::*;

/// Ornstein-Uhlenbeck in `v`, nothing in `x`: `dv = -v dt + √(2D) dW`.
struct OrnsteinUhlenbeck {
    d: f64,
}

impl PhaseField for OrnsteinUhlenbeck {
    fn velocity_x(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn velocity_v(&self, _: f64, v: f64, _: f64) -> f64 {
        -v
    }
    fn velocity_v_slope(&self) -> f64 {
        0.0
    }
    fn diffusion(&self) -> f64 {
        self.d
    }
}

fn gaussian_law(mean: [f64; 2], var: f64) -> InitialLaw {
    InitialLaw::Gaussian {
        mean,
        cov: [[var, 0.0], [0.0, var]],
    }
}

/// Mean and variance in `v` at `t = 1` from `N(1, 0.1)` with `D = 0.5`.
fn ou_moments(nv: usize) -> (f64, f64) {
    let grid = Grid2D::new(-1.0, 1.0, -4.0, 5.0, 4, nv).unwrap();
    let f0 = Density::from_fn(grid, |_, v| (-(v - 1.0f64).powi(2) / 0.2).exp());
    let field = OrnsteinUhlenbeck { d: 0.5 };
    let dt = 0.5 * Stencil::new(grid, &field).max_stable_dt(0.0);
    // every x cell touches the x walls, so only the v tails are checked
    let (f, _) = solve(f0, &field, &SolveOptions::new(1.0, dt).with_boundary_tol(1.0)).unwrap();
    let edge: f64 = (0..grid.nx).map(|ix| f.at(ix, 0) + f.at(ix, grid.nv - 1)).sum::<f64>() * grid.cell_area();
    assert!(edge < 1e-10);
    let m = f.moments().unwrap();
    (m.mean_v, m.var_v)
}

#[test]
fn ornstein_uhlenbeck_moments_converge_at_first_order() {
    // mean(t) = m0 e^{-t}, var(t) = D + (s0 - D) e^{-2t}
    let mean = (-1.0f64).exp();
    let var = 0.5 - 0.4 * (-2.0f64).exp();
    let (m1, v1) = ou_moments(360);
    let (m2, v2) = ou_moments(720);
    let (em1, em2) = ((m1 - mean).abs(), (m2 - mean).abs());
    let (ev1, ev2) = ((v1 - var).abs(), (v2 - var).abs());
    assert!(em2 < 1e-2 * mean && ev2 < 2e-2 * var, "{m2} vs {mean}, {v2} vs {var}");
    // upwind transport is first order in the cell width
    assert!((em1 / em2 - 2.0).abs() < 0.3, "{em1} / {em2}");
    assert!(ev1 > ev2, "{ev1} vs {ev2}");
}

#[test]
fn particles_and_pde_agree_on_short_runs() {
    let p = Preset::WeakCoupling.params();
    let law = gaussian_law([0.3, 0.5], 0.2);
    let t = 0.5;

    let grid = Grid2D::default_domain().with_resolution(96, 96);
    let dt = 0.5 * Stencil::new(grid, &p).max_stable_dt(0.5);
    let (f, _) = solve(law.density(grid).unwrap(), &p, &SolveOptions::new(t, dt).with_boundary_tol(1e-6)).unwrap();
    let pde = f.moments().unwrap();

    let mut ens = init_ensemble(20_000, &law, 5).unwrap();
    let tr = simulate(&mut ens, t, 1e-3, &p, &CouplingSpec::from_params(&p), &Recorder::every(100)).unwrap();
    let last = tr.rows.last().unwrap();
    // statistical error is about 0.005 at this N
    assert!((last.mean_v - pde.mean_v).abs() < 0.03, "{} vs {}", last.mean_v, pde.mean_v);
    assert!((last.mean_x - pde.mean_x).abs() < 0.03, "{} vs {}", last.mean_x, pde.mean_x);
    assert!((last.var_v / pde.var_v - 1.0).abs() < 0.1, "{} vs {}", last.var_v, pde.var_v);
}

#[test]
fn stationary_solutions_survive_a_save_load_cycle() {
    let p = Preset::WeakCoupling.params();
    let grid = Grid2D::default_domain().with_resolution(16, 20);
    let g = solve_fixed_point(0.0, &grid, &p, &StationaryOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    g.save(dir.path(), "g").unwrap();
    let back = StationaryResult::load(dir.path(), "g").unwrap();
    assert_eq!(back.g, g.g);
    assert_eq!(back.j, g.j);
    assert_eq!(back.residual_l1, g.residual_l1);
    assert_eq!(back.fixed_point_gap, g.fixed_point_gap);
    assert_eq!(back.j_history, g.j_history);
    assert_eq!((back.iterations, back.seed_j), (g.iterations, g.seed_j));
}

#[test]
fn stationary_mean_voltage_is_its_own_coupling() {
    let p = Preset::WeakCoupling.params().with_eps(0.5);
    let grid = Grid2D::default_domain().with_resolution(20, 24);
    let g = solve_fixed_point(0.3, &grid, &p, &StationaryOptions::default()).unwrap();
    assert!((g.g.mean_voltage().unwrap() - g.j).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn density_text_format_round_trips(
        nx in 4usize..8,
        nv in 4usize..8,
        seed in proptest::collection::vec(0.0f64..10.0, 64),
        time in 0.0f64..100.0,
    ) {
        let grid = Grid2D::new(-1.5, 2.0, -0.25, 3.0, nx, nv).unwrap();
        let values: Vec<f64> = seed[..nx * nv].to_vec();
        let f = Density::new(grid, values, time).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = Density::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn coupled_runs_conserve_mass(
        mx in -1.0f64..1.0,
        mv in -1.0f64..1.0,
        eps in 0.0f64..1.5,
    ) {
        let p: ModelParams = Preset::WeakCoupling.params().with_eps(eps);
        let grid = Grid2D::default_domain().with_resolution(24, 24);
        let f0 = gaussian_law([mx, mv], 0.2).density(grid).unwrap();
        let dt = 0.5 * Stencil::new(grid, &p).max_stable_dt(mv);
        let opts = SolveOptions::new(40.0 * dt, dt).with_stride(10).with_boundary_tol(1.0);
        let (_, series) = solve(f0, &p, &opts).unwrap();
        for r in &series.records {
            prop_assert!((r.mass - 1.0).abs() < 1e-12);
            prop_assert!(r.min_f >= 0.0);
        }
    }

    #[test]
    fn histogram_mass_is_the_in_grid_fraction(n in 1usize..400, seed in any::<u64>()) {
        let ens = init_ensemble(n, &gaussian_law([0.0, 0.0], 1.0), seed).unwrap();
        let grid = Grid2D::new(-1.0, 1.0, -1.0, 1.0, 7, 9).unwrap();
        let inside = ens
            .x
            .iter()
            .zip(&ens.v)
            .filter(|(x, v)| grid.locate(**x, **v).is_some())
            .count();
        if inside > 0 {
            let h = empirical_density(&ens, &grid).unwrap();
            prop_assert!((h.mass() - inside as f64 / n as f64).abs() < 1e-12);
        }
    }
}
