//! Conservative finite-volume discretization of the kinetic operator
//!
//! ```text
//! Q[j] f = ∂x(A f) + ∂v(B(j) f) + D ∂vv f
//! ```
//!
//! Transport is first-order upwind on the cell faces with zero flux through
//! the outer boundary; diffusion is the standard three-point stencil with
//! zero-flux ends. The explicit part of a time step, the implicit diffusion
//! solve and the assembled sparse operator all read the same face
//! velocities, so a density left unchanged by [`Stepper::step`] at frozen `j`
//! is exactly a null vector of [`Stencil::assemble`].

use rayon::prelude::*;

use super::grid::{Density, Grid2D};
use crate::error::{Error, Result};
use crate::linalg::{BandMatrix, Tridiagonal};
use crate::model::{drift_a, drift_b, ModelParams};

/// Phase-space velocity field and voltage diffusion of a kinetic equation
/// `∂t f + ∂x(ẋ f) + ∂v(v̇ f) = D ∂vv f`.
///
/// The voltage velocity must be affine in the mean voltage `j`, with slope
/// [`PhaseField::velocity_v_slope`].
pub trait PhaseField: Sync {
    fn velocity_x(&self, x: f64, v: f64) -> f64;
    fn velocity_v(&self, x: f64, v: f64, j: f64) -> f64;
    /// `∂ velocity_v / ∂ j`.
    fn velocity_v_slope(&self) -> f64;
    fn diffusion(&self) -> f64;
}

impl PhaseField for ModelParams {
    #[inline]
    fn velocity_x(&self, x: f64, v: f64) -> f64 {
        -drift_a(x, v, self)
    }

    #[inline]
    fn velocity_v(&self, x: f64, v: f64, j: f64) -> f64 {
        -drift_b(x, v, j, self)
    }

    fn velocity_v_slope(&self) -> f64 {
        -self.coupling.factor() * self.eps
    }

    fn diffusion(&self) -> f64 {
        ModelParams::diffusion(self)
    }
}

/// Zero transport, constant voltage diffusion.
#[derive(Debug, Clone, Copy)]
pub struct PureDiffusion {
    pub d: f64,
}

impl PhaseField for PureDiffusion {
    fn velocity_x(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn velocity_v(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
    fn velocity_v_slope(&self) -> f64 {
        0.0
    }
    fn diffusion(&self) -> f64 {
        self.d
    }
}

#[inline]
fn upwind(u: f64, left: f64, right: f64) -> f64 {
    if u >= 0.0 {
        u * left
    } else {
        u * right
    }
}

/// Face velocities of a field on a grid.
#[derive(Debug, Clone)]
pub struct Stencil {
    grid: Grid2D,
    /// `x`-face velocities, `(nx + 1) * nv`, face `k` of row `iv` at `k * nv + iv`.
    ux: Vec<f64>,
    /// `v`-face velocities at `j = 0`, `nx * (nv + 1)`, face `k` of row `ix`
    /// at `ix * (nv + 1) + k`. Boundary faces are zero.
    wv0: Vec<f64>,
    slope: f64,
    diffusion: f64,
}

impl Stencil {
    pub fn new(grid: Grid2D, field: &dyn PhaseField) -> Self {
        let (nx, nv) = (grid.nx, grid.nv);
        let mut ux = vec![0.0; (nx + 1) * nv];
        for k in 1..nx {
            let x = grid.x_face(k);
            for iv in 0..nv {
                ux[k * nv + iv] = field.velocity_x(x, grid.v_center(iv));
            }
        }
        let mut wv0 = vec![0.0; nx * (nv + 1)];
        for ix in 0..nx {
            let x = grid.x_center(ix);
            for k in 1..nv {
                wv0[ix * (nv + 1) + k] = field.velocity_v(x, grid.v_face(k), 0.0);
            }
        }
        Self {
            grid,
            ux,
            wv0,
            slope: field.velocity_v_slope(),
            diffusion: field.diffusion(),
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    #[inline]
    fn wv(&self, ix: usize, k: usize, j: f64) -> f64 {
        if k == 0 || k == self.grid.nv {
            0.0
        } else {
            self.wv0[ix * (self.grid.nv + 1) + k] + self.slope * j
        }
    }

    /// Largest outflow rate over all cells and where it occurs.
    pub fn max_outflow_rate(&self, j: f64) -> (f64, usize, usize) {
        let g = &self.grid;
        let (dx, dv) = (g.dx(), g.dv());
        (0..g.nx)
            .into_par_iter()
            .map(|ix| {
                let mut best = (0.0f64, ix, 0usize);
                for iv in 0..g.nv {
                    let out_x = self.ux[(ix + 1) * g.nv + iv].max(0.0) - self.ux[ix * g.nv + iv].min(0.0);
                    let out_v = self.wv(ix, iv + 1, j).max(0.0) - self.wv(ix, iv, j).min(0.0);
                    let r = out_x / dx + out_v / dv;
                    if r > best.0 {
                        best = (r, ix, iv);
                    }
                }
                best
            })
            .reduce(|| (0.0, 0, 0), |a, b| if b.0 > a.0 { b } else { a })
    }

    /// Largest explicit step keeping the transport update positive, with a
    /// 0.9 safety factor.
    pub fn max_stable_dt(&self, j: f64) -> f64 {
        let (r, _, _) = self.max_outflow_rate(j);
        if r > 0.0 {
            0.9 / r
        } else {
            f64::INFINITY
        }
    }

    pub fn check_cfl(&self, dt: f64, j: f64) -> Result<()> {
        let (r, ix, iv) = self.max_outflow_rate(j);
        let bound = if r > 0.0 { 0.9 / r } else { f64::INFINITY };
        if dt > bound {
            return Err(Error::Cfl { dt, bound, ix, iv });
        }
        Ok(())
    }

    /// Transport part `T[j] f` of the operator.
    pub fn apply_transport(&self, f: &[f64], out: &mut [f64], j: f64) {
        let g = &self.grid;
        let (nx, nv) = (g.nx, g.nv);
        let (idx, idv) = (1.0 / g.dx(), 1.0 / g.dv());
        out.par_chunks_mut(nv).enumerate().for_each(|(ix, row)| {
            let cur = &f[ix * nv..(ix + 1) * nv];
            for iv in 0..nv {
                // x faces: k = ix (left) and ix + 1 (right)
                let fl = if ix > 0 {
                    upwind(self.ux[ix * nv + iv], f[(ix - 1) * nv + iv], cur[iv])
                } else {
                    0.0
                };
                let fr = if ix + 1 < nx {
                    upwind(self.ux[(ix + 1) * nv + iv], cur[iv], f[(ix + 1) * nv + iv])
                } else {
                    0.0
                };
                let gl = if iv > 0 {
                    upwind(self.wv(ix, iv, j), cur[iv - 1], cur[iv])
                } else {
                    0.0
                };
                let gr = if iv + 1 < nv {
                    upwind(self.wv(ix, iv + 1, j), cur[iv], cur[iv + 1])
                } else {
                    0.0
                };
                row[iv] = -(fr - fl) * idx - (gr - gl) * idv;
            }
        });
    }

    /// Diffusion part `D ∂vv f` with zero-flux ends.
    pub fn apply_diffusion(&self, f: &[f64], out: &mut [f64]) {
        let nv = self.grid.nv;
        let r = self.diffusion / (self.grid.dv() * self.grid.dv());
        out.par_chunks_mut(nv).enumerate().for_each(|(ix, row)| {
            let cur = &f[ix * nv..(ix + 1) * nv];
            for iv in 0..nv {
                let mut acc = 0.0;
                if iv > 0 {
                    acc += cur[iv - 1] - cur[iv];
                }
                if iv + 1 < nv {
                    acc += cur[iv + 1] - cur[iv];
                }
                row[iv] = r * acc;
            }
        });
    }

    /// Full operator `Q[j] f`.
    pub fn apply(&self, f: &[f64], out: &mut [f64], j: f64) {
        let mut diff = vec![0.0; f.len()];
        self.apply_transport(f, out, j);
        self.apply_diffusion(f, &mut diff);
        out.iter_mut().zip(&diff).for_each(|(o, d)| *o += d);
    }

    /// `∂ (Q[j] f) / ∂ j`: divergence of the upwinded `v`-flux sensitivity.
    pub fn transport_j_derivative(&self, f: &[f64], j: f64) -> Vec<f64> {
        let g = &self.grid;
        let nv = g.nv;
        let idv = 1.0 / g.dv();
        let mut out = vec![0.0; f.len()];
        out.par_chunks_mut(nv).enumerate().for_each(|(ix, row)| {
            let cur = &f[ix * nv..(ix + 1) * nv];
            let face = |k: usize| -> f64 {
                if k == 0 || k == nv {
                    return 0.0;
                }
                let w = self.wv(ix, k, j);
                self.slope * if w >= 0.0 { cur[k - 1] } else { cur[k] }
            };
            for iv in 0..nv {
                row[iv] = -(face(iv + 1) - face(iv)) * idv;
            }
        });
        out
    }

    /// Assembles `Q[j]` as a band matrix (bandwidth `nv`).
    pub fn assemble(&self, j: f64) -> BandMatrix {
        let g = &self.grid;
        let (nx, nv) = (g.nx, g.nv);
        let (idx, idv) = (1.0 / g.dx(), 1.0 / g.dv());
        let r = self.diffusion * idv * idv;
        let mut m = BandMatrix::zeros(g.len(), nv, nv);
        // flux through a face from `lo` to `hi` with velocity u
        let face = |m: &mut BandMatrix, lo: usize, hi: usize, u: f64, inv_h: f64| {
            let (up, dn) = (u.max(0.0) * inv_h, u.min(0.0) * inv_h);
            m.add(hi, lo, up);
            m.add(hi, hi, dn);
            m.add(lo, lo, -up);
            m.add(lo, hi, -dn);
        };
        for ix in 0..nx {
            for iv in 0..nv {
                let c = ix * nv + iv;
                if ix + 1 < nx {
                    face(&mut m, c, c + nv, self.ux[(ix + 1) * nv + iv], idx);
                }
                if iv + 1 < nv {
                    face(&mut m, c, c + 1, self.wv(ix, iv + 1, j), idv);
                    m.add(c, c + 1, r);
                    m.add(c + 1, c, r);
                    m.add(c, c, -r);
                    m.add(c + 1, c + 1, -r);
                }
            }
        }
        m
    }
}

/// One-step integrator: explicit upwind transport, backward-Euler diffusion.
#[derive(Debug, Clone)]
pub struct Stepper {
    stencil: Stencil,
    implicit: Option<(f64, Tridiagonal)>,
    scratch: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: Grid2D, field: &dyn PhaseField) -> Self {
        Self::from_stencil(Stencil::new(grid, field))
    }

    pub fn from_stencil(stencil: Stencil) -> Self {
        let n = stencil.grid.len();
        Self {
            stencil,
            implicit: None,
            scratch: vec![0.0; n],
        }
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    fn diffusion_solver(&mut self, dt: f64) -> &Tridiagonal {
        let stale = !matches!(&self.implicit, Some((h, _)) if *h == dt);
        if stale {
            let nv = self.stencil.grid.nv;
            let r = dt * self.stencil.diffusion / (self.stencil.grid.dv().powi(2));
            let lower: Vec<f64> = (0..nv).map(|i| if i == 0 { 0.0 } else { -r }).collect();
            let upper: Vec<f64> = (0..nv).map(|i| if i + 1 == nv { 0.0 } else { -r }).collect();
            let diag: Vec<f64> = (0..nv)
                .map(|i| 1.0 + r * (if i == 0 { 0.0 } else { 1.0 } + if i + 1 == nv { 0.0 } else { 1.0 }))
                .collect();
            self.implicit = Some((dt, Tridiagonal::new(&lower, &diag, &upper)));
        }
        &self.implicit.as_ref().expect("just set").1
    }

    /// Advances `f` by `dt` with the mean voltage frozen at `j`.
    pub fn step(&mut self, f: &mut Density, dt: f64, j: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt = {dt} must be > 0")));
        }
        if f.grid() != self.stencil.grid() {
            return Err(Error::GridMismatch("density and stepper grids differ".into()));
        }
        self.stencil.check_cfl(dt, j)?;
        let nv = self.stencil.grid.nv;
        let mut scratch = std::mem::take(&mut self.scratch);
        self.stencil.apply_transport(f.values(), &mut scratch, j);
        let solver = self.diffusion_solver(dt).clone();
        let values = f.values_mut();
        values
            .par_chunks_mut(nv)
            .zip(scratch.par_chunks(nv))
            .for_each(|(row, tr)| {
                for (v, t) in row.iter_mut().zip(tr) {
                    *v += dt * t;
                }
                solver.solve_in_place(row);
            });
        self.scratch = scratch;
        let max = f.max_value();
        let (k, min) = f
            .values()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
        if min < -1e-14 * max {
            return Err(Error::NegativeDensity {
                value: min,
                ix: k / nv,
                iv: k % nv,
            });
        }
        // rounding-level negatives go to zero, and so do subnormals: decaying
        // tails otherwise slow every later step several-fold
        if min < f64::MIN_POSITIVE {
            f.values_mut().iter_mut().for_each(|v| {
                if *v < f64::MIN_POSITIVE {
                    *v = 0.0;
                }
            });
        }
        f.time += dt;
        Ok(())
    }
}

/// Single step with a freshly built stepper.
pub fn step(f: &Density, dt: f64, field: &dyn PhaseField, j: f64) -> Result<Density> {
    let mut out = f.clone();
    Stepper::new(*f.grid(), field).step(&mut out, dt, j)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MeanVoltage, Preset};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> Grid2D {
        Grid2D::new(-4.0, 4.0, -3.0, 3.5, 24, 28).unwrap()
    }

    #[test]
    fn uniform_density_is_fixed_without_drift() {
        let g = grid();
        let f = Density::uniform(g);
        let out = step(&f, 1e-3, &PureDiffusion { d: 1.0 }, 0.0).unwrap();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn assembled_operator_matches_apply_and_conserves() {
        let g = grid();
        let p = Preset::WeakCoupling.params().with_eps(0.3);
        let s = Stencil::new(g, &p);
        let f = Density::gaussian(g, [0.3, -0.2], [[1.0, 0.2], [0.2, 0.8]]).unwrap();
        let m = s.assemble(0.4);
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        s.apply(f.values(), &mut a, 0.4);
        m.matvec(f.values(), &mut b);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
        let diag_scale = (0..g.len()).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
        for c in m.column_sums() {
            assert!(c.abs() <= 1e-13 * diag_scale);
        }
    }

    #[test]
    fn j_derivative_matches_finite_difference() {
        let g = grid();
        let p = Preset::WeakCoupling.params().with_eps(0.5);
        let s = Stencil::new(g, &p);
        let f = Density::gaussian(g, [0.1, 0.2], [[0.9, 0.1], [0.1, 0.7]]).unwrap();
        let j = 0.37;
        let d = s.transport_j_derivative(f.values(), j);
        let h = 1e-6;
        let (mut lo, mut hi) = (vec![0.0; g.len()], vec![0.0; g.len()]);
        s.apply(f.values(), &mut lo, j - h);
        s.apply(f.values(), &mut hi, j + h);
        for k in 0..g.len() {
            let fd = (hi[k] - lo[k]) / (2.0 * h);
            assert!((fd - d[k]).abs() < 1e-6 * (1.0 + d[k].abs()), "{fd} vs {}", d[k]);
        }
        assert!(d.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn cfl_violation_names_the_cell() {
        let g = grid();
        let p = Preset::WeakCoupling.params();
        let s = Stencil::new(g, &p);
        let bound = s.max_stable_dt(0.0);
        let f = Density::uniform(g);
        let err = step(&f, 2.0 * bound, &p, 0.0).unwrap_err();
        match err {
            Error::Cfl { bound: b, ix, iv, .. } => {
                assert_relative_eq!(b, bound);
                assert!(ix < g.nx && iv < g.nv);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(step(&f, 0.99 * bound, &p, 0.0).is_ok());
    }

    #[test]
    fn heat_kernel_variance_growth() {
        // implicit diffusion raises the discrete second moment by 2 D dt per step
        let g = Grid2D::new(-1.0, 1.0, -10.0, 10.0, 4, 400).unwrap();
        let mut f = Density::gaussian(g, [0.0, 0.0], [[1.0, 0.0], [0.0, 0.25]]).unwrap();
        let field = PureDiffusion { d: 1.0 };
        let mut st = Stepper::new(g, &field);
        let v0 = f.moments().unwrap().var_v;
        for _ in 0..200 {
            st.step(&mut f, 5e-3, 0.0).unwrap();
        }
        let v1 = f.moments().unwrap().var_v;
        assert_relative_eq!(v1, v0 + 2.0 * 1.0, max_relative = 1e-3);
    }

    #[test]
    fn zero_dt_rejected() {
        let f = Density::uniform(grid());
        assert!(step(&f, 0.0, &PureDiffusion { d: 1.0 }, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn step_conserves_mass_and_positivity(
            eps in 0.0..1.0f64, lambda in -1.0..1.0f64, i0 in -0.5..0.5f64,
            mx in -1.0..1.0f64, mv in -1.0..1.0f64, frac in 0.1..1.0f64,
        ) {
            let g = grid();
            let p = ModelParams::new(1.0, 1.0, lambda, i0, eps, 1.2).unwrap();
            let mut f = Density::gaussian(g, [mx, mv], [[0.5, 0.0], [0.0, 0.4]]).unwrap();
            let mut st = Stepper::new(g, &p);
            let m0 = f.mass();
            for _ in 0..5 {
                let j = f.mean_voltage().unwrap();
                let dt = frac * st.stencil().max_stable_dt(j);
                st.step(&mut f, dt, j).unwrap();
                prop_assert!(f.min_value() >= 0.0);
            }
            prop_assert!((f.mass() - m0).abs() <= 1e-13 * m0);
        }
    }
}
