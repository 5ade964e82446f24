//! Truncated phase-space rectangle and cell-centred densities on it.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MeanVoltage;

/// Cell-centred tensor grid on `[x_min, x_max] × [v_min, v_max]`.
///
/// Storage is row-major with `x` as the slow index: cell `(ix, iv)` lives at
/// `ix * nv + iv`, so every fixed-`x` row is contiguous in `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub nx: usize,
    pub nv: usize,
}

impl Grid2D {
    pub fn new(x_min: f64, x_max: f64, v_min: f64, v_max: f64, nx: usize, nv: usize) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            v_min,
            v_max,
            nx,
            nv,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max) || !(self.v_min < self.v_max) {
            return Err(Error::InvalidParams(format!(
                "grid bounds must satisfy x_min < x_max and v_min < v_max, got [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.v_min, self.v_max
            )));
        }
        if self.nx < 4 || self.nv < 4 {
            return Err(Error::InvalidParams(format!(
                "grid needs at least 4 cells per direction, got {} x {}",
                self.nx, self.nv
            )));
        }
        Ok(())
    }

    /// `[-4, 4] × [-3, 3.5]` at 128 × 128.
    pub fn default_domain() -> Self {
        Self {
            x_min: -4.0,
            x_max: 4.0,
            v_min: -3.0,
            v_max: 3.5,
            nx: 128,
            nv: 128,
        }
    }

    pub fn with_resolution(mut self, nx: usize, nv: usize) -> Self {
        self.nx = nx;
        self.nv = nv;
        self
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        (self.v_max - self.v_min) / self.nv as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dv()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iv: usize) -> usize {
        ix * self.nv + iv
    }

    #[inline]
    pub fn x_center(&self, ix: usize) -> f64 {
        self.x_min + (ix as f64 + 0.5) * self.dx()
    }

    #[inline]
    pub fn v_center(&self, iv: usize) -> f64 {
        self.v_min + (iv as f64 + 0.5) * self.dv()
    }

    /// Position of face `k` in `x`, `k = 0..=nx`.
    #[inline]
    pub fn x_face(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    /// Position of face `k` in `v`, `k = 0..=nv`.
    #[inline]
    pub fn v_face(&self, k: usize) -> f64 {
        self.v_min + k as f64 * self.dv()
    }

    /// Cell containing `(x, v)`, if inside the rectangle.
    pub fn locate(&self, x: f64, v: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x < self.x_max && v >= self.v_min && v < self.v_max) {
            return None;
        }
        let ix = (((x - self.x_min) / self.dx()) as usize).min(self.nx - 1);
        let iv = (((v - self.v_min) / self.dv()) as usize).min(self.nv - 1);
        Some((ix, iv))
    }

    pub fn is_boundary_cell(&self, ix: usize, iv: usize) -> bool {
        ix == 0 || iv == 0 || ix + 1 == self.nx || iv + 1 == self.nv
    }

    /// Swap the roles of `x` and `v` (used by storage-order tests).
    pub fn transposed(&self) -> Self {
        Self {
            x_min: self.v_min,
            x_max: self.v_max,
            v_min: self.x_min,
            v_max: self.x_max,
            nx: self.nv,
            nv: self.nx,
        }
    }
}

impl Default for Grid2D {
    fn default() -> Self {
        Self::default_domain()
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Summary moments of a density (normalised by its mass).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub mean_x: f64,
    pub mean_v: f64,
    pub var_x: f64,
    pub var_v: f64,
    pub cov_xv: f64,
}

/// Nonnegative cell-centred density on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    grid: Grid2D,
    values: Vec<f64>,
    pub time: f64,
}

impl Density {
    pub fn new(grid: Grid2D, values: Vec<f64>, time: f64) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {} x {} grid",
                values.len(),
                grid.nx,
                grid.nv
            )));
        }
        if let Some((k, &v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "density value {v} at cell ({}, {}) is negative or not finite",
                k / grid.nv,
                k % grid.nv
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>, time: f64) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, time }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len()], 0.0)
    }

    /// Samples `f` at the cell centres (clamping negatives to zero).
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            let x = grid.x_center(ix);
            for iv in 0..grid.nv {
                values.push(f(x, grid.v_center(iv)).max(0.0));
            }
        }
        Self::from_raw(grid, values, 0.0)
    }

    /// Bivariate Gaussian sampled at cell centres, renormalised to mass 1.
    pub fn gaussian(grid: Grid2D, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(cov[0][0] > 0.0 && det > 0.0) || (cov[0][1] - cov[1][0]).abs() > 1e-12 {
            return Err(Error::InvalidParams(
                "covariance must be symmetric positive definite".into(),
            ));
        }
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let mut d = Self::from_fn(grid, |x, v| {
            let (dx, dv) = (x - mean[0], v - mean[1]);
            let q = dx * (inv[0][0] * dx + inv[0][1] * dv) + dv * (inv[1][0] * dx + inv[1][1] * dv);
            (-0.5 * q).exp()
        });
        d.normalize()?;
        Ok(d)
    }

    /// Mass `1/(Δx Δv)` in the single cell containing `(x, v)`.
    pub fn point_mass(grid: Grid2D, x: f64, v: f64) -> Result<Self> {
        let (ix, iv) = grid
            .locate(x, v)
            .ok_or_else(|| Error::InvalidParams(format!("point ({x}, {v}) outside the grid")))?;
        let mut d = Self::zeros(grid);
        d.values[grid.index(ix, iv)] = 1.0 / grid.cell_area();
        Ok(d)
    }

    pub fn uniform(grid: Grid2D) -> Self {
        let area = (grid.x_max - grid.x_min) * (grid.v_max - grid.v_min);
        Self::from_raw(grid, vec![1.0 / area; grid.len()], 0.0)
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iv: usize) -> f64 {
        self.values[self.grid.index(ix, iv)]
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.grid.cell_area()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rescales to unit mass.
    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::DegenerateDensity { mass: m });
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|v| v * c).collect(), self.time)
    }

    /// Discrete `L¹` distance `Σ |f - g| Δx Δv`.
    pub fn l1_distance(&self, other: &Density) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(compensated_sum(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()))
            * self.grid.cell_area())
    }

    pub(crate) fn check_same_grid(&self, other: &Density) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("densities live on different grids".into()));
        }
        Ok(())
    }

    pub fn moments(&self) -> Result<Moments> {
        let g = &self.grid;
        let mass = self.mass();
        if !(mass > 0.0) {
            return Err(Error::DegenerateDensity { mass });
        }
        let area = g.cell_area();
        let (mut sx, mut sv, mut sxx, mut svv, mut sxv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ix in 0..g.nx {
            let x = g.x_center(ix);
            let row = &self.values[ix * g.nv..(ix + 1) * g.nv];
            let (mut rv, mut rvv, mut r0) = (0.0, 0.0, 0.0);
            for (iv, &f) in row.iter().enumerate() {
                let v = g.v_center(iv);
                r0 += f;
                rv += f * v;
                rvv += f * v * v;
            }
            sx += x * r0;
            sxx += x * x * r0;
            sxv += x * rv;
            sv += rv;
            svv += rvv;
        }
        let n = mass / area;
        let (mean_x, mean_v) = (sx / n, sv / n);
        Ok(Moments {
            mass,
            mean_x,
            mean_v,
            var_x: sxx / n - mean_x * mean_x,
            var_v: svv / n - mean_v * mean_v,
            cov_xv: sxv / n - mean_x * mean_v,
        })
    }

    /// Fraction of the mass sitting in the outermost ring of cells.
    pub fn boundary_mass_fraction(&self) -> f64 {
        let g = &self.grid;
        let mut edge = Vec::with_capacity(2 * (g.nx + g.nv));
        for ix in 0..g.nx {
            for iv in 0..g.nv {
                if g.is_boundary_cell(ix, iv) {
                    edge.push(self.values[g.index(ix, iv)]);
                }
            }
        }
        let total = compensated_sum(self.values.iter().copied());
        if total > 0.0 {
            compensated_sum(edge) / total
        } else {
            0.0
        }
    }

    /// Same density with the roles of `x` and `v` swapped in storage.
    pub fn transposed(&self) -> Self {
        let g = &self.grid;
        let t = g.transposed();
        let mut values = vec![0.0; g.len()];
        for ix in 0..g.nx {
            for iv in 0..g.nv {
                values[t.index(iv, ix)] = self.values[g.index(ix, iv)];
            }
        }
        Self::from_raw(t, values, self.time)
    }

    /// Writes the density text format:
    /// `# fhn-density nx nv x_min x_max v_min v_max time`, then `nx` rows of
    /// `nv` values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "# fhn-density {} {} {:e} {:e} {:e} {:e} {:e}",
            g.nx, g.nv, g.x_min, g.x_max, g.v_min, g.v_max, self.time
        )?;
        let mut line = String::with_capacity(g.nv * 24);
        for ix in 0..g.nx {
            line.clear();
            for (k, v) in self.values[ix * g.nv..(ix + 1) * g.nv].iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                write!(line, "{v:e}").expect("writing to a String cannot fail");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty density file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 9 || fields[0] != "#" || fields[1] != "fhn-density" {
            return Err(Error::Parse(format!("bad density header: {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let grid = Grid2D::new(
            num(fields[4])?,
            num(fields[5])?,
            num(fields[6])?,
            num(fields[7])?,
            int(fields[2])?,
            int(fields[3])?,
        )?;
        let time = num(fields[8])?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            for tok in line?.split(|c: char| c.is_whitespace() || c == ',') {
                if !tok.is_empty() {
                    values.push(num(tok)?);
                }
            }
        }
        Self::new(grid, values, time)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl MeanVoltage for Density {
    fn mean_voltage(&self) -> Result<f64> {
        let g = &self.grid;
        let total = compensated_sum(self.values.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateDensity {
                mass: total * g.cell_area(),
            });
        }
        let mut first = 0.0;
        for ix in 0..g.nx {
            let row = &self.values[ix * g.nv..(ix + 1) * g.nv];
            first += row
                .iter()
                .enumerate()
                .map(|(iv, f)| f * g.v_center(iv))
                .sum::<f64>();
        }
        Ok(first / total)
    }
}
