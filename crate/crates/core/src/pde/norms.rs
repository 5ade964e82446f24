//! Weighted Lebesgue norms on grid functions.
//!
//! Cells where `κ (M - 1)` exceeds [`WeightParams::clip_log`] are left out of
//! the `m`-weighted quadratures.

use super::grid::{compensated_sum, Density, Grid2D};
use crate::error::Result;
use crate::model::{weight_big_m, weighted, WeightParams};

fn cells(grid: &Grid2D) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
    (0..grid.nx).flat_map(move |ix| {
        (0..grid.nv).map(move |iv| (grid.index(ix, iv), grid.x_center(ix), grid.v_center(iv)))
    })
}

/// `Σ |h| M ΔxΔv`.
pub fn l1_big_m(grid: &Grid2D, h: &[f64]) -> f64 {
    let s = compensated_sum(cells(grid).map(|(k, x, v)| h[k].abs() * weight_big_m(x, v)));
    s * grid.cell_area()
}

/// `Σ |h| m ΔxΔv`.
pub fn l1_m(grid: &Grid2D, h: &[f64], w: &WeightParams) -> f64 {
    let s = compensated_sum(
        cells(grid).filter_map(|(k, x, v)| w.log_weight(x, v).map(|lw| weighted(h[k].abs(), lw))),
    );
    s * grid.cell_area()
}

/// `(Σ |h m|² ΔxΔv)^{1/2}`.
pub fn l2_m(grid: &Grid2D, h: &[f64], w: &WeightParams) -> f64 {
    let s = compensated_sum(
        cells(grid).filter_map(|(k, x, v)| w.log_weight(x, v).map(|lw| weighted(h[k] * h[k], 2.0 * lw))),
    );
    (s * grid.cell_area()).sqrt()
}

/// `‖f‖_{L¹(M)}` with `M = 1 + x²/2 + v²/2`.
pub fn l1_big_m_norm(f: &Density) -> f64 {
    l1_big_m(f.grid(), f.values())
}

/// `‖f‖_{L¹(m)}`.
pub fn l1m_norm(f: &Density, w: &WeightParams) -> f64 {
    l1_m(f.grid(), f.values(), w)
}

/// `‖f‖_{L²(m)}`.
pub fn l2m_norm(f: &Density, w: &WeightParams) -> f64 {
    l2_m(f.grid(), f.values(), w)
}

/// `‖f - g‖_{L²(m)}`.
pub fn l2m_distance(f: &Density, g: &Density, w: &WeightParams) -> Result<f64> {
    f.check_same_grid(g)?;
    let diff: Vec<f64> = f.values().iter().zip(g.values()).map(|(a, b)| a - b).collect();
    Ok(l2_m(f.grid(), &diff, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn origin_cell_has_unit_l1_big_m() {
        // odd cell counts put a cell centre on the origin
        let g = Grid2D::new(-1.0, 1.0, -1.0, 1.0, 5, 5).unwrap();
        let f = Density::point_mass(g, 0.0, 0.0).unwrap();
        assert_relative_eq!(l1_big_m(&g, f.values()), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn norms_are_homogeneous() {
        let g = Grid2D::new(-3.0, 3.0, -3.0, 3.0, 20, 24).unwrap();
        let f = Density::gaussian(g, [0.2, -0.1], [[0.5, 0.1], [0.1, 0.6]]).unwrap();
        let w = WeightParams::default();
        let f2 = f.scaled(2.0);
        assert_relative_eq!(l1_big_m(&g, f2.values()), 2.0 * l1_big_m(&g, f.values()), max_relative = 1e-14);
        assert_relative_eq!(l1m_norm(&f2, &w), 2.0 * l1m_norm(&f, &w), max_relative = 1e-14);
        assert_relative_eq!(l2m_norm(&f2, &w), 2.0 * l2m_norm(&f, &w), max_relative = 1e-14);
    }

    #[test]
    fn gaussian_l1_big_m_matches_second_moments() {
        let g = Grid2D::new(-6.0, 6.0, -6.0, 6.0, 160, 160).unwrap();
        let (sx, sv, mx, mv) = (0.7, 0.9, 0.3, -0.2);
        let f = Density::gaussian(g, [mx, mv], [[sx, 0.0], [0.0, sv]]).unwrap();
        // E[1 + x²/2 + v²/2] for a unit-mass Gaussian
        let exact = 1.0 + 0.5 * (sx + mx * mx) + 0.5 * (sv + mv * mv);
        assert_relative_eq!(l1_big_m(&g, f.values()), exact, max_relative = 2e-3);
    }

    #[test]
    fn clipped_cells_are_dropped() {
        let g = Grid2D::new(-1.0, 1.0, -1.0, 1.0, 5, 5).unwrap();
        let f = Density::uniform(g);
        let w = WeightParams {
            kappa: 1.0,
            clip_log: -1.0,
        };
        assert_eq!(l1m_norm(&f, &w), 0.0);
        assert_eq!(l2m_norm(&f, &w), 0.0);
    }
}
