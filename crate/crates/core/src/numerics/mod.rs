//! Grids, quadrature, banded solves, the Bessel ratio used by kernel oracles,
//! and the seeded random stream shared by every stochastic stage.

mod grid;
mod linalg;
mod rng;
mod special;

pub use grid::Grid;
pub use linalg::{solve_tridiagonal, tridiagonal_apply};
pub use rng::{derive_seed, Rng};
pub use special::bessel_kernel_ratio;

use crate::error::{Error, Result};

/// Composite trapezoid rule on uniformly spaced samples.
///
/// Empty and single-sample inputs integrate to zero.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            dx * (interior + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Trapezoid integral over the whole grid, checking the sample count.
pub fn trapezoid_integrate(grid: &Grid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.n_points() {
        return Err(Error::invalid(format!(
            "expected {} samples on the grid, got {}",
            grid.n_points(),
            values.len()
        )));
    }
    Ok(trapezoid(values, grid.dx()))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Plain left-to-right summation of the trapezoid panels, kept apart from
    // the closed form used by `trapezoid`.
    fn panel_sum(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let dx = 1.0 / (n - 1) as f64;
        (0..n - 1)
            .map(|i| {
                let a = i as f64 * dx;
                0.5 * dx * (f(a) + f(a + dx))
            })
            .sum()
    }

    #[test]
    fn constants_and_linear_are_exact() {
        let g = Grid::new(101).unwrap();
        let ones = vec![1.0; 101];
        assert!((trapezoid_integrate(&g, &ones).unwrap() - 1.0).abs() < 1e-14);
        let xs = g.points();
        assert!((trapezoid_integrate(&g, &xs).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn square_matches_panel_oracle() {
        let g = Grid::new(101).unwrap();
        let sq: Vec<f64> = g.points().iter().map(|x| x * x).collect();
        let oracle = panel_sum(|x| x * x, 101);
        assert!((oracle - 0.33335).abs() < 1e-12);
        assert!((trapezoid_integrate(&g, &sq).unwrap() - 0.33335).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = Grid::new(11).unwrap();
        assert!(matches!(
            trapezoid_integrate(&g, &[1.0; 10]),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn trapezoid_is_linear(
            f in proptest::collection::vec(-10.0f64..10.0, 31),
            g in proptest::collection::vec(-10.0f64..10.0, 31),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let dx = 1.0 / 30.0;
            let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = trapezoid(&mix, dx);
            let rhs = a * trapezoid(&f, dx) + b * trapezoid(&g, dx);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
