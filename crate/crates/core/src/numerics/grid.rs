use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on the unit interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Grid {
    n_points: usize,
    dx: f64,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::invalid(format!("grid needs at least 3 points, got {n_points}")));
        }
        Ok(Grid {
            n_points,
            dx: 1.0 / (n_points - 1) as f64,
        })
    }

    /// Grid whose spacing is `dx`; `1/dx` must be (close to) an integer.
    pub fn from_spacing(dx: f64) -> Result<Self> {
        if !(dx > 0.0 && dx <= 0.5) {
            return Err(Error::invalid(format!("grid spacing {dx} out of (0, 0.5]")));
        }
        let cells = (1.0 / dx).round();
        if ((cells * dx) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "spacing {dx} does not divide the unit interval"
            )));
        }
        Grid::new(cells as usize + 1)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::new(101).expect("default grid")
    }
}

impl TryFrom<usize> for Grid {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        Grid::new(n)
    }
}

impl From<Grid> for usize {
    fn from(g: Grid) -> usize {
        g.n_points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_closes_the_interval() {
        for n in [3, 11, 101, 201, 1001] {
            let g = Grid::new(n).unwrap();
            assert!(((n - 1) as f64 * g.dx() - 1.0).abs() < 1e-12);
        }
        assert_eq!(Grid::from_spacing(0.01).unwrap().n_points(), 101);
        assert_eq!(Grid::from_spacing(0.005).unwrap().n_points(), 201);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(2).is_err());
        assert!(Grid::from_spacing(0.3).is_err());
        assert!(Grid::from_spacing(-1.0).is_err());
    }
}
