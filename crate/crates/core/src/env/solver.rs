use crate::error::{Error, Result};
use crate::numerics::{solve_tridiagonal, trapezoid};

/// Discretized PDE state `u(x_i, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub values: Vec<f64>,
    pub time: f64,
}

impl StateField {
    pub fn new(values: Vec<f64>) -> Self {
        StateField { values, time: 0.0 }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        StateField::new(vec![c; n])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `‖u‖_{L₂}` by the trapezoid rule.
pub fn l2_norm(values: &[f64], dx: f64) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    trapezoid(&sq, dx).sqrt()
}

/// `‖a − b‖_{L₂}` without allocating the difference twice.
pub fn l2_distance(a: &[f64], b: &[f64], dx: f64) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    trapezoid(&sq, dx).sqrt()
}

/// One explicit upwind step of `u_t = u_x + β(x) u(0,t)` with `u(1,t) = U`.
///
/// The recirculation term uses `u(0)` from the start of the step.
pub fn hyperbolic_solver_step(state: &StateField, beta: &[f64], control: f64, dt: f64, dx: f64) -> Result<StateField> {
    let n = state.values.len();
    if beta.len() != n || n < 2 {
        return Err(Error::invalid(format!(
            "state has {n} samples, coefficient {}",
            beta.len()
        )));
    }
    if dt / dx > 1.0 {
        return Err(Error::Config(format!("CFL violated: dt/dx = {}", dt / dx)));
    }
    let mut next = state.clone();
    hyperbolic_step_in_place(&mut next.values, &state.values, beta, control, dt, dx);
    next.time += dt;
    Ok(next)
}

pub(crate) fn hyperbolic_step_in_place(out: &mut [f64], u: &[f64], beta: &[f64], control: f64, dt: f64, dx: f64) {
    let n = u.len();
    let u0 = u[0];
    let c = dt / dx;
    for i in 0..n - 1 {
        out[i] = u[i] + c * (u[i + 1] - u[i]) + dt * beta[i] * u0;
    }
    out[n - 1] = control;
}

/// Backward-Euler operator `I − dt·D₂ − dt·diag(λ)` restricted to the
/// interior nodes, with Dirichlet data at both ends.
#[derive(Clone, Debug)]
pub struct ParabolicOperator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    r: f64,
}

impl ParabolicOperator {
    pub fn new(lambda: &[f64], dt: f64, dx: f64) -> Result<Self> {
        let n = lambda.len();
        if n < 3 {
            return Err(Error::invalid("parabolic step needs at least one interior node"));
        }
        let r = dt / (dx * dx);
        let m = n - 2;
        let diag: Vec<f64> = lambda[1..n - 1].iter().map(|l| 1.0 + 2.0 * r - dt * l).collect();
        // Strict diagonal dominance keeps the Thomas sweep pivot-safe.
        for (i, d) in diag.iter().enumerate() {
            if d.abs() <= 2.0 * r {
                return Err(Error::numerical(format!(
                    "implicit operator not diagonally dominant at node {} (dt·λ = {})",
                    i + 1,
                    dt * lambda[i + 1]
                )));
            }
        }
        Ok(ParabolicOperator {
            lower: vec![-r; m - 1],
            diag,
            upper: vec![-r; m - 1],
            r,
        })
    }

    pub fn step_in_place(&self, u: &mut [f64], control: f64) -> Result<()> {
        let n = u.len();
        if n != self.diag.len() + 2 {
            return Err(Error::invalid("state length does not match the operator"));
        }
        let mut rhs = u[1..n - 1].to_vec();
        // u(0) = 0 contributes nothing; u(1) = U enters the last interior row.
        let last = rhs.len() - 1;
        rhs[last] += self.r * control;
        let interior = solve_tridiagonal(&self.lower, &self.diag, &self.upper, &rhs)?;
        u[0] = 0.0;
        u[1..n - 1].copy_from_slice(&interior);
        u[n - 1] = control;
        Ok(())
    }
}

/// One backward-Euler step of `u_t = u_xx + λ(x) u`.
pub fn parabolic_solver_step(state: &StateField, lambda: &[f64], control: f64, dt: f64, dx: f64) -> Result<StateField> {
    if lambda.len() != state.values.len() {
        return Err(Error::invalid("state and coefficient lengths differ"));
    }
    let op = ParabolicOperator::new(lambda, dt, dx)?;
    let mut next = state.clone();
    op.step_in_place(&mut next.values, control)?;
    next.time += dt;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        assert_eq!(l2_norm(&[0.0; 101], 0.01), 0.0);
        assert!((l2_norm(&[3.0; 101], 0.01) - 3.0).abs() < 1e-14);
        let xs: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        assert!((l2_norm(&xs, 0.01) - 0.33335f64.sqrt()).abs() < 1e-12);
        assert!((l2_norm(&xs, 0.01) - 0.57735).abs() < 1e-4);
    }

    #[test]
    fn hyperbolic_equilibria() {
        let zero = StateField::constant(101, 0.0);
        let beta = vec![3.0; 101];
        let next = hyperbolic_solver_step(&zero, &beta, 0.0, 1e-3, 0.01).unwrap();
        assert!(next.values.iter().all(|&v| v == 0.0));

        let c = StateField::constant(101, 2.5);
        let next = hyperbolic_solver_step(&c, &[0.0; 101], 2.5, 1e-3, 0.01).unwrap();
        assert_eq!(next.values, c.values);
        assert!((next.time - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn hyperbolic_three_point_stencil() {
        let s = StateField::new(vec![1.0, 2.0, 3.0]);
        let next = hyperbolic_solver_step(&s, &[1.0; 3], 0.0, 0.1, 0.5).unwrap();
        let expect = [1.3, 2.3, 0.0];
        for (a, b) in next.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn hyperbolic_cfl_is_enforced() {
        let s = StateField::constant(11, 1.0);
        let err = hyperbolic_solver_step(&s, &[0.0; 11], 0.0, 0.2, 0.1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn parabolic_equilibria() {
        let zero = StateField::constant(101, 0.0);
        let lam = vec![40.0; 101];
        let next = parabolic_solver_step(&zero, &lam, 0.0, 1e-3, 0.01).unwrap();
        assert!(next.values.iter().all(|&v| v == 0.0));

        let xs: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let lin = StateField::new(xs.clone());
        let next = parabolic_solver_step(&lin, &[0.0; 101], 1.0, 1e-3, 0.01).unwrap();
        for (a, b) in next.values.iter().zip(&xs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parabolic_single_interior_node() {
        let s = StateField::new(vec![0.0, 1.0, 0.0]);
        let next = parabolic_solver_step(&s, &[0.0; 3], 0.0, 0.1, 0.5).unwrap();
        assert!((next.values[1] - 1.0 / 1.8).abs() < 1e-14);
        assert!((next.values[1] - 0.55556).abs() < 1e-5);
    }

    #[test]
    fn parabolic_rejects_non_dominant_operator() {
        let err = ParabolicOperator::new(&[1100.0; 11], 1e-3, 0.1).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure(_)));
    }
}
