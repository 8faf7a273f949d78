//! Backstepping kernels for both benchmarks and the boundary feedback
//! `U(t) = ∫₀¹ k(1,y) u(y,t) dy`.
//!
//! Hyperbolic plant: the kernel has the convolution form `k(x,y) = F(x−y)`
//! where `F(x) = −β(x) + ∫₀ˣ F(x−y) β(y) dy`.
//!
//! Parabolic plant: in characteristic variables `ξ = x+y`, `η = x−y` with
//! `G(ξ,η) = k(x,y)` the kernel satisfies
//! `G(ξ,η) = −¼∫_η^ξ λ(τ/2)dτ + ¼∫_η^ξ∫₀^η λ((τ−s)/2) G(τ,s) ds dτ`.
//!
//! Both fixed points are found by Picard iteration with trapezoid quadrature
//! on the grid (the parabolic lattice has spacing `2·dx`, so every λ lookup
//! lands on a grid node).

use crate::env::{BenchmarkKind, CoefficientFn};
use crate::error::{Error, Result};
use crate::numerics::trapezoid;

pub const MAX_PICARD_ITERATIONS: usize = 200;
pub const PICARD_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HyperbolicKernel {
    f: Vec<f64>,
    gain: Vec<f64>,
    residual: f64,
    iterations: usize,
    dx: f64,
}

impl HyperbolicKernel {
    /// `F(x_i)`.
    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParabolicKernel {
    n: usize,
    // Row i holds k(x_i, y_j) for j = 0..=i.
    table: Vec<f64>,
    gain: Vec<f64>,
    residual: f64,
    iterations: usize,
    dx: f64,
}

impl ParabolicKernel {
    pub fn k(&self, i: usize, j: usize) -> f64 {
        assert!(j <= i && i < self.n, "k(x_{i}, y_{j}) outside the triangle");
        self.table[i * (i + 1) / 2 + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.table[start..start + i + 1]
    }

    /// `k(1, y_j)`.
    pub fn gain_row(&self) -> &[f64] {
        &self.gain
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    Hyperbolic(HyperbolicKernel),
    Parabolic(ParabolicKernel),
}

impl Kernel {
    pub fn solve(coeff: &CoefficientFn) -> Result<Kernel> {
        match coeff.kind() {
            BenchmarkKind::Hyperbolic => solve_hyperbolic_kernel(coeff).map(Kernel::Hyperbolic),
            BenchmarkKind::Parabolic => solve_parabolic_kernel(coeff).map(Kernel::Parabolic),
        }
    }

    pub fn kind(&self) -> BenchmarkKind {
        match self {
            Kernel::Hyperbolic(_) => BenchmarkKind::Hyperbolic,
            Kernel::Parabolic(_) => BenchmarkKind::Parabolic,
        }
    }

    /// Feedback gain `g(y_j) = k(1, y_j)`.
    pub fn gain(&self) -> &[f64] {
        match self {
            Kernel::Hyperbolic(k) => &k.gain,
            Kernel::Parabolic(k) => &k.gain,
        }
    }

    pub fn dx(&self) -> f64 {
        match self {
            Kernel::Hyperbolic(k) => k.dx,
            Kernel::Parabolic(k) => k.dx,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            Kernel::Hyperbolic(k) => k.residual,
            Kernel::Parabolic(k) => k.residual,
        }
    }

    /// `k(x_i, y_j)` for `j ≤ i`.
    pub fn k(&self, i: usize, j: usize) -> f64 {
        match self {
            Kernel::Hyperbolic(k) => {
                assert!(j <= i && i < k.f.len());
                k.f[i - j]
            }
            Kernel::Parabolic(k) => k.k(i, j),
        }
    }

    pub fn n_points(&self) -> usize {
        self.gain().len()
    }
}

/// Evaluates the backstepping feedback on a state sampled on the kernel grid.
pub fn backstepping_control(kernel: &Kernel, state: &[f64]) -> Result<f64> {
    let gain = kernel.gain();
    if state.len() != gain.len() {
        return Err(Error::invalid(format!(
            "kernel grid has {} points, state has {}",
            gain.len(),
            state.len()
        )));
    }
    Ok(weighted_trapezoid(gain, state, kernel.dx()))
}

pub(crate) fn weighted_trapezoid(w: &[f64], u: &[f64], dx: f64) -> f64 {
    let n = w.len();
    let mut acc = 0.0;
    for j in 1..n - 1 {
        acc += w[j] * u[j];
    }
    dx * (acc + 0.5 * (w[0] * u[0] + w[n - 1] * u[n - 1]))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn solve_hyperbolic_kernel(coeff: &CoefficientFn) -> Result<HyperbolicKernel> {
    if coeff.kind() != BenchmarkKind::Hyperbolic {
        return Err(Error::invalid("hyperbolic kernel needs a β coefficient"));
    }
    let beta = coeff.samples();
    let n = beta.len();
    let dx = 1.0 / (n - 1) as f64;

    let apply = |f: &[f64], out: &mut [f64]| {
        let mut conv = vec![0.0; n];
        for i in 0..n {
            conv.clear();
            conv.extend((0..=i).map(|j| f[i - j] * beta[j]));
            out[i] = -beta[i] + trapezoid(&conv, dx);
        }
    };

    let mut f: Vec<f64> = beta.iter().map(|b| -b).collect();
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    loop {
        apply(&f, &mut next);
        iterations += 1;
        let delta = max_abs_diff(&next, &f);
        std::mem::swap(&mut f, &mut next);
        if !delta.is_finite() {
            return Err(Error::numerical("hyperbolic kernel iteration diverged"));
        }
        if delta <= PICARD_TOLERANCE * max_abs(&f).max(1.0) {
            break;
        }
        if iterations >= MAX_PICARD_ITERATIONS {
            return Err(Error::numerical(format!(
                "hyperbolic kernel did not converge in {MAX_PICARD_ITERATIONS} iterations (last change {delta:e})"
            )));
        }
    }
    apply(&f, &mut next);
    let residual = max_abs_diff(&next, &f);
    let gain = (0..n).map(|j| f[n - 1 - j]).collect();
    Ok(HyperbolicKernel {
        f,
        gain,
        residual,
        iterations,
        dx,
    })
}

/// Triangular lattice `0 ≤ b ≤ a`, `a + b ≤ N` over `(ξ_a, η_b) = (2a·dx, 2b·dx)`.
struct Lattice {
    last: usize,
    offsets: Vec<usize>,
    len: usize,
}

impl Lattice {
    fn new(last: usize) -> Self {
        let mut offsets = Vec::with_capacity(last + 1);
        let mut len = 0;
        for a in 0..=last {
            offsets.push(len);
            len += a.min(last - a) + 1;
        }
        Lattice { last, offsets, len }
    }

    fn b_max(&self, a: usize) -> usize {
        a.min(self.last - a)
    }

    fn at(&self, a: usize, b: usize) -> usize {
        self.offsets[a] + b
    }
}

pub fn solve_parabolic_kernel(coeff: &CoefficientFn) -> Result<ParabolicKernel> {
    if coeff.kind() != BenchmarkKind::Parabolic {
        return Err(Error::invalid("parabolic kernel needs a λ coefficient"));
    }
    let lambda = coeff.samples();
    let n = lambda.len();
    let last = n - 1;
    let dx = 1.0 / last as f64;
    let h = 2.0 * dx;
    let lat = Lattice::new(last);

    // Free term −¼∫_η^ξ λ(τ/2)dτ, one trapezoid panel at a time along ξ.
    let mut free = vec![0.0; lat.len];
    for b in 0..=last / 2 {
        let mut acc = 0.0;
        for a in b + 1..=last - b {
            acc += 0.5 * h * (lambda[a - 1] + lambda[a]);
            free[lat.at(a, b)] = -0.25 * acc;
        }
    }

    let apply = |g: &[f64], out: &mut [f64]| {
        // inner[c, b] = ∫₀^{η_b} λ((τ_c − s)/2) G(τ_c, s) ds
        let mut inner = vec![0.0; lat.len];
        for c in 0..=last {
            let mut acc = 0.0;
            let mut prev = lambda[c] * g[lat.at(c, 0)];
            for d in 1..=lat.b_max(c) {
                let cur = lambda[c - d] * g[lat.at(c, d)];
                acc += 0.5 * h * (prev + cur);
                inner[lat.at(c, d)] = acc;
                prev = cur;
            }
        }
        for b in 0..=last / 2 {
            out[lat.at(b, b)] = 0.0;
            let mut acc = 0.0;
            for a in b + 1..=last - b {
                acc += 0.5 * h * (inner[lat.at(a - 1, b)] + inner[lat.at(a, b)]);
                let idx = lat.at(a, b);
                out[idx] = free[idx] + 0.25 * acc;
            }
        }
    };

    let mut g = free.clone();
    let mut next = vec![0.0; lat.len];
    let mut iterations = 0;
    loop {
        apply(&g, &mut next);
        iterations += 1;
        let delta = max_abs_diff(&next, &g);
        std::mem::swap(&mut g, &mut next);
        if !delta.is_finite() {
            return Err(Error::numerical("parabolic kernel iteration diverged"));
        }
        if delta <= PICARD_TOLERANCE * max_abs(&g).max(1.0) {
            break;
        }
        if iterations >= MAX_PICARD_ITERATIONS {
            return Err(Error::numerical(format!(
                "parabolic kernel did not converge in {MAX_PICARD_ITERATIONS} iterations (last change {delta:e})"
            )));
        }
    }
    apply(&g, &mut next);
    let residual = max_abs_diff(&next, &g);

    // Back to (x_i, y_j): lattice nodes carry i + j even; the other parity is
    // filled by linear interpolation in y (k(x, 0) = 0 at the lower edge).
    let mut table = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        let row = i * (i + 1) / 2;
        for j in (0..=i).filter(|j| (i + j) % 2 == 0) {
            table[row + j] = g[lat.at((i + j) / 2, (i - j) / 2)];
        }
        for j in (1..i).filter(|j| (i + j) % 2 == 1) {
            table[row + j] = 0.5 * (table[row + j - 1] + table[row + j + 1]);
        }
    }
    let gain = table[last * n / 2..].to_vec();
    Ok(ParabolicKernel {
        n,
        table,
        gain,
        residual,
        iterations,
        dx,
    })
}
