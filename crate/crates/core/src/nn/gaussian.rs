use std::f64::consts::{LN_2, PI};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// A reparameterized draw `a = Ū·tanh(μ + σ·ε)` with everything needed to
/// push gradients back into `μ` and `log σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquashedSample {
    pub action: f64,
    pub log_prob: f64,
    pub pre_tanh: f64,
    pub noise: f64,
    pub std: f64,
    pub bound: f64,
    log_std_clamped: bool,
}

/// `log(1 − tanh²(u))`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn squashed_gaussian_sample(mean: f64, log_std: f64, noise: f64, bound: f64) -> SquashedSample {
    let clamped = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let std = clamped.exp();
    let u = mean + std * noise;
    let log_prob = -0.5 * noise * noise - clamped - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u) - bound.ln();
    SquashedSample {
        action: bound * u.tanh(),
        log_prob,
        pre_tanh: u,
        noise,
        std,
        bound,
        log_std_clamped: clamped != log_std,
    }
}

impl SquashedSample {
    /// Chain rule from `(∂L/∂log_prob, ∂L/∂action)` to `(∂L/∂μ, ∂L/∂log σ)`
    /// with the noise held fixed.
    pub fn backprop(&self, d_log_prob: f64, d_action: f64) -> (f64, f64) {
        let t = self.pre_tanh.tanh();
        // ∂log_prob/∂u = 2 tanh(u); ∂a/∂u = Ū (1 − tanh²u)
        let d_u = d_log_prob * 2.0 * t + d_action * self.bound * (1.0 - t * t);
        let d_mean = d_u;
        let d_log_std = if self.log_std_clamped {
            0.0
        } else {
            -d_log_prob + d_u * self.std * self.noise
        };
        (d_mean, d_log_std)
    }
}

/// Log-density of the squashed policy at an arbitrary action in `(−Ū, Ū)`.
pub fn squashed_log_prob(action: f64, mean: f64, log_std: f64, bound: f64) -> f64 {
    let log_std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let std = log_std.exp();
    let y = (action / bound).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    let u = y.atanh();
    let z = (u - mean) / std;
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u) - bound.ln()
}
