/// `I₁(z)/z` from its power series, summed until a term drops below
/// `1e-16` of the running total.
///
/// Used as the closed-form reference for the reaction-diffusion kernel with a
/// constant coefficient. Intended for moderate arguments (`z ≲ 10`).
pub fn bessel_kernel_ratio(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 0.5;
    let mut sum = term;
    let mut m = 0.0;
    loop {
        m += 1.0;
        term *= q / (m * (m + 1.0));
        sum += term;
        if term <= 1e-16 * sum {
            return sum;
        }
    }
}
