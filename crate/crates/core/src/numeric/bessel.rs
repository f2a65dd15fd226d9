//! Modified Bessel function of the second kind, in log space.
//!
//! Uses the integral `K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt`
//! evaluated with the trapezoid rule. The integrand is entire and decays
//! double-exponentially, so the rule converges geometrically in the step.

/// `ln K_nu(z)` for real `nu` and `z > 0`.
pub fn log_bessel_k(nu: f64, z: f64) -> f64 {
    assert!(z > 0.0, "log_bessel_k requires z > 0, got {z}");
    let nu = nu.abs();
    let log_integrand = |t: f64| -> f64 {
        let x = nu * t;
        -z * t.cosh() + x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
    };
    let peak = (nu / z).asinh();
    let reference = log_integrand(0.0).max(log_integrand(peak));
    let h = (0.5 / (z * z + nu * nu).sqrt().sqrt()).min(0.1);

    let mut sum = 0.5 * (log_integrand(0.0) - reference).exp();
    let mut k = 1usize;
    loop {
        let t = k as f64 * h;
        let lf = log_integrand(t) - reference;
        sum += lf.exp();
        if t > peak && lf < -45.0 {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    reference + (h * sum).ln()
}

/// `K_nu(z)`; underflows to 0 for large `z`.
pub fn bessel_k(nu: f64, z: f64) -> f64 {
    log_bessel_k(nu, z).exp()
}
