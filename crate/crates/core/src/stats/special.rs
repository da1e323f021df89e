//! Special functions needed by the asymptotic p-values.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};

/// Upper tail of the standard normal.
pub(crate) fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `exp(-q) * K_nu(q)` for `q > 0`, from
/// `K_nu(q) = int_0^inf exp(-q cosh t) cosh(nu t) dt`.
/// The integrand decays double-exponentially, so the trapezoid rule
/// converges geometrically in the step size.
pub(crate) fn scaled_bessel_k(nu: f64, q: f64) -> f64 {
    debug_assert!(q > 0.0);
    let t_max = (1.0 + 60.0 / q).acosh();
    let h = 0.01;
    let steps = (t_max / h).ceil() as usize;
    let f = |t: f64| (-q * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    for k in 1..=steps {
        sum += f(k as f64 * h);
    }
    // f carries an extra exp(q), so the sum approximates exp(q) K_nu(q)
    sum * h * (-2.0 * q).exp()
}

/// Limiting distribution function of the Cramer-von Mises statistic
/// (Anderson & Darling 1952 series), summed until a term drops below 1e-7.
pub(crate) fn cvm_limit_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0.. {
        let kf = k as f64;
        let u = (ln_gamma(kf + 0.5) - ln_gamma(kf + 1.0)).exp() / (PI.powf(1.5) * x.sqrt());
        let y = 4.0 * kf + 1.0;
        let q = y * y / (16.0 * x);
        let term = u * y.sqrt() * scaled_bessel_k(0.25, q);
        total += term;
        if term.abs() < 1e-7 || k > 10_000 {
            break;
        }
    }
    total
}
