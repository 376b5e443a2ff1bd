//! NB2 log-mass, deviance and derivatives (variance `mu + theta mu^2`).
//!
//! With `r = 1/theta` and integer `y`, the log-gamma ratio is expanded as
//! `lnG(y + r) - lnG(r) = y ln r + sum_{j<y} ln1p(j / r)`, which stays
//! accurate as `theta -> 0` where the textbook form cancels catastrophically.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::{digamma, ln_gamma};

/// Counts above this use closed-form special functions instead of sums.
const SERIES_LIMIT: f64 = 2000.0;

fn is_small_count(y: f64) -> bool {
    y <= SERIES_LIMIT && y.fract() == 0.0
}

/// `log P(Y = y)` for `Y ~ NB2(mu, theta)`.
pub fn nb_logpmf(y: f64, mu: f64, theta: f64) -> f64 {
    let r = 1.0 / theta;
    if y == 0.0 {
        return -r * (mu / r).ln_1p();
    }
    let ratio = if is_small_count(y) {
        (0..y as u64).map(|j| (j as f64 / r).ln_1p()).sum::<f64>()
    } else {
        ln_gamma(y + r) - ln_gamma(r) - y * r.ln()
    };
    ratio - ln_gamma(y + 1.0) - (r + y) * (mu / r).ln_1p() + y * mu.ln()
}

/// Poisson log-mass, the `theta -> 0` limit.
pub fn poisson_logpmf(y: f64, mu: f64) -> f64 {
    if y == 0.0 {
        return -mu;
    }
    y * mu.ln() - mu - ln_gamma(y + 1.0)
}

/// Sum of NB2 log-masses.
pub fn nb_loglik(y: &[f64], mu: &[f64], theta: f64) -> f64 {
    y.iter().zip(mu).map(|(&y, &m)| nb_logpmf(y, m, theta)).sum()
}

/// Unit deviance `2 [l(y; y) - l(y; mu)]`.
pub fn nb_unit_deviance(y: f64, mu: f64, theta: f64) -> f64 {
    let r = 1.0 / theta;
    let sat = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (sat - (y + r) * ((y - mu) / (mu + r)).ln_1p())
}

pub fn nb_deviance(y: &[f64], mu: &[f64], theta: f64) -> f64 {
    y.iter().zip(mu).map(|(&y, &m)| nb_unit_deviance(y, m, theta)).sum()
}

/// `d l / d eta` under the log link.
pub fn score_eta(y: f64, mu: f64, theta: f64) -> f64 {
    (y - mu) / (1.0 + theta * mu)
}

/// Fisher weight `mu / (1 + theta mu)` under the log link.
pub fn fisher_weight(mu: f64, theta: f64) -> f64 {
    mu / (1.0 + theta * mu)
}

/// Trigamma by upward recurrence and the asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0))) * x2 / x
}

/// `(psi(y + r) - psi(r), psi'(y + r) - psi'(r))`.
fn polygamma_diffs(y: f64, r: f64) -> (f64, f64) {
    if is_small_count(y) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for j in 0..y as u64 {
            let inv = 1.0 / (r + j as f64);
            d1 += inv;
            d2 -= inv * inv;
        }
        (d1, d2)
    } else {
        (digamma(y + r) - digamma(r), trigamma(y + r) - trigamma(r))
    }
}

/// First and second derivative of the log-likelihood in `rho = log theta`
/// at fixed means.
pub fn log_theta_derivatives(y: &[f64], mu: &[f64], theta: f64) -> (f64, f64) {
    let r = 1.0 / theta;
    let mut g = 0.0;
    let mut h = 0.0;
    for (&y, &m) in y.iter().zip(mu) {
        let (d1, d2) = polygamma_diffs(y, r);
        let l_r = d1 - (m / r).ln_1p() + (m - y) / (r + m);
        let l_rr = d2 + m / (r * (r + m)) - (m - y) / ((r + m) * (r + m));
        g += -r * l_r;
        h += r * r * l_rr + r * l_r;
    }
    (g, h)
}

/// Draws from NB2 as a Gamma-Poisson mixture.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, mu: f64, theta: f64) -> u64 {
    if !(mu > 1e-300) {
        return 0;
    }
    let r = 1.0 / theta;
    let rate = Gamma::new(r, mu / r).map_or(mu, |g| g.sample(rng));
    if !(rate > 1e-300) {
        return 0;
    }
    match Poisson::new(rate) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_count_mass() {
        assert!((nb_logpmf(0.0, 1.0, 1.0) - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn poisson_limit() {
        for y in 0..=10 {
            for &mu in &[0.3, 1.0, 2.5, 5.0] {
                let a = nb_logpmf(y as f64, mu, 1e-10);
                let b = poisson_logpmf(y as f64, mu);
                assert!((a - b).abs() < 1e-6, "y={y} mu={mu}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn series_and_gamma_forms_agree() {
        let y = 37.0;
        for &theta in &[0.01, 0.5, 3.0] {
            let r: f64 = 1.0 / theta;
            let gamma_form = ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) + r * (r / (r + 4.0)).ln()
                + y * (4.0 / (r + 4.0)).ln();
            assert!((nb_logpmf(y, 4.0, theta) - gamma_form).abs() < 1e-9);
        }
    }

    #[test]
    fn trigamma_known_value() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-10);
        let (_, d2) = polygamma_diffs(3.0, 1.0);
        assert!((d2 - (trigamma(4.0) - trigamma(1.0))).abs() < 1e-10);
    }

    #[test]
    fn deviance_zero_at_saturation() {
        assert!(nb_unit_deviance(3.0, 3.0, 0.7).abs() < 1e-14);
        assert!(nb_unit_deviance(0.0, 1.0, 0.7) > 0.0);
    }
}
