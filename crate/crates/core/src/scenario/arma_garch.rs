//! Per-asset ARMA(p, q) mean model with an optional GARCH(1,1) variance.
//!
//! The ARMA order is chosen by BIC over a grid using the conditional Gaussian
//! likelihood. GARCH(1,1) is then fitted to the ARMA residuals by Gaussian
//! quasi-maximum likelihood with restarts. A GARCH fit that fails (no
//! convergence, non-stationary, or no BIC gain over constant variance) is
//! dropped when a Ljung-Box test on squared residuals finds no persistence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::numeric::optimize::{bfgs, BfgsOptions};
use crate::numeric::{mean, sample_std};

/// Orders `0..=max_p` × `0..=max_q` searched by BIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderGrid {
    pub max_p: usize,
    pub max_q: usize,
}

impl Default for OrderGrid {
    fn default() -> Self {
        Self { max_p: 2, max_q: 2 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitOptions {
    pub grid: OrderGrid,
    /// Minimum window length.
    pub min_length: usize,
    /// Random restarts of the GARCH likelihood maximization.
    pub restarts: usize,
    /// Relative log-likelihood tolerance.
    pub tolerance: f64,
    /// Ljung-Box lag for the persistence check.
    pub ljung_box_lag: usize,
    /// Significance level of the persistence check.
    pub ljung_box_level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid: OrderGrid::default(),
            min_length: 100,
            restarts: 5,
            tolerance: 1e-8,
            ljung_box_lag: 10,
            ljung_box_level: 0.05,
        }
    }
}

/// One ARMA candidate evaluated during order selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateDiagnostics {
    pub p: usize,
    pub q: usize,
    pub log_likelihood: f64,
    pub bic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GarchDiagnostics {
    pub converged: bool,
    pub log_likelihood: f64,
    pub bic: f64,
    pub constant_variance_bic: f64,
    pub ljung_box_statistic: f64,
    pub ljung_box_p_value: f64,
    pub note: String,
}

/// State needed to continue the recursions past the end of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    /// Most recent returns, newest first (length `p`).
    pub returns: Vec<f64>,
    /// Most recent ARMA residuals, newest first (length `max(q, 1)`).
    pub residuals: Vec<f64>,
    /// Conditional variance of the final residual.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaGarchFit {
    pub p: usize,
    pub q: usize,
    pub mu: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub omega: f64,
    pub a1: f64,
    pub b1: f64,
    pub garch_active: bool,
    /// Residual variance, used as the constant variance when GARCH is off.
    pub residual_variance: f64,
    pub bic: f64,
    pub last_state: FitState,
}

/// A fit plus the information produced while fitting it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub fit: ArmaGarchFit,
    /// Residuals divided by their conditional standard deviation.
    pub standardized: Vec<f64>,
    pub candidates: Vec<CandidateDiagnostics>,
    pub garch: GarchDiagnostics,
}

impl ArmaGarchFit {
    /// Conditional variance of the next innovation.
    pub fn next_variance(&self, state: &FitState) -> f64 {
        if self.garch_active {
            self.omega + self.a1 * state.residuals[0].powi(2) + self.b1 * state.variance
        } else {
            self.residual_variance
        }
    }

    /// Conditional mean of the next return.
    pub fn next_mean(&self, state: &FitState) -> f64 {
        let ar: f64 = self
            .phi
            .iter()
            .zip(&state.returns)
            .map(|(f, r)| f * (r - self.mu))
            .sum();
        let ma: f64 = self
            .theta
            .iter()
            .zip(&state.residuals)
            .map(|(t, e)| t * e)
            .sum();
        self.mu + ar + ma
    }

    /// One step of the recursion driven by a standardized innovation `z`.
    /// Returns the simulated return and the updated state.
    pub fn step(&self, state: &FitState, z: f64) -> (f64, FitState) {
        let var = self.next_variance(state);
        let eps = var.sqrt() * z;
        let r = self.next_mean(state) + eps;
        let mut returns = state.returns.clone();
        if !returns.is_empty() {
            returns.rotate_right(1);
            returns[0] = r;
        }
        let mut residuals = state.residuals.clone();
        residuals.rotate_right(1);
        residuals[0] = eps;
        (
            r,
            FitState {
                returns,
                residuals,
                variance: var,
            },
        )
    }

    /// Unconditional variance of the innovation process.
    pub fn unconditional_variance(&self) -> f64 {
        if self.garch_active {
            self.omega / (1.0 - self.a1 - self.b1)
        } else {
            self.residual_variance
        }
    }
}

/// Maps unconstrained values to the coefficients of a polynomial
/// `1 - c1 z - ... - ck z^k` with all roots outside the unit circle.
fn pacf_to_coefficients(u: &[f64]) -> Vec<f64> {
    let mut coef: Vec<f64> = Vec::with_capacity(u.len());
    for (k, &v) in u.iter().enumerate() {
        let pk = v.tanh() * 0.999;
        let prev = coef.clone();
        for j in 0..k {
            coef[j] = prev[j] - pk * prev[k - 1 - j];
        }
        coef.push(pk);
    }
    coef
}

/// Conditional ARMA residuals on standardized data, starting at `start`.
fn arma_residuals(x: &[f64], mu: f64, phi: &[f64], theta: &[f64], start: usize) -> Vec<f64> {
    let n = x.len();
    let mut e = vec![0.0; n];
    for t in start..n {
        let mut pred = mu;
        for (j, f) in phi.iter().enumerate() {
            pred += f * (x[t - 1 - j] - mu);
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j + start {
                pred += th * e[t - 1 - j];
            }
        }
        e[t] = x[t] - pred;
    }
    e
}

struct ArmaEstimate {
    mu: f64,
    phi: Vec<f64>,
    theta: Vec<f64>,
    log_likelihood: f64,
    converged: bool,
}

fn fit_arma(x: &[f64], p: usize, q: usize, start: usize, tol: f64) -> ArmaEstimate {
    let n_eff = (x.len() - start) as f64;
    let unpack = |v: &[f64]| {
        let mu = v[0];
        let phi = pacf_to_coefficients(&v[1..1 + p]);
        let theta: Vec<f64> = pacf_to_coefficients(&v[1 + p..]).iter().map(|c| -c).collect();
        (mu, phi, theta)
    };
    let objective = |v: &[f64]| {
        let (mu, phi, theta) = unpack(v);
        let e = arma_residuals(x, mu, &phi, &theta, start);
        let sse: f64 = e[start..].iter().map(|v| v * v).sum();
        0.5 * n_eff * (sse / n_eff).ln()
    };
    let mut v0 = vec![0.0; 1 + p + q];
    v0[0] = mean(&x[start..]);
    let opts = BfgsOptions {
        f_tol: tol,
        ..BfgsOptions::default()
    };
    let mut best = bfgs(objective, &v0, opts);
    if p + q > 0 {
        for init in [0.3, -0.3] {
            let mut v = v0.clone();
            v[1..].iter_mut().for_each(|c| *c = init);
            let m = bfgs(objective, &v, opts);
            if m.value < best.value - 1e-12 {
                best = m;
            }
        }
    }
    let (mu, phi, theta) = unpack(&best.x);
    let sigma2 = (2.0 * best.value / n_eff).exp();
    let log_likelihood =
        -0.5 * n_eff * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln() + 1.0);
    ArmaEstimate {
        mu,
        phi,
        theta,
        log_likelihood,
        converged: best.converged,
    }
}

fn summarize(candidates: &[CandidateDiagnostics]) -> String {
    candidates
        .iter()
        .map(|c| format!("ARMA({},{}) bic {:.2}{}", c.p, c.q, c.bic, if c.converged { "" } else { " unconverged" }))
        .collect::<Vec<_>>()
        .join(", ")
}

fn garch_params(v: &[f64]) -> (f64, f64, f64) {
    let omega = v[0].exp();
    let (e1, e2) = (v[1].exp(), v[2].exp());
    let denom = 1.0 + e1 + e2;
    (omega, e1 / denom, e2 / denom)
}

/// Conditional variances of `e` (standardized units) under GARCH(1,1).
fn garch_variances(e: &[f64], omega: f64, a: f64, b: f64, init: f64) -> Vec<f64> {
    let mut h = vec![0.0; e.len()];
    if e.is_empty() {
        return h;
    }
    h[0] = init;
    for t in 1..e.len() {
        h[t] = omega + a * e[t - 1] * e[t - 1] + b * h[t - 1];
    }
    h
}

fn gaussian_ll(e: &[f64], h: &[f64]) -> f64 {
    let c = (2.0 * std::f64::consts::PI).ln();
    e.iter()
        .zip(h)
        .map(|(x, v)| -0.5 * (c + v.ln() + x * x / v))
        .sum()
}

/// Ljung-Box statistic and p-value for `x` at `lag`.
pub fn ljung_box(x: &[f64], lag: usize) -> (f64, f64) {
    let n = x.len();
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if c0 <= 0.0 || n <= lag + 1 {
        return (0.0, 1.0);
    }
    let mut q = 0.0;
    for k in 1..=lag {
        let ck: f64 = (k..n).map(|t| (x[t] - m) * (x[t - k] - m)).sum();
        let rho = ck / c0;
        q += rho * rho / (n - k) as f64;
    }
    q *= (n * (n + 2)) as f64;
    let chi = ChiSquared::new(lag as f64).expect("positive degrees of freedom");
    (q, 1.0 - chi.cdf(q))
}

/// Fits the ARMA(p, q)-GARCH(1,1) model to one asset's return window.
pub fn fit_arma_garch(series: &[f64], opts: &FitOptions) -> Result<FitReport> {
    let n = series.len();
    if n < opts.min_length {
        return Err(Error::WindowTooShort {
            needed: opts.min_length,
            got: n,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("series contains non-finite values".into()));
    }
    let center = mean(series);
    let sd = sample_std(series);
    if !(sd > 1e-14 * (1.0 + center.abs())) {
        return Err(Error::Fit("series has zero variance".into()));
    }
    let x: Vec<f64> = series.iter().map(|v| (v - center) / sd).collect();
    let start = opts.grid.max_p.max(1);
    let n_eff = (n - start) as f64;

    let mut candidates = Vec::new();
    let mut best: Option<(f64, usize, usize, ArmaEstimate)> = None;
    for p in 0..=opts.grid.max_p {
        for q in 0..=opts.grid.max_q {
            let est = fit_arma(&x, p, q, start, opts.tolerance);
            let k = (p + q + 2) as f64;
            let bic = -2.0 * est.log_likelihood + k * n_eff.ln();
            candidates.push(CandidateDiagnostics {
                p,
                q,
                log_likelihood: est.log_likelihood,
                bic,
                converged: est.converged,
            });
            if !bic.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|(b, ..)| bic < *b) {
                best = Some((bic, p, q, est));
            }
        }
    }
    let Some((arma_bic, p, q, est)) = best else {
        return Err(Error::Fit(format!(
            "all ARMA candidates failed: {}",
            summarize(&candidates)
        )));
    };

    let e_full = arma_residuals(&x, est.mu, &est.phi, &est.theta, start);
    let e = &e_full[start..];
    let resid_var = e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64;

    // GARCH(1,1) by QMLE with restarts from a fixed-seed generator.
    let objective = |v: &[f64]| {
        let (w, a, b) = garch_params(v);
        -gaussian_ll(e, &garch_variances(e, w, a, b, resid_var))
    };
    let bopts = BfgsOptions {
        f_tol: opts.tolerance,
        ..BfgsOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_6a2c);
    let mut starts = vec![{
        // a = 0.05, b = 0.9, unconditional variance matched to the residuals.
        let (a, b) = (0.05f64, 0.9f64);
        let c = 1.0 - a - b;
        vec![(resid_var * c).ln(), (a / c).ln(), (b / c).ln()]
    }];
    for _ in 0..opts.restarts {
        let a: f64 = rng.random_range(0.01..0.3);
        let b: f64 = rng.random_range(0.3..0.95 - a);
        let c = 1.0 - a - b;
        starts.push(vec![(resid_var * c).ln(), (a / c).ln(), (b / c).ln()]);
    }
    let garch_best = starts
        .iter()
        .map(|s| bfgs(objective, s, bopts))
        .filter(|m| m.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value));

    let const_ll = gaussian_ll(e, &vec![resid_var; e.len()]);
    let const_bic = -2.0 * const_ll + n_eff.ln();
    let (lb_stat, lb_p) = ljung_box(&e.iter().map(|v| v * v).collect::<Vec<_>>(), opts.ljung_box_lag);

    let mut diag = GarchDiagnostics {
        converged: false,
        log_likelihood: f64::NAN,
        bic: f64::NAN,
        constant_variance_bic: const_bic,
        ljung_box_statistic: lb_stat,
        ljung_box_p_value: lb_p,
        note: String::new(),
    };
    let mut garch = None;
    if let Some(m) = garch_best {
        let (w, a, b) = garch_params(&m.x);
        let ll = -m.value;
        let bic = -2.0 * ll + 3.0 * n_eff.ln();
        diag.converged = m.converged;
        diag.log_likelihood = ll;
        diag.bic = bic;
        let stationary = a + b < 1.0 - 1e-6;
        if m.converged && stationary && bic < const_bic {
            garch = Some((w, a, b));
            diag.note = "garch accepted".into();
        } else if lb_p <= opts.ljung_box_level {
            if stationary {
                garch = Some((w, a, b));
                diag.note = "garch kept: squared residuals show persistence".into();
            } else {
                return Err(Error::Fit(format!(
                    "persistence detected (Ljung-Box p = {lb_p:.4}) but no stationary GARCH fit \
                     (a1 + b1 = {:.6})",
                    a + b
                )));
            }
        } else {
            diag.note = "garch dropped: no persistence in squared residuals".into();
        }
    } else if lb_p <= opts.ljung_box_level {
        return Err(Error::Fit(
            "persistence detected but every GARCH likelihood evaluation failed".into(),
        ));
    } else {
        diag.note = "garch dropped: likelihood failed, no persistence".into();
    }

    let h = match garch {
        Some((w, a, b)) => garch_variances(e, w, a, b, resid_var),
        None => vec![resid_var; e.len()],
    };
    let standardized: Vec<f64> = e.iter().zip(&h).map(|(v, s)| v / s.sqrt()).collect();

    // Back to return units.
    let s2 = sd * sd;
    let mu = center + sd * est.mu;
    let last_n = |v: &[f64], k: usize| -> Vec<f64> { v.iter().rev().take(k).copied().collect() };
    let residuals_raw: Vec<f64> = e.iter().map(|v| v * sd).collect();
    let last_state = FitState {
        returns: last_n(series, p),
        residuals: last_n(&residuals_raw, q.max(1)),
        variance: h[h.len() - 1] * s2,
    };
    let (omega, a1, b1, active) = match garch {
        Some((w, a, b)) => (w * s2, a, b, true),
        None => (0.0, 0.0, 0.0, false),
    };
    if active {
        assert!(a1 + b1 < 1.0, "accepted GARCH fit must be covariance stationary");
    }
    let fit = ArmaGarchFit {
        p,
        q,
        mu,
        phi: est.phi,
        theta: est.theta,
        omega,
        a1,
        b1,
        garch_active: active,
        residual_variance: resid_var * s2,
        bic: arma_bic,
        last_state,
    };
    Ok(FitReport {
        fit,
        standardized,
        candidates,
        garch: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| 0.0005 + 0.01 * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect::<Vec<f64>>()
    }

    fn simulate_garch(n: usize, omega: f64, a: f64, b: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = omega / (1.0 - a - b);
        let mut e_prev: f64 = 0.0;
        let mut out = Vec::with_capacity(n);
        for t in 0..n + 500 {
            h = omega + a * e_prev * e_prev + b * h;
            let z: f64 = StandardNormal.sample(&mut rng);
            e_prev = h.sqrt() * z;
            if t >= 500 {
                out.push(e_prev);
            }
        }
        out
    }

    #[test]
    fn pacf_map_gives_stationary_polynomials() {
        for u in [[3.0, -3.0], [-2.0, 2.5], [0.4, 0.1]] {
            let c = pacf_to_coefficients(&u);
            // AR(2) stationarity triangle.
            assert!(c[1].abs() < 1.0 && c[0] + c[1] < 1.0 && c[1] - c[0] < 1.0, "{c:?}");
        }
    }

    #[test]
    fn constant_series_fails() {
        let err = fit_arma_garch(&vec![0.01; 300], &FitOptions::default());
        assert!(matches!(err, Err(Error::Fit(_))));
    }

    #[test]
    fn short_window_rejected() {
        let err = fit_arma_garch(&gaussian(50, 1), &FitOptions::default());
        assert!(matches!(err, Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = vec![0.0f64];
        for _ in 0..3000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let prev = *x.last().unwrap();
            x.push(0.6 * prev + 0.01 * z);
        }
        let rep = fit_arma_garch(&x, &FitOptions::default()).unwrap();
        assert!(rep.fit.p >= 1, "{:?}", rep.fit);
        if rep.fit.p == 1 && rep.fit.q == 0 {
            assert!((rep.fit.phi[0] - 0.6).abs() < 0.05);
        }
    }

    #[test]
    fn gaussian_noise_selects_white_noise_without_garch() {
        // Monte Carlo over 50 seeds: expect p = q = 0 and no GARCH in >= 90%.
        let hits = (0..50)
            .filter(|&s| {
                let rep = fit_arma_garch(&gaussian(1000, 1000 + s), &FitOptions::default()).unwrap();
                rep.fit.p == 0 && rep.fit.q == 0 && !rep.fit.garch_active
            })
            .count();
        assert!(hits >= 45, "only {hits}/50 seeds selected the white-noise model");
    }

    #[test]
    fn recovers_garch_persistence() {
        let x = simulate_garch(4000, 1e-6, 0.08, 0.9, 2024);
        let rep = fit_arma_garch(&x, &FitOptions::default()).unwrap();
        assert!(rep.fit.garch_active);
        let persistence = rep.fit.a1 + rep.fit.b1;
        assert!((persistence - 0.98).abs() <= 0.05, "a1 + b1 = {persistence}");
        assert!(persistence < 1.0);
        // Standardized residuals have roughly unit variance.
        let v = crate::numeric::sample_variance(&rep.standardized);
        assert!((v - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn step_without_garch_uses_residual_variance() {
        let fit = ArmaGarchFit {
            p: 1,
            q: 1,
            mu: 0.001,
            phi: vec![0.5],
            theta: vec![0.2],
            omega: 0.0,
            a1: 0.0,
            b1: 0.0,
            garch_active: false,
            residual_variance: 4e-4,
            bic: 0.0,
            last_state: FitState {
                returns: vec![0.011],
                residuals: vec![0.005],
                variance: 4e-4,
            },
        };
        let (r, st) = fit.step(&fit.last_state, 1.5);
        let expect = 0.001 + 0.5 * 0.010 + 0.2 * 0.005 + 0.02 * 1.5;
        assert!((r - expect).abs() < 1e-15);
        assert_eq!(st.returns, vec![r]);
        assert!((st.residuals[0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn ljung_box_detects_arch_effects() {
        let x = simulate_garch(2000, 1e-6, 0.2, 0.75, 5);
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(ljung_box(&sq, 10).1 < 0.01);
        let g = gaussian(2000, 6);
        let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
        assert!(ljung_box(&sq, 10).1 > 0.01);
    }
}
