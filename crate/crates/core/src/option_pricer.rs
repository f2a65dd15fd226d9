//! European option values on an ESG-valued underlying under the
//! minimum-entropy risk-neutral measure, and Black-Scholes implied vols.
//!
//! Minimizing `sum q ln(q / p)` subject to `sum q = 1` and the martingale
//! condition `sum q y = spot` (with `y` the discounted terminal prices) has
//! the closed-form dual solution `q_s ∝ p_s exp(eta y_s)`. Only the scalar
//! `eta` is found numerically.

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::DAYS_PER_YEAR;
use crate::error::{Error, Result};
use crate::numeric::roots::brent;
use crate::scenario::TrajectoryEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskNeutralWeights {
    pub q: Vec<f64>,
    pub kl_divergence: f64,
    /// Multiplier on the discounted terminal price (price units⁻¹).
    pub tilt: f64,
    /// `|sum q y - spot| / spot` at the solution.
    pub martingale_residual: f64,
}

fn discounted(terminal: &[f64], zeta_f: f64, t_days: f64) -> Vec<f64> {
    let df = (-zeta_f * t_days).exp();
    terminal.iter().map(|p| p * df).collect()
}

/// Tilted weights `p exp(eta u)` normalized, with `u` pre-scaled.
fn tilted(p: &[f64], u: &[f64], eta: f64) -> Vec<f64> {
    let m = u.iter().map(|v| eta * v).fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = p.iter().zip(u).map(|(p, u)| p * (eta * u - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Minimum-KL measure over `terminal` ESG-valued prices at horizon
/// `t_days`. `prior` defaults to uniform.
pub fn solve_risk_neutral(
    terminal: &[f64],
    prior: Option<&[f64]>,
    zeta_f: f64,
    t_days: f64,
    spot: f64,
) -> Result<RiskNeutralWeights> {
    let s = terminal.len();
    if s == 0 {
        return Err(Error::Precondition("no terminal prices".into()));
    }
    if terminal.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::Domain("terminal prices must be positive and finite".into()));
    }
    if !(spot > 0.0) {
        return Err(Error::Domain(format!("spot {spot} must be positive")));
    }
    let uniform;
    let p = match prior {
        Some(p) => {
            if p.len() != s || p.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Domain("prior must be positive, one weight per path".into()));
            }
            p
        }
        None => {
            uniform = vec![1.0 / s as f64; s];
            &uniform
        }
    };
    let y = discounted(terminal, zeta_f, t_days);
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let residual = |q: &[f64]| (q.iter().zip(&y).map(|(q, y)| q * y).sum::<f64>() - spot).abs() / spot;

    if hi - lo <= 1e-12 * spot && (0.5 * (hi + lo) - spot).abs() <= 1e-12 * spot {
        let q = p.to_vec();
        let martingale_residual = residual(&q);
        return Ok(RiskNeutralWeights {
            q,
            kl_divergence: 0.0,
            tilt: 0.0,
            martingale_residual,
        });
    }
    if !(lo < spot && spot < hi) {
        return Err(Error::InfeasibleMartingale { spot, lo, hi });
    }
    let width = hi - lo;
    let u: Vec<f64> = y.iter().map(|v| (v - spot) / width).collect();
    let mean_u = |eta: f64| -> f64 {
        let q = tilted(p, &u, eta);
        q.iter().zip(&u).map(|(q, u)| q * u).sum()
    };
    let mut bound = 1.0;
    while mean_u(-bound) > 0.0 || mean_u(bound) < 0.0 {
        bound *= 2.0;
        if bound > 1e12 {
            return Err(Error::NoConvergence("martingale tilt could not be bracketed".into()));
        }
    }
    let eta = brent(mean_u, -bound, bound, 1e-15, 0.0, 500)?;
    let q = tilted(p, &u, eta);
    let kl = q
        .iter()
        .zip(p)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, p)| q * (q / p).ln())
        .sum();
    let martingale_residual = residual(&q);
    Ok(RiskNeutralWeights {
        q,
        kl_divergence: kl,
        tilt: eta / width,
        martingale_residual,
    })
}

/// `(call, put)` values per strike: discounted `q`-expectations of the payoffs.
pub fn value_options(
    terminal: &[f64],
    rn: &RiskNeutralWeights,
    strikes: &[f64],
    zeta_f: f64,
    t_days: f64,
) -> Result<Vec<(f64, f64)>> {
    if rn.q.len() != terminal.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} paths",
            rn.q.len(),
            terminal.len()
        )));
    }
    let df = (-zeta_f * t_days).exp();
    Ok(strikes
        .iter()
        .map(|&k| {
            let (mut c, mut p) = (0.0, 0.0);
            for (q, x) in rn.q.iter().zip(terminal) {
                if *x > k {
                    c += q * (x - k);
                } else {
                    p += q * (k - x);
                }
            }
            (df * c, df * p)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// Inputs of a Black-Scholes evaluation in the toolkit's daily units.
#[derive(Debug, Clone, Copy)]
pub struct BsInputs {
    pub spot: f64,
    pub strike: f64,
    pub t_days: f64,
    /// Per-day riskless rate; annualized by `DAYS_PER_YEAR`.
    pub zeta_f: f64,
}

impl BsInputs {
    fn tau(&self) -> f64 {
        self.t_days / DAYS_PER_YEAR
    }

    fn discount(&self) -> f64 {
        (-self.zeta_f * self.t_days).exp()
    }

    fn forward(&self) -> f64 {
        self.spot / self.discount()
    }

    /// Side that is out of the money forward (`Put` when `K < F`).
    fn otm_kind(&self) -> OptionKind {
        if self.strike < self.forward() {
            OptionKind::Put
        } else {
            OptionKind::Call
        }
    }

    /// No-arbitrage bounds of the value of `kind`.
    pub fn bounds(&self, kind: OptionKind) -> (f64, f64) {
        let kd = self.strike * self.discount();
        match kind {
            OptionKind::Call => ((self.spot - kd).max(0.0), self.spot),
            OptionKind::Put => ((kd - self.spot).max(0.0), kd),
        }
    }
}

/// Upper-tail Mills ratio `N(-x) / phi(x)`.
fn mills(x: f64) -> f64 {
    if x < 26.0 {
        0.5 * libm::erfc(x / std::f64::consts::SQRT_2) / crate::numeric::norm_pdf(x)
    } else {
        let mut t = x;
        for k in (1..=40).rev() {
            t = x + k as f64 / t;
        }
        1.0 / t
    }
}

/// Log of the out-of-the-money option value, written as
/// `S phi(d1) [R(a) - R(b)]` so it stays accurate when the value itself
/// would underflow.
fn log_otm_value(inp: &BsInputs, sigma: f64) -> f64 {
    let v = sigma * inp.tau().sqrt();
    let k = (inp.strike / inp.forward()).ln();
    let d1 = -k / v + 0.5 * v;
    let d2 = d1 - v;
    let diff = match inp.otm_kind() {
        OptionKind::Put => mills(d2) - mills(d1),
        OptionKind::Call => mills(-d1) - mills(-d2),
    };
    inp.spot.ln() - 0.5 * d1 * d1 - 0.5 * (2.0 * std::f64::consts::PI).ln() + diff.ln()
}

/// Black-Scholes value with annualized volatility `sigma`.
pub fn black_scholes(kind: OptionKind, inp: &BsInputs, sigma: f64) -> f64 {
    let otm = log_otm_value(inp, sigma).exp();
    if kind == inp.otm_kind() {
        otm
    } else {
        // Parity: C - P = S - K e^{-r tau}.
        let carry = inp.spot - inp.strike * inp.discount();
        match kind {
            OptionKind::Call => otm + carry,
            OptionKind::Put => otm - carry,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpliedVol {
    pub sigma: f64,
    /// The value sits at (or below) the `sigma = 1e-6` price: no time value.
    pub at_lower_bound: bool,
}

pub const IV_LOWER: f64 = 1e-6;
pub const IV_UPPER: f64 = 5.0;

/// Inverts Black-Scholes for `sigma` in `[1e-6, 5]`. The value is first
/// mapped to the out-of-the-money side through put-call parity and matched
/// in log space.
pub fn implied_vol(value: f64, kind: OptionKind, inp: &BsInputs) -> Result<ImpliedVol> {
    let (lower, upper) = inp.bounds(kind);
    let tol = 1e-12 * inp.spot.max(inp.strike);
    if !value.is_finite() || value < lower - tol || value > upper + tol {
        return Err(Error::OutOfBounds { value, lower, upper });
    }
    let otm = if kind == inp.otm_kind() {
        value
    } else {
        let carry = inp.spot - inp.strike * inp.discount();
        let otm = match kind {
            OptionKind::Call => value - carry,
            OptionKind::Put => value + carry,
        };
        // Time value recovered by subtraction is rounding noise below a
        // few ulps of the carry.
        if otm <= 8.0 * f64::EPSILON * inp.spot.max(inp.strike) {
            0.0
        } else {
            otm
        }
    };
    let floor = ImpliedVol {
        sigma: IV_LOWER,
        at_lower_bound: true,
    };
    if otm <= 0.0 {
        return Ok(floor);
    }
    let target = otm.ln();
    let f = |s: f64| log_otm_value(inp, s) - target;
    if f(IV_LOWER) >= 0.0 {
        return Ok(floor);
    }
    if f(IV_UPPER) < 0.0 {
        return Err(Error::NoConvergence(format!(
            "value {value} exceeds the Black-Scholes value at sigma = {IV_UPPER}"
        )));
    }
    let sigma = brent(f, IV_LOWER, IV_UPPER, 1e-15, 1e-15, 300)?;
    Ok(ImpliedVol {
        sigma,
        at_lower_bound: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceCell {
    pub t_days: usize,
    pub moneyness: f64,
    pub strike: f64,
    pub call: f64,
    pub put: f64,
    pub iv_call: Option<f64>,
    pub iv_put: Option<f64>,
    /// `|C - P - (spot - K e^{-zeta_f T})|`.
    pub parity_residual: f64,
    pub martingale_residual: f64,
    pub kl_divergence: f64,
    /// Why a value or implied vol is missing, or that an IV hit its floor.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptionSurface {
    pub lambda: f64,
    pub spot: f64,
    pub zeta_f: f64,
    pub maturities: Vec<usize>,
    pub moneyness: Vec<f64>,
    /// Maturity-major: `cells[t_index * moneyness.len() + m_index]`.
    pub cells: Vec<SurfaceCell>,
}

impl OptionSurface {
    pub fn cell(&self, t_index: usize, m_index: usize) -> &SurfaceCell {
        &self.cells[t_index * self.moneyness.len() + m_index]
    }
}

/// Per-maturity risk-neutral solve and per-strike valuation with
/// `K = M * spot`. Failures are recorded in the affected cells.
pub fn surface(
    ensemble: &TrajectoryEnsemble,
    zeta_f: f64,
    t_grid: &[usize],
    m_grid: &[f64],
) -> Result<OptionSurface> {
    if let Some(t) = t_grid.iter().find(|t| **t == 0 || **t > ensemble.t_max) {
        return Err(Error::Precondition(format!(
            "maturity {t} outside the simulated horizon 1..={}",
            ensemble.t_max
        )));
    }
    if m_grid.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Domain("moneyness values must be positive".into()));
    }
    let spot = ensemble.pricing.spot;
    let strikes: Vec<f64> = m_grid.iter().map(|m| m * spot).collect();
    let rows: Vec<Vec<SurfaceCell>> = t_grid
        .par_iter()
        .map(|&t| maturity_row(ensemble, zeta_f, t, m_grid, &strikes))
        .collect::<Result<_>>()?;
    Ok(OptionSurface {
        lambda: ensemble.pricing.params.lambda(),
        spot,
        zeta_f,
        maturities: t_grid.to_vec(),
        moneyness: m_grid.to_vec(),
        cells: rows.into_iter().flatten().collect(),
    })
}

fn maturity_row(
    ensemble: &TrajectoryEnsemble,
    zeta_f: f64,
    t: usize,
    m_grid: &[f64],
    strikes: &[f64],
) -> Result<Vec<SurfaceCell>> {
    let spot = ensemble.pricing.spot;
    let terminal = ensemble.terminal(t)?;
    let td = t as f64;
    let rn = match solve_risk_neutral(&terminal, None, zeta_f, td, spot) {
        Ok(rn) => rn,
        Err(e) => {
            let note = Some(e.to_string());
            return Ok(m_grid
                .iter()
                .zip(strikes)
                .map(|(&m, &k)| SurfaceCell {
                    t_days: t,
                    moneyness: m,
                    strike: k,
                    call: f64::NAN,
                    put: f64::NAN,
                    iv_call: None,
                    iv_put: None,
                    parity_residual: f64::NAN,
                    martingale_residual: f64::NAN,
                    kl_divergence: f64::NAN,
                    note: note.clone(),
                })
                .collect());
        }
    };
    let values = value_options(&terminal, &rn, strikes, zeta_f, td)?;
    let df = (-zeta_f * td).exp();
    Ok(m_grid
        .iter()
        .zip(strikes)
        .zip(values)
        .map(|((&m, &k), (call, put))| {
            let inp = BsInputs {
                spot,
                strike: k,
                t_days: td,
                zeta_f,
            };
            let mut notes = Vec::new();
            let mut iv = |value: f64, kind: OptionKind| match implied_vol(value, kind, &inp) {
                Ok(v) if v.at_lower_bound => {
                    notes.push(format!("{kind:?} implied vol at lower bound"));
                    Some(v.sigma)
                }
                Ok(v) => Some(v.sigma),
                Err(e) => {
                    notes.push(format!("{kind:?}: {e}"));
                    None
                }
            };
            let iv_call = iv(call, OptionKind::Call);
            let iv_put = iv(put, OptionKind::Put);
            SurfaceCell {
                t_days: t,
                moneyness: m,
                strike: k,
                call,
                put,
                iv_call,
                iv_put,
                parity_residual: (call - put - (spot - k * df)).abs(),
                martingale_residual: rn.martingale_residual,
                kl_divergence: rn.kl_divergence,
                note: if notes.is_empty() { None } else { Some(notes.join("; ")) },
            }
        })
        .collect())
}

/// Evenly spaced integer maturities from `lo` to `hi` inclusive.
pub fn maturity_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count <= 1 || hi <= lo {
        return vec![lo];
    }
    let step = (hi - lo) as f64 / (count - 1) as f64;
    let mut out: Vec<usize> = (0..count).map(|k| lo + (k as f64 * step).round() as usize).collect();
    out.dedup();
    out
}
