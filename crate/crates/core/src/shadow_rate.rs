//! Shadow riskless rate of a market with N assets and N − 1 Brownian
//! motions and no traded riskless asset.
//!
//! With asset dynamics `dS_i / S_i = mu_i dt + sum_j sigma_ij dW_j` and a
//! deflator `dπ / π = mu_pi dt + sum_j sigma_pi_j dW_j`, requiring every
//! deflated price to be a martingale gives the N × N linear system
//! `-mu_pi - sum_j sigma_ij sigma_pi_j = mu_i`. The shadow rate is `-mu_pi`.

use chrono::NaiveDate;
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esg_transform::EsgBlendParams;
use crate::market_data::{EsgPanel, ReturnPanel};
use crate::numeric::{clip_eigenvalues, mean, mean_and_covariance, sample_std};

/// Systems with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketEstimate {
    pub tickers: Vec<String>,
    /// Per-day drifts of the ESG-valued returns.
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub psd_repaired: bool,
}

/// Sample mean and covariance of the ESG-valued returns over the whole
/// `window` panel. Each day's return is blended with that day's score.
pub fn estimate_market(window: &ReturnPanel, esg: &EsgPanel, params: &EsgBlendParams) -> Result<MarketEstimate> {
    let n = window.n_assets();
    if window.len() < n + 2 {
        return Err(Error::WindowTooShort {
            needed: n + 2,
            got: window.len(),
        });
    }
    if esg.tickers != window.tickers {
        return Err(Error::Shape("ESG and return panels list different tickers".into()));
    }
    let rows: Vec<Vec<f64>> = window
        .calendar
        .dates()
        .iter()
        .zip(&window.returns)
        .map(|(d, r)| {
            let s = esg.normalized_on(*d)?;
            Ok(r.iter().zip(s).map(|(r, s)| params.blend(*r, *s)).collect())
        })
        .collect::<Result<_>>()?;
    let (mu, cov) = mean_and_covariance(&rows);
    let floor = 1e-12 * cov.trace() / n as f64;
    let (sigma, psd_repaired) = clip_eigenvalues(&cov, floor);
    if psd_repaired {
        debug!("covariance eigenvalues clipped at {floor:e}");
    }
    let dates = window.calendar.dates();
    Ok(MarketEstimate {
        tickers: window.tickers.clone(),
        mu,
        sigma,
        start: dates[0],
        end: dates[dates.len() - 1],
        psd_repaired,
    })
}

/// Weights of the combination that merges the last two Cholesky columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnReduction {
    pub second_last: f64,
    pub last: f64,
}

impl Default for ColumnReduction {
    fn default() -> Self {
        Self {
            second_last: 1.0,
            last: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    /// Tickers in row order (decreasing variance, ties by ticker).
    pub tickers: Vec<String>,
    /// `order[k]` is the estimate index of row `k`.
    pub order: Vec<usize>,
    /// Lower Cholesky factor of the sorted covariance, before reduction.
    pub factor: DMatrix<f64>,
    /// `N × (N − 1)` loadings.
    pub sigma: DMatrix<f64>,
}

impl LoadingMatrix {
    /// `mu` permuted into row order.
    pub fn sorted_mu(&self, mu: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.order.len(), self.order.iter().map(|&i| mu[i]))
    }
}

/// Sorts assets by decreasing variance, factors `Σ = L Lᵀ` and merges the
/// last two columns of `L` (row `i` holds the loadings of asset `i`).
pub fn build_loadings(est: &MarketEstimate, reduction: ColumnReduction) -> Result<LoadingMatrix> {
    let n = est.tickers.len();
    if n < 2 {
        return Err(Error::Precondition("the shadow rate needs at least two assets".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        est.sigma[(b, b)]
            .total_cmp(&est.sigma[(a, a)])
            .then_with(|| est.tickers[a].cmp(&est.tickers[b]))
    });
    let sorted = DMatrix::from_fn(n, n, |i, j| est.sigma[(order[i], order[j])]);
    let factor = sorted
        .cholesky()
        .ok_or_else(|| Error::Cholesky("sorted covariance is not positive definite".into()))?
        .unpack();
    let sigma = DMatrix::from_fn(n, n - 1, |i, j| {
        if j < n - 2 {
            factor[(i, j)]
        } else {
            reduction.second_last * factor[(i, n - 2)] + reduction.last * factor[(i, n - 1)]
        }
    });
    Ok(LoadingMatrix {
        tickers: order.iter().map(|&i| est.tickers[i].clone()).collect(),
        order,
        factor,
        sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeflatorSolution {
    pub mu_pi: f64,
    pub sigma_pi: Vec<f64>,
    pub srr: f64,
    pub sigma_pi_norm: f64,
    /// `mu_pi / |sigma_pi|`; absent when the deflator has no diffusion.
    pub ir: Option<f64>,
    /// `max_i |(A x - mu)_i|`.
    pub residual: f64,
    pub condition: f64,
}

/// Solves `[-1 | -σ] [mu_pi; sigma_pi] = mu` exactly.
pub fn solve_deflator(mu: &DVector<f64>, loadings: &DMatrix<f64>) -> Result<DeflatorSolution> {
    let n = mu.len();
    if n < 2 || loadings.nrows() != n || loadings.ncols() != n - 1 {
        return Err(Error::Shape(format!(
            "drift of length {n} needs {n} × {} loadings, got {} × {}",
            n.saturating_sub(1),
            loadings.nrows(),
            loadings.ncols()
        )));
    }
    let a = DMatrix::from_fn(n, n, |i, j| if j == 0 { -1.0 } else { -loadings[(i, j - 1)] });
    let sv = a.singular_values();
    let smin = sv.min();
    let condition = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let x = a.clone().lu().solve(mu).ok_or(Error::SingularSystem { condition })?;
    let residual = (&a * &x - mu).amax();
    let mu_pi = x[0];
    let sigma_pi: Vec<f64> = x.iter().skip(1).copied().collect();
    let sigma_pi_norm = sigma_pi.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(DeflatorSolution {
        mu_pi,
        srr: -mu_pi,
        ir: (sigma_pi_norm > 0.0).then(|| mu_pi / sigma_pi_norm),
        sigma_pi,
        sigma_pi_norm,
        residual,
        condition,
    })
}

/// Estimate, factor and solve in one step.
pub fn deflator_for(est: &MarketEstimate, reduction: ColumnReduction) -> Result<DeflatorSolution> {
    let loadings = build_loadings(est, reduction)?;
    solve_deflator(&loadings.sorted_mu(&est.mu), &loadings.sigma)
}

#[derive(Debug)]
pub struct SrrPoint {
    /// Last date of the estimation window.
    pub date: NaiveDate,
    pub solution: Result<DeflatorSolution>,
}

/// One solve per date `t ≥ window − 1`, using returns `t − window + 1 ..= t`.
pub fn srr_series(
    panel: &ReturnPanel,
    esg: &EsgPanel,
    params: &EsgBlendParams,
    window: usize,
    reduction: ColumnReduction,
) -> Result<Vec<SrrPoint>> {
    let needed = window.max(panel.n_assets() + 2);
    if panel.len() < needed {
        return Err(Error::WindowTooShort {
            needed,
            got: panel.len(),
        });
    }
    let points: Vec<SrrPoint> = (window - 1..panel.len())
        .into_par_iter()
        .map(|t| {
            let w = panel.window(t + 1 - window..t + 1);
            let solution = estimate_market(&w, esg, params).and_then(|est| deflator_for(&est, reduction));
            SrrPoint {
                date: panel.calendar.dates()[t],
                solution,
            }
        })
        .collect();
    let failed = points.iter().filter(|p| p.solution.is_err()).count();
    if failed > 0 {
        warn!("{failed} of {} shadow-rate solves failed at lambda {}", points.len(), params.lambda());
    }
    Ok(points)
}

/// [`srr_series`] for each affinity in `lambdas`, in parallel.
pub fn srr_sweep(
    panel: &ReturnPanel,
    esg: &EsgPanel,
    lambdas: &[f64],
    window: usize,
    reduction: ColumnReduction,
) -> Result<Vec<(f64, Vec<SrrPoint>)>> {
    lambdas
        .par_iter()
        .map(|&l| {
            let p = EsgBlendParams::with_lambda(l)?;
            Ok((l, srr_series(panel, esg, &p, window, reduction)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrStats {
    pub mu_ir: f64,
    /// Sample standard deviation; 0 for a single observation.
    pub sigma_ir: f64,
    pub n_used: usize,
    pub n_skipped: usize,
}

/// Time mean and standard deviation of the information ratio, skipping
/// failed dates and dates without an ir.
pub fn ir_stats(series: &[SrrPoint]) -> Result<IrStats> {
    let ir: Vec<f64> = series
        .iter()
        .filter_map(|p| p.solution.as_ref().ok().and_then(|s| s.ir))
        .collect();
    if ir.is_empty() {
        return Err(Error::Precondition("no information ratios to summarize".into()));
    }
    Ok(IrStats {
        mu_ir: mean(&ir),
        sigma_ir: sample_std(&ir),
        n_used: ir.len(),
        n_skipped: series.len() - ir.len(),
    })
}
