//! Efficient frontiers in ESG-valued space, realized portfolio series and
//! tangent portfolios.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::esg_transform::{blend_scenarios, EsgBlendParams};
use crate::market_data::{EsgPanel, ReturnPanel};
use crate::numeric::{mean, sample_std};
use crate::optimizer::{cvar_loss, sweep_alpha, OptimizationSpec, RiskMeasure, SolveStatus, Weights};
use crate::scenario::ScenarioMatrix;

/// CVaR level used for the tail-risk columns of an MV frontier.
pub const REPORT_BETA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub alpha: f64,
    pub weights: Weights,
    /// Scenario mean of the ESG-valued portfolio return.
    pub mean_z: f64,
    /// Scenario standard deviation of the ESG-valued portfolio return.
    pub risk_z: f64,
    /// Scenario CVaR of the ESG-valued portfolio loss.
    pub cvar_z: f64,
    pub mean_r: f64,
    pub risk_r: f64,
    pub cvar_r: f64,
    /// Portfolio score on the raw 0-100 scale.
    pub esg_star: f64,
    /// Portfolio normalized score.
    pub sigma_star: f64,
    pub status: SolveStatus,
}

/// Frontier inputs for one date: plain scenarios plus the scores that
/// apply to the forecast day.
#[derive(Debug, Clone, Copy)]
pub struct FrontierInputs<'a> {
    pub scenarios: &'a ScenarioMatrix,
    pub normalized_scores: &'a [f64],
    pub raw_scores: &'a [f64],
}

/// Blends scenarios at `params`, sweeps `alphas` and reports each optimum
/// in both return spaces. Per-point solver errors are kept in place.
pub fn build_frontier(
    inputs: FrontierInputs<'_>,
    params: &EsgBlendParams,
    alphas: &[f64],
    template: &OptimizationSpec,
) -> Result<Vec<Result<FrontierPoint>>> {
    let n = inputs.scenarios.n_assets();
    if inputs.normalized_scores.len() != n || inputs.raw_scores.len() != n {
        return Err(Error::Shape(format!(
            "{} assets with {} normalized and {} raw scores",
            n,
            inputs.normalized_scores.len(),
            inputs.raw_scores.len()
        )));
    }
    let blended = blend_scenarios(inputs.scenarios, inputs.normalized_scores, params)?;
    let beta = match template.risk {
        RiskMeasure::Mcvar { beta } => beta,
        RiskMeasure::Mv => REPORT_BETA,
    };
    let reports = sweep_alpha(&blended, alphas, template)?;
    Ok(reports
        .into_iter()
        .map(|r| {
            r.map(|rep| {
                let theta = &rep.weights.theta;
                let z = blended.portfolio(theta);
                let x = inputs.scenarios.portfolio(theta);
                FrontierPoint {
                    lambda: params.lambda(),
                    alpha: rep.alpha,
                    mean_z: mean(&z),
                    risk_z: sample_std(&z),
                    cvar_z: cvar_loss(&z, beta),
                    mean_r: mean(&x),
                    risk_r: sample_std(&x),
                    cvar_r: cvar_loss(&x, beta),
                    esg_star: dot(theta, inputs.raw_scores),
                    sigma_star: dot(theta, inputs.normalized_scores),
                    status: rep.status,
                    weights: rep.weights,
                }
            })
        })
        .collect())
}

/// Frontiers for several affinities, computed in parallel.
pub fn build_frontiers(
    inputs: FrontierInputs<'_>,
    lambdas: &[EsgBlendParams],
    alphas: &[f64],
    template: &OptimizationSpec,
) -> Result<Vec<Vec<Result<FrontierPoint>>>> {
    lambdas
        .par_iter()
        .map(|p| build_frontier(inputs, p, alphas, template))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangentResult {
    pub point: FrontierPoint,
    pub zeta_f: f64,
    pub slope: f64,
    /// The riskless rate lies above every frontier mean.
    pub negative_slope: bool,
}

/// Frontier point with the steepest line from `(0, zeta_f)` in the
/// `(risk_z, mean_z)` plane. Ties go to the smaller risk. The search is
/// over the given grid points only.
pub fn tangent_portfolio(frontier: &[FrontierPoint], zeta_f: f64) -> Result<TangentResult> {
    if frontier.is_empty() {
        return Err(Error::NoTangent("empty frontier".into()));
    }
    let mut best: Option<(f64, &FrontierPoint)> = None;
    for p in frontier {
        if !(p.risk_z > 0.0) {
            continue;
        }
        let slope = (p.mean_z - zeta_f) / p.risk_z;
        if !slope.is_finite() {
            continue;
        }
        best = match best {
            None => Some((slope, p)),
            Some((s, q)) if slope > s || (slope == s && p.risk_z < q.risk_z) => Some((slope, p)),
            keep => keep,
        };
    }
    let (slope, point) = best.ok_or_else(|| {
        Error::NoTangent("no frontier point has positive risk and a finite slope".into())
    })?;
    Ok(TangentResult {
        point: point.clone(),
        zeta_f,
        slope,
        negative_slope: slope < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizedSeries {
    /// Dates of the realized returns (the day after each decision).
    pub dates: Vec<NaiveDate>,
    pub realized_r: Vec<f64>,
    pub realized_z: Vec<f64>,
    pub price: Vec<f64>,
    /// ESG-valued price with initial value 1.
    pub esg_price: Vec<f64>,
    /// Portfolio score on the raw scale.
    pub esg_score: Vec<f64>,
}

/// Applies weights decided on date `t` to the returns and scores of the
/// next calendar date, then cumulates.
pub fn realize_series(
    weights_by_date: &[(NaiveDate, Vec<f64>)],
    returns: &ReturnPanel,
    esg: &EsgPanel,
    params: &EsgBlendParams,
    p0: f64,
) -> Result<RealizedSeries> {
    if esg.tickers != returns.tickers {
        return Err(Error::Shape("ESG and return panels list different tickers".into()));
    }
    let n = weights_by_date.len();
    let mut out = RealizedSeries {
        dates: Vec::with_capacity(n),
        realized_r: Vec::with_capacity(n),
        realized_z: Vec::with_capacity(n),
        price: Vec::with_capacity(n),
        esg_price: Vec::with_capacity(n),
        esg_score: Vec::with_capacity(n),
    };
    let (mut cum_r, mut cum_z) = (0.0, 0.0);
    for (date, theta) in weights_by_date {
        if theta.len() != returns.n_assets() {
            return Err(Error::Shape(format!(
                "{} weights for {} assets on {date}",
                theta.len(),
                returns.n_assets()
            )));
        }
        let t = returns
            .calendar
            .index_of(*date)
            .ok_or_else(|| Error::Alignment(format!("decision date {date} not on the return calendar")))?;
        let next = returns.calendar.dates().get(t + 1).copied().ok_or_else(|| {
            Error::Alignment(format!("no realized return after decision date {date}"))
        })?;
        let e = esg
            .calendar
            .index_of(next)
            .ok_or_else(|| Error::Alignment(format!("{next} not on the ESG calendar")))?;
        let r_row = &returns.returns[t + 1];
        let s_row = esg.normalized_row(e);
        let r = dot(theta, r_row);
        let z: f64 = theta
            .iter()
            .zip(r_row.iter().zip(s_row))
            .map(|(w, (r, s))| w * params.blend(*r, *s))
            .sum();
        cum_r += r;
        cum_z += z;
        out.dates.push(next);
        out.realized_r.push(r);
        out.realized_z.push(z);
        out.price.push(p0 * cum_r.exp());
        out.esg_price.push(cum_z.exp());
        out.esg_score.push(dot(theta, esg.raw_row(e)));
    }
    Ok(out)
}
