//! Performance and reward-risk measures.
//!
//! Tail measures use order statistics: the `ceil((1 - beta) n)` worst (or
//! best) observations, no interpolation. Values are fractions, not percent.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::esg_transform::{esg_valued_riskless, EsgBlendParams};
use crate::numeric::{mean, sample_std};

/// Days per year used for annualization (same constant as the ESG scale).
pub const DAYS_PER_YEAR: f64 = 255.0;

/// `ceil` that ignores representation noise such as `0.05 * 20 = 1.0000000000000009`.
fn robust_ceil(v: f64) -> usize {
    (v - 1e-9).ceil().max(0.0) as usize
}

fn tail_count(n: usize, beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("tail level {beta} outside (0, 1)")));
    }
    let needed = robust_ceil(1.0 / (1.0 - beta)).max(1);
    if n < needed {
        return Err(Error::SampleTooSmall { needed, got: n });
    }
    Ok(robust_ceil((1.0 - beta) * n as f64).max(1))
}

/// Expected tail loss: mean of the worst `ceil((1 - beta) n)` returns
/// (a signed return, usually negative).
pub fn etl(returns: &[f64], beta: f64) -> Result<f64> {
    let k = tail_count(returns.len(), beta)?;
    let mut v = returns.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[..k].iter().sum::<f64>() / k as f64)
}

/// Expected tail return: mean of the best `ceil((1 - beta) n)` returns.
pub fn etr(returns: &[f64], beta: f64) -> Result<f64> {
    let k = tail_count(returns.len(), beta)?;
    let mut v = returns.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v[..k].iter().sum::<f64>() / k as f64)
}

/// Largest peak-to-trough fall as a fraction of the running peak.
pub fn max_drawdown(prices: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd = 0.0f64;
    for &p in prices {
        peak = peak.max(p);
        mdd = mdd.max((peak - p) / peak);
    }
    mdd
}

/// Which riskless rate the excess returns are measured against.
#[derive(Debug, Clone, Copy)]
pub enum ExcessBasis {
    /// The plain riskless rate `r_f`.
    FixedRf,
    /// The ESG-valued riskless rate `lambda / c + (1 - lambda) r_f`.
    EsgRf(EsgBlendParams),
}

fn excess(series: &[f64], rates: &[f64]) -> Result<Vec<f64>> {
    if series.len() != rates.len() {
        return Err(Error::Shape(format!(
            "{} returns against {} rates",
            series.len(),
            rates.len()
        )));
    }
    Ok(series.iter().zip(rates).map(|(x, r)| x - r).collect())
}

fn star_of_excess(x: &[f64], beta: f64) -> Result<f64> {
    let tail = etl(x, beta)?;
    if tail == 0.0 {
        return Err(Error::ZeroDenominator("STAR ratio"));
    }
    Ok(mean(x) / tail.abs())
}

/// STAR ratio: mean excess return over the magnitude of its ETL.
pub fn star_ratio(basis: ExcessBasis, series: &[f64], rf: &[f64], beta: f64) -> Result<f64> {
    let rates: Vec<f64> = match basis {
        ExcessBasis::FixedRf => rf.to_vec(),
        ExcessBasis::EsgRf(p) => rf.iter().map(|r| esg_valued_riskless(*r, &p)).collect(),
    };
    star_of_excess(&excess(series, &rates)?, beta)
}

/// Reward-risk ratios of one series. A ratio whose denominator vanishes
/// carries a `ZeroDenominator` error; the others are still computed.
#[derive(Debug)]
pub struct RrrSuite {
    pub sharpe: Result<f64>,
    pub sortino: Result<f64>,
    pub star: Result<f64>,
    pub rachev: Result<f64>,
    pub gini: Result<f64>,
}

fn ratio(num: f64, den: f64, name: &'static str) -> Result<f64> {
    if den == 0.0 || !den.is_finite() {
        Err(Error::ZeroDenominator(name))
    } else {
        Ok(num / den)
    }
}

/// Gini mean difference: mean of `|x_i - x_j|` over ordered pairs `i != j`.
pub fn gini_mean_difference(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let s: f64 = v
        .iter()
        .enumerate()
        .map(|(i, xi)| (2.0 * i as f64 - n as f64 + 1.0) * xi)
        .sum();
    2.0 * s / (n as f64 * (n as f64 - 1.0))
}

/// Sharpe, Sortino (target 0), STAR, Rachev and Gini ratios on
/// `series - rates`. Pass zero rates for plain-return ratios.
pub fn rrr_suite(series: &[f64], rates: &[f64], beta: f64) -> Result<RrrSuite> {
    if series.len() < 30 {
        return Err(Error::SampleTooSmall {
            needed: 30,
            got: series.len(),
        });
    }
    let x = excess(series, rates)?;
    let m = mean(&x);
    let downside = (x.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    let tail_loss = etl(&x, beta)?;
    let tail_gain = etr(&x, beta)?;
    Ok(RrrSuite {
        sharpe: ratio(m, sample_std(&x), "Sharpe ratio"),
        sortino: ratio(m, downside, "Sortino ratio"),
        star: ratio(m, tail_loss.abs(), "STAR ratio"),
        rachev: ratio(tail_gain, tail_loss.abs(), "Rachev ratio"),
        gini: ratio(m, gini_mean_difference(&x), "Gini ratio"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    /// Adjusted Fisher-Pearson skewness `G1`; `None` for a constant series.
    pub skew: Option<f64>,
    /// Bias-adjusted excess kurtosis `G2`; `None` for a constant series.
    pub excess_kurtosis: Option<f64>,
}

pub fn moments(series: &[f64]) -> Result<MomentSummary> {
    let n = series.len();
    if n < 4 {
        return Err(Error::SampleTooSmall { needed: 4, got: n });
    }
    let m = mean(series);
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let central = |k: i32| series.iter().map(|v| (v - m).powi(k)).sum::<f64>() / n as f64;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let nf = n as f64;
    let (skew, excess_kurtosis) = if m2 > 0.0 {
        let g1 = m3 / m2.powf(1.5);
        let g2 = m4 / (m2 * m2) - 3.0;
        (
            Some((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1),
            Some(((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0))),
        )
    } else {
        (None, None)
    };
    Ok(MomentSummary {
        mean: m,
        median,
        std: sample_std(series),
        skew,
        excess_kurtosis,
    })
}

/// Time average of the L1 weight change between consecutive dates.
pub fn avg_turnover(weights_by_date: &[Vec<f64>]) -> Result<f64> {
    if weights_by_date.len() < 2 {
        return Err(Error::SampleTooSmall {
            needed: 2,
            got: weights_by_date.len(),
        });
    }
    let total: f64 = weights_by_date
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    Ok(total / (weights_by_date.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceSummary {
    pub tot_ret: f64,
    pub ann_ret: f64,
    pub avg_turnover: f64,
    pub etl: f64,
    pub etr: f64,
    pub mdd: f64,
    pub esg_avg: f64,
    pub esg_std: f64,
}

/// Summary of a realized run. `prices` starts with the initial value,
/// `returns` are the daily portfolio returns, `turnover` the per-day L1
/// traded fraction and `esg` the daily portfolio ESG score.
pub fn performance_summary(
    prices: &[f64],
    returns: &[f64],
    turnover: &[f64],
    esg: &[f64],
    beta: f64,
) -> Result<PerformanceSummary> {
    if prices.len() < 2 {
        return Err(Error::SampleTooSmall {
            needed: 2,
            got: prices.len(),
        });
    }
    let tot_ret = prices[prices.len() - 1] / prices[0] - 1.0;
    let days = (prices.len() - 1) as f64;
    Ok(PerformanceSummary {
        tot_ret,
        ann_ret: (1.0 + tot_ret).powf(DAYS_PER_YEAR / days) - 1.0,
        avg_turnover: if turnover.is_empty() { 0.0 } else { mean(turnover) },
        etl: etl(returns, beta)?,
        etr: etr(returns, beta)?,
        mdd: max_drawdown(prices),
        esg_avg: mean(esg),
        esg_std: sample_std(esg),
    })
}
