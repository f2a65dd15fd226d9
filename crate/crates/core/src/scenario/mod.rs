//! Scenario generation: per-asset ARMA-GARCH fits, a joint NIG model of the
//! standardized innovations, one-step scenario matrices and multi-step
//! trajectory ensembles.
//!
//! Every scenario (or trajectory) draws from its own ChaCha stream keyed by
//! `(seed, index)`, so results do not depend on thread count or scheduling.

pub mod arma_garch;
pub mod nig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esg_transform::EsgBlendParams;
use crate::market_data::ReturnPanel;

pub use arma_garch::{fit_arma_garch, ArmaGarchFit, FitOptions, FitReport, FitState, OrderGrid};
pub use nig::{fit_joint_nig, fit_joint_nig_from, ClassicalNig, NigFit, NigFitOptions, NigParams, NigSampler};

/// Independent generator for stream `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `S × I` matrix of one-step-ahead returns, scenario-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    values: Vec<f64>,
    n_scenarios: usize,
    n_assets: usize,
    seed: Option<u64>,
}

impl ScenarioMatrix {
    pub fn new(values: Vec<f64>, n_scenarios: usize, n_assets: usize, seed: Option<u64>) -> Result<Self> {
        if n_scenarios == 0 || n_assets == 0 {
            return Err(Error::Shape("scenario matrix needs S >= 1 and I >= 1".into()));
        }
        if values.len() != n_scenarios * n_assets {
            return Err(Error::Shape(format!(
                "{} values for a {n_scenarios} x {n_assets} scenario matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("scenario matrix contains non-finite values".into()));
        }
        Ok(Self {
            values,
            n_scenarios,
            n_assets,
            seed,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: Option<u64>) -> Result<Self> {
        let n_assets = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_assets) {
            return Err(Error::Shape("ragged scenario rows".into()));
        }
        Self::new(rows.concat(), rows.len(), n_assets, seed)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_scenarios
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_assets..(s + 1) * self.n_assets]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_assets)
    }

    /// Scenario returns of the portfolio `weights`.
    pub fn portfolio(&self, weights: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(weights).map(|(x, w)| x * w).sum())
            .collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_assets];
        for r in self.rows() {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_scenarios as f64);
        m
    }

    /// Unbiased covariance of the columns.
    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        let rows: Vec<Vec<f64>> = self.rows().map(<[f64]>::to_vec).collect();
        crate::numeric::mean_and_covariance(&rows).1
    }
}

/// Fitted models for a universe of assets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniverseModel {
    pub tickers: Vec<String>,
    pub fits: Vec<ArmaGarchFit>,
    pub joint: NigParams,
    pub nig_iterations: usize,
    pub nig_converged: bool,
    pub ridge_repaired: bool,
}

/// Fits every asset of a return window, then the joint NIG on the
/// standardized innovations.
pub fn fit_universe(
    window: &ReturnPanel,
    opts: &FitOptions,
    nig_opts: &NigFitOptions,
) -> Result<UniverseModel> {
    fit_universe_from(window, opts, nig_opts, None)
}

/// As [`fit_universe`], starting the joint EM from `previous` (typically
/// the fit of the preceding rolling window).
pub fn fit_universe_from(
    window: &ReturnPanel,
    opts: &FitOptions,
    nig_opts: &NigFitOptions,
    previous: Option<&NigParams>,
) -> Result<UniverseModel> {
    let reports: Vec<FitReport> = (0..window.n_assets())
        .into_par_iter()
        .map(|i| {
            fit_arma_garch(&window.column(i), opts).map_err(|e| match e {
                Error::Fit(m) => Error::Fit(format!("{}: {m}", window.tickers[i])),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let len = reports.iter().map(|r| r.standardized.len()).min().unwrap_or(0);
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            reports
                .iter()
                .map(|r| r.standardized[r.standardized.len() - len + t])
                .collect()
        })
        .collect();
    let joint = fit_joint_nig_from(&rows, nig_opts, previous)?;
    Ok(UniverseModel {
        tickers: window.tickers.clone(),
        fits: reports.into_iter().map(|r| r.fit).collect(),
        joint: joint.params,
        nig_iterations: joint.iterations,
        nig_converged: joint.converged,
        ridge_repaired: joint.ridge_repaired,
    })
}

/// Draws `n_scenarios` joint innovations and pushes each through every
/// asset's one-step recursion from its last state.
pub fn simulate_one_step(
    fits: &[ArmaGarchFit],
    joint: &NigParams,
    n_scenarios: usize,
    seed: u64,
) -> Result<ScenarioMatrix> {
    if fits.len() != joint.dim() {
        return Err(Error::Shape(format!(
            "{} asset fits for a {}-dimensional innovation model",
            fits.len(),
            joint.dim()
        )));
    }
    if n_scenarios == 0 {
        return Err(Error::Precondition("at least one scenario required".into()));
    }
    let sampler = joint.sampler()?;
    let d = fits.len();
    let mean: Vec<f64> = fits.iter().map(|f| f.next_mean(&f.last_state)).collect();
    let sd: Vec<f64> = fits
        .iter()
        .map(|f| f.next_variance(&f.last_state).sqrt())
        .collect();
    let mut values = vec![0.0; n_scenarios * d];
    values
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(s, row)| {
            let mut rng = stream_rng(seed, s as u64);
            sampler.sample_into(&mut rng, row);
            for i in 0..d {
                row[i] = mean[i] + sd[i] * row[i];
            }
        });
    ScenarioMatrix::new(values, n_scenarios, d, Some(seed))
}

/// ESG valuation inputs for a trajectory ensemble.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EsgPricing {
    /// ESG-valued price of the underlying today.
    pub spot: f64,
    /// Normalized ESG score held fixed over the horizon.
    pub score: f64,
    pub params: EsgBlendParams,
}

/// Paths of one underlying over horizons `1..=t_max` days.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub n_paths: usize,
    pub t_max: usize,
    /// `returns[s * t_max + (T - 1)]`: plain return on day `T` of path `s`.
    pub returns: Vec<f64>,
    /// `esg_prices[s * t_max + (T - 1)]`: ESG-valued price after `T` days.
    pub esg_prices: Vec<f64>,
    pub pricing: EsgPricing,
    pub seed: u64,
    /// Paths rejected by the overflow guard and redrawn.
    pub redraws: usize,
}

impl TrajectoryEnsemble {
    /// ESG-valued prices at horizon `t` (days) across all paths.
    pub fn terminal(&self, t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > self.t_max {
            return Err(Error::Precondition(format!(
                "horizon {t} outside 1..={}",
                self.t_max
            )));
        }
        Ok((0..self.n_paths)
            .map(|s| self.esg_prices[s * self.t_max + t - 1])
            .collect())
    }

    pub fn path_returns(&self, s: usize) -> &[f64] {
        &self.returns[s * self.t_max..(s + 1) * self.t_max]
    }

    /// Reprices the same return paths under a different ESG valuation.
    pub fn revalue(&self, pricing: EsgPricing) -> TrajectoryEnsemble {
        let mut out = self.clone();
        out.pricing = pricing;
        out.esg_prices = esg_price_paths(&self.returns, self.t_max, &pricing);
        out
    }
}

/// Blends each day's return first, then cumulates and exponentiates.
fn esg_price_paths(returns: &[f64], t_max: usize, pricing: &EsgPricing) -> Vec<f64> {
    let mut out = vec![0.0; returns.len()];
    for (path, dst) in returns.chunks_exact(t_max).zip(out.chunks_exact_mut(t_max)) {
        let mut cum = 0.0;
        for (r, p) in path.iter().zip(dst.iter_mut()) {
            cum += pricing.params.blend(*r, pricing.score);
            *p = pricing.spot * cum.exp();
        }
    }
    out
}

/// Magnitude of cumulative log return beyond which a path is redrawn.
pub const OVERFLOW_GUARD: f64 = 50.0;

/// Simulates `n_paths` trajectories of `t_max` daily returns from a
/// single-asset fit and a one-dimensional innovation model.
pub fn simulate_trajectories(
    fit: &ArmaGarchFit,
    nig: &NigParams,
    t_max: usize,
    n_paths: usize,
    seed: u64,
    pricing: EsgPricing,
) -> Result<TrajectoryEnsemble> {
    if nig.dim() != 1 {
        return Err(Error::Shape("trajectories need a one-dimensional innovation model".into()));
    }
    if t_max == 0 || n_paths == 0 {
        return Err(Error::Precondition("t_max and n_paths must be positive".into()));
    }
    if !(pricing.spot > 0.0) {
        return Err(Error::Domain(format!("spot {} must be positive", pricing.spot)));
    }
    let sampler = nig.sampler()?;
    const MAX_ATTEMPTS: usize = 1000;
    let results: Vec<(Vec<f64>, usize)> = (0..n_paths)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64);
            let mut z = [0.0];
            for attempt in 0..MAX_ATTEMPTS {
                let mut state = fit.last_state.clone();
                let mut path = Vec::with_capacity(t_max);
                let mut cum = 0.0f64;
                let mut ok = true;
                for _ in 0..t_max {
                    sampler.sample_into(&mut rng, &mut z);
                    let (r, next) = fit.step(&state, z[0]);
                    state = next;
                    cum += r;
                    if !(cum.abs() <= OVERFLOW_GUARD) {
                        ok = false;
                        break;
                    }
                    path.push(r);
                }
                if ok {
                    return Ok((path, attempt));
                }
            }
            Err(Error::NumericLimit {
                iterations: MAX_ATTEMPTS as u32,
                message: format!("path {s} exceeded the overflow guard on every attempt"),
            })
        })
        .collect::<Result<_>>()?;
    let redraws = results.iter().map(|(_, a)| a).sum();
    let returns: Vec<f64> = results.into_iter().flat_map(|(p, _)| p).collect();
    let esg_prices = esg_price_paths(&returns, t_max, &pricing);
    Ok(TrajectoryEnsemble {
        n_paths,
        t_max,
        returns,
        esg_prices,
        pricing,
        seed,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white_noise_fit(var: f64) -> ArmaGarchFit {
        ArmaGarchFit {
            p: 0,
            q: 0,
            mu: 0.0004,
            phi: vec![],
            theta: vec![],
            omega: 0.0,
            a1: 0.0,
            b1: 0.0,
            garch_active: false,
            residual_variance: var,
            bic: 0.0,
            last_state: FitState {
                returns: vec![],
                residuals: vec![0.0],
                variance: var,
            },
        }
    }

    fn near_gaussian(d: usize) -> NigParams {
        NigParams {
            location: vec![0.0; d],
            scale: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            shape: 1e6,
            skewness: vec![0.0; d],
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        let fits = vec![white_noise_fit(1e-4), white_noise_fit(4e-4)];
        let nig = near_gaussian(2);
        let a = simulate_one_step(&fits, &nig, 500, 42).unwrap();
        let b = simulate_one_step(&fits, &nig, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_one_step(&fits, &nig, 500, 43).unwrap();
        assert_ne!(a, c);
        // Prefix stability: scenario s does not depend on S.
        let d = simulate_one_step(&fits, &nig, 100, 42).unwrap();
        assert_eq!(d.values(), &a.values()[..200]);
    }

    #[test]
    fn scenario_mean_within_clt_bound() {
        let fits = vec![white_noise_fit(1e-4)];
        let nig = near_gaussian(1);
        let s = 10_000;
        let m = simulate_one_step(&fits, &nig, s, 7).unwrap();
        let mean = crate::numeric::mean(m.values());
        let bound = 3.0 * 1e-2 / (s as f64).sqrt();
        assert!((mean - 0.0004).abs() < bound, "{mean}");
    }

    #[test]
    fn arma_only_scenario_variance_matches_residual_variance() {
        let fits = vec![white_noise_fit(2.5e-4)];
        let nig = near_gaussian(1);
        let m = simulate_one_step(&fits, &nig, 10_000, 8).unwrap();
        let v = crate::numeric::sample_variance(m.values());
        assert!((v / 2.5e-4 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn dimension_mismatch() {
        let fits = vec![white_noise_fit(1e-4)];
        assert!(matches!(
            simulate_one_step(&fits, &near_gaussian(2), 10, 1),
            Err(Error::Shape(_))
        ));
    }

    fn pricing(lambda: f64) -> EsgPricing {
        EsgPricing {
            spot: 1.0,
            score: 0.6,
            params: EsgBlendParams::with_lambda(lambda).unwrap(),
        }
    }

    #[test]
    fn zero_volatility_paths_follow_drift() {
        let fit = white_noise_fit(0.0);
        let ens = simulate_trajectories(&fit, &near_gaussian(1), 30, 50, 1, pricing(0.0)).unwrap();
        for s in 0..50 {
            for (t, p) in ens.path_returns(s).iter().enumerate() {
                assert_eq!(*p, 0.0004, "path {s} day {t}");
            }
        }
        let term = ens.terminal(30).unwrap();
        assert!(term.iter().all(|p| (p - (30.0 * 0.0004f64).exp()).abs() < 1e-12));
    }

    #[test]
    fn lambda_zero_prices_scale_plain_prices() {
        let fit = white_noise_fit(1e-4);
        let p0 = EsgPricing {
            spot: 3.0,
            ..pricing(0.0)
        };
        let ens = simulate_trajectories(&fit, &near_gaussian(1), 20, 100, 9, p0).unwrap();
        for s in 0..100 {
            let mut cum = 0.0;
            for t in 0..20 {
                cum += ens.path_returns(s)[t];
                assert_eq!(ens.esg_prices[s * 20 + t], 3.0 * f64::exp(cum));
            }
        }
    }

    #[test]
    fn blend_is_applied_before_cumulating() {
        let fit = white_noise_fit(1e-4);
        let ens = simulate_trajectories(&fit, &near_gaussian(1), 10, 20, 5, pricing(0.4)).unwrap();
        let p = pricing(0.4).params;
        for s in 0..20 {
            let z: f64 = ens.path_returns(s).iter().map(|r| p.blend(*r, 0.6)).sum();
            assert!((ens.terminal(10).unwrap()[s] - z.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_horizon_completes_positive() {
        let fit = ArmaGarchFit {
            garch_active: true,
            omega: 2e-6,
            a1: 0.08,
            b1: 0.9,
            ..white_noise_fit(1e-4)
        };
        let nig = NigParams::from_classical(ClassicalNig {
            alpha: 1.8,
            beta: -0.2,
            delta: 1.7,
            mu: 0.19,
        })
        .unwrap();
        let ens = simulate_trajectories(&fit, &nig, 252, 20_000, 77, pricing(0.25)).unwrap();
        assert_eq!(ens.esg_prices.len(), 252 * 20_000);
        assert!(ens.esg_prices.iter().all(|p| *p > 0.0 && p.is_finite()));
    }
}
