//! At zero ESG affinity every stage must reproduce its plain-return
//! counterpart.

use chrono::{Duration, NaiveDate};
use esgval::frontier::{build_frontier, realize_series, FrontierInputs};
use esgval::market_data::{fill_daily_scores, EsgReleases, NormalizationMap, ReturnPanel, TradingCalendar};
use esgval::numeric::mean_and_covariance;
use esgval::optimizer::{sweep_alpha, OptimizationSpec, RiskMeasure};
use esgval::option_pricer::{solve_risk_neutral, surface, value_options};
use esgval::scenario::{fit_universe, simulate_one_step, simulate_trajectories, EsgPricing, NigFitOptions};
use esgval::scenario::arma_garch::FitOptions;
use esgval::shadow_rate::{estimate_market, srr_series, ColumnReduction};
use esgval::EsgBlendParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

const TOL: f64 = 1e-10;

fn panel(n_days: usize, seed: u64) -> (ReturnPanel, esgval::market_data::EsgPanel) {
    let tickers: Vec<String> = ["AAA", "BBB", "CCC"].iter().map(|s| s.to_string()).collect();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let dates: Vec<NaiveDate> = (0..n_days as i64).map(|k| start + Duration::days(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t5 = StudentT::new(5.0).unwrap();
    let returns: Vec<Vec<f64>> = (0..n_days)
        .map(|_| {
            let common = t5.sample(&mut rng);
            (0..3)
                .map(|i| 0.0003 * (i as f64 + 1.0) + 0.006 * (0.5 * common + t5.sample(&mut rng)))
                .collect()
        })
        .collect();
    let calendar = TradingCalendar::new(dates.clone()).unwrap();
    let mut rel = EsgReleases::default();
    for (i, t) in tickers.iter().enumerate() {
        rel.insert(t, start, 40.0 + 20.0 * i as f64).unwrap();
        rel.insert(t, dates[n_days / 2], 70.0 - 10.0 * i as f64).unwrap();
    }
    let esg = fill_daily_scores(&rel, &tickers, &calendar, NormalizationMap::default()).unwrap();
    let panel = ReturnPanel {
        calendar,
        tickers,
        returns,
        filled: vec![vec![false; 3]; n_days],
    };
    (panel, esg)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn frontier_matches_plain_sweep() {
    let (p, esg) = panel(400, 1);
    let model = fit_universe(&p.window(0..400), &FitOptions::default(), &NigFitOptions::default()).unwrap();
    let sc = simulate_one_step(&model.fits, &model.joint, 2000, 9).unwrap();
    let alphas = [0.0, 0.3, 0.6, 0.9];
    for risk in [RiskMeasure::Mv, RiskMeasure::Mcvar { beta: 0.95 }] {
        let template = OptimizationSpec {
            risk,
            ..OptimizationSpec::default()
        };
        let inputs = FrontierInputs {
            scenarios: &sc,
            normalized_scores: esg.normalized_row(399),
            raw_scores: esg.raw_row(399),
        };
        let front = build_frontier(inputs, &EsgBlendParams::with_lambda(0.0).unwrap(), &alphas, &template).unwrap();
        let plain = sweep_alpha(&sc, &alphas, &template).unwrap();
        for (f, p) in front.iter().zip(&plain) {
            let (f, p) = (f.as_ref().unwrap(), p.as_ref().unwrap());
            assert!(close(f.mean_z, f.mean_r) && close(f.risk_z, f.risk_r) && close(f.cvar_z, f.cvar_r));
            for (a, b) in f.weights.theta.iter().zip(&p.weights.theta) {
                assert!(close(*a, *b), "{risk:?}: {a} vs {b}");
            }
            assert!(close(f.mean_r, p.mean));
        }
    }
}

#[test]
fn realized_series_matches_plain_returns() {
    let (p, esg) = panel(120, 2);
    let weights: Vec<(NaiveDate, Vec<f64>)> = p.calendar.dates()[..100]
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let a = (k % 7) as f64 / 10.0;
            (*d, vec![a, 0.5 - a / 2.0, 0.5 - a / 2.0])
        })
        .collect();
    let s = realize_series(&weights, &p, &esg, &EsgBlendParams::with_lambda(0.0).unwrap(), 2.0).unwrap();
    for k in 0..s.dates.len() {
        assert_eq!(s.realized_z[k], s.realized_r[k]);
        assert!(close(s.esg_price[k], s.price[k] / 2.0));
    }
}

#[test]
fn option_surface_matches_plain_valuation() {
    let (p, _) = panel(600, 3);
    let series: Vec<f64> = p.returns.iter().map(|r| r[0]).collect();
    let one = ReturnPanel {
        calendar: p.calendar.clone(),
        tickers: vec!["AAA".into()],
        returns: series.iter().map(|r| vec![*r]).collect(),
        filled: vec![vec![false]; series.len()],
    };
    let model = fit_universe(&one, &FitOptions::default(), &NigFitOptions::default()).unwrap();
    let pricing = EsgPricing {
        spot: 1.0,
        score: 0.7,
        params: EsgBlendParams::with_lambda(0.0).unwrap(),
    };
    let ens = simulate_trajectories(&model.fits[0], &model.joint, 60, 4000, 5, pricing).unwrap();
    let rf = 0.02 / 255.0;
    let t_grid = [15, 60];
    let m_grid = [0.9, 1.0, 1.1];
    let surf = surface(&ens, rf, &t_grid, &m_grid).unwrap();
    for (ti, &t) in t_grid.iter().enumerate() {
        let terminal: Vec<f64> = (0..ens.n_paths)
            .map(|s| ens.path_returns(s)[..t].iter().sum::<f64>().exp())
            .collect();
        let rn = solve_risk_neutral(&terminal, None, rf, t as f64, 1.0).unwrap();
        let v = value_options(&terminal, &rn, &m_grid, rf, t as f64).unwrap();
        for (mi, (c, put)) in v.iter().enumerate() {
            let cell = surf.cell(ti, mi);
            assert!(close(cell.call, *c) && close(cell.put, *put), "T {t} M {}", m_grid[mi]);
        }
    }
}

#[test]
fn shadow_rate_matches_plain_moments() {
    let (p, esg) = panel(300, 4);
    let zero = EsgBlendParams::with_lambda(0.0).unwrap();
    let est = estimate_market(&p, &esg, &zero).unwrap();
    let (mu, cov) = mean_and_covariance(&p.returns);
    for i in 0..3 {
        assert!(close(est.mu[i], mu[i]));
        for j in 0..3 {
            assert!(close(est.sigma[(i, j)], cov[(i, j)]));
        }
    }
    // The score path changes halfway; at zero affinity it must not matter.
    let mut flat = esg.clone();
    for row in flat.normalized.iter_mut() {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    let a = srr_series(&p, &esg, &zero, 200, ColumnReduction::default()).unwrap();
    let b = srr_series(&p, &flat, &zero, 200, ColumnReduction::default()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let (x, y) = (x.solution.as_ref().unwrap(), y.solution.as_ref().unwrap());
        assert_eq!(x.srr, y.srr);
    }
}
