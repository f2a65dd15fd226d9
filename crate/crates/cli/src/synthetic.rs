//! Seeded synthetic market used as the bundled fixture.
//!
//! Five invented tickers on a Monday-to-Friday calendar from 2015-01-02 to
//! 2020-12-31. Returns follow GARCH(1,1) with a one-factor correlation
//! structure and standardized Student-t(5) shocks. ESG scores are released
//! on the last business day of each year (plus one off-cycle revision per
//! ticker in June 2019) and move by a normal step. The riskless yield is a
//! mean-reverting walk. Every number is written with fixed precision so the
//! files are reproducible byte for byte.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

pub const DEFAULT_SEED: u64 = 20_240_601;

pub const TICKERS: [&str; 5] = ["ALDR", "BRKS", "CNVX", "DRFT", "ELMW"];
const START_PRICE: [f64; 5] = [48.0, 121.5, 73.2, 35.8, 96.4];
/// Annualized volatility and drift per ticker.
const VOL: [f64; 5] = [0.18, 0.24, 0.30, 0.35, 0.21];
const DRIFT: [f64; 5] = [0.06, 0.09, 0.11, 0.04, 0.07];
const FIRST_SCORE: [f64; 5] = [82.0, 64.5, 47.0, 31.5, 70.0];
const INDEX_WEIGHTS: [f64; 5] = [0.15, 0.30, 0.25, 0.10, 0.20];

const FACTOR_SHARE: f64 = 0.4;
const ARCH: f64 = 0.07;
const GARCH: f64 = 0.90;
const DOF: f64 = 5.0;

pub struct Fixture {
    pub prices: String,
    pub esg: String,
    pub yields: String,
    pub index_weights: String,
}

pub fn business_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn last_business_day(year: i32) -> NaiveDate {
    let mut d = NaiveDate::from_ymd_opt(year, 12, 31).unwrap();
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d = d.pred_opt().unwrap();
    }
    d
}

pub fn generate(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = business_days(
        NaiveDate::from_ymd_opt(2015, 1, 2).unwrap(),
        NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
    );
    let t = StudentT::new(DOF).unwrap();
    let t_scale = ((DOF - 2.0) / DOF).sqrt();
    let n = TICKERS.len();

    let daily_var: Vec<f64> = VOL.iter().map(|v| v * v / 255.0).collect();
    let mut h = daily_var.clone();
    let mut level: Vec<f64> = START_PRICE.iter().map(|p| p.ln()).collect();
    let mut prices = String::from("date,ticker,close\n");
    for (k, d) in dates.iter().enumerate() {
        if k > 0 {
            let f = t_scale * t.sample(&mut rng);
            for i in 0..n {
                let u = t_scale * t.sample(&mut rng);
                let e = h[i].sqrt() * (FACTOR_SHARE.sqrt() * f + (1.0 - FACTOR_SHARE).sqrt() * u);
                level[i] += DRIFT[i] / 255.0 - 0.5 * h[i] + e;
                h[i] = (1.0 - ARCH - GARCH) * daily_var[i] + ARCH * e * e + GARCH * h[i];
            }
        }
        for i in 0..n {
            writeln!(prices, "{d},{},{:.4}", TICKERS[i], level[i].exp()).unwrap();
        }
    }

    let step = Normal::new(1.0, 4.0).unwrap();
    let mut esg = String::from("release_date,ticker,score\n");
    let mut score = FIRST_SCORE;
    for year in 2014..=2019 {
        for i in 0..n {
            if year > 2014 {
                score[i] = (score[i] + step.sample(&mut rng)).clamp(0.0, 100.0);
            }
            writeln!(esg, "{},{},{:.2}", last_business_day(year), TICKERS[i], score[i]).unwrap();
        }
        if year == 2018 {
            // Off-cycle revisions, as agencies occasionally publish.
            let revised = NaiveDate::from_ymd_opt(2019, 6, 14).unwrap();
            for i in 0..n {
                score[i] = (score[i] + 0.5 * step.sample(&mut rng)).clamp(0.0, 100.0);
                writeln!(esg, "{revised},{},{:.2}", TICKERS[i], score[i]).unwrap();
            }
        }
    }

    let shock = Normal::new(0.0, 0.0004).unwrap();
    let mut y: f64 = 0.0217;
    let mut yields = String::from("date,annual_yield\n");
    for d in &dates {
        writeln!(yields, "{d},{y:.5}").unwrap();
        y = (y + 0.01 * (0.022 - y) + shock.sample(&mut rng)).clamp(0.004, 0.045);
    }

    let mut index_weights = String::from("ticker,weight\n");
    for i in 0..n {
        writeln!(index_weights, "{},{}", TICKERS[i], INDEX_WEIGHTS[i]).unwrap();
    }
    Fixture {
        prices,
        esg,
        yields,
        index_weights,
    }
}
