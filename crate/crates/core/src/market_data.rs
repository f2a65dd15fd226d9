//! Ingestion of prices, ESG scores and riskless yields.
//!
//! All panels are date-major (`values[date][asset]`) and immutable once
//! built. Dates are ISO-8601 (`YYYY-MM-DD`).
//!
//! Returns are log returns throughout: `r[t] = ln(P[t] / P[t-1])`.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esg_transform::DEFAULT_SCALE;

/// Longest run of consecutive missing prices that is forward-filled before
/// the asset is rejected.
pub const DEFAULT_MAX_GAP: usize = 5;

/// Strictly increasing sequence of business dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Calendar(format!(
                "dates must be strictly increasing, found {} followed by {}",
                w[0], w[1]
            )));
        }
        Ok(Self { dates })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Sub-calendar over `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> TradingCalendar {
        TradingCalendar {
            dates: self.dates[range].to_vec(),
        }
    }
}

/// Closing prices on a common calendar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PricePanel {
    pub calendar: TradingCalendar,
    pub tickers: Vec<String>,
    /// `prices[date][asset]`, strictly positive.
    pub prices: Vec<Vec<f64>>,
    /// `filled[date][asset]` is true when the cell was forward-filled.
    pub filled: Vec<Vec<bool>>,
    /// Assets dropped during ingestion, with the reason.
    pub rejected: Vec<(String, String)>,
}

impl PricePanel {
    /// Builds a complete panel (no missing cells) after validating shape and
    /// positivity.
    pub fn from_matrix(
        calendar: TradingCalendar,
        tickers: Vec<String>,
        prices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if prices.len() != calendar.len() {
            return Err(Error::Shape(format!(
                "{} price rows for {} calendar dates",
                prices.len(),
                calendar.len()
            )));
        }
        for row in &prices {
            if row.len() != tickers.len() {
                return Err(Error::Shape(format!(
                    "price row has {} entries for {} tickers",
                    row.len(),
                    tickers.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::Domain(format!("price {p} is not strictly positive")));
            }
        }
        let filled = vec![vec![false; tickers.len()]; prices.len()];
        Ok(Self {
            calendar,
            tickers,
            prices,
            filled,
            rejected: Vec::new(),
        })
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Rebuilds prices from log returns, starting at `initial`.
    pub fn from_returns(returns: &ReturnPanel, start: NaiveDate, initial: &[f64]) -> Result<Self> {
        if initial.len() != returns.n_assets() {
            return Err(Error::Shape("one initial price per asset required".into()));
        }
        if returns.calendar.dates().first().is_some_and(|d| *d <= start) {
            return Err(Error::Calendar("start date must precede the return calendar".into()));
        }
        let mut dates = vec![start];
        dates.extend_from_slice(returns.calendar.dates());
        let mut rows = vec![initial.to_vec()];
        for r in &returns.returns {
            let last = rows.last().unwrap();
            rows.push(last.iter().zip(r).map(|(p, x)| p * x.exp()).collect());
        }
        Self::from_matrix(TradingCalendar::new(dates)?, returns.tickers.clone(), rows)
    }
}

/// Daily log returns; the first price date is dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub calendar: TradingCalendar,
    pub tickers: Vec<String>,
    /// `returns[date][asset]`.
    pub returns: Vec<Vec<f64>>,
    /// True when either end of the return touches a forward-filled price.
    pub filled: Vec<Vec<bool>>,
}

impl ReturnPanel {
    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Return series of one asset.
    pub fn column(&self, asset: usize) -> Vec<f64> {
        self.returns.iter().map(|row| row[asset]).collect()
    }

    /// Rows `range` as a new panel.
    pub fn window(&self, range: std::ops::Range<usize>) -> ReturnPanel {
        ReturnPanel {
            calendar: self.calendar.slice(range.clone()),
            tickers: self.tickers.clone(),
            returns: self.returns[range.clone()].to_vec(),
            filled: self.filled[range].to_vec(),
        }
    }
}

/// Map from raw agency scores on `[0, 100]` to normalized scores on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizationMap {
    /// `raw / 50 - 1`.
    #[default]
    Linear,
    /// Piecewise-linear map sending `midpoint` to 0, 0 to -1 and 100 to 1.
    ShiftedMidpoint { midpoint: f64 },
}

impl NormalizationMap {
    fn validate(&self) -> Result<()> {
        match *self {
            NormalizationMap::Linear => Ok(()),
            NormalizationMap::ShiftedMidpoint { midpoint } => {
                if midpoint > 0.0 && midpoint < 100.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("midpoint {midpoint} must lie in (0, 100)")))
                }
            }
        }
    }

    pub fn apply(&self, raw: f64) -> Result<f64> {
        self.validate()?;
        if !(0.0..=100.0).contains(&raw) {
            return Err(Error::Domain(format!("raw ESG score {raw} outside [0, 100]")));
        }
        Ok(match *self {
            NormalizationMap::Linear => raw / 50.0 - 1.0,
            NormalizationMap::ShiftedMidpoint { midpoint } => {
                if raw <= midpoint {
                    raw / midpoint - 1.0
                } else {
                    (raw - midpoint) / (100.0 - midpoint)
                }
            }
        })
    }

    pub fn invert(&self, normalized: f64) -> Result<f64> {
        self.validate()?;
        if !(-1.0..=1.0).contains(&normalized) {
            return Err(Error::Domain(format!(
                "normalized score {normalized} outside [-1, 1]"
            )));
        }
        Ok(match *self {
            NormalizationMap::Linear => (normalized + 1.0) * 50.0,
            NormalizationMap::ShiftedMidpoint { midpoint } => {
                if normalized <= 0.0 {
                    (normalized + 1.0) * midpoint
                } else {
                    midpoint + normalized * (100.0 - midpoint)
                }
            }
        })
    }
}

/// Normalizes a date × asset matrix of raw scores.
pub fn normalize_scores(raw: &[Vec<f64>], map: NormalizationMap) -> Result<Vec<Vec<f64>>> {
    raw.iter()
        .map(|row| row.iter().map(|&x| map.apply(x)).collect())
        .collect()
}

/// Score releases as published by the rating agency, per ticker.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EsgReleases {
    /// Sorted by release date within each ticker.
    pub by_ticker: BTreeMap<String, Vec<(NaiveDate, f64)>>,
}

impl EsgReleases {
    pub fn insert(&mut self, ticker: &str, date: NaiveDate, raw: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&raw) {
            return Err(Error::Domain(format!(
                "raw ESG score {raw} for {ticker} outside [0, 100]"
            )));
        }
        let list = self.by_ticker.entry(ticker.to_string()).or_default();
        match list.binary_search_by_key(&date, |(d, _)| *d) {
            Ok(i) => list[i].1 = raw,
            Err(i) => list.insert(i, (date, raw)),
        }
        Ok(())
    }

    /// Latest release on or before `date`.
    pub fn score_on(&self, ticker: &str, date: NaiveDate) -> Option<f64> {
        let list = self.by_ticker.get(ticker)?;
        let idx = list.partition_point(|(d, _)| *d <= date);
        (idx > 0).then(|| list[idx - 1].1)
    }
}

/// Daily step-function ESG scores aligned to a trading calendar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsgPanel {
    pub calendar: TradingCalendar,
    pub tickers: Vec<String>,
    /// Release dates per asset (same order as `tickers`).
    pub release_dates: Vec<Vec<NaiveDate>>,
    /// `raw[date][asset]` on `[0, 100]`.
    pub raw: Vec<Vec<f64>>,
    /// `normalized[date][asset]` on `[-1, 1]`.
    pub normalized: Vec<Vec<f64>>,
    pub map: NormalizationMap,
}

impl EsgPanel {
    pub fn raw_row(&self, date_index: usize) -> &[f64] {
        &self.raw[date_index]
    }

    pub fn normalized_row(&self, date_index: usize) -> &[f64] {
        &self.normalized[date_index]
    }

    /// Normalized scores on `date`, which must be on the calendar.
    pub fn normalized_on(&self, date: NaiveDate) -> Result<&[f64]> {
        let idx = self
            .calendar
            .index_of(date)
            .ok_or_else(|| Error::Alignment(format!("{date} not on the ESG calendar")))?;
        Ok(&self.normalized[idx])
    }
}

/// Assigns every calendar date the latest score released on or before it.
///
/// A release dated `d` applies from `d` inclusive (end-of-day data).
pub fn fill_daily_scores(
    releases: &EsgReleases,
    tickers: &[String],
    calendar: &TradingCalendar,
    map: NormalizationMap,
) -> Result<EsgPanel> {
    let mut release_dates = Vec::with_capacity(tickers.len());
    for t in tickers {
        let list = releases.by_ticker.get(t);
        let first_ok = match (list.and_then(|l| l.first()), calendar.dates().first()) {
            (Some((d, _)), Some(start)) => d <= start,
            (_, None) => true,
            (None, Some(_)) => false,
        };
        if !first_ok {
            return Err(Error::NoScore {
                ticker: t.clone(),
                date: calendar.dates()[0].to_string(),
            });
        }
        release_dates.push(list.map(|l| l.iter().map(|(d, _)| *d).collect()).unwrap_or_default());
    }
    let raw: Vec<Vec<f64>> = calendar
        .dates()
        .iter()
        .map(|&d| {
            tickers
                .iter()
                .map(|t| releases.score_on(t, d).expect("checked above"))
                .collect()
        })
        .collect();
    let normalized = normalize_scores(&raw, map)?;
    Ok(EsgPanel {
        calendar: calendar.clone(),
        tickers: tickers.to_vec(),
        release_dates,
        raw,
        normalized,
        map,
    })
}

/// Riskless yields aligned to a calendar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YieldSeries {
    pub calendar: TradingCalendar,
    /// Decimal per annum.
    pub annual_yield: Vec<f64>,
    /// `annual_yield / scale`, per trading day.
    pub daily_rate: Vec<f64>,
    pub scale: f64,
}

impl YieldSeries {
    pub fn new(calendar: TradingCalendar, annual_yield: Vec<f64>, scale: f64) -> Result<Self> {
        if annual_yield.len() != calendar.len() {
            return Err(Error::Shape("one yield per calendar date required".into()));
        }
        if scale <= 0.0 {
            return Err(Error::Domain(format!("scale {scale} must be positive")));
        }
        let daily_rate = annual_yield.iter().map(|y| y / scale).collect();
        Ok(Self {
            calendar,
            annual_yield,
            daily_rate,
            scale,
        })
    }

    /// Re-samples onto `calendar`, carrying the last observed yield forward.
    pub fn align_to(&self, calendar: &TradingCalendar) -> Result<YieldSeries> {
        let src = self.calendar.dates();
        let mut out = Vec::with_capacity(calendar.len());
        for &d in calendar.dates() {
            let idx = src.partition_point(|x| *x <= d);
            if idx == 0 {
                return Err(Error::Alignment(format!("no yield observed on or before {d}")));
            }
            out.push(self.annual_yield[idx - 1]);
        }
        YieldSeries::new(calendar.clone(), out, self.scale)
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
        line,
        message: format!("bad date '{s}': {e}"),
    })
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("bad {what} '{s}': {e}"),
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn records(path: &Path, columns: usize) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = open_csv(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != columns {
            return Err(Error::Parse {
                line,
                message: format!("expected {columns} columns, found {}", rec.len()),
            });
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// Reads `date,ticker,close` rows and aligns them on the union calendar.
///
/// Interior gaps of up to `max_gap` consecutive dates are forward-filled and
/// flagged; longer gaps, or a ticker missing on the first calendar date,
/// reject the asset.
pub fn load_prices(path: &Path, max_gap: usize) -> Result<PricePanel> {
    let mut series: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (line, rec) in records(path, 3)? {
        let date = parse_date(&rec[0], line)?;
        let ticker = rec[1].to_string();
        let close = parse_f64(&rec[2], line, "close")?;
        if !(close.is_finite() && close > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("close {close} for {ticker} is not strictly positive"),
            });
        }
        let list = series.entry(ticker.clone()).or_default();
        if let Some((last, _)) = list.last() {
            if *last >= date {
                return Err(Error::Calendar(format!(
                    "{ticker}: date {date} at line {line} does not follow {last}"
                )));
            }
        }
        list.push((date, close));
    }
    prices_from_series(series, max_gap)
}

fn prices_from_series(
    series: BTreeMap<String, Vec<(NaiveDate, f64)>>,
    max_gap: usize,
) -> Result<PricePanel> {
    let union: BTreeSet<NaiveDate> = series.values().flatten().map(|(d, _)| *d).collect();
    let calendar = TradingCalendar::new(union.into_iter().collect())?;
    let n_dates = calendar.len();

    let mut tickers = Vec::new();
    let mut columns: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
    let mut rejected = Vec::new();
    'tickers: for (ticker, obs) in series {
        let mut col = vec![f64::NAN; n_dates];
        for (d, p) in obs {
            col[calendar.index_of(d).expect("date from union")] = p;
        }
        if col[0].is_nan() {
            rejected.push((ticker, "no price on the first calendar date".to_string()));
            continue;
        }
        let mut flags = vec![false; n_dates];
        let mut run = 0usize;
        for t in 1..n_dates {
            if col[t].is_nan() {
                run += 1;
                if run > max_gap {
                    rejected.push((
                        ticker,
                        format!("more than {max_gap} consecutive missing dates"),
                    ));
                    continue 'tickers;
                }
                col[t] = col[t - 1];
                flags[t] = true;
            } else {
                run = 0;
            }
        }
        tickers.push(ticker);
        columns.push((col, flags));
    }
    if tickers.is_empty() {
        return Err(Error::Calendar("no asset survived ingestion".into()));
    }
    let prices = (0..n_dates)
        .map(|t| columns.iter().map(|(c, _)| c[t]).collect())
        .collect();
    let filled = (0..n_dates)
        .map(|t| columns.iter().map(|(_, f)| f[t]).collect())
        .collect();
    Ok(PricePanel {
        calendar,
        tickers,
        prices,
        filled,
        rejected,
    })
}

/// Reads `release_date,ticker,score0to100` rows.
pub fn load_esg(path: &Path) -> Result<EsgReleases> {
    let mut releases = EsgReleases::default();
    for (line, rec) in records(path, 3)? {
        let date = parse_date(&rec[0], line)?;
        let score = parse_f64(&rec[2], line, "score")?;
        releases.insert(&rec[1], date, score).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    Ok(releases)
}

/// Reads `date,annual_yield_decimal` rows.
pub fn load_yields(path: &Path, scale: f64) -> Result<YieldSeries> {
    let mut dates = Vec::new();
    let mut yields = Vec::new();
    for (line, rec) in records(path, 2)? {
        dates.push(parse_date(&rec[0], line)?);
        yields.push(parse_f64(&rec[1], line, "yield")?);
    }
    YieldSeries::new(TradingCalendar::new(dates)?, yields, scale)
}

/// Daily riskless rate using the default trading-day scale.
pub fn daily_rate(annual_yield: f64) -> f64 {
    annual_yield / DEFAULT_SCALE
}

/// Log returns of every asset; the first date is dropped.
pub fn compute_returns(prices: &PricePanel) -> Result<ReturnPanel> {
    let n = prices.calendar.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "at least 2 price dates required, got {n}"
        )));
    }
    let returns = prices
        .prices
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| (b / a).ln()).collect())
        .collect();
    let filled = prices
        .filled
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| *a || *b).collect())
        .collect();
    Ok(ReturnPanel {
        calendar: prices.calendar.slice(1..n),
        tickers: prices.tickers.clone(),
        returns,
        filled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn complete_panel_ingests_as_is() {
        let f = write(
            "date,ticker,close\n\
             2020-01-02,AAA,10\n2020-01-03,AAA,11\n2020-01-06,AAA,12\n\
             2020-01-02,BBB,20\n2020-01-03,BBB,21\n2020-01-06,BBB,22\n",
        );
        let p = load_prices(f.path(), DEFAULT_MAX_GAP).unwrap();
        assert_eq!(p.calendar.len(), 3);
        assert_eq!(p.tickers, vec!["AAA", "BBB"]);
        assert_eq!(p.prices[2], vec![12.0, 22.0]);
        assert!(p.filled.iter().flatten().all(|f| !f));
    }

    #[test]
    fn negative_price_is_a_parse_error() {
        let f = write("date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,-1\n");
        match load_prices(f.path(), DEFAULT_MAX_GAP) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,abc\n");
        assert!(matches!(
            load_prices(f.path(), DEFAULT_MAX_GAP),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn non_monotone_ticker_dates_rejected() {
        let f = write("date,ticker,close\n2020-01-03,AAA,10\n2020-01-02,AAA,11\n");
        assert!(matches!(
            load_prices(f.path(), DEFAULT_MAX_GAP),
            Err(Error::Calendar(_))
        ));
    }

    #[test]
    fn interior_gap_is_forward_filled_and_flagged() {
        let f = write(
            "date,ticker,close\n\
             2020-01-02,AAA,10\n2020-01-03,AAA,11\n2020-01-06,AAA,12\n\
             2020-01-02,BBB,20\n2020-01-06,BBB,22\n",
        );
        let p = load_prices(f.path(), DEFAULT_MAX_GAP).unwrap();
        assert_eq!(p.prices[1][1], 20.0);
        assert!(p.filled[1][1]);
        assert!(!p.filled[2][1]);
        let r = compute_returns(&p).unwrap();
        assert!(r.filled[0][1] && r.filled[1][1]);
        assert!(!r.filled[0][0]);
    }

    #[test]
    fn long_gap_rejects_asset() {
        let mut s = String::from("date,ticker,close\n");
        for day in 1..=10 {
            s += &format!("2020-02-{day:02},AAA,10\n");
        }
        s += "2020-02-01,BBB,5\n2020-02-10,BBB,6\n";
        let f = write(&s);
        let p = load_prices(f.path(), 5).unwrap();
        assert_eq!(p.tickers, vec!["AAA"]);
        assert_eq!(p.rejected.len(), 1);
        assert_eq!(p.rejected[0].0, "BBB");
        let p = load_prices(f.path(), 8).unwrap();
        assert_eq!(p.tickers.len(), 2);
    }

    #[test]
    fn returns_are_log_returns() {
        let cal = TradingCalendar::new(vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")]).unwrap();
        let p = PricePanel::from_matrix(
            cal,
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                vec![100.0, 100.0, 50.0],
                vec![110.0, 100.0 * std::f64::consts::E, 50.0],
                vec![121.0, 100.0, 50.0],
            ],
        )
        .unwrap();
        let r = compute_returns(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r.returns[0][0] - 1.1f64.ln()).abs() < 1e-15);
        assert!((r.returns[0][0] - 0.09531017980432493).abs() < 1e-12);
        assert!((r.returns[0][1] - 1.0).abs() < 1e-15);
        assert_eq!(r.returns[0][2], 0.0);
        assert_eq!(r.returns[1][2], 0.0);
    }

    #[test]
    fn single_date_cannot_produce_returns() {
        let cal = TradingCalendar::new(vec![d("2020-01-01")]).unwrap();
        let p = PricePanel::from_matrix(cal, vec!["A".into()], vec![vec![1.0]]).unwrap();
        assert!(matches!(compute_returns(&p), Err(Error::Precondition(_))));
    }

    #[test]
    fn calendar_rejects_duplicates() {
        assert!(TradingCalendar::new(vec![d("2020-01-01"), d("2020-01-01")]).is_err());
    }

    #[test]
    fn linear_normalization_values() {
        let m = NormalizationMap::Linear;
        assert_eq!(m.apply(50.0).unwrap(), 0.0);
        assert!((m.apply(93.0).unwrap() - 0.86).abs() < 1e-15);
        assert_eq!(m.apply(0.0).unwrap(), -1.0);
        assert_eq!(m.apply(100.0).unwrap(), 1.0);
        assert!(matches!(m.apply(100.5), Err(Error::Domain(_))));
        assert!(matches!(m.apply(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn shifted_midpoint_map_is_monotone_onto() {
        let m = NormalizationMap::ShiftedMidpoint { midpoint: 70.0 };
        assert_eq!(m.apply(0.0).unwrap(), -1.0);
        assert_eq!(m.apply(70.0).unwrap(), 0.0);
        assert_eq!(m.apply(100.0).unwrap(), 1.0);
        let mut prev = -2.0;
        for k in 0..=1000 {
            let v = m.apply(k as f64 / 10.0).unwrap();
            assert!(v > prev && (-1.0..=1.0).contains(&v));
            prev = v;
        }
        assert!(NormalizationMap::ShiftedMidpoint { midpoint: 100.0 }.apply(1.0).is_err());
    }

    fn releases() -> EsgReleases {
        let mut r = EsgReleases::default();
        r.insert("AAA", d("2018-12-31"), 70.0).unwrap();
        r.insert("AAA", d("2019-12-31"), 80.0).unwrap();
        r.insert("BBB", d("2018-12-31"), 40.0).unwrap();
        r
    }

    #[test]
    fn most_recent_release_applies() {
        let r = releases();
        assert_eq!(r.score_on("AAA", d("2019-06-06")), Some(70.0));
        assert_eq!(r.score_on("AAA", d("2019-12-31")), Some(80.0));
        assert_eq!(r.score_on("AAA", d("2019-12-30")), Some(70.0));
        assert_eq!(r.score_on("AAA", d("2018-12-30")), None);
    }

    #[test]
    fn fill_daily_scores_is_a_step_function() {
        let r = releases();
        let dates: Vec<NaiveDate> = d("2019-01-01")
            .iter_days()
            .take(600)
            .collect();
        let cal = TradingCalendar::new(dates).unwrap();
        let tickers = vec!["AAA".to_string(), "BBB".to_string()];
        let panel = fill_daily_scores(&r, &tickers, &cal, NormalizationMap::Linear).unwrap();
        for a in 0..2 {
            for t in 1..cal.len() {
                if panel.raw[t][a] != panel.raw[t - 1][a] {
                    assert!(panel.release_dates[a].contains(&cal.dates()[t]));
                }
            }
        }
        assert!(panel.raw.iter().all(|row| row[1] == 40.0));
        assert!(panel.normalized.iter().all(|row| (row[1] + 0.2).abs() < 1e-15));
        let idx = cal.index_of(d("2019-12-31")).unwrap();
        assert_eq!(panel.raw[idx][0], 80.0);
        assert_eq!(panel.raw[idx - 1][0], 70.0);
    }

    #[test]
    fn missing_initial_release_is_an_error() {
        let r = releases();
        let cal = TradingCalendar::new(vec![d("2018-06-01")]).unwrap();
        let err = fill_daily_scores(&r, &["AAA".into()], &cal, NormalizationMap::Linear);
        assert!(matches!(err, Err(Error::NoScore { .. })));
        let err = fill_daily_scores(&r, &["ZZZ".into()], &cal, NormalizationMap::Linear);
        assert!(matches!(err, Err(Error::NoScore { .. })));
    }

    #[test]
    fn yields_become_daily_rates() {
        let f = write("date,annual_yield_decimal\n2020-01-02,0.0255\n2020-01-06,0.051\n");
        let y = load_yields(f.path(), 255.0).unwrap();
        assert!((y.daily_rate[0] - 0.0001).abs() < 1e-18);
        let cal = TradingCalendar::new(vec![d("2020-01-03"), d("2020-01-06"), d("2020-01-07")]).unwrap();
        let a = y.align_to(&cal).unwrap();
        assert_eq!(a.annual_yield, vec![0.0255, 0.051, 0.051]);
        let early = TradingCalendar::new(vec![d("2020-01-01")]).unwrap();
        assert!(y.align_to(&early).is_err());
    }

    #[test]
    fn esg_loader_validates_range() {
        let f = write("release_date,ticker,score0to100\n2018-12-31,AAA,70\n2019-12-31,AAA,101\n");
        assert!(matches!(load_esg(f.path()), Err(Error::Parse { line: 3, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_map_round_trips(raw in 0.0f64..=100.0) {
                let m = NormalizationMap::Linear;
                let back = m.invert(m.apply(raw).unwrap()).unwrap();
                prop_assert!((back - raw).abs() <= 1e-12);
            }

            #[test]
            fn linear_map_is_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
                let m = NormalizationMap::Linear;
                let (x, y) = (m.apply(a).unwrap(), m.apply(b).unwrap());
                prop_assert_eq!(a < b, x < y);
            }

            #[test]
            fn returns_round_trip_through_prices(
                rets in proptest::collection::vec(proptest::collection::vec(-0.1f64..0.1, 3), 1..40)
            ) {
                let n = rets.len();
                let dates: Vec<NaiveDate> = d("2020-01-02").iter_days().take(n).collect();
                let panel = ReturnPanel {
                    calendar: TradingCalendar::new(dates).unwrap(),
                    tickers: vec!["A".into(), "B".into(), "C".into()],
                    returns: rets.clone(),
                    filled: vec![vec![false; 3]; n],
                };
                let prices = PricePanel::from_returns(&panel, d("2020-01-01"), &[10.0, 1.0, 250.0]).unwrap();
                let back = compute_returns(&prices).unwrap();
                for (r0, r1) in rets.iter().flatten().zip(back.returns.iter().flatten()) {
                    prop_assert!((r0 - r1).abs() <= 1e-12);
                }
            }
        }
    }
}
