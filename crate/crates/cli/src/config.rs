//! Run configuration: a TOML file whose every field has a default, plus
//! command-line overrides. Validated in full before any computation.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use esgval::optimizer::{parse_grid, RiskMeasure};
use esgval::option_pricer::maturity_grid;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub frontier: FrontierConfig,
    pub backtest: BacktestSection,
    pub options: OptionsConfig,
    pub srr: SrrConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            frontier: FrontierConfig::default(),
            backtest: BacktestSection::default(),
            options: OptionsConfig::default(),
            srr: SrrConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub prices: PathBuf,
    pub esg: PathBuf,
    pub yields: Option<PathBuf>,
    /// `ticker,weight` rows for the fixed-weight index benchmark.
    pub index_weights: Option<PathBuf>,
    pub max_gap: usize,
    /// Trading days per year.
    pub scale_c: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            prices: PathBuf::from("data/prices.csv"),
            esg: PathBuf::from("data/esg.csv"),
            yields: Some(PathBuf::from("data/yields.csv")),
            index_weights: Some(PathBuf::from("data/index_weights.csv")),
            max_gap: 5,
            scale_c: esgval::DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Estimation window in returns.
    pub window: usize,
    pub scenarios: usize,
    pub garch_restarts: usize,
    pub nig_max_iter: usize,
    pub nig_tolerance: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 510,
            scenarios: 10_000,
            garch_restarts: 5,
            nig_max_iter: 500,
            nig_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Mv,
    Mcvar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub risk: RiskKind,
    pub beta: f64,
    /// `start:step:end`, `start:end` (integers) or a comma list.
    pub alpha_grid: String,
    pub lambdas: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            risk: RiskKind::Mcvar,
            beta: 0.99,
            alpha_grid: "0:0.01:0.99".into(),
            lambdas: vec![0.0, 0.25, 0.5, 0.75],
        }
    }
}

impl OptimizerConfig {
    pub fn risk_measure(&self) -> RiskMeasure {
        match self.risk {
            RiskKind::Mv => RiskMeasure::Mv,
            RiskKind::Mcvar => RiskMeasure::Mcvar { beta: self.beta },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierConfig {
    /// Decision date; the last date with a full window when absent.
    pub date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// One fixed-alpha strategy per (lambda, alpha) pair.
    pub alphas: Vec<f64>,
    /// Daily turnover cap; a negative value disables it.
    pub gamma: f64,
    pub cost_bps: f64,
    /// Also run a tangent-portfolio strategy per lambda.
    pub tangent: bool,
    pub tangent_alpha_grid: String,
    pub initial_value: f64,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            start: None,
            end: None,
            alphas: vec![0.7],
            gamma: 0.004,
            cost_bps: 2.0,
            tangent: false,
            tangent_alpha_grid: "0:0.1:0.9".into(),
            initial_value: 1.0,
        }
    }
}

impl BacktestSection {
    pub fn gamma(&self) -> Option<f64> {
        (self.gamma >= 0.0).then_some(self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Underlying {
    /// Tangent portfolio of the frontier at each lambda.
    Tangent,
    /// Fixed-weight index from `data.index_weights`.
    Index,
    /// Equal weights.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptionsConfig {
    pub date: Option<NaiveDate>,
    pub underlying: Underlying,
    /// `lo:hi` (spread over `t_count` integers), `lo:step:hi` or a list.
    pub t_grid: String,
    pub t_count: usize,
    pub m_grid: String,
    pub paths: usize,
    /// ESG-valued price of the underlying on the pricing date.
    pub spot: f64,
}

impl Default for OptionsConfig {
    fn default() -> Self {
        Self {
            date: None,
            underlying: Underlying::Tangent,
            t_grid: "15:252".into(),
            t_count: 15,
            m_grid: "0.5:0.1:1.5".into(),
            paths: 20_000,
            spot: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrrConfig {
    pub lambda_grid: String,
    pub window: usize,
    /// Weights on the second-last and last Cholesky columns.
    pub reduction: [f64; 2],
}

impl Default for SrrConfig {
    fn default() -> Self {
        Self {
            lambda_grid: "0:0.01:0.9".into(),
            window: 510,
            reduction: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Backtest output directory to summarize; `<out_dir>/backtest` when absent.
    pub input: Option<PathBuf>,
    pub beta: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { input: None, beta: 0.95 }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn unit_grid(name: &str, text: &str) -> Result<Vec<f64>, CliError> {
    let g = parse_grid(text).map_err(|e| invalid(format!("{name}: {e}")))?;
    if g.is_empty() || g.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid(format!("{name} '{text}' must be non-empty and inside [0, 1]")));
    }
    Ok(g)
}

fn check_lambda(name: &str, l: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&l) {
        return Err(invalid(format!("{name} {l} outside [0, 1]")));
    }
    Ok(())
}

impl RunConfig {
    /// Reads a TOML file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Core(esgval::Error::Io {
            path: path.to_path_buf(),
            source,
        }))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.data.prices);
        rebase(&mut cfg.data.esg);
        if let Some(p) = cfg.data.yields.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.data.index_weights.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.report.input.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn alphas(&self) -> Result<Vec<f64>, CliError> {
        unit_grid("optimizer.alpha_grid", &self.optimizer.alpha_grid)
    }

    pub fn tangent_alphas(&self) -> Result<Vec<f64>, CliError> {
        unit_grid("backtest.tangent_alpha_grid", &self.backtest.tangent_alpha_grid)
    }

    pub fn srr_lambdas(&self) -> Result<Vec<f64>, CliError> {
        unit_grid("srr.lambda_grid", &self.srr.lambda_grid)
    }

    pub fn maturities(&self) -> Result<Vec<usize>, CliError> {
        let text = &self.options.t_grid;
        let bad = || invalid(format!("options.t_grid '{text}' must list positive whole days"));
        let parts: Vec<&str> = text.split(':').collect();
        let grid: Vec<usize> = if parts.len() == 2 {
            let lo: usize = parts[0].trim().parse().map_err(|_| bad())?;
            let hi: usize = parts[1].trim().parse().map_err(|_| bad())?;
            if hi < lo || self.options.t_count == 0 {
                return Err(bad());
            }
            maturity_grid(lo, hi, self.options.t_count)
        } else {
            let g = parse_grid(text).map_err(|_| bad())?;
            if g.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return Err(bad());
            }
            g.into_iter().map(|v| v as usize).collect()
        };
        if grid.is_empty() || grid.contains(&0) {
            return Err(bad());
        }
        Ok(grid)
    }

    pub fn moneyness(&self) -> Result<Vec<f64>, CliError> {
        let text = &self.options.m_grid;
        let g = parse_grid(text).map_err(|e| invalid(format!("options.m_grid: {e}")))?;
        if g.is_empty() || g.iter().any(|m| !(*m > 0.0)) {
            return Err(invalid(format!("options.m_grid '{text}' must hold positive values")));
        }
        Ok(g)
    }

    /// Checks every field against the preconditions of the modules it feeds.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.scale_c > 0.0) {
            return Err(invalid("data.scale_c must be positive"));
        }
        let m = &self.model;
        if m.window < 100 {
            return Err(invalid(format!("model.window {} below the 100-return fitting minimum", m.window)));
        }
        if m.scenarios == 0 {
            return Err(invalid("model.scenarios must be positive"));
        }
        if m.garch_restarts == 0 || m.nig_max_iter == 0 || !(m.nig_tolerance > 0.0) {
            return Err(invalid("model fitting controls must be positive"));
        }
        let o = &self.optimizer;
        if o.risk == RiskKind::Mcvar && !(o.beta > 0.0 && o.beta < 1.0) {
            return Err(invalid(format!("optimizer.beta {} outside (0, 1)", o.beta)));
        }
        if o.lambdas.is_empty() {
            return Err(invalid("optimizer.lambdas is empty"));
        }
        for &l in &o.lambdas {
            check_lambda("optimizer.lambdas entry", l)?;
        }
        self.alphas()?;
        let b = &self.backtest;
        if b.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("backtest.alphas must lie in [0, 1]"));
        }
        if b.alphas.is_empty() && !b.tangent {
            return Err(invalid("backtest needs at least one alpha or tangent = true"));
        }
        if !(b.cost_bps >= 0.0 && b.cost_bps < 10_000.0) {
            return Err(invalid(format!("backtest.cost_bps {} outside [0, 10000)", b.cost_bps)));
        }
        if !(b.initial_value > 0.0) {
            return Err(invalid("backtest.initial_value must be positive"));
        }
        if let (Some(s), Some(e)) = (b.start, b.end) {
            if e < s {
                return Err(invalid("backtest.end precedes backtest.start"));
            }
        }
        if b.tangent {
            self.tangent_alphas()?;
            if d.yields.is_none() {
                return Err(invalid("tangent strategies need data.yields"));
            }
        }
        let op = &self.options;
        self.maturities()?;
        self.moneyness()?;
        if op.paths < 2 {
            return Err(invalid("options.paths must be at least 2"));
        }
        if !(op.spot > 0.0) {
            return Err(invalid("options.spot must be positive"));
        }
        if op.underlying == Underlying::Index && d.index_weights.is_none() {
            return Err(invalid("options.underlying = \"index\" needs data.index_weights"));
        }
        self.srr_lambdas()?;
        if self.srr.window < 3 {
            return Err(invalid("srr.window must be at least 3"));
        }
        if self.srr.reduction.iter().any(|w| !w.is_finite()) {
            return Err(invalid("srr.reduction weights must be finite"));
        }
        if !(self.report.beta > 0.0 && self.report.beta < 1.0) {
            return Err(invalid(format!("report.beta {} outside (0, 1)", self.report.beta)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.alphas().unwrap().len(), 100);
        assert_eq!(c.maturities().unwrap().len(), 15);
        assert_eq!(c.moneyness().unwrap().len(), 11);
        assert_eq!(c.srr_lambdas().unwrap().len(), 91);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 7\n[model]\nwindow = 300\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.window, 300);
        assert_eq!(c.model.scenarios, 10_000);
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(toml::from_str::<RunConfig>("[model]\nwindw = 3\n").is_err());
        let mut c = RunConfig::default();
        c.optimizer.lambdas = vec![1.5];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.options.t_grid = "0:10".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.optimizer.beta = 1.0;
        assert!(c.validate().is_err());
    }
}
