//! Numerical toolkit for ESG-valued finance.
//!
//! Asset returns are blended with normalized ESG scores through a single
//! affinity parameter `lambda` (see [`esg_transform`]). The blended return is
//! then carried through scenario generation, mean-variance and mean-CVaR
//! portfolio optimization, efficient frontiers and tangent portfolios,
//! performance analytics, minimum-entropy option valuation and shadow
//! riskless-rate extraction.
//!
//! At `lambda = 0` every stage reduces to its plain-return counterpart.

pub mod analytics;
pub mod backtest;
pub mod error;
pub mod esg_transform;
pub mod frontier;
pub mod market_data;
pub mod numeric;
pub mod optimizer;
pub mod option_pricer;
pub mod scenario;
pub mod shadow_rate;

pub use error::{Error, Result};
pub use esg_transform::{EsgBlendParams, DEFAULT_SCALE};
pub use scenario::ScenarioMatrix;
