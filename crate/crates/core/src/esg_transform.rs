//! ESG-valued returns.
//!
//! For affinity `lambda` and scale `c` the ESG-valued return of an asset with
//! normalized score `sigma` and financial return `r` is
//!
//! ```text
//! zeta = lambda * sigma / c + (1 - lambda) * r
//! ```
//!
//! The riskless asset is assigned the maximum score (normalized `+1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioMatrix;

/// Trading days per year; puts `sigma / c` on a daily-return scale.
pub const DEFAULT_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsgBlendParams {
    lambda: f64,
    scale: f64,
}

impl Default for EsgBlendParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            scale: DEFAULT_SCALE,
        }
    }
}

impl EsgBlendParams {
    pub fn new(lambda: f64, scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("scale {scale} must be positive")));
        }
        Ok(Self { lambda, scale })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, DEFAULT_SCALE)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The additive ESG term `lambda * sigma / c`.
    #[inline]
    pub fn esg_shift(&self, sigma: f64) -> f64 {
        self.lambda * sigma / self.scale
    }

    /// Unchecked blend; callers guarantee `sigma` in `[-1, 1]`.
    #[inline]
    pub fn blend(&self, r: f64, sigma: f64) -> f64 {
        self.esg_shift(sigma) + (1.0 - self.lambda) * r
    }
}

/// Per-day ESG-valued return.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EsgValuedReturn(pub f64);

impl EsgValuedReturn {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_score(sigma: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::Domain(format!("normalized score {sigma} outside [-1, 1]")))
    }
}

pub fn esg_valued_return(r: f64, sigma: f64, params: &EsgBlendParams) -> Result<EsgValuedReturn> {
    check_score(sigma)?;
    Ok(EsgValuedReturn(params.blend(r, sigma)))
}

/// ESG-valued riskless rate: the riskless asset carries normalized score `+1`.
pub fn esg_valued_riskless(r_f: f64, params: &EsgBlendParams) -> f64 {
    params.blend(r_f, 1.0)
}

/// Applies the blend to every scenario of every asset.
pub fn blend_scenarios(
    scenarios: &ScenarioMatrix,
    scores: &[f64],
    params: &EsgBlendParams,
) -> Result<ScenarioMatrix> {
    if scores.len() != scenarios.n_assets() {
        return Err(Error::Shape(format!(
            "{} scores for {} assets",
            scores.len(),
            scenarios.n_assets()
        )));
    }
    for &s in scores {
        check_score(s)?;
    }
    let shift: Vec<f64> = scores.iter().map(|&s| params.esg_shift(s)).collect();
    let keep = 1.0 - params.lambda();
    let n = scenarios.n_assets();
    let values = scenarios
        .values()
        .iter()
        .enumerate()
        .map(|(k, &r)| shift[k % n] + keep * r)
        .collect();
    ScenarioMatrix::new(values, scenarios.n_scenarios(), n, scenarios.seed())
}

/// Blends a `date × asset` matrix of returns with a single score vector.
pub fn blend_rows(rows: &[Vec<f64>], scores: &[f64], params: &EsgBlendParams) -> Result<Vec<Vec<f64>>> {
    for &s in scores {
        check_score(s)?;
    }
    rows.iter()
        .map(|row| {
            if row.len() != scores.len() {
                return Err(Error::Shape(format!(
                    "{} returns for {} scores",
                    row.len(),
                    scores.len()
                )));
            }
            Ok(row.iter().zip(scores).map(|(&r, &s)| params.blend(r, s)).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda_zero_ignores_esg() {
        let p = EsgBlendParams::with_lambda(0.0).unwrap();
        for s in [-1.0, 0.0, 0.86, 1.0] {
            assert_eq!(esg_valued_return(0.003, s, &p).unwrap().value(), 0.003);
        }
    }

    #[test]
    fn lambda_one_is_pure_esg() {
        let p = EsgBlendParams::with_lambda(1.0).unwrap();
        let z = esg_valued_return(0.05, 0.86, &p).unwrap().value();
        assert!((z - 0.86 / 255.0).abs() < 1e-18);
        assert!((z - 0.0033725).abs() < 1e-7);
    }

    #[test]
    fn half_blend_hand_value() {
        let p = EsgBlendParams::with_lambda(0.5).unwrap();
        let z = esg_valued_return(0.001, 0.86, &p).unwrap().value();
        assert!((z - (0.5 * 0.86 / 255.0 + 0.5 * 0.001)).abs() < 1e-18);
        assert!((z - 0.0021863).abs() < 1e-7);
    }

    #[test]
    fn out_of_range_inputs() {
        assert!(EsgBlendParams::with_lambda(1.01).is_err());
        assert!(EsgBlendParams::with_lambda(-0.01).is_err());
        assert!(EsgBlendParams::new(0.5, 0.0).is_err());
        let p = EsgBlendParams::default();
        assert!(matches!(esg_valued_return(0.0, 1.2, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn riskless_rate_values() {
        let p0 = EsgBlendParams::with_lambda(0.0).unwrap();
        assert_eq!(esg_valued_riskless(0.0001, &p0), 0.0001);
        let p1 = EsgBlendParams::with_lambda(1.0).unwrap();
        assert!((esg_valued_riskless(0.0001, &p1) - 1.0 / 255.0).abs() < 1e-18);
        let p = EsgBlendParams::with_lambda(0.5).unwrap();
        let z = esg_valued_riskless(0.0001, &p);
        assert!((z - (0.5 / 255.0 + 0.00005)).abs() < 1e-18);
        assert!((z - 0.0020108).abs() < 1e-7);
    }

    #[test]
    fn blend_scenarios_cells() {
        let scen = ScenarioMatrix::new(vec![0.01, -0.02, 0.03, 0.0], 2, 2, Some(7)).unwrap();
        let p = EsgBlendParams::with_lambda(0.25).unwrap();
        let out = blend_scenarios(&scen, &[0.5, -0.4], &p).unwrap();
        let expect = [
            0.25 * 0.5 / 255.0 + 0.75 * 0.01,
            0.25 * -0.4 / 255.0 + 0.75 * -0.02,
            0.25 * 0.5 / 255.0 + 0.75 * 0.03,
            0.25 * -0.4 / 255.0,
        ];
        for (a, b) in out.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-18);
        }
        assert_eq!(out.seed(), Some(7));
        assert!(matches!(blend_scenarios(&scen, &[0.5], &p), Err(Error::Shape(_))));
    }

    #[test]
    fn blend_scenarios_identity_and_single_cell() {
        let scen = ScenarioMatrix::new(vec![0.01, -0.02, 0.03, 0.0], 2, 2, None).unwrap();
        let p0 = EsgBlendParams::default();
        assert_eq!(blend_scenarios(&scen, &[0.9, -0.9], &p0).unwrap().values(), scen.values());
        let one = ScenarioMatrix::new(vec![0.004], 1, 1, None).unwrap();
        let p = EsgBlendParams::with_lambda(0.3).unwrap();
        let out = blend_scenarios(&one, &[0.2], &p).unwrap();
        assert_eq!(out.values()[0], esg_valued_return(0.004, 0.2, &p).unwrap().value());
    }

    proptest! {
        #[test]
        fn blend_is_affine_in_lambda(
            r in -0.2f64..0.2, s in -1.0f64..=1.0, l1 in 0.0f64..=1.0, l2 in 0.0f64..=1.0
        ) {
            let z = |l: f64| esg_valued_return(r, s, &EsgBlendParams::with_lambda(l).unwrap()).unwrap().value();
            prop_assert!((z(l1) + z(l2) - 2.0 * z((l1 + l2) / 2.0)).abs() <= 1e-14);
        }

        #[test]
        fn blend_preserves_sample_moments(
            data in proptest::collection::vec(-0.05f64..0.05, 4..200),
            s in -1.0f64..=1.0,
            lambda in 0.0f64..=1.0,
        ) {
            let n = data.len();
            let scen = ScenarioMatrix::new(data.clone(), n, 1, None).unwrap();
            let p = EsgBlendParams::with_lambda(lambda).unwrap();
            let out = blend_scenarios(&scen, &[s], &p).unwrap();
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
            let var = |x: &[f64]| {
                let m = mean(x);
                x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
            };
            let m_in = mean(&data);
            prop_assert!((mean(out.values()) - (lambda * s / 255.0 + (1.0 - lambda) * m_in)).abs() <= 1e-10);
            prop_assert!((var(out.values()) - (1.0 - lambda).powi(2) * var(&data)).abs() <= 1e-10);
        }
    }
}
