//! Multivariate normal inverse Gaussian (NIG) distribution.
//!
//! Normal mean-variance mixture representation:
//!
//! ```text
//! X = location + W * skewness + sqrt(W) * A Z,   A A' = scale,   Z ~ N(0, I)
//! W ~ InverseGaussian(mean = 1, shape = alpha_bar)
//! ```
//!
//! Fixing `E[W] = 1` makes `(location, scale, shape, skewness)` identifiable;
//! in one dimension it maps bijectively to the classical `(alpha, beta,
//! delta, mu)` parameters, see [`NigParams::to_classical`].
//!
//! Fitting uses the EM algorithm on the mixture: the posterior of `W` given
//! an observation is generalized inverse Gaussian, whose moments are ratios
//! of modified Bessel functions.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bessel::log_bessel_k;
use crate::numeric::{clip_eigenvalues, mean_and_covariance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub location: Vec<f64>,
    /// Row-major `d × d`, symmetric positive definite.
    pub scale: Vec<Vec<f64>>,
    /// Tail heaviness; the Gaussian is the limit `shape -> inf`.
    pub shape: f64,
    pub skewness: Vec<f64>,
}

/// Classical one-dimensional parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalNig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
}

impl NigParams {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.skewness.len() != d || self.scale.len() != d {
            return Err(Error::Shape("NIG parameters have inconsistent dimensions".into()));
        }
        if self.scale.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("NIG scale matrix is not square".into()));
        }
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::Domain(format!("NIG shape {} must be positive", self.shape)));
        }
        Ok(())
    }

    pub fn scale_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.scale[i][j])
    }

    /// `location + skewness`.
    pub fn mean(&self) -> Vec<f64> {
        self.location.iter().zip(&self.skewness).map(|(m, g)| m + g).collect()
    }

    /// `scale + skewness skewness' / shape`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let g = DVector::from_column_slice(&self.skewness);
        self.scale_matrix() + (&g * g.transpose()) / self.shape
    }

    pub fn to_classical(&self) -> Result<ClassicalNig> {
        self.validate()?;
        if self.dim() != 1 {
            return Err(Error::Shape("classical parameters exist only in one dimension".into()));
        }
        let s2 = self.scale[0][0];
        let beta = self.skewness[0] / s2;
        Ok(ClassicalNig {
            alpha: (self.shape / s2 + beta * beta).sqrt(),
            beta,
            delta: (s2 * self.shape).sqrt(),
            mu: self.location[0],
        })
    }

    pub fn from_classical(c: ClassicalNig) -> Result<Self> {
        if !(c.delta > 0.0 && c.alpha > c.beta.abs()) {
            return Err(Error::Domain(format!("invalid classical NIG parameters {c:?}")));
        }
        let g0 = (c.alpha * c.alpha - c.beta * c.beta).sqrt();
        let s2 = c.delta / g0;
        Ok(Self {
            location: vec![c.mu],
            scale: vec![vec![s2]],
            shape: c.delta * g0,
            skewness: vec![c.beta * s2],
        })
    }

    /// Sampler with the Cholesky factor of the scale matrix precomputed.
    pub fn sampler(&self) -> Result<NigSampler> {
        self.validate()?;
        let chol = Cholesky::new(self.scale_matrix())
            .ok_or_else(|| Error::Singular("NIG scale matrix is not positive definite".into()))?;
        Ok(NigSampler {
            params: self.clone(),
            factor: chol.l(),
            mixing: InverseGaussian::new(1.0, self.shape)
                .map_err(|e| Error::Domain(format!("inverse Gaussian: {e}")))?,
        })
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let ctx = DensityContext::new(self)?;
        Ok(ctx.log_density(&DVector::from_column_slice(x)).0)
    }
}

/// Draws from a [`NigParams`] distribution.
#[derive(Debug, Clone)]
pub struct NigSampler {
    params: NigParams,
    factor: DMatrix<f64>,
    mixing: InverseGaussian<f64>,
}

impl NigSampler {
    pub fn params(&self) -> &NigParams {
        &self.params
    }

    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.params.dim();
        let w: f64 = self.mixing.sample(rng);
        let sw = w.sqrt();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..d {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += self.factor[(i, j)] * zj;
            }
            out[i] = self.params.location[i] + w * self.params.skewness[i] + sw * acc;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.params.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// Precomputed pieces of the density and of the EM posterior.
struct DensityContext {
    mu: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    chi: f64,
    /// `psi + gamma' scale^-1 gamma`.
    b: f64,
    sinv_gamma: DVector<f64>,
    log_const: f64,
    d: usize,
}

impl DensityContext {
    fn new(p: &NigParams) -> Result<Self> {
        p.validate()?;
        let d = p.dim();
        let sigma = p.scale_matrix();
        let chol = Cholesky::new(sigma)
            .ok_or_else(|| Error::Singular("NIG scale matrix is not positive definite".into()))?;
        let gamma = DVector::from_column_slice(&p.skewness);
        let sinv_gamma = chol.solve(&gamma);
        let chi = p.shape;
        let psi = p.shape;
        let b = psi + gamma.dot(&sinv_gamma);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let lambda = -0.5;
        let dd = d as f64;
        // Normalizing constant of the generalized hyperbolic density at lambda = -1/2.
        let log_const = -lambda * (chi * psi).sqrt().ln() + lambda * psi.ln()
            + (0.5 * dd - lambda) * b.ln()
            - 0.5 * dd * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det
            - log_bessel_k(lambda, (chi * psi).sqrt());
        Ok(Self {
            mu: DVector::from_column_slice(&p.location),
            chol,
            chi,
            b,
            sinv_gamma,
            log_const,
            d,
        })
    }

    /// Log density and the posterior moments `(E[W | x], E[1/W | x])`.
    fn log_density(&self, x: &DVector<f64>) -> (f64, f64, f64) {
        let dx = x - &self.mu;
        let q = dx.dot(&self.chol.solve(&dx));
        let a = self.chi + q;
        let z = (a * self.b).sqrt();
        let nu = -0.5 - 0.5 * self.d as f64;
        let lk = log_bessel_k(nu, z);
        let lk_up = log_bessel_k(nu + 1.0, z);
        let lk_down = log_bessel_k(nu - 1.0, z);
        let logf = self.log_const + lk - (0.5 * self.d as f64 + 0.5) * z.ln()
            + dx.dot(&self.sinv_gamma);
        let ratio = (a / self.b).sqrt();
        let e_w = ratio * (lk_up - lk).exp();
        let e_inv_w = (lk_down - lk).exp() / ratio;
        (logf, e_w, e_inv_w)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NigFitOptions {
    pub max_iter: usize,
    /// Stop when the relative log-likelihood change falls below this.
    pub tolerance: f64,
}

impl Default for NigFitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NigFit {
    pub params: NigParams,
    /// Log-likelihood after each E-step, starting from the initial guess.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The sample covariance needed a ridge to be positive definite.
    pub ridge_repaired: bool,
}

/// Fits a `d`-dimensional NIG to the rows of `data` by EM.
pub fn fit_joint_nig(data: &[Vec<f64>], opts: &NigFitOptions) -> Result<NigFit> {
    fit_joint_nig_from(data, opts, None)
}

/// EM started from `initial` when it has the right dimension, otherwise
/// from the moment-matched guess (Gaussian scale, unit shape, no skew).
pub fn fit_joint_nig_from(data: &[Vec<f64>], opts: &NigFitOptions, initial: Option<&NigParams>) -> Result<NigFit> {
    let n = data.len();
    let d = data.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::Precondition("at least one dimension required".into()));
    }
    if n <= 10 * d {
        return Err(Error::Precondition(format!(
            "need more than {} observations for dimension {d}, got {n}",
            10 * d
        )));
    }
    if data.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Shape("ragged or non-finite residual matrix".into()));
    }

    let (mean, cov) = mean_and_covariance(data);
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(Error::Singular("residuals have zero variance".into()));
    }
    let mut ridge_repaired = false;
    let cov = if Cholesky::new(cov.clone()).is_some() {
        cov
    } else {
        let (fixed, _) = clip_eigenvalues(&cov, 1e-8 * trace / d as f64);
        ridge_repaired = true;
        log::warn!("residual covariance not positive definite; eigenvalues clipped");
        fixed
    };
    if Cholesky::new(cov.clone()).is_none() {
        return Err(Error::Singular("residual covariance not positive definite after repair".into()));
    }

    let xs: Vec<DVector<f64>> = data.iter().map(|r| DVector::from_column_slice(r)).collect();
    let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect()
    };
    let mut params = match initial {
        Some(p) if p.dim() == d => p.clone(),
        _ => NigParams {
            location: mean.iter().copied().collect(),
            scale: to_rows(&cov),
            shape: 1.0,
            skewness: vec![0.0; d],
        },
    };
    let nf = n as f64;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        let ctx = DensityContext::new(&params)?;
        let mut ll = 0.0;
        let mut sum_w = 0.0;
        let mut sum_inv = 0.0;
        let mut sum_inv_x = DVector::zeros(d);
        let mut posts = Vec::with_capacity(n);
        for x in &xs {
            let (lf, ew, einv) = ctx.log_density(x);
            ll += lf;
            sum_w += ew;
            sum_inv += einv;
            sum_inv_x += x * einv;
            posts.push(einv);
        }
        if !ll.is_finite() {
            return Err(Error::Fit("NIG log-likelihood became non-finite".into()));
        }
        if let Some(&prev) = history.last() {
            let change: f64 = ll - prev;
            if change.abs() <= opts.tolerance * (1.0 + f64::abs(prev)) {
                history.push(ll);
                converged = true;
                iterations = iter;
                break;
            }
        }
        history.push(ll);
        if iter == opts.max_iter {
            iterations = iter;
            break;
        }

        // M-step.
        let eta = sum_w / nf;
        let delta = sum_inv / nf;
        let xbar = DVector::from_column_slice(mean.as_slice());
        let mean_inv_x = &sum_inv_x / nf;
        let denom = delta * eta - 1.0;
        let gamma = if denom > 1e-14 {
            (&xbar * delta - &mean_inv_x) / denom
        } else {
            DVector::zeros(d)
        };
        let mu = (&mean_inv_x - &gamma) / delta;
        let mut sigma = DMatrix::zeros(d, d);
        for (x, w) in xs.iter().zip(&posts) {
            let dx = x - &mu;
            sigma += (&dx * dx.transpose()) * *w;
        }
        sigma /= nf;
        sigma -= (&gamma * gamma.transpose()) * eta;
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::Singular("EM scale update lost positive definiteness".into()));
        }
        let chi = 1.0 / (delta - 1.0 / eta);
        let psi = chi / (eta * eta);
        // Rescale the mixing variable back to unit mean.
        let m = (chi / psi).sqrt();
        let shape = (chi * psi).sqrt();
        params = NigParams {
            location: mu.iter().copied().collect(),
            scale: to_rows(&(sigma * m)),
            shape,
            skewness: (gamma * m).iter().copied().collect(),
        };
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::Fit(format!("NIG shape update diverged to {shape}")));
        }
    }

    Ok(NigFit {
        params,
        log_likelihood: history,
        iterations,
        converged,
        ridge_repaired,
    })
}
