//! Shared numerical helpers.

pub mod bessel;
pub mod optimize;
pub mod roots;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (`n - 1` denominator); 0 for fewer than 2 points.
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn sample_std(x: &[f64]) -> f64 {
    sample_variance(x).sqrt()
}

/// Column means and unbiased covariance of a row-major `n × d` sample.
pub fn mean_and_covariance(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut mu = DVector::zeros(d);
    for r in rows {
        for j in 0..d {
            mu[j] += r[j];
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in i..d {
                cov[(i, j)] += di * (r[j] - mu[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mu, cov)
}

/// Clips eigenvalues of a symmetric matrix at `floor`. Returns the repaired
/// matrix and whether any eigenvalue was clipped.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    ((&out + out.transpose()) * 0.5, true)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    let e = libm::erfc(x.abs() / std::f64::consts::SQRT_2);
    if x < 0.0 {
        0.5 * e
    } else {
        1.0 - 0.5 * e
    }
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_known_sample() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 10.0]];
        let (mu, cov) = mean_and_covariance(&rows);
        assert_eq!(mu.as_slice(), &[3.0, 6.0]);
        assert_eq!(cov[(0, 0)], 4.0);
        assert_eq!(cov[(0, 1)], 8.0);
        assert_eq!(cov[(1, 1)], 16.0);
    }

    #[test]
    fn eigen_clipping_restores_psd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (fixed, changed) = clip_eigenvalues(&m, 1e-8);
        assert!(changed);
        let eig = SymmetricEigen::new(fixed);
        assert!(eig.eigenvalues.iter().all(|&l| l >= 1e-8 * 0.999));
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(!clip_eigenvalues(&pd, 1e-8).1);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-14);
        assert!(norm_cdf(-40.0) > 0.0 || norm_cdf(-40.0) == 0.0);
    }
}
