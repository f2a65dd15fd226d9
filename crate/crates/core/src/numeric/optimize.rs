//! Unconstrained quasi-Newton minimization.
//!
//! Bounds are handled by the callers through smooth reparameterizations.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the objective changes by less than `f_tol * (1 + |f|)`.
    pub f_tol: f64,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            f_tol: 1e-8,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            (fp - fx) / h
        } else if fm.is_finite() {
            (fx - fm) / h
        } else {
            0.0
        };
    }
    g
}

/// BFGS with central-difference gradients and an Armijo backtracking search.
/// Non-finite objective values are treated as `+inf`.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> Minimum {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = gradient(&eval, &x, fx);
    let mut hinv = identity(n);
    let mut stalls = 0;

    for iter in 1..=opts.max_iter {
        if g.iter().all(|v| v.abs() < opts.grad_tol) {
            return Minimum {
                x,
                value: fx,
                iterations: iter - 1,
                converged: true,
            };
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            hinv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let fnew = eval(&xn);
            if fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // No descent possible along any direction we can find.
            let converged = g.iter().all(|v| v.abs() < opts.grad_tol.sqrt());
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged,
            };
        };

        let gn = gradient(&eval, &xn, fnew);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-14 {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i][j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        } else {
            hinv = identity(n);
        }

        let change = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gn;
        if change <= opts.f_tol * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 2 {
                return Minimum {
                    x,
                    value: fx,
                    iterations: iter,
                    converged: true,
                };
            }
        } else {
            stalls = 0;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: opts.max_iter,
        converged: false,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}
