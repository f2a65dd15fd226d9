//! Reward-risk portfolio programs.
//!
//! Mean-variance is solved as a QP, mean-CVaR through the
//! Rockafellar-Uryasev linearization as an LP. Both run on the interior-point
//! solver from `clarabel`. Constraints: budget, optional long-only, optional
//! L1 turnover cap around previous weights (split into `a - b = theta - prev`).

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioMatrix;

/// Tolerance used for feasibility checks on returned weights.
pub const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RiskMeasure {
    /// Variance of the portfolio return.
    Mv,
    /// Conditional value-at-risk of the loss at level `beta`.
    Mcvar { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSpec {
    pub alpha: f64,
    pub risk: RiskMeasure,
    /// L1 turnover cap; `None` means unbounded.
    pub gamma: Option<f64>,
    /// Previous weights. Used by the turnover constraint and as the
    /// reference point for tie-breaking (equal weights when absent).
    pub prev_weights: Option<Vec<f64>>,
    pub allow_short: bool,
    /// Among multiple optima return the one closest to `prev_weights`.
    pub tie_break: bool,
}

impl Default for OptimizationSpec {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            risk: RiskMeasure::Mv,
            gamma: None,
            prev_weights: None,
            allow_short: false,
            tie_break: true,
        }
    }
}

impl OptimizationSpec {
    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let RiskMeasure::Mcvar { beta } = self.risk {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Domain(format!("beta {beta} outside (0, 1)")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) || g.is_nan() {
                return Err(Error::Domain(format!("turnover cap {g} must be >= 0")));
            }
            if self.prev_weights.is_none() {
                return Err(Error::Precondition(
                    "turnover cap requires previous weights".into(),
                ));
            }
        }
        if let Some(p) = &self.prev_weights {
            if p.len() != n_assets {
                return Err(Error::Shape(format!(
                    "{} previous weights for {n_assets} assets",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("previous weights must be finite".into()));
            }
        }
        Ok(())
    }

    fn reference(&self, n: usize) -> Vec<f64> {
        self.prev_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / n as f64; n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub theta: Vec<f64>,
}

impl Weights {
    pub fn equal(n: usize) -> Self {
        Self {
            theta: vec![1.0 / n as f64; n],
        }
    }

    pub fn turnover_from(&self, prev: &[f64]) -> f64 {
        self.theta.iter().zip(prev).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Reduced-accuracy solution; weights are usable but flagged.
    NumericLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub alpha: f64,
    pub weights: Weights,
    /// Objective in original units: `-alpha * mean + (1 - alpha) * risk`.
    pub objective: f64,
    /// Expected portfolio return under the input model.
    pub mean: f64,
    /// Variance (MV) or CVaR of the loss (mCVaR) at the returned weights.
    pub risk: f64,
    pub status: SolveStatus,
    pub iterations: u32,
    pub duality_gap: f64,
    pub ridge_applied: bool,
    /// `(1 - beta) * S < 10`: the CVaR estimate rests on very few scenarios.
    pub degenerate_tail: bool,
}

/// Exact Rockafellar-Uryasev CVaR of the loss `-x` at level `beta`:
/// `min_xi xi + E[(-x - xi)^+] / (1 - beta)`.
pub fn cvar_loss(x: &[f64], beta: f64) -> f64 {
    let mut losses: Vec<f64> = x.iter().map(|v| -v).collect();
    losses.sort_by(|a, b| b.total_cmp(a));
    let m = x.len() as f64 * (1.0 - beta);
    let j = (m.ceil() as usize).clamp(1, losses.len());
    let head: f64 = losses[..j - 1].iter().sum();
    (head + (m - (j - 1) as f64) * losses[j - 1]) / m
}

/// Mean vector and covariance used by the MV program.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub ridge_applied: bool,
}

impl Moments {
    /// Symmetrizes `sigma`; when its smallest eigenvalue is not positive,
    /// floors eigenvalues at 0 and adds a ridge of `1e-10 * trace / I`.
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if sigma.nrows() != n || sigma.ncols() != n || n == 0 {
            return Err(Error::Shape(format!(
                "mean of length {n} with a {}x{} covariance",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite moments".into()));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let min = eig.eigenvalues.min();
        if min > 0.0 {
            return Ok(Self {
                mu,
                sigma: sym,
                ridge_applied: false,
            });
        }
        let ridge = 1e-10 * sym.trace().max(f64::MIN_POSITIVE) / n as f64;
        let floored = eig.eigenvalues.map(|l| l.max(0.0) + ridge);
        let v = &eig.eigenvectors;
        let fixed = v * DMatrix::from_diagonal(&floored) * v.transpose();
        Ok(Self {
            mu,
            sigma: (&fixed + fixed.transpose()) * 0.5,
            ridge_applied: true,
        })
    }

    pub fn from_scenarios(scenarios: &ScenarioMatrix) -> Result<Self> {
        Self::new(scenarios.column_means(), scenarios.covariance())
    }
}

/// Sparse problem under construction: equality rows, then inequality rows.
struct Builder {
    n: usize,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    ineq: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self {
            n,
            eq: Vec::new(),
            ineq: Vec::new(),
        }
    }

    fn assemble(&self) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let (mut rows, mut cols, mut vals, mut b) = (vec![], vec![], vec![], vec![]);
        for (r, (row, rhs)) in self.eq.iter().chain(&self.ineq).enumerate() {
            for &(c, v) in row {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
            b.push(*rhs);
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, self.n, rows, cols, vals);
        let mut cones = Vec::new();
        if !self.eq.is_empty() {
            cones.push(ZeroConeT(self.eq.len()));
        }
        if !self.ineq.is_empty() {
            cones.push(NonnegativeConeT(self.ineq.len()));
        }
        (a, b, cones)
    }
}

/// Adds budget, long-only and turnover rows for `n_assets` weights stored
/// first in the variable vector. Returns the index of the first free slot.
fn add_portfolio_constraints(b: &mut Builder, spec: &OptimizationSpec, n_assets: usize) -> usize {
    b.eq.push(((0..n_assets).map(|i| (i, 1.0)).collect(), 1.0));
    if !spec.allow_short {
        for i in 0..n_assets {
            b.ineq.push((vec![(i, -1.0)], 0.0));
        }
    }
    let mut next = n_assets;
    if let (Some(gamma), Some(prev)) = (spec.gamma, &spec.prev_weights) {
        let (a0, b0) = (next, next + n_assets);
        for i in 0..n_assets {
            b.eq.push((vec![(i, 1.0), (a0 + i, -1.0), (b0 + i, 1.0)], prev[i]));
            b.ineq.push((vec![(a0 + i, -1.0)], 0.0));
            b.ineq.push((vec![(b0 + i, -1.0)], 0.0));
        }
        b.ineq.push((
            (a0..b0 + n_assets).map(|k| (k, 1.0)).collect(),
            gamma,
        ));
        next += 2 * n_assets;
    }
    next
}

fn settings() -> DefaultSettings<f64> {
    DefaultSettings {
        verbose: false,
        max_iter: 200,
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-10,
        max_threads: 1,
        ..DefaultSettings::default()
    }
}

struct RawSolution {
    x: Vec<f64>,
    status: SolveStatus,
    iterations: u32,
    gap: f64,
}

fn run(p: &CscMatrix<f64>, q: &[f64], builder: &Builder) -> Result<RawSolution> {
    let (a, b, cones) = builder.assemble();
    let mut solver = DefaultSolver::new(p, q, &a, &b, &cones, settings())
        .map_err(|e| Error::Shape(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => {
            log::warn!("optimizer returned a reduced-accuracy solution");
            SolveStatus::NumericLimit
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::Infeasible(
                "no weights satisfy the budget, sign and turnover constraints".into(),
            ))
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::Infeasible("objective is unbounded below".into()))
        }
        other => {
            return Err(Error::NumericLimit {
                iterations: sol.iterations,
                message: format!("{other:?}"),
            })
        }
    };
    Ok(RawSolution {
        x: sol.x.clone(),
        status,
        iterations: sol.iterations,
        gap: (sol.obj_val - sol.obj_val_dual).abs(),
    })
}

/// Removes interior-point noise: clips tiny negatives under long-only and
/// renormalizes the budget exactly.
fn clean_weights(raw: &[f64], allow_short: bool) -> Vec<f64> {
    let mut w: Vec<f64> = raw
        .iter()
        .map(|&v| if !allow_short && v < 0.0 { 0.0 } else { v })
        .collect();
    let s: f64 = w.iter().sum();
    if s.is_finite() && s.abs() > 0.5 {
        w.iter_mut().for_each(|v| *v /= s);
    }
    w
}

/// Objective scale that brings the larger of the reward and risk terms to
/// order one; the solver's absolute tolerances assume this.
fn objective_scale(reward: f64, risk: f64) -> f64 {
    let m = reward.max(risk);
    if m > 0.0 && m.is_finite() {
        1.0 / m
    } else {
        1.0
    }
}

/// Second phase: among points with objective within `slack` of the optimum,
/// the one nearest to the reference weights.
fn nearest_optimum(
    builder: &mut Builder,
    q_obj: &[f64],
    optimum: f64,
    reference: &[f64],
) -> Result<RawSolution> {
    let n = builder.n;
    let slack = 1e-9 * optimum.abs().max(1.0);
    builder.ineq.push((
        q_obj
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k, *v))
            .collect(),
        optimum + slack,
    ));
    let (rows, vals): (Vec<usize>, Vec<f64>) = (0..reference.len()).map(|i| (i, 2.0)).unzip();
    let p = CscMatrix::new_from_triplets(n, n, rows.clone(), rows, vals);
    let mut q = vec![0.0; n];
    for (i, r) in reference.iter().enumerate() {
        q[i] = -2.0 * r;
    }
    let out = run(&p, &q, builder);
    builder.ineq.pop();
    out
}

/// Keeps the first-phase optimum when the tie-breaking phase fails or only
/// reaches reduced accuracy; its feasible set is a thin slab around the
/// optimal face, which interior-point iterations do not always resolve.
fn refine(first: RawSolution, second: Result<RawSolution>) -> RawSolution {
    match second {
        Ok(s) if s.status == SolveStatus::NumericLimit && first.status == SolveStatus::Optimal => {
            log::debug!("tie-break phase reached reduced accuracy; keeping the first-phase optimum");
            first
        }
        Ok(s) => RawSolution {
            iterations: first.iterations + s.iterations,
            ..s
        },
        Err(e) => {
            log::debug!("tie-break phase skipped: {e}");
            first
        }
    }
}

/// Mean-variance program `min -alpha mu'theta + (1 - alpha) theta' Sigma theta`.
pub fn solve_mv(moments: &Moments, spec: &OptimizationSpec) -> Result<SolveReport> {
    let n_assets = moments.mu.len();
    spec.validate(n_assets)?;
    let alpha = spec.alpha;
    let mut builder = Builder::new(0);
    let n = add_portfolio_constraints(&mut builder, spec, n_assets);
    builder.n = n;

    let reward = alpha * moments.mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let risk = (1.0 - alpha) * moments.sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = objective_scale(reward, risk);

    let mut q = vec![0.0; n];
    for i in 0..n_assets {
        q[i] = -alpha * moments.mu[i] * k;
    }
    let (mut rows, mut cols, mut vals) = (vec![], vec![], vec![]);
    if alpha < 1.0 {
        for j in 0..n_assets {
            for i in 0..=j {
                rows.push(i);
                cols.push(j);
                vals.push(2.0 * (1.0 - alpha) * moments.sigma[(i, j)] * k);
            }
        }
    }
    let p = CscMatrix::new_from_triplets(n, n, rows, cols, vals);
    let mut sol = run(&p, &q, &builder)?;
    // With a positive definite covariance the optimum is unique unless the
    // objective is purely linear.
    if spec.tie_break && alpha == 1.0 {
        let optimum: f64 = q.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
        sol = refine(sol, nearest_optimum(&mut builder, &q, optimum, &spec.reference(n_assets)));
    }
    let theta = clean_weights(&sol.x[..n_assets], spec.allow_short);
    let mean: f64 = theta.iter().zip(&moments.mu).map(|(a, b)| a * b).sum();
    let th = nalgebra::DVector::from_column_slice(&theta);
    let var = (th.transpose() * &moments.sigma * &th)[(0, 0)];
    Ok(SolveReport {
        alpha,
        weights: Weights { theta },
        objective: -alpha * mean + (1.0 - alpha) * var,
        mean,
        risk: var,
        status: sol.status,
        iterations: sol.iterations,
        duality_gap: sol.gap / k,
        ridge_applied: moments.ridge_applied,
        degenerate_tail: false,
    })
}

/// Mean-CVaR program over scenario returns, linearized with an auxiliary
/// threshold `xi` and per-scenario excess losses `u_s >= -x_s - xi`.
pub fn solve_mcvar(scenarios: &ScenarioMatrix, spec: &OptimizationSpec) -> Result<SolveReport> {
    let n_assets = scenarios.n_assets();
    spec.validate(n_assets)?;
    let RiskMeasure::Mcvar { beta } = spec.risk else {
        return Err(Error::Precondition("solve_mcvar needs a CVaR risk measure".into()));
    };
    let s = scenarios.n_scenarios();
    let tail = (1.0 - beta) * s as f64;
    if tail < 1.0 || beta * (s as f64) < 1.0 {
        return Err(Error::Precondition(format!(
            "beta {beta} leaves an empty tail or body with {s} scenarios"
        )));
    }
    let degenerate_tail = tail < 10.0;
    if degenerate_tail {
        log::warn!("CVaR tail holds only {tail:.1} scenarios");
    }
    let alpha = spec.alpha;
    let mu = scenarios.column_means();
    let reward = alpha * mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let spread = scenarios.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = objective_scale(reward, (1.0 - alpha) * spread);
    let ctx = CvarContext {
        scenarios,
        spec,
        mu: &mu,
        tail,
        scale,
    };
    let viol_tol = 1e-9 * spread.max(f64::MIN_POSITIVE);

    // Scenario generation: start from the worst scenarios under the
    // reference weights and add any scenario whose loss exceeds the
    // threshold at the current solution. The restricted problem is a
    // relaxation, so a solution without violations is optimal.
    let reference = spec.reference(n_assets);
    let ref_port = scenarios.portfolio(&reference);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| ref_port[a].total_cmp(&ref_port[b]).then(a.cmp(&b)));
    let mut included = vec![false; s];
    let start = ((3.0 * tail).ceil() as usize + 20).min(s);
    order[..start].iter().for_each(|&k| included[k] = true);

    let (mut builder, mut q, mut sol) = loop {
        let (builder, q) = ctx.build(&included);
        let sol = run(&CscMatrix::zeros((builder.n, builder.n)), &q, &builder)?;
        if !ctx.add_violations(&sol.x, &mut included, viol_tol) {
            break (builder, q, sol);
        }
    };
    if spec.tie_break {
        let optimum: f64 = q.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
        let mut first = Some(sol);
        sol = loop {
            match nearest_optimum(&mut builder, &q, optimum, &reference) {
                Ok(second) => {
                    if !ctx.add_violations(&second.x, &mut included, viol_tol) {
                        break refine(first.take().expect("set"), Ok(second));
                    }
                    (builder, q) = ctx.build(&included);
                }
                Err(e) => break refine(first.take().expect("set"), Err(e)),
            }
        };
    }
    let theta = clean_weights(&sol.x[..n_assets], spec.allow_short);
    let port = scenarios.portfolio(&theta);
    let mean = crate::numeric::mean(&port);
    let cvar = cvar_loss(&port, beta);
    Ok(SolveReport {
        alpha,
        weights: Weights { theta },
        objective: -alpha * mean + (1.0 - alpha) * cvar,
        mean,
        risk: cvar,
        status: sol.status,
        iterations: sol.iterations,
        duality_gap: sol.gap / scale,
        ridge_applied: false,
        degenerate_tail,
    })
}

/// Mean-CVaR data shared by the restricted problems.
struct CvarContext<'a> {
    scenarios: &'a ScenarioMatrix,
    spec: &'a OptimizationSpec,
    mu: &'a [f64],
    tail: f64,
    scale: f64,
}

impl CvarContext<'_> {
    /// Restricted LP over the included scenarios. Variables: weights,
    /// turnover splits, threshold `xi`, then one excess loss per scenario.
    fn build(&self, included: &[bool]) -> (Builder, Vec<f64>) {
        let n_assets = self.scenarios.n_assets();
        let mut builder = Builder::new(0);
        let xi = add_portfolio_constraints(&mut builder, self.spec, n_assets);
        let u0 = xi + 1;
        let mut k = 0;
        for (row, _) in self.scenarios.rows().zip(included).filter(|(_, inc)| **inc) {
            let mut r: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, -v))
                .collect();
            r.push((xi, -1.0));
            r.push((u0 + k, -1.0));
            builder.ineq.push((r, 0.0));
            builder.ineq.push((vec![(u0 + k, -1.0)], 0.0));
            k += 1;
        }
        builder.n = u0 + k;
        let alpha = self.spec.alpha;
        let mut q = vec![0.0; builder.n];
        for i in 0..n_assets {
            q[i] = -alpha * self.mu[i] * self.scale;
        }
        q[xi] = (1.0 - alpha) * self.scale;
        let w = (1.0 - alpha) * self.scale / self.tail;
        q[u0..].iter_mut().for_each(|v| *v = w);
        (builder, q)
    }

    fn xi_index(&self) -> usize {
        let n = self.scenarios.n_assets();
        match self.spec.gamma {
            Some(_) => 3 * n,
            None => n,
        }
    }

    /// Marks excluded scenarios whose loss exceeds the threshold at `x`.
    fn add_violations(&self, x: &[f64], included: &mut [bool], tol: f64) -> bool {
        let n = self.scenarios.n_assets();
        let theta = &x[..n];
        let xi = x[self.xi_index()];
        let mut added = false;
        for (k, row) in self.scenarios.rows().enumerate() {
            if included[k] {
                continue;
            }
            let loss: f64 = -row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            if loss - xi > tol {
                included[k] = true;
                added = true;
            }
        }
        added
    }
}

/// Dispatches on the risk measure; MV uses the scenario mean and covariance.
pub fn solve(scenarios: &ScenarioMatrix, spec: &OptimizationSpec) -> Result<SolveReport> {
    match spec.risk {
        RiskMeasure::Mv => solve_mv(&Moments::from_scenarios(scenarios)?, spec),
        RiskMeasure::Mcvar { .. } => solve_mcvar(scenarios, spec),
    }
}

/// Parses `a:step:b` (inclusive, rounded to the step's decimals) or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Domain(format!("grid '{text}': {m}"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad("not a number"));
    match parts.len() {
        1 => text.split(',').map(|s| num(s.trim())).collect(),
        2 => {
            let (a, b) = (num(parts[0])?, num(parts[1])?);
            if b < a {
                return Err(bad("end before start"));
            }
            Ok((a.round() as i64..=b.round() as i64).map(|v| v as f64).collect())
        }
        3 => {
            let (a, step, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || b < a {
                return Err(bad("step must be positive and end >= start"));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=count)
                .map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(bad("expected a:b, a:step:b or a comma list")),
    }
}

/// The paper's risk-aversion grid `0, 0.01, ..., 0.99`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..100).map(|k| k as f64 / 100.0).collect()
}

/// One solve per `alpha`, in grid order. Solves are independent (cold
/// starts), so they run in parallel and stay deterministic. Per-point
/// failures are returned in place.
pub fn sweep_alpha(
    scenarios: &ScenarioMatrix,
    alphas: &[f64],
    template: &OptimizationSpec,
) -> Result<Vec<Result<SolveReport>>> {
    if alphas.is_empty() {
        return Err(Error::Precondition("empty alpha grid".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Domain(format!("alpha {a} outside [0, 1]")));
    }
    let moments = match template.risk {
        RiskMeasure::Mv => Some(Moments::from_scenarios(scenarios)?),
        RiskMeasure::Mcvar { .. } => None,
    };
    Ok(alphas
        .par_iter()
        .map(|&alpha| {
            let spec = OptimizationSpec {
                alpha,
                ..template.clone()
            };
            match &moments {
                Some(m) => solve_mv(m, &spec),
                None => solve_mcvar(scenarios, &spec),
            }
        })
        .collect())
}

/// Checks budget, sign and turnover constraints within `tol`.
pub fn check_feasible(theta: &[f64], spec: &OptimizationSpec, tol: f64) -> bool {
    let budget = (theta.iter().sum::<f64>() - 1.0).abs() <= tol;
    let sign = spec.allow_short || theta.iter().all(|v| *v >= -tol);
    let turnover = match (spec.gamma, &spec.prev_weights) {
        (Some(g), Some(prev)) => Weights { theta: theta.to_vec() }.turnover_from(prev) <= g + tol,
        _ => true,
    };
    budget && sign && turnover
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    /// All weight vectors on the simplex with the given step.
    fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
        fn rec(n: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
            if n == 1 {
                cur.push(left as f64 / steps as f64);
                out.push(cur.clone());
                cur.pop();
                return;
            }
            for k in 0..=left {
                cur.push(k as f64 / steps as f64);
                rec(n - 1, left - k, steps, cur, out);
                cur.pop();
            }
        }
        let mut out = vec![];
        rec(n, steps, steps, &mut vec![], &mut out);
        out
    }

    #[test]
    fn min_variance_two_uncorrelated_assets() {
        let m = Moments::new(vec![0.01, 0.01], diag(&[0.04, 0.09])).unwrap();
        let r = solve_mv(&m, &OptimizationSpec::default()).unwrap();
        let expect = [0.09 / 0.13, 0.04 / 0.13];
        for (a, b) in r.weights.theta.iter().zip(expect) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert_eq!(r.status, SolveStatus::Optimal);
    }

    #[test]
    fn near_linear_objective_picks_max_mean() {
        let m = Moments::new(vec![0.001, 0.003, 0.002], diag(&[1e-4, 2e-4, 1.5e-4])).unwrap();
        let spec = OptimizationSpec {
            alpha: 0.999,
            ..Default::default()
        };
        let r = solve_mv(&m, &spec).unwrap();
        assert!((r.weights.theta[1] - 1.0).abs() < 1e-6, "{:?}", r.weights.theta);
    }

    #[test]
    fn mv_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.02..0.02));
        let sigma = &a * a.transpose();
        let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-0.001..0.002)).collect();
        let m = Moments::new(mu.clone(), sigma.clone()).unwrap();
        let spec = OptimizationSpec {
            alpha: 0.5,
            ..Default::default()
        };
        let r = solve_mv(&m, &spec).unwrap();
        let brute = simplex_grid(3, 100)
            .into_iter()
            .map(|w| {
                let th = nalgebra::DVector::from_column_slice(&w);
                let mean: f64 = w.iter().zip(&mu).map(|(a, b)| a * b).sum();
                -0.5 * mean + 0.5 * (th.transpose() * &sigma * &th)[(0, 0)]
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.objective <= brute + 1e-12);
        assert!(brute - r.objective < 1e-4);
    }

    #[test]
    fn mcvar_four_scenarios_matches_fine_grid() {
        let sc = ScenarioMatrix::new(
            vec![-0.03, 0.01, 0.02, -0.02, 0.01, 0.00, 0.04, -0.01],
            4,
            2,
            None,
        )
        .unwrap();
        let spec = OptimizationSpec {
            risk: RiskMeasure::Mcvar { beta: 0.5 },
            ..Default::default()
        };
        let r = solve_mcvar(&sc, &spec).unwrap();
        // Independent oracle: RU minimum over xi evaluated at every breakpoint.
        let ru = |x: &[f64]| {
            x.iter()
                .map(|xi| {
                    let xi = -xi;
                    xi + x.iter().map(|v| (-v - xi).max(0.0)).sum::<f64>() / (4.0 * 0.5)
                })
                .fold(f64::INFINITY, f64::min)
        };
        let brute = (0..=1000)
            .map(|k| {
                let w = k as f64 / 1000.0;
                ru(&sc.portfolio(&[w, 1.0 - w]))
            })
            .fold(f64::INFINITY, f64::min);
        assert!((r.objective - brute).abs() < 1e-6, "{} vs {brute}", r.objective);
    }

    #[test]
    fn identical_assets_any_point_optimal() {
        let rows: Vec<Vec<f64>> = (0..60).map(|s| vec![(s as f64 - 30.0) * 1e-3; 3]).collect();
        let sc = ScenarioMatrix::from_rows(&rows, None).unwrap();
        let spec = OptimizationSpec {
            alpha: 0.3,
            risk: RiskMeasure::Mcvar { beta: 0.9 },
            prev_weights: Some(vec![0.5, 0.3, 0.2]),
            ..Default::default()
        };
        let r = solve_mcvar(&sc, &spec).unwrap();
        let x = sc.portfolio(&[1.0, 0.0, 0.0]);
        let common = -0.3 * crate::numeric::mean(&x) + 0.7 * cvar_loss(&x, 0.9);
        assert!((r.objective - common).abs() < 1e-9);
        assert!(check_feasible(&r.weights.theta, &spec, FEAS_TOL));
        // Tie-break returns the reference point itself.
        for (a, b) in r.weights.theta.iter().zip([0.5, 0.3, 0.2]) {
            assert!((a - b).abs() < 1e-5, "{:?}", r.weights.theta);
        }
    }

    #[test]
    fn mcvar_high_alpha_picks_max_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                vec![
                    0.001 + rng.random_range(-0.01..0.01),
                    0.004 + rng.random_range(-0.02..0.02),
                    0.002 + rng.random_range(-0.01..0.01),
                ]
            })
            .collect();
        let sc = ScenarioMatrix::from_rows(&rows, None).unwrap();
        let best = (0..3)
            .max_by(|&a, &b| {
                let m = sc.column_means();
                m[a].total_cmp(&m[b])
            })
            .unwrap();
        let spec = OptimizationSpec {
            alpha: 0.999,
            risk: RiskMeasure::Mcvar { beta: 0.95 },
            ..Default::default()
        };
        let r = solve_mcvar(&sc, &spec).unwrap();
        assert!((r.weights.theta[best] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn turnover_cap_respected_and_zero_cap_freezes() {
        let m = Moments::new(vec![0.001, 0.002, 0.003], diag(&[1e-4, 4e-4, 9e-4])).unwrap();
        let prev = vec![0.2, 0.3, 0.5];
        for gamma in [0.0, 0.004, 0.1] {
            let spec = OptimizationSpec {
                alpha: 0.2,
                gamma: Some(gamma),
                prev_weights: Some(prev.clone()),
                ..Default::default()
            };
            let r = solve_mv(&m, &spec).unwrap();
            assert!(check_feasible(&r.weights.theta, &spec, FEAS_TOL), "{gamma}");
            if gamma == 0.0 {
                for (a, b) in r.weights.theta.iter().zip(&prev) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn unreachable_simplex_is_infeasible() {
        let m = Moments::new(vec![0.001, 0.002], diag(&[1e-4, 4e-4])).unwrap();
        let spec = OptimizationSpec {
            gamma: Some(0.01),
            prev_weights: Some(vec![1.5, -0.5]),
            ..Default::default()
        };
        assert!(matches!(solve_mv(&m, &spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn indefinite_covariance_is_ridged() {
        let s = DMatrix::from_row_slice(2, 2, &[1e-4, 2e-4, 2e-4, 1e-4]);
        let m = Moments::new(vec![0.0, 0.0], s).unwrap();
        assert!(m.ridge_applied);
        let r = solve_mv(&m, &OptimizationSpec::default()).unwrap();
        assert!(check_feasible(&r.weights.theta, &OptimizationSpec::default(), FEAS_TOL));
    }

    #[test]
    fn cvar_loss_fractional_tail() {
        // 10 scenarios, beta 0.75: tail mass 2.5 scenarios.
        let x: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let v = cvar_loss(&x, 0.75);
        assert!((v - (-(1.0 + 2.0 + 0.5 * 3.0) / 2.5)).abs() < 1e-12);
    }

    #[test]
    fn sweep_orders_by_alpha_and_rejects_bad_grid() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|s| vec![0.001 * (s % 7) as f64 - 0.003, 0.002 * (s % 5) as f64 - 0.003])
            .collect();
        let sc = ScenarioMatrix::from_rows(&rows, None).unwrap();
        let t = OptimizationSpec::default();
        let out = sweep_alpha(&sc, &[0.0], &t).unwrap();
        assert_eq!(out.len(), 1);
        let grid = [0.0, 0.25, 0.5, 0.75];
        let out = sweep_alpha(&sc, &grid, &t).unwrap();
        for (r, a) in out.iter().zip(grid) {
            assert_eq!(r.as_ref().unwrap().alpha, a);
        }
        assert!(sweep_alpha(&sc, &[], &t).is_err());
        assert!(sweep_alpha(&sc, &[1.2], &t).is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:0.25:1").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("15:18").unwrap(), vec![15.0, 16.0, 17.0, 18.0]);
        assert_eq!(parse_grid("0,0.5").unwrap(), vec![0.0, 0.5]);
        assert_eq!(parse_grid("0:0.01:0.99").unwrap().len(), 100);
        assert!(parse_grid("1:0").is_err());
    }
}
