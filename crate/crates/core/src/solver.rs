//! Hybrid Jacobi/Gauss-Seidel proximal multi-block ADMM.
//!
//! One iteration runs three phases: every agent solves its `w_check`
//! subproblem from iteration-`k` data (Jacobi), the edge multipliers take a
//! dual step with the fresh `w_check`, then every agent solves its `w_hat`
//! subproblem with its own fresh `w_check` (Gauss-Seidel). Both subproblems
//! are strongly convex quadratics; their system matrices do not change across
//! iterations and are factorised once.

use std::fmt;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};
use crate::model::{min_eigenvalue, Loss, LocalObjective, QuadraticForm, RegularizationParams};
use crate::oracle::ReferenceSolution;
use crate::topology::{build_constraint, AgentGraph, ConsensusConstraint};

/// How proximal weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// User-supplied `tau`, `zeta` (the experiments use 1); sufficient
    /// convergence conditions may be violated.
    PaperDefaults,
    /// `tau`, `zeta` lifted just above the sufficient-condition thresholds.
    TheoremSafe,
}

impl fmt::Display for ParamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamMode::PaperDefaults => "paper-defaults",
            ParamMode::TheoremSafe => "theorem-safe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub rho: f64,
    pub gamma: f64,
    /// Per-agent proximal weight on `w_check` (`P_i = tau_i I`).
    pub tau: Vec<f64>,
    /// Per-agent proximal weight on `w_hat` (`Q_i = zeta_i I`).
    pub zeta: Vec<f64>,
    pub max_iter: usize,
    pub consensus_tol: f64,
    pub step_tol: f64,
    pub mode: ParamMode,
}

impl SolverParams {
    /// Uniform `tau`, `zeta`.
    pub fn uniform(agents: usize, rho: f64, gamma: f64, tau: f64, zeta: f64, max_iter: usize) -> Self {
        Self {
            rho,
            gamma,
            tau: vec![tau; agents],
            zeta: vec![zeta; agents],
            max_iter,
            consensus_tol: 0.0,
            step_tol: 0.0,
            mode: ParamMode::PaperDefaults,
        }
    }

    /// `rho = gamma = tau = zeta = 1`.
    pub fn paper_defaults(agents: usize, max_iter: usize) -> Self {
        Self::uniform(agents, 1.0, 1.0, 1.0, 1.0, max_iter)
    }

    /// Sets `tau`, `zeta` to `(1 + margin)` times the sufficient-condition
    /// thresholds (plus a tiny floor so a zero threshold still yields a
    /// positive weight).
    pub fn theorem_safe(problem: &Problem, rho: f64, gamma: f64, max_iter: usize, margin: f64) -> Result<Self> {
        let mut params = Self::uniform(problem.agent_count(), rho, gamma, 1.0, 1.0, max_iter);
        let report = validate_params(
            &params,
            problem.graph(),
            problem.lipschitz_bounds(),
            problem.reg().m,
            problem.vectorized_dim(),
        )?;
        params.tau = report.tau_min.iter().map(|t| t * (1.0 + margin) + 1e-9).collect();
        params.zeta = report.zeta_min.iter().map(|z| z * (1.0 + margin) + 1e-9).collect();
        params.mode = ParamMode::TheoremSafe;
        Ok(params)
    }

    fn check(&self, agents: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return param(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return param(format!("gamma must lie in (0, 2), got {}", self.gamma));
        }
        if self.tau.len() != agents || self.zeta.len() != agents {
            return dim(format!(
                "{} tau and {} zeta values for {agents} agents",
                self.tau.len(),
                self.zeta.len()
            ));
        }
        if self.tau.iter().chain(&self.zeta).any(|v| !(*v > 0.0 && v.is_finite())) {
            return param("tau and zeta must be positive");
        }
        Ok(())
    }
}

/// Per-agent sufficient-condition thresholds and any violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub ok: bool,
    pub tau_min: Vec<f64>,
    pub zeta_min: Vec<f64>,
    pub violations: Vec<String>,
}

/// Checks the proximal weights against the convergence-rate conditions:
/// `zeta_i > (C_i/m)(C_i + m)` and
/// `tau_i > max{rho d_i + 4(N-1) rho sqrt(dim), rho (N/(2-gamma) - 1) d_i}`,
/// where `dim` is the vectorised weight dimension. Violations are reported,
/// not raised; only `gamma` outside `(0, 2)` or `rho <= 0` is an error.
pub fn validate_params(
    params: &SolverParams,
    graph: &AgentGraph,
    lipschitz: &[f64],
    m: f64,
    weight_dim: usize,
) -> Result<ParamReport> {
    if !(params.gamma > 0.0 && params.gamma < 2.0) {
        return param(format!("gamma must lie in (0, 2), got {}", params.gamma));
    }
    if !(params.rho > 0.0 && params.rho.is_finite()) {
        return param(format!("rho must be positive, got {}", params.rho));
    }
    if !(m > 0.0) {
        return param(format!("strong-convexity modulus must be positive, got {m}"));
    }
    let n_agents = graph.agent_count();
    if lipschitz.len() != n_agents || params.tau.len() != n_agents || params.zeta.len() != n_agents {
        return dim("per-agent parameter lengths disagree with the graph");
    }
    let rho = params.rho;
    let nf = n_agents as f64;
    let mut report = ParamReport {
        ok: true,
        tau_min: Vec::with_capacity(n_agents),
        zeta_min: Vec::with_capacity(n_agents),
        violations: Vec::new(),
    };
    for i in 0..n_agents {
        let d = graph.degree(i) as f64;
        let t1 = rho * d + 4.0 * (nf - 1.0) * rho * (weight_dim as f64).sqrt();
        let t2 = rho * (nf / (2.0 - params.gamma) - 1.0) * d;
        let tau_min = t1.max(t2);
        let c = lipschitz[i];
        let zeta_min = c / m * (c + m);
        if params.tau[i] <= tau_min {
            report
                .violations
                .push(format!("agent {i}: tau {} <= threshold {tau_min:.6}", params.tau[i]));
        }
        if params.zeta[i] <= zeta_min {
            report
                .violations
                .push(format!("agent {i}: zeta {} <= threshold {zeta_min:.6}", params.zeta[i]));
        }
        report.tau_min.push(tau_min);
        report.zeta_min.push(zeta_min);
    }
    report.ok = report.violations.is_empty();
    Ok(report)
}

/// Smallest eigenvalue of the per-coordinate matrix of
/// `G1_dagger = blkdiag(rho d_i + tau_i) - rho A^T A = diag(tau) + rho * Adjacency`.
pub fn g1_dagger_min_eigenvalue(graph: &AgentGraph, tau: &[f64], rho: f64) -> f64 {
    let n = graph.agent_count();
    let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(tau));
    for &(i, j) in graph.edges() {
        m[(i, j)] += rho;
        m[(j, i)] += rho;
    }
    debug_assert_eq!(m.nrows(), n);
    min_eigenvalue(&m)
}

/// `min_i (zeta_i - (C_i/m)(C_i + m))`, positive iff `G2 > G3`.
pub fn g2_minus_g3_margin(zeta: &[f64], lipschitz: &[f64], m: f64) -> f64 {
    zeta.iter()
        .zip(lipschitz)
        .map(|(z, c)| z - c / m * (c + m))
        .fold(f64::INFINITY, f64::min)
}

/// A decentralised problem: graph, per-agent local losses and regularisers.
#[derive(Debug, Clone)]
pub struct Problem {
    graph: AgentGraph,
    constraint: ConsensusConstraint,
    objectives: Vec<LocalObjective>,
    reg: RegularizationParams,
    dims: (usize, usize),
    lipschitz: Vec<f64>,
}

impl Problem {
    pub fn new(graph: AgentGraph, objectives: Vec<LocalObjective>, reg: RegularizationParams) -> Result<Self> {
        if objectives.len() != graph.agent_count() {
            return dim(format!(
                "{} local objectives for {} agents",
                objectives.len(),
                graph.agent_count()
            ));
        }
        let dims = objectives[0].weight_dims();
        if objectives.iter().any(|o| o.weight_dims() != dims) {
            return dim("local objectives disagree on weight dimensions");
        }
        let constraint = build_constraint(&graph, dims)?;
        let lipschitz = objectives.iter().map(LocalObjective::exact_lipschitz).collect();
        Ok(Self {
            graph,
            constraint,
            objectives,
            reg,
            dims,
            lipschitz,
        })
    }

    /// Replaces the per-agent Lipschitz bounds used for parameter checks.
    /// Each bound is raised to at least the exact constant.
    pub fn with_lipschitz_bounds(mut self, bounds: &[f64]) -> Result<Self> {
        if bounds.len() != self.agent_count() {
            return dim("one Lipschitz bound per agent expected");
        }
        self.lipschitz = bounds
            .iter()
            .zip(&self.objectives)
            .map(|(b, o)| b.max(o.exact_lipschitz()))
            .collect();
        Ok(self)
    }

    pub fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    pub fn constraint(&self) -> &ConsensusConstraint {
        &self.constraint
    }

    pub fn objectives(&self) -> &[LocalObjective] {
        &self.objectives
    }

    pub fn reg(&self) -> &RegularizationParams {
        &self.reg
    }

    pub fn agent_count(&self) -> usize {
        self.graph.agent_count()
    }

    pub fn weight_dims(&self) -> (usize, usize) {
        self.dims
    }

    /// `n * nu`.
    pub fn vectorized_dim(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn lipschitz_bounds(&self) -> &[f64] {
        &self.lipschitz
    }

    /// `F(Z) = sum_i f_i(w_check_i, w_hat_i) + g(w_check_i) + h(w_hat_i)`.
    pub fn objective(&self, check: &[DMatrix<f64>], hat: &[DMatrix<f64>]) -> f64 {
        self.objectives
            .iter()
            .zip(check.iter().zip(hat))
            .map(|(o, (c, h))| o.value(c, h) + self.reg.g(c) + self.reg.h(h))
            .sum()
    }
}

/// ADMM state `u = (W_check, W_hat, lambda)` at iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub check: Vec<DMatrix<f64>>,
    pub hat: Vec<DMatrix<f64>>,
    pub lambda: Vec<DMatrix<f64>>,
    pub k: usize,
}

impl Iterate {
    pub fn zeros(problem: &Problem) -> Self {
        let (n, nu) = problem.weight_dims();
        Self {
            check: vec![DMatrix::zeros(n, nu); problem.agent_count()],
            hat: vec![DMatrix::zeros(n, nu); problem.agent_count()],
            lambda: vec![DMatrix::zeros(n, nu); problem.graph().edge_count()],
            k: 0,
        }
    }

    /// `U(0,1)` weights, zero multipliers.
    pub fn random(problem: &Problem, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nu) = problem.weight_dims();
        let mut it = Self::zeros(problem);
        for w in it.check.iter_mut().chain(it.hat.iter_mut()) {
            *w = DMatrix::from_fn(n, nu, |_, _| rng.gen::<f64>());
        }
        it
    }

    fn check_shape(&self, problem: &Problem) -> Result<()> {
        let dims = problem.weight_dims();
        let ok = self.check.len() == problem.agent_count()
            && self.hat.len() == problem.agent_count()
            && self.lambda.len() == problem.graph().edge_count()
            && self
                .check
                .iter()
                .chain(&self.hat)
                .chain(&self.lambda)
                .all(|b| b.shape() == dims);
        if ok {
            Ok(())
        } else {
            dim("iterate shape does not match the problem")
        }
    }

    pub fn is_finite(&self) -> bool {
        self.check
            .iter()
            .chain(&self.hat)
            .chain(&self.lambda)
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Frobenius distance over all blocks.
    pub fn distance(&self, other: &Iterate) -> f64 {
        let sq = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
        };
        (sq(&self.check, &other.check) + sq(&self.hat, &other.hat) + sq(&self.lambda, &other.lambda)).sqrt()
    }
}

struct AgentFactors {
    quadratic: QuadraticForm,
    check_system: Cholesky<f64, Dyn>,
    hat_system: Cholesky<f64, Dyn>,
}

/// ADMM engine with per-agent factorisations cached for a fixed parameter set.
pub struct Admm<'a> {
    problem: &'a Problem,
    params: SolverParams,
    factors: Vec<AgentFactors>,
}

impl<'a> Admm<'a> {
    pub fn new(problem: &'a Problem, params: SolverParams) -> Result<Self> {
        params.check(problem.agent_count())?;
        let reg = problem.reg();
        let factors = problem
            .objectives()
            .iter()
            .enumerate()
            .map(|(i, obj)| {
                let quadratic = obj.combined_quadratic();
                let d = problem.graph().degree(i) as f64;
                let shift_check = reg.mu1 + params.rho * d + params.tau[i];
                let shift_hat = reg.mu2 + params.zeta[i];
                let check_system = shifted_cholesky(&quadratic.hessian, shift_check)?;
                let hat_system = shifted_cholesky(&quadratic.hessian, shift_hat)?;
                Ok(AgentFactors {
                    quadratic,
                    check_system,
                    hat_system,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            params,
            factors,
        })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    /// Right-hand side of the `w_check` system for agent `i`, given the
    /// agent's share of `A^T lambda^k`.
    fn check_rhs(&self, i: usize, it: &Iterate, adjoint_i: &DMatrix<f64>) -> DMatrix<f64> {
        let q = &self.factors[i].quadratic;
        let mut rhs = &q.linear - &q.hessian * &it.hat[i] - adjoint_i + &it.check[i] * self.params.tau[i];
        for &j in self.problem.graph().neighbors(i) {
            rhs += &it.check[j] * self.params.rho;
        }
        rhs
    }

    /// Exact minimiser of the `w_check` subproblem of agent `i`.
    pub fn update_w_check(&self, i: usize, it: &Iterate) -> Result<DMatrix<f64>> {
        it.check_shape(self.problem)?;
        let adjoint = self.problem.constraint().adjoint_apply(&it.lambda)?;
        Ok(self.factors[i].check_system.solve(&self.check_rhs(i, it, &adjoint[i])))
    }

    /// Dual step `lambda_e += gamma rho (w_check_i - w_check_j)` using the
    /// already advanced `w_check`.
    pub fn update_lambda(&self, lambda: &[DMatrix<f64>], new_check: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let residuals = self.problem.constraint().apply(new_check)?;
        let step = self.params.gamma * self.params.rho;
        Ok(lambda.iter().zip(residuals).map(|(l, r)| l + r * step).collect())
    }

    /// Exact minimiser of the `w_hat` subproblem of agent `i`, given its
    /// advanced `w_check`.
    pub fn update_w_hat(&self, i: usize, it: &Iterate, new_check_i: &DMatrix<f64>) -> DMatrix<f64> {
        let q = &self.factors[i].quadratic;
        let rhs = &q.linear - &q.hessian * new_check_i + &it.hat[i] * self.params.zeta[i];
        self.factors[i].hat_system.solve(&rhs)
    }

    /// One full iteration `u^k -> u^{k+1}`.
    pub fn step(&self, it: &Iterate) -> Result<Iterate> {
        it.check_shape(self.problem)?;
        let adjoint = self.problem.constraint().adjoint_apply(&it.lambda)?;
        let check: Vec<DMatrix<f64>> = (0..self.problem.agent_count())
            .into_par_iter()
            .map(|i| self.factors[i].check_system.solve(&self.check_rhs(i, it, &adjoint[i])))
            .collect();
        let lambda = self.update_lambda(&it.lambda, &check)?;
        let hat: Vec<DMatrix<f64>> = (0..self.problem.agent_count())
            .into_par_iter()
            .map(|i| self.update_w_hat(i, it, &check[i]))
            .collect();
        Ok(Iterate {
            check,
            hat,
            lambda,
            k: it.k + 1,
        })
    }
}

fn shifted_cholesky(hessian: &DMatrix<f64>, shift: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut m = hessian.clone();
    for k in 0..m.nrows() {
        m[(k, k)] += shift;
    }
    Cholesky::new(m).ok_or_else(|| Error::Parameter("subproblem system is not positive definite".into()))
}

/// Reference point `u* = (W_check*, W_hat*, lambda*)` with its objective.
/// `lambda*` is the minimum-norm multiplier, which lies in the range of `A`
/// like every iterate started from `lambda^0 = 0`.
#[derive(Debug, Clone)]
pub struct ReferencePoint {
    pub check: Vec<DMatrix<f64>>,
    pub hat: Vec<DMatrix<f64>>,
    pub lambda: Vec<DMatrix<f64>>,
    pub objective: f64,
}

impl ReferencePoint {
    pub fn from_solution(problem: &Problem, solution: &ReferenceSolution) -> Result<Self> {
        let n_agents = problem.agent_count();
        if solution.check.len() != n_agents || solution.hat.len() != n_agents {
            return dim("reference solution does not match the problem size");
        }
        let (n, nu) = problem.weight_dims();
        let width = n * nu;
        // Stationarity in w_check: grad_i + (A^T lambda)_i = 0. Writing
        // lambda = A psi turns this into L psi = -grad.
        let mut rhs = DMatrix::zeros(n_agents, width);
        for (i, obj) in problem.objectives().iter().enumerate() {
            let (gc, _) = obj.gradient(&solution.check[i], &solution.hat[i]);
            let g = gc + &solution.check[i] * problem.reg().mu1;
            for (k, v) in g.iter().enumerate() {
                rhs[(i, k)] = -v;
            }
        }
        let mut lap = DMatrix::from_element(n_agents, n_agents, 1.0 / n_agents as f64);
        for i in 0..n_agents {
            lap[(i, i)] += problem.graph().degree(i) as f64;
        }
        for &(i, j) in problem.graph().edges() {
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
        }
        let psi = Cholesky::new(lap)
            .ok_or_else(|| Error::Topology("Laplacian system is singular".into()))?
            .solve(&rhs);
        let lambda = problem
            .graph()
            .edges()
            .iter()
            .map(|&(i, j)| {
                let row: Vec<f64> = (0..width).map(|k| psi[(i, k)] - psi[(j, k)]).collect();
                DMatrix::from_column_slice(n, nu, &row)
            })
            .collect();
        Ok(Self {
            check: solution.check.clone(),
            hat: solution.hat.clone(),
            lambda,
            objective: problem.objective(&solution.check, &solution.hat),
        })
    }

    pub fn as_iterate(&self) -> Iterate {
        Iterate {
            check: self.check.clone(),
            hat: self.hat.clone(),
            lambda: self.lambda.clone(),
            k: 0,
        }
    }
}

/// One row of convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub k: usize,
    /// `||u^k - u*||_G^2`.
    pub gnorm_error: f64,
    /// `F(Z_bar^k) - F(Z*)`; absent at `k = 0`.
    pub bound_lhs: Option<f64>,
    /// `(1/2k)(||W_check^0 - W_check*||^2_{G1_dagger} + ||W_hat^0 - W_hat*||^2_{G2})`.
    pub bound_rhs: Option<f64>,
    pub e_check: f64,
    pub e_hat: f64,
}

/// Incremental diagnostics over an iterate sequence starting at `u^0`.
pub struct Diagnostics<'a> {
    problem: &'a Problem,
    reference: &'a ReferencePoint,
    g1: Vec<f64>,
    g2: Vec<f64>,
    lambda_weight: f64,
    rho: f64,
    rhs_numerator: Option<f64>,
    sum_check: Vec<DMatrix<f64>>,
    sum_hat: Vec<DMatrix<f64>>,
    averaged: usize,
}

impl<'a> Diagnostics<'a> {
    pub fn new(problem: &'a Problem, reference: &'a ReferencePoint, params: &SolverParams) -> Self {
        let (n, nu) = problem.weight_dims();
        let agents = problem.agent_count();
        let g1 = (0..agents)
            .map(|i| params.rho * problem.graph().degree(i) as f64 + params.tau[i])
            .collect();
        Self {
            problem,
            reference,
            g1,
            g2: params.zeta.clone(),
            lambda_weight: 1.0 / (params.gamma * params.rho),
            rho: params.rho,
            rhs_numerator: None,
            sum_check: vec![DMatrix::zeros(n, nu); agents],
            sum_hat: vec![DMatrix::zeros(n, nu); agents],
            averaged: 0,
        }
    }

    /// `||u - u*||_G^2`.
    pub fn gnorm_error(&self, it: &Iterate) -> f64 {
        let r = self.reference;
        let check: f64 = it
            .check
            .iter()
            .zip(&r.check)
            .zip(&self.g1)
            .map(|((a, b), w)| w * (a - b).norm_squared())
            .sum();
        let hat: f64 = it
            .hat
            .iter()
            .zip(&r.hat)
            .zip(&self.g2)
            .map(|((a, b), w)| w * (a - b).norm_squared())
            .sum();
        let lambda: f64 = it.lambda.iter().zip(&r.lambda).map(|(a, b)| (a - b).norm_squared()).sum();
        check + hat + self.lambda_weight * lambda
    }

    /// `||W - W*||^2_{G1_dagger}`, with `rho A^T A` applied through the edge list.
    fn g1_dagger_norm(&self, check: &[DMatrix<f64>]) -> f64 {
        let diff: Vec<DMatrix<f64>> = check.iter().zip(&self.reference.check).map(|(a, b)| a - b).collect();
        let diag: f64 = diff.iter().zip(&self.g1).map(|(d, w)| w * d.norm_squared()).sum();
        let consensus: f64 = self
            .problem
            .graph()
            .edges()
            .iter()
            .map(|&(i, j)| (&diff[i] - &diff[j]).norm_squared())
            .sum();
        diag - self.rho * consensus
    }

    /// Accuracy `sqrt(||W - W*||^2 / (N n nu))` for both weight groups.
    pub fn accuracy(&self, it: &Iterate) -> (f64, f64) {
        let (n, nu) = self.problem.weight_dims();
        let denom = (self.problem.agent_count() * n * nu) as f64;
        let err = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| -> f64 {
            (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / denom).sqrt()
        };
        (err(&it.check, &self.reference.check), err(&it.hat, &self.reference.hat))
    }

    /// Records `u^k`; iterates must arrive in order starting with `u^0`.
    pub fn observe(&mut self, it: &Iterate) -> DiagnosticRow {
        let gnorm_error = self.gnorm_error(it);
        let (e_check, e_hat) = self.accuracy(it);
        if self.rhs_numerator.is_none() {
            let hat0: f64 = it
                .hat
                .iter()
                .zip(&self.reference.hat)
                .zip(&self.g2)
                .map(|((a, b), w)| w * (a - b).norm_squared())
                .sum();
            self.rhs_numerator = Some(self.g1_dagger_norm(&it.check) + hat0);
            return DiagnosticRow {
                k: it.k,
                gnorm_error,
                bound_lhs: None,
                bound_rhs: None,
                e_check,
                e_hat,
            };
        }
        for (s, w) in self.sum_check.iter_mut().zip(&it.check) {
            *s += w;
        }
        for (s, w) in self.sum_hat.iter_mut().zip(&it.hat) {
            *s += w;
        }
        self.averaged += 1;
        let inv = 1.0 / self.averaged as f64;
        let avg_check: Vec<_> = self.sum_check.iter().map(|s| s * inv).collect();
        let avg_hat: Vec<_> = self.sum_hat.iter().map(|s| s * inv).collect();
        let lhs = self.problem.objective(&avg_check, &avg_hat) - self.reference.objective;
        let rhs = self.rhs_numerator.unwrap_or(0.0) / (2.0 * self.averaged as f64);
        DiagnosticRow {
            k: it.k,
            gnorm_error,
            bound_lhs: Some(lhs),
            bound_rhs: Some(rhs),
            e_check,
            e_hat,
        }
    }
}

/// Diagnostics for a stored iterate sequence `u^0, u^1, ...`.
pub fn convergence_diagnostics(
    problem: &Problem,
    iterates: &[Iterate],
    reference: Option<&ReferencePoint>,
    params: &SolverParams,
) -> Vec<DiagnosticRow> {
    let Some(reference) = reference else {
        return Vec::new();
    };
    let mut diag = Diagnostics::new(problem, reference, params);
    iterates.iter().map(|it| diag.observe(it)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub objective: f64,
    pub consensus_residual: f64,
    pub gnorm_error: Option<f64>,
    pub bound_lhs: Option<f64>,
    pub bound_rhs: Option<f64>,
    pub e_check: Option<f64>,
    pub e_hat: Option<f64>,
}

/// Per-iteration record of a run, starting with the initial point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Iterations executed (rows minus the initial point).
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    /// CSV `k,objective,consensus_residual,gnorm_error,bound_lhs,bound_rhs`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "objective", "consensus_residual", "gnorm_error", "bound_lhs", "bound_rhs"])?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                format!("{:e}", r.objective),
                format!("{:e}", r.consensus_residual),
                opt(r.gnorm_error),
                opt(r.bound_lhs),
                opt(r.bound_rhs),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `k,e_check,e_hat` (rows without a reference are skipped).
    pub fn write_accuracy_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "e_check", "e_hat"])?;
        for r in &self.rows {
            if let (Some(a), Some(b)) = (r.e_check, r.e_hat) {
                w.write_record([r.k.to_string(), format!("{a:e}"), format!("{b:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Starting point of a run.
#[derive(Debug, Clone)]
pub enum Initialization {
    /// `U(0,1)` weights from the seed, `lambda^0 = 0`.
    Random(u64),
    Given(Iterate),
}

/// Runs the iteration until `max_iter`, or until both the consensus residual
/// drops below `consensus_tol` and the iterate change below `step_tol`.
pub fn run_admm(
    problem: &Problem,
    params: &SolverParams,
    init: Initialization,
    reference: Option<&ReferencePoint>,
) -> Result<(Iterate, RunTrace)> {
    if params.mode == ParamMode::PaperDefaults {
        let report = validate_params(
            params,
            problem.graph(),
            problem.lipschitz_bounds(),
            problem.reg().m.max(f64::MIN_POSITIVE),
            problem.vectorized_dim(),
        )?;
        if !report.ok {
            warn!(
                "proximal parameters violate {} sufficient convergence conditions",
                report.violations.len()
            );
        }
    }
    let admm = Admm::new(problem, params.clone())?;
    let mut it = match init {
        Initialization::Random(seed) => Iterate::random(problem, seed),
        Initialization::Given(it) => {
            it.check_shape(problem)?;
            it
        }
    };
    let mut diag = reference.map(|r| Diagnostics::new(problem, r, params));
    let mut trace = RunTrace::default();
    let record = |it: &Iterate, diag: &mut Option<Diagnostics>, trace: &mut RunTrace| -> Result<()> {
        let d = diag.as_mut().map(|d| d.observe(it));
        trace.rows.push(TraceRow {
            k: it.k,
            objective: problem.objective(&it.check, &it.hat),
            consensus_residual: problem.constraint().residual_norm(&it.check)?,
            gnorm_error: d.map(|d| d.gnorm_error),
            bound_lhs: d.and_then(|d| d.bound_lhs),
            bound_rhs: d.and_then(|d| d.bound_rhs),
            e_check: d.map(|d| d.e_check),
            e_hat: d.map(|d| d.e_hat),
        });
        Ok(())
    };
    record(&it, &mut diag, &mut trace)?;
    for _ in 0..params.max_iter {
        let next = admm.step(&it)?;
        if !next.is_finite() {
            return Err(Error::Divergence { iteration: next.k });
        }
        let change = next.distance(&it);
        it = next;
        record(&it, &mut diag, &mut trace)?;
        let residual = trace.rows.last().map_or(f64::INFINITY, |r| r.consensus_residual);
        if residual < params.consensus_tol && change < params.step_tol {
            break;
        }
    }
    Ok((it, trace))
}
