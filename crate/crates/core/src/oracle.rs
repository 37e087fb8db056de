//! Centralised reference solutions.
//!
//! On a connected graph the consensus-constrained problem is equivalent to
//! one shared basis `w0` plus per-agent specific weights:
//! `min sum_i f_i(w0, w_hat_i) + (mu1/2)||w0||^2 + (mu2/2)||w_hat_i||^2`.
//! Two independent solvers are provided: block alternating minimisation and
//! a direct solve of the full stationarity system.

use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim, Error, Result};
use crate::model::QuadraticForm;
use crate::solver::{Iterate, Problem};

/// Cap on `N * n` for the dense direct solve.
pub const KKT_SIZE_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Ao,
    DirectKkt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub method: OracleMethod,
    /// `w0` repeated for every agent.
    pub check: Vec<DMatrix<f64>>,
    pub hat: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Objective after each alternating sweep (empty for the direct solve).
    pub history: Vec<f64>,
}

impl ReferenceSolution {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.check[0]
    }
}

fn quadratics(problem: &Problem) -> Vec<QuadraticForm> {
    problem.objectives().iter().map(|o| o.combined_quadratic()).collect()
}

/// Stationarity residual of the shared-basis objective (Frobenius norm over
/// all blocks).
pub fn centralized_kkt_residual(problem: &Problem, basis: &DMatrix<f64>, hat: &[DMatrix<f64>]) -> f64 {
    let reg = problem.reg();
    let n_agents = problem.agent_count() as f64;
    let mut g0 = basis * (n_agents * reg.mu1);
    let mut total = 0.0;
    for (q, h) in quadratics(problem).iter().zip(hat) {
        let g = &q.hessian * (basis + h) - &q.linear;
        total += (&g + h * reg.mu2).norm_squared();
        g0 += g;
    }
    (total + g0.norm_squared()).sqrt()
}

fn finish(problem: &Problem, method: OracleMethod, basis: DMatrix<f64>, hat: Vec<DMatrix<f64>>, history: Vec<f64>) -> ReferenceSolution {
    let check = vec![basis.clone(); problem.agent_count()];
    let objective = problem.objective(&check, &hat);
    let kkt_residual = centralized_kkt_residual(problem, &basis, &hat);
    ReferenceSolution {
        method,
        check,
        hat,
        objective,
        kkt_residual,
        history,
    }
}

fn shifted(h: &DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    let mut m = h.clone();
    for k in 0..m.nrows() {
        m[(k, k)] += shift;
    }
    m
}

fn spd_solve(m: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch.solve(rhs));
    }
    m.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Oracle("centralised system is singular".into()))
}

/// Alternating exact minimisation: `w0` over all data, then every `w_hat_i`.
/// Stops once both the objective change and the largest weight change of a
/// sweep fall below `tol`.
pub fn solve_centralized_ao(problem: &Problem, tol: f64, max_sweeps: usize) -> Result<ReferenceSolution> {
    let reg = problem.reg();
    let (n, nu) = problem.weight_dims();
    let n_agents = problem.agent_count();
    let qs = quadratics(problem);

    let mut basis_matrix = DMatrix::zeros(n, n);
    for q in &qs {
        basis_matrix += &q.hessian;
    }
    let basis_system = shifted(&basis_matrix, n_agents as f64 * reg.mu1);
    let basis_chol = Cholesky::new(basis_system.clone());
    let hat_chols: Vec<_> = qs.iter().map(|q| Cholesky::new(shifted(&q.hessian, reg.mu2))).collect();

    let mut basis = DMatrix::zeros(n, nu);
    let mut hat = vec![DMatrix::zeros(n, nu); n_agents];
    let mut history = Vec::new();
    let mut previous = problem.objective(&vec![basis.clone(); n_agents], &hat);
    for _ in 0..max_sweeps {
        let mut rhs = DMatrix::zeros(n, nu);
        for (q, h) in qs.iter().zip(&hat) {
            rhs += &q.linear - &q.hessian * h;
        }
        let new_basis = match &basis_chol {
            Some(ch) => ch.solve(&rhs),
            None => spd_solve(basis_system.clone(), &rhs)?,
        };
        let mut step = (&new_basis - &basis).amax();
        basis = new_basis;
        for (i, q) in qs.iter().enumerate() {
            let rhs = &q.linear - &q.hessian * &basis;
            let new_hat = match &hat_chols[i] {
                Some(ch) => ch.solve(&rhs),
                None => spd_solve(shifted(&q.hessian, reg.mu2), &rhs)?,
            };
            step = step.max((&new_hat - &hat[i]).amax());
            hat[i] = new_hat;
        }
        let value = problem.objective(&vec![basis.clone(); n_agents], &hat);
        history.push(value);
        let change = (previous - value).abs();
        previous = value;
        if change < tol && step < tol {
            return Ok(finish(problem, OracleMethod::Ao, basis, hat, history));
        }
    }
    Err(Error::Oracle(format!(
        "alternating optimisation did not converge within {max_sweeps} sweeps"
    )))
}

/// Assembles and solves the full stationarity system in `(w0, w_hat_1..N)`.
pub fn solve_kkt_direct(problem: &Problem) -> Result<ReferenceSolution> {
    let reg = problem.reg();
    let (n, nu) = problem.weight_dims();
    let n_agents = problem.agent_count();
    if n_agents * n > KKT_SIZE_CAP {
        return Err(Error::Oracle(format!(
            "direct solve of size {} exceeds the cap {KKT_SIZE_CAP}",
            n_agents * n
        )));
    }
    let qs = quadratics(problem);
    let size = (n_agents + 1) * n;
    let mut system = DMatrix::zeros(size, size);
    let mut rhs = DMatrix::zeros(size, nu);
    for k in 0..n {
        system[(k, k)] += n_agents as f64 * reg.mu1;
    }
    for (i, q) in qs.iter().enumerate() {
        let off = (i + 1) * n;
        for r in 0..n {
            for c in 0..n {
                let v = q.hessian[(r, c)];
                system[(r, c)] += v;
                system[(r, off + c)] += v;
                system[(off + r, c)] += v;
                system[(off + r, off + c)] += v;
            }
            system[(off + r, off + r)] += reg.mu2;
            for c in 0..nu {
                rhs[(r, c)] += q.linear[(r, c)];
                rhs[(off + r, c)] += q.linear[(r, c)];
            }
        }
    }
    let sol = spd_solve(system, &rhs)?;
    let basis = sol.rows(0, n).into_owned();
    let hat = (0..n_agents).map(|i| sol.rows((i + 1) * n, n).into_owned()).collect();
    Ok(finish(problem, OracleMethod::DirectKkt, basis, hat, Vec::new()))
}

/// `(E_check, E_hat)` with `E = sqrt(||W - W*||^2 / (N n nu))`.
pub fn iterate_error(it: &Iterate, reference: &ReferenceSolution) -> Result<(f64, f64)> {
    if it.check.len() != reference.check.len() || it.hat.len() != reference.hat.len() {
        return dim("iterate and reference disagree on agent count");
    }
    let (n, nu) = reference.check.first().map(|b| b.shape()).unwrap_or((0, 0));
    let denom = (reference.check.len() * n * nu).max(1) as f64;
    let err = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in a.iter().zip(b) {
            if x.shape() != y.shape() {
                return dim("iterate and reference block shapes differ");
            }
            total += (x - y).norm_squared();
        }
        Ok((total / denom).sqrt())
    };
    Ok((err(&it.check, &reference.check)?, err(&it.hat, &reference.hat)?))
}

/// Content hash of everything a reference solution depends on.
pub fn problem_fingerprint(problem: &Problem, method: OracleMethod) -> String {
    let mut hasher = Sha256::new();
    let mut put = |v: f64| hasher.update(v.to_bits().to_le_bytes());
    let reg = problem.reg();
    for v in [reg.mu1, reg.mu2, reg.mu3, reg.mu12] {
        put(v);
    }
    for q in quadratics(problem) {
        q.hessian.iter().chain(q.linear.iter()).for_each(|v| put(*v));
        put(q.constant);
    }
    let mut tail = format!("{method:?}|{}|", problem.agent_count());
    for (i, j) in problem.graph().edges() {
        tail.push_str(&format!("{i}-{j};"));
    }
    hasher.update(tail.as_bytes());
    hex::encode(hasher.finalize())
}

/// On-disk cache of reference solutions keyed by [`problem_fingerprint`].
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn path_for(&self, problem: &Problem, method: OracleMethod) -> PathBuf {
        self.dir.join(format!("{}.json", problem_fingerprint(problem, method)))
    }

    pub fn get_or_solve<F>(&self, problem: &Problem, method: OracleMethod, solve: F) -> Result<ReferenceSolution>
    where
        F: FnOnce(&Problem) -> Result<ReferenceSolution>,
    {
        let path = self.path_for(problem, method);
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            return Ok(serde_json::from_str(&text)?);
        }
        let solution = solve(problem)?;
        std::fs::write(&path, serde_json::to_string(&solution)?)?;
        Ok(solution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{least_square_loss, make_synthetic_dataset, LocalObjective, RegularizationParams};
    use crate::topology::{random_connected_graph, AgentGraph};
    use approx::assert_relative_eq;

    fn problem(agents: usize, edges: usize, n: usize, nu: usize, seed: u64) -> Problem {
        let graph = if agents == 1 {
            AgentGraph::new(1, &[]).unwrap()
        } else {
            random_connected_graph(agents, edges, seed).unwrap()
        };
        let objectives = (0..agents)
            .map(|i| LocalObjective::plain(least_square_loss(&make_synthetic_dataset(n, nu, 10, seed * 100 + i as u64), None).unwrap()))
            .collect();
        Problem::new(graph, objectives, RegularizationParams::new(1.0, 1.0, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn single_agent_matches_ridge_closed_form() {
        let p = problem(1, 0, 4, 2, 3);
        let q = p.objectives()[0].combined_quadratic();
        // Stacked 2n system [[H + mu1, H], [H, H + mu2]] [w0; w_hat] = [R; R].
        let n = 4;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                for (a, b) in [(0, 0), (0, n), (n, 0), (n, n)] {
                    m[(a + r, b + c)] = q.hessian[(r, c)];
                }
            }
            m[(r, r)] += 1.0;
            m[(n + r, n + r)] += 1.0;
        }
        let mut rhs = DMatrix::zeros(2 * n, 2);
        rhs.rows_mut(0, n).copy_from(&q.linear);
        rhs.rows_mut(n, n).copy_from(&q.linear);
        let closed = m.lu().solve(&rhs).unwrap();
        let ao = solve_centralized_ao(&p, 1e-14, 10_000).unwrap();
        assert!((ao.basis() - closed.rows(0, n)).amax() < 1e-10);
        assert!((&ao.hat[0] - closed.rows(n, n)).amax() < 1e-10);
    }

    #[test]
    fn ao_objective_is_monotone() {
        let p = problem(6, 9, 5, 1, 8);
        let ao = solve_centralized_ao(&p, 1e-13, 10_000).unwrap();
        for w in ao.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn oracles_agree() {
        let p = problem(5, 7, 6, 2, 21);
        let ao = solve_centralized_ao(&p, 1e-13, 10_000).unwrap();
        let kkt = solve_kkt_direct(&p).unwrap();
        for (a, b) in ao.check.iter().chain(&ao.hat).zip(kkt.check.iter().chain(&kkt.hat)) {
            assert!((a - b).amax() < 1e-8);
        }
        assert_relative_eq!(ao.objective, kkt.objective, epsilon = 1e-10);
        assert!(kkt.kkt_residual < 1e-10);
        assert!(kkt.check.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_data_gives_zero_weights() {
        let graph = random_connected_graph(3, 2, 1).unwrap();
        let d = crate::model::AgentDataset::new(DMatrix::zeros(3, 4), DMatrix::zeros(1, 4), vec![0; 4]).unwrap();
        let objectives = (0..3).map(|_| LocalObjective::plain(least_square_loss(&d, None).unwrap())).collect();
        let p = Problem::new(graph, objectives, RegularizationParams::new(1.0, 1.0, 0.0, 0.0).unwrap()).unwrap();
        let kkt = solve_kkt_direct(&p).unwrap();
        assert!(kkt.check.iter().chain(&kkt.hat).all(|w| w.amax() == 0.0));
    }

    #[test]
    fn size_cap_enforced() {
        let graph = random_connected_graph(3, 2, 1).unwrap();
        let d = make_synthetic_dataset(700, 1, 2, 1);
        let objectives = (0..3).map(|_| LocalObjective::plain(least_square_loss(&d, None).unwrap())).collect();
        let p = Problem::new(graph, objectives, RegularizationParams::new(1.0, 1.0, 0.0, 0.0).unwrap()).unwrap();
        assert!(matches!(solve_kkt_direct(&p), Err(Error::Oracle(_))));
    }

    #[test]
    fn iterate_error_norm_algebra() {
        let p = problem(3, 3, 2, 1, 4);
        let kkt = solve_kkt_direct(&p).unwrap();
        let mut it = Iterate::zeros(&p);
        it.check = kkt.check.clone();
        it.hat = kkt.hat.clone();
        assert_eq!(iterate_error(&it, &kkt).unwrap(), (0.0, 0.0));
        it.check.iter_mut().for_each(|w| w.add_scalar_mut(-0.25));
        it.hat.iter_mut().for_each(|w| w.add_scalar_mut(0.5));
        let (ec, eh) = iterate_error(&it, &kkt).unwrap();
        assert_relative_eq!(ec, 0.25, epsilon = 1e-14);
        assert_relative_eq!(eh, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::new(dir.path()).unwrap();
        let p = problem(4, 4, 3, 1, 2);
        let first = cache.get_or_solve(&p, OracleMethod::DirectKkt, solve_kkt_direct).unwrap();
        assert!(cache.path_for(&p, OracleMethod::DirectKkt).exists());
        let second = cache
            .get_or_solve(&p, OracleMethod::DirectKkt, |_| Err(Error::Oracle("should hit the cache".into())))
            .unwrap();
        assert_eq!(first, second);
    }
}
