//! Mobility-aware reweighting: sample weights, intertask combiners, transfer
//! weights and the augmented local objective.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};
use crate::mobility::MobilityForecast;
use crate::model::{least_square_loss, lipschitz_constant, AgentDataset, ExtraQuadratic, LocalObjective, RegularizationParams};
use crate::solver::Problem;
use crate::topology::AgentGraph;

pub const DEFAULT_UPSILON: f64 = 1.0;

/// Per-sample weights: `local[i][l]` kept at agent `i`, `outbound[i][k][l]`
/// sent towards the `k`-th neighbor of `i` (neighbor order of the graph).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveWeights {
    pub local: Vec<Vec<f64>>,
    pub outbound: Vec<Vec<Vec<f64>>>,
}

impl AdaptiveWeights {
    /// Builds from outbound weights; `local = 1 - sum(outbound)`.
    pub fn from_outbound(outbound: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut local = Vec::with_capacity(outbound.len());
        for rows in &outbound {
            let b = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != b) {
                return dim("outbound weight rows differ in length");
            }
            let phi: Vec<f64> = (0..b).map(|l| 1.0 - rows.iter().map(|r| r[l]).sum::<f64>()).collect();
            if phi.iter().any(|p| !(*p > 0.0)) {
                return param("outbound weights must leave positive local weight");
            }
            local.push(phi);
        }
        Ok(Self { local, outbound })
    }

    /// All weight on the local agent.
    pub fn unit(graph: &AgentGraph, datasets: &[AgentDataset]) -> Self {
        Self {
            local: datasets.iter().map(|d| vec![1.0; d.len()]).collect(),
            outbound: datasets
                .iter()
                .enumerate()
                .map(|(i, d)| vec![vec![0.0; d.len()]; graph.degree(i)])
                .collect(),
        }
    }

    /// Outbound weights of agent `i` towards neighbor `j` (`None` if not adjacent).
    pub fn towards(&self, graph: &AgentGraph, i: usize, j: usize) -> Option<&[f64]> {
        let k = graph.neighbors(i).iter().position(|&v| v == j)?;
        Some(&self.outbound[i][k])
    }

    /// Largest deviation of `local + sum(outbound)` from 1.
    pub fn partition_error(&self) -> f64 {
        self.local
            .iter()
            .zip(&self.outbound)
            .flat_map(|(phi, rows)| {
                phi.iter()
                    .enumerate()
                    .map(move |(l, p)| (p + rows.iter().map(|r| r[l]).sum::<f64>() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Sample weights from forecast residence times: `phi_{i->j} = r_{m,i->j}/t_d`
/// and `phi_i = 1 - sum_j phi_{i->j}` for the sample's MT `m`. Samples whose
/// MT is currently elsewhere keep weight 1 locally.
pub fn compute_phi(forecast: &MobilityForecast, datasets: &[AgentDataset], graph: &AgentGraph, t_d: f64) -> Result<AdaptiveWeights> {
    if !(t_d > 0.0) {
        return param("horizon must be positive");
    }
    if datasets.len() != graph.agent_count() {
        return dim("one dataset per agent required");
    }
    let mut local = Vec::with_capacity(datasets.len());
    let mut outbound = Vec::with_capacity(datasets.len());
    for (i, d) in datasets.iter().enumerate() {
        let neighbors = graph.neighbors(i);
        let mut phi = vec![1.0; d.len()];
        let mut out = vec![vec![0.0; d.len()]; neighbors.len()];
        for (l, &m) in d.mt_of_sample().iter().enumerate() {
            let f = forecast
                .entries
                .get(m)
                .ok_or_else(|| Error::Data(format!("sample {l} at agent {i} refers to unknown MT {m}")))?;
            if f.state != i {
                continue;
            }
            let mut moved = 0.0;
            for (k, &j) in neighbors.iter().enumerate() {
                out[k][l] = f.residence_at(j) / t_d;
                moved += out[k][l];
            }
            phi[l] = 1.0 - moved;
        }
        local.push(phi);
        outbound.push(out);
    }
    Ok(AdaptiveWeights { local, outbound })
}

/// Intertask combiners `c[i][j]` (row = sender).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerMatrix {
    pub c: DMatrix<f64>,
    pub upsilon: f64,
}

impl CombinerMatrix {
    pub fn zeros(agents: usize, upsilon: f64) -> Self {
        Self {
            c: DMatrix::zeros(agents, agents),
            upsilon,
        }
    }

    /// Validates support and bounds against the graph.
    pub fn from_matrix(c: DMatrix<f64>, graph: &AgentGraph, upsilon: f64) -> Result<Self> {
        let n = graph.agent_count();
        if c.shape() != (n, n) {
            return dim(format!("combiner matrix must be {n}x{n}"));
        }
        for i in 0..n {
            for j in 0..n {
                let v = c[(i, j)];
                let cap = if graph.has_edge(i, j) { 1.0 / graph.degree(i) as f64 } else { 0.0 };
                if !(v >= 0.0 && v <= cap) {
                    return param(format!("combiner c[{i}][{j}] = {v} outside [0, {cap}]"));
                }
            }
        }
        Ok(Self { c, upsilon })
    }

    /// `sum_j c[j][i]`: total inbound coupling of agent `i`.
    pub fn inbound_sum(&self, i: usize) -> f64 {
        self.c.column(i).sum()
    }
}

/// `c_{i,j} = (1/d_i)(1 - exp(-upsilon sum_{m at i} r_{m,i->j}))`.
pub fn compute_combiners(forecast: &MobilityForecast, graph: &AgentGraph, upsilon: f64) -> Result<CombinerMatrix> {
    if !(upsilon > 0.0) {
        return param("upsilon must be positive");
    }
    let n = graph.agent_count();
    let mut flow: DMatrix<f64> = DMatrix::zeros(n, n);
    for f in &forecast.entries {
        if f.state >= n {
            return Err(Error::Data(format!("forecast state {} outside the graph", f.state)));
        }
        for (&j, r) in &f.residence {
            flow[(f.state, j)] += r;
        }
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let d = graph.degree(i) as f64;
        for &j in graph.neighbors(i) {
            c[(i, j)] = (1.0 - (-upsilon * flow[(i, j)]).exp()) / d;
        }
    }
    Ok(CombinerMatrix { c, upsilon })
}

/// Ridge fit `argmin (1/b) sum_l phi_l 0.5 ||w^T x_l - y_l||^2 + (mu12/2)||w||^2`.
pub fn solve_transfer_weights(dataset: &AgentDataset, phi: &[f64], mu12: f64) -> Result<DMatrix<f64>> {
    if !(mu12 > 0.0) {
        return param("mu12 must be positive");
    }
    let q = least_square_loss(dataset, Some(phi))?.quadratic().clone();
    let mut system = q.hessian;
    for k in 0..system.nrows() {
        system[(k, k)] += mu12;
    }
    Cholesky::new(system)
        .map(|ch| ch.solve(&q.linear))
        .ok_or_else(|| Error::Parameter("transfer system is not positive definite".into()))
}

/// Transfer weights keyed by directed edge `(from, to)`.
pub type TransferWeights = BTreeMap<(usize, usize), DMatrix<f64>>;

pub fn compute_transfer_weights(
    datasets: &[AgentDataset],
    weights: &AdaptiveWeights,
    graph: &AgentGraph,
    mu12: f64,
) -> Result<TransferWeights> {
    let jobs: Vec<(usize, usize, usize)> = (0..graph.agent_count())
        .flat_map(|i| graph.neighbors(i).iter().enumerate().map(move |(k, &j)| (i, k, j)))
        .collect();
    let solved: Vec<Result<((usize, usize), DMatrix<f64>)>> = jobs
        .par_iter()
        .map(|&(i, k, j)| Ok(((i, j), solve_transfer_weights(&datasets[i], &weights.outbound[i][k], mu12)?)))
        .collect();
    solved.into_iter().collect()
}

/// Printed bound `sqrt(2 C^2 + 4 mu3^2 (sum c)^2)` on the augmented gradient's
/// Lipschitz constant.
pub fn augmented_lipschitz_bound(base: f64, mu3: f64, inbound: f64) -> f64 {
    (2.0 * base * base + 4.0 * mu3 * mu3 * inbound * inbound).sqrt()
}

/// Augmented local objective of agent `i` and its printed Lipschitz bound.
///
/// The penalty `(mu3/2) sum_j c_{j,i} ||w_loc_{j,i} - (w_check + w_hat)||^2`
/// becomes one isotropic quadratic with coefficient `mu3 sum_j c_{j,i}` around
/// the combiner-weighted mean of the received transfer weights.
pub fn augmented_loss(
    dataset: &AgentDataset,
    phi: &[f64],
    combiners: &CombinerMatrix,
    transfer: &TransferWeights,
    graph: &AgentGraph,
    agent: usize,
    mu3: f64,
) -> Result<(LocalObjective, f64)> {
    let loss = least_square_loss(dataset, Some(phi))?;
    let base = lipschitz_constant(&loss);
    let (n, nu) = (dataset.feature_dim(), dataset.target_dim());
    let mut weight = 0.0;
    let mut weighted = DMatrix::zeros(n, nu);
    let mut sq = 0.0;
    for &j in graph.neighbors(agent) {
        let c = combiners.c[(j, agent)];
        if c == 0.0 {
            continue;
        }
        let w = transfer
            .get(&(j, agent))
            .ok_or_else(|| Error::Protocol(format!("no transfer weights from agent {j} to agent {agent}")))?;
        if w.shape() != (n, nu) {
            return dim("transfer weights do not match the weight shape");
        }
        weight += c;
        weighted += w * c;
        sq += c * w.norm_squared();
    }
    let bound = augmented_lipschitz_bound(base, mu3, weight);
    if weight == 0.0 || mu3 == 0.0 {
        return Ok((LocalObjective::plain(loss), bound));
    }
    let anchor = weighted / weight;
    let offset = 0.5 * mu3 * (sq - weight * anchor.norm_squared());
    let extra = ExtraQuadratic {
        coefficient: mu3 * weight,
        anchor,
        offset,
    };
    Ok((
        LocalObjective {
            loss,
            extra: Some(extra),
        },
        bound,
    ))
}

/// Everything the mobility-aware objective needs beyond the raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSetup {
    pub weights: AdaptiveWeights,
    pub combiners: CombinerMatrix,
    pub transfer: Vec<((usize, usize), DMatrix<f64>)>,
}

impl AdaptiveSetup {
    pub fn new(
        datasets: &[AgentDataset],
        graph: &AgentGraph,
        weights: AdaptiveWeights,
        combiners: CombinerMatrix,
        mu12: f64,
    ) -> Result<Self> {
        let transfer = compute_transfer_weights(datasets, &weights, graph, mu12)?.into_iter().collect();
        Ok(Self {
            weights,
            combiners,
            transfer,
        })
    }

    /// From a mobility forecast.
    pub fn from_forecast(
        forecast: &MobilityForecast,
        datasets: &[AgentDataset],
        graph: &AgentGraph,
        t_d: f64,
        upsilon: f64,
        mu12: f64,
    ) -> Result<Self> {
        let weights = compute_phi(forecast, datasets, graph, t_d)?;
        let combiners = compute_combiners(forecast, graph, upsilon)?;
        Self::new(datasets, graph, weights, combiners, mu12)
    }

    /// Random design: `phi_{i->j,l} ~ U(0, 1/N)` and `c_{i,j} ~ U(0, 1/N)`.
    pub fn random(datasets: &[AgentDataset], graph: &AgentGraph, mu12: f64, seed: u64) -> Result<Self> {
        let n = graph.agent_count();
        let cap = 1.0 / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outbound = datasets
            .iter()
            .enumerate()
            .map(|(i, d)| {
                (0..graph.degree(i))
                    .map(|_| (0..d.len()).map(|_| rng.gen_range(0.0..cap)).collect())
                    .collect()
            })
            .collect();
        let weights = AdaptiveWeights::from_outbound(outbound)?;
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in graph.neighbors(i) {
                c[(i, j)] = rng.gen_range(0.0..cap);
            }
        }
        let combiners = CombinerMatrix::from_matrix(c, graph, DEFAULT_UPSILON)?;
        Self::new(datasets, graph, weights, combiners, mu12)
    }

    pub fn transfer_map(&self) -> TransferWeights {
        self.transfer.iter().cloned().collect()
    }

    /// Augmented objectives and printed Lipschitz bounds for every agent.
    pub fn objectives(&self, datasets: &[AgentDataset], graph: &AgentGraph, mu3: f64) -> Result<Vec<(LocalObjective, f64)>> {
        let transfer = self.transfer_map();
        (0..graph.agent_count())
            .into_par_iter()
            .map(|i| {
                augmented_loss(
                    &datasets[i],
                    &self.weights.local[i],
                    &self.combiners,
                    &transfer,
                    graph,
                    i,
                    mu3,
                )
            })
            .collect()
    }

    /// Mobility-aware problem; each agent's Lipschitz bound is the printed
    /// constant, raised to the exact one where the printed value is smaller.
    pub fn problem(&self, datasets: &[AgentDataset], graph: &AgentGraph, reg: RegularizationParams) -> Result<Problem> {
        let pairs = self.objectives(datasets, graph, reg.mu3)?;
        let bounds: Vec<f64> = pairs.iter().map(|(_, b)| *b).collect();
        let objectives = pairs.into_iter().map(|(o, _)| o).collect();
        Problem::new(graph.clone(), objectives, reg)?.with_lipschitz_bounds(&bounds)
    }

    /// `{phi, combiners, upsilon, transfer_norms}`.
    pub fn to_json(&self) -> Result<String> {
        let n = self.combiners.c.nrows();
        let combiners: Vec<Vec<f64>> = (0..n).map(|i| self.combiners.c.row(i).iter().copied().collect()).collect();
        let transfer_norms: Vec<serde_json::Value> = self
            .transfer
            .iter()
            .map(|((i, j), w)| serde_json::json!({"from": i, "to": j, "norm": w.norm()}))
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "phi": {"local": self.weights.local, "outbound": self.weights.outbound},
            "combiners": combiners,
            "upsilon": self.combiners.upsilon,
            "transfer_norms": transfer_norms,
        }))?)
    }
}
