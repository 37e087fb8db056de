//! Caching evaluation on synthetic mobility: Zipf preferences, request
//! simulation, preference prediction, MPC/RC placement and hit ratios.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveSetup;
use crate::error::{param, Result};
use crate::mobility::{
    estimate_model, forecast, generate_traces, random_ground_truth, state_at, untimed, MobilityState, TimedSojourn,
};
use crate::model::{encode_request_sample, AgentDataset, LocalObjective, RegularizationParams};
use crate::solver::{run_admm, Initialization, Iterate, ParamMode, Problem, SolverParams};
use crate::topology::{grid_graph, AgentGraph};

/// Zipf-like preference of one MT group over `F` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    pub iota: f64,
    /// `permutation[rank - 1]` is the file holding that popularity rank.
    pub permutation: Vec<usize>,
    /// Probability per file index.
    pub probs: Vec<f64>,
}

/// File `permutation[f - 1]` gets probability `f^-iota / sum_l l^-iota`.
pub fn zipf_preference(files: usize, iota: f64, seed: u64) -> Result<PreferenceProfile> {
    if files == 0 {
        return param("at least one file is required");
    }
    if !(iota >= 0.0 && iota.is_finite()) {
        return param(format!("Zipf shape must be nonnegative, got {iota}"));
    }
    let mut permutation: Vec<usize> = (0..files).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let norm: f64 = (1..=files).map(|l| (l as f64).powf(-iota)).sum();
    let mut probs = vec![0.0; files];
    for (rank, &file) in permutation.iter().enumerate() {
        probs[file] = ((rank + 1) as f64).powf(-iota) / norm;
    }
    Ok(PreferenceProfile {
        iota,
        permutation,
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub time: f64,
    pub mt: usize,
    pub agent: usize,
    pub file: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub start: f64,
    pub end: f64,
    pub requests: Vec<Request>,
}

impl RequestLog {
    pub fn at_agent(&self, agent: usize) -> impl Iterator<Item = &Request> {
        self.requests.iter().filter(move |r| r.agent == agent)
    }
}

/// Every MT requests at rate `rate` per minute during `[start, end)`: evenly
/// spaced from `start`, or with exponential gaps when `poisson` is set. The
/// file comes from the MT's group profile; the request is served by the
/// agent the MT occupies at that minute.
pub fn simulate_requests(
    traces: &[Vec<TimedSojourn>],
    groups: &[usize],
    profiles: &[PreferenceProfile],
    rate: f64,
    window: (f64, f64),
    poisson: bool,
    seed: u64,
) -> Result<RequestLog> {
    if !(rate > 0.0) {
        return param("request rate must be positive");
    }
    if groups.len() != traces.len() || groups.iter().any(|&g| g >= profiles.len()) {
        return param("every MT needs a valid group");
    }
    let samplers = profiles
        .iter()
        .map(|p| WeightedIndex::new(&p.probs).map_err(|e| crate::Error::Parameter(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut requests = Vec::new();
    for (m, trace) in traces.iter().enumerate() {
        let mut k = 0usize;
        let mut t = window.0;
        loop {
            if poisson {
                t += -(1.0 - rng.gen::<f64>()).ln() / rate;
            } else {
                t = window.0 + k as f64 / rate;
                k += 1;
            }
            if t >= window.1 {
                break;
            }
            let Some(state) = state_at(trace, t.floor() as usize) else {
                break;
            };
            requests.push(Request {
                time: t,
                mt: m,
                agent: state.agent,
                file: samplers[groups[m]].sample(&mut rng),
            });
        }
    }
    Ok(RequestLog {
        start: window.0,
        end: window.1,
        requests,
    })
}

/// Empirical request frequencies at `agent`; uniform and flagged (`true`)
/// when the agent served nothing.
pub fn observed_preference(log: &RequestLog, agent: usize, files: usize) -> (Vec<f64>, bool) {
    let mut counts = vec![0.0; files];
    let mut total = 0.0;
    for r in log.at_agent(agent) {
        counts[r.file] += 1.0;
        total += 1.0;
    }
    if total == 0.0 {
        return (vec![1.0 / files as f64; files], true);
    }
    (counts.into_iter().map(|c| c / total).collect(), false)
}

fn clamp_normalize(scores: DVector<f64>) -> Vec<f64> {
    let clamped: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        clamped.into_iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / clamped.len() as f64; clamped.len()]
    }
}

/// `(p_hat, p_tilde)` from the inputs of the MTs at an agent, or `None` when
/// there are none. `p_tilde` uses the basis weights only.
pub fn predicted_preference(check: &DMatrix<f64>, hat: &DMatrix<f64>, inputs: &[DVector<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
    if inputs.is_empty() {
        return None;
    }
    let x: DVector<f64> = inputs.iter().fold(DVector::zeros(check.nrows()), |acc, v| acc + v);
    let full = (check + hat).transpose() * &x;
    let common = check.transpose() * &x;
    Some((clamp_normalize(full), clamp_normalize(common)))
}

/// Mean L1 distance over agents with both a prediction and observations.
pub fn prediction_error(predicted: &[Option<Vec<f64>>], observed: &[(Vec<f64>, bool)]) -> f64 {
    let errors: Vec<f64> = predicted
        .iter()
        .zip(observed)
        .filter_map(|(p, (o, flagged))| {
            let p = p.as_ref()?;
            if *flagged {
                return None;
            }
            Some(p.iter().zip(o).map(|(a, b)| (a - b).abs()).sum::<f64>())
        })
        .collect();
    if errors.is_empty() {
        0.0
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePolicy {
    Mpc,
    Rc,
}

impl std::fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CachePolicy::Mpc => "mpc",
            CachePolicy::Rc => "rc",
        })
    }
}

/// Cached file indices per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlacement {
    pub caches: Vec<Vec<usize>>,
}

/// Top-`theta` files by preference, ties to the lower index.
pub fn most_popular(preference: &[f64], theta: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preference.len()).collect();
    order.sort_by(|&a, &b| preference[b].total_cmp(&preference[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = order.into_iter().take(theta).collect();
    top.sort_unstable();
    top
}

pub fn place_mpc(preferences: &[Vec<f64>], theta: usize) -> CachePlacement {
    CachePlacement {
        caches: preferences.iter().map(|p| most_popular(p, theta)).collect(),
    }
}

/// `theta` distinct uniformly random files per agent.
pub fn place_random(agents: usize, files: usize, theta: usize, seed: u64) -> CachePlacement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CachePlacement {
        caches: (0..agents)
            .map(|_| {
                let mut c = rand::seq::index::sample(&mut rng, files, theta.min(files)).into_vec();
                c.sort_unstable();
                c
            })
            .collect(),
    }
}

/// Per-agent hit ratios (`None` without requests) and their mean.
pub fn hit_ratio(placement: &CachePlacement, log: &RequestLog) -> (Vec<Option<f64>>, f64) {
    let per_agent: Vec<Option<f64>> = placement
        .caches
        .iter()
        .enumerate()
        .map(|(i, cache)| {
            let (mut hits, mut total) = (0usize, 0usize);
            for r in log.at_agent(i) {
                total += 1;
                hits += usize::from(cache.binary_search(&r.file).is_ok());
            }
            (total > 0).then(|| hits as f64 / total as f64)
        })
        .collect();
    let served: Vec<f64> = per_agent.iter().flatten().copied().collect();
    let mean = if served.is_empty() {
        0.0
    } else {
        served.iter().sum::<f64>() / served.len() as f64
    };
    (per_agent, mean)
}

/// Parameters of one caching experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachingParams {
    pub s: usize,
    pub groups: usize,
    pub files: usize,
    pub mts: usize,
    pub iota: f64,
    pub t_d: f64,
    pub request_rate: f64,
    pub poisson: bool,
    pub t_max: usize,
    /// Minutes of simulated history used to estimate each mobility model.
    pub train_horizon: usize,
    /// Minutes simulated before the history window opens.
    pub burn_in: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu12: f64,
    pub rho: f64,
    pub gamma: f64,
    pub tau: f64,
    pub zeta: f64,
    pub upsilon: f64,
    pub iterations: usize,
    pub normalized_t1: bool,
    pub thetas: Vec<usize>,
}

impl Default for CachingParams {
    fn default() -> Self {
        Self {
            s: 3,
            groups: 2,
            files: 20,
            mts: 20,
            iota: 0.9,
            t_d: 30.0,
            request_rate: 2.0,
            poisson: false,
            t_max: crate::mobility::DEFAULT_T_MAX,
            train_horizon: 20_000,
            burn_in: 240,
            mu1: 0.1,
            mu2: 0.1,
            mu3: 1.0,
            mu12: 0.01,
            rho: 1.0,
            gamma: 1.0,
            // tau = 1 makes the Jacobi step unstable on grid graphs when the
            // local data curvature is small; 2 is the smallest stable integer.
            tau: 2.0,
            zeta: 1.0,
            upsilon: crate::adaptive::DEFAULT_UPSILON,
            iterations: 300,
            normalized_t1: false,
            thetas: vec![2, 4, 6, 8, 10, 12],
        }
    }
}

impl CachingParams {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.groups == 0 || self.files == 0 || self.mts == 0 {
            return param("grid size, groups, files and MTs must be positive");
        }
        if !(self.t_d > 0.0) || self.t_d.fract() != 0.0 {
            return param("t_d must be a positive whole number of minutes");
        }
        if self.thetas.iter().any(|&t| t > self.files) {
            return param("cache capacity cannot exceed the number of files");
        }
        RegularizationParams::new(self.mu1, self.mu2, self.mu3, self.mu12)?;
        Ok(())
    }
}

/// One learned model's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub p_hat: Vec<Option<Vec<f64>>>,
    pub p_tilde: Vec<Option<Vec<f64>>>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub theta: usize,
    pub policy: CachePolicy,
    /// `alg1`, `alg2` or `none`.
    pub source: String,
    pub hit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub observed: Vec<(Vec<f64>, bool)>,
    pub alg1: PredictionSet,
    pub alg2: PredictionSet,
    pub hits: Vec<HitRecord>,
}

impl SeedOutcome {
    pub fn hit(&self, theta: usize, policy: CachePolicy, source: &str) -> Option<f64> {
        self.hits
            .iter()
            .find(|h| h.theta == theta && h.policy == policy && h.source == source)
            .map(|h| h.hit_ratio)
    }
}

/// Inputs shared by both algorithms for one seed.
pub struct Scenario {
    pub graph: AgentGraph,
    pub datasets: Vec<AgentDataset>,
    pub groups: Vec<usize>,
    pub states: Vec<MobilityState>,
    pub history: RequestLog,
    pub evaluation: RequestLog,
    pub forecast: crate::mobility::MobilityForecast,
    pub init_seed: u64,
    pub rc_seed: u64,
}

/// Simulates mobility and requests for one seed and builds the history datasets.
pub fn build_scenario(params: &CachingParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let graph = grid_graph(params.s)?;
    let n_agents = graph.agent_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = || rng.gen::<u64>();
    let (truth_seed, group_seed, profile_seed, train_seed, trace_seed) = (next(), next(), next(), next(), next());
    let (history_seed, eval_seed, init_seed, rc_seed) = (next(), next(), next(), next());

    let truth = random_ground_truth(&graph, params.mts, params.t_max, truth_seed)?;
    let mut grng = ChaCha8Rng::seed_from_u64(group_seed);
    let groups: Vec<usize> = (0..params.mts).map(|_| grng.gen_range(0..params.groups)).collect();
    let starts: Vec<usize> = (0..params.mts).map(|_| grng.gen_range(0..n_agents)).collect();
    let profiles = (0..params.groups)
        .map(|g| zipf_preference(params.files, params.iota, profile_seed.wrapping_add(g as u64)))
        .collect::<Result<Vec<_>>>()?;

    let training = generate_traces(&truth, &starts, params.train_horizon, train_seed)?;
    let sequences: Vec<_> = training.iter().map(|t| untimed(t)).collect();
    let model = estimate_model(&sequences, &graph, params.t_max)?;

    let t_d = params.t_d as usize;
    let t0 = params.burn_in + t_d;
    let traces = generate_traces(&truth, &starts, t0 + t_d, trace_seed)?;
    let history = simulate_requests(
        &traces,
        &groups,
        &profiles,
        params.request_rate,
        ((t0 - t_d) as f64, t0 as f64),
        params.poisson,
        history_seed,
    )?;
    let evaluation = simulate_requests(
        &traces,
        &groups,
        &profiles,
        params.request_rate,
        (t0 as f64, (t0 + t_d) as f64),
        params.poisson,
        eval_seed,
    )?;

    let mut samples: Vec<Vec<(DVector<f64>, DVector<f64>, usize)>> = vec![Vec::new(); n_agents];
    for r in &history.requests {
        let (x, y) = encode_request_sample(groups[r.mt] + 1, params.groups, r.file + 1, params.files)?;
        samples[r.agent].push((x, y, r.mt));
    }
    let datasets = samples
        .iter()
        .map(|s| AgentDataset::from_samples(params.groups, params.files, s.iter().map(|(x, y, m)| (x, y, *m))))
        .collect::<Result<Vec<_>>>()?;

    let states = traces
        .iter()
        .map(|t| state_at(t, t0).ok_or_else(|| crate::Error::Data("trace ends before the forecast time".into())))
        .collect::<Result<Vec<_>>>()?;
    let forecast = forecast(&model, &states, &graph, params.t_d, params.normalized_t1)?;
    Ok(Scenario {
        graph,
        datasets,
        groups,
        states,
        history,
        evaluation,
        forecast,
        init_seed,
        rc_seed,
    })
}

fn solve(problem: &Problem, params: &CachingParams, init_seed: u64) -> Result<Iterate> {
    let mut solver = SolverParams::uniform(
        problem.agent_count(),
        params.rho,
        params.gamma,
        params.tau,
        params.zeta,
        params.iterations,
    );
    solver.mode = ParamMode::PaperDefaults;
    Ok(run_admm(problem, &solver, Initialization::Random(init_seed), None)?.0)
}

fn predictions(scenario: &Scenario, it: &Iterate, params: &CachingParams, observed: &[(Vec<f64>, bool)]) -> PredictionSet {
    let n_agents = scenario.graph.agent_count();
    let mut inputs: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n_agents];
    for (m, s) in scenario.states.iter().enumerate() {
        let mut x = DVector::zeros(params.groups);
        x[scenario.groups[m]] = 1.0;
        inputs[s.agent].push(x);
    }
    let (p_hat, p_tilde): (Vec<_>, Vec<_>) = (0..n_agents)
        .map(|i| match predicted_preference(&it.check[i], &it.hat[i], &inputs[i]) {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        })
        .unzip();
    let epsilon = prediction_error(&p_hat, observed);
    PredictionSet {
        p_hat,
        p_tilde,
        epsilon,
    }
}

/// Learns with both algorithms on one seed and scores their caches.
pub fn run_seed(params: &CachingParams, seed: u64) -> Result<SeedOutcome> {
    let scenario = build_scenario(params, seed)?;
    let reg = RegularizationParams::new(params.mu1, params.mu2, params.mu3, params.mu12)?;
    let plain: Vec<LocalObjective> = scenario
        .datasets
        .iter()
        .map(|d| Ok(LocalObjective::plain(crate::model::least_square_loss(d, None)?)))
        .collect::<Result<_>>()?;
    let p1 = Problem::new(scenario.graph.clone(), plain, reg)?;
    let setup = AdaptiveSetup::from_forecast(
        &scenario.forecast,
        &scenario.datasets,
        &scenario.graph,
        params.t_d,
        params.upsilon,
        params.mu12,
    )?;
    let p2 = setup.problem(&scenario.datasets, &scenario.graph, reg)?;
    let it1 = solve(&p1, params, scenario.init_seed)?;
    let it2 = solve(&p2, params, scenario.init_seed)?;

    let n_agents = scenario.graph.agent_count();
    let observed: Vec<(Vec<f64>, bool)> = (0..n_agents)
        .map(|i| observed_preference(&scenario.evaluation, i, params.files))
        .collect();
    let alg1 = predictions(&scenario, &it1, params, &observed);
    let alg2 = predictions(&scenario, &it2, params, &observed);

    let uniform = vec![1.0 / params.files as f64; params.files];
    let filled = |p: &PredictionSet| -> Vec<Vec<f64>> {
        p.p_hat.iter().map(|v| v.clone().unwrap_or_else(|| uniform.clone())).collect()
    };
    let (pref1, pref2) = (filled(&alg1), filled(&alg2));
    let mut hits = Vec::new();
    for &theta in &params.thetas {
        for (source, prefs) in [("alg1", &pref1), ("alg2", &pref2)] {
            hits.push(HitRecord {
                theta,
                policy: CachePolicy::Mpc,
                source: source.into(),
                hit_ratio: hit_ratio(&place_mpc(prefs, theta), &scenario.evaluation).1,
            });
        }
        let rc = place_random(n_agents, params.files, theta, scenario.rc_seed.wrapping_add(theta as u64));
        hits.push(HitRecord {
            theta,
            policy: CachePolicy::Rc,
            source: "none".into(),
            hit_ratio: hit_ratio(&rc, &scenario.evaluation).1,
        });
    }
    Ok(SeedOutcome {
        seed,
        observed,
        alg1,
        alg2,
        hits,
    })
}

/// Runs seeds in parallel; results keep the seed order.
pub fn run_sweep(params: &CachingParams, seeds: &[u64]) -> Result<Vec<SeedOutcome>> {
    seeds.par_iter().map(|&s| run_seed(params, s)).collect()
}

/// CSV `seed,theta,iota,policy,preference_source,hit_ratio,epsilon`.
pub fn write_results_csv<W: Write>(out: W, params: &CachingParams, outcomes: &[SeedOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "theta", "iota", "policy", "preference_source", "hit_ratio", "epsilon"])?;
    for o in outcomes {
        for h in &o.hits {
            let epsilon = match h.source.as_str() {
                "alg1" => format!("{:e}", o.alg1.epsilon),
                "alg2" => format!("{:e}", o.alg2.epsilon),
                _ => String::new(),
            };
            w.write_record([
                o.seed.to_string(),
                h.theta.to_string(),
                params.iota.to_string(),
                h.policy.to_string(),
                h.source.clone(),
                format!("{:e}", h.hit_ratio),
                epsilon,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zipf_examples() {
        let u = zipf_preference(5, 0.0, 1).unwrap();
        assert!(u.probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
        let two = zipf_preference(2, 1.0, 3).unwrap();
        let mut sorted = two.probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert_relative_eq!(sorted[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(sorted[1], 1.0 / 3.0, epsilon = 1e-15);
        let z = zipf_preference(20, 0.9, 7).unwrap();
        let norm: f64 = (1..=20).map(|l| (l as f64).powf(-0.9)).sum();
        assert_relative_eq!(z.probs[z.permutation[0]], 1.0 / norm, epsilon = 1e-15);
        assert_relative_eq!(z.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    fn still(agent: usize, minutes: usize) -> Vec<TimedSojourn> {
        vec![TimedSojourn {
            state: agent,
            start: 0,
            minutes,
        }]
    }

    #[test]
    fn deterministic_requests() {
        let profile = zipf_preference(4, 1.0, 0).unwrap();
        let log = simulate_requests(&[still(3, 100)], &[0], &[profile], 2.0, (10.0, 40.0), false, 1).unwrap();
        assert_eq!(log.requests.len(), 60);
        assert!(log.requests.iter().all(|r| r.agent == 3));
        assert_eq!(log.requests[1].time, 10.5);
    }

    #[test]
    fn request_frequencies_follow_profile() {
        let profile = zipf_preference(5, 0.9, 2).unwrap();
        let n = 100_000;
        let log = simulate_requests(&[still(0, n)], &[0], &[profile.clone()], 1.0, (0.0, n as f64), false, 5).unwrap();
        let (freq, flagged) = observed_preference(&log, 0, 5);
        assert!(!flagged);
        for (f, p) in freq.iter().zip(&profile.probs) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn observed_preference_cases() {
        let log = RequestLog {
            start: 0.0,
            end: 1.0,
            requests: vec![Request { time: 0.0, mt: 0, agent: 1, file: 2 }],
        };
        assert_eq!(observed_preference(&log, 1, 3), (vec![0.0, 0.0, 1.0], false));
        let (u, flagged) = observed_preference(&log, 0, 4);
        assert!(flagged);
        assert_eq!(u, vec![0.25; 4]);
    }

    #[test]
    fn prediction_cases() {
        let q = [0.2, 0.5, 0.3];
        let check = DMatrix::from_row_slice(2, 3, &[0.1, 0.25, 0.15, 0.3, 0.75, 0.45]);
        let hat = DMatrix::from_row_slice(2, 3, &[0.1, 0.25, 0.15, 0.1, 0.25, 0.15]);
        let inputs = [DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])];
        let (p_hat, p_tilde) = predicted_preference(&check, &hat, &inputs).unwrap();
        for ((a, b), c) in p_hat.iter().zip(&p_tilde).zip(q) {
            assert_relative_eq!(*a, c, epsilon = 1e-12);
            assert_relative_eq!(*b, c, epsilon = 1e-12);
        }
        let neg = DMatrix::from_row_slice(1, 3, &[-1.0, 1.0, 3.0]);
        let (p, _) = predicted_preference(&neg, &DMatrix::zeros(1, 3), &[DVector::from_vec(vec![1.0])]).unwrap();
        assert_eq!(p, vec![0.0, 0.25, 0.75]);
        let (p, _) = predicted_preference(&(-neg.abs()), &DMatrix::zeros(1, 3), &[DVector::from_vec(vec![1.0])]).unwrap();
        assert_eq!(p, vec![1.0 / 3.0; 3]);
        assert!(predicted_preference(&check, &hat, &[]).is_none());
    }

    #[test]
    fn error_cases() {
        let obs = vec![(vec![1.0, 0.0], false), (vec![0.5, 0.5], true)];
        assert_eq!(prediction_error(&[Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])], &obs), 0.0);
        assert_eq!(prediction_error(&[Some(vec![0.0, 1.0]), None], &obs), 2.0);
    }

    #[test]
    fn placement_cases() {
        assert_eq!(most_popular(&[0.5, 0.3, 0.2], 2), vec![0, 1]);
        assert_eq!(most_popular(&[0.5, 0.25, 0.25], 2), vec![0, 1]);
        assert_eq!(most_popular(&[0.1, 0.2, 0.7], 3), vec![0, 1, 2]);
        let rc = place_random(4, 10, 3, 9);
        assert!(rc.caches.iter().all(|c| c.len() == 3 && c.windows(2).all(|w| w[0] < w[1])));
        assert_eq!(rc, place_random(4, 10, 3, 9));
    }

    #[test]
    fn hit_ratio_extremes() {
        let profile = zipf_preference(6, 0.9, 1).unwrap();
        let traces = vec![still(0, 50), still(1, 50)];
        let log = simulate_requests(&traces, &[0, 0], &[profile], 2.0, (0.0, 30.0), false, 4).unwrap();
        let prefs = vec![vec![1.0 / 6.0; 6]; 3];
        assert_eq!(hit_ratio(&place_mpc(&prefs, 6), &log).1, 1.0);
        assert_eq!(hit_ratio(&place_mpc(&prefs, 0), &log).1, 0.0);
        let (per_agent, _) = hit_ratio(&place_mpc(&prefs, 2), &log);
        assert!(per_agent[2].is_none());
        let mut last = 0.0;
        for theta in 0..=6 {
            let h = hit_ratio(&place_mpc(&prefs, theta), &log).1;
            assert!(h >= last);
            last = h;
        }
    }

    #[test]
    fn pipeline_is_seeded() {
        let params = CachingParams {
            iterations: 20,
            train_horizon: 2000,
            ..CachingParams::default()
        };
        let a = run_seed(&params, 3).unwrap();
        let b = run_seed(&params, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.alg1.epsilon <= 2.0 && a.alg2.epsilon <= 2.0);
    }
}
