//! Configuration, manifests and the command implementations behind the
//! `drmtl` binary.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveSetup;
use crate::error::{param, Error, Result};
use crate::experiments::{run_sweep, write_results_csv, CachingParams};
use crate::mobility::{discretize_trajectories, read_trajectory_csv, GridSpec};
use crate::model::{least_square_loss, make_synthetic_dataset, read_datasets_csv, write_datasets_csv, AgentDataset, LocalObjective, RegularizationParams};
use crate::oracle::{iterate_error, solve_centralized_ao, solve_kkt_direct, ReferenceSolution, KKT_SIZE_CAP};
use crate::solver::{run_admm, validate_params, Initialization, ParamMode, ParamReport, Problem, ReferencePoint, SolverParams};
use crate::topology::{random_connected_graph, AgentGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Convergence,
    Preference,
    Caching,
    ValidateParams,
    IngestTraces,
}

impl Command {
    fn uses_caching_defaults(self) -> bool {
        matches!(self, Command::Preference | Command::Caching)
    }
}

/// Which algorithm(s) a convergence run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlgorithmChoice {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "both")]
    Both,
}

impl AlgorithmChoice {
    fn runs(self) -> &'static [usize] {
        match self {
            AlgorithmChoice::One => &[1],
            AlgorithmChoice::Two => &[2],
            AlgorithmChoice::Both => &[1, 2],
        }
    }
}

/// Flat configuration; every field is optional and filled per command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(rename = "N")]
    pub agents: Option<usize>,
    pub edges: Option<usize>,
    pub b: Option<usize>,
    pub n: Option<usize>,
    pub nu: Option<usize>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub mu3: Option<f64>,
    pub mu12: Option<f64>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub zeta: Option<f64>,
    pub mode: Option<ParamMode>,
    pub algorithm: Option<AlgorithmChoice>,
    pub max_iter: Option<usize>,
    pub consensus_tol: Option<f64>,
    pub step_tol: Option<f64>,
    /// Relative margin above the sufficient-condition thresholds in theorem-safe mode.
    pub margin: Option<f64>,
    pub s: Option<usize>,
    #[serde(rename = "K")]
    pub groups: Option<usize>,
    #[serde(rename = "F")]
    pub files: Option<usize>,
    #[serde(rename = "M")]
    pub mts: Option<usize>,
    pub iota: Option<f64>,
    pub theta: Option<Vec<usize>>,
    pub t_d: Option<f64>,
    #[serde(rename = "R_f")]
    pub request_rate: Option<f64>,
    pub poisson: Option<bool>,
    pub upsilon: Option<f64>,
    pub t_max: Option<usize>,
    pub train_horizon: Option<usize>,
    pub burn_in: Option<usize>,
    pub normalized_t1: Option<bool>,
    pub repetitions: Option<usize>,
    pub graph_file: Option<PathBuf>,
    pub dataset_file: Option<PathBuf>,
    pub trajectory_file: Option<PathBuf>,
    /// `[lat_min, lat_max, lon_min, lon_max]`.
    pub bbox: Option<[f64; 4]>,
}

fn fill<T: Clone>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Accepts either a bare config or a manifest produced by an earlier run.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("manifest_version").is_some() {
            let manifest: Manifest = serde_json::from_value(value)?;
            return Ok(manifest.config);
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Fills every unset field with the command's default. A missing seed is
    /// drawn from OS entropy so the manifest can record it.
    pub fn resolved(mut self, command: Command) -> Self {
        let caching = CachingParams::default();
        let caching_cmd = command.uses_caching_defaults();
        fill(&mut self.seed, rand::random::<u32>() as u64);
        if self.graph_file.is_none() {
            fill(&mut self.agents, 10);
            fill(&mut self.edges, 15);
        }
        fill(&mut self.b, 10);
        fill(&mut self.n, 10);
        fill(&mut self.nu, 1);
        if caching_cmd {
            fill(&mut self.mu1, caching.mu1);
            fill(&mut self.mu2, caching.mu2);
            fill(&mut self.mu3, caching.mu3);
            fill(&mut self.mu12, caching.mu12);
            fill(&mut self.tau, caching.tau);
            fill(&mut self.zeta, caching.zeta);
            fill(&mut self.max_iter, caching.iterations);
            fill(&mut self.repetitions, 100);
        } else {
            fill(&mut self.mu1, 1.0);
            fill(&mut self.mu2, 1.0);
            fill(&mut self.mu3, 1.0);
            fill(&mut self.mu12, 1.0);
            fill(&mut self.tau, 1.0);
            fill(&mut self.zeta, 1.0);
            fill(&mut self.max_iter, 300);
            fill(&mut self.repetitions, 1);
        }
        fill(&mut self.rho, 1.0);
        fill(&mut self.gamma, 1.0);
        fill(&mut self.mode, ParamMode::PaperDefaults);
        fill(&mut self.algorithm, AlgorithmChoice::Both);
        fill(&mut self.consensus_tol, 0.0);
        fill(&mut self.step_tol, 0.0);
        fill(&mut self.margin, 0.01);
        fill(&mut self.s, caching.s);
        fill(&mut self.groups, caching.groups);
        fill(&mut self.files, caching.files);
        fill(&mut self.mts, caching.mts);
        fill(&mut self.iota, caching.iota);
        fill(&mut self.theta, caching.thetas.clone());
        fill(&mut self.t_d, caching.t_d);
        fill(&mut self.request_rate, caching.request_rate);
        fill(&mut self.poisson, caching.poisson);
        fill(&mut self.upsilon, caching.upsilon);
        fill(&mut self.t_max, caching.t_max);
        fill(&mut self.train_horizon, caching.train_horizon);
        fill(&mut self.burn_in, caching.burn_in);
        fill(&mut self.normalized_t1, caching.normalized_t1);
        fill(&mut self.bbox, [39.97, 40.02, 116.30, 116.35]);
        self
    }

    fn get<T: Clone>(slot: &Option<T>, name: &str) -> Result<T> {
        slot.clone().ok_or_else(|| Error::Parameter(format!("config field {name} is unset")))
    }

    pub fn reg(&self) -> Result<RegularizationParams> {
        RegularizationParams::new(
            Self::get(&self.mu1, "mu1")?,
            Self::get(&self.mu2, "mu2")?,
            Self::get(&self.mu3, "mu3")?,
            Self::get(&self.mu12, "mu12")?,
        )
    }

    pub fn caching_params(&self) -> Result<CachingParams> {
        let p = CachingParams {
            s: Self::get(&self.s, "s")?,
            groups: Self::get(&self.groups, "K")?,
            files: Self::get(&self.files, "F")?,
            mts: Self::get(&self.mts, "M")?,
            iota: Self::get(&self.iota, "iota")?,
            t_d: Self::get(&self.t_d, "t_d")?,
            request_rate: Self::get(&self.request_rate, "R_f")?,
            poisson: Self::get(&self.poisson, "poisson")?,
            t_max: Self::get(&self.t_max, "t_max")?,
            train_horizon: Self::get(&self.train_horizon, "train_horizon")?,
            burn_in: Self::get(&self.burn_in, "burn_in")?,
            mu1: Self::get(&self.mu1, "mu1")?,
            mu2: Self::get(&self.mu2, "mu2")?,
            mu3: Self::get(&self.mu3, "mu3")?,
            mu12: Self::get(&self.mu12, "mu12")?,
            rho: Self::get(&self.rho, "rho")?,
            gamma: Self::get(&self.gamma, "gamma")?,
            tau: Self::get(&self.tau, "tau")?,
            zeta: Self::get(&self.zeta, "zeta")?,
            upsilon: Self::get(&self.upsilon, "upsilon")?,
            iterations: Self::get(&self.max_iter, "max_iter")?,
            normalized_t1: Self::get(&self.normalized_t1, "normalized_t1")?,
            thetas: Self::get(&self.theta, "theta")?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Seeds of the repetitions, derived from the master seed.
    pub fn repetition_seeds(&self) -> Result<Vec<u64>> {
        let seed = Self::get(&self.seed, "seed")?;
        let reps = Self::get(&self.repetitions, "repetitions")?;
        Ok((0..reps as u64).map(|k| seed.wrapping_add(k)).collect())
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub version: String,
    pub command: Command,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: Command, config: ExperimentConfig) -> Self {
        Self {
            manifest_version: 1,
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config,
        }
    }
}

/// Convergence instance: graph, datasets and the random adaptive design.
pub struct ConvergenceInstance {
    pub graph: AgentGraph,
    pub datasets: Vec<AgentDataset>,
    pub plain: Problem,
    pub adaptive: AdaptiveSetup,
    pub augmented: Problem,
    pub init_seed: u64,
}

pub fn convergence_instance(config: &ExperimentConfig) -> Result<ConvergenceInstance> {
    let get = |v: &Option<usize>, name: &str| ExperimentConfig::get(v, name);
    let seed = ExperimentConfig::get(&config.seed, "seed")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (graph_seed, data_seed, adaptive_seed, init_seed) = (rng.gen(), rng.gen::<u64>(), rng.gen(), rng.gen());
    let graph = match &config.graph_file {
        Some(path) => AgentGraph::load_edge_list(path, config.agents)?,
        None => random_connected_graph(get(&config.agents, "N")?, get(&config.edges, "edges")?, graph_seed)?,
    };
    let datasets = match &config.dataset_file {
        Some(path) => read_datasets_csv(path, Some(graph.agent_count()))?,
        None => {
            let (n, nu, b) = (get(&config.n, "n")?, get(&config.nu, "nu")?, get(&config.b, "b")?);
            (0..graph.agent_count())
                .map(|i| make_synthetic_dataset(n, nu, b, data_seed.wrapping_add(i as u64)))
                .collect()
        }
    };
    let reg = config.reg()?;
    let plain_objectives = datasets
        .iter()
        .map(|d| Ok(LocalObjective::plain(least_square_loss(d, None)?)))
        .collect::<Result<Vec<_>>>()?;
    let plain = Problem::new(graph.clone(), plain_objectives, reg)?;
    let mu12 = reg.mu12;
    let adaptive = AdaptiveSetup::random(&datasets, &graph, mu12, adaptive_seed)?;
    let augmented = adaptive.problem(&datasets, &graph, reg)?;
    Ok(ConvergenceInstance {
        graph,
        datasets,
        plain,
        adaptive,
        augmented,
        init_seed,
    })
}

/// Solver parameters for a problem under the configured mode.
pub fn solver_params(config: &ExperimentConfig, problem: &Problem) -> Result<SolverParams> {
    let rho = ExperimentConfig::get(&config.rho, "rho")?;
    let gamma = ExperimentConfig::get(&config.gamma, "gamma")?;
    let max_iter = ExperimentConfig::get(&config.max_iter, "max_iter")?;
    let mut params = match ExperimentConfig::get(&config.mode, "mode")? {
        ParamMode::TheoremSafe => {
            SolverParams::theorem_safe(problem, rho, gamma, max_iter, ExperimentConfig::get(&config.margin, "margin")?)?
        }
        ParamMode::PaperDefaults => SolverParams::uniform(
            problem.agent_count(),
            rho,
            gamma,
            ExperimentConfig::get(&config.tau, "tau")?,
            ExperimentConfig::get(&config.zeta, "zeta")?,
            max_iter,
        ),
    };
    params.consensus_tol = ExperimentConfig::get(&config.consensus_tol, "consensus_tol")?;
    params.step_tol = ExperimentConfig::get(&config.step_tol, "step_tol")?;
    Ok(params)
}

fn reference(problem: &Problem) -> Result<ReferenceSolution> {
    let (n, _) = problem.weight_dims();
    if problem.agent_count() * n <= KKT_SIZE_CAP {
        solve_kkt_direct(problem)
    } else {
        solve_centralized_ao(problem, 1e-12, 1_000_000)
    }
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    algorithm: usize,
    method: crate::oracle::OracleMethod,
    objective: f64,
    kkt_residual: f64,
    final_objective: f64,
    e_check: f64,
    e_hat: f64,
    iterations: usize,
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run_convergence(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let inst = convergence_instance(config)?;
    fs::write(out.join("graph.txt"), inst.graph.to_edge_list())?;
    write_datasets_csv(out.join("datasets.csv"), &inst.datasets)?;
    fs::write(out.join("adaptive.json"), inst.adaptive.to_json()? + "\n")?;
    let mut summaries = Vec::new();
    for &alg in ExperimentConfig::get(&config.algorithm, "algorithm")?.runs() {
        let problem = if alg == 1 { &inst.plain } else { &inst.augmented };
        let solution = reference(problem)?;
        let point = ReferencePoint::from_solution(problem, &solution)?;
        let params = solver_params(config, problem)?;
        let (last, trace) = run_admm(problem, &params, Initialization::Random(inst.init_seed), Some(&point))?;
        trace.write_csv(fs::File::create(out.join(format!("trace_alg{alg}.csv")))?)?;
        trace.write_accuracy_csv(fs::File::create(out.join(format!("accuracy_alg{alg}.csv")))?)?;
        let (e_check, e_hat) = iterate_error(&last, &solution)?;
        summaries.push(OracleSummary {
            algorithm: alg,
            method: solution.method,
            objective: solution.objective,
            kkt_residual: solution.kkt_residual,
            final_objective: problem.objective(&last.check, &last.hat),
            e_check,
            e_hat,
            iterations: trace.iterations(),
        });
    }
    write_json(out.join("oracle.json"), &summaries)
}

#[derive(Debug, Serialize)]
struct PreferenceRecord {
    seed: u64,
    epsilon_alg1: f64,
    epsilon_alg2: f64,
    observed: Vec<Option<Vec<f64>>>,
    p_hat_alg1: Vec<Option<Vec<f64>>>,
    p_hat_alg2: Vec<Option<Vec<f64>>>,
    p_tilde_alg1: Vec<Option<Vec<f64>>>,
    p_tilde_alg2: Vec<Option<Vec<f64>>>,
}

fn run_preference(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = config.caching_params()?;
    let outcomes = run_sweep(&params, &config.repetition_seeds()?)?;
    let mut w = csv::Writer::from_path(out.join("epsilon.csv"))?;
    w.write_record(["seed", "epsilon_alg1", "epsilon_alg2"])?;
    let mut records = Vec::new();
    for o in outcomes {
        w.write_record([o.seed.to_string(), format!("{:e}", o.alg1.epsilon), format!("{:e}", o.alg2.epsilon)])?;
        records.push(PreferenceRecord {
            seed: o.seed,
            epsilon_alg1: o.alg1.epsilon,
            epsilon_alg2: o.alg2.epsilon,
            observed: o.observed.iter().map(|(p, flagged)| (!flagged).then(|| p.clone())).collect(),
            p_hat_alg1: o.alg1.p_hat,
            p_hat_alg2: o.alg2.p_hat,
            p_tilde_alg1: o.alg1.p_tilde,
            p_tilde_alg2: o.alg2.p_tilde,
        });
    }
    w.flush()?;
    write_json(out.join("preferences.json"), &records)
}

fn run_caching(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = config.caching_params()?;
    let outcomes = run_sweep(&params, &config.repetition_seeds()?)?;
    write_results_csv(fs::File::create(out.join("results.csv"))?, &params, &outcomes)
}

/// Threshold report for the convergence instance of the config.
pub fn params_report(config: &ExperimentConfig) -> Result<Vec<(usize, ParamReport)>> {
    let inst = convergence_instance(config)?;
    ExperimentConfig::get(&config.algorithm, "algorithm")?
        .runs()
        .iter()
        .map(|&alg| {
            let problem = if alg == 1 { &inst.plain } else { &inst.augmented };
            let params = solver_params(config, problem)?;
            let report = validate_params(
                &params,
                problem.graph(),
                problem.lipschitz_bounds(),
                problem.reg().m,
                problem.vectorized_dim(),
            )?;
            Ok((alg, report))
        })
        .collect()
}

fn run_validate(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let reports: Vec<serde_json::Value> = params_report(config)?
        .into_iter()
        .map(|(alg, r)| serde_json::json!({"algorithm": alg, "report": r}))
        .collect();
    let text = serde_json::to_string_pretty(&reports)?;
    println!("{text}");
    fs::write(out.join("validate.json"), text + "\n")?;
    Ok(())
}

fn run_ingest(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let path = config
        .trajectory_file
        .as_ref()
        .ok_or_else(|| Error::Parameter("ingest-traces needs trajectory_file".into()))?;
    let [lat_min, lat_max, lon_min, lon_max] = ExperimentConfig::get(&config.bbox, "bbox")?;
    let grid = GridSpec::new((lat_min, lat_max), (lon_min, lon_max), ExperimentConfig::get(&config.s, "s")?)?;
    let sequences = discretize_trajectories(&read_trajectory_csv(path)?, &grid)?;
    write_json(out.join("sequences.json"), &sequences)
}

/// Runs `command` with a resolved config, writing artifacts and the manifest
/// into `out`.
pub fn run(command: Command, config: ExperimentConfig, out: &Path) -> Result<Manifest> {
    let config = config.resolved(command);
    if config.repetitions == Some(0) {
        return param("repetitions must be positive");
    }
    fs::create_dir_all(out)?;
    match command {
        Command::Convergence => run_convergence(&config, out)?,
        Command::Preference => run_preference(&config, out)?,
        Command::Caching => run_caching(&config, out)?,
        Command::ValidateParams => run_validate(&config, out)?,
        Command::IngestTraces => run_ingest(&config, out)?,
    }
    let manifest = Manifest::new(command, config);
    write_json(out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_depend_on_command() {
        let conv = ExperimentConfig::default().resolved(Command::Convergence);
        assert_eq!(conv.mu1, Some(1.0));
        assert_eq!(conv.tau, Some(1.0));
        let cache = ExperimentConfig::default().resolved(Command::Caching);
        assert_eq!(cache.mu1, Some(0.1));
        assert_eq!(cache.mu12, Some(0.01));
        assert!(cache.seed.is_some());
    }

    #[test]
    fn explicit_values_survive_resolution() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 4, "rho": 2.5, "theta": [3]}"#).unwrap();
        let r = cfg.resolved(Command::Caching);
        assert_eq!(r.seed, Some(4));
        assert_eq!(r.rho, Some(2.5));
        assert_eq!(r.theta, Some(vec![3]));
    }

    #[test]
    fn graph_file_sets_agent_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        fs::write(&path, "0 1\n1 2\n2 3\n").unwrap();
        let cfg = ExperimentConfig {
            seed: Some(2),
            graph_file: Some(path),
            max_iter: Some(5),
            ..Default::default()
        }
        .resolved(Command::Convergence);
        assert_eq!(cfg.agents, None);
        let inst = convergence_instance(&cfg).unwrap();
        assert_eq!(inst.graph.agent_count(), 4);
        assert_eq!(inst.datasets.len(), 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"rhoo": 1}"#).is_err());
    }

    #[test]
    fn paper_defaults_flag_tau() {
        let cfg = ExperimentConfig {
            seed: Some(1),
            algorithm: Some(AlgorithmChoice::One),
            ..Default::default()
        }
        .resolved(Command::ValidateParams);
        let reports = params_report(&cfg).unwrap();
        assert!(!reports[0].1.ok);
        assert!(reports[0].1.violations.iter().any(|v| v.contains("tau")));
    }
}
