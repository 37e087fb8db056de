//! Markov-renewal mobility: trajectory discretisation, model estimation and
//! one-hop forecasting of where each mobile terminal (MT) spends the horizon.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::topology::{grid_graph, AgentGraph};

pub const DEFAULT_T_MAX: usize = 120;

/// Square bounding box split into `s x s` cells, numbered row-major from the
/// (min lat, min lon) corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub s: usize,
}

impl GridSpec {
    pub fn new(lat: (f64, f64), lon: (f64, f64), s: usize) -> Result<Self> {
        if s == 0 {
            return param("grid subdivision must be at least 1");
        }
        if !(lat.0 < lat.1 && lon.0 < lon.1) {
            return param("bounding box must have positive extent");
        }
        Ok(Self {
            lat_min: lat.0,
            lat_max: lat.1,
            lon_min: lon.0,
            lon_max: lon.1,
            s,
        })
    }

    /// Default box over central Beijing.
    pub fn beijing(s: usize) -> Result<Self> {
        Self::new((39.97, 40.02), (116.30, 116.35), s)
    }

    pub fn agent_count(&self) -> usize {
        self.s * self.s
    }

    /// Cell of a point, or `None` outside the box. The max edges belong to
    /// the last row/column.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<usize> {
        if !(lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max) {
            return None;
        }
        let s = self.s as f64;
        let row = (((lat - self.lat_min) / (self.lat_max - self.lat_min)) * s).floor() as usize;
        let col = (((lon - self.lon_min) / (self.lon_max - self.lon_min)) * s).floor() as usize;
        Some(row.min(self.s - 1) * self.s + col.min(self.s - 1))
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.s, cell % self.s)
    }

    pub fn graph(&self) -> Result<AgentGraph> {
        grid_graph(self.s)
    }

    /// Cells strictly between `from` and `to` on a rows-first grid walk.
    fn walk(&self, from: usize, to: usize) -> Vec<usize> {
        let (mut r, mut c) = self.coords(from);
        let (tr, tc) = self.coords(to);
        let mut cells = Vec::new();
        while (r, c) != (tr, tc) {
            if r != tr {
                r = if r < tr { r + 1 } else { r - 1 };
            } else {
                c = if c < tc { c + 1 } else { c - 1 };
            }
            cells.push(r * self.s + c);
        }
        cells.pop();
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub mt: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
}

/// One stay of an MT in one agent area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sojourn {
    pub state: usize,
    pub minutes: usize,
}

/// Sojourn with its start minute on a simulated timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedSojourn {
    pub state: usize,
    pub start: usize,
    pub minutes: usize,
}

fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::Data(format!("unparseable timestamp {raw:?}")))
}

#[derive(Deserialize)]
struct TrajectoryRecord {
    mt_id: String,
    timestamp_iso8601: String,
    lat: f64,
    lon: f64,
}

/// Reads `mt_id,timestamp_iso8601,lat,lon` rows.
pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<GpsPoint>> {
    read_trajectories(std::fs::File::open(path)?)
}

pub fn read_trajectories<R: std::io::Read>(input: R) -> Result<Vec<GpsPoint>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut points = Vec::new();
    for record in reader.deserialize() {
        let r: TrajectoryRecord = record?;
        points.push(GpsPoint {
            mt: r.mt_id,
            timestamp: parse_timestamp(&r.timestamp_iso8601)?,
            lat: r.lat,
            lon: r.lon,
        });
    }
    Ok(points)
}

fn minutes_between(a: DateTime<Utc>, b: DateTime<Utc>) -> usize {
    let secs = (b - a).num_milliseconds() as f64 / 1000.0;
    ((secs / 60.0).round() as usize).max(1)
}

/// Converts GPS points into per-MT sojourn sequences (keyed by MT id).
///
/// Out-of-box points are dropped, same-cell runs merge, and jumps between
/// non-adjacent cells are split into 1-minute stays along the grid walk.
/// A sojourn lasts from the first point in a cell to the first point in the
/// next one; the final sojourn ends at the MT's last in-box point.
pub fn discretize_trajectories(points: &[GpsPoint], grid: &GridSpec) -> Result<BTreeMap<String, Vec<Sojourn>>> {
    let mut by_mt: BTreeMap<String, Vec<(DateTime<Utc>, usize)>> = BTreeMap::new();
    for p in points {
        let entry = by_mt.entry(p.mt.clone()).or_default();
        if let Some(&(last, _)) = entry.last() {
            if p.timestamp < last {
                return Err(Error::Data(format!("timestamps of MT {} are not sorted", p.mt)));
            }
        }
        if let Some(cell) = grid.cell_of(p.lat, p.lon) {
            entry.push((p.timestamp, cell));
        }
    }
    let mut out = BTreeMap::new();
    for (mt, samples) in by_mt {
        let mut seq: Vec<Sojourn> = Vec::new();
        let Some(&(mut entered, mut cell)) = samples.first() else {
            out.insert(mt, seq);
            continue;
        };
        let mut last_time = entered;
        for &(t, c) in &samples[1..] {
            last_time = t;
            if c == cell {
                continue;
            }
            seq.push(Sojourn {
                state: cell,
                minutes: minutes_between(entered, t),
            });
            for mid in grid.walk(cell, c) {
                seq.push(Sojourn { state: mid, minutes: 1 });
            }
            entered = t;
            cell = c;
        }
        seq.push(Sojourn {
            state: cell,
            minutes: minutes_between(entered, last_time),
        });
        out.insert(mt, seq);
    }
    Ok(out)
}

/// Sojourn-time pmf over integer minutes `1..=T_max` (`probs[x - 1] = Psi(x)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournPmf {
    probs: Vec<f64>,
}

impl SojournPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) || total <= 0.0 {
            return param("sojourn pmf needs nonnegative mass on 1..T_max");
        }
        Ok(Self {
            probs: probs.iter().map(|p| p / total).collect(),
        })
    }

    pub fn uniform(t_max: usize) -> Self {
        Self {
            probs: vec![1.0 / t_max as f64; t_max],
        }
    }

    pub fn point_mass(minutes: usize, t_max: usize) -> Result<Self> {
        if minutes == 0 || minutes > t_max {
            return param(format!("point mass at {minutes} outside 1..={t_max}"));
        }
        let mut probs = vec![0.0; t_max];
        probs[minutes - 1] = 1.0;
        Ok(Self { probs })
    }

    pub fn t_max(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, minutes: usize) -> f64 {
        if minutes == 0 {
            0.0
        } else {
            self.probs.get(minutes - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(&self.probs).map(|d| d.sample(rng) + 1).unwrap_or(1)
    }
}

/// Predicted first-transition time `sum_{x >= t_elapsed} x Psi(x)`; the
/// normalized variant divides by the tail mass `sum_{x >= t_elapsed} Psi(x)`.
pub fn predict_transition_time(pmf: &SojournPmf, t_elapsed: f64, normalized: bool) -> f64 {
    let first = t_elapsed.max(0.0).ceil().max(1.0) as usize;
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for x in first..=pmf.t_max() {
        weighted += x as f64 * pmf.prob(x);
        mass += pmf.prob(x);
    }
    if normalized {
        if mass > 0.0 {
            weighted / mass
        } else {
            0.0
        }
    } else {
        weighted
    }
}

/// Per-MT transition rows and sojourn pmfs for every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovRenewalModel {
    agent_count: usize,
    /// `[mt][agent]` -> row of length `agent_count`.
    transitions: Vec<Vec<Vec<f64>>>,
    /// `[mt][agent]`.
    sojourns: Vec<Vec<SojournPmf>>,
}

impl MarkovRenewalModel {
    pub fn new(agent_count: usize, transitions: Vec<Vec<Vec<f64>>>, sojourns: Vec<Vec<SojournPmf>>) -> Result<Self> {
        if transitions.len() != sojourns.len() {
            return param("transition and sojourn tables cover different MT counts");
        }
        for (rows, pmfs) in transitions.iter().zip(&sojourns) {
            if rows.len() != agent_count || pmfs.len() != agent_count || rows.iter().any(|r| r.len() != agent_count) {
                return param(format!("model tables must be sized for {agent_count} agents"));
            }
        }
        Ok(Self {
            agent_count,
            transitions,
            sojourns,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn mt_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition_row(&self, mt: usize, agent: usize) -> &[f64] {
        &self.transitions[mt][agent]
    }

    pub fn sojourn(&self, mt: usize, agent: usize) -> &SojournPmf {
        &self.sojourns[mt][agent]
    }

    /// Checks row stochasticity with neighbor support (rows of isolated
    /// agents are all zero).
    pub fn validate(&self, graph: &AgentGraph, tol: f64) -> Result<()> {
        if graph.agent_count() != self.agent_count {
            return Err(Error::Topology("model and graph disagree on agent count".into()));
        }
        for (m, rows) in self.transitions.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                let expected = if graph.degree(i) == 0 { 0.0 } else { 1.0 };
                let sum: f64 = row.iter().sum();
                if (sum - expected).abs() > tol {
                    return Err(Error::Data(format!("row ({m}, {i}) sums to {sum}")));
                }
                if row.iter().enumerate().any(|(j, p)| *p != 0.0 && !graph.has_edge(i, j)) {
                    return Err(Error::Data(format!("row ({m}, {i}) leaves the neighbor set")));
                }
                let mass: f64 = self.sojourns[m][i].probs().iter().sum();
                if (mass - 1.0).abs() > tol {
                    return Err(Error::Data(format!("sojourn pmf ({m}, {i}) sums to {mass}")));
                }
            }
        }
        Ok(())
    }
}

fn uniform_row(graph: &AgentGraph, i: usize) -> Vec<f64> {
    let mut row = vec![0.0; graph.agent_count()];
    let d = graph.degree(i);
    for &j in graph.neighbors(i) {
        row[j] = 1.0 / d as f64;
    }
    row
}

/// Counts transitions and sojourns per MT. Jumps to non-neighbors are
/// credited to the neighbor closest (in hops) to the target, ties to the
/// lower index. The last sojourn of each sequence is censored and is not
/// counted in the histogram. Unobserved states fall back to uniform rows and
/// a uniform pmf over `1..=t_max`.
pub fn estimate_model(sequences: &[Vec<Sojourn>], graph: &AgentGraph, t_max: usize) -> Result<MarkovRenewalModel> {
    if t_max == 0 {
        return param("t_max must be positive");
    }
    let n = graph.agent_count();
    let hops: Vec<Vec<usize>> = (0..n).map(|i| graph.hop_distances(i)).collect();
    let mut transitions = Vec::with_capacity(sequences.len());
    let mut sojourns = Vec::with_capacity(sequences.len());
    for seq in sequences {
        if let Some(s) = seq.iter().find(|s| s.state >= n) {
            return Err(Error::Data(format!("state {} outside the {n}-agent graph", s.state)));
        }
        let mut counts = vec![vec![0.0; n]; n];
        let mut hist = vec![vec![0.0; t_max]; n];
        for pair in seq.windows(2) {
            let (from, to) = (pair[0].state, pair[1].state);
            hist[from][pair[0].minutes.clamp(1, t_max) - 1] += 1.0;
            if from == to {
                continue;
            }
            let target = if graph.has_edge(from, to) {
                Some(to)
            } else {
                graph.neighbors(from).iter().copied().min_by_key(|&j| (hops[j][to], j))
            };
            if let Some(j) = target {
                counts[from][j] += 1.0;
            }
        }
        let rows = (0..n)
            .map(|i| {
                let total: f64 = counts[i].iter().sum();
                if total > 0.0 {
                    counts[i].iter().map(|c| c / total).collect()
                } else {
                    uniform_row(graph, i)
                }
            })
            .collect();
        let pmfs = hist
            .into_iter()
            .map(|h| SojournPmf::new(h).unwrap_or_else(|_| SojournPmf::uniform(t_max)))
            .collect();
        transitions.push(rows);
        sojourns.push(pmfs);
    }
    MarkovRenewalModel::new(n, transitions, sojourns)
}

/// Random ground truth: neighbor rows from `U(0,1)` weights and sojourn pmfs
/// proportional to `x exp(-x/theta)` with mean `2 theta ~ U(10, 40)`,
/// truncated at `t_max`.
pub fn random_ground_truth(graph: &AgentGraph, mt_count: usize, t_max: usize, seed: u64) -> Result<MarkovRenewalModel> {
    if t_max == 0 {
        return param("t_max must be positive");
    }
    let n = graph.agent_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(mt_count);
    let mut sojourns = Vec::with_capacity(mt_count);
    for _ in 0..mt_count {
        let mut rows = Vec::with_capacity(n);
        let mut pmfs = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![0.0; n];
            let weights: Vec<f64> = graph.neighbors(i).iter().map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = weights.iter().sum();
            for (&j, w) in graph.neighbors(i).iter().zip(&weights) {
                row[j] = w / total;
            }
            rows.push(row);
            let theta = rng.gen_range(10.0..40.0) / 2.0;
            let probs = (1..=t_max).map(|x| x as f64 * (-(x as f64) / theta).exp()).collect();
            pmfs.push(SojournPmf::new(probs)?);
        }
        transitions.push(rows);
        sojourns.push(pmfs);
    }
    MarkovRenewalModel::new(n, transitions, sojourns)
}

/// Simulates each MT from its initial agent until `horizon` minutes; the
/// final sojourn is cut at the horizon. MT `m` uses stream `m` of the seed.
pub fn generate_traces(
    model: &MarkovRenewalModel,
    initial: &[usize],
    horizon: usize,
    seed: u64,
) -> Result<Vec<Vec<TimedSojourn>>> {
    if initial.len() != model.mt_count() {
        return param(format!("{} initial states for {} MTs", initial.len(), model.mt_count()));
    }
    initial
        .iter()
        .enumerate()
        .map(|(m, &start_state)| {
            if start_state >= model.agent_count() {
                return Err(Error::Data(format!("initial state {start_state} outside the graph")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let mut trace = Vec::new();
            let mut state = start_state;
            let mut clock = 0;
            while clock < horizon {
                let minutes = model.sojourn(m, state).sample(&mut rng).min(horizon - clock);
                trace.push(TimedSojourn {
                    state,
                    start: clock,
                    minutes,
                });
                clock += minutes;
                let row = model.transition_row(m, state);
                if let Ok(d) = WeightedIndex::new(row) {
                    state = d.sample(&mut rng);
                }
            }
            Ok(trace)
        })
        .collect()
}

/// Drops the start times.
pub fn untimed(trace: &[TimedSojourn]) -> Vec<Sojourn> {
    trace
        .iter()
        .map(|t| Sojourn {
            state: t.state,
            minutes: t.minutes,
        })
        .collect()
}

/// Agent and elapsed stay of an MT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub agent: usize,
    pub elapsed: f64,
}

/// State at minute `t` (`None` past the end of the trace).
pub fn state_at(trace: &[TimedSojourn], t: usize) -> Option<MobilityState> {
    trace
        .iter()
        .find(|s| s.start <= t && t < s.start + s.minutes)
        .map(|s| MobilityState {
            agent: s.state,
            elapsed: (t - s.start) as f64,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProb {
    pub path: Vec<usize>,
    pub prob: f64,
}

/// One-hop forecast for one MT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtForecast {
    pub state: usize,
    #[serde(rename = "T1")]
    pub t1: f64,
    pub paths: Vec<PathProb>,
    /// Neighbor agent -> predicted minutes spent there within the horizon.
    pub residence: BTreeMap<usize, f64>,
}

impl MtForecast {
    pub fn residence_at(&self, agent: usize) -> f64 {
        self.residence.get(&agent).copied().unwrap_or(0.0)
    }

    pub fn total_residence(&self) -> f64 {
        self.residence.values().sum()
    }
}

/// Forecasts for all MTs, indexed by MT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityForecast {
    pub horizon: f64,
    pub entries: Vec<MtForecast>,
}

impl MobilityForecast {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    /// Forecast with no movement: every MT stays put and `r = 0`.
    pub fn stationary(states: &[usize], horizon: f64) -> Self {
        Self {
            horizon,
            entries: states
                .iter()
                .map(|&state| MtForecast {
                    state,
                    t1: horizon,
                    paths: vec![PathProb {
                        path: vec![state],
                        prob: 1.0,
                    }],
                    residence: BTreeMap::new(),
                })
                .collect(),
        }
    }
}

/// Paths over the horizon: `[i]` when `t1 >= t_d` or the agent is isolated,
/// otherwise `[i, j]` for every neighbor with its transition probability.
pub fn enumerate_paths(agent: usize, t1: f64, row: &[f64], graph: &AgentGraph, t_d: f64) -> Vec<PathProb> {
    if t1 >= t_d || graph.degree(agent) == 0 {
        return vec![PathProb {
            path: vec![agent],
            prob: 1.0,
        }];
    }
    graph
        .neighbors(agent)
        .iter()
        .map(|&j| PathProb {
            path: vec![agent, j],
            prob: row[j],
        })
        .collect()
}

/// `r_{i->j} = [t_d - t1]_+ P_{i,j}` for every neighbor `j`.
pub fn residence_times(agent: usize, t1: f64, row: &[f64], graph: &AgentGraph, t_d: f64) -> BTreeMap<usize, f64> {
    let slack = (t_d - t1).max(0.0);
    graph.neighbors(agent).iter().map(|&j| (j, slack * row[j])).collect()
}

pub fn forecast_mt(
    model: &MarkovRenewalModel,
    mt: usize,
    state: MobilityState,
    graph: &AgentGraph,
    t_d: f64,
    normalized: bool,
) -> MtForecast {
    let t1 = predict_transition_time(model.sojourn(mt, state.agent), state.elapsed, normalized);
    let row = model.transition_row(mt, state.agent);
    MtForecast {
        state: state.agent,
        t1,
        paths: enumerate_paths(state.agent, t1, row, graph, t_d),
        residence: residence_times(state.agent, t1, row, graph, t_d),
    }
}

pub fn forecast(
    model: &MarkovRenewalModel,
    states: &[MobilityState],
    graph: &AgentGraph,
    t_d: f64,
    normalized: bool,
) -> Result<MobilityForecast> {
    if states.len() != model.mt_count() {
        return param(format!("{} states for {} MTs", states.len(), model.mt_count()));
    }
    if let Some(s) = states.iter().find(|s| s.agent >= model.agent_count() || !(s.elapsed >= 0.0)) {
        return Err(Error::Data(format!("invalid mobility state {s:?}")));
    }
    Ok(MobilityForecast {
        horizon: t_d,
        entries: states
            .iter()
            .enumerate()
            .map(|(m, s)| forecast_mt(model, m, *s, graph, t_d, normalized))
            .collect(),
    })
}
