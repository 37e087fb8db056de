//! Per-agent datasets, the weighted least-square loss and regularisation
//! parameters.
//!
//! Weights are `n x nu` matrices. Inner products between weights are trace
//! products and norms are Frobenius norms, so the vector case is `nu = 1`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim, param, Error, Result};

/// Samples observed by one agent. Column `l` of `features` is `x_l` and
/// column `l` of `targets` is `y_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDataset {
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
    mt_of_sample: Vec<usize>,
}

impl AgentDataset {
    pub fn new(features: DMatrix<f64>, targets: DMatrix<f64>, mt_of_sample: Vec<usize>) -> Result<Self> {
        if features.ncols() != targets.ncols() || features.ncols() != mt_of_sample.len() {
            return dim(format!(
                "dataset has {} feature columns, {} target columns and {} MT labels",
                features.ncols(),
                targets.ncols(),
                mt_of_sample.len()
            ));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite entries".into()));
        }
        Ok(Self {
            features,
            targets,
            mt_of_sample,
        })
    }

    pub fn empty(n: usize, nu: usize) -> Self {
        Self {
            features: DMatrix::zeros(n, 0),
            targets: DMatrix::zeros(nu, 0),
            mt_of_sample: Vec::new(),
        }
    }

    /// Builds a dataset from `(x, y, mt)` triples.
    pub fn from_samples<'a, I>(n: usize, nu: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a DVector<f64>, &'a DVector<f64>, usize)>,
    {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut mts = Vec::new();
        for (x, y, mt) in samples {
            if x.len() != n || y.len() != nu {
                return dim(format!("sample of dims ({}, {}) in a ({n}, {nu}) dataset", x.len(), y.len()));
            }
            xs.extend_from_slice(x.as_slice());
            ys.extend_from_slice(y.as_slice());
            mts.push(mt);
        }
        let b = mts.len();
        Self::new(
            DMatrix::from_column_slice(n, b, &xs),
            DMatrix::from_column_slice(nu, b, &ys),
            mts,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn mt_of_sample(&self) -> &[usize] {
        &self.mt_of_sample
    }
}

/// Uniform `U(0,1)` features and targets; sample `l` is attributed to MT `l`.
pub fn make_synthetic_dataset(n: usize, nu: usize, samples: usize, seed: u64) -> AgentDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = DMatrix::from_fn(n, samples, |_, _| rng.gen::<f64>());
    let targets = DMatrix::from_fn(nu, samples, |_, _| rng.gen::<f64>());
    AgentDataset {
        features,
        targets,
        mt_of_sample: (0..samples).collect(),
    }
}

/// One-hot group feature and one-hot requested-file target. Indices are
/// 1-based.
pub fn encode_request_sample(
    group: usize,
    groups: usize,
    file: usize,
    files: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if group == 0 || group > groups {
        return param(format!("group index {group} outside 1..={groups}"));
    }
    if file == 0 || file > files {
        return param(format!("file index {file} outside 1..={files}"));
    }
    let mut x = DVector::zeros(groups);
    x[group - 1] = 1.0;
    let mut y = DVector::zeros(files);
    y[file - 1] = 1.0;
    Ok((x, y))
}

/// Writes datasets as CSV rows `agent,mt,x_1..x_n,y_1..y_nu`.
pub fn write_datasets_csv(path: impl AsRef<Path>, datasets: &[AgentDataset]) -> Result<()> {
    let (n, nu) = datasets
        .first()
        .map(|d| (d.feature_dim(), d.target_dim()))
        .unwrap_or((0, 0));
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["agent".to_string(), "mt".to_string()];
    header.extend((1..=n).map(|k| format!("x_{k}")));
    header.extend((1..=nu).map(|k| format!("y_{k}")));
    wtr.write_record(&header)?;
    for (agent, d) in datasets.iter().enumerate() {
        if (d.feature_dim(), d.target_dim()) != (n, nu) {
            return dim("datasets disagree on feature/target dimensions");
        }
        for l in 0..d.len() {
            let mut row = vec![agent.to_string(), d.mt_of_sample[l].to_string()];
            row.extend(d.features.column(l).iter().map(|v| v.to_string()));
            row.extend(d.targets.column(l).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads datasets written by [`write_datasets_csv`]. Agents with no rows get
/// empty datasets; `agent_count` pads the result when given.
pub fn read_datasets_csv(path: impl AsRef<Path>, agent_count: Option<usize>) -> Result<Vec<AgentDataset>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with("x_")).count();
    let nu = header.iter().filter(|h| h.starts_with("y_")).count();
    if header.len() != 2 + n + nu {
        return Err(Error::Data("dataset CSV header must be agent,mt,x_*,y_*".into()));
    }
    let mut per_agent: BTreeMap<usize, Vec<(DVector<f64>, DVector<f64>, usize)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let parse = |k: usize| -> Result<f64> {
            record[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("column {k}: {e}")))
        };
        let agent = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Data(format!("agent column: {e}")))?;
        let mt = record[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Data(format!("mt column: {e}")))?;
        let x = DVector::from_iterator(n, (2..2 + n).map(parse).collect::<Result<Vec<_>>>()?);
        let y = DVector::from_iterator(nu, (2 + n..2 + n + nu).map(parse).collect::<Result<Vec<_>>>()?);
        per_agent.entry(agent).or_default().push((x, y, mt));
    }
    let count = agent_count
        .unwrap_or(0)
        .max(per_agent.keys().next_back().map_or(0, |a| a + 1));
    (0..count)
        .map(|agent| match per_agent.get(&agent) {
            Some(rows) => AgentDataset::from_samples(n, nu, rows.iter().map(|(x, y, m)| (x, y, *m))),
            None => Ok(AgentDataset::empty(n, nu)),
        })
        .collect()
}

/// Quadratic part of a local loss in the combined weight `W = w_check + w_hat`:
/// `value(W) = 0.5 tr(W^T H W) - tr(W^T R) + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub hessian: DMatrix<f64>,
    pub linear: DMatrix<f64>,
    pub constant: f64,
}

/// Differentiable convex loss over the stacked pair `(w_check, w_hat)`.
pub trait Loss {
    /// `(n, nu)`.
    fn weight_dims(&self) -> (usize, usize);
    fn value(&self, check: &DMatrix<f64>, hat: &DMatrix<f64>) -> f64;
    /// Gradient blocks with respect to `w_check` and `w_hat`.
    fn gradient(&self, check: &DMatrix<f64>, hat: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>);
    /// Lipschitz constant of the stacked gradient.
    fn lipschitz(&self) -> f64;
}

/// `(1/b) sum_l phi_l * 0.5 * ||(w_check + w_hat)^T x_l - y_l||^2`.
#[derive(Debug, Clone)]
pub struct LeastSquaresLoss {
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
    sample_weights: Vec<f64>,
    quadratic: QuadraticForm,
    lipschitz: f64,
}

/// Builds the (optionally reweighted) least-square loss of a dataset.
pub fn least_square_loss(dataset: &AgentDataset, weights: Option<&[f64]>) -> Result<LeastSquaresLoss> {
    let b = dataset.len();
    let sample_weights = match weights {
        Some(w) if w.len() != b => return dim(format!("{} sample weights for {b} samples", w.len())),
        Some(w) => {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return param("sample weights must be finite and nonnegative");
            }
            w.to_vec()
        }
        None => vec![1.0; b],
    };
    let n = dataset.feature_dim();
    let nu = dataset.target_dim();
    let mut hessian = DMatrix::zeros(n, n);
    let mut linear = DMatrix::zeros(n, nu);
    let mut constant = 0.0;
    if b > 0 {
        let scale = 1.0 / b as f64;
        let mut weighted = dataset.features.clone();
        for (l, mut col) in weighted.column_iter_mut().enumerate() {
            col *= sample_weights[l] * scale;
        }
        hessian = &weighted * dataset.features.transpose();
        linear = &weighted * dataset.targets.transpose();
        constant = 0.5
            * scale
            * dataset
                .targets
                .column_iter()
                .zip(&sample_weights)
                .map(|(y, w)| w * y.norm_squared())
                .sum::<f64>();
        // Symmetrise against rounding so eigen/cholesky see an exact symmetric matrix.
        hessian = (&hessian + hessian.transpose()) * 0.5;
    }
    let lipschitz = 2.0 * max_eigenvalue(&hessian).max(0.0);
    Ok(LeastSquaresLoss {
        features: dataset.features.clone(),
        targets: dataset.targets.clone(),
        sample_weights,
        quadratic: QuadraticForm {
            hessian,
            linear,
            constant,
        },
        lipschitz,
    })
}

/// `C_i = 2 lambda_max((1/b) X Phi X^T)`.
pub fn lipschitz_constant(loss: &LeastSquaresLoss) -> f64 {
    loss.lipschitz
}

pub(crate) fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

impl LeastSquaresLoss {
    pub fn quadratic(&self) -> &QuadraticForm {
        &self.quadratic
    }

    pub fn sample_weights(&self) -> &[f64] {
        &self.sample_weights
    }

    pub fn sample_count(&self) -> usize {
        self.features.ncols()
    }
}

impl Loss for LeastSquaresLoss {
    fn weight_dims(&self) -> (usize, usize) {
        (self.features.nrows(), self.targets.nrows())
    }

    fn value(&self, check: &DMatrix<f64>, hat: &DMatrix<f64>) -> f64 {
        let b = self.sample_count();
        if b == 0 {
            return 0.0;
        }
        let combined = check + hat;
        let residual = combined.transpose() * &self.features - &self.targets;
        let total: f64 = residual
            .column_iter()
            .zip(&self.sample_weights)
            .map(|(r, w)| w * r.norm_squared())
            .sum();
        0.5 * total / b as f64
    }

    fn gradient(&self, check: &DMatrix<f64>, hat: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let g = &self.quadratic.hessian * (check + hat) - &self.quadratic.linear;
        (g.clone(), g)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Extra isotropic quadratic `(coefficient/2) ||W - anchor||^2 + offset` on the
/// combined weight, used for the transfer penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraQuadratic {
    pub coefficient: f64,
    pub anchor: DMatrix<f64>,
    pub offset: f64,
}

impl ExtraQuadratic {
    pub fn value(&self, combined: &DMatrix<f64>) -> f64 {
        0.5 * self.coefficient * (combined - &self.anchor).norm_squared() + self.offset
    }

    pub fn gradient(&self, combined: &DMatrix<f64>) -> DMatrix<f64> {
        (combined - &self.anchor) * self.coefficient
    }
}

/// Local loss of one agent: a least-square term plus an optional extra quadratic.
#[derive(Debug, Clone)]
pub struct LocalObjective {
    pub loss: LeastSquaresLoss,
    pub extra: Option<ExtraQuadratic>,
}

impl LocalObjective {
    pub fn plain(loss: LeastSquaresLoss) -> Self {
        Self { loss, extra: None }
    }

    /// Extra coefficient `kappa` (0 without an extra term).
    pub fn extra_coefficient(&self) -> f64 {
        self.extra.as_ref().map_or(0.0, |e| e.coefficient)
    }

    /// Quadratic form in `W` including the extra term.
    pub fn combined_quadratic(&self) -> QuadraticForm {
        let mut q = self.loss.quadratic.clone();
        if let Some(extra) = &self.extra {
            for k in 0..q.hessian.nrows() {
                q.hessian[(k, k)] += extra.coefficient;
            }
            q.linear += &extra.anchor * extra.coefficient;
            q.constant += 0.5 * extra.coefficient * extra.anchor.norm_squared() + extra.offset;
        }
        q
    }

    /// Exact Lipschitz constant of the stacked gradient: `C + 2 kappa`.
    pub fn exact_lipschitz(&self) -> f64 {
        self.loss.lipschitz + 2.0 * self.extra_coefficient()
    }
}

impl Loss for LocalObjective {
    fn weight_dims(&self) -> (usize, usize) {
        self.loss.weight_dims()
    }

    fn value(&self, check: &DMatrix<f64>, hat: &DMatrix<f64>) -> f64 {
        let base = self.loss.value(check, hat);
        match &self.extra {
            Some(extra) => base + extra.value(&(check + hat)),
            None => base,
        }
    }

    fn gradient(&self, check: &DMatrix<f64>, hat: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (mut gc, mut gh) = self.loss.gradient(check, hat);
        if let Some(extra) = &self.extra {
            let g = extra.gradient(&(check + hat));
            gc += &g;
            gh += &g;
        }
        (gc, gh)
    }

    fn lipschitz(&self) -> f64 {
        self.exact_lipschitz()
    }
}

/// Regularisation weights and the strong-convexity modulus of `h`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegularizationParams {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu12: f64,
    /// Strong-convexity modulus of `h(w) = (mu2/2)||w||^2`, equal to `mu2`.
    pub m: f64,
}

impl RegularizationParams {
    pub fn new(mu1: f64, mu2: f64, mu3: f64, mu12: f64) -> Result<Self> {
        for (name, v) in [("mu1", mu1), ("mu2", mu2), ("mu3", mu3), ("mu12", mu12)] {
            if !v.is_finite() || v < 0.0 {
                return param(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(Self {
            mu1,
            mu2,
            mu3,
            mu12,
            m: mu2,
        })
    }

    /// `g(w) = (mu1/2)||w||^2`.
    pub fn g(&self, w: &DMatrix<f64>) -> f64 {
        0.5 * self.mu1 * w.norm_squared()
    }

    /// `h(w) = (mu2/2)||w||^2`.
    pub fn h(&self, w: &DMatrix<f64>) -> f64 {
        0.5 * self.mu2 * w.norm_squared()
    }

    pub fn h_gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        w * self.mu2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_zero_targets() {
        let x = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let d = AgentDataset::new(x, DMatrix::zeros(2, 4), vec![0; 4]).unwrap();
        let loss = least_square_loss(&d, None).unwrap();
        let z = DMatrix::zeros(3, 2);
        assert_eq!(loss.value(&z, &z), 0.0);
        let (gc, gh) = loss.gradient(&z, &z);
        assert_eq!(gc.norm(), 0.0);
        assert_eq!(gh.norm(), 0.0);
    }

    #[test]
    fn interpolation_gives_zero_loss() {
        let n = 3;
        let y = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 1.0, 0.0, 0.3, 0.7, 0.9, 0.1, 0.4]);
        let d = AgentDataset::new(DMatrix::identity(n, n), y.clone(), vec![0; 3]).unwrap();
        let loss = least_square_loss(&d, None).unwrap();
        // (check + hat)^T I = Y  =>  check + hat = Y^T.
        let check = y.transpose() * 0.25;
        let hat = y.transpose() * 0.75;
        assert!(loss.value(&check, &hat).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_degenerate() {
        let loss = least_square_loss(&AgentDataset::empty(4, 2), None).unwrap();
        let w = DMatrix::from_element(4, 2, 3.0);
        assert_eq!(loss.value(&w, &w), 0.0);
        assert_eq!(loss.gradient(&w, &w).0.norm(), 0.0);
        assert_eq!(lipschitz_constant(&loss), 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let d = AgentDataset::new(DMatrix::zeros(3, 5), DMatrix::zeros(1, 5), vec![0; 5]).unwrap();
        assert_eq!(lipschitz_constant(&least_square_loss(&d, None).unwrap()), 0.0);
        // Single sample x = e_1 in one dimension: block Hessian [[1,1],[1,1]].
        let d = AgentDataset::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), vec![0]).unwrap();
        assert_relative_eq!(lipschitz_constant(&least_square_loss(&d, None).unwrap()), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = make_synthetic_dataset(4, 3, 7, 9);
        let weights: Vec<f64> = (0..7).map(|_| rng.gen::<f64>()).collect();
        let loss = least_square_loss(&d, Some(&weights)).unwrap();
        let check = random_matrix(&mut rng, 4, 3);
        let hat = random_matrix(&mut rng, 4, 3);
        let (gc, gh) = loss.gradient(&check, &hat);
        let h = 1e-6;
        for k in 0..12 {
            let mut cp = check.clone();
            let mut cm = check.clone();
            cp[k] += h;
            cm[k] -= h;
            let fd = (loss.value(&cp, &hat) - loss.value(&cm, &hat)) / (2.0 * h);
            assert_relative_eq!(fd, gc[k], max_relative = 1e-6, epsilon = 1e-9);
            let mut hp = hat.clone();
            let mut hm = hat.clone();
            hp[k] += h;
            hm[k] -= h;
            let fd = (loss.value(&check, &hp) - loss.value(&check, &hm)) / (2.0 * h);
            assert_relative_eq!(fd, gh[k], max_relative = 1e-6, epsilon = 1e-9);
        }
        assert_eq!(gc, gh);
    }

    #[test]
    fn sampled_lipschitz_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = make_synthetic_dataset(5, 2, 8, 4);
        let loss = least_square_loss(&d, None).unwrap();
        let c = lipschitz_constant(&loss);
        for _ in 0..10_000 {
            let (c1, h1, c2, h2) = (
                random_matrix(&mut rng, 5, 2),
                random_matrix(&mut rng, 5, 2),
                random_matrix(&mut rng, 5, 2),
                random_matrix(&mut rng, 5, 2),
            );
            let (g1c, g1h) = loss.gradient(&c1, &h1);
            let (g2c, g2h) = loss.gradient(&c2, &h2);
            let num = ((g1c - g2c).norm_squared() + (g1h - g2h).norm_squared()).sqrt();
            let den = ((&c1 - &c2).norm_squared() + (&h1 - &h2).norm_squared()).sqrt();
            assert!(num <= c * den * (1.0 + 1e-12));
        }
    }

    #[test]
    fn one_hot_encoding() {
        let (x, y) = encode_request_sample(1, 2, 3, 20).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0]);
        assert_eq!(y.sum(), 1.0);
        assert_eq!(y[2], 1.0);
        let (x, _) = encode_request_sample(2, 2, 1, 20).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 1.0]);
        assert!(matches!(encode_request_sample(3, 2, 1, 20), Err(Error::Parameter(_))));
        assert!(matches!(encode_request_sample(1, 2, 21, 20), Err(Error::Parameter(_))));
    }

    #[test]
    fn synthetic_dataset_shapes_and_determinism() {
        let d = make_synthetic_dataset(10, 1, 10, 3);
        assert_eq!(d.features().shape(), (10, 10));
        assert_eq!(d.targets().shape(), (1, 10));
        assert!(d.features().iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(d, make_synthetic_dataset(10, 1, 10, 3));
        assert!(make_synthetic_dataset(10, 1, 0, 3).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let sets = vec![make_synthetic_dataset(3, 2, 4, 1), AgentDataset::empty(3, 2), make_synthetic_dataset(3, 2, 2, 2)];
        write_datasets_csv(&path, &sets).unwrap();
        let back = read_datasets_csv(&path, Some(3)).unwrap();
        assert_eq!(back, sets);
    }

    proptest! {
        #[test]
        fn three_point_inequality(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = make_synthetic_dataset(3, 2, 5, seed + 1000);
            let loss = least_square_loss(&d, None).unwrap();
            let c = loss.lipschitz();
            let z: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..3)
                .map(|_| (random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 3, 2)))
                .collect();
            let (g3c, g3h) = loss.gradient(&z[2].0, &z[2].1);
            let lhs = loss.value(&z[1].0, &z[1].1);
            let inner = (&z[1].0 - &z[0].0).dot(&g3c) + (&z[1].1 - &z[0].1).dot(&g3h);
            let dist = (&z[1].0 - &z[2].0).norm_squared() + (&z[1].1 - &z[2].1).norm_squared();
            let rhs = loss.value(&z[0].0, &z[0].1) + inner + 0.5 * c * dist;
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn h_strong_convexity(seed in 0u64..500, mu2 in 0.01f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reg = RegularizationParams::new(1.0, mu2, 0.0, 0.0).unwrap();
            let w1 = random_matrix(&mut rng, 4, 2);
            let w2 = random_matrix(&mut rng, 4, 2);
            let lhs = reg.h(&w1) - reg.h(&w2);
            let rhs = (&w1 - &w2).dot(&reg.h_gradient(&w2)) + 0.5 * reg.m * (&w1 - &w2).norm_squared();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
