//! Per-agent objectives `J_k` and centralized reference solutions.
//!
//! Iterates are row-stacked: a `N × M` matrix whose row `k` is agent `k`'s
//! block `w_k`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Variance of each feature coordinate in the logistic data generator.
pub const LOGISTIC_FEATURE_VARIANCE: f64 = 10.0;

const GD_GRADIENT_TOL: f64 = 1e-12;
const GD_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("aggregate normal matrix is singular; the weighted cost is not strongly convex")]
    Singular,
    #[error("centralized solver stopped after {iterations} iterations with gradient norm {gradient_norm:e}")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("failed to read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse dataset JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Differentiable convex costs held by `N` agents over `R^M`.
pub trait CostModel: Sync {
    fn n_agents(&self) -> usize;
    fn dim(&self) -> usize;
    fn value(&self, k: usize, w: &DVector<f64>) -> f64;
    fn gradient(&self, k: usize, w: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, k: usize, w: &DVector<f64>) -> DMatrix<f64>;
    /// Upper bound on the largest Hessian eigenvalue of `J_k` anywhere.
    fn smoothness(&self, k: usize) -> f64;

    /// Minimizer of `Σ_k q_k J_k`. The default runs centralized gradient
    /// descent with step `1 / Σ_k q_k L_k`.
    fn global_minimizer(&self, q: &[f64]) -> Result<DVector<f64>, CostError> {
        check_weights(self, q)?;
        let step = 1.0 / (0..self.n_agents()).map(|k| q[k] * self.smoothness(k)).sum::<f64>();
        let mut w = DVector::zeros(self.dim());
        let mut grad = aggregate_gradient(self, q, &w);
        for _ in 0..GD_MAX_ITERS {
            if grad.norm() <= GD_GRADIENT_TOL {
                return Ok(w);
            }
            w -= &grad * step;
            grad = aggregate_gradient(self, q, &w);
        }
        Err(CostError::NotConverged {
            iterations: GD_MAX_ITERS,
            gradient_norm: grad.norm(),
        })
    }
}

fn check_weights<C: CostModel + ?Sized>(model: &C, q: &[f64]) -> Result<(), CostError> {
    if q.len() != model.n_agents() {
        return Err(CostError::Dimension(format!(
            "{} weights for {} agents",
            q.len(),
            model.n_agents()
        )));
    }
    Ok(())
}

/// `Σ_k q_k ∇J_k(w)`.
pub fn aggregate_gradient<C: CostModel + ?Sized>(model: &C, q: &[f64], w: &DVector<f64>) -> DVector<f64> {
    (0..model.n_agents()).fold(DVector::zeros(model.dim()), |acc, k| acc + model.gradient(k, w) * q[k])
}

/// `Σ_k q_k J_k(w)`.
pub fn aggregate_value<C: CostModel + ?Sized>(model: &C, q: &[f64], w: &DVector<f64>) -> f64 {
    (0..model.n_agents()).map(|k| q[k] * model.value(k, w)).sum()
}

/// Stacked gradient: row `k` is `∇J_k(w_k)`.
pub fn gradient<C: CostModel + ?Sized>(model: &C, blocks: &DMatrix<f64>) -> Result<DMatrix<f64>, CostError> {
    if blocks.nrows() != model.n_agents() || blocks.ncols() != model.dim() {
        return Err(CostError::Dimension(format!(
            "iterate is {}x{}, model expects {}x{}",
            blocks.nrows(),
            blocks.ncols(),
            model.n_agents(),
            model.dim()
        )));
    }
    let mut out = DMatrix::zeros(blocks.nrows(), blocks.ncols());
    for k in 0..blocks.nrows() {
        let w = blocks.row(k).transpose();
        out.set_row(k, &model.gradient(k, &w).transpose());
    }
    Ok(out)
}

/// `J_k(w) = ½‖U_k w − d_k‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresData {
    pub u: Vec<DMatrix<f64>>,
    pub d: Vec<DVector<f64>>,
}

impl LeastSquaresData {
    /// Standard normal entries. Draw order: for each agent in ascending
    /// order, `U_k` row-major, then `d_k`.
    pub fn generate(n: usize, dim: usize, samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut u = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let entries: Vec<f64> = (0..samples * dim).map(|_| rng.sample(StandardNormal)).collect();
            u.push(DMatrix::from_row_slice(samples, dim, &entries));
            d.push(DVector::from_iterator(samples, (0..samples).map(|_| rng.sample(StandardNormal))));
        }
        LeastSquaresData { u, d }
    }

    pub fn samples(&self) -> usize {
        self.d.first().map_or(0, |d| d.len())
    }
}

impl CostModel for LeastSquaresData {
    fn n_agents(&self) -> usize {
        self.u.len()
    }

    fn dim(&self) -> usize {
        self.u.first().map_or(0, |u| u.ncols())
    }

    fn value(&self, k: usize, w: &DVector<f64>) -> f64 {
        0.5 * (&self.u[k] * w - &self.d[k]).norm_squared()
    }

    fn gradient(&self, k: usize, w: &DVector<f64>) -> DVector<f64> {
        self.u[k].tr_mul(&(&self.u[k] * w - &self.d[k]))
    }

    fn hessian(&self, k: usize, _w: &DVector<f64>) -> DMatrix<f64> {
        self.u[k].tr_mul(&self.u[k])
    }

    fn smoothness(&self, k: usize) -> f64 {
        self.hessian(k, &DVector::zeros(0)).symmetric_eigenvalues().max()
    }

    /// Solves `(Σ q_k U_kᵀU_k) w = Σ q_k U_kᵀ d_k` by Cholesky.
    fn global_minimizer(&self, q: &[f64]) -> Result<DVector<f64>, CostError> {
        check_weights(self, q)?;
        let m = self.dim();
        let mut normal = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for ((u, d), &qk) in self.u.iter().zip(&self.d).zip(q) {
            normal += u.tr_mul(u) * qk;
            rhs += u.tr_mul(d) * qk;
        }
        normal
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(CostError::Singular)
    }
}

/// `J_k(w) = (1/L) Σ_j ln(1 + exp(−γ_kj h_kjᵀ w)) + (ρ/2)‖w‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    /// Row `j` of `features[k]` is `h_kj`.
    pub features: Vec<DMatrix<f64>>,
    /// Labels in `{−1, +1}`.
    pub labels: Vec<DVector<f64>>,
    pub rho: f64,
}

impl LogisticData {
    /// Draw order: the auxiliary `w_0` (standard normal), then for each agent
    /// its features row-major (variance 10 per coordinate) followed by one
    /// uniform draw per sample. A label is `+1` iff the draw is at most
    /// `1/(1 + exp(−hᵀw_0))`.
    pub fn generate(n: usize, dim: usize, samples: usize, rho: f64, seed: u64) -> Result<Self, CostError> {
        Self::generate_with(n, dim, samples, rho, seed, None)
    }

    /// As [`LogisticData::generate`], optionally overriding the auxiliary
    /// vector after it has been drawn (so the stream stays aligned).
    pub fn generate_with(
        n: usize,
        dim: usize,
        samples: usize,
        rho: f64,
        seed: u64,
        w0_override: Option<&DVector<f64>>,
    ) -> Result<Self, CostError> {
        if !(rho > 0.0) {
            return Err(CostError::Parameter(format!("regularizer must be positive, got {rho}")));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let drawn: DVector<f64> = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
        let w0 = w0_override.cloned().unwrap_or(drawn);
        if w0.len() != dim {
            return Err(CostError::Dimension(format!("w_0 has {} entries, expected {dim}", w0.len())));
        }
        let sd = LOGISTIC_FEATURE_VARIANCE.sqrt();
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let entries: Vec<f64> = (0..samples * dim)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let h = DMatrix::from_row_slice(samples, dim, &entries);
            let margins = &h * &w0;
            let gamma = DVector::from_iterator(
                samples,
                margins.iter().map(|&m| {
                    let draw: f64 = rng.random();
                    if draw <= 1.0 / (1.0 + (-m).exp()) {
                        1.0
                    } else {
                        -1.0
                    }
                }),
            );
            features.push(h);
            labels.push(gamma);
        }
        Ok(LogisticData { features, labels, rho })
    }

    pub fn samples(&self) -> usize {
        self.labels.first().map_or(0, |l| l.len())
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl CostModel for LogisticData {
    fn n_agents(&self) -> usize {
        self.features.len()
    }

    fn dim(&self) -> usize {
        self.features.first().map_or(0, |h| h.ncols())
    }

    fn value(&self, k: usize, w: &DVector<f64>) -> f64 {
        let margins = &self.features[k] * w;
        let loss: f64 = margins
            .iter()
            .zip(self.labels[k].iter())
            .map(|(m, g)| softplus(-g * m))
            .sum();
        loss / self.samples() as f64 + 0.5 * self.rho * w.norm_squared()
    }

    fn gradient(&self, k: usize, w: &DVector<f64>) -> DVector<f64> {
        let h = &self.features[k];
        let margins = h * w;
        let coeffs = DVector::from_iterator(
            margins.len(),
            margins
                .iter()
                .zip(self.labels[k].iter())
                .map(|(m, g)| -g * sigmoid(-g * m)),
        );
        h.tr_mul(&coeffs) / self.samples() as f64 + w * self.rho
    }

    fn hessian(&self, k: usize, w: &DVector<f64>) -> DMatrix<f64> {
        let h = &self.features[k];
        let margins = h * w;
        let mut weighted = h.clone();
        for (j, m) in margins.iter().enumerate() {
            let s = sigmoid(*m);
            weighted.row_mut(j).scale_mut(s * (1.0 - s));
        }
        let m = self.dim();
        h.tr_mul(&weighted) / self.samples() as f64 + DMatrix::identity(m, m) * self.rho
    }

    fn smoothness(&self, k: usize) -> f64 {
        let h = &self.features[k];
        let gram = h.tr_mul(h) / self.samples() as f64;
        0.25 * gram.symmetric_eigenvalues().max() + self.rho
    }
}

/// Separable quadratic `J_k(w) = ½ Σ_j c_kj (w_j − t_kj)²` with positive
/// curvatures. Its Hessian is the constant `diag(c_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalQuadratic {
    pub curvature: DMatrix<f64>,
    pub target: DMatrix<f64>,
}

impl DiagonalQuadratic {
    /// Row-stacked curvatures and targets (`N × M` each).
    pub fn new(curvature: DMatrix<f64>, target: DMatrix<f64>) -> Result<Self, CostError> {
        if curvature.shape() != target.shape() {
            return Err(CostError::Dimension("curvature and target shapes differ".into()));
        }
        if curvature.iter().any(|&c| !(c > 0.0)) {
            return Err(CostError::Parameter("curvatures must be positive".into()));
        }
        Ok(DiagonalQuadratic { curvature, target })
    }

    /// Scalar model (`M = 1`) with curvature `h_k` and target `t_k` per agent.
    pub fn scalar(curvature: &[f64], target: &[f64]) -> Result<Self, CostError> {
        Self::new(
            DMatrix::from_column_slice(curvature.len(), 1, curvature),
            DMatrix::from_column_slice(target.len(), 1, target),
        )
    }
}

impl CostModel for DiagonalQuadratic {
    fn n_agents(&self) -> usize {
        self.curvature.nrows()
    }

    fn dim(&self) -> usize {
        self.curvature.ncols()
    }

    fn value(&self, k: usize, w: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|j| 0.5 * self.curvature[(k, j)] * (w[j] - self.target[(k, j)]).powi(2))
            .sum()
    }

    fn gradient(&self, k: usize, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|j| self.curvature[(k, j)] * (w[j] - self.target[(k, j)])),
        )
    }

    fn hessian(&self, k: usize, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.curvature.row(k).transpose())
    }

    fn smoothness(&self, k: usize) -> f64 {
        self.curvature.row(k).max()
    }

    fn global_minimizer(&self, q: &[f64]) -> Result<DVector<f64>, CostError> {
        check_weights(self, q)?;
        Ok(DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|j| {
                let (num, den) = (0..self.n_agents()).fold((0.0, 0.0), |(num, den), k| {
                    let c = q[k] * self.curvature[(k, j)];
                    (num + c * self.target[(k, j)], den + c)
                });
                num / den
            }),
        ))
    }
}

/// JSON dump of a generated dataset, matrices as row lists.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetFile {
    LeastSquares {
        u: Vec<Vec<Vec<f64>>>,
        d: Vec<Vec<f64>>,
    },
    Logistic {
        h: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<f64>>,
        rho: f64,
    },
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CostError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CostError::Dimension("ragged matrix in dataset".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&LeastSquaresData> for DatasetFile {
    fn from(data: &LeastSquaresData) -> Self {
        DatasetFile::LeastSquares {
            u: data.u.iter().map(rows).collect(),
            d: data.d.iter().map(|d| d.iter().copied().collect()).collect(),
        }
    }
}

impl From<&LogisticData> for DatasetFile {
    fn from(data: &LogisticData) -> Self {
        DatasetFile::Logistic {
            h: data.features.iter().map(rows).collect(),
            gamma: data.labels.iter().map(|g| g.iter().copied().collect()).collect(),
            rho: data.rho,
        }
    }
}

/// A dataset loaded back from JSON.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    LeastSquares(LeastSquaresData),
    Logistic(LogisticData),
}

impl Dataset {
    pub fn model(&self) -> &dyn CostModel {
        match self {
            Dataset::LeastSquares(d) => d,
            Dataset::Logistic(d) => d,
        }
    }

    pub fn to_file(&self) -> DatasetFile {
        match self {
            Dataset::LeastSquares(d) => d.into(),
            Dataset::Logistic(d) => d.into(),
        }
    }

    pub fn from_file(file: &DatasetFile) -> Result<Self, CostError> {
        match file {
            DatasetFile::LeastSquares { u, d } => {
                if u.len() != d.len() {
                    return Err(CostError::Dimension("U and d cover different agent counts".into()));
                }
                let u = u.iter().map(|m| from_rows(m)).collect::<Result<Vec<_>, _>>()?;
                let d: Vec<DVector<f64>> = d.iter().map(|v| DVector::from_vec(v.clone())).collect();
                if u.iter().zip(&d).any(|(u, d)| u.nrows() != d.len()) {
                    return Err(CostError::Dimension("U_k and d_k sample counts differ".into()));
                }
                Ok(Dataset::LeastSquares(LeastSquaresData { u, d }))
            }
            DatasetFile::Logistic { h, gamma, rho } => {
                let features = h.iter().map(|m| from_rows(m)).collect::<Result<Vec<_>, _>>()?;
                let labels: Vec<DVector<f64>> = gamma.iter().map(|v| DVector::from_vec(v.clone())).collect();
                if features.len() != labels.len() || features.iter().zip(&labels).any(|(h, g)| h.nrows() != g.len()) {
                    return Err(CostError::Dimension("features and labels disagree".into()));
                }
                Ok(Dataset::Logistic(LogisticData {
                    features,
                    labels,
                    rho: *rho,
                }))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CostError> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CostError> {
        let file: DatasetFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}
