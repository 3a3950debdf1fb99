//! Left-stochastic combination policies.
//!
//! Storage convention: `a[(l, k)]` is the weight agent `k` applies to data
//! arriving from agent `l`, so column `k` holds agent `k`'s incoming
//! weights and every column sums to one. The Perron vector `p` satisfies
//! `A p = p`, `1ᵀp = 1`, `p ≻ 0`.
//!
//! Built-in rules and their closed-form Perron vectors:
//!
//! | rule            | `a_lk` (l ∈ N_k, l ≠ k)                      | `p_k`                  |
//! |-----------------|----------------------------------------------|------------------------|
//! | hastings        | `(μ_k/q_k) / max(n_k μ_k/q_k, n_l μ_l/q_l)`  | `∝ q_k/μ_k`            |
//! | averaging       | `1/n_k` (also on the diagonal)               | `∝ n_k`                |
//! | relative_degree | `n_l / Σ_{m∈N_k} n_m` (also on the diagonal) | `∝ n_k Σ_{m∈N_k} n_m`  |
//! | metropolis      | `1/max(n_k, n_l)`                            | `1/N`                  |
//! | max_degree      | `1/max_m n_m`                                | `1/N`                  |
//!
//! For hastings, metropolis and max_degree the diagonal absorbs the
//! remaining mass of each column.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;

/// Absolute tolerance on `|a_lk p_k − a_kl p_l|` used when none is given.
pub const DEFAULT_BALANCE_TOL: f64 = 1e-10;

/// Eigenvalues of `(P − AP)/2` in `[−PSD_CLAMP, 0)` are rounded to zero.
const PSD_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown combination rule `{0}`")]
    UnknownRule(String),
    #[error("weights must be strictly positive (q[{index}] = {value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("step size must be strictly positive, got {0}")]
    NonPositiveStep(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rule `{0}` has no closed-form Perron vector")]
    NoClosedForm(Rule),
    #[error("matrix has no positive Perron vector (entry {index} = {value})")]
    NotPerron { index: usize, value: f64 },
    #[error("power iteration did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("policy is not balanced: (P − AP) asymmetric by {0:e}")]
    NotBalanced(f64),
    #[error("(P − AP)/2 has eigenvalue {0:e} below zero")]
    NotPsd(f64),
    #[error("diagonal readout z[{agent}] = {value:e} fell below its lower bound {bound:e}")]
    PositivityViolated { agent: usize, value: f64, bound: f64 },
    #[error("failed to read policy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse policy JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Hastings,
    Averaging,
    RelativeDegree,
    Metropolis,
    MaxDegree,
    Custom,
}

impl Rule {
    pub const BUILT_IN: [Rule; 5] = [
        Rule::Hastings,
        Rule::Averaging,
        Rule::RelativeDegree,
        Rule::Metropolis,
        Rule::MaxDegree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Hastings => "hastings",
            Rule::Averaging => "averaging",
            Rule::RelativeDegree => "relative_degree",
            Rule::Metropolis => "metropolis",
            Rule::MaxDegree => "max_degree",
            Rule::Custom => "custom",
        }
    }

    pub fn is_doubly_stochastic(self) -> bool {
        matches!(self, Rule::Metropolis | Rule::MaxDegree)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hastings" => Ok(Rule::Hastings),
            "averaging" | "average" => Ok(Rule::Averaging),
            "relative_degree" => Ok(Rule::RelativeDegree),
            "metropolis" => Ok(Rule::Metropolis),
            "max_degree" => Ok(Rule::MaxDegree),
            "custom" => Ok(Rule::Custom),
            _ => Err(PolicyError::UnknownRule(s.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CombinationPolicy {
    pub a: DMatrix<f64>,
    pub perron: DVector<f64>,
    pub rule: Rule,
}

impl CombinationPolicy {
    /// Wraps an arbitrary matrix. When `perron` is `None` it is computed by
    /// a direct nullspace solve of `(A − I) p = 0, 1ᵀp = 1`.
    pub fn from_matrix(a: DMatrix<f64>, perron: Option<DVector<f64>>) -> Result<Self, PolicyError> {
        if !a.is_square() {
            return Err(PolicyError::Dimension(format!(
                "combination matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let perron = match perron {
            Some(p) if p.len() != a.nrows() => {
                return Err(PolicyError::Dimension(format!(
                    "Perron vector has {} entries, matrix has {} rows",
                    p.len(),
                    a.nrows()
                )))
            }
            Some(p) => p,
            None => perron_dense(&a)?,
        };
        Ok(CombinationPolicy {
            a,
            perron,
            rule: Rule::Custom,
        })
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// `Ā = (I + A)/2`, same Perron vector as `A`, strictly positive diagonal.
    pub fn a_bar(&self) -> DMatrix<f64> {
        (DMatrix::identity(self.len(), self.len()) + &self.a) * 0.5
    }

    pub fn perron_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.perron)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        file.into_policy()
    }
}

/// On-disk form of a custom policy: `{"A": [[...]], "p": [...]}`, rows of
/// `A` as printed (row `l`, column `k` is `a_lk`). `p` is optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
}

impl PolicyFile {
    pub fn into_policy(self) -> Result<CombinationPolicy, PolicyError> {
        let n = self.a.len();
        if let Some(row) = self.a.iter().find(|r| r.len() != n) {
            return Err(PolicyError::Dimension(format!(
                "row of length {} in a {n}-row matrix",
                row.len()
            )));
        }
        let a = DMatrix::from_fn(n, n, |l, k| self.a[l][k]);
        CombinationPolicy::from_matrix(a, self.p.map(DVector::from_vec))
    }

    pub fn from_policy(policy: &CombinationPolicy) -> Self {
        PolicyFile {
            a: policy
                .a
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            p: Some(policy.perron.iter().copied().collect()),
        }
    }
}

/// Step sizes tied to a policy through `q = β · diag(μ) · p`.
#[derive(Debug, Clone, Serialize)]
pub struct StepSizeProfile {
    pub mu: Vec<f64>,
    pub mu_o: f64,
    pub q: Vec<f64>,
    pub beta: f64,
    /// `μ_k / μ_max`.
    pub tau: Vec<f64>,
}

impl StepSizeProfile {
    fn new(mu: Vec<f64>, mu_o: f64, q: Vec<f64>, beta: f64) -> Self {
        let mu_max = mu.iter().copied().fold(f64::MIN, f64::max);
        let tau = mu.iter().map(|m| m / mu_max).collect();
        StepSizeProfile {
            mu,
            mu_o,
            q,
            beta,
            tau,
        }
    }

    /// Generic parameterization `μ_k = (q_k/p_k) μ_o`, `β = 1/μ_o`. Valid
    /// for any left-stochastic matrix with known Perron vector.
    pub fn from_perron(perron: &DVector<f64>, q: &[f64], mu_o: f64) -> Result<Self, PolicyError> {
        check_weights(q, perron.len())?;
        check_step(mu_o)?;
        let mu = q.iter().zip(perron.iter()).map(|(q, p)| q / p * mu_o).collect();
        Ok(Self::new(mu, mu_o, q.to_vec(), 1.0 / mu_o))
    }

    pub fn mu_max(&self) -> f64 {
        self.mu.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Largest relative violation of `q_k = β μ_k p_k`.
    pub fn scaling_residual(&self, perron: &DVector<f64>) -> f64 {
        self.q
            .iter()
            .zip(&self.mu)
            .zip(perron.iter())
            .map(|((q, mu), p)| (self.beta * mu * p - q).abs() / q.abs())
            .fold(0.0, f64::max)
    }
}

fn check_weights(q: &[f64], n: usize) -> Result<(), PolicyError> {
    if q.len() != n {
        return Err(PolicyError::Dimension(format!(
            "{} weights for {n} agents",
            q.len()
        )));
    }
    match q.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(index) => Err(PolicyError::NonPositiveWeight {
            index,
            value: q[index],
        }),
        None => Ok(()),
    }
}

fn check_step(mu_o: f64) -> Result<(), PolicyError> {
    if mu_o > 0.0 && mu_o.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::NonPositiveStep(mu_o))
    }
}

/// Builds `A`, its closed-form Perron vector, and the matching step sizes.
///
/// Hastings takes `μ_k = q_k μ_o` here; use [`hastings_policy`] to pass
/// arbitrary per-agent steps.
pub fn build_policy(
    net: &Network,
    rule: Rule,
    q: &[f64],
    mu_o: f64,
) -> Result<(CombinationPolicy, StepSizeProfile), PolicyError> {
    let n = net.len();
    check_weights(q, n)?;
    check_step(mu_o)?;
    let deg: Vec<f64> = net.degrees().into_iter().map(|d| d as f64).collect();
    match rule {
        Rule::Hastings => {
            let mu: Vec<f64> = q.iter().map(|q| q * mu_o).collect();
            hastings_policy(net, q, &mu).map(|(policy, mut steps)| {
                steps.mu_o = mu_o;
                (policy, steps)
            })
        }
        Rule::Averaging => {
            let a = DMatrix::from_fn(n, n, |l, k| {
                if net.contains_edge(k, l) {
                    1.0 / deg[k]
                } else {
                    0.0
                }
            });
            let perron = perron_closed_form(net, rule, q, &[])?;
            let mu = (0..n).map(|k| q[k] * mu_o / deg[k]).collect();
            let beta = deg.iter().sum::<f64>() / mu_o;
            Ok((
                CombinationPolicy { a, perron, rule },
                StepSizeProfile::new(mu, mu_o, q.to_vec(), beta),
            ))
        }
        Rule::RelativeDegree => {
            let nbr_sum: Vec<f64> = (0..n)
                .map(|k| net.neighbors(k).iter().map(|&m| deg[m]).sum())
                .collect();
            let a = DMatrix::from_fn(n, n, |l, k| {
                if net.contains_edge(k, l) {
                    deg[l] / nbr_sum[k]
                } else {
                    0.0
                }
            });
            let perron = perron_closed_form(net, rule, q, &[])?;
            let mu = (0..n).map(|k| q[k] * mu_o / (deg[k] * nbr_sum[k])).collect();
            let beta = (0..n).map(|k| deg[k] * nbr_sum[k]).sum::<f64>() / mu_o;
            Ok((
                CombinationPolicy { a, perron, rule },
                StepSizeProfile::new(mu, mu_o, q.to_vec(), beta),
            ))
        }
        Rule::Metropolis | Rule::MaxDegree => {
            let n_max = net.max_degree() as f64;
            let weight = |l: usize, k: usize| match rule {
                Rule::Metropolis => 1.0 / deg[k].max(deg[l]),
                _ => 1.0 / n_max,
            };
            let a = fill_diagonal(net, weight);
            let perron = perron_closed_form(net, rule, q, &[])?;
            let mu = q.iter().map(|q| q * n as f64 * mu_o).collect();
            Ok((
                CombinationPolicy { a, perron, rule },
                StepSizeProfile::new(mu, mu_o, q.to_vec(), 1.0 / mu_o),
            ))
        }
        Rule::Custom => Err(PolicyError::NoClosedForm(Rule::Custom)),
    }
}

/// Hastings rule for given weights `q` and per-agent steps `μ`.
pub fn hastings_policy(
    net: &Network,
    q: &[f64],
    mu: &[f64],
) -> Result<(CombinationPolicy, StepSizeProfile), PolicyError> {
    let n = net.len();
    check_weights(q, n)?;
    if mu.len() != n {
        return Err(PolicyError::Dimension(format!("{} steps for {n} agents", mu.len())));
    }
    if let Some(&bad) = mu.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
        return Err(PolicyError::NonPositiveStep(bad));
    }
    let ratio: Vec<f64> = (0..n).map(|k| mu[k] / q[k]).collect();
    let scaled: Vec<f64> = (0..n).map(|k| net.degree(k) as f64 * ratio[k]).collect();
    let a = fill_diagonal(net, |l, k| ratio[k] / scaled[k].max(scaled[l]));
    let perron = perron_closed_form(net, Rule::Hastings, q, mu)?;
    let beta: f64 = (0..n).map(|k| q[k] / mu[k]).sum();
    let mu_max = mu.iter().copied().fold(f64::MIN, f64::max);
    Ok((
        CombinationPolicy {
            a,
            perron,
            rule: Rule::Hastings,
        },
        StepSizeProfile::new(mu.to_vec(), mu_max, q.to_vec(), beta),
    ))
}

/// Off-diagonal weights from `weight(l, k)` on each edge; the diagonal
/// takes what is left of each column.
fn fill_diagonal(net: &Network, weight: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let n = net.len();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut off = 0.0;
        for &l in net.neighbors(k).iter().filter(|&&l| l != k) {
            let w = weight(l, k);
            a[(l, k)] = w;
            off += w;
        }
        a[(k, k)] = 1.0 - off;
    }
    a
}

/// Closed-form Perron vector of a built-in rule. `mu` is only read for
/// Hastings.
pub fn perron_closed_form(
    net: &Network,
    rule: Rule,
    q: &[f64],
    mu: &[f64],
) -> Result<DVector<f64>, PolicyError> {
    let n = net.len();
    let deg: Vec<f64> = net.degrees().into_iter().map(|d| d as f64).collect();
    let raw: Vec<f64> = match rule {
        Rule::Hastings => {
            check_weights(q, n)?;
            if mu.len() != n {
                return Err(PolicyError::Dimension(format!("{} steps for {n} agents", mu.len())));
            }
            (0..n).map(|k| q[k] / mu[k]).collect()
        }
        Rule::Averaging => deg.clone(),
        Rule::RelativeDegree => (0..n)
            .map(|k| deg[k] * net.neighbors(k).iter().map(|&m| deg[m]).sum::<f64>())
            .collect(),
        Rule::Metropolis | Rule::MaxDegree => vec![1.0; n],
        Rule::Custom => return Err(PolicyError::NoClosedForm(rule)),
    };
    let total: f64 = raw.iter().sum();
    Ok(DVector::from_iterator(n, raw.into_iter().map(|v| v / total)))
}

/// Perron vector by solving `(A − I) p = 0` with the last equation replaced
/// by `1ᵀp = 1`. Nonsingular whenever the unit eigenvalue is simple.
pub fn perron_dense(a: &DMatrix<f64>) -> Result<DVector<f64>, PolicyError> {
    let n = a.nrows();
    let mut system = a - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let p = system
        .lu()
        .solve(&rhs)
        .ok_or(PolicyError::NotPerron {
            index: 0,
            value: f64::NAN,
        })?;
    match p.iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(PolicyError::NotPerron {
            index,
            value: p[index],
        }),
        None => Ok(p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValidation {
    pub left_stochastic: bool,
    pub primitive: bool,
    pub balanced: bool,
    pub max_balance_residual: f64,
    pub max_column_sum_error: f64,
}

impl PolicyValidation {
    pub fn is_valid(&self) -> bool {
        self.left_stochastic && self.primitive && self.balanced
    }
}

pub fn validate_policy(policy: &CombinationPolicy, tol: f64) -> Result<PolicyValidation, PolicyError> {
    let n = policy.len();
    if policy.perron.len() != n {
        return Err(PolicyError::Dimension(format!(
            "Perron vector has {} entries, matrix is {n}x{n}",
            policy.perron.len()
        )));
    }
    let a = &policy.a;
    let p = &policy.perron;
    let max_column_sum_error = (0..n)
        .map(|k| (a.column(k).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let nonnegative = a.iter().all(|&v| v >= 0.0);
    let mut max_balance_residual: f64 = 0.0;
    for k in 0..n {
        for l in 0..n {
            max_balance_residual = max_balance_residual.max((a[(l, k)] * p[k] - a[(k, l)] * p[l]).abs());
        }
    }
    Ok(PolicyValidation {
        left_stochastic: nonnegative && max_column_sum_error <= tol,
        primitive: is_primitive(a),
        balanced: max_balance_residual <= tol,
        max_balance_residual,
        max_column_sum_error,
    })
}

/// Support strongly connected and `trace(A) > 0`: sufficient for
/// primitivity of a nonnegative matrix.
pub fn is_primitive(a: &DMatrix<f64>) -> bool {
    a.trace() > 0.0 && strongly_connected(a)
}

fn strongly_connected(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let w = if forward { a[(i, j)] } else { a[(j, i)] };
                if w != 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    n > 0 && reach(true) && reach(false)
}

/// Column-sparse view of a combination matrix: for each receiving agent
/// `k`, the pairs `(l, a_lk)` with nonzero weight in ascending `l`.
#[derive(Debug, Clone)]
pub struct Combiner {
    columns: Vec<Vec<(usize, f64)>>,
}

impl Combiner {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let columns = (0..a.ncols())
            .map(|k| {
                (0..a.nrows())
                    .filter(|&l| a[(l, k)] != 0.0)
                    .map(|l| (l, a[(l, k)]))
                    .collect()
            })
            .collect();
        Combiner { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.columns[k]
            .iter()
            .find(|(m, _)| *m == l)
            .map_or(0.0, |&(_, w)| w)
    }

    /// `out[k] = Σ_l a_lk · input[l]` for row-stacked agent blocks.
    pub fn combine_into(&self, input: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for (k, column) in self.columns.iter().enumerate() {
            for &(l, w) in column {
                for j in 0..input.ncols() {
                    out[(k, j)] += w * input[(l, j)];
                }
            }
        }
    }
}

/// Distributed power iteration `z_k ← Σ_l ā_lk z_l` with `z_{k,−1} = e_k`.
/// The diagonal readouts `z_k(k)` converge to the Perron entries.
#[derive(Debug, Clone)]
pub struct PerronLearner {
    combiner: Combiner,
    /// Row `k` holds `z_k`.
    z: DMatrix<f64>,
    scratch: DMatrix<f64>,
    self_weights: Vec<f64>,
    /// `(ā_kk)^{i+1}` for the current iteration `i`.
    bounds: Vec<f64>,
    iteration: usize,
}

impl PerronLearner {
    pub fn new(policy: &CombinationPolicy) -> Self {
        let a_bar = policy.a_bar();
        let n = policy.len();
        let self_weights: Vec<f64> = (0..n).map(|k| a_bar[(k, k)]).collect();
        PerronLearner {
            combiner: Combiner::new(&a_bar),
            z: DMatrix::identity(n, n),
            scratch: DMatrix::zeros(n, n),
            bounds: vec![1.0; n],
            self_weights,
            iteration: 0,
        }
    }

    /// Advances one exchange and checks `z_k(k) ≥ (ā_kk)^{i+1} > 0`.
    pub fn step(&mut self) -> Result<(), PolicyError> {
        self.combiner.combine_into(&self.z, &mut self.scratch);
        std::mem::swap(&mut self.z, &mut self.scratch);
        self.iteration += 1;
        for k in 0..self.z.nrows() {
            self.bounds[k] *= self.self_weights[k];
            let value = self.z[(k, k)];
            // Rounding can put the readout an ulp under the bound.
            if !(value > 0.0) || value < self.bounds[k] * (1.0 - 1e-12) {
                return Err(PolicyError::PositivityViolated {
                    agent: k,
                    value,
                    bound: self.bounds[k],
                });
            }
        }
        Ok(())
    }

    pub fn readout(&self, k: usize) -> f64 {
        self.z[(k, k)]
    }

    pub fn readouts(&self) -> DVector<f64> {
        DVector::from_iterator(self.z.nrows(), (0..self.z.nrows()).map(|k| self.z[(k, k)]))
    }

    pub fn lower_bound(&self, k: usize) -> f64 {
        self.bounds[k]
    }

    pub fn iterations(&self) -> usize {
        self.iteration
    }
}

#[derive(Debug, Clone)]
pub struct PowerIteration {
    pub perron: DVector<f64>,
    pub iterations: usize,
}

/// Runs [`PerronLearner`] until successive diagonal readouts move by less
/// than `tol` in every agent.
pub fn perron_power_iteration(
    policy: &CombinationPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<PowerIteration, PolicyError> {
    let mut learner = PerronLearner::new(policy);
    let mut previous = learner.readouts();
    while learner.iterations() < max_iter {
        learner.step()?;
        let current = learner.readouts();
        let change = (&current - &previous).amax();
        if change < tol {
            return Ok(PowerIteration {
                perron: current,
                iterations: learner.iterations(),
            });
        }
        previous = current;
    }
    Err(PolicyError::NotConverged(max_iter))
}

/// Numerical check of the structural facts that hold for balanced
/// primitive left-stochastic matrices.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub balanced_precondition: bool,
    /// `B = AP − P + I`.
    pub b_symmetry_residual: f64,
    pub b_row_sum_error: f64,
    pub b_column_sum_error: f64,
    pub b_primitive: bool,
    /// Eigenvalues of `B` other than the top one all lie in `(−1, 1)`.
    pub b_unit_eigenvalue_simple: bool,
    pub p_minus_ap_min_eigenvalue: f64,
    pub p_minus_ap_nullity: usize,
    /// `|⟨v, 1⟩|/√N` for the null eigenvector `v`; 1 when it spans `1`.
    pub nullspace_alignment: f64,
    /// Eigenvalues of `A`, from the symmetric form `P^{-1/2} A P^{1/2}`.
    pub a_eigenvalues: Vec<f64>,
    pub a_similarity_asymmetry: f64,
    pub failures: Vec<String>,
}

impl LemmaReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

const LEMMA_TOL: f64 = 1e-10;
const NULL_TOL: f64 = 1e-9;

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn verify_lemma_properties(policy: &CombinationPolicy) -> LemmaReport {
    let n = policy.len();
    let mut failures = Vec::new();
    let balance = validate_policy(policy, DEFAULT_BALANCE_TOL)
        .map(|v| v.balanced && v.primitive && v.left_stochastic)
        .unwrap_or(false);
    if !balance {
        failures.push("precondition: policy is not a balanced primitive left-stochastic matrix".into());
    }
    let p_mat = policy.perron_matrix();
    let eye = DMatrix::<f64>::identity(n, n);
    let ap = &policy.a * &p_mat;

    let b = &ap - &p_mat + &eye;
    let b_symmetry_residual = asymmetry(&b);
    let b_row_sum_error = b.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let b_column_sum_error = b.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
    let b_primitive = is_primitive(&b);
    let mut b_eigs: Vec<f64> = SymmetricEigen::new(symmetric_part(&b)).eigenvalues.iter().copied().collect();
    b_eigs.sort_by(|x, y| y.total_cmp(x));
    let b_unit_eigenvalue_simple = (b_eigs[0] - 1.0).abs() <= LEMMA_TOL
        && b_eigs[1..].iter().all(|&l| l < 1.0 - LEMMA_TOL && l > -1.0 + LEMMA_TOL);
    if b_symmetry_residual > LEMMA_TOL {
        failures.push(format!("AP − P + I asymmetric by {b_symmetry_residual:e}"));
    }
    if b_row_sum_error.max(b_column_sum_error) > LEMMA_TOL {
        failures.push(format!(
            "AP − P + I not doubly stochastic (row {b_row_sum_error:e}, column {b_column_sum_error:e})"
        ));
    }
    if !b_primitive {
        failures.push("AP − P + I not primitive".into());
    }
    if !b_unit_eigenvalue_simple {
        failures.push(format!("AP − P + I spectrum {b_eigs:?} not 1 > λ₂ ≥ … > −1"));
    }

    let gap = &p_mat - &ap;
    let gap_eig = SymmetricEigen::new(symmetric_part(&gap));
    let p_minus_ap_min_eigenvalue = gap_eig.eigenvalues.min();
    let null_idx: Vec<usize> = (0..n).filter(|&i| gap_eig.eigenvalues[i].abs() <= NULL_TOL).collect();
    let p_minus_ap_nullity = null_idx.len();
    let nullspace_alignment = null_idx
        .first()
        .map_or(0.0, |&i| gap_eig.eigenvectors.column(i).sum().abs() / (n as f64).sqrt());
    if p_minus_ap_min_eigenvalue < -PSD_CLAMP {
        failures.push(format!("P − AP has eigenvalue {p_minus_ap_min_eigenvalue:e} < 0"));
    }
    if p_minus_ap_nullity != 1 || (nullspace_alignment - 1.0).abs() > 1e-8 {
        failures.push(format!(
            "null(P − AP) has dimension {p_minus_ap_nullity}, alignment with 1 = {nullspace_alignment}"
        ));
    }

    let sqrt_p = policy.perron.map(f64::sqrt);
    let similar = DMatrix::from_fn(n, n, |i, j| policy.a[(i, j)] * sqrt_p[j] / sqrt_p[i]);
    let a_similarity_asymmetry = asymmetry(&similar);
    let mut a_eigenvalues: Vec<f64> = SymmetricEigen::new(symmetric_part(&similar))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    a_eigenvalues.sort_by(|x, y| y.total_cmp(x));
    if a_similarity_asymmetry > LEMMA_TOL {
        failures.push(format!(
            "P^(-1/2) A P^(1/2) asymmetric by {a_similarity_asymmetry:e}; eigenvalues may be complex"
        ));
    }
    let top_ok = (a_eigenvalues[0] - 1.0).abs() <= LEMMA_TOL;
    let rest_ok = a_eigenvalues[1..]
        .iter()
        .all(|&l| l < 1.0 - LEMMA_TOL && l > -1.0);
    if !(top_ok && rest_ok) {
        failures.push(format!("eigenvalues of A {a_eigenvalues:?} not 1 > λ₂ ≥ … > −1"));
    }

    LemmaReport {
        balanced_precondition: balance,
        b_symmetry_residual,
        b_row_sum_error,
        b_column_sum_error,
        b_primitive,
        b_unit_eigenvalue_simple,
        p_minus_ap_min_eigenvalue,
        p_minus_ap_nullity,
        nullspace_alignment,
        a_eigenvalues,
        a_similarity_asymmetry,
        failures,
    }
}

/// Symmetric square root `V` with `V² = (P − AP)/2`.
pub fn square_root_v(policy: &CombinationPolicy) -> Result<DMatrix<f64>, PolicyError> {
    let half_gap = (policy.perron_matrix() - &policy.a * policy.perron_matrix()) * 0.5;
    let skew = asymmetry(&half_gap);
    if skew > DEFAULT_BALANCE_TOL {
        return Err(PolicyError::NotBalanced(skew));
    }
    let eig = SymmetricEigen::new(symmetric_part(&half_gap));
    let mut roots = eig.eigenvalues.clone();
    for value in roots.iter_mut() {
        if *value < -PSD_CLAMP {
            return Err(PolicyError::NotPsd(*value));
        }
        // Rounding noise on the null direction would otherwise become a
        // square root of order 1e-8.
        *value = if *value <= PSD_CLAMP { 0.0 } else { value.sqrt() };
    }
    let u = &eig.eigenvectors;
    Ok(u * DMatrix::from_diagonal(&roots) * u.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{example1_matrix, example2_matrix};

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    fn perron_residual(policy: &CombinationPolicy) -> f64 {
        (&policy.a * &policy.perron - &policy.perron).amax()
    }

    #[test]
    fn averaging_on_path() {
        let net = Network::path(3);
        let (policy, steps) = build_policy(&net, Rule::Averaging, &uniform(3), 0.1).unwrap();
        for l in 0..3 {
            assert!((policy.a[(l, 1)] - 1.0 / 3.0).abs() < 1e-15);
        }
        let expected = [2.0 / 7.0, 3.0 / 7.0, 2.0 / 7.0];
        for k in 0..3 {
            assert!((policy.perron[k] - expected[k]).abs() < 1e-15);
        }
        assert!(perron_residual(&policy) < 1e-12);
        assert!(steps.scaling_residual(&policy.perron) < 1e-12);
        assert!((steps.mu[1] - 0.1 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn metropolis_on_complete_graph() {
        let net = Network::complete(4);
        let (policy, _) = build_policy(&net, Rule::Metropolis, &uniform(4), 0.1).unwrap();
        for k in 0..4 {
            assert!((policy.perron[k] - 0.25).abs() < 1e-15);
        }
        assert!(perron_residual(&policy) < 1e-12);
        assert!(asymmetry(&policy.a) < 1e-15);
    }

    #[test]
    fn single_agent_every_rule() {
        let net = Network::path(1);
        for rule in Rule::BUILT_IN {
            let (policy, steps) = build_policy(&net, rule, &[2.5], 0.04).unwrap();
            assert_eq!(policy.a[(0, 0)], 1.0, "{rule}");
            assert_eq!(policy.perron[0], 1.0, "{rule}");
            assert!((steps.mu[0] - 2.5 * 0.04).abs() < 1e-15, "{rule}");
        }
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let net = Network::path(3);
        assert!(matches!(
            build_policy(&net, Rule::Averaging, &[1.0, 0.0, 1.0], 0.1),
            Err(PolicyError::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            build_policy(&net, Rule::Averaging, &uniform(3), -1.0),
            Err(PolicyError::NonPositiveStep(_))
        ));
        assert!(matches!(
            build_policy(&net, Rule::Custom, &uniform(3), 0.1),
            Err(PolicyError::NoClosedForm(Rule::Custom))
        ));
        assert!(matches!("bogus".parse::<Rule>(), Err(PolicyError::UnknownRule(_))));
    }

    #[test]
    fn closed_forms() {
        let net = Network::random(9, 0.3, 11);
        let mu = vec![0.02; 9];
        let p = perron_closed_form(&net, Rule::Hastings, &uniform(9), &mu).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));

        let path = Network::path(3);
        let p = perron_closed_form(&path, Rule::RelativeDegree, &uniform(3), &[]).unwrap();
        let expected = [10.0 / 41.0, 21.0 / 41.0, 10.0 / 41.0];
        for k in 0..3 {
            assert!((p[k] - expected[k]).abs() < 1e-15);
        }
        let (policy, _) = build_policy(&path, Rule::RelativeDegree, &uniform(3), 0.1).unwrap();
        assert!(perron_residual(&policy) < 1e-12);

        assert!(matches!(
            perron_closed_form(&path, Rule::Custom, &uniform(3), &[]),
            Err(PolicyError::NoClosedForm(_))
        ));
    }

    #[test]
    fn averaging_on_unbalanced_net() {
        let net = Network::unbalanced(2, 18);
        let total: usize = net.degrees().iter().sum();
        assert_eq!(total, 94);
        let (policy, _) = build_policy(&net, Rule::Averaging, &uniform(20), 0.1).unwrap();
        assert!((policy.perron[0] - 20.0 / 94.0).abs() < 1e-15);
        assert!((policy.perron[5] - 3.0 / 94.0).abs() < 1e-15);
        assert!(perron_residual(&policy) < 1e-12);
    }

    #[test]
    fn hastings_with_heterogeneous_steps() {
        let net = Network::random(7, 0.4, 2);
        let q = [1.0, 2.0, 0.5, 1.5, 1.0, 3.0, 0.7];
        let mu = [0.01, 0.02, 0.005, 0.03, 0.01, 0.015, 0.02];
        let (policy, steps) = hastings_policy(&net, &q, &mu).unwrap();
        assert!(perron_residual(&policy) < 1e-12);
        assert!(steps.scaling_residual(&policy.perron) < 1e-12);
        let v = validate_policy(&policy, DEFAULT_BALANCE_TOL).unwrap();
        assert!(v.is_valid(), "{v:?}");
    }

    #[test]
    fn validation_of_examples() {
        let ex1 = CombinationPolicy::from_matrix(example1_matrix(), None).unwrap();
        let v = validate_policy(&ex1, DEFAULT_BALANCE_TOL).unwrap();
        assert!(v.left_stochastic && v.primitive && !v.balanced, "{v:?}");
        let report = verify_lemma_properties(&ex1);
        assert!(!report.balanced_precondition);
        assert!(report.failures[0].starts_with("precondition"));

        let ex2 = CombinationPolicy::from_matrix(example2_matrix(), None).unwrap();
        let v = validate_policy(&ex2, DEFAULT_BALANCE_TOL).unwrap();
        assert!(v.left_stochastic && v.primitive && !v.balanced, "{v:?}");
    }

    #[test]
    fn identity_is_not_primitive() {
        let policy = CombinationPolicy::from_matrix(DMatrix::identity(2, 2), Some(DVector::from_vec(vec![0.5, 0.5])))
            .unwrap();
        let v = validate_policy(&policy, 1e-10).unwrap();
        assert!(v.left_stochastic);
        assert!(!v.primitive);
    }

    #[test]
    fn validation_dimension_mismatch() {
        let policy = CombinationPolicy {
            a: DMatrix::identity(3, 3),
            perron: DVector::from_vec(vec![0.5, 0.5]),
            rule: Rule::Custom,
        };
        assert!(matches!(validate_policy(&policy, 1e-10), Err(PolicyError::Dimension(_))));
    }

    #[test]
    fn lemma_report_on_balanced_rules() {
        let path = Network::path(3);
        let (avg, _) = build_policy(&path, Rule::Averaging, &uniform(3), 0.1).unwrap();
        let report = verify_lemma_properties(&avg);
        assert!(report.all_passed(), "{:?}", report.failures);

        let complete = Network::complete(4);
        let (met, _) = build_policy(&complete, Rule::Metropolis, &uniform(4), 0.1).unwrap();
        let report = verify_lemma_properties(&met);
        assert!(report.all_passed(), "{:?}", report.failures);
        let b = &met.a * met.perron_matrix() - met.perron_matrix() + DMatrix::identity(4, 4);
        let shifted = (&met.a - DMatrix::identity(4, 4)) / 4.0 + DMatrix::identity(4, 4);
        assert!((b - shifted).amax() < 1e-15);
    }

    #[test]
    fn square_root_properties() {
        let net = Network::random(10, 0.3, 4);
        for rule in Rule::BUILT_IN {
            let (policy, _) = build_policy(&net, rule, &uniform(10), 0.1).unwrap();
            let v = square_root_v(&policy).unwrap();
            let half_gap = (policy.perron_matrix() - &policy.a * policy.perron_matrix()) * 0.5;
            let p_norm = policy.perron_matrix().norm();
            assert!((&v * &v - half_gap).norm() <= 1e-12 * p_norm, "{rule}");
            assert!(asymmetry(&v) < 1e-14);
            let ones = DVector::from_element(10, 1.0);
            assert!((&v * ones).amax() < 1e-12, "{rule}");
            let eig = SymmetricEigen::new(v.clone());
            let nullity = eig.eigenvalues.iter().filter(|l| l.abs() < 1e-8).count();
            assert_eq!(nullity, 1, "{rule}");
        }
    }

    #[test]
    fn square_root_single_agent_and_unbalanced() {
        let (policy, _) = build_policy(&Network::path(1), Rule::Averaging, &[1.0], 0.1).unwrap();
        assert_eq!(square_root_v(&policy).unwrap()[(0, 0)], 0.0);
        let ex1 = CombinationPolicy::from_matrix(example1_matrix(), None).unwrap();
        assert!(matches!(square_root_v(&ex1), Err(PolicyError::NotBalanced(_))));
    }

    #[test]
    fn power_iteration_matches_closed_form() {
        let path = Network::path(3);
        let (policy, _) = build_policy(&path, Rule::Averaging, &uniform(3), 0.1).unwrap();
        let est = perron_power_iteration(&policy, 1e-14, 10_000).unwrap();
        assert!((est.perron - &policy.perron).amax() < 1e-8);

        let (single, _) = build_policy(&Network::path(1), Rule::Averaging, &[1.0], 0.1).unwrap();
        let est = perron_power_iteration(&single, 1e-14, 10).unwrap();
        assert_eq!(est.iterations, 1);
        assert_eq!(est.perron[0], 1.0);
    }

    #[test]
    fn power_iteration_on_example2_matches_direct_solve() {
        let policy = CombinationPolicy::from_matrix(example2_matrix(), None).unwrap();
        // Kernel of (A − I) from the SVD.
        let a = example2_matrix();
        let shifted = &a - DMatrix::identity(5, 5);
        let svd = shifted.svd(true, true);
        let v_t = svd.v_t.unwrap();
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        let kernel: DVector<f64> = v_t.row(idx).transpose();
        let kernel = &kernel / kernel.sum();
        let est = perron_power_iteration(&policy, 1e-14, 100_000).unwrap();
        assert!((est.perron - &kernel).amax() < 1e-8);
        assert!((&policy.perron - &kernel).amax() < 1e-12);
    }

    #[test]
    fn power_iteration_cap() {
        let net = Network::path(12);
        let (policy, _) = build_policy(&net, Rule::Averaging, &uniform(12), 0.1).unwrap();
        assert!(matches!(
            perron_power_iteration(&policy, 1e-15, 3),
            Err(PolicyError::NotConverged(3))
        ));
    }

    #[test]
    fn learner_respects_positivity_bound() {
        let policy = CombinationPolicy::from_matrix(example1_matrix(), None).unwrap();
        let mut learner = PerronLearner::new(&policy);
        for _ in 0..200 {
            learner.step().unwrap();
            for k in 0..4 {
                assert!(learner.readout(k) >= learner.lower_bound(k) * (1.0 - 1e-12));
                assert!(learner.readout(k) > 0.0);
            }
        }
    }

    #[test]
    fn policy_file_parsing() {
        let file: PolicyFile = serde_json::from_str(r#"{"A": [[0.5, 0.5], [0.5, 0.5]]}"#).unwrap();
        let policy = file.into_policy().unwrap();
        assert!((policy.perron[0] - 0.5).abs() < 1e-15);
        let bad: PolicyFile = serde_json::from_str(r#"{"A": [[1.0], [0.5, 0.5]]}"#).unwrap();
        assert!(matches!(bad.into_policy(), Err(PolicyError::Dimension(_))));
        let wrong_p: PolicyFile = serde_json::from_str(r#"{"A": [[1.0]], "p": [0.5, 0.5]}"#).unwrap();
        assert!(matches!(wrong_p.into_policy(), Err(PolicyError::Dimension(_))));
    }

    #[test]
    fn combiner_matches_dense_product() {
        let net = Network::random(6, 0.5, 9);
        let (policy, _) = build_policy(&net, Rule::RelativeDegree, &uniform(6), 0.1).unwrap();
        let comb = Combiner::new(&policy.a);
        let input = DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
        let mut out = DMatrix::zeros(6, 3);
        comb.combine_into(&input, &mut out);
        assert!((out - policy.a.transpose() * input).amax() < 1e-14);
        assert_eq!(comb.weight(0, 0), policy.a[(0, 0)]);
    }
}
