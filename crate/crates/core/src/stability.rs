//! Linear error dynamics of exact diffusion and their stability.
//!
//! For scalar iterates, uniform weights and step matrix `μP⁻¹`, the error
//! recursion is driven by
//!
//! ```text
//! F − G = [ Āᵀ(2I − μD)   −Āᵀ(I − μD) ]
//!         [ I              0          ]
//! ```
//!
//! with `D = P⁻¹H` diagonal and `Ā = (I + A)/2`. The stacked vector `[1; 1]`
//! is always an eigenvector with eigenvalue one; it is a structural mode
//! and is removed before taking the spectral radius.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{perron_dense, PolicyError};

/// Eigenvalues closer than this to one cannot be told apart from the
/// structural mode.
pub const UNIT_TOL: f64 = 1e-9;

/// Column-sum tolerance when accepting a left-stochastic matrix.
const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not left-stochastic: {0}")]
    NotStochastic(String),
    #[error("step size must be finite and non-negative, got {0}")]
    InvalidStep(f64),
    #[error("subspace is not invariant under the dynamics (residual {0:.3e})")]
    NotInvariant(f64),
    #[error("inconclusive: eigenvalue {re:.12} + {im:.12}i is within {UNIT_TOL:e} of one")]
    Inconclusive { re: f64, im: f64 },
    #[error("step-size grid is empty")]
    EmptyGrid,
    #[error("at mu = {mu:e}: {source}")]
    AtStep {
        mu: f64,
        #[source]
        source: Box<StabilityError>,
    },
    #[error("leading coefficient must be non-zero and the degree at least one")]
    BadPolynomial,
    #[error("inconclusive: row {0} of the Jury table vanishes")]
    DegenerateTable(usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Error-dynamics matrices for one step size.
#[derive(Debug, Clone)]
pub struct ErrorDynamics {
    pub a: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub perron: DVector<f64>,
    pub mu: f64,
    /// Diagonal of `P⁻¹H`.
    pub h_diag: DVector<f64>,
    /// `F − G`.
    pub matrix: DMatrix<f64>,
}

impl ErrorDynamics {
    pub fn agents(&self) -> usize {
        self.a.nrows()
    }

    /// `F = [[2Āᵀ, −Āᵀ], [I, 0]]`.
    pub fn f(&self) -> DMatrix<f64> {
        companion_blocks(&self.a_bar, &DVector::zeros(self.agents()), 0.0)
    }

    /// `G = F − (F − G)`.
    pub fn g(&self) -> DMatrix<f64> {
        self.f() - &self.matrix
    }
}

fn companion_blocks(a_bar: &DMatrix<f64>, d: &DVector<f64>, mu: f64) -> DMatrix<f64> {
    let n = a_bar.nrows();
    let at = a_bar.transpose();
    let mut left = at.clone();
    let mut right = -at;
    for k in 0..n {
        let s = mu * d[k];
        left.column_mut(k).scale_mut(2.0 - s);
        // Scaling column k of Āᵀ by (2 − μd_k) is Āᵀ(2I − μD).
        right.column_mut(k).scale_mut(1.0 - s);
    }
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&left);
    m.view_mut((0, n), (n, n)).copy_from(&right);
    m.view_mut((n, 0), (n, n)).fill_with_identity();
    m
}

/// Builds `F − G`. `perron` is computed densely when absent; balance is not
/// required.
pub fn build_error_dynamics(
    a: &DMatrix<f64>,
    perron: Option<&DVector<f64>>,
    mu: f64,
    h_diag: &DVector<f64>,
) -> Result<ErrorDynamics, StabilityError> {
    let n = a.nrows();
    if !a.is_square() || n == 0 || h_diag.len() != n {
        return Err(StabilityError::Dimension(format!(
            "A is {}x{}, curvature has {} entries",
            a.nrows(),
            a.ncols(),
            h_diag.len()
        )));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(StabilityError::InvalidStep(mu));
    }
    if let Some((i, v)) = a.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(StabilityError::NotStochastic(format!("entry {i} is {v}")));
    }
    for (k, col) in a.column_iter().enumerate() {
        let sum = col.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(StabilityError::NotStochastic(format!("column {k} sums to {sum}")));
        }
    }
    let perron = match perron {
        Some(p) if p.len() != n => {
            return Err(StabilityError::Dimension(format!(
                "Perron vector has {} entries, A is {n}x{n}",
                p.len()
            )))
        }
        Some(p) => p.clone(),
        None => perron_dense(a)?,
    };
    let a_bar = (a + DMatrix::identity(n, n)) * 0.5;
    let matrix = companion_blocks(&a_bar, h_diag, mu);
    Ok(ErrorDynamics {
        a: a.clone(),
        a_bar,
        perron,
        mu,
        h_diag: h_diag.clone(),
        matrix,
    })
}

/// Eigenvalues of `m` restricted to the complement of an invariant
/// subspace spanned by the columns of `basis`.
///
/// The subspace is checked for invariance, then split off exactly with an
/// orthogonal change of basis, so the structural eigenvalues never have to
/// be picked out of a numerically perturbed spectrum.
pub fn deflated_eigenvalues(
    m: &DMatrix<f64>,
    basis: &DMatrix<f64>,
) -> Result<Vec<Complex<f64>>, StabilityError> {
    let n = m.nrows();
    let k = basis.ncols();
    if basis.nrows() != n || k == 0 || k >= n {
        return Err(StabilityError::Dimension(format!(
            "basis is {}x{k} for a {n}x{n} matrix",
            basis.nrows()
        )));
    }
    let mut augmented = DMatrix::zeros(n, k + n);
    augmented.view_mut((0, 0), (n, k)).copy_from(basis);
    augmented.view_mut((0, k), (n, n)).fill_with_identity();
    let q = augmented.qr().q();
    let rotated = q.transpose() * m * &q;
    let leak = rotated.view((k, 0), (n - k, k)).amax();
    if leak > UNIT_TOL * m.amax().max(1.0) {
        return Err(StabilityError::NotInvariant(leak));
    }
    let rest = rotated.view((k, k), (n - k, n - k)).into_owned();
    Ok(rest.complex_eigenvalues().iter().copied().collect())
}

fn radius_of(eigenvalues: &[Complex<f64>]) -> Result<f64, StabilityError> {
    if let Some(z) = eigenvalues.iter().find(|z| (*z - Complex::new(1.0, 0.0)).norm() < UNIT_TOL) {
        return Err(StabilityError::Inconclusive { re: z.re, im: z.im });
    }
    Ok(eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `max{|λ_2|, …, |λ_2N|}`: the spectral radius after removing one copy of
/// the structural eigenvalue carried by `[1; 1]`.
pub fn spectral_radius_excluding_one(dynamics: &ErrorDynamics) -> Result<f64, StabilityError> {
    let n = 2 * dynamics.agents();
    if n == 2 {
        // Single agent: the other eigenvalue is the trace minus one.
        let other = dynamics.matrix.trace() - 1.0;
        return radius_of(&[Complex::new(other, 0.0)]);
    }
    let ones = DMatrix::from_element(n, 1, 1.0);
    radius_of(&deflated_eigenvalues(&dynamics.matrix, &ones)?)
}

/// Spectral radius on the disagreement modes only, removing the whole
/// consensus subspace `span{[1; 0], [0; 1]}`.
///
/// That subspace is invariant when `μD` is a multiple of the identity
/// (always at `μ = 0`); it carries the eigenvalues `1` and `1 − μd`, so the
/// result is the radius of `F` proper as `μ → 0`.
pub fn consensus_spectral_radius(dynamics: &ErrorDynamics) -> Result<f64, StabilityError> {
    let n = dynamics.agents();
    if n == 1 {
        return Ok(0.0);
    }
    let mut basis = DMatrix::zeros(2 * n, 2);
    basis.view_mut((0, 0), (n, 1)).fill(1.0);
    basis.view_mut((n, 1), (n, 1)).fill(1.0);
    radius_of(&deflated_eigenvalues(&dynamics.matrix, &basis)?)
}

/// Radius of `F` through `Ā`'s spectrum: each eigenvalue `λ ≠ 1` of `Ā`
/// contributes the roots of `z² − 2λz + λ`.
pub fn rho_f_from_a_bar(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let a_bar = (a + DMatrix::identity(n, n)) * 0.5;
    let mut eig: Vec<Complex<f64>> = a_bar.complex_eigenvalues().iter().copied().collect();
    let unit = eig
        .iter()
        .enumerate()
        .min_by(|x, y| (*x.1 - 1.0).norm().total_cmp(&(*y.1 - 1.0).norm()))
        .map(|(i, _)| i);
    if let Some(i) = unit {
        eig.remove(i);
    }
    eig.iter()
        .flat_map(|&l| {
            let disc = (l * l - l).sqrt();
            [l + disc, l - disc]
        })
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral radii over a step-size grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub stable: Vec<bool>,
}

impl StabilityReport {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Rows as `(mu, rho, stable)`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, bool)> + '_ {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(&self.stable)
            .map(|((&m, &r), &s)| (m, r, s))
    }

    /// Smallest grid step size that is not stable.
    pub fn first_unstable(&self) -> Option<f64> {
        self.rows().find(|r| !r.2).map(|r| r.0)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "mu,rho,stable")?;
        for (m, r, s) in self.rows() {
            writeln!(out, "{m:.15e},{r:.15e},{s}")?;
        }
        Ok(())
    }
}

/// `points` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let (lo, hi) = (min.ln(), max.ln());
            let mut grid: Vec<f64> = (0..points)
                .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
                .collect();
            grid[0] = min;
            grid[points - 1] = max;
            grid
        }
    }
}

/// `points` evenly spaced values from `min` to `max` inclusive.
pub fn linear_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..points)
            .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `ρ(F − G)` at every grid point, evaluated in parallel.
pub fn sweep_rho(
    a: &DMatrix<f64>,
    perron: Option<&DVector<f64>>,
    h_diag: &DVector<f64>,
    grid: &[f64],
) -> Result<StabilityReport, StabilityError> {
    if grid.is_empty() {
        return Err(StabilityError::EmptyGrid);
    }
    let perron = match perron {
        Some(p) => p.clone(),
        None => perron_dense(a)?,
    };
    let rho = grid
        .par_iter()
        .map(|&mu| {
            let at = |source| StabilityError::AtStep {
                mu,
                source: Box::new(source),
            };
            if !(mu > 0.0) {
                return Err(at(StabilityError::InvalidStep(mu)));
            }
            build_error_dynamics(a, Some(&perron), mu, h_diag)
                .and_then(|d| spectral_radius_excluding_one(&d))
                .map_err(at)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StabilityReport {
        mu: grid.to_vec(),
        stable: rho.iter().map(|&r| r < 1.0).collect(),
        rho,
    })
}

/// Outcome of the Jury test. Conditions are numbered from 1 in the order
/// `D(1) > 0`, `(−1)ⁿD(−1) > 0`, `|a_0| < a_n`, then one `|row_0| > |row_last|`
/// check per reduced row of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JuryVerdict {
    pub stable: bool,
    pub failing_condition: Option<usize>,
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Signed margins of every Jury condition; condition `j` holds iff
/// `margins[j − 1] > 0`. Coefficients are ascending, `a_0 … a_n`.
pub fn jury_margins(coeffs: &[f64]) -> Result<Vec<f64>, StabilityError> {
    let n = coeffs.len().saturating_sub(1);
    if n == 0 || coeffs[n] == 0.0 || coeffs.iter().any(|c| !c.is_finite()) {
        return Err(StabilityError::BadPolynomial);
    }
    let sign = coeffs[n].signum();
    let a: Vec<f64> = coeffs.iter().map(|c| c * sign).collect();
    let sign_n = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut margins = vec![poly_eval(&a, 1.0), sign_n * poly_eval(&a, -1.0), a[n] - a[0].abs()];
    let mut row = a;
    let mut index = 0;
    while row.len() > 3 {
        let m = row.len() - 1;
        let next: Vec<f64> = (0..m).map(|k| row[0] * row[k] - row[m] * row[m - k]).collect();
        index += 1;
        if next.iter().all(|&v| v == 0.0) {
            return Err(StabilityError::DegenerateTable(index));
        }
        margins.push(next[0].abs() - next[m - 1].abs());
        row = next;
    }
    Ok(margins)
}

/// Which Jury conditions hold, numbered from 1.
pub fn jury_conditions(coeffs: &[f64]) -> Result<Vec<bool>, StabilityError> {
    Ok(jury_margins(coeffs)?.into_iter().map(|m| m > 0.0).collect())
}

/// Stable iff every root of `Σ a_k λ^k` lies strictly inside the unit circle.
pub fn jury_stability_test(coeffs: &[f64]) -> Result<JuryVerdict, StabilityError> {
    let failing = jury_conditions(coeffs)?
        .iter()
        .position(|&ok| !ok)
        .map(|i| i + 1);
    Ok(JuryVerdict {
        stable: failing.is_none(),
        failing_condition: failing,
    })
}

/// Coefficients `a_0 … a_7` of the degree-7 factor `D(λ)` of the
/// characteristic polynomial of the first reference setting:
/// `det(λI − (F − G)) · 32 = (λ − 1) D(λ)`.
pub fn example1_characteristic_poly(mu: f64) -> Vec<f64> {
    let m = mu;
    let (m2, m3, m4) = (m * m, m * m * m, m * m * m * m);
    vec![
        -80.0 * m4 + 244.0 * m3 - 252.0 * m2 + 92.0 * m - 4.0,
        240.0 * m4 - 976.0 * m3 + 1260.0 * m2 - 552.0 * m + 28.0,
        -240.0 * m4 + 1649.0 * m3 - 2904.0 * m2 + 1593.0 * m - 98.0,
        80.0 * m4 - 1346.0 * m3 + 3672.0 * m2 - 2692.0 * m + 210.0,
        429.0 * m3 - 2458.0 * m2 + 2712.0 * m - 288.0,
        682.0 * m2 - 1512.0 * m + 248.0,
        384.0 * m - 128.0,
        32.0,
    ]
}

/// Ascending coefficients of the monic polynomial with the given roots.
pub fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        coeffs = next;
    }
    coeffs
}
