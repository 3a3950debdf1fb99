//! Diffusion-type recursions over a synchronous network.
//!
//! All agents advance in lockstep: every adaptation finishes before any
//! combination reads it, and agents are visited in ascending index order
//! so floating-point results are reproducible run to run.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{aggregate_value, CostModel};
use crate::policy::{square_root_v, Combiner, CombinationPolicy, PerronLearner, PolicyError, StepSizeProfile};

/// Relative error above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("iterate became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Diffusion,
    PenalizedIncremental,
    ExactDiffusion,
    ExactDiffusionAdaptive,
    PrimalDual,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Diffusion,
        Algorithm::PenalizedIncremental,
        Algorithm::ExactDiffusion,
        Algorithm::ExactDiffusionAdaptive,
        Algorithm::PrimalDual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Diffusion => "diffusion",
            Algorithm::PenalizedIncremental => "penalized_incremental",
            Algorithm::ExactDiffusion => "exact_diffusion",
            Algorithm::ExactDiffusionAdaptive => "exact_diffusion_adaptive",
            Algorithm::PrimalDual => "primal_dual",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Per-run iterate storage. Blocks are row-stacked `N × M` matrices.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: DMatrix<f64>,
    /// `ψ_{i−1}` for the exact-diffusion correction.
    pub psi_prev: DMatrix<f64>,
    /// Dual blocks `Y_{i−1}` of the primal-dual form.
    pub dual: DMatrix<f64>,
    /// Perron estimates for the adaptive variant.
    pub learner: Option<PerronLearner>,
    pub iteration: usize,
}

impl SolverState {
    /// `w_{k,−1}` from `initial`; `ψ_{k,−1} = w_{k,−1}`, `Y_{−1} = 0`.
    pub fn new(initial: DMatrix<f64>) -> Self {
        let dual = DMatrix::zeros(initial.nrows(), initial.ncols());
        SolverState {
            psi_prev: initial.clone(),
            w: initial,
            dual,
            learner: None,
            iteration: 0,
        }
    }

    pub fn with_learner(mut self, policy: &CombinationPolicy) -> Self {
        self.learner = Some(PerronLearner::new(policy));
        self
    }

    fn finish(&mut self) -> Result<(), SolverError> {
        let index = self.iteration;
        self.iteration += 1;
        if self.w.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SolverError::NonFinite(index))
        }
    }
}

/// `ψ_k = w_k − μ_k ∇J_k(w_k)` for every agent.
fn adapt(w: &DMatrix<f64>, mu: impl Fn(usize) -> f64, model: &dyn CostModel) -> DMatrix<f64> {
    let mut psi = w.clone();
    for k in 0..w.nrows() {
        let block = w.row(k).transpose();
        let grad = model.gradient(k, &block);
        let step = mu(k);
        for j in 0..w.ncols() {
            psi[(k, j)] -= step * grad[j];
        }
    }
    psi
}

fn check_shape(state: &SolverState, model: &dyn CostModel, agents: usize) -> Result<(), SolverError> {
    let expected = (model.n_agents(), model.dim());
    if state.w.shape() != expected || agents != expected.0 {
        return Err(SolverError::Dimension(format!(
            "state {:?}, policy over {agents} agents, model {:?}",
            state.w.shape(),
            expected
        )));
    }
    Ok(())
}

/// Adapt-then-combine: `ψ_k = w_k − μ_k∇J_k(w_k)`, `w_k ← Σ_l a_lk ψ_l`.
pub fn diffusion_step(
    state: &mut SolverState,
    combiner: &Combiner,
    mu: &[f64],
    model: &dyn CostModel,
) -> Result<(), SolverError> {
    check_shape(state, model, combiner.len())?;
    let psi = adapt(&state.w, |k| mu[k], model);
    combiner.combine_into(&psi, &mut state.w);
    state.finish()
}

/// Diagonally weighted incremental descent on the penalized problem
/// `J⋆(W) + (1/2α) Wᵀ(P − AP)W`, computed literally:
/// `ψ = W − αP⁻¹∇J⋆(W)`, then `W = ψ − αP⁻¹((P − AP)/α)ψ`.
pub fn penalized_incremental_step(
    state: &mut SolverState,
    policy: &CombinationPolicy,
    steps: &StepSizeProfile,
    model: &dyn CostModel,
    alpha: f64,
) -> Result<(), SolverError> {
    check_shape(state, model, policy.len())?;
    let p = &policy.perron;
    let psi = adapt(&state.w, |k| alpha * steps.q[k] / p[k], model);
    let gap = policy.perron_matrix() - &policy.a * policy.perron_matrix();
    let mut penalty = (gap * &psi) / alpha;
    for k in 0..penalty.nrows() {
        penalty.row_mut(k).scale_mut(alpha / p[k]);
    }
    state.w = psi - penalty;
    state.finish()
}

/// Adapt-correct-combine with `Ā = (I + A)/2`.
pub fn exact_diffusion_step(
    state: &mut SolverState,
    combiner_bar: &Combiner,
    mu: &[f64],
    model: &dyn CostModel,
) -> Result<(), SolverError> {
    check_shape(state, model, combiner_bar.len())?;
    correct_and_combine(state, combiner_bar, |k| mu[k], model)
}

fn correct_and_combine(
    state: &mut SolverState,
    combiner_bar: &Combiner,
    mu: impl Fn(usize) -> f64,
    model: &dyn CostModel,
) -> Result<(), SolverError> {
    let psi = adapt(&state.w, mu, model);
    let phi = &psi + &state.w - &state.psi_prev;
    combiner_bar.combine_into(&phi, &mut state.w);
    state.psi_prev = psi;
    state.finish()
}

/// Exact diffusion with the Perron entries learned on the fly:
/// `z_k ← Σ_l ā_lk z_l`, `μ_{k,i} = q_k μ_o / z_{k,i}(k)`, then the usual
/// adapt-correct-combine. `mu_o` is the scaling constant `1/β`, so the
/// steps approach `μ_k` of the step profile. The power iteration never
/// freezes.
pub fn exact_diffusion_adaptive_step(
    state: &mut SolverState,
    combiner_bar: &Combiner,
    q: &[f64],
    mu_o: f64,
    model: &dyn CostModel,
) -> Result<(), SolverError> {
    check_shape(state, model, combiner_bar.len())?;
    let learner = state
        .learner
        .as_mut()
        .ok_or_else(|| SolverError::Dimension("adaptive step needs a Perron learner in the state".into()))?;
    learner.step()?;
    let readouts = learner.readouts();
    correct_and_combine(state, combiner_bar, |k| q[k] * mu_o / readouts[k], model)
}

/// Primal-dual form:
/// `W_i = Āᵀ(W_{i−1} − M∇J°(W_{i−1})) − P⁻¹V Y_{i−1}`, `Y_i = Y_{i−1} + V W_i`.
pub fn primal_dual_step(
    state: &mut SolverState,
    policy: &CombinationPolicy,
    v: &DMatrix<f64>,
    mu: &[f64],
    model: &dyn CostModel,
) -> Result<(), SolverError> {
    check_shape(state, model, policy.len())?;
    let psi = adapt(&state.w, |k| mu[k], model);
    let mut correction = v * &state.dual;
    for k in 0..correction.nrows() {
        correction.row_mut(k).scale_mut(1.0 / policy.perron[k]);
    }
    state.w = policy.a_bar().transpose() * psi - correction;
    state.dual += v * &state.w;
    state.finish()
}

/// Everything a single run needs.
#[derive(Clone, Copy)]
pub struct RunConfig<'a> {
    pub algorithm: Algorithm,
    pub policy: &'a CombinationPolicy,
    pub steps: &'a StepSizeProfile,
    pub model: &'a dyn CostModel,
    pub max_iters: usize,
    /// `W_{−1}`; zeros when `None`.
    pub initial: Option<&'a DMatrix<f64>>,
    /// Stop once the relative error drops below this value.
    pub threshold: Option<f64>,
    pub record_cost: bool,
}

impl<'a> RunConfig<'a> {
    pub fn new(
        algorithm: Algorithm,
        policy: &'a CombinationPolicy,
        steps: &'a StepSizeProfile,
        model: &'a dyn CostModel,
        max_iters: usize,
    ) -> Self {
        RunConfig {
            algorithm,
            policy,
            steps,
            model,
            max_iters,
            initial: None,
            threshold: None,
            record_cost: false,
        }
    }
}

/// Stateful driver for one algorithm; owns the derived matrices.
pub struct Stepper<'a> {
    config: RunConfig<'a>,
    combiner: Combiner,
    combiner_bar: Combiner,
    v: Option<DMatrix<f64>>,
    pub state: SolverState,
}

impl<'a> Stepper<'a> {
    pub fn new(config: RunConfig<'a>) -> Result<Self, SolverError> {
        let n = config.model.n_agents();
        if config.policy.len() != n || config.steps.mu.len() != n {
            return Err(SolverError::Dimension(format!(
                "policy over {} agents, {} step sizes, model over {n} agents",
                config.policy.len(),
                config.steps.mu.len()
            )));
        }
        let initial = match config.initial {
            Some(w) => w.clone(),
            None => DMatrix::zeros(n, config.model.dim()),
        };
        let mut state = SolverState::new(initial);
        if config.algorithm == Algorithm::ExactDiffusionAdaptive {
            state = state.with_learner(config.policy);
        }
        let v = match config.algorithm {
            Algorithm::PrimalDual => Some(square_root_v(config.policy)?),
            _ => None,
        };
        Ok(Stepper {
            combiner: Combiner::new(&config.policy.a),
            combiner_bar: Combiner::new(&config.policy.a_bar()),
            v,
            state,
            config,
        })
    }

    pub fn step(&mut self) -> Result<(), SolverError> {
        let RunConfig {
            algorithm,
            policy,
            steps,
            model,
            ..
        } = self.config;
        match algorithm {
            Algorithm::Diffusion => diffusion_step(&mut self.state, &self.combiner, &steps.mu, model),
            Algorithm::PenalizedIncremental => {
                penalized_incremental_step(&mut self.state, policy, steps, model, 1.0 / steps.beta)
            }
            Algorithm::ExactDiffusion => exact_diffusion_step(&mut self.state, &self.combiner_bar, &steps.mu, model),
            Algorithm::ExactDiffusionAdaptive => {
                // q_k = β μ_k p_k, so the limit steps q_k μ_o / p_k need μ_o = 1/β.
                exact_diffusion_adaptive_step(&mut self.state, &self.combiner_bar, &steps.q, 1.0 / steps.beta, model)
            }
            Algorithm::PrimalDual => {
                let v = self.v.as_ref().expect("V built for primal-dual runs");
                primal_dual_step(&mut self.state, policy, v, &steps.mu, model)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    /// `‖W_i − W°‖² / ‖W_0 − W°‖²`, index 0 is `W_0`.
    pub rel_error: Vec<f64>,
    /// `Σ_k q_k J_k(w_k)` per iteration, when requested.
    pub cost: Option<Vec<f64>>,
    /// Iteration at which the run was halted for divergence.
    pub diverged_at: Option<usize>,
    pub final_iterate: DMatrix<f64>,
}

impl Trajectory {
    pub fn final_error(&self) -> f64 {
        self.rel_error.last().copied().unwrap_or(f64::NAN)
    }

    /// Mean relative error over the final 10% of recorded iterations.
    pub fn plateau(&self) -> f64 {
        let n = self.rel_error.len();
        let tail = (n / 10).max(1);
        self.rel_error[n - tail..].iter().sum::<f64>() / tail as f64
    }

    /// First iteration whose relative error is below `level`.
    pub fn iterations_to(&self, level: f64) -> Option<usize> {
        self.rel_error.iter().position(|&e| e < level)
    }

    /// `iter,rel_error[,cost]` with a trailing comment line on divergence.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        match &self.cost {
            Some(_) => writeln!(out, "iter,rel_error,cost")?,
            None => writeln!(out, "iter,rel_error")?,
        }
        for (i, e) in self.rel_error.iter().enumerate() {
            match &self.cost {
                Some(cost) => writeln!(out, "{i},{e:.15e},{:.15e}", cost[i])?,
                None => writeln!(out, "{i},{e:.15e}")?,
            }
        }
        if let Some(at) = self.diverged_at {
            writeln!(out, "# diverged at iteration {at}")?;
        }
        Ok(())
    }
}

fn squared_distance(w: &DMatrix<f64>, reference: &DVector<f64>) -> f64 {
    w.row_iter()
        .map(|row| row.iter().zip(reference.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum()
}

fn stacked_cost(model: &dyn CostModel, q: &[f64], w: &DMatrix<f64>) -> f64 {
    (0..w.nrows())
        .map(|k| q[k] * model.value(k, &w.row(k).transpose()))
        .sum()
}

/// Runs `config.max_iters` iterations (or until the threshold), measuring
/// against `reference` replicated over every agent.
pub fn run(config: RunConfig<'_>, reference: &DVector<f64>) -> Result<Trajectory, SolverError> {
    if reference.len() != config.model.dim() {
        return Err(SolverError::Dimension(format!(
            "reference has {} entries, model dimension is {}",
            reference.len(),
            config.model.dim()
        )));
    }
    let mut stepper = Stepper::new(config)?;
    let mut rel_error = Vec::with_capacity(config.max_iters);
    let mut cost = config.record_cost.then(Vec::new);
    let mut baseline = None;
    let mut diverged_at = None;
    for i in 0..config.max_iters {
        if let Err(err) = stepper.step() {
            match err {
                SolverError::NonFinite(at) => {
                    diverged_at = Some(at);
                    break;
                }
                other => return Err(other),
            }
        }
        let dist = squared_distance(&stepper.state.w, reference);
        let base = *baseline.get_or_insert(dist);
        let e = if base > 0.0 { dist / base } else { 0.0 };
        rel_error.push(e);
        if let Some(c) = cost.as_mut() {
            c.push(stacked_cost(config.model, &config.steps.q, &stepper.state.w));
        }
        if !e.is_finite() || e > DIVERGENCE_THRESHOLD {
            diverged_at = Some(i);
            break;
        }
        if config.threshold.is_some_and(|t| e < t) {
            break;
        }
    }
    Ok(Trajectory {
        algorithm: config.algorithm,
        rel_error,
        cost,
        diverged_at,
        final_iterate: stepper.state.w,
    })
}

/// Consensus and optimality of a final iterate: the aggregate gradient
/// norm at the agents' mean, and the largest disagreement with agent 0.
pub fn optimality_gaps(model: &dyn CostModel, q: &[f64], w: &DMatrix<f64>) -> (f64, f64) {
    let n = w.nrows();
    let grad = (0..n).fold(DVector::zeros(w.ncols()), |acc, k| {
        acc + model.gradient(k, &w.row(k).transpose()) * q[k]
    });
    let spread = (0..n)
        .map(|k| (w.row(k) - w.row(0)).amax())
        .fold(0.0, f64::max);
    (grad.norm(), spread)
}

/// Value of the weighted aggregate at a single point, for reporting.
pub fn objective(model: &dyn CostModel, q: &[f64], w: &DVector<f64>) -> f64 {
    aggregate_value(model, q, w)
}
