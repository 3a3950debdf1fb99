//! Ready-made problem instances shared by the CLI, benches and tests.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::costs::{CostError, CostModel, DiagonalQuadratic, LeastSquaresData, LogisticData};
use crate::examples::reference_setting;
use crate::network::Network;
use crate::policy::{build_policy, CombinationPolicy, PolicyError, Rule, StepSizeProfile};
use crate::solver::{run, Algorithm, RunConfig, SolverError, Trajectory};

pub const AGENTS: usize = 20;
pub const LS_DIM: usize = 30;
pub const LS_SAMPLES: usize = 50;
pub const LOGISTIC_DIM: usize = 30;
pub const LOGISTIC_SAMPLES: usize = 50;
pub const LOGISTIC_RHO: f64 = 0.1;
pub const EDGE_PROB: f64 = 0.4;
pub const NETWORK_SEED: u64 = 7;
pub const DATA_SEED: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("unknown reference setting {0}")]
    UnknownSetting(u8),
}

/// A network, a policy with its step sizes, a cost model and the point the
/// iterates should reach.
#[derive(Debug, Clone)]
pub struct Setup<C> {
    pub network: Option<Network>,
    pub policy: CombinationPolicy,
    pub steps: StepSizeProfile,
    pub model: C,
    pub reference: DVector<f64>,
}

impl<C: CostModel> Setup<C> {
    pub fn new(network: Network, rule: Rule, q: &[f64], mu_o: f64, model: C) -> Result<Self, ExperimentError> {
        let (policy, steps) = build_policy(&network, rule, q, mu_o)?;
        let reference = model.global_minimizer(q)?;
        Ok(Setup {
            network: Some(network),
            policy,
            steps,
            model,
            reference,
        })
    }

    pub fn config(&self, algorithm: Algorithm, max_iters: usize) -> RunConfig<'_> {
        RunConfig::new(algorithm, &self.policy, &self.steps, &self.model, max_iters)
    }

    pub fn run(&self, algorithm: Algorithm, max_iters: usize) -> Result<Trajectory, SolverError> {
        run(self.config(algorithm, max_iters), &self.reference)
    }

    pub fn run_until(&self, algorithm: Algorithm, max_iters: usize, threshold: f64) -> Result<Trajectory, SolverError> {
        let config = RunConfig {
            threshold: Some(threshold),
            ..self.config(algorithm, max_iters)
        };
        run(config, &self.reference)
    }

    /// Same network, rule and model with a different `μ_o`.
    pub fn with_step(&self, mu_o: f64) -> Result<Self, ExperimentError>
    where
        C: Clone,
    {
        let network = self.network.clone().ok_or(PolicyError::NoClosedForm(self.policy.rule))?;
        let (policy, steps) = build_policy(&network, self.policy.rule, &self.steps.q, mu_o)?;
        Ok(Setup {
            network: Some(network),
            policy,
            steps,
            model: self.model.clone(),
            reference: self.reference.clone(),
        })
    }
}

/// Seeded random network used by the least-squares and logistic runs.
pub fn default_network() -> Network {
    Network::random(AGENTS, EDGE_PROB, NETWORK_SEED)
}

/// Least squares over the default network with uniform weights.
pub fn least_squares(rule: Rule, mu_o: f64, seed: u64) -> Result<Setup<LeastSquaresData>, ExperimentError> {
    let model = LeastSquaresData::generate(AGENTS, LS_DIM, LS_SAMPLES, seed);
    Setup::new(default_network(), rule, &[1.0; AGENTS], mu_o, model)
}

/// Regularized logistic regression over the default network.
pub fn logistic(rule: Rule, mu_o: f64, seed: u64) -> Result<Setup<LogisticData>, ExperimentError> {
    let model = LogisticData::generate(AGENTS, LOGISTIC_DIM, LOGISTIC_SAMPLES, LOGISTIC_RHO, seed)?;
    Setup::new(default_network(), rule, &[1.0; AGENTS], mu_o, model)
}

/// Least squares over the two-hub, eighteen-leaf topology.
pub fn unbalanced(rule: Rule, mu_o: f64, seed: u64) -> Result<Setup<LeastSquaresData>, ExperimentError> {
    let model = LeastSquaresData::generate(AGENTS, LS_DIM, LS_SAMPLES, seed);
    Setup::new(Network::unbalanced(2, AGENTS - 2), rule, &[1.0; AGENTS], mu_o, model)
}

/// Scalar quadratic realizing a reference setting: with `h_k = p_k d_k` and
/// `μ_k = μ/p_k`, every agent's linearized step is `μ d_k`, i.e. the
/// analyzed `D = P⁻¹H`. Targets are `t_k = k + 1` so the minimizer is not
/// a fixed point of the combination alone.
pub fn reference_quadratic(id: u8, mu: f64) -> Result<Setup<DiagonalQuadratic>, ExperimentError> {
    let (a, d) = reference_setting(id).ok_or(ExperimentError::UnknownSetting(id))?;
    let policy = CombinationPolicy::from_matrix(a, None)?;
    let n = policy.len();
    let q = vec![1.0; n];
    let steps = StepSizeProfile::from_perron(&policy.perron, &q, mu)?;
    let h: Vec<f64> = (0..n).map(|k| policy.perron[k] * d[k]).collect();
    let targets: Vec<f64> = (0..n).map(|k| (k + 1) as f64).collect();
    let model = DiagonalQuadratic::scalar(&h, &targets)?;
    let reference = model.global_minimizer(&q)?;
    Ok(Setup {
        network: None,
        policy,
        steps,
        model,
        reference,
    })
}

/// Outcome of tuning one rule over a step-size grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub rule: Rule,
    /// Largest per-agent step at the best grid point.
    pub mu_max: f64,
    pub mu_o: f64,
    /// Iterations to reach the level, `None` if no grid point did.
    pub iterations: Option<usize>,
}

/// Runs `algorithm` at every `μ_max` of `grid` (converted to the rule's
/// `μ_o`) and keeps the one that first reaches `level`.
pub fn tune<C, F>(
    make: F,
    rule: Rule,
    algorithm: Algorithm,
    grid: &[f64],
    level: f64,
    max_iters: usize,
) -> Result<Tuning, ExperimentError>
where
    C: CostModel + Send,
    F: Fn(Rule, f64) -> Result<Setup<C>, ExperimentError> + Sync,
{
    // Step sizes are linear in μ_o, so one unit build gives the conversion.
    let unit = make(rule, 1.0)?.steps.mu_max();
    let results = grid
        .par_iter()
        .map(|&mu_max| {
            let mu_o = mu_max / unit;
            let traj = make(rule, mu_o)?.run_until(algorithm, max_iters, level)?;
            let hit = traj.iterations_to(level).filter(|_| traj.diverged_at.is_none());
            Ok((mu_max, mu_o, hit))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let best = results
        .iter()
        .filter_map(|&(m, o, hit)| hit.map(|h| (m, o, h)))
        .min_by_key(|&(_, _, h)| h);
    Ok(match best {
        Some((mu_max, mu_o, h)) => Tuning {
            rule,
            mu_max,
            mu_o,
            iterations: Some(h),
        },
        None => Tuning {
            rule,
            mu_max: f64::NAN,
            mu_o: f64::NAN,
            iterations: None,
        },
    })
}
