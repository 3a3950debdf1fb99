//! Exact diffusion for decentralized optimization over left-stochastic
//! combination policies.
//!
//! Agents hold private costs `J_k` and cooperate to minimize the weighted
//! aggregate `Σ_k q_k J_k(w)`. Standard diffusion converges to a biased
//! neighborhood of the minimizer; exact diffusion adds a local correction
//! step that removes the bias whenever the policy is balanced.
//!
//! ```
//! use exdiff::{experiments, Algorithm, Rule};
//!
//! let setup = experiments::least_squares(Rule::Averaging, 0.01, 1).unwrap();
//! let traj = setup.run(Algorithm::ExactDiffusion, 200).unwrap();
//! assert!(traj.final_error() < traj.rel_error[0]);
//! ```

pub mod costs;
pub mod examples;
pub mod experiments;
pub mod network;
pub mod policy;
pub mod solver;
pub mod stability;

pub use costs::{CostError, CostModel, Dataset, DatasetFile, DiagonalQuadratic, LeastSquaresData, LogisticData};
pub use network::{Network, NetworkError, NetworkFile};
pub use policy::{
    build_policy, perron_power_iteration, square_root_v, validate_policy, verify_lemma_properties, CombinationPolicy,
    LemmaReport, PolicyError, PolicyFile, PolicyValidation, Rule, StepSizeProfile,
};
pub use solver::{run, Algorithm, RunConfig, SolverError, SolverState, Trajectory};
pub use stability::{
    build_error_dynamics, jury_stability_test, spectral_radius_excluding_one, sweep_rho, ErrorDynamics,
    JuryVerdict, StabilityError, StabilityReport,
};
