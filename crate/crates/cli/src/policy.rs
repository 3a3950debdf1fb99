use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use exdiff::{
    build_policy, validate_policy, verify_lemma_properties, CombinationPolicy, LemmaReport, Network,
    PolicyFile, PolicyValidation, Rule, StepSizeProfile,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, emit, OneOrMany};
use crate::error::{Classify, CliError, CliResult};

/// Build a policy from a network and rule, or load a custom matrix, and
/// validate it.
#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// JSON config with the same keys as the long flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network JSON to build the policy on.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Custom policy JSON `{"A": [[...]], "p": [...]}`.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// hastings, averaging, relative_degree, metropolis or max_degree.
    #[arg(long)]
    rule: Option<Rule>,
    /// Step-size scale.
    #[arg(long)]
    mu_o: Option<f64>,
    /// Comma-separated agent weights (default all ones).
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
    /// Tolerance for the stochasticity and balance checks.
    #[arg(long)]
    tol: Option<f64>,
    /// Also run the structural checks; any failure is a validation failure.
    #[arg(long)]
    check: bool,
    /// Write the policy as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyConfig {
    net: Option<PathBuf>,
    matrix: Option<PathBuf>,
    rule: Option<Rule>,
    mu_o: Option<f64>,
    q: Option<OneOrMany<f64>>,
    tol: Option<f64>,
    check: Option<bool>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PolicyReport {
    rule: Rule,
    agents: usize,
    valid: bool,
    validation: PolicyValidation,
    perron: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<StepSizeProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemmas: Option<LemmaReport>,
}

/// Returns whether the policy passed validation.
pub fn run(args: PolicyArgs) -> CliResult<bool> {
    let file: PolicyConfig = config::load(args.config.as_deref())?;
    // A source given on the command line replaces either source from the file.
    let (net, matrix) = if args.net.is_some() || args.matrix.is_some() {
        (args.net, args.matrix)
    } else {
        (file.net, file.matrix)
    };
    let rule = args.rule.or(file.rule);
    let mu_o = args.mu_o.or(file.mu_o).unwrap_or(0.01);
    let q = args.q.or(file.q.map(OneOrMany::into_vec));
    let tol = args.tol.or(file.tol).unwrap_or(1e-10);
    let check = args.check || file.check.unwrap_or(false);
    let out = args.out.or(file.out);
    if !(tol > 0.0) {
        return Err(CliError::usage(format!("tolerance must be positive, got {tol}")));
    }

    let (policy, steps) = match (net, matrix) {
        (Some(_), Some(_)) => return Err(CliError::usage("give either --net or --matrix, not both")),
        (None, None) => return Err(CliError::usage("a policy needs --net or --matrix")),
        (Some(path), None) => {
            let network = Network::load(&path)
                .with_context(|| format!("loading network {}", path.display()))
                .invalid()?;
            let rule = rule.unwrap_or(Rule::Averaging);
            if rule == Rule::Custom {
                return Err(CliError::usage("the custom rule needs --matrix"));
            }
            let q = q.unwrap_or_else(|| vec![1.0; network.len()]);
            let (policy, steps) = build_policy(&network, rule, &q, mu_o).invalid()?;
            (policy, Some(steps))
        }
        (None, Some(path)) => {
            if rule.is_some_and(|r| r != Rule::Custom) {
                return Err(CliError::usage("--rule does not apply to a custom matrix"));
            }
            if q.is_some() {
                return Err(CliError::usage("--q does not apply to a custom matrix"));
            }
            let policy = CombinationPolicy::load(&path)
                .with_context(|| format!("loading policy {}", path.display()))
                .invalid()?;
            (policy, None)
        }
    };

    let validation = validate_policy(&policy, tol).invalid()?;
    let lemmas = check.then(|| verify_lemma_properties(&policy));
    let valid = validation.is_valid() && lemmas.as_ref().is_none_or(LemmaReport::all_passed);
    if let Some(path) = &out {
        let json = serde_json::to_string_pretty(&PolicyFile::from_policy(&policy)).invalid()?;
        emit(Some(path), &(json + "\n"))?;
    }
    let report = PolicyReport {
        rule: policy.rule,
        agents: policy.len(),
        valid,
        validation,
        perron: policy.perron.iter().copied().collect(),
        steps,
        lemmas,
    };
    let json = serde_json::to_string_pretty(&report).invalid()?;
    emit(None, &(json + "\n"))?;
    Ok(valid)
}
