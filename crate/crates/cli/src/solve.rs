use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use exdiff::experiments::{
    AGENTS, DATA_SEED, EDGE_PROB, LOGISTIC_DIM, LOGISTIC_RHO, LOGISTIC_SAMPLES, LS_DIM, LS_SAMPLES, NETWORK_SEED,
};
use exdiff::{
    build_policy, run as run_solver, Algorithm, Dataset, LeastSquaresData, LogisticData, Network, Rule,
    RunConfig, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, emit, OneOrMany};
use crate::error::{Classify, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Seeded Erdős–Rényi graph, augmented to be connected.
    Random,
    /// A few hubs linked to each other and to every leaf.
    Unbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Least squares.
    Ls,
    /// L2-regularized logistic regression.
    Logistic,
}

/// Run solvers and write one relative-error CSV per algorithm and step size.
#[derive(Debug, Args)]
pub struct SolveArgs {
    /// JSON config with the same keys as the long flags (snake_case).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network JSON; replaces the generator.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    topology: Option<Topology>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    edge_prob: Option<f64>,
    #[arg(long)]
    net_seed: Option<u64>,
    /// Hub count for the unbalanced topology.
    #[arg(long)]
    hubs: Option<usize>,
    #[arg(long)]
    rule: Option<Rule>,
    /// Comma-separated agent weights (default all ones).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    cost: Option<CostKind>,
    /// Dataset JSON; replaces generated data.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Regularization weight of the logistic cost.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Write the dataset used to this path.
    #[arg(long)]
    dump_dataset: Option<PathBuf>,
    /// Comma-separated list, e.g. diffusion,exact_diffusion.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    /// Comma-separated step-size scales.
    #[arg(long, value_delimiter = ',')]
    mu_o: Option<Vec<f64>>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop a run once the relative error falls below this level.
    #[arg(long)]
    threshold: Option<f64>,
    /// Add a `cost` column with the weighted aggregate cost.
    #[arg(long)]
    record_cost: bool,
    /// Output prefix; files are `<out>_<algorithm>_mu<mu_o>.csv`.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    net: Option<PathBuf>,
    topology: Option<Topology>,
    agents: Option<usize>,
    edge_prob: Option<f64>,
    net_seed: Option<u64>,
    hubs: Option<usize>,
    rule: Option<Rule>,
    weights: Option<OneOrMany<f64>>,
    cost: Option<CostKind>,
    dataset: Option<PathBuf>,
    dim: Option<usize>,
    samples: Option<usize>,
    rho: Option<f64>,
    data_seed: Option<u64>,
    dump_dataset: Option<PathBuf>,
    algorithms: Option<OneOrMany<Algorithm>>,
    mu_o: Option<OneOrMany<f64>>,
    max_iters: Option<usize>,
    threshold: Option<f64>,
    record_cost: Option<bool>,
    out: Option<String>,
}

#[derive(Serialize)]
struct RunSummary {
    algorithm: Algorithm,
    mu_o: f64,
    mu_max: f64,
    file: String,
    iterations: usize,
    final_error: f64,
    plateau: f64,
    diverged_at: Option<usize>,
}

#[derive(Serialize)]
struct SolveSummary {
    agents: usize,
    edges: usize,
    rule: Rule,
    dim: usize,
    runs: Vec<RunSummary>,
}

enum NetworkSource {
    File(PathBuf),
    Generated {
        topology: Topology,
        agents: usize,
        edge_prob: f64,
        seed: u64,
        hubs: usize,
    },
}

fn network_source(args: &SolveArgs, file: &SolveConfig) -> NetworkSource {
    let generator_flags = args.topology.is_some()
        || args.agents.is_some()
        || args.edge_prob.is_some()
        || args.net_seed.is_some()
        || args.hubs.is_some();
    let path = args.net.clone().or(if generator_flags { None } else { file.net.clone() });
    match path {
        Some(path) => NetworkSource::File(path),
        None => NetworkSource::Generated {
            topology: args.topology.or(file.topology).unwrap_or(Topology::Random),
            agents: args.agents.or(file.agents).unwrap_or(AGENTS),
            edge_prob: args.edge_prob.or(file.edge_prob).unwrap_or(EDGE_PROB),
            seed: args.net_seed.or(file.net_seed).unwrap_or(NETWORK_SEED),
            hubs: args.hubs.or(file.hubs).unwrap_or(2),
        },
    }
}

fn build_network(source: NetworkSource) -> CliResult<Network> {
    match source {
        NetworkSource::File(path) => Network::load(&path)
            .with_context(|| format!("loading network {}", path.display()))
            .invalid(),
        NetworkSource::Generated {
            topology,
            agents,
            edge_prob,
            seed,
            hubs,
        } => {
            if agents == 0 {
                return Err(CliError::usage("agents must be at least 1"));
            }
            match topology {
                Topology::Random => {
                    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                        return Err(CliError::usage(format!("edge_prob must lie in (0, 1], got {edge_prob}")));
                    }
                    Ok(Network::random(agents, edge_prob, seed))
                }
                Topology::Unbalanced => {
                    if hubs == 0 || hubs >= agents {
                        return Err(CliError::usage(format!("need 1 <= hubs < agents, got {hubs} of {agents}")));
                    }
                    Ok(Network::unbalanced(hubs, agents - hubs))
                }
            }
        }
    }
}

fn csv_path(prefix: &str, algorithm: Algorithm, mu_o: f64) -> String {
    format!("{prefix}_{}_mu{mu_o}.csv", algorithm.name())
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: SolveArgs) -> CliResult<()> {
    let file: SolveConfig = config::load(args.config.as_deref())?;
    let network = build_network(network_source(&args, &file))?;
    let n = network.len();
    let rule = args.rule.or(file.rule).unwrap_or(Rule::Averaging);
    if rule == Rule::Custom {
        return Err(CliError::usage("solve needs a built-in rule"));
    }
    let q = args
        .weights
        .or(file.weights.map(OneOrMany::into_vec))
        .unwrap_or_else(|| vec![1.0; n]);
    let cost = args.cost.or(file.cost).unwrap_or(CostKind::Ls);
    let algorithms = args
        .algorithms
        .or(file.algorithms.map(OneOrMany::into_vec))
        .unwrap_or_else(|| vec![Algorithm::Diffusion, Algorithm::ExactDiffusion]);
    let mus = args
        .mu_o
        .or(file.mu_o.map(OneOrMany::into_vec))
        .unwrap_or_else(|| vec![0.01]);
    let max_iters = args.max_iters.or(file.max_iters).unwrap_or(1000);
    let threshold = args.threshold.or(file.threshold);
    let record_cost = args.record_cost || file.record_cost.unwrap_or(false);
    let prefix = args.out.or(file.out).unwrap_or_else(|| "exdiff".into());

    if algorithms.is_empty() || mus.is_empty() {
        return Err(CliError::usage("need at least one algorithm and one mu_o"));
    }
    if algorithms.iter().collect::<HashSet<_>>().len() != algorithms.len()
        || mus.iter().map(|m| m.to_bits()).collect::<HashSet<_>>().len() != mus.len()
    {
        return Err(CliError::usage("algorithms and mu_o values must be distinct"));
    }
    if let Some(bad) = mus.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(CliError::usage(format!("mu_o must be positive and finite, got {bad}")));
    }
    if max_iters == 0 {
        return Err(CliError::usage("max_iters must be at least 1"));
    }

    let dataset = match args.dataset.or(file.dataset) {
        Some(path) => Dataset::load(&path)
            .with_context(|| format!("loading dataset {}", path.display()))
            .invalid()?,
        None => {
            let seed = args.data_seed.or(file.data_seed).unwrap_or(DATA_SEED);
            match cost {
                CostKind::Ls => {
                    let dim = args.dim.or(file.dim).unwrap_or(LS_DIM);
                    let samples = args.samples.or(file.samples).unwrap_or(LS_SAMPLES);
                    if dim == 0 || samples == 0 {
                        return Err(CliError::usage("dim and samples must be at least 1"));
                    }
                    Dataset::LeastSquares(LeastSquaresData::generate(n, dim, samples, seed))
                }
                CostKind::Logistic => {
                    let dim = args.dim.or(file.dim).unwrap_or(LOGISTIC_DIM);
                    let samples = args.samples.or(file.samples).unwrap_or(LOGISTIC_SAMPLES);
                    let rho = args.rho.or(file.rho).unwrap_or(LOGISTIC_RHO);
                    Dataset::Logistic(LogisticData::generate(n, dim, samples, rho, seed).usage()?)
                }
            }
        }
    };
    if let Some(path) = args.dump_dataset.or(file.dump_dataset) {
        dataset
            .save(&path)
            .with_context(|| format!("writing dataset {}", path.display()))
            .invalid()?;
    }
    let model = dataset.model();
    if model.n_agents() != n {
        return Err(CliError::Invalid(anyhow::anyhow!(
            "dataset covers {} agents, network has {n}",
            model.n_agents()
        )));
    }
    let reference = model.global_minimizer(&q).invalid()?;
    let profiles = mus
        .iter()
        .map(|&mu_o| build_policy(&network, rule, &q, mu_o))
        .collect::<Result<Vec<_>, _>>()
        .invalid()?;
    if let Some(parent) = Path::new(&prefix).parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .invalid()?;
    }

    let jobs: Vec<(Algorithm, usize)> = algorithms
        .iter()
        .flat_map(|&alg| (0..mus.len()).map(move |j| (alg, j)))
        .collect();
    // Each job owns its output path, so the writes never collide.
    let results: Vec<anyhow::Result<RunSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(algorithm, j)| {
                let (policy, steps) = &profiles[j];
                let (dataset, reference, prefix, mu_o) = (&dataset, &reference, &prefix, mus[j]);
                scope.spawn(move || {
                    let config = RunConfig {
                        threshold,
                        record_cost,
                        ..RunConfig::new(algorithm, policy, steps, dataset.model(), max_iters)
                    };
                    let traj = run_solver(config, reference)?;
                    let file = csv_path(prefix, algorithm, mu_o);
                    write_trajectory(Path::new(&file), &traj)?;
                    Ok(RunSummary {
                        algorithm,
                        mu_o,
                        mu_max: steps.mu_max(),
                        file,
                        iterations: traj.rel_error.len(),
                        final_error: traj.final_error(),
                        plateau: traj.plateau(),
                        diverged_at: traj.diverged_at,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("solver thread panicked"))))
            .collect()
    });
    let runs = results.into_iter().collect::<anyhow::Result<Vec<_>>>().invalid()?;
    let summary = SolveSummary {
        agents: n,
        edges: network.edge_count(),
        rule,
        dim: model.dim(),
        runs,
    };
    let json = serde_json::to_string_pretty(&summary).invalid()?;
    emit(None, &(json + "\n"))
}
