use std::path::PathBuf;

use clap::{Args, Subcommand};
use exdiff::experiments::{AGENTS, EDGE_PROB, NETWORK_SEED};
use exdiff::Network;
use serde::Deserialize;

use crate::config::{self, emit};
use crate::error::{Classify, CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum NetCommand {
    /// Generate a connected network and print it as JSON.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON config with the same keys as the long flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of agents.
    #[arg(long)]
    n: Option<usize>,
    /// Edge probability of the random graph.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Build the hub-and-leaf topology with this many hubs instead.
    #[arg(long)]
    hubs: Option<usize>,
    /// Leaf count for the hub topology (default n minus hubs).
    #[arg(long)]
    leaves: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenConfig {
    n: Option<usize>,
    p: Option<f64>,
    seed: Option<u64>,
    hubs: Option<usize>,
    leaves: Option<usize>,
    out: Option<PathBuf>,
}

pub fn run(command: NetCommand) -> CliResult<()> {
    let NetCommand::Gen(args) = command;
    let file: GenConfig = config::load(args.config.as_deref())?;
    let n = args.n.or(file.n).unwrap_or(AGENTS);
    let hubs = args.hubs.or(file.hubs);
    let leaves = args.leaves.or(file.leaves);
    let network = match hubs {
        Some(hubs) => {
            let leaves = match leaves {
                Some(l) => l,
                None => n
                    .checked_sub(hubs)
                    .ok_or_else(|| CliError::usage(format!("{hubs} hubs exceed {n} agents")))?,
            };
            if hubs == 0 {
                return Err(CliError::usage("need at least one hub"));
            }
            Network::unbalanced(hubs, leaves)
        }
        None => {
            if leaves.is_some() {
                return Err(CliError::usage("--leaves needs --hubs"));
            }
            let p = args.p.or(file.p).unwrap_or(EDGE_PROB);
            if n == 0 || !(p > 0.0 && p <= 1.0) {
                return Err(CliError::usage(format!("need n >= 1 and p in (0, 1], got n={n}, p={p}")));
            }
            Network::random(n, p, args.seed.or(file.seed).unwrap_or(NETWORK_SEED))
        }
    };
    let json = serde_json::to_string_pretty(&network.to_file()).invalid()?;
    emit(args.out.or(file.out).as_ref(), &(json + "\n"))
}
