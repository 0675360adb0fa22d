//! Command-line driver: configuration loading, subcommand dispatch and
//! output manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use commands::certificate_proposals;
pub use config::{load_config, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "snls", version, about = "Stochastic NLS simulation, rate certificates and rare-event estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generic override `block.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One stochastic (or, at eps = 0, deterministic) run.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Controlled noiseless run.
    Skeleton {
        #[command(flatten)]
        common: Common,
        /// Use the control that cancels the cubic nonlinearity on [0, 2T].
        #[arg(long)]
        cancel_control: bool,
        /// Control file written by `rate` or `skeleton`.
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Rate-function upper bound for the configured event.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Naive or importance-sampling probability estimates.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N")]
        n: Option<usize>,
        /// naive, is or ldp.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Empirical check of the stochastic-convolution tail bounds.
    Tails {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N")]
        n: Option<usize>,
    },
    /// Blow-up time and its small-noise tails.
    Blowup {
        #[command(flatten)]
        common: Common,
        /// time, before, after or non_rare.
        #[arg(long)]
        mode: Option<String>,
    },
}

fn quoted(s: &str) -> String {
    format!("{:?}", s)
}

impl Command {
    fn parts(&self) -> (&'static str, &Common, Vec<String>, commands::Extra) {
        let mut sets = Vec::new();
        let mut extra = commands::Extra::default();
        let (name, common) = match self {
            Command::Simulate { common, eps, horizon } => {
                if let Some(e) = eps {
                    sets.push(format!("sim.eps={e:?}"));
                }
                if let Some(t) = horizon {
                    sets.push(format!("sim.T={t:?}"));
                }
                ("simulate", common)
            }
            Command::Skeleton { common, cancel_control, control } => {
                if *cancel_control {
                    sets.push("skeleton.cancel_control=true".into());
                }
                extra.control = control.clone();
                ("skeleton", common)
            }
            Command::Rate { common, warm_start } => {
                extra.warm_start = warm_start.clone();
                ("rate", common)
            }
            Command::Mc { common, n, method, eps } => {
                if let Some(n) = n {
                    sets.push(format!("mc.N={n}"));
                }
                if let Some(m) = method {
                    sets.push(format!("mc.method={}", quoted(m)));
                }
                if let Some(e) = eps {
                    sets.push(format!("sim.eps={e:?}"));
                }
                ("mc", common)
            }
            Command::Tails { common, n } => {
                if let Some(n) = n {
                    sets.push(format!("tails.N={n}"));
                }
                ("tails", common)
            }
            Command::Blowup { common, mode } => {
                if let Some(m) = mode {
                    sets.push(format!("blowup.mode={}", quoted(m)));
                }
                ("blowup", common)
            }
        };
        if let Some(s) = common.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(w) = common.workers {
            sets.push(format!("workers={w}"));
        }
        // generic overrides win over the flag shortcuts
        let mut all = sets;
        all.extend(common.set.iter().cloned());
        (name, common, all, extra)
    }
}

/// Runs one subcommand; returns the manifest path.
pub fn run(cmd: &Command) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let (name, common, sets, extra) = cmd.parts();
    let (cfg, base) = load_config(&common.config, &sets)?;
    let out_dir = common.out.clone().unwrap_or_else(|| base.join(&cfg.output_dir));
    let echo = cfg.echo();
    let workers = cfg.workers;
    let seed = cfg.seed;
    let mut out = output::Outputs::create(&out_dir)?;
    let result = (|| {
        let ctx = commands::Context::new(cfg, &base, extra)?;
        match name {
            "simulate" => commands::simulate_cmd(&ctx, &mut out),
            "skeleton" => commands::skeleton_cmd(&ctx, &mut out),
            "rate" => commands::rate_cmd(&ctx, &mut out, workers),
            "mc" => commands::mc_cmd(&ctx, &mut out, workers),
            "tails" => commands::tails_cmd(&ctx, &mut out, workers),
            "blowup" => commands::blowup_cmd(&ctx, &mut out, workers),
            _ => unreachable!("clap restricts subcommands"),
        }
    })();
    match result {
        Ok(()) => out.finish(name, &echo, seed, workers, start.elapsed().as_secs_f64()),
        Err(e) => {
            let _ = std::fs::write(
                out.dir().join("error.json"),
                serde_json::to_string_pretty(&e.to_json()).unwrap_or_default(),
            );
            Err(e)
        }
    }
}

/// Output directory a command would use, for error reporting before parsing succeeds.
pub fn requested_out(cmd: &Command) -> Option<PathBuf> {
    cmd.parts().1.out.clone()
}
