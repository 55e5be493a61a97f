use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};

use irsbf_cli::bundle::SolutionBundle;
use irsbf_cli::figures::reproduce_figure;
use irsbf_cli::runner::experiment_files;
use irsbf_cli::spec::{ExperimentSpec, Scale};

#[derive(Parser)]
#[command(
    name = "irsbf",
    about = "Outage-constrained IRS beamforming experiments",
    version
)]
struct Cli {
    /// Worker threads; default uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment description file.
    Run {
        /// Path to the experiment JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for CSV, metadata and solution bundles.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Overrides the master seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reproduce a named figure's data series.
    Figure {
        #[arg(long)]
        name: String,
        /// Output directory; defaults to ./<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Re-check a solution bundle's outage with fresh randomness.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn write_files(out_dir: &Path, files: &[(String, String)]) -> anyhow::Result<()> {
    for (rel, contents) in files {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("setting up the worker pool")?;
    }
    match cli.command {
        Command::Run {
            spec,
            out,
            scale,
            seed,
        } => {
            let scale = Scale::parse(&scale)?;
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))?;
            let mut spec = ExperimentSpec::from_json(&text)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let files = experiment_files("run", &spec, scale, "")?;
            write_files(&out, &files)?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
        Command::Figure {
            name,
            out,
            scale,
            seed,
        } => {
            let scale = Scale::parse(&scale)?;
            let bundle = reproduce_figure(&name, scale, seed)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&name));
            write_files(&out, &bundle.files)?;
            println!("wrote {} files under {}", bundle.files.len(), out.display());
        }
        Command::Verify {
            bundle,
            samples,
            seed,
        } => {
            let text = std::fs::read_to_string(&bundle)
                .with_context(|| format!("reading {}", bundle.display()))?;
            let bundle = SolutionBundle::from_json(&text)?;
            let verdict = bundle.verify(samples, seed)?;
            for (i, (outage, stderr, allow)) in verdict.users.iter().enumerate() {
                println!("user {i}: outage {outage:.6} (stderr {stderr:.6}), allowed {allow:.6}");
            }
            println!("{}", if verdict.pass { "PASS" } else { "FAIL" });
            if !verdict.pass {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
