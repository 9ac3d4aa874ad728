use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compfda_core::pipeline::{self, PipelineConfig, SexSelection, Stage, StageError, StageReport};
use compfda_core::smoothing::Lambda;
use compfda_core::{synth, Error};

/// Compositional functional PCA and spectral clustering of cause-of-death curves.
#[derive(Parser)]
#[command(name = "compfda", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Pipeline configuration (TOML); paths inside are relative to the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["men", "women", "both"])]
    sex: Option<String>,
    /// Components kept for scores and clustering.
    #[arg(short = 'k', long, global = true)]
    components: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Clustering repetitions for the majority vote.
    #[arg(short = 'b', long, global = true)]
    repetitions: Option<usize>,
    #[arg(long, global = true)]
    g_min: Option<usize>,
    #[arg(long, global = true)]
    g_max: Option<usize>,
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    #[arg(long, global = true)]
    silhouette_literal: bool,
    #[arg(long, global = true)]
    silhouette_unsquared: bool,
    /// Smoothing parameter: a number or `gcv`.
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    basis_dimension: Option<usize>,
    #[arg(long, global = true)]
    penalty_order: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and classify death records into raw compositions.
    Ingest,
    /// Smooth raw compositions and impute missing years.
    Smooth {
        #[arg(long, requires = "out")]
        input: Option<PathBuf>,
        #[arg(long, requires = "input")]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean, eigen system and scores.
    Pca {
        /// Compositions CSV (`id,part,year,value`) for a single sample.
        #[arg(long, requires = "out")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Majority-vote spectral clustering of the scores.
    Cluster {
        /// Scores CSV (`id,component,score`) for a single sample.
        #[arg(long, requires = "out")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG figures.
    Plot {
        /// Sample directory holding pca (and cluster) outputs.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Every stage in order.
    All,
    /// Write the bundled synthetic fixture and its configs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        fixture_repetitions: usize,
    },
}

fn load_config(o: &Overrides) -> Result<PipelineConfig, Error> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::from_path(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &o.output {
        cfg.paths.output = v.clone();
    }
    if let Some(v) = &o.sex {
        cfg.sex = v.parse::<SexSelection>()?;
    }
    if let Some(v) = o.components {
        cfg.pca.components = v;
    }
    let c = &mut cfg.clustering;
    if let Some(v) = o.sigma {
        c.sigma = v;
    }
    if let Some(v) = o.repetitions {
        c.repetitions = v;
    }
    if let Some(v) = o.g_min {
        c.g_min = v;
    }
    if let Some(v) = o.g_max {
        c.g_max = v;
    }
    if let Some(v) = o.master_seed {
        c.master_seed = v;
    }
    c.silhouette_literal |= o.silhouette_literal;
    c.silhouette_unsquared |= o.silhouette_unsquared;
    if let Some(v) = &o.lambda {
        cfg.smoothing.lambda = if v.eq_ignore_ascii_case("gcv") {
            Lambda::Gcv
        } else {
            Lambda::Fixed(v.parse().map_err(|_| Error::Config(format!("lambda `{v}` is not a number")))?)
        };
    }
    if let Some(v) = o.basis_dimension {
        cfg.smoothing.basis_dimension = v;
    }
    if let Some(v) = o.penalty_order {
        cfg.smoothing.penalty_order = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a single-sample stage writing into `out`, then records its manifest.
fn single(
    stage: Stage,
    out: &Path,
    cfg: &PipelineConfig,
    f: impl FnOnce() -> Result<StageReport, Error>,
) -> Result<Vec<StageReport>, StageError> {
    let tag = |error| StageError { stage, error };
    let report = f().map_err(tag)?;
    pipeline::finish_stage(out, stage, &report, cfg).map_err(tag)?;
    Ok(vec![report])
}

fn run(cli: &Cli) -> Result<Vec<StageReport>, StageError> {
    let stage_of = |c: &Command| match c {
        Command::Ingest | Command::All | Command::Synth { .. } => Stage::Ingest,
        Command::Smooth { .. } => Stage::Smooth,
        Command::Pca { .. } => Stage::Pca,
        Command::Cluster { .. } => Stage::Cluster,
        Command::Plot { .. } => Stage::Plot,
    };
    if let Command::Synth { out, seed, fixture_repetitions } = &cli.command {
        let path = synth::write_fixture(out, *seed, *fixture_repetitions)
            .map_err(|error| StageError { stage: Stage::Ingest, error })?;
        println!("wrote {}", path.display());
        return Ok(vec![]);
    }
    let cfg =
        load_config(&cli.overrides).map_err(|error| StageError { stage: stage_of(&cli.command), error })?;
    match &cli.command {
        Command::Ingest => pipeline::run_stage(&cfg, Stage::Ingest).map(|r| vec![r]),
        Command::All => pipeline::run_all(&cfg),
        Command::Smooth { input: Some(input), mask, out: Some(out) } => {
            single(Stage::Smooth, out, &cfg, || pipeline::smooth_sample(input, mask.as_deref(), out, &cfg))
        }
        Command::Smooth { .. } => pipeline::run_stage(&cfg, Stage::Smooth).map(|r| vec![r]),
        Command::Pca { input: Some(input), out: Some(out) } => {
            single(Stage::Pca, out, &cfg, || pipeline::pca_sample(input, out, &cfg))
        }
        Command::Pca { .. } => pipeline::run_stage(&cfg, Stage::Pca).map(|r| vec![r]),
        Command::Cluster { input: Some(input), out: Some(out) } => {
            single(Stage::Cluster, out, &cfg, || pipeline::cluster_sample(input, out, &cfg, None))
        }
        Command::Cluster { .. } => pipeline::run_stage(&cfg, Stage::Cluster).map(|r| vec![r]),
        Command::Plot { dir: Some(dir) } => {
            single(Stage::Plot, dir, &cfg, || pipeline::plot_sample(dir, &cfg, "sample"))
        }
        Command::Plot { dir: None } => pipeline::run_stage(&cfg, Stage::Plot).map(|r| vec![r]),
        Command::Synth { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(reports) => {
            for r in &reports {
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
                for p in &r.written {
                    println!("wrote {}", p.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.kind();
            let report = serde_json::json!({
                "stage": e.stage.name(),
                "kind": format!("{kind:?}").to_lowercase(),
                "exit_code": kind.exit_code(),
                "message": e.error.to_string(),
            });
            eprintln!("error: {e}");
            eprintln!("{report}");
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
