use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use loadsurrogate::eval::EvalOptions;
use loadsurrogate::pipeline::{self, ModelKind, PipelineError, RunConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "loadsurrogate",
    version,
    about = "Synthetic smart-meter load profiles and their evaluation"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "loadsurrogate.toml")]
    config: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenModel {
    Hmm,
    Mabf,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the raw data directory and copy it into the run directory.
    Ingest,
    /// Apply the cleaning rules.
    Clean,
    /// Assign consumer types from typical weeks.
    Typify,
    /// Train the per-type HMMs.
    TrainHmm {
        /// Train only this consumer type.
        #[arg(long)]
        cluster: Option<usize>,
    },
    /// Train the flow model.
    TrainMabf,
    /// Generate surrogates.
    Generate {
        #[arg(long, value_enum, default_value = "all")]
        model: GenModel,
        /// Calendar year to generate instead of each sensor's test year.
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the standard load profile to every real test year.
    ScaleSlp,
    /// Score surrogates against real profiles. Without `--real` this
    /// evaluates the run described by the config.
    Evaluate {
        #[arg(long, requires = "synth")]
        real: Option<PathBuf>,
        /// Surrogate directory, optionally as `name=dir`; repeatable.
        #[arg(long)]
        synth: Vec<String>,
        /// CSV `synth_id,real_id`.
        #[arg(long)]
        pairing: Option<PathBuf>,
        /// CSV `sensor_id,cluster_id` for the real profiles.
        #[arg(long)]
        assignments: Option<PathBuf>,
        /// Output directory for standalone evaluation.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Match real and synthetic days.
    Match,
    /// Index the report files.
    Report,
    /// Run every enabled stage.
    Run,
    /// Write the bundled reference dataset and a config for it.
    Reference {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn load(path: &Path) -> Result<RunConfig, PipelineError> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn synth_arg(s: &str) -> (String, PathBuf) {
    match s.split_once('=') {
        Some((name, dir)) => (name.to_string(), PathBuf::from(dir)),
        None => {
            let dir = PathBuf::from(s);
            let name = dir
                .file_name()
                .map_or("synth".into(), |n| n.to_string_lossy().into_owned());
            (name, dir)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!(PipelineError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Reference { out, seed } => {
            let data = out.join("data");
            pipeline::write_reference_dataset(&data, seed)
                .with_context(|| format!("writing the reference dataset to {}", data.display()))?;
            let cfg = RunConfig::reference(seed, "data", "run");
            let path = out.join("loadsurrogate.toml");
            std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} and {}", data.display(), path.display());
        }
        Command::Evaluate {
            real: Some(real),
            synth,
            pairing,
            assignments,
            out,
        } => {
            let sets: Vec<(String, PathBuf)> = synth.iter().map(|s| synth_arg(s)).collect();
            let report = pipeline::evaluate_dirs(
                &real,
                &sets,
                pairing.as_deref(),
                assignments.as_deref(),
                &EvalOptions::default(),
                &out,
            )?;
            println!("evaluated {} pairs into {}", report.pairs.len(), out.display());
        }
        command => {
            let mut cfg = load(&cli.config)?;
            match command {
                Command::Ingest => println!("ingested {} profiles", pipeline::ingest(&cfg)?),
                Command::Clean => println!("kept {} profiles", pipeline::clean(&cfg)?),
                Command::Typify => {
                    let a = pipeline::typify(&cfg)?;
                    println!("typed {} profiles into {} clusters", a.len(), cfg.typing.k);
                }
                Command::TrainHmm { cluster } => pipeline::train_hmm(&cfg, cluster)?,
                Command::TrainMabf => {
                    let m = pipeline::train_mabf(&cfg)?;
                    if let Some(v) = m.val_trace.last() {
                        println!("validation NLL per step {v:.4}");
                    }
                }
                Command::Generate { model, year, seed } => {
                    if year.is_some() {
                        cfg.generate.year = year;
                    }
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    let kinds: &[ModelKind] = match model {
                        GenModel::Hmm => &[ModelKind::Hmm],
                        GenModel::Mabf => &[ModelKind::Mabf],
                        GenModel::All => &[ModelKind::Hmm, ModelKind::Mabf],
                    };
                    pipeline::generate(&cfg, kinds)?;
                }
                Command::ScaleSlp => pipeline::scale_slp(&cfg)?,
                Command::Evaluate { .. } => {
                    let r = pipeline::evaluate(&cfg)?;
                    println!("evaluated {} pairs", r.pairs.len());
                }
                Command::Match => {
                    for m in pipeline::match_days(&cfg)? {
                        println!(
                            "{}: {} pairs, mean distance {:.4}",
                            m.model,
                            m.pairs.len(),
                            m.stats.mean
                        );
                    }
                }
                Command::Report => pipeline::report(&cfg)?,
                Command::Run => {
                    let manifest = pipeline::run(&cfg)?;
                    for s in &manifest.stages {
                        println!("{:<11} {:>8.1} s", s.stage.name(), s.seconds);
                    }
                }
                Command::Reference { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, |p| p.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
