use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tuberegress::error::ErrorClass;
use tuberegress::experiment::{Command, Experiment, ExperimentConfig, Overrides};
use tuberegress::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tuberegress", version, about = "SVR housing-price experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML configuration layered over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for the split, subset, forest and CV folds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Size of the SVR training subset.
    #[arg(long, global = true)]
    subset: Option<usize>,

    /// Held-out fraction for the stratified split.
    #[arg(long = "test-frac", global = true)]
    test_frac: Option<f64>,

    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON file of externally reported scores merged into the comparison.
    #[arg(long = "external-scores", global = true)]
    external_scores: Option<PathBuf>,

    /// Use the bundled 200-row synthetic dataset and small settings.
    #[arg(long, global = true)]
    fixture: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Summary statistics and correlations.
    Eda,
    /// Stratified train/test split and SVR subset.
    Split,
    /// Ensemble feature importance and selection.
    Importance,
    /// Randomized hyperparameter search.
    Tune,
    /// Fit the tuned SVR and score it on the test set.
    Train,
    /// k-fold cross-validation of the tuned pipeline.
    Crossval,
    /// Four-stage ablation.
    Ablate,
    /// Baseline comparison table.
    Compare,
    /// Merge all artifacts into report.json.
    Report,
    /// Every stage in order.
    Run,
}

fn load(cli: &Cli) -> Result<Experiment> {
    let base = if cli.fixture {
        ExperimentConfig::fixture()
    } else {
        ExperimentConfig::default()
    };
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &base)?,
        None => base,
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        subset: cli.subset,
        test_fraction: cli.test_frac,
        out: cli.out.clone(),
        external_scores: cli.external_scores.clone(),
    });
    Experiment::new(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let exp = load(cli)?;
    log::info!("config hash {}", exp.config_hash());
    let cmd = match cli.command {
        Cmd::Run => {
            let r = exp.run_all()?;
            println!(
                "test R2 {:.4}  cv {:.4} ± {:.4}  report {}",
                r.final_metrics.test.r2,
                r.crossval.mean,
                r.crossval.std,
                exp.out_dir().join("report.json").display()
            );
            return Ok(());
        }
        Cmd::Eda => Command::Eda,
        Cmd::Split => Command::Split,
        Cmd::Importance => Command::Importance,
        Cmd::Tune => Command::Tune,
        Cmd::Train => Command::Train,
        Cmd::Crossval => Command::Crossval,
        Cmd::Ablate => Command::Ablate,
        Cmd::Compare => Command::Compare,
        Cmd::Report => Command::Report,
    };
    exp.execute(cmd)?;
    println!("wrote {}", exp.artifact_path(cmd.stage()).display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Fit => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
