//! `dbpa` command line: run experiments, run the synthetic calibration
//! laboratory, and re-render result files.
//!
//! Exit codes: 0 full success, 1 configuration or usage error, 2 when one
//! or more perturbations failed (partial results are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbpa_cli::config::{CalibrationConfig, ExperimentConfig};
use dbpa_cli::experiment::{run_experiment, RunOptions};
use dbpa_cli::report;
use dbpa_core::calibration::{
    perm_vs_resample_check, power_curve, write_calibration_csv, SyntheticFamily,
};
use dbpa_core::Error;

#[derive(Parser)]
#[command(name = "dbpa", version, about = "Distribution-based perturbation analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Fail on any operation that would need the network.
    #[arg(long)]
    offline: bool,
    /// Bound on concurrent perturbations and remote draws.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Run the synthetic calibration laboratory.
    Calibrate {
        config: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Render a previously written results.json.
    Report { results: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => run(config, common),
        Command::Calibrate { config, common } => calibrate(config, common),
        Command::Report { results } => render_report(results),
    }
}

fn config_failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn run(config_path: PathBuf, common: CommonRunArgs) -> ExitCode {
    let mut config = match ExperimentConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(dir) = common.output_dir {
        config.output_dir = dir;
    }
    let options = RunOptions {
        offline: common.offline,
        jobs: common.jobs.max(1),
    };

    let report = match run_experiment(&config, &options) {
        Ok(r) => r,
        Err(e) => return config_failure(&e),
    };

    print!("{}", report::render(&report));
    println!("wrote {}", config.output_dir.join("results.json").display());
    if report.any_failed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn calibrate(config_path: PathBuf, common: CommonRunArgs) -> ExitCode {
    let mut config = match CalibrationConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(dir) = common.output_dir {
        config.output_dir = dir;
    }

    let outcome = (|| -> dbpa_core::Result<()> {
        std::fs::create_dir_all(&config.output_dir)?;
        let family = SyntheticFamily::new(config.dim, config.sigma, 0.0, config.seed)?;
        let curve = power_curve(
            &family,
            &config.theta_grid,
            config.trials,
            config.k,
            config.b,
            config.alpha,
            config.metric,
            config.nbins,
            config.seed,
        )?;
        for r in &curve.reports {
            println!(
                "theta={:.4}: rejection_rate={:.4} median_omega={:.4} ({} trials)",
                r.theta, r.rejection_rate, r.median_omega, r.trials
            );
        }
        println!(
            "rejection rate nondecreasing across grid: {}",
            curve.nondecreasing
        );
        let csv_path = config.output_dir.join("calibration.csv");
        write_calibration_csv(&csv_path, &curve.reports)?;
        println!("wrote {}", csv_path.display());

        if let Some(draws) = config.equivalence_draws {
            let check = perm_vs_resample_check(
                &family,
                draws,
                config.k,
                config.metric,
                config.nbins,
                config.seed,
            )?;
            println!(
                "equivalence: mean_perm={:.6} mean_resample={:.6} ks={:.4} within_3se={}",
                check.mean_permutation,
                check.mean_resampling,
                check.ks_distance,
                check.means_within(3.0)
            );
            let path = config.output_dir.join("equivalence.json");
            std::fs::write(&path, serde_json::to_string_pretty(&check)?)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    })();

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => config_failure(&e),
    }
}

fn render_report(results: PathBuf) -> ExitCode {
    match report::load_results_json(&results) {
        Ok(report) => {
            print!("{}", report::render(&report));
            ExitCode::SUCCESS
        }
        Err(e) => config_failure(&e),
    }
}
