use std::path::{Path, PathBuf};
use std::process::ExitCode;

use balance_forge::balance::balance_over;
use balance_forge::config::StudyConfigFile;
use balance_forge::csvio::{dataset_from_csv, dataset_to_csv, fmt_g17, fmt_opt, weights_from_csv, weights_to_csv, write_atomic};
use balance_forge::datagen::{simulate_dataset_with, CorrelationSpec, SimulationOptions};
use balance_forge::estimate::{att_dr, att_ipw, regression_columns, replicate_metrics};
use balance_forge::plot::{render_plot, PlotSpec};
use balance_forge::study::{aggregate, aggregate_to_csv, records_to_csv, run_study};
use balance_forge::weights::{estimate_weights_on, EstimatorSettings};
use balance_forge::{confounder_columns, ConfounderSetId, Dataset, Error, EstimatorId, OutcomeModelId, Result};
use clap::{Parser, Subcommand, ValueEnum};

const THREADS_ENV: &str = "BALANCE_FORGE_THREADS";

#[derive(Parser)]
#[command(name = "balance-forge", version, about = "Propensity-score and balancing-weight estimation for the ATT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the built-in design.
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        outcome: OutcomeModelId,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Draw independent covariates instead of the correlated design.
        #[arg(long)]
        uncorrelated: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate ATT weights for a dataset.
    Weigh {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        estimator: EstimatorId,
        #[arg(long, default_value = "all_covariates")]
        set: ConfounderSetId,
        /// JSON file with estimator hyperparameters.
        #[arg(long)]
        hyperparameters: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Balance diagnostics for a dataset and its weights.
    Balance {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "all_covariates")]
        set: ConfounderSetId,
        #[arg(long)]
        out: PathBuf,
    },
    /// ATT estimate from a dataset and its weights.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "all_covariates")]
        set: ConfounderSetId,
        #[arg(long, value_enum, default_value_t = Method::Dr)]
        method: Method,
        /// Known effect; enables the error columns.
        #[arg(long, allow_hyphen_values = true)]
        truth: Option<f64>,
        /// Covariates (1-based, comma separated) added to the outcome regression.
        #[arg(long, value_delimiter = ',')]
        extra_columns: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo study from a JSON config.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Line chart of an aggregate CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "n")]
        x: String,
        #[arg(long, default_value = "mean_max_ks")]
        y: String,
        #[arg(long, default_value = "estimator")]
        group: String,
        /// Keep rows where COLUMN equals VALUE; repeatable.
        #[arg(long = "filter", value_name = "COLUMN=VALUE")]
        filters: Vec<String>,
        /// Draw the 0.1 and 0.2 reference lines.
        #[arg(long)]
        thresholds: bool,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Dr,
    Ipw,
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_csv(std::fs::File::open(path)?)
}

fn threads_override() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { n, outcome, seed, uncorrelated, out } => {
            let mut opts = SimulationOptions::default();
            if uncorrelated {
                opts.correlation = CorrelationSpec::uncorrelated();
            }
            let ds = simulate_dataset_with(n, outcome, seed, &opts)?;
            write_atomic(&out, dataset_to_csv(&ds).as_bytes())
        }
        Command::Weigh { data, estimator, set, hyperparameters, out } => {
            let ds = read_dataset(&data)?;
            let settings: EstimatorSettings = match hyperparameters {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => EstimatorSettings::default(),
            };
            settings.gbm.validate()?;
            let ws = estimate_weights_on(&ds, &confounder_columns(set), estimator, &settings)?;
            if !ws.converged {
                eprintln!("warning: {estimator} did not converge");
            }
            if !ws.notes.is_empty() {
                eprintln!("note: {}", ws.notes);
            }
            write_atomic(&out, weights_to_csv(&ws).as_bytes())
        }
        Command::Balance { data, weights, set, out } => {
            let ds = read_dataset(&data)?;
            let ws = weights_from_csv(std::fs::File::open(weights)?)?;
            ws.validate(&ds.treatment)?;
            let b = balance_over(&ds, &ws.weights, &confounder_columns(set))?;
            let mut text = String::from("covariate,smd,ks,mean_smd,max_smd,mean_ks,max_ks,ess\n");
            for (col, ks) in &b.ks_per_covariate {
                let smd = b.smd_per_covariate.get(col).copied();
                text.push_str(&format!("x{col},{},{},,,,,\n", fmt_opt(smd), fmt_g17(*ks)));
            }
            text.push_str(&format!(
                "ALL,,,{},{},{},{},{}\n",
                fmt_g17(b.mean_smd),
                fmt_g17(b.max_smd),
                fmt_g17(b.mean_ks),
                fmt_g17(b.max_ks),
                fmt_g17(b.ess_control)
            ));
            if !b.smd_flagged.is_empty() {
                eprintln!("warning: SMD undefined for columns {:?}", b.smd_flagged);
            }
            write_atomic(&out, text.as_bytes())
        }
        Command::Estimate { data, weights, set, method, truth, extra_columns, out } => {
            let ds = read_dataset(&data)?;
            let ws = weights_from_csv(std::fs::File::open(weights)?)?;
            let est = match method {
                Method::Dr => att_dr(&ds, &ws, &regression_columns(&confounder_columns(set), &extra_columns)?)?,
                Method::Ipw => att_ipw(&ds, &ws)?,
            };
            let (bias, se) = match truth {
                Some(g) => {
                    let (b, s) = replicate_metrics(est.value, g)?;
                    (Some(b), Some(s))
                }
                None => (None, None),
            };
            let text = format!(
                "estimate,abs_rel_bias,squared_error\n{},{},{}\n",
                fmt_g17(est.value),
                fmt_opt(bias),
                fmt_opt(se)
            );
            write_atomic(&out, text.as_bytes())
        }
        Command::Study { config, out } => {
            let mut cfg = StudyConfigFile::load(&config)?;
            if let Some(t) = threads_override()? {
                cfg.parallelism = t;
            }
            let settings = cfg.settings();
            let records = run_study(&cfg.grid(), cfg.parallelism, &settings)?;
            let rows = aggregate(&records, settings.truth())?;
            std::fs::create_dir_all(&out)?;
            write_atomic(&out.join(&cfg.results_file), records_to_csv(&records).as_bytes())?;
            write_atomic(&out.join(&cfg.aggregate_file), aggregate_to_csv(&rows).as_bytes())?;
            let failed = records.iter().filter(|r| !r.usable()).count();
            eprintln!("{} replicates over {} scenarios, {failed} not converged", records.len(), rows.len());
            Ok(())
        }
        Command::Plot { input, x, y, group, filters, thresholds, title, out } => {
            let filters = filters
                .iter()
                .map(|f| {
                    f.split_once('=')
                        .map(|(c, v)| (c.to_string(), v.to_string()))
                        .ok_or_else(|| Error::Config(format!("filter '{f}' is not COLUMN=VALUE")))
                })
                .collect::<Result<Vec<_>>>()?;
            let spec = PlotSpec { x, y, group, thresholds, filters, title };
            let svg = render_plot(&std::fs::read_to_string(input)?, &spec)?;
            write_atomic(&out, svg.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
