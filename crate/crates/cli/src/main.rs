//! Command-line front end for the risk stratification pipeline.
//!
//! Every subcommand is one pipeline stage; `pipeline` chains them all under
//! a single output directory. Parameters resolve in precedence order:
//! explicit flag, then a `RISKFACTOR_*` environment variable, then the
//! `--config` key=value file, then the built-in default. Paths are always
//! explicit flags.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riskfactor_core::{ErrorKind, Result, SynthConfig};

use config::{
    parse_bounds, parse_count_list, parse_label, parse_real_list, resolve, resolve_opt, Settings,
};
use stages::{
    tag, PipelineParams, PipelineSource, ScoreInputs, StageResult, ValidateInputs, ValidateParams,
};

#[derive(Parser)]
#[command(
    name = "riskfactor",
    version,
    about = "Risk stratification for undiagnosed patients from positive labels only"
)]
struct Cli {
    /// Key=value settings file consulted after flags and environment.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Base seed; every stochastic stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the factorization stages (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Shape overrides for the synthetic cohort generator.
#[derive(Args)]
struct SynthShape {
    /// Diagnosed cohort size.
    #[arg(long)]
    diagnosed: Option<usize>,
    /// Undiagnosed cohort size.
    #[arg(long)]
    undiagnosed: Option<usize>,
    /// Covariate dictionary size.
    #[arg(long)]
    covariates: Option<usize>,
    /// Number of planted components.
    #[arg(long)]
    components: Option<usize>,
    /// Covariates per planted signature.
    #[arg(long)]
    signature_size: Option<usize>,
    /// Signature expression probability in signal carriers.
    #[arg(long)]
    signal_diagnosed: Option<f64>,
    /// Signature expression probability in true negatives.
    #[arg(long)]
    signal_undiagnosed: Option<f64>,
    /// Fraction of the undiagnosed cohort that secretly carries signal.
    #[arg(long)]
    hidden_rate: Option<f64>,
    /// Presence probability of background covariates.
    #[arg(long)]
    background_rate: Option<f64>,
    /// Upper bound for event counts.
    #[arg(long)]
    count_max: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with planted component signatures.
    Synth {
        #[command(flatten)]
        shape: SynthShape,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest an event stream and label file into a cohort container.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop patients with fewer distinct covariates than the support floor.
    Filter {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_nnz: Option<usize>,
    },
    /// Split a cohort into training, validation, and undiagnosed subsets.
    Split {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Diagnosed patients held out for validation (default: a quarter).
        #[arg(long)]
        validation_size: Option<usize>,
    },
    /// Sweep the component count and locate the error-curve elbow.
    NmfSweep {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Run the factorization ensemble and write per-covariate coefficients.
    Rwc {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Threshold a coefficient file into the selected covariate set.
    Select {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-covariate presence prevalence for one cohort.
    Prevalence {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to the covariates selected from this coefficient file.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Restrict rows to one label group: `diagnosed` or `undiagnosed`.
        #[arg(long)]
        label: Option<String>,
    },
    /// Smoothed divergence between diagnosed and undiagnosed prevalence.
    Kld {
        #[arg(long)]
        diagnosed: PathBuf,
        #[arg(long)]
        undiagnosed: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Score cohorts and calibrate percentiles against the training cohort.
    Score {
        #[arg(long)]
        training: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        divergence: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        undiagnosed: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Lower,upper percentile cut points for the risk categories.
        #[arg(long)]
        percentile_bounds: Option<String>,
    },
    /// Score summaries, band-overlap curves, and the label-quality probe.
    Validate {
        #[arg(long)]
        training: PathBuf,
        #[arg(long)]
        undiagnosed: PathBuf,
        #[arg(long)]
        training_profiles: PathBuf,
        #[arg(long)]
        undiagnosed_profiles: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score ceilings for the relabeling probe, e.g. 0.1,0.5,1.0.
        #[arg(long)]
        thresholds: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Top-k grid for the band-overlap curves, e.g. 10,25,50,100.
        #[arg(long)]
        topk: Option<String>,
    },
    /// Run every stage in order under one output directory.
    Pipeline {
        #[arg(long, requires = "labels")]
        events: Option<PathBuf>,
        #[arg(long, requires = "events")]
        labels: Option<PathBuf>,
        /// Generate the input cohort instead of reading event files.
        #[arg(long, conflicts_with = "events")]
        synth: bool,
        #[command(flatten)]
        shape: SynthShape,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_nnz: Option<usize>,
        #[arg(long)]
        validation_size: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        percentile_bounds: Option<String>,
        #[arg(long)]
        thresholds: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        topk: Option<String>,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::InvalidParameter => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("riskfactor: stage {}: {}", failure.stage, failure.error);
            ExitCode::from(exit_code(failure.error.kind()))
        }
    }
}

fn synth_config(shape: &SynthShape, settings: &Settings, seed: u64) -> Result<SynthConfig> {
    let base = SynthConfig::standard(seed);
    Ok(SynthConfig::standard(seed)
        .with_cohort_sizes(
            resolve(shape.diagnosed, settings, "diagnosed", base.n_diagnosed)?,
            resolve(shape.undiagnosed, settings, "undiagnosed", base.n_undiagnosed)?,
        )
        .with_covariates(resolve(
            shape.covariates,
            settings,
            "covariates",
            base.n_covariates,
        )?)
        .with_components(
            resolve(shape.components, settings, "components", base.n_components)?,
            resolve(
                shape.signature_size,
                settings,
                "signature_size",
                base.signature_size,
            )?,
        )
        .with_signal_prevalence(
            resolve(
                shape.signal_diagnosed,
                settings,
                "signal_diagnosed",
                base.signal_prevalence_diag,
            )?,
            resolve(
                shape.signal_undiagnosed,
                settings,
                "signal_undiagnosed",
                base.signal_prevalence_undiag,
            )?,
        )
        .with_hidden_positive_rate(resolve(
            shape.hidden_rate,
            settings,
            "hidden_rate",
            base.hidden_positive_rate,
        )?)
        .with_background_rate(resolve(
            shape.background_rate,
            settings,
            "background_rate",
            base.background_rate,
        )?)
        .with_count_max(resolve(shape.count_max, settings, "count_max", base.count_max)?))
}

fn run(cli: Cli) -> StageResult<()> {
    let settings = tag("config", Settings::load(cli.config.as_deref()))?;
    let seed = tag("config", resolve(cli.seed, &settings, "seed", 0))?;
    let threads = tag("config", resolve(cli.threads, &settings, "threads", 0))?;
    if threads > 0 {
        // Ignore a second initialization: the first pool wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match cli.command {
        Command::Synth { shape, out } => {
            let cfg = tag("config", synth_config(&shape, &settings, seed))?;
            tag("synth", stages::run_synth(&out, &cfg))
        }
        Command::Ingest { events, labels, out } => {
            tag("ingest", stages::run_ingest(&out, &events, &labels))
        }
        Command::Filter { cohort, out, min_nnz } => {
            let min_nnz = tag("config", resolve(min_nnz, &settings, "min_nnz", 5))?;
            tag("filter", stages::run_filter(&out, &cohort, min_nnz))
        }
        Command::Split {
            cohort,
            out,
            validation_size,
        } => {
            let validation_size = tag(
                "config",
                resolve_opt(validation_size, &settings, "validation_size"),
            )?;
            tag(
                "split",
                stages::run_split(&out, &cohort, validation_size, seed).map(|_| ()),
            )
        }
        Command::NmfSweep {
            cohort,
            out,
            k_min,
            k_max,
            max_iter,
        } => {
            let k_min = tag("config", resolve(k_min, &settings, "k_min", 2))?;
            let k_max = tag("config", resolve(k_max, &settings, "k_max", 8))?;
            let max_iter = tag("config", resolve(max_iter, &settings, "max_iter", 200))?;
            tag(
                "nmf-sweep",
                stages::run_sweep(&out, &cohort, k_min, k_max, max_iter, seed),
            )
        }
        Command::Rwc {
            cohort,
            out,
            k,
            runs,
            max_iter,
        } => {
            let k = tag("config", resolve(k, &settings, "k", 9))?;
            let runs = tag("config", resolve(runs, &settings, "runs", 40))?;
            let max_iter = tag("config", resolve(max_iter, &settings, "max_iter", 200))?;
            tag(
                "rwc",
                stages::run_rwc(&out, &cohort, k, runs, max_iter, seed),
            )
        }
        Command::Select { weights, out } => tag("select", stages::run_select(&out, &weights)),
        Command::Prevalence {
            cohort,
            out,
            weights,
            label,
        } => {
            let label = tag("config", parse_label(label.as_deref()))?;
            tag(
                "prevalence",
                stages::run_prevalence(&out, &cohort, weights.as_deref(), label),
            )
        }
        Command::Kld {
            diagnosed,
            undiagnosed,
            out,
            epsilon,
        } => {
            let epsilon = tag("config", resolve(epsilon, &settings, "epsilon", 1e-8))?;
            tag(
                "kld",
                stages::run_kld(&out, &diagnosed, &undiagnosed, epsilon),
            )
        }
        Command::Score {
            training,
            weights,
            divergence,
            validation,
            undiagnosed,
            out,
            percentile_bounds,
        } => {
            let raw = tag(
                "config",
                resolve(percentile_bounds, &settings, "percentile_bounds", "50,90".into()),
            )?;
            let bounds = tag("config", parse_bounds(&raw))?;
            tag(
                "score",
                stages::run_score(
                    &out,
                    &ScoreInputs {
                        training: &training,
                        weights: &weights,
                        divergence: &divergence,
                        validation: validation.as_deref(),
                        undiagnosed: undiagnosed.as_deref(),
                    },
                    bounds,
                ),
            )
        }
        Command::Validate {
            training,
            undiagnosed,
            training_profiles,
            undiagnosed_profiles,
            weights,
            out,
            thresholds,
            folds,
            repeats,
            topk,
        } => {
            let params = tag(
                "config",
                validate_params(&settings, thresholds, folds, repeats, topk, seed),
            )?;
            tag(
                "validate",
                stages::run_validate(
                    &out,
                    &ValidateInputs {
                        training: &training,
                        undiagnosed: &undiagnosed,
                        training_profiles: &training_profiles,
                        undiagnosed_profiles: &undiagnosed_profiles,
                        weights: &weights,
                    },
                    &params,
                ),
            )
        }
        Command::Pipeline {
            events,
            labels,
            synth,
            shape,
            out,
            min_nnz,
            validation_size,
            k,
            runs,
            max_iter,
            epsilon,
            percentile_bounds,
            thresholds,
            folds,
            repeats,
            topk,
        } => {
            let validate = validate_params(&settings, thresholds, folds, repeats, topk, seed);
            let validate = tag("config", validate)?;
            let raw_bounds = tag(
                "config",
                resolve(percentile_bounds, &settings, "percentile_bounds", "50,90".into()),
            )?;
            let params = PipelineParams {
                min_nnz: tag("config", resolve(min_nnz, &settings, "min_nnz", 5))?,
                validation_size: tag(
                    "config",
                    resolve_opt(validation_size, &settings, "validation_size"),
                )?,
                k: tag("config", resolve(k, &settings, "k", 9))?,
                runs: tag("config", resolve(runs, &settings, "runs", 40))?,
                max_iter: tag("config", resolve(max_iter, &settings, "max_iter", 200))?,
                epsilon: tag("config", resolve(epsilon, &settings, "epsilon", 1e-8))?,
                bounds: tag("config", parse_bounds(&raw_bounds))?,
                thresholds: validate.thresholds.clone(),
                n_folds: validate.n_folds,
                n_repetitions: validate.n_repetitions,
                top_k: validate.top_k.clone(),
                seed,
            };
            let source = if synth {
                let cfg = tag("config", synth_config(&shape, &settings, seed))?;
                PipelineSource::Synth(Box::new(cfg))
            } else {
                let (Some(events), Some(labels)) = (&events, &labels) else {
                    return Err(stages::StageError {
                        stage: "config",
                        error: riskfactor_core::Error::InvalidParameter(
                            "pipeline needs --events and --labels, or --synth".into(),
                        ),
                    });
                };
                PipelineSource::Files { events, labels }
            };
            stages::run_pipeline(&out, source, &params)
        }
    }
}

fn validate_params(
    settings: &Settings,
    thresholds: Option<String>,
    folds: Option<usize>,
    repeats: Option<usize>,
    topk: Option<String>,
    seed: u64,
) -> Result<ValidateParams> {
    let thresholds = resolve(thresholds, settings, "thresholds", "0.1,0.5,1.0".into())?;
    let topk = resolve(topk, settings, "topk", "10,25,50,100".into())?;
    Ok(ValidateParams {
        thresholds: parse_real_list(&thresholds)?,
        n_folds: resolve(folds, settings, "folds", 5)?,
        n_repetitions: resolve(repeats, settings, "repeats", 10)?,
        top_k: parse_count_list(&topk)?,
        seed,
    })
}
