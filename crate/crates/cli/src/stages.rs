//! Stage workers shared by the standalone subcommands and the combined
//! pipeline, so that a stage invoked on its own writes byte-identical
//! artifacts to the same stage run inside `pipeline`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use riskfactor_core::cohort::io::{ingest_files, load_dir, save_dir};
use riskfactor_core::cohort::{CohortMatrix, Label};
use riskfactor_core::divergence::{
    self, kl_divergence, prevalence, read_divergence_file, read_prevalence_file,
    resolve_divergence_rows, write_prevalence_file,
};
use riskfactor_core::error::{Error, Result};
use riskfactor_core::nmf::{self, sweep_k, FitOptions};
use riskfactor_core::rwc::{rwc_ensemble, select_from_weights};
use riskfactor_core::score::{read_profiles_file, write_profiles_file, ScoreEngine};
use riskfactor_core::seed::{derive_seed, stage};
use riskfactor_core::synth::{self, SynthConfig};
use riskfactor_core::validation::{
    label_quality_experiment, write_label_quality_file, write_similarity_file, write_summary_file,
    LabelQualityParams, ScoreSummary, SimilarityCurve,
};
use riskfactor_core::{RiskCategory, RiskProfile};

use crate::manifest::{read_manifest, Manifest, MANIFEST_FILE};

pub const WEIGHTS_FILE: &str = "weights.tsv";
pub const SELECTED_FILE: &str = "selected.tsv";
pub const PREVALENCE_FILE: &str = "prevalence.tsv";
pub const DIVERGENCE_FILE: &str = "divergence.tsv";
pub const CURVE_FILE: &str = "curve.tsv";
pub const ELBOW_FILE: &str = "elbow.tsv";

/// An error annotated with the stage that raised it, for diagnostics and
/// exit-code mapping.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// Tags a stage result with the stage name.
pub fn tag<T>(stage: &'static str, result: Result<T>) -> StageResult<T> {
    result.map_err(|error| StageError { stage, error })
}

fn flag(value: impl ToString) -> String {
    value.to_string()
}

fn join_list<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn add_cohort_inputs(manifest: &mut Manifest, dir: &Path) -> Result<()> {
    use riskfactor_core::cohort::io::{COVARIATES_FILE, MATRIX_FILE, PATIENTS_FILE};
    check_complete_dir(dir)?;
    for name in [MATRIX_FILE, COVARIATES_FILE, PATIENTS_FILE] {
        manifest.add_input(dir.join(name))?;
    }
    Ok(())
}

/// Refuses inputs from a stage directory whose manifest says the run that
/// produced it never completed. Directories without a manifest pass.
fn check_complete_dir(dir: &Path) -> Result<()> {
    if dir.join(MANIFEST_FILE).exists() && !read_manifest(dir)?.complete {
        return Err(Error::IncompleteRun(dir.display().to_string()));
    }
    Ok(())
}

fn check_complete_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(dir) if dir.as_os_str().is_empty() => Ok(()),
        Some(dir) => check_complete_dir(dir),
        None => Ok(()),
    }
}

fn add_file_input(manifest: &mut Manifest, path: &Path) -> Result<()> {
    check_complete_parent(path)?;
    manifest.add_input(path)
}

/// Reads `code<TAB>value` rows as written by the rwc and select stages.
pub fn read_weight_rows(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| riskfactor_core::error::io_context(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Format {
            path: path.display().to_string(),
            line: lineno + 1,
            message,
        };
        let (code, value) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected code<TAB>weight".into()))?;
        let value: f64 = value
            .parse()
            .map_err(|_| bad(format!("bad weight {value:?}")))?;
        rows.push((code.to_string(), value));
    }
    Ok(rows)
}

fn write_weight_rows<'a>(
    path: impl AsRef<Path>,
    rows: impl Iterator<Item = (&'a str, f64)>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (code, value) in rows {
        writeln!(w, "{code}\t{value}")?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves a weight file against a cohort dictionary into a full
/// column-ordered weight vector.
fn load_weight_vector(path: &Path, matrix: &CohortMatrix) -> Result<Vec<f64>> {
    let rows = read_weight_rows(path)?;
    if rows.len() != matrix.n_covariates() {
        return Err(Error::MisalignedFeatures(format!(
            "weight file covers {} covariates but the cohort has {}",
            rows.len(),
            matrix.n_covariates()
        )));
    }
    let mut weights = vec![f64::NAN; matrix.n_covariates()];
    for (code, value) in &rows {
        let j = matrix.covariate_index(code).ok_or_else(|| {
            Error::MisalignedFeatures(format!("covariate {code:?} is not in the cohort dictionary"))
        })?;
        if !weights[j].is_nan() {
            return Err(Error::MisalignedFeatures(format!(
                "covariate {code:?} appears twice in the weight file"
            )));
        }
        weights[j] = *value;
    }
    Ok(weights)
}

/// Generates a synthetic cohort and writes the event stream, labels, and
/// ground-truth sidecars.
pub fn run_synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut flags = BTreeMap::new();
    flags.insert("background_rate".into(), flag(cfg.background_rate));
    flags.insert("components".into(), flag(cfg.n_components));
    flags.insert("count_max".into(), flag(cfg.count_max));
    flags.insert("covariates".into(), flag(cfg.n_covariates));
    flags.insert("diagnosed".into(), flag(cfg.n_diagnosed));
    flags.insert("hidden_rate".into(), flag(cfg.hidden_positive_rate));
    flags.insert("signal_diagnosed".into(), flag(cfg.signal_prevalence_diag));
    flags.insert("signal_undiagnosed".into(), flag(cfg.signal_prevalence_undiag));
    flags.insert("signature_size".into(), flag(cfg.signature_size));
    flags.insert("undiagnosed".into(), flag(cfg.n_undiagnosed));
    let mut manifest = Manifest::new("synth", flags);
    manifest.add_seed("synth", cfg.seed);
    manifest.write_incomplete(out)?;

    let (diagnosed, undiagnosed, truth) = synth::generate(cfg)?;
    synth::write_event_files(out, &diagnosed, &undiagnosed)?;
    synth::write_truth_files(out, &undiagnosed, &truth)?;
    manifest.finish(out, started)
}

/// Ingests an event stream and label file into a binary cohort container.
pub fn run_ingest(out: &Path, events: &Path, labels: &Path) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("ingest", BTreeMap::new());
    add_file_input(&mut manifest, events)?;
    add_file_input(&mut manifest, labels)?;
    manifest.write_incomplete(out)?;

    let matrix = ingest_files(events, labels)?;
    save_dir(out, &matrix)?;
    manifest.finish(out, started)
}

/// Drops patients with fewer distinct covariates than the support floor.
pub fn run_filter(out: &Path, cohort: &Path, min_nnz: usize) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut flags = BTreeMap::new();
    flags.insert("min_nnz".into(), flag(min_nnz));
    let mut manifest = Manifest::new("filter", flags);
    add_cohort_inputs(&mut manifest, cohort)?;
    manifest.write_incomplete(out)?;

    let matrix = load_dir(cohort)?;
    save_dir(out, &matrix.filter_min_support(min_nnz))?;
    manifest.finish(out, started)
}

/// Splits a labeled cohort into diagnosed training/validation subsets and
/// the undiagnosed pool. Returns the resolved validation size.
pub fn run_split(
    out: &Path,
    cohort: &Path,
    validation_size: Option<usize>,
    base_seed: u64,
) -> Result<usize> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let matrix = load_dir(cohort)?;
    let (diagnosed, undiagnosed) = matrix.partition_by_label();
    let n_validation = validation_size.unwrap_or(diagnosed.n_patients() / 4);
    let split_seed = derive_seed(base_seed, stage::SPLIT, 0);

    let mut flags = BTreeMap::new();
    flags.insert("validation_size".into(), flag(n_validation));
    let mut manifest = Manifest::new("split", flags);
    add_cohort_inputs(&mut manifest, cohort)?;
    manifest.add_seed("split", split_seed);
    manifest.write_incomplete(out)?;

    let split = diagnosed.split_train_validation(n_validation, split_seed)?;
    save_dir(out.join("training"), &split.training)?;
    save_dir(out.join("validation"), &split.validation)?;
    save_dir(out.join("undiagnosed"), &undiagnosed)?;
    manifest.finish(out, started)?;
    Ok(n_validation)
}

/// Sweeps the component count over a range and records the reconstruction
/// error curve together with the elbow choice.
pub fn run_sweep(
    out: &Path,
    cohort: &Path,
    k_min: usize,
    k_max: usize,
    max_iter: usize,
    base_seed: u64,
) -> Result<()> {
    let started = Instant::now();
    if k_max < k_min + 2 {
        return Err(Error::InvalidParameter(format!(
            "sweep range {k_min}..={k_max} has fewer than three component counts, too short to locate an elbow"
        )));
    }
    fs::create_dir_all(out)?;
    let sweep_seed = derive_seed(base_seed, stage::SWEEP, 0);
    let mut flags = BTreeMap::new();
    flags.insert("k_max".into(), flag(k_max));
    flags.insert("k_min".into(), flag(k_min));
    flags.insert("max_iter".into(), flag(max_iter));
    let mut manifest = Manifest::new("nmf-sweep", flags);
    add_cohort_inputs(&mut manifest, cohort)?;
    manifest.add_seed("sweep", sweep_seed);
    manifest.write_incomplete(out)?;

    let matrix = load_dir(cohort)?;
    let options = FitOptions::new(k_min, sweep_seed).with_max_iter(max_iter);
    let curve = sweep_k(&matrix, k_min, k_max, options)?;
    nmf::io::write_error_curve(out.join(CURVE_FILE), &curve)?;
    let elbow = curve.elbow()?;
    let mut w = BufWriter::new(File::create(out.join(ELBOW_FILE))?);
    writeln!(w, "{}\t{}", elbow.k, u8::from(elbow.distinct))?;
    w.flush()?;
    manifest.finish(out, started)
}

/// Runs the seeded factorization ensemble and writes per-covariate
/// rank-weighted coefficients in column order.
pub fn run_rwc(
    out: &Path,
    cohort: &Path,
    k: usize,
    runs: usize,
    max_iter: usize,
    base_seed: u64,
) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let rwc_seed = derive_seed(base_seed, stage::RWC, 0);
    let mut flags = BTreeMap::new();
    flags.insert("k".into(), flag(k));
    flags.insert("max_iter".into(), flag(max_iter));
    flags.insert("runs".into(), flag(runs));
    let mut manifest = Manifest::new("rwc", flags);
    add_cohort_inputs(&mut manifest, cohort)?;
    manifest.add_seed("rwc", rwc_seed);
    manifest.write_incomplete(out)?;

    let matrix = load_dir(cohort)?;
    let template = FitOptions::new(k, rwc_seed).with_max_iter(max_iter);
    let weights = rwc_ensemble(&matrix, template, runs)?;
    write_weight_rows(
        out.join(WEIGHTS_FILE),
        matrix
            .covariate_codes()
            .zip(weights.weights().iter().copied()),
    )?;
    manifest.finish(out, started)
}

/// Applies the mean-over-positive-weights threshold to a weight file and
/// writes the surviving covariates in selection order.
pub fn run_select(out: &Path, weights: &Path) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("select", BTreeMap::new());
    add_file_input(&mut manifest, weights)?;
    manifest.write_incomplete(out)?;

    let rows = read_weight_rows(weights)?;
    let values: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
    let (order, _) = select_from_weights(&values)?;
    write_weight_rows(
        out.join(SELECTED_FILE),
        order.iter().map(|&j| (rows[j].0.as_str(), values[j])),
    )?;
    manifest.finish(out, started)
}

/// Computes per-covariate presence prevalence, over the selected covariates
/// when a weight file is given, otherwise over the whole dictionary. An
/// optional label keeps only the matching rows, so population prevalence
/// can be taken straight from a mixed cohort.
pub fn run_prevalence(
    out: &Path,
    cohort: &Path,
    weights: Option<&Path>,
    label: Option<Label>,
) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut flags = BTreeMap::new();
    flags.insert(
        "restrict".into(),
        if weights.is_some() { "selected" } else { "all" }.into(),
    );
    flags.insert(
        "rows".into(),
        match label {
            Some(Label::Diagnosed) => "diagnosed",
            Some(Label::Undiagnosed) => "undiagnosed",
            None => "all",
        }
        .into(),
    );
    let mut manifest = Manifest::new("prevalence", flags);
    add_cohort_inputs(&mut manifest, cohort)?;
    if let Some(path) = weights {
        add_file_input(&mut manifest, path)?;
    }
    manifest.write_incomplete(out)?;

    let matrix = load_dir(cohort)?;
    let matrix = match label {
        Some(Label::Diagnosed) => matrix.partition_by_label().0,
        Some(Label::Undiagnosed) => matrix.partition_by_label().1,
        None => matrix,
    };
    let features = match weights {
        Some(path) => {
            let vector = load_weight_vector(path, &matrix)?;
            select_from_weights(&vector)?.0
        }
        None => (0..matrix.n_covariates()).collect(),
    };
    let values = prevalence(&matrix, &features)?;
    write_prevalence_file(out.join(PREVALENCE_FILE), &matrix, &features, &values)?;
    manifest.finish(out, started)
}

/// Joins diagnosed and undiagnosed prevalence files into a smoothed
/// divergence table.
pub fn run_kld(out: &Path, diagnosed: &Path, undiagnosed: &Path, epsilon: f64) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut flags = BTreeMap::new();
    flags.insert("epsilon".into(), flag(epsilon));
    let mut manifest = Manifest::new("kld", flags);
    add_file_input(&mut manifest, diagnosed)?;
    add_file_input(&mut manifest, undiagnosed)?;
    manifest.write_incomplete(out)?;

    let rows_d = read_prevalence_file(diagnosed)?;
    let rows_u = read_prevalence_file(undiagnosed)?;
    if rows_d.len() != rows_u.len() {
        return Err(Error::MisalignedFeatures(format!(
            "diagnosed prevalence has {} rows, undiagnosed {}",
            rows_d.len(),
            rows_u.len()
        )));
    }
    let mut w = BufWriter::new(File::create(out.join(DIVERGENCE_FILE))?);
    for ((code_d, p_d), (code_u, p_u)) in rows_d.iter().zip(&rows_u) {
        if code_d != code_u {
            return Err(Error::MisalignedFeatures(format!(
                "prevalence files disagree: {code_d:?} vs {code_u:?}"
            )));
        }
        let d = kl_divergence(*p_d, *p_u, epsilon)?;
        writeln!(w, "{code_d}\t{p_d}\t{p_u}\t{d}")?;
    }
    w.flush()?;
    manifest.finish(out, started)
}

/// Input paths for the scoring stage.
pub struct ScoreInputs<'a> {
    pub training: &'a Path,
    pub weights: &'a Path,
    pub divergence: &'a Path,
    pub validation: Option<&'a Path>,
    pub undiagnosed: Option<&'a Path>,
}

/// Scores the training cohort against itself and any further cohorts
/// against the training reference distribution.
pub fn run_score(out: &Path, inputs: &ScoreInputs, bounds: (f64, f64)) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let mut flags = BTreeMap::new();
    flags.insert("bound_high".into(), flag(bounds.1));
    flags.insert("bound_low".into(), flag(bounds.0));
    let mut manifest = Manifest::new("score", flags);
    add_cohort_inputs(&mut manifest, inputs.training)?;
    add_file_input(&mut manifest, inputs.weights)?;
    add_file_input(&mut manifest, inputs.divergence)?;
    for dir in [inputs.validation, inputs.undiagnosed].into_iter().flatten() {
        add_cohort_inputs(&mut manifest, dir)?;
    }
    manifest.write_incomplete(out)?;

    let training = load_dir(inputs.training)?;
    let weights = load_weight_vector(inputs.weights, &training)?;
    let rows = read_divergence_file(inputs.divergence)?;
    let table = resolve_divergence_rows(&rows, &training, divergence::DEFAULT_EPSILON)?;
    let engine = ScoreEngine::from_raw_weights(&weights, &table)?;

    let (profiles, reference) = engine.score_cohort_self(&training, bounds)?;
    write_profiles_file(out.join("training.tsv"), &profiles)?;
    for (dir, name) in [
        (inputs.validation, "validation.tsv"),
        (inputs.undiagnosed, "undiagnosed.tsv"),
    ] {
        let Some(dir) = dir else { continue };
        let cohort = load_dir(dir)?;
        let profiles = engine.score_cohort(&cohort, &reference, bounds)?;
        write_profiles_file(out.join(name), &profiles)?;
    }
    manifest.finish(out, started)
}

/// Input paths for the validation stage.
pub struct ValidateInputs<'a> {
    pub training: &'a Path,
    pub undiagnosed: &'a Path,
    pub training_profiles: &'a Path,
    pub undiagnosed_profiles: &'a Path,
    pub weights: &'a Path,
}

/// Resolved parameters for the validation stage.
pub struct ValidateParams {
    pub thresholds: Vec<f64>,
    pub n_folds: usize,
    pub n_repetitions: usize,
    pub top_k: Vec<usize>,
    pub seed: u64,
}

fn check_profile_alignment(
    matrix: &CohortMatrix,
    profiles: &[RiskProfile],
    what: &str,
) -> Result<()> {
    if profiles.len() != matrix.n_patients() {
        return Err(Error::MisalignedFeatures(format!(
            "{what}: {} profiles for {} patients",
            profiles.len(),
            matrix.n_patients()
        )));
    }
    for (i, p) in profiles.iter().enumerate() {
        if p.patient_id != matrix.patient_id(i) {
            return Err(Error::MisalignedFeatures(format!(
                "{what}: profile row {i} is for {:?} but the cohort row is {:?}",
                p.patient_id,
                matrix.patient_id(i)
            )));
        }
    }
    Ok(())
}

fn category_band(
    matrix: &CohortMatrix,
    profiles: &[RiskProfile],
    category: RiskCategory,
    what: &'static str,
) -> Result<CohortMatrix> {
    let indices: Vec<usize> = profiles
        .iter()
        .enumerate()
        .filter(|(_, p)| p.category == category)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    matrix.select_rows(&indices)
}

/// Writes the score summaries, covariate-overlap similarity curves, and the
/// label-quality probe for a scored cohort pair.
pub fn run_validate(out: &Path, inputs: &ValidateInputs, params: &ValidateParams) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let validate_seed = derive_seed(params.seed, stage::VALIDATE, 0);
    let mut flags = BTreeMap::new();
    flags.insert("folds".into(), flag(params.n_folds));
    flags.insert("repeats".into(), flag(params.n_repetitions));
    flags.insert("thresholds".into(), join_list(&params.thresholds));
    flags.insert("topk".into(), join_list(&params.top_k));
    let mut manifest = Manifest::new("validate", flags);
    add_cohort_inputs(&mut manifest, inputs.training)?;
    add_cohort_inputs(&mut manifest, inputs.undiagnosed)?;
    add_file_input(&mut manifest, inputs.training_profiles)?;
    add_file_input(&mut manifest, inputs.undiagnosed_profiles)?;
    add_file_input(&mut manifest, inputs.weights)?;
    manifest.add_seed("validate", validate_seed);
    manifest.write_incomplete(out)?;

    let training = load_dir(inputs.training)?;
    let undiagnosed = load_dir(inputs.undiagnosed)?;
    let training_profiles = read_profiles_file(inputs.training_profiles)?;
    let undiagnosed_profiles = read_profiles_file(inputs.undiagnosed_profiles)?;
    check_profile_alignment(&training, &training_profiles, "training")?;
    check_profile_alignment(&undiagnosed, &undiagnosed_profiles, "undiagnosed")?;

    let training_scores: Vec<f64> = training_profiles.iter().map(|p| p.normalized).collect();
    let undiagnosed_scores: Vec<f64> = undiagnosed_profiles.iter().map(|p| p.normalized).collect();
    write_summary_file(
        out.join("summary.tsv"),
        &[
            ("diagnosed_training", ScoreSummary::from_scores(&training_scores)?),
            ("undiagnosed", ScoreSummary::from_scores(&undiagnosed_scores)?),
        ],
    )?;

    let high_diag = category_band(
        &training,
        &training_profiles,
        RiskCategory::High,
        "high-scoring diagnosed band",
    )?;
    let high_undiag = category_band(
        &undiagnosed,
        &undiagnosed_profiles,
        RiskCategory::High,
        "high-scoring undiagnosed band",
    )?;
    let low_undiag = category_band(
        &undiagnosed,
        &undiagnosed_profiles,
        RiskCategory::Low,
        "low-scoring undiagnosed band",
    )?;
    let mut curve = SimilarityCurve::new(params.top_k.clone())?;
    curve.add_pair("high_diag_vs_high_undiag", &high_diag, &high_undiag)?;
    curve.add_pair("high_diag_vs_low_undiag", &high_diag, &low_undiag)?;
    write_similarity_file(out.join("similarity.tsv"), &curve)?;

    let weights = load_weight_vector(inputs.weights, &training)?;
    let (features, _) = select_from_weights(&weights)?;
    let quality_params = LabelQualityParams::new(validate_seed)
        .with_thresholds(params.thresholds.clone())
        .with_folds(params.n_folds)
        .with_repetitions(params.n_repetitions);
    let report = label_quality_experiment(
        &training,
        &undiagnosed,
        &undiagnosed_scores,
        &features,
        &quality_params,
    )?;
    write_label_quality_file(out.join("label_quality.tsv"), &report)?;
    manifest.finish(out, started)
}

/// Where the pipeline's event stream comes from.
pub enum PipelineSource<'a> {
    Files { events: &'a Path, labels: &'a Path },
    Synth(Box<SynthConfig>),
}

/// Resolved parameters for the combined pipeline.
pub struct PipelineParams {
    pub min_nnz: usize,
    pub validation_size: Option<usize>,
    pub k: usize,
    pub runs: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    pub bounds: (f64, f64),
    pub thresholds: Vec<f64>,
    pub n_folds: usize,
    pub n_repetitions: usize,
    pub top_k: Vec<usize>,
    pub seed: u64,
}

/// Runs every stage in order under one output directory, writing the same
/// per-stage artifacts and manifests as the standalone subcommands plus a
/// combined manifest at the top level.
pub fn run_pipeline(out: &Path, source: PipelineSource, p: &PipelineParams) -> StageResult<()> {
    let started = Instant::now();
    tag("pipeline", fs::create_dir_all(out).map_err(Error::from))?;

    let mut flags = BTreeMap::new();
    flags.insert("bound_high".into(), flag(p.bounds.1));
    flags.insert("bound_low".into(), flag(p.bounds.0));
    flags.insert("epsilon".into(), flag(p.epsilon));
    flags.insert("folds".into(), flag(p.n_folds));
    flags.insert("k".into(), flag(p.k));
    flags.insert("max_iter".into(), flag(p.max_iter));
    flags.insert("min_nnz".into(), flag(p.min_nnz));
    flags.insert("repeats".into(), flag(p.n_repetitions));
    flags.insert("runs".into(), flag(p.runs));
    flags.insert("thresholds".into(), join_list(&p.thresholds));
    flags.insert("topk".into(), join_list(&p.top_k));
    flags.insert(
        "validation_size".into(),
        match p.validation_size {
            Some(n) => flag(n),
            None => "auto".into(),
        },
    );
    let mut manifest = Manifest::new("pipeline", flags);
    manifest.add_seed("split", derive_seed(p.seed, stage::SPLIT, 0));
    manifest.add_seed("rwc", derive_seed(p.seed, stage::RWC, 0));
    manifest.add_seed("validate", derive_seed(p.seed, stage::VALIDATE, 0));

    let (events, labels): (PathBuf, PathBuf) = match &source {
        PipelineSource::Files { events, labels } => {
            tag("pipeline", manifest.add_input(events))?;
            tag("pipeline", manifest.add_input(labels))?;
            (events.to_path_buf(), labels.to_path_buf())
        }
        PipelineSource::Synth(cfg) => {
            manifest.add_seed("synth", cfg.seed);
            let dir = out.join("synth");
            tag("synth", run_synth(&dir, cfg))?;
            let events = dir.join(synth::EVENTS_FILE);
            let labels = dir.join(synth::LABELS_FILE);
            tag("pipeline", manifest.add_input(&events))?;
            tag("pipeline", manifest.add_input(&labels))?;
            (events, labels)
        }
    };
    tag("pipeline", manifest.write_incomplete(out))?;

    let cohort = out.join("cohort");
    tag("ingest", run_ingest(&cohort, &events, &labels))?;
    let filtered = out.join("filtered");
    tag("filter", run_filter(&filtered, &cohort, p.min_nnz))?;
    let split = out.join("split");
    let n_validation = tag(
        "split",
        run_split(&split, &filtered, p.validation_size, p.seed),
    )?;
    manifest
        .flags
        .insert("validation_size".into(), flag(n_validation));

    let training = split.join("training");
    let undiagnosed = split.join("undiagnosed");
    let rwc = out.join("rwc");
    tag("rwc", run_rwc(&rwc, &training, p.k, p.runs, p.max_iter, p.seed))?;
    let weights = rwc.join(WEIGHTS_FILE);
    tag("select", run_select(&out.join("select"), &weights))?;

    let prev_diagnosed = out.join("prevalence_diagnosed");
    let prev_undiagnosed = out.join("prevalence_undiagnosed");
    tag(
        "prevalence",
        run_prevalence(
            &prev_diagnosed,
            &cohort,
            Some(&weights),
            Some(Label::Diagnosed),
        ),
    )?;
    tag(
        "prevalence",
        run_prevalence(
            &prev_undiagnosed,
            &cohort,
            Some(&weights),
            Some(Label::Undiagnosed),
        ),
    )?;
    let divergence_dir = out.join("divergence");
    tag(
        "kld",
        run_kld(
            &divergence_dir,
            &prev_diagnosed.join(PREVALENCE_FILE),
            &prev_undiagnosed.join(PREVALENCE_FILE),
            p.epsilon,
        ),
    )?;

    let scores = out.join("scores");
    tag(
        "score",
        run_score(
            &scores,
            &ScoreInputs {
                training: &training,
                weights: &weights,
                divergence: &divergence_dir.join(DIVERGENCE_FILE),
                validation: Some(&split.join("validation")),
                undiagnosed: Some(&undiagnosed),
            },
            p.bounds,
        ),
    )?;
    tag(
        "validate",
        run_validate(
            &out.join("validation"),
            &ValidateInputs {
                training: &training,
                undiagnosed: &undiagnosed,
                training_profiles: &scores.join("training.tsv"),
                undiagnosed_profiles: &scores.join("undiagnosed.tsv"),
                weights: &weights,
            },
            &ValidateParams {
                thresholds: p.thresholds.clone(),
                n_folds: p.n_folds,
                n_repetitions: p.n_repetitions,
                top_k: p.top_k.clone(),
                seed: p.seed,
            },
        ),
    )?;
    tag("pipeline", manifest.finish(out, started))
}
