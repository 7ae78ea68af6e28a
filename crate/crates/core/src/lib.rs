//! Core algorithms for unsupervised risk stratification over sparse
//! patient-by-covariate count matrices.
//!
//! The pipeline factorizes the diagnosed cohort with non-negative matrix
//! factorization, scores covariates by a rank-weighted coefficient averaged
//! over an ensemble of seeded runs, weights the surviving covariates by the
//! divergence of their prevalence between diagnosed and undiagnosed cohorts,
//! and turns the weighted covariate burden of each patient into a bounded
//! risk score with percentile calibration against the diagnosed cohort.

mod binio;
pub mod cohort;
pub mod dense;
pub mod divergence;
pub mod error;
pub mod nmf;
pub mod rwc;
pub mod score;
pub mod seed;
pub mod synth;
pub mod validation;

pub use cohort::{CohortMatrix, CohortSplit, EventRecord, Label};
pub use dense::DenseMatrix;
pub use divergence::DivergenceTable;
pub use error::{Error, ErrorKind, Result};
pub use nmf::{ElbowChoice, ErrorCurve, FactorModel, FitOptions};
pub use rwc::FeatureWeights;
pub use score::{ReferenceDistribution, RiskCategory, RiskProfile, ScoreEngine};
pub use synth::{SynthConfig, SynthTruth};
pub use validation::{LabelQualityParams, LabelQualityReport, ScoreSummary, SimilarityCurve};
