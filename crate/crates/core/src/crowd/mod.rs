//! Annotation task tooling: task bundles with golden and duplicate items,
//! payment suggestions, worker quality checks and agreement statistics.

mod agreement;
mod bundle;
mod project;
mod quality;

pub use agreement::{agreement, AgreementReport, KappaKind, RatingMatrix};
pub use bundle::{build_task, render_html, ItemRole, PresentedItem, Section, SectionKind, TaskBundle};
pub use project::{CrowdProject, GoldenItem, Item, LabeledExample};
pub use quality::{
    project_statistics, worker_quality, Answer, ProjectStatistics, QualityFlag, QualityThresholds, TimeStats,
    WorkerQuality, WorkerSubmission,
};

use thiserror::Error;

use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrowdError {
    #[error("invalid project: {0}")]
    InvalidProject(String),
    #[error("estimated seconds and hourly wage must both be positive")]
    NonpositiveInput,
    #[error("agreement needs at least two raters, got {0}")]
    TooFewRaters(usize),
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("no item has two or more ratings")]
    NoComparableItems,
    #[error("submission from {worker_id} is incomplete: {why}")]
    IncompleteSubmission { worker_id: String, why: String },
    #[error("no submissions")]
    NoSubmissions,
}

/// Pay for one task at `hourly_wage`, rounded up to the cent and never below one cent.
pub fn suggest_payment(estimated_seconds_per_task: u32, hourly_wage: Money) -> Result<Money, CrowdError> {
    if estimated_seconds_per_task == 0 || hourly_wage <= Money::ZERO {
        return Err(CrowdError::NonpositiveInput);
    }
    let numerator = i128::from(estimated_seconds_per_task) * i128::from(hourly_wage.cents());
    let cents = (numerator + 3599) / 3600;
    Ok(Money::from_cents((cents as i64).max(1)))
}
