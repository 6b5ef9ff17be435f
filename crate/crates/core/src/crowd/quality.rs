use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::agreement::{agreement, AgreementReport, RatingMatrix};
use super::bundle::{ItemRole, TaskBundle};
use super::CrowdError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub presented_index: usize,
    pub item_ref: String,
    pub label: String,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSubmission {
    pub worker_id: String,
    pub answers: Vec<Answer>,
    #[serde(default)]
    pub feedback_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityFlag {
    StraightLining,
    TooFast,
    GoldenFail,
}

/// Bot and low-effort detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityThresholds {
    /// Share of answers with one label at or above which a worker is straight-lining.
    pub straight_lining_share: f64,
    /// Straight-lining is only judged with at least this many answers.
    pub straight_lining_min_answers: usize,
    /// Median seconds below this fraction of the per-item estimate is too fast.
    pub too_fast_fraction: f64,
    /// Golden accuracy strictly below this fails.
    pub golden_min_accuracy: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self { straight_lining_share: 0.9, straight_lining_min_answers: 10, too_fast_fraction: 0.25, golden_min_accuracy: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerQuality {
    pub worker_id: String,
    /// `None` when the bundle has no golden items.
    pub golden_accuracy: Option<f64>,
    /// `None` when the bundle has no duplicates.
    pub duplicate_consistency: Option<f64>,
    pub median_seconds: f64,
    pub flags: BTreeSet<QualityFlag>,
}

impl WorkerQuality {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    }
}

/// Answers keyed by presented index, after checking the submission covers the bundle exactly.
fn index_answers<'a>(submission: &'a WorkerSubmission, bundle: &TaskBundle) -> Result<Vec<&'a Answer>, CrowdError> {
    let incomplete = |why: String| CrowdError::IncompleteSubmission { worker_id: submission.worker_id.clone(), why };
    let mut by_index: Vec<Option<&Answer>> = vec![None; bundle.sequence.len()];
    for answer in &submission.answers {
        let slot = by_index
            .get_mut(answer.presented_index)
            .ok_or_else(|| incomplete(format!("answer for unknown position {}", answer.presented_index)))?;
        if slot.replace(answer).is_some() {
            return Err(incomplete(format!("position {} answered twice", answer.presented_index)));
        }
        if bundle.sequence[answer.presented_index].item_id != answer.item_ref {
            return Err(incomplete(format!("position {} is not item {:?}", answer.presented_index, answer.item_ref)));
        }
        if !bundle.label_set.contains(&answer.label) {
            return Err(CrowdError::UnknownLabel(answer.label.clone()));
        }
    }
    by_index
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| incomplete(format!("position {i} unanswered"))))
        .collect()
}

pub fn worker_quality(
    submission: &WorkerSubmission,
    bundle: &TaskBundle,
    thresholds: &QualityThresholds,
) -> Result<WorkerQuality, CrowdError> {
    let answers = index_answers(submission, bundle)?;

    let mut golden_total = 0usize;
    let mut golden_correct = 0usize;
    let mut originals: HashMap<&str, &str> = HashMap::new();
    for (presented, answer) in bundle.sequence.iter().zip(&answers) {
        match presented.role {
            ItemRole::Golden => {
                golden_total += 1;
                if bundle.golden_key.get(&presented.item_id) == Some(&answer.label) {
                    golden_correct += 1;
                }
            }
            ItemRole::Item => {
                originals.insert(presented.item_id.as_str(), answer.label.as_str());
            }
            ItemRole::Duplicate => {}
        }
    }
    let mut dup_total = 0usize;
    let mut dup_same = 0usize;
    for (presented, answer) in bundle.sequence.iter().zip(&answers) {
        if presented.role == ItemRole::Duplicate {
            dup_total += 1;
            if originals.get(presented.item_id.as_str()) == Some(&answer.label.as_str()) {
                dup_same += 1;
            }
        }
    }
    let golden_accuracy = (golden_total > 0).then(|| golden_correct as f64 / golden_total as f64);
    let duplicate_consistency = (dup_total > 0).then(|| dup_same as f64 / dup_total as f64);
    let median_seconds = median(&mut answers.iter().map(|a| a.elapsed_seconds).collect::<Vec<_>>());

    let mut flags = BTreeSet::new();
    let mut label_counts: HashMap<&str, usize> = HashMap::new();
    for a in &answers {
        *label_counts.entry(a.label.as_str()).or_insert(0) += 1;
    }
    let top = label_counts.values().copied().max().unwrap_or(0);
    if answers.len() >= thresholds.straight_lining_min_answers
        && top as f64 >= thresholds.straight_lining_share * answers.len() as f64
    {
        flags.insert(QualityFlag::StraightLining);
    }
    if median_seconds < thresholds.too_fast_fraction * bundle.estimated_seconds_per_item {
        flags.insert(QualityFlag::TooFast);
    }
    if golden_accuracy.is_some_and(|acc| acc < thresholds.golden_min_accuracy) {
        flags.insert(QualityFlag::GoldenFail);
    }

    Ok(WorkerQuality {
        worker_id: submission.worker_id.clone(),
        golden_accuracy,
        duplicate_consistency,
        median_seconds,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub answers: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Sum of per-answer time for each worker.
    pub per_worker_total_seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectStatistics {
    pub time: TimeStats,
    /// Label counts over every answer from every worker, flagged or not.
    pub label_distribution: BTreeMap<String, usize>,
    /// Agreement on regular items among included workers; absent with fewer than two.
    pub agreement: Option<AgreementReport>,
    pub workers: Vec<WorkerQuality>,
    pub flagged_workers: Vec<String>,
    pub included_workers: Vec<String>,
    pub feedback: Vec<(String, String)>,
}

/// Aggregates worker quality and agreement for a task. Flagged workers are
/// left out of the agreement matrix unless `include_flagged` is set.
pub fn project_statistics(
    submissions: &[WorkerSubmission],
    bundle: &TaskBundle,
    thresholds: &QualityThresholds,
    include_flagged: bool,
) -> Result<ProjectStatistics, CrowdError> {
    if submissions.is_empty() {
        return Err(CrowdError::NoSubmissions);
    }
    let workers: Vec<WorkerQuality> =
        submissions.iter().map(|s| worker_quality(s, bundle, thresholds)).collect::<Result<_, _>>()?;

    let mut seconds: Vec<f64> = submissions.iter().flat_map(|s| s.answers.iter().map(|a| a.elapsed_seconds)).collect();
    let answers = seconds.len();
    let mean_seconds = if answers == 0 { 0.0 } else { seconds.iter().sum::<f64>() / answers as f64 };
    let min_seconds = seconds.iter().copied().fold(f64::INFINITY, f64::min);
    let max_seconds = seconds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let time = TimeStats {
        answers,
        mean_seconds,
        median_seconds: median(&mut seconds),
        min_seconds: if answers == 0 { 0.0 } else { min_seconds },
        max_seconds: if answers == 0 { 0.0 } else { max_seconds },
        per_worker_total_seconds: submissions
            .iter()
            .map(|s| (s.worker_id.clone(), s.answers.iter().map(|a| a.elapsed_seconds).sum()))
            .collect(),
    };

    let mut label_distribution: BTreeMap<String, usize> = bundle.label_set.iter().map(|l| (l.clone(), 0)).collect();
    for answer in submissions.iter().flat_map(|s| &s.answers) {
        *label_distribution.entry(answer.label.clone()).or_insert(0) += 1;
    }

    let flagged_workers: Vec<String> = workers.iter().filter(|w| w.is_flagged()).map(|w| w.worker_id.clone()).collect();
    let included: Vec<&WorkerSubmission> = submissions
        .iter()
        .zip(&workers)
        .filter(|(_, q)| include_flagged || !q.is_flagged())
        .map(|(s, _)| s)
        .collect();

    let agreement = if included.len() >= 2 {
        let regular: Vec<(usize, &str)> = bundle
            .sequence
            .iter()
            .filter(|p| p.role == ItemRole::Item)
            .map(|p| (p.presented_index, p.item_id.as_str()))
            .collect();
        let mut rows = Vec::with_capacity(regular.len());
        for (index, _) in &regular {
            let row = included
                .iter()
                .map(|s| s.answers.iter().find(|a| a.presented_index == *index).map(|a| a.label.clone()))
                .collect();
            rows.push(row);
        }
        let matrix = RatingMatrix::new(regular.iter().map(|(_, id)| id.to_string()).collect(), rows);
        Some(agreement(&matrix, &bundle.label_set)?)
    } else {
        None
    };

    Ok(ProjectStatistics {
        time,
        label_distribution,
        agreement,
        included_workers: included.iter().map(|s| s.worker_id.clone()).collect(),
        flagged_workers,
        feedback: submissions
            .iter()
            .filter_map(|s| s.feedback_text.as_ref().filter(|t| !t.trim().is_empty()).map(|t| (s.worker_id.clone(), t.clone())))
            .collect(),
        workers,
    })
}

impl ProjectStatistics {
    /// Plain-text report for requesters.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Answers: {}", self.time.answers);
        let _ = writeln!(
            out,
            "Seconds per answer: mean {:.1}, median {:.1}, min {:.1}, max {:.1}",
            self.time.mean_seconds, self.time.median_seconds, self.time.min_seconds, self.time.max_seconds
        );
        out.push_str("\nLabel distribution:\n");
        for (label, count) in &self.label_distribution {
            let _ = writeln!(out, "  {label}: {count}");
        }
        out.push('\n');
        match &self.agreement {
            Some(a) => {
                let _ = writeln!(
                    out,
                    "Agreement ({} raters, {} items): {:?} kappa {:.4}, percent agreement {:.4}",
                    a.raters, a.items_used, a.kappa_kind, a.kappa, a.percent_agreement
                );
            }
            None => out.push_str("Agreement: not enough included workers\n"),
        }
        out.push_str("\nWorkers:\n");
        for w in &self.workers {
            let fmt_opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
            let flags: Vec<String> = w.flags.iter().map(|f| format!("{f:?}")).collect();
            let _ = writeln!(
                out,
                "  {}: golden {}, duplicates {}, median {:.1}s{}",
                w.worker_id,
                fmt_opt(w.golden_accuracy),
                fmt_opt(w.duplicate_consistency),
                w.median_seconds,
                if flags.is_empty() { String::new() } else { format!(", flagged {}", flags.join(" ")) }
            );
        }
        if !self.feedback.is_empty() {
            out.push_str("\nWorker feedback:\n");
            for (worker, text) in &self.feedback {
                let _ = writeln!(out, "  {worker}: {text}");
            }
        }
        out
    }
}
