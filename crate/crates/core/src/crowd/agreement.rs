//! Chance-corrected inter-annotator agreement.
//!
//! Two raters get Cohen's kappa over the items both labelled. Three or more
//! get Fleiss' kappa, generalized so each item may have its own number of
//! ratings (items with fewer than two ratings are dropped).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::CrowdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KappaKind {
    Cohen,
    Fleiss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub percent_agreement: f64,
    pub kappa: f64,
    pub kappa_kind: KappaKind,
    pub per_item_agreement: BTreeMap<String, f64>,
    pub items_used: usize,
    pub raters: usize,
}

/// Items × raters label table; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub item_ids: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RatingMatrix {
    pub fn new(item_ids: Vec<String>, rows: Vec<Vec<Option<String>>>) -> Self {
        Self { item_ids, rows }
    }

    pub fn rater_count(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Fraction of agreeing rater pairs among `n` ratings with per-label counts `counts`.
fn pairwise_agreement(counts: &[usize], n: usize) -> f64 {
    let agreeing: usize = counts.iter().map(|c| c * c.saturating_sub(1)).sum();
    agreeing as f64 / (n * (n - 1)) as f64
}

pub fn agreement(matrix: &RatingMatrix, label_set: &[String]) -> Result<AgreementReport, CrowdError> {
    let raters = matrix.rater_count();
    if raters < 2 {
        return Err(CrowdError::TooFewRaters(raters));
    }
    if matrix.item_ids.len() != matrix.rows.len() {
        return Err(CrowdError::InvalidProject("item_ids and rows differ in length".into()));
    }
    let label_index: HashMap<&str, usize> = label_set.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut coded: Vec<(&str, Vec<Option<usize>>)> = Vec::with_capacity(matrix.rows.len());
    for (item_id, row) in matrix.item_ids.iter().zip(&matrix.rows) {
        let mut out = Vec::with_capacity(raters);
        for cell in row {
            out.push(match cell {
                None => None,
                Some(label) => {
                    Some(*label_index.get(label.as_str()).ok_or_else(|| CrowdError::UnknownLabel(label.clone()))?)
                }
            });
        }
        out.resize(raters, None);
        coded.push((item_id, out));
    }

    let k = label_set.len();
    let mut per_item = BTreeMap::new();
    let mut label_totals = vec![0usize; k];
    let mut total_ratings = 0usize;
    let mut agreement_sum = 0.0;
    // Cohen marginals: rater 0 and rater 1 label counts over shared items.
    let mut marginals = [vec![0usize; k], vec![0usize; k]];
    let mut items_used = 0usize;

    for (item_id, row) in &coded {
        let present: Vec<usize> = row.iter().flatten().copied().collect();
        if present.len() < 2 {
            continue;
        }
        items_used += 1;
        let mut counts = vec![0usize; k];
        for &l in &present {
            counts[l] += 1;
        }
        let p = pairwise_agreement(&counts, present.len());
        per_item.insert(item_id.to_string(), p);
        agreement_sum += p;
        for (t, c) in label_totals.iter_mut().zip(&counts) {
            *t += c;
        }
        total_ratings += present.len();
        if raters == 2 {
            marginals[0][row[0].expect("both present")] += 1;
            marginals[1][row[1].expect("both present")] += 1;
        }
    }
    if items_used == 0 {
        return Err(CrowdError::NoComparableItems);
    }

    let observed = agreement_sum / items_used as f64;
    let (expected, kind) = if raters == 2 {
        let n = items_used as f64;
        let pe: f64 = marginals[0].iter().zip(&marginals[1]).map(|(a, b)| (*a as f64 / n) * (*b as f64 / n)).sum();
        (pe, KappaKind::Cohen)
    } else {
        let n = total_ratings as f64;
        let pe: f64 = label_totals.iter().map(|c| (*c as f64 / n).powi(2)).sum();
        (pe, KappaKind::Fleiss)
    };
    let kappa = if (1.0 - expected).abs() < f64::EPSILON {
        // Every rating used one label: chance explains everything.
        if observed >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (observed - expected) / (1.0 - expected)
    };

    Ok(AgreementReport {
        percent_agreement: observed,
        kappa,
        kappa_kind: kind,
        per_item_agreement: per_item,
        items_used,
        raters,
    })
}
