use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::CrowdError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub item: String,
    pub label: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenItem {
    pub item_id: String,
    pub content: String,
    pub expected_label: String,
}

/// An annotation task definition as written by the requester.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdProject {
    pub title: String,
    pub instructions: String,
    /// Links to outside guidance, rendered alongside the instructions.
    #[serde(default)]
    pub links: Vec<String>,
    #[serde(default)]
    pub examples: Vec<LabeledExample>,
    /// Each counterexample's `label` is the wrong label being illustrated.
    #[serde(default)]
    pub counterexamples: Vec<LabeledExample>,
    #[serde(default)]
    pub consent_text: Option<String>,
    pub label_set: Vec<String>,
    pub items: Vec<Item>,
    #[serde(default)]
    pub golden: Vec<GoldenItem>,
    #[serde(default)]
    pub duplicate_rate: f64,
    /// Expected time a careful worker spends on one presented item.
    #[serde(default = "default_seconds_per_item")]
    pub estimated_seconds_per_item: f64,
    /// Opaque display options passed through to the rendered page.
    #[serde(default)]
    pub style: BTreeMap<String, String>,
}

fn default_seconds_per_item() -> f64 {
    10.0
}

impl CrowdProject {
    pub fn validate(&self) -> Result<(), CrowdError> {
        let invalid = |msg: String| Err(CrowdError::InvalidProject(msg));
        if self.title.trim().is_empty() {
            return invalid("title is empty".into());
        }
        if self.label_set.len() < 2 {
            return invalid("label_set needs at least two labels".into());
        }
        let labels: HashSet<&str> = self.label_set.iter().map(String::as_str).collect();
        if labels.len() != self.label_set.len() {
            return invalid("label_set has duplicate labels".into());
        }
        if self.items.is_empty() {
            return invalid("project has no items".into());
        }
        let mut ids = HashSet::new();
        for id in self.items.iter().map(|i| &i.item_id).chain(self.golden.iter().map(|g| &g.item_id)) {
            if !ids.insert(id.as_str()) {
                return invalid(format!("item id {id:?} is used twice"));
            }
        }
        if let Some(g) = self.golden.iter().find(|g| !labels.contains(g.expected_label.as_str())) {
            return invalid(format!("golden item {:?} expects unknown label {:?}", g.item_id, g.expected_label));
        }
        for (kind, list) in [("example", &self.examples), ("counterexample", &self.counterexamples)] {
            if let Some(e) = list.iter().find(|e| e.explanation.trim().is_empty()) {
                return invalid(format!("{kind} {:?} has no explanation", e.item));
            }
            if let Some(e) = list.iter().find(|e| !labels.contains(e.label.as_str())) {
                return invalid(format!("{kind} {:?} uses unknown label {:?}", e.item, e.label));
            }
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return invalid(format!("duplicate_rate {} outside [0, 1]", self.duplicate_rate));
        }
        if !(self.estimated_seconds_per_item.is_finite() && self.estimated_seconds_per_item > 0.0) {
            return invalid("estimated_seconds_per_item must be positive".into());
        }
        Ok(())
    }

    /// Number of duplicate presentations: `ceil(duplicate_rate * |items|)`.
    pub fn duplicate_count(&self) -> usize {
        let raw = self.duplicate_rate * self.items.len() as f64;
        // Guard against 0.2 * 10 landing a hair above 2.
        let rounded = raw.round();
        if (raw - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            raw.ceil() as usize
        }
    }
}
