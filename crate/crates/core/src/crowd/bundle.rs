use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::project::CrowdProject;
use super::CrowdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ItemRole {
    Item,
    Golden,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedItem {
    pub presented_index: usize,
    pub item_id: String,
    pub role: ItemRole,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SectionKind {
    Consent,
    Instructions,
    Links,
    Examples,
    Counterexamples,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub title: String,
    pub body: Vec<String>,
}

/// A generated task: rendered guidance sections plus the presentation order.
///
/// `golden_key` stays on the requester side; [`render_html`] never emits it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub title: String,
    pub seed: u64,
    pub label_set: Vec<String>,
    pub sections: Vec<Section>,
    pub sequence: Vec<PresentedItem>,
    pub golden_key: BTreeMap<String, String>,
    pub estimated_seconds_per_item: f64,
    #[serde(default)]
    pub style: BTreeMap<String, String>,
}

impl TaskBundle {
    pub fn count(&self, role: ItemRole) -> usize {
        self.sequence.iter().filter(|p| p.role == role).count()
    }
}

/// Shuffles the project's items and interleaves golden items and duplicates
/// at seeded positions. The duplicated items are the first
/// `ceil(duplicate_rate * |items|)` in project order, so every seed presents
/// the same multiset; no duplicate lands next to its original.
pub fn build_task(project: &CrowdProject, seed: u64) -> Result<TaskBundle, CrowdError> {
    project.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sequence: Vec<(String, ItemRole, String)> =
        project.items.iter().map(|i| (i.item_id.clone(), ItemRole::Item, i.content.clone())).collect();
    sequence.shuffle(&mut rng);

    for g in &project.golden {
        let at = rng.random_range(0..=sequence.len());
        sequence.insert(at, (g.item_id.clone(), ItemRole::Golden, g.content.clone()));
    }

    for item in project.items.iter().take(project.duplicate_count()) {
        let original = sequence
            .iter()
            .position(|(id, role, _)| *role == ItemRole::Item && id == &item.item_id)
            .expect("every item is in the sequence");
        // Inserting at `original` or `original + 1` would touch the original.
        let slots: Vec<usize> = (0..=sequence.len()).filter(|&s| s != original && s != original + 1).collect();
        if slots.is_empty() {
            return Err(CrowdError::InvalidProject(format!(
                "cannot place a duplicate of {:?} away from its original",
                item.item_id
            )));
        }
        let at = slots[rng.random_range(0..slots.len())];
        sequence.insert(at, (item.item_id.clone(), ItemRole::Duplicate, item.content.clone()));
    }

    Ok(TaskBundle {
        title: project.title.clone(),
        seed,
        label_set: project.label_set.clone(),
        sections: sections(project),
        sequence: sequence
            .into_iter()
            .enumerate()
            .map(|(presented_index, (item_id, role, content))| PresentedItem { presented_index, item_id, role, content })
            .collect(),
        golden_key: project.golden.iter().map(|g| (g.item_id.clone(), g.expected_label.clone())).collect(),
        estimated_seconds_per_item: project.estimated_seconds_per_item,
        style: project.style.clone(),
    })
}

fn sections(project: &CrowdProject) -> Vec<Section> {
    let mut out = Vec::new();
    if let Some(consent) = &project.consent_text {
        out.push(Section { kind: SectionKind::Consent, title: "Consent".into(), body: vec![consent.clone()] });
    }
    out.push(Section {
        kind: SectionKind::Instructions,
        title: "Instructions".into(),
        body: vec![project.instructions.clone()],
    });
    if !project.links.is_empty() {
        out.push(Section { kind: SectionKind::Links, title: "More guidance".into(), body: project.links.clone() });
    }
    if !project.examples.is_empty() {
        out.push(Section {
            kind: SectionKind::Examples,
            title: "Examples".into(),
            body: project
                .examples
                .iter()
                .map(|e| format!("\"{}\" is {}: {}", e.item, e.label, e.explanation))
                .collect(),
        });
    }
    if !project.counterexamples.is_empty() {
        out.push(Section {
            kind: SectionKind::Counterexamples,
            title: "Counterexamples".into(),
            body: project
                .counterexamples
                .iter()
                .map(|e| format!("\"{}\" is not {}: {}", e.item, e.label, e.explanation))
                .collect(),
        });
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// A self-contained page for the task that any crowdsourcing platform can
/// link to. Item roles and golden answers are not revealed.
pub fn render_html(bundle: &TaskBundle) -> String {
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n",
        escape(&bundle.title)
    );
    if !bundle.style.is_empty() {
        html.push_str("<style>\nbody {");
        for (k, v) in &bundle.style {
            let _ = write!(html, " {}: {};", escape(k), escape(v));
        }
        html.push_str(" }\n</style>\n");
    }
    let _ = write!(html, "</head>\n<body>\n<h1>{}</h1>\n<form method=\"post\">\n", escape(&bundle.title));
    for section in &bundle.sections {
        let _ = writeln!(html, "<section class=\"{:?}\">\n<h2>{}</h2>", section.kind, escape(&section.title));
        match section.kind {
            SectionKind::Links => {
                html.push_str("<ul>\n");
                for link in &section.body {
                    let _ = writeln!(html, "<li><a href=\"{0}\">{0}</a></li>", escape(link));
                }
                html.push_str("</ul>\n");
            }
            _ => {
                for para in &section.body {
                    let _ = writeln!(html, "<p>{}</p>", escape(para));
                }
            }
        }
        if section.kind == SectionKind::Consent {
            html.push_str("<label><input type=\"checkbox\" name=\"consent\" required> I agree</label>\n");
        }
        html.push_str("</section>\n");
    }
    for item in &bundle.sequence {
        let _ = writeln!(
            html,
            "<fieldset>\n<legend>Item {}</legend>\n<p>{}</p>",
            item.presented_index + 1,
            escape(&item.content)
        );
        for label in &bundle.label_set {
            let _ = writeln!(
                html,
                "<label><input type=\"radio\" name=\"item-{}\" value=\"{1}\" required> {1}</label>",
                item.presented_index,
                escape(label)
            );
        }
        html.push_str("</fieldset>\n");
    }
    html.push_str("<label>Feedback (optional)<br><textarea name=\"feedback\"></textarea></label>\n");
    html.push_str("<button type=\"submit\">Submit</button>\n</form>\n</body>\n</html>\n");
    html
}
