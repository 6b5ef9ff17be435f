//! Rule-based slot extraction, shared-state merging and domain detection.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SharedDialogState, SlotValue, SystemId};
use crate::text::{tokenize, words};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExtractorRule {
    /// Whole-word, case-insensitive match against a list of (possibly multi-word) entries.
    Gazetteer(Vec<String>),
    /// Case-insensitive regular expression; the first capture group is the value
    /// when present, otherwise the whole match.
    Pattern(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub extractor: ExtractorRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub slots: Vec<SlotSpec>,
}

impl Default for SlotSchema {
    /// `city` from a gazetteer and `date` from relative-day, weekday and ISO date patterns.
    fn default() -> Self {
        Self {
            slots: vec![
                SlotSpec {
                    name: "city".into(),
                    extractor: ExtractorRule::Gazetteer(DEFAULT_CITIES.iter().map(|c| c.to_string()).collect()),
                },
                SlotSpec { name: "date".into(), extractor: ExtractorRule::Pattern(DEFAULT_DATE_PATTERN.into()) },
            ],
        }
    }
}

impl SlotSchema {
    pub fn slot_names(&self) -> BTreeSet<String> {
        self.slots.iter().map(|s| s.name.clone()).collect()
    }

    pub fn compile(&self) -> Result<SlotExtractor, SchemaError> {
        let mut seen = HashSet::new();
        let mut compiled = Vec::with_capacity(self.slots.len());
        for spec in &self.slots {
            if spec.name.trim().is_empty() {
                return Err(SchemaError::EmptySlotName);
            }
            if !seen.insert(spec.name.as_str()) {
                return Err(SchemaError::DuplicateSlot(spec.name.clone()));
            }
            let matcher = match &spec.extractor {
                ExtractorRule::Gazetteer(entries) => {
                    let mut phrases: Vec<Vec<String>> =
                        entries.iter().map(|e| tokenize(e)).filter(|t| !t.is_empty()).collect();
                    // Longest entries first so "new york city" wins over "new york".
                    phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
                    phrases.dedup();
                    Matcher::Gazetteer(phrases)
                }
                ExtractorRule::Pattern(p) => {
                    let re = RegexBuilder::new(p)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| SchemaError::BadPattern { slot: spec.name.clone(), reason: e.to_string() })?;
                    Matcher::Pattern(re)
                }
            };
            compiled.push((spec.name.clone(), matcher));
        }
        Ok(SlotExtractor { slots: compiled })
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Gazetteer(Vec<Vec<String>>),
    Pattern(Regex),
}

/// A compiled [`SlotSchema`].
#[derive(Debug, Clone)]
pub struct SlotExtractor {
    slots: Vec<(String, Matcher)>,
}

impl SlotExtractor {
    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(n, _)| n.as_str())
    }

    pub fn has_slot(&self, name: &str) -> bool {
        self.slots.iter().any(|(n, _)| n == name)
    }

    /// Slots whose extractor matched `text`, with the surface string as written.
    /// The first match in reading order wins for each slot.
    pub fn extract(&self, text: &str) -> BTreeMap<String, String> {
        let ws: Vec<_> = words(text).collect();
        let mut out = BTreeMap::new();
        for (name, matcher) in &self.slots {
            let found = match matcher {
                Matcher::Gazetteer(phrases) => gazetteer_match(text, &ws, phrases),
                Matcher::Pattern(re) => re.captures(text).and_then(|caps| {
                    caps.get(1).or_else(|| caps.get(0)).map(|m| m.as_str().to_owned())
                }),
            };
            if let Some(value) = found.filter(|v| !v.is_empty()) {
                out.insert(name.clone(), value);
            }
        }
        out
    }
}

fn gazetteer_match(text: &str, ws: &[crate::text::Word], phrases: &[Vec<String>]) -> Option<String> {
    for start in 0..ws.len() {
        for phrase in phrases {
            let end = start + phrase.len();
            if end <= ws.len() && ws[start..end].iter().zip(phrase).all(|(w, p)| &w.normalized == p) {
                return Some(text[ws[start].start..ws[end - 1].end].to_owned());
            }
        }
    }
    None
}

/// Free-function form of [`SlotExtractor::extract`].
pub fn extract_slots(utterance_text: &str, extractor: &SlotExtractor) -> BTreeMap<String, String> {
    extractor.extract(utterance_text)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("slot name must not be empty")]
    EmptySlotName,
    #[error("slot {0:?} defined twice")]
    DuplicateSlot(String),
    #[error("slot {slot:?} has an invalid pattern: {reason}")]
    BadPattern { slot: String, reason: String },
    #[error("domain rule {0:?} has no trigger keywords")]
    EmptyKeywords(String),
    #[error("domain rule {domain:?} keyword {keyword:?} must be a single lowercase word")]
    BadKeyword { domain: String, keyword: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("update at turn {turn} is older than slot {slot:?} set at turn {set_at_turn}")]
    StaleTurn { slot: String, set_at_turn: usize, turn: usize },
}

/// Last-write-wins merge of `updates` into `state`, recording provenance for
/// every written slot.
pub fn merge_state(
    state: &SharedDialogState,
    updates: &BTreeMap<String, String>,
    source: &SystemId,
    turn: usize,
) -> Result<SharedDialogState, StateError> {
    if let Some((slot, v)) = state.slots.iter().find(|(_, v)| v.set_at_turn > turn) {
        return Err(StateError::StaleTurn { slot: slot.clone(), set_at_turn: v.set_at_turn, turn });
    }
    let mut next = state.clone();
    for (slot, value) in updates {
        next.slots.insert(
            slot.clone(),
            SlotValue { value: value.clone(), source_system: source.clone(), set_at_turn: turn },
        );
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRule {
    pub domain: String,
    pub trigger_keywords: BTreeSet<String>,
}

impl DomainRule {
    pub fn new(domain: &str, keywords: &[&str]) -> Self {
        Self { domain: domain.into(), trigger_keywords: keywords.iter().map(|k| k.to_string()).collect() }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.trigger_keywords.is_empty() {
            return Err(SchemaError::EmptyKeywords(self.domain.clone()));
        }
        for kw in &self.trigger_keywords {
            if tokenize(kw) != [kw.clone()] {
                return Err(SchemaError::BadKeyword { domain: self.domain.clone(), keyword: kw.clone() });
            }
        }
        Ok(())
    }
}

pub fn default_domain_rules() -> Vec<DomainRule> {
    vec![
        DomainRule::new("weather", &["weather", "forecast", "temperature", "rain", "raining", "snow", "sunny"]),
        DomainRule::new(
            "restaurant",
            &["restaurant", "restaurants", "food", "eat", "dinner", "lunch", "cuisine", "hungry"],
        ),
        DomainRule::new("game", &["game", "games", "play", "trivia", "quiz"]),
    ]
}

/// Domain with the most whole-word keyword hits; ties go to the earlier rule.
/// `None` means no keyword matched and the session should stay where it is.
pub fn detect_domain(utterance_text: &str, rules: &[DomainRule]) -> Option<String> {
    let tokens = tokenize(utterance_text);
    let mut best: Option<(&DomainRule, usize)> = None;
    for rule in rules {
        let hits = tokens.iter().filter(|t| rule.trigger_keywords.contains(t.as_str())).count();
        if hits > 0 && best.is_none_or(|(_, h)| hits > h) {
            best = Some((rule, hits));
        }
    }
    best.map(|(rule, _)| rule.domain.clone())
}

pub const DEFAULT_DATE_PATTERN: &str = r"\b(today|tonight|tomorrow|yesterday|this weekend|next week|monday|tuesday|wednesday|thursday|friday|saturday|sunday|\d{4}-\d{2}-\d{2})\b";

/// Built-in city gazetteer. Cities whose names are common English words are left out.
pub const DEFAULT_CITIES: &[&str] = &[
    "Aberdeen", "Abu Dhabi", "Accra", "Adelaide", "Albuquerque", "Amsterdam", "Anchorage", "Ann Arbor",
    "Athens", "Atlanta", "Auckland", "Austin", "Baltimore", "Bangalore", "Bangkok", "Barcelona", "Beijing",
    "Beirut", "Belfast", "Belgrade", "Berlin", "Birmingham", "Bogota", "Boise", "Bologna", "Bordeaux",
    "Boston", "Boulder", "Brisbane", "Bristol", "Brussels", "Bucharest", "Budapest", "Buenos Aires",
    "Buffalo", "Cairo", "Calgary", "Cambridge", "Canberra", "Cape Town", "Caracas", "Cardiff",
    "Charlotte", "Chennai", "Chicago", "Cincinnati", "Cleveland", "Cologne", "Columbus", "Copenhagen",
    "Cork", "Dallas", "Delhi", "Denver", "Detroit", "Doha", "Dresden", "Dubai", "Dublin", "Durham",
    "Edinburgh", "Edmonton", "El Paso", "Florence", "Frankfurt", "Fresno", "Geneva", "Genoa", "Glasgow",
    "Gothenburg", "Guadalajara", "Hamburg", "Hanoi", "Hartford", "Havana", "Helsinki", "Hiroshima",
    "Ho Chi Minh City", "Hong Kong", "Honolulu", "Houston", "Hyderabad", "Indianapolis", "Istanbul",
    "Jacksonville", "Jakarta", "Jerusalem", "Johannesburg", "Kansas City", "Karachi", "Kathmandu",
    "Kiev", "Kingston", "Kolkata", "Krakow", "Kuala Lumpur", "Kyoto", "Lagos", "Las Vegas", "Leeds",
    "Leipzig", "Lima", "Lisbon", "Liverpool", "London", "Los Angeles", "Louisville", "Lyon", "Madison",
    "Madrid", "Manchester", "Manila", "Marseille", "Melbourne", "Memphis", "Mexico City", "Miami",
    "Milan", "Milwaukee", "Minneapolis", "Montreal", "Moscow", "Mumbai", "Munich", "Nagoya", "Nairobi",
    "Nanjing", "Naples", "Nashville", "New Delhi", "New Haven", "New Orleans", "New York",
    "New York City", "Newcastle", "Nottingham", "Oakland", "Omaha", "Osaka", "Oslo", "Ottawa", "Oxford",
    "Palo Alto", "Paris", "Perth", "Philadelphia", "Phoenix", "Pittsburgh", "Portland", "Porto",
    "Prague", "Princeton", "Providence", "Quebec City", "Raleigh", "Reykjavik", "Richmond",
    "Rio de Janeiro", "Riyadh", "Rochester", "Rome", "Rotterdam", "Sacramento", "Salt Lake City",
    "San Antonio", "San Diego", "San Francisco", "San Jose", "Santiago", "Sao Paulo", "Sapporo",
    "Seattle", "Seoul", "Seville", "Shanghai", "Sheffield", "Shenzhen", "Singapore", "Sofia",
    "St Louis", "Stockholm", "Stuttgart", "Sydney", "Taipei", "Tallinn", "Tampa", "Tel Aviv",
    "Tokyo", "Toronto", "Toulouse", "Tucson", "Tulsa", "Turin", "Valencia", "Vancouver", "Venice",
    "Vienna", "Vilnius", "Warsaw", "Washington", "Wellington", "Winnipeg", "Wuhan", "Yokohama",
    "Zagreb", "Zurich",
];
