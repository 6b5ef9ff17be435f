//! Tokenization shared by domain detection, slot matching and n-gram counts.
//!
//! Tokens are lowercased, stripped of punctuation and split on whitespace.
//! No stemming.

/// Lowercased, punctuation-free tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    words(text).map(|w| w.normalized).collect()
}

/// A whitespace-delimited word with its byte span in the source text.
///
/// The span excludes leading and trailing punctuation, so slicing the source
/// with it yields the original surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub start: usize,
    pub end: usize,
    pub normalized: String,
}

pub fn words(text: &str) -> impl Iterator<Item = Word> + '_ {
    let base = text.as_ptr() as usize;
    text.split_whitespace().filter_map(move |raw| {
        let start_in_text = raw.as_ptr() as usize - base;
        let normalized: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if normalized.is_empty() {
            return None;
        }
        let lead = raw.len() - raw.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
        let trimmed = raw.trim_end_matches(|c: char| !c.is_alphanumeric());
        Some(Word { start: start_in_text + lead, end: start_in_text + trimmed.len(), normalized })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_case() {
        assert_eq!(tokenize("Hello, World! what's up?"), vec!["hello", "world", "whats", "up"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ... !! ").is_empty());
    }

    #[test]
    fn word_spans_point_at_surface_form() {
        let text = "weather in \"Pittsburgh\", please";
        let ws: Vec<_> = words(text).collect();
        assert_eq!(&text[ws[2].start..ws[2].end], "Pittsburgh");
        assert_eq!(ws[2].normalized, "pittsburgh");
        assert_eq!(&text[ws[3].start..ws[3].end], "please");
    }

    #[test]
    fn repeated_words_get_distinct_spans() {
        let text = "go go go";
        let spans: Vec<_> = words(text).map(|w| (w.start, w.end)).collect();
        assert_eq!(spans, vec![(0, 2), (3, 5), (6, 8)]);
    }
}
