//! Extraction of magnet settings from free-form model output.
//!
//! Fenced code blocks are searched first. A fence carrying an info string
//! (```` ```json ````) always opens a block; a bare fence closes the open
//! block or opens one. Without any fence, brace groups standing on their own
//! lines are tried instead. Exactly one conforming object must remain.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::task::{ActuatorBox, ClampFlags, MagnetSettings, MAGNET_NAMES};

use super::json_block;

pub const EXCERPT_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoJson,
    InvalidJson,
    AmbiguousMultiple,
    MissingKeys,
    NonNumeric,
    ExtraKeysDisallowed,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NoJson => "no_json",
            Self::InvalidJson => "invalid_json",
            Self::AmbiguousMultiple => "ambiguous_multiple",
            Self::MissingKeys => "missing_keys",
            Self::NonNumeric => "non_numeric",
            Self::ExtraKeysDisallowed => "extra_keys_disallowed",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: FailureReason,
    pub excerpt: String,
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {:?}", self.reason.as_str(), self.excerpt)
    }
}

impl std::error::Error for ParseFailure {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSettings {
    /// SI units, not clamped.
    pub values: MagnetSettings,
    /// Numbers exactly as written, steerers in mrad.
    pub display: [f64; 5],
    pub raw_block: String,
    /// Fields outside the actuator box.
    pub clamped: ClampFlags,
}

/// The JSON block a model is asked to produce for `settings`.
pub fn format_settings_block(settings: &MagnetSettings) -> String {
    json_block(&MAGNET_NAMES, &settings.to_display())
}

/// Verdict on one candidate; the derived order is the reporting precedence,
/// weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Rejection {
    Unrelated,
    Invalid,
    Missing,
    Extra,
    NonNumeric,
}

impl Rejection {
    fn reason(self) -> FailureReason {
        match self {
            Self::Unrelated | Self::Missing => FailureReason::MissingKeys,
            Self::Invalid => FailureReason::InvalidJson,
            Self::Extra => FailureReason::ExtraKeysDisallowed,
            Self::NonNumeric => FailureReason::NonNumeric,
        }
    }
}

fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_LIMIT).collect()
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find("```") {
        let at = search + rel;
        let after = at + 3;
        let tag_len = text[after..]
            .char_indices()
            .find(|(_, c)| !c.is_ascii_alphanumeric())
            .map_or(text.len() - after, |(i, _)| i);
        if tag_len > 0 {
            open = Some(after + tag_len);
        } else if let Some(start) = open.take() {
            blocks.push(&text[start..at]);
        } else {
            open = Some(after);
        }
        search = after + tag_len;
    }
    if let Some(start) = open {
        if !text[start..].trim().is_empty() {
            blocks.push(&text[start..]);
        }
    }
    blocks
}

/// Top-level balanced `{...}` spans, skipping braces inside JSON strings.
fn brace_groups(text: &str) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let (mut depth, mut start) = (0usize, 0usize);
    let (mut in_string, mut escaped) = (false, false);
    for (i, c) in text.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_string = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    groups.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    groups
}

fn standalone_groups(text: &str) -> Vec<&str> {
    brace_groups(text)
        .into_iter()
        .filter(|&(a, b)| {
            let line_start = text[..a].rfind('\n').map_or(0, |i| i + 1);
            let line_end = text[b..].find('\n').map_or(text.len(), |i| b + i);
            text[line_start..a].trim().is_empty() && text[b..line_end].trim().is_empty()
        })
        .map(|(a, b)| &text[a..b])
        .collect()
}

fn classify(map: &Map<String, Value>) -> Result<[f64; 5], Rejection> {
    let present: Vec<&str> = MAGNET_NAMES.iter().copied().filter(|k| map.contains_key(*k)).collect();
    if present.is_empty() {
        return Err(Rejection::Unrelated);
    }
    if present.iter().any(|k| !map[*k].is_number()) {
        return Err(Rejection::NonNumeric);
    }
    if present.len() < MAGNET_NAMES.len() {
        return Err(Rejection::Missing);
    }
    if map.len() > MAGNET_NAMES.len() {
        return Err(Rejection::Extra);
    }
    let mut out = [0.0; 5];
    for (v, k) in out.iter_mut().zip(MAGNET_NAMES) {
        *v = map[k].as_f64().ok_or(Rejection::NonNumeric)?;
    }
    Ok(out)
}

fn candidate(text: &str) -> Result<[f64; 5], Rejection> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(map)) => classify(&map),
        Ok(_) => Err(Rejection::Unrelated),
        Err(_) => Err(Rejection::Invalid),
    }
}

/// Extracts one set of magnet settings from a response. Out-of-range values
/// are kept and flagged.
pub fn parse(text: &str, actuators: &ActuatorBox) -> Result<ParsedSettings, ParseFailure> {
    let mut sources = fenced_blocks(text);
    if sources.is_empty() {
        sources = standalone_groups(text);
    }

    let mut accepted: Vec<(&str, [f64; 5])> = Vec::new();
    let mut worst: Option<(Rejection, &str)> = None;
    for src in sources {
        match candidate(src) {
            Ok(values) => accepted.push((src, values)),
            Err(r) => {
                if worst.is_none_or(|(w, _)| r > w) {
                    worst = Some((r, src));
                }
            }
        }
    }

    match accepted.len() {
        1 => {
            let (src, display) = accepted[0];
            let values = MagnetSettings::from_display(display);
            let (_, clamped) = actuators.clamp(&values);
            Ok(ParsedSettings {
                values,
                display,
                raw_block: src.trim().to_string(),
                clamped,
            })
        }
        0 => Err(match worst {
            Some((r, src)) => ParseFailure {
                reason: r.reason(),
                excerpt: excerpt(src.trim()),
            },
            None => ParseFailure {
                reason: FailureReason::NoJson,
                excerpt: excerpt(text.trim()),
            },
        }),
        _ => Err(ParseFailure {
            reason: FailureReason::AmbiguousMultiple,
            excerpt: excerpt(accepted[1].0.trim()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(text: &str) -> Result<ParsedSettings, ParseFailure> {
        parse(text, &ActuatorBox::default())
    }

    fn reason(text: &str) -> FailureReason {
        run(text).unwrap_err().reason
    }

    const GOOD: &str = r#"{"Q1": 1.5, "Q2": -2, "CV": 0.5, "Q3": 3.25, "CH": -1.0}"#;

    #[test]
    fn accepts_a_tagged_block() {
        let p = run(&format!("Sure.\n```json\n{GOOD}\n```\nDone.")).unwrap();
        assert_eq!(p.display, [1.5, -2.0, 0.5, 3.25, -1.0]);
        assert_eq!(p.values.cv, 0.5e-3);
        assert!(!p.clamped.any());
    }

    #[test]
    fn accepts_a_bare_block_and_a_standalone_object() {
        assert!(run(&format!("```\n{GOOD}\n```")).is_ok());
        assert!(run(&format!("Proposal:\n  {GOOD}  \nThanks")).is_ok());
    }

    #[test]
    fn inline_objects_outside_fences_are_ignored() {
        assert_eq!(reason(&format!("Child A: {GOOD}")), FailureReason::NoJson);
    }

    #[test]
    fn empty_and_prose_give_no_json() {
        assert_eq!(reason(""), FailureReason::NoJson);
        assert_eq!(reason("I cannot help with that."), FailureReason::NoJson);
    }

    #[test]
    fn strict_json_only() {
        let comma = r#"```json { "Q1": 1, "Q2": 1, "CV": 1, "Q3": 1, "CH": 1, } ```"#;
        assert_eq!(reason(comma), FailureReason::InvalidJson);
        let comment = "```json\n{\"Q1\": 1, // k1\n\"Q2\": 1, \"CV\": 1, \"Q3\": 1, \"CH\": 1}\n```";
        assert_eq!(reason(comment), FailureReason::InvalidJson);
    }

    #[test]
    fn key_set_must_match_exactly() {
        let missing = r#"```json {"Q1": 1, "Q2": 1, "CV": 1, "Q3": 1} ```"#;
        assert_eq!(reason(missing), FailureReason::MissingKeys);
        let extra = r#"```json {"Q1": 1, "Q2": 1, "CV": 1, "Q3": 1, "CH": 1, "Q4": 0} ```"#;
        assert_eq!(reason(extra), FailureReason::ExtraKeysDisallowed);
        let lower = r#"```json {"q1": 1, "q2": 1, "cv": 1, "q3": 1, "ch": 1} ```"#;
        assert_eq!(reason(lower), FailureReason::MissingKeys);
    }

    #[test]
    fn digit_strings_are_not_numbers() {
        let text = r#"```json {"Q1": "1.0", "Q2": 1, "CV": 1, "Q3": 1, "CH": 1} ```"#;
        assert_eq!(reason(text), FailureReason::NonNumeric);
        let null = r#"```json {"Q1": null, "Q2": 1, "CV": 1, "Q3": 1, "CH": 1} ```"#;
        assert_eq!(reason(null), FailureReason::NonNumeric);
    }

    #[test]
    fn two_conforming_objects_are_ambiguous() {
        let text = format!("```json\n{GOOD}\n```\nor\n```json\n{GOOD}\n```");
        assert_eq!(reason(&text), FailureReason::AmbiguousMultiple);
    }

    #[test]
    fn one_conforming_object_beside_other_json_is_accepted() {
        let text = format!("```json\n{GOOD}\n```\n```json\n{{\"mu_x\": 1.0}}\n```");
        assert!(run(&text).is_ok());
    }

    #[test]
    fn out_of_range_values_are_flagged_not_rejected() {
        let text = r#"```json {"Q1": 45.0, "Q2": 1, "CV": -9.5, "Q3": 1, "CH": 1} ```"#;
        let p = run(text).unwrap();
        assert_eq!(p.values.q1, 45.0);
        assert_eq!(p.clamped.0, [true, false, true, false, false]);
    }

    #[test]
    fn unterminated_block_is_still_read() {
        assert!(run(&format!("```json\n{GOOD}\n")).is_ok());
    }

    #[test]
    fn excerpt_is_bounded() {
        let long = "x".repeat(5000);
        let f = run(&long).unwrap_err();
        assert_eq!(f.excerpt.chars().count(), EXCERPT_LIMIT);
        let wide = "é".repeat(900);
        assert_eq!(run(&wide).unwrap_err().excerpt.chars().count(), EXCERPT_LIMIT);
    }

    #[test]
    fn braces_inside_strings_do_not_split_groups() {
        let text = "{\"note\": \"}\", \"Q1\": 1}";
        assert_eq!(brace_groups(text), vec![(0, text.len())]);
    }

    proptest! {
        #[test]
        fn formatted_settings_reparse(v in prop::array::uniform5(-30.0f64..30.0)) {
            let s = MagnetSettings::new(v[0], v[1], v[2] * 2e-4, v[3], v[4] * 2e-4);
            let block = format_settings_block(&s);
            let p = run(&block).unwrap();
            let again = run(&format_settings_block(&p.values)).unwrap();
            prop_assert_eq!(p.display, again.display);
            for (shown, orig) in p.display.iter().zip(s.to_display()) {
                prop_assert!((shown - orig).abs() <= 0.005 + 1e-9);
            }
        }

        #[test]
        fn parse_is_total(text in ".{0,300}") {
            let _ = run(&text);
        }
    }
}
