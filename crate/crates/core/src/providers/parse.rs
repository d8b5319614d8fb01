//! Parsing of chat-model replies: object hints and multiple-choice answers.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::elevation::ObjectHint;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no JSON array of {{label, x, y}} objects in reply")]
pub struct HintParseError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("reply does not select one of {n_choices} choices: {detail}")]
pub struct AnswerParseError {
    pub n_choices: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedHints {
    pub hints: Vec<ObjectHint>,
    /// At least one coordinate was outside the image and got clamped.
    pub clamped: bool,
    pub duplicates_dropped: usize,
}

#[derive(Deserialize)]
struct RawHint {
    label: String,
    x: f64,
    y: f64,
}

fn clamp_coord(v: f64, size: u32, clamped: &mut bool) -> u32 {
    let max = size.saturating_sub(1) as f64;
    let r = v.round();
    if !(0.0..=max).contains(&r) {
        *clamped = true;
    }
    if r.is_nan() {
        0
    } else {
        r.clamp(0.0, max) as u32
    }
}

/// First JSON array of `{label, x, y}` in `raw`; coordinates clamped into
/// the image and identical hints collapsed. Object ids follow reply order.
pub fn parse_object_hints(raw: &str, width: u32, height: u32) -> Result<ParsedHints, HintParseError> {
    let raw_hints = raw
        .match_indices('[')
        .find_map(|(i, _)| {
            let mut de = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Vec<RawHint>>();
            de.next().and_then(Result::ok)
        })
        .ok_or(HintParseError)?;
    let mut out = ParsedHints::default();
    let mut seen = HashSet::new();
    for h in raw_hints {
        let label = h.label.trim().to_string();
        let x = clamp_coord(h.x, width, &mut out.clamped);
        let y = clamp_coord(h.y, height, &mut out.clamped);
        if !seen.insert((label.clone(), x, y)) {
            out.duplicates_dropped += 1;
            continue;
        }
        out.hints.push(ObjectHint {
            label,
            center_px: [x, y],
            object_id: out.hints.len() as u32,
        });
    }
    if out.clamped {
        log::warn!("object hint coordinates clamped into {width}x{height}");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub letter: char,
    pub index: usize,
    pub thinking: Option<String>,
    /// No answer tags; the last non-empty line was used.
    pub from_last_line: bool,
}

pub fn choice_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

static THINKING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<thinking>(.*?)</thinking>").unwrap());
static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").unwrap());
static PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:the\s+)?(?:final\s+)?(?:answer|choice|option)\s*(?:is)?\s*[:\-]?\s*").unwrap());
static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([A-Ea-e])\)?(?:[.):,]|\s|$)").unwrap());

fn match_choice(segment: &str, choices: &[String]) -> Option<usize> {
    let s = PREFIX.replace(segment.trim(), "");
    let s = s.trim();
    if let Some(c) = LETTER.captures(s) {
        let idx = (c[1].to_ascii_uppercase().as_bytes()[0] - b'A') as usize;
        // a bare word like "a chair" starts with a letter-looking token
        let rest = &s[c.get(0).unwrap().end()..];
        let bare = rest.trim().is_empty() || c[0].ends_with(['.', ')', ':', ',']) || c[1].chars().all(|ch| ch.is_ascii_uppercase());
        if idx < choices.len() && bare {
            return Some(idx);
        }
    }
    let lower = s.to_lowercase();
    let hits: Vec<usize> = (0..choices.len())
        .filter(|&i| {
            let c = choices[i].trim().to_lowercase();
            !c.is_empty() && lower.contains(&c)
        })
        .collect();
    // drop hits that are substrings of another hit
    let maximal: Vec<usize> = hits
        .iter()
        .copied()
        .filter(|&i| {
            let ci = choices[i].trim().to_lowercase();
            !hits
                .iter()
                .any(|&j| j != i && choices[j].trim().to_lowercase().contains(&ci) && choices[j].trim().len() > ci.len())
        })
        .collect();
    match maximal.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

/// Extracts the chosen letter from a reply in `<thinking>..</thinking>
/// <answer>..</answer>` form, falling back to the last non-empty line.
pub fn parse_answer(raw: &str, choices: &[String]) -> Result<ParsedAnswer, AnswerParseError> {
    assert!(!choices.is_empty() && choices.len() <= 5, "1 to 5 choices");
    let err = |detail: &str| AnswerParseError {
        n_choices: choices.len(),
        detail: detail.to_string(),
    };
    let thinking = THINKING.captures(raw).map(|c| c[1].trim().to_string());
    let (segment, from_last_line) = match ANSWER.captures_iter(raw).last() {
        Some(c) => (c[1].to_string(), false),
        None => {
            let without = THINKING.replace_all(raw, "");
            let line = without.lines().map(str::trim).rfind(|l| !l.is_empty()).ok_or_else(|| err("empty reply"))?;
            (line.to_string(), true)
        }
    };
    let index = match_choice(&segment, choices).ok_or_else(|| err(segment.trim()))?;
    Ok(ParsedAnswer {
        letter: choice_letter(index),
        index,
        thinking,
        from_last_line,
    })
}
