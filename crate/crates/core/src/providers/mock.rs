//! Chat models for tests and closed-loop evaluation.
//!
//! - [`ScriptedVlm`] replays queued replies and records every request.
//! - [`RandomChoiceVlm`] picks a seeded pseudo-random letter.
//! - [`OracleVlm`] always gives a fixed, known-correct letter.
//! - [`GeometryReadingVlm`] answers the spatial templates by measuring the
//!   top-down render (or the coordinate JSON) in its prompt, and guesses
//!   like [`RandomChoiceVlm`] when the prompt carries no geometry.

use std::collections::VecDeque;
use std::sync::{LazyLock, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::parse::choice_letter;
use super::{ChatRequest, ChatVlm, ContentPart, ProviderError, Stage};
use crate::pipeline::prompt::{COORDS_HEADER, LEGEND_HEADER, TOPDOWN_PREFIX};
use crate::pipeline::text_coords::parse_text_coords;
use crate::raster::{Raster, Rgb};
use crate::render::{MARKER_COLOR, PALETTE};
use crate::world::qa::{evaluate, parse_question, Metric};
use crate::Vec3;

/// Replays queued replies in order; every call is recorded.
#[derive(Debug, Default)]
pub struct ScriptedVlm {
    queue: Mutex<VecDeque<String>>,
    calls: Mutex<Vec<ChatRequest>>,
    fallback: Option<String>,
}

impl ScriptedVlm {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(replies.into_iter().map(Into::into).collect()),
            calls: Mutex::new(Vec::new()),
            fallback: None,
        }
    }

    /// Reply used once the queue runs dry.
    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("calls lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("calls lock").len()
    }
}

impl ChatVlm for ScriptedVlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.lock().expect("calls lock").push(request.clone());
        let next = self.queue.lock().expect("queue lock").pop_front();
        next.or_else(|| self.fallback.clone()).ok_or(ProviderError::Exhausted)
    }
}

static QUESTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Question: (.+)$").unwrap());
static CHOICE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^([A-E])\. (.+)$").unwrap());
static SCALE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?) m per pixel").unwrap());
static LEGEND_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^- ([a-z]+): (.+) \(id (\d+)\)$").unwrap());

/// Question text and lettered choices of an answer request.
pub fn question_of(request: &ChatRequest) -> Option<(String, Vec<String>)> {
    let text = request.all_text();
    let q = QUESTION.captures_iter(&text).last()?[1].trim().to_string();
    let start = text.rfind("Question: ")?;
    let choices = CHOICE.captures_iter(&text[start..]).map(|c| c[2].trim().to_string()).collect::<Vec<_>>();
    (!choices.is_empty()).then_some((q, choices))
}

/// FNV-1a, stable across platforms and releases.
fn stable_hash(seed: u64, text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn random_letter(seed: u64, question: &str, n: usize) -> char {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, question));
    choice_letter(rng.random_range(0..n.max(1)))
}

fn tagged(letter: char, thinking: &str) -> String {
    format!("<thinking>{thinking}</thinking>\n<answer>{letter}</answer>")
}

/// Fixed replies for the direction and hint stages.
#[derive(Debug, Clone)]
pub struct StageReplies {
    pub direction: String,
    pub hints: String,
}

impl Default for StageReplies {
    fn default() -> Self {
        Self {
            direction: "forward".into(),
            hints: "[]".into(),
        }
    }
}

impl StageReplies {
    fn reply(&self, stage: Stage) -> Option<String> {
        match stage {
            Stage::Direction => Some(self.direction.clone()),
            Stage::Hints => Some(self.hints.clone()),
            Stage::Answer => None,
        }
    }
}

/// Seeded uniform guess over the offered choices.
#[derive(Debug, Clone, Default)]
pub struct RandomChoiceVlm {
    pub seed: u64,
    pub stages: StageReplies,
}

impl ChatVlm for RandomChoiceVlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if let Some(r) = self.stages.reply(request.stage) {
            return Ok(r);
        }
        let (q, choices) = question_of(request).ok_or_else(|| ProviderError::Malformed("no question in prompt".into()))?;
        Ok(tagged(random_letter(self.seed, &q, choices.len()), "guessing"))
    }
}

/// Answers with a letter known to be correct.
#[derive(Debug, Clone)]
pub struct OracleVlm {
    pub answer: char,
    pub stages: StageReplies,
}

impl ChatVlm for OracleVlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        Ok(self
            .stages
            .reply(request.stage)
            .unwrap_or_else(|| tagged(self.answer, "ground truth")))
    }
}

/// Reads object positions off the prompt and applies the question's rule.
#[derive(Debug, Clone, Default)]
pub struct GeometryReadingVlm {
    pub seed: u64,
    pub stages: StageReplies,
}

/// Where the geometry in a prompt came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometrySource {
    TopDown,
    Coordinates,
}

type Positions = Vec<(String, Vec3)>;

impl GeometryReadingVlm {
    /// Level-frame (right, forward, up) positions by label, if the prompt has any.
    pub fn read_positions(request: &ChatRequest) -> Option<(GeometrySource, Positions)> {
        let parts: Vec<&ContentPart> = request.turns.iter().flat_map(|t| t.parts.iter()).collect();
        for p in &parts {
            if let ContentPart::Text(t) = p {
                if let Some(rest) = t.strip_prefix(COORDS_HEADER) {
                    let coords = parse_text_coords(rest.trim()).ok()?;
                    return Some((GeometrySource::Coordinates, coords.level_positions()));
                }
            }
        }
        let legend_text = parts.iter().find_map(|p| match p {
            ContentPart::Text(t) if t.starts_with(LEGEND_HEADER) => Some(t.as_str()),
            _ => None,
        })?;
        let legend: Vec<(Rgb, String)> = LEGEND_LINE
            .captures_iter(legend_text)
            .filter_map(|c| {
                let color = PALETTE.iter().find(|(n, _)| *n == &c[1])?.1;
                Some((color, c[2].to_string()))
            })
            .collect();
        for (i, p) in parts.iter().enumerate() {
            let ContentPart::Text(t) = p else { continue };
            if !t.starts_with(TOPDOWN_PREFIX) {
                continue;
            }
            let scale: f64 = SCALE.captures(t)?[1].parse().ok()?;
            let Some(ContentPart::Image(img)) = parts.get(i + 1) else { continue };
            return Some((GeometrySource::TopDown, measure_topdown(img, scale, &legend)?));
        }
        None
    }
}

/// Box centers from a top-down render: midpoint of each color's pixel
/// extent, relative to the camera marker's centroid.
fn measure_topdown(img: &Raster, scale: f64, legend: &[(Rgb, String)]) -> Option<Positions> {
    let (w, h) = (img.width(), img.height());
    let mut marker = (0.0, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if img.get(x, y) == MARKER_COLOR {
                marker = (marker.0 + x as f64, marker.1 + y as f64, marker.2 + 1);
            }
        }
    }
    if marker.2 == 0 {
        return None;
    }
    let (mx, my) = (marker.0 / marker.2 as f64, marker.1 / marker.2 as f64);
    let mut best: Vec<(String, Vec3, usize)> = Vec::new();
    for (color, label) in legend {
        let (mut lo, mut hi, mut n) = ([u32::MAX; 2], [0u32; 2], 0usize);
        for y in 0..h {
            for x in 0..w {
                if img.get(x, y) == *color {
                    lo = [lo[0].min(x), lo[1].min(y)];
                    hi = [hi[0].max(x), hi[1].max(y)];
                    n += 1;
                }
            }
        }
        if n == 0 {
            continue;
        }
        let u = (lo[0] + hi[0]) as f64 / 2.0;
        let v = (lo[1] + hi[1]) as f64 / 2.0;
        let p = Vec3::new((u - mx) * scale, (my - v) * scale, 0.0);
        match best.iter_mut().find(|b| &b.0 == label) {
            Some(b) if b.2 < n => *b = (label.clone(), p, n),
            Some(_) => {}
            None => best.push((label.clone(), p, n)),
        }
    }
    Some(best.into_iter().map(|(l, p, _)| (l, p)).collect())
}

impl ChatVlm for GeometryReadingVlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if let Some(r) = self.stages.reply(request.stage) {
            return Ok(r);
        }
        let (q, choices) = question_of(request).ok_or_else(|| ProviderError::Malformed("no question in prompt".into()))?;
        let guess = || tagged(random_letter(self.seed, &q, choices.len()), "no geometry to read");
        let Ok(spec) = parse_question(&q) else {
            return Ok(guess());
        };
        let Some((source, positions)) = Self::read_positions(request) else {
            return Ok(guess());
        };
        let lookup = |l: &str| positions.iter().find(|p| p.0 == l).map(|p| p.1);
        match evaluate(&spec, &choices, &lookup, Metric::Horizontal) {
            Ok(e) => Ok(tagged(choice_letter(e.index), &format!("measured from {source:?}"))),
            Err(_) => Ok(guess()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ChatTurn, Role};

    fn answer_request(q: &str, choices: &[&str]) -> ChatRequest {
        let mut text = format!("Question: {q}\nChoices:\n");
        for (i, c) in choices.iter().enumerate() {
            text.push_str(&format!("{}. {c}\n", choice_letter(i)));
        }
        ChatRequest::new(Stage::Answer, vec![ChatTurn::text(Role::User, text)])
    }

    #[test]
    fn scripted_replays_and_records() {
        let m = ScriptedVlm::new(["fwd-left"]);
        let req = ChatRequest::new(Stage::Direction, vec![ChatTurn::text(Role::User, "where?")]);
        assert_eq!(m.complete(&req).unwrap(), "fwd-left");
        assert_eq!(m.call_count(), 1);
        assert_eq!(m.calls()[0], req);
        assert_eq!(m.complete(&req), Err(ProviderError::Exhausted));
        let m = ScriptedVlm::new(Vec::<String>::new()).with_fallback("x");
        assert_eq!(m.complete(&req).unwrap(), "x");
    }

    #[test]
    fn random_is_deterministic_per_question() {
        let m = RandomChoiceVlm { seed: 4, ..Default::default() };
        let r = answer_request("Which object needs the smallest turn for the camera to face it directly?", &["a", "b", "c", "d"]);
        let a = m.complete(&r).unwrap();
        assert_eq!(a, m.complete(&r).unwrap());
        assert!(a.contains("<answer>"));
    }

    #[test]
    fn question_extraction() {
        let r = answer_request("Is it?", &["yes", "no"]);
        assert_eq!(question_of(&r), Some(("Is it?".to_string(), vec!["yes".to_string(), "no".to_string()])));
    }
}
