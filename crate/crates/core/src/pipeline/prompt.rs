//! Chat prompt composition for the three VLM calls.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::Mode;
use crate::geometry::ViewId;
use crate::providers::parse::choice_letter;
use crate::providers::{ChatRequest, ChatTurn, ContentPart, Role};
use crate::raster::Raster;
use crate::render::{LegendEntry, Projection, RenderedView};

pub const COORDS_HEADER: &str = "3D boxes (JSON, meters):";
pub const LEGEND_HEADER: &str = "Legend (box color: label):";
pub const TOPDOWN_PREFIX: &str = "Top-down view";
pub const STEPBACK_PREFIX: &str = "Step-back view";
pub const INPUT_CAPTION: &str = "Input view:";

const DIRECTION_TEMPLATE: &str = include_str!("../../assets/prompts/direction.txt");
const HINTS_TEMPLATE: &str = include_str!("../../assets/prompts/hints.txt");
const ANSWER_TEMPLATE: &str = include_str!("../../assets/prompts/answer.txt");

/// System texts of the three calls. Each starts with a version line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub direction: String,
    pub hints: String,
    pub answer: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            direction: DIRECTION_TEMPLATE.trim_end().to_string(),
            hints: HINTS_TEMPLATE.trim_end().to_string(),
            answer: ANSWER_TEMPLATE.trim_end().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Built-in templates, replaced by `direction.txt`, `hints.txt` and
    /// `answer.txt` from `dir` where those exist.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("direction.txt", &mut t.direction),
            ("hints.txt", &mut t.hints),
            ("answer.txt", &mut t.answer),
        ] {
            let p = dir.join(name);
            if p.exists() {
                *slot = std::fs::read_to_string(p)?.trim_end().to_string();
            }
        }
        Ok(t)
    }
}

/// Mode-specific context placed between the input image and the question.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptContext {
    Full { stepback: RenderedView, topdown: RenderedView },
    MultiView { frames: Vec<(ViewId, Raster)> },
    TextCoords { json: String },
    ProxyRender { stepback: RenderedView, topdown: RenderedView },
    PointcloudRender { stepback: RenderedView, topdown: RenderedView },
}

impl PromptContext {
    pub fn mode(&self) -> Mode {
        match self {
            PromptContext::Full { .. } => Mode::Full,
            PromptContext::MultiView { .. } => Mode::MvOnly,
            PromptContext::TextCoords { .. } => Mode::TextCoords,
            PromptContext::ProxyRender { .. } => Mode::ProxyRender,
            PromptContext::PointcloudRender { .. } => Mode::PointcloudRender,
        }
    }
}

pub fn question_block(question: &str, choices: &[String]) -> String {
    let mut s = format!("Question: {question}\nChoices:\n");
    for (i, c) in choices.iter().enumerate() {
        let _ = writeln!(s, "{}. {c}", choice_letter(i));
    }
    s
}

/// Legend lines for every entry, deduplicated by instance id.
pub fn legend_text(entries: &[LegendEntry]) -> String {
    let mut sorted: Vec<&LegendEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.instance_id);
    sorted.dedup_by_key(|e| e.instance_id);
    let mut s = LEGEND_HEADER.to_string();
    for e in sorted {
        let _ = write!(s, "\n- {}: {} (id {})", e.color, e.label, e.instance_id);
    }
    s
}

fn text(s: impl Into<String>) -> ContentPart {
    ContentPart::Text(s.into())
}

fn topdown_caption(v: &RenderedView) -> String {
    let mpp = match v.camera.projection {
        Projection::Orthographic { meters_per_px, .. } => meters_per_px,
        Projection::Perspective { .. } => f64::NAN,
    };
    format!("{TOPDOWN_PREFIX} (image up = input camera forward, {mpp:.6} m per pixel, white triangle = input camera):")
}

fn render_pair(parts: &mut Vec<ContentPart>, stepback: &RenderedView, topdown: &RenderedView, what: &str) {
    parts.push(text(format!("{STEPBACK_PREFIX} ({what}, seen from behind the input camera):")));
    parts.push(ContentPart::Image(stepback.image.clone()));
    parts.push(text(topdown_caption(topdown)));
    parts.push(ContentPart::Image(topdown.image.clone()));
}

pub fn compose_direction(t: &PromptTemplates, image: &Raster, question: &str, choices: &[String]) -> Vec<ChatTurn> {
    vec![
        ChatTurn::text(Role::System, t.direction.clone()),
        ChatTurn {
            role: Role::User,
            parts: vec![
                text(INPUT_CAPTION),
                ContentPart::Image(image.clone()),
                text(question_block(question, choices)),
                text("Motion:"),
            ],
        },
    ]
}

pub fn compose_hints(t: &PromptTemplates, image: &Raster, question: &str, choices: &[String]) -> Vec<ChatTurn> {
    vec![
        ChatTurn::text(Role::System, t.hints.clone()),
        ChatTurn {
            role: Role::User,
            parts: vec![
                text(INPUT_CAPTION),
                ContentPart::Image(image.clone()),
                text(format!("Image size: {} x {} pixels.", image.width(), image.height())),
                text(question_block(question, choices)),
            ],
        },
    ]
}

/// System template, then one user turn: input image, mode context, question.
pub fn compose_prompt(
    t: &PromptTemplates,
    question: &str,
    choices: &[String],
    original: &Raster,
    context: &PromptContext,
) -> Vec<ChatTurn> {
    let mut parts = vec![text(INPUT_CAPTION), ContentPart::Image(original.clone())];
    match context {
        PromptContext::Full { stepback, topdown } => {
            render_pair(&mut parts, stepback, topdown, "3D boxes");
            let legend: Vec<LegendEntry> = stepback.legend.iter().chain(&topdown.legend).cloned().collect();
            parts.push(text(legend_text(&legend)));
        }
        PromptContext::MultiView { frames } => {
            for (id, img) in frames {
                parts.push(text(format!("Generated view {id}:")));
                parts.push(ContentPart::Image(img.clone()));
            }
        }
        PromptContext::TextCoords { json } => {
            parts.push(text(format!("{COORDS_HEADER}\n{json}")));
        }
        PromptContext::ProxyRender { stepback, topdown } => {
            render_pair(&mut parts, stepback, topdown, "object points");
            let legend: Vec<LegendEntry> = stepback.legend.iter().chain(&topdown.legend).cloned().collect();
            parts.push(text(legend_text(&legend)));
        }
        PromptContext::PointcloudRender { stepback, topdown } => {
            render_pair(&mut parts, stepback, topdown, "scene points");
        }
    }
    parts.push(text(question_block(question, choices)));
    vec![
        ChatTurn::text(Role::System, t.answer.clone()),
        ChatTurn { role: Role::User, parts },
    ]
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Human-readable request record; images appear as size plus content hash.
pub fn transcript(request: &ChatRequest) -> String {
    let turns: Vec<serde_json::Value> = request
        .turns
        .iter()
        .map(|t| {
            let parts: Vec<serde_json::Value> = t
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(s) => json!({"text": s}),
                    ContentPart::Image(r) => json!({"image": format!(
                        "{}x{} fnv1a:{:016x}",
                        r.width(),
                        r.height(),
                        fnv1a(r.as_raw())
                    )}),
                })
                .collect();
            json!({"role": t.role, "parts": parts})
        })
        .collect();
    let v = json!({"stage": request.stage.name(), "decode": {"temperature": request.decode.temperature}, "turns": turns});
    serde_json::to_string_pretty(&v).expect("plain json")
}
