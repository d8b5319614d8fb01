//! Interfaces to the external models: view generator, depth estimator,
//! segmenter and chat VLM, plus the parsers for what the VLM says back.
//!
//! Implementations: [`bundle`] (precomputed files), [`synthetic`] (analytic
//! cuboid world), [`mock`] (scripted and rule-based chat models) and
//! [`http`] (OpenAI-compatible chat completions).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elevation::ObjectHint;
use crate::geometry::{CameraIntrinsics, CameraPose, DepthGrid, InstanceMask, ViewFrame, ViewId};
use crate::raster::Raster;
use crate::trajectory::{ParsedMotion, TrajectorySpec};

pub mod bundle;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;
pub mod parse;
pub mod synthetic;

pub use parse::{parse_answer, parse_object_hints, AnswerParseError, HintParseError, ParsedAnswer, ParsedHints};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("view (m={trajectory}, t={step}) is missing")]
    MissingView { trajectory: u32, step: u32 },
    #[error("bundle format error in {field}: {detail}")]
    BundleFormat { field: String, detail: String },
    #[error("no object at pixel ({}, {}) in view {view}", .pixel[0], .pixel[1])]
    ObjectNotFound { view: ViewId, pixel: [u32; 2] },
    #[error("hint pixel ({}, {}) outside {width}x{height} view", .pixel[0], .pixel[1])]
    HintOutOfBounds { pixel: [u32; 2], width: u32, height: u32 },
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted responses exhausted")]
    Exhausted,
    #[error("{0}")]
    Config(String),
}

impl ProviderError {
    pub fn bundle(field: impl Into<String>, detail: impl Into<String>) -> Self {
        ProviderError::BundleFormat {
            field: field.into(),
            detail: detail.into(),
        }
    }
}

/// Synthesizes the views along one trajectory.
pub trait MultiViewGenerator: Send + Sync {
    /// One result per pose; failures name the missing `(m, t)`.
    fn generate_each(&self, input: &ViewFrame, trajectory: &TrajectorySpec) -> Vec<Result<ViewFrame, ProviderError>>;

    /// All poses of the trajectory, or the first failure.
    fn generate(&self, input: &ViewFrame, trajectory: &TrajectorySpec) -> Result<Vec<ViewFrame>, ProviderError> {
        self.generate_each(input, trajectory).into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub depth: DepthGrid,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

pub trait DepthEstimator: Send + Sync {
    fn estimate(&self, frames: &[ViewFrame]) -> Result<Vec<DepthEstimate>, ProviderError>;
}

/// Depth estimator that trusts the depth and cameras already on the frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoredDepth;

impl DepthEstimator for StoredDepth {
    fn estimate(&self, frames: &[ViewFrame]) -> Result<Vec<DepthEstimate>, ProviderError> {
        frames
            .iter()
            .map(|f| {
                if f.depth.width() != f.intrinsics.width || f.depth.height() != f.intrinsics.height {
                    return Err(ProviderError::bundle(
                        "depth",
                        format!("view {} depth is {}x{}", f.view_id, f.depth.width(), f.depth.height()),
                    ));
                }
                Ok(DepthEstimate {
                    depth: f.depth.clone(),
                    intrinsics: f.intrinsics,
                    pose: f.pose,
                })
            })
            .collect()
    }
}

/// Point-prompted instance segmentation.
pub trait Segmenter: Send + Sync {
    fn segment(&self, frame: &ViewFrame, hint: &ObjectHint) -> Result<InstanceMask, ProviderError>;
}

pub(crate) fn check_hint(frame: &ViewFrame, hint: &ObjectHint) -> Result<(), ProviderError> {
    let [x, y] = hint.center_px;
    if x >= frame.intrinsics.width || y >= frame.intrinsics.height {
        return Err(ProviderError::HintOutOfBounds {
            pixel: hint.center_px,
            width: frame.intrinsics.width,
            height: frame.intrinsics.height,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Image(Raster),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatTurn {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatTurn {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            ContentPart::Text(t) => Some(t.as_str()),
            ContentPart::Image(_) => None,
        })
    }

    pub fn images(&self) -> impl Iterator<Item = &Raster> {
        self.parts.iter().filter_map(|p| match p {
            ContentPart::Image(r) => Some(r),
            ContentPart::Text(_) => None,
        })
    }
}

/// Which pipeline call a chat request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Direction,
    Hints,
    Answer,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Direction => "direction",
            Stage::Hints => "hints",
            Stage::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub stage: Stage,
    pub turns: Vec<ChatTurn>,
    pub decode: DecodeParams,
}

impl ChatRequest {
    pub fn new(stage: Stage, turns: Vec<ChatTurn>) -> Self {
        Self {
            stage,
            turns,
            decode: DecodeParams::default(),
        }
    }

    /// All text parts joined by newlines, in order.
    pub fn all_text(&self) -> String {
        self.turns.iter().flat_map(|t| t.texts()).collect::<Vec<_>>().join("\n")
    }
}

pub trait ChatVlm: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionPayload {
    Motion(ParsedMotion),
    Hints(ParsedHints),
    Answer(char),
}

/// A chat reply together with what was parsed out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct VlmDecision {
    pub raw_text: String,
    pub payload: DecisionPayload,
    pub thinking: Option<String>,
}
