//! One question through the full stage sequence, with graceful degradation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::prompt::{compose_direction, compose_hints, compose_prompt, transcript, PromptContext};
use super::text_coords::serialize_text_coords;
use super::{HintTransfer, Mode, PipelineConfig};
use crate::elevation::{elevate_object, ObjectHint};
use crate::exec::{map_slice, Exec};
use crate::geometry::{backproject, project, CameraIntrinsics, ProxyCloud, SandboxScene, ViewFrame, ViewId};
use crate::providers::{
    parse_answer, parse_object_hints, ChatRequest, ChatVlm, DepthEstimator, MultiViewGenerator, ProviderError,
    Segmenter, Stage,
};
use crate::raster::{image_extension, write_image, Raster, Rgb};
use crate::render::{
    render_boxes, render_colored_points, render_points, stepback_camera, topdown_camera, topdown_camera_over,
    RenderCamera, RenderedView,
};
use crate::trajectory::{instantiate_trajectories_about, parse_motion, AbstractMotion};
use crate::voting::{build_sandbox, SandboxError, SandboxStats};
use crate::Vec3;

/// Dense clouds keep every `DENSE_STRIDE`-th pixel per axis.
const DENSE_STRIDE: u32 = 4;
/// Dense clouds drop points farther than this from their camera.
const DENSE_MAX_DEPTH: f64 = 12.0;

pub struct SceneInput {
    /// Names the step-back and top-down artifacts.
    pub scene_id: String,
    pub source: ViewFrame,
    /// World up direction.
    pub up: Vec3,
}

#[derive(Clone)]
pub struct Providers {
    pub generator: Arc<dyn MultiViewGenerator>,
    pub depth: Arc<dyn DepthEstimator>,
    pub segmenter: Arc<dyn Segmenter>,
    pub vlm: Arc<dyn ChatVlm>,
}

/// A step that fell back instead of failing the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    /// Direction reply had no motion keyword; forward was used.
    DirectionDefaulted,
    MissingViews { views: Vec<String> },
    /// Fewer than two views; answered from the input view alone.
    TooFewViews,
    DepthFailed { detail: String },
    HintParse { detail: String },
    HintsClamped,
    /// (view, hint) pairs that produced no proxies.
    ElevationSkipped { pairs: usize },
    EmptySandbox,
    AnswerUnparsed { detail: String },
}

impl Degradation {
    pub fn name(&self) -> &'static str {
        match self {
            Degradation::DirectionDefaulted => "direction_defaulted",
            Degradation::MissingViews { .. } => "missing_views",
            Degradation::TooFewViews => "too_few_views",
            Degradation::DepthFailed { .. } => "depth_failed",
            Degradation::HintParse { .. } => "hint_parse",
            Degradation::HintsClamped => "hints_clamped",
            Degradation::ElevationSkipped { .. } => "elevation_skipped",
            Degradation::EmptySandbox => "empty_sandbox",
            Degradation::AnswerUnparsed { .. } => "answer_unparsed",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CallCounts {
    pub direction: usize,
    pub hints: usize,
    pub answer: usize,
    pub generate: usize,
    pub depth: usize,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub requested_mode: Mode,
    /// Mode of the prompt actually sent.
    pub mode: Mode,
    pub motion: AbstractMotion,
    /// `None` when the reply matched no choice.
    pub answer: Option<char>,
    pub raw_answer: String,
    pub thinking: Option<String>,
    pub degradations: Vec<Degradation>,
    pub calls: CallCounts,
    /// Written files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub sandbox: Option<SandboxScene>,
    pub sandbox_stats: Option<SandboxStats>,
    pub views_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineFailure {
    pub stage: &'static str,
    pub error: String,
    pub calls: CallCounts,
    pub degradations: Vec<Degradation>,
}

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for PipelineFailure {}

struct Artifacts<'a> {
    root: Option<&'a Path>,
    written: Vec<String>,
}

impl Artifacts<'_> {
    fn path(&mut self, rel: &str) -> Result<Option<PathBuf>, String> {
        let Some(root) = self.root else { return Ok(None) };
        let p = root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        self.written.push(rel.to_string());
        Ok(Some(p))
    }

    fn text(&mut self, rel: &str, body: &str) -> Result<(), String> {
        if let Some(p) = self.path(rel)? {
            std::fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))?;
        }
        Ok(())
    }

    fn image(&mut self, rel: &str, r: &Raster) -> Result<(), String> {
        if let Some(p) = self.path(rel)? {
            write_image(r, &p).map_err(|e| format!("{}: {e}", p.display()))?;
        }
        Ok(())
    }
}

struct Run<'a> {
    providers: &'a Providers,
    art: Artifacts<'a>,
    calls: CallCounts,
    degradations: Vec<Degradation>,
}

impl Run<'_> {
    fn fail(&self, stage: &'static str, error: impl ToString) -> PipelineFailure {
        PipelineFailure {
            stage,
            error: error.to_string(),
            calls: self.calls,
            degradations: self.degradations.clone(),
        }
    }

    fn chat(&mut self, stage: Stage, prefix: &str, request: ChatRequest) -> Result<String, PipelineFailure> {
        let name = stage.name();
        self.art
            .text(&format!("{prefix}_{name}.prompt.json"), &transcript(&request))
            .map_err(|e| self.fail("artifacts", e))?;
        match stage {
            Stage::Direction => self.calls.direction += 1,
            Stage::Hints => self.calls.hints += 1,
            Stage::Answer => self.calls.answer += 1,
        }
        let reply = self.providers.vlm.complete(&request).map_err(|e| self.fail(name, e))?;
        self.art
            .text(&format!("{prefix}_{name}.reply.txt"), &reply)
            .map_err(|e| self.fail("artifacts", e))?;
        Ok(reply)
    }

    fn image(&mut self, rel: &str, r: &Raster) -> Result<(), PipelineFailure> {
        self.art.image(rel, r).map_err(|e| self.fail("artifacts", e))
    }

    fn text(&mut self, rel: &str, body: &str) -> Result<(), PipelineFailure> {
        self.art.text(rel, body).map_err(|e| self.fail("artifacts", e))
    }
}

fn scaled_intrinsics(k: &CameraIntrinsics, w: u32, h: u32) -> CameraIntrinsics {
    let (sx, sy) = (w as f64 / k.width as f64, h as f64 / k.height as f64);
    CameraIntrinsics::new(k.fx * sx, k.fy * sy, k.cx * sx, k.cy * sy, w, h).expect("scaled intrinsics stay valid")
}

/// Carries a source-view hint into `target`, or `None` when the hinted
/// surface point is outside the target view or hidden behind something.
pub fn transfer_hint(source: &ViewFrame, hint: &ObjectHint, target: &ViewFrame, how: HintTransfer) -> Option<ObjectHint> {
    if target.view_id == source.view_id {
        return Some(hint.clone());
    }
    let [x, y] = hint.center_px;
    let same_pixel = || {
        let scale = |v: u32, from: u32, to: u32| {
            (((v as f64 + 0.5) * to as f64 / from as f64 - 0.5).round().max(0.0) as u32).min(to - 1)
        };
        ObjectHint {
            center_px: [
                scale(x, source.intrinsics.width, target.intrinsics.width),
                scale(y, source.intrinsics.height, target.intrinsics.height),
            ],
            ..hint.clone()
        }
    };
    if how == HintTransfer::SamePixel {
        return Some(same_pixel());
    }
    let Some(d) = source.depth.get(x, y) else {
        return Some(same_pixel());
    };
    let Ok(p) = backproject([x as f64, y as f64], d, &source.intrinsics, &source.pose) else {
        return Some(same_pixel());
    };
    let proj = project(&p, &target.intrinsics, &target.pose).ok()?;
    let [u, v] = proj.pixel.map(f64::round);
    if !target.intrinsics.contains(u, v) {
        return None;
    }
    let (u, v) = (u as u32, v as u32);
    if let Some(seen) = target.depth.get(u, v) {
        if seen < proj.depth - (0.05 + 0.05 * proj.depth) {
            return None;
        }
    }
    Some(ObjectHint {
        center_px: [u, v],
        ..hint.clone()
    })
}

fn dense_cloud(views: &[ViewFrame], exec: Exec) -> Vec<(Vec3, Rgb)> {
    map_slice(exec, views, |v| {
        let mut out = Vec::new();
        for y in (0..v.intrinsics.height).step_by(DENSE_STRIDE as usize) {
            for x in (0..v.intrinsics.width).step_by(DENSE_STRIDE as usize) {
                let Some(d) = v.depth.get(x, y) else { continue };
                if d > DENSE_MAX_DEPTH {
                    continue;
                }
                if let Ok(p) = backproject([x as f64, y as f64], d, &v.intrinsics, &v.pose) {
                    out.push((p, v.image.get(x, y)));
                }
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

fn views_json(views: &[ViewFrame]) -> String {
    let ids: Vec<String> = views.iter().map(|v| v.view_id.to_string()).collect();
    serde_json::to_string_pretty(&ids).expect("plain json")
}

/// Runs the ten stages for one question. Artifacts go under `out` when
/// given. Provider errors in a chat call end the run; every other
/// failure degrades the mode or drops views.
pub fn run_pipeline(
    config: &PipelineConfig,
    scene: &SceneInput,
    providers: &Providers,
    question: &str,
    choices: &[String],
    out: Option<&Path>,
) -> Result<PipelineOutcome, PipelineFailure> {
    let exec = Exec::default();
    let mut run = Run {
        providers,
        art: Artifacts { root: out, written: Vec::new() },
        calls: CallCounts::default(),
        degradations: Vec::new(),
    };
    let templates = config.templates().map_err(|e| run.fail("config", e))?;
    let source = &scene.source;
    let requested = config.mode;
    let mut mode = requested;

    // (1) direction
    let reply = run.chat(
        Stage::Direction,
        "01",
        ChatRequest::new(Stage::Direction, compose_direction(&templates, &source.image, question, choices)),
    )?;
    let motion = parse_motion(&reply);
    if motion.defaulted {
        run.degradations.push(Degradation::DirectionDefaulted);
    }

    // (2) trajectories, (3) generation
    let up_cam = source.pose.rotation().transpose() * scene.up;
    let trajectories = instantiate_trajectories_about(motion.motion, &config.trajectory, &up_cam);
    let mut views = vec![source.clone()];
    let mut missing = Vec::new();
    for traj in &trajectories {
        run.calls.generate += 1;
        for (t, r) in providers.generator.generate_each(source, traj).into_iter().enumerate() {
            match r {
                Ok(f) => views.push(f),
                Err(e) => {
                    log::warn!("view m{}_t{t} unavailable: {e}", traj.index);
                    missing.push(ViewId::Generated { trajectory: traj.index as u32, step: t as u32 }.to_string());
                }
            }
        }
    }
    if !missing.is_empty() {
        run.degradations.push(Degradation::MissingViews { views: missing });
    }
    if views.len() < 2 {
        run.degradations.push(Degradation::TooFewViews);
        mode = Mode::MvOnly;
    }
    if config.save_views {
        for v in &views {
            run.image(&format!("views/{}.{}", v.view_id, image_extension()), &v.image)?;
        }
    }
    run.text("views.json", &views_json(&views))?;

    // (4) depth
    if mode != Mode::MvOnly {
        run.calls.depth += 1;
        let estimated = providers.depth.estimate(&views).and_then(|est| {
            views
                .iter()
                .zip(est)
                .map(|(v, e)| {
                    ViewFrame::new(v.view_id, v.image.clone(), e.depth, e.intrinsics, e.pose)
                        .map_err(|g| ProviderError::bundle("depth", g.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()
        });
        match estimated {
            Ok(v) => views = v,
            Err(e) => {
                run.degradations.push(Degradation::DepthFailed { detail: e.to_string() });
                mode = Mode::MvOnly;
            }
        }
    }

    // (5) hints, (6) elevation, (7) sandbox
    let mut sandbox = None;
    let mut sandbox_stats = None;
    let mut kept = ProxyCloud::new();
    if mode.needs_sandbox() {
        let reply = run.chat(
            Stage::Hints,
            "02",
            ChatRequest::new(Stage::Hints, compose_hints(&templates, &source.image, question, choices)),
        )?;
        match parse_object_hints(&reply, source.intrinsics.width, source.intrinsics.height) {
            Err(e) => {
                run.degradations.push(Degradation::HintParse { detail: e.to_string() });
                mode = Mode::MvOnly;
            }
            Ok(parsed) => {
                if parsed.clamped {
                    run.degradations.push(Degradation::HintsClamped);
                }
                let pairs: Vec<(usize, ObjectHint)> = views
                    .iter()
                    .enumerate()
                    .flat_map(|(i, v)| {
                        parsed
                            .hints
                            .iter()
                            .filter_map(move |h| transfer_hint(source, h, v, config.hint_transfer).map(|t| (i, t)))
                    })
                    .collect();
                run.calls.segment += pairs.len();
                let lifted = map_slice(exec, &pairs, |(i, h)| {
                    elevate_object(&views[*i], h, providers.segmenter.as_ref(), &config.elevation)
                });
                let mut cloud = ProxyCloud::new();
                let mut skipped = 0;
                for r in lifted {
                    match r {
                        Ok(e) => cloud.extend(e.cloud),
                        Err(e) => {
                            log::debug!("elevation skipped: {e}");
                            skipped += 1;
                        }
                    }
                }
                if skipped > 0 {
                    run.degradations.push(Degradation::ElevationSkipped { pairs: skipped });
                }
                match build_sandbox(&cloud, &config.sandbox, source.rig(), scene.up, exec) {
                    Ok(b) => {
                        let body = serde_json::json!({"scene": b.scene, "stats": b.stats});
                        run.text("sandbox.json", &serde_json::to_string_pretty(&body).expect("plain json"))?;
                        sandbox_stats = Some(b.stats);
                        kept = b.kept;
                        sandbox = Some(b.scene);
                    }
                    Err(SandboxError::EmptySandbox { .. }) => {
                        run.degradations.push(Degradation::EmptySandbox);
                        mode = Mode::MvOnly;
                    }
                    Err(e) => return Err(run.fail("sandbox", e)),
                }
            }
        }
    }

    // (8) renders
    let style = &config.render;
    let persp = RenderCamera::perspective(
        stepback_camera(&source.pose, config.stepback_m),
        scaled_intrinsics(&source.intrinsics, style.width, style.height),
    );
    let id = &scene.scene_id;
    let ext = image_extension();
    let context = match (mode, &sandbox) {
        (Mode::Full, Some(s)) | (Mode::ProxyRender, Some(s)) => {
            let top = topdown_camera(s, config.topdown_margin_m, style.width, style.height)
                .map_err(|e| run.fail("render", e))?;
            let (stepback, topdown) = if mode == Mode::Full {
                (render_boxes(s, &persp, style), render_boxes(s, &top, style))
            } else {
                (render_points(&kept, &persp, style, &scene.up), render_points(&kept, &top, style, &scene.up))
            };
            write_pair(&mut run, id, ext, &stepback, &topdown)?;
            if mode == Mode::Full {
                PromptContext::Full { stepback, topdown }
            } else {
                PromptContext::ProxyRender { stepback, topdown }
            }
        }
        (Mode::TextCoords, Some(s)) => {
            let json = serialize_text_coords(s);
            run.text("coords.json", &json)?;
            PromptContext::TextCoords { json }
        }
        (Mode::PointcloudRender, _) => {
            let pts = dense_cloud(&views, exec);
            let xyz: Vec<Vec3> = pts.iter().map(|p| p.0).collect();
            match topdown_camera_over(&xyz, &source.pose, &scene.up, config.topdown_margin_m, style.width, style.height) {
                Ok(top) => {
                    let stepback = render_colored_points(&pts, &persp, style, &scene.up);
                    let topdown = render_colored_points(&pts, &top, style, &scene.up);
                    write_pair(&mut run, id, ext, &stepback, &topdown)?;
                    PromptContext::PointcloudRender { stepback, topdown }
                }
                Err(_) => {
                    run.degradations.push(Degradation::EmptySandbox);
                    mode = Mode::MvOnly;
                    multi_view(&views)
                }
            }
        }
        _ => {
            mode = Mode::MvOnly;
            multi_view(&views)
        }
    };

    // (9) prompt, (10) answer
    let request = ChatRequest::new(
        Stage::Answer,
        compose_prompt(&templates, question, choices, &source.image, &context),
    );
    let raw_answer = run.chat(Stage::Answer, "03", request)?;
    let (answer, thinking) = match parse_answer(&raw_answer, choices) {
        Ok(a) => (Some(a.letter), a.thinking),
        Err(e) => {
            run.degradations.push(Degradation::AnswerUnparsed { detail: e.to_string() });
            (None, None)
        }
    };
    let summary = serde_json::json!({
        "scene_id": id,
        "question": question,
        "choices": choices,
        "requested_mode": requested,
        "mode": mode,
        "motion": motion.motion.token(),
        "answer": answer.map(String::from),
        "degradations": run.degradations,
        "calls": run.calls,
        "views_used": views.len(),
        "sandbox_stats": sandbox_stats,
    });
    run.text("summary.json", &serde_json::to_string_pretty(&summary).expect("plain json"))?;
    Ok(PipelineOutcome {
        requested_mode: requested,
        mode,
        motion: motion.motion,
        answer,
        raw_answer,
        thinking,
        degradations: run.degradations,
        calls: run.calls,
        artifacts: run.art.written,
        sandbox,
        sandbox_stats,
        views_used: views.len(),
    })
}

fn multi_view(views: &[ViewFrame]) -> PromptContext {
    PromptContext::MultiView {
        frames: views
            .iter()
            .filter(|v| v.view_id != ViewId::Source)
            .map(|v| (v.view_id, v.image.clone()))
            .collect(),
    }
}

fn write_pair(run: &mut Run<'_>, id: &str, ext: &str, stepback: &RenderedView, topdown: &RenderedView) -> Result<(), PipelineFailure> {
    run.image(&format!("{id}_stepback.{ext}"), &stepback.image)?;
    run.image(&format!("{id}_topdown.{ext}"), &topdown.image)
}
