//! End-to-end orchestration: configuration, prompting, single runs and
//! benchmark evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elevation::ElevationParams;
use crate::render::RenderStyle;
use crate::trajectory::TrajectoryParams;
use crate::voting::SandboxParams;

pub mod eval;
pub mod prompt;
pub mod run;
pub mod text_coords;

pub use crate::world::qa::{Category, QARecord, SceneRef};
pub use eval::{read_benchmark, run_eval, write_benchmark, RecordResult, RunReport};
pub use run::{run_pipeline, Degradation, PipelineFailure, PipelineOutcome, Providers, SceneInput};

/// Which context the final prompt carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    MvOnly,
    TextCoords,
    ProxyRender,
    PointcloudRender,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Full,
        Mode::MvOnly,
        Mode::TextCoords,
        Mode::ProxyRender,
        Mode::PointcloudRender,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::MvOnly => "mv_only",
            Mode::TextCoords => "text_coords",
            Mode::ProxyRender => "proxy_render",
            Mode::PointcloudRender => "pointcloud_render",
        }
    }

    /// Modes that need hints, elevation and a sandbox.
    pub fn needs_sandbox(self) -> bool {
        matches!(self, Mode::Full | Mode::TextCoords | Mode::ProxyRender)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown mode {s:?}")))
    }
}

/// How source-view hints are carried over to the other views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintTransfer {
    /// Lift the hint with source depth, project into the target view, and
    /// drop it when something nearer covers that pixel.
    #[default]
    Reproject,
    /// Reuse the same normalized image coordinates.
    SamePixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VlmKind {
    /// Reads positions off the top-down render or the coordinate JSON.
    #[default]
    Geometry,
    Random,
    /// Answers with the record's gold letter (evaluation only).
    Oracle,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub vlm: VlmKind,
    /// Seed of the mock chat models.
    pub mock_seed: u64,
    #[cfg(feature = "http")]
    pub http: crate::providers::http::HttpVlmConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            vlm: VlmKind::default(),
            mock_seed: 0,
            #[cfg(feature = "http")]
            http: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Artifact root; nothing is written when unset.
    pub out: Option<PathBuf>,
    /// Records evaluated at once; 0 means one per processor.
    pub parallel_cap: usize,
    pub hint_transfer: HintTransfer,
    pub stepback_m: f64,
    pub topdown_margin_m: f64,
    /// Also write every generated view into the artifact tree.
    pub save_views: bool,
    /// Directory with replacement prompt templates.
    pub prompts_dir: Option<PathBuf>,
    pub trajectory: TrajectoryParams,
    pub elevation: ElevationParams,
    pub sandbox: SandboxParams,
    pub render: RenderStyle,
    pub provider: ProviderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            seed: 0,
            out: None,
            parallel_cap: 0,
            hint_transfer: HintTransfer::default(),
            stepback_m: 2.0,
            topdown_margin_m: 1.0,
            save_views: true,
            prompts_dir: None,
            trajectory: TrajectoryParams::default(),
            elevation: ElevationParams::default(),
            sandbox: SandboxParams::default(),
            render: RenderStyle::default(),
            provider: ProviderConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let t = &self.trajectory;
        if t.count == 0 || t.steps == 0 || !(t.step_m > 0.0) || !(t.sweep_deg >= 0.0) {
            return bad("trajectory needs count >= 1, steps >= 1, step_m > 0, sweep_deg >= 0");
        }
        if self.elevation.n_pts == 0 {
            return bad("elevation.n_pts must be positive");
        }
        let s = &self.sandbox;
        if !(s.consensus.delta > 0.0) || !(s.cluster.eps > 0.0) || s.cluster.min_pts == 0 {
            return bad("sandbox needs consensus.delta > 0, cluster.eps > 0, cluster.min_pts >= 1");
        }
        if self.render.width == 0 || self.render.height == 0 {
            return bad("render size must be positive");
        }
        if !(self.stepback_m >= 0.0) || !(self.topdown_margin_m > 0.0) {
            return bad("stepback_m must be >= 0 and topdown_margin_m > 0");
        }
        #[cfg(not(feature = "http"))]
        if self.provider.vlm == VlmKind::Http {
            return bad("built without the http feature");
        }
        Ok(())
    }

    pub fn effective_parallel_cap(&self) -> usize {
        if self.parallel_cap == 0 {
            crate::exec::available_parallelism()
        } else {
            self.parallel_cap
        }
    }

    pub fn templates(&self) -> Result<prompt::PromptTemplates, ConfigError> {
        match &self.prompts_dir {
            None => Ok(prompt::PromptTemplates::default()),
            Some(d) => prompt::PromptTemplates::from_dir(d).map_err(|source| ConfigError::Io {
                path: d.clone(),
                source,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = PipelineConfig::from_toml("mode = \"text_coords\"\nseed = 9\n[trajectory]\ncount = 2\n").unwrap();
        assert_eq!(c.mode, Mode::TextCoords);
        assert_eq!(c.trajectory.count, 2);
        assert_eq!(c.trajectory.steps, 4);
        let again = PipelineConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(matches!(PipelineConfig::from_toml("mode = \"bogus\""), Err(ConfigError::Parse(_))));
        assert!(matches!(
            PipelineConfig::from_toml("[trajectory]\nsteps = 0\n"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn mode_names_parse() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
