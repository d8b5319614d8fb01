//! Benchmark harness: one pipeline run per record, letter scoring, reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::run::{run_pipeline, CallCounts, Degradation, Providers, SceneInput};
use super::{Mode, PipelineConfig, VlmKind};
use crate::exec::{map_capped, Exec};
use crate::providers::bundle::{load_bundle, BundleProvider};
use crate::providers::mock::{GeometryReadingVlm, OracleVlm, RandomChoiceVlm, StageReplies};
use crate::providers::synthetic::SyntheticProvider;
use crate::providers::ChatVlm;
use crate::world::qa::{Category, QARecord, SceneRef};
use crate::world::{central_pixel, generate_world, WorldBounds};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Record {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

/// One record per non-blank line; gold answers must name a choice.
pub fn read_benchmark(path: &Path) -> Result<Vec<QARecord>, EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| EvalError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let r: QARecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if r.answer_index().is_none() {
            return Err(bad(format!("answer {} is not among {} choices", r.answer, r.choices.len())));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_benchmark(path: &Path, records: &[QARecord]) -> std::io::Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("plain data"));
        s.push('\n');
    }
    std::fs::write(path, s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordResult {
    pub id: String,
    pub category: Category,
    pub gold: char,
    pub predicted: Option<char>,
    pub correct: bool,
    pub requested_mode: Mode,
    /// Mode actually used; `None` when the run failed.
    pub mode: Option<Mode>,
    pub degradations: Vec<Degradation>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    pub calls: CallCounts,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Keyed by category abbreviation.
    pub per_category: BTreeMap<String, CategoryScore>,
    /// Ids of records that failed or gave no parseable answer.
    pub failures: Vec<String>,
    pub records: Vec<RecordResult>,
}

impl RunReport {
    pub fn from_records(mode: Mode, records: Vec<RecordResult>) -> Self {
        let mut per_category: BTreeMap<String, CategoryScore> = BTreeMap::new();
        for r in &records {
            let s = per_category.entry(r.category.abbrev().to_string()).or_default();
            s.total += 1;
            s.correct += usize::from(r.correct);
        }
        for s in per_category.values_mut() {
            s.accuracy = s.correct as f64 / s.total as f64;
        }
        let correct = records.iter().filter(|r| r.correct).count();
        let total = records.len();
        Self {
            mode,
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_category,
            failures: records
                .iter()
                .filter(|r| r.failed_stage.is_some() || r.predicted.is_none())
                .map(|r| r.id.clone())
                .collect(),
            records,
        }
    }

    /// Any record failed outright (not merely answered wrong).
    pub fn has_failures(&self) -> bool {
        self.records.iter().any(|r| r.failed_stage.is_some())
    }

    /// One row of per-category accuracy in percent, then the overall score.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode");
        for c in Category::ALL {
            s.push(',');
            s.push_str(c.abbrev());
        }
        s.push_str(",Overall,n\n");
        s.push_str(self.mode.name());
        for c in Category::ALL {
            match self.per_category.get(c.abbrev()) {
                Some(v) => {
                    let _ = write!(s, ",{:.1}", 100.0 * v.accuracy);
                }
                None => s.push_str(",-"),
            }
        }
        let _ = writeln!(s, ",{:.1},{}", 100.0 * self.accuracy, self.total);
        s
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        std::fs::write(&json, serde_json::to_string_pretty(self).expect("plain data"))?;
        std::fs::write(&csv, self.to_csv())?;
        Ok((json, csv))
    }
}

/// Builds the scene and providers for one record.
pub type ProviderFactory<'a> = dyn Fn(&QARecord) -> Result<(SceneInput, Providers), String> + Sync + 'a;

/// Runs every record, at most `parallel_cap` at a time. Records whose
/// scene or providers cannot be built are scored incorrect.
pub fn run_eval(config: &PipelineConfig, records: &[QARecord], factory: &ProviderFactory<'_>) -> RunReport {
    let cap = config.effective_parallel_cap();
    let results = map_capped(Exec::default(), cap, records, |r| {
        let t0 = Instant::now();
        let gold = r.answer;
        let mut res = RecordResult {
            id: r.id.clone(),
            category: r.category,
            gold,
            predicted: None,
            correct: false,
            requested_mode: config.mode,
            mode: None,
            degradations: Vec::new(),
            failed_stage: None,
            error: None,
            artifacts: Vec::new(),
            calls: CallCounts::default(),
            wall_ms: 0.0,
        };
        let out = config.out.as_ref().map(|o| o.join("records").join(&r.id));
        match factory(r) {
            Err(e) => {
                res.failed_stage = Some("scene".into());
                res.error = Some(e);
            }
            Ok((scene, providers)) => {
                match run_pipeline(config, &scene, &providers, &r.question, &r.choices, out.as_deref()) {
                    Ok(o) => {
                        res.predicted = o.answer;
                        res.correct = o.answer == Some(gold);
                        res.mode = Some(o.mode);
                        res.degradations = o.degradations;
                        res.artifacts = o.artifacts;
                        res.calls = o.calls;
                    }
                    Err(f) => {
                        log::warn!("record {}: {f}", r.id);
                        res.failed_stage = Some(f.stage.to_string());
                        res.error = Some(f.error);
                        res.degradations = f.degradations;
                        res.calls = f.calls;
                    }
                }
            }
        }
        res.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        res
    });
    RunReport::from_records(config.mode, results)
}

/// Scene and provider construction from the record's scene reference and
/// the configured chat model. Mock models get ground-truth hints: object
/// centers from the synthetic world or from the bundle's source masks.
pub struct DefaultFactory {
    config: PipelineConfig,
    #[cfg(feature = "http")]
    http: Option<Arc<crate::providers::http::HttpVlm>>,
}

impl DefaultFactory {
    pub fn new(config: &PipelineConfig) -> Result<Self, String> {
        #[cfg(feature = "http")]
        let http = match config.provider.vlm {
            VlmKind::Http => Some(Arc::new(
                crate::providers::http::HttpVlm::new(config.provider.http.clone().with_env()).map_err(|e| e.to_string())?,
            )),
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            #[cfg(feature = "http")]
            http,
        })
    }

    fn vlm(&self, record: &QARecord, hints_json: String) -> Result<Arc<dyn ChatVlm>, String> {
        let stages = StageReplies {
            direction: "forward".into(),
            hints: hints_json,
        };
        let seed = self.config.provider.mock_seed;
        Ok(match self.config.provider.vlm {
            VlmKind::Geometry => Arc::new(GeometryReadingVlm { seed, stages }),
            VlmKind::Random => Arc::new(RandomChoiceVlm { seed, stages }),
            VlmKind::Oracle => Arc::new(OracleVlm {
                answer: record.answer,
                stages,
            }),
            #[cfg(feature = "http")]
            VlmKind::Http => self.http.clone().ok_or("http client missing")?,
            #[cfg(not(feature = "http"))]
            VlmKind::Http => return Err("built without the http feature".into()),
        })
    }

    pub fn build(&self, record: &QARecord) -> Result<(SceneInput, Providers), String> {
        let exec = Exec::default();
        match &record.scene {
            SceneRef::Synthetic { seed, objects } => {
                let world = generate_world(*seed, *objects, &WorldBounds::default()).map_err(|e| e.to_string())?;
                let hints = world.hints_json(exec);
                let up = world.up;
                let p = Arc::new(SyntheticProvider::new(Arc::new(world), exec));
                let source = p.source_view();
                Ok((
                    SceneInput {
                        scene_id: format!("synth_s{seed}_k{objects}"),
                        source,
                        up,
                    },
                    Providers {
                        generator: p.clone(),
                        depth: p.clone(),
                        segmenter: p,
                        vlm: self.vlm(record, hints)?,
                    },
                ))
            }
            SceneRef::Bundle { path } => {
                let b = load_bundle(Path::new(path)).map_err(|e| e.to_string())?;
                let source = b.source().cloned().ok_or("bundle has no source view")?;
                let hints: Vec<serde_json::Value> = b
                    .masks
                    .iter()
                    .filter(|((v, _), _)| *v == source.view_id)
                    .filter_map(|(_, m)| {
                        central_pixel(m).map(|[x, y]| serde_json::json!({"label": m.label, "x": x, "y": y}))
                    })
                    .collect();
                let up = b.up();
                let scene_id = b.scene_id.clone();
                let p = Arc::new(BundleProvider::new(Arc::new(b)));
                Ok((
                    SceneInput { scene_id, source, up },
                    Providers {
                        generator: p.clone(),
                        depth: p.clone(),
                        segmenter: p,
                        vlm: self.vlm(record, serde_json::Value::Array(hints).to_string())?,
                    },
                ))
            }
        }
    }
}

/// [`run_eval`] with the [`DefaultFactory`].
pub fn run_eval_default(config: &PipelineConfig, records: &[QARecord]) -> Result<RunReport, String> {
    let f = DefaultFactory::new(config)?;
    Ok(run_eval(config, records, &|r: &QARecord| f.build(r)))
}
