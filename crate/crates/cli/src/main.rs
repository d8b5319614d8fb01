use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sandbox3d::exec::Exec;
use sandbox3d::geometry::SandboxScene;
use sandbox3d::pipeline::eval::{read_benchmark, run_eval_default, write_benchmark, DefaultFactory};
use sandbox3d::pipeline::{run_pipeline, Mode, PipelineConfig, QARecord, SceneRef};
use sandbox3d::providers::synthetic::SyntheticProvider;
use sandbox3d::raster::write_image;
use sandbox3d::render::{render_boxes, stepback_camera, topdown_camera, RenderCamera, RenderStyle};
use sandbox3d::trajectory::AbstractMotion;
use sandbox3d::world::qa::{generate_questions, synthetic_benchmark};
use sandbox3d::world::{generate_world, WorldBounds};

#[derive(Parser)]
#[command(name = "sandbox3d", version, about = "3D box sandbox prompting for spatial VQA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question about a scene bundle.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        /// JSON file with `question` and `choices` (a benchmark record also works).
        #[arg(long)]
        question: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene bundle plus questions about it.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 10)]
        questions: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a balanced synthetic benchmark as JSONL.
    Benchmark {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a JSONL benchmark.
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a saved sandbox.
    Render {
        #[arg(long)]
        sandbox: PathBuf,
        #[arg(long, value_enum, default_value_t = View::Topdown)]
        view: View,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    Topdown,
    Stepback,
}

/// Bad configuration; exits with status 2.
#[derive(Debug)]
struct ConfigProblem(String);

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(e.to_string()))
}

fn load_config(path: Option<&Path>, mode: Option<Mode>, out: &Path) -> Result<PipelineConfig> {
    let mut c = match path {
        Some(p) => PipelineConfig::load(p).map_err(config_error)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = mode {
        c.mode = m;
    }
    c.out = Some(out.to_path_buf());
    Ok(c)
}

#[derive(serde::Deserialize)]
struct QuestionFile {
    question: String,
    choices: Vec<String>,
    #[serde(default)]
    answer: Option<char>,
}

fn cmd_run(bundle: &Path, question: &Path, mode: Option<Mode>, config: Option<&Path>, out: &Path) -> Result<bool> {
    let cfg = load_config(config, mode, out)?;
    let text = std::fs::read_to_string(question).with_context(|| format!("reading {}", question.display()))?;
    let q: QuestionFile = serde_json::from_str(&text).map_err(config_error)?;
    let record = QARecord {
        id: "run".into(),
        scene: SceneRef::Bundle {
            path: bundle.display().to_string(),
        },
        question: q.question.clone(),
        choices: q.choices.clone(),
        answer: q.answer.unwrap_or('A'),
        category: sandbox3d::pipeline::Category::EgoMovement,
        spec: None,
    };
    let factory = DefaultFactory::new(&cfg).map_err(config_error)?;
    let (scene, providers) = factory.build(&record).map_err(|e| anyhow!(e))?;
    match run_pipeline(&cfg, &scene, &providers, &q.question, &q.choices, Some(out)) {
        Ok(o) => {
            let shown = o.answer.map(String::from).unwrap_or_else(|| "?".into());
            println!("answer: {shown} (mode {}, {} views)", o.mode, o.views_used);
            for d in &o.degradations {
                println!("degraded: {}", d.name());
            }
            Ok(o.answer.is_some())
        }
        Err(f) => {
            eprintln!("{f}");
            Ok(false)
        }
    }
}

fn cmd_synth(seed: u64, objects: usize, questions: usize, out: &Path) -> Result<()> {
    if !(1..=8).contains(&objects) {
        return Err(config_error("objects must be in 1..=8"));
    }
    let world = generate_world(seed, objects, &WorldBounds::default())?;
    let p = SyntheticProvider::new(Arc::new(world.clone()), Exec::default());
    let cfg = PipelineConfig::default();
    let id = format!("synth_s{seed}_k{objects}");
    let bundle = p.export_bundle(&id, AbstractMotion::Forward, &cfg.trajectory);
    let manifest = sandbox3d::providers::bundle::write_bundle(&bundle, out)?;
    std::fs::write(out.join("world.json"), serde_json::to_string_pretty(&world)?)?;
    let mut qs = generate_questions(&world, questions, seed);
    for q in &mut qs {
        q.scene = SceneRef::Bundle {
            path: out.display().to_string(),
        };
    }
    write_benchmark(&out.join("questions.jsonl"), &qs)?;
    println!("wrote {} ({} views, {} questions)", manifest.display(), bundle.views.len(), qs.len());
    Ok(())
}

fn cmd_eval(benchmark: &Path, config: Option<&Path>, mode: Option<Mode>, out: &Path) -> Result<bool> {
    let cfg = load_config(config, mode, out)?;
    let records = read_benchmark(benchmark).map_err(config_error)?;
    let report = run_eval_default(&cfg, &records).map_err(config_error)?;
    let (json, csv) = report.write(out)?;
    print!("{}", report.to_csv());
    println!("{} of {} correct; report in {} and {}", report.correct, report.total, json.display(), csv.display());
    for id in &report.failures {
        eprintln!("no answer for record {id}");
    }
    Ok(!report.has_failures())
}

fn cmd_render(sandbox: &Path, view: View, size: u32, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(sandbox).with_context(|| format!("reading {}", sandbox.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    // a pipeline sandbox.json wraps the scene next to its stats
    let scene: SandboxScene = serde_json::from_value(v.get("scene").cloned().unwrap_or(v))?;
    let style = RenderStyle {
        width: size,
        height: size,
        ..Default::default()
    };
    let camera = match view {
        View::Topdown => topdown_camera(&scene, 1.0, size, size)?,
        View::Stepback => {
            let k = scene.origin.intrinsics;
            let (sx, sy) = (size as f64 / k.width as f64, size as f64 / k.height as f64);
            let k = sandbox3d::geometry::CameraIntrinsics::new(k.fx * sx, k.fy * sy, k.cx * sx, k.cy * sy, size, size)?;
            RenderCamera::perspective(stepback_camera(&scene.origin.pose, 2.0), k)
        }
    };
    let r = render_boxes(&scene, &camera, &style);
    write_image(&r.image, out)?;
    for e in &r.legend {
        println!("{}: {} (id {})", e.color, e.label, e.instance_id);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            bundle,
            question,
            mode,
            config,
            out,
        } => cmd_run(&bundle, &question, mode, config.as_deref(), &out),
        Command::Synth {
            seed,
            objects,
            questions,
            out,
        } => cmd_synth(seed, objects, questions, &out).map(|_| true),
        Command::Benchmark { seed, n, out } => write_benchmark(&out, &synthetic_benchmark(seed, n))
            .map(|_| {
                println!("wrote {n} questions to {}", out.display());
                true
            })
            .map_err(Into::into),
        Command::Eval {
            benchmark,
            config,
            mode,
            out,
        } => cmd_eval(&benchmark, config.as_deref(), mode, &out),
        Command::Render { sandbox, view, size, out } => cmd_render(&sandbox, view, size, &out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<ConfigProblem>() => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
