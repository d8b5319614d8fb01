//! Spatial multiple-choice questions over cuboid worlds and their oracle.
//!
//! Five templates cover ego motion, object motion, goal aiming, action
//! consequence and perspective taking. Every question is posed in the
//! "level" frame of the input camera: origin at the camera center, axes
//! right, ground-projected forward and up. A question is only emitted when
//! its answer keeps a clear margin, and when the answer is the same whether
//! distances are measured in 3D or on the ground plane.

use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{generate_world, WorldBounds, WorldSpec};
use crate::geometry::CameraPose;
use crate::providers::parse::choice_letter;
use crate::Vec3;

/// Smallest accepted gap for distance-like predicates, meters.
pub const MIN_MARGIN_M: f64 = 0.3;
/// Smallest accepted gap for bearing predicates, degrees.
pub const MIN_MARGIN_DEG: f64 = 8.0;

pub const RELATIVE_CHOICES: [&str; 4] = ["left and closer", "left and farther", "right and closer", "right and farther"];
pub const PERSPECTIVE_CHOICES: [&str; 4] = ["front-left", "front-right", "back-left", "back-right"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QaError {
    #[error("question does not match any template: {0}")]
    Unparseable(String),
    #[error("no unique object labeled {0:?}")]
    UnknownLabel(String),
    #[error("question has no answerable choice")]
    NoChoices,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "EgoM")]
    EgoMovement,
    #[serde(rename = "ObjectM")]
    ObjectMovement,
    #[serde(rename = "GoalAim")]
    GoalAiming,
    #[serde(rename = "ActCons")]
    ActionConsequence,
    #[serde(rename = "Perspect")]
    PerspectiveTaking,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::EgoMovement,
        Category::ObjectMovement,
        Category::GoalAiming,
        Category::ActionConsequence,
        Category::PerspectiveTaking,
    ];

    pub fn abbrev(self) -> &'static str {
        match self {
            Category::EgoMovement => "EgoM",
            Category::ObjectMovement => "ObjectM",
            Category::GoalAiming => "GoalAim",
            Category::ActionConsequence => "ActCons",
            Category::PerspectiveTaking => "Perspect",
        }
    }
}

/// Machine form of a question; label-choice templates read their candidate
/// objects from the record's choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum QuestionSpec {
    /// Which choice is closest after the camera moves `forward_m` ahead.
    EgoMove { forward_m: f64 },
    /// Where `mover` ends up relative to `reference` after shifting right.
    ObjectMove { mover: String, reference: String, right_m: f64 },
    /// Which choice needs the smallest turn to face.
    GoalAim,
    /// Relative position after the camera turns 90 degrees in place.
    TurnInPlace { right: bool, subject: String, reference: String },
    /// Quadrant of `target` for an observer at `stand` facing `face`.
    Perspective { stand: String, face: String, target: String },
}

impl QuestionSpec {
    pub fn category(&self) -> Category {
        match self {
            QuestionSpec::EgoMove { .. } => Category::EgoMovement,
            QuestionSpec::ObjectMove { .. } => Category::ObjectMovement,
            QuestionSpec::GoalAim => Category::GoalAiming,
            QuestionSpec::TurnInPlace { .. } => Category::ActionConsequence,
            QuestionSpec::Perspective { .. } => Category::PerspectiveTaking,
        }
    }

    pub fn text(&self) -> String {
        match self {
            QuestionSpec::EgoMove { forward_m } => format!(
                "If the camera moves {forward_m:.1} m straight ahead, which object is then closest to the camera?"
            ),
            QuestionSpec::ObjectMove { mover, reference, right_m } => format!(
                "If the {mover} is moved {:.1} m to the camera's {}, where is it relative to the {reference}: to its left or right, and closer to or farther from the camera?",
                right_m.abs(),
                if *right_m >= 0.0 { "right" } else { "left" }
            ),
            QuestionSpec::GoalAim => {
                "Which object needs the smallest turn for the camera to face it directly?".to_string()
            }
            QuestionSpec::TurnInPlace { right, subject, reference } => format!(
                "If the camera turns 90 degrees to the {} in place, where is the {subject} relative to the {reference}: to its left or right, and closer to or farther from the camera?",
                if *right { "right" } else { "left" }
            ),
            QuestionSpec::Perspective { stand, face, target } => format!(
                "Standing at the {stand} and facing the {face}, in which direction is the {target}?"
            ),
        }
    }

    fn labels<'a>(&'a self, choices: &'a [String]) -> Vec<&'a str> {
        match self {
            QuestionSpec::EgoMove { .. } | QuestionSpec::GoalAim => choices.iter().map(String::as_str).collect(),
            QuestionSpec::ObjectMove { mover, reference, .. } => vec![mover, reference],
            QuestionSpec::TurnInPlace { subject, reference, .. } => vec![subject, reference],
            QuestionSpec::Perspective { stand, face, target } => vec![stand, face, target],
        }
    }
}

static EGO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^If the camera moves (-?[0-9.]+) m straight ahead, which object is then closest").unwrap());
static OBJ: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^If the (.+?) is moved ([0-9.]+) m to the camera's (left|right), where is it relative to the (.+?):").unwrap()
});
static TURN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^If the camera turns 90 degrees to the (left|right) in place, where is the (.+?) relative to the (.+?):").unwrap()
});
static PERSP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^Standing at the (.+?) and facing the (.+?), in which direction is the (.+?)\?").unwrap()
});

/// Recovers the machine form from question text.
pub fn parse_question(text: &str) -> Result<QuestionSpec, QaError> {
    let t = text.trim();
    if let Some(c) = EGO.captures(t) {
        let forward_m = c[1].parse().map_err(|_| QaError::Unparseable(t.into()))?;
        return Ok(QuestionSpec::EgoMove { forward_m });
    }
    if let Some(c) = OBJ.captures(t) {
        let d: f64 = c[2].parse().map_err(|_| QaError::Unparseable(t.into()))?;
        return Ok(QuestionSpec::ObjectMove {
            mover: c[1].to_string(),
            reference: c[4].to_string(),
            right_m: if &c[3] == "right" { d } else { -d },
        });
    }
    if t.starts_with("Which object needs the smallest turn") {
        return Ok(QuestionSpec::GoalAim);
    }
    if let Some(c) = TURN.captures(t) {
        return Ok(QuestionSpec::TurnInPlace {
            right: &c[1] == "right",
            subject: c[2].to_string(),
            reference: c[3].to_string(),
        });
    }
    if let Some(c) = PERSP.captures(t) {
        return Ok(QuestionSpec::Perspective {
            stand: c[1].to_string(),
            face: c[2].to_string(),
            target: c[3].to_string(),
        });
    }
    Err(QaError::Unparseable(t.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Distances include the height difference.
    Full3d,
    /// Distances on the ground plane only.
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub index: usize,
    /// Gap to the nearest competing answer (meters or degrees).
    pub margin: f64,
}

fn dist(p: &Vec3, metric: Metric) -> f64 {
    match metric {
        Metric::Full3d => p.norm(),
        Metric::Horizontal => p.x.hypot(p.y),
    }
}

fn argmin_with_margin(vals: &[(usize, f64)]) -> Result<Evaluation, QaError> {
    let mut sorted = vals.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    match sorted.as_slice() {
        [] => Err(QaError::NoChoices),
        [only] => Ok(Evaluation { index: only.0, margin: f64::INFINITY }),
        [a, b, ..] => Ok(Evaluation { index: a.0, margin: b.1 - a.1 }),
    }
}

/// Answers a question given level-frame positions (right, forward, up)
/// of the named objects. Unknown labels among label choices are skipped.
pub fn evaluate(
    spec: &QuestionSpec,
    choices: &[String],
    pos: &dyn Fn(&str) -> Option<Vec3>,
    metric: Metric,
) -> Result<Evaluation, QaError> {
    let need = |l: &str| pos(l).ok_or_else(|| QaError::UnknownLabel(l.to_string()));
    match spec {
        QuestionSpec::EgoMove { forward_m } => {
            let shift = Vec3::new(0.0, *forward_m, 0.0);
            let vals: Vec<(usize, f64)> = choices
                .iter()
                .enumerate()
                .filter_map(|(i, l)| pos(l).map(|p| (i, dist(&(p - shift), metric))))
                .collect();
            argmin_with_margin(&vals)
        }
        QuestionSpec::GoalAim => {
            let vals: Vec<(usize, f64)> = choices
                .iter()
                .enumerate()
                .filter_map(|(i, l)| pos(l).map(|p| (i, p.x.atan2(p.y).abs().to_degrees())))
                .collect();
            argmin_with_margin(&vals)
        }
        QuestionSpec::ObjectMove { mover, reference, right_m } => {
            let m = need(mover)? + Vec3::new(*right_m, 0.0, 0.0);
            let r = need(reference)?;
            Ok(quadrant(m.x - r.x, dist(&m, metric) - dist(&r, metric)))
        }
        QuestionSpec::TurnInPlace { right, subject, reference } => {
            let s = need(subject)?;
            let r = need(reference)?;
            // turning right makes the old forward axis point to the left
            let lateral = if *right { r.y - s.y } else { s.y - r.y };
            Ok(quadrant(lateral, dist(&s, metric) - dist(&r, metric)))
        }
        QuestionSpec::Perspective { stand, face, target } => {
            let s = need(stand)?;
            let f = need(face)? - s;
            let t = need(target)? - s;
            let n = f.x.hypot(f.y);
            if n < 1e-9 {
                return Err(QaError::NoChoices);
            }
            let (fx, fy) = (f.x / n, f.y / n);
            let lateral = t.x * fy - t.y * fx;
            let ahead = t.x * fx + t.y * fy;
            let index = match (ahead > 0.0, lateral > 0.0) {
                (true, false) => 0,
                (true, true) => 1,
                (false, false) => 2,
                (false, true) => 3,
            };
            Ok(Evaluation {
                index,
                margin: lateral.abs().min(ahead.abs()),
            })
        }
    }
}

fn quadrant(lateral: f64, range_diff: f64) -> Evaluation {
    let index = usize::from(lateral > 0.0) * 2 + usize::from(range_diff > 0.0);
    Evaluation {
        index,
        margin: lateral.abs().min(range_diff.abs()),
    }
}

/// Origin camera center plus its (right, ground-forward, up) directions.
pub fn level_frame(pose: &CameraPose, up: &Vec3) -> (Vec3, [Vec3; 3]) {
    let up = up.normalize();
    let fwd = pose.forward();
    let mut f = fwd - up * up.dot(&fwd);
    if f.norm() < 1e-9 {
        f = pose.rotation().column(1).into_owned() * -1.0;
        f -= up * up.dot(&f);
    }
    let f = f.normalize();
    (pose.center(), [f.cross(&up), f, up])
}

pub fn to_level(p: &Vec3, frame: &(Vec3, [Vec3; 3])) -> Vec3 {
    let d = p - frame.0;
    Vec3::new(d.dot(&frame.1[0]), d.dot(&frame.1[1]), d.dot(&frame.1[2]))
}

/// Level-frame center of the single cuboid carrying `label`.
pub fn world_position(world: &WorldSpec, label: &str) -> Option<Vec3> {
    let mut it = world.cuboids.iter().filter(|c| c.label == label);
    let c = it.next()?;
    if it.next().is_some() {
        return None;
    }
    Some(to_level(&c.center, &level_frame(&world.camera.pose, &world.up)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneRef {
    Synthetic { seed: u64, objects: usize },
    Bundle { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub scene: SceneRef,
    pub question: String,
    pub choices: Vec<String>,
    pub answer: char,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<QuestionSpec>,
}

impl QARecord {
    pub fn answer_index(&self) -> Option<usize> {
        let i = (self.answer as u32).checked_sub('A' as u32)? as usize;
        (i < self.choices.len()).then_some(i)
    }
}

/// Exact answer letter from the world's cuboid centers.
pub fn oracle_answer(world: &WorldSpec, record: &QARecord) -> Result<char, QaError> {
    let spec = match &record.spec {
        Some(s) => s.clone(),
        None => parse_question(&record.question)?,
    };
    let pos = |l: &str| world_position(world, l);
    let e = evaluate(&spec, &record.choices, &pos, Metric::Full3d)?;
    Ok(choice_letter(e.index))
}

fn label_choices(rng: &mut ChaCha8Rng, world: &WorldSpec, uniq: &[String], vocab: &[String]) -> Vec<String> {
    let mut present = uniq.to_vec();
    present.shuffle(rng);
    present.truncate(4);
    let mut absent: Vec<String> = vocab
        .iter()
        .filter(|v| !world.cuboids.iter().any(|c| &c.label == *v))
        .cloned()
        .collect();
    absent.shuffle(rng);
    let need = 4usize.saturating_sub(present.len());
    present.extend(absent.into_iter().take(need));
    present.shuffle(rng);
    present
}

fn pick<const N: usize>(rng: &mut ChaCha8Rng, uniq: &[String]) -> Option<[String; N]> {
    if uniq.len() < N {
        return None;
    }
    let mut v = uniq.to_vec();
    v.shuffle(rng);
    Some(std::array::from_fn(|i| v[i].clone()))
}

fn try_question(
    cat: Category,
    rng: &mut ChaCha8Rng,
    world: &WorldSpec,
    uniq: &[String],
    vocab: &[String],
) -> Option<(QuestionSpec, Vec<String>)> {
    let quad = |c: &[&str; 4]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match cat {
        Category::EgoMovement => {
            if uniq.len() < 2 {
                return None;
            }
            let forward_m = [0.5, 1.0, 1.5, 2.0, 2.5][rng.random_range(0..5)];
            Some((QuestionSpec::EgoMove { forward_m }, label_choices(rng, world, uniq, vocab)))
        }
        Category::GoalAiming => {
            if uniq.len() < 2 {
                return None;
            }
            Some((QuestionSpec::GoalAim, label_choices(rng, world, uniq, vocab)))
        }
        Category::ObjectMovement => {
            let [mover, reference] = pick::<2>(rng, uniq)?;
            let right_m = [-1.5, -1.0, -0.5, 0.5, 1.0, 1.5][rng.random_range(0..6)];
            Some((QuestionSpec::ObjectMove { mover, reference, right_m }, quad(&RELATIVE_CHOICES)))
        }
        Category::ActionConsequence => {
            let [subject, reference] = pick::<2>(rng, uniq)?;
            let right = rng.random_bool(0.5);
            Some((QuestionSpec::TurnInPlace { right, subject, reference }, quad(&RELATIVE_CHOICES)))
        }
        Category::PerspectiveTaking => {
            let [stand, face, target] = pick::<3>(rng, uniq)?;
            Some((QuestionSpec::Perspective { stand, face, target }, quad(&PERSPECTIVE_CHOICES)))
        }
    }
}

/// Accepts a question only when 3D and ground-plane answers agree with margin.
fn well_posed(spec: &QuestionSpec, choices: &[String], world: &WorldSpec) -> Option<usize> {
    let pos = |l: &str| world_position(world, l);
    for l in spec.labels(choices) {
        let in_world = world.cuboids.iter().any(|c| c.label == l);
        if in_world && pos(l).is_none() {
            return None;
        }
    }
    let a = evaluate(spec, choices, &pos, Metric::Full3d).ok()?;
    let b = evaluate(spec, choices, &pos, Metric::Horizontal).ok()?;
    let min = if matches!(spec, QuestionSpec::GoalAim) { MIN_MARGIN_DEG } else { MIN_MARGIN_M };
    (a.index == b.index && a.margin >= min && b.margin >= min).then_some(a.index)
}

/// `n` questions cycling through the five templates. Templates the world
/// cannot support (too few uniquely labeled objects, no well-posed
/// instance within the attempt budget) are skipped for that slot.
pub fn generate_questions(world: &WorldSpec, n: usize, seed: u64) -> Vec<QARecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniq = world.unique_labels();
    let vocab = WorldBounds::default().vocabulary;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let cat = Category::ALL[j % Category::ALL.len()];
        for _ in 0..200 {
            let Some((spec, choices)) = try_question(cat, &mut rng, world, &uniq, &vocab) else {
                break;
            };
            if let Some(index) = well_posed(&spec, &choices, world) {
                out.push(QARecord {
                    id: format!("s{}-q{j}", world.seed),
                    scene: SceneRef::Synthetic {
                        seed: world.seed,
                        objects: world.cuboids.len(),
                    },
                    question: spec.text(),
                    choices,
                    answer: choice_letter(index),
                    category: cat,
                    spec: Some(spec),
                });
                break;
            }
        }
    }
    out
}

/// Balanced benchmark of `n` questions over freshly generated worlds with
/// 3 to 6 objects each, default bounds.
pub fn synthetic_benchmark(seed: u64, n: usize) -> Vec<QARecord> {
    let bounds = WorldBounds::default();
    let cats = Category::ALL.len();
    let mut quota: Vec<usize> = (0..cats).map(|i| n / cats + usize::from(i < n % cats)).collect();
    let mut out = Vec::with_capacity(n);
    let mut i: u64 = 0;
    while quota.iter().any(|&q| q > 0) && i < 100 * n as u64 + 100 {
        let world_seed = seed.wrapping_mul(1_000_003).wrapping_add(i);
        let k = 3 + (i % 4) as usize;
        i += 1;
        let Ok(world) = generate_world(world_seed, k, &bounds) else {
            continue;
        };
        for q in generate_questions(&world, cats, world_seed ^ 0x9e37_79b9) {
            let c = Category::ALL.iter().position(|c| *c == q.category).unwrap();
            if quota[c] > 0 {
                quota[c] -= 1;
                out.push(q);
            }
        }
    }
    for (j, q) in out.iter_mut().enumerate() {
        q.id = format!("q{j:04}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::rotate_about_up;

    fn pos_table(entries: Vec<(&'static str, Vec3)>) -> impl Fn(&str) -> Option<Vec3> {
        move |l: &str| entries.iter().find(|e| e.0 == l).map(|e| e.1)
    }

    #[test]
    fn left_of_sign_test() {
        // no shift: plain left/right + closer/farther between A and B
        let pos = pos_table(vec![("a", Vec3::new(-1.0, 3.0, 0.0)), ("b", Vec3::new(1.0, 3.0, 0.0))]);
        let spec = QuestionSpec::ObjectMove { mover: "a".into(), reference: "b".into(), right_m: 0.0 };
        let e = evaluate(&spec, &[], &pos, Metric::Full3d).unwrap();
        assert!(e.index < 2, "a is left of b");
    }

    #[test]
    fn ego_move_recomputes_ranking() {
        let pos = pos_table(vec![("near", Vec3::new(0.0, 1.0, 0.0)), ("far", Vec3::new(0.0, 2.5, 0.0))]);
        let choices: Vec<String> = vec!["near".into(), "far".into()];
        let before = evaluate(&QuestionSpec::EgoMove { forward_m: 0.0 }, &choices, &pos, Metric::Full3d).unwrap();
        assert_eq!(before.index, 0);
        let after = evaluate(&QuestionSpec::EgoMove { forward_m: 2.2 }, &choices, &pos, Metric::Full3d).unwrap();
        assert_eq!(after.index, 1);
        assert!((after.margin - (1.2 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn displacement_flips_side() {
        let pos = pos_table(vec![("a", Vec3::new(0.0, 3.0, 0.0)), ("b", Vec3::new(0.5, 4.0, 0.0))]);
        let spec = QuestionSpec::ObjectMove { mover: "b".into(), reference: "a".into(), right_m: 0.0 };
        assert_eq!(evaluate(&spec, &[], &pos, Metric::Full3d).unwrap().index, 3);
        let spec = QuestionSpec::ObjectMove { mover: "b".into(), reference: "a".into(), right_m: -2.0 };
        assert_eq!(evaluate(&spec, &[], &pos, Metric::Full3d).unwrap().index, 1);
    }

    #[test]
    fn turning_and_perspective() {
        let pos = pos_table(vec![
            ("a", Vec3::new(0.0, 2.0, 0.0)),
            ("b", Vec3::new(0.0, 4.0, 0.0)),
            ("c", Vec3::new(1.0, 3.0, 0.0)),
        ]);
        // after turning right, the farther-ahead object is on the left
        let spec = QuestionSpec::TurnInPlace { right: true, subject: "b".into(), reference: "a".into() };
        assert_eq!(evaluate(&spec, &[], &pos, Metric::Full3d).unwrap().index, 1);
        // at a facing b, c sits one meter ahead and to the right
        let spec = QuestionSpec::Perspective { stand: "a".into(), face: "b".into(), target: "c".into() };
        assert_eq!(evaluate(&spec, &[], &pos, Metric::Full3d).unwrap().index, 1);
    }

    #[test]
    fn texts_parse_back() {
        let specs = vec![
            QuestionSpec::EgoMove { forward_m: 1.5 },
            QuestionSpec::ObjectMove { mover: "sofa".into(), reference: "lamp".into(), right_m: -1.0 },
            QuestionSpec::GoalAim,
            QuestionSpec::TurnInPlace { right: false, subject: "bed".into(), reference: "desk".into() },
            QuestionSpec::Perspective { stand: "a".into(), face: "b".into(), target: "c".into() },
        ];
        for s in specs {
            assert_eq!(parse_question(&s.text()).unwrap(), s);
        }
        assert!(parse_question("What color is the sky?").is_err());
    }

    #[test]
    fn generated_questions_are_balanced_and_oracle_consistent() {
        let bounds = WorldBounds { vocabulary: crate::world::VOCABULARY.iter().map(|s| s.to_string()).collect(), ..Default::default() };
        let world = (0..200)
            .filter_map(|s| generate_world(s, 6, &bounds).ok())
            .find(|w| w.unique_labels().len() >= 5)
            .unwrap();
        let qs = generate_questions(&world, 50, 1);
        assert_eq!(qs, generate_questions(&world, 50, 1));
        for cat in Category::ALL {
            let n = qs.iter().filter(|q| q.category == cat).count();
            assert_eq!(n, 10, "{cat:?}");
        }
        for q in &qs {
            assert_eq!(oracle_answer(&world, q).unwrap(), q.answer);
            assert!(q.answer_index().is_some());
        }
    }

    #[test]
    fn answers_survive_rotation_about_up() {
        for q in synthetic_benchmark(3, 25) {
            let SceneRef::Synthetic { seed, objects } = q.scene else { unreachable!() };
            let w = generate_world(seed, objects, &WorldBounds::default()).unwrap();
            for angle in [17.0, 90.0, 211.0] {
                assert_eq!(oracle_answer(&rotate_about_up(&w, angle), &q).unwrap(), q.answer);
            }
        }
    }

    #[test]
    fn benchmark_is_balanced() {
        let b = synthetic_benchmark(0, 50);
        assert_eq!(b.len(), 50);
        for cat in Category::ALL {
            assert_eq!(b.iter().filter(|q| q.category == cat).count(), 10);
        }
    }
}
