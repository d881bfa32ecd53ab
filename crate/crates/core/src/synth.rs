//! Deterministic synthetic industrial scenes with templated questions.
//!
//! A scene is a 4 × 3 grid of machine slots, each occupied by at most one
//! object. Questions come from twelve templates spread over four question
//! categories; every template has a rule that answers it from the scene
//! alone ([`oracle_answer`]). Sample `i` of a corpus draws from its own
//! ChaCha stream, so generation is order-independent and shards freely.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VlqaError};
use crate::parallel::Execution;

pub const CLASSES: [&str; 6] = ["press", "conveyor", "gauge", "valve", "robot-arm", "toolbox"];
pub const STATES: [&str; 3] = ["running", "stopped", "fault"];
pub const CATEGORIES: [&str; 4] = [
    "anomaly-detection",
    "process-instruction",
    "tool-identification",
    "operator-dialog",
];
pub const BUCKETS: [&str; 4] = ["0-25", "25-50", "50-75", "75-100"];
pub const BUCKET_WIDTH: f64 = 25.0;

/// Service procedure of each class, three steps each.
pub const ACTIONS: [[&str; 3]; 6] = [
    ["load-blank", "close-guard", "cycle-ram"],
    ["clear-belt", "set-speed", "start-belt"],
    ["zero-dial", "open-tap", "log-value"],
    ["isolate-line", "turn-handle", "check-seal"],
    ["home-axes", "load-program", "run-cycle"],
    ["open-lid", "pick-tool", "return-tool"],
];

pub const GRID_COLS: usize = 4;
pub const GRID_ROWS: usize = 3;
pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 7;
/// Feature widths per scale: class and state one-hots, then
/// `[reading/100, cx, cy, relative area]`.
pub const FEATURE_DIMS: [usize; 2] = [9, 4];
/// Stream offset separating held-out samples from training samples.
pub const TEST_STREAM_BASE: u64 = 1 << 32;

const CELL_W: f64 = 1.0 / GRID_COLS as f64;
const CELL_H: f64 = 1.0 / GRID_ROWS as f64;
const LARGEST_MARGIN: f64 = 1.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Template {
    WhichFault,
    IsFaulty,
    GaugeCritical,
    StepOf,
    FinalStep,
    WhichNeeds,
    FarLeft,
    Top,
    Largest,
    StateOf,
    GaugeRead,
    IsRunning,
}

impl Template {
    pub const ALL: [Template; 12] = [
        Template::WhichFault,
        Template::IsFaulty,
        Template::GaugeCritical,
        Template::StepOf,
        Template::FinalStep,
        Template::WhichNeeds,
        Template::FarLeft,
        Template::Top,
        Template::Largest,
        Template::StateOf,
        Template::GaugeRead,
        Template::IsRunning,
    ];

    /// Index into [`CATEGORIES`].
    pub fn category(self) -> usize {
        Template::ALL.iter().position(|&t| t == self).unwrap() / 3
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::WhichFault => "which-fault",
            Template::IsFaulty => "is-faulty",
            Template::GaugeCritical => "gauge-critical",
            Template::StepOf => "step-of",
            Template::FinalStep => "final-step",
            Template::WhichNeeds => "which-needs",
            Template::FarLeft => "far-left",
            Template::Top => "top",
            Template::Largest => "largest",
            Template::StateOf => "state-of",
            Template::GaugeRead => "gauge-read",
            Template::IsRunning => "is-running",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Template::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Bracketed parse; `*` marks the head token, `<class>`, `<k>` and
    /// `<action>` are slots.
    pub fn pattern(self) -> &'static str {
        match self {
            Template::WhichFault => "((which machine) (shows (a *fault)))",
            Template::IsFaulty => "(is (the <class>) *faulty)",
            Template::GaugeCritical => "((is (the gauge reading)) *critical)",
            Template::StepOf => "((what is) ((*step <k>) (of (servicing (the <class>)))))",
            Template::FinalStep => "((what is) ((the *final step) (of (servicing (the <class>)))))",
            Template::WhichNeeds => "((which machine) (*needs <action>))",
            Template::FarLeft => "((which object) (is (at (the far *left))))",
            Template::Top => "((which object) (is (at (the *top))))",
            Template::Largest => "((which object) (is (the *largest)))",
            Template::StateOf => "(robot (what is the *state) (of the <class>))",
            Template::GaugeRead => "(robot ((what does) ((the gauge) *read)))",
            Template::IsRunning => "(robot is (the <class>) *running)",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub state: usize,
    /// In `[0, 100)` for gauges, zero otherwise.
    pub reading: f64,
    pub bbox: [f64; 4],
    pub slot: (usize, usize),
}

impl SceneObject {
    pub fn center(&self) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.bbox;
        ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }

    pub fn area(&self) -> f64 {
        let [x0, y0, x1, y1] = self.bbox;
        (x1 - x0) * (y1 - y0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub template: Template,
    pub class: Option<usize>,
    /// 1-based step index.
    pub step: Option<usize>,
    /// `(class, step)` of the action named in the question.
    pub action: Option<(usize, usize)>,
}

impl Question {
    pub fn new(template: Template) -> Self {
        Self {
            template,
            class: None,
            step: None,
            action: None,
        }
    }

    /// Template pattern with slots filled.
    pub fn pattern(&self) -> String {
        let mut p = self.template.pattern().to_string();
        if let Some(c) = self.class {
            p = p.replace("<class>", CLASSES[c]);
        }
        if let Some(k) = self.step {
            p = p.replace("<k>", &k.to_string());
        }
        if let Some((c, k)) = self.action {
            p = p.replace("<action>", ACTIONS[c][k - 1]);
        }
        p
    }

    pub fn text(&self) -> String {
        self.pattern()
            .replace(['(', ')', '*'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Every answer the generator can produce, in index order.
pub fn answer_vocab() -> Vec<String> {
    let mut v: Vec<String> = CLASSES.iter().map(|s| s.to_string()).collect();
    v.extend(STATES.iter().map(|s| s.to_string()));
    v.extend(BUCKETS.iter().map(|s| s.to_string()));
    v.push("yes".into());
    v.push("no".into());
    v.extend(ACTIONS.iter().flatten().map(|s| s.to_string()));
    v
}

/// Task category (index into [`CATEGORIES`]) of each answer.
pub fn answer_categories() -> Vec<usize> {
    let mut v = vec![2; CLASSES.len()];
    v.extend(std::iter::repeat_n(0, STATES.len() + BUCKETS.len()));
    v.extend([3, 3]);
    v.extend(std::iter::repeat_n(1, ACTIONS.len() * 3));
    v
}

pub fn answer_index(answer: &str) -> Option<usize> {
    answer_vocab().iter().position(|a| a == answer)
}

/// Every question token, sorted.
pub fn question_vocab() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for t in Template::ALL {
        let p = t.pattern().replace(['(', ')', '*'], " ");
        words.extend(
            p.split_whitespace()
                .filter(|w| !w.starts_with('<'))
                .map(str::to_string),
        );
    }
    words.extend(CLASSES.iter().map(|s| s.to_string()));
    words.extend(["1", "2", "3"].map(String::from));
    words.extend(ACTIONS.iter().flatten().map(|s| s.to_string()));
    words.sort();
    words.dedup();
    words
}

pub fn bucket_of(reading: f64) -> usize {
    ((reading / BUCKET_WIDTH) as usize).min(BUCKETS.len() - 1)
}

fn unique_by<K: PartialEq + Copy>(scene: &SceneSpec, key: impl Fn(&SceneObject) -> K, k: K) -> Option<&SceneObject> {
    let mut hits = scene.objects.iter().filter(|o| key(o) == k);
    let first = hits.next()?;
    hits.next().is_none().then_some(first)
}

fn extreme_unique(scene: &SceneSpec, key: impl Fn(&SceneObject) -> usize) -> Option<&SceneObject> {
    let min = scene.objects.iter().map(&key).min()?;
    unique_by(scene, key, min)
}

fn named(answer: &str) -> usize {
    answer_index(answer).expect("answer in vocabulary")
}

fn yes_no(b: bool) -> usize {
    named(if b { "yes" } else { "no" })
}

/// Answer `question` about `scene` from the rule table.
pub fn oracle_answer(scene: &SceneSpec, question: &Question) -> Result<usize> {
    let missing = |what: &str| {
        VlqaError::Template(format!(
            "{} question without {what}",
            question.template.name()
        ))
    };
    let ambiguous = || {
        VlqaError::Template(format!(
            "{} question has no unique answer in this scene",
            question.template.name()
        ))
    };
    let class_obj = || -> Result<&SceneObject> {
        let c = question.class.ok_or_else(|| missing("a class"))?;
        unique_by(scene, |o| o.class, c).ok_or_else(ambiguous)
    };
    let gauge = || unique_by(scene, |o| o.class, 2).ok_or_else(ambiguous);
    let answer = match question.template {
        Template::WhichFault => named(CLASSES[unique_by(scene, |o| o.state, 2).ok_or_else(ambiguous)?.class]),
        Template::IsFaulty => yes_no(class_obj()?.state == 2),
        Template::GaugeCritical => yes_no(gauge()?.reading >= 75.0),
        Template::StepOf => {
            let c = question.class.ok_or_else(|| missing("a class"))?;
            let k = question.step.ok_or_else(|| missing("a step"))?;
            if !(1..=3).contains(&k) {
                return Err(VlqaError::Template(format!("step {k} outside 1..=3")));
            }
            named(ACTIONS[c][k - 1])
        }
        Template::FinalStep => named(ACTIONS[question.class.ok_or_else(|| missing("a class"))?][2]),
        Template::WhichNeeds => {
            let (c, _) = question.action.ok_or_else(|| missing("an action"))?;
            named(CLASSES[c])
        }
        Template::FarLeft => named(CLASSES[extreme_unique(scene, |o| o.slot.0).ok_or_else(ambiguous)?.class]),
        Template::Top => named(CLASSES[extreme_unique(scene, |o| o.slot.1).ok_or_else(ambiguous)?.class]),
        Template::Largest => {
            let mut areas: Vec<(f64, usize)> =
                scene.objects.iter().map(|o| (o.area(), o.class)).collect();
            areas.sort_by(|a, b| b.0.total_cmp(&a.0));
            match areas.as_slice() {
                [(_, c)] => named(CLASSES[*c]),
                [(a0, c), (a1, _), ..] if *a0 >= LARGEST_MARGIN * a1 => named(CLASSES[*c]),
                _ => return Err(ambiguous()),
            }
        }
        Template::StateOf => named(STATES[class_obj()?.state]),
        Template::GaugeRead => named(BUCKETS[bucket_of(gauge()?.reading)]),
        Template::IsRunning => yes_no(class_obj()?.state == 0),
    };
    Ok(answer)
}

fn random_scene(rng: &mut ChaCha8Rng) -> SceneSpec {
    let n = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let mut slots: Vec<(usize, usize)> = (0..GRID_ROWS)
        .flat_map(|r| (0..GRID_COLS).map(move |c| (c, r)))
        .collect();
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let slot = slots.remove(rng.random_range(0..slots.len()));
        let class = rng.random_range(0..CLASSES.len());
        let state = rng.random_range(0..STATES.len());
        let reading = if class == 2 {
            rng.random_range(0..1000) as f64 / 10.0
        } else {
            0.0
        };
        let cx = (slot.0 as f64 + 0.5) * CELL_W + rng.random_range(-0.01..0.01);
        let cy = (slot.1 as f64 + 0.5) * CELL_H + rng.random_range(-0.01..0.01);
        let hw = rng.random_range(0.04..0.11);
        let hh = rng.random_range(0.05..0.15);
        objects.push(SceneObject {
            class,
            state,
            reading,
            bbox: [cx - hw, cy - hh, cx + hw, cy + hh],
            slot,
        });
    }
    SceneSpec { objects }
}

fn pick_unique_class(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Option<usize> {
    let singles: Vec<usize> = (0..CLASSES.len())
        .filter(|&c| unique_by(scene, |o| o.class, c).is_some())
        .collect();
    singles.choose(rng).copied()
}

fn instantiate(template: Template, scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Option<Question> {
    let mut q = Question::new(template);
    match template {
        Template::IsFaulty | Template::StateOf | Template::IsRunning => {
            q.class = Some(pick_unique_class(scene, rng)?);
        }
        Template::StepOf => {
            q.class = Some(rng.random_range(0..CLASSES.len()));
            q.step = Some(rng.random_range(1..=3));
        }
        Template::FinalStep => q.class = Some(rng.random_range(0..CLASSES.len())),
        Template::WhichNeeds => {
            q.action = Some((rng.random_range(0..CLASSES.len()), rng.random_range(1..=3)));
        }
        _ => {}
    }
    oracle_answer(scene, &q).ok().map(|_| q)
}

/// One region record as stored in the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub bbox: [f64; 4],
    pub feats_s1: Vec<f64>,
    pub feats_s2: Vec<f64>,
    pub class: String,
    pub state: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeRecord {
    pub id: usize,
    pub children: Vec<usize>,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub nodes: Vec<TreeNodeRecord>,
    pub root: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub regions: Vec<RegionRecord>,
    pub question: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeRecord>,
    pub answer: usize,
    pub answer_category: String,
}

/// Noiseless feature vectors of an object, one per scale.
pub fn object_features(o: &SceneObject) -> [Vec<f64>; 2] {
    let mut s1 = vec![0.0; FEATURE_DIMS[0]];
    s1[o.class] = 1.0;
    s1[CLASSES.len() + o.state] = 1.0;
    let (cx, cy) = o.center();
    let s2 = vec![o.reading / 100.0, cx, cy, o.area() / (CELL_W * CELL_H)];
    [s1, s2]
}

/// Recover `(class, state)` from scale-1 features by argmax.
pub fn decode_class_state(s1: &[f64]) -> (usize, usize) {
    let argmax = |xs: &[f64]| {
        xs.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    (
        argmax(&s1[..CLASSES.len()]),
        argmax(&s1[CLASSES.len()..CLASSES.len() + STATES.len()]),
    )
}

/// Parse a filled template pattern into a tree record. The head child of
/// a node weighs twice its siblings before normalization.
pub fn parse_pattern(pattern: &str) -> Result<TreeRecord> {
    #[derive(Debug)]
    enum Tok {
        Open,
        Close,
        Word(String, bool),
    }
    let spaced = pattern.replace('(', " ( ").replace(')', " ) ");
    let toks: Vec<Tok> = spaced
        .split_whitespace()
        .map(|w| match w {
            "(" => Tok::Open,
            ")" => Tok::Close,
            w => match w.strip_prefix('*') {
                Some(rest) => Tok::Word(rest.to_string(), true),
                None => Tok::Word(w.to_string(), false),
            },
        })
        .collect();

    let mut nodes: Vec<TreeNodeRecord> = Vec::new();
    // (node index, child head flags)
    let mut stack: Vec<(usize, Vec<bool>)> = Vec::new();
    let mut root = None;
    for tok in toks {
        match tok {
            Tok::Open => {
                let id = nodes.len();
                nodes.push(TreeNodeRecord {
                    id,
                    children: vec![],
                    scores: vec![],
                    token: None,
                });
                if let Some((parent, heads)) = stack.last_mut() {
                    nodes[*parent].children.push(id);
                    heads.push(false);
                }
                stack.push((id, vec![]));
            }
            Tok::Close => {
                let (id, heads) = stack
                    .pop()
                    .ok_or_else(|| VlqaError::Template(format!("unbalanced pattern {pattern}")))?;
                if heads.is_empty() {
                    return Err(VlqaError::Template(format!("empty group in {pattern}")));
                }
                let weights: Vec<f64> = heads.iter().map(|&h| if h { 2.0 } else { 1.0 }).collect();
                let total: f64 = weights.iter().sum();
                nodes[id].scores = weights.iter().map(|w| w / total).collect();
                if stack.is_empty() {
                    root = Some(id);
                }
            }
            Tok::Word(w, head) => {
                let id = nodes.len();
                nodes.push(TreeNodeRecord {
                    id,
                    children: vec![],
                    scores: vec![],
                    token: Some(w),
                });
                match stack.last_mut() {
                    Some((parent, heads)) => {
                        nodes[*parent].children.push(id);
                        heads.push(head);
                    }
                    None => root = Some(id),
                }
            }
        }
    }
    if !stack.is_empty() {
        return Err(VlqaError::Template(format!("unbalanced pattern {pattern}")));
    }
    let root = root.ok_or_else(|| VlqaError::Template("empty pattern".into()))?;
    Ok(TreeRecord { nodes, root })
}

#[derive(Clone, Debug)]
pub struct GeneratedSample {
    pub scene: SceneSpec,
    pub question: Question,
    pub record: SampleRecord,
}

fn generate_one(seed: u64, stream: u64, noise: f64) -> GeneratedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let category = rng.random_range(0..CATEGORIES.len());
    let template = Template::ALL[category * 3 + rng.random_range(0..3)];
    let (scene, question) = loop {
        let scene = random_scene(&mut rng);
        if let Some(q) = instantiate(template, &scene, &mut rng) {
            break (scene, q);
        }
    };
    let answer = oracle_answer(&scene, &question).expect("instantiated questions are answerable");

    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise level");
    let mut jitter = |xs: Vec<f64>| -> Vec<f64> {
        if noise > 0.0 {
            xs.into_iter().map(|x| x + normal.sample(&mut rng)).collect()
        } else {
            xs
        }
    };
    let regions = scene
        .objects
        .iter()
        .map(|o| {
            let [s1, s2] = object_features(o);
            RegionRecord {
                bbox: o.bbox,
                feats_s1: jitter(s1),
                feats_s2: jitter(s2),
                class: CLASSES[o.class].to_string(),
                state: STATES[o.state].to_string(),
            }
        })
        .collect();
    let tree = parse_pattern(&question.pattern()).expect("template patterns parse");
    let record = SampleRecord {
        regions,
        question: question.text(),
        category: CATEGORIES[template.category()].to_string(),
        template: Some(template.name().to_string()),
        tree: Some(tree),
        answer,
        answer_category: CATEGORIES[answer_categories()[answer]].to_string(),
    };
    GeneratedSample {
        scene,
        question,
        record,
    }
}

/// Samples for streams `offset .. offset + count` of `seed`.
pub fn generate_streams(
    seed: u64,
    offset: u64,
    count: usize,
    noise: f64,
    exec: Execution,
) -> Result<Vec<GeneratedSample>> {
    if count == 0 {
        return Err(VlqaError::Precondition("sample count must be at least 1".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(VlqaError::Precondition(format!(
            "noise level {noise} must be a finite non-negative number"
        )));
    }
    Ok(exec.map_range(count, |i| generate_one(seed, offset + i as u64, noise)))
}

pub fn generate(seed: u64, count: usize, noise: f64) -> Result<Vec<SampleRecord>> {
    Ok(generate_streams(seed, 0, count, noise, Execution::Auto)?
        .into_iter()
        .map(|g| g.record)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(class: usize, state: usize, slot: (usize, usize)) -> SceneObject {
        let cx = (slot.0 as f64 + 0.5) * CELL_W;
        let cy = (slot.1 as f64 + 0.5) * CELL_H;
        SceneObject {
            class,
            state,
            reading: 0.0,
            bbox: [cx - 0.05, cy - 0.05, cx + 0.05, cy + 0.05],
            slot,
        }
    }

    #[test]
    fn single_fault_valve() {
        let scene = SceneSpec {
            objects: vec![obj(0, 0, (0, 0)), obj(3, 2, (1, 0)), obj(5, 1, (2, 2))],
        };
        let a = oracle_answer(&scene, &Question::new(Template::WhichFault)).unwrap();
        assert_eq!(answer_vocab()[a], "valve");
    }

    #[test]
    fn gauge_bucket_half_open() {
        let mut g = obj(2, 0, (0, 0));
        g.reading = 73.0;
        let scene = SceneSpec { objects: vec![g.clone()] };
        let a = oracle_answer(&scene, &Question::new(Template::GaugeRead)).unwrap();
        assert_eq!(answer_vocab()[a], "50-75");
        g.reading = 75.0;
        let scene = SceneSpec { objects: vec![g] };
        let a = oracle_answer(&scene, &Question::new(Template::GaugeRead)).unwrap();
        assert_eq!(answer_vocab()[a], "75-100");
        assert_eq!(bucket_of(50.0), 2);
        assert_eq!(bucket_of(49.9), 1);
    }

    #[test]
    fn step_lookup() {
        let mut q = Question::new(Template::StepOf);
        q.class = Some(3);
        q.step = Some(2);
        let a = oracle_answer(&SceneSpec { objects: vec![] }, &q).unwrap();
        assert_eq!(answer_vocab()[a], ACTIONS[3][1]);
    }

    #[test]
    fn ambiguous_scene_is_a_template_error() {
        let scene = SceneSpec {
            objects: vec![obj(0, 2, (0, 0)), obj(1, 2, (1, 0))],
        };
        assert!(matches!(
            oracle_answer(&scene, &Question::new(Template::WhichFault)),
            Err(VlqaError::Template(_))
        ));
    }

    #[test]
    fn answer_tables_align() {
        assert_eq!(answer_vocab().len(), answer_categories().len());
        assert_eq!(answer_vocab().len(), 33);
        let mut v = answer_vocab();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 33);
    }

    #[test]
    fn parse_marks_head_with_double_weight() {
        let t = parse_pattern("((which machine) (shows (a *fault)))").unwrap();
        let a_fault = t
            .nodes
            .iter()
            .find(|n| n.children.len() == 2 && t.nodes[n.children[1]].token.as_deref() == Some("fault"))
            .unwrap();
        assert!((a_fault.scores[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((a_fault.scores[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn question_text_has_no_markup() {
        let mut q = Question::new(Template::StepOf);
        q.class = Some(4);
        q.step = Some(1);
        assert_eq!(q.text(), "what is step 1 of servicing the robot-arm");
    }

    #[test]
    fn templates_cover_four_categories() {
        let mut counts = [0; 4];
        for t in Template::ALL {
            counts[t.category()] += 1;
            assert_eq!(Template::from_name(t.name()), Some(t));
        }
        assert_eq!(counts, [3, 3, 3, 3]);
    }

    #[test]
    fn noiseless_features_decode() {
        let o = obj(4, 1, (2, 1));
        let [s1, _] = object_features(&o);
        assert_eq!(decode_class_state(&s1), (4, 1));
    }

    #[test]
    fn vocab_covers_generated_questions() {
        let vocab = question_vocab();
        for r in generate(3, 200, 0.0).unwrap() {
            for w in r.question.split_whitespace() {
                assert!(vocab.iter().any(|v| v == w), "{w}");
            }
        }
    }
}
