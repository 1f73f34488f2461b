//! Synthetic cohorts with planted interactions.
//!
//! Each object's timeline is a run of slots. A slot hosts one episode group:
//! either one planted pattern or one instance of a nuisance pair. Outside
//! episodes every variable sits near the middle of its normal range, so it
//! abstracts to a single Normal-Stable run between episodes.
//!
//! Episode shapes place the planted interval's endpoints exactly on the
//! boundaries the abstraction produces: state boundaries fall midway between
//! a Normal sample at `s - h` and an abnormal one at `s + h`, and gradient
//! runs start and end on samples.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{abstract_object, AbstractionOptions, GradientLabel, ObjectSeries, Sample, StateLabel, TemplateLabel};
use crate::allen::{classify_relation, AllenRelation, Interval};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Rule};
use crate::qig::{build_qig_with, MatchTolerance, Qig, QigEdge, QigNode, QigOptions};

/// Layout grid unit in seconds.
const GRID_UNIT: f64 = 1200.0;
/// Grid points available to a layout: 0..=GRID_POINTS-1.
const GRID_POINTS: usize = 7;
/// Margin before the earliest and after the latest episode of a slot.
const PRE: f64 = 3000.0;
const POST: f64 = 3000.0;
pub const SLOT_LENGTH: f64 = PRE + GRID_UNIT * (GRID_POINTS - 1) as f64 + POST;
/// Half-width of a state crossing.
const H: f64 = 120.0;
/// Clearance kept between baseline samples and episode windows.
const CLEARANCE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: AllenRelation,
}

/// A ground-truth interaction: labels plus the relations that must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPattern {
    pub name: String,
    pub nodes: Vec<TemplateLabel>,
    pub edges: Vec<PlantedEdge>,
}

impl PlantedPattern {
    pub fn new(name: &str, nodes: &[&str], edges: &[(usize, usize, AllenRelation)]) -> Result<Self> {
        let nodes = nodes.iter().map(|s| s.parse()).collect::<Result<Vec<TemplateLabel>>>()?;
        Ok(Self {
            name: name.to_owned(),
            nodes,
            edges: edges
                .iter()
                .map(|&(src, dst, relation)| PlantedEdge { src, dst, relation })
                .collect(),
        })
    }

    /// The pattern as a graph for matching: unit weights, base relations.
    pub fn graph(&self) -> Qig {
        let nodes = self
            .nodes
            .iter()
            .map(|l| QigNode {
                label: l.clone(),
                occurrences: vec![Interval::new(0.0, 1.0).expect("unit interval")],
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let (a, b, r) = if e.relation.is_base() {
                    (e.src, e.dst, e.relation)
                } else {
                    (e.dst, e.src, e.relation.invert())
                };
                QigEdge {
                    src: self.nodes[a].clone(),
                    dst: self.nodes[b].clone(),
                    relation: r,
                    weight: 1,
                }
            })
            .collect();
        Qig::from_parts(self.name.clone(), nodes, edges).expect("validated pattern")
    }

    fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(format!("planted pattern `{}`: {m}", self.name)));
        if self.nodes.len() < 2 {
            return bad("needs at least two nodes".into());
        }
        let vars: BTreeSet<&str> = self.nodes.iter().map(|l| l.variable()).collect();
        if vars.len() != self.nodes.len() {
            return bad("nodes must use distinct variables".into());
        }
        for l in &self.nodes {
            if l.state() == StateLabel::Normal {
                return bad(format!("{l}: Normal states cannot be planted"));
            }
            if !kb.contains(l.variable()) {
                return bad(format!("{l}: variable not in the knowledge base"));
            }
        }
        for e in &self.edges {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() || e.src == e.dst {
                return bad(format!("edge {} -> {} is out of range", e.src, e.dst));
            }
        }
        let g = self.graph();
        if !g.is_connected() {
            return bad("edges must connect every node".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    /// Number of distinct nuisance label pairs.
    pub pairs: usize,
    /// Probability that an object carries a given pair.
    pub presence: f64,
    /// Instances of a carried pair, each in its own slot.
    pub repeats: usize,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self {
            pairs: 20,
            presence: 0.5,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    pub variables: Vec<String>,
    pub planted: Vec<PlantedPattern>,
    /// Exact fraction of positives carrying each planted pattern.
    pub plant_rate: f64,
    pub nuisance: NuisanceSpec,
    /// Baseline sampling period per variable in seconds; missing variables use
    /// `default_period`.
    pub periods: BTreeMap<String, f64>,
    pub default_period: f64,
    /// Relative jitter of baseline sampling periods.
    pub jitter: f64,
    /// Additive uniform noise, as a fraction of the gradient delta.
    pub noise: f64,
    /// Bound on the baseline random-walk drift, as a fraction of the delta.
    pub drift: f64,
    /// Largest tolerated fraction of negatives matching a planted pattern.
    pub leak_tolerance: f64,
    pub max_gap: f64,
    pub seed: u64,
}

const VITALS: [&str; 6] = [
    "Heart Rate",
    "Body Temperature",
    "Systolic Blood Pressure",
    "Diastolic Blood Pressure",
    "Mean Blood Pressure",
    "Spontaneous Respiratory Rate",
];
const LABS: [&str; 6] = ["WBC", "Lactate", "Glucose", "Sodium", "Platelets", "Creatinine"];

impl SynthSpec {
    /// 200 positives and 200 negatives over twelve variables, five planted
    /// two- and three-node interactions at rate 0.9, and twenty nuisance
    /// pairs shared by both cohorts.
    pub fn preset(seed: u64) -> Self {
        use AllenRelation::*;
        let planted = vec![
            PlantedPattern::new("P1", &["Systolic Blood Pressure-Low-Dec", "Body Temperature-Hi-Inc"], &[(0, 1, Finishes)]),
            PlantedPattern::new("P2", &["Heart Rate-Hi-Stab", "Spontaneous Respiratory Rate-Hi-Stab"], &[(0, 1, Overlaps)]),
            PlantedPattern::new("P3", &["Lactate-Hi-Stab", "Glucose-Hi-Stab"], &[(0, 1, During)]),
            PlantedPattern::new(
                "P4",
                &["Mean Blood Pressure-Low-Stab", "Sodium-Low-Stab", "Creatinine-Hi-Stab"],
                &[(0, 1, Overlaps), (2, 1, Starts)],
            ),
            PlantedPattern::new(
                "P5",
                &["Diastolic Blood Pressure-Low-Inc", "Platelets-Low-Stab", "WBC-Hi-Inc"],
                &[(0, 1, During), (2, 1, Meets)],
            ),
        ]
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .expect("preset patterns parse");
        let mut periods = BTreeMap::new();
        for v in VITALS {
            periods.insert(v.to_owned(), 1800.0);
        }
        for v in LABS {
            periods.insert(v.to_owned(), 7200.0);
        }
        Self {
            n_pos: 200,
            n_neg: 200,
            variables: VITALS.iter().chain(LABS.iter()).map(|s| s.to_string()).collect(),
            planted,
            plant_rate: 0.9,
            nuisance: NuisanceSpec::default(),
            periods,
            default_period: 3600.0,
            jitter: 0.3,
            noise: 0.05,
            drift: 0.15,
            leak_tolerance: 0.0,
            max_gap: crate::qig::DEFAULT_MAX_GAP,
            seed,
        }
    }

    pub fn with_sizes(mut self, n_pos: usize, n_neg: usize) -> Self {
        self.n_pos = n_pos;
        self.n_neg = n_neg;
        self
    }

    fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        if !(self.plant_rate > 0.0 && self.plant_rate <= 1.0) {
            return Err(Error::InvalidSpec(format!("plant_rate must lie in (0, 1], got {}", self.plant_rate)));
        }
        if !(0.0..=1.0).contains(&self.nuisance.presence) {
            return Err(Error::InvalidSpec("nuisance presence must lie in [0, 1]".into()));
        }
        if !(0.0..0.2).contains(&self.noise) || !(0.0..=0.2).contains(&self.drift) || !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::InvalidSpec("noise < 0.2, drift <= 0.2 and jitter < 0.5 are required".into()));
        }
        if self.variables.is_empty() {
            return Err(Error::InvalidSpec("at least one variable is required".into()));
        }
        for v in &self.variables {
            if !kb.contains(v) {
                return Err(Error::InvalidSpec(format!("variable `{v}` is not in the knowledge base")));
            }
        }
        let vars: BTreeSet<&str> = self.variables.iter().map(String::as_str).collect();
        let mut hosted = BTreeSet::new();
        for p in &self.planted {
            p.validate(kb)?;
            for l in &p.nodes {
                if !vars.contains(l.variable()) {
                    return Err(Error::InvalidSpec(format!("{l}: variable not among the cohort variables")));
                }
                if !hosted.insert(l.variable().to_owned()) {
                    return Err(Error::InvalidSpec(format!("variable `{}` hosts more than one planted node", l.variable())));
                }
            }
        }
        for (v, p) in &self.periods {
            if !(p.is_finite() && *p >= 300.0) {
                return Err(Error::InvalidSpec(format!("sampling period of `{v}` must be at least 300 s")));
            }
        }
        if !(self.default_period.is_finite() && self.default_period >= 300.0) {
            return Err(Error::InvalidSpec("default sampling period must be at least 300 s".into()));
        }
        Ok(())
    }
}

/// Chooses grid intervals satisfying every requested relation, preferring the
/// shortest total span, then the lexicographically first layout.
pub fn solve_layout(n_nodes: usize, edges: &[PlantedEdge], max_gap: f64) -> Result<Vec<Interval>> {
    let choices: Vec<Interval> = (0..GRID_POINTS)
        .flat_map(|a| ((a + 1)..GRID_POINTS).map(move |b| (a, b)))
        .map(|(a, b)| Interval::new(a as f64 * GRID_UNIT, b as f64 * GRID_UNIT).expect("ordered grid points"))
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut pick = vec![0usize; n_nodes];
    fn rec(
        depth: usize,
        pick: &mut Vec<usize>,
        choices: &[Interval],
        edges: &[PlantedEdge],
        max_gap: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if depth == pick.len() {
            let lo = pick.iter().map(|&i| choices[i].start()).fold(f64::INFINITY, f64::min);
            let hi = pick.iter().map(|&i| choices[i].end()).fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            if best.as_ref().is_none_or(|(s, _)| span < *s) {
                *best = Some((span, pick.clone()));
            }
            return;
        }
        'next: for c in 0..choices.len() {
            pick[depth] = c;
            for e in edges {
                if e.src.max(e.dst) == depth {
                    let a = &choices[pick[e.src]];
                    let b = &choices[pick[e.dst]];
                    if classify_relation(a, b) != e.relation {
                        continue 'next;
                    }
                    let gap = match e.relation {
                        AllenRelation::Precedes => b.start() - a.end(),
                        AllenRelation::PrecededBy => a.start() - b.end(),
                        _ => 0.0,
                    };
                    if gap > max_gap {
                        continue 'next;
                    }
                }
            }
            rec(depth + 1, pick, choices, edges, max_gap, best);
        }
    }
    rec(0, &mut pick, &choices, edges, max_gap, &mut best);
    match best {
        Some((_, p)) => Ok(p.into_iter().map(|i| choices[i]).collect()),
        None => Err(Error::InfeasiblePlant(
            edges
                .iter()
                .map(|e| format!("{} {} {}", e.src, e.relation, e.dst))
                .collect::<Vec<_>>()
                .join(", "),
        )),
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

struct Shaper<'a> {
    rule: &'a Rule,
    noise: f64,
    rng: &'a mut ChaCha8Rng,
}

impl Shaper<'_> {
    fn mid(&self) -> f64 {
        0.5 * (self.rule.normal_low + self.rule.normal_high)
    }

    fn jitter(&mut self) -> f64 {
        let eta = self.noise * self.rule.gradient_delta;
        if eta > 0.0 {
            self.rng.gen_range(-eta..=eta)
        } else {
            0.0
        }
    }

    /// Samples stepping gently from `from` to `to`, the last one at `end`.
    /// Every step stays well below the gradient delta.
    fn ramp(&mut self, from: f64, to: f64, end: f64, out: &mut Vec<Sample>) {
        let delta = self.rule.gradient_delta;
        let steps = ((to - from).abs() / (0.35 * delta)).ceil().max(1.0) as usize;
        let spacing = (2400.0 / steps as f64).min(300.0).floor();
        for i in 0..=steps {
            let t = end - (steps - i) as f64 * spacing;
            let v = from + (to - from) * i as f64 / steps as f64;
            let v = if i == 0 || i == steps { v } else { v + self.jitter() };
            out.push(Sample::new(t, v));
        }
    }

    /// Gentle ramp starting at `start`.
    fn ramp_from(&mut self, from: f64, to: f64, start: f64, out: &mut Vec<Sample>) {
        let delta = self.rule.gradient_delta;
        let steps = ((to - from).abs() / (0.35 * delta)).ceil().max(1.0) as usize;
        let spacing = (2400.0 / steps as f64).min(300.0).floor();
        for i in 0..=steps {
            let t = start + i as f64 * spacing;
            let v = from + (to - from) * i as f64 / steps as f64;
            let v = if i == 0 || i == steps { v } else { v + self.jitter() };
            out.push(Sample::new(t, v));
        }
    }

    /// Evenly spaced times from `a` to `b` inclusive with spacing at most `max`.
    fn times(a: f64, b: f64, max: f64) -> Vec<f64> {
        let n = ((b - a) / max).ceil().max(1.0) as usize;
        (0..=n).map(|i| (a + (b - a) * i as f64 / n as f64).round()).collect()
    }

    /// Samples realising `state`/`gradient` over exactly [s, e].
    fn episode(&mut self, state: StateLabel, gradient: GradientLabel, s: f64, e: f64) -> Vec<Sample> {
        let d = self.rule.gradient_delta;
        let mid = self.mid();
        let (lo, hi) = (self.rule.normal_low, self.rule.normal_high);
        // Up for High, down for Low.
        let sign = match state {
            StateLabel::High => 1.0,
            StateLabel::Low => -1.0,
            StateLabel::Normal => unreachable!("validated"),
        };
        let edge = if sign > 0.0 { hi } else { lo };
        let mut out = Vec::new();
        match gradient {
            GradientLabel::Stable => {
                self.ramp(mid, edge - sign * 0.3 * d, s - H, &mut out);
                for t in Self::times(s + H, e - H, 600.0) {
                    let v = edge + sign * 0.3 * d + self.jitter();
                    out.push(Sample::new(t, v));
                }
                self.ramp_from(edge - sign * 0.3 * d, mid, e + H, &mut out);
            }
            g if (g == GradientLabel::Increasing) == (sign > 0.0) => {
                // Moving away from normal: rise (or fall) through the
                // episode, then snap back to the baseline.
                self.ramp(mid, edge - sign * 0.2 * d, s - H, &mut out);
                let ts = Self::times(s + H, e, 2400.0);
                for (i, t) in ts.iter().enumerate() {
                    let v = edge + sign * (1.3 + 1.5 * i as f64) * d + self.jitter();
                    out.push(Sample::new(*t, v));
                }
                out.push(Sample::new(e + 2.0 * H, mid));
            }
            _ => {
                // Moving back towards normal: jump out first, then return.
                out.push(Sample::new(s - 2.0 * H, mid));
                let ts = Self::times(s, e - H, 2400.0);
                let n = ts.len();
                for (i, t) in ts.iter().enumerate() {
                    let v = edge + sign * (1.3 + 1.5 * (n - 1 - i) as f64) * d + self.jitter();
                    out.push(Sample::new(*t, v));
                }
                out.push(Sample::new(e + H, edge - sign * 0.2 * d));
                let last = out.pop().expect("pushed above");
                self.ramp_from(last.v, mid, last.t, &mut out);
            }
        }
        for smp in &mut out {
            smp.v = round4(smp.v);
        }
        out
    }
}

/// One episode group placed in a slot: labels with intervals relative to the
/// slot's layout origin.
#[derive(Debug, Clone)]
struct Instance {
    labels: Vec<TemplateLabel>,
    layout: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisancePair {
    pub labels: [TemplateLabel; 2],
    pub relation: AllenRelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub pattern: PlantedPattern,
    /// Interval of each node relative to the slot's layout origin.
    pub layout: Vec<Interval>,
    pub carriers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub object_id: String,
    pub positive: bool,
    pub planted: Vec<String>,
    pub nuisance: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: SynthSpec,
    pub planted: Vec<PlantedTruth>,
    pub nuisance: Vec<NuisancePair>,
    pub objects: Vec<ObjectTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub objects: Vec<ObjectSeries>,
    pub truth: GroundTruth,
}

/// Pairs (i, i + d) for d = 1, 2, ... over the variable ring.
fn nuisance_pairs(labels: &[TemplateLabel], count: usize) -> Result<Vec<NuisancePair>> {
    use AllenRelation::*;
    const RELATIONS: [AllenRelation; 6] = [Overlaps, During, Starts, Finishes, Equals, Meets];
    let n = labels.len();
    if count > n * n.saturating_sub(1) / 2 {
        return Err(Error::InvalidSpec(format!("{count} nuisance pairs requested from {n} labels")));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    'outer: for d in 1..n {
        for i in 0..n {
            if out.len() == count {
                break 'outer;
            }
            let j = (i + d) % n;
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                out.push(NuisancePair {
                    labels: [labels[i].clone(), labels[j].clone()],
                    relation: RELATIONS[out.len() % RELATIONS.len()],
                });
            }
        }
    }
    Ok(out)
}

/// One nuisance label per variable: the stable state opposite to the planted
/// node on that variable, High when the variable hosts none.
fn nuisance_labels(spec: &SynthSpec) -> Vec<TemplateLabel> {
    let planted_state: BTreeMap<&str, StateLabel> = spec
        .planted
        .iter()
        .flat_map(|p| p.nodes.iter().map(|l| (l.variable(), l.state())))
        .collect();
    spec.variables
        .iter()
        .map(|v| {
            let state = match planted_state.get(v.as_str()) {
                Some(StateLabel::High) => StateLabel::Low,
                _ => StateLabel::High,
            };
            TemplateLabel::new(v.clone(), state, GradientLabel::Stable)
        })
        .collect()
}

fn object_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn build_object(
    spec: &SynthSpec,
    kb: &KnowledgeBase,
    object_id: String,
    mut instances: Vec<Instance>,
    rng: &mut ChaCha8Rng,
) -> ObjectSeries {
    instances.shuffle(rng);
    let n_slots = instances.len().max(1);
    let total = n_slots as f64 * SLOT_LENGTH;

    let mut episodes: BTreeMap<&str, Vec<(TemplateLabel, Interval)>> = BTreeMap::new();
    for (k, inst) in instances.iter().enumerate() {
        let origin = k as f64 * SLOT_LENGTH + PRE;
        for (l, iv) in inst.labels.iter().zip(&inst.layout) {
            let abs = Interval::new(origin + iv.start(), origin + iv.end()).expect("shifted interval");
            episodes.entry(l.variable()).or_default().push((l.clone(), abs));
        }
    }

    let mut variables = BTreeMap::new();
    for v in &spec.variables {
        let rule = kb.get(v).expect("validated variable");
        let period = spec.periods.get(v).copied().unwrap_or(spec.default_period);
        let mut shaper = Shaper {
            rule,
            noise: spec.noise,
            rng,
        };
        let mut windows: Vec<Vec<Sample>> = episodes
            .get(v.as_str())
            .map(|eps| {
                eps.iter()
                    .map(|(l, iv)| shaper.episode(l.state(), l.gradient(), iv.start(), iv.end()))
                    .collect()
            })
            .unwrap_or_default();
        windows.sort_by(|a, b| a[0].t.total_cmp(&b[0].t));

        let d = rule.gradient_delta;
        let mid = shaper.mid();
        let mut drift = 0.0;
        let mut samples: Vec<Sample> = Vec::new();
        let mut cursor = 0.0;
        let mut push_baseline = |from: f64, to: f64, samples: &mut Vec<Sample>, rng: &mut ChaCha8Rng| {
            let mut t = from + rng.gen_range(0.0..period * 0.5);
            while t <= to {
                let step = spec.drift * d / 3.0;
                drift = (drift + if step > 0.0 { rng.gen_range(-step..=step) } else { 0.0 }).clamp(-spec.drift * d, spec.drift * d);
                let eta = spec.noise * d;
                let noise = if eta > 0.0 { rng.gen_range(-eta..=eta) } else { 0.0 };
                samples.push(Sample::new(t.round(), round4(mid + drift + noise)));
                t += period * rng.gen_range((1.0 - spec.jitter)..=(1.0 + spec.jitter));
            }
        };
        for w in windows {
            let start = w[0].t;
            push_baseline(cursor, start - CLEARANCE, &mut samples, shaper.rng);
            cursor = w[w.len() - 1].t + CLEARANCE;
            samples.extend(w);
        }
        push_baseline(cursor, total, &mut samples, shaper.rng);
        if samples.len() < 2 {
            samples.push(Sample::new(total.round() + 1.0, round4(mid)));
        }
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        samples.dedup_by(|a, b| a.t == b.t);
        variables.insert(v.clone(), samples);
    }
    ObjectSeries { object_id, variables }
}

/// Generates a cohort and verifies it through abstraction and graph
/// construction: every carrier must match its planted patterns, and
/// negatives may match them only up to the leak tolerance.
pub fn generate(spec: &SynthSpec, kb: &KnowledgeBase) -> Result<SynthCohort> {
    let cohort = generate_unverified(spec, kb)?;
    let report = verify(&cohort, kb)?;
    if report.recovered != report.expected {
        return Err(Error::InfeasiblePlant(format!(
            "{} of {} planted instances survived abstraction",
            report.recovered, report.expected
        )));
    }
    if spec.n_neg > 0 && report.max_leak as f64 / spec.n_neg as f64 > spec.leak_tolerance {
        return Err(Error::InfeasiblePlant(format!("{} negatives match a planted pattern", report.max_leak)));
    }
    Ok(cohort)
}

pub fn generate_unverified(spec: &SynthSpec, kb: &KnowledgeBase) -> Result<SynthCohort> {
    spec.validate(kb)?;
    let layouts: Vec<Vec<Interval>> = spec
        .planted
        .iter()
        .map(|p| solve_layout(p.nodes.len(), &p.edges, spec.max_gap))
        .collect::<Result<_>>()?;
    let labels = nuisance_labels(spec);
    let pairs = nuisance_pairs(&labels, spec.nuisance.pairs)?;
    let pair_layouts: Vec<Vec<Interval>> = pairs
        .iter()
        .map(|p| {
            solve_layout(
                2,
                &[PlantedEdge {
                    src: 0,
                    dst: 1,
                    relation: p.relation,
                }],
                spec.max_gap,
            )
        })
        .collect::<Result<_>>()?;

    let pos_ids: Vec<String> = (0..spec.n_pos).map(|i| format!("pos-{:04}", i + 1)).collect();
    let neg_ids: Vec<String> = (0..spec.n_neg).map(|i| format!("neg-{:04}", i + 1)).collect();

    // Carriers: an exact fraction of positives per pattern.
    let mut master = object_rng(spec.seed, 0);
    let n_carry = ((spec.plant_rate * spec.n_pos as f64) - 1e-9).ceil() as usize;
    let carriers: Vec<BTreeSet<usize>> = spec
        .planted
        .iter()
        .map(|_| {
            let mut idx: Vec<usize> = (0..spec.n_pos).collect();
            idx.shuffle(&mut master);
            idx.into_iter().take(n_carry).collect()
        })
        .collect();

    let all: Vec<(String, bool, usize)> = pos_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), true, i))
        .chain(neg_ids.iter().enumerate().map(|(i, id)| (id.clone(), false, i)))
        .collect();

    let built: Vec<(ObjectSeries, ObjectTruth)> = all
        .par_iter()
        .enumerate()
        .map(|(stream, (id, positive, i))| {
            let mut rng = object_rng(spec.seed, 1 + stream as u64);
            let mut instances = Vec::new();
            let mut planted = Vec::new();
            if *positive {
                for (p, pat) in spec.planted.iter().enumerate() {
                    if carriers[p].contains(i) {
                        instances.push(Instance {
                            labels: pat.nodes.clone(),
                            layout: layouts[p].clone(),
                        });
                        planted.push(pat.name.clone());
                    }
                }
            }
            let mut nuisance = Vec::new();
            for (k, pair) in pairs.iter().enumerate() {
                if rng.gen_bool(spec.nuisance.presence) {
                    nuisance.push(k);
                    for _ in 0..spec.nuisance.repeats {
                        instances.push(Instance {
                            labels: pair.labels.to_vec(),
                            layout: pair_layouts[k].clone(),
                        });
                    }
                }
            }
            let series = build_object(spec, kb, id.clone(), instances, &mut rng);
            (
                series,
                ObjectTruth {
                    object_id: id.clone(),
                    positive: *positive,
                    planted,
                    nuisance,
                },
            )
        })
        .collect();

    let (objects, object_truth): (Vec<ObjectSeries>, Vec<ObjectTruth>) = built.into_iter().unzip();
    let planted = spec
        .planted
        .iter()
        .zip(layouts)
        .zip(&carriers)
        .map(|((p, layout), c)| PlantedTruth {
            pattern: p.clone(),
            layout,
            carriers: c.iter().map(|&i| pos_ids[i].clone()).collect(),
        })
        .collect();
    Ok(SynthCohort {
        objects,
        truth: GroundTruth {
            seed: spec.seed,
            spec: spec.clone(),
            planted,
            nuisance: pairs,
            objects: object_truth,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrip {
    /// Planted (pattern, carrier) instances.
    pub expected: usize,
    /// Of those, instances matched in the carrier's graph.
    pub recovered: usize,
    /// Largest number of negatives matching any one planted pattern.
    pub max_leak: usize,
}

/// Graphs of every object through the production abstraction and graph
/// construction.
pub fn cohort_graphs(cohort: &SynthCohort, kb: &KnowledgeBase) -> Result<Vec<Qig>> {
    let qopt = QigOptions {
        max_gap: cohort.truth.spec.max_gap,
        ..QigOptions::default()
    };
    cohort
        .objects
        .par_iter()
        .map(|o| {
            let templates = abstract_object(o, kb, &AbstractionOptions::default())?;
            Ok(build_qig_with(o.object_id.clone(), &templates, &qopt))
        })
        .collect()
}

pub fn verify(cohort: &SynthCohort, kb: &KnowledgeBase) -> Result<RoundTrip> {
    let graphs = cohort_graphs(cohort, kb)?;
    let by_id: BTreeMap<&str, &Qig> = graphs.iter().map(|g| (g.object_id(), g)).collect();
    let mut report = RoundTrip {
        expected: 0,
        recovered: 0,
        max_leak: 0,
    };
    for p in &cohort.truth.planted {
        let pg = p.pattern.graph();
        for c in &p.carriers {
            report.expected += 1;
            if by_id[c.as_str()].embeds(&pg, MatchTolerance::default()) {
                report.recovered += 1;
            }
        }
        let leaks = cohort
            .truth
            .objects
            .iter()
            .filter(|o| !o.positive && by_id[o.object_id.as_str()].embeds(&pg, MatchTolerance::default()))
            .count();
        report.max_leak = report.max_leak.max(leaks);
    }
    Ok(report)
}

impl SynthCohort {
    pub fn is_positive(&self, object_id: &str) -> Option<bool> {
        self.truth.objects.iter().find(|o| o.object_id == object_id).map(|o| o.positive)
    }

    /// Rows `object_id,variable,timestamp,value`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        crate::ingest::write_samples(w, &self.objects)
    }

    pub fn labels(&self) -> BTreeMap<String, bool> {
        self.truth.objects.iter().map(|o| (o.object_id.clone(), o.positive)).collect()
    }

    /// Rows `object_id,label` with 1 for positives.
    pub fn write_labels(&self, w: impl Write) -> Result<()> {
        crate::ingest::write_labels(w, &self.labels())
    }
}
