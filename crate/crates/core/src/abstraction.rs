//! Knowledge-based temporal abstraction: raw samples to state intervals,
//! gradient intervals, state-gradient patterns and pattern templates.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allen::Interval;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Rule};

/// One time-stamped measurement as read from input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub object_id: String,
    pub variable: String,
    pub timestamp: f64,
    pub value: f64,
}

/// A (timestamp, value) point of a single variable's series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
}

impl Sample {
    pub fn new(t: f64, v: f64) -> Self {
        Self { t, v }
    }
}

/// All sorted series of one object, keyed by variable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectSeries {
    pub object_id: String,
    pub variables: BTreeMap<String, Vec<Sample>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateLabel {
    Low,
    Normal,
    High,
}

impl StateLabel {
    pub const ALL: [StateLabel; 3] = [StateLabel::Low, StateLabel::Normal, StateLabel::High];

    pub fn classify(value: f64, rule: &Rule) -> Self {
        if value < rule.normal_low {
            StateLabel::Low
        } else if value > rule.normal_high {
            StateLabel::High
        } else {
            StateLabel::Normal
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            StateLabel::Low => "Low",
            StateLabel::Normal => "Norm",
            StateLabel::High => "Hi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GradientLabel {
    Decreasing,
    Stable,
    Increasing,
}

impl GradientLabel {
    pub const ALL: [GradientLabel; 3] = [GradientLabel::Decreasing, GradientLabel::Stable, GradientLabel::Increasing];

    pub fn classify(delta: f64, rule: &Rule) -> Self {
        if delta > rule.gradient_delta {
            GradientLabel::Increasing
        } else if delta < -rule.gradient_delta {
            GradientLabel::Decreasing
        } else {
            GradientLabel::Stable
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            GradientLabel::Decreasing => "Dec",
            GradientLabel::Stable => "Stab",
            GradientLabel::Increasing => "Inc",
        }
    }
}

/// Node identity of a QIG: a variable's (state, gradient) descriptor.
///
/// Rendered as `Variable-State-Gradient`, e.g. `Heart Rate-Hi-Stab`. Ordering,
/// equality and hashing follow the rendered string.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TemplateLabel {
    variable: String,
    state: StateLabel,
    gradient: GradientLabel,
    text: String,
}

impl TemplateLabel {
    pub fn new(variable: impl Into<String>, state: StateLabel, gradient: GradientLabel) -> Self {
        let variable = variable.into();
        let text = format!("{variable}-{}-{}", state.abbrev(), gradient.abbrev());
        Self {
            variable,
            state,
            gradient,
            text,
        }
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }

    pub fn state(&self) -> StateLabel {
        self.state
    }

    pub fn gradient(&self) -> GradientLabel {
        self.gradient
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl PartialEq for TemplateLabel {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Eq for TemplateLabel {}

impl Hash for TemplateLabel {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.text.hash(state);
    }
}

impl PartialOrd for TemplateLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TemplateLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.text.cmp(&other.text)
    }
}

impl fmt::Debug for TemplateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.text)
    }
}

impl fmt::Display for TemplateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for TemplateLabel {
    type Err = Error;

    /// Parses from the right, so variable names may contain `-`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed template label `{s}`"));
        let (rest, gradient) = s.rsplit_once('-').ok_or_else(bad)?;
        let (variable, state) = rest.rsplit_once('-').ok_or_else(bad)?;
        let state = StateLabel::ALL
            .into_iter()
            .find(|x| x.abbrev() == state)
            .ok_or_else(bad)?;
        let gradient = GradientLabel::ALL
            .into_iter()
            .find(|x| x.abbrev() == gradient)
            .ok_or_else(bad)?;
        if variable.is_empty() {
            return Err(bad());
        }
        Ok(TemplateLabel::new(variable, state, gradient))
    }
}

impl TryFrom<String> for TemplateLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TemplateLabel> for String {
    fn from(l: TemplateLabel) -> Self {
        l.text
    }
}

/// A maximal interval over which one (state, gradient) pair holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativePattern {
    pub variable: String,
    pub state: StateLabel,
    pub gradient: GradientLabel,
    pub interval: Interval,
}

impl QualitativePattern {
    pub fn label(&self) -> TemplateLabel {
        TemplateLabel::new(self.variable.clone(), self.state, self.gradient)
    }
}

/// All occurrences of one (variable, state, gradient) descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTemplate {
    pub label: TemplateLabel,
    pub occurrences: Vec<Interval>,
}

/// Knobs for the abstraction stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AbstractionOptions {
    /// Split a series wherever two consecutive samples are further apart than
    /// this many seconds. `None` keeps runs across sampling gaps.
    pub max_sampling_gap: Option<f64>,
}

fn check_series(series: &[Sample], variable: &str) -> Result<()> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            variable: variable.to_owned(),
            len: series.len(),
        });
    }
    for w in series.windows(2) {
        if !(w[0].t < w[1].t) {
            return Err(Error::InvalidInterval {
                start: w[0].t,
                end: w[1].t,
            });
        }
    }
    Ok(())
}

/// Maximal Low/Normal/High runs. Boundaries between runs sit at the midpoint
/// of the two adjacent differing samples; the runs tile the series span.
pub fn state_abstract(series: &[Sample], rule: &Rule) -> Result<Vec<(StateLabel, Interval)>> {
    check_series(series, "<series>")?;
    let labels: Vec<StateLabel> = series.iter().map(|s| StateLabel::classify(s.v, rule)).collect();
    let mut out = Vec::new();
    let mut run_start = series[0].t;
    for i in 1..series.len() {
        if labels[i] != labels[i - 1] {
            let boundary = 0.5 * (series[i - 1].t + series[i].t);
            out.push((labels[i - 1], Interval::new(run_start, boundary)?));
            run_start = boundary;
        }
    }
    let last = series.len() - 1;
    out.push((labels[last], Interval::new(run_start, series[last].t)?));
    Ok(out)
}

/// Maximal runs of equally labelled sample gaps. A gap is Increasing when the
/// value rises by more than the rule's delta and Decreasing when it falls by
/// more than it.
pub fn gradient_abstract(series: &[Sample], rule: &Rule) -> Result<Vec<(GradientLabel, Interval)>> {
    check_series(series, "<series>")?;
    let gaps: Vec<GradientLabel> = series
        .windows(2)
        .map(|w| GradientLabel::classify(w[1].v - w[0].v, rule))
        .collect();
    let mut out = Vec::new();
    let mut run_start = 0usize;
    for g in 1..gaps.len() {
        if gaps[g] != gaps[g - 1] {
            out.push((gaps[g - 1], Interval::new(series[run_start].t, series[g].t)?));
            run_start = g;
        }
    }
    out.push((
        gaps[gaps.len() - 1],
        Interval::new(series[run_start].t, series[series.len() - 1].t)?,
    ));
    Ok(out)
}

/// Intersects a state tiling with a gradient tiling of the same span.
pub fn make_patterns(
    variable: &str,
    states: &[(StateLabel, Interval)],
    gradients: &[(GradientLabel, Interval)],
) -> Result<Vec<QualitativePattern>> {
    let (Some(s0), Some(s1), Some(g0), Some(g1)) = (states.first(), states.last(), gradients.first(), gradients.last())
    else {
        return Ok(Vec::new());
    };
    if s0.1.start() != g0.1.start() || s1.1.end() != g1.1.end() {
        return Err(Error::SpanMismatch {
            state_start: s0.1.start(),
            state_end: s1.1.end(),
            gradient_start: g0.1.start(),
            gradient_end: g1.1.end(),
        });
    }

    let mut out = Vec::with_capacity(states.len() + gradients.len());
    let (mut i, mut j) = (0, 0);
    while i < states.len() && j < gradients.len() {
        let (state, si) = states[i];
        let (gradient, gi) = gradients[j];
        if let Some(interval) = si.intersect(&gi) {
            out.push(QualitativePattern {
                variable: variable.to_owned(),
                state,
                gradient,
                interval,
            });
        }
        if si.end() < gi.end() {
            i += 1;
        } else if gi.end() < si.end() {
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    Ok(out)
}

/// Groups one variable's patterns by (state, gradient).
pub fn make_templates(patterns: &[QualitativePattern]) -> Vec<PatternTemplate> {
    let mut groups: BTreeMap<TemplateLabel, Vec<Interval>> = BTreeMap::new();
    for p in patterns {
        groups.entry(p.label()).or_default().push(p.interval);
    }
    groups
        .into_iter()
        .map(|(label, mut occurrences)| {
            occurrences.sort_by(|a, b| a.start().total_cmp(&b.start()));
            PatternTemplate { label, occurrences }
        })
        .collect()
}

/// Patterns of one variable's series, honouring the sampling-gap split knob.
/// With fewer than two samples in a segment that segment yields nothing.
pub fn abstract_patterns(
    variable: &str,
    series: &[Sample],
    rule: &Rule,
    options: &AbstractionOptions,
) -> Result<Vec<QualitativePattern>> {
    let mut segments: Vec<&[Sample]> = Vec::new();
    match options.max_sampling_gap {
        Some(max_gap) => {
            let mut start = 0;
            for i in 1..series.len() {
                if series[i].t - series[i - 1].t > max_gap {
                    segments.push(&series[start..i]);
                    start = i;
                }
            }
            segments.push(&series[start..]);
        }
        None => segments.push(series),
    }

    let mut out = Vec::new();
    for seg in segments.into_iter().filter(|s| s.len() >= 2) {
        let states = state_abstract(seg, rule).map_err(|e| relabel(e, variable))?;
        let gradients = gradient_abstract(seg, rule).map_err(|e| relabel(e, variable))?;
        out.extend(make_patterns(variable, &states, &gradients)?);
    }
    Ok(out)
}

fn relabel(e: Error, variable: &str) -> Error {
    match e {
        Error::SeriesTooShort { len, .. } => Error::SeriesTooShort {
            variable: variable.to_owned(),
            len,
        },
        other => other,
    }
}

/// Templates of every variable of one object. Variables with fewer than two
/// samples contribute nothing.
pub fn abstract_object(object: &ObjectSeries, kb: &KnowledgeBase, options: &AbstractionOptions) -> Result<Vec<PatternTemplate>> {
    let mut templates = Vec::new();
    for (variable, series) in &object.variables {
        let rule = kb.get(variable).ok_or_else(|| Error::UnknownVariable {
            path: object.object_id.clone(),
            line: 0,
            variable: variable.clone(),
        })?;
        if series.len() < 2 {
            log::debug!("{}: `{variable}` has {} sample(s), skipped", object.object_id, series.len());
            continue;
        }
        let patterns = abstract_patterns(variable, series, rule, options)?;
        templates.extend(make_templates(&patterns));
    }
    templates.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(templates)
}
