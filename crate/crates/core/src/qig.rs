//! Qualitative Interaction Graphs: per-object directed, edge-labelled,
//! weighted multigraphs over pattern templates.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::abstraction::{PatternTemplate, TemplateLabel};
use crate::allen::{classify_relation_with_tolerance, neighborhood_distance, AllenRelation, Interval};
use crate::error::{Error, Result};

/// Default limit on the gap of a `precedes` relation, in seconds.
pub const DEFAULT_MAX_GAP: f64 = 3600.0;

/// A directed edge carrying one of the seven base relations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QigEdge {
    pub src: TemplateLabel,
    pub dst: TemplateLabel,
    pub relation: AllenRelation,
    pub weight: u32,
}

impl QigEdge {
    /// Relation of this edge read from `from` towards the other endpoint.
    pub fn relation_from(&self, from: &TemplateLabel) -> AllenRelation {
        if &self.src == from {
            self.relation
        } else {
            self.relation.invert()
        }
    }

    /// Same unordered endpoint pair.
    pub fn same_endpoints(&self, other: &QigEdge) -> bool {
        (self.src == other.src && self.dst == other.dst) || (self.src == other.dst && self.dst == other.src)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QigNode {
    pub label: TemplateLabel,
    pub occurrences: Vec<Interval>,
}

/// Options for graph construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QigOptions {
    /// `precedes` pairs further apart than this are dropped.
    pub max_gap: f64,
    /// Endpoint tolerance used when classifying occurrence pairs.
    pub tolerance: f64,
}

impl Default for QigOptions {
    fn default() -> Self {
        Self {
            max_gap: DEFAULT_MAX_GAP,
            tolerance: 0.0,
        }
    }
}

/// Thresholds for pattern matching against a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchTolerance {
    /// Largest neighbourhood distance between a pattern edge and a graph edge.
    pub d_max: u32,
    /// Largest weight difference; `None` ignores weights.
    pub w_slack: Option<u32>,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        Self {
            d_max: 0,
            w_slack: None,
        }
    }
}

/// A Qualitative Interaction Graph of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QigDoc", into = "QigDoc")]
pub struct Qig {
    object_id: String,
    nodes: Vec<QigNode>,
    edges: Vec<QigEdge>,
    #[serde(skip)]
    index: Index,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Index {
    by_label: HashMap<TemplateLabel, usize>,
    /// (node index, node index) of each edge, in edge order.
    endpoints: Vec<(u32, u32)>,
    /// Unordered node pair (lo, hi) to indices of edges joining it.
    pairs: HashMap<(u32, u32), Vec<u32>>,
    /// Node index to neighbouring node indices.
    adjacency: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct QigDoc {
    object_id: String,
    nodes: Vec<QigNode>,
    edges: Vec<QigEdge>,
}

impl TryFrom<QigDoc> for Qig {
    type Error = Error;

    fn try_from(doc: QigDoc) -> Result<Self> {
        Qig::from_parts(doc.object_id, doc.nodes, doc.edges)
    }
}

impl From<Qig> for QigDoc {
    fn from(g: Qig) -> Self {
        QigDoc {
            object_id: g.object_id,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

#[inline]
fn pair_key(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Qig {
    /// Builds a graph from explicit nodes and edges, checking every structural
    /// invariant: base relations only, positive weights, cross-variable edges,
    /// unique (src, dst, relation) triples, known endpoints.
    pub fn from_parts(object_id: impl Into<String>, nodes: Vec<QigNode>, edges: Vec<QigEdge>) -> Result<Self> {
        let mut merged: BTreeMap<TemplateLabel, Vec<Interval>> = BTreeMap::new();
        for n in nodes {
            merged.entry(n.label).or_default().extend(n.occurrences);
        }
        let nodes: Vec<QigNode> = merged
            .into_iter()
            .map(|(label, mut occurrences)| {
                occurrences.sort_by(|a, b| a.start().total_cmp(&b.start()));
                QigNode { label, occurrences }
            })
            .collect();

        let mut edges = edges;
        edges.sort();
        for w in edges.windows(2) {
            if w[0].src == w[1].src && w[0].dst == w[1].dst && w[0].relation == w[1].relation {
                return Err(Error::InvalidSpec(format!(
                    "duplicate edge {} -{}-> {}",
                    w[0].src, w[0].relation, w[0].dst
                )));
            }
        }
        for e in &edges {
            if !e.relation.is_base() {
                return Err(Error::InvalidSpec(format!("edge {} -> {} carries inverse relation {}", e.src, e.dst, e.relation)));
            }
            if e.weight == 0 {
                return Err(Error::InvalidSpec(format!("edge {} -> {} has zero weight", e.src, e.dst)));
            }
            if e.src.variable() == e.dst.variable() {
                return Err(Error::InvalidSpec(format!("edge {} -> {} joins templates of one variable", e.src, e.dst)));
            }
        }
        let mut g = Qig {
            object_id: object_id.into(),
            nodes,
            edges,
            index: Index::default(),
        };
        g.reindex()?;
        Ok(g)
    }

    fn reindex(&mut self) -> Result<()> {
        let by_label: HashMap<TemplateLabel, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.label.clone(), i)).collect();
        let mut endpoints = Vec::with_capacity(self.edges.len());
        let mut pairs: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            let s = *by_label.get(&e.src).ok_or_else(|| Error::LabelNotPresent(e.src.to_string()))? as u32;
            let d = *by_label.get(&e.dst).ok_or_else(|| Error::LabelNotPresent(e.dst.to_string()))? as u32;
            endpoints.push((s, d));
            let bucket = pairs.entry(pair_key(s, d)).or_default();
            if bucket.is_empty() {
                adjacency[s as usize].push(d);
                adjacency[d as usize].push(s);
            }
            bucket.push(k as u32);
        }
        self.index = Index {
            by_label,
            endpoints,
            pairs,
            adjacency,
        };
        Ok(())
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn nodes(&self) -> &[QigNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[QigEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &TemplateLabel> {
        self.nodes.iter().map(|n| &n.label)
    }

    pub fn node_index(&self, label: &TemplateLabel) -> Option<usize> {
        self.index.by_label.get(label).copied()
    }

    pub fn has_node(&self, label: &TemplateLabel) -> bool {
        self.index.by_label.contains_key(label)
    }

    /// Node indices of an edge, in edge order.
    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        let (s, d) = self.index.endpoints[edge];
        (s as usize, d as usize)
    }

    /// Edges joining two nodes in either direction.
    pub fn edges_between(&self, a: usize, b: usize) -> impl Iterator<Item = &QigEdge> + '_ {
        self.index
            .pairs
            .get(&pair_key(a as u32, b as u32))
            .into_iter()
            .flatten()
            .map(move |&k| &self.edges[k as usize])
    }

    pub fn edge_indices_between(&self, a: usize, b: usize) -> &[u32] {
        self.index
            .pairs
            .get(&pair_key(a as u32, b as u32))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Mean edge weight, or `None` without edges.
    pub fn mean_edge_weight(&self) -> Option<f64> {
        if self.edges.is_empty() {
            return None;
        }
        Some(self.edges.iter().map(|e| e.weight as f64).sum::<f64>() / self.edges.len() as f64)
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight as u64).sum()
    }

    /// Whether the nodes at `indices` induce a connected subgraph, ignoring
    /// edge direction.
    pub fn induces_connected(&self, indices: &[usize]) -> bool {
        match indices.len() {
            0 => false,
            1 => true,
            2 => self.index.pairs.contains_key(&pair_key(indices[0] as u32, indices[1] as u32)),
            n => {
                let mut seen = vec![false; n];
                seen[0] = true;
                let mut stack = vec![0usize];
                let mut reached = 1;
                while let Some(i) = stack.pop() {
                    for j in 0..n {
                        if !seen[j] && self.index.pairs.contains_key(&pair_key(indices[i] as u32, indices[j] as u32)) {
                            seen[j] = true;
                            reached += 1;
                            stack.push(j);
                        }
                    }
                }
                reached == n
            }
        }
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[0] = true;
        let mut stack = vec![0usize];
        let mut reached = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.index.adjacency[i] {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    reached += 1;
                    stack.push(j as usize);
                }
            }
        }
        reached == self.nodes.len()
    }

    /// True iff every label is a node and the induced subgraph is connected.
    pub fn contains(&self, labels: &[TemplateLabel]) -> bool {
        let mut idx = Vec::with_capacity(labels.len());
        for l in labels {
            match self.node_index(l) {
                Some(i) => idx.push(i),
                None => return false,
            }
        }
        self.induces_connected(&idx)
    }

    /// Subgraph with exactly `labels` as nodes and every edge among them.
    pub fn induced_subgraph(&self, labels: &[TemplateLabel]) -> Result<Qig> {
        let mut keep = vec![false; self.nodes.len()];
        for l in labels {
            let i = self.node_index(l).ok_or_else(|| Error::LabelNotPresent(l.to_string()))?;
            keep[i] = true;
        }
        let nodes = self
            .nodes
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(n, _)| n.clone())
            .collect();
        let edges = self
            .edges
            .iter()
            .zip(&self.index.endpoints)
            .filter(|(_, (s, d))| keep[*s as usize] && keep[*d as usize])
            .map(|(e, _)| e.clone())
            .collect();
        let mut g = Qig {
            object_id: self.object_id.clone(),
            nodes,
            edges,
            index: Index::default(),
        };
        g.reindex()?;
        Ok(g)
    }

    /// Whether `pattern` occurs in this graph: its labels are all present and
    /// every pattern edge has a counterpart on the same endpoints whose
    /// relation lies within `tol.d_max` and whose weight lies within
    /// `tol.w_slack`.
    pub fn embeds(&self, pattern: &Qig, tol: MatchTolerance) -> bool {
        if !pattern.labels().all(|l| self.has_node(l)) {
            return false;
        }
        pattern.edges.iter().all(|pe| {
            let (Some(a), Some(b)) = (self.node_index(&pe.src), self.node_index(&pe.dst)) else {
                return false;
            };
            self.edges_between(a, b).any(|ge| {
                let d = neighborhood_distance(pe.relation, ge.relation_from(&pe.src));
                let w_ok = tol.w_slack.is_none_or(|s| pe.weight.abs_diff(ge.weight) <= s);
                d <= tol.d_max && w_ok
            })
        })
    }

    pub fn with_object_id(mut self, object_id: impl Into<String>) -> Self {
        self.object_id = object_id.into();
        self
    }
}

/// Builds the QIG of one object from all of its pattern templates.
///
/// Every occurrence pair of two templates of different variables contributes
/// to exactly one directed edge: inverse relations are stored on the reversed
/// pair, and `equals` is stored from the lower label to the higher one.
/// `precedes` pairs whose gap exceeds `max_gap` are dropped.
pub fn build_qig(object_id: impl Into<String>, templates: &[PatternTemplate], max_gap: f64) -> Qig {
    build_qig_with(
        object_id,
        templates,
        &QigOptions {
            max_gap,
            ..QigOptions::default()
        },
    )
}

pub fn build_qig_with(object_id: impl Into<String>, templates: &[PatternTemplate], options: &QigOptions) -> Qig {
    let mut merged: BTreeMap<TemplateLabel, Vec<Interval>> = BTreeMap::new();
    for t in templates {
        if !t.occurrences.is_empty() {
            merged.entry(t.label.clone()).or_default().extend(t.occurrences.iter().copied());
        }
    }
    let nodes: Vec<QigNode> = merged
        .into_iter()
        .map(|(label, mut occurrences)| {
            occurrences.sort_by(|a, b| a.start().total_cmp(&b.start()));
            QigNode { label, occurrences }
        })
        .collect();

    let mut counts: BTreeMap<(usize, usize, AllenRelation), u32> = BTreeMap::new();
    for a in 0..nodes.len() {
        for b in (a + 1)..nodes.len() {
            if nodes[a].label.variable() == nodes[b].label.variable() {
                continue;
            }
            for i in &nodes[a].occurrences {
                for j in &nodes[b].occurrences {
                    let r = classify_relation_with_tolerance(i, j, options.tolerance);
                    let gap = match r {
                        AllenRelation::Precedes => j.start() - i.end(),
                        AllenRelation::PrecededBy => i.start() - j.end(),
                        _ => 0.0,
                    };
                    if gap > options.max_gap {
                        continue;
                    }
                    let key = if r.is_base() { (a, b, r) } else { (b, a, r.invert()) };
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
        }
    }

    let edges = counts
        .into_iter()
        .map(|((s, d, relation), weight)| QigEdge {
            src: nodes[s].label.clone(),
            dst: nodes[d].label.clone(),
            relation,
            weight,
        })
        .collect();
    Qig::from_parts(object_id, nodes, edges).expect("constructed graph satisfies invariants")
}

/// Writes one JSON document per line.
pub fn write_jsonl<'a>(mut w: impl Write, graphs: impl IntoIterator<Item = &'a Qig>) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n").map_err(|e| Error::io("<qig output>", e))?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead, source: &str) -> Result<Vec<Qig>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Qig = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{GradientLabel, StateLabel};
    use AllenRelation::*;

    fn label(s: &str) -> TemplateLabel {
        s.parse().unwrap()
    }

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    fn template(l: &str, occ: &[(f64, f64)]) -> PatternTemplate {
        PatternTemplate {
            label: label(l),
            occurrences: occ.iter().map(|&(a, b)| iv(a, b)).collect(),
        }
    }

    fn fig3() -> Qig {
        build_qig(
            "p1",
            &[
                template("Temp-Low-Dec", &[(10.0, 20.0), (30.0, 50.0)]),
                template("Res-Rate-Hi-Inc", &[(0.0, 100.0)]),
            ],
            DEFAULT_MAX_GAP,
        )
    }

    #[test]
    fn two_occurrences_during_give_weight_two() {
        let g = fig3();
        assert_eq!(g.edge_count(), 1);
        let e = &g.edges()[0];
        assert_eq!(e.src, label("Temp-Low-Dec"));
        assert_eq!(e.dst, label("Res-Rate-Hi-Inc"));
        assert_eq!(e.relation, During);
        assert_eq!(e.weight, 2);
    }

    #[test]
    fn single_template_has_no_edges() {
        let g = build_qig("x", &[template("A-Hi-Inc", &[(0.0, 1.0)])], 10.0);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn precedes_gap_limit() {
        let t = [template("A-Hi-Stab", &[(0.0, 1.0)]), template("B-Hi-Stab", &[(5.0, 6.0)])];
        assert_eq!(build_qig("x", &t, 2.0).edge_count(), 0);
        let g = build_qig("x", &t, 10.0);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].relation, Precedes);
        assert_eq!(g.edges()[0].weight, 1);
    }

    #[test]
    fn inverse_relations_are_reversed() {
        // B = [0,10] contains A = [2,3], and B's label sorts first.
        let t = [template("B-Hi-Stab", &[(0.0, 10.0)]), template("C-Low-Dec", &[(2.0, 3.0)])];
        let g = build_qig("x", &t, 10.0);
        let e = &g.edges()[0];
        assert_eq!((e.src.as_str(), e.dst.as_str(), e.relation), ("C-Low-Dec", "B-Hi-Stab", During));
    }

    #[test]
    fn parallel_edges_for_distinct_relations() {
        let t = [
            template("A-Hi-Stab", &[(0.0, 2.0), (10.0, 12.0)]),
            template("B-Hi-Stab", &[(1.0, 3.0), (10.0, 12.0)]),
        ];
        let g = build_qig("x", &t, 100.0);
        let rels: Vec<_> = g.edges().iter().map(|e| e.relation).collect();
        // (0,2)-(1,3) overlaps, (0,2)-(10,12) precedes, (10,12)-(1,3) preceded_by, (10,12)-(10,12) equals
        assert_eq!(rels, vec![Precedes, Overlaps, Equals, Precedes]);
        assert_eq!(g.edges()[3].src, label("B-Hi-Stab"));
    }

    #[test]
    fn same_variable_templates_not_linked() {
        let t = [template("A-Hi-Stab", &[(0.0, 2.0)]), template("A-Low-Stab", &[(2.0, 4.0)])];
        assert_eq!(build_qig("x", &t, 100.0).edge_count(), 0);
    }

    #[test]
    fn containment_requires_connectivity() {
        let g = build_qig(
            "x",
            &[
                template("A-Hi-Stab", &[(0.0, 1.0)]),
                template("B-Hi-Stab", &[(100.0, 101.0)]),
                template("C-Hi-Stab", &[(0.5, 100.5)]),
            ],
            1.0,
        );
        assert!(g.contains(&[label("A-Hi-Stab")]));
        assert!(!g.contains(&[label("A-Hi-Stab"), label("B-Hi-Stab")]));
        assert!(g.contains(&[label("A-Hi-Stab"), label("B-Hi-Stab"), label("C-Hi-Stab")]));
        assert!(!g.contains(&[label("D-Hi-Stab")]));
    }

    #[test]
    fn induced_subgraph_cases() {
        let g = fig3();
        let all: Vec<_> = g.labels().cloned().collect();
        assert_eq!(g.induced_subgraph(&all).unwrap(), g);
        let one = g.induced_subgraph(&[label("Temp-Low-Dec")]).unwrap();
        assert_eq!((one.node_count(), one.edge_count()), (1, 0));
        let pair = g.induced_subgraph(&[label("Temp-Low-Dec"), label("Res-Rate-Hi-Inc")]).unwrap();
        assert_eq!(pair.edges()[0].weight, 2);
        assert!(matches!(g.induced_subgraph(&[label("X-Hi-Inc")]), Err(Error::LabelNotPresent(_))));
    }

    #[test]
    fn from_parts_rejects_broken_graphs() {
        let node = |l: &str| QigNode {
            label: label(l),
            occurrences: vec![iv(0.0, 1.0)],
        };
        let edge = |s: &str, d: &str, r, w| QigEdge {
            src: label(s),
            dst: label(d),
            relation: r,
            weight: w,
        };
        let nodes = || vec![node("A-Hi-Stab"), node("B-Hi-Stab"), node("A-Low-Stab")];
        assert!(Qig::from_parts("x", nodes(), vec![edge("A-Hi-Stab", "B-Hi-Stab", Contains, 1)]).is_err());
        assert!(Qig::from_parts("x", nodes(), vec![edge("A-Hi-Stab", "B-Hi-Stab", During, 0)]).is_err());
        assert!(Qig::from_parts("x", nodes(), vec![edge("A-Hi-Stab", "A-Low-Stab", During, 1)]).is_err());
        assert!(Qig::from_parts("x", nodes(), vec![edge("A-Hi-Stab", "Z-Hi-Stab", During, 1)]).is_err());
        assert!(Qig::from_parts(
            "x",
            nodes(),
            vec![edge("A-Hi-Stab", "B-Hi-Stab", During, 1), edge("A-Hi-Stab", "B-Hi-Stab", During, 2)]
        )
        .is_err());
        assert!(Qig::from_parts("x", nodes(), vec![edge("A-Hi-Stab", "B-Hi-Stab", During, 1)]).is_ok());
    }

    #[test]
    fn embeds_with_relation_threshold() {
        let g = fig3();
        let mk = |r| {
            Qig::from_parts(
                "p",
                g.nodes().to_vec(),
                vec![QigEdge {
                    src: label("Temp-Low-Dec"),
                    dst: label("Res-Rate-Hi-Inc"),
                    relation: r,
                    weight: 1,
                }],
            )
            .unwrap()
        };
        assert!(g.embeds(&mk(During), MatchTolerance::default()));
        assert!(!g.embeds(&mk(Starts), MatchTolerance::default()));
        assert!(g.embeds(&mk(Starts), MatchTolerance { d_max: 1, w_slack: None }));
        assert!(!g.embeds(&mk(During), MatchTolerance { d_max: 0, w_slack: Some(0) }));
        assert!(g.embeds(&mk(During), MatchTolerance { d_max: 0, w_slack: Some(1) }));
    }

    #[test]
    fn reversed_pattern_edge_matches_via_orientation() {
        let g = fig3();
        // Res-Rate contains Temp, expressed from the other side.
        let p = Qig::from_parts(
            "p",
            g.nodes().to_vec(),
            vec![QigEdge {
                src: label("Temp-Low-Dec"),
                dst: label("Res-Rate-Hi-Inc"),
                relation: During,
                weight: 2,
            }],
        )
        .unwrap();
        let e = &p.edges()[0];
        assert_eq!(e.relation_from(&label("Res-Rate-Hi-Inc")), Contains);
        assert!(g.embeds(&p, MatchTolerance::default()));
    }

    #[test]
    fn json_round_trip() {
        let g = fig3();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, [&g, &g]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"Temp-Low-Dec\""));
        assert!(text.contains("\"during\""));
        let back = read_jsonl(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, vec![g.clone(), g]);
        let _ = TemplateLabel::new("x", StateLabel::Low, GradientLabel::Stable);
    }
}
