//! Edge, subgraph and graph similarity between QIGs.
//!
//! Two edges correspond when they join the same pair of labels; the relation
//! of one is read in the direction of the other before comparing.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::TemplateLabel;
use crate::allen::neighborhood_distance;
use crate::error::{Error, Result};
use crate::lexicon::{MultiHotVector, SubgraphLexicon};
use crate::qig::{Qig, QigEdge};

/// Options for subgraph similarity normalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    /// Normalize by the larger of the two induced edge counts and take the
    /// better of the two matching directions, making Θ symmetric.
    pub symmetric: bool,
}

#[inline]
fn sim_value(distance: u32, w1: u32, w2: u32) -> f64 {
    1.0 / (distance as f64 + w1.abs_diff(w2) as f64 + 1.0)
}

/// 1 / (d + |Δw| + 1) for corresponding edges, 0 otherwise.
pub fn edge_similarity(e1: &QigEdge, e2: &QigEdge) -> f64 {
    if !e1.same_endpoints(e2) {
        return 0.0;
    }
    let d = neighborhood_distance(e1.relation, e2.relation_from(&e1.src));
    sim_value(d, e1.weight, e2.weight)
}

/// Sum over `from` edges of their best match among `to` edges.
fn best_match_sum(from: &[&QigEdge], to: &[&QigEdge]) -> f64 {
    from.iter()
        .map(|e| to.iter().map(|f| edge_similarity(e, f)).fold(0.0, f64::max))
        .sum()
}

/// Θ for one label set, evaluated directly on the induced subgraphs.
pub fn subgraph_similarity(g1: &Qig, g2: &Qig, labels: &[TemplateLabel], options: SimilarityOptions) -> Result<f64> {
    if !g1.contains(labels) || !g2.contains(labels) {
        return Err(Error::NotContained);
    }
    if labels.len() == 1 {
        return Ok(1.0);
    }
    let h1 = g1.induced_subgraph(labels)?;
    let h2 = g2.induced_subgraph(labels)?;
    let r1: Vec<&QigEdge> = h1.edges().iter().collect();
    let r2: Vec<&QigEdge> = h2.edges().iter().collect();
    let a12 = best_match_sum(&r1, &r2);
    if options.symmetric {
        let a21 = best_match_sum(&r2, &r1);
        Ok(a12.max(a21) / r1.len().max(r2.len()) as f64)
    } else {
        Ok(a12 / r1.len() as f64)
    }
}

/// S = Σ Θₖ / n over the lexicon, evaluated directly.
pub fn graph_similarity(g1: &Qig, g2: &Qig, lex: &SubgraphLexicon, options: SimilarityOptions) -> Result<f64> {
    if lex.is_empty() {
        return Ok(0.0);
    }
    let b1 = lex.encode(g1)?;
    let b2 = lex.encode(g2)?;
    let mut total = 0.0;
    for k in b1.intersection(&b2) {
        total += subgraph_similarity(g1, g2, &lex.entry(k as usize).to_labels(), options)?;
    }
    Ok(total / lex.len() as f64)
}

/// A graph prepared for repeated similarity evaluation.
#[derive(Debug, Clone)]
pub struct EncodedGraph {
    /// Universe id of each node, ascending with node index.
    ids: Vec<u32>,
    bits: MultiHotVector,
}

impl EncodedGraph {
    pub fn bits(&self) -> &MultiHotVector {
        &self.bits
    }

    pub fn node_ids(&self) -> &[u32] {
        &self.ids
    }
}

/// Per-thread scratch for the pair evaluator. Tables are indexed by global
/// label-pair id.
struct Scratch {
    num12: Vec<f64>,
    num21: Vec<f64>,
    cnt1: Vec<u32>,
    cnt2: Vec<u32>,
    touched: Vec<u32>,
}

impl Scratch {
    fn new(universe: usize) -> Self {
        let n = universe * universe;
        Self {
            num12: vec![0.0; n],
            num21: vec![0.0; n],
            cnt1: vec![0; n],
            cnt2: vec![0; n],
            touched: Vec::new(),
        }
    }

    fn reset(&mut self) {
        for &p in &self.touched {
            let p = p as usize;
            self.num12[p] = 0.0;
            self.num21[p] = 0.0;
            self.cnt1[p] = 0;
            self.cnt2[p] = 0;
        }
        self.touched.clear();
    }
}

type Oriented = (crate::allen::AllenRelation, u32);

fn oriented(g: &Qig, edges: &[u32], lower: &TemplateLabel) -> Vec<Oriented> {
    edges
        .iter()
        .map(|&k| &g.edges()[k as usize])
        .map(|e| (e.relation_from(lower), e.weight))
        .collect()
}

fn best(from: &[Oriented], to: &[Oriented]) -> f64 {
    from.iter()
        .map(|&(r, w)| {
            to.iter()
                .map(|&(q, v)| sim_value(neighborhood_distance(r, q), w, v))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Largest pattern handled by the subset-mask path of
/// [`SimilarityEngine::against_population`].
const MASK_NODES: usize = 12;

/// Evaluates graph similarity over a fixed lexicon without materialising
/// induced subgraphs. Agrees with [`graph_similarity`].
pub struct SimilarityEngine<'a> {
    lex: &'a SubgraphLexicon,
    options: SimilarityOptions,
    /// Label pairs of entry k: `pairs[offsets[k]..offsets[k + 1]]`, as
    /// `lower * universe + higher`.
    offsets: Vec<u32>,
    pairs: Vec<u32>,
}

impl<'a> SimilarityEngine<'a> {
    pub fn new(lex: &'a SubgraphLexicon, options: SimilarityOptions) -> Self {
        let u = lex.universe().len() as u32;
        let mut offsets = Vec::with_capacity(lex.len() + 1);
        let mut pairs = Vec::new();
        offsets.push(0);
        for e in lex.entries() {
            let ids = e.ids();
            for x in 0..ids.len() {
                for y in (x + 1)..ids.len() {
                    let (a, b) = (ids[x].min(ids[y]), ids[x].max(ids[y]));
                    pairs.push(a * u + b);
                }
            }
            offsets.push(pairs.len() as u32);
        }
        Self {
            lex,
            options,
            offsets,
            pairs,
        }
    }

    pub fn lexicon(&self) -> &SubgraphLexicon {
        self.lex
    }

    pub fn encode(&self, g: &Qig) -> Result<EncodedGraph> {
        Ok(EncodedGraph {
            ids: self.lex.node_ids(g)?,
            bits: self.lex.encode(g)?,
        })
    }

    pub fn encode_all(&self, graphs: &[Qig]) -> Result<Vec<EncodedGraph>> {
        graphs.par_iter().map(|g| self.encode(g)).collect()
    }

    /// (S(g1, g2), S(g2, g1)).
    pub fn pair(&self, g1: &Qig, e1: &EncodedGraph, g2: &Qig, e2: &EncodedGraph) -> (f64, f64) {
        let mut scratch = Scratch::new(self.lex.universe().len());
        self.pair_with(g1, e1, g2, e2, &mut scratch)
    }

    fn theta(&self, n12: f64, n21: f64, c1: u32, c2: u32) -> (f64, f64) {
        if self.options.symmetric {
            let th = n12.max(n21) / c1.max(c2) as f64;
            (th, th)
        } else {
            (n12 / c1 as f64, n21 / c2 as f64)
        }
    }

    fn pair_with(&self, g1: &Qig, e1: &EncodedGraph, g2: &Qig, e2: &EncodedGraph, s: &mut Scratch) -> (f64, f64) {
        let n = self.lex.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let u = self.lex.universe().len() as u32;
        // Shared labels: (node index in g1, node index in g2), ascending id.
        let mut shared: Vec<(usize, usize)> = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < e1.ids.len() && j < e2.ids.len() {
            match e1.ids[i].cmp(&e2.ids[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared.push((i, j));
                    i += 1;
                    j += 1;
                }
            }
        }
        for a in 0..shared.len() {
            for b in (a + 1)..shared.len() {
                let (a1, a2) = shared[a];
                let (b1, b2) = shared[b];
                let r1 = g1.edge_indices_between(a1, b1);
                let r2 = g2.edge_indices_between(a2, b2);
                if r1.is_empty() && r2.is_empty() {
                    continue;
                }
                let la = &g1.nodes()[a1].label;
                let o1 = oriented(g1, r1, la);
                let o2 = oriented(g2, r2, la);
                let pid = (e1.ids[a1] * u + e1.ids[b1]) as usize;
                s.num12[pid] = best(&o1, &o2);
                s.num21[pid] = best(&o2, &o1);
                s.cnt1[pid] = o1.len() as u32;
                s.cnt2[pid] = o2.len() as u32;
                s.touched.push(pid as u32);
            }
        }

        let (mut t12, mut t21) = (0.0, 0.0);
        for k in shared_bits(&e1.bits, &e2.bits) {
            let (lo, hi) = (self.offsets[k as usize] as usize, self.offsets[k as usize + 1] as usize);
            if lo == hi {
                t12 += 1.0;
                t21 += 1.0;
                continue;
            }
            let (mut n12, mut n21, mut c1, mut c2) = (0.0, 0.0, 0u32, 0u32);
            for &pid in &self.pairs[lo..hi] {
                let pid = pid as usize;
                n12 += s.num12[pid];
                n21 += s.num21[pid];
                c1 += s.cnt1[pid];
                c2 += s.cnt2[pid];
            }
            let (a, b) = self.theta(n12, n21, c1, c2);
            t12 += a;
            t21 += b;
        }
        s.reset();
        (t12 / n as f64, t21 / n as f64)
    }

    /// Full matrix with `S[i][j] = S(g_i, g_j)`.
    pub fn matrix(&self, graphs: &[Qig], encoded: &[EncodedGraph]) -> Vec<Vec<f64>> {
        let n = graphs.len();
        let rows: Vec<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map_init(
                || Scratch::new(self.lex.universe().len()),
                |s, i| {
                    (i..n)
                        .map(|j| self.pair_with(&graphs[i], &encoded[i], &graphs[j], &encoded[j], s))
                        .collect()
                },
            )
            .collect();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, (a, b)) in row.into_iter().enumerate() {
                let j = i + off;
                out[i][j] = a;
                out[j][i] = b;
            }
        }
        out
    }

    /// S(pattern, g) for every graph in a population.
    ///
    /// Small patterns are scored from their own connected subsets: an entry
    /// of the pattern is shared with g exactly when all its labels occur in g
    /// and induce a connected subgraph there.
    pub fn against_population(&self, pattern: &Qig, graphs: &[Qig], encoded: &[EncodedGraph]) -> Result<Vec<f64>> {
        let ep = self.encode(pattern)?;
        let p = ep.ids.len();
        if p > MASK_NODES {
            let mut s = Scratch::new(self.lex.universe().len());
            return Ok(graphs
                .iter()
                .zip(encoded)
                .map(|(g, e)| self.pair_with(pattern, &ep, g, e, &mut s).0)
                .collect());
        }
        let n = self.lex.len();
        if n == 0 {
            return Ok(vec![0.0; graphs.len()]);
        }
        let pair_index = |x: usize, y: usize| x * p + y;
        // Pattern entries in lexicon order: (node mask, pattern pairs).
        let entries: Vec<(u16, Vec<usize>)> = ep
            .bits
            .ones()
            .iter()
            .map(|&k| {
                let ids = self.lex.entry(k as usize).ids();
                let pos: Vec<usize> = ids.iter().map(|id| ep.ids.binary_search(id).expect("entry of pattern")).collect();
                let mask = pos.iter().fold(0u16, |m, &x| m | (1 << x));
                let mut pairs = Vec::new();
                for x in 0..pos.len() {
                    for y in (x + 1)..pos.len() {
                        pairs.push(pair_index(pos[x].min(pos[y]), pos[x].max(pos[y])));
                    }
                }
                (mask, pairs)
            })
            .collect();
        let pattern_edges: Vec<Vec<Oriented>> = (0..p * p)
            .map(|idx| {
                let (x, y) = (idx / p, idx % p);
                if x < y {
                    oriented(pattern, pattern.edge_indices_between(x, y), &pattern.nodes()[x].label)
                } else {
                    Vec::new()
                }
            })
            .collect();

        let mut num12 = vec![0.0; p * p];
        let mut num21 = vec![0.0; p * p];
        let mut cnt2 = vec![0u32; p * p];
        let mut adj = vec![0u16; p];
        Ok(graphs
            .iter()
            .zip(encoded)
            .map(|(g, e)| {
                let pos: Vec<Option<usize>> = ep.ids.iter().map(|id| e.ids.binary_search(id).ok()).collect();
                let present = pos
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| q.is_some())
                    .fold(0u16, |m, (x, _)| m | (1 << x));
                adj.iter_mut().for_each(|a| *a = 0);
                for x in 0..p {
                    for y in (x + 1)..p {
                        let idx = pair_index(x, y);
                        num12[idx] = 0.0;
                        num21[idx] = 0.0;
                        cnt2[idx] = 0;
                        let (Some(gx), Some(gy)) = (pos[x], pos[y]) else { continue };
                        let r2 = g.edge_indices_between(gx, gy);
                        if r2.is_empty() {
                            continue;
                        }
                        adj[x] |= 1 << y;
                        adj[y] |= 1 << x;
                        let o2 = oriented(g, r2, &pattern.nodes()[x].label);
                        let o1 = &pattern_edges[idx];
                        num12[idx] = best(o1, &o2);
                        num21[idx] = best(&o2, o1);
                        cnt2[idx] = o2.len() as u32;
                    }
                }
                let mut total = 0.0;
                for (mask, pairs) in &entries {
                    if mask & present != *mask || !connected(*mask, &adj) {
                        continue;
                    }
                    if pairs.is_empty() {
                        total += 1.0;
                        continue;
                    }
                    let (mut n12, mut n21, mut c1, mut c2) = (0.0, 0.0, 0u32, 0u32);
                    for &idx in pairs {
                        n12 += num12[idx];
                        n21 += num21[idx];
                        c1 += pattern_edges[idx].len() as u32;
                        c2 += cnt2[idx];
                    }
                    total += self.theta(n12, n21, c1, c2).0;
                }
                total / n as f64
            })
            .collect())
    }
}

/// Whether `mask` induces a connected subgraph under `adj`.
fn connected(mask: u16, adj: &[u16]) -> bool {
    let mut reach = mask & mask.wrapping_neg();
    loop {
        let mut next = reach;
        let mut bits = reach;
        while bits != 0 {
            let x = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            next |= adj[x] & mask;
        }
        if next == reach {
            return reach == mask;
        }
        reach = next;
    }
}

/// Positions set in both vectors; gallops when one side is much shorter.
fn shared_bits<'a>(a: &'a MultiHotVector, b: &'a MultiHotVector) -> Box<dyn Iterator<Item = u32> + 'a> {
    let (small, large) = if a.popcount() <= b.popcount() { (a, b) } else { (b, a) };
    if small.popcount() * 16 < large.popcount() {
        let l = large.ones();
        Box::new(small.ones().iter().copied().filter(move |k| l.binary_search(k).is_ok()))
    } else {
        Box::new(a.intersection(b))
    }
}

/// Writes a dense similarity matrix as CSV with object ids on both axes.
pub fn write_matrix_csv(mut w: impl Write, object_ids: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    let mut header = vec![String::from("object_id")];
    header.extend(object_ids.iter().cloned());
    out.write_record(&header)?;
    for (id, row) in object_ids.iter().zip(matrix) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<similarity matrix>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allen::AllenRelation::{self, *};
    use crate::lexicon::{observed_universe, LexiconOptions};
    use crate::qig::{QigNode};

    fn label(s: &str) -> TemplateLabel {
        s.parse().unwrap()
    }

    fn edge(s: &str, d: &str, r: AllenRelation, w: u32) -> QigEdge {
        QigEdge {
            src: label(s),
            dst: label(d),
            relation: r,
            weight: w,
        }
    }

    fn graph(id: &str, nodes: &[&str], edges: Vec<QigEdge>) -> Qig {
        let nodes = nodes
            .iter()
            .map(|l| QigNode {
                label: label(l),
                occurrences: vec![crate::allen::Interval::new(0.0, 1.0).unwrap()],
            })
            .collect();
        Qig::from_parts(id, nodes, edges).unwrap()
    }

    #[test]
    fn edge_similarity_cases() {
        let e = edge("A-Hi-Stab", "B-Hi-Stab", During, 2);
        assert_eq!(edge_similarity(&e, &e), 1.0);
        assert_eq!(edge_similarity(&e, &edge("A-Hi-Stab", "C-Hi-Stab", During, 2)), 0.0);
        let f = edge("A-Hi-Stab", "B-Hi-Stab", Starts, 3);
        assert!((edge_similarity(&e, &f) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(edge_similarity(&e, &f), edge_similarity(&f, &e));
    }

    #[test]
    fn reversed_edges_correspond() {
        let e = edge("A-Hi-Stab", "B-Hi-Stab", During, 1);
        let f = edge("B-Hi-Stab", "A-Hi-Stab", Starts, 1);
        // From A's side f reads started_by, three steps from during.
        assert!((edge_similarity(&e, &f) - 1.0 / (neighborhood_distance(During, Starts.invert()) as f64 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn during_versus_overlaps() {
        let g1 = graph("1", &["A-Hi-Stab", "B-Hi-Stab"], vec![edge("A-Hi-Stab", "B-Hi-Stab", During, 2)]);
        let g2 = graph("2", &["A-Hi-Stab", "B-Hi-Stab"], vec![edge("A-Hi-Stab", "B-Hi-Stab", Overlaps, 2)]);
        let labels = [label("A-Hi-Stab"), label("B-Hi-Stab")];
        let th = subgraph_similarity(&g1, &g2, &labels, SimilarityOptions::default()).unwrap();
        assert!((th - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(subgraph_similarity(&g1, &g1, &labels, SimilarityOptions::default()).unwrap(), 1.0);
        assert_eq!(subgraph_similarity(&g1, &g2, &labels[..1], SimilarityOptions::default()).unwrap(), 1.0);
    }

    #[test]
    fn not_contained_is_an_error() {
        let g1 = graph("1", &["A-Hi-Stab", "B-Hi-Stab"], vec![]);
        let labels = [label("A-Hi-Stab"), label("B-Hi-Stab")];
        assert!(matches!(
            subgraph_similarity(&g1, &g1, &labels, SimilarityOptions::default()),
            Err(Error::NotContained)
        ));
    }

    fn cohort() -> Vec<Qig> {
        vec![
            graph(
                "1",
                &["A-Hi-Stab", "B-Hi-Stab", "C-Low-Dec"],
                vec![
                    edge("A-Hi-Stab", "B-Hi-Stab", During, 2),
                    edge("A-Hi-Stab", "B-Hi-Stab", Precedes, 1),
                    edge("B-Hi-Stab", "C-Low-Dec", Meets, 1),
                ],
            ),
            graph(
                "2",
                &["A-Hi-Stab", "B-Hi-Stab", "C-Low-Dec", "D-Hi-Inc"],
                vec![
                    edge("B-Hi-Stab", "A-Hi-Stab", Overlaps, 3),
                    edge("C-Low-Dec", "B-Hi-Stab", Meets, 1),
                    edge("C-Low-Dec", "D-Hi-Inc", Equals, 1),
                ],
            ),
            graph("3", &["D-Hi-Inc"], vec![]),
        ]
    }

    #[test]
    fn engine_agrees_with_direct_evaluation() {
        let gs = cohort();
        let lex = SubgraphLexicon::from_universe(observed_universe(&gs), LexiconOptions::default()).unwrap();
        for symmetric in [false, true] {
            let opts = SimilarityOptions { symmetric };
            let engine = SimilarityEngine::new(&lex, opts);
            let enc = engine.encode_all(&gs).unwrap();
            let m = engine.matrix(&gs, &enc);
            for i in 0..gs.len() {
                for j in 0..gs.len() {
                    let direct = graph_similarity(&gs[i], &gs[j], &lex, opts).unwrap();
                    assert!((m[i][j] - direct).abs() < 1e-12, "{i} {j} {} {direct}", m[i][j]);
                }
            }
            if symmetric {
                assert_eq!(m[0][1], m[1][0]);
            }
        }
    }

    #[test]
    fn population_scores_agree_with_direct_evaluation() {
        let gs = cohort();
        let lex = SubgraphLexicon::from_universe(observed_universe(&gs), LexiconOptions::default()).unwrap();
        for symmetric in [false, true] {
            let opts = SimilarityOptions { symmetric };
            let engine = SimilarityEngine::new(&lex, opts);
            let enc = engine.encode_all(&gs).unwrap();
            for p in &gs {
                let fast = engine.against_population(p, &gs, &enc).unwrap();
                for (g, f) in gs.iter().zip(fast) {
                    let direct = graph_similarity(p, g, &lex, opts).unwrap();
                    assert!((f - direct).abs() < 1e-12, "{f} {direct}");
                }
            }
        }
    }

    #[test]
    fn self_similarity_is_popcount_fraction() {
        let gs = cohort();
        let lex = SubgraphLexicon::from_universe(observed_universe(&gs), LexiconOptions::default()).unwrap();
        for g in &gs {
            let s = graph_similarity(g, g, &lex, SimilarityOptions::default()).unwrap();
            assert_eq!(s, lex.encode(g).unwrap().popcount() as f64 / lex.len() as f64);
        }
    }

    #[test]
    fn matrix_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &["a".into(), "b".into()], &[vec![1.0, 0.5], vec![0.25, 1.0]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "object_id,a,b\na,1,0.5\nb,0.25,1\n");
    }
}
