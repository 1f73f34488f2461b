//! Discovery of rare interaction subgraphs: an exponential prior over
//! candidate interpretations, fitted by EM on spectrally pre-clustered graphs.
//!
//! Each cluster carries a finite candidate set with the Gibbs prior
//! `P(I) ∝ exp(−λ1·W + λ2·N + λ3·F)`. A graph's latent interpretation is one
//! of the candidates it embeds, so the E-step responsibilities are the prior
//! renormalized over those candidates.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::TemplateLabel;
use crate::cluster::{cluster_population, ClusterOptions, Clustering};
use crate::error::{Error, Result};
use crate::lexicon::SubgraphLexicon;
use crate::qig::Qig;
use crate::similarity::{EncodedGraph, SimilarityEngine, SimilarityOptions};

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Mean edge weight.
    #[serde(rename = "W")]
    pub w: f64,
    /// Node count.
    #[serde(rename = "N")]
    pub n: usize,
    /// Favoritism: summed log similarity to the population.
    #[serde(rename = "F")]
    pub f: f64,
}

impl Scores {
    fn features(&self) -> [f64; 3] {
        [-self.w, self.n as f64, self.f]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub subgraph: Qig,
    /// Lexicon index of the candidate's label set.
    pub source_entry: usize,
    pub scores: Scores,
}

impl Interpretation {
    pub fn labels(&self) -> Vec<TemplateLabel> {
        self.subgraph.labels().cloned().collect()
    }

    /// Label set and relations, ignoring weights; identifies equivalent
    /// candidates drawn from different clusters.
    pub fn structure_key(&self) -> String {
        let mut parts: Vec<String> = self.subgraph.labels().map(|l| l.to_string()).collect();
        let mut edges: Vec<String> = self
            .subgraph
            .edges()
            .iter()
            .map(|e| {
                let (a, b, r) = if e.src <= e.dst {
                    (&e.src, &e.dst, e.relation)
                } else {
                    (&e.dst, &e.src, e.relation.invert())
                };
                format!("{a}|{}|{b}", r.code())
            })
            .collect();
        edges.sort();
        parts.push(String::new());
        parts.extend(edges);
        parts.join(";")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::new(0.1, 0.1, 0.1)
    }
}

impl ModelParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self { lambda1, lambda2, lambda3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn log_prior(&self, s: &Scores) -> f64 {
        -self.lambda1 * s.w + self.lambda2 * s.n as f64 + self.lambda3 * s.f
    }

    /// Unnormalized prior `exp(−λ1·W + λ2·N + λ3·F)`.
    pub fn prior_score(&self, s: &Scores) -> f64 {
        self.log_prior(s).exp()
    }
}

pub fn prior_score(i: &Interpretation, params: &ModelParams) -> f64 {
    params.prior_score(&i.scores)
}

/// Σ log max(S, ε) over a population of similarity values.
pub fn favoritism_from_similarities(similarities: impl IntoIterator<Item = f64>, epsilon: f64) -> f64 {
    similarities.into_iter().map(|s| s.max(epsilon).ln()).sum()
}

/// A population of graphs encoded against one lexicon.
pub struct Population<'a> {
    graphs: &'a [Qig],
    encoded: Vec<EncodedGraph>,
    engine: SimilarityEngine<'a>,
}

impl<'a> Population<'a> {
    pub fn new(graphs: &'a [Qig], lex: &'a SubgraphLexicon, options: SimilarityOptions) -> Result<Self> {
        let engine = SimilarityEngine::new(lex, options);
        let encoded = engine.encode_all(graphs)?;
        Ok(Self { graphs, encoded, engine })
    }

    pub fn graphs(&self) -> &[Qig] {
        self.graphs
    }

    pub fn encoded(&self) -> &[EncodedGraph] {
        &self.encoded
    }

    pub fn lexicon(&self) -> &SubgraphLexicon {
        self.engine.lexicon()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn similarity_matrix(&self) -> Vec<Vec<f64>> {
        self.engine.matrix(self.graphs, &self.encoded)
    }

    pub fn favoritism(&self, pattern: &Qig, epsilon: f64) -> Result<f64> {
        let s = self.engine.against_population(pattern, self.graphs, &self.encoded)?;
        Ok(favoritism_from_similarities(s, epsilon))
    }
}

/// A candidate from one cluster, with the cluster members embedding it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub interpretation: Interpretation,
    /// Positions within the cluster's member list.
    pub embedded_in: Vec<u32>,
    /// Fraction of the cluster containing the label set.
    pub support: f64,
}

/// An entry's edge configuration in one graph: (lower id, higher id,
/// relation read from the lower id), sorted.
type Config = Vec<(u32, u32, u8)>;

fn config_of(g: &Qig, enc: &EncodedGraph, ids: &[u32]) -> (Config, u64) {
    let nodes: Vec<usize> = ids
        .iter()
        .map(|id| enc.node_ids().binary_search(id).expect("entry contained in graph"))
        .collect();
    let mut cfg = Vec::new();
    let mut total = 0u64;
    for x in 0..nodes.len() {
        for y in (x + 1)..nodes.len() {
            let lower = &g.nodes()[nodes[x]].label;
            for e in g.edges_between(nodes[x], nodes[y]) {
                cfg.push((ids[x], ids[y], e.relation_from(lower).index() as u8));
                total += e.weight as u64;
            }
        }
    }
    cfg.sort_unstable();
    (cfg, total)
}

fn is_subset(small: &[(u32, u32, u8)], large: &[(u32, u32, u8)]) -> bool {
    let mut j = 0;
    for x in small {
        while j < large.len() && large[j] < *x {
            j += 1;
        }
        if j == large.len() || large[j] != *x {
            return false;
        }
        j += 1;
    }
    true
}

/// Candidates of one cluster: every entry of two or more labels contained in
/// at least `min_support` of the members, materialised as its modal edge
/// configuration. Scores are left at zero favoritism; see [`score_candidates`].
pub fn generate_candidates(members: &[usize], population: &Population<'_>, min_support: f64) -> Result<Vec<Candidate>> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::InvalidSpec(format!("min_support must lie in (0, 1], got {min_support}")));
    }
    if members.is_empty() {
        return Ok(Vec::new());
    }
    let lex = population.lexicon();
    let threshold = (min_support * members.len() as f64 - 1e-9).ceil().max(1.0) as usize;

    let mut counts = vec![0u32; lex.len()];
    for &m in members {
        for &k in population.encoded()[m].bits().ones() {
            counts[k as usize] += 1;
        }
    }
    let mut holders: HashMap<u32, Vec<u32>> = HashMap::new();
    for (k, &c) in counts.iter().enumerate() {
        if c as usize >= threshold && lex.entry(k).len() >= 2 {
            holders.insert(k as u32, Vec::with_capacity(c as usize));
        }
    }
    for (pos, &m) in members.iter().enumerate() {
        for k in population.encoded()[m].bits().ones() {
            if let Some(h) = holders.get_mut(k) {
                h.push(pos as u32);
            }
        }
    }
    let mut supported: Vec<(u32, Vec<u32>)> = holders.into_iter().collect();
    supported.sort_unstable_by_key(|(k, _)| *k);

    let out: Vec<Candidate> = supported
        .par_iter()
        .map(|(k, holders)| {
            let ids = lex.entry(*k as usize).ids();
            let configs: Vec<(Config, u64)> = holders
                .iter()
                .map(|&pos| {
                    let m = members[pos as usize];
                    config_of(&population.graphs()[m], &population.encoded()[m], ids)
                })
                .collect();
            // Modal configuration; ties go to the lower total weight, then to
            // the lexicographically smaller configuration.
            let mut tally: HashMap<&Config, (usize, u64, usize)> = HashMap::new();
            for (i, (cfg, w)) in configs.iter().enumerate() {
                let t = tally.entry(cfg).or_insert((0, u64::MAX, i));
                t.0 += 1;
                if *w < t.1 {
                    t.1 = *w;
                    t.2 = i;
                }
            }
            let (modal, &(_, _, rep)) = tally
                .iter()
                .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)).then(a.0.cmp(b.0)))
                .expect("at least one holder");
            let embedded_in: Vec<u32> = holders
                .iter()
                .zip(&configs)
                .filter(|(_, (cfg, _))| is_subset(modal, cfg))
                .map(|(&pos, _)| pos)
                .collect();
            let rep_graph = &population.graphs()[members[holders[rep] as usize]];
            let labels: Vec<TemplateLabel> = ids.iter().map(|&i| lex.label(i).clone()).collect();
            let subgraph = rep_graph
                .induced_subgraph(&labels)
                .expect("labels present")
                .with_object_id(format!("L{k}"));
            let scores = Scores {
                w: subgraph.mean_edge_weight().unwrap_or(0.0),
                n: subgraph.node_count(),
                f: 0.0,
            };
            Candidate {
                interpretation: Interpretation {
                    subgraph,
                    source_entry: *k as usize,
                    scores,
                },
                embedded_in,
                support: holders.len() as f64 / members.len() as f64,
            }
        })
        .collect();
    Ok(out)
}

/// Fills in favoritism against the full population.
pub fn score_candidates(candidates: &mut [Candidate], population: &Population<'_>, epsilon: f64) -> Result<()> {
    let fs: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|c| population.favoritism(&c.interpretation.subgraph, epsilon))
        .collect();
    for (c, f) in candidates.iter_mut().zip(fs) {
        c.interpretation.scores.f = f?;
    }
    Ok(())
}

/// EM input for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// (−W, N, F) per candidate.
    pub features: Vec<[f64; 3]>,
    /// Per member: candidates it embeds. Empty means uniform responsibilities.
    pub embedded: Vec<Vec<u32>>,
}

impl ClusterModel {
    pub fn from_candidates(candidates: &[Candidate], n_members: usize) -> Self {
        let mut embedded = vec![Vec::new(); n_members];
        for (i, c) in candidates.iter().enumerate() {
            for &m in &c.embedded_in {
                embedded[m as usize].push(i as u32);
            }
        }
        Self {
            features: candidates.iter().map(|c| c.interpretation.scores.features()).collect(),
            embedded,
        }
    }

    /// γ(I | Gₖ) for every member: over the candidates it embeds, or uniform
    /// over all candidates when it embeds none. Pairs are (candidate, γ).
    pub fn responsibilities(&self, params: &ModelParams) -> Vec<Vec<(u32, f64)>> {
        let s = self.scores(&params.as_array());
        let m = s.len();
        self.embedded
            .iter()
            .map(|emb| {
                if emb.is_empty() {
                    return (0..m as u32).map(|i| (i, 1.0 / m as f64)).collect();
                }
                let lse = log_sum_exp(emb.iter().map(|&i| s[i as usize]));
                emb.iter().map(|&i| (i, (s[i as usize] - lse).exp())).collect()
            })
            .collect()
    }

    fn scores(&self, lambda: &[f64; 3]) -> Vec<f64> {
        self.features.iter().map(|f| dot(lambda, f)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub init: ModelParams,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda_cap: f64,
    pub max_sweeps: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            init: ModelParams::default(),
            tol: 1e-6,
            max_iter: 200,
            lambda_cap: 100.0,
            max_sweeps: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmStep {
    /// Q(λ⁽ᵗ⁺¹⁾, λ⁽ᵗ⁾) plus the entropy of the responsibilities under λ⁽ᵗ⁾.
    /// The entropy is constant in λ, so the M-step is unchanged, and the sum
    /// is the EM lower bound on the log-likelihood, which never decreases.
    pub q: f64,
    /// Q(λ⁽ᵗ⁺¹⁾, λ⁽ᵗ⁾) alone: Σₖ Σᵢ γₖᵢ log f(Iᵢ).
    pub expected_log_prior: f64,
    /// Observed-data log-likelihood at λ⁽ᵗ⁺¹⁾.
    pub log_likelihood: f64,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub params: ModelParams,
    /// Q(λ⁽⁰⁾, λ⁽⁰⁾).
    pub q_initial: f64,
    pub trace: Vec<EmStep>,
    pub converged: bool,
    /// Per cluster, per candidate: mean responsibility over members.
    pub posteriors: Vec<Vec<f64>>,
    /// Natural log of `posteriors`, computed stably.
    pub log_posteriors: Vec<Vec<f64>>,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Expected sufficient statistics Σₖ Σᵢ γₖᵢ φᵢ of one cluster, and the
/// entropy of its responsibilities.
fn expected_features(model: &ClusterModel, lambda: &[f64; 3]) -> ([f64; 3], f64) {
    let m = model.features.len();
    if m == 0 {
        return ([0.0; 3], 0.0);
    }
    let s = model.scores(lambda);
    let mean: [f64; 3] = {
        let mut acc = [0.0; 3];
        for f in &model.features {
            for d in 0..3 {
                acc[d] += f[d];
            }
        }
        acc.map(|x| x / m as f64)
    };
    let mut t = [0.0; 3];
    let mut h = 0.0;
    for emb in &model.embedded {
        if emb.is_empty() {
            for d in 0..3 {
                t[d] += mean[d];
            }
            h += (m as f64).ln();
            continue;
        }
        let lse = log_sum_exp(emb.iter().map(|&i| s[i as usize]));
        for &i in emb {
            let lg = s[i as usize] - lse;
            let g = lg.exp();
            if g > 0.0 {
                h -= g * lg;
            }
            let f = &model.features[i as usize];
            for d in 0..3 {
                t[d] += g * f[d];
            }
        }
    }
    (t, h)
}

/// Distinct feature vectors of a cluster with log multiplicities; the
/// partition function only depends on these.
struct Partition {
    features: Vec<[f64; 3]>,
    log_mult: Vec<f64>,
    members: f64,
}

impl Partition {
    fn new(model: &ClusterModel) -> Self {
        let mut sorted = model.features.clone();
        let key = |f: &[f64; 3]| f.map(f64::to_bits);
        sorted.sort_unstable_by(|a, b| {
            a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
        });
        let mut features: Vec<[f64; 3]> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for f in sorted {
            if features.last().is_some_and(|l| key(l) == key(&f)) {
                *counts.last_mut().expect("paired with features") += 1;
            } else {
                features.push(f);
                counts.push(1);
            }
        }
        Self {
            features,
            log_mult: counts.iter().map(|&c| (c as f64).ln()).collect(),
            members: model.embedded.len() as f64,
        }
    }

    fn log_z(&self, lambda: &[f64; 3]) -> f64 {
        log_sum_exp(self.features.iter().zip(&self.log_mult).map(|(f, m)| dot(lambda, f) + m))
    }
}

fn q_value(parts: &[Partition], stats: &[[f64; 3]], lambda: &[f64; 3]) -> f64 {
    parts
        .iter()
        .zip(stats)
        .filter(|(p, _)| !p.features.is_empty())
        .map(|(p, t)| dot(lambda, t) - p.members * p.log_z(lambda))
        .sum()
}

/// Σₖ log P(Gₖ): the prior mass of the candidates each graph embeds, or the
/// uniform cross-entropy term for graphs that embed none.
pub fn log_likelihood(models: &[ClusterModel], params: &ModelParams) -> f64 {
    let lambda = params.as_array();
    models
        .iter()
        .filter(|m| !m.features.is_empty())
        .map(|m| {
            let s = m.scores(&lambda);
            let log_z = log_sum_exp(s.iter().copied());
            let mean_s = s.iter().sum::<f64>() / s.len() as f64;
            m.embedded
                .iter()
                .map(|emb| {
                    if emb.is_empty() {
                        mean_s - log_z
                    } else {
                        log_sum_exp(emb.iter().map(|&i| s[i as usize])) - log_z
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

/// Golden-section maximisation of a concave function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a) <= 1e-10 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

fn m_step(models: &[Partition], stats: &[[f64; 3]], start: [f64; 3], options: &EmOptions) -> [f64; 3] {
    let mut lambda = start;
    let mut current = q_value(models, stats, &lambda);
    for _ in 0..options.max_sweeps {
        let before = current;
        for d in 0..3 {
            let (x, fx) = golden_max(
                |v| {
                    let mut l = lambda;
                    l[d] = v;
                    q_value(models, stats, &l)
                },
                0.0,
                options.lambda_cap,
            );
            if fx > current {
                lambda[d] = x;
                current = fx;
            }
        }
        if current - before <= 1e-12 * (1.0 + current.abs()) {
            break;
        }
    }
    lambda
}

fn posteriors(models: &[ClusterModel], lambda: &[f64; 3]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut post = Vec::with_capacity(models.len());
    let mut logp = Vec::with_capacity(models.len());
    for m in models {
        let s = m.scores(lambda);
        let n_cand = s.len();
        let n_members = m.embedded.len() as f64;
        let mut terms: Vec<Vec<f64>> = vec![Vec::new(); n_cand];
        let mut uniform = 0usize;
        for emb in &m.embedded {
            if emb.is_empty() {
                uniform += 1;
                continue;
            }
            let lse = log_sum_exp(emb.iter().map(|&i| s[i as usize]));
            for &i in emb {
                terms[i as usize].push(s[i as usize] - lse);
            }
        }
        let uniform_term = if uniform > 0 {
            Some((uniform as f64).ln() - (n_cand as f64).ln())
        } else {
            None
        };
        let lp: Vec<f64> = terms
            .into_iter()
            .map(|mut t| {
                t.extend(uniform_term);
                log_sum_exp(t.iter().copied()) - n_members.ln()
            })
            .collect();
        post.push(lp.iter().map(|x| x.exp()).collect());
        logp.push(lp);
    }
    (post, logp)
}

pub fn run_em(models: &[ClusterModel], options: &EmOptions) -> Result<EmFit> {
    if models.iter().all(|m| m.features.is_empty()) {
        return Err(Error::NoCandidates);
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidSpec("EM tolerance must be positive".into()));
    }
    for m in models {
        if m.features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteScore("candidate score is not finite".into()));
        }
    }
    let mut lambda = options.init.as_array();
    let e_step = |lambda: &[f64; 3]| -> (Vec<[f64; 3]>, f64) {
        let parts: Vec<([f64; 3], f64)> = models.iter().map(|m| expected_features(m, lambda)).collect();
        let h = parts.iter().map(|p| p.1).sum();
        (parts.into_iter().map(|p| p.0).collect(), h)
    };
    let parts: Vec<Partition> = models.iter().map(Partition::new).collect();
    let (mut stats, mut entropy) = e_step(&lambda);
    let q_initial = q_value(&parts, &stats, &lambda) + entropy;
    if !q_initial.is_finite() {
        return Err(Error::NonFiniteScore("initial Q is not finite".into()));
    }
    let mut trace = Vec::new();
    let mut prev = q_initial;
    let mut converged = false;
    for _ in 0..options.max_iter {
        let next = m_step(&parts, &stats, lambda, options);
        let expected_log_prior = q_value(&parts, &stats, &next);
        let q = expected_log_prior + entropy;
        if !q.is_finite() {
            return Err(Error::NonFiniteScore("Q diverged".into()));
        }
        lambda = next;
        let params = ModelParams::from_array(lambda);
        trace.push(EmStep {
            q,
            expected_log_prior,
            log_likelihood: log_likelihood(models, &params),
            params,
        });
        (stats, entropy) = e_step(&lambda);
        if (q - prev).abs() < options.tol {
            converged = true;
            break;
        }
        prev = q;
    }
    let (posteriors, log_posteriors) = posteriors(models, &lambda);
    Ok(EmFit {
        params: ModelParams::from_array(lambda),
        q_initial,
        trace,
        converged,
        posteriors,
        log_posteriors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryOptions {
    pub min_support: f64,
    pub epsilon: f64,
    pub em: EmOptions,
    pub cluster: ClusterOptions,
    pub similarity: SimilarityOptions,
}

impl Default for DiscoveryOptions {
    fn default() -> Self {
        Self {
            min_support: 0.3,
            epsilon: DEFAULT_EPSILON,
            em: EmOptions::default(),
            cluster: ClusterOptions::default(),
            similarity: SimilarityOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedInterpretation {
    /// 1-based position in the ranking.
    pub rank: usize,
    /// Stable pattern id: rank and lexicon entry.
    pub id: String,
    pub cluster: usize,
    pub posterior: f64,
    pub log_posterior: f64,
    /// Fraction of the cluster containing the label set.
    pub support: f64,
    pub interpretation: Interpretation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub members: Vec<String>,
    pub candidates: usize,
    /// Sum of candidate posteriors; 1 up to rounding for non-empty sets.
    pub posterior_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub params: ModelParams,
    pub q_initial: f64,
    pub trace: Vec<EmStep>,
    pub converged: bool,
    pub clustering: Clustering,
    pub clusters: Vec<ClusterSummary>,
    /// Candidates across clusters, best first; equal structures found in
    /// several clusters appear once with their best posterior.
    pub ranked: Vec<RankedInterpretation>,
}

impl DiscoveryResult {
    /// Q values per iteration.
    pub fn q_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|s| s.q).collect()
    }
}

/// Number of interpretations kept at a sampling rate.
pub fn sample_size(rate: f64, total: usize) -> usize {
    ((rate * total as f64) - 1e-9).ceil().clamp(0.0, total as f64) as usize
}

/// Top `⌈rate · |candidates|⌉` ranked interpretations.
pub fn sample_significant(result: &DiscoveryResult, rate: f64) -> Result<&[RankedInterpretation]> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidSpec(format!("sampling rate must lie in (0, 1], got {rate}")));
    }
    Ok(&result.ranked[..sample_size(rate, result.ranked.len())])
}

/// Orders by posterior (descending), then lower W, then label order.
pub fn rank_order(a: (f64, &Interpretation), b: (f64, &Interpretation)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.scores.w.total_cmp(&b.1.scores.w))
        .then_with(|| a.1.labels().cmp(&b.1.labels()))
        .then_with(|| a.1.structure_key().cmp(&b.1.structure_key()))
}

/// Merges per-cluster candidates and posteriors into one ranking.
pub fn rank_candidates(clusters: &[Vec<Candidate>], fit: &EmFit) -> Vec<RankedInterpretation> {
    struct Keyed {
        lp: f64,
        w: f64,
        labels: Vec<TemplateLabel>,
        key: String,
        at: (usize, usize),
    }
    let order = |a: &Keyed, b: &Keyed| {
        b.lp.total_cmp(&a.lp)
            .then(a.w.total_cmp(&b.w))
            .then_with(|| a.labels.cmp(&b.labels))
            .then_with(|| a.key.cmp(&b.key))
    };
    let mut keyed: Vec<Keyed> = clusters
        .par_iter()
        .enumerate()
        .flat_map_iter(|(c, cands)| {
            cands.iter().enumerate().map(move |(i, cand)| Keyed {
                lp: fit.log_posteriors[c][i],
                w: cand.interpretation.scores.w,
                labels: cand.interpretation.labels(),
                key: cand.interpretation.structure_key(),
                at: (c, i),
            })
        })
        .collect();
    // Equivalent candidates from different clusters keep their best copy.
    keyed.sort_by(|a, b| a.key.cmp(&b.key).then_with(|| order(a, b)));
    keyed.dedup_by(|later, first| later.key == first.key);
    keyed.sort_by(order);
    keyed
        .into_iter()
        .enumerate()
        .map(|(r, k)| {
            let (c, i) = k.at;
            let cand = &clusters[c][i];
            RankedInterpretation {
                rank: r + 1,
                id: format!("I{:04}-L{}", r + 1, cand.interpretation.source_entry),
                cluster: c,
                posterior: fit.posteriors[c][i],
                log_posterior: fit.log_posteriors[c][i],
                support: cand.support,
                interpretation: cand.interpretation.clone(),
            }
        })
        .collect()
}

/// Clusters the population, materialises and scores candidates, fits the
/// prior by EM and ranks every candidate by posterior.
pub fn discover(graphs: &[Qig], lex: &SubgraphLexicon, options: &DiscoveryOptions) -> Result<DiscoveryResult> {
    if graphs.is_empty() {
        return Err(Error::NoCandidates);
    }
    let population = Population::new(graphs, lex, options.similarity)?;
    log::info!("similarity matrix over {} graphs, lexicon of {}", graphs.len(), lex.len());
    let sim = population.similarity_matrix();
    let clustering = cluster_population(&sim, &options.cluster);
    log::info!("{} clusters", clustering.n_clusters);

    let mut clusters = Vec::with_capacity(clustering.n_clusters);
    let mut members_of = Vec::with_capacity(clustering.n_clusters);
    for c in 0..clustering.n_clusters {
        let members = clustering.members(c);
        let mut cands = generate_candidates(&members, &population, options.min_support)?;
        score_candidates(&mut cands, &population, options.epsilon)?;
        log::info!("cluster {c}: {} members, {} candidates", members.len(), cands.len());
        clusters.push(cands);
        members_of.push(members);
    }
    let models: Vec<ClusterModel> = clusters
        .iter()
        .zip(&members_of)
        .map(|(c, m)| ClusterModel::from_candidates(c, m.len()))
        .collect();
    let fit = run_em(&models, &options.em)?;
    log::info!(
        "EM {} after {} iterations: λ = ({}, {}, {})",
        if fit.converged { "converged" } else { "stopped" },
        fit.trace.len(),
        fit.params.lambda1,
        fit.params.lambda2,
        fit.params.lambda3
    );
    let ranked = rank_candidates(&clusters, &fit);
    log::info!("ranked {} interpretations", ranked.len());
    let summaries = members_of
        .iter()
        .zip(&clusters)
        .zip(&fit.posteriors)
        .map(|((m, c), p)| ClusterSummary {
            members: m.iter().map(|&i| graphs[i].object_id().to_owned()).collect(),
            candidates: c.len(),
            posterior_mass: p.iter().sum(),
        })
        .collect();
    Ok(DiscoveryResult {
        params: fit.params,
        q_initial: fit.q_initial,
        trace: fit.trace,
        converged: fit.converged,
        clustering,
        clusters: summaries,
        ranked,
    })
}
