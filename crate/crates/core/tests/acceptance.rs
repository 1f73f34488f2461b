//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stdout (bypassing libtest's capture) and then asserts.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use qig_core::abstraction::{abstract_object, abstract_patterns, make_templates, AbstractionOptions};
use qig_core::allen::{classify_relation, neighborhood_distance, AllenRelation, Interval, NeighborhoodGraph};
use qig_core::cluster::cluster_population;
use qig_core::discovery::{
    discover, generate_candidates, rank_candidates, run_em, sample_significant, score_candidates, Candidate,
    ClusterModel, DiscoveryOptions, DiscoveryResult, EmOptions, Interpretation, ModelParams, Population, Scores,
};
use qig_core::features::{cross_validate, featurize, matches, prevalence, LogisticOptions, PatternRef};
use qig_core::lexicon::{observed_universe, LexiconOptions, SubgraphLexicon};
use qig_core::pipeline::run_pipeline;
use qig_core::qig::{build_qig, MatchTolerance, Qig, QigEdge, QigNode};
use qig_core::similarity::{edge_similarity, graph_similarity, subgraph_similarity, SimilarityOptions};
use qig_core::synth::{cohort_graphs, generate, verify, SynthCohort, SynthSpec};
use qig_core::{GradientLabel, KnowledgeBase, ObjectSeries, PatternTemplate, PipelineConfig, Sample, StateLabel, TemplateLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn report(n: usize, name: &str, pass: bool, detail: impl AsRef<str>) {
    let line = format!(
        "[{}] criterion {n:>2} {name}: {}\n",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{}", line.trim_end());
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn iv(a: f64, b: f64) -> Interval {
    Interval::new(a, b).unwrap()
}

fn label(s: &str) -> TemplateLabel {
    s.parse().unwrap()
}

// Preset cohort shared by the recovery, separability and round-trip checks.
const PRESET_SEED: u64 = 7;

struct Preset {
    kb: KnowledgeBase,
    cohort: SynthCohort,
    graphs: Vec<Qig>,
    synth_time: Duration,
}

fn preset() -> &'static Preset {
    static P: OnceLock<Preset> = OnceLock::new();
    P.get_or_init(|| {
        let kb = KnowledgeBase::default_icu();
        let t = Instant::now();
        let cohort = generate(&SynthSpec::preset(PRESET_SEED), &kb).expect("preset cohort generates");
        let graphs = cohort_graphs(&cohort, &kb).unwrap();
        Preset {
            kb,
            cohort,
            graphs,
            synth_time: t.elapsed(),
        }
    })
}

fn split(p: &Preset) -> (Vec<Qig>, Vec<Qig>) {
    let labels = p.cohort.labels();
    let (pos, neg): (Vec<&Qig>, Vec<&Qig>) = p.graphs.iter().partition(|g| labels[g.object_id()]);
    (pos.into_iter().cloned().collect(), neg.into_iter().cloned().collect())
}

struct PresetDiscovery {
    result: DiscoveryResult,
    elapsed: Duration,
}

fn preset_discovery() -> &'static PresetDiscovery {
    static D: OnceLock<PresetDiscovery> = OnceLock::new();
    D.get_or_init(|| {
        let p = preset();
        let t = Instant::now();
        let (pos, _) = split(p);
        let lex = SubgraphLexicon::from_universe(observed_universe(&pos), LexiconOptions::default()).unwrap();
        let result = discover(&pos, &lex, &DiscoveryOptions::default()).unwrap();
        PresetDiscovery {
            result,
            elapsed: t.elapsed() + p.synth_time,
        }
    })
}

// 1 ---------------------------------------------------------------------------

/// Which of the thirteen relations hold, from the endpoint definitions.
fn relations_by_definition(a: &Interval, b: &Interval) -> Vec<AllenRelation> {
    use AllenRelation::*;
    let (s1, e1, s2, e2) = (a.start(), a.end(), b.start(), b.end());
    let defs = [
        (Precedes, e1 < s2),
        (Meets, e1 == s2),
        (Overlaps, s1 < s2 && s2 < e1 && e1 < e2),
        (Starts, s1 == s2 && e1 < e2),
        (During, s2 < s1 && e1 < e2),
        (Finishes, s2 < s1 && e1 == e2),
        (Equals, s1 == s2 && e1 == e2),
        (PrecededBy, e2 < s1),
        (MetBy, e2 == s1),
        (OverlappedBy, s2 < s1 && s1 < e2 && e2 < e1),
        (StartedBy, s1 == s2 && e2 < e1),
        (Contains, s1 < s2 && e2 < e1),
        (FinishedBy, s1 < s2 && e1 == e2),
    ];
    defs.iter().filter(|(_, holds)| *holds).map(|(r, _)| *r).collect()
}

fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
    // Small integer grid half the time so that shared endpoints are common.
    loop {
        let (a, b) = if rng.gen_bool(0.5) {
            (rng.gen_range(0..12) as f64, rng.gen_range(0..12) as f64)
        } else {
            (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0))
        };
        if a < b {
            return iv(a, b);
        }
    }
}

#[test]
fn c01_allen_exhaustiveness() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0usize;
    let mut seen = BTreeSet::new();
    for _ in 0..100_000 {
        let a = random_interval(&mut rng);
        let b = random_interval(&mut rng);
        let holds = relations_by_definition(&a, &b);
        let ab = classify_relation(&a, &b);
        let ba = classify_relation(&b, &a);
        if holds != [ab] || ab != ba.invert() {
            violations += 1;
        }
        seen.insert(ab);
    }
    let elapsed = t.elapsed();
    report(
        1,
        "Allen exhaustiveness",
        violations == 0 && seen.len() == 13 && elapsed < Duration::from_secs(5),
        format!("1e5 pairs, {violations} violations, {} relations seen, {}", seen.len(), secs(elapsed)),
    );
}

// 2 ---------------------------------------------------------------------------

const CODES: [&str; 13] = ["p", "m", "o", "s", "d", "f", "eq", "pi", "mi", "oi", "si", "di", "fi"];
const ADJACENCY: &str = "p-m m-o o-s o-fi s-eq s-d fi-eq fi-di eq-si eq-f d-f di-si si-oi f-oi oi-mi mi-pi";

/// Breadth-first distances over the neighbourhood adjacency, indexed by CODES.
fn bfs_matrix() -> [[u32; 13]; 13] {
    let idx = |c: &str| CODES.iter().position(|x| *x == c).unwrap();
    let mut adj = vec![Vec::new(); 13];
    for e in ADJACENCY.split_whitespace() {
        let (a, b) = e.split_once('-').unwrap();
        adj[idx(a)].push(idx(b));
        adj[idx(b)].push(idx(a));
    }
    let mut d = [[u32::MAX; 13]; 13];
    for (s, row) in d.iter_mut().enumerate() {
        row[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(x) = q.pop_front() {
            for &y in &adj[x] {
                if row[y] == u32::MAX {
                    row[y] = row[x] + 1;
                    q.push_back(y);
                }
            }
        }
    }
    d
}

/// Distances computed once by hand-checked BFS and frozen.
const FROZEN: [[u32; 13]; 13] = [
    [0, 1, 2, 3, 4, 5, 4, 8, 7, 6, 5, 4, 3],
    [1, 0, 1, 2, 3, 4, 3, 7, 6, 5, 4, 3, 2],
    [2, 1, 0, 1, 2, 3, 2, 6, 5, 4, 3, 2, 1],
    [3, 2, 1, 0, 1, 2, 1, 5, 4, 3, 2, 3, 2],
    [4, 3, 2, 1, 0, 1, 2, 4, 3, 2, 3, 4, 3],
    [5, 4, 3, 2, 1, 0, 1, 3, 2, 1, 2, 3, 2],
    [4, 3, 2, 1, 2, 1, 0, 4, 3, 2, 1, 2, 1],
    [8, 7, 6, 5, 4, 3, 4, 0, 1, 2, 3, 4, 5],
    [7, 6, 5, 4, 3, 2, 3, 1, 0, 1, 2, 3, 4],
    [6, 5, 4, 3, 2, 1, 2, 2, 1, 0, 1, 2, 3],
    [5, 4, 3, 2, 3, 2, 1, 3, 2, 1, 0, 1, 2],
    [4, 3, 2, 3, 4, 3, 2, 4, 3, 2, 1, 0, 1],
    [3, 2, 1, 2, 3, 2, 1, 5, 4, 3, 2, 1, 0],
];

#[test]
fn c02_neighborhood_distances() {
    let rel = |c: &str| -> AllenRelation { c.parse().unwrap() };
    let oracle = bfs_matrix();
    let mut mismatches = 0;
    let mut symmetric = true;
    for (i, a) in CODES.iter().enumerate() {
        for (j, b) in CODES.iter().enumerate() {
            let d = neighborhood_distance(rel(a), rel(b));
            if d != oracle[i][j] || d != FROZEN[i][j] {
                mismatches += 1;
            }
            symmetric &= d == neighborhood_distance(rel(b), rel(a));
        }
    }
    let graph = NeighborhoodGraph::get();
    let unit_is_adjacent = AllenRelation::ALL.iter().all(|&a| {
        AllenRelation::ALL
            .iter()
            .all(|&b| (neighborhood_distance(a, b) == 1) == graph.are_neighbors(a, b))
    });
    let pm = neighborhood_distance(AllenRelation::Precedes, AllenRelation::Meets);
    let rr = AllenRelation::ALL.iter().all(|&r| neighborhood_distance(r, r) == 0);
    report(
        2,
        "neighbourhood distances",
        mismatches == 0 && symmetric && unit_is_adjacent && pm == 1 && rr,
        format!("169 entries, {mismatches} mismatches vs BFS oracle, d(p,m)={pm}, d(r,r)=0: {rr}, symmetric: {symmetric}"),
    );
}

// 3 ---------------------------------------------------------------------------

/// Body temperature falling, flat, falling, then rising through the normal
/// range into fever.
fn temperature_series(offset: f64) -> Vec<Sample> {
    [35.5, 34.8, 34.9, 34.2, 35.0, 36.5, 37.5, 38.6]
        .iter()
        .enumerate()
        .map(|(i, &v)| Sample::new(offset + 10.0 * i as f64, v))
        .collect()
}

#[test]
fn c03_temperature_abstraction_fixture() {
    use GradientLabel::*;
    use StateLabel::*;
    let kb = KnowledgeBase::default_icu();
    let rule = kb.get("Body Temperature").unwrap();
    let patterns = abstract_patterns("Body Temperature", &temperature_series(0.0), rule, &AbstractionOptions::default()).unwrap();
    let got: Vec<(GradientLabel, StateLabel, f64, f64)> = patterns
        .iter()
        .map(|p| (p.gradient, p.state, p.interval.start(), p.interval.end()))
        .collect();
    let expected = vec![
        (Decreasing, Low, 0.0, 10.0),
        (Stable, Low, 10.0, 20.0),
        (Decreasing, Low, 20.0, 30.0),
        (Increasing, Low, 30.0, 45.0),
        (Increasing, Normal, 45.0, 65.0),
        (Increasing, High, 65.0, 70.0),
    ];
    let templates = make_templates(&patterns);
    let names: BTreeSet<(GradientLabel, StateLabel)> = templates.iter().map(|t| (t.label.gradient(), t.label.state())).collect();
    let expected_names: BTreeSet<_> = [(Decreasing, Low), (Increasing, Low), (Increasing, Normal), (Increasing, High), (Stable, Low)].into();
    let dec_low = templates
        .iter()
        .find(|t| t.label.gradient() == Decreasing && t.label.state() == Low)
        .map_or(0, |t| t.occurrences.len());
    let pass = got == expected && templates.len() == 5 && names == expected_names && dec_low == 2;
    report(
        3,
        "temperature abstraction fixture",
        pass,
        format!(
            "{} patterns, {} templates [{}], Decreasing-Low occurrences {dec_low}",
            patterns.len(),
            templates.len(),
            templates.iter().map(|t| t.label.to_string()).collect::<Vec<_>>().join(", ")
        ),
    );
}

// 4 ---------------------------------------------------------------------------

#[test]
fn c04_interaction_edge_fixture() {
    let kb = KnowledgeBase::default_icu();
    // Respiratory rate high and climbing by more than its delta at every
    // sample, spanning both falling-temperature episodes.
    let resp: Vec<Sample> = [15.0, 19.0, 23.0, 27.0, 31.0, 35.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| Sample::new(10.0 * i as f64, v))
        .collect();
    let object = ObjectSeries {
        object_id: "fixture".into(),
        variables: [
            ("Body Temperature".to_owned(), temperature_series(10.0)),
            ("Spontaneous Respiratory Rate".to_owned(), resp),
        ]
        .into(),
    };
    let templates = abstract_object(&object, &kb, &AbstractionOptions::default()).unwrap();
    let g = build_qig("fixture", &templates, 3600.0);
    let temp = TemplateLabel::new("Body Temperature", StateLabel::Low, GradientLabel::Decreasing);
    let rr = TemplateLabel::new("Spontaneous Respiratory Rate", StateLabel::High, GradientLabel::Increasing);
    let edges: Vec<&QigEdge> = g
        .edges()
        .iter()
        .filter(|e| (e.src == temp && e.dst == rr) || (e.src == rr && e.dst == temp))
        .collect();
    let pass = edges.len() == 1 && edges[0].src == temp && edges[0].relation == AllenRelation::During && edges[0].weight == 2;
    let sub = g.induced_subgraph(&[temp.clone(), rr.clone()]).unwrap();
    let survives = sub.edges().len() == 1 && sub.edges()[0].weight == 2;
    report(
        4,
        "interaction edge fixture",
        pass && survives,
        format!(
            "{}",
            edges
                .iter()
                .map(|e| format!("{} --{}--> {} weight {}", e.src, e.relation.name(), e.dst, e.weight))
                .collect::<Vec<_>>()
                .join("; ")
        ),
    );
}

// 5 ---------------------------------------------------------------------------

const VARS: [&str; 3] = ["Heart Rate", "Body Temperature", "Sodium"];

fn all_labels() -> Vec<TemplateLabel> {
    let mut out = Vec::new();
    for v in VARS {
        for s in StateLabel::ALL {
            for g in GradientLabel::ALL {
                out.push(TemplateLabel::new(v, s, g));
            }
        }
    }
    out
}

fn random_graph(rng: &mut ChaCha8Rng, id: usize, labels: &[TemplateLabel]) -> Qig {
    let mut templates = Vec::new();
    for v in 0..VARS.len() {
        let own = &labels[v * 9..(v + 1) * 9];
        let k = rng.gen_range(0..=3);
        let mut chosen: Vec<&TemplateLabel> = Vec::new();
        while chosen.len() < k {
            let l = &own[rng.gen_range(0..9)];
            if !chosen.contains(&l) {
                chosen.push(l);
            }
        }
        for l in chosen {
            let mut cuts: Vec<i32> = (0..2 * rng.gen_range(1..=3)).map(|_| rng.gen_range(0..40)).collect();
            cuts.sort_unstable();
            cuts.dedup();
            let occurrences: Vec<Interval> = cuts.chunks_exact(2).map(|c| iv(c[0] as f64, c[1] as f64)).collect();
            if !occurrences.is_empty() {
                templates.push(PatternTemplate {
                    label: l.clone(),
                    occurrences,
                });
            }
        }
    }
    build_qig(format!("g{id}"), &templates, 10.0)
}

fn edge(src: &str, dst: &str, relation: AllenRelation, weight: u32) -> QigEdge {
    QigEdge {
        src: label(src),
        dst: label(dst),
        relation,
        weight,
    }
}

fn two_node(a: &str, b: &str, relation: AllenRelation, weight: u32) -> Qig {
    let node = |l: &str| QigNode {
        label: label(l),
        occurrences: vec![iv(0.0, 1.0)],
    };
    Qig::from_parts("h", vec![node(a), node(b)], vec![edge(a, b, relation, weight)]).unwrap()
}

#[test]
fn c05_similarity_bounds_and_formulas() {
    use AllenRelation::*;
    let t = Instant::now();
    let labels = all_labels();
    let lex = SubgraphLexicon::from_universe(labels.clone(), LexiconOptions { k_max: 3, cap: 1_000_000 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool: Vec<Qig> = (0..400).map(|i| random_graph(&mut rng, i, &labels)).collect();
    let asym = SimilarityOptions::default();
    let sym = SimilarityOptions { symmetric: true };
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);

    let (mut out_of_bounds, mut self_errors, mut checked_theta) = (0usize, 0usize, 0usize);
    for g in &pool {
        let bits = lex.encode(g).unwrap();
        let expected = bits.popcount() as f64 / lex.len() as f64;
        if graph_similarity(g, g, &lex, asym).unwrap() != expected {
            self_errors += 1;
        }
    }
    for pair in 0..10_000 {
        let g1 = &pool[rng.gen_range(0..pool.len())];
        let g2 = &pool[rng.gen_range(0..pool.len())];
        for opt in [asym, sym] {
            if !in_unit(graph_similarity(g1, g2, &lex, opt).unwrap()) {
                out_of_bounds += 1;
            }
        }
        for e1 in g1.edges() {
            for e2 in g2.edges() {
                let s = edge_similarity(e1, e2);
                if !in_unit(s) || s != edge_similarity(e2, e1) {
                    out_of_bounds += 1;
                }
            }
        }
        if pair < 300 {
            let (b1, b2) = (lex.encode(g1).unwrap(), lex.encode(g2).unwrap());
            for k in b1.intersection(&b2) {
                let entry = lex.entry(k as usize).to_labels();
                checked_theta += 1;
                if !in_unit(subgraph_similarity(g1, g2, &entry, asym).unwrap()) {
                    out_of_bounds += 1;
                }
            }
        }
    }

    let a = "Heart Rate-Hi-Inc";
    let b = "Body Temperature-Low-Dec";
    let c = "Sodium-Norm-Stab";
    let identical = edge_similarity(&edge(a, b, During, 2), &edge(a, b, During, 2));
    let third = edge_similarity(&edge(a, b, Starts, 2), &edge(a, b, During, 3));
    let apart = edge_similarity(&edge(a, b, During, 2), &edge(a, c, During, 2));
    let theta = subgraph_similarity(&two_node(a, b, During, 2), &two_node(a, b, Overlaps, 2), &[label(a), label(b)], asym).unwrap();
    let hand = (identical - 1.0).abs() < 1e-12
        && (third - 1.0 / 3.0).abs() < 1e-12
        && apart.abs() < 1e-12
        && (theta - 1.0 / 3.0).abs() < 1e-12;
    report(
        5,
        "similarity bounds and formulas",
        out_of_bounds == 0 && self_errors == 0 && hand,
        format!(
            "1e4 pairs, {out_of_bounds} out of bounds, {checked_theta} shared entries checked, {self_errors} self-similarity errors; \
             hand cases {identical}, {third:.12}, {apart}, {theta:.12}; {}",
            secs(t.elapsed())
        ),
    );
}

// 6 ---------------------------------------------------------------------------

#[test]
fn c06_em_health() {
    let t = Instant::now();
    let kb = KnowledgeBase::default_icu();
    let cohort = generate(&SynthSpec::preset(6).with_sizes(25, 25), &kb).unwrap();
    let graphs = cohort_graphs(&cohort, &kb).unwrap();
    let options = DiscoveryOptions::default();
    let lex = SubgraphLexicon::from_universe(observed_universe(&graphs), LexiconOptions::default()).unwrap();
    let population = Population::new(&graphs, &lex, options.similarity).unwrap();
    let clustering = cluster_population(&population.similarity_matrix(), &options.cluster);
    let mut models = Vec::new();
    let mut n_candidates = 0;
    for c in 0..clustering.n_clusters {
        let members = clustering.members(c);
        let mut cands = generate_candidates(&members, &population, options.min_support).unwrap();
        score_candidates(&mut cands, &population, options.epsilon).unwrap();
        n_candidates += cands.len();
        models.push(ClusterModel::from_candidates(&cands, members.len()));
    }
    let fit = run_em(&models, &options.em).unwrap();

    let mut q = vec![fit.q_initial];
    q.extend(fit.trace.iter().map(|s| s.q));
    let worst_drop = q.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let monotone = q.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    let mut worst_norm = 0.0f64;
    for m in &models {
        if m.features.is_empty() {
            continue;
        }
        for r in m.responsibilities(&fit.params) {
            worst_norm = worst_norm.max((r.iter().map(|p| p.1).sum::<f64>() - 1.0).abs());
        }
    }
    for (m, p) in models.iter().zip(&fit.posteriors) {
        if !m.features.is_empty() {
            worst_norm = worst_norm.max((p.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let elapsed = t.elapsed();
    let pass = monotone && fit.converged && fit.trace.len() <= 200 && worst_norm <= 1e-9 && elapsed < Duration::from_secs(60);
    report(
        6,
        "EM health",
        pass,
        format!(
            "50 graphs, {} clusters, {n_candidates} candidates, {} iterations, converged {}, largest Q drop {worst_drop:.3e}, \
             posterior normalisation error {worst_norm:.1e}, {}",
            clustering.n_clusters,
            fit.trace.len(),
            fit.converged,
            secs(elapsed)
        ),
    );
}

// 7 ---------------------------------------------------------------------------

fn candidate(scores: Scores, entry: usize, n_members: u32) -> Candidate {
    let a = format!("Heart Rate-Hi-Stab{}", "");
    let b = format!("Sodium-Low-{}", ["Inc", "Dec"][entry % 2]);
    Candidate {
        interpretation: Interpretation {
            subgraph: two_node(&a, &b, AllenRelation::Overlaps, 1),
            source_entry: entry,
            scores,
        },
        embedded_in: (0..n_members).collect(),
        support: 1.0,
    }
}

#[test]
fn c07_prior_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut correct = [0usize; 3];
    for trial in 0..300 {
        let dim = trial % 3;
        let base = Scores {
            w: rng.gen_range(1.0..5.0),
            n: rng.gen_range(2..5),
            f: rng.gen_range(-20.0..0.0),
        };
        let mut better = base;
        let mut worse = base;
        match dim {
            0 => worse.w += rng.gen_range(0.1..3.0),
            1 => better.n += rng.gen_range(1..3),
            _ => worse.f -= rng.gen_range(0.1..10.0),
        }
        // Present the preferred candidate second half the time.
        let flip = rng.gen_bool(0.5);
        let members = rng.gen_range(1..10);
        let pair = if flip {
            vec![candidate(worse, 0, members), candidate(better, 1, members)]
        } else {
            vec![candidate(better, 0, members), candidate(worse, 1, members)]
        };
        let preferred = usize::from(flip);
        let init = ModelParams::new(rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0));
        let options = EmOptions {
            init,
            ..EmOptions::default()
        };
        let fit = run_em(&[ClusterModel::from_candidates(&pair, members as usize)], &options).unwrap();
        let ranked = rank_candidates(&[pair.clone()], &fit);
        let prior_ok = init.prior_score(&better) > init.prior_score(&worse);
        if prior_ok && ranked[0].interpretation.source_entry == preferred && fit.posteriors[0][preferred] > 0.5 {
            correct[dim] += 1;
        }
    }
    report(
        7,
        "prior monotonicity",
        correct == [100; 3],
        format!("lower W {}/100, higher N {}/100, higher F {}/100", correct[0], correct[1], correct[2]),
    );
}

// 8 ---------------------------------------------------------------------------

/// Sampled interpretations that carry every planted label and embed the
/// planted structure exactly, per planted pattern.
fn recovered(p: &Preset, sampled: &[qig_core::RankedInterpretation]) -> Vec<(String, Vec<PatternRef>)> {
    p.cohort
        .truth
        .planted
        .iter()
        .map(|t| {
            let want: BTreeSet<TemplateLabel> = t.pattern.nodes.iter().cloned().collect();
            let pg = t.pattern.graph();
            let hits = sampled
                .iter()
                .filter(|r| {
                    let have: BTreeSet<TemplateLabel> = r.interpretation.labels().into_iter().collect();
                    want.is_subset(&have) && matches(&r.interpretation.subgraph, &pg, MatchTolerance::default())
                })
                .map(PatternRef::from_ranked)
                .collect();
            (t.pattern.name.clone(), hits)
        })
        .collect()
}

#[test]
fn c08_planted_pattern_recovery() {
    let p = preset();
    let d = preset_discovery();
    let sampled = sample_significant(&d.result, 0.05).unwrap();
    let per_pattern = recovered(p, sampled);
    let found = per_pattern.iter().filter(|(_, h)| !h.is_empty()).count();
    let patterns: Vec<PatternRef> = per_pattern.iter().flat_map(|(_, h)| h.iter().cloned()).collect();
    let (pos, neg) = split(p);
    let rep = prevalence(&patterns, &pos, &neg, MatchTolerance::default()).unwrap();
    let nuisance = p.cohort.truth.nuisance.len();
    let pass = found >= 4
        && rep.any_positive_prevalence >= 0.95
        && rep.any_negative_prevalence <= 0.05
        && d.elapsed < Duration::from_secs(600)
        && p.cohort.truth.planted.len() == 5
        && nuisance == 20;
    report(
        8,
        "planted-pattern recovery",
        pass,
        format!(
            "{found}/5 planted recovered in the top {} of {} ({} matching interpretations), prevalence {:.3} positive vs {:.3} negative, \
             {nuisance} nuisance pairs, {}",
            sampled.len(),
            d.result.ranked.len(),
            patterns.len(),
            rep.any_positive_prevalence,
            rep.any_negative_prevalence,
            secs(d.elapsed)
        ),
    );
}

// 9 ---------------------------------------------------------------------------

#[test]
fn c09_feature_separability() {
    let p = preset();
    let d = preset_discovery();
    let t = Instant::now();
    let top: Vec<PatternRef> = d.result.ranked.iter().take(39).map(PatternRef::from_ranked).collect();
    let labels: BTreeMap<String, bool> = p.cohort.labels();
    let fm = featurize(&p.graphs, &top, Some(&labels), MatchTolerance::default(), false).unwrap();
    let (x, y) = fm.design().unwrap();
    let cv = cross_validate(&x, &y, 5, PRESET_SEED, &LogisticOptions::default()).unwrap();
    let elapsed = t.elapsed();
    let pass = fm.columns.len() == 39 && fm.n_rows() == 400 && cv.mean_auroc >= 0.95 && elapsed < Duration::from_secs(60);
    report(
        9,
        "feature separability",
        pass,
        format!(
            "{}x{} matrix, 5-fold AUROC {:.3} (folds {}), {}",
            fm.n_rows(),
            fm.columns.len(),
            cv.mean_auroc,
            cv.fold_auroc.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(", "),
            secs(elapsed)
        ),
    );
}

// 10 --------------------------------------------------------------------------

fn digests(dir: &std::path::Path) -> BTreeMap<String, String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            (name, hex::encode(Sha256::digest(std::fs::read(e.path()).unwrap())))
        })
        .collect()
}

#[test]
fn c10_determinism() {
    let t = Instant::now();
    let kb = KnowledgeBase::default_icu();
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate(&SynthSpec::preset(10).with_sizes(30, 30), &kb).unwrap();
    let samples = dir.path().join("samples.csv");
    let labels = dir.path().join("labels.csv");
    cohort.write_csv(std::fs::File::create(&samples).unwrap()).unwrap();
    cohort.write_labels(std::fs::File::create(&labels).unwrap()).unwrap();
    let cfg = PipelineConfig {
        input: Some(samples),
        labels: Some(labels),
        seed: 10,
        ..PipelineConfig::default()
    };
    let a = run_pipeline(&cfg, dir.path().join("a")).unwrap();
    let b = run_pipeline(&cfg, dir.path().join("b")).unwrap();
    let (da, db) = (digests(&dir.path().join("a")), digests(&dir.path().join("b")));
    let differing: Vec<&String> = da.keys().filter(|k| da.get(*k) != db.get(*k)).collect();
    let pass = differing.is_empty() && da.len() == db.len() && da.len() >= 9 && a.artifacts == b.artifacts;
    report(
        10,
        "determinism",
        pass,
        format!("two seeded runs, {} artifacts, {} differing, {}", da.len(), differing.len(), secs(t.elapsed())),
    );
}

// 11 --------------------------------------------------------------------------

#[test]
fn c11_synth_round_trip() {
    let p = preset();
    let rt = verify(&p.cohort, &p.kb).unwrap();
    let by_id: BTreeMap<&str, &Qig> = p.graphs.iter().map(|g| (g.object_id(), g)).collect();
    let (mut expected, mut matched, mut leaks) = (0usize, 0usize, 0usize);
    for t in &p.cohort.truth.planted {
        let pg = t.pattern.graph();
        for c in &t.carriers {
            expected += 1;
            matched += usize::from(matches(by_id[c.as_str()], &pg, MatchTolerance::default()));
        }
        leaks += p
            .cohort
            .truth
            .objects
            .iter()
            .filter(|o| !o.positive && matches(by_id[o.object_id.as_str()], &pg, MatchTolerance::default()))
            .count();
    }
    let pass = expected > 0 && matched == expected && leaks == 0 && rt.recovered == rt.expected && rt.max_leak == 0;
    report(
        11,
        "synth round-trip",
        pass,
        format!("{matched}/{expected} planted instances matched, {leaks} negative matches"),
    );
}
