//! Pattern prevalence across cohorts, indicator feature matrices and a small
//! logistic-regression baseline over them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discovery::RankedInterpretation;
use crate::error::{Error, Result};
use crate::qig::{MatchTolerance, Qig};

/// True iff `pattern` occurs in `g` within the tolerance.
pub fn matches(g: &Qig, pattern: &Qig, tol: MatchTolerance) -> bool {
    g.embeds(pattern, tol)
}

/// Strongest occurrence of a matched pattern: the smallest, over pattern
/// edges, of the largest weight among the graph edges matching it. A pattern
/// without edges counts the occurrences of its rarest label. Zero when the
/// pattern does not match.
pub fn match_count(g: &Qig, pattern: &Qig, tol: MatchTolerance) -> u32 {
    if !matches(g, pattern, tol) {
        return 0;
    }
    if pattern.edges().is_empty() {
        return pattern
            .labels()
            .filter_map(|l| g.node_index(l))
            .map(|i| g.nodes()[i].occurrences.len() as u32)
            .min()
            .unwrap_or(0);
    }
    pattern
        .edges()
        .iter()
        .map(|pe| {
            let a = g.node_index(&pe.src).expect("matched");
            let b = g.node_index(&pe.dst).expect("matched");
            g.edges_between(a, b)
                .filter(|ge| {
                    crate::allen::neighborhood_distance(pe.relation, ge.relation_from(&pe.src)) <= tol.d_max
                        && tol.w_slack.is_none_or(|s| pe.weight.abs_diff(ge.weight) <= s)
                })
                .map(|ge| ge.weight)
                .max()
                .unwrap_or(0)
        })
        .min()
        .unwrap_or(0)
}

/// A pattern to score or featurize, identified by its report id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRef {
    pub id: String,
    /// Lexicon entry the pattern came from; orders feature columns.
    pub entry: usize,
    pub subgraph: Qig,
}

impl PatternRef {
    pub fn from_ranked(r: &RankedInterpretation) -> Self {
        Self {
            id: r.id.clone(),
            entry: r.interpretation.source_entry,
            subgraph: r.interpretation.subgraph.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternPrevalence {
    pub id: String,
    pub labels: Vec<String>,
    pub positive_matches: usize,
    pub negative_matches: usize,
    pub positive_prevalence: f64,
    pub negative_prevalence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub n_positive: usize,
    pub n_negative: usize,
    pub tolerance: MatchTolerance,
    pub patterns: Vec<PatternPrevalence>,
    /// Members matching at least one pattern.
    pub any_positive_matches: usize,
    pub any_negative_matches: usize,
    pub any_positive_prevalence: f64,
    pub any_negative_prevalence: f64,
    /// Per-pattern prevalence averaged over patterns.
    pub mean_positive_prevalence: f64,
    pub mean_negative_prevalence: f64,
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Match indicators, one row per graph and one column per pattern.
fn indicator_rows(graphs: &[Qig], patterns: &[PatternRef], tol: MatchTolerance) -> Vec<Vec<bool>> {
    graphs
        .par_iter()
        .map(|g| patterns.iter().map(|p| matches(g, &p.subgraph, tol)).collect())
        .collect()
}

pub fn prevalence(patterns: &[PatternRef], positives: &[Qig], negatives: &[Qig], tol: MatchTolerance) -> Result<PrevalenceReport> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::EmptyInput("prevalence cohorts".into()));
    }
    let pos = indicator_rows(positives, patterns, tol);
    let neg = indicator_rows(negatives, patterns, tol);
    let column = |rows: &[Vec<bool>], j: usize| rows.iter().filter(|r| r[j]).count();
    let any = |rows: &[Vec<bool>]| rows.iter().filter(|r| r.iter().any(|&x| x)).count();
    let (np, nn) = (positives.len(), negatives.len());
    let per: Vec<PatternPrevalence> = patterns
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let (cp, cn) = (column(&pos, j), column(&neg, j));
            PatternPrevalence {
                id: p.id.clone(),
                labels: p.subgraph.labels().map(|l| l.to_string()).collect(),
                positive_matches: cp,
                negative_matches: cn,
                positive_prevalence: fraction(cp, np),
                negative_prevalence: fraction(cn, nn),
            }
        })
        .collect();
    let mean = |f: &dyn Fn(&PatternPrevalence) -> f64| {
        if per.is_empty() {
            0.0
        } else {
            per.iter().map(f).sum::<f64>() / per.len() as f64
        }
    };
    let (ap, an) = (any(&pos), any(&neg));
    Ok(PrevalenceReport {
        n_positive: np,
        n_negative: nn,
        tolerance: tol,
        mean_positive_prevalence: mean(&|p| p.positive_prevalence),
        mean_negative_prevalence: mean(&|p| p.negative_prevalence),
        patterns: per,
        any_positive_matches: ap,
        any_negative_matches: an,
        any_positive_prevalence: fraction(ap, np),
        any_negative_prevalence: fraction(an, nn),
    })
}

impl PrevalenceReport {
    /// Plain-text table: one row per pattern plus the any-match aggregate.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10}  labels",
            "pattern",
            format!("pos (n={})", self.n_positive),
            format!("neg (n={})", self.n_negative)
        );
        for p in &self.patterns {
            let _ = writeln!(
                out,
                "{:<16} {:>9.2}% {:>9.2}%  {}",
                p.id,
                100.0 * p.positive_prevalence,
                100.0 * p.negative_prevalence,
                p.labels.join(", ")
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>9.2}% {:>9.2}%",
            "any",
            100.0 * self.any_positive_prevalence,
            100.0 * self.any_negative_prevalence
        );
        let _ = writeln!(
            out,
            "{:<16} {:>9.2}% {:>9.2}%",
            "mean",
            100.0 * self.mean_positive_prevalence,
            100.0 * self.mean_negative_prevalence
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub object_ids: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major cells: indicators, or match counts when requested.
    pub cells: Vec<Vec<u32>>,
    pub labels: Option<Vec<u8>>,
}

/// Feature matrix over `graphs`. Columns follow lexicon-entry order, ties by
/// pattern id, so the same patterns give the same layout on any cohort.
pub fn featurize(
    graphs: &[Qig],
    patterns: &[PatternRef],
    labels: Option<&BTreeMap<String, bool>>,
    tol: MatchTolerance,
    counts: bool,
) -> Result<FeatureMatrix> {
    if patterns.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut seen = HashSet::new();
    for g in graphs {
        if !seen.insert(g.object_id()) {
            return Err(Error::DuplicateObjectId(g.object_id().to_owned()));
        }
    }
    let mut order: Vec<&PatternRef> = patterns.iter().collect();
    order.sort_by(|a, b| a.entry.cmp(&b.entry).then_with(|| a.id.cmp(&b.id)));
    let cells: Vec<Vec<u32>> = graphs
        .par_iter()
        .map(|g| {
            order
                .iter()
                .map(|p| {
                    if counts {
                        match_count(g, &p.subgraph, tol)
                    } else {
                        u32::from(matches(g, &p.subgraph, tol))
                    }
                })
                .collect()
        })
        .collect();
    let labels = labels
        .map(|l| {
            graphs
                .iter()
                .map(|g| {
                    l.get(g.object_id())
                        .map(|&b| u8::from(b))
                        .ok_or_else(|| Error::Config(format!("no outcome label for object `{}`", g.object_id())))
                })
                .collect::<Result<Vec<u8>>>()
        })
        .transpose()?;
    Ok(FeatureMatrix {
        object_ids: graphs.iter().map(|g| g.object_id().to_owned()).collect(),
        columns: order.iter().map(|p| p.id.clone()).collect(),
        cells,
        labels,
    })
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.object_ids.len()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        fraction(self.cells.iter().filter(|r| r[j] > 0).count(), self.n_rows())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["object_id".to_owned()];
        header.extend(self.columns.iter().cloned());
        if self.labels.is_some() {
            header.push("label".to_owned());
        }
        out.write_record(&header)?;
        for (i, id) in self.object_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.cells[i].iter().map(|c| c.to_string()));
            if let Some(l) = &self.labels {
                row.push(l[i].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<feature matrix>", e))?;
        Ok(())
    }

    /// Dense real-valued design matrix and labels, for the baseline.
    pub fn design(&self) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        let labels = self.labels.clone().ok_or_else(|| Error::Config("feature matrix has no label column".into()))?;
        let x = self.cells.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect();
        Ok((x, labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 2000,
            l2: 1e-3,
        }
    }
}

/// L2-regularised logistic regression fitted by full-batch gradient descent
/// on standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn fit(x: &[Vec<f64>], y: &[u8], options: &LogisticOptions) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        if n > 0 {
            for j in 0..d {
                let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let v = x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
                mean[j] = m;
                scale[j] = if v > 1e-12 { v.sqrt() } else { 1.0 };
            }
        }
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        if n == 0 {
            return Self { mean, scale, weights: w, bias: b };
        }
        let mut grad = vec![0.0; d];
        for _ in 0..options.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (r, &t) in z.iter().zip(y) {
                let p = sigmoid(b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
                let e = p - t as f64;
                gb += e;
                for j in 0..d {
                    grad[j] += e * r[j];
                }
            }
            for j in 0..d {
                w[j] -= options.learning_rate * (grad[j] / n as f64 + options.l2 * w[j]);
            }
            b -= options.learning_rate * gb / n as f64;
        }
        Self { mean, scale, weights: w, bias: b }
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let z: f64 = row
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j] * self.weights[j])
            .sum();
        sigmoid(self.bias + z)
    }
}

/// Area under the ROC curve; tied scores count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Mann-Whitney U from mid-ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub fold_auroc: Vec<f64>,
    pub mean_auroc: f64,
}

/// Stratified k-fold cross-validated AUROC of the logistic baseline.
pub fn cross_validate(x: &[Vec<f64>], y: &[u8], folds: usize, seed: u64, options: &LogisticOptions) -> Result<CrossValidation> {
    if folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; y.len()];
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < folds {
            return Err(Error::Config(format!("class {class} has fewer than {folds} members")));
        }
        members.shuffle(&mut rng);
        for (k, i) in members.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    let fold_auroc: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == f).collect();
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let model = LogisticModel::fit(&tx, &ty, options);
            let scores: Vec<f64> = test.iter().map(|&i| model.predict_proba(&x[i])).collect();
            let labels: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            auroc(&scores, &labels).expect("stratified folds hold both classes")
        })
        .collect();
    let mean_auroc = fold_auroc.iter().sum::<f64>() / folds as f64;
    Ok(CrossValidation { fold_auroc, mean_auroc })
}
