//! Pipeline configuration: defaults, a `key = value` file format and
//! per-key overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterOptions;
use crate::discovery::{DiscoveryOptions, EmOptions, ModelParams};
use crate::error::{Error, Result};
use crate::lexicon::LexiconOptions;
use crate::qig::{MatchTolerance, QigOptions};
use crate::similarity::SimilarityOptions;

/// Which labels the lexicon is built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniverseMode {
    /// Labels observed in the discovery cohort.
    Observed,
    /// Every label of every variable in the knowledge base.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub knowledge_base: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    /// Drop samples within this many seconds of the outcome time.
    pub window_cutoff: Option<f64>,
    pub max_sampling_gap: Option<f64>,
    pub max_gap: f64,
    pub k_max: usize,
    pub lexicon_cap: usize,
    pub universe: UniverseMode,
    pub min_support: f64,
    pub lambda_init: [f64; 3],
    pub tol: f64,
    pub max_iter: usize,
    pub lambda_cap: f64,
    pub epsilon: f64,
    pub symmetric: bool,
    pub k_neighbors: usize,
    pub max_clusters: usize,
    pub restarts: usize,
    pub sampling_rate: f64,
    pub d_max: u32,
    pub w_slack: Option<u32>,
    /// Cap on feature columns; the top-ranked sampled patterns are kept.
    pub max_features: Option<usize>,
    pub feature_counts: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let em = EmOptions::default();
        let cluster = ClusterOptions::default();
        let lex = LexiconOptions::default();
        Self {
            knowledge_base: None,
            input: None,
            labels: None,
            outcomes: None,
            window_cutoff: None,
            max_sampling_gap: None,
            max_gap: crate::qig::DEFAULT_MAX_GAP,
            k_max: lex.k_max,
            lexicon_cap: lex.cap,
            universe: UniverseMode::Observed,
            min_support: DiscoveryOptions::default().min_support,
            lambda_init: em.init.as_array(),
            tol: em.tol,
            max_iter: em.max_iter,
            lambda_cap: em.lambda_cap,
            epsilon: DiscoveryOptions::default().epsilon,
            symmetric: false,
            k_neighbors: cluster.k_neighbors,
            max_clusters: cluster.max_clusters,
            restarts: cluster.restarts,
            sampling_rate: 0.05,
            d_max: 0,
            w_slack: None,
            max_features: None,
            feature_counts: false,
            seed: 0,
        }
    }
}

/// Every recognised key, in file order.
pub const KEYS: [&str; 28] = [
    "knowledge_base",
    "input",
    "labels",
    "outcomes",
    "window_cutoff",
    "max_sampling_gap",
    "max_gap",
    "k_max",
    "lexicon_cap",
    "universe",
    "min_support",
    "lambda_init",
    "tol",
    "max_iter",
    "lambda_cap",
    "epsilon",
    "symmetric",
    "k_neighbors",
    "max_clusters",
    "restarts",
    "sampling_rate",
    "d_max",
    "w_slack",
    "max_features",
    "feature_counts",
    "seed",
    "workers",
    "output_dir",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot read `{value}`")))
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && !value.eq_ignore_ascii_case("none")).then(|| PathBuf::from(value))
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_owned(), T::to_string)
}

impl PipelineConfig {
    /// Sets one key from its textual value. `workers` and `output_dir` are
    /// accepted but belong to the invocation, not the run, and are ignored.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "knowledge_base" => self.knowledge_base = path(value),
            "input" => self.input = path(value),
            "labels" => self.labels = path(value),
            "outcomes" => self.outcomes = path(value),
            "window_cutoff" => self.window_cutoff = optional(key, value)?,
            "max_sampling_gap" => self.max_sampling_gap = optional(key, value)?,
            "max_gap" => self.max_gap = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "lexicon_cap" => self.lexicon_cap = parse(key, value)?,
            "universe" => {
                self.universe = match value {
                    "observed" => UniverseMode::Observed,
                    "full" => UniverseMode::Full,
                    _ => return Err(Error::Config(format!("`universe` must be `observed` or `full`, got `{value}`"))),
                }
            }
            "min_support" => self.min_support = parse(key, value)?,
            "lambda_init" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config("`lambda_init` takes three comma-separated numbers".into()));
                }
                for (slot, p) in self.lambda_init.iter_mut().zip(parts) {
                    *slot = parse(key, p)?;
                }
            }
            "tol" => self.tol = parse(key, value)?,
            "max_iter" => self.max_iter = parse(key, value)?,
            "lambda_cap" => self.lambda_cap = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "symmetric" => self.symmetric = parse(key, value)?,
            "k_neighbors" => self.k_neighbors = parse(key, value)?,
            "max_clusters" => self.max_clusters = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "sampling_rate" => self.sampling_rate = parse(key, value)?,
            "d_max" => self.d_max = parse(key, value)?,
            "w_slack" => self.w_slack = optional(key, value)?,
            "max_features" => self.max_features = optional(key, value)?,
            "feature_counts" => self.feature_counts = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "workers" | "output_dir" => {}
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document over the current values. Blank lines
    /// and `#` comments are skipped; unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Config(format!("{source}:{}: {m}", n + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at("expected `key = value`".into()))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => at(m),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.max_gap.is_finite() && self.max_gap >= 0.0) {
            return fail("max_gap must be a non-negative number of seconds");
        }
        if self.window_cutoff.is_some_and(|c| !(c.is_finite() && c >= 0.0)) {
            return fail("window_cutoff must be non-negative");
        }
        if self.max_sampling_gap.is_some_and(|g| !(g.is_finite() && g > 0.0)) {
            return fail("max_sampling_gap must be positive");
        }
        if !(1..=8).contains(&self.k_max) {
            return fail("k_max must lie in 1..=8");
        }
        if self.lexicon_cap == 0 {
            return fail("lexicon_cap must be positive");
        }
        if !(self.min_support > 0.0 && self.min_support <= 1.0) {
            return fail("min_support must lie in (0, 1]");
        }
        if !(self.lambda_cap.is_finite() && self.lambda_cap > 0.0) {
            return fail("lambda_cap must be positive");
        }
        if self.lambda_init.iter().any(|l| !(l.is_finite() && (0.0..=self.lambda_cap).contains(l))) {
            return fail("lambda_init must lie in [0, lambda_cap]");
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return fail("tol must be positive");
        }
        if self.max_iter == 0 {
            return fail("max_iter must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail("epsilon must lie in (0, 1)");
        }
        if self.k_neighbors == 0 || self.max_clusters == 0 || self.restarts == 0 {
            return fail("k_neighbors, max_clusters and restarts must be positive");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return fail("sampling_rate must lie in (0, 1]");
        }
        if self.max_features == Some(0) {
            return fail("max_features must be positive");
        }
        if self.d_max > 6 {
            return fail("d_max must lie in 0..=6");
        }
        Ok(())
    }

    /// The configuration as a `key = value` document that [`apply_text`]
    /// reads back to the same value.
    ///
    /// [`apply_text`]: PipelineConfig::apply_text
    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map_or_else(|| "none".to_owned(), |p| p.display().to_string());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("knowledge_base", p(&self.knowledge_base));
        kv("input", p(&self.input));
        kv("labels", p(&self.labels));
        kv("outcomes", p(&self.outcomes));
        kv("window_cutoff", show(&self.window_cutoff));
        kv("max_sampling_gap", show(&self.max_sampling_gap));
        kv("max_gap", self.max_gap.to_string());
        kv("k_max", self.k_max.to_string());
        kv("lexicon_cap", self.lexicon_cap.to_string());
        kv(
            "universe",
            match self.universe {
                UniverseMode::Observed => "observed",
                UniverseMode::Full => "full",
            }
            .to_owned(),
        );
        kv("min_support", self.min_support.to_string());
        kv("lambda_init", self.lambda_init.map(|l| l.to_string()).join(", "));
        kv("tol", self.tol.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("lambda_cap", self.lambda_cap.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("symmetric", self.symmetric.to_string());
        kv("k_neighbors", self.k_neighbors.to_string());
        kv("max_clusters", self.max_clusters.to_string());
        kv("restarts", self.restarts.to_string());
        kv("sampling_rate", self.sampling_rate.to_string());
        kv("d_max", self.d_max.to_string());
        kv("w_slack", show(&self.w_slack));
        kv("max_features", show(&self.max_features));
        kv("feature_counts", self.feature_counts.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    pub fn qig_options(&self) -> QigOptions {
        QigOptions {
            max_gap: self.max_gap,
            ..QigOptions::default()
        }
    }

    pub fn lexicon_options(&self) -> LexiconOptions {
        LexiconOptions {
            k_max: self.k_max,
            cap: self.lexicon_cap,
        }
    }

    pub fn discovery_options(&self) -> DiscoveryOptions {
        DiscoveryOptions {
            min_support: self.min_support,
            epsilon: self.epsilon,
            em: EmOptions {
                init: ModelParams::from_array(self.lambda_init),
                tol: self.tol,
                max_iter: self.max_iter,
                lambda_cap: self.lambda_cap,
                ..EmOptions::default()
            },
            cluster: ClusterOptions {
                k_neighbors: self.k_neighbors,
                max_clusters: self.max_clusters,
                restarts: self.restarts,
                seed: self.seed,
            },
            similarity: SimilarityOptions { symmetric: self.symmetric },
        }
    }

    pub fn tolerance(&self) -> MatchTolerance {
        MatchTolerance {
            d_max: self.d_max,
            w_slack: self.w_slack,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set("lambda_init", "0.5, 1, 2").unwrap();
        cfg.set("w_slack", "3").unwrap();
        cfg.set("input", "data/samples.csv").unwrap();
        cfg.set("universe", "full").unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.to_text(), "t").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_ranges_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.set("gap", "1"), Err(Error::Config(_))));
        match cfg.apply_text("seed = 1\nbogus = 2\n", "c.txt") {
            Err(Error::Config(m)) => assert_eq!(m, "c.txt:2: unknown key `bogus`"),
            other => panic!("{other:?}"),
        }
        cfg.min_support = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.sampling_rate = 1.5;
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# run settings\n\nseed = 9  # fixed\nmax_features = 39\n", "c").unwrap();
        assert_eq!((cfg.seed, cfg.max_features), (9, Some(39)));
    }
}
