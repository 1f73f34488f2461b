//! Knowledge base of per-variable state and gradient cutoffs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_KB: &str = include_str!("../data/knowledge_base.csv");

/// Cutoffs for one variable. The Normal range is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub normal_low: f64,
    pub normal_high: f64,
    pub gradient_delta: f64,
}

impl Rule {
    pub fn new(normal_low: f64, normal_high: f64, gradient_delta: f64) -> Self {
        Self {
            normal_low,
            normal_high,
            gradient_delta,
        }
    }

    fn validate(&self, variable: &str) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidRule {
            variable: variable.to_owned(),
            reason: reason.to_owned(),
        };
        if !(self.normal_low.is_finite() && self.normal_high.is_finite() && self.gradient_delta.is_finite()) {
            return Err(invalid("cutoffs must be finite"));
        }
        if self.normal_low >= self.normal_high {
            return Err(invalid("normal_low must be below normal_high"));
        }
        if self.gradient_delta <= 0.0 {
            return Err(invalid("gradient_delta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RuleRecord {
    variable_name: String,
    normal_low: f64,
    normal_high: f64,
    gradient_delta: f64,
}

/// Variable name to cutoff rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    rules: BTreeMap<String, Rule>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// The bundled ICU knowledge base.
    pub fn default_icu() -> Self {
        Self::from_reader(DEFAULT_KB.as_bytes(), "<bundled knowledge base>")
            .expect("bundled knowledge base is valid")
    }

    pub fn insert(&mut self, variable: impl Into<String>, rule: Rule) -> Result<()> {
        let variable = variable.into();
        rule.validate(&variable)?;
        if self.rules.contains_key(&variable) {
            return Err(Error::InvalidRule {
                variable,
                reason: "duplicate rule".into(),
            });
        }
        self.rules.insert(variable, rule);
        Ok(())
    }

    pub fn with_rule(mut self, variable: impl Into<String>, rule: Rule) -> Result<Self> {
        self.insert(variable, rule)?;
        Ok(self)
    }

    pub fn get(&self, variable: &str) -> Option<&Rule> {
        self.rules.get(variable)
    }

    pub fn contains(&self, variable: &str) -> bool {
        self.rules.contains_key(variable)
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Rule)> {
        self.rules.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Keeps only the named variables.
    pub fn restricted_to<'a>(&self, variables: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut out = KnowledgeBase::new();
        for v in variables {
            let rule = self.get(v).ok_or_else(|| Error::InvalidSpec(format!("variable `{v}` is not in the knowledge base")))?;
            out.insert(v, *rule)?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Parses `variable_name,normal_low,normal_high,gradient_delta` records.
    /// Lines starting with `#` are comments.
    pub fn from_reader(reader: impl Read, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut kb = KnowledgeBase::new();
        for record in rdr.deserialize::<RuleRecord>() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::Parse {
                    path: source.to_owned(),
                    line,
                    message: e.to_string(),
                }
            })?;
            kb.insert(
                record.variable_name,
                Rule::new(record.normal_low, record.normal_high, record.gradient_delta),
            )?;
        }
        Ok(kb)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable_name,normal_low,normal_high,gradient_delta\n");
        for (name, r) in &self.rules {
            out.push_str(&format!("{name},{},{},{}\n", r.normal_low, r.normal_high, r.gradient_delta));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_kb_has_every_listed_variable_once() {
        let kb = KnowledgeBase::default_icu();
        assert_eq!(kb.len(), 22);
        let temp = kb.get("Body Temperature").unwrap();
        assert_eq!(*temp, Rule::new(36.0, 38.0, 0.5));
        let gcs = kb.get("Glasgow Coma Scale").unwrap();
        assert_eq!(*gcs, Rule::new(8.0, 12.0, 2.0));
        assert!(kb.get("PCO2").is_some());
    }

    #[test]
    fn rejects_bad_rules() {
        let mut kb = KnowledgeBase::new();
        assert!(kb.insert("x", Rule::new(2.0, 1.0, 1.0)).is_err());
        assert!(kb.insert("x", Rule::new(1.0, 2.0, 0.0)).is_err());
        kb.insert("x", Rule::new(1.0, 2.0, 0.5)).unwrap();
        assert!(kb.insert("x", Rule::new(1.0, 2.0, 0.5)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let kb = KnowledgeBase::default_icu();
        let back = KnowledgeBase::from_reader(kb.to_csv().as_bytes(), "mem").unwrap();
        assert_eq!(kb, back);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "variable_name,normal_low,normal_high,gradient_delta\nA,1,2,0.5\nB,x,2,1\n";
        match KnowledgeBase::from_reader(text.as_bytes(), "kb.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
