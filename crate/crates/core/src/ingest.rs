//! Reading long-format sample files, outcome labels and outcome times.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::abstraction::{ObjectSeries, Sample};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    /// Drop samples within this many seconds of the object's outcome time.
    pub cutoff: Option<f64>,
    /// Outcome time per object, in seconds.
    pub outcome_times: BTreeMap<String, f64>,
}

/// Epoch seconds, RFC 3339, or `YYYY-MM-DD[ T]HH:MM:SS[.f]` / `YYYY-MM-DD`
/// read as UTC.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(x) = s.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            let t = t.and_utc();
            return Some(t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp() as f64)
}

fn columns(headers: &csv::StringRecord, wanted: &[&str], source: &str) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            headers.iter().position(|h| h.trim() == *w).ok_or_else(|| Error::Parse {
                path: source.to_owned(),
                line: 1,
                message: format!("missing column `{w}`"),
            })
        })
        .collect()
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Parses rows `object_id,variable,timestamp,value` into sorted per-object
/// series. Duplicate (object, variable, timestamp) rows keep the first value.
pub fn read_samples(r: impl Read, source: &str, kb: &KnowledgeBase, options: &IngestOptions) -> Result<Vec<ObjectSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let cols = columns(&headers, &["object_id", "variable", "timestamp", "value"], source)?;
    let mut objects: BTreeMap<String, BTreeMap<String, Vec<(f64, f64, usize)>>> = BTreeMap::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let field = |i: usize| rec.get(cols[i]).unwrap_or("");
        let bad = |message: String| Error::Parse {
            path: source.to_owned(),
            line,
            message,
        };
        let object = field(0);
        if object.is_empty() {
            return Err(bad("empty object_id".into()));
        }
        let variable = field(1);
        if !kb.contains(variable) {
            return Err(Error::UnknownVariable {
                path: source.to_owned(),
                line,
                variable: variable.to_owned(),
            });
        }
        let t = parse_timestamp(field(2)).ok_or_else(|| bad(format!("unreadable timestamp `{}`", field(2))))?;
        let v: f64 = field(3)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("value `{}` is not a finite number", field(3))))?;
        if let (Some(cut), Some(&outcome)) = (options.cutoff, options.outcome_times.get(object)) {
            if t > outcome - cut {
                continue;
            }
        }
        objects
            .entry(object.to_owned())
            .or_default()
            .entry(variable.to_owned())
            .or_default()
            .push((t, v, line));
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput(source.to_owned()));
    }
    Ok(objects
        .into_iter()
        .map(|(object_id, vars)| {
            let variables = vars
                .into_iter()
                .map(|(var, mut pts)| {
                    // Stable: the first row of a duplicate timestamp wins.
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut out: Vec<Sample> = Vec::with_capacity(pts.len());
                    for (t, v, line) in pts {
                        if out.last().is_some_and(|s| s.t == t) {
                            log::warn!("{source}:{line}: duplicate sample for `{object_id}` / `{var}` at {t}, keeping the first");
                            continue;
                        }
                        out.push(Sample::new(t, v));
                    }
                    (var, out)
                })
                .collect();
            ObjectSeries { object_id, variables }
        })
        .collect())
}

pub fn ingest(path: impl AsRef<Path>, kb: &KnowledgeBase, options: &IngestOptions) -> Result<Vec<ObjectSeries>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(std::io::BufReader::new(f), &path.display().to_string(), kb, options)
}

/// Rows `object_id,variable,timestamp,value`, objects and variables in order.
pub fn write_samples(w: impl Write, objects: &[ObjectSeries]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["object_id", "variable", "timestamp", "value"])?;
    for o in objects {
        for (v, samples) in &o.variables {
            for s in samples {
                out.write_record([o.object_id.as_str(), v.as_str(), &s.t.to_string(), &s.v.to_string()])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<samples>", e))?;
    Ok(())
}

fn read_keyed<T>(path: &Path, value_column: &str, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<BTreeMap<String, T>> {
    let source = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(std::io::BufReader::new(f));
    let headers = rdr.headers()?.clone();
    let cols = columns(&headers, &["object_id", value_column], &source)?;
    let mut out = BTreeMap::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let id = rec.get(cols[0]).unwrap_or("").to_owned();
        let raw = rec.get(cols[1]).unwrap_or("");
        let value = parse(raw).ok_or_else(|| Error::Parse {
            path: source.clone(),
            line,
            message: format!("unreadable {what} `{raw}`"),
        })?;
        if let Some(first) = lines.get(&id) {
            return Err(Error::Parse {
                path: source.clone(),
                line,
                message: format!("object `{id}` already listed on line {first}"),
            });
        }
        lines.insert(id.clone(), line);
        out.insert(id, value);
    }
    Ok(out)
}

/// Rows `object_id,label`; labels are 1/0 or true/false.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, bool>> {
    read_keyed(
        path.as_ref(),
        "label",
        |s| match s.to_ascii_lowercase().as_str() {
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            _ => None,
        },
        "label",
    )
}

/// Rows `object_id,outcome_time`.
pub fn read_outcome_times(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    read_keyed(path.as_ref(), "outcome_time", parse_timestamp, "timestamp")
}

pub fn write_labels(w: impl Write, labels: &BTreeMap<String, bool>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["object_id", "label"])?;
    for (id, &l) in labels {
        out.write_record([id.as_str(), if l { "1" } else { "0" }])?;
    }
    out.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::default_icu()
    }

    #[test]
    fn three_rows_one_series() {
        let csv = "object_id,variable,timestamp,value\np1,Heart Rate,0,70\np1,Heart Rate,60,71\np1,Heart Rate,120,72\n";
        let objs = read_samples(csv.as_bytes(), "t.csv", &kb(), &IngestOptions::default()).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].variables.len(), 1);
        assert_eq!(objs[0].variables["Heart Rate"].len(), 3);
    }

    #[test]
    fn unknown_variable_names_the_line() {
        let csv = "object_id,variable,timestamp,value\np1,Heart Rate,0,70\np1,Mood,60,1\n";
        match read_samples(csv.as_bytes(), "t.csv", &kb(), &IngestOptions::default()) {
            Err(Error::UnknownVariable { line, variable, .. }) => assert_eq!((line, variable.as_str()), (3, "Mood")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsorted_equals_sorted() {
        let sorted = "object_id,variable,timestamp,value\np1,Heart Rate,0,70\np1,Heart Rate,60,71\np1,Heart Rate,120,72\n";
        let shuffled = "object_id,variable,timestamp,value\np1,Heart Rate,120,72\np1,Heart Rate,0,70\np1,Heart Rate,60,71\n";
        let a = read_samples(sorted.as_bytes(), "a", &kb(), &IngestOptions::default()).unwrap();
        let b = read_samples(shuffled.as_bytes(), "b", &kb(), &IngestOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicates_keep_first_and_bad_values_fail() {
        let csv = "object_id,variable,timestamp,value\np1,Heart Rate,0,70\np1,Heart Rate,0,99\np1,Heart Rate,60,71\n";
        let objs = read_samples(csv.as_bytes(), "t", &kb(), &IngestOptions::default()).unwrap();
        assert_eq!(objs[0].variables["Heart Rate"][0].v, 70.0);
        let csv = "object_id,variable,timestamp,value\np1,Heart Rate,0,NaN\n";
        assert!(matches!(
            read_samples(csv.as_bytes(), "t", &kb(), &IngestOptions::default()),
            Err(Error::Parse { line: 2, .. })
        ));
        let csv = "object_id,variable,timestamp,value\n";
        assert!(matches!(
            read_samples(csv.as_bytes(), "t", &kb(), &IngestOptions::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("3600"), Some(3600.0));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00Z"), Some(3600.0));
        assert_eq!(parse_timestamp("1970-01-01 01:00:00"), Some(3600.0));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86400.0));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn cutoff_drops_samples_near_outcome() {
        let csv = "object_id,variable,timestamp,value\np1,Heart Rate,0,70\np1,Heart Rate,3600,71\np1,Heart Rate,36000,72\n";
        let opts = IngestOptions {
            cutoff: Some(8.0 * 3600.0),
            outcome_times: [("p1".to_owned(), 36000.0)].into(),
        };
        let objs = read_samples(csv.as_bytes(), "t", &kb(), &opts).unwrap();
        assert_eq!(objs[0].variables["Heart Rate"].len(), 2);
    }
}
