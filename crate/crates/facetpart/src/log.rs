//! Search-log data model: impressions, validation, ingestion and the
//! time-based train/test split.
//!
//! A log is stored on disk as one JSON record per line:
//!
//! ```text
//! {"query_id":"q1","ts":100,"entities":[{"id":"a","value":250.0,"rank":1}],"clicked":"a"}
//! ```
//!
//! `value` may be absent for entities that lack the numerical facet.
//! Records without a click, or whose clicked entity has no facet value,
//! are dropped at ingestion and counted — a partition can never be
//! scored against them.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retrieved entity: an opaque id, its rank in the result list and
/// the (optional) numerical facet value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub rank: u32,
}

/// One logged query event: the ranked result list together with the
/// first-clicked entity and an optional per-query feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub query_id: String,
    pub ts: i64,
    /// Entities ordered by rank (ranks are a permutation of `1..=len`).
    pub entities: Vec<Entity>,
    /// Id of the first-clicked entity.
    pub clicked: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl Impression {
    /// Entities that carry a facet value, in rank order.
    pub fn valued_entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.value.is_some())
    }

    /// Facet values of the valued entities, in rank order.
    pub fn facet_values(&self) -> Vec<f64> {
        self.valued_entities().map(|e| e.value.unwrap()).collect()
    }

    pub fn clicked_entity(&self) -> &Entity {
        self.entities
            .iter()
            .find(|e| e.id == self.clicked)
            .expect("validated impression always contains its clicked entity")
    }

    /// Facet value of the clicked entity.
    pub fn clicked_value(&self) -> Result<f64> {
        self.clicked_entity()
            .value
            .ok_or_else(|| Error::MissingClickedValue {
                query_id: self.query_id.clone(),
            })
    }

    fn validate(&self) -> Result<()> {
        if self.entities.is_empty() {
            return Err(Error::Validation {
                query_id: self.query_id.clone(),
                msg: "impression has no entities".into(),
            });
        }
        let n = self.entities.len() as u32;
        let mut seen = HashSet::new();
        for e in &self.entities {
            if e.rank < 1 || e.rank > n || !seen.insert(e.rank) {
                return Err(Error::Validation {
                    query_id: self.query_id.clone(),
                    msg: format!("ranks are not a permutation of 1..={n} (offending rank {})", e.rank),
                });
            }
            if let Some(v) = e.value {
                if !v.is_finite() {
                    return Err(Error::Validation {
                        query_id: self.query_id.clone(),
                        msg: format!("entity {} has non-finite value {v}", e.id),
                    });
                }
            }
        }
        let matches = self.entities.iter().filter(|e| e.id == self.clicked).count();
        if matches != 1 {
            return Err(Error::Validation {
                query_id: self.query_id.clone(),
                msg: format!("clicked id {:?} matches {matches} entities, expected exactly 1", self.clicked),
            });
        }
        Ok(())
    }
}

/// Summary statistics of a log. `n0` is the number of distinct candidate
/// ratios `j / |E^i|` the log induces, which also sizes the cached CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStats {
    /// Number of impressions.
    pub n: usize,
    /// Mean result-list length.
    pub m: f64,
    /// Number of distinct candidate ratios across impression sizes.
    pub n0: usize,
}

/// A validated collection of clicked impressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub impressions: Vec<Impression>,
    pub stats: LogStats,
}

impl SearchLog {
    /// Build a log from validated impressions. Fails on an empty set.
    pub fn new(impressions: Vec<Impression>) -> Result<SearchLog> {
        if impressions.is_empty() {
            return Err(Error::EmptyLog);
        }
        let stats = compute_stats(&impressions);
        Ok(SearchLog { impressions, stats })
    }

    pub fn len(&self) -> usize {
        self.impressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impressions.is_empty()
    }

    /// Serialize as one JSON record per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for imp in &self.impressions {
            serde_json::to_writer(&mut w, imp).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }
}

fn compute_stats(impressions: &[Impression]) -> LogStats {
    let n = impressions.len();
    let m = impressions.iter().map(|i| i.entities.len()).sum::<usize>() as f64 / n as f64;
    let sizes: HashSet<usize> = impressions
        .iter()
        .map(|i| i.valued_entities().count())
        .collect();
    let mut ratios: Vec<f64> = sizes
        .iter()
        .flat_map(|&v| (1..v).map(move |j| j as f64 / v as f64))
        .collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    LogStats { n, m, n0: ratios.len() }
}

/// Result of parsing a log file: the retained impressions plus counts of
/// records dropped by the click-filter rules.
#[derive(Debug)]
pub struct ParsedLog {
    pub log: SearchLog,
    /// Records with no clicked entity.
    pub dropped_no_click: usize,
    /// Records whose clicked entity lacks a facet value.
    pub dropped_missing_value: usize,
}

/// Raw on-disk record. `clicked` is optional here: clickless records are
/// legal input but are dropped rather than retained.
#[derive(Deserialize)]
struct RawRecord {
    query_id: String,
    ts: i64,
    entities: Vec<Entity>,
    #[serde(default)]
    clicked: Option<String>,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

/// Parse a line-delimited log from a reader.
pub fn parse_log_from<R: Read>(r: R) -> Result<ParsedLog> {
    let reader = BufReader::new(r);
    let mut impressions = Vec::new();
    let mut dropped_no_click = 0usize;
    let mut dropped_missing_value = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let Some(clicked) = raw.clicked else {
            dropped_no_click += 1;
            continue;
        };
        let mut imp = Impression {
            query_id: raw.query_id,
            ts: raw.ts,
            entities: raw.entities,
            clicked,
            features: raw.features,
        };
        imp.validate()?;
        imp.entities.sort_by_key(|e| e.rank);
        if imp.clicked_entity().value.is_none() {
            dropped_missing_value += 1;
            continue;
        }
        impressions.push(imp);
    }

    Ok(ParsedLog {
        log: SearchLog::new(impressions)?,
        dropped_no_click,
        dropped_missing_value,
    })
}

/// Parse a line-delimited log file, validating every record.
pub fn parse_log(path: impl AsRef<Path>) -> Result<ParsedLog> {
    parse_log_from(std::fs::File::open(path)?)
}

/// Split a log into (earlier, later) parts at the `⌈fraction·n⌉`-th
/// impression in timestamp order. Ties keep their input order, so the
/// split is deterministic on logs with repeated timestamps.
pub fn split_by_time(log: &SearchLog, train_fraction: f64) -> Result<(SearchLog, SearchLog)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let n = log.impressions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| log.impressions[i].ts); // stable: ties keep input order

    let target = train_fraction * n as f64;
    let cut = if (target - target.round()).abs() < 1e-9 {
        target.round() as usize
    } else {
        target.ceil() as usize
    }
    .min(n);

    let train: Vec<Impression> = order[..cut].iter().map(|&i| log.impressions[i].clone()).collect();
    let test: Vec<Impression> = order[cut..].iter().map(|&i| log.impressions[i].clone()).collect();

    let train = SearchLog::new(train)?;
    let test = match SearchLog::new(test) {
        Ok(l) => l,
        Err(Error::EmptyLog) => SearchLog {
            impressions: Vec::new(),
            stats: LogStats { n: 0, m: 0.0, n0: 0 },
        },
        Err(e) => return Err(e),
    };
    Ok((train, test))
}
