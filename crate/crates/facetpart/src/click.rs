//! Click-probability models estimated from training logs.
//!
//! The mixture model blends per-query click counts with whole-log
//! ("category") click counts: `p(e) ∝ λ p_q(e) + (1-λ) p_cate(e)`.
//! A component with no observations for an impression simply vanishes,
//! and an impression with no signal at all falls back to uniform.
//! The rank-based alternative needs no training: `p(e) ∝ 1/rank(e)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{Impression, SearchLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickModelKind {
    Mixture,
    RankBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub kind: ClickModelKind,
    pub lambda: f64,
    /// query_id -> entity_id -> click count.
    pub query_counts: BTreeMap<String, BTreeMap<String, u64>>,
    /// entity_id -> click count over the whole training log.
    pub category_counts: BTreeMap<String, u64>,
}

impl ClickModel {
    /// The untrained `p(e) ∝ 1/rank(e)` model.
    pub fn rank_based() -> ClickModel {
        ClickModel {
            kind: ClickModelKind::RankBased,
            lambda: 0.0,
            query_counts: BTreeMap::new(),
            category_counts: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serializing click model: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ClickModel> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }
}

/// Tabulate click counts from a training log into a mixture model.
pub fn fit_click_model(train: &SearchLog, lambda: f64) -> Result<ClickModel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0,1], got {lambda}")));
    }
    if train.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut query_counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut category_counts: BTreeMap<String, u64> = BTreeMap::new();
    for imp in &train.impressions {
        *query_counts
            .entry(imp.query_id.clone())
            .or_default()
            .entry(imp.clicked.clone())
            .or_default() += 1;
        *category_counts.entry(imp.clicked.clone()).or_default() += 1;
    }
    Ok(ClickModel {
        kind: ClickModelKind::Mixture,
        lambda,
        query_counts,
        category_counts,
    })
}

/// Click probability for each *valued* entity of an impression, aligned
/// with `impression.valued_entities()` order. Always sums to 1.
pub fn click_probabilities(model: &ClickModel, impression: &Impression) -> Result<Vec<f64>> {
    let valued: Vec<_> = impression.valued_entities().collect();
    if valued.is_empty() {
        return Err(Error::Infeasible(format!(
            "query {}: no valued entities to assign probabilities to",
            impression.query_id
        )));
    }

    let raw: Vec<f64> = match model.kind {
        ClickModelKind::RankBased => valued.iter().map(|e| 1.0 / e.rank as f64).collect(),
        ClickModelKind::Mixture => {
            let by_query = model.query_counts.get(&impression.query_id);
            let q_counts: Vec<f64> = valued
                .iter()
                .map(|e| by_query.and_then(|m| m.get(&e.id)).copied().unwrap_or(0) as f64)
                .collect();
            let c_counts: Vec<f64> = valued
                .iter()
                .map(|e| model.category_counts.get(&e.id).copied().unwrap_or(0) as f64)
                .collect();
            let q_total: f64 = q_counts.iter().sum();
            let c_total: f64 = c_counts.iter().sum();
            (0..valued.len())
                .map(|i| {
                    let p_q = if q_total > 0.0 { q_counts[i] / q_total } else { 0.0 };
                    let p_c = if c_total > 0.0 { c_counts[i] / c_total } else { 0.0 };
                    model.lambda * p_q + (1.0 - model.lambda) * p_c
                })
                .collect()
        }
    };

    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Ok(raw.into_iter().map(|p| p / total).collect())
    } else {
        // nothing in this impression was ever clicked in training
        Ok(vec![1.0 / valued.len() as f64; valued.len()])
    }
}
