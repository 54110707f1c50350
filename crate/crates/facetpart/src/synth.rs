//! Synthetic log generation with a controllable clicked-quantile CDF.
//!
//! The generator's central knob is `value_cdf`: the distribution of the
//! clicked entity's *value quantile* within its result list. As the log
//! grows, the empirical CDF of those quantiles converges to the
//! configured shape, which is what lets desk-scale experiments reproduce
//! the "nearly linear" vs "strongly concave" regimes seen in production
//! click data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{Entity, Impression, SearchLog};

/// Shape of a CDF on [0,1], used both for click-quantile generation and
/// for the true-distribution side of the concentration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CdfShape {
    /// F(r) = r
    Linear,
    /// F(r) = 2r - r^2
    Concave,
    /// F(r) = r^2
    Convex,
    /// Piecewise-linear table of (r, F(r)) points from (0,0) to (1,1).
    Piecewise { points: Vec<(f64, f64)> },
}

impl CdfShape {
    pub fn validate(&self) -> Result<()> {
        if let CdfShape::Piecewise { points } = self {
            let ok = points.len() >= 2
                && points.first() == Some(&(0.0, 0.0))
                && points.last() == Some(&(1.0, 1.0))
                && points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
                && points.iter().all(|p| p.0.is_finite() && p.1.is_finite());
            if !ok {
                return Err(Error::InvalidConfig(
                    "piecewise CDF must be a monotone table from (0,0) to (1,1)".into(),
                ));
            }
        }
        Ok(())
    }

    /// F(r), clamping r into [0,1].
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        match self {
            CdfShape::Linear => r,
            CdfShape::Concave => 2.0 * r - r * r,
            CdfShape::Convex => r * r,
            CdfShape::Piecewise { points } => {
                let i = points.partition_point(|p| p.0 <= r);
                if i == 0 {
                    return 0.0;
                }
                if i == points.len() {
                    return 1.0;
                }
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                y0 + (y1 - y0) * (r - x0) / (x1 - x0)
            }
        }
    }

    /// Generalized inverse F⁻¹(u) for u in [0,1].
    pub fn inverse(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            CdfShape::Linear => u,
            CdfShape::Concave => 1.0 - (1.0 - u).sqrt(),
            CdfShape::Convex => u.sqrt(),
            CdfShape::Piecewise { points } => {
                let i = points.partition_point(|p| p.1 < u);
                if i == 0 {
                    return 0.0;
                }
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i.min(points.len() - 1)];
                if y1 <= y0 {
                    x0
                } else {
                    x0 + (x1 - x0) * (u - y0) / (y1 - y0)
                }
            }
        }
    }
}

/// How result-list lengths are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntityCount {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
}

impl EntityCount {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            EntityCount::Fixed { n } => n >= 1,
            EntityCount::Uniform { min, max } => min >= 1 && min <= max,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("entities_per_query counts must be positive".into()))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        match *self {
            EntityCount::Fixed { n } => n,
            EntityCount::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

/// A query population whose clicks follow its own quantile CDF and whose
/// feature vectors are separable from other clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub weight: f64,
    pub value_cdf: CdfShape,
    pub feature_center: Vec<f64>,
    pub feature_noise: f64,
}

fn default_bias() -> f64 {
    0.0
}

fn default_value_range() -> (f64, f64) {
    (10.0, 1010.0)
}

/// Synthetic log configuration. Deterministic for a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub entities_per_query: EntityCount,
    pub value_cdf: CdfShape,
    /// Exponent of a `rank^(-bias)` tilt on the click distribution.
    /// Zero (the default) leaves clicks purely value-quantile-driven.
    #[serde(default = "default_bias")]
    pub click_position_bias: f64,
    pub seed: u64,
    /// Range facet values are drawn from, uniformly.
    #[serde(default = "default_value_range")]
    pub value_range: (f64, f64),
    /// When set, entity ids are drawn from a fixed catalog `p0..p{size}`
    /// so click counts accumulate across impressions. Otherwise each
    /// impression gets fresh ids.
    #[serde(default)]
    pub catalog_size: Option<usize>,
    /// Optional feature-separable query clusters; each impression draws
    /// its quantile CDF and feature vector from its cluster. Overrides
    /// `value_cdf` when present.
    #[serde(default)]
    pub clusters: Option<Vec<ClusterSpec>>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::InvalidConfig("n_queries must be positive".into()));
        }
        self.entities_per_query.validate()?;
        self.value_cdf.validate()?;
        if !(self.value_range.0.is_finite() && self.value_range.1 > self.value_range.0) {
            return Err(Error::InvalidConfig("value_range must be a non-empty interval".into()));
        }
        if let Some(clusters) = &self.clusters {
            if clusters.is_empty() {
                return Err(Error::InvalidConfig("clusters must be non-empty when present".into()));
            }
            let dim = clusters[0].feature_center.len();
            for c in clusters {
                c.value_cdf.validate()?;
                if c.weight <= 0.0 || !c.weight.is_finite() {
                    return Err(Error::InvalidConfig("cluster weights must be positive".into()));
                }
                if c.feature_center.len() != dim {
                    return Err(Error::InvalidConfig("cluster feature centers must share a dimension".into()));
                }
            }
        }
        Ok(())
    }
}

/// Generate a synthetic search log. The empirical CDF of clicked-value
/// quantiles converges to `value_cdf` as `n_queries` grows.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SearchLog> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cluster_total: f64 = config
        .clusters
        .as_ref()
        .map(|cs| cs.iter().map(|c| c.weight).sum())
        .unwrap_or(0.0);

    let mut impressions = Vec::with_capacity(config.n_queries);
    for q in 0..config.n_queries {
        let (cdf, features) = match &config.clusters {
            None => (&config.value_cdf, None),
            Some(clusters) => {
                let mut pick = rng.random_range(0.0..cluster_total);
                let mut chosen = &clusters[clusters.len() - 1];
                for c in clusters {
                    if pick < c.weight {
                        chosen = c;
                        break;
                    }
                    pick -= c.weight;
                }
                let feats = chosen
                    .feature_center
                    .iter()
                    .map(|&c| c + chosen.feature_noise * rng.random_range(-1.0..1.0))
                    .collect();
                (&chosen.value_cdf, Some(feats))
            }
        };

        let v = config.entities_per_query.sample(&mut rng);
        let values: Vec<f64> = (0..v)
            .map(|_| rng.random_range(config.value_range.0..config.value_range.1))
            .collect();

        // Ranks are a random permutation, independent of value.
        let mut ranks: Vec<u32> = (1..=v as u32).collect();
        for i in (1..v).rev() {
            ranks.swap(i, rng.random_range(0..=i));
        }

        let ids: Vec<String> = match config.catalog_size {
            None => (0..v).map(|e| format!("q{q:06}-e{}", e + 1)).collect(),
            Some(size) => {
                if size < v {
                    return Err(Error::InvalidConfig(format!(
                        "catalog_size {size} smaller than impression size {v}"
                    )));
                }
                let mut chosen = std::collections::HashSet::new();
                let mut ids = Vec::with_capacity(v);
                while ids.len() < v {
                    let idx = rng.random_range(0..size);
                    if chosen.insert(idx) {
                        ids.push(format!("p{idx}"));
                    }
                }
                ids
            }
        };

        // Click weight per value-sorted position t: the quantile mass of
        // ((t-1)/v, t/v] under the cluster CDF, tilted by rank bias.
        let mut order: Vec<usize> = (0..v).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let weights: Vec<f64> = order
            .iter()
            .enumerate()
            .map(|(t0, &e)| {
                let t = t0 + 1;
                let mass = cdf.eval(t as f64 / v as f64) - cdf.eval(t0 as f64 / v as f64);
                let tilt = (ranks[e] as f64).powf(-config.click_position_bias);
                mass * tilt
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let clicked_entity = if total > 0.0 {
            let mut pick = rng.random_range(0.0..total);
            let mut chosen = order[v - 1];
            for (t0, &e) in order.iter().enumerate() {
                if pick < weights[t0] {
                    chosen = e;
                    break;
                }
                pick -= weights[t0];
            }
            chosen
        } else {
            order[rng.random_range(0..v)]
        };

        let entities: Vec<Entity> = (0..v)
            .map(|e| Entity {
                id: ids[e].clone(),
                value: Some(values[e]),
                rank: ranks[e],
            })
            .collect();
        let mut imp = Impression {
            query_id: format!("q{q:06}"),
            ts: q as i64,
            entities,
            clicked: ids[clicked_entity].clone(),
            features,
        };
        imp.entities.sort_by_key(|e| e.rank);
        impressions.push(imp);
    }

    SearchLog::new(impressions)
}
