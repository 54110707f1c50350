//! Click-quantile statistics and the cached empirical CDF backing the
//! surrogate objective.
//!
//! For each impression, `z` is the fraction of valued entities whose
//! value does not exceed the clicked one. Caching the empirical CDF of
//! the training `z`'s over the candidate-ratio grid turns one surrogate
//! evaluation into `k-1` binary searches instead of a full recount, so
//! a derivative-free optimizer can afford thousands of evaluations.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::log::{Impression, SearchLog};
use crate::partition::RatioVector;

/// Fraction of valued entities with value `<=` the clicked value.
/// Always lies in `(0, 1]`.
pub fn compute_z(impression: &Impression) -> Result<f64> {
    let clicked = impression.clicked_value()?;
    let mut total = 0usize;
    let mut below = 0usize;
    for e in impression.valued_entities() {
        total += 1;
        if e.value.unwrap() <= clicked {
            below += 1;
        }
    }
    Ok(below as f64 / total as f64)
}

/// Cached empirical CDF `F_n(r) = #{z < r} / n`, tabulated on the sorted
/// candidate-ratio grid so lookups cost `O(log n0)` comparisons.
///
/// The comparison counter exists to audit that cost; it does not affect
/// results.
#[derive(Debug)]
pub struct EmpiricalCdf {
    x_sorted: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    z_sorted: Vec<f64>,
    comparisons: AtomicU64,
}

impl Clone for EmpiricalCdf {
    fn clone(&self) -> Self {
        EmpiricalCdf {
            x_sorted: self.x_sorted.clone(),
            y: self.y.clone(),
            n: self.n,
            z_sorted: self.z_sorted.clone(),
            comparisons: AtomicU64::new(0),
        }
    }
}

impl EmpiricalCdf {
    /// Build the cache from raw parts: the impression sizes that induce
    /// the candidate-ratio grid (`j/size` for `j = 1..size`), and the
    /// observed `z` values.
    pub fn from_parts(candidate_sizes: &[usize], zs: &[f64]) -> Result<EmpiricalCdf> {
        if zs.is_empty() {
            return Err(Error::EmptyLog);
        }
        if let Some(bad) = zs.iter().find(|z| !(**z > 0.0 && **z <= 1.0)) {
            return Err(Error::InvalidConfig(format!("z values must lie in (0,1], got {bad}")));
        }
        let mut sizes = candidate_sizes.to_vec();
        sizes.sort_unstable();
        sizes.dedup();
        let mut x_sorted: Vec<f64> = sizes
            .iter()
            .flat_map(|&v| (1..v).map(move |j| j as f64 / v as f64))
            .collect();
        x_sorted.sort_by(f64::total_cmp);
        x_sorted.dedup();

        let mut z_sorted = zs.to_vec();
        z_sorted.sort_by(f64::total_cmp);

        let n = z_sorted.len();
        let y = x_sorted
            .iter()
            .map(|&x| z_sorted.partition_point(|&z| z < x) as f64 / n as f64)
            .collect();

        Ok(EmpiricalCdf {
            x_sorted,
            y,
            n,
            z_sorted,
            comparisons: AtomicU64::new(0),
        })
    }

    /// Build from a training log (each impression contributes its `z`
    /// and its valued-entity count to the candidate grid).
    pub fn from_log(log: &SearchLog) -> Result<EmpiricalCdf> {
        let mut sizes = Vec::with_capacity(log.len());
        let mut zs = Vec::with_capacity(log.len());
        for imp in &log.impressions {
            sizes.push(imp.valued_entities().count());
            zs.push(compute_z(imp)?);
        }
        EmpiricalCdf::from_parts(&sizes, &zs)
    }

    /// `F_n` at the largest cached ratio `<= r`; zero below the grid.
    pub fn lookup(&self, r: f64) -> f64 {
        let mut lo = 0usize;
        let mut hi = self.x_sorted.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            self.comparisons.fetch_add(1, Ordering::Relaxed);
            if self.x_sorted[mid] <= r {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo == 0 {
            0.0
        } else {
            self.y[lo - 1]
        }
    }

    pub fn x_sorted(&self) -> &[f64] {
        &self.x_sorted
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Number of training samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of cached candidate ratios.
    pub fn n0(&self) -> usize {
        self.x_sorted.len()
    }

    pub fn z_sorted(&self) -> &[f64] {
        &self.z_sorted
    }

    /// Comparisons spent in `lookup` since the last reset.
    pub fn comparison_count(&self) -> u64 {
        self.comparisons.load(Ordering::Relaxed)
    }

    pub fn reset_comparison_count(&self) {
        self.comparisons.store(0, Ordering::Relaxed);
    }
}

/// Cache the empirical CDF of a training log (Algorithm 1).
pub fn cache_cdf(train: &SearchLog) -> Result<EmpiricalCdf> {
    EmpiricalCdf::from_log(train)
}

/// Surrogate objective `C_n(R) = Σ_j Δr_j (F_n(r_j) - F_n(r_{j-1}))`
/// with `F_n(0) = 0` and `F_n(1) = 1`.
pub fn surrogate_cn(cdf: &EmpiricalCdf, ratios: &RatioVector) -> f64 {
    let rs = ratios.ratios();
    let mut total = 0.0;
    let mut prev_r = 0.0;
    let mut prev_f = 0.0;
    for &r in rs {
        let f = cdf.lookup(r);
        total += (r - prev_r) * (f - prev_f);
        prev_r = r;
        prev_f = f;
    }
    total += (1.0 - prev_r) * (1.0 - prev_f);
    total
}

/// Uncached reference path: recount `F_n` from the raw `z` values for
/// every boundary, tallying the comparisons spent. Used to audit the
/// cache's cost advantage and its fidelity.
pub fn surrogate_cn_recount(zs: &[f64], ratios: &RatioVector, comparisons: &mut u64) -> f64 {
    let n = zs.len() as f64;
    let mut count_below = |r: f64| -> f64 {
        let mut c = 0usize;
        for &z in zs {
            *comparisons += 1;
            if z < r {
                c += 1;
            }
        }
        c as f64 / n
    };
    let rs = ratios.ratios();
    let mut total = 0.0;
    let mut prev_r = 0.0;
    let mut prev_f = 0.0;
    for &r in rs {
        let f = count_below(r);
        total += (r - prev_r) * (f - prev_f);
        prev_r = r;
        prev_f = f;
    }
    total += (1.0 - prev_r) * (1.0 - prev_f);
    total
}

/// Per-impression surrogate cost `C^i(R)`: the width of the ratio range
/// containing `z`, with boundary hits assigned to the right range (the
/// same strict-`<` convention as `F_n`).
pub fn per_impression_cost(ratios: &RatioVector, z: f64) -> f64 {
    let rs = ratios.ratios();
    let j = rs.partition_point(|&r| r <= z);
    let lo = if j == 0 { 0.0 } else { rs[j - 1] };
    let hi = if j == rs.len() { 1.0 } else { rs[j] };
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::Entity;
    use rand::{Rng, SeedableRng};

    fn impression(values_by_rank: &[f64], clicked_idx: usize) -> Impression {
        let entities = values_by_rank
            .iter()
            .enumerate()
            .map(|(i, &v)| Entity {
                id: format!("e{}", i + 1),
                value: Some(v),
                rank: i as u32 + 1,
            })
            .collect();
        Impression {
            query_id: "q".into(),
            ts: 0,
            entities,
            clicked: format!("e{}", clicked_idx + 1),
            features: None,
        }
    }

    #[test]
    fn z_counts_values_at_or_below_clicked() {
        let imp = impression(&[100.0, 300.0, 200.0, 400.0], 1);
        assert_eq!(compute_z(&imp).unwrap(), 0.75);
    }

    #[test]
    fn z_of_unique_minimum_is_one_over_n() {
        let imp = impression(&[7.0, 5.0, 9.0, 6.0, 8.0], 1);
        assert_eq!(compute_z(&imp).unwrap(), 0.2);
    }

    #[test]
    fn z_with_all_equal_values_is_one() {
        let imp = impression(&[4.0, 4.0, 4.0], 2);
        assert_eq!(compute_z(&imp).unwrap(), 1.0);
    }

    #[test]
    fn cache_matches_algorithm_walkthrough() {
        // one impression of size 4 with z = 3/4
        let cdf = EmpiricalCdf::from_parts(&[4], &[0.75]).unwrap();
        assert_eq!(cdf.x_sorted(), &[0.25, 0.5, 0.75]);
        assert_eq!(cdf.y(), &[0.0, 0.0, 0.0]);
        assert_eq!(cdf.n0(), 3);
    }

    #[test]
    fn cache_counts_strictly_below() {
        let cdf = EmpiricalCdf::from_parts(&[2, 2], &[0.5, 1.0]).unwrap();
        assert_eq!(cdf.x_sorted(), &[0.5]);
        assert_eq!(cdf.y(), &[0.0]);
    }

    #[test]
    fn cache_tracks_uniform_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let zs: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0f64..1.0).max(1e-12)).collect();
        let cdf = EmpiricalCdf::from_parts(&[200], &zs).unwrap();
        let max_dev = cdf
            .x_sorted()
            .iter()
            .zip(cdf.y())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_dev <= 0.05, "max |y - x| = {max_dev}");
    }

    #[test]
    fn lookup_floors_to_cached_ratio() {
        let cdf = EmpiricalCdf::from_parts(&[4], &[0.75]).unwrap();
        assert_eq!(cdf.lookup(0.3), 0.0); // floors to 1/4
        assert_eq!(cdf.lookup(0.1), 0.0); // below the grid
        assert_eq!(cdf.lookup(0.75), 0.0); // exact hit
        assert_eq!(cdf.lookup(0.9), 0.0); // above the grid: last cached value
    }

    #[test]
    fn lookup_matches_direct_recount_everywhere() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let zs: Vec<f64> = (0..500).map(|_| rng.random_range(0.01f64..1.0)).collect();
        let cdf = EmpiricalCdf::from_parts(&[17, 31, 50], &zs).unwrap();
        for _ in 0..2000 {
            let r = rng.random_range(0.0001f64..0.9999);
            // the cache floors r to the largest candidate <= r
            let floored = match cdf.x_sorted().partition_point(|&x| x <= r) {
                0 => None,
                i => Some(cdf.x_sorted()[i - 1]),
            };
            let expected = match floored {
                None => 0.0,
                Some(x) => zs.iter().filter(|&&z| z < x).count() as f64 / zs.len() as f64,
            };
            assert_eq!(cdf.lookup(r), expected, "r = {r}");
        }
    }

    #[test]
    fn exact_grid_lookups_equal_raw_counts() {
        let zs = [0.2, 0.4, 0.4, 0.9];
        let cdf = EmpiricalCdf::from_parts(&[5], &zs).unwrap();
        for &x in cdf.x_sorted() {
            let direct = zs.iter().filter(|&&z| z < x).count() as f64 / zs.len() as f64;
            assert_eq!(cdf.lookup(x), direct);
        }
    }

    #[test]
    fn surrogate_of_empty_ratio_is_one() {
        let cdf = EmpiricalCdf::from_parts(&[4], &[0.75]).unwrap();
        let r = RatioVector::new(vec![]).unwrap();
        assert_eq!(surrogate_cn(&cdf, &r), 1.0);
    }

    #[test]
    fn surrogate_of_quantile_ratios_is_one_over_k() {
        let zs: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let cdf = EmpiricalCdf::from_parts(&[1000], &zs).unwrap();
        for k in 2..=5 {
            let c = surrogate_cn(&cdf, &RatioVector::quantile(k));
            assert!((c - 1.0 / k as f64).abs() < 2e-3, "k={k}: {c}");
        }
    }

    #[test]
    fn surrogate_matches_quadratic_identity_on_uniform_grid() {
        let n = 10_000usize;
        let zs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let cdf = EmpiricalCdf::from_parts(&[n], &zs).unwrap();
        for i in 1..100 {
            let r1 = i as f64 / 100.0;
            let c = surrogate_cn(&cdf, &RatioVector::new(vec![r1]).unwrap());
            let ideal = 2.0 * r1 * r1 - 2.0 * r1 + 1.0;
            assert!((c - ideal).abs() <= 2.0 / n as f64, "r1={r1}: {c} vs {ideal}");
        }
        let c_half = surrogate_cn(&cdf, &RatioVector::new(vec![0.5]).unwrap());
        assert!((c_half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn surrogate_equals_mean_per_impression_cost() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let zs: Vec<f64> = (0..400).map(|_| rng.random_range(0.01f64..1.0)).collect();
        let cdf = EmpiricalCdf::from_parts(&[40], &zs).unwrap();
        // boundaries on the candidate grid so cache and recount agree exactly
        let ratios = RatioVector::new(vec![10.0 / 40.0, 27.0 / 40.0]).unwrap();
        let via_cache = surrogate_cn(&cdf, &ratios);
        let via_costs = zs.iter().map(|&z| per_impression_cost(&ratios, z)).sum::<f64>() / zs.len() as f64;
        assert!((via_cache - via_costs).abs() < 1e-12);
    }

    #[test]
    fn recount_agrees_with_cache_on_grid_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let zs: Vec<f64> = (0..300).map(|_| rng.random_range(0.01f64..1.0)).collect();
        let cdf = EmpiricalCdf::from_parts(&[25], &zs).unwrap();
        let mut comps = 0u64;
        for i in 1..25 {
            let ratios = RatioVector::new(vec![i as f64 / 25.0]).unwrap();
            let a = surrogate_cn(&cdf, &ratios);
            let b = surrogate_cn_recount(&zs, &ratios, &mut comps);
            assert!((a - b).abs() < 1e-12);
        }
        // the trade: every recount evaluation walks all n samples
        assert!(comps >= 24 * 300);
    }

    #[test]
    fn lookup_cost_is_logarithmic() {
        let zs: Vec<f64> = (1..=5000).map(|i| (i as f64) / 5000.0).collect();
        let cdf = EmpiricalCdf::from_parts(&[5000], &zs).unwrap();
        let budget = ((cdf.n0() as f64).log2() + 1.0).ceil() as u64;
        cdf.reset_comparison_count();
        cdf.lookup(0.37);
        assert!(cdf.comparison_count() <= budget, "{} > {budget}", cdf.comparison_count());
    }

    #[test]
    fn normalized_rank_is_bounded_by_its_range_fraction() {
        use crate::metric::refined_rank;
        use crate::partition::{ratio_to_separators, RatioVector};
        use crate::synth::{generate_synthetic, CdfShape, EntityCount, SynthConfig};

        let log = generate_synthetic(&SynthConfig {
            n_queries: 200,
            entities_per_query: EntityCount::Uniform { min: 3, max: 40 },
            value_cdf: CdfShape::Concave,
            click_position_bias: 0.0,
            seed: 13,
            value_range: (10.0, 1010.0),
            catalog_size: None,
            clusters: None,
        })
        .unwrap();
        let ratios = RatioVector::new(vec![0.25, 0.6]).unwrap();
        for imp in &log.impressions {
            let values = imp.facet_values();
            let separators = ratio_to_separators(&values, &ratios).unwrap();
            let rr = refined_rank(imp, &separators).unwrap() as f64;
            let range = separators.range_of(imp.clicked_value().unwrap());
            let in_range = values.iter().filter(|&&v| separators.range_of(v) == range).count();
            let v = values.len() as f64;
            assert!(rr / v <= in_range as f64 / v + 1e-12);
        }
    }

    #[test]
    fn range_fractions_converge_to_the_surrogate() {
        use crate::partition::{ratio_to_separators, RatioVector};
        use crate::synth::{generate_synthetic, CdfShape, EntityCount, SynthConfig};

        let ratios = RatioVector::new(vec![0.3, 0.7]).unwrap();
        let mut gaps = Vec::new();
        for m in [10usize, 100, 1000] {
            let log = generate_synthetic(&SynthConfig {
                n_queries: 300,
                entities_per_query: EntityCount::Fixed { n: m },
                value_cdf: CdfShape::Linear,
                click_position_bias: 0.0,
                seed: 29,
                value_range: (10.0, 1010.0),
                catalog_size: None,
                clusters: None,
            })
            .unwrap();
            let cdf = cache_cdf(&log).unwrap();
            let cn = surrogate_cn(&cdf, &ratios);
            let mean_fraction: f64 = log
                .impressions
                .iter()
                .map(|imp| {
                    let values = imp.facet_values();
                    let separators = ratio_to_separators(&values, &ratios).unwrap();
                    let range = separators.range_of(imp.clicked_value().unwrap());
                    values.iter().filter(|&&v| separators.range_of(v) == range).count() as f64
                        / values.len() as f64
                })
                .sum::<f64>()
                / log.len() as f64;
            gaps.push((mean_fraction - cn).abs());
        }
        assert!(gaps[2] < gaps[0], "gaps did not shrink: {gaps:?}");
        assert!(gaps[2] <= 0.01, "residual gap too large: {gaps:?}");
    }

    #[test]
    fn cdf_from_log_uses_valued_counts() {
        let log = SearchLog::new(vec![impression(&[100.0, 300.0, 200.0, 400.0], 1)]).unwrap();
        let cdf = cache_cdf(&log).unwrap();
        assert_eq!(cdf.x_sorted(), &[0.25, 0.5, 0.75]);
        assert_eq!(cdf.n(), 1);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(EmpiricalCdf::from_parts(&[4], &[]), Err(Error::EmptyLog)));
    }
}
