//! Per-query minimization of the expected refined rank: the exact
//! dynamic program plus the brute-force and greedy references.
//!
//! The expected refined rank of a separator set decomposes into a sum
//! of independent per-range costs, so the optimal cut positions over
//! the distinct-value boundaries form a classic interval DP. Segment
//! costs are precomputed incrementally: extending a segment by entity
//! `x` adds `p(x) * (1 + #above)` for `x` itself plus the probability
//! mass of segment entities ranked below `x`, maintained with a Fenwick
//! tree indexed by rank position.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::metric::SeparatorSet;
use crate::partition::ValueProfile;

/// A partition together with the expected refined rank it achieves.
#[derive(Debug, Clone)]
pub struct PartitionObjective {
    pub separators: SeparatorSet,
    pub objective: f64,
}

/// Expected refined rank of `separators` when entity `i` (in original
/// rank order) has facet value `values[i]` and click probability
/// `probs[i]`.
pub fn expected_rr(values: &[f64], probs: &[f64], separators: &SeparatorSet) -> f64 {
    debug_assert_eq!(values.len(), probs.len());
    let mut counts = vec![0u32; separators.k()];
    let mut total = 0.0;
    for (&v, &p) in values.iter().zip(probs) {
        let range = separators.range_of(v);
        counts[range] += 1;
        total += p * counts[range] as f64;
    }
    total
}

fn check_inputs(values: &[f64], probs: &[f64], k: usize) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Infeasible("no valued entities to partition".into()));
    }
    if values.len() != probs.len() {
        return Err(Error::InvalidConfig(format!(
            "{} values but {} probabilities",
            values.len(),
            probs.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(())
}

// ── segment-cost precomputation ─────────────────────────────────────

struct Fenwick {
    count: Vec<u32>,
    psum: Vec<f64>,
    total_p: f64,
}

impl Fenwick {
    fn new(n: usize) -> Fenwick {
        Fenwick {
            count: vec![0; n + 1],
            psum: vec![0.0; n + 1],
            total_p: 0.0,
        }
    }

    fn clear(&mut self) {
        self.count.fill(0);
        self.psum.fill(0.0);
        self.total_p = 0.0;
    }

    fn add(&mut self, pos: usize, p: f64) {
        let mut i = pos + 1;
        while i < self.count.len() {
            self.count[i] += 1;
            self.psum[i] += p;
            i += i & i.wrapping_neg();
        }
        self.total_p += p;
    }

    /// (#entries, Σp) at positions strictly before `pos`.
    fn prefix(&self, pos: usize) -> (u32, f64) {
        let mut i = pos;
        let (mut c, mut s) = (0u32, 0.0f64);
        while i > 0 {
            c += self.count[i];
            s += self.psum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }
}

/// Entities grouped by distinct value, each as (rank position, p).
fn group_by_distinct(values: &[f64], probs: &[f64], profile: &ValueProfile) -> Vec<Vec<(usize, f64)>> {
    let mut groups = vec![Vec::new(); profile.distinct.len()];
    for (pos, (&v, &p)) in values.iter().zip(probs).enumerate() {
        let idx = profile.distinct.partition_point(|&d| d < v);
        groups[idx].push((pos, p));
    }
    groups
}

/// `cost[a][b]` = expected within-range cost of a range covering
/// distinct values `a..b`, for all `0 <= a < b <= M`, flattened.
fn segment_costs(values: &[f64], probs: &[f64], profile: &ValueProfile) -> Vec<f64> {
    let m = profile.distinct.len();
    let groups = group_by_distinct(values, probs, profile);
    let mut cost = vec![0.0; (m + 1) * (m + 1)];
    let mut fenwick = Fenwick::new(values.len());
    for a in 0..m {
        fenwick.clear();
        let mut running = 0.0;
        for b in (a + 1)..=m {
            for &(pos, p) in &groups[b - 1] {
                let (above, p_before) = fenwick.prefix(pos);
                let p_below = fenwick.total_p - p_before;
                running += p * (1.0 + above as f64) + p_below;
                fenwick.add(pos, p);
            }
            cost[a * (m + 1) + b] = running;
        }
    }
    cost
}

// ── the three partitioners ──────────────────────────────────────────

/// Exact minimization of the expected refined rank by dynamic
/// programming over distinct-value boundaries. Ties resolve to the
/// lexicographically smallest separator sequence. Requests for more
/// ranges than distinct values degrade to the maximum feasible.
#[allow(clippy::needless_range_loop)] // indexed loops mirror the recurrences
pub fn dp_partition(values: &[f64], probs: &[f64], k: usize) -> Result<PartitionObjective> {
    check_inputs(values, probs, k)?;
    let profile = ValueProfile::from_values(values);
    let m = profile.distinct.len();
    let k_eff = k.min(m);
    if k_eff == 1 {
        let separators = SeparatorSet::empty();
        let objective = expected_rr(values, probs, &separators);
        return Ok(PartitionObjective { separators, objective });
    }

    let cost = segment_costs(values, probs, &profile);
    let at = |a: usize, b: usize| cost[a * (m + 1) + b];

    // g[j][a] = minimal cost of covering distinct values a..M with j ranges
    let mut g = vec![vec![f64::INFINITY; m + 1]; k_eff + 1];
    for a in 0..m {
        g[1][a] = at(a, m);
    }
    for j in 2..=k_eff {
        for a in 0..=(m - j) {
            let mut best = f64::INFINITY;
            for b in (a + 1)..=(m - j + 1) {
                let candidate = at(a, b) + g[j - 1][b];
                if candidate < best {
                    best = candidate;
                }
            }
            g[j][a] = best;
        }
    }

    // forward reconstruction: first exact match = smallest boundary,
    // which yields the lexicographically smallest separator sequence
    let mut separators = Vec::with_capacity(k_eff - 1);
    let mut a = 0usize;
    for remaining in (2..=k_eff).rev() {
        let target = g[remaining][a];
        for b in (a + 1)..=(m - remaining + 1) {
            if at(a, b) + g[remaining - 1][b] == target {
                separators.push(profile.midpoint(b - 1));
                a = b;
                break;
            }
        }
    }
    debug_assert_eq!(separators.len(), k_eff - 1);

    Ok(PartitionObjective {
        separators: SeparatorSet::new(separators)?,
        objective: g[k_eff][0],
    })
}

/// Exact optimum by enumerating all cut combinations; the oracle that
/// `dp_partition` is checked against. Same tie rule as the DP.
pub fn brute_force_partition(values: &[f64], probs: &[f64], k: usize, cap: u128) -> Result<PartitionObjective> {
    check_inputs(values, probs, k)?;
    let profile = ValueProfile::from_values(values);
    let m = profile.distinct.len();
    let k_eff = k.min(m);
    let required = crate::grid::combination_count(m - 1, k_eff - 1);
    if required > cap {
        return Err(Error::CapExceeded { required, cap });
    }

    let mut best: Option<PartitionObjective> = None;
    for combo in (0..m - 1).combinations(k_eff - 1) {
        let separators = SeparatorSet::new(combo.iter().map(|&i| profile.midpoint(i)).collect())?;
        let objective = expected_rr(values, probs, &separators);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(PartitionObjective { separators, objective });
        }
    }
    Ok(best.expect("k_eff >= 1 always evaluates at least one combination"))
}

/// Adds one separator at a time, each minimizing the resulting expected
/// refined rank. Generally sub-optimal; kept as a reference.
pub fn greedy_partition(values: &[f64], probs: &[f64], k: usize) -> Result<PartitionObjective> {
    check_inputs(values, probs, k)?;
    let profile = ValueProfile::from_values(values);
    let m = profile.distinct.len();
    let k_eff = k.min(m);

    let mut chosen: Vec<usize> = Vec::new();
    let mut current = PartitionObjective {
        separators: SeparatorSet::empty(),
        objective: expected_rr(values, probs, &SeparatorSet::empty()),
    };
    for _ in 1..k_eff {
        let mut best_step: Option<(usize, PartitionObjective)> = None;
        for cut in 0..m - 1 {
            if chosen.contains(&cut) {
                continue;
            }
            let mut cuts = chosen.clone();
            cuts.push(cut);
            cuts.sort_unstable();
            let separators = SeparatorSet::new(cuts.iter().map(|&i| profile.midpoint(i)).collect())?;
            let objective = expected_rr(values, probs, &separators);
            if best_step.as_ref().is_none_or(|(_, b)| objective < b.objective) {
                best_step = Some((cut, PartitionObjective { separators, objective }));
            }
        }
        let (cut, step) = best_step.expect("at least one unchosen cut remains");
        chosen.push(cut);
        current = step;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const CAP: u128 = 1_000_000;

    // worked example: three entities by rank with p = (0.4, 0.3, 0.3)
    const V3: [f64; 3] = [100.0, 200.0, 300.0];
    const P3: [f64; 3] = [0.4, 0.3, 0.3];

    #[test]
    fn expected_rr_of_both_single_cuts_is_1_3() {
        let s = SeparatorSet::new(vec![150.0]).unwrap();
        assert!((expected_rr(&V3, &P3, &s) - 1.3).abs() < 1e-12);
        let s = SeparatorSet::new(vec![250.0]).unwrap();
        assert!((expected_rr(&V3, &P3, &s) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn singleton_ranges_cost_exactly_one() {
        let s = SeparatorSet::new(vec![150.0, 250.0]).unwrap();
        assert_eq!(expected_rr(&V3, &P3, &s), 1.0);
    }

    #[test]
    fn no_separators_reduce_to_probability_weighted_ranks() {
        let expected = 0.4 + 0.3 * 2.0 + 0.3 * 3.0;
        assert!((expected_rr(&V3, &P3, &SeparatorSet::empty()) - expected).abs() < 1e-12);
    }

    #[test]
    fn objective_is_constant_within_a_segment() {
        // any separator in (200, 300] induces the same partition
        let reference = expected_rr(&V3, &P3, &SeparatorSet::new(vec![250.0]).unwrap());
        for s in [200.0001, 222.2, 299.9, 300.0] {
            let v = expected_rr(&V3, &P3, &SeparatorSet::new(vec![s]).unwrap());
            assert_eq!(v, reference, "separator {s}");
        }
    }

    #[test]
    fn additivity_over_ranges_holds() {
        // independent oracle: rebuild the objective range by range
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.random_range(1..12usize);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 * 10.0).collect();
            let mut probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            let cuts: Vec<f64> = crate::partition::candidate_midpoints(&values)
                .into_iter()
                .filter(|_| rng.random_range(0.0..1.0) < 0.4)
                .collect();
            let separators = SeparatorSet::new(cuts).unwrap();

            let mut by_range = 0.0;
            for range in 0..separators.k() {
                let mut rank_in_range = 0u32;
                for (&v, &p) in values.iter().zip(&probs) {
                    if separators.range_of(v) == range {
                        rank_in_range += 1;
                        by_range += p * rank_in_range as f64;
                    }
                }
            }
            let direct = expected_rr(&values, &probs, &separators);
            assert!((direct - by_range).abs() < 1e-12);
        }
    }

    #[test]
    fn dp_matches_walkthrough_example_with_tie_to_smaller_cut() {
        let result = dp_partition(&V3, &P3, 2).unwrap();
        assert!((result.objective - 1.3).abs() < 1e-12);
        assert_eq!(result.separators.separators(), &[150.0]);
    }

    #[test]
    fn dp_on_the_four_entity_instance_finds_the_true_optimum() {
        // Every 2-cut partition of this instance costs exactly 1.3 under
        // the rank-order metric, so the optimum is 1.3 and the DP, the
        // brute force and the greedy all agree on it.
        let values = [400.0, 100.0, 200.0, 300.0];
        let probs = [0.2, 0.2, 0.3, 0.3];
        let dp = dp_partition(&values, &probs, 3).unwrap();
        let brute = brute_force_partition(&values, &probs, 3, CAP).unwrap();
        let greedy = greedy_partition(&values, &probs, 3).unwrap();
        assert!((dp.objective - 1.3).abs() < 1e-12);
        assert!((brute.objective - dp.objective).abs() < 1e-12);
        assert!((greedy.objective - 1.3).abs() < 1e-12);
    }

    #[test]
    fn greedy_is_strictly_suboptimal_on_a_witness_instance() {
        // the first greedy cut (250) is locally best but excludes the
        // optimal pair (150, 350)
        let values = [200.0, 300.0, 500.0, 400.0, 100.0];
        let probs: Vec<f64> = [7.0, 7.0, 9.0, 5.0, 9.0].iter().map(|p| p / 37.0).collect();
        let dp = dp_partition(&values, &probs, 3).unwrap();
        let greedy = greedy_partition(&values, &probs, 3).unwrap();
        assert!((dp.objective - 49.0 / 37.0).abs() < 1e-12);
        assert_eq!(dp.separators.separators(), &[150.0, 350.0]);
        assert!((greedy.objective - 51.0 / 37.0).abs() < 1e-12);
        assert_eq!(greedy.separators.separators(), &[250.0, 350.0]);
    }

    fn random_instance(rng: &mut impl Rng, max_n: usize) -> (Vec<f64>, Vec<f64>) {
        let n = rng.random_range(1..=max_n);
        let values: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_range(0.0..1.0) < 0.3 {
                    rng.random_range(0..6) as f64 * 50.0 // duplicates
                } else {
                    rng.random_range(0.0..500.0)
                }
            })
            .collect();
        let mut probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        (values, probs)
    }

    #[test]
    fn dp_equals_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        for trial in 0..150 {
            let (values, probs) = random_instance(&mut rng, 12);
            let k = rng.random_range(1..=4usize);
            let dp = dp_partition(&values, &probs, k).unwrap();
            let brute = brute_force_partition(&values, &probs, k, CAP).unwrap();
            assert!(
                (dp.objective - brute.objective).abs() < 1e-12,
                "trial {trial}: dp {} vs brute {}",
                dp.objective,
                brute.objective
            );
            // the DP's reported objective must be what its separators achieve
            let replayed = expected_rr(&values, &probs, &dp.separators);
            assert!((replayed - dp.objective).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn greedy_never_beats_dp_and_matches_at_k2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..150 {
            let (values, probs) = random_instance(&mut rng, 10);
            let k = rng.random_range(1..=4usize);
            let dp = dp_partition(&values, &probs, k).unwrap();
            let greedy = greedy_partition(&values, &probs, k).unwrap();
            assert!(greedy.objective >= dp.objective - 1e-12);
            if k == 2 {
                assert!((greedy.objective - dp.objective).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dp_objective_is_non_increasing_in_k() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let (values, probs) = random_instance(&mut rng, 12);
            let mut previous = f64::INFINITY;
            for k in 1..=5 {
                let dp = dp_partition(&values, &probs, k).unwrap();
                assert!(dp.objective <= previous + 1e-12);
                previous = dp.objective;
            }
        }
    }

    #[test]
    fn brute_force_edges() {
        let (values, probs) = ([10.0, 20.0], [0.5, 0.5]);
        let k1 = brute_force_partition(&values, &probs, 1, CAP).unwrap();
        assert_eq!(k1.separators.separators(), &[] as &[f64]);
        let k2 = brute_force_partition(&values, &probs, 2, CAP).unwrap();
        assert_eq!(k2.separators.separators(), &[15.0]);
        assert_eq!(k2.objective, 1.0);
    }

    #[test]
    fn requesting_more_ranges_than_distinct_values_degrades() {
        let values = [1.0, 1.0, 2.0];
        let probs = [0.3, 0.3, 0.4];
        let dp = dp_partition(&values, &probs, 5).unwrap();
        assert_eq!(dp.separators.separators(), &[1.5]);
        let brute = brute_force_partition(&values, &probs, 5, CAP).unwrap();
        assert_eq!(brute.separators.separators(), &[1.5]);
    }

    #[test]
    fn cap_exceeded_is_reported() {
        let values: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let probs = vec![1.0 / 30.0; 30];
        assert!(matches!(
            brute_force_partition(&values, &probs, 4, 10),
            Err(Error::CapExceeded { .. })
        ));
    }
}
