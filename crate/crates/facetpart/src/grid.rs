//! Exhaustive grid search over the candidate-ratio grid, for both the
//! surrogate objective and the true ARR.
//!
//! The candidate grid is the cached CDF's `x_sorted`; enumerating
//! `C(n0, k-1)` combinations is the global-optimum reference the cheap
//! optimizers are judged against. Beyond `k = 4` the combinatorics are
//! intractable and the search refuses to run.

use itertools::Itertools;

use crate::ecdf::{surrogate_cn, EmpiricalCdf};
use crate::error::{Error, Result};
use crate::log::SearchLog;
use crate::partition::{cut_for_ratio, RatioVector, ValueProfile};

#[derive(Debug, Clone)]
pub struct GridResult {
    pub ratios: RatioVector,
    pub value: f64,
    pub n_evaluated: usize,
}

pub(crate) fn combination_count(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    result
}

fn check_tractable(n0: usize, k: usize, cap: u128) -> Result<()> {
    if k > 4 {
        return Err(Error::Infeasible(format!(
            "grid search over {k}-range partitions is intractable; k must be at most 4"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let required = combination_count(n0, k - 1);
    if required > cap {
        return Err(Error::CapExceeded { required, cap });
    }
    Ok(())
}

/// Exhaustively minimize the cached surrogate over the candidate grid.
pub fn grid_search_surrogate(cdf: &EmpiricalCdf, k: usize, cap: u128) -> Result<GridResult> {
    check_tractable(cdf.n0(), k, cap)?;
    let candidates = cdf.x_sorted();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated = 0usize;
    for combo in (0..candidates.len()).combinations(k - 1) {
        let ratios = RatioVector::new(combo.iter().map(|&i| candidates[i]).collect())
            .expect("candidate ratios are strictly increasing in (0,1)");
        let value = surrogate_cn(cdf, &ratios);
        evaluated += 1;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, combo));
        }
    }
    let (value, combo) = best.expect("at least the empty combination is evaluated");
    Ok(GridResult {
        ratios: RatioVector::new(combo.iter().map(|&i| candidates[i]).collect()).unwrap(),
        value,
        n_evaluated: evaluated,
    })
}

/// Per-impression tables that make one ARR evaluation of a ratio combo
/// O(k) instead of a full refined-rank recomputation.
struct ImpressionTable {
    /// Prefix counts of better-ranked-than-clicked entities by sorted
    /// value position; `prefix[c]` covers positions `1..=c`.
    prefix_better: Vec<u32>,
    /// Clicked entity's sorted position (top of its duplicate run).
    t: usize,
    /// Snapped cut position per global candidate index (-1 = no cut).
    cut_by_candidate: Vec<i64>,
    total: usize,
}

impl ImpressionTable {
    fn refined_rank(&self, combo: &[usize]) -> u32 {
        let mut lo = 0usize;
        let mut hi = self.total;
        for &idx in combo {
            let cut = self.cut_by_candidate[idx];
            if cut < 0 {
                continue;
            }
            let cut = cut as usize;
            if cut < self.t {
                lo = lo.max(cut);
            } else {
                hi = cut;
                break; // cuts are non-decreasing along the combo
            }
        }
        self.prefix_better[hi] - self.prefix_better[lo] + 1
    }
}

fn build_tables(log: &SearchLog, candidates: &[f64]) -> Result<Vec<ImpressionTable>> {
    let mut tables = Vec::with_capacity(log.len());
    for imp in &log.impressions {
        let clicked_value = imp.clicked_value()?;
        let clicked_rank = imp.clicked_entity().rank;
        let valued: Vec<(f64, u32)> = imp
            .valued_entities()
            .map(|e| (e.value.unwrap(), e.rank))
            .collect();
        let values: Vec<f64> = valued.iter().map(|(v, _)| *v).collect();
        let profile = ValueProfile::from_values(&values);

        let mut by_value = valued;
        by_value.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix_better = Vec::with_capacity(by_value.len() + 1);
        prefix_better.push(0u32);
        for (_, rank) in &by_value {
            let inc = u32::from(*rank < clicked_rank);
            prefix_better.push(prefix_better.last().unwrap() + inc);
        }

        let t = values.iter().filter(|&&v| v <= clicked_value).count();
        let cut_by_candidate = candidates
            .iter()
            .map(|&r| {
                profile
                    .snap_cut(cut_for_ratio(r, profile.total))
                    .map_or(-1, |i| profile.cum[i] as i64)
            })
            .collect();

        tables.push(ImpressionTable {
            prefix_better,
            t,
            cut_by_candidate,
            total: profile.total,
        });
    }
    Ok(tables)
}

/// Exhaustively minimize the true ARR of a log over the candidate grid.
/// This is the oracle path: it evaluates the evaluation metric itself,
/// so it is only tractable thanks to the per-impression tables.
pub fn grid_search_true_arr(log: &SearchLog, k: usize, cap: u128) -> Result<GridResult> {
    let cdf = EmpiricalCdf::from_log(log)?;
    check_tractable(cdf.n0(), k, cap)?;
    let candidates = cdf.x_sorted();
    let tables = build_tables(log, candidates)?;
    let n = tables.len() as f64;

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated = 0usize;
    for combo in (0..candidates.len()).combinations(k - 1) {
        let total: u64 = tables.iter().map(|t| t.refined_rank(&combo) as u64).sum();
        let arr = total as f64 / n;
        evaluated += 1;
        if best.as_ref().is_none_or(|(b, _)| arr < *b) {
            best = Some((arr, combo));
        }
    }
    let (value, combo) = best.expect("at least the empty combination is evaluated");
    Ok(GridResult {
        ratios: RatioVector::new(combo.iter().map(|&i| candidates[i]).collect()).unwrap(),
        value,
        n_evaluated: evaluated,
    })
}

/// Evaluate the true ARR of one fixed ratio vector on a log, sharing the
/// conversion rules with `ratio_to_separators`.
pub fn arr_of_ratios(log: &SearchLog, ratios: &RatioVector) -> Result<f64> {
    let report = crate::metric::arr_evaluate(log, |imp| {
        crate::partition::ratio_to_separators(&imp.facet_values(), ratios)
    })?;
    Ok(report.arr)
}
