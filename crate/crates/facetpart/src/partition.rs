//! Shared partition primitives: candidate midpoints, the quantile
//! baseline, ratio <-> separator conversion and user-facing rounding.
//!
//! Separators only ever matter up to which consecutive distinct values
//! they fall between, so every partitioner emits midpoints between
//! distinct sorted values. Duplicated facet values can never be split;
//! cuts that would land inside a run of duplicates snap to the nearest
//! feasible boundary and colliding cuts collapse, shrinking the
//! effective number of ranges instead of failing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::SeparatorSet;

/// Relative-ratio representation of a separator set: `k-1` strictly
/// increasing ratios in (0,1), with implicit `r_0 = 0` and `r_k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioVector {
    ratios: Vec<f64>,
}

impl RatioVector {
    pub fn new(ratios: Vec<f64>) -> Result<RatioVector> {
        let ok = ratios.iter().all(|r| r.is_finite() && *r > 0.0 && *r < 1.0)
            && ratios.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::InvalidConfig(
                "ratios must be strictly increasing within (0,1)".into(),
            ));
        }
        Ok(RatioVector { ratios })
    }

    /// The quantile method's ratios `(1/k, ..., (k-1)/k)`.
    pub fn quantile(k: usize) -> RatioVector {
        RatioVector {
            ratios: (1..k).map(|j| j as f64 / k as f64).collect(),
        }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Number of ranges (`len + 1`).
    pub fn k(&self) -> usize {
        self.ratios.len() + 1
    }

    /// Range widths `Δr_j = r_j - r_{j-1}`, of length `k`.
    pub fn widths(&self) -> Vec<f64> {
        let mut widths = Vec::with_capacity(self.ratios.len() + 1);
        let mut prev = 0.0;
        for &r in &self.ratios {
            widths.push(r - prev);
            prev = r;
        }
        widths.push(1.0 - prev);
        widths
    }
}

/// Sorted view of a value multiset: distinct values with cumulative
/// counts. Feasible cut positions are exactly the cumulative counts of
/// all but the last distinct value.
#[derive(Debug, Clone)]
pub(crate) struct ValueProfile {
    /// Distinct values, ascending.
    pub distinct: Vec<f64>,
    /// `cum[i]` = number of values `<= distinct[i]`.
    pub cum: Vec<usize>,
    /// Total number of values, duplicates included.
    pub total: usize,
}

impl ValueProfile {
    pub fn from_values(values: &[f64]) -> ValueProfile {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = Vec::new();
        let mut cum = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if distinct.last() == Some(&v) {
                *cum.last_mut().unwrap() = i + 1;
            } else {
                distinct.push(v);
                cum.push(i + 1);
            }
        }
        ValueProfile { distinct, cum, total: sorted.len() }
    }

    /// Midpoint separator for the cut after `cum[i]` values.
    pub fn midpoint(&self, i: usize) -> f64 {
        (self.distinct[i] + self.distinct[i + 1]) / 2.0
    }

    /// Number of feasible cuts (`#distinct - 1`).
    pub fn feasible_cuts(&self) -> usize {
        self.distinct.len().saturating_sub(1)
    }

    /// Map a target cut position (cut after `target` values) to the
    /// nearest feasible cut index, or `None` when the target is
    /// degenerate or no cut is feasible. Ties snap left.
    pub fn snap_cut(&self, target: usize) -> Option<usize> {
        let m = self.feasible_cuts();
        if m == 0 || target == 0 || target >= self.total {
            return None;
        }
        let feasible = &self.cum[..m];
        let i = feasible.partition_point(|&c| c < target);
        if i == 0 {
            return Some(0);
        }
        if i == m {
            return Some(m - 1);
        }
        if feasible[i] == target {
            return Some(i);
        }
        let left_gap = target - feasible[i - 1];
        let right_gap = feasible[i] - target;
        Some(if left_gap <= right_gap { i - 1 } else { i })
    }
}

/// Cut position for ratio `r` over `n` values: the number of values
/// whose quantile `t/n` does not exceed `r`. The epsilon absorbs float
/// noise when `r*n` is an exact integer.
pub(crate) fn cut_for_ratio(r: f64, n: usize) -> usize {
    ((r * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Snapped cut indices (into the profile's feasible cuts) for a ratio
/// vector; collapsed and degenerate cuts are dropped.
pub(crate) fn ratio_cut_indices(profile: &ValueProfile, ratios: &RatioVector) -> Vec<usize> {
    let mut cuts: Vec<usize> = ratios
        .ratios()
        .iter()
        .filter_map(|&r| profile.snap_cut(cut_for_ratio(r, profile.total)))
        .collect();
    cuts.dedup();
    cuts
}

/// One midpoint between each pair of consecutive distinct sorted values.
pub fn candidate_midpoints(values: &[f64]) -> Vec<f64> {
    let profile = ValueProfile::from_values(values);
    (0..profile.feasible_cuts()).map(|i| profile.midpoint(i)).collect()
}

/// Convert a ratio vector to concrete separators for a value multiset.
pub fn ratio_to_separators(values: &[f64], ratios: &RatioVector) -> Result<SeparatorSet> {
    if values.is_empty() {
        return Err(Error::Infeasible("no valued entities to partition".into()));
    }
    let profile = ValueProfile::from_values(values);
    let separators = ratio_cut_indices(&profile, ratios)
        .into_iter()
        .map(|i| profile.midpoint(i))
        .collect();
    SeparatorSet::new(separators)
}

/// A partition outcome: `collapsed` flags that duplicates (or too few
/// distinct values) forced fewer than the requested ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioned {
    pub separators: SeparatorSet,
    pub collapsed: bool,
}

/// Equi-depth baseline: cut so each range holds about `|E|/k` entities.
pub fn quantile_partition(values: &[f64], k: usize) -> Result<Partitioned> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(Error::Infeasible("no valued entities to partition".into()));
    }
    let separators = ratio_to_separators(values, &RatioVector::quantile(k))?;
    let collapsed = separators.k() < k;
    Ok(Partitioned { separators, collapsed })
}

/// Round separators to the nearest multiple of `precision` (half away
/// from zero), collapsing any duplicates the rounding introduces.
pub fn round_separators(separators: &SeparatorSet, precision: f64) -> Result<SeparatorSet> {
    if !(precision > 0.0 && precision.is_finite()) {
        return Err(Error::InvalidConfig(format!("precision must be positive, got {precision}")));
    }
    let mut rounded: Vec<f64> = separators
        .separators()
        .iter()
        .map(|s| (s / precision).round() * precision)
        .collect();
    rounded.dedup();
    SeparatorSet::new(rounded)
}
