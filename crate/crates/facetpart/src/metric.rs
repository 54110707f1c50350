//! The evaluation contract: refined rank per impression and its average
//! over a log (ARR, lower is better).
//!
//! Ranges are half-open `[s_{j-1}, s_j)` with `s_0 = -inf` and
//! `s_k = +inf`; a separator equal to a facet value places that value in
//! the right range. The refined rank of the clicked entity is its
//! 1-based position among the valued entities of its range, in original
//! rank order — selecting a range never reorders results.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{Impression, SearchLog};

/// `k-1` strictly increasing separating values defining `k` ranges.
/// `k = 1` is the empty set: one unbounded range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorSet {
    separators: Vec<f64>,
}

impl SeparatorSet {
    pub fn new(separators: Vec<f64>) -> Result<SeparatorSet> {
        let ok = separators.iter().all(|s| s.is_finite())
            && separators.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::InvalidConfig(
                "separators must be finite and strictly increasing".into(),
            ));
        }
        Ok(SeparatorSet { separators })
    }

    pub fn empty() -> SeparatorSet {
        SeparatorSet { separators: Vec::new() }
    }

    pub fn separators(&self) -> &[f64] {
        &self.separators
    }

    /// Number of ranges this set induces.
    pub fn k(&self) -> usize {
        self.separators.len() + 1
    }

    /// Index in `0..k` of the range containing `value`.
    pub fn range_of(&self, value: f64) -> usize {
        self.separators.partition_point(|&s| s <= value)
    }
}

/// ARR evaluation output: the average plus the per-impression detail it
/// was computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub arr: f64,
    pub per_impression_rr: Vec<(String, u32)>,
    pub n: usize,
}

impl EvalReport {
    pub fn from_rrs(per_impression_rr: Vec<(String, u32)>) -> EvalReport {
        let n = per_impression_rr.len();
        let arr = per_impression_rr.iter().map(|(_, rr)| *rr as f64).sum::<f64>() / n as f64;
        EvalReport { arr, per_impression_rr, n }
    }

    /// Per-impression refined ranks as CSV, one row per impression.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "query_id,rr")?;
        for (qid, rr) in &self.per_impression_rr {
            writeln!(w, "{qid},{rr}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Refined rank of the clicked entity: its 1-based position among the
/// valued entities sharing its range, ordered by original rank.
pub fn refined_rank(impression: &Impression, separators: &SeparatorSet) -> Result<u32> {
    let clicked_value = impression.clicked_value()?;
    let clicked_range = separators.range_of(clicked_value);
    let mut rank_in_range = 0u32;
    for e in impression.valued_entities() {
        if separators.range_of(e.value.unwrap()) == clicked_range {
            rank_in_range += 1;
            if e.id == impression.clicked {
                return Ok(rank_in_range);
            }
        }
    }
    unreachable!("clicked entity is always a member of its own range");
}

/// Evaluate a per-impression partitioner over a log (Eq. ARR). The
/// summation order is the impression order, so results are reproducible.
pub fn arr_evaluate<F>(log: &SearchLog, mut partitioner: F) -> Result<EvalReport>
where
    F: FnMut(&Impression) -> Result<SeparatorSet>,
{
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut rrs = Vec::with_capacity(log.len());
    for imp in &log.impressions {
        let separators = partitioner(imp)?;
        let rr = refined_rank(imp, &separators).map_err(|e| match e {
            Error::MissingClickedValue { .. } => Error::MissingClickedValue {
                query_id: imp.query_id.clone(),
            },
            other => other,
        })?;
        rrs.push((imp.query_id.clone(), rr));
    }
    Ok(EvalReport::from_rrs(rrs))
}
