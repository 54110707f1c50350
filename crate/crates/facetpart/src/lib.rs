//! Range partitioning for numerical search facets.
//!
//! Given a query's result list and the numerical facet values attached
//! to it (price, distance, screen size, ...), this crate chooses the
//! `k-1` separating values that split the list into `k` ranges, and
//! evaluates partition policies offline against click logs using the
//! averaged refined rank (ARR) metric.
//!
//! Four partition methods are provided:
//!
//! * [`partition::quantile_partition`] — the equi-depth baseline;
//! * [`dp::dp_partition`] — per-query exact minimization of the expected
//!   refined rank under an estimated click model;
//! * [`optim::optimize_ratio`] — a single global ratio vector fitted by
//!   derivative-free search over a cached-CDF surrogate objective;
//! * [`tree::fit_tree`] — a regression tree mapping query features to
//!   per-leaf ratio vectors.
//!
//! The [`bounds`] module empirically checks the concentration bounds
//! that justify the surrogate, and the `facetpart-cli` crate wires the
//! whole pipeline into a command line. The mdbook under `book/` walks
//! through the concepts; its code snippets compile and run as doctests
//! of this crate.

pub mod bounds;
pub mod click;
pub mod dp;
pub mod ecdf;
pub mod error;
pub mod grid;
pub mod log;
pub mod metric;
pub mod optim;
pub mod partition;
pub mod stats;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
pub use log::{Entity, Impression, LogStats, ParsedLog, SearchLog};
pub use metric::{arr_evaluate, refined_rank, EvalReport, SeparatorSet};
pub use partition::{candidate_midpoints, quantile_partition, ratio_to_separators, round_separators, RatioVector};

// Book chapters double as doctests so the narrative can never drift
// from the API. Only compiled by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(metric, "../../../book/src/metric.md");
    chapter!(quantile_and_ratios, "../../../book/src/quantile-and-ratios.md");
    chapter!(expected_rank_dp, "../../../book/src/expected-rank-dp.md");
    chapter!(surrogate, "../../../book/src/surrogate.md");
    chapter!(ratio_trees, "../../../book/src/ratio-trees.md");
    chapter!(bounds, "../../../book/src/bounds.md");
    chapter!(synthetic_logs, "../../../book/src/synthetic-logs.md");
}
