//! Empirical checks of the concentration bounds behind the surrogate:
//! the DKW-style deviation bound on `C_n`, width monotonicity of the
//! optimum under a strongly concave CDF, and the k-free bound near the
//! optimum.
//!
//! The supremum over ratio vectors is approximated by a dense grid plus
//! a local polish around the grid argmax. That approximates the true
//! sup from below, which is the conservative direction for detecting a
//! bound violation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::CdfShape;

/// One Monte-Carlo bound check: the observed exceedance rate of
/// `sup |C_n - C| > epsilon` against its theoretical ceiling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub observed_exceedance_rate: f64,
    pub theoretical_bound: f64,
    /// Largest deviation seen across all trials.
    pub max_observed_deviation: f64,
    pub pass: bool,
}

fn binomial_pass(observed: f64, bound: f64, trials: usize) -> bool {
    let sigma = (observed * (1.0 - observed) / trials as f64).sqrt();
    observed <= bound + 3.0 * sigma
}

// ── deterministic surrogate evaluations ─────────────────────────────

/// `F_n(r) = #{z < r}/n` over a sorted sample.
pub fn empirical_f(zs_sorted: &[f64], r: f64) -> f64 {
    zs_sorted.partition_point(|&z| z < r) as f64 / zs_sorted.len() as f64
}

/// Empirical `C_n(R)` straight from the raw sample.
pub fn empirical_cn(zs_sorted: &[f64], ratios: &[f64]) -> f64 {
    let mut total = 0.0;
    let (mut prev_r, mut prev_f) = (0.0, 0.0);
    for &r in ratios {
        let f = empirical_f(zs_sorted, r);
        total += (r - prev_r) * (f - prev_f);
        prev_r = r;
        prev_f = f;
    }
    total + (1.0 - prev_r) * (1.0 - prev_f)
}

/// Population `C(R)` under a known CDF.
pub fn true_cn(cdf: &CdfShape, ratios: &[f64]) -> f64 {
    let mut total = 0.0;
    let (mut prev_r, mut prev_f) = (0.0, 0.0);
    for &r in ratios {
        let f = cdf.eval(r);
        total += (r - prev_r) * (f - prev_f);
        prev_r = r;
        prev_f = f;
    }
    total + (1.0 - prev_r) * (1.0 - prev_f)
}

// ── sup approximation ───────────────────────────────────────────────

/// Visit every strictly increasing (k-1)-tuple of grid indices.
fn for_each_combo(count: usize, dims: usize, visit: &mut impl FnMut(&[usize])) {
    fn recurse(count: usize, dims: usize, start: usize, prefix: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if prefix.len() == dims {
            visit(prefix);
            return;
        }
        let remaining = dims - prefix.len();
        for i in start..=(count - remaining) {
            prefix.push(i);
            recurse(count, dims, i + 1, prefix, visit);
            prefix.pop();
        }
    }
    if dims == 0 {
        visit(&[]);
        return;
    }
    if count < dims {
        return;
    }
    recurse(count, dims, 0, &mut Vec::new(), visit);
}

/// Max of `|C_n - C|` over the grid, returning the arg as ratio values.
fn sup_on_grid(grid: &[f64], emp_f: &[f64], tru_f: &[f64], dims: usize) -> (f64, Vec<f64>) {
    let mut best = (0.0f64, Vec::new());
    for_each_combo(grid.len(), dims, &mut |combo| {
        let mut cn = 0.0;
        let mut c = 0.0;
        let (mut prev_r, mut prev_fn, mut prev_ft) = (0.0, 0.0, 0.0);
        for &i in combo {
            cn += (grid[i] - prev_r) * (emp_f[i] - prev_fn);
            c += (grid[i] - prev_r) * (tru_f[i] - prev_ft);
            prev_r = grid[i];
            prev_fn = emp_f[i];
            prev_ft = tru_f[i];
        }
        cn += (1.0 - prev_r) * (1.0 - prev_fn);
        c += (1.0 - prev_r) * (1.0 - prev_ft);
        let dev = (cn - c).abs();
        if dev > best.0 {
            best = (dev, combo.iter().map(|&i| grid[i]).collect());
        }
    });
    best
}

/// Coordinate-wise refinement around the grid argmax: the deviation is
/// piecewise linear between empirical jump points, so scanning a fine
/// sub-grid one cell wide recovers most of the residual sup.
fn polish(zs_sorted: &[f64], cdf: &CdfShape, start: &[f64], step: f64, mut dev: f64) -> f64 {
    if start.is_empty() {
        return dev;
    }
    let mut point = start.to_vec();
    for _ in 0..2 {
        for j in 0..point.len() {
            let lo = if j == 0 { 0.0 } else { point[j - 1] };
            let hi = if j + 1 == point.len() { 1.0 } else { point[j + 1] };
            let mut best_r = point[j];
            for t in -10i32..=10 {
                let r = point[j] + t as f64 * step / 10.0;
                if r <= lo + 1e-9 || r >= hi - 1e-9 || r <= 0.0 || r >= 1.0 {
                    continue;
                }
                let mut candidate = point.clone();
                candidate[j] = r;
                let d = (empirical_cn(zs_sorted, &candidate) - true_cn(cdf, &candidate)).abs();
                if d > dev {
                    dev = d;
                    best_r = r;
                }
            }
            point[j] = best_r;
        }
    }
    dev
}

/// Per-trial sup deviations of `C_n` from `C`, each approximated on a
/// `1/resolution` grid plus a local polish.
pub fn theorem1_deviations(
    true_cdf: &CdfShape,
    n: usize,
    k: usize,
    trials: usize,
    resolution: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidConfig("the deviation bound needs k >= 2".into()));
    }
    if n == 0 || trials == 0 || resolution < 2 {
        return Err(Error::InvalidConfig("n, trials and resolution must be positive".into()));
    }
    true_cdf.validate()?;
    let grid: Vec<f64> = (1..resolution).map(|i| i as f64 / resolution as f64).collect();
    let tru_f: Vec<f64> = grid.iter().map(|&r| true_cdf.eval(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deviations = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut zs: Vec<f64> = (0..n)
            .map(|_| true_cdf.inverse(rng.random_range(0.0f64..1.0)))
            .collect();
        zs.sort_by(f64::total_cmp);
        let emp_f: Vec<f64> = grid.iter().map(|&r| empirical_f(&zs, r)).collect();
        let (dev, argmax) = sup_on_grid(&grid, &emp_f, &tru_f, k - 1);
        deviations.push(polish(&zs, true_cdf, &argmax, 1.0 / resolution as f64, dev));
    }
    Ok(deviations)
}

/// Check `P[sup_R |C_n - C| > eps] <= 2 exp(-2 n eps^2 / (k-1)^2)`.
pub fn check_theorem1(
    true_cdf: &CdfShape,
    n: usize,
    k: usize,
    epsilon: f64,
    trials: usize,
    resolution: usize,
    seed: u64,
) -> Result<BoundReport> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    let deviations = theorem1_deviations(true_cdf, n, k, trials, resolution, seed)?;
    let exceeded = deviations.iter().filter(|&&d| d > epsilon).count();
    let observed = exceeded as f64 / trials as f64;
    let bound = 2.0 * (-2.0 * n as f64 * epsilon * epsilon / ((k - 1) * (k - 1)) as f64).exp();
    Ok(BoundReport {
        n,
        k,
        epsilon,
        trials,
        observed_exceedance_rate: observed,
        theoretical_bound: bound,
        max_observed_deviation: deviations.iter().copied().fold(0.0, f64::max),
        pass: binomial_pass(observed, bound, trials),
    })
}

// ── concavity classification ────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Concavity {
    /// All second differences below `-delta`.
    StronglyConcave,
    /// Never convex beyond tolerance, but not strongly concave either
    /// (e.g. a linear CDF).
    WeaklyConcave,
    /// Convex somewhere: the concave-CDF theorems do not apply.
    NotConcave,
}

/// Classify a CDF by its second differences on a grid.
pub fn classify_concavity(cdf: &CdfShape, resolution: usize, delta: f64) -> Concavity {
    let h = 1.0 / resolution as f64;
    let mut strong = true;
    for i in 1..resolution {
        let r = i as f64 * h;
        let second = cdf.eval(r + h) - 2.0 * cdf.eval(r) + cdf.eval(r - h);
        if second > delta {
            return Concavity::NotConcave;
        }
        if second > -delta {
            strong = false;
        }
    }
    if strong {
        Concavity::StronglyConcave
    } else {
        Concavity::WeaklyConcave
    }
}

// ── theorem 2: width monotonicity at the optimum ────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidthReport {
    /// False when the CDF failed the concavity gate.
    pub applicable: bool,
    pub concavity: Concavity,
    /// Grid argmin of the population objective `C(R)`.
    pub optimum: Vec<f64>,
    /// Range widths at the optimum.
    pub widths: Vec<f64>,
    /// Widths non-decreasing within one grid step of slack.
    pub monotone: bool,
    pub pass: bool,
}

/// Check that the widths of the population optimum are non-decreasing:
/// `Δr_1* <= Δr_2* <= ... <= Δr_k*`.
pub fn check_theorem2(cdf: &CdfShape, k: usize, resolution: usize) -> Result<WidthReport> {
    if !(2..=4).contains(&k) {
        return Err(Error::Infeasible(format!("grid minimization supports 2 <= k <= 4, got {k}")));
    }
    if resolution < 4 {
        return Err(Error::InvalidConfig("resolution too coarse".into()));
    }
    cdf.validate()?;
    let concavity = classify_concavity(cdf, resolution.min(1000), 1e-6);
    if concavity == Concavity::NotConcave {
        return Ok(WidthReport {
            applicable: false,
            concavity,
            optimum: Vec::new(),
            widths: Vec::new(),
            monotone: false,
            pass: false,
        });
    }

    let grid: Vec<f64> = (1..resolution).map(|i| i as f64 / resolution as f64).collect();
    let tru_f: Vec<f64> = grid.iter().map(|&r| cdf.eval(r)).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_combo(grid.len(), k - 1, &mut |combo| {
        let mut c = 0.0;
        let (mut prev_r, mut prev_f) = (0.0, 0.0);
        for &i in combo {
            c += (grid[i] - prev_r) * (tru_f[i] - prev_f);
            prev_r = grid[i];
            prev_f = tru_f[i];
        }
        c += (1.0 - prev_r) * (1.0 - prev_f);
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, combo.to_vec()));
        }
    });
    let (_, combo) = best.expect("non-empty grid");
    let optimum: Vec<f64> = combo.iter().map(|&i| grid[i]).collect();
    let mut widths = Vec::with_capacity(k);
    let mut prev = 0.0;
    for &r in &optimum {
        widths.push(r - prev);
        prev = r;
    }
    widths.push(1.0 - prev);

    let slack = 2.0 / resolution as f64;
    let monotone = widths.windows(2).all(|w| w[1] >= w[0] - slack);
    Ok(WidthReport {
        applicable: true,
        concavity,
        optimum,
        widths,
        monotone,
        pass: monotone,
    })
}

// ── theorem 3: k-free bound near the optimum ────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionBoundReport {
    /// False when the CDF is not strongly concave.
    pub applicable: bool,
    pub r_star: Vec<f64>,
    /// Grid points inside the restricted region.
    pub region_points: usize,
    pub report: Option<BoundReport>,
}

/// Check `P[sup_{R in R*} |C_n - C| > eps] <= 2 exp(-2 n eps^2)` with
/// the sup restricted to the width-monotone neighborhood of `R*`.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem3(
    true_cdf: &CdfShape,
    n: usize,
    k: usize,
    epsilon: f64,
    trials: usize,
    radius: f64,
    resolution: usize,
    seed: u64,
) -> Result<RegionBoundReport> {
    if epsilon <= 0.0 || radius < 0.0 {
        return Err(Error::InvalidConfig("epsilon must be positive and radius non-negative".into()));
    }
    let width_report = check_theorem2(true_cdf, k, resolution)?;
    if width_report.concavity != Concavity::StronglyConcave {
        return Ok(RegionBoundReport {
            applicable: false,
            r_star: width_report.optimum,
            region_points: 0,
            report: None,
        });
    }
    let r_star = width_report.optimum;

    // region: grid points within the radius ball of R* where width
    // monotonicity actually holds (plus R* itself)
    let grid: Vec<f64> = (1..resolution).map(|i| i as f64 / resolution as f64).collect();
    let mut region: Vec<Vec<f64>> = vec![r_star.clone()];
    for_each_combo(grid.len(), k - 1, &mut |combo| {
        let point: Vec<f64> = combo.iter().map(|&i| grid[i]).collect();
        let near = point.iter().zip(&r_star).all(|(a, b)| (a - b).abs() <= radius);
        if !near || point == r_star {
            return;
        }
        let mut widths = Vec::with_capacity(k);
        let mut prev = 0.0;
        for &r in &point {
            widths.push(r - prev);
            prev = r;
        }
        widths.push(1.0 - prev);
        if widths.windows(2).all(|w| w[1] >= w[0]) {
            region.push(point);
        }
    });

    let bound = 2.0 * (-2.0 * n as f64 * epsilon * epsilon).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceeded = 0usize;
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let mut zs: Vec<f64> = (0..n)
            .map(|_| true_cdf.inverse(rng.random_range(0.0f64..1.0)))
            .collect();
        zs.sort_by(f64::total_cmp);
        let dev = region
            .iter()
            .map(|point| (empirical_cn(&zs, point) - true_cn(true_cdf, point)).abs())
            .fold(0.0, f64::max);
        if dev > epsilon {
            exceeded += 1;
        }
        max_dev = max_dev.max(dev);
    }
    let observed = exceeded as f64 / trials as f64;
    Ok(RegionBoundReport {
        applicable: true,
        r_star,
        region_points: region.len(),
        report: Some(BoundReport {
            n,
            k,
            epsilon,
            trials,
            observed_exceedance_rate: observed,
            theoretical_bound: bound,
            max_observed_deviation: max_dev,
            pass: binomial_pass(observed, bound, trials),
        }),
    })
}
