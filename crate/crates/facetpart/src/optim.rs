//! Derivative-free minimization of the surrogate objective over ratio
//! vectors: Powell's conjugate-direction method and the Nelder-Mead
//! simplex, both run under a multi-restart protocol.
//!
//! Neither algorithm handles constraints, so the ordered-simplex
//! feasible set is reached through an unconstrained reparameterization:
//! `k-1` free logits (plus an implicit zero) pass through a softmax to
//! range widths, whose cumulative sums are the ratios. Restart 0 starts
//! from the quantile ratios (all-zero logits); later restarts start from
//! uniformly sampled simplex points.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ecdf::{surrogate_cn, EmpiricalCdf};
use crate::error::{Error, Result};
use crate::partition::RatioVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMethod {
    Powell,
    NelderMead,
}

impl std::str::FromStr for OptMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<OptMethod> {
        match s {
            "powell" => Ok(OptMethod::Powell),
            "nelder-mead" | "nelder_mead" => Ok(OptMethod::NelderMead),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: OptMethod,
    pub restarts: usize,
    pub tolerance: f64,
    pub max_evals_per_restart: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: OptMethod::Powell,
            restarts: 8,
            tolerance: 1e-10,
            max_evals_per_restart: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RatioOptResult {
    pub ratios: RatioVector,
    pub cn: f64,
    /// Total objective evaluations across restarts.
    pub n_eval: usize,
}

/// Map unconstrained logits to a strictly increasing ratio vector.
pub(crate) fn ratios_from_logits(u: &[f64]) -> RatioVector {
    let max = u.iter().copied().fold(0.0f64, f64::max);
    let mut widths: Vec<f64> = u.iter().map(|&x| (x - max).exp().max(1e-12)).collect();
    widths.push((-max).exp().max(1e-12));
    let total: f64 = widths.iter().sum();
    let mut ratios = Vec::with_capacity(u.len());
    let mut acc = 0.0;
    for w in &widths[..u.len()] {
        acc += w / total;
        ratios.push(acc);
    }
    RatioVector::new(ratios).expect("softmax cumsum is strictly increasing in (0,1)")
}

/// Logits whose softmax reproduces the given widths.
fn logits_from_widths(widths: &[f64]) -> Vec<f64> {
    let last = widths[widths.len() - 1].max(1e-12);
    widths[..widths.len() - 1]
        .iter()
        .map(|&w| (w.max(1e-12) / last).ln())
        .collect()
}

/// Objective wrapper: counts evaluations, enforces the budget, and
/// remembers the best point ever visited so the final answer can never
/// be worse than any evaluated point, starting points included.
struct Tracker<'a> {
    cdf: &'a EmpiricalCdf,
    evals: usize,
    budget: usize,
    best_value: f64,
    best_logits: Vec<f64>,
}

impl<'a> Tracker<'a> {
    fn new(cdf: &'a EmpiricalCdf, budget: usize) -> Tracker<'a> {
        Tracker {
            cdf,
            evals: 0,
            budget,
            best_value: f64::INFINITY,
            best_logits: Vec::new(),
        }
    }

    fn eval(&mut self, u: &[f64]) -> f64 {
        let value = surrogate_cn(self.cdf, &ratios_from_logits(u));
        self.evals += 1;
        if value < self.best_value {
            self.best_value = value;
            self.best_logits = u.to_vec();
        }
        value
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.budget
    }
}

// ── line minimization (bracket + Brent) ─────────────────────────────

fn eval_along(tr: &mut Tracker, p: &[f64], dir: &[f64], t: f64) -> f64 {
    let x: Vec<f64> = p.iter().zip(dir).map(|(pi, di)| pi + t * di).collect();
    tr.eval(&x)
}

/// Golden-section bracketing of a minimum along a direction.
fn bracket(tr: &mut Tracker, p: &[f64], dir: &[f64], f0: f64) -> (f64, f64, f64, f64) {
    const GOLD: f64 = 1.618_034;
    let (mut a, mut fa) = (0.0, f0);
    let (mut b, mut fb) = (1.0, eval_along(tr, p, dir, 1.0));
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLD * (b - a);
    let mut fc = eval_along(tr, p, dir, c);
    let mut steps = 0;
    while fc < fb && steps < 40 && !tr.exhausted() {
        a = b;
        fa = fb;
        b = c;
        fb = fc;
        c = b + GOLD * (b - a);
        fc = eval_along(tr, p, dir, c);
        steps += 1;
    }
    let _ = fa;
    (a, b, c, fb)
}

/// Brent's method on a bracketed minimum (ax, bx, cx with f(bx) lowest).
#[allow(clippy::too_many_arguments)]
fn brent(tr: &mut Tracker, p: &[f64], dir: &[f64], ax: f64, bx: f64, cx: f64, fbx: f64, tol: f64) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966;
    const ZEPS: f64 = 1e-12;
    let (mut a, mut b) = (ax.min(cx), ax.max(cx));
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fbx, fbx, fbx);
    let (mut d, mut e) = (0.0f64, 0.0f64);

    for _ in 0..60 {
        if tr.exhausted() {
            break;
        }
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + ZEPS;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut pp = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                pp = -pp;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if pp.abs() < (0.5 * q * etemp).abs() && pp > q * (a - x) && pp < q * (b - x) {
                d = pp / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval_along(tr, p, dir, u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, w, x) = (w, x, u);
            (fv, fw, fx) = (fw, fx, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

fn line_minimize(tr: &mut Tracker, p: &mut [f64], dir: &[f64], fp: f64, tol: f64) -> f64 {
    let (a, b, c, fb) = bracket(tr, p, dir, fp);
    let (t, ft) = brent(tr, p, dir, a, b, c, fb, tol.max(1e-10));
    if ft < fp {
        for (pi, di) in p.iter_mut().zip(dir) {
            *pi += t * di;
        }
        ft
    } else {
        fp
    }
}

// ── Powell's conjugate direction method ─────────────────────────────

#[allow(clippy::needless_range_loop)] // the sweep index also names the direction slot
fn powell(tr: &mut Tracker, start: Vec<f64>, tol: f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut p = start;
    let mut fret = tr.eval(&p);
    let mut pt = p.clone();

    for _ in 0..200 {
        let fp = fret;
        let mut ibig = 0;
        let mut del = 0.0;
        for i in 0..n {
            let before = fret;
            let dir = dirs[i].clone();
            fret = line_minimize(tr, &mut p, &dir, fret, tol);
            if before - fret > del {
                del = before - fret;
                ibig = i;
            }
            if tr.exhausted() {
                return (p, fret);
            }
        }
        if 2.0 * (fp - fret) <= tol * (fp.abs() + fret.abs()) + 1e-25 {
            break;
        }
        // extrapolated point along the average direction of this sweep
        let ptt: Vec<f64> = p.iter().zip(&pt).map(|(a, b)| 2.0 * a - b).collect();
        let xit: Vec<f64> = p.iter().zip(&pt).map(|(a, b)| a - b).collect();
        pt = p.clone();
        let fptt = tr.eval(&ptt);
        if fptt < fp {
            let t = 2.0 * (fp - 2.0 * fret + fptt) * (fp - fret - del).powi(2) - del * (fp - fptt).powi(2);
            if t < 0.0 {
                fret = line_minimize(tr, &mut p, &xit, fret, tol);
                dirs[ibig] = dirs[n - 1].clone();
                dirs[n - 1] = xit;
            }
        }
        if tr.exhausted() {
            break;
        }
    }
    (p, fret)
}

// ── Nelder-Mead simplex ─────────────────────────────────────────────

const NM_ALPHA: f64 = 1.0; // reflection
const NM_GAMMA: f64 = 2.0; // expansion
const NM_RHO: f64 = 0.5; // contraction
const NM_SIGMA: f64 = 0.5; // shrink

fn nelder_mead(tr: &mut Tracker, start: Vec<f64>, tol: f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += 1.0;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| tr.eval(x)).collect();

    for _ in 0..500 {
        if tr.exhausted() {
            break;
        }
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let permuted_vals: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = permuted;
        values = permuted_vals;

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= tol * (values[0].abs() + values[n].abs()) + 1e-15 && diameter < 1e-8 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst)
            .map(|(c, w)| c + NM_ALPHA * (c - w))
            .collect();
        let f_reflect = tr.eval(&reflect);

        if f_reflect < values[0] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + NM_GAMMA * (c - w))
                .collect();
            let f_expand = tr.eval(&expand);
            if f_expand < f_reflect {
                simplex[n] = expand;
                values[n] = f_expand;
            } else {
                simplex[n] = reflect;
                values[n] = f_reflect;
            }
        } else if f_reflect < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_reflect;
        } else {
            let (contract, threshold): (Vec<f64>, f64) = if f_reflect < values[n] {
                // outside contraction
                let c: Vec<f64> = centroid
                    .iter()
                    .zip(&reflect)
                    .map(|(c, r)| c + NM_RHO * (r - c))
                    .collect();
                (c, f_reflect)
            } else {
                // inside contraction
                let c: Vec<f64> = centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + NM_RHO * (w - c))
                    .collect();
                (c, values[n])
            };
            let f_contract = tr.eval(&contract);
            if f_contract <= threshold {
                simplex[n] = contract;
                values[n] = f_contract;
            } else {
                // shrink toward the best vertex
                for i in 1..=n {
                    let best = simplex[0].clone();
                    for (xj, bj) in simplex[i].iter_mut().zip(&best) {
                        *xj = bj + NM_SIGMA * (*xj - bj);
                    }
                    values[i] = tr.eval(&simplex[i].clone());
                    if tr.exhausted() {
                        break;
                    }
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

// ── restart protocol ────────────────────────────────────────────────

/// Fit a global ratio vector by minimizing the cached surrogate.
///
/// Restart 0 starts at the quantile ratios; each further restart starts
/// at a uniformly drawn simplex point. The best evaluated point across
/// all restarts is returned, so the result can never be worse than the
/// best starting point.
pub fn optimize_ratio(cdf: &EmpiricalCdf, k: usize, config: &OptimizerConfig) -> Result<RatioOptResult> {
    if k < 2 {
        return Err(Error::Infeasible(format!("ratio optimization needs k >= 2, got {k}")));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    let dim = k - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best_value = f64::INFINITY;
    let mut best_logits: Vec<f64> = vec![0.0; dim];
    let mut total_evals = 0usize;

    for restart in 0..config.restarts {
        let start = if restart == 0 {
            vec![0.0; dim] // softmax of zeros = quantile widths
        } else {
            // Dirichlet(1,...,1): normalized exponentials, then to logits
            let widths: Vec<f64> = (0..k)
                .map(|_| -rng.random_range(1e-12f64..1.0).ln())
                .collect();
            let total: f64 = widths.iter().sum();
            let widths: Vec<f64> = widths.iter().map(|w| w / total).collect();
            logits_from_widths(&widths)
        };

        let mut tracker = Tracker::new(cdf, config.max_evals_per_restart);
        match config.method {
            OptMethod::Powell => powell(&mut tracker, start, config.tolerance),
            OptMethod::NelderMead => nelder_mead(&mut tracker, start, config.tolerance),
        };
        total_evals += tracker.evals;
        if tracker.best_value < best_value {
            best_value = tracker.best_value;
            best_logits = tracker.best_logits;
        }
    }

    Ok(RatioOptResult {
        ratios: ratios_from_logits(&best_logits),
        cn: best_value,
        n_eval: total_evals,
    })
}
