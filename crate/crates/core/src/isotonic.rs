//! Weighted isotonic regression by pool-adjacent-violators, clamped
//! piecewise-linear interpolation of the fitted values, and a Monte-Carlo
//! validator for the sup-norm convergence rate of the estimator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::utility::{Interval, UtilityModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsotonicError {
    #[error("isotonic regression needs at least one sample")]
    EmptyInput,
    #[error("covariates and responses differ in length: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
}

/// Monotone least-squares fit: strictly increasing knots, nondecreasing
/// fitted values, and the multiplicity of each knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl IsotonicFit {
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Clamped piecewise-linear interpolation: linear between adjacent
    /// knots, constant beyond the first and last. Nondecreasing in `x`.
    pub fn interpolate(&self, x: f64) -> f64 {
        let k = &self.knots;
        let v = &self.values;
        let m = k.len();
        if x <= k[0] {
            return v[0];
        }
        if x >= k[m - 1] {
            return v[m - 1];
        }
        let j = match k.binary_search_by(|probe| probe.total_cmp(&x)) {
            Ok(exact) => return v[exact],
            Err(j) => j,
        };
        let t = (x - k[j - 1]) / (k[j] - k[j - 1]);
        v[j - 1] + t * (v[j] - v[j - 1])
    }

    /// Smallest and largest fitted values (the interpolant's range).
    pub fn value_range(&self) -> (f64, f64) {
        (self.values[0], self.values[self.len() - 1])
    }

    /// Generalized inverse of the interpolant: smallest `x` in
    /// `[knots[0], knots[last]]` with `interpolate(x) >= y`, clamped to the
    /// knot range. Flat segments resolve to their left edge.
    pub fn inverse(&self, y: f64) -> f64 {
        let m = self.len();
        if y <= self.values[0] {
            return self.knots[0];
        }
        if y >= self.values[m - 1] {
            // Exact hits on the top value resolve inside; above it, clamp.
            if y > self.values[m - 1] {
                return self.knots[m - 1];
            }
        }
        // First segment whose right value reaches y.
        let mut j = match self
            .values
            .binary_search_by(|probe| probe.total_cmp(&y))
        {
            Ok(mut exact) => {
                while exact > 0 && self.values[exact - 1] == y {
                    exact -= 1;
                }
                return self.knots[exact];
            }
            Err(j) => j,
        };
        j = j.min(m - 1);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        if v1 == v0 {
            return self.knots[j - 1];
        }
        let t = (y - v0) / (v1 - v0);
        self.knots[j - 1] + t * (self.knots[j] - self.knots[j - 1])
    }

    /// CSV rows `knot,value,weight` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("knot,value,weight\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                self.knots[i], self.values[i], self.weights[i]
            ));
        }
        out
    }
}

/// Weighted pool-adjacent-violators on `(covariate, response)` pairs.
///
/// Sorts by covariate, collapses exact covariate ties to their weighted
/// means, then merges adjacent blocks until the block means are
/// nondecreasing. Linear time after the sort.
pub fn pava(xs: &[f64], ys: &[f64]) -> Result<IsotonicFit, IsotonicError> {
    if xs.len() != ys.len() {
        return Err(IsotonicError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(IsotonicError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));

    // Collapse exact ties to weighted means.
    let mut knots: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &idx in &order {
        let x = xs[idx];
        let y = ys[idx];
        if let Some(last) = knots.last() {
            if *last == x {
                let k = means.len() - 1;
                let w = counts[k];
                means[k] = (means[k] * w + y) / (w + 1.0);
                counts[k] = w + 1.0;
                continue;
            }
        }
        knots.push(x);
        means.push(y);
        counts.push(1.0);
    }

    // PAVA over the collapsed blocks: (value, weight, span).
    let mut stack: Vec<(f64, f64, usize)> = Vec::with_capacity(means.len());
    for j in 0..means.len() {
        let mut value = means[j];
        let mut weight = counts[j];
        let mut span = 1usize;
        while let Some(&(top_v, top_w, top_s)) = stack.last() {
            if top_v <= value {
                break;
            }
            value = (value * weight + top_v * top_w) / (weight + top_w);
            weight += top_w;
            span += top_s;
            stack.pop();
        }
        stack.push((value, weight, span));
    }
    let mut values = Vec::with_capacity(knots.len());
    for &(v, _, span) in &stack {
        for _ in 0..span {
            values.push(v);
        }
    }
    Ok(IsotonicFit {
        knots,
        values,
        weights: counts,
    })
}

/// Outcome of the rate validator: the log-log slope and the per-size points
/// `(rho_n, mean sup error)` it was fitted on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub slope: f64,
    pub points: Vec<(f64, f64)>,
}

/// Monte-Carlo check of the isotonic sup-norm rate. For each sample size
/// draws uniform covariates on `domain`, responses `phi(x)` plus Gaussian
/// noise, fits, and measures the sup error over the interior shrunk by
/// `delta_n = rho_n^(1/(2 alpha + 1))` with `rho_n = ln n / n`. Returns the
/// least-squares slope of `log(mean sup error)` against `log rho_n`, which
/// the theory puts at `alpha / (2 alpha + 1)`.
pub fn rate_validator(
    model: UtilityModel,
    domain: Interval,
    n_grid: &[usize],
    noise_sigma: f64,
    reps: usize,
    seed: u64,
) -> Result<RateReport, IsotonicError> {
    let alpha = model
        .holder_alpha(domain)
        .expect("rate validation needs a Holder-continuous marginal map");
    let mut points = Vec::with_capacity(n_grid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma checked");
    for &n in n_grid {
        let rho_n = (n as f64).ln() / n as f64;
        let delta_n = rho_n.powf(1.0 / (2.0 * alpha + 1.0));
        let mut total = 0.0;
        for _ in 0..reps {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x = rng.gen_range(domain.lo..=domain.hi);
                let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                xs.push(x);
                ys.push(model.phi(x).expect("domain checked") + eps);
            }
            let fit = pava(&xs, &ys)?;
            let lo = domain.lo + delta_n;
            let hi = domain.hi - delta_n;
            let mut sup = 0.0f64;
            if lo < hi {
                let grid = 2000;
                for k in 0..=grid {
                    let x = lo + (hi - lo) * k as f64 / grid as f64;
                    let err = (fit.interpolate(x) - model.phi(x).expect("domain checked")).abs();
                    sup = sup.max(err);
                }
            }
            total += sup;
        }
        points.push((rho_n, total / reps as f64));
    }
    Ok(RateReport {
        slope: log_log_slope(&points),
        points,
    })
}

/// Ordinary least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &logs {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Exact brute-force oracle for small instances: dynamic program over the
/// grid of all consecutive-block weighted means, which contains the optimal
/// fitted values. Returns (fitted values per knot, objective).
pub fn brute_force_monotone_ls(
    knots: &[f64],
    means: &[f64],
    weights: &[f64],
) -> (Vec<f64>, f64) {
    let m = knots.len();
    // Candidate level set: every weighted mean of a consecutive block.
    let mut levels = Vec::new();
    for r in 0..m {
        let mut sw = 0.0;
        let mut sy = 0.0;
        for s in r..m {
            sw += weights[s];
            sy += weights[s] * means[s];
            levels.push(sy / sw);
        }
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let g = levels.len();

    // cost[j][t]: best objective for the first t+1 knots with value index <= j
    // at position t. Rolling prefix-min keeps it O(m g).
    let mut prev = vec![0.0f64; g];
    for (j, &lv) in levels.iter().enumerate() {
        let d = means[0] - lv;
        prev[j] = weights[0] * d * d;
    }
    let mut choice = vec![vec![0usize; g]; m];
    for j in 0..g {
        choice[0][j] = j;
    }
    // prefix-min over levels converts "value at t-1 <= value at t".
    let mut running = prev.clone();
    let mut arg = vec![0usize; g];
    for j in 1..g {
        if running[j - 1] <= running[j] {
            running[j] = running[j - 1];
            arg[j] = arg[j - 1];
        } else {
            arg[j] = j;
        }
    }
    let mut prev_arg = arg;
    let mut prev_min = running;
    for t in 1..m {
        let mut cur = vec![0.0f64; g];
        for (j, &lv) in levels.iter().enumerate() {
            let d = means[t] - lv;
            cur[j] = prev_min[j] + weights[t] * d * d;
            choice[t][j] = prev_arg[j];
        }
        let mut running = cur.clone();
        let mut arg: Vec<usize> = (0..g).collect();
        for j in 1..g {
            if running[j - 1] <= running[j] {
                running[j] = running[j - 1];
                arg[j] = arg[j - 1];
            }
        }
        prev = cur;
        prev_min = running;
        prev_arg = arg;
    }
    let (j_best, &obj) = prev
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty levels");
    // Reconstruct the monotone value assignment.
    let mut vals = vec![0.0; m];
    let mut j = j_best;
    for t in (0..m).rev() {
        vals[t] = levels[j];
        j = choice[t][j];
    }
    (vals, obj)
}

/// Weighted squared error of a fit against collapsed (knot, mean, weight)
/// data. The within-tie variance is a constant offset shared by all fits.
pub fn weighted_objective(values: &[f64], means: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(means)
        .zip(weights)
        .map(|((v, m), w)| w * (v - m) * (v - m))
        .sum()
}
