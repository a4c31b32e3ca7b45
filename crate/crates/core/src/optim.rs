//! Derivative-free box-constrained maximization.
//!
//! Multi-start Nelder-Mead with the adaptive coefficients of Gao and Han,
//! followed by coordinate-wise golden-section/parabolic polish of the best
//! point. Every objective evaluation is counted against a shared budget so
//! callers get deterministic, reproducible costs.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Shared evaluation budget. `spend` returns false once the cap is reached.
pub struct Budget {
    used: u64,
    cap: u64,
}

impl Budget {
    pub fn new(cap: u64) -> Self {
        Self { used: 0, cap }
    }

    pub fn spend(&mut self) -> bool {
        if self.used >= self.cap {
            return false;
        }
        self.used += 1;
        true
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.cap
    }
}

pub struct BoxMaximizer<'a> {
    pub lo: &'a DVector<f64>,
    pub hi: &'a DVector<f64>,
    /// Number of simplex restarts; the budget is split evenly across them.
    pub starts: usize,
    /// Simplex convergence: relative spread of objective values.
    pub f_spread_tol: f64,
    /// Polish convergence: largest coordinate move in one sweep.
    pub x_move_tol: f64,
}

pub struct MaximizeOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub evaluations: u64,
    /// False when the evaluation cap cut a phase short.
    pub completed: bool,
}

impl<'a> BoxMaximizer<'a> {
    /// Maximize `f` over the box. Start 0 is the box midpoint, then any
    /// caller-supplied starts (clamped into the box), then uniform draws
    /// from `rng`. Ties in the final comparison go to the earliest start,
    /// keeping the result independent of evaluation order.
    pub fn run<F: FnMut(&DVector<f64>) -> f64>(
        &self,
        mut f: F,
        rng: &mut ChaCha8Rng,
        budget_cap: u64,
        extra_starts: &[DVector<f64>],
    ) -> MaximizeOutcome {
        let n = self.lo.len();
        let mut budget = Budget::new(budget_cap);
        let mut best_x = DVector::zeros(n);
        for i in 0..n {
            best_x[i] = 0.5 * (self.lo[i] + self.hi[i]);
        }
        let mut best_f = f64::NEG_INFINITY;
        let mut completed = true;

        // The simplex phase splits its share evenly across starts; the rest
        // is held back so the coordinate polish never starves.
        let simplex_share = budget_cap.saturating_mul(3) / 5;
        let per_start = (simplex_share / self.starts.max(1) as u64).max(1);
        for s in 0..self.starts {
            let mut x0 = DVector::zeros(n);
            if s == 0 {
                for i in 0..n {
                    x0[i] = 0.5 * (self.lo[i] + self.hi[i]);
                }
            } else if let Some(seed) = extra_starts.get(s - 1) {
                x0 = seed.clone();
                self.clamp(&mut x0);
            } else {
                for i in 0..n {
                    x0[i] = rng.gen_range(self.lo[i]..=self.hi[i]);
                }
            }
            let cap_here = (budget.used() + per_start).min(budget_cap);
            let (x, v, done) = self.nelder_mead(&mut f, x0, &mut budget, cap_here);
            completed &= done;
            if v > best_f {
                best_f = v;
                best_x = x;
            }
        }

        // Coordinate polish spends whatever budget remains.
        let polished = self.coordinate_polish(&mut f, best_x, best_f, &mut budget);
        completed &= polished.2;
        MaximizeOutcome {
            x: polished.0,
            value: polished.1,
            evaluations: budget.used(),
            completed: completed && !budget.exhausted(),
        }
    }

    fn clamp(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Nelder-Mead with box clamping and adaptive coefficients; runs until
    /// the simplex collapses or `cap_here` evaluations have been spent.
    fn nelder_mead<F: FnMut(&DVector<f64>) -> f64>(
        &self,
        f: &mut F,
        x0: DVector<f64>,
        budget: &mut Budget,
        cap_here: u64,
    ) -> (DVector<f64>, f64, bool) {
        let n = x0.len();
        let nf = n as f64;
        // Gao-Han adaptive parameters.
        let alpha = 1.0;
        let beta = 1.0 + 2.0 / nf;
        let gamma = 0.75 - 1.0 / (2.0 * nf);
        let sigma = 1.0 - 1.0 / nf;

        let mut eval = |x: &DVector<f64>, budget: &mut Budget| -> Option<f64> {
            if budget.used() >= cap_here || !budget.spend() {
                return None;
            }
            Some(f(x))
        };

        // Initial simplex: x0 plus per-coordinate nudges of 5% box width.
        let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = match eval(&x0, budget) {
            Some(v) => v,
            None => return (x0, f64::NEG_INFINITY, false),
        };
        simplex.push((x0.clone(), v0));
        for i in 0..n {
            let mut xi = x0.clone();
            let width = self.hi[i] - self.lo[i];
            let step = 0.05 * width;
            xi[i] = if xi[i] + step <= self.hi[i] {
                xi[i] + step
            } else {
                xi[i] - step
            };
            self.clamp(&mut xi);
            match eval(&xi, budget) {
                Some(v) => simplex.push((xi, v)),
                None => {
                    let (bx, bv) = simplex
                        .into_iter()
                        .max_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap();
                    return (bx, bv, false);
                }
            }
        }

        loop {
            // Sort descending: best first (maximization).
            simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let spread = (best - worst).abs();
            if spread <= self.f_spread_tol * (1.0 + best.abs()) {
                return (simplex[0].0.clone(), best, true);
            }
            if budget.used() >= cap_here {
                return (simplex[0].0.clone(), best, false);
            }

            let mut centroid = DVector::zeros(n);
            for (x, _) in simplex.iter().take(n) {
                centroid += x;
            }
            centroid /= nf;

            let worst_x = simplex[n].0.clone();
            let mut reflected = &centroid + (&centroid - &worst_x) * alpha;
            self.clamp(&mut reflected);
            let fr = match eval(&reflected, budget) {
                Some(v) => v,
                None => return (simplex[0].0.clone(), best, false),
            };

            if fr > simplex[0].1 {
                // Try expanding past the reflection.
                let mut expanded = &centroid + (&centroid - &worst_x) * beta;
                self.clamp(&mut expanded);
                match eval(&expanded, budget) {
                    Some(fe) if fe > fr => simplex[n] = (expanded, fe),
                    Some(_) => simplex[n] = (reflected, fr),
                    None => {
                        simplex[n] = (reflected, fr);
                        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
                        return (simplex[0].0.clone(), simplex[0].1, false);
                    }
                }
            } else if fr > simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
            } else {
                // Contract toward the centroid, outside or inside.
                let (mut contracted, against) = if fr > worst {
                    (&centroid + (&centroid - &worst_x) * gamma, fr)
                } else {
                    (&centroid - (&centroid - &worst_x) * gamma, worst)
                };
                self.clamp(&mut contracted);
                let fc = match eval(&contracted, budget) {
                    Some(v) => v,
                    None => return (simplex[0].0.clone(), best, false),
                };
                if fc > against {
                    simplex[n] = (contracted, fc);
                } else {
                    // Shrink everything toward the best vertex.
                    let anchor = simplex[0].0.clone();
                    for k in 1..=n {
                        let mut xk = &anchor + (&simplex[k].0 - &anchor) * sigma;
                        self.clamp(&mut xk);
                        match eval(&xk, budget) {
                            Some(v) => simplex[k] = (xk, v),
                            None => {
                                simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
                                return (simplex[0].0.clone(), simplex[0].1, false);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Cyclic coordinate sweeps, each a golden-section search on the full
    /// coordinate slice. Quadratic slices converge in a few dozen shrinks.
    fn coordinate_polish<F: FnMut(&DVector<f64>) -> f64>(
        &self,
        f: &mut F,
        mut x: DVector<f64>,
        mut fx: f64,
        budget: &mut Budget,
    ) -> (DVector<f64>, f64, bool) {
        let n = x.len();
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        for _sweep in 0..200 {
            let mut max_move = 0.0f64;
            for i in 0..n {
                let mut a = self.lo[i];
                let mut b = self.hi[i];
                if b - a <= 0.0 {
                    continue;
                }
                let original = x[i];
                let mut probe = |t: f64, x: &mut DVector<f64>, budget: &mut Budget| -> Option<f64> {
                    if !budget.spend() {
                        return None;
                    }
                    x[i] = t;
                    Some(f(x))
                };
                let mut c = b - INV_PHI * (b - a);
                let mut d = a + INV_PHI * (b - a);
                let mut fc = match probe(c, &mut x, budget) {
                    Some(v) => v,
                    None => {
                        x[i] = original;
                        return (x, fx, false);
                    }
                };
                let mut fd = match probe(d, &mut x, budget) {
                    Some(v) => v,
                    None => {
                        x[i] = original;
                        return (x, fx, false);
                    }
                };
                for _ in 0..80 {
                    if b - a <= 1e-12 * (1.0 + original.abs()) {
                        break;
                    }
                    if fc > fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - INV_PHI * (b - a);
                        fc = match probe(c, &mut x, budget) {
                            Some(v) => v,
                            None => {
                                x[i] = original;
                                return (x, fx, false);
                            }
                        };
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + INV_PHI * (b - a);
                        fd = match probe(d, &mut x, budget) {
                            Some(v) => v,
                            None => {
                                x[i] = original;
                                return (x, fx, false);
                            }
                        };
                    }
                }
                let (t_new, f_new) = if fc > fd { (c, fc) } else { (d, fd) };
                if f_new >= fx {
                    x[i] = t_new;
                    fx = f_new;
                    max_move = max_move.max((t_new - original).abs());
                } else {
                    x[i] = original;
                }
            }
            if max_move <= self.x_move_tol {
                return (x, fx, true);
            }
        }
        (x, fx, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn recovers_separable_quadratic_maximum() {
        let n = 8;
        let lo = DVector::from_element(n, 0.0);
        let hi = DVector::from_element(n, 4.0);
        let target: Vec<f64> = (0..n).map(|i| 0.5 + 0.35 * i as f64).collect();
        let maximizer = BoxMaximizer {
            lo: &lo,
            hi: &hi,
            starts: 8,
            f_spread_tol: 1e-12,
            x_move_tol: 1e-10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = maximizer.run(
            |x| -(0..n).map(|i| (x[i] - target[i]).powi(2)).sum::<f64>(),
            &mut rng,
            40_000,
            &[],
        );
        for i in 0..n {
            assert!(
                (out.x[i] - target[i]).abs() < 1e-6,
                "coord {i}: {} vs {}",
                out.x[i],
                target[i]
            );
        }
        assert!(out.completed);
    }

    #[test]
    fn respects_box_bounds() {
        let lo = DVector::from_element(3, 0.0);
        let hi = DVector::from_element(3, 1.0);
        let maximizer = BoxMaximizer {
            lo: &lo,
            hi: &hi,
            starts: 4,
            f_spread_tol: 1e-12,
            x_move_tol: 1e-10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Maximum outside the box at (2, 2, 2): must land on the corner.
        let out = maximizer.run(
            |x| -(0..3).map(|i| (x[i] - 2.0).powi(2)).sum::<f64>(),
            &mut rng,
            20_000,
            &[],
        );
        for i in 0..3 {
            assert!((out.x[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let lo = DVector::from_element(5, -1.0);
        let hi = DVector::from_element(5, 1.0);
        let maximizer = BoxMaximizer {
            lo: &lo,
            hi: &hi,
            starts: 4,
            f_spread_tol: 1e-12,
            x_move_tol: 1e-10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = maximizer.run(|x| -x.norm_squared(), &mut rng, 50, &[]);
        assert!(!out.completed);
        assert!(out.evaluations <= 50);
    }
}
