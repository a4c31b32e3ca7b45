//! Seller-side pricing: revenue evaluation, consumption-space price
//! optimization, closed-form benchmark oracles, intrinsic influential
//! values, and the influencer price lower bound.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{price_map, solve, Market, SolverError, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::network::{spectral_radius, NetworkError};
use crate::optim::BoxMaximizer;
use crate::utility::UtilityModel;

/// Fraction of the feasible box width treated as "interior" when sampling
/// consumption profiles (keeps singular families finite).
pub const INTERIOR_MARGIN: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("unstable benchmark: delta (n - 1) = {0} >= 1")]
    Stability(f64),
    #[error("degenerate closed form: {0}")]
    Degenerate(String),
    #[error("structural precondition violated: {0}")]
    Structure(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no sign change when bracketing the symmetric first-order condition: {0}")]
    Bracket(String),
    #[error("evaluation budget exhausted before the search settled")]
    BudgetExhausted(Box<OracleSolution>),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Feasible price set, a coordinate box with `0 <= lo <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PriceBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, PricingError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(PricingError::Precondition(
                "price box bounds must be nonempty and equally sized".into(),
            ));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(*l >= 0.0 && l <= h) {
                return Err(PricingError::Precondition(format!(
                    "price box needs 0 <= lo <= hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self, PricingError> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        (0..self.len()).all(|i| self.lo[i] <= p[i] && p[i] <= self.hi[i])
    }

    pub fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|i| p[i].clamp(self.lo[i], self.hi[i])),
        )
    }

    pub fn max_hi(&self) -> f64 {
        self.hi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Price vector with its certified equilibrium and revenue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSolution {
    pub p_star: Vec<f64>,
    pub x_star: Vec<f64>,
    pub revenue: f64,
    pub evaluations: u64,
}

/// Intrinsic influential values and the witness profile where the analytic
/// bound is tight, when one exists in the domain interior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IIVReport {
    pub v: Vec<f64>,
    pub exact_at: Option<Vec<f64>>,
}

/// Result of the influencer price lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InfluencerBound {
    Bound(f64),
    /// The hypothesis `V_i < phi^-1(a_i) / (p_max b_i)` fails.
    NotApplicable,
}

/// Revenue `p^T x*(p)` at the certified equilibrium.
pub fn revenue(mkt: &Market, p: &DVector<f64>) -> Result<f64, PricingError> {
    let eq = solve(mkt, p, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok(p.dot(&eq.x))
}

/// Per-coordinate image of the price map over a Latin hypercube sample of
/// the interior consumption box, clipped to nonnegative prices. This is the
/// operative feasible price set for experiments.
pub fn price_box_from_consumption(
    mkt: &Market,
    samples: usize,
    seed: u64,
) -> Result<PriceBox, PricingError> {
    let n = mkt.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = mkt.domains();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    // Latin hypercube: per coordinate, one draw in each of `samples` strata,
    // in a seeded random stratum order.
    let mut strata: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut idx: Vec<usize> = (0..samples).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    for s in 0..samples {
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let interior = domains[i].shrink(INTERIOR_MARGIN);
            let stratum = strata[i][s] as f64;
            let u: f64 = rng.gen();
            z[i] = interior.lo + interior.width() * (stratum + u) / samples as f64;
        }
        let p = price_map(mkt, &z)?;
        for i in 0..n {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    strata.clear();
    for i in 0..n {
        lo[i] = lo[i].max(0.0);
        hi[i] = hi[i].max(0.0);
    }
    PriceBox::new(lo, hi)
}

/// Revenue maximization in consumption space: search `z` over the interior
/// of the feasible box, score `z^T Q(z)` when `Q(z)` lands inside the price
/// box, and otherwise project the price and score the true equilibrium
/// revenue there. Returns the best price/consumption pair found.
pub fn optimize_prices(
    mkt: &Market,
    price_box: &PriceBox,
    budget: u64,
    seed: u64,
) -> Result<OracleSolution, PricingError> {
    let q = |z: &DVector<f64>| price_map(mkt, z);
    // Scoring tolerance can be looser than the reporting tolerance: the
    // equilibrium revenue only ranks candidates here.
    let infeasible = |_z: &DVector<f64>, p: &DVector<f64>| -> Option<f64> {
        solve(mkt, p, 1e-8, DEFAULT_MAX_ITER)
            .ok()
            .map(|eq| p.dot(&eq.x))
    };
    let final_infeasible = |p: &DVector<f64>| -> Result<(DVector<f64>, f64), PricingError> {
        let eq = solve(mkt, p, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let rev = p.dot(&eq.x);
        Ok((eq.x, rev))
    };
    let out =
        maximize_consumption_revenue(mkt, price_box, q, infeasible, final_infeasible, budget, seed)?;
    if out.completed {
        Ok(out.solution)
    } else {
        Err(PricingError::BudgetExhausted(Box::new(out.solution)))
    }
}

pub(crate) struct ConsumptionSearch {
    pub solution: OracleSolution,
    pub completed: bool,
}

/// Shared consumption-space search used by both the true-model oracle and
/// the plug-in learner (which passes its own estimated price map).
///
/// `infeasible_revenue(z, projected_p)` scores candidates whose prices left
/// the box after projecting them back in; `final_infeasible(projected_p)`
/// produces the reported consumption and revenue when the winner itself is
/// infeasible.
pub(crate) fn maximize_consumption_revenue<Q, I, R>(
    mkt: &Market,
    price_box: &PriceBox,
    price_of: Q,
    infeasible_revenue: I,
    final_infeasible: R,
    budget: u64,
    seed: u64,
) -> Result<ConsumptionSearch, PricingError>
where
    Q: Fn(&DVector<f64>) -> Result<DVector<f64>, SolverError>,
    I: Fn(&DVector<f64>, &DVector<f64>) -> Option<f64>,
    R: Fn(&DVector<f64>) -> Result<(DVector<f64>, f64), PricingError>,
{
    let n = mkt.n();
    let domains = mkt.domains();
    let lo = DVector::from_iterator(n, domains.iter().map(|d| d.shrink(INTERIOR_MARGIN).lo));
    let hi = DVector::from_iterator(n, domains.iter().map(|d| d.shrink(INTERIOR_MARGIN).hi));
    // Out-of-box prices score the projected revenue minus a violation
    // penalty; the projected revenue alone is flat in the clamped
    // coordinates and would strand the simplex outside the feasible set.
    let objective = |z: &DVector<f64>| -> f64 {
        match price_of(z) {
            Ok(p) => {
                if price_box.contains(&p) {
                    z.dot(&p)
                } else {
                    let projected = price_box.project(&p);
                    let violation: f64 = (0..n).map(|i| (p[i] - projected[i]).abs()).sum();
                    match infeasible_revenue(z, &projected) {
                        Some(base) => base - (1.0 + base.abs()) * violation,
                        None => f64::NEG_INFINITY,
                    }
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let maximizer = BoxMaximizer {
        lo: &lo,
        hi: &hi,
        starts: 8usize.max(2 * n),
        f_spread_tol: 1e-13,
        x_move_tol: 1e-11,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Seed some simplex starts at equilibria of box-uniform prices: these
    // sit in (or near) the feasible consumption region even when that
    // region is a thin slice of the box.
    let mut extra_starts = Vec::new();
    for _ in 0..(maximizer.starts / 2).min(8) {
        let p = DVector::from_iterator(
            n,
            (0..n).map(|i| rng.gen_range(price_box.lo[i]..=price_box.hi[i])),
        );
        if let Ok(eq) = solve(mkt, &p, 1e-8, 10_000) {
            extra_starts.push(eq.x);
        }
    }
    let out = maximizer.run(objective, &mut rng, budget, &extra_starts);

    let z = out.x;
    let p = price_of(&z)?;
    let (p_star, x_star, rev) = if price_box.contains(&p) {
        (p.clone(), z.clone(), z.dot(&p))
    } else {
        let projected = price_box.project(&p);
        let (x, rev) = final_infeasible(&projected)?;
        (projected, x, rev)
    };
    Ok(ConsumptionSearch {
        solution: OracleSolution {
            p_star: p_star.iter().copied().collect(),
            x_star: x_star.iter().copied().collect(),
            revenue: rev,
            evaluations: out.evaluations,
        },
        completed: out.completed,
    })
}

/// Closed forms for homogeneous linear-quadratic consumers on the null and
/// complete benchmark networks: the optimal price is `a/(2b)` on both, while
/// consumption inflates by `1/(1 - delta (n-1))` on the complete network.
pub fn lq_closed_forms(
    complete: bool,
    a: f64,
    b: f64,
    delta: f64,
    n: usize,
) -> Result<OracleSolution, PricingError> {
    let p = a / (2.0 * b);
    let x = if complete {
        let feedback = delta * (n as f64 - 1.0);
        if feedback >= 1.0 {
            return Err(PricingError::Stability(feedback));
        }
        a / (2.0 * (1.0 - feedback))
    } else {
        a / 2.0
    };
    Ok(OracleSolution {
        p_star: vec![p; n],
        x_star: vec![x; n],
        revenue: n as f64 * p * x,
        evaluations: 0,
    })
}

/// Which directed star the closed form describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarKind {
    /// Node 0 is influenced by everyone (its row is all ones).
    Follower,
    /// Node 0 influences everyone (its column is all ones).
    Influencer,
}

/// Closed-form optimal prices for the two directed stars under the
/// linear-quadratic model with unit price sensitivities.
pub fn star_prices(kind: StarKind, a: &[f64], delta: f64) -> Result<Vec<f64>, PricingError> {
    let n = a.len();
    if n < 2 {
        return Err(PricingError::Degenerate(
            "star networks need at least two nodes".into(),
        ));
    }
    let denom = 4.0 - (n as f64 - 1.0) * delta * delta;
    if denom <= 0.0 {
        return Err(PricingError::Degenerate(format!(
            "(n - 1) delta^2 = {} must stay below 4",
            (n as f64 - 1.0) * delta * delta
        )));
    }
    let hub_a = a[0];
    let leaf_sum: f64 = a[1..].iter().sum();
    let mut p = vec![0.0; n];
    match kind {
        StarKind::Follower => {
            p[0] = (2.0 * hub_a + delta * leaf_sum) / denom;
            for i in 1..n {
                p[i] = (a[i] - delta * p[0]) / 2.0;
            }
        }
        StarKind::Influencer => {
            p[0] = (2.0 * hub_a - delta * leaf_sum - (n as f64 - 1.0) * delta * delta * hub_a)
                / denom;
            for i in 1..n {
                p[i] = (a[i] + delta * hub_a - delta * p[0]) / 2.0;
            }
        }
    }
    Ok(p)
}

/// Whether every entry of the adjacency is nonnegative.
fn nonnegative_network(mkt: &Market) -> bool {
    mkt.net().g().iter().all(|&v| v >= 0.0)
}

fn all_linear_quadratic(mkt: &Market) -> bool {
    mkt.consumers()
        .iter()
        .all(|c| c.model == UtilityModel::LinearQuadratic)
}

/// Intrinsic influential values `v = 1^T (D - delta G)^-1`, the generalized
/// Katz-Bonacich vector. Valid for nonnegative networks under the
/// contraction condition, or for any network under the linear-quadratic
/// model (constant Jacobian).
pub fn iiv(mkt: &Market) -> Result<IIVReport, PricingError> {
    let n = mkt.n();
    let lq = all_linear_quadratic(mkt);
    if !lq {
        if !nonnegative_network(mkt) {
            return Err(PricingError::Precondition(
                "signed networks with nonlinear utilities admit no analytic influence bound"
                    .into(),
            ));
        }
        let mut m = mkt.net().g().clone();
        for i in 0..n {
            let scale = mkt.net().delta() / mkt.curvature().mu[i];
            for j in 0..n {
                m[(i, j)] *= scale;
            }
        }
        let rho = spectral_radius(&m);
        if rho >= 1.0 {
            return Err(PricingError::Precondition(format!(
                "contraction condition fails: rho(delta D^-1 G) = {rho}"
            )));
        }
    }
    // Solve (D - delta G)^T w = 1; v = w.
    let mut a = -(mkt.net().g() * mkt.net().delta()).transpose();
    for i in 0..n {
        a[(i, i)] += mkt.curvature().mu[i];
    }
    let ones = DVector::from_element(n, 1.0);
    let v = a
        .lu()
        .solve(&ones)
        .ok_or_else(|| PricingError::Precondition("D - delta G is singular".into()))?;

    // Witness profile where the per-consumer curvature floors are attained
    // simultaneously at an interior point.
    let mut witness = Vec::with_capacity(n);
    let mut have_witness = true;
    for c in mkt.consumers() {
        match c.model.mu_witness(c.domain) {
            Some(x) => witness.push(x),
            None => {
                have_witness = false;
                break;
            }
        }
    }
    Ok(IIVReport {
        v: v.iter().copied().collect(),
        exact_at: have_witness.then_some(witness),
    })
}

/// Lower bound on the optimal price of an uninfluenced consumer `i` (zero
/// row of `G`): when `V_i < phi_i^-1(a_i) / (p_max b_i)` the optimal price
/// is at least `(a_i - phi_i(p_max b_i V_i)) / b_i > 0`.
pub fn influencer_lower_bound(
    mkt: &Market,
    i: usize,
    price_box: &PriceBox,
) -> Result<InfluencerBound, PricingError> {
    let n = mkt.n();
    if i >= n {
        return Err(PricingError::Precondition(format!(
            "node {i} outside a {n}-consumer market"
        )));
    }
    for j in 0..n {
        if mkt.net().g()[(i, j)] != 0.0 {
            return Err(PricingError::Structure(format!(
                "row {i} of the network is not zero (entry to {j} is {})",
                mkt.net().g()[(i, j)]
            )));
        }
    }
    if !nonnegative_network(mkt) {
        return Err(PricingError::Precondition(
            "the bound requires a nonnegative network".into(),
        ));
    }
    let report = iiv(mkt)?;
    let v_i = report.v[i];
    let c = &mkt.consumers()[i];
    let p_max = price_box.max_hi();
    let threshold = match c.model.phi_inv(c.a) {
        Ok(x) => x / (p_max * c.b),
        Err(_) => return Ok(InfluencerBound::NotApplicable),
    };
    if !(v_i < threshold) {
        return Ok(InfluencerBound::NotApplicable);
    }
    match c.model.phi(p_max * c.b * v_i) {
        Ok(phi_val) => Ok(InfluencerBound::Bound((c.a - phi_val) / c.b)),
        // The bound argument fell outside phi's natural domain.
        Err(_) => Ok(InfluencerBound::NotApplicable),
    }
}

/// Symmetric-optimum first-order condition for homogeneous consumers on the
/// null or complete benchmark: solves `a - phi(x) - x phi'(x) = 0` (null) or
/// `a - phi(x) - x phi'(x) + 2 delta (n-1) x = 0` (complete) by bisection and
/// maps the root back to the symmetric price.
pub fn nonlinear_symmetric_foc(
    complete: bool,
    model: UtilityModel,
    a: f64,
    b: f64,
    delta: f64,
    n: usize,
) -> Result<(f64, f64), PricingError> {
    model
        .validate()
        .map_err(|e| PricingError::Precondition(e.to_string()))?;
    let coupling = if complete {
        2.0 * delta * (n as f64 - 1.0)
    } else {
        0.0
    };
    let f = |x: f64| -> Result<f64, PricingError> {
        let phi = model.phi(x).map_err(SolverError::from)?;
        let slope = model.phi_prime(x).map_err(SolverError::from)?;
        Ok(a - phi - x * slope + coupling * x)
    };
    let (dom_lo, dom_hi) = model.natural_domain();
    // Interior starting bracket; expand the right end until the sign flips.
    let mut lo = if dom_lo.is_finite() {
        if dom_hi.is_finite() {
            dom_lo + 1e-6 * (dom_hi - dom_lo)
        } else {
            dom_lo + 1e-6
        }
    } else {
        0.0
    };
    let mut hi = if dom_hi.is_finite() {
        dom_hi - 1e-6 * (dom_hi - dom_lo)
    } else {
        lo.max(1e-6) * 2.0 + 1.0
    };
    let mut flo = f(lo)?;
    if flo < 0.0 {
        // Shrink toward the singular end where the objective climbs.
        let mut tries = 0;
        while flo < 0.0 && tries < 60 {
            lo = dom_lo + (lo - dom_lo) * 0.25;
            if lo <= dom_lo {
                break;
            }
            flo = f(lo)?;
            tries += 1;
        }
        if flo < 0.0 {
            return Err(PricingError::Bracket(format!(
                "objective already negative at the left end (f({lo}) = {flo})"
            )));
        }
    }
    let mut fhi = f(hi)?;
    let mut tries = 0;
    while fhi > 0.0 {
        if dom_hi.is_finite() || tries >= 60 {
            return Err(PricingError::Bracket(format!(
                "no sign change up to x = {hi} (f = {fhi})"
            )));
        }
        hi *= 2.0;
        fhi = f(hi)?;
        tries += 1;
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.abs() <= 1e-14 * (1.0 + a.abs()) || (hi - lo) <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = mid;
    let phi = model.phi(x).map_err(SolverError::from)?;
    let p = if complete {
        (a - phi + delta * (n as f64 - 1.0) * x) / b
    } else {
        (a - phi) / b
    };
    Ok((x, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_topology, TopologySpec};
    use crate::utility::Interval;
    use nalgebra::DMatrix;

    fn lq_market(spec: &TopologySpec, delta: f64, a: f64, b: f64, hi: f64) -> Market {
        let net = build_topology(spec, delta, 0).unwrap();
        Market::homogeneous(
            net,
            a,
            b,
            UtilityModel::LinearQuadratic,
            Interval::new(0.0, hi).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn revenue_examples() {
        let mkt = lq_market(&TopologySpec::Null { n: 1 }, 0.0, 3.0, 1.0, 4.0);
        assert!(revenue(&mkt, &DVector::zeros(1)).unwrap().abs() < 1e-12);
        let r = revenue(&mkt, &DVector::from_element(1, 1.5)).unwrap();
        assert!((r - 2.25).abs() < 1e-10);

        let mkt = lq_market(&TopologySpec::Complete { n: 5 }, 0.1, 3.0, 1.0, 4.0);
        let r = revenue(&mkt, &DVector::from_element(5, 1.5)).unwrap();
        assert!((r - 18.75).abs() < 1e-8);
    }

    #[test]
    fn lq_closed_form_values() {
        let sol = lq_closed_forms(false, 3.0, 1.0, 0.0, 4).unwrap();
        assert_eq!(sol.p_star, vec![1.5; 4]);
        assert_eq!(sol.x_star, vec![1.5; 4]);
        let sol = lq_closed_forms(true, 3.0, 1.0, 0.1, 5).unwrap();
        assert_eq!(sol.p_star, vec![1.5; 5]);
        assert!(sol.x_star.iter().all(|&x| (x - 2.5).abs() < 1e-15));
        assert!(matches!(
            lq_closed_forms(true, 3.0, 1.0, 0.25, 5),
            Err(PricingError::Stability(_))
        ));
    }

    #[test]
    fn star_price_closed_forms() {
        let a = vec![1.0; 5];
        let p = star_prices(StarKind::Follower, &a, 0.1).unwrap();
        assert!((p[0] - 2.4 / 3.96).abs() < 1e-12);
        for i in 1..5 {
            assert!((p[i] - (1.0 - 0.1 * p[0]) / 2.0).abs() < 1e-12);
            assert!(p[0] > p[i]);
        }
        let p = star_prices(StarKind::Influencer, &a, 0.1).unwrap();
        assert!((p[0] - 1.56 / 3.96).abs() < 1e-12);
        for i in 1..5 {
            assert!(p[0] < p[i]);
        }
        // delta = 0 reduces both stars to the decoupled benchmark.
        let p = star_prices(StarKind::Follower, &[2.0, 4.0, 6.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            star_prices(StarKind::Follower, &[1.0; 5], 1.01),
            Err(PricingError::Degenerate(_))
        ));
    }

    #[test]
    fn optimizer_recovers_null_lq_price() {
        let mkt = lq_market(&TopologySpec::Null { n: 4 }, 0.0, 3.0, 1.0, 4.0);
        let boxp = PriceBox::uniform(4, 0.0, 3.0).unwrap();
        let sol = optimize_prices(&mkt, &boxp, 30_000, 1).unwrap();
        for i in 0..4 {
            assert!(
                (sol.p_star[i] - 1.5).abs() < 1e-3,
                "p[{i}] = {}",
                sol.p_star[i]
            );
        }
        assert!((sol.revenue - 4.0 * 1.5 * 1.5).abs() < 1e-3);
    }

    #[test]
    fn optimizer_matches_complete_lq_invariance() {
        let mkt = lq_market(&TopologySpec::Complete { n: 5 }, 0.1, 3.0, 1.0, 4.0);
        let boxp = PriceBox::uniform(5, 0.0, 3.0).unwrap();
        let sol = optimize_prices(&mkt, &boxp, 40_000, 2).unwrap();
        for i in 0..5 {
            assert!((sol.p_star[i] - 1.5).abs() < 1e-3);
            assert!((sol.x_star[i] - 2.5).abs() < 5e-3);
        }
    }

    #[test]
    fn optimizer_discrete_choice_single_consumer() {
        let net = build_topology(&TopologySpec::Null { n: 1 }, 0.0, 0).unwrap();
        let mkt = Market::homogeneous(
            net,
            2.0,
            1.0,
            UtilityModel::DiscreteChoice,
            Interval::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        let boxp = PriceBox::uniform(1, 0.0, 16.0).unwrap();
        let sol = optimize_prices(&mkt, &boxp, 20_000, 3).unwrap();
        // Bisection oracle on a - ln(x/(1-x)) - 1/(1-x) = 0, then p = (a - phi(x))/b.
        let (x_opt, p_opt) =
            nonlinear_symmetric_foc(false, UtilityModel::DiscreteChoice, 2.0, 1.0, 0.0, 1)
                .unwrap();
        assert!((sol.x_star[0] - x_opt).abs() < 1e-3);
        assert!((sol.p_star[0] - p_opt).abs() < 2e-3);
    }

    #[test]
    fn iiv_null_network_is_ones() {
        let mkt = lq_market(&TopologySpec::Null { n: 3 }, 0.0, 3.0, 1.0, 4.0);
        let rep = iiv(&mkt).unwrap();
        assert!(rep.v.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(rep.exact_at.is_some());
    }

    #[test]
    fn iiv_matches_neumann_series_signed_lq() {
        let net = build_topology(
            &TopologySpec::Circular { n: 12, w: 0.08, sign_flip_fraction: 0.1 },
            0.5,
            9,
        )
        .unwrap();
        let mkt = Market::homogeneous(
            net,
            3.0,
            1.0,
            UtilityModel::LinearQuadratic,
            Interval::new(0.0, 4.0).unwrap(),
        )
        .unwrap();
        let rep = iiv(&mkt).unwrap();
        let dg = mkt.net().g() * mkt.net().delta();
        let ones = DVector::from_element(12, 1.0);
        let mut acc = ones.clone();
        let mut term = ones.clone();
        for _ in 0..500 {
            term = dg.transpose() * term;
            acc += &term;
        }
        for i in 0..12 {
            assert!((rep.v[i] - acc[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn iiv_discrete_choice_uses_four_i() {
        let net = build_topology(&TopologySpec::Complete { n: 4 }, 0.1, 0).unwrap();
        let mkt = Market::homogeneous(
            net,
            1.0,
            1.0,
            UtilityModel::DiscreteChoice,
            Interval::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        let rep = iiv(&mkt).unwrap();
        let mut a = (DMatrix::identity(4, 4) * 4.0) - mkt.net().g() * 0.1;
        a = a.transpose();
        let v = a.lu().solve(&DVector::from_element(4, 1.0)).unwrap();
        for i in 0..4 {
            assert!((rep.v[i] - v[i]).abs() < 1e-12);
        }
        assert_eq!(rep.exact_at, Some(vec![0.5; 4]));
    }

    #[test]
    fn iiv_rejects_signed_nonlinear() {
        let net = build_topology(
            &TopologySpec::Circular { n: 6, w: 0.08, sign_flip_fraction: 0.5 },
            0.3,
            4,
        )
        .unwrap();
        let mkt = Market::homogeneous(
            net,
            1.5,
            1.0,
            UtilityModel::DiscreteChoice,
            Interval::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            iiv(&mkt),
            Err(PricingError::Precondition(_))
        ));
    }

    #[test]
    fn influencer_bound_decoupled_example() {
        let mkt = lq_market(&TopologySpec::Null { n: 3 }, 0.0, 3.0, 1.0, 6.0);
        let boxp = PriceBox::uniform(3, 0.0, 2.0).unwrap();
        match influencer_lower_bound(&mkt, 0, &boxp).unwrap() {
            InfluencerBound::Bound(b) => assert!((b - 1.0).abs() < 1e-12),
            other => panic!("expected a bound, got {other:?}"),
        }
    }

    #[test]
    fn influencer_bound_guard_paths() {
        // Hypothesis violated: huge price cap makes the threshold tiny.
        let mkt = lq_market(&TopologySpec::Null { n: 2 }, 0.0, 3.0, 1.0, 6.0);
        let boxp = PriceBox::uniform(2, 0.0, 50.0).unwrap();
        assert_eq!(
            influencer_lower_bound(&mkt, 0, &boxp).unwrap(),
            InfluencerBound::NotApplicable
        );
        // Nonzero row is a structural error.
        let mkt = lq_market(&TopologySpec::StarFollower { n: 4 }, 0.1, 1.0, 1.0, 4.0);
        let boxp = PriceBox::uniform(4, 0.0, 1.0).unwrap();
        assert!(matches!(
            influencer_lower_bound(&mkt, 0, &boxp),
            Err(PricingError::Structure(_))
        ));
    }

    #[test]
    fn symmetric_foc_recovers_lq() {
        let (x, p) =
            nonlinear_symmetric_foc(false, UtilityModel::LinearQuadratic, 3.0, 1.0, 0.0, 1)
                .unwrap();
        assert!((x - 1.5).abs() < 1e-9 && (p - 1.5).abs() < 1e-9);
        let (x, p) =
            nonlinear_symmetric_foc(true, UtilityModel::LinearQuadratic, 3.0, 2.0, 0.1, 5)
                .unwrap();
        assert!((x - 3.0 / (2.0 * 0.6)).abs() < 1e-9);
        assert!((p - 0.75).abs() < 1e-9);
    }

    #[test]
    fn symmetric_foc_discrete_choice_splits_benchmarks() {
        let (x0, p0) =
            nonlinear_symmetric_foc(false, UtilityModel::DiscreteChoice, 2.0, 1.0, 0.1, 5)
                .unwrap();
        // Null benchmark: a = 2 makes x = 1/2 the exact root.
        assert!((x0 - 0.5).abs() < 1e-9);
        assert!((p0 - 2.0).abs() < 1e-9);
        let (x1, p1) =
            nonlinear_symmetric_foc(true, UtilityModel::DiscreteChoice, 2.0, 1.0, 0.1, 5)
                .unwrap();
        assert!(x1 > x0);
        assert!((p1 - p0).abs() > 1e-3, "prices {p0} vs {p1}");
    }

    #[test]
    fn symmetric_foc_bracket_error() {
        // Strong complete-network feedback leaves the objective positive.
        assert!(matches!(
            nonlinear_symmetric_foc(true, UtilityModel::LinearQuadratic, 3.0, 1.0, 0.9, 5),
            Err(PricingError::Bracket(_))
        ));
    }

    #[test]
    fn price_box_construction_contains_optimum() {
        let mkt = lq_market(&TopologySpec::Complete { n: 4 }, 0.05, 3.0, 1.0, 4.0);
        let boxp = price_box_from_consumption(&mkt, 128, 5).unwrap();
        assert!(boxp.lo.iter().all(|&l| l >= 0.0));
        let p_opt = DVector::from_element(4, 1.5);
        assert!(boxp.contains(&p_opt), "box {boxp:?}");
    }
}
