//! Consumer Nash equilibrium solvers.
//!
//! For posted prices `p` the equilibrium is the fixed point of the joint
//! best-response map, equivalently the solution of the box-constrained
//! variational inequality for `F(x) = phi(x) - a + Bp - delta G x`. Two
//! routes are implemented: best-response iteration (certified by the
//! contraction condition) and a projected forward step for the strongly
//! monotone case (certified by the variational condition).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{check_conditions, operator_norm_2, CurvatureProfile, Network, NetworkError};
use crate::utility::{ConsumerParams, Interval, UtilityError};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (residual {residual})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: DVector<f64>,
    },
    #[error("variational margin is not positive: lambda_min = {lambda_min}")]
    Margin { lambda_min: f64 },
    #[error("marginal map has unbounded slope on the feasible box; monotone stepping undefined")]
    UnboundedLipschitz,
    #[error("profile touches a singular boundary at coordinate {index} (x = {x})")]
    Boundary { index: usize, x: f64 },
    #[error("Jacobian is numerically singular")]
    Singular,
    #[error("neither uniqueness condition holds (rho = {rho}, lambda_min = {lambda_min}); refusing to iterate")]
    NoCertificate { rho: f64, lambda_min: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Solver route that produced an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Contraction,
    Monotone,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub x: DVector<f64>,
    /// Sup norm of the projected stationarity map
    /// `x - clamp(x - (phi(x) - a + Bp - delta G x))`; for interior profiles
    /// this equals the sup norm of the stacked first-order condition.
    pub residual: f64,
    pub iterations: usize,
    pub route: Route,
}

/// A market: the network, one parameter set per consumer, and the diagonal
/// curvature profile derived from each consumer's strong-convexity floor.
/// The condition report and the network operator norm are cached at
/// construction.
#[derive(Debug, Clone)]
pub struct Market {
    net: Network,
    consumers: Vec<ConsumerParams>,
    d: CurvatureProfile,
    report: crate::network::ConditionReport,
    g_norm2: f64,
}

impl Market {
    pub fn new(net: Network, consumers: Vec<ConsumerParams>) -> Result<Self, SolverError> {
        if net.n() != consumers.len() {
            return Err(SolverError::Dimension(format!(
                "{} consumers for a {}-node network",
                consumers.len(),
                net.n()
            )));
        }
        let mu = consumers
            .iter()
            .map(|c| c.model.mu_floor(c.domain))
            .collect::<Result<Vec<_>, _>>()?;
        let d = CurvatureProfile::new(mu)?;
        let report = check_conditions(&net, &d)?;
        let g_norm2 = operator_norm_2(net.g());
        Ok(Self {
            net,
            consumers,
            d,
            report,
            g_norm2,
        })
    }

    pub fn n(&self) -> usize {
        self.consumers.len()
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn consumers(&self) -> &[ConsumerParams] {
        &self.consumers
    }

    pub fn curvature(&self) -> &CurvatureProfile {
        &self.d
    }

    pub fn domains(&self) -> Vec<Interval> {
        self.consumers.iter().map(|c| c.domain).collect()
    }

    pub fn midpoint_profile(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.consumers.iter().map(|c| c.domain.midpoint()))
    }

    pub fn conditions(&self) -> &crate::network::ConditionReport {
        &self.report
    }

    /// Homogeneous helper: same parameters for every node.
    pub fn homogeneous(
        net: Network,
        a: f64,
        b: f64,
        model: crate::utility::UtilityModel,
        domain: Interval,
    ) -> Result<Self, SolverError> {
        let n = net.n();
        let consumers = (0..n)
            .map(|_| ConsumerParams::new(a, b, model, domain))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(net, consumers)
    }
}

fn check_price_dim(mkt: &Market, p: &DVector<f64>) -> Result<(), SolverError> {
    if p.len() != mkt.n() {
        return Err(SolverError::Dimension(format!(
            "price vector has {} entries for {} consumers",
            p.len(),
            mkt.n()
        )));
    }
    Ok(())
}

/// `phi` applied coordinate-wise; errors on singular boundaries.
fn phi_vec(mkt: &Market, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let mut out = DVector::zeros(mkt.n());
    for (i, c) in mkt.consumers.iter().enumerate() {
        out[i] = c.model.phi(x[i])?;
    }
    Ok(out)
}

/// The stacked operator `F(x) + Bp = phi(x) - a + Bp - delta G x`, with the
/// `a` shifted by `a_shift` when supplied (noisy exploration reuses this).
fn stationarity(
    mkt: &Market,
    x: &DVector<f64>,
    p: &DVector<f64>,
    a_shift: Option<&DVector<f64>>,
) -> Result<DVector<f64>, SolverError> {
    let gx = mkt.net.g() * x;
    let mut out = phi_vec(mkt, x)?;
    for (i, c) in mkt.consumers.iter().enumerate() {
        let mut a = c.a;
        if let Some(shift) = a_shift {
            a += shift[i];
        }
        out[i] += -a + c.b * p[i] - mkt.net.delta() * gx[i];
    }
    Ok(out)
}

/// Sup norm of the projected stationarity map at `x`.
fn projected_residual(
    mkt: &Market,
    x: &DVector<f64>,
    p: &DVector<f64>,
    a_shift: Option<&DVector<f64>>,
) -> Result<f64, SolverError> {
    let f = stationarity(mkt, x, p, a_shift)?;
    let mut worst = 0.0f64;
    for (i, c) in mkt.consumers.iter().enumerate() {
        let moved = c.domain.clamp(x[i] - f[i]);
        worst = worst.max((x[i] - moved).abs());
    }
    Ok(worst)
}

/// Sup norm of the raw stacked first-order condition at `x`.
pub fn foc_residual(mkt: &Market, x: &DVector<f64>, p: &DVector<f64>) -> Result<f64, SolverError> {
    Ok(stationarity(mkt, x, p, None)?.amax())
}

/// One synchronous best-response sweep: each coordinate plays
/// `clamp(phi^-1(a - b p + delta (G x)))`, with out-of-range arguments sent
/// to the matching endpoint of the feasible interval.
pub fn best_response(
    mkt: &Market,
    x: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<DVector<f64>, SolverError> {
    check_price_dim(mkt, p)?;
    if x.len() != mkt.n() {
        return Err(SolverError::Dimension(format!(
            "profile has {} entries for {} consumers",
            x.len(),
            mkt.n()
        )));
    }
    let gx = mkt.net.g() * x;
    let mut out = DVector::zeros(mkt.n());
    for (i, c) in mkt.consumers.iter().enumerate() {
        let z = c.a - c.b * p[i] + mkt.net.delta() * gx[i];
        let (range_lo, range_hi) = c.model.phi_range();
        let target = if z <= range_lo {
            c.domain.lo
        } else if z >= range_hi {
            c.domain.hi
        } else {
            match c.model.phi_inv(z) {
                Ok(v) => v,
                // Between-the-bounds misses (open range ends) resolve by sign.
                Err(UtilityError::Range { .. }) => {
                    if z < 0.5 * (range_lo + range_hi) {
                        c.domain.lo
                    } else {
                        c.domain.hi
                    }
                }
                Err(e) => return Err(e.into()),
            }
        };
        out[i] = c.domain.clamp(target);
    }
    Ok(out)
}

/// Best-response iteration from the box midpoints. Stops once the sup-norm
/// step and the projected residual both fall below `tol`.
pub fn solve_fixed_point(
    mkt: &Market,
    p: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult, SolverError> {
    check_price_dim(mkt, p)?;
    let mut x = mkt.midpoint_profile();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = best_response(mkt, &x, p)?;
        let step = (&next - &x).amax();
        x = next;
        residual = projected_residual(mkt, &x, p, None)?;
        if step < tol && residual <= tol {
            return Ok(EquilibriumResult {
                x,
                residual,
                iterations: it,
                route: Route::Contraction,
            });
        }
    }
    Err(SolverError::NoConvergence {
        iterations: max_iter,
        residual,
        last: x,
    })
}

/// Lipschitz bound for the stationarity operator on the feasible box:
/// `sup phi' + delta ||G||_2`.
fn lipschitz_bound(mkt: &Market) -> Result<f64, SolverError> {
    let mut sup = 0.0f64;
    for c in &mkt.consumers {
        let s = c.model.phi_prime_sup(c.domain)?;
        if !s.is_finite() {
            return Err(SolverError::UnboundedLipschitz);
        }
        sup = sup.max(s);
    }
    Ok(sup + mkt.net.delta() * mkt.g_norm2)
}

/// Projected forward iteration `x <- clamp(x - eta F(x))` with the classical
/// strongly monotone step `eta = m / L^2`.
pub fn solve_monotone(
    mkt: &Market,
    p: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult, SolverError> {
    solve_monotone_shifted(mkt, p, None, tol, max_iter)
}

/// Monotone solve with an additive shift applied to the intrinsic utilities,
/// used for equilibria perturbed by exploration noise.
pub fn solve_monotone_shifted(
    mkt: &Market,
    p: &DVector<f64>,
    a_shift: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult, SolverError> {
    check_price_dim(mkt, p)?;
    let report = mkt.conditions();
    let m = report.variational_lambda_min;
    if m <= 0.0 {
        return Err(SolverError::Margin { lambda_min: m });
    }
    let l = lipschitz_bound(mkt)?;
    let eta = m / (l * l);
    let mut x = mkt.midpoint_profile();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let f = stationarity(mkt, &x, p, a_shift)?;
        let mut next = DVector::zeros(mkt.n());
        for (i, c) in mkt.consumers.iter().enumerate() {
            next[i] = c.domain.clamp(x[i] - eta * f[i]);
        }
        let step = (&next - &x).amax();
        x = next;
        residual = projected_residual(mkt, &x, p, a_shift)?;
        if step < tol && residual <= tol {
            return Ok(EquilibriumResult {
                x,
                residual,
                iterations: it,
                route: Route::Monotone,
            });
        }
    }
    Err(SolverError::NoConvergence {
        iterations: max_iter,
        residual,
        last: x,
    })
}

/// Route selection: best-response iteration when the contraction condition
/// certifies it (cheaper per sweep), otherwise the monotone projection when
/// the variational condition holds, otherwise refuse.
pub fn solve(
    mkt: &Market,
    p: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult, SolverError> {
    let report = mkt.conditions();
    if report.contraction_holds {
        solve_fixed_point(mkt, p, tol, max_iter)
    } else if report.variational_holds {
        solve_monotone(mkt, p, tol, max_iter)
    } else {
        Err(SolverError::NoCertificate {
            rho: report.contraction_rho,
            lambda_min: report.variational_lambda_min,
        })
    }
}

/// Equilibrium Jacobian `J(x) = diag(phi'_i(x_i)) - delta G`.
pub fn jacobian(mkt: &Market, x: &DVector<f64>) -> Result<nalgebra::DMatrix<f64>, SolverError> {
    let mut j = -(mkt.net.g() * mkt.net.delta());
    for (i, c) in mkt.consumers.iter().enumerate() {
        let slope = c.model.phi_prime(x[i]).map_err(|e| match e {
            UtilityError::Boundary { x, .. } => SolverError::Boundary { index: i, x },
            other => SolverError::Utility(other),
        })?;
        j[(i, i)] += slope;
    }
    Ok(j)
}

/// The price vector making `x` the interior equilibrium:
/// `Q(x) = B^-1 (a - phi(x) + delta G x)`.
pub fn price_map(mkt: &Market, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let gx = mkt.net.g() * x;
    let mut out = phi_vec(mkt, x)?;
    for (i, c) in mkt.consumers.iter().enumerate() {
        out[i] = (c.a - out[i] + mkt.net.delta() * gx[i]) / c.b;
    }
    Ok(out)
}

/// Price sensitivity of the equilibrium, `-J(x)^-1 B`.
pub fn price_sensitivity(
    mkt: &Market,
    x: &DVector<f64>,
) -> Result<nalgebra::DMatrix<f64>, SolverError> {
    let j = jacobian(mkt, x)?;
    let inv = j.try_inverse().ok_or(SolverError::Singular)?;
    let mut out = -inv;
    for col in 0..mkt.n() {
        let b = mkt.consumers[col].b;
        for row in 0..mkt.n() {
            out[(row, col)] *= b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TopologySpec;
    use crate::utility::UtilityModel;
    use nalgebra::DMatrix;

    fn lq_market(spec: &TopologySpec, delta: f64, a: f64, b: f64, hi: f64) -> Market {
        let net = crate::network::build_topology(spec, delta, 0).unwrap();
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
    fn decoupled_best_response_is_exact() {
        let mkt = lq_market(&TopologySpec::Null { n: 4 }, 0.0, 3.0, 1.0, 4.0);
        let p = DVector::from_element(4, 1.0);
        let x = mkt.midpoint_profile();
        let br = best_response(&mkt, &x, &p).unwrap();
        assert!(br.iter().all(|&v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn discrete_choice_best_response_at_zero() {
        let net = crate::network::build_topology(&TopologySpec::Null { n: 2 }, 0.0, 0).unwrap();
        let mkt = Market::homogeneous(
            net,
            0.0,
            1.0,
            UtilityModel::DiscreteChoice,
            Interval::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        let br = best_response(&mkt, &mkt.midpoint_profile(), &DVector::zeros(2)).unwrap();
        assert!(br.iter().all(|&v| (v - 0.5).abs() < 1e-14));
    }

    #[test]
    fn complete_lq_best_response_hand_value() {
        let mkt = lq_market(&TopologySpec::Complete { n: 3 }, 0.1, 1.0, 1.0, 4.0);
        let x = DVector::from_element(3, 1.0);
        let br = best_response(&mkt, &x, &DVector::zeros(3)).unwrap();
        assert!(br.iter().all(|&v| (v - 1.2).abs() < 1e-14));
    }

    #[test]
    fn fixed_point_decoupled_single_step() {
        let mkt = lq_market(&TopologySpec::Null { n: 3 }, 0.0, 3.0, 1.0, 4.0);
        let p = DVector::from_element(3, 1.5);
        let res = solve_fixed_point(&mkt, &p, 1e-12, 100).unwrap();
        assert!(res.x.iter().all(|&v| (v - 1.5).abs() < 1e-12));
        assert!(res.residual <= 1e-12);
    }

    #[test]
    fn fixed_point_complete_lq_closed_form() {
        let mkt = lq_market(&TopologySpec::Complete { n: 5 }, 0.1, 3.0, 1.0, 4.0);
        let p = DVector::from_element(5, 1.5);
        let res = solve_fixed_point(&mkt, &p, 1e-12, 10_000).unwrap();
        // x = (a - b p) / (1 - delta (N-1))
        assert!(res.x.iter().all(|&v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn monotone_skew_market_hits_box_solution() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let net = Network::new(g, 2.0).unwrap();
        let mkt = Market::homogeneous(
            net,
            1.0,
            1.0,
            UtilityModel::LinearQuadratic,
            Interval::new(0.0, 4.0).unwrap(),
        )
        .unwrap();
        // Contraction route inapplicable: rho(delta |G|) = 2.
        let rep = mkt.conditions();
        assert!(!rep.contraction_holds && rep.variational_holds);
        let res = solve_monotone(&mkt, &DVector::zeros(2), 1e-11, 200_000).unwrap();
        // VI solution on the box: x2 pinned at 0, x1 solves its own FOC.
        assert!((res.x[0] - 1.0).abs() < 1e-9, "x = {}", res.x);
        assert!(res.x[1].abs() < 1e-9, "x = {}", res.x);
        assert!(res.residual <= 1e-11);

        // Independent slow projected iteration as an oracle.
        let mut x = DVector::from_element(2, 2.0);
        let eta = 0.05f64;
        for _ in 0..200_000 {
            let f0 = x[0] - 1.0 - 2.0 * x[1];
            let f1 = x[1] - 1.0 + 2.0 * x[0];
            x[0] = (x[0] - eta * f0).clamp(0.0, 4.0);
            x[1] = (x[1] - eta * f1).clamp(0.0, 4.0);
        }
        assert!((res.x[0] - x[0]).abs() < 1e-7 && (res.x[1] - x[1]).abs() < 1e-7);
    }

    #[test]
    fn monotone_decoupled_solves_in_a_few_iterations() {
        // With no coupling the step is eta = m / L^2 = 1, so the projected
        // iteration lands on the solution immediately.
        let mkt = lq_market(&TopologySpec::Null { n: 3 }, 0.0, 3.0, 1.0, 4.0);
        let res = solve_monotone(&mkt, &DVector::from_element(3, 1.0), 1e-12, 100).unwrap();
        assert!(res.x.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(res.iterations <= 3, "took {} iterations", res.iterations);
    }

    #[test]
    fn monotone_rejects_without_margin() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let net = Network::new(g, 1.5).unwrap();
        let mkt = Market::homogeneous(
            net,
            1.0,
            1.0,
            UtilityModel::LinearQuadratic,
            Interval::new(0.0, 4.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            solve_monotone(&mkt, &DVector::zeros(2), 1e-10, 1000),
            Err(SolverError::Margin { .. })
        ));
    }

    #[test]
    fn routes_agree_on_circular_market() {
        let net = crate::network::build_topology(
            &TopologySpec::Circular { n: 12, w: 0.08, sign_flip_fraction: 0.1 },
            0.5,
            11,
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
        let p = DVector::from_element(12, 1.2);
        let a = solve_fixed_point(&mkt, &p, 1e-10, 100_000).unwrap();
        let b = solve_monotone(&mkt, &p, 1e-10, 200_000).unwrap();
        assert!((&a.x - &b.x).amax() < 1e-8);
        assert!(a.residual <= 1e-10 && b.residual <= 1e-10);
        // Interior solutions also satisfy the raw first-order conditions.
        assert!(a.x.iter().all(|&v| v > 0.0 && v < 4.0));
        assert!(foc_residual(&mkt, &a.x, &p).unwrap() <= 1e-10);
        assert!(foc_residual(&mkt, &b.x, &p).unwrap() <= 1e-10);
    }

    #[test]
    fn auto_route_prefers_contraction() {
        let mkt = lq_market(&TopologySpec::Complete { n: 4 }, 0.05, 2.0, 1.0, 4.0);
        let res = solve(&mkt, &DVector::zeros(4), 1e-10, 10_000).unwrap();
        assert_eq!(res.route, Route::Contraction);
    }

    #[test]
    fn auto_route_refuses_without_certificate() {
        // Symmetric strong coupling: both conditions fail at delta = 1.5.
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let net = Network::new(g, 1.5).unwrap();
        let mkt = Market::homogeneous(
            net,
            1.0,
            1.0,
            UtilityModel::LinearQuadratic,
            Interval::new(0.0, 4.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            solve(&mkt, &DVector::zeros(2), 1e-10, 100),
            Err(SolverError::NoCertificate { .. })
        ));
    }

    #[test]
    fn jacobian_families() {
        let mkt = lq_market(&TopologySpec::Complete { n: 3 }, 0.1, 1.0, 1.0, 4.0);
        let j = jacobian(&mkt, &DVector::from_element(3, 0.7)).unwrap();
        let expected = DMatrix::identity(3, 3) - mkt.net().g() * 0.1;
        assert!((j - expected).amax() < 1e-14);

        let net = crate::network::build_topology(&TopologySpec::Complete { n: 3 }, 0.1, 0).unwrap();
        let dc = Market::homogeneous(
            net,
            1.0,
            1.0,
            UtilityModel::DiscreteChoice,
            Interval::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        let j = jacobian(&dc, &DVector::from_element(3, 0.5)).unwrap();
        let expected = DMatrix::identity(3, 3) * 4.0 - dc.net().g() * 0.1;
        assert!((j - expected).amax() < 1e-14);
        assert!(matches!(
            jacobian(&dc, &DVector::from_element(3, 0.0)),
            Err(SolverError::Boundary { .. })
        ));

        let net = crate::network::build_topology(&TopologySpec::Null { n: 2 }, 0.0, 0).unwrap();
        let pw = Market::homogeneous(
            net,
            1.0,
            1.0,
            UtilityModel::Power { gamma: 0.5 },
            Interval::new(1e-6, 1.0).unwrap(),
        )
        .unwrap();
        let j = jacobian(&pw, &DVector::from_element(2, 0.25)).unwrap();
        assert!((j[(0, 0)] - 1.0).abs() < 1e-14 && (j[(1, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn price_map_round_trip() {
        let mkt = lq_market(&TopologySpec::Complete { n: 5 }, 0.1, 3.0, 1.0, 4.0);
        let x = DVector::from_element(5, 2.5);
        let p = price_map(&mkt, &x).unwrap();
        assert!(p.iter().all(|&v| (v - 1.5).abs() < 1e-13));
        let solved = solve_fixed_point(&mkt, &p, 1e-12, 100_000).unwrap();
        assert!((solved.x - x).amax() < 1e-8);
    }

    #[test]
    fn price_sensitivity_decoupled_is_negative_identity() {
        let mkt = lq_market(&TopologySpec::Null { n: 3 }, 0.0, 3.0, 1.0, 4.0);
        let sens = price_sensitivity(&mkt, &mkt.midpoint_profile()).unwrap();
        assert!((sens + DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn price_sensitivity_matches_neumann_series() {
        let net = crate::network::build_topology(
            &TopologySpec::Circular { n: 10, w: 0.08, sign_flip_fraction: 0.1 },
            0.5,
            5,
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
        let x = mkt.midpoint_profile();
        let sens = price_sensitivity(&mkt, &x).unwrap();
        // -(I - delta G)^-1 as a truncated series.
        let dg = mkt.net().g() * mkt.net().delta();
        let mut series = DMatrix::identity(10, 10);
        let mut term = DMatrix::identity(10, 10);
        for _ in 0..200 {
            term = &term * &dg;
            series += &term;
        }
        assert!((sens + series).amax() < 1e-10);
    }

    #[test]
    fn price_sensitivity_matches_finite_differences() {
        let mkt = lq_market(&TopologySpec::Complete { n: 4 }, 0.08, 3.0, 1.0, 8.0);
        let p = DVector::from_element(4, 1.0);
        let sens = price_sensitivity(&mkt, &solve(&mkt, &p, 1e-12, 100_000).unwrap().x).unwrap();
        let h = 1e-5;
        for j in 0..4 {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[j] += h;
            pm[j] -= h;
            let xp = solve(&mkt, &pp, 1e-12, 100_000).unwrap().x;
            let xm = solve(&mkt, &pm, 1e-12, 100_000).unwrap().x;
            for i in 0..4 {
                let fd = (xp[i] - xm[i]) / (2.0 * h);
                assert!(
                    (fd - sens[(i, j)]).abs() < 1e-5,
                    "entry ({i}, {j}): fd {fd} vs {}",
                    sens[(i, j)]
                );
            }
        }
    }

    #[test]
    fn exotic_families_solve_end_to_end() {
        // Subsistence, risk-averse, and isoelastic consumers work through
        // the full pipeline: both routes agree and the price map inverts
        // interior equilibria.
        let cases: Vec<(UtilityModel, Interval, f64, f64)> = vec![
            (
                UtilityModel::StoneGeary { beta: 1.5, gamma: 0.2 },
                Interval::new(0.4, 6.0).unwrap(),
                1.0,
                0.5,
            ),
            (
                UtilityModel::Exponential { gamma: 0.6 },
                Interval::new(0.0, 3.0).unwrap(),
                2.5,
                0.8,
            ),
            (
                UtilityModel::Isoelastic { gamma: 0.7 },
                Interval::new(0.2, 5.0).unwrap(),
                0.5,
                0.4,
            ),
        ];
        for (model, domain, a, p_level) in cases {
            let net = crate::network::build_topology(
                &TopologySpec::Circular { n: 6, w: 0.05, sign_flip_fraction: 0.1 },
                0.3,
                2,
            )
            .unwrap();
            let mkt = Market::homogeneous(net, a, 1.0, model, domain).unwrap();
            let rep = mkt.conditions();
            assert!(rep.contraction_holds && rep.variational_holds, "{model}: {rep:?}");
            let p = DVector::from_element(6, p_level);
            let fp = solve_fixed_point(&mkt, &p, 1e-11, 200_000).unwrap();
            let mono = solve_monotone(&mkt, &p, 1e-11, 400_000).unwrap();
            assert!(
                (&fp.x - &mono.x).amax() < 1e-8,
                "{model}: routes disagree by {}",
                (&fp.x - &mono.x).amax()
            );
            let interior = (0..6).all(|i| {
                fp.x[i] > mkt.consumers()[i].domain.lo + 1e-6
                    && fp.x[i] < mkt.consumers()[i].domain.hi - 1e-6
            });
            if interior {
                let q = price_map(&mkt, &fp.x).unwrap();
                assert!((&q - &p).amax() < 1e-8, "{model}: price map misses by {}", (&q - &p).amax());
            }
        }
    }

    #[test]
    fn block_diagonal_market_decomposes() {
        let spec = TopologySpec::BlockDiag {
            blocks: vec![
                TopologySpec::Complete { n: 3 },
                TopologySpec::Complete { n: 4 },
            ],
        };
        let mkt = lq_market(&spec, 0.1, 3.0, 1.0, 8.0);
        let p = DVector::from_element(7, 1.1);
        let full = solve(&mkt, &p, 1e-12, 100_000).unwrap();

        let first = lq_market(&TopologySpec::Complete { n: 3 }, 0.1, 3.0, 1.0, 8.0);
        let second = lq_market(&TopologySpec::Complete { n: 4 }, 0.1, 3.0, 1.0, 8.0);
        let x1 = solve(&first, &DVector::from_element(3, 1.1), 1e-12, 100_000).unwrap();
        let x2 = solve(&second, &DVector::from_element(4, 1.1), 1e-12, 100_000).unwrap();
        for i in 0..3 {
            assert!((full.x[i] - x1.x[i]).abs() < 1e-10);
        }
        for i in 0..4 {
            assert!((full.x[3 + i] - x2.x[i]).abs() < 1e-10);
        }
    }
}
