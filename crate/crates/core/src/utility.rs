//! Convex regularizers and their marginal maps.
//!
//! Each consumer carries a convex regularizer `h` whose derivative
//! `phi = h'` is the marginal response map. The solvers only ever touch
//! `phi`, its inverse, its derivative, and the strong-convexity floor
//! `mu = inf h''` over the consumer's feasible interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bisection budget for `phi_inv` families without a closed form.
const PHI_INV_MAX_ITER: usize = 200;
/// Residual tolerance on `phi(x) - z` for the bisection fallback.
const PHI_INV_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("consumption {x} outside the natural domain of {model}")]
    Domain { model: String, x: f64 },
    #[error("consumption {x} sits on a singular boundary of {model}")]
    Boundary { model: String, x: f64 },
    #[error("marginal value {z} unreachable by {model}")]
    Range { model: String, z: f64 },
    #[error("degenerate curvature: inf h'' = {floor} on the supplied interval")]
    Degenerate { floor: f64 },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

/// A closed interval `[lo, hi]`, the feasible consumption set of one consumer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, UtilityError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(UtilityError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Strictly inside, away from both endpoints.
    pub fn contains_interior(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    /// Shrink both ends by `frac` of the width.
    pub fn shrink(&self, frac: f64) -> Interval {
        let m = frac * self.width();
        Interval {
            lo: self.lo + m,
            hi: self.hi - m,
        }
    }
}

/// The convex regularizer families.
///
/// `phi = h'` per family:
/// - `LinearQuadratic`: h = x^2/2, phi(x) = x on all of R
/// - `Power`: h = x^(g+1)/(g+1), phi(x) = x^g on [0, inf), g in (0, 1]
/// - `DiscreteChoice`: h = x ln x + (1-x) ln(1-x), phi(x) = ln(x/(1-x)) on [0, 1]
/// - `StoneGeary`: h = -b ln(x - g), phi(x) = -b/(x - g) on (g, inf)
/// - `Exponential`: h = e^(gx) - 1, phi(x) = g e^(gx) on [0, inf)
/// - `Isoelastic`: h = -(x^(1-g) - 1)/(1-g) (g < 1) or -ln x (g = 1),
///   phi(x) = -x^(-g) on (0, inf)
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityModel {
    LinearQuadratic,
    Power { gamma: f64 },
    DiscreteChoice,
    StoneGeary { beta: f64, gamma: f64 },
    Exponential { gamma: f64 },
    Isoelastic { gamma: f64 },
}

impl std::fmt::Display for UtilityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UtilityModel::LinearQuadratic => write!(f, "linear_quadratic"),
            UtilityModel::Power { gamma } => write!(f, "power(gamma={gamma})"),
            UtilityModel::DiscreteChoice => write!(f, "discrete_choice"),
            UtilityModel::StoneGeary { beta, gamma } => {
                write!(f, "stone_geary(beta={beta}, gamma={gamma})")
            }
            UtilityModel::Exponential { gamma } => write!(f, "exponential(gamma={gamma})"),
            UtilityModel::Isoelastic { gamma } => write!(f, "isoelastic(gamma={gamma})"),
        }
    }
}

impl UtilityModel {
    pub fn validate(&self) -> Result<(), UtilityError> {
        let bad = |msg: String| Err(UtilityError::InvalidParams(msg));
        match *self {
            UtilityModel::LinearQuadratic | UtilityModel::DiscreteChoice => Ok(()),
            UtilityModel::Power { gamma } => {
                if gamma > 0.0 && gamma <= 1.0 {
                    Ok(())
                } else {
                    bad(format!("power exponent must lie in (0, 1], got {gamma}"))
                }
            }
            UtilityModel::StoneGeary { beta, gamma } => {
                if beta > 0.0 && gamma >= 0.0 {
                    Ok(())
                } else {
                    bad(format!(
                        "stone_geary needs beta > 0 and gamma >= 0, got beta={beta}, gamma={gamma}"
                    ))
                }
            }
            UtilityModel::Exponential { gamma } => {
                if gamma > 0.0 {
                    Ok(())
                } else {
                    bad(format!("exponential rate must be positive, got {gamma}"))
                }
            }
            UtilityModel::Isoelastic { gamma } => {
                if (0.0..=1.0).contains(&gamma) {
                    Ok(())
                } else {
                    bad(format!("isoelastic curvature must lie in [0, 1], got {gamma}"))
                }
            }
        }
    }

    /// Natural domain of the regularizer, as `(lower, upper)`. Families with
    /// a singular lower end (StoneGeary, Isoelastic) are open there.
    pub fn natural_domain(&self) -> (f64, f64) {
        match *self {
            UtilityModel::LinearQuadratic => (f64::NEG_INFINITY, f64::INFINITY),
            UtilityModel::Power { .. } | UtilityModel::Exponential { .. } => (0.0, f64::INFINITY),
            UtilityModel::DiscreteChoice => (0.0, 1.0),
            UtilityModel::StoneGeary { gamma, .. } => (gamma, f64::INFINITY),
            UtilityModel::Isoelastic { .. } => (0.0, f64::INFINITY),
        }
    }

    /// Whether `x` may be handed to `phi`.
    fn phi_domain_ok(&self, x: f64) -> bool {
        match *self {
            UtilityModel::LinearQuadratic => true,
            UtilityModel::Power { .. } | UtilityModel::Exponential { .. } => x >= 0.0,
            UtilityModel::DiscreteChoice => (0.0..=1.0).contains(&x),
            UtilityModel::StoneGeary { gamma, .. } => x > gamma,
            UtilityModel::Isoelastic { .. } => x > 0.0,
        }
    }

    /// Marginal map `phi(x) = h'(x)`.
    pub fn phi(&self, x: f64) -> Result<f64, UtilityError> {
        if !self.phi_domain_ok(x) {
            return Err(UtilityError::Domain {
                model: self.to_string(),
                x,
            });
        }
        match *self {
            UtilityModel::LinearQuadratic => Ok(x),
            UtilityModel::Power { gamma } => Ok(x.powf(gamma)),
            UtilityModel::DiscreteChoice => {
                if x == 0.0 || x == 1.0 {
                    Err(UtilityError::Boundary {
                        model: self.to_string(),
                        x,
                    })
                } else {
                    Ok((x / (1.0 - x)).ln())
                }
            }
            UtilityModel::StoneGeary { beta, gamma } => Ok(-beta / (x - gamma)),
            UtilityModel::Exponential { gamma } => Ok(gamma * (gamma * x).exp()),
            UtilityModel::Isoelastic { gamma } => {
                if gamma == 1.0 {
                    Ok(-1.0 / x)
                } else {
                    Ok(-x.powf(-gamma))
                }
            }
        }
    }

    /// Range of `phi` over the natural domain, as `(inf, sup)`. Open/closed
    /// ends follow the family; only used to classify out-of-range targets.
    pub fn phi_range(&self) -> (f64, f64) {
        match *self {
            UtilityModel::LinearQuadratic | UtilityModel::DiscreteChoice => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            UtilityModel::Power { .. } => (0.0, f64::INFINITY),
            UtilityModel::StoneGeary { .. } => (f64::NEG_INFINITY, 0.0),
            UtilityModel::Exponential { gamma } => (gamma, f64::INFINITY),
            UtilityModel::Isoelastic { .. } => (f64::NEG_INFINITY, 0.0),
        }
    }

    /// Inverse marginal map. Closed form for the linear-quadratic, power, and
    /// discrete-choice families; bracketed bisection on the z-residual for the
    /// rest (tolerance 1e-12, at most 200 halvings).
    pub fn phi_inv(&self, z: f64) -> Result<f64, UtilityError> {
        let out_of_range = || UtilityError::Range {
            model: self.to_string(),
            z,
        };
        match *self {
            UtilityModel::LinearQuadratic => Ok(z),
            UtilityModel::Power { gamma } => {
                if z < 0.0 {
                    Err(out_of_range())
                } else {
                    Ok(z.powf(1.0 / gamma))
                }
            }
            UtilityModel::DiscreteChoice => Ok(1.0 / (1.0 + (-z).exp())),
            UtilityModel::StoneGeary { beta, gamma } => {
                if z >= 0.0 {
                    return Err(out_of_range());
                }
                self.bisect_inverse(z, gamma - beta / z)
            }
            UtilityModel::Exponential { gamma } => {
                if z < gamma {
                    return Err(out_of_range());
                }
                if z == gamma {
                    return Ok(0.0);
                }
                self.bisect_inverse(z, (z / gamma).ln() / gamma)
            }
            UtilityModel::Isoelastic { gamma } => {
                if z >= 0.0 || gamma == 0.0 {
                    return Err(out_of_range());
                }
                let seed = if gamma == 1.0 {
                    -1.0 / z
                } else {
                    (-z).powf(-1.0 / gamma)
                };
                self.bisect_inverse(z, seed)
            }
        }
    }

    /// Bisection on `phi(x) - z` starting from a bracket built around an
    /// analytic seed. The seed is exact up to rounding, so a factor-4 window
    /// around it always brackets the root.
    fn bisect_inverse(&self, z: f64, seed: f64) -> Result<f64, UtilityError> {
        let (dom_lo, _) = self.natural_domain();
        // Bracket in offset coordinates so families with a finite left
        // singularity (StoneGeary) stay inside the domain.
        let off = if dom_lo.is_finite() { dom_lo } else { 0.0 };
        let s = (seed - off).max(f64::MIN_POSITIVE);
        let mut lo = off + s * 0.25;
        let mut hi = off + s * 4.0;
        let f = |x: f64| self.phi(x).map(|v| v - z);
        let mut flo = f(lo)?;
        let mut fhi = f(hi)?;
        let mut expand = 0;
        while flo > 0.0 && expand < 64 {
            hi = lo;
            fhi = flo;
            lo = off + (lo - off) * 0.25;
            flo = f(lo)?;
            expand += 1;
        }
        while fhi < 0.0 && expand < 64 {
            lo = hi;
            flo = fhi;
            hi = off + (hi - off) * 4.0;
            fhi = f(hi)?;
            expand += 1;
        }
        if flo > 0.0 || fhi < 0.0 {
            return Err(UtilityError::Range {
                model: self.to_string(),
                z,
            });
        }
        let mut mid = seed;
        for _ in 0..PHI_INV_MAX_ITER {
            mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm.abs() <= PHI_INV_TOL {
                return Ok(mid);
            }
            if fm < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(mid)
    }

    /// Curvature `phi'(x) = h''(x)`; strictly positive on the domain interior.
    pub fn phi_prime(&self, x: f64) -> Result<f64, UtilityError> {
        let singular = || UtilityError::Boundary {
            model: self.to_string(),
            x,
        };
        if !self.phi_domain_ok(x) {
            return Err(UtilityError::Domain {
                model: self.to_string(),
                x,
            });
        }
        match *self {
            UtilityModel::LinearQuadratic => Ok(1.0),
            UtilityModel::Power { gamma } => {
                if gamma < 1.0 && x == 0.0 {
                    Err(singular())
                } else {
                    Ok(gamma * x.powf(gamma - 1.0))
                }
            }
            UtilityModel::DiscreteChoice => {
                if x == 0.0 || x == 1.0 {
                    Err(singular())
                } else {
                    Ok(1.0 / (x * (1.0 - x)))
                }
            }
            UtilityModel::StoneGeary { beta, gamma } => {
                let d = x - gamma;
                Ok(beta / (d * d))
            }
            UtilityModel::Exponential { gamma } => Ok(gamma * gamma * (gamma * x).exp()),
            UtilityModel::Isoelastic { gamma } => Ok(gamma * x.powf(-gamma - 1.0)),
        }
    }

    /// Strong-convexity floor `inf h''` over a compact interval.
    ///
    /// Each family's `h''` is monotone or unimodal, so the infimum sits at a
    /// known endpoint (or at 1/2 for the discrete-choice family).
    pub fn mu_floor(&self, domain: Interval) -> Result<f64, UtilityError> {
        self.check_domain(domain)?;
        let floor = match *self {
            UtilityModel::LinearQuadratic => 1.0,
            // h'' decreasing on (0, inf): infimum at the right endpoint.
            UtilityModel::Power { gamma } => gamma * domain.hi.powf(gamma - 1.0),
            // h'' = 1/(x(1-x)) is minimized at 1/2 and increases outward.
            UtilityModel::DiscreteChoice => {
                if domain.contains(0.5) {
                    4.0
                } else if domain.hi < 0.5 {
                    1.0 / (domain.hi * (1.0 - domain.hi))
                } else {
                    1.0 / (domain.lo * (1.0 - domain.lo))
                }
            }
            // h'' decreasing: infimum at the right endpoint.
            UtilityModel::StoneGeary { beta, gamma } => {
                let d = domain.hi - gamma;
                beta / (d * d)
            }
            // h'' increasing: infimum at the left endpoint.
            UtilityModel::Exponential { gamma } => gamma * gamma * (gamma * domain.lo).exp(),
            // h'' decreasing: infimum at the right endpoint.
            UtilityModel::Isoelastic { gamma } => gamma * domain.hi.powf(-gamma - 1.0),
        };
        if floor <= 0.0 || !floor.is_finite() {
            return Err(UtilityError::Degenerate { floor });
        }
        Ok(floor)
    }

    /// Supremum of `h''` over a compact interval; may be infinite for the
    /// families with boundary singularities. Used for Lipschitz estimates.
    pub fn phi_prime_sup(&self, domain: Interval) -> Result<f64, UtilityError> {
        self.check_domain(domain)?;
        Ok(match *self {
            UtilityModel::LinearQuadratic => 1.0,
            UtilityModel::Power { gamma } => {
                if gamma == 1.0 {
                    1.0
                } else if domain.lo == 0.0 {
                    f64::INFINITY
                } else {
                    gamma * domain.lo.powf(gamma - 1.0)
                }
            }
            UtilityModel::DiscreteChoice => {
                if domain.lo == 0.0 || domain.hi == 1.0 {
                    f64::INFINITY
                } else {
                    let at = |x: f64| 1.0 / (x * (1.0 - x));
                    at(domain.lo).max(at(domain.hi))
                }
            }
            UtilityModel::StoneGeary { beta, gamma } => {
                let d = domain.lo - gamma;
                beta / (d * d)
            }
            UtilityModel::Exponential { gamma } => gamma * gamma * (gamma * domain.hi).exp(),
            UtilityModel::Isoelastic { gamma } => gamma * domain.lo.powf(-gamma - 1.0),
        })
    }

    /// A point of the domain where `h''` attains `mu_floor`, if that point is
    /// strictly interior. Only the linear-quadratic family (flat curvature)
    /// and the discrete-choice family (minimum at 1/2) have one.
    pub fn mu_witness(&self, domain: Interval) -> Option<f64> {
        match *self {
            UtilityModel::LinearQuadratic => Some(domain.midpoint()),
            UtilityModel::DiscreteChoice if domain.contains_interior(0.5) => Some(0.5),
            _ => None,
        }
    }

    /// Holder exponent of `phi` on the given compact domain, when one exists.
    pub fn holder_alpha(&self, domain: Interval) -> Option<f64> {
        match *self {
            UtilityModel::LinearQuadratic => Some(1.0),
            UtilityModel::Power { gamma } => Some(gamma),
            UtilityModel::DiscreteChoice => {
                if domain.lo > 0.0 && domain.hi < 1.0 {
                    Some(1.0)
                } else {
                    None
                }
            }
            UtilityModel::StoneGeary { gamma, .. } => (domain.lo > gamma).then_some(1.0),
            UtilityModel::Exponential { .. } => Some(1.0),
            UtilityModel::Isoelastic { .. } => (domain.lo > 0.0).then_some(1.0),
        }
    }

    /// Domain must be compact and inside the natural domain; families with a
    /// left singularity need `lo` strictly above it.
    pub(crate) fn check_domain(&self, domain: Interval) -> Result<(), UtilityError> {
        let bad = |x: f64| UtilityError::Domain {
            model: self.to_string(),
            x,
        };
        match *self {
            UtilityModel::LinearQuadratic => Ok(()),
            UtilityModel::Power { .. } | UtilityModel::Exponential { .. } => {
                if domain.lo < 0.0 {
                    Err(bad(domain.lo))
                } else {
                    Ok(())
                }
            }
            UtilityModel::DiscreteChoice => {
                if domain.lo < 0.0 {
                    Err(bad(domain.lo))
                } else if domain.hi > 1.0 {
                    Err(bad(domain.hi))
                } else {
                    Ok(())
                }
            }
            UtilityModel::StoneGeary { gamma, .. } => {
                if domain.lo <= gamma {
                    Err(bad(domain.lo))
                } else {
                    Ok(())
                }
            }
            UtilityModel::Isoelastic { .. } => {
                if domain.lo <= 0.0 {
                    Err(bad(domain.lo))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// One consumer: intrinsic baseline `a`, price sensitivity `b > 0`, a
/// regularizer family, and the feasible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    pub a: f64,
    pub b: f64,
    pub model: UtilityModel,
    pub domain: Interval,
}

impl ConsumerParams {
    pub fn new(a: f64, b: f64, model: UtilityModel, domain: Interval) -> Result<Self, UtilityError> {
        if !(b > 0.0) {
            return Err(UtilityError::InvalidParams(format!(
                "price sensitivity must be positive, got {b}"
            )));
        }
        model.validate()?;
        model.check_domain(domain)?;
        Ok(Self { a, b, model, domain })
    }
}
