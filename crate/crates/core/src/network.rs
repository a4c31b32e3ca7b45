//! Signed directed interaction networks and the two uniqueness conditions.
//!
//! The contraction condition bounds the spectral radius of the nonnegative
//! matrix `delta * D^-1 * |G|`; the variational condition asks the symmetric
//! matrix `D - delta (G + G^T)/2` to be positive definite. Both come with
//! per-row Gershgorin shortcuts, and they collapse to a single spectral
//! threshold when `G` is symmetric and entry-wise nonnegative.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Power-iteration convergence: successive Rayleigh estimates within this
/// relative gap.
const POWER_ITER_RTOL: f64 = 1e-12;
const POWER_ITER_CAP: usize = 10_000;
/// Below this size a dense eigensolve is cheaper and robust to reducibility.
const DENSE_EIGEN_CUTOFF: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("shape violation: {0}")]
    Shape(String),
    #[error("spectral precondition violated: {0}")]
    Spectral(String),
    #[error("malformed topology descriptor: {0}")]
    Spec(String),
    #[error("invalid network: {0}")]
    Invalid(String),
}

/// Interaction network: `n` nodes, a signed directed adjacency matrix with
/// zero diagonal, and the spillover intensity `delta >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    g: DMatrix<f64>,
    delta: f64,
}

/// JSON wire format: `{n, delta, entries: [[i, j, value], ...]}`.
#[derive(Serialize, Deserialize)]
struct NetworkWire {
    n: usize,
    delta: f64,
    entries: Vec<(usize, usize, f64)>,
}

impl Network {
    pub fn new(g: DMatrix<f64>, delta: f64) -> Result<Self, NetworkError> {
        if g.nrows() != g.ncols() {
            return Err(NetworkError::Dimension(format!(
                "adjacency must be square, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        if !(delta >= 0.0) {
            return Err(NetworkError::Invalid(format!(
                "spillover intensity must be nonnegative, got {delta}"
            )));
        }
        for i in 0..g.nrows() {
            if g[(i, i)] != 0.0 {
                return Err(NetworkError::Invalid(format!(
                    "diagonal entry g[{i}][{i}] = {} must be zero",
                    g[(i, i)]
                )));
            }
        }
        Ok(Self { n: g.nrows(), g, delta })
    }

    pub fn from_entries(
        n: usize,
        delta: f64,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self, NetworkError> {
        let mut g = DMatrix::zeros(n, n);
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(NetworkError::Dimension(format!(
                    "entry ({i}, {j}) outside a {n}-node network"
                )));
            }
            g[(i, j)] = v;
        }
        Self::new(g, delta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self, NetworkError> {
        Self::new(self.g.clone(), delta)
    }

    /// Entry-wise absolute value of the adjacency.
    pub fn abs_g(&self) -> DMatrix<f64> {
        self.g.map(f64::abs)
    }

    pub fn nonzero_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.g[(i, j)];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let wire = NetworkWire {
            n: self.n,
            delta: self.delta,
            entries: self.nonzero_entries(),
        };
        serde_json::to_string_pretty(&wire).expect("network serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let wire: NetworkWire = serde_json::from_str(text)
            .map_err(|e| NetworkError::Spec(format!("bad network JSON: {e}")))?;
        Self::from_entries(wire.n, wire.delta, &wire.entries)
    }

    /// CSV edge list `i,j,value` with a header row, 0-indexed.
    pub fn to_edge_csv(&self) -> String {
        let mut out = String::from("i,j,value\n");
        for (i, j, v) in self.nonzero_entries() {
            out.push_str(&format!("{i},{j},{v:.16e}\n"));
        }
        out
    }

    pub fn from_edge_csv(n: usize, delta: f64, text: &str) -> Result<Self, NetworkError> {
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with('i')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(NetworkError::Spec(format!("short CSV row at line {ln}")));
            }
            let i: usize = fields[0]
                .parse()
                .map_err(|e| NetworkError::Spec(format!("line {ln}: {e}")))?;
            let j: usize = fields[1]
                .parse()
                .map_err(|e| NetworkError::Spec(format!("line {ln}: {e}")))?;
            let v: f64 = fields[2]
                .parse()
                .map_err(|e| NetworkError::Spec(format!("line {ln}: {e}")))?;
            entries.push((i, j, v));
        }
        Self::from_entries(n, delta, &entries)
    }
}

/// Diagonal profile of strong-convexity constants, one per consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub mu: Vec<f64>,
}

impl CurvatureProfile {
    pub fn new(mu: Vec<f64>) -> Result<Self, NetworkError> {
        if mu.iter().any(|&m| !(m > 0.0)) {
            return Err(NetworkError::Invalid(
                "curvature constants must be strictly positive".into(),
            ));
        }
        Ok(Self { mu })
    }

    pub fn identity(n: usize) -> Self {
        Self { mu: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Outcome of checking both uniqueness conditions on one `(G, delta, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Spectral radius of `delta D^-1 |G|`.
    pub contraction_rho: f64,
    pub contraction_holds: bool,
    /// Smallest eigenvalue of `D - delta (G + G^T)/2`.
    pub variational_lambda_min: f64,
    pub variational_holds: bool,
    /// Per-row dominance `mu_i > delta sum_{j != i} |g_ij|`.
    pub gershgorin_contraction: Vec<bool>,
    /// Per-row dominance `mu_i > delta sum_{j != i} |(g_ij + g_ji)/2|`.
    pub gershgorin_variational: Vec<bool>,
}

/// Spectral radius of a square matrix by dense eigendecomposition.
///
/// The Schur iteration can stall on defective matrices (strictly triangular
/// star networks are the canonical case), so it runs with a hard iteration
/// cap; nonnegative matrices then fall back to an exact Perron-root
/// bisection, anything else to power iteration.
pub fn spectral_radius_dense(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 200 * n.max(10)) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
    }
    if m.iter().all(|&v| v >= 0.0) {
        perron_root_bisection(m)
    } else {
        spectral_radius_power(&m.map(f64::abs))
    }
}

/// Perron root of an entry-wise nonnegative matrix by bisection on the
/// M-matrix test: `s > rho(M)` exactly when `(sI - M) y = 1` has a strictly
/// positive solution (Collatz-Wielandt). Robust to reducible and nilpotent
/// inputs.
fn perron_root_bisection(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let max_row_sum = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)]).sum::<f64>())
        .fold(0.0, f64::max);
    if max_row_sum == 0.0 {
        return 0.0;
    }
    let ones = DVector::from_element(n, 1.0);
    let greater = |s: f64| -> bool {
        let mut a = -m.clone();
        for i in 0..n {
            a[(i, i)] += s;
        }
        match a.lu().solve(&ones) {
            Some(y) => y.iter().all(|&v| v > 0.0),
            None => false,
        }
    };
    let mut lo = 0.0;
    let mut hi = max_row_sum * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if greater(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Spectral radius of an entry-wise nonnegative matrix by power iteration
/// from the uniform start vector, with Rayleigh-quotient convergence.
pub fn spectral_radius_power(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0f64;
    for _ in 0..POWER_ITER_CAP {
        let y = m * &x;
        let norm = y.norm();
        if norm < f64::MIN_POSITIVE.sqrt() {
            // The iterate died: nilpotent direction, radius 0 along it.
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / norm;
        if (next - lambda).abs() <= POWER_ITER_RTOL * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Spectral radius with the size-based method choice: dense below the cutoff
/// (robust to reducible matrices), power iteration above it.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < DENSE_EIGEN_CUTOFF {
        spectral_radius_dense(m)
    } else {
        spectral_radius_power(m)
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min_symmetric(h: &DMatrix<f64>) -> f64 {
    h.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Operator 2-norm via power iteration on `M^T M`.
pub fn operator_norm_2(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    spectral_radius_power(&gram).max(0.0).sqrt()
}

/// Evaluate both uniqueness conditions and their Gershgorin shortcuts.
pub fn check_conditions(
    net: &Network,
    d: &CurvatureProfile,
) -> Result<ConditionReport, NetworkError> {
    let n = net.n();
    if d.len() != n {
        return Err(NetworkError::Dimension(format!(
            "curvature profile has {} entries for a {n}-node network",
            d.len()
        )));
    }
    let delta = net.delta();
    let mut m = net.abs_g();
    for i in 0..n {
        let scale = delta / d.mu[i];
        for j in 0..n {
            m[(i, j)] *= scale;
        }
    }
    let contraction_rho = spectral_radius(&m);

    let sym = (net.g() + net.g().transpose()) * (0.5 * delta);
    let mut h = -sym;
    for i in 0..n {
        h[(i, i)] += d.mu[i];
    }
    let variational_lambda_min = lambda_min_symmetric(&h);

    let mut gershgorin_contraction = Vec::with_capacity(n);
    let mut gershgorin_variational = Vec::with_capacity(n);
    for i in 0..n {
        let mut abs_row = 0.0;
        let mut sym_row = 0.0;
        for j in 0..n {
            if j != i {
                abs_row += net.g()[(i, j)].abs();
                sym_row += 0.5 * (net.g()[(i, j)] + net.g()[(j, i)]).abs();
            }
        }
        gershgorin_contraction.push(d.mu[i] > delta * abs_row);
        gershgorin_variational.push(d.mu[i] > delta * sym_row);
    }

    Ok(ConditionReport {
        contraction_rho,
        contraction_holds: contraction_rho < 1.0,
        variational_lambda_min,
        variational_holds: variational_lambda_min > 0.0,
        gershgorin_contraction,
        gershgorin_variational,
    })
}

/// For symmetric entry-wise nonnegative networks both conditions reduce to
/// `delta < 1 / rho(D^-1 G)`; returns that critical intensity
/// (`+inf` when the network has no interactions).
pub fn symmetric_nonneg_threshold(
    net: &Network,
    d: &CurvatureProfile,
) -> Result<f64, NetworkError> {
    let n = net.n();
    if d.len() != n {
        return Err(NetworkError::Dimension(format!(
            "curvature profile has {} entries for a {n}-node network",
            d.len()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = net.g()[(i, j)];
            if v < 0.0 {
                return Err(NetworkError::Shape(format!(
                    "signed entry g[{i}][{j}] = {v}"
                )));
            }
            if v != net.g()[(j, i)] {
                return Err(NetworkError::Shape(format!(
                    "asymmetric pair g[{i}][{j}] = {v}, g[{j}][{i}] = {}",
                    net.g()[(j, i)]
                )));
            }
        }
    }
    let mut m = net.g().clone();
    for i in 0..n {
        let scale = 1.0 / d.mu[i];
        for j in 0..n {
            m[(i, j)] *= scale;
        }
    }
    let rho = spectral_radius(&m);
    if rho == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / rho)
    }
}

/// Weight vector `w = (alpha I - M)^-1 1` making the induced weighted sup
/// norm of a nonnegative `M` at most `alpha`.
pub fn weighted_norm_weights(m: &DMatrix<f64>, alpha: f64) -> Result<DVector<f64>, NetworkError> {
    let n = m.nrows();
    if m.iter().any(|&v| v < 0.0) {
        return Err(NetworkError::Shape(
            "weight construction needs an entry-wise nonnegative matrix".into(),
        ));
    }
    let rho = spectral_radius(m);
    if !(alpha > rho) {
        return Err(NetworkError::Spectral(format!(
            "alpha = {alpha} must exceed the spectral radius {rho}"
        )));
    }
    if !(alpha < 1.0) {
        return Err(NetworkError::Spectral(format!(
            "alpha = {alpha} must be below 1"
        )));
    }
    let mut a = -m.clone();
    for i in 0..n {
        a[(i, i)] += alpha;
    }
    let ones = DVector::from_element(n, 1.0);
    a.lu()
        .solve(&ones)
        .ok_or_else(|| NetworkError::Spectral("alpha I - M is numerically singular".into()))
}

/// Connected components of the undirected support graph of `|G| + |G|^T`.
/// Magnitudes are ignored; any nonzero entry couples its endpoints.
pub fn communities(net: &Network) -> Vec<Vec<usize>> {
    let n = net.n();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            for j in 0..n {
                if !seen[j] && (net.g()[(i, j)] != 0.0 || net.g()[(j, i)] != 0.0) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Benchmark topology descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    /// No interactions.
    Null { n: usize },
    /// Unit off-diagonal entries everywhere.
    Complete { n: usize },
    /// Each node influenced by its first successor (weight `w`) and second
    /// successor (weight `w/2`) on the circle; a seeded fraction of the
    /// nonzero entries gets its sign flipped.
    Circular {
        n: usize,
        w: f64,
        sign_flip_fraction: f64,
    },
    /// Node 0 has a zero row and a column of constant positive weight.
    Influencer { n: usize, weight: f64 },
    /// Node 0's row is all ones: it is influenced by everyone.
    StarFollower { n: usize },
    /// Node 0's column is all ones: it influences everyone.
    StarInfluencer { n: usize },
    /// Block-diagonal composition of smaller topologies.
    BlockDiag { blocks: Vec<TopologySpec> },
    /// Explicit edge list.
    Custom {
        n: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

impl TopologySpec {
    pub fn node_count(&self) -> usize {
        match self {
            TopologySpec::Null { n }
            | TopologySpec::Complete { n }
            | TopologySpec::Circular { n, .. }
            | TopologySpec::Influencer { n, .. }
            | TopologySpec::StarFollower { n }
            | TopologySpec::StarInfluencer { n }
            | TopologySpec::Custom { n, .. } => *n,
            TopologySpec::BlockDiag { blocks } => blocks.iter().map(|b| b.node_count()).sum(),
        }
    }
}

/// Build the adjacency for a descriptor. All randomness (circular sign flips)
/// flows from the explicit seed.
pub fn build_topology(spec: &TopologySpec, delta: f64, seed: u64) -> Result<Network, NetworkError> {
    let g = build_adjacency(spec, seed)?;
    Network::new(g, delta)
}

fn build_adjacency(spec: &TopologySpec, seed: u64) -> Result<DMatrix<f64>, NetworkError> {
    match spec {
        TopologySpec::Null { n } => Ok(DMatrix::zeros(*n, *n)),
        TopologySpec::Complete { n } => {
            let mut g = DMatrix::from_element(*n, *n, 1.0);
            for i in 0..*n {
                g[(i, i)] = 0.0;
            }
            Ok(g)
        }
        TopologySpec::Circular {
            n,
            w,
            sign_flip_fraction,
        } => {
            if *n < 3 {
                return Err(NetworkError::Spec(format!(
                    "circular topology needs at least 3 nodes, got {n}"
                )));
            }
            if !(0.0..=1.0).contains(sign_flip_fraction) {
                return Err(NetworkError::Spec(format!(
                    "sign flip fraction must lie in [0, 1], got {sign_flip_fraction}"
                )));
            }
            let mut g = DMatrix::zeros(*n, *n);
            let mut nonzero = Vec::with_capacity(2 * n);
            for i in 0..*n {
                let j1 = (i + 1) % n;
                let j2 = (i + 2) % n;
                g[(i, j1)] = *w;
                g[(i, j2)] = *w / 2.0;
                nonzero.push((i, j1));
                nonzero.push((i, j2));
            }
            let flips = (sign_flip_fraction * nonzero.len() as f64).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            nonzero.shuffle(&mut rng);
            for &(i, j) in nonzero.iter().take(flips) {
                g[(i, j)] = -g[(i, j)];
            }
            Ok(g)
        }
        TopologySpec::Influencer { n, weight } => {
            if !(weight > &0.0) {
                return Err(NetworkError::Spec(format!(
                    "influencer column weight must be positive, got {weight}"
                )));
            }
            let mut g = DMatrix::zeros(*n, *n);
            for i in 1..*n {
                g[(i, 0)] = *weight;
            }
            Ok(g)
        }
        TopologySpec::StarFollower { n } => {
            let mut g = DMatrix::zeros(*n, *n);
            for j in 1..*n {
                g[(0, j)] = 1.0;
            }
            Ok(g)
        }
        TopologySpec::StarInfluencer { n } => {
            let mut g = DMatrix::zeros(*n, *n);
            for i in 1..*n {
                g[(i, 0)] = 1.0;
            }
            Ok(g)
        }
        TopologySpec::BlockDiag { blocks } => {
            if blocks.is_empty() {
                return Err(NetworkError::Spec("empty block list".into()));
            }
            let total: usize = blocks.iter().map(|b| b.node_count()).sum();
            let mut g = DMatrix::zeros(total, total);
            let mut offset = 0;
            for (k, block) in blocks.iter().enumerate() {
                let sub = build_adjacency(block, seed.wrapping_add(k as u64 + 1))?;
                let m = sub.nrows();
                for i in 0..m {
                    for j in 0..m {
                        g[(offset + i, offset + j)] = sub[(i, j)];
                    }
                }
                offset += m;
            }
            Ok(g)
        }
        TopologySpec::Custom { n, entries } => {
            let mut g = DMatrix::zeros(*n, *n);
            for &(i, j, v) in entries {
                if i >= *n || j >= *n {
                    return Err(NetworkError::Spec(format!(
                        "custom entry ({i}, {j}) outside a {n}-node network"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(NetworkError::Spec(format!(
                        "custom entry ({i}, {i}) must be zero"
                    )));
                }
                g[(i, j)] = v;
            }
            Ok(g)
        }
    }
}
