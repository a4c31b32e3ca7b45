//! Reproducible experiment sweeps: horizons x repetitions x market cells,
//! with counter-based seed derivation so parallel runs never share RNG
//! streams and identical configurations give identical outputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::Market;
use crate::isotonic::IsotonicFit;
use crate::learner::{
    compute_oracle, explore, fit_psi, regret_slope, run_algorithm1_with_oracle, ExplorationMode,
    LearnConfig, ORACLE_BUDGET, PLUGIN_BUDGET,
};
use crate::network::{build_topology, TopologySpec};
use crate::pricing::OracleSolution;
use crate::utility::{ConsumerParams, Interval, UtilityModel};

/// SplitMix64 step, the standard 64-bit mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut x = z;
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive an independent substream seed from a base seed and a path of
/// counters (cell index, horizon index, repetition, ...).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in path {
        s = splitmix64(s ^ splitmix64(p.wrapping_add(0x517c_c1b7_2722_0a95)));
    }
    s
}

/// Per-consumer parameter range: linearly spaced, explicit, or constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RangeSpec {
    Constant(f64),
    Linspace { linspace: [f64; 2] },
    Values { values: Vec<f64> },
}

impl RangeSpec {
    pub fn materialize(&self, n: usize) -> Result<Vec<f64>, String> {
        match self {
            RangeSpec::Constant(v) => Ok(vec![*v; n]),
            RangeSpec::Linspace { linspace: [lo, hi] } => {
                if n == 1 {
                    return Ok(vec![0.5 * (lo + hi)]);
                }
                Ok((0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n as f64 - 1.0))
                    .collect())
            }
            RangeSpec::Values { values } => {
                if values.len() != n {
                    return Err(format!("{} values for {n} consumers", values.len()));
                }
                Ok(values.clone())
            }
        }
    }
}

/// One experiment cell: a topology, a utility family, and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCell {
    pub name: String,
    pub topology: TopologySpec,
    pub delta: f64,
    pub utility: UtilityModel,
    pub a: RangeSpec,
    pub b: RangeSpec,
    pub domain: [f64; 2],
    /// Exploration noise standard deviation (shared by all consumers).
    pub sigma: f64,
    /// Exploration exponent; defaults to `(2a+1)/(3a+1)` from the family's
    /// Holder exponent, falling back to 3/4.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Optional consumer -> segment map for pooled isotonic fits.
    #[serde(default)]
    pub segmentation: Option<Vec<usize>>,
}

impl MarketCell {
    pub fn build_market(&self, topology_seed: u64) -> Result<Market, String> {
        let n = self.topology.node_count();
        let net = build_topology(&self.topology, self.delta, topology_seed)
            .map_err(|e| e.to_string())?;
        let domain = Interval::new(self.domain[0], self.domain[1]).map_err(|e| e.to_string())?;
        let a = self.a.materialize(n)?;
        let b = self.b.materialize(n)?;
        let consumers = (0..n)
            .map(|i| ConsumerParams::new(a[i], b[i], self.utility, domain))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        Market::new(net, consumers).map_err(|e| e.to_string())
    }

    pub fn exploration_beta(&self) -> f64 {
        if let Some(beta) = self.beta {
            return beta;
        }
        Interval::new(self.domain[0], self.domain[1])
            .ok()
            .and_then(|domain| self.utility.holder_alpha(domain))
            .map(LearnConfig::default_beta)
            .unwrap_or(0.75)
    }
}

/// Sweep dimensions shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub horizons: Vec<usize>,
    pub reps: usize,
    pub base_seed: u64,
}

/// Learner knobs shared by every cell of a sweep; anything left unset takes
/// the library default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerOptions {
    #[serde(default)]
    pub exploration_mode: Option<ExplorationMode>,
    /// Exploration scale in `T0 = ceil(c T^beta)`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub plugin_budget: Option<u64>,
    #[serde(default)]
    pub oracle_budget: Option<u64>,
}

/// Aggregated outcome of one cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub name: String,
    pub horizons: Vec<usize>,
    /// Mean final regret per horizon, with a 95% normal confidence radius.
    pub mean_regret: Vec<f64>,
    pub ci95: Vec<f64>,
    /// Log-log slope of mean regret against horizon (needs >= 3 horizons).
    pub slope: Option<f64>,
    pub oracle: OracleSolution,
    /// Mean committed exploitation price per node, across reps of the
    /// largest horizon.
    pub mean_exploit_price: Vec<f64>,
    /// Isotonic fit of consumer 0 for the first repetition of each horizon.
    pub fit_snapshots: Vec<(usize, IsotonicFit)>,
    /// Per-run final regrets indexed `[horizon][rep]`.
    pub regrets: Vec<Vec<f64>>,
    /// Per-run `(horizon, repetition, csv)` traces, kept only on request.
    pub trace_csv: Vec<(usize, u64, String)>,
}

/// Failure of a single sweep cell, reported without aborting the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub name: String,
    pub horizon: Option<usize>,
    pub rep: Option<usize>,
    pub message: String,
}

pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

/// Price box sample count for the operative feasible set.
const BOX_SAMPLES: usize = 256;

/// Run one cell of the sweep. Repetitions parallelize; every run derives
/// its seed from `(base_seed, cell_index, horizon_index, rep)`.
pub fn run_cell(
    cell: &MarketCell,
    sweep: &SweepSpec,
    cell_index: u64,
    keep_traces: bool,
    opts: &LearnerOptions,
) -> Result<CellResult, CellFailure> {
    let fail = |message: String| CellFailure {
        name: cell.name.clone(),
        horizon: None,
        rep: None,
        message,
    };
    let topology_seed = derive_seed(sweep.base_seed, &[cell_index, 0]);
    let market = cell.build_market(topology_seed).map_err(fail)?;
    let n = market.n();
    let price_box = crate::pricing::price_box_from_consumption(
        &market,
        BOX_SAMPLES,
        derive_seed(sweep.base_seed, &[cell_index, 1]),
    )
    .map_err(|e| fail(e.to_string()))?;
    let oracle = compute_oracle(
        &market,
        &price_box,
        opts.oracle_budget.unwrap_or(ORACLE_BUDGET),
        derive_seed(sweep.base_seed, &[cell_index, 2]),
    )
    .map_err(|e| fail(e.to_string()))?;

    let beta = cell.exploration_beta();
    let mut runs: Vec<(usize, usize, u64)> = Vec::new();
    for (ti, &_t) in sweep.horizons.iter().enumerate() {
        for rep in 0..sweep.reps {
            runs.push((ti, rep, derive_seed(
                sweep.base_seed,
                &[cell_index, 3, ti as u64, rep as u64],
            )));
        }
    }
    let results: Vec<Result<(usize, usize, crate::learner::LearnTrace), CellFailure>> = runs
        .par_iter()
        .map(|&(ti, rep, seed)| {
            let t = sweep.horizons[ti];
            let mut cfg = LearnConfig::new(t, beta, vec![cell.sigma; n], seed)
                .map_err(|e| CellFailure {
                    name: cell.name.clone(),
                    horizon: Some(t),
                    rep: Some(rep),
                    message: e.to_string(),
                })?;
            cfg.exploration_mode = opts
                .exploration_mode
                .unwrap_or(ExplorationMode::ConsumptionSpace);
            cfg.segmentation = cell.segmentation.clone();
            cfg.c = opts.c.unwrap_or(1.0);
            cfg.plugin_budget = opts.plugin_budget.unwrap_or(PLUGIN_BUDGET);
            cfg.oracle_budget = opts.oracle_budget.unwrap_or(ORACLE_BUDGET);
            let trace = run_algorithm1_with_oracle(&market, &price_box, &cfg, &oracle).map_err(
                |e| CellFailure {
                    name: cell.name.clone(),
                    horizon: Some(t),
                    rep: Some(rep),
                    message: e.to_string(),
                },
            )?;
            Ok((ti, rep, trace))
        })
        .collect();

    let mut regrets = vec![vec![f64::NAN; sweep.reps]; sweep.horizons.len()];
    let mut exploit_prices: Vec<Vec<f64>> = Vec::new();
    let mut trace_csv = Vec::new();
    let last_ti = sweep.horizons.len() - 1;
    for r in results {
        let (ti, rep, trace) = r?;
        regrets[ti][rep] = trace.final_regret();
        if ti == last_ti {
            exploit_prices.push(trace.exploitation_price.clone());
        }
        if keep_traces {
            trace_csv.push((sweep.horizons[ti], rep as u64, trace_to_csv(&trace)));
        }
    }

    let mut mean_regret = Vec::new();
    let mut ci95 = Vec::new();
    for row in &regrets {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|r| (r - m) * (r - m)).sum::<f64>()
            / (row.len() as f64 - 1.0).max(1.0);
        mean_regret.push(m);
        ci95.push(1.96 * (var / row.len() as f64).sqrt());
    }
    let slope_points: Vec<(usize, f64)> = sweep
        .horizons
        .iter()
        .copied()
        .zip(mean_regret.iter().copied())
        .collect();
    let slope = regret_slope(&slope_points).ok();

    let mean_exploit_price = if exploit_prices.is_empty() {
        vec![f64::NAN; n]
    } else {
        (0..n)
            .map(|i| {
                exploit_prices.iter().map(|p| p[i]).sum::<f64>() / exploit_prices.len() as f64
            })
            .collect()
    };

    // Fit snapshots: reproduce the first repetition's exploration per horizon.
    let mut fit_snapshots = Vec::new();
    for (ti, &t) in sweep.horizons.iter().enumerate() {
        let seed = derive_seed(sweep.base_seed, &[cell_index, 3, ti as u64, 0]);
        if let Ok(mut cfg) = LearnConfig::new(t, beta, vec![cell.sigma; n], seed) {
            cfg.exploration_mode = opts
                .exploration_mode
                .unwrap_or(ExplorationMode::ConsumptionSpace);
            cfg.segmentation = cell.segmentation.clone();
            cfg.c = opts.c.unwrap_or(1.0);
            if let Ok(data) = explore(&market, &price_box, &cfg) {
                if let Ok(fits) = fit_psi(&data.samples, cfg.segmentation.as_deref()) {
                    fit_snapshots.push((t, fits[0].clone()));
                }
            }
        }
    }

    Ok(CellResult {
        name: cell.name.clone(),
        horizons: sweep.horizons.clone(),
        mean_regret,
        ci95,
        slope,
        oracle,
        mean_exploit_price,
        fit_snapshots,
        regrets,
        trace_csv,
    })
}

/// Render a trace as the standard `t,phase,revenue,regret` CSV.
pub fn trace_to_csv(trace: &crate::learner::LearnTrace) -> String {
    let mut out = String::from("t,phase,revenue,regret\n");
    for r in &trace.rounds {
        let phase = match r.phase {
            crate::learner::Phase::Exploration => "exploration",
            crate::learner::Phase::Exploitation => "exploitation",
        };
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e}\n",
            r.t, phase, r.revenue, r.cumulative_regret
        ));
    }
    out
}

/// Run every cell; failures are collected, not fatal.
pub fn run_sweep(
    cells: &[MarketCell],
    sweep: &SweepSpec,
    keep_traces: bool,
    opts: &LearnerOptions,
) -> SweepOutcome {
    let results: Vec<Result<CellResult, CellFailure>> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, cell)| run_cell(cell, sweep, idx as u64, keep_traces, opts))
        .collect();
    let mut out = SweepOutcome {
        cells: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(c) => out.cells.push(c),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

/// The six utility cells of the regret experiment on a sparse circular
/// network, one cell per utility family.
pub fn circular_regret_cells(n: usize) -> Vec<MarketCell> {
    let circular = TopologySpec::Circular {
        n,
        w: 0.08,
        sign_flip_fraction: 0.1,
    };
    let mut cells = vec![MarketCell {
        name: "linear_quadratic".into(),
        topology: circular.clone(),
        delta: 0.5,
        utility: UtilityModel::LinearQuadratic,
        a: RangeSpec::Linspace { linspace: [3.2, 3.8] },
        b: RangeSpec::Linspace { linspace: [0.8, 1.0] },
        domain: [0.0, 4.0],
        sigma: 0.05,
        beta: None,
        segmentation: None,
    }];
    for gamma in [0.2, 0.4, 0.6, 0.8] {
        cells.push(MarketCell {
            name: format!("power_{gamma}"),
            topology: circular.clone(),
            delta: 0.15,
            utility: UtilityModel::Power { gamma },
            a: RangeSpec::Linspace { linspace: [0.6, 1.0] },
            b: RangeSpec::Linspace { linspace: [0.8, 1.2] },
            domain: [1e-6, 1.0],
            sigma: 0.03,
            beta: None,
            segmentation: None,
        });
    }
    cells.push(MarketCell {
        name: "discrete_choice".into(),
        topology: circular,
        delta: 0.3,
        utility: UtilityModel::DiscreteChoice,
        a: RangeSpec::Linspace { linspace: [1.0, 2.0] },
        b: RangeSpec::Linspace { linspace: [1.5, 2.0] },
        domain: [0.0, 1.0],
        sigma: 0.05,
        beta: None,
        segmentation: None,
    });
    cells
}

/// Influencer-network cells: node 0 has a zero row and a heavy column.
pub fn influencer_price_cells(n: usize) -> Vec<MarketCell> {
    vec![
        MarketCell {
            name: "linear_quadratic_influencer".into(),
            topology: TopologySpec::Influencer { n, weight: 0.8 },
            delta: 0.5,
            utility: UtilityModel::LinearQuadratic,
            a: RangeSpec::Linspace { linspace: [3.2, 3.8] },
            b: RangeSpec::Linspace { linspace: [0.8, 1.0] },
            domain: [0.0, 4.0],
            sigma: 0.05,
            beta: None,
            segmentation: None,
        },
        MarketCell {
            name: "discrete_choice_influencer".into(),
            topology: TopologySpec::Influencer { n, weight: 4.0 },
            delta: 0.3,
            utility: UtilityModel::DiscreteChoice,
            a: RangeSpec::Linspace { linspace: [1.0, 2.0] },
            b: RangeSpec::Linspace { linspace: [1.5, 2.0] },
            domain: [0.0, 1.0],
            sigma: 0.05,
            beta: None,
            segmentation: None,
        },
    ]
}
