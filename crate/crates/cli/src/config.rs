//! JSON configuration schema for every subcommand.

use netprice_core::equilibrium::Market;
use netprice_core::experiment::{derive_seed, LearnerOptions, MarketCell, RangeSpec, SweepSpec};
use netprice_core::pricing::{price_box_from_consumption, PriceBox};
use serde::Deserialize;

/// Top-level configuration file. Commands read the fields they need and
/// reject files missing required ones.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub markets: Vec<MarketCell>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Learner knobs shared by learn/experiment runs.
    #[serde(default)]
    pub learner: LearnerOptions,
    /// Posted prices for the `equilibrium` command.
    #[serde(default)]
    pub prices: Option<RangeSpec>,
    /// Explicit feasible price set; constructed from the consumption box
    /// when absent.
    #[serde(default)]
    pub price_box: Option<PriceBoxSpec>,
    /// Objective evaluation budget for the `price` command.
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PriceBoxSpec {
    pub lo: RangeSpec,
    pub hi: RangeSpec,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "cannot parse config: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl Config {
    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        let cfg: Config =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.markets.is_empty() {
            return Err(ConfigError::Invalid("config lists no markets".into()));
        }
        Ok(cfg)
    }

    pub fn base_seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed
            .or(self.seed)
            .or_else(|| self.sweep.as_ref().map(|s| s.base_seed))
            .unwrap_or(0)
    }
}

/// Build the market for a cell with the sweep's topology substream.
pub fn build_market(cell: &MarketCell, base_seed: u64, cell_index: u64) -> Result<Market, ConfigError> {
    cell.build_market(derive_seed(base_seed, &[cell_index, 0]))
        .map_err(ConfigError::Invalid)
}

/// Resolve the feasible price set for a cell: explicit bounds when given,
/// otherwise the clipped image of the interior consumption box.
pub fn resolve_price_box(
    cfg: &Config,
    cell: &MarketCell,
    market: &Market,
    base_seed: u64,
    cell_index: u64,
) -> Result<PriceBox, ConfigError> {
    let n = market.n();
    match &cfg.price_box {
        Some(spec) => {
            let lo = spec
                .lo
                .materialize(n)
                .map_err(|e| ConfigError::Invalid(format!("price box lo: {e}")))?;
            let hi = spec
                .hi
                .materialize(n)
                .map_err(|e| ConfigError::Invalid(format!("price box hi: {e}")))?;
            PriceBox::new(lo, hi).map_err(|e| ConfigError::Invalid(e.to_string()))
        }
        None => price_box_from_consumption(
            market,
            256,
            derive_seed(base_seed, &[cell_index, 1]),
        )
        .map_err(|e| {
            ConfigError::Invalid(format!("cannot build a price box for {}: {e}", cell.name))
        }),
    }
}
