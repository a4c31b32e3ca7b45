//! Consumer network markets with nonlinear utilities: equilibrium
//! computation, uniqueness certification, monopoly price optimization,
//! generalized influence measures, and isotonic-regression-based no-regret
//! pricing.

pub mod equilibrium;
pub mod experiment;
pub mod isotonic;
pub mod learner;
pub mod network;
pub mod optim;
pub mod pricing;
pub mod utility;

pub use equilibrium::{EquilibriumResult, Market, Route};
pub use network::{ConditionReport, CurvatureProfile, Network, TopologySpec};
pub use pricing::{OracleSolution, PriceBox};
pub use utility::{ConsumerParams, Interval, UtilityModel};

pub use nalgebra;
