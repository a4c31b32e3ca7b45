//! Subcommand implementations. Each returns the process exit code:
//! 0 success, 2 configuration error, 3 numerical failure.

use netprice_core::equilibrium::{solve, Route, DEFAULT_MAX_ITER, DEFAULT_TOL};
use netprice_core::experiment::{run_cell, run_sweep};
use netprice_core::network::{check_conditions, symmetric_nonneg_threshold};
use netprice_core::pricing::{influencer_lower_bound, optimize_prices, InfluencerBound};
use netprice_core::{nalgebra::DVector, pricing::iiv};
use serde::Serialize;

use crate::config::{build_market, resolve_price_box, Config, ConfigError};
use crate::output::{file_name, fmt_f64, print_json, OutputDir};

pub struct CommonArgs {
    pub config: String,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub format: Format,
    pub seeds: Option<usize>,
}

#[derive(PartialEq, Clone, Copy)]
pub enum Format {
    Json,
    Csv,
}

fn load(args: &CommonArgs) -> Result<(Config, u64, OutputDir), i32> {
    let cfg = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return Err(2);
        }
    };
    let base_seed = cfg.base_seed(args.seed);
    let out = match OutputDir::new(args.out.as_deref().or(cfg.output_dir.as_deref())) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot create output directory: {e}");
            return Err(2);
        }
    };
    Ok((cfg, base_seed, out))
}

fn config_err(e: ConfigError) -> i32 {
    eprintln!("{e}");
    2
}

#[derive(Serialize)]
struct ConditionsOut {
    market: String,
    report: netprice_core::network::ConditionReport,
    /// Critical spillover intensity, present for symmetric nonnegative
    /// networks (where both conditions coincide).
    #[serde(skip_serializing_if = "Option::is_none")]
    critical_delta: Option<f64>,
}

pub fn cmd_conditions(args: &CommonArgs) -> i32 {
    let (cfg, base_seed, out) = match load(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let mut results = Vec::new();
    for (idx, cell) in cfg.markets.iter().enumerate() {
        let market = match build_market(cell, base_seed, idx as u64) {
            Ok(m) => m,
            Err(e) => return config_err(e),
        };
        let report = match check_conditions(market.net(), market.curvature()) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}: {e}", cell.name);
                return 3;
            }
        };
        let critical_delta =
            symmetric_nonneg_threshold(market.net(), market.curvature()).ok();
        results.push(ConditionsOut {
            market: cell.name.clone(),
            report,
            critical_delta,
        });
    }
    print_json(&results);
    for r in &results {
        let _ = out.write(
            &file_name("conditions", &r.market, "json"),
            &serde_json::to_string_pretty(r).expect("serializable"),
        );
    }
    0
}

#[derive(Serialize)]
struct EquilibriumOut {
    market: String,
    residual: f64,
    iterations: usize,
    route: Route,
}

pub fn cmd_equilibrium(args: &CommonArgs) -> i32 {
    let (cfg, base_seed, out) = match load(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let Some(price_spec) = cfg.prices.clone() else {
        eprintln!("invalid config: the equilibrium command needs a `prices` entry");
        return 2;
    };
    for (idx, cell) in cfg.markets.iter().enumerate() {
        let market = match build_market(cell, base_seed, idx as u64) {
            Ok(m) => m,
            Err(e) => return config_err(e),
        };
        let p = match price_spec.materialize(market.n()) {
            Ok(v) => DVector::from_vec(v),
            Err(e) => return config_err(ConfigError::Invalid(format!("prices: {e}"))),
        };
        let eq = match solve(&market, &p, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(eq) => eq,
            Err(e) => {
                eprintln!("{}: {e}", cell.name);
                return 3;
            }
        };
        let summary = EquilibriumOut {
            market: cell.name.clone(),
            residual: eq.residual,
            iterations: eq.iterations,
            route: eq.route,
        };
        print_json(&summary);
        let mut csv = String::from("i,x_i,p_i\n");
        for i in 0..market.n() {
            csv.push_str(&format!("{i},{},{}\n", fmt_f64(eq.x[i]), fmt_f64(p[i])));
        }
        let _ = out.write(&file_name("equilibrium", &cell.name, "csv"), &csv);
        let _ = out.write(
            &file_name("equilibrium", &cell.name, "json"),
            &serde_json::to_string_pretty(&summary).expect("serializable"),
        );
    }
    0
}

#[derive(Serialize)]
struct PriceOut {
    market: String,
    p_star: Vec<f64>,
    x_star: Vec<f64>,
    revenue: f64,
    route: Route,
    evaluations: u64,
}

pub fn cmd_price(args: &CommonArgs) -> i32 {
    let (cfg, base_seed, out) = match load(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let budget = cfg.budget.unwrap_or(50_000);
    for (idx, cell) in cfg.markets.iter().enumerate() {
        let market = match build_market(cell, base_seed, idx as u64) {
            Ok(m) => m,
            Err(e) => return config_err(e),
        };
        let price_box = match resolve_price_box(&cfg, cell, &market, base_seed, idx as u64) {
            Ok(b) => b,
            Err(e) => return config_err(e),
        };
        let report = market.conditions();
        let route = if report.contraction_holds {
            Route::Contraction
        } else {
            Route::Monotone
        };
        let sol = match optimize_prices(&market, &price_box, budget, base_seed) {
            Ok(s) => s,
            Err(netprice_core::pricing::PricingError::BudgetExhausted(best)) => *best,
            Err(e) => {
                eprintln!("{}: {e}", cell.name);
                return 3;
            }
        };
        let result = PriceOut {
            market: cell.name.clone(),
            p_star: sol.p_star.clone(),
            x_star: sol.x_star.clone(),
            revenue: sol.revenue,
            route,
            evaluations: sol.evaluations,
        };
        print_json(&result);
        let _ = out.write(
            &file_name("price", &cell.name, "json"),
            &serde_json::to_string_pretty(&result).expect("serializable"),
        );
        if args.format == Format::Csv {
            let mut csv = String::from("i,p_i,x_i\n");
            for i in 0..sol.p_star.len() {
                csv.push_str(&format!(
                    "{i},{},{}\n",
                    fmt_f64(sol.p_star[i]),
                    fmt_f64(sol.x_star[i])
                ));
            }
            let _ = out.write(&file_name("price", &cell.name, "csv"), &csv);
        }
    }
    0
}

#[derive(Serialize)]
struct IivOut {
    market: String,
    v: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_at: Option<Vec<f64>>,
    /// Price lower bounds for uninfluenced nodes, when the hypothesis holds.
    bounds: Vec<Option<f64>>,
}

pub fn cmd_iiv(args: &CommonArgs) -> i32 {
    let (cfg, base_seed, out) = match load(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    for (idx, cell) in cfg.markets.iter().enumerate() {
        let market = match build_market(cell, base_seed, idx as u64) {
            Ok(m) => m,
            Err(e) => return config_err(e),
        };
        let report = match iiv(&market) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}: {e}", cell.name);
                return 3;
            }
        };
        // Bound per node with a zero row, when a price box is resolvable.
        let bounds: Vec<Option<f64>> = match resolve_price_box(&cfg, cell, &market, base_seed, idx as u64)
        {
            Ok(price_box) => (0..market.n())
                .map(|i| match influencer_lower_bound(&market, i, &price_box) {
                    Ok(InfluencerBound::Bound(b)) => Some(b),
                    _ => None,
                })
                .collect(),
            Err(_) => vec![None; market.n()],
        };
        let result = IivOut {
            market: cell.name.clone(),
            v: report.v.clone(),
            exact_at: report.exact_at.clone(),
            bounds,
        };
        print_json(&result);
        let _ = out.write(
            &file_name("iiv", &cell.name, "json"),
            &serde_json::to_string_pretty(&result).expect("serializable"),
        );
        if args.format == Format::Csv {
            let mut csv = String::from("i,v_i\n");
            for (i, v) in report.v.iter().enumerate() {
                csv.push_str(&format!("{i},{}\n", fmt_f64(*v)));
            }
            let _ = out.write(&file_name("iiv", &cell.name, "csv"), &csv);
        }
    }
    0
}

#[derive(Serialize)]
struct LearnSummary {
    market: String,
    horizons: Vec<usize>,
    mean_regret: Vec<f64>,
    ci95: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
}

pub fn cmd_learn(args: &CommonArgs) -> i32 {
    let (cfg, base_seed, out) = match load(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let Some(mut sweep) = cfg.sweep.clone() else {
        eprintln!("invalid config: the learn command needs a `sweep` entry");
        return 2;
    };
    sweep.base_seed = base_seed;
    if let Some(k) = args.seeds {
        sweep.reps = k;
    }
    if sweep.reps == 0 || sweep.horizons.is_empty() {
        eprintln!("invalid config: sweep needs at least one horizon and one repetition");
        return 2;
    }
    let cell = &cfg.markets[0];
    match run_cell(cell, &sweep, 0, out.enabled(), &cfg.learner) {
        Ok(result) => {
            let summary = LearnSummary {
                market: result.name.clone(),
                horizons: result.horizons.clone(),
                mean_regret: result.mean_regret.clone(),
                ci95: result.ci95.clone(),
                slope: result.slope,
            };
            print_json(&summary);
            for (t, rep, csv) in &result.trace_csv {
                let _ = out.write(
                    &format!("trace_{}_T{t}_r{rep}.csv", crate::output::sanitize(&result.name)),
                    csv,
                );
            }
            let _ = out.write(
                &file_name("learn_summary", &result.name, "json"),
                &serde_json::to_string_pretty(&summary).expect("serializable"),
            );
            0
        }
        Err(f) => {
            eprintln!("{}: {}", f.name, f.message);
            3
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    cells: Vec<String>,
    files: Vec<String>,
    failures: Vec<netprice_core::experiment::CellFailure>,
}

pub fn cmd_experiment(args: &CommonArgs) -> i32 {
    let (cfg, base_seed, out) = match load(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let Some(mut sweep) = cfg.sweep.clone() else {
        eprintln!("invalid config: the experiment command needs a `sweep` entry");
        return 2;
    };
    sweep.base_seed = base_seed;
    if let Some(k) = args.seeds {
        sweep.reps = k;
    }
    let outcome = run_sweep(&cfg.markets, &sweep, out.enabled(), &cfg.learner);
    let mut manifest = Manifest {
        cells: Vec::new(),
        files: Vec::new(),
        failures: outcome.failures.clone(),
    };
    let degenerate = sweep.reps < 2;
    for cell in &outcome.cells {
        manifest.cells.push(cell.name.clone());
        // Regret curve with confidence radii (omitted for a single rep).
        let mut csv = if degenerate {
            String::from("T,mean_regret\n")
        } else {
            String::from("T,mean_regret,ci95_lo,ci95_hi\n")
        };
        for (k, t) in cell.horizons.iter().enumerate() {
            if degenerate {
                csv.push_str(&format!("{t},{}\n", fmt_f64(cell.mean_regret[k])));
            } else {
                csv.push_str(&format!(
                    "{t},{},{},{}\n",
                    fmt_f64(cell.mean_regret[k]),
                    fmt_f64(cell.mean_regret[k] - cell.ci95[k]),
                    fmt_f64(cell.mean_regret[k] + cell.ci95[k])
                ));
            }
        }
        if let Ok(Some(p)) = out.write(&file_name("regret", &cell.name, "csv"), &csv) {
            manifest.files.push(crate::output::path_str(&p));
        }

        // Mean committed price and the oracle price per node.
        let mut csv = String::from("node,mean_price,oracle_price\n");
        for i in 0..cell.mean_exploit_price.len() {
            csv.push_str(&format!(
                "{i},{},{}\n",
                fmt_f64(cell.mean_exploit_price[i]),
                fmt_f64(cell.oracle.p_star[i])
            ));
        }
        if let Ok(Some(p)) = out.write(&file_name("prices", &cell.name, "csv"), &csv) {
            manifest.files.push(crate::output::path_str(&p));
        }

        for (t, fit) in &cell.fit_snapshots {
            if let Ok(Some(p)) = out.write(
                &format!("isofit_{}_T{t}.csv", crate::output::sanitize(&cell.name)),
                &fit.to_csv(),
            ) {
                manifest.files.push(crate::output::path_str(&p));
            }
        }
        for (t, rep, csv) in &cell.trace_csv {
            if let Ok(Some(p)) = out.write(
                &format!("trace_{}_T{t}_r{rep}.csv", crate::output::sanitize(&cell.name)),
                csv,
            ) {
                manifest.files.push(crate::output::path_str(&p));
            }
        }
    }

    // Slope table across cells.
    let mut csv = String::from("market,slope\n");
    for cell in &outcome.cells {
        match cell.slope {
            Some(s) => csv.push_str(&format!("{},{}\n", cell.name, fmt_f64(s))),
            None => csv.push_str(&format!("{},\n", cell.name)),
        }
    }
    if let Ok(Some(p)) = out.write("slopes.csv", &csv) {
        manifest.files.push(crate::output::path_str(&p));
    }
    let _ = out.write(
        "manifest.json",
        &serde_json::to_string_pretty(&manifest).expect("serializable"),
    );

    #[derive(Serialize)]
    struct ExperimentSummary<'a> {
        cells: Vec<CellSummary<'a>>,
        failures: &'a [netprice_core::experiment::CellFailure],
    }
    #[derive(Serialize)]
    struct CellSummary<'a> {
        market: &'a str,
        horizons: &'a [usize],
        mean_regret: &'a [f64],
        ci95: &'a [f64],
        slope: Option<f64>,
    }
    let summary = ExperimentSummary {
        cells: outcome
            .cells
            .iter()
            .map(|c| CellSummary {
                market: &c.name,
                horizons: &c.horizons,
                mean_regret: &c.mean_regret,
                ci95: &c.ci95,
                slope: c.slope,
            })
            .collect(),
        failures: &outcome.failures,
    };
    print_json(&summary);

    if outcome.cells.is_empty() {
        eprintln!("every cell failed");
        3
    } else {
        0
    }
}
