//! Command-line front end: five subcommands over one configuration file.
//!
//! * `solve` — build the constant-intensity value table and optimal efforts.
//! * `verify` — run the simulation consistency battery (estimator
//!   agreement, closed form vs Monte Carlo, strategy dominance, martingale
//!   drift, compensator identity, time-change goodness of fit).
//! * `insurance` — scan proportional-transfer retentions and report the
//!   optimum, with an optional loading sweep.
//! * `conditions` — integrability and convexity report for the configured
//!   model.
//! * `simulate` — dump raw simulated paths.
//!
//! Exit codes: `0` success, `1` at least one verification check failed,
//! `2` the run could not start (bad arguments, unreadable or inconsistent
//! configuration). Every output file begins with the SHA-256 of the
//! configuration bytes that produced it; nothing in the outputs depends on
//! wall-clock time or thread count.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{parse_config, Config};
use crate::error::Error;
use crate::insurance::{InsuranceProblem, PremiumRule};
use crate::prevention::{check_convexity_conditions, Effort, StrategyFunction};
use crate::risk_models::{admissibility_report, pps_gate_scan, IntensityModel};
use crate::rng::RandomStream;
use crate::simulate::{
    compensator_residual, estimate_expected_utility, simulate_path_controlled, simulate_path_p0,
    time_change_residuals, EstimatorMode,
};
use crate::solver::{bellman_residual_check, value_function_constant, MethodUsed};
use crate::stats::ks_test_unit_exponential;

#[derive(Parser, Debug)]
#[command(
    name = "jumprev",
    version,
    about = "Joint claim-frequency and claim-severity effort optimization for jump-process risk"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonOpts {
    /// Configuration file (sectioned key = value format).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the seed from the [run] section.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for generated files (created if absent).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for the simulation pool (0 keeps the default).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the constant-intensity value table and optimal effort paths.
    Solve(CommonOpts),
    /// Run the simulation consistency battery and report pass/fail.
    Verify {
        #[command(flatten)]
        common: CommonOpts,
        /// Deliberately mislabel the null strategy as optimal; the drift
        /// check must then fail (a self-test of the test).
        #[arg(long)]
        inject_suboptimal: bool,
    },
    /// Scan proportional-transfer retentions and report the optimum.
    Insurance(CommonOpts),
    /// Integrability and convexity report for the configured model.
    Conditions(CommonOpts),
    /// Dump simulated paths as CSV.
    Simulate(CommonOpts),
}

/// What a subcommand produced: its exit code and the files it wrote.
#[derive(Debug)]
pub struct CmdOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

/// Parse the process arguments, execute, and return the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<CmdOutcome, Error> {
    let (common, inject) = match &cli.command {
        Command::Solve(c)
        | Command::Insurance(c)
        | Command::Conditions(c)
        | Command::Simulate(c) => (c.clone(), false),
        Command::Verify { common, inject_suboptimal } => (common.clone(), *inject_suboptimal),
    };
    if common.threads > 0 {
        // A second initialization in the same process is harmless: the
        // existing pool stays, and every result is thread-count invariant.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global();
    }
    let text = fs::read_to_string(&common.config)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    match cli.command {
        Command::Solve(_) => cmd_solve(&cfg, &common.out),
        Command::Verify { .. } => cmd_verify(&cfg, &common.out, inject),
        Command::Insurance(_) => cmd_insurance(&cfg, &common.out),
        Command::Conditions(_) => cmd_conditions(&cfg, &common.out),
        Command::Simulate(_) => cmd_simulate(&cfg, &common.out),
    }
}

fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

fn csv_header(cfg: &Config, columns: &str) -> String {
    format!(
        "# jumprev v{}\n# config_sha256 = {}\n# seed = {}\n{columns}\n",
        version(),
        cfg.sha256,
        cfg.run.seed
    )
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, Error> {
    let mut text = serde_json::to_string_pretty(value).expect("json serialization is infallible");
    text.push('\n');
    write_file(dir, name, &text)
}

fn method_name(m: MethodUsed) -> &'static str {
    match m {
        MethodUsed::Grid => "grid",
        MethodUsed::FocNewton => "foc-newton",
        MethodUsed::GridFallback => "grid-fallback",
    }
}

fn constant_lambda(cfg: &Config) -> Result<f64, Error> {
    match cfg.model {
        IntensityModel::Constant { lambda } => Ok(lambda),
        _ => Err(Error::NotApplicable {
            reason: "this command needs `variant = constant` in [model]; \
                     stochastic intensity has no closed value table here"
                .into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

pub fn cmd_solve(cfg: &Config, out_dir: &Path) -> Result<CmdOutcome, Error> {
    let lambda = constant_lambda(cfg)?;
    let table = value_function_constant(&cfg.spec, lambda, &cfg.claims, cfg.run.value_grid)?;

    let mut csv = csv_header(cfg, "t,phi,u1_star,u2_star,psi_star");
    for j in 0..table.times.len() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            table.times[j], table.phi[j], table.u1[j], table.u2[j], table.psi_star[j]
        ));
    }
    let csv_path = write_file(out_dir, "value_table.csv", &csv)?;

    let summary = json!({
        "version": version(),
        "config_sha256": cfg.sha256,
        "lambda": lambda,
        "eta": cfg.spec.eta,
        "horizon": cfg.spec.horizon,
        "grid_m": cfg.run.value_grid,
        "minimizer": method_name(table.minimizer),
        "quadrature": table.rule,
        "phi0": table.phi[0],
        "value": table.objective_value(&cfg.spec),
        "u1_at_0": table.u1[0],
        "u2_at_0": table.u2[0],
    });
    let json_path = write_json(out_dir, "solve_summary.json", &summary)?;
    Ok(CmdOutcome { exit_code: 0, files: vec![csv_path, json_path] })
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct Check {
    name: &'static str,
    passed: bool,
    skipped: bool,
    detail: serde_json::Value,
}

fn push_report(checks: &mut Vec<Check>, check: Check) {
    println!(
        "check {}: {}",
        check.name,
        if check.skipped {
            "SKIP"
        } else if check.passed {
            "PASS"
        } else {
            "FAIL"
        }
    );
    checks.push(check);
}

pub fn cmd_verify(cfg: &Config, out_dir: &Path, inject_suboptimal: bool) -> Result<CmdOutcome, Error> {
    let spec = &cfg.spec;
    let model = &cfg.model;
    let dist = &cfg.claims;
    let n = cfg.checks.n_paths;
    let streams = RandomStream::new(cfg.run.seed);
    let mut checks: Vec<Check> = Vec::new();

    // Fixed reference effort for the estimator-agreement check.
    let effort = spec.clamp(cfg.run.effort.unwrap_or(Effort::new(0.5, 0.3)));
    let constant = StrategyFunction::Constant(effort);

    // 1. Direct and reweighted estimators agree on E[e^{-eta X_T}].
    let direct = estimate_expected_utility(
        model,
        dist,
        &constant,
        spec,
        n,
        EstimatorMode::Direct,
        streams.fork(1).master_seed(),
    )?;
    let weighted = estimate_expected_utility(
        model,
        dist,
        &constant,
        spec,
        n,
        EstimatorMode::Weighted,
        streams.fork(2).master_seed(),
    )?;
    let gap = (direct.estimate - weighted.estimate).abs();
    let se = direct.stderr.hypot(weighted.stderr);
    push_report(
        &mut checks,
        Check {
            name: "girsanov_consistency",
            passed: gap <= 3.0 * se,
            skipped: false,
            detail: json!({
                "direct": direct, "weighted": weighted,
                "gap": gap, "combined_stderr": se, "effort": [effort.u1, effort.u2],
            }),
        },
    );

    // The remaining optimality checks need the closed value table.
    let table = match model {
        IntensityModel::Constant { lambda } => {
            Some((*lambda, value_function_constant(spec, *lambda, dist, cfg.run.value_grid)?))
        }
        _ => None,
    };

    match &table {
        None => {
            for name in ["closed_form_vs_mc", "bellman_dominance", "martingale_residual"] {
                push_report(
                    &mut checks,
                    Check {
                        name,
                        passed: true,
                        skipped: true,
                        detail: json!({"reason": "needs constant intensity"}),
                    },
                );
            }
        }
        Some((lambda, table)) => {
            // 2. Closed-form value vs Monte Carlo under the tabled strategy.
            let v = table.objective_value(spec);
            let optimal = table.to_strategy();
            let mc = estimate_expected_utility(
                model,
                dist,
                &optimal,
                spec,
                n,
                EstimatorMode::Direct,
                streams.fork(3).master_seed(),
            )?;
            let gap = (mc.estimate - v).abs();
            push_report(
                &mut checks,
                Check {
                    name: "closed_form_vs_mc",
                    passed: gap <= 3.0 * mc.stderr,
                    skipped: false,
                    detail: json!({"closed_form": v, "mc": mc, "gap": gap}),
                },
            );

            // 3. The closed-form value lower-bounds a lattice of constant
            //    strategies (the objective is minimized, so no estimate may
            //    fall significantly below it).
            let (cap1, cap2) = spec.effort_box();
            let mut lattice = Vec::new();
            let mut all_above = true;
            let mut n_strictly_worse = 0usize;
            for i in 0..4 {
                for j in 0..3 {
                    let u = Effort::new(cap1 * i as f64 / 3.0, cap2 * j as f64 / 2.0);
                    let strat = StrategyFunction::Constant(u);
                    let est = estimate_expected_utility(
                        model,
                        dist,
                        &strat,
                        spec,
                        n,
                        EstimatorMode::Direct,
                        streams.fork(10 + (3 * i + j) as u64).master_seed(),
                    )?;
                    let above = est.estimate >= v - 3.0 * est.stderr;
                    let strictly = est.estimate > v + 3.0 * est.stderr;
                    all_above &= above;
                    n_strictly_worse += strictly as usize;
                    lattice.push(json!({
                        "u1": u.u1, "u2": u.u2, "estimate": est.estimate,
                        "stderr": est.stderr, "dominated": above,
                    }));
                }
            }
            push_report(
                &mut checks,
                Check {
                    name: "bellman_dominance",
                    passed: all_above,
                    skipped: false,
                    detail: json!({
                        "closed_form": v, "lattice": lattice,
                        "n_strictly_worse": n_strictly_worse,
                    }),
                },
            );

            // 4. Drift of the monitored process: zero at the (claimed)
            //    optimum, nonnegative everywhere. Injection replaces the
            //    optimum by the null strategy; the drift test must then
            //    fail, which demonstrates the check has power.
            let claimed: StrategyFunction =
                if inject_suboptimal { StrategyFunction::null() } else { optimal.clone() };
            let report = bellman_residual_check(
                model,
                dist,
                spec,
                table,
                &claimed,
                n,
                cfg.checks.grid_intervals,
                streams.fork(100).master_seed(),
            )?;
            let passed = report.martingale_pass()
                && report.submartingale_pass()
                && !report.drift_significant()
                && report.terminal_identity_pass();
            push_report(
                &mut checks,
                Check {
                    name: "martingale_residual",
                    passed,
                    skipped: false,
                    detail: json!({
                        "injected_suboptimal": inject_suboptimal,
                        "lambda": lambda,
                        "max_abs_drift_z": report.max_abs_drift_z(),
                        "min_drift_z": report.min_drift_z(),
                        "total_drift_mean": report.total_drift_mean,
                        "total_drift_stderr": report.total_drift_stderr,
                        "terminal_estimate": report.terminal_estimate,
                        "terminal_stderr": report.terminal_stderr,
                        "direct_estimate": report.direct_estimate,
                        "direct_stderr": report.direct_stderr,
                        "intervals": report.intervals,
                    }),
                },
            );
        }
    }

    // 5. Counting-process compensator identity under a time-varying
    //    strategy.
    let (cap1, cap2) = spec.effort_box();
    let two_piece = StrategyFunction::TimeTable {
        times: vec![0.0, spec.horizon / 2.0],
        efforts: vec![
            Effort::new(0.3 * cap1, 0.6 * cap2),
            Effort::new(0.7 * cap1, 0.2 * cap2),
        ],
    };
    let resid = compensator_residual(model, dist, &two_piece, spec, n, streams.fork(101).master_seed())?;
    push_report(
        &mut checks,
        Check {
            name: "compensator_dynkin",
            passed: resid.mean.abs() <= 3.0 * resid.stderr,
            skipped: false,
            detail: json!(resid),
        },
    );

    // 6. Time-change test: compensator increments between claims are
    //    unit exponential.
    let taus = time_change_residuals(
        model,
        dist,
        5,
        n.min(2000).max(100),
        streams.fork(102).master_seed(),
    );
    let ks = ks_test_unit_exponential(&taus);
    push_report(
        &mut checks,
        Check {
            name: "time_change_ks",
            passed: !ks.rejects_at_1pct(),
            skipped: false,
            detail: json!(ks),
        },
    );

    let all_passed = checks.iter().all(|c| c.passed);
    let report = json!({
        "version": version(),
        "config_sha256": cfg.sha256,
        "seed": cfg.run.seed,
        "n_paths": n,
        "inject_suboptimal": inject_suboptimal,
        "all_passed": all_passed,
        "checks": checks.iter().map(|c| json!({
            "name": c.name, "passed": c.passed, "skipped": c.skipped, "detail": c.detail,
        })).collect::<Vec<_>>(),
    });
    let path = write_json(out_dir, "verify_report.json", &report)?;
    Ok(CmdOutcome { exit_code: i32::from(!all_passed), files: vec![path] })
}

// ---------------------------------------------------------------------------
// insurance
// ---------------------------------------------------------------------------

pub fn cmd_insurance(cfg: &Config, out_dir: &Path) -> Result<CmdOutcome, Error> {
    let lambda = constant_lambda(cfg)?;
    let ins = cfg.insurance.as_ref().ok_or_else(|| Error::Config {
        line: None,
        message: "the insurance command needs an [insurance] section with \
                  `loading` and `reference_intensity` keys"
            .into(),
    })?;
    let problem = InsuranceProblem::new(
        cfg.spec.clone(),
        lambda,
        cfg.claims.clone(),
        PremiumRule::ExpectedValue {
            loading: ins.loading,
            reference_intensity: ins.reference_intensity,
        },
        ins.refund_fraction,
        cfg.run.value_grid,
    )?;
    let curve = problem.optimal_retention()?;

    let mut csv = csv_header(cfg, "theta,premium,xi,v_inner,objective");
    for pt in &curve.points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            pt.theta, pt.premium, pt.xi, pt.v_inner, pt.objective
        ));
    }
    let mut files = vec![write_file(out_dir, "theta_curve.csv", &csv)?];

    let mut summary = json!({
        "version": version(),
        "config_sha256": cfg.sha256,
        "lambda": lambda,
        "loading": ins.loading,
        "refund_fraction": ins.refund_fraction,
        "reference_intensity": ins.reference_intensity,
        "theta_star": curve.theta_star,
        "objective_star": curve.objective_star,
        "mean_effort_star": curve.mean_effort_star,
        "premium_at_star": problem.premium_of(curve.theta_star),
        "xi_at_star": problem.refund_of(curve.theta_star),
    });

    if let Some(sweep) = &ins.loading_sweep {
        let rows = problem.comparative_statics(sweep)?;
        let mut csv = csv_header(cfg, "loading,theta_star,mean_effort");
        for row in &rows {
            csv.push_str(&format!("{},{},{}\n", row.loading, row.theta_star, row.mean_effort));
        }
        files.push(write_file(out_dir, "loading_sweep.csv", &csv)?);
        summary["loading_sweep"] = json!(rows);
    }
    files.push(write_json(out_dir, "insurance_summary.json", &summary)?);
    Ok(CmdOutcome { exit_code: 0, files })
}

// ---------------------------------------------------------------------------
// conditions
// ---------------------------------------------------------------------------

pub fn cmd_conditions(cfg: &Config, out_dir: &Path) -> Result<CmdOutcome, Error> {
    let report = admissibility_report(
        &cfg.model,
        &cfg.claims,
        &cfg.spec,
        cfg.checks.phi,
        cfg.checks.n_paths,
        cfg.run.seed,
    )?;
    let convexity = check_convexity_conditions(&cfg.spec, cfg.model.uniform_bound());
    let scan = pps_gate_scan(cfg.checks.phi);
    let ok = report.no_analytic_failures();
    let value = json!({
        "version": version(),
        "config_sha256": cfg.sha256,
        "seed": cfg.run.seed,
        "phi": cfg.checks.phi,
        "no_analytic_failures": ok,
        "admissibility": report,
        "convexity": convexity,
        "gate_scan": scan,
    });
    let path = write_json(out_dir, "conditions_report.json", &value)?;
    Ok(CmdOutcome { exit_code: i32::from(!ok), files: vec![path] })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(cfg: &Config, out_dir: &Path) -> Result<CmdOutcome, Error> {
    cfg.model.validate()?;
    let streams = RandomStream::new(cfg.run.seed);
    let strategy = cfg.run.effort.map(StrategyFunction::Constant);
    let horizon = cfg.spec.horizon;

    let mut csv = csv_header(cfg, "path,kind,time,value,intensity_before");
    let mut total_claims = 0usize;
    for p in 0..cfg.run.n_paths as u64 {
        let path = match &strategy {
            Some(s) => {
                simulate_path_controlled(&cfg.model, &cfg.claims, s, &cfg.spec, horizon, &streams, p)
            }
            None => simulate_path_p0(&cfg.model, &cfg.claims, horizon, &streams, p),
        };
        total_claims += path.claims.len();
        for ev in &path.claims {
            csv.push_str(&format!(
                "{p},claim,{},{},{}\n",
                ev.time, ev.mark, ev.intensity_before
            ));
        }
        for &(t, size) in &path.shocks {
            csv.push_str(&format!("{p},shock,{t},{size},\n"));
        }
        for &(t, state) in &path.transitions {
            csv.push_str(&format!("{p},transition,{t},{state},\n"));
        }
    }
    let csv_path = write_file(out_dir, "paths.csv", &csv)?;

    let summary = json!({
        "version": version(),
        "config_sha256": cfg.sha256,
        "seed": cfg.run.seed,
        "n_paths": cfg.run.n_paths,
        "measure": if strategy.is_some() { "controlled" } else { "physical" },
        "total_claims": total_claims,
        "mean_claims_per_path": total_claims as f64 / cfg.run.n_paths as f64,
    });
    let json_path = write_json(out_dir, "simulate_summary.json", &summary)?;
    Ok(CmdOutcome { exit_code: 0, files: vec![csv_path, json_path] })
}
