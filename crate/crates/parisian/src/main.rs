//! CLI front end: subcommand dispatch, CSV/JSON artifact emission, and
//! cross-validation reports. Worker count is capped with RAYON_NUM_THREADS.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use parisian::adjustment::AdjustmentCoefficients;
use parisian::claims::TabulatedRule;
use parisian::config::{ConfigError, RunConfig};
use parisian::diffusion::solve_diffusion;
use parisian::hjb::{self, HjbError, HjbSolution};
use parisian::simulator::{self, Estimate, SimConfig};
use parisian::{MarketParams, RetentionRule, SeverityModel};

#[derive(Parser)]
#[command(name = "parisian", version, about = "Minimum discounted probability of exponential Parisian ruin under controlled per-loss reinsurance", long_about = None)]
struct Cli {
    /// JSON run configuration; built-in defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicySource {
    Diffusion,
    Adjustment,
    FullRetention,
    HjbFile,
}

#[derive(Subcommand)]
enum Command {
    /// Check parameter admissibility and report derived quantities.
    Validate,
    /// Solve the diffusion approximation in closed form.
    Diffusion,
    /// Solve the adjustment coefficients and emit the analytic bounds.
    Adjustment,
    /// Run the grid HJB solver.
    Hjb,
    /// Monte Carlo estimate under a chosen policy.
    Simulate {
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = PolicySource::FullRetention)]
        policy: PolicySource,
        /// Directory holding hjb_policy.csv (defaults to the output dir).
        #[arg(long)]
        hjb_dir: Option<PathBuf>,
    },
    /// Cross-validate an HJB solution CSV against simulation.
    Compare {
        /// Directory holding hjb_solution.csv and hjb_policy.csv.
        #[arg(long)]
        hjb_dir: Option<PathBuf>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full pipeline on one config: validate, diffusion, adjustment, HJB,
    /// simulation cross-check, single summary.
    Report,
}

/// CLI failure with its contractual exit code: 1 validation, 2 numerical,
/// 3 I/O.
struct AppError {
    code: u8,
    kind: &'static str,
    message: String,
}

impl AppError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: "validation",
            message: message.into(),
        }
    }
    fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "numerical",
            message: message.into(),
        }
    }
    fn io(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            kind: "io",
            message: message.into(),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => AppError::io(e.to_string()),
            _ => AppError::validation(e.to_string()),
        }
    }
}

impl From<HjbError> for AppError {
    fn from(e: HjbError) -> Self {
        match e {
            HjbError::InvalidParams(_) | HjbError::InvalidGrid(_) => {
                AppError::validation(e.to_string())
            }
            _ => AppError::numerical(e.to_string()),
        }
    }
}

impl From<simulator::SimError> for AppError {
    fn from(e: simulator::SimError) -> Self {
        AppError::numerical(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = json!({
                "error": { "code": e.code, "kind": e.kind, "message": e.message }
            });
            eprintln!("{payload}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.output {
        cfg.output = out.clone();
    }
    fs::create_dir_all(&cfg.output).map_err(|e| AppError::io(e.to_string()))?;

    match cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::Diffusion => cmd_diffusion(&cfg),
        Command::Adjustment => cmd_adjustment(&cfg),
        Command::Hjb => cmd_hjb(&cfg).map(|_| ()),
        Command::Simulate {
            x0,
            paths,
            horizon,
            seed,
            policy,
            hjb_dir,
        } => {
            let mut cfg = cfg;
            if let Some(x0) = x0 {
                cfg.simulation.x0 = x0;
            }
            if let Some(p) = paths {
                cfg.simulation.n_paths = p;
            }
            if let Some(h) = horizon {
                cfg.simulation.horizon = Some(h);
            }
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            cmd_simulate(&cfg, policy, hjb_dir)
        }
        Command::Compare {
            hjb_dir,
            paths,
            seed,
        } => {
            let mut cfg = cfg;
            if let Some(p) = paths {
                cfg.simulation.n_paths = p;
            }
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            cmd_compare(&cfg, hjb_dir)
        }
        Command::Report => cmd_report(&cfg),
    }
}

fn validated_inputs(cfg: &RunConfig) -> Result<(MarketParams, SeverityModel), AppError> {
    let model = cfg.severity_model()?;
    let violations = cfg.market.validate(&model);
    if !violations.is_empty() {
        let detail = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(AppError::validation(detail));
    }
    Ok((cfg.market, model))
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    fs::write(path, contents).map_err(|e| AppError::io(format!("{}: {e}", path.display())))
}

fn write_metadata(
    cfg: &RunConfig,
    subcommand: &str,
    extra: serde_json::Value,
) -> Result<(), AppError> {
    let meta = json!({
        "subcommand": subcommand,
        "config_hash": cfg.hash(),
        "seed": cfg.simulation.seed,
        "solver": cfg.solver,
        "grid": cfg.grid,
        "version": env!("CARGO_PKG_VERSION"),
        "details": extra,
    });
    let path = cfg.output.join(format!("{subcommand}_metadata.json"));
    write_file(&path, &serde_json::to_string_pretty(&meta).unwrap())
}

/// Full-precision CSV: Rust's shortest round-trip float formatting.
fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn cmd_validate(cfg: &RunConfig) -> Result<(), AppError> {
    let model = cfg.severity_model()?;
    let violations = cfg.market.validate(&model);
    if !violations.is_empty() {
        for v in &violations {
            println!("violation: {v}");
        }
        let detail = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(AppError::validation(detail));
    }
    let p = &cfg.market;
    println!("parameters admissible");
    println!("kappa = {}", p.kappa(&model));
    println!("expected claim rate lambda E[Y] = {}", p.lambda * model.mean());
    println!(
        "full-reinsurance premium = {}",
        p.full_reinsurance_premium(&model)
    );
    println!("ruin plateau rho/(rho+beta) = {}", p.ruin_plateau());
    write_metadata(cfg, "validate", json!({ "kappa": p.kappa(&model) }))
}

fn cmd_diffusion(cfg: &RunConfig) -> Result<(), AppError> {
    let (params, model) = validated_inputs(cfg)?;
    let sol = solve_diffusion(&params, &model).map_err(|e| AppError::numerical(e.to_string()))?;
    println!("gamma1_tilde = {}", sol.gamma1_tilde);
    println!("gamma2_tilde = {}", sol.gamma2_tilde);
    println!("smooth pasting gap = {:e}", sol.smooth_pasting_gap());

    let n = cfg.grid.n_x;
    let rows = (0..n).map(|i| {
        let x = cfg.grid.x_min + (cfg.grid.x_max - cfg.grid.x_min) * i as f64 / (n - 1) as f64;
        vec![
            x.to_string(),
            sol.value_tilde(x).to_string(),
            sol.value_tilde_dx(x).to_string(),
        ]
    });
    write_file(
        &cfg.output.join("diffusion.csv"),
        &csv(&["x", "psi_tilde", "dpsi_tilde_dx"], rows),
    )?;
    write_metadata(
        cfg,
        "diffusion",
        json!({
            "gamma1_tilde": sol.gamma1_tilde,
            "gamma2_tilde": sol.gamma2_tilde,
            "retention_crossover": sol.retention_crossover(),
        }),
    )
}

fn cmd_adjustment(cfg: &RunConfig) -> Result<(), AppError> {
    let (params, model) = validated_inputs(cfg)?;
    let coeffs = AdjustmentCoefficients::solve(&params, &model)
        .map_err(|e| AppError::numerical(e.to_string()))?;
    println!("gamma1 = {}", coeffs.gamma1);
    println!("gamma2 = {}", coeffs.gamma2);
    println!("retention threshold ln(1+theta)/gamma1 = {}", coeffs.retention_threshold());
    let g1 = coeffs.gamma1;
    let g2 = coeffs.gamma2;
    let bounds = coeffs.bounds();

    let n = cfg.grid.n_x;
    let rows = (0..n).map(|i| {
        let x = cfg.grid.x_min + (cfg.grid.x_max - cfg.grid.x_min) * i as f64 / (n - 1) as f64;
        vec![
            x.to_string(),
            bounds.psi_bar(x).to_string(),
            bounds.psi_underbar(x).to_string(),
        ]
    });
    write_file(
        &cfg.output.join("adjustment.csv"),
        &csv(&["x", "psi_bar", "psi_underbar"], rows),
    )?;
    write_metadata(
        cfg,
        "adjustment",
        json!({ "gamma1": g1, "gamma2": g2 }),
    )
}

fn cmd_hjb(cfg: &RunConfig) -> Result<HjbSolution, AppError> {
    let (params, model) = validated_inputs(cfg)?;
    let sol = hjb::solve(&params, &model, &cfg.grid, &cfg.solver)?;
    if !sol.diagnostics.converged {
        return Err(AppError::numerical(format!(
            "HJB solver did not converge: {} iterations, max residual {:e}",
            sol.diagnostics.iterations, sol.diagnostics.max_residual
        )));
    }
    println!(
        "converged in {} policy iterations ({} sweeps), max residual {:e}",
        sol.diagnostics.iterations, sol.diagnostics.total_sweeps, sol.diagnostics.max_residual
    );

    let rows = sol.grid.x.iter().enumerate().map(|(i, &x)| {
        vec![
            x.to_string(),
            sol.values[i].to_string(),
            sol.residuals[i].to_string(),
        ]
    });
    write_file(
        &cfg.output.join("hjb_solution.csv"),
        &csv(&["x", "value", "residual"], rows),
    )?;

    let mut header: Vec<String> = vec!["x".into()];
    header.extend(sol.grid.y_atoms.iter().map(|&(y, _)| format!("y={y}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let n_atoms = sol.grid.y_atoms.len();
    let rows = sol.grid.x.iter().enumerate().map(|(i, &x)| {
        let mut row = vec![x.to_string()];
        row.extend(
            sol.policy[i * n_atoms..(i + 1) * n_atoms]
                .iter()
                .map(|r| r.to_string()),
        );
        row
    });
    write_file(&cfg.output.join("hjb_policy.csv"), &csv(&header_refs, rows))?;

    let (_, pol_diag) = hjb::extract_policy(&sol, 1e-3, 0.05);
    write_metadata(
        cfg,
        "hjb",
        json!({ "diagnostics": sol.diagnostics, "policy": pol_diag }),
    )?;
    Ok(sol)
}

fn build_policy(
    cfg: &RunConfig,
    params: &MarketParams,
    model: &SeverityModel,
    source: PolicySource,
    hjb_dir: Option<PathBuf>,
) -> Result<RetentionRule, AppError> {
    match source {
        PolicySource::FullRetention => Ok(RetentionRule::FullRetention),
        PolicySource::Diffusion => {
            let sol =
                solve_diffusion(params, model).map_err(|e| AppError::numerical(e.to_string()))?;
            let g1 = sol.gamma1_tilde;
            let theta = params.theta;
            let eta = params.eta;
            Ok(RetentionRule::two_regime(
                RetentionRule::FullRetention,
                RetentionRule::per_claim(move |y: f64| ((theta + eta * y) / (eta + g1)).min(y)),
            ))
        }
        PolicySource::Adjustment => {
            let coeffs = AdjustmentCoefficients::solve(params, model)
                .map_err(|e| AppError::numerical(e.to_string()))?;
            Ok(RetentionRule::two_regime(
                RetentionRule::FullRetention,
                RetentionRule::per_claim(move |y: f64| coeffs.r_hat(y).unwrap_or(y)),
            ))
        }
        PolicySource::HjbFile => {
            let dir = hjb_dir.unwrap_or_else(|| cfg.output.clone());
            let table = read_policy_csv(&dir.join("hjb_policy.csv"))?;
            let (rule, _, _, _) = hjb::collapse_tabulated(table, 1e-3, 0.05);
            Ok(rule)
        }
    }
}

fn read_policy_csv(path: &Path) -> Result<TabulatedRule, AppError> {
    let text =
        fs::read_to_string(path).map_err(|e| AppError::io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AppError::validation("empty policy CSV"))?;
    let y_grid: Vec<f64> = header
        .split(',')
        .skip(1)
        .map(|c| {
            c.trim_start_matches("y=")
                .parse::<f64>()
                .map_err(|e| AppError::validation(format!("bad policy header cell {c:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let mut x_grid = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        let x: f64 = cells
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| AppError::validation(format!("bad policy row: {e}")))?;
        let row: Vec<f64> = cells
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|e| AppError::validation(format!("bad policy cell {c:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != y_grid.len() {
            return Err(AppError::validation("ragged policy CSV"));
        }
        x_grid.push(x);
        values.push(row);
    }
    Ok(TabulatedRule {
        x_grid,
        y_grid,
        values,
    })
}

fn read_solution_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), AppError> {
    let text =
        fs::read_to_string(path).map_err(|e| AppError::io(format!("{}: {e}", path.display())))?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for line in text.lines().skip(1) {
        let mut cells = line.split(',');
        let parse = |c: Option<&str>| -> Result<f64, AppError> {
            c.unwrap_or("")
                .parse()
                .map_err(|e| AppError::validation(format!("bad solution CSV: {e}")))
        };
        xs.push(parse(cells.next())?);
        vs.push(parse(cells.next())?);
    }
    if xs.len() < 2 {
        return Err(AppError::validation("solution CSV has fewer than 2 rows"));
    }
    Ok((xs, vs))
}

fn sim_config(cfg: &RunConfig, params: MarketParams, model: SeverityModel) -> SimConfig {
    let mut sim = SimConfig::new(cfg.simulation.x0, RetentionRule::FullRetention, params, model);
    sim.n_paths = cfg.simulation.n_paths;
    sim.horizon = cfg.simulation.horizon;
    sim.seed = cfg.simulation.seed;
    sim.time_step = cfg.simulation.time_step;
    sim
}

fn estimate_row(x0: f64, est: &Estimate, seed: u64) -> Vec<String> {
    vec![
        x0.to_string(),
        est.mean.to_string(),
        est.std_error.to_string(),
        est.ci95.0.to_string(),
        est.ci95.1.to_string(),
        est.bias_bound.to_string(),
        est.n_paths.to_string(),
        est.n_ruined.to_string(),
        seed.to_string(),
    ]
}

const ESTIMATE_HEADER: [&str; 9] = [
    "x0",
    "mean",
    "std_error",
    "ci_lo",
    "ci_hi",
    "bias_bound",
    "n_paths",
    "n_ruined",
    "seed",
];

fn cmd_simulate(
    cfg: &RunConfig,
    policy: PolicySource,
    hjb_dir: Option<PathBuf>,
) -> Result<(), AppError> {
    let (params, model) = validated_inputs(cfg)?;
    let rule = build_policy(cfg, &params, &model, policy, hjb_dir)?;
    let mut sim = sim_config(cfg, params, model);
    sim.rule = rule;
    let est = simulator::estimate(&sim)?;
    println!(
        "x0 = {}: estimate {} +- {} (95% CI [{}, {}]), {} of {} paths ruined",
        sim.x0, est.mean, est.std_error, est.ci95.0, est.ci95.1, est.n_ruined, est.n_paths
    );
    write_file(
        &cfg.output.join("simulate.csv"),
        &csv(&ESTIMATE_HEADER, [estimate_row(sim.x0, &est, sim.seed)]),
    )?;
    write_metadata(
        cfg,
        "simulate",
        json!({ "policy": format!("{policy:?}"), "estimate": est }),
    )
}

fn cmd_compare(cfg: &RunConfig, hjb_dir: Option<PathBuf>) -> Result<(), AppError> {
    let (params, model) = validated_inputs(cfg)?;
    let dir = hjb_dir.unwrap_or_else(|| cfg.output.clone());
    let (xs, vs) = read_solution_csv(&dir.join("hjb_solution.csv"))?;
    let table = read_policy_csv(&dir.join("hjb_policy.csv"))?;
    let (opt_rule, below_gap, spread, _) = hjb::collapse_tabulated(table, 1e-3, 0.05);
    log::info!("policy collapse: below-zero gap {below_gap:e}, x-spread {spread:e}");

    let hjb_value = |x: f64| -> f64 {
        // Piecewise-linear read of the solution CSV.
        let n = xs.len();
        if x <= xs[0] {
            return vs[0];
        }
        if x >= xs[n - 1] {
            return vs[n - 1];
        }
        let i = xs.partition_point(|&g| g <= x) - 1;
        let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
        (1.0 - t) * vs[i] + t * vs[i + 1]
    };

    let coeffs = AdjustmentCoefficients::solve(&params, &model)
        .map_err(|e| AppError::numerical(e.to_string()))?;
    let bar_rule = RetentionRule::two_regime(
        RetentionRule::FullRetention,
        RetentionRule::per_claim(move |y: f64| coeffs.r_hat(y).unwrap_or(y)),
    );

    let mut rows = Vec::new();
    let mut dominance_holds = true;
    let mut table_text = String::new();
    writeln!(
        table_text,
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>8} {:>8}",
        "x0", "hjb", "mc_opt", "mc_full", "mc_bar", "z_full", "z_bar"
    )
    .unwrap();
    for &x0 in &cfg.simulation.x_points {
        let run = |rule: &RetentionRule| -> Result<Estimate, AppError> {
            let mut sim = sim_config(cfg, params, model.clone());
            sim.x0 = x0;
            sim.rule = rule.clone();
            Ok(simulator::estimate(&sim)?)
        };
        let opt = run(&opt_rule)?;
        let full = run(&RetentionRule::FullRetention)?;
        let bar = run(&bar_rule)?;
        let v = hjb_value(x0);
        let z = |r: &Estimate| {
            (r.mean - opt.mean) / (r.std_error.powi(2) + opt.std_error.powi(2)).sqrt().max(1e-300)
        };
        let (z_full, z_bar) = (z(&full), z(&bar));
        if z_full < -3.0 || z_bar < -3.0 {
            dominance_holds = false;
        }
        writeln!(
            table_text,
            "{:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>8.2} {:>8.2}",
            x0, v, opt.mean, full.mean, bar.mean, z_full, z_bar
        )
        .unwrap();
        rows.push(vec![
            x0.to_string(),
            v.to_string(),
            opt.mean.to_string(),
            opt.std_error.to_string(),
            full.mean.to_string(),
            full.std_error.to_string(),
            bar.mean.to_string(),
            bar.std_error.to_string(),
            ((opt.mean - v) / opt.std_error.max(1e-300)).to_string(),
            z_full.to_string(),
            z_bar.to_string(),
        ]);
    }
    print!("{table_text}");
    println!("dominance holds: {dominance_holds}");
    write_file(
        &cfg.output.join("compare.csv"),
        &csv(
            &[
                "x0",
                "hjb_value",
                "mc_opt_mean",
                "mc_opt_se",
                "mc_full_mean",
                "mc_full_se",
                "mc_bar_mean",
                "mc_bar_se",
                "z_vs_hjb",
                "z_vs_full",
                "z_vs_bar",
            ],
            rows,
        ),
    )?;
    write_metadata(cfg, "compare", json!({ "dominance_holds": dominance_holds }))
}

fn cmd_report(cfg: &RunConfig) -> Result<(), AppError> {
    let (params, model) = validated_inputs(cfg)?;
    cmd_validate(cfg)?;
    let diff =
        solve_diffusion(&params, &model).map_err(|e| AppError::numerical(e.to_string()))?;
    cmd_diffusion(cfg)?;
    cmd_adjustment(cfg)?;
    let coeffs = AdjustmentCoefficients::solve(&params, &model)
        .map_err(|e| AppError::numerical(e.to_string()))?;
    let (g1, g2) = (coeffs.gamma1, coeffs.gamma2);
    let sol = cmd_hjb(cfg)?;

    let (rule, pol_diag) = hjb::extract_policy(&sol, 1e-3, 0.05);
    let mut rows = Vec::new();
    for &x0 in &cfg.simulation.x_points {
        let mut sim = sim_config(cfg, params, model.clone());
        sim.x0 = x0;
        sim.rule = rule.clone();
        let est = simulator::estimate(&sim)?;
        println!(
            "x0 = {x0}: hjb {} vs mc {} +- {}",
            sol.value_at(x0),
            est.mean,
            est.std_error
        );
        rows.push(estimate_row(x0, &est, sim.seed));
    }
    write_file(&cfg.output.join("report_simulation.csv"), &csv(&ESTIMATE_HEADER, rows))?;

    println!("gamma1_tilde = {}", diff.gamma1_tilde);
    println!("gamma2_tilde = {}", diff.gamma2_tilde);
    println!("gamma1 = {g1}");
    println!("gamma2 = {g2}");
    let summary = json!({
        "kappa": params.kappa(&model),
        "gamma1_tilde": diff.gamma1_tilde,
        "gamma2_tilde": diff.gamma2_tilde,
        "gamma1": g1,
        "gamma2": g2,
        "hjb": sol.diagnostics,
        "policy": pol_diag,
        "values_at_x_points": cfg
            .simulation
            .x_points
            .iter()
            .map(|&x| (x, sol.value_at(x)))
            .collect::<Vec<_>>(),
    });
    write_file(
        &cfg.output.join("report.json"),
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    write_metadata(cfg, "report", summary)
}
