//! Subcommand bodies. Each returns a diagnostics value for the manifest and
//! the lines to print on stdout.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use singular_bsde::analysis::{convergence_sweep, oracle_deterministic, SweepOptions};
use singular_bsde::expansion::{expansion_constants, extract_h_grid, verify_h_bound};
use singular_bsde::liquidation::{cost_mc, map_to_bsde, optimal_state, value, LiquidationProblem, Trajectory};
use singular_bsde::{solve_singular, ExpansionSpec, SingularProblem};

use crate::config::{require, RunConfig};
use crate::output::{num, OutputDir};
use crate::CliError;

pub struct Outcome {
    pub diagnostics: Value,
    pub stdout: Vec<String>,
}

fn problem(cfg: &RunConfig) -> Result<SingularProblem, CliError> {
    let gen = require(&cfg.generator, "generator")?.build()?;
    let coeff = require(&cfg.coefficients, "coefficients")?.build(cfg.maturity)?;
    let expansion = cfg.expansion.as_ref().map(|e| e.build()).unwrap_or_default();
    Ok(SingularProblem {
        gen,
        coeff,
        maturity: cfg.maturity,
        expansion,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

pub fn solve(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let prob = problem(cfg)?;
    let section = require(&cfg.scheme, "scheme")?;
    let scheme = section.build(cfg.maturity)?;
    let sol = solve_singular(&prob, &scheme, section.n_paths, cfg.seed).map_err(CliError::numeric("scheme"))?;
    let res = &sol.result;
    let summary = res.summary();
    out.csv(
        "ybar_summary.csv",
        &["step", "t", "mean", "min", "q05", "q50", "q95", "max"],
        summary.iter().map(|s| {
            vec![
                s.step.to_string(),
                num(s.t),
                num(s.mean),
                num(s.min),
                num(s.q05),
                num(s.q50),
                num(s.q95),
                num(s.max),
            ]
        }),
    )?;
    if section.dump_paths {
        out.csv(
            "ybar_paths.csv",
            &["step", "t", "path", "y"],
            (0..=res.n_steps).flat_map(|i| {
                res.row(i)
                    .iter()
                    .enumerate()
                    .map(move |(p, &y)| vec![i.to_string(), num(res.time(i)), p.to_string(), num(y)])
                    .collect::<Vec<_>>()
            }),
        )?;
    }
    if section.dump_ensemble {
        let mut buf = Vec::new();
        sol.ensemble
            .write_csv(&mut buf)
            .map_err(|e| CliError::io(&out.path().join("ensemble.csv"), e))?;
        out.write("ensemble.csv", &buf)?;
    }
    let report = json!({
        "generator": prob.gen.kind().label(),
        "coefficients": prob.coeff.describe(),
        "y0": res.y0(),
        "n_steps": res.n_steps,
        "n_paths": res.n_paths,
        "h": res.h,
        "horizon": res.horizon,
        "a_priori_violation": res.a_priori_violation(),
        "summary": summary,
        "diagnostics": res.diagnostics,
    });
    out.json("solve.json", &report)?;
    Ok(Outcome {
        stdout: vec![format!("y0 = {}", report["y0"])],
        diagnostics: json!({
            "max_newton_residual": res.diagnostics.max_residual,
            "regression_fallbacks": res.diagnostics.regression_fallbacks,
            "clamp_events": res.diagnostics.clamp_events,
            "clip_events": res.diagnostics.clip_events,
        }),
    })
}

pub fn sweep(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let prob = problem(cfg)?;
    let analysis = require(&cfg.analysis, "analysis")?;
    let levels = analysis.levels()?;
    let opts = SweepOptions {
        estimator: analysis.estimator.build(),
        n_paths: analysis.n_paths,
        seed: cfg.seed,
        beta: analysis.beta,
        cutoff_eps: analysis.cutoff_eps,
        rk_steps: analysis.rk_steps,
        reference_paths: analysis.reference_paths,
    };
    let report = convergence_sweep(&prob, &levels, &opts).map_err(CliError::numeric("analysis"))?;
    out.csv(
        "sweep.csv",
        &[
            "h", "delta", "n_steps", "y0", "oracle_y0", "error_t0", "sup_error", "a_priori_ok", "phi_delta", "k_bound",
            "psi1", "psi2", "delta_term", "h_beta_term", "psi1_term", "psi2_term", "c3", "bound_total",
        ],
        report.rows.iter().map(|r| {
            let b = &r.bound;
            vec![
                num(r.h),
                num(r.delta),
                r.n_steps.to_string(),
                num(r.y0),
                num(r.oracle_y0),
                num(r.error_t0),
                num(r.sup_error),
                r.a_priori_ok.to_string(),
                num(r.phi_delta),
                num(b.k_bound),
                num(b.psi1),
                num(b.psi2),
                num(b.delta_term),
                num(b.h_beta_term),
                num(b.psi1_term),
                num(b.psi2_term),
                num(b.c3),
                num(b.total),
            ]
        }),
    )?;
    let mut dat = String::from("# h delta error_t0 bound_total\n");
    for r in &report.rows {
        dat.push_str(&format!("{} {} {} {}\n", num(r.h), num(r.delta), num(r.error_t0), num(r.bound.total)));
    }
    out.write("rates.dat", dat.as_bytes())?;
    out.json("sweep.json", &report)?;
    // Printed from the same serialized values as the JSON file.
    let rates = json!({
        "slope_h": report.slope_h,
        "slope_delta": report.slope_delta,
        "alpha": report.alpha,
        "beta": report.beta,
        "bound_holds": report.bound_holds,
    });
    let mut stdout = vec![rates.to_string()];
    stdout.extend(report.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(Outcome {
        stdout,
        diagnostics: json!({
            "levels": report.rows.len(),
            "oracle_method": report.oracle_method,
            "oracle_error": report.oracle_error,
            "c": report.c,
            "c3": report.c3,
            "warnings": report.warnings,
        }),
    })
}

pub fn expansion_check(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let prob = problem(cfg)?;
    let check = require(&cfg.expansion_check, "expansion_check")?;
    let t_mat = cfg.maturity;
    if !(check.window_fraction > 0.0 && check.window_fraction < 1.0) {
        return Err(CliError::Config("expansion_check.window_fraction: must lie in (0, 1)".into()));
    }
    let window_start = t_mat * (1.0 - check.window_fraction);
    let consts = expansion_constants(&prob.gen, &prob.coeff, t_mat, check.n_samples)
        .map_err(CliError::numeric("expansion"))?;
    let (times, eta, y, discretization, source) = if prob.coeff.is_deterministic() {
        let cutoff = check.cutoff_eps.unwrap_or(1e-3 * t_mat * check.window_fraction);
        if !(cutoff > 0.0 && cutoff < t_mat - window_start) {
            return Err(CliError::Config("expansion_check.cutoff_eps: must lie inside the window".into()));
        }
        let n = check.grid_points.max(2);
        let last = t_mat - cutoff;
        let times: Vec<f64> = (0..n)
            .map(|k| window_start + (last - window_start) * k as f64 / (n - 1) as f64)
            .collect();
        let oracle = oracle_deterministic(&prob.gen, &prob.coeff, t_mat, cutoff / 10.0, 64, &times)
            .map_err(CliError::numeric("analysis"))?;
        let state = prob.coeff.initial_state();
        let eta: Vec<f64> = times.iter().map(|&t| prob.coeff.eta_at(t, state)).collect();
        (times, eta, oracle.values, oracle.error_estimate, oracle.method)
    } else {
        let section = require(&cfg.scheme, "scheme")?;
        let scheme = section.build(t_mat)?;
        let sol = solve_singular(&prob, &scheme, section.n_paths, cfg.seed).map_err(CliError::numeric("scheme"))?;
        let times = sol.ensemble.times();
        (times, sol.ensemble.eta.clone(), sol.result.y_bar.clone(), 0.0, "scheme".to_string())
    };
    let h = extract_h_grid(&prob.gen, t_mat, &times, &eta, &y).map_err(CliError::numeric("expansion"))?;
    let report = verify_h_bound(
        &prob.gen,
        &consts,
        prob.coeff.eta_lower(),
        t_mat,
        &times,
        &eta,
        &h,
        window_start,
        discretization,
        check.slack,
    )
    .map_err(CliError::numeric("expansion"))?;
    let np = h.len() / times.len();
    out.csv(
        "h_values.csv",
        &["step", "t", "path", "eta", "y", "h"],
        (0..h.len())
            .filter(|k| times[k / np] >= window_start)
            .map(|k| vec![(k / np).to_string(), num(times[k / np]), (k % np).to_string(), num(eta[k]), num(y[k]), num(h[k])]),
    )?;
    let doc = json!({ "source": source, "constants": consts, "report": report });
    out.json("expansion_check.json", &doc)?;
    let mut stdout = vec![format!(
        "sup|H|/vartheta = {} vs envelope 2K/zeta = {}",
        doc["report"]["sup_h_over_vartheta"], doc["report"]["envelope"]
    )];
    if report.identically_zero {
        stdout.push("H is identically zero on the window".into());
    }
    if report.violation {
        stdout.push("warning: envelope exceeded".into());
    }
    Ok(Outcome {
        stdout,
        diagnostics: json!({ "source": doc["source"], "samples": report.samples, "violation": report.violation }),
    })
}

pub fn audit(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let gen = require(&cfg.generator, "generator")?.build()?;
    let section = require(&cfg.audit, "audit")?;
    let eta_sharp = match (section.eta_sharp, &cfg.coefficients) {
        (Some(e), _) => e,
        (None, Some(c)) => c.build(cfg.maturity)?.eta_sharp(),
        (None, None) => 1.0,
    };
    let report = gen
        .audit_assumptions(section.eps, section.varsigma, eta_sharp, section.grid_size)
        .map_err(CliError::numeric("generator"))?;
    out.json("audit.json", &report)?;
    out.csv(
        "audit_samples.csv",
        &["x", "kappa2", "a6_plus", "a6_minus"],
        report
            .samples
            .iter()
            .map(|s| vec![num(s.x), num(s.kappa2), num(s.a6_plus), num(s.a6_minus)]),
    )?;
    Ok(Outcome {
        stdout: report.summary.clone(),
        diagnostics: json!({ "a5_pass": report.a5_pass, "a6_blow_up": report.a6_blow_up, "samples": report.samples.len() }),
    })
}

#[derive(Serialize)]
struct LiquidationReport<'a> {
    value: f64,
    mc_cost: f64,
    std_error: f64,
    gap: f64,
    y0: f64,
    p: f64,
    q: f64,
    n_paths: usize,
    mean_cutoff_fraction: f64,
    max_terminal_residual: f64,
    trajectories: Vec<(usize, &'a Trajectory)>,
}

pub fn liquidate(cfg: &RunConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let section = require(&cfg.liquidation, "liquidation")?;
    let scheme_section = require(&cfg.scheme, "scheme")?;
    let scheme = scheme_section.build(cfg.maturity)?;
    let zeta = section.zeta.build(cfg.maturity);
    let zeta_upper = match &zeta {
        singular_bsde::EtaModel::Deterministic { upper, .. }
        | singular_bsde::EtaModel::ArctanTransform { upper, .. }
        | singular_bsde::EtaModel::CustomIto { upper, .. } => *upper,
    };
    let prob = LiquidationProblem {
        x0: section.x0,
        p: section.p,
        lambda: section.lambda.build(cfg.maturity, zeta_upper, "liquidation.lambda")?,
        zeta,
        maturity: cfg.maturity,
    };
    let (gen, coeff) = map_to_bsde(&prob).map_err(CliError::numeric("liquidation"))?;
    let n_paths = scheme_section.n_paths;
    if let Some(&bad) = section.paths_out.iter().find(|&&k| k >= n_paths) {
        return Err(CliError::Config(format!(
            "liquidation.paths_out: path {bad} does not exist (scheme.n_paths = {n_paths})"
        )));
    }
    let bsde = SingularProblem {
        gen,
        coeff,
        maturity: cfg.maturity,
        expansion: ExpansionSpec::order(0),
    };
    let sol = solve_singular(&bsde, &scheme, n_paths, cfg.seed).map_err(CliError::numeric("scheme"))?;
    let trajectories: Vec<Trajectory> = (0..n_paths)
        .into_par_iter()
        .map(|k| optimal_state(&prob, &sol.ensemble, &sol.result, k))
        .collect::<Result<_, _>>()
        .map_err(CliError::numeric("liquidation"))?;
    let (mc_cost, std_error) = cost_mc(&prob, &trajectories);
    let y0 = sol.result.y0();
    let v = value(&prob, y0);
    let selected: Vec<(usize, &Trajectory)> = section.paths_out.iter().map(|&k| (k, &trajectories[k])).collect();
    out.csv(
        "trajectories.csv",
        &["path", "t", "x", "rate", "x_dot", "y", "zeta", "lambda"],
        selected.iter().flat_map(|(k, tr)| {
            (0..tr.t.len())
                .map(|i| {
                    vec![
                        k.to_string(),
                        num(tr.t[i]),
                        num(tr.x[i]),
                        num(tr.rate[i]),
                        num(tr.x_dot[i]),
                        num(tr.y[i]),
                        num(tr.zeta[i]),
                        num(tr.lambda[i]),
                    ]
                })
                .collect::<Vec<_>>()
        }),
    )?;
    let report = LiquidationReport {
        value: v,
        mc_cost,
        std_error,
        gap: mc_cost - v,
        y0,
        p: prob.p,
        q: prob.q(),
        n_paths,
        mean_cutoff_fraction: trajectories.iter().map(|t| t.cutoff_fraction).sum::<f64>() / n_paths as f64,
        max_terminal_residual: trajectories.iter().map(|t| t.terminal_residual).fold(0.0, f64::max),
        trajectories: selected,
    };
    out.json("liquidation.json", &report)?;
    let j = to_value(&report);
    Ok(Outcome {
        stdout: vec![format!(
            "value = {}, mc_cost = {} (std error {}), gap = {}",
            j["value"], j["mc_cost"], j["std_error"], j["gap"]
        )],
        diagnostics: json!({
            "max_newton_residual": sol.result.diagnostics.max_residual,
            "mean_cutoff_fraction": j["mean_cutoff_fraction"],
        }),
    })
}
