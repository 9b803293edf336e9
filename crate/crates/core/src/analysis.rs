//! Reference solutions, convergence sweeps, rate fits and the explicit error
//! bound `C₃[Δ^α + h^β + Ψ₁(Δ)h^β + Ψ₂(Δ)h]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion::{self, ExpansionSpec};
use crate::forward::{simulate, CoefficientModel};
use crate::generator::GeneratorModel;
use crate::quad::{integrate, QuadOptions};
use crate::scheme::{solve_singular, CondExpEstimator, SchemeConfig, SingularProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub method: String,
    /// Estimated absolute error of `values` (sup over nodes).
    pub error_estimate: f64,
}

impl OracleSolution {
    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|k| self.values[k])
    }
}

fn require_deterministic(coeff: &CoefficientModel) -> Result<()> {
    if !coeff.is_deterministic() {
        return Err(Error::Config("the deterministic oracle needs deterministic η and λ".into()));
    }
    Ok(())
}

/// `∫ₜ^T ds/η_s` for deterministic `η`.
fn time_change(coeff: &CoefficientModel, maturity: f64, t: f64) -> Result<f64> {
    if coeff.eta_lower() == coeff.eta_upper() {
        return Ok((maturity - t) / coeff.eta_lower());
    }
    Ok(integrate(|s| 1.0 / coeff.eta_at(s, 0.0), t, maturity, QuadOptions::relative(1e-14))?.value)
}

/// RK4 in `s = ln(T−t)` for `dY/ds = τ (f(Y)/η(T−τ) + λ(T−τ))`, from `Y = φ(ε/η)` at `τ = ε`.
fn rk_log_tau(
    gen: &GeneratorModel,
    coeff: &CoefficientModel,
    maturity: f64,
    eps: f64,
    sub_steps: usize,
    taus: &[f64],
) -> Result<Vec<f64>> {
    let rhs = |s: f64, y: f64| {
        let tau = s.exp();
        let t = maturity - tau;
        let eta = coeff.eta_at(t, 0.0);
        tau * (gen.f(y) / eta + coeff.lambda.eval(t, eta))
    };
    let mut s = eps.ln();
    let mut y = gen.phi(eps / coeff.eta_at(maturity - eps, 0.0))?;
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let target = tau.ln();
        let span = target - s;
        // At least `sub_steps` per node and no step longer than 0.02 in ln τ.
        let n = sub_steps.max((span / 0.02).ceil() as usize).max(1);
        let ds = span / n as f64;
        for _ in 0..n {
            let k1 = rhs(s, y);
            let k2 = rhs(s + 0.5 * ds, y + 0.5 * ds * k1);
            let k3 = rhs(s + 0.5 * ds, y + 0.5 * ds * k2);
            let k4 = rhs(s + ds, y + ds * k3);
            y += ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s += ds;
            if !y.is_finite() || y < 0.0 {
                return Err(Error::Stiffness(format!(
                    "solution left [0, ∞) at τ = {:e}; cutoff {eps:e} too large for this driver",
                    s.exp()
                )));
            }
        }
        s = target;
        out.push(y);
    }
    Ok(out)
}

/// Reference solution of the deterministic problem at `nodes` (each `< T − cutoff_eps`).
///
/// With `λ ≡ 0` the exact solution `Y_t = φ(∫ₜ^T ds/η_s)` is used. Otherwise
/// the ODE is integrated with RK4 in log time-to-maturity (which removes the
/// blow-up), with Richardson extrapolation between `rk_steps` and
/// `2·rk_steps` and a cutoff-sensitivity rerun at `cutoff_eps/10` feeding the
/// error estimate.
pub fn oracle_deterministic(
    gen: &GeneratorModel,
    coeff: &CoefficientModel,
    maturity: f64,
    cutoff_eps: f64,
    rk_steps: usize,
    nodes: &[f64],
) -> Result<OracleSolution> {
    require_deterministic(coeff)?;
    if coeff.lambda_max() == 0.0 {
        let values = nodes
            .iter()
            .map(|&t| gen.phi(time_change(coeff, maturity, t)?))
            .collect::<Result<Vec<f64>>>()?;
        let err = values.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-13;
        let method = if coeff.eta_lower() == coeff.eta_upper() {
            "closed-form"
        } else {
            "closed-form+quadrature"
        };
        return Ok(OracleSolution {
            times: nodes.to_vec(),
            values,
            method: method.into(),
            error_estimate: err,
        });
    }
    if !(cutoff_eps > 0.0) || rk_steps == 0 {
        return Err(Error::Config("oracle needs cutoff_eps > 0 and rk_steps >= 1".into()));
    }
    // Integrate in increasing τ, i.e. decreasing t.
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| nodes[b].total_cmp(&nodes[a]));
    let taus: Vec<f64> = order.iter().map(|&k| maturity - nodes[k]).collect();
    if let Some(&t) = taus.iter().find(|&&tau| tau <= cutoff_eps) {
        return Err(Error::Config(format!(
            "oracle node τ = {t:e} is not beyond the cutoff {cutoff_eps:e}"
        )));
    }
    let coarse = rk_log_tau(gen, coeff, maturity, cutoff_eps, rk_steps, &taus)?;
    let fine = rk_log_tau(gen, coeff, maturity, cutoff_eps, 2 * rk_steps, &taus)?;
    let shifted = rk_log_tau(gen, coeff, maturity, cutoff_eps / 10.0, 2 * rk_steps, &taus)?;
    let mut values = vec![0.0; nodes.len()];
    let mut err = 0.0f64;
    for (j, &k) in order.iter().enumerate() {
        let rich = fine[j] + (fine[j] - coarse[j]) / 15.0;
        values[k] = rich;
        err = err.max((fine[j] - coarse[j]).abs() / 15.0 + (shifted[j] - fine[j]).abs());
    }
    Ok(OracleSolution {
        times: nodes.to_vec(),
        values,
        method: "rk4-log-tau+richardson".into(),
        error_estimate: err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub oracle: OracleSolution,
    /// `Ȳ₀` at `n_steps`, `n_steps/2`, `n_steps/4`.
    pub levels: [f64; 3],
    /// `|Y_f − Y_{f/2}| / |Y_{f/2} − Y_{f/4}|`; below 1 when the levels converge.
    pub self_consistency: f64,
    pub warning: bool,
}

/// Fine solve used as reference for stochastic coefficients. The three levels
/// share their Brownian increments.
pub fn reference_stochastic(
    problem: &SingularProblem,
    estimator: &CondExpEstimator,
    fine_n_steps: usize,
    fine_delta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ReferenceSolution> {
    if fine_n_steps < 4 || !fine_n_steps.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "reference needs a step count divisible by 4, got {fine_n_steps}"
        )));
    }
    let solve = |n: usize| -> Result<f64> {
        let cfg = SchemeConfig::new(fine_delta, n, estimator.clone());
        Ok(solve_singular(problem, &cfg, n_paths, seed)?.result.y0())
    };
    let levels: Vec<f64> = [fine_n_steps, fine_n_steps / 2, fine_n_steps / 4]
        .par_iter()
        .map(|&n| solve(n))
        .collect::<Result<_>>()?;
    let ratio = (levels[0] - levels[1]).abs() / (levels[1] - levels[2]).abs();
    let ratio = if ratio.is_nan() { 0.0 } else { ratio };
    Ok(ReferenceSolution {
        oracle: OracleSolution {
            times: vec![0.0],
            values: vec![levels[0]],
            method: "reference-scheme".into(),
            error_estimate: (levels[0] - levels[1]).abs(),
        },
        levels: [levels[0], levels[1], levels[2]],
        self_consistency: ratio,
        warning: ratio > 1.0,
    })
}

/// Inputs of [`theorem_bound`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    pub maturity: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `C` in `‖Y_t − ξ_t‖ ≤ C(T−t)^α`.
    pub c: f64,
    pub c3: f64,
    /// Empirical `Φ(Δ)`.
    pub phi_delta: f64,
    /// Coefficients enter the scheme without approximation error: the `h^β`
    /// and `Ψ₁h^β` terms vanish.
    pub exact_coefficients: bool,
    pub eta_lower: f64,
    pub eta_upper: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundDecomposition {
    pub k_bound: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub delta_term: f64,
    pub h_beta_term: f64,
    pub psi1_term: f64,
    pub psi2_term: f64,
    pub c3: f64,
    /// `C₃ · (sum of the four terms)`.
    pub total: f64,
}

/// The four terms of the error bound at `(Δ, h)`, with
/// `K = Θ(Δ) + CΔ^α + Tλ★`, `Ψ₁ = |f(K)| + Φ(Δ)` and
/// `Ψ₂ = |f'(K)|T/(2η⋆)(|f(K)|/η⋆ + λ★) + sup_{[0,K]}|f''|/(2η⋆)(K² + (Tλ★)²)`.
pub fn theorem_bound(gen: &GeneratorModel, delta: f64, h: f64, inp: &BoundInputs) -> Result<BoundDecomposition> {
    let t = inp.maturity;
    let theta = gen.theta_envelope(delta, inp.eta_upper, inp.lambda_max)?;
    let k = theta + inp.c * delta.powf(inp.alpha) + t * inp.lambda_max;
    let fk = gen.f(k).abs();
    let f2_sup = (0..=400)
        .map(|j| gen.d2f(k * j as f64 / 400.0).abs())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let psi1 = fk + inp.phi_delta;
    let psi2 = gen.df(k).abs() * t / (2.0 * inp.eta_lower) * (fk / inp.eta_lower + inp.lambda_max)
        + f2_sup / (2.0 * inp.eta_lower) * (k * k + (t * inp.lambda_max).powi(2));
    let hb = h.powf(inp.beta);
    let delta_term = delta.powf(inp.alpha);
    let (h_beta_term, psi1_term) = if inp.exact_coefficients { (0.0, 0.0) } else { (hb, psi1 * hb) };
    let psi2_term = psi2 * h;
    Ok(BoundDecomposition {
        k_bound: k,
        psi1,
        psi2,
        delta_term,
        h_beta_term,
        psi1_term,
        psi2_term,
        c3: inp.c3,
        total: inp.c3 * (delta_term + h_beta_term + psi1_term + psi2_term),
    })
}

/// Grid minimizer of the bound at fixed `h`; ties go to the larger `Δ`.
pub fn balance_delta(gen: &GeneratorModel, h: f64, inp: &BoundInputs, delta_grid: &[f64]) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &d in delta_grid {
        if !(d > 0.0 && d < inp.maturity) {
            return Err(Error::Config(format!("delta grid value {d} outside (0, T)")));
        }
        let v = theorem_bound(gen, d, h, inp)?.total;
        best = match best {
            Some((bd, bv)) if v > bv || (v == bv && d < bd) => Some((bd, bv)),
            _ => Some((d, v)),
        };
    }
    best.ok_or_else(|| Error::Config("empty delta grid".into()))
}

/// Least-squares slope of `ln y` against `ln x` over the positive pairs.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `|Y(T−Δ) − ξ(T−Δ)|` against the deterministic oracle, for each `Δ`.
pub fn terminal_residuals(
    gen: &GeneratorModel,
    coeff: &CoefficientModel,
    maturity: f64,
    deltas: &[f64],
    spec: &ExpansionSpec,
) -> Result<Vec<f64>> {
    require_deterministic(coeff)?;
    let min_delta = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let nodes: Vec<f64> = deltas.iter().map(|d| maturity - d).collect();
    let oracle = oracle_deterministic(gen, coeff, maturity, min_delta / 100.0, 64, &nodes)?;
    deltas
        .iter()
        .zip(&oracle.values)
        .map(|(&d, &y)| {
            let eta = coeff.eta_at(maturity - d, 0.0);
            let xi = match spec.order {
                0 => expansion::terminal_order0(gen, d, &[eta])?[0],
                _ => expansion::terminal_order1_power(gen, coeff, maturity, d, &[0.0], &[eta], spec, 0)?[0],
            };
            Ok((y - xi).abs())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeltaRule {
    Fixed(f64),
    /// `Δ = c·h^γ`.
    Power { c: f64, gamma: f64 },
}

/// One `(h, Δ)` pair of a sweep; `h` is the requested step and is adjusted to
/// divide `T − Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepLevel {
    pub h: f64,
    pub delta: f64,
}

pub fn levels_from_rule(h_list: &[f64], rule: DeltaRule) -> Vec<SweepLevel> {
    h_list
        .iter()
        .map(|&h| SweepLevel {
            h,
            delta: match rule {
                DeltaRule::Fixed(d) => d,
                DeltaRule::Power { c, gamma } => c * h.powf(gamma),
            },
        })
        .collect()
}

pub fn levels_from_deltas(h: f64, deltas: &[f64]) -> Vec<SweepLevel> {
    deltas.iter().map(|&delta| SweepLevel { h, delta }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    pub estimator: CondExpEstimator,
    pub n_paths: usize,
    pub seed: u64,
    pub beta: f64,
    /// Oracle cutoff; `None` means `min Δ / 100`.
    pub cutoff_eps: Option<f64>,
    pub rk_steps: usize,
    /// Reference refinement for stochastic problems: `h_ref = h_min / 8`, `Δ_ref = Δ_min / 4`.
    pub reference_paths: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            estimator: CondExpEstimator::Passthrough,
            n_paths: 1,
            seed: 0,
            beta: 0.5,
            cutoff_eps: None,
            rk_steps: 64,
            reference_paths: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub h: f64,
    pub delta: f64,
    pub n_steps: usize,
    pub y0: f64,
    pub oracle_y0: f64,
    pub error_t0: f64,
    pub sup_error: f64,
    pub a_priori_ok: bool,
    pub phi_delta: f64,
    pub bound: BoundDecomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    pub slope_h: Option<f64>,
    pub slope_delta: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub c3: f64,
    pub calibration: String,
    pub oracle_method: String,
    pub oracle_error: f64,
    pub oracle_valid: bool,
    pub self_consistency: Option<f64>,
    /// Finer levels (all but the calibration row) stay below the bound.
    pub bound_holds: bool,
    pub warnings: Vec<String>,
}

/// Solves every level, measures errors against the oracle and evaluates the
/// calibrated bound. `C` comes from the oracle residual `|Y_t − ξ_t|/(T−t)^α`
/// (deterministic problems; 1 otherwise) and `C₃` from the coarsest level.
pub fn convergence_sweep(problem: &SingularProblem, levels: &[SweepLevel], opts: &SweepOptions) -> Result<ErrorReport> {
    if levels.is_empty() {
        return Err(Error::Config("sweep needs at least one level".into()));
    }
    let t_mat = problem.maturity;
    let deterministic = problem.coeff.is_deterministic();
    let mut warnings = Vec::new();
    for l in levels {
        if !(l.h > 0.0) || !(l.delta > 0.0 && l.delta < t_mat) {
            return Err(Error::Config(format!(
                "sweep level (h = {}, Δ = {}) outside h > 0, 0 < Δ < T",
                l.h, l.delta
            )));
        }
    }
    let alpha = match problem.gen.known_alpha(problem.expansion.order) {
        Some(a) => a,
        None => {
            warnings.push("no known α for this driver/order; using α = 0".into());
            0.0
        }
    };

    // Per-level solves in parallel.
    struct Solved {
        n: usize,
        h: f64,
        delta: f64,
        y: Vec<f64>,
        y0: f64,
        a_priori_ok: bool,
        phi_delta: f64,
    }
    let solved: Vec<Solved> = levels
        .par_iter()
        .map(|l| -> Result<Solved> {
            let n = (((t_mat - l.delta) / l.h).round() as usize).max(1);
            let cfg = SchemeConfig::new(l.delta, n, opts.estimator.clone());
            let sol = solve_singular(problem, &cfg, opts.n_paths, opts.seed)?;
            let h = sol.result.h;
            let phi_delta = if deterministic {
                0.0
            } else {
                // E|ξ̄_h − ξ̄_{h/2}| / h^β on shared noise.
                let fine = simulate(&problem.coeff, t_mat - l.delta, 2 * n, opts.n_paths, opts.seed)?;
                let xf = expansion::terminal_values(problem, l.delta, &fine)?;
                let diff: f64 = xf
                    .iter()
                    .zip(&sol.result.terminal)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / xf.len() as f64;
                diff / h.powf(opts.beta)
            };
            let means = (0..=n).map(|i| sol.result.mean_at(i)).collect();
            Ok(Solved {
                n,
                h,
                delta: l.delta,
                y: means,
                y0: sol.result.y0(),
                a_priori_ok: sol.result.a_priori_violation() <= 1e-9,
                phi_delta,
            })
        })
        .collect::<Result<_>>()?;

    // Oracle.
    let min_delta = solved.iter().map(|s| s.delta).fold(f64::INFINITY, f64::min);
    let cutoff = opts.cutoff_eps.unwrap_or(min_delta / 100.0);
    let mut self_consistency = None;
    let (oracle_method, oracle_error, errors): (String, f64, Vec<(f64, f64, f64)>) = if deterministic {
        let mut out = Vec::new();
        let mut err_est = 0.0f64;
        let mut method = String::new();
        for s in &solved {
            let nodes: Vec<f64> = (0..=s.n).map(|i| i as f64 * s.h).collect();
            let o = oracle_deterministic(&problem.gen, &problem.coeff, t_mat, cutoff.min(s.delta / 100.0), opts.rk_steps, &nodes)?;
            err_est = err_est.max(o.error_estimate);
            method = o.method.clone();
            let sup = o.values.iter().zip(&s.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            out.push((o.values[0], (o.values[0] - s.y0).abs(), sup));
        }
        (method, err_est, out)
    } else {
        let h_min = solved.iter().map(|s| s.h).fold(f64::INFINITY, f64::min);
        let fine_delta = min_delta / 4.0;
        let mut fine_n = (((t_mat - fine_delta) / (h_min / 8.0)).ceil() as usize).max(4);
        fine_n = fine_n.div_ceil(4) * 4;
        let paths = if opts.reference_paths > 0 { opts.reference_paths } else { opts.n_paths };
        let r = reference_stochastic(problem, &opts.estimator, fine_n, fine_delta, paths, opts.seed ^ 0xA5A5)?;
        self_consistency = Some(r.self_consistency);
        if r.warning {
            warnings.push(format!(
                "reference self-consistency ratio {:.3} > 1: reference levels are not converging",
                r.self_consistency
            ));
        }
        let y_ref = r.oracle.values[0];
        let out = solved.iter().map(|s| (y_ref, (y_ref - s.y0).abs(), (y_ref - s.y0).abs())).collect();
        (r.oracle.method, r.oracle.error_estimate, out)
    };

    // C from the oracle residual of the terminal approximation.
    let c = if deterministic && alpha > 0.0 {
        let taus: Vec<f64> = (0..24).map(|k| t_mat * 0.5f64.powf(k as f64 * 0.5)).filter(|&tau| tau < t_mat).collect();
        let res = terminal_residuals(&problem.gen, &problem.coeff, t_mat, &taus, &problem.expansion)?;
        taus.iter().zip(&res).map(|(tau, r)| r / tau.powf(alpha)).fold(0.0, f64::max)
    } else if deterministic {
        0.0
    } else {
        1.0
    };

    let base = |s: &Solved, c3: f64| {
        theorem_bound(
            &problem.gen,
            s.delta,
            s.h,
            &BoundInputs {
                maturity: t_mat,
                alpha,
                beta: opts.beta,
                c,
                c3,
                phi_delta: s.phi_delta,
                exact_coefficients: deterministic,
                eta_lower: problem.coeff.eta_lower(),
                eta_upper: problem.coeff.eta_upper(),
                lambda_max: problem.coeff.lambda_max(),
            },
        )
    };
    // Calibrate C₃ on the coarsest level (largest h, then largest Δ).
    let coarse = (0..solved.len())
        .max_by(|&a, &b| {
            solved[a]
                .h
                .total_cmp(&solved[b].h)
                .then(solved[a].delta.total_cmp(&solved[b].delta))
        })
        .expect("non-empty");
    let unit = base(&solved[coarse], 1.0)?;
    let c3 = (errors[coarse].1 / unit.total).max(1.0);

    let mut rows = Vec::with_capacity(solved.len());
    let mut bound_holds = true;
    for (k, s) in solved.iter().enumerate() {
        let bound = base(s, c3)?;
        if k != coarse && errors[k].1 > bound.total {
            bound_holds = false;
        }
        if !s.a_priori_ok {
            warnings.push(format!("a-priori bound violated at h = {}, Δ = {}", s.h, s.delta));
        }
        rows.push(ErrorRow {
            h: s.h,
            delta: s.delta,
            n_steps: s.n,
            y0: s.y0,
            oracle_y0: errors[k].0,
            error_t0: errors[k].1,
            sup_error: errors[k].2,
            a_priori_ok: s.a_priori_ok,
            phi_delta: s.phi_delta,
            bound,
        });
    }

    let min_err = rows.iter().map(|r| r.error_t0).filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
    let oracle_valid = !min_err.is_finite() || oracle_error < 0.01 * min_err;
    if !oracle_valid {
        warnings.push(format!(
            "oracle error {oracle_error:e} is not below 1% of the smallest measured error {min_err:e}"
        ));
    }
    let varies = |v: Vec<f64>| v.iter().any(|x| (x - v[0]).abs() > 1e-12 * v[0].abs());
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.error_t0).collect();
    let slope_h = if varies(hs.clone()) { fit_slope(&hs, &es) } else { None };
    let slope_delta = if varies(ds.clone()) { fit_slope(&ds, &es) } else { None };

    Ok(ErrorReport {
        rows,
        slope_h,
        slope_delta,
        alpha,
        beta: opts.beta,
        c,
        c3,
        calibration: format!(
            "C = sup |Y_t − ξ_t|/(T−t)^α from the {} ; C3 = max(1, error/bound) at h = {}, Δ = {}",
            if deterministic { "deterministic oracle" } else { "default (stochastic: C = 1)" },
            solved[coarse].h,
            solved[coarse].delta
        ),
        oracle_method,
        oracle_error,
        oracle_valid,
        self_consistency,
        bound_holds,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{EtaModel, LambdaModel};

    #[test]
    fn slope_of_power_law() {
        let xs = [0.1, 0.2, 0.4, 0.8];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((fit_slope(&xs, &ys).unwrap() - 1.7).abs() < 1e-12);
        assert_eq!(fit_slope(&[1.0], &[1.0]), None);
    }

    #[test]
    fn closed_form_oracle_values() {
        let coeff = CoefficientModel::constant(1.0, 0.0).unwrap();
        let o = oracle_deterministic(&GeneratorModel::power(3.0).unwrap(), &coeff, 1.0, 1e-3, 16, &[0.0]).unwrap();
        assert!((o.values[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let o = oracle_deterministic(&GeneratorModel::exponential(1.0).unwrap(), &coeff, 1.0, 1e-3, 16, &[0.0]).unwrap();
        assert!((o.values[0] - 0.458_675_145_387_081_9).abs() < 1e-12);
    }

    #[test]
    fn rk_oracle_matches_closed_form() {
        // Force the RK path with a negligible λ and compare to λ = 0.
        let gen = GeneratorModel::power(3.0).unwrap();
        let eta = EtaModel::linear(1.0, 1.0, 1.0);
        let exact = oracle_deterministic(
            &gen,
            &CoefficientModel::new(eta.clone(), LambdaModel::Constant(0.0)).unwrap(),
            1.0,
            1e-4,
            32,
            &[0.0, 0.5],
        )
        .unwrap();
        let rk = oracle_deterministic(
            &gen,
            &CoefficientModel::new(eta, LambdaModel::Constant(1e-300)).unwrap(),
            1.0,
            1e-6,
            32,
            &[0.0, 0.5],
        )
        .unwrap();
        for (a, b) in exact.values.iter().zip(&rk.values) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn bound_example_values() {
        let gen = GeneratorModel::power(3.0).unwrap();
        let inp = BoundInputs {
            maturity: 1.0,
            alpha: 0.5,
            beta: 0.5,
            c: 0.0,
            c3: 1.0,
            phi_delta: 0.0,
            exact_coefficients: true,
            eta_lower: 1.0,
            eta_upper: 1.0,
            lambda_max: 0.0,
        };
        let b = theorem_bound(&gen, 0.1, 0.01, &inp).unwrap();
        assert!((b.k_bound - 5f64.sqrt()).abs() < 1e-12);
        assert!((gen.f(b.k_bound) + 11.180_339_887_498_949).abs() < 1e-9);
        let b2 = theorem_bound(&gen, 0.1, 0.005, &inp).unwrap();
        assert!(b2.total < b.total);
    }
}
