//! Asymptotic expansion `Y_t = φ(A_t) − φ'(A_t) H_t`, `A_t = (T−t)/η_t`.
//!
//! The leading term gives the order-0 terminal value `ξ_t = φ(A_t)`. For the
//! power driver with `2 ≤ p < 3` a first-order correction restores a positive
//! rate `3 − p`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{CoefficientModel, PathEnsemble};
use crate::generator::{GeneratorKind, GeneratorModel};
use crate::noise::mix64;
use crate::quad::{integrate, QuadOptions};
use crate::scheme::SingularProblem;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionSpec {
    pub order: u8,
    /// Inner paths per outer path for the order-1 expectation (stochastic η).
    pub inner_paths: usize,
    pub inner_steps: usize,
}

impl Default for ExpansionSpec {
    fn default() -> Self {
        ExpansionSpec {
            order: 0,
            inner_paths: 64,
            inner_steps: 32,
        }
    }
}

impl ExpansionSpec {
    pub fn order(order: u8) -> Self {
        ExpansionSpec {
            order,
            ..Default::default()
        }
    }
}

/// Order 1 needs the unit-scale power driver with `2 ≤ p < 3`.
pub fn check_order(gen: &GeneratorModel, spec: &ExpansionSpec) -> Result<()> {
    match spec.order {
        0 => Ok(()),
        1 => match gen.kind() {
            GeneratorKind::Power { q, scale } => {
                let p = q / (q - 1.0);
                if *scale != 1.0 {
                    return Err(Error::UnsupportedExpansion(format!(
                        "order 1 is derived for f(y) = −y|y|^(q−1); got scale {scale}"
                    )));
                }
                if !(2.0..3.0).contains(&p) {
                    return Err(Error::UnsupportedExpansion(format!(
                        "order 1 requires 2 <= p < 3, got p = {p}{}",
                        if p < 2.0 { " (order 0 already has rate 2 − p > 0)" } else { "" }
                    )));
                }
                if spec.inner_paths == 0 || spec.inner_steps == 0 {
                    return Err(Error::Config("order 1 needs inner_paths, inner_steps >= 1".into()));
                }
                Ok(())
            }
            other => Err(Error::UnsupportedExpansion(format!(
                "order 1 is only available for power drivers, not {}",
                other.label()
            ))),
        },
        o => Err(Error::UnsupportedExpansion(format!("order {o} (only 0 and 1 exist)"))),
    }
}

/// `ξ̄ = φ(Δ/η)` per path.
pub fn terminal_order0(gen: &GeneratorModel, delta: f64, eta_at_cutoff: &[f64]) -> Result<Vec<f64>> {
    eta_at_cutoff.iter().map(|&eta| gen.phi(delta / eta)).collect()
}

/// Leading term plus
/// `(p−1)^p Δ^{−p} E[∫_{T−Δ}^T (T−s) η_s^{p−1} (b^η_s/η_s + (p/2−1)(σ^η_s/η_s)²) ds]`,
/// started from each path's state at the cutoff.
#[allow(clippy::too_many_arguments)]
pub fn terminal_order1_power(
    gen: &GeneratorModel,
    coeff: &CoefficientModel,
    maturity: f64,
    delta: f64,
    state_at_cutoff: &[f64],
    eta_at_cutoff: &[f64],
    spec: &ExpansionSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    check_order(gen, &ExpansionSpec { order: 1, ..spec.clone() })?;
    let p = gen.power_p().expect("checked power driver");
    let t0 = maturity - delta;
    let integrand = |s: f64, state: f64| {
        let eta = coeff.eta_at(s, state);
        let (rb, rs) = coeff.ratios(s, state);
        (maturity - s) * eta.powf(p - 1.0) * (rb + (0.5 * p - 1.0) * rs * rs)
    };
    let scale = (p - 1.0).powf(p) * delta.powf(-p);
    let lead = terminal_order0(gen, delta, eta_at_cutoff)?;

    if coeff.eta.is_deterministic() {
        let r = integrate(|s| integrand(s, 0.0), t0, maturity, QuadOptions::relative(1e-12))?;
        return Ok(lead.into_iter().map(|l| l + scale * r.value).collect());
    }
    (0..lead.len())
        .into_par_iter()
        .map(|k| {
            let inner = coeff
                .inner_expectation(
                    t0,
                    state_at_cutoff[k],
                    maturity,
                    spec.inner_steps,
                    spec.inner_paths,
                    mix64(seed ^ mix64(k as u64 + 0x5eed)),
                    integrand,
                )
                .map_err(|e| Error::InnerEstimator(format!("outer path {k}: {e}")))?;
            Ok(lead[k] + scale * inner)
        })
        .collect()
}

/// Terminal values at `T − Δ` (the last node of `ens`) for `problem`.
pub fn terminal_values(problem: &SingularProblem, delta: f64, ens: &PathEnsemble) -> Result<Vec<f64>> {
    let n = ens.n_steps;
    match problem.expansion.order {
        0 => terminal_order0(&problem.gen, delta, ens.eta_row(n)),
        _ => terminal_order1_power(
            &problem.gen,
            &problem.coeff,
            problem.maturity,
            delta,
            ens.state_row(n),
            ens.eta_row(n),
            &problem.expansion,
            ens.seed,
        ),
    }
}

/// `H = (φ(A) − Y)/φ'(A)` with `A = (T−t)/η`.
pub fn extract_h(gen: &GeneratorModel, maturity: f64, t: f64, eta: f64, y: f64) -> Result<f64> {
    let d = gen.phi_derivs((maturity - t) / eta)?;
    Ok((d.phi - y) / d.d1)
}

/// `Y = φ(A) − φ'(A) H`.
pub fn reconstruct(gen: &GeneratorModel, maturity: f64, t: f64, eta: f64, h: f64) -> Result<f64> {
    let d = gen.phi_derivs((maturity - t) / eta)?;
    Ok(d.phi - d.d1 * h)
}

/// [`extract_h`] over step-major grids (`times[i]`, `[i * n_paths + path]`).
pub fn extract_h_grid(
    gen: &GeneratorModel,
    maturity: f64,
    times: &[f64],
    eta: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let np = y.len() / times.len();
    y.par_iter()
        .enumerate()
        .map(|(k, &v)| extract_h(gen, maturity, times[k / np], eta[k], v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionConstants {
    pub k: f64,
    /// `κ★ = sup κ¹`.
    pub kappa_star: f64,
    /// `sup κ²`, needed for `μ`.
    pub kappa2_sup: f64,
    pub mu_star: f64,
    /// `ζ⋆ = e^{−Tμ★}`.
    pub zeta_lower: f64,
    /// `ζ★ = e^{Tμ★}`.
    pub zeta_upper: f64,
    pub alpha: Option<f64>,
    pub eta_sharp: f64,
    pub drift_ratio_sup: f64,
    pub vol_ratio_sup: f64,
}

/// Sup of `κ^i` over a log grid of `A ∈ (0, a_max]` spanning ten decades.
/// Fails with `UnboundedKappa` when the smallest decade still varies by more
/// than 5%.
fn kappa_sup(gen: &GeneratorModel, i: usize, a_max: f64, n: usize) -> Result<f64> {
    let xs: Vec<f64> = (0..n).map(|k| a_max * 10f64.powf(-10.0 * k as f64 / (n - 1) as f64)).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| gen.kappa(i, x)).collect::<Result<_>>()?;
    let tail: Vec<f64> = xs
        .iter()
        .zip(&vals)
        .filter(|(x, _)| **x <= a_max * 1e-9)
        .map(|(_, v)| *v)
        .collect();
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    if !hi.is_finite() || hi - lo > 0.05 * hi.abs() {
        return Err(Error::UnboundedKappa(tail));
    }
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `κ★`, `μ★`, `ζ⋆`, `ζ★` and `K = ζ★η⋆[λ★ + ½‖b/η‖ + ½(κ★/2 + 1)‖σ/η‖²]`.
pub fn expansion_constants(
    gen: &GeneratorModel,
    coeff: &CoefficientModel,
    maturity: f64,
    n_samples: usize,
) -> Result<ExpansionConstants> {
    let a_max = maturity / coeff.eta_lower();
    let n = n_samples.max(20);
    let kappa_star = kappa_sup(gen, 1, a_max, n)?;
    let kappa2_sup = kappa_sup(gen, 2, a_max, n)?;
    let (sb, ss) = coeff.ratio_sups(maturity);
    // |κ²/2 − 1| ≤ max(1, κ²★/2 − 1) since κ² ≥ 0.
    let mu_star = kappa_star * sb + kappa_star * (0.5 * kappa2_sup - 1.0).abs().max(1.0) * ss * ss;
    let mu_star = if sb == 0.0 && ss == 0.0 { 0.0 } else { mu_star };
    let zeta_upper = (maturity * mu_star).exp();
    let zeta_lower = (-maturity * mu_star).exp();
    let k = zeta_upper
        * coeff.eta_lower()
        * (coeff.lambda_max() + 0.5 * sb + 0.5 * (0.5 * kappa_star + 1.0) * ss * ss);
    Ok(ExpansionConstants {
        k,
        kappa_star,
        kappa2_sup,
        mu_star,
        zeta_lower,
        zeta_upper,
        alpha: gen.known_alpha(0),
        eta_sharp: coeff.eta_sharp(),
        drift_ratio_sup: sb,
        vol_ratio_sup: ss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HBoundReport {
    pub window_start: f64,
    pub samples: usize,
    /// `sup |H_t| / ϑ((T−t)/η⋆)` over the window.
    pub sup_h_over_vartheta: f64,
    /// `sup |φ'(A_t) H_t| / (T−t)^α`, when `α` is known.
    pub sup_term_over_rate: Option<f64>,
    /// `2K/ζ⋆`.
    pub envelope: f64,
    pub slack: f64,
    /// Discretization contribution in the units of `sup_h_over_vartheta`.
    pub discretization: f64,
    pub identically_zero: bool,
    pub violation: bool,
}

/// Compares extracted `H` with the envelope `|H_t| ≤ (2K/ζ⋆) ϑ((T−t)/η⋆)` on
/// `t ∈ [window_start, last grid node]`. Report-only.
#[allow(clippy::too_many_arguments)]
pub fn verify_h_bound(
    gen: &GeneratorModel,
    consts: &ExpansionConstants,
    eta_lower: f64,
    maturity: f64,
    times: &[f64],
    eta: &[f64],
    h_values: &[f64],
    window_start: f64,
    discretization: f64,
    slack: f64,
) -> Result<HBoundReport> {
    let np = h_values.len() / times.len();
    let mut sup1 = 0.0f64;
    let mut sup2 = 0.0f64;
    let mut samples = 0;
    let mut all_zero = true;
    for (i, &t) in times.iter().enumerate() {
        if t < window_start {
            continue;
        }
        let tau = maturity - t;
        let vt = gen.vartheta(tau / eta_lower)?;
        for p in 0..np {
            let k = i * np + p;
            let h = h_values[k];
            all_zero &= h == 0.0;
            sup1 = sup1.max(h.abs() / vt);
            if let Some(alpha) = consts.alpha {
                let d1 = gen.phi_derivs(tau / eta[k])?.d1;
                sup2 = sup2.max((d1 * h).abs() / tau.powf(alpha));
            }
            samples += 1;
        }
    }
    let envelope = 2.0 * consts.k / consts.zeta_lower;
    Ok(HBoundReport {
        window_start,
        samples,
        sup_h_over_vartheta: sup1,
        sup_term_over_rate: consts.alpha.map(|_| sup2),
        envelope,
        slack,
        discretization,
        identically_zero: all_zero,
        violation: sup1 > slack * envelope + discretization,
    })
}
