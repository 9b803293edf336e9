//! Optimal liquidation: minimize `E ∫₀ᵀ (ζ_t |Ẋ_t|^p + λ_t |X_t|^p) dt` over
//! paths from `X_0 = x0` to `X_T = 0`.
//!
//! The value is `|x0|^p Y_0` for the singular BSDE with driver
//! `f(y) = −(p−1) y|y|^{q−1}` and `η = ζ^{q−1}`; the optimal state is
//! `X_t = x0 exp(−∫₀ᵗ ζ_u^{1−q} Y_u^{q−1} du)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{CoefficientModel, EtaModel, LambdaModel, PathEnsemble};
use crate::generator::{GeneratorKind, GeneratorModel};
use crate::scheme::SchemeResult;

#[derive(Debug, Clone)]
pub struct LiquidationProblem {
    pub x0: f64,
    pub p: f64,
    /// Price-impact process `ζ`.
    pub zeta: EtaModel,
    pub lambda: LambdaModel,
    pub maturity: f64,
}

impl LiquidationProblem {
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(Error::Config(format!("liquidation needs p > 1, got {}", self.p)));
        }
        if !self.x0.is_finite() || !(self.maturity > 0.0) {
            return Err(Error::Config("liquidation needs finite x0 and T > 0".into()));
        }
        Ok(())
    }
}

/// `(f = −(p−1) y|y|^{q−1}, η = ζ^{q−1})`.
pub fn map_to_bsde(prob: &LiquidationProblem) -> Result<(GeneratorModel, CoefficientModel)> {
    prob.validate()?;
    let q = prob.q();
    let gen = GeneratorModel::power_scaled(q, prob.p - 1.0)?;
    let coeff = CoefficientModel::new(prob.zeta.clone(), prob.lambda.clone())?.with_exponent(q - 1.0)?;
    Ok((gen, coeff))
}

/// Recovers `(p, ζ⋆, ζ★)` from a mapped pair.
pub fn unmap(gen: &GeneratorModel, coeff: &CoefficientModel) -> Result<(f64, f64, f64)> {
    match gen.kind() {
        GeneratorKind::Power { q, scale } => {
            let p = q / (q - 1.0);
            if (scale - (p - 1.0)).abs() > 1e-12 * p {
                return Err(Error::Config(format!("driver scale {scale} is not p − 1 = {}", p - 1.0)));
            }
            let inv = 1.0 / coeff.exponent;
            Ok((p, coeff.eta_lower().powf(inv), coeff.eta_upper().powf(inv)))
        }
        other => Err(Error::Config(format!("{} is not a liquidation driver", other.label()))),
    }
}

/// `|x0|^p · Y0`.
pub fn value(prob: &LiquidationProblem, y0: f64) -> f64 {
    prob.x0.abs().powf(prob.p) * y0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// `−Ẋ/X`.
    pub rate: Vec<f64>,
    pub x_dot: Vec<f64>,
    /// `Y` on the scheme grid, the expansion value on the extension.
    pub y: Vec<f64>,
    pub zeta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `|X(T−Δ)| / |x0|` (0 when `x0 = 0`).
    pub cutoff_fraction: f64,
    /// `|X(T)|`.
    pub terminal_residual: f64,
}

/// Optimal state along one path.
///
/// On the scheme grid the rate `ζ^{1−q} Ȳ^{q−1}` is integrated with the left
/// point rule. On `(T−Δ, T]` the rate of the expansion value with `η` frozen
/// at the cutoff is `1/((p−1)(q−1)τ) = 1/τ`, so `X` decays linearly to 0.
pub fn optimal_state(prob: &LiquidationProblem, ens: &PathEnsemble, res: &SchemeResult, path: usize) -> Result<Trajectory> {
    prob.validate()?;
    if path >= res.n_paths || ens.n_steps != res.n_steps {
        return Err(Error::Config(format!("path {path} or grid does not match the solve")));
    }
    let q = prob.q();
    let n = res.n_steps;
    let h = res.h;
    let np = res.n_paths;
    let mut traj = Trajectory {
        t: Vec::new(),
        x: Vec::new(),
        rate: Vec::new(),
        x_dot: Vec::new(),
        y: Vec::new(),
        zeta: Vec::new(),
        lambda: Vec::new(),
        cutoff_fraction: 0.0,
        terminal_residual: 0.0,
    };
    let mut x = prob.x0;
    for i in 0..=n {
        let eta = ens.eta[i * np + path];
        let y = res.y_bar[i * np + path];
        let rate = y.max(0.0).powf(q - 1.0) / eta;
        traj.t.push(i as f64 * h);
        traj.x.push(x);
        traj.rate.push(rate);
        traj.x_dot.push(-rate * x);
        traj.y.push(y);
        traj.zeta.push(eta.powf(1.0 / (q - 1.0)));
        traj.lambda.push(ens.lambda[i * np + path]);
        if i < n {
            x *= (-h * rate).exp();
        }
    }
    let cutoff_x = x;
    let t_cut = res.horizon;
    let delta = prob.maturity - t_cut;
    traj.cutoff_fraction = if prob.x0 == 0.0 { 0.0 } else { (cutoff_x / prob.x0).abs() };

    // Linear extension; the node at t_cut is already stored, so replace its
    // derivative with the extension slope (right derivative).
    let slope = -cutoff_x / delta;
    let eta_cut = ens.eta[n * np + path];
    let lam_cut = ens.lambda[n * np + path];
    let zeta_cut = eta_cut.powf(1.0 / (q - 1.0));
    if let Some(last) = traj.x_dot.last_mut() {
        *last = slope;
    }
    let m = ((delta / h).ceil() as usize).max(1);
    for k in 1..=m {
        let tau = delta * (1.0 - k as f64 / m as f64);
        let xk = cutoff_x * tau / delta;
        let y = if tau > 0.0 { (tau / eta_cut).powf(1.0 - prob.p) } else { f64::INFINITY };
        traj.t.push(prob.maturity - tau);
        traj.x.push(xk);
        traj.rate.push(if tau > 0.0 { 1.0 / tau } else { f64::INFINITY });
        traj.x_dot.push(slope);
        traj.y.push(y);
        traj.zeta.push(zeta_cut);
        traj.lambda.push(lam_cut);
    }
    traj.terminal_residual = traj.x.last().copied().unwrap_or(0.0).abs();
    Ok(traj)
}

fn trapezoid(t: &[f64], v: &[f64]) -> f64 {
    t.windows(2).zip(v.windows(2)).map(|(tt, vv)| 0.5 * (tt[1] - tt[0]) * (vv[0] + vv[1])).sum()
}

/// Trapezoidal `∫ (ζ|Ẋ|^p + λ|X|^p) dt` for one trajectory.
pub fn trajectory_cost(prob: &LiquidationProblem, traj: &Trajectory) -> f64 {
    let integrand: Vec<f64> = (0..traj.t.len())
        .map(|k| traj.zeta[k] * traj.x_dot[k].abs().powf(prob.p) + traj.lambda[k] * traj.x[k].abs().powf(prob.p))
        .collect();
    trapezoid(&traj.t, &integrand)
}

/// Mean cost over trajectories and its standard error.
pub fn cost_mc(prob: &LiquidationProblem, trajectories: &[Trajectory]) -> (f64, f64) {
    let costs: Vec<f64> = trajectories.par_iter().map(|tr| trajectory_cost(prob, tr)).collect();
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = if costs.len() > 1 {
        costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

/// Cost of a deterministic control `X(t)` with derivative `Ẋ(t)` under
/// deterministic `ζ`, `λ`, by the trapezoid rule on `n` intervals.
pub fn deterministic_control_cost(
    prob: &LiquidationProblem,
    x: impl Fn(f64) -> f64,
    x_dot: impl Fn(f64) -> f64,
    zeta: impl Fn(f64) -> f64,
    lambda: impl Fn(f64) -> f64,
    n: usize,
) -> f64 {
    let t: Vec<f64> = (0..=n).map(|k| prob.maturity * k as f64 / n as f64).collect();
    let v: Vec<f64> = t
        .iter()
        .map(|&s| zeta(s) * x_dot(s).abs().powf(prob.p) + lambda(s) * x(s).abs().powf(prob.p))
        .collect();
    trapezoid(&t, &v)
}
