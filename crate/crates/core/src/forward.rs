//! Coefficient processes `η` (with `a = 1/η`) and `λ`, simulated on a uniform
//! grid from counter-based noise.
//!
//! Every model is written as `η = g^e` for a base process `g` and an exponent
//! `e` (`e = 1` except for liquidation problems, where `η = ζ^{q−1}`).

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::ScalarFn;
use crate::noise::BrownianSource;

pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Base process `g` of `η = g^e`.
#[derive(Clone)]
pub enum EtaModel {
    /// `g(t)` deterministic with derivative `dg`, bounded in `[lower, upper]` on the horizon.
    Deterministic {
        g: ScalarFn,
        dg: ScalarFn,
        lower: f64,
        upper: f64,
        label: String,
    },
    /// `g = (upper−lower)/π · arctan(X) + (upper+lower)/2` with latent
    /// `dX = θ(m − X) dt + σ dW`, `X_0 = x0`.
    ArctanTransform {
        lower: f64,
        upper: f64,
        x0: f64,
        theta: f64,
        mean: f64,
        sigma: f64,
    },
    /// `dg = b(t, g) dt + σ(t, g) dW`, clipped to `[lower, upper]`.
    CustomIto {
        b: StateFn,
        sigma: StateFn,
        g0: f64,
        lower: f64,
        upper: f64,
        label: String,
    },
}

impl fmt::Debug for EtaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl EtaModel {
    pub fn constant(c: f64) -> Self {
        EtaModel::Deterministic {
            g: Arc::new(move |_| c),
            dg: Arc::new(|_| 0.0),
            lower: c,
            upper: c,
            label: format!("constant({c})"),
        }
    }

    /// `g(t) = c0 + c1·t` on `[0, horizon]`.
    pub fn linear(c0: f64, c1: f64, horizon: f64) -> Self {
        let end = c0 + c1 * horizon;
        EtaModel::Deterministic {
            g: Arc::new(move |t| c0 + c1 * t),
            dg: Arc::new(move |_| c1),
            lower: c0.min(end),
            upper: c0.max(end),
            label: format!("linear({c0} + {c1} t)"),
        }
    }

    pub fn label(&self) -> String {
        match self {
            EtaModel::Deterministic { label, .. } => format!("deterministic {label}"),
            EtaModel::ArctanTransform {
                lower,
                upper,
                x0,
                theta,
                mean,
                sigma,
            } => format!(
                "arctan(lower={lower}, upper={upper}, x0={x0}, theta={theta}, mean={mean}, sigma={sigma})"
            ),
            EtaModel::CustomIto { label, .. } => format!("ito {label}"),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, EtaModel::Deterministic { .. })
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            EtaModel::Deterministic { lower, upper, .. }
            | EtaModel::ArctanTransform { lower, upper, .. }
            | EtaModel::CustomIto { lower, upper, .. } => (*lower, *upper),
        }
    }

    fn initial_state(&self) -> f64 {
        match self {
            EtaModel::Deterministic { .. } => 0.0,
            EtaModel::ArctanTransform { x0, .. } => *x0,
            EtaModel::CustomIto { g0, .. } => *g0,
        }
    }

    /// Base value `g` from the state.
    fn base(&self, t: f64, state: f64) -> f64 {
        match self {
            EtaModel::Deterministic { g, .. } => g(t),
            EtaModel::ArctanTransform { lower, upper, .. } => {
                (upper - lower) / std::f64::consts::PI * state.atan() + 0.5 * (upper + lower)
            }
            EtaModel::CustomIto { .. } => state,
        }
    }

    /// Itô drift and volatility `(b_g, σ_g)` of the base process.
    fn base_dynamics(&self, t: f64, state: f64) -> (f64, f64) {
        match self {
            EtaModel::Deterministic { dg, .. } => (dg(t), 0.0),
            EtaModel::ArctanTransform {
                lower,
                upper,
                theta,
                mean,
                sigma,
                ..
            } => {
                let c = (upper - lower) / std::f64::consts::PI;
                let w = 1.0 + state * state;
                let drift = theta * (mean - state);
                (
                    c * (drift / w - sigma * sigma * state / (w * w)),
                    c * sigma / w,
                )
            }
            EtaModel::CustomIto { b, sigma, .. } => (b(t, state), sigma(t, state)),
        }
    }

    /// One Euler–Maruyama step of the state; returns `(state, clipped)`.
    fn step(&self, t: f64, state: f64, h: f64, dw: f64) -> (f64, bool) {
        match self {
            EtaModel::Deterministic { .. } => (0.0, false),
            EtaModel::ArctanTransform {
                theta, mean, sigma, ..
            } => (state + theta * (mean - state) * h + sigma * dw, false),
            EtaModel::CustomIto {
                b,
                sigma,
                lower,
                upper,
                ..
            } => {
                let next = state + b(t, state) * h + sigma(t, state) * dw;
                let clipped = next.clamp(*lower, *upper);
                (clipped, clipped != next)
            }
        }
    }
}

/// The running cost / intensity `λ ≥ 0`.
#[derive(Clone)]
pub enum LambdaModel {
    Constant(f64),
    Deterministic { f: ScalarFn, max: f64, label: String },
    /// `λ(t, η)`.
    StateFunction { f: StateFn, max: f64, label: String },
}

impl fmt::Debug for LambdaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl LambdaModel {
    pub fn label(&self) -> String {
        match self {
            LambdaModel::Constant(c) => format!("constant({c})"),
            LambdaModel::Deterministic { label, .. } => format!("deterministic {label}"),
            LambdaModel::StateFunction { label, .. } => format!("state {label}"),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            LambdaModel::Constant(c) => *c,
            LambdaModel::Deterministic { max, .. } | LambdaModel::StateFunction { max, .. } => *max,
        }
    }

    pub fn eval(&self, t: f64, eta: f64) -> f64 {
        match self {
            LambdaModel::Constant(c) => *c,
            LambdaModel::Deterministic { f, .. } => f(t),
            LambdaModel::StateFunction { f, .. } => f(t, eta),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, LambdaModel::StateFunction { .. })
    }
}

#[derive(Clone, Debug)]
pub struct CoefficientModel {
    pub eta: EtaModel,
    /// `η = g^exponent`.
    pub exponent: f64,
    pub lambda: LambdaModel,
}

impl CoefficientModel {
    pub fn new(eta: EtaModel, lambda: LambdaModel) -> Result<Self> {
        let model = CoefficientModel {
            eta,
            exponent: 1.0,
            lambda,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_exponent(mut self, exponent: f64) -> Result<Self> {
        self.exponent = exponent;
        self.validate()?;
        Ok(self)
    }

    /// `η ≡ c`, `λ ≡ l`.
    pub fn constant(c: f64, l: f64) -> Result<Self> {
        Self::new(EtaModel::constant(c), LambdaModel::Constant(l))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.eta.bounds();
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::Config(format!(
                "eta bounds must satisfy 0 < lower <= upper < ∞ (got {lo}, {hi})"
            )));
        }
        if !self.eta.is_deterministic() && !(hi > lo) {
            return Err(Error::Config(format!(
                "stochastic eta needs lower < upper (got {lo}, {hi})"
            )));
        }
        if !(self.exponent > 0.0) || !self.exponent.is_finite() {
            return Err(Error::Config(format!("eta exponent must be positive, got {}", self.exponent)));
        }
        let lm = self.lambda.max();
        if !(lm >= 0.0) || !lm.is_finite() {
            return Err(Error::Config(format!("lambda bound must be finite and >= 0, got {lm}")));
        }
        if let EtaModel::ArctanTransform { sigma, theta, .. } = &self.eta {
            if !(*sigma >= 0.0) || !(*theta >= 0.0) {
                return Err(Error::Config("arctan latent needs theta, sigma >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.eta.is_deterministic() && self.lambda.is_deterministic()
    }

    /// `η⋆`.
    pub fn eta_lower(&self) -> f64 {
        self.eta.bounds().0.powf(self.exponent)
    }
    /// `η★`.
    pub fn eta_upper(&self) -> f64 {
        self.eta.bounds().1.powf(self.exponent)
    }
    /// `η♯ = η★/η⋆`.
    pub fn eta_sharp(&self) -> f64 {
        self.eta_upper() / self.eta_lower()
    }
    /// `λ★`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda.max()
    }

    pub fn initial_state(&self) -> f64 {
        self.eta.initial_state()
    }

    pub fn eta_at(&self, t: f64, state: f64) -> f64 {
        let g = self.eta.base(t, state);
        if self.exponent == 1.0 {
            g
        } else {
            g.powf(self.exponent)
        }
    }

    /// `(b^η/η, σ^η/η)` at `(t, state)`.
    pub fn ratios(&self, t: f64, state: f64) -> (f64, f64) {
        let g = self.eta.base(t, state);
        let (bg, sg) = self.eta.base_dynamics(t, state);
        let e = self.exponent;
        let (rb, rs) = (bg / g, sg / g);
        (e * rb + 0.5 * e * (e - 1.0) * rs * rs, e * rs)
    }

    pub fn step(&self, t: f64, state: f64, h: f64, dw: f64) -> (f64, bool) {
        self.eta.step(t, state, h, dw)
    }

    /// `(‖b^η/η‖∞, ‖σ^η/η‖∞)` over `[0, horizon]`. Exact up to grid resolution
    /// for the deterministic and arctan models; sampled with a 1.1 safety
    /// factor for user Itô dynamics.
    pub fn ratio_sups(&self, horizon: f64) -> (f64, f64) {
        let mut sb = 0.0f64;
        let mut ss = 0.0f64;
        let mut visit = |t: f64, s: f64| {
            let (b, v) = self.ratios(t, s);
            sb = sb.max(b.abs());
            ss = ss.max(v.abs());
        };
        match &self.eta {
            EtaModel::Deterministic { .. } => {
                for k in 0..=10_000 {
                    visit(horizon * k as f64 / 10_000.0, 0.0);
                }
            }
            EtaModel::ArctanTransform { mean, .. } => {
                // Ratios decay like 1/X beyond the mean; a wide grid around it suffices.
                let span = 200.0 + mean.abs();
                for k in 0..=40_000 {
                    visit(0.0, mean - span + 2.0 * span * k as f64 / 40_000.0);
                }
            }
            EtaModel::CustomIto { lower, upper, .. } => {
                for i in 0..=100 {
                    let t = horizon * i as f64 / 100.0;
                    for j in 0..=200 {
                        visit(t, lower + (upper - lower) * j as f64 / 200.0);
                    }
                }
                sb *= 1.1;
                ss *= 1.1;
            }
        }
        (sb, ss)
    }

    pub fn describe(&self) -> String {
        let mut s = format!("eta: {}", self.eta.label());
        if self.exponent != 1.0 {
            s.push_str(&format!(" ^ {}", self.exponent));
        }
        s.push_str(&format!("; lambda: {}", self.lambda.label()));
        s
    }

    /// `E[∫_{t0}^{t1} w(s) · F(s, state_s) ds]` from `state0` at `t0`, by
    /// `n_inner` Euler paths with `n_steps` steps and left-point quadrature.
    /// Deterministic models need one path.
    #[allow(clippy::too_many_arguments)]
    pub fn inner_expectation<F>(
        &self,
        t0: f64,
        state0: f64,
        t1: f64,
        n_steps: usize,
        n_inner: usize,
        seed: u64,
        integrand: F,
    ) -> Result<f64>
    where
        F: Fn(f64, f64) -> f64,
    {
        if n_inner == 0 || n_steps == 0 {
            return Err(Error::InnerEstimator("need at least one inner path and step".into()));
        }
        let h = (t1 - t0) / n_steps as f64;
        let paths = if self.eta.is_deterministic() { 1 } else { n_inner };
        let source = BrownianSource::new(seed, t1 - t0, n_steps);
        let mut total = 0.0;
        let mut dw = vec![0.0; n_steps];
        for path in 0..paths {
            if !self.eta.is_deterministic() {
                source.fill(path as u64, &mut dw);
            }
            let mut state = state0;
            let mut acc = 0.0;
            for (k, &d) in dw.iter().enumerate() {
                let t = t0 + k as f64 * h;
                acc += integrand(t, state) * h;
                state = self.step(t, state, h, d).0;
            }
            if !acc.is_finite() {
                return Err(Error::InnerEstimator(format!(
                    "non-finite inner integral on inner path {path}"
                )));
            }
            total += acc;
        }
        Ok(total / paths as f64)
    }
}

/// Simulated coefficients on `t_i = i·h`, `i = 0..=n_steps`, stored step-major
/// (`[i * n_paths + path]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub h: f64,
    pub seed: u64,
    pub eta_lower: f64,
    pub lambda_max: f64,
    pub kinds: String,
    pub dw: Vec<f64>,
    pub state: Vec<f64>,
    pub eta: Vec<f64>,
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
    pub clip_events: usize,
}

impl PathEnsemble {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }

    fn row<'a>(&self, v: &'a [f64], i: usize) -> &'a [f64] {
        &v[i * self.n_paths..(i + 1) * self.n_paths]
    }

    pub fn eta_row(&self, i: usize) -> &[f64] {
        self.row(&self.eta, i)
    }
    pub fn a_row(&self, i: usize) -> &[f64] {
        self.row(&self.a, i)
    }
    pub fn lambda_row(&self, i: usize) -> &[f64] {
        self.row(&self.lambda, i)
    }
    pub fn state_row(&self, i: usize) -> &[f64] {
        self.row(&self.state, i)
    }
    /// Increments over `[t_i, t_{i+1}]`, `i < n_steps`.
    pub fn dw_row(&self, i: usize) -> &[f64] {
        self.row(&self.dw, i)
    }

    /// The first `n_steps` steps of this ensemble (same noise, shorter horizon).
    pub fn truncate(&self, n_steps: usize) -> Result<PathEnsemble> {
        if n_steps == 0 || n_steps > self.n_steps {
            return Err(Error::Config(format!(
                "cannot truncate {} steps to {n_steps}",
                self.n_steps
            )));
        }
        let nodes = (n_steps + 1) * self.n_paths;
        Ok(PathEnsemble {
            horizon: self.h * n_steps as f64,
            n_steps,
            n_paths: self.n_paths,
            h: self.h,
            seed: self.seed,
            eta_lower: self.eta_lower,
            lambda_max: self.lambda_max,
            kinds: self.kinds.clone(),
            dw: self.dw[..n_steps * self.n_paths].to_vec(),
            state: self.state[..nodes].to_vec(),
            eta: self.eta[..nodes].to_vec(),
            a: self.a[..nodes].to_vec(),
            lambda: self.lambda[..nodes].to_vec(),
            clip_events: self.clip_events,
        })
    }

    /// CSV with a `#`-prefixed header carrying grid, seed and model labels.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# horizon={:.17e} n_steps={} n_paths={} seed={} eta_lower={:.17e} lambda_max={:.17e} clip_events={}",
            self.horizon, self.n_steps, self.n_paths, self.seed, self.eta_lower, self.lambda_max, self.clip_events
        )?;
        writeln!(out, "# kinds={}", self.kinds)?;
        writeln!(out, "step,path,t,dw,state,eta,lambda")?;
        for i in 0..=self.n_steps {
            for p in 0..self.n_paths {
                let k = i * self.n_paths + p;
                let dw = if i < self.n_steps { self.dw[k] } else { 0.0 };
                writeln!(
                    out,
                    "{i},{p},{:.17e},{dw:.17e},{:.17e},{:.17e},{:.17e}",
                    self.time(i),
                    self.state[k],
                    self.eta[k],
                    self.lambda[k]
                )?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<PathEnsemble> {
        let bad = |msg: String| Error::Config(format!("ensemble csv: {msg}"));
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        let header = next()?;
        let mut fields = std::collections::HashMap::new();
        for item in header.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = item.split_once('=') {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<&String> { fields.get(k).ok_or_else(|| bad(format!("missing `{k}`"))) };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let horizon = num("horizon")?;
        let n_steps = int("n_steps")?;
        let n_paths = int("n_paths")?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("bad `seed`".into()))?;
        let eta_lower = num("eta_lower")?;
        let lambda_max = num("lambda_max")?;
        let clip_events = int("clip_events")?;
        let kinds = next()?.trim_start_matches("# kinds=").to_string();
        next()?; // column names

        let nodes = (n_steps + 1) * n_paths;
        let mut dw = vec![0.0; n_steps * n_paths];
        let mut state = vec![0.0; nodes];
        let mut eta = vec![0.0; nodes];
        let mut lambda = vec![0.0; nodes];
        for _ in 0..nodes {
            let line = next()?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(bad(format!("expected 7 columns, got {}", cols.len())));
            }
            let parse = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad number `{s}`"))) };
            let i: usize = cols[0].parse().map_err(|_| bad("bad step".into()))?;
            let p: usize = cols[1].parse().map_err(|_| bad("bad path".into()))?;
            if i > n_steps || p >= n_paths {
                return Err(bad(format!("index ({i}, {p}) out of range")));
            }
            let k = i * n_paths + p;
            if i < n_steps {
                dw[k] = parse(cols[3])?;
            }
            state[k] = parse(cols[4])?;
            eta[k] = parse(cols[5])?;
            lambda[k] = parse(cols[6])?;
        }
        let a = eta.iter().map(|e| 1.0 / e).collect();
        Ok(PathEnsemble {
            horizon,
            n_steps,
            n_paths,
            h: horizon / n_steps as f64,
            seed,
            eta_lower,
            lambda_max,
            kinds,
            dw,
            state,
            eta,
            a,
            lambda,
            clip_events,
        })
    }
}

/// Simulates `n_paths` paths of `(W, state, η, a, λ)` on `[0, horizon]`.
///
/// The increments come from a dyadic Brownian-bridge hierarchy: runs with
/// `n_steps` and `2·n_steps` on the same horizon and seed share their noise
/// (coarse increments are sums of fine ones).
pub fn simulate(
    coeff: &CoefficientModel,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    if n_steps == 0 || n_paths == 0 {
        return Err(Error::Config(format!(
            "need n_steps >= 1 and n_paths >= 1 (got {n_steps}, {n_paths})"
        )));
    }
    coeff.validate()?;
    let h = horizon / n_steps as f64;
    let source = BrownianSource::new(seed, horizon, n_steps);
    let deterministic = coeff.is_deterministic();
    let stochastic_eta = !coeff.eta.is_deterministic();

    struct PathData {
        dw: Vec<f64>,
        state: Vec<f64>,
        eta: Vec<f64>,
        lambda: Vec<f64>,
        clips: usize,
    }

    let simulate_path = |path: usize| -> PathData {
        let mut dw = vec![0.0; n_steps];
        if !deterministic || stochastic_eta {
            source.fill(path as u64, &mut dw);
        }
        let mut state = Vec::with_capacity(n_steps + 1);
        let mut eta = Vec::with_capacity(n_steps + 1);
        let mut lambda = Vec::with_capacity(n_steps + 1);
        let mut clips = 0;
        let mut s = coeff.initial_state();
        for i in 0..=n_steps {
            let t = i as f64 * h;
            let e = coeff.eta_at(t, s);
            state.push(s);
            eta.push(e);
            lambda.push(coeff.lambda.eval(t, e));
            if i < n_steps {
                let (next, clipped) = coeff.step(t, s, h, dw[i]);
                clips += clipped as usize;
                s = next;
            }
        }
        PathData {
            dw,
            state,
            eta,
            lambda,
            clips,
        }
    };

    let per_path: Vec<PathData> = if deterministic {
        // Every path is identical; simulate once and still draw noise per path.
        let base = simulate_path(0);
        (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut dw = vec![0.0; n_steps];
                source.fill(p as u64, &mut dw);
                PathData {
                    dw,
                    state: base.state.clone(),
                    eta: base.eta.clone(),
                    lambda: base.lambda.clone(),
                    clips: 0,
                }
            })
            .collect()
    } else {
        (0..n_paths).into_par_iter().map(simulate_path).collect()
    };

    let nodes = (n_steps + 1) * n_paths;
    let mut ens = PathEnsemble {
        horizon,
        n_steps,
        n_paths,
        h,
        seed,
        eta_lower: coeff.eta_lower(),
        lambda_max: coeff.lambda_max(),
        kinds: coeff.describe(),
        dw: vec![0.0; n_steps * n_paths],
        state: vec![0.0; nodes],
        eta: vec![0.0; nodes],
        a: vec![0.0; nodes],
        lambda: vec![0.0; nodes],
        clip_events: per_path.iter().map(|d| d.clips).sum(),
    };
    for (p, data) in per_path.iter().enumerate() {
        for i in 0..=n_steps {
            let k = i * n_paths + p;
            if i < n_steps {
                ens.dw[k] = data.dw[i];
            }
            ens.state[k] = data.state[i];
            ens.eta[k] = data.eta[i];
            ens.a[k] = 1.0 / data.eta[i];
            ens.lambda[k] = data.lambda[i];
        }
    }
    Ok(ens)
}

/// `(ā_i, λ̄_i)` clamped to `[0, 1/η⋆]` and `[0, λ★]`, step-major like the ensemble.
pub fn discrete_coefficients(ens: &PathEnsemble) -> (Vec<f64>, Vec<f64>) {
    let a_max = 1.0 / ens.eta_lower;
    let a = ens.a.iter().map(|v| v.clamp(0.0, a_max)).collect();
    let l = ens.lambda.iter().map(|v| v.clamp(0.0, ens.lambda_max)).collect();
    (a, l)
}
