//! The driver `f` and everything derived from it.
//!
//! `G(x) = ∫ₓ^∞ dy / (−f(y))` is the blow-up time of the ODE `y' = f(y)`
//! started at `+∞`, and `φ = G⁻¹` is the corresponding profile: `φ' = f∘φ`,
//! `φ(0+) = ∞`. The ratios `κⁱ(x) = −x φ⁽ⁱ⁺¹⁾(x) / φ⁽ⁱ⁾(x)` and the rate
//! functions `ϖ`, `ϑ` control how fast the remainder in `Y = φ(A) − φ'(A)H`
//! vanishes near maturity.
//!
//! Power and exponential drivers carry closed forms. Any other driver goes
//! through the numeric pipeline: adaptive quadrature for `G`, safeguarded
//! Newton inversion for `φ`, and the chain rule for the derivatives of `φ`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{integrate_to_infinity, QuadOptions};
use crate::roots::{newton_bisect, RootOptions};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorKind {
    /// `f(y) = −scale · y|y|^{q−1}`; the textbook case has `scale = 1`.
    Power { q: f64, scale: f64 },
    /// `f(y) = −(e^{a y} − 1)`.
    Exponential { a: f64 },
    Custom { name: String },
}

impl GeneratorKind {
    pub fn label(&self) -> String {
        match self {
            GeneratorKind::Power { q, scale } if *scale == 1.0 => format!("power(q={q})"),
            GeneratorKind::Power { q, scale } => format!("power(q={q}, scale={scale})"),
            GeneratorKind::Exponential { a } => format!("exponential(a={a})"),
            GeneratorKind::Custom { name } => format!("custom({name})"),
        }
    }
}

/// `(φ, φ', φ'', φ''')` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiDerivs {
    pub phi: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[derive(Clone)]
pub struct GeneratorModel {
    kind: GeneratorKind,
    f: ScalarFn,
    f1: ScalarFn,
    f2: ScalarFn,
    closed_forms: bool,
    pub quad_tol: f64,
    pub root_tol: f64,
}

impl fmt::Debug for GeneratorModel {
    fn fmt(&self, fmt: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt.debug_struct("GeneratorModel")
            .field("kind", &self.kind)
            .field("closed_forms", &self.closed_forms)
            .field("quad_tol", &self.quad_tol)
            .field("root_tol", &self.root_tol)
            .finish()
    }
}

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;

impl GeneratorModel {
    pub fn power(q: f64) -> Result<Self> {
        Self::power_scaled(q, 1.0)
    }

    /// `f(y) = −scale · y|y|^{q−1}`.
    pub fn power_scaled(q: f64, scale: f64) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::Config(format!("power generator needs q > 1, got {q}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!(
                "power generator needs a positive scale, got {scale}"
            )));
        }
        Ok(GeneratorModel {
            kind: GeneratorKind::Power { q, scale },
            f: Arc::new(move |y: f64| -scale * y * y.abs().powf(q - 1.0)),
            f1: Arc::new(move |y: f64| -scale * q * y.abs().powf(q - 1.0)),
            f2: Arc::new(move |y: f64| -scale * q * (q - 1.0) * y.abs().powf(q - 2.0) * y.signum()),
            closed_forms: true,
            quad_tol: DEFAULT_QUAD_TOL,
            root_tol: DEFAULT_ROOT_TOL,
        })
    }

    pub fn exponential(a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Config(format!("exponential generator needs a > 0, got {a}")));
        }
        Ok(GeneratorModel {
            kind: GeneratorKind::Exponential { a },
            f: Arc::new(move |y: f64| -(a * y).exp_m1()),
            f1: Arc::new(move |y: f64| -a * (a * y).exp()),
            f2: Arc::new(move |y: f64| -a * a * (a * y).exp()),
            closed_forms: true,
            quad_tol: DEFAULT_QUAD_TOL,
            root_tol: DEFAULT_ROOT_TOL,
        })
    }

    /// A user driver with its first two derivatives. Its shape (f(0) = 0, non-increasing,
    /// concave) is checked on a sample grid; integrability of 1/f only when `G` is evaluated.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let model = GeneratorModel {
            kind: GeneratorKind::Custom { name: name.into() },
            f: Arc::new(f),
            f1: Arc::new(f1),
            f2: Arc::new(f2),
            closed_forms: false,
            quad_tol: DEFAULT_QUAD_TOL,
            root_tol: DEFAULT_ROOT_TOL,
        };
        model.check_shape()?;
        Ok(model)
    }

    /// Named drivers usable from configuration files.
    pub fn builtin_custom(name: &str) -> Result<Self> {
        match name {
            "neg-square" => Self::custom("neg-square", |y| -y * y, |y| -2.0 * y, |_| -2.0),
            "linear-cubic" => Self::custom(
                "linear-cubic",
                |y| -y - y * y * y,
                |y| -1.0 - 3.0 * y * y,
                |y| -6.0 * y,
            ),
            "cosh" => Self::custom("cosh", |y| 1.0 - y.cosh(), |y| -y.sinh(), |y| -y.cosh()),
            other => Err(Error::Config(format!(
                "unknown built-in custom generator `{other}` (expected neg-square, linear-cubic or cosh)"
            ))),
        }
    }

    /// The same driver with closed forms switched off, so every derived
    /// quantity goes through quadrature and root finding.
    pub fn numeric(&self) -> Self {
        let mut copy = self.clone();
        copy.closed_forms = false;
        copy.kind = GeneratorKind::Custom {
            name: format!("{} [numeric]", self.kind.label()),
        };
        copy
    }

    pub fn with_tolerances(mut self, quad_tol: f64, root_tol: f64) -> Self {
        self.quad_tol = quad_tol;
        self.root_tol = root_tol;
        self
    }

    pub fn kind(&self) -> &GeneratorKind {
        &self.kind
    }

    pub fn has_closed_forms(&self) -> bool {
        self.closed_forms && !matches!(self.kind, GeneratorKind::Custom { .. })
    }

    /// Hölder conjugate of `q` for power drivers.
    pub fn power_p(&self) -> Option<f64> {
        match self.kind {
            GeneratorKind::Power { q, .. } => Some(q / (q - 1.0)),
            _ => None,
        }
    }

    #[inline]
    pub fn f(&self, y: f64) -> f64 {
        (self.f)(y)
    }
    #[inline]
    pub fn df(&self, y: f64) -> f64 {
        (self.f1)(y)
    }
    #[inline]
    pub fn d2f(&self, y: f64) -> f64 {
        (self.f2)(y)
    }

    /// Shape check on a sample grid: `f(0) = 0`, non-increasing, concave on `[0, ∞)`.
    pub fn check_shape(&self) -> Result<()> {
        let f0 = self.f(0.0);
        if f0.abs() > 1e-12 {
            return Err(Error::Config(format!(
                "{}: f(0) = {f0:e}, expected 0",
                self.kind.label()
            )));
        }
        let grid: Vec<f64> = (0..=400).map(|k| 1e-3 * 1.035f64.powi(k) - 1e-3).collect();
        let mut prev = f0;
        for &y in grid.iter().skip(1) {
            let v = self.f(y);
            if !v.is_finite() {
                break;
            }
            if v > prev + 1e-12 * prev.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "{}: f increases near y = {y:e}",
                    self.kind.label()
                )));
            }
            if self.d2f(y) > 1e-12 * self.df(y).abs().max(1.0) {
                return Err(Error::Config(format!(
                    "{}: f'' > 0 near y = {y:e} (f must be concave on [0, ∞))",
                    self.kind.label()
                )));
            }
            prev = v;
        }
        Ok(())
    }

    fn quad_opts(&self) -> QuadOptions {
        QuadOptions {
            rel_tol: (self.quad_tol * 1e-3).max(1e-14),
            abs_tol: 0.0,
            max_intervals: 4000,
        }
    }

    fn check_positive(op: &'static str, x: f64) -> Result<()> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::domain(op, format!("argument must be positive and finite, got {x}")));
        }
        Ok(())
    }

    /// Tail test for `∫^∞ dy/(−f)`: `y/(−f(y))` has to keep decaying.
    fn check_tail(&self, x: f64) -> Result<()> {
        let base = x.max(1.0);
        let probe = |y: f64| {
            let v = -self.f(y);
            if v.is_nan() {
                f64::NAN
            } else {
                y / v
            }
        };
        let (y1, y2) = (base * 1e4, base * 1e8);
        let (r1, r2) = (probe(y1), probe(y2));
        if !(r1 >= 0.0) || !(r2 >= 0.0) {
            return Err(Error::DivergentIntegral {
                x,
                detail: format!("−f is not positive on the tail (y/(−f) = {r1:e}, {r2:e})"),
            });
        }
        if r1 > 0.0 && r2 > 0.5 * r1 {
            return Err(Error::DivergentIntegral {
                x,
                detail: format!("1/(−f) decays no faster than 1/y (ratio {:.3})", r2 / r1),
            });
        }
        Ok(())
    }

    /// `G(x) = ∫ₓ^∞ dy / (−f(y))`.
    pub fn g(&self, x: f64) -> Result<f64> {
        Self::check_positive("eval_G", x)?;
        if self.has_closed_forms() {
            return Ok(match self.kind {
                GeneratorKind::Power { q, scale } => x.powf(1.0 - q) / (scale * (q - 1.0)),
                GeneratorKind::Exponential { a } => exp_g(a, x),
                GeneratorKind::Custom { .. } => unreachable!(),
            });
        }
        self.check_tail(x)?;
        let r = integrate_to_infinity(|y| 1.0 / (-self.f(y)), x, x, self.quad_opts())?;
        if !(r.value > 0.0) || !r.value.is_finite() {
            return Err(Error::DivergentIntegral {
                x,
                detail: format!("quadrature returned {}", r.value),
            });
        }
        Ok(r.value)
    }

    /// `φ = G⁻¹`.
    pub fn phi(&self, x: f64) -> Result<f64> {
        Self::check_positive("eval_phi", x)?;
        if self.has_closed_forms() {
            return Ok(match self.kind {
                GeneratorKind::Power { q, scale } => {
                    let p = q / (q - 1.0);
                    (scale * (q - 1.0) * x).powf(1.0 - p)
                }
                GeneratorKind::Exponential { a } => exp_g(a, x),
                GeneratorKind::Custom { .. } => unreachable!(),
            });
        }
        self.invert_g(x)
    }

    fn invert_g(&self, x: f64) -> Result<f64> {
        // G is decreasing; find lo < hi with G(lo) >= x >= G(hi).
        let mut lo = 1.0;
        let mut hi = 1.0;
        let g1 = self.g(1.0)?;
        if g1 > x {
            loop {
                lo = hi;
                hi *= 4.0;
                if hi > 1e300 {
                    return Err(Error::NoConvergence {
                        op: "eval_phi (bracket)",
                        iterations: 0,
                        lo,
                        hi,
                    });
                }
                if self.g(hi)? <= x {
                    break;
                }
            }
        } else if g1 < x {
            loop {
                hi = lo;
                lo *= 0.25;
                if lo < 1e-300 {
                    return Err(Error::OutOfRange {
                        x,
                        sup: self.g(hi)?,
                    });
                }
                if self.g(lo)? >= x {
                    break;
                }
            }
        } else {
            return Ok(1.0);
        }
        let opts = RootOptions {
            residual_tol: 1e-15 * x,
            x_rel_tol: 4.0 * f64::EPSILON,
            max_iter: 200,
        };
        let eval = |y: f64| match self.g(y) {
            Ok(v) => (v - x, 1.0 / self.f(y)),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let root = newton_bisect("eval_phi", eval, lo, hi, (lo * hi).sqrt(), false, opts)?;
        if root.residual > self.root_tol * x {
            return Err(Error::NoConvergence {
                op: "eval_phi",
                iterations: root.iterations,
                lo,
                hi,
            });
        }
        Ok(root.x)
    }

    /// `φ` and its first three derivatives.
    pub fn phi_derivs(&self, x: f64) -> Result<PhiDerivs> {
        Self::check_positive("eval_phi_derivs", x)?;
        if self.has_closed_forms() {
            return Ok(match self.kind {
                GeneratorKind::Power { q, .. } => {
                    // κ⁰, κ¹, κ² are the constants p−1, p, p+1.
                    let p = q / (q - 1.0);
                    let phi = self.phi(x)?;
                    let d1 = -(p - 1.0) * phi / x;
                    let d2 = -p * d1 / x;
                    let d3 = -(p + 1.0) * d2 / x;
                    PhiDerivs { phi, d1, d2, d3 }
                }
                GeneratorKind::Exponential { a } => {
                    let em1 = (a * x).exp_m1();
                    let e = em1 + 1.0;
                    PhiDerivs {
                        phi: self.phi(x)?,
                        d1: -1.0 / em1,
                        d2: a * e / (em1 * em1),
                        d3: -a * a * e * (e + 1.0) / (em1 * em1 * em1),
                    }
                }
                GeneratorKind::Custom { .. } => unreachable!(),
            });
        }
        let phi = self.phi(x)?;
        let d1 = self.f(phi);
        let f1 = self.df(phi);
        let d2 = f1 * d1;
        let d3 = self.d2f(phi) * d1 * d1 + f1 * f1 * d1;
        Ok(PhiDerivs { phi, d1, d2, d3 })
    }

    /// `κⁱ(x) = −x φ⁽ⁱ⁺¹⁾(x) / φ⁽ⁱ⁾(x)` for `i ∈ {0, 1, 2}`.
    pub fn kappa(&self, i: usize, x: f64) -> Result<f64> {
        let d = self.phi_derivs(x)?;
        let (num, den) = match i {
            0 => (d.d1, d.phi),
            1 => (d.d2, d.d1),
            2 => (d.d3, d.d2),
            _ => return Err(Error::domain("eval_kappa", format!("index {i} not in {{0, 1, 2}}"))),
        };
        if den == 0.0 || !den.is_finite() {
            return Err(Error::domain(
                "eval_kappa",
                format!("φ^({i})({x:e}) = {den:e} cannot be divided by"),
            ));
        }
        Ok(-x * num / den)
    }

    /// All three ratios at once.
    pub fn kappas(&self, x: f64) -> Result<[f64; 3]> {
        let d = self.phi_derivs(x)?;
        Ok([-x * d.d1 / d.phi, -x * d.d2 / d.d1, -x * d.d3 / d.d2])
    }

    /// `ϖ(x) = ∫₀ˣ dz / (−φ'(z))`.
    ///
    /// The numeric route substitutes `y = φ(z)`, which turns the integral into
    /// `∫_{φ(x)}^∞ dy / f(y)²` and removes the endpoint at `z = 0`.
    pub fn varpi(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::domain("eval_varpi", format!("argument must be >= 0, got {x}")));
        }
        if self.has_closed_forms() {
            return Ok(match self.kind {
                GeneratorKind::Power { q, scale } => {
                    let p = q / (q - 1.0);
                    (scale * (q - 1.0)).powf(p) / scale * x.powf(p + 1.0) / (p + 1.0)
                }
                GeneratorKind::Exponential { a } => {
                    let ax = a * x;
                    if ax < 1e-3 {
                        // e^{ax} − 1 − ax without cancellation.
                        ax * ax * (0.5 + ax * (1.0 / 6.0 + ax * (1.0 / 24.0 + ax / 120.0))) / a
                    } else {
                        (ax.exp_m1() - ax) / a
                    }
                }
                GeneratorKind::Custom { .. } => unreachable!(),
            });
        }
        let start = self.phi(x)?;
        let r = integrate_to_infinity(
            |y| {
                let v = self.f(y);
                1.0 / (v * v)
            },
            start,
            start,
            self.quad_opts(),
        )?;
        Ok(r.value)
    }

    /// `ϑ(x) = max(ϖ(x), x²)`.
    pub fn vartheta(&self, x: f64) -> Result<f64> {
        Ok(self.varpi(x)?.max(x * x))
    }

    pub fn rate_functions(&self) -> RateFunctions<'_> {
        RateFunctions { gen: self }
    }

    /// Exponent `α` of `‖Y_t − ξ_t‖ ≤ C (T−t)^α` for the order-0 (or, for
    /// power drivers with `2 ≤ p < 3`, order-1) terminal approximation, when
    /// it is known for this generator class.
    pub fn known_alpha(&self, expansion_order: u8) -> Option<f64> {
        match (&self.kind, expansion_order) {
            (GeneratorKind::Power { q, .. }, 0) => {
                let p = q / (q - 1.0);
                (p < 2.0).then_some(2.0 - p)
            }
            (GeneratorKind::Power { q, scale }, 1) if *scale == 1.0 => {
                let p = q / (q - 1.0);
                (2.0..3.0).contains(&p).then_some(3.0 - p)
            }
            (GeneratorKind::Exponential { .. }, 0) => Some(1.0),
            _ => None,
        }
    }

    /// `Θ(x)`: solution of `Θ' = f(Θ)/η★ + λ★` with `Θ(0+) = ∞`, i.e. the
    /// inverse of `G̃(u) = ∫ᵤ^∞ dy / (−f(y)/η★ − λ★)`.
    pub fn theta_envelope(&self, x: f64, eta_max: f64, lambda_max: f64) -> Result<f64> {
        Self::check_positive("eval_theta_envelope", x)?;
        if !(eta_max > 0.0) || !(lambda_max >= 0.0) {
            return Err(Error::domain(
                "eval_theta_envelope",
                format!("need eta_max > 0 and lambda_max >= 0 (got {eta_max}, {lambda_max})"),
            ));
        }
        if lambda_max == 0.0 {
            return self.phi(x / eta_max);
        }
        let floor = self.denominator_zero(eta_max, lambda_max)?;
        let denom = |y: f64| -self.f(y) / eta_max - lambda_max;
        let g_tilde = |u: f64| -> Result<f64> {
            let scale = (u - floor).max(f64::MIN_POSITIVE);
            let r = integrate_to_infinity(|y| 1.0 / denom(y), u, scale, self.quad_opts())?;
            Ok(r.value)
        };
        self.check_tail(floor.max(1.0))?;

        // G̃ decreases from G̃(floor+) to 0 on (floor, ∞).
        let start = floor + floor.max(1.0);
        let mut lo = start;
        let mut hi = start;
        let g_start = g_tilde(start)?;
        if g_start > x {
            loop {
                lo = hi;
                hi = floor + 4.0 * (hi - floor);
                if hi > 1e300 {
                    return Err(Error::NoConvergence {
                        op: "eval_theta_envelope (bracket)",
                        iterations: 0,
                        lo,
                        hi,
                    });
                }
                if g_tilde(hi)? <= x {
                    break;
                }
            }
        } else if g_start < x {
            loop {
                hi = lo;
                lo = floor + 0.25 * (lo - floor);
                if lo - floor <= 1e-14 * floor.max(1.0) {
                    return Err(Error::domain(
                        "eval_theta_envelope",
                        format!(
                            "x = {x:e} is not below G̃ at the zero {floor:e} of −f/η★ − λ★ (G̃ = {:e} there)",
                            g_tilde(hi)?
                        ),
                    ));
                }
                if g_tilde(lo)? >= x {
                    break;
                }
            }
        } else {
            return Ok(start);
        }
        let eval = |u: f64| match g_tilde(u) {
            Ok(v) => (v - x, -1.0 / denom(u)),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let opts = RootOptions {
            residual_tol: 1e-15 * x,
            x_rel_tol: 4.0 * f64::EPSILON,
            max_iter: 200,
        };
        let guess = floor + ((lo - floor) * (hi - floor)).sqrt();
        let root = newton_bisect("eval_theta_envelope", eval, lo, hi, guess, false, opts)?;
        if root.residual > self.root_tol * x {
            return Err(Error::NoConvergence {
                op: "eval_theta_envelope",
                iterations: root.iterations,
                lo,
                hi,
            });
        }
        Ok(root.x)
    }

    /// The zero `y*` of `−f(y)/η★ − λ★` (where the envelope flattens out).
    fn denominator_zero(&self, eta_max: f64, lambda_max: f64) -> Result<f64> {
        let target = eta_max * lambda_max;
        let mut hi = 1.0;
        while -self.f(hi) < target {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::domain(
                    "eval_theta_envelope",
                    "−f never reaches η★λ★".to_string(),
                ));
            }
        }
        let eval = |y: f64| (-self.f(y) - target, -self.df(y));
        let root = newton_bisect("theta_floor", eval, 0.0, hi, hi, true, RootOptions::default())?;
        Ok(root.x)
    }

    /// Empirical evidence for A5 (bounded `κ²` near 0) and A6 (growth of
    /// `|f'(φ(x) ± ς φ'(x) ϑ(η♯x)) − f'(φ(x))|`) on a log-spaced grid in
    /// `(0, eps)` spanning six decades. This never certifies the assumptions.
    pub fn audit_assumptions(
        &self,
        eps: f64,
        varsigma: f64,
        eta_sharp: f64,
        grid_size: usize,
    ) -> Result<AuditReport> {
        if !(eps > 0.0) || !(varsigma > 0.0) || !(eta_sharp > 0.0) || grid_size == 0 {
            return Err(Error::domain(
                "audit_assumptions",
                format!(
                    "need eps, varsigma, eta_sharp > 0 and a non-empty grid (got {eps}, {varsigma}, {eta_sharp}, {grid_size})"
                ),
            ));
        }
        const DECADES: f64 = 6.0;
        let grid: Vec<f64> = (0..grid_size)
            .map(|k| eps * 10f64.powf(-DECADES * (k + 1) as f64 / grid_size as f64))
            .collect();

        let mut samples = Vec::with_capacity(grid.len());
        let mut offending = None;
        for &x in &grid {
            let d = self.phi_derivs(x)?;
            let kappa2 = -x * d.d3 / d.d2;
            let shift = varsigma * d.d1 * self.vartheta(eta_sharp * x)?;
            // shift <= 0, so the "+" argument is the one that can leave (0, ∞).
            let lower = d.phi + shift;
            if lower <= 0.0 {
                offending = Some(offending.map_or(x, |o: f64| o.max(x)));
                continue;
            }
            let base = self.df(d.phi);
            samples.push(AuditSample {
                x,
                kappa2,
                a6_plus: (self.df(lower) - base).abs(),
                a6_minus: (self.df(d.phi - shift) - base).abs(),
            });
        }
        if let Some(bad) = offending {
            let threshold = grid.iter().copied().filter(|&x| x < bad).fold(0.0, f64::max);
            return Err(Error::domain(
                "audit_assumptions",
                format!(
                    "φ(x) + ς φ'(x) ϑ(η♯x) <= 0 at x = {bad:e}; the argument stays positive only below x ≈ {threshold:e}"
                ),
            ));
        }
        Ok(AuditReport::from_samples(self, eps, varsigma, eta_sharp, samples))
    }
}

/// View of the rate functions `ϖ`, `ϑ` and the exponent `α` of a generator.
#[derive(Clone, Copy)]
pub struct RateFunctions<'a> {
    gen: &'a GeneratorModel,
}

impl RateFunctions<'_> {
    pub fn varpi(&self, x: f64) -> Result<f64> {
        self.gen.varpi(x)
    }
    pub fn vartheta(&self, x: f64) -> Result<f64> {
        self.gen.vartheta(x)
    }
    pub fn alpha(&self) -> Option<f64> {
        self.gen.known_alpha(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSample {
    pub x: f64,
    pub kappa2: f64,
    pub a6_plus: f64,
    pub a6_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub generator: String,
    pub eps: f64,
    pub varsigma: f64,
    pub eta_sharp: f64,
    pub samples: Vec<AuditSample>,
    pub kappa2_sup: f64,
    /// Closed-form constant value of `κ²`, when it has one.
    pub kappa2_constant: Option<f64>,
    pub a5_pass: bool,
    pub a6_sup: f64,
    /// Fitted `s` in an envelope `Ψ(x) ≈ c·x^{−s}` of the A6 difference.
    pub a6_envelope_exponent: f64,
    pub a6_blow_up: bool,
    pub a6_constant_psi: bool,
    /// Largest grid point below which the sampled quantities stay bounded.
    pub bounded_up_to: f64,
    pub summary: Vec<String>,
}

fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
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

impl AuditReport {
    fn from_samples(
        gen: &GeneratorModel,
        eps: f64,
        varsigma: f64,
        eta_sharp: f64,
        samples: Vec<AuditSample>,
    ) -> Self {
        let kappa2_sup = samples.iter().map(|s| s.kappa2).fold(f64::NEG_INFINITY, f64::max);
        let kappa2_constant = match (gen.has_closed_forms(), gen.kind()) {
            (true, GeneratorKind::Power { q, .. }) => Some(q / (q - 1.0) + 1.0),
            _ => None,
        };
        // κ² plateau: spread over the smallest decade of the grid.
        let smallest = samples.last().map(|s| s.x).unwrap_or(eps);
        let tail: Vec<f64> = samples
            .iter()
            .filter(|s| s.x <= smallest * 10.0)
            .map(|s| s.kappa2)
            .collect();
        let spread = if tail.is_empty() {
            0.0
        } else {
            let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
            (hi - lo) / hi.abs().max(1e-300)
        };
        let a5_pass = kappa2_sup.is_finite() && spread <= 0.05;

        let diffs: Vec<(f64, f64)> = samples.iter().map(|s| (s.x, s.a6_plus.max(s.a6_minus))).collect();
        let a6_sup = diffs.iter().map(|d| d.1).fold(0.0, f64::max);
        let exponent = log_log_slope(&diffs).map(|b| -b).unwrap_or(0.0);
        // Growth as x → 0 at least like 1/x is not integrable.
        let a6_blow_up = !a6_sup.is_finite() || exponent >= 0.95;
        let a6_constant_psi = a6_sup.is_finite() && exponent <= 0.05;

        let mut bounded_up_to = 0.0f64;
        for s in &samples {
            if s.kappa2.is_finite() && s.a6_plus.is_finite() && s.a6_minus.is_finite() {
                bounded_up_to = bounded_up_to.max(s.x);
            }
        }

        let mut summary = Vec::new();
        match (a5_pass, kappa2_constant) {
            (true, Some(c)) => summary.push(format!("A5: pass (constant κ²=p+1={c})")),
            (true, None) => summary.push(format!("A5: pass (κ² plateaus, sup {kappa2_sup:.6})")),
            (false, _) => summary.push(format!(
                "A5: fail (κ² varies by {:.1}% over the smallest decade)",
                100.0 * spread
            )),
        }
        if a6_constant_psi {
            summary.push(format!("A6: pass (constant Ψ, sup {a6_sup:.6e})"));
        } else if a6_blow_up {
            summary.push(format!("A6: fail (difference grows like x^-{exponent:.3})"));
        } else {
            summary.push(format!(
                "A6: pass (integrable envelope x^-{exponent:.3}, sup {a6_sup:.6e})"
            ));
        }

        AuditReport {
            generator: gen.kind().label(),
            eps,
            varsigma,
            eta_sharp,
            samples,
            kappa2_sup,
            kappa2_constant,
            a5_pass,
            a6_sup,
            a6_envelope_exponent: exponent,
            a6_blow_up,
            a6_constant_psi,
            bounded_up_to,
            summary,
        }
    }
}

/// `−ln(1 − e^{−ax})/a`, accurate at both ends.
fn exp_g(a: f64, x: f64) -> f64 {
    let ax = a * x;
    if ax > std::f64::consts::LN_2 {
        -(-(-ax).exp()).ln_1p() / a
    } else {
        -(-(-ax).exp_m1()).ln() / a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_q3_values() {
        let gen = GeneratorModel::power(3.0).unwrap();
        assert_relative_eq!(gen.g(1.0).unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(gen.phi(0.5).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(gen.phi_derivs(0.5).unwrap().d1, -1.0, max_relative = 1e-15);
        let k = gen.kappas(0.37).unwrap();
        assert_relative_eq!(k[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(k[1], 1.5, max_relative = 1e-14);
        assert_relative_eq!(k[2], 2.5, max_relative = 1e-14);
    }

    #[test]
    fn exponential_self_inverse_point() {
        let gen = GeneratorModel::exponential(1.0).unwrap();
        let l2 = std::f64::consts::LN_2;
        assert_relative_eq!(gen.g(l2).unwrap(), l2, max_relative = 1e-15);
        assert_relative_eq!(gen.phi(l2).unwrap(), l2, max_relative = 1e-15);
        assert_relative_eq!(gen.phi_derivs(l2).unwrap().d1, -1.0, max_relative = 1e-14);
    }

    #[test]
    fn custom_neg_square_g() {
        let gen = GeneratorModel::builtin_custom("neg-square").unwrap();
        assert_relative_eq!(gen.g(2.0).unwrap(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn divergent_tail_is_reported() {
        // f(y) = −y is not integrable at infinity: ∫ dy/y diverges.
        let gen = GeneratorModel::custom("linear", |y| -y, |_| -1.0, |_| 0.0).unwrap();
        assert!(matches!(gen.g(1.0), Err(Error::DivergentIntegral { .. })));
    }

    #[test]
    fn non_positive_arguments_are_domain_errors() {
        let gen = GeneratorModel::power(3.0).unwrap();
        assert!(matches!(gen.g(0.0), Err(Error::Domain { .. })));
        assert!(matches!(gen.phi(-1.0), Err(Error::Domain { .. })));
        assert!(matches!(gen.phi_derivs(0.0), Err(Error::Domain { .. })));
        assert!(matches!(gen.kappa(3, 1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn convex_driver_is_rejected() {
        let err = GeneratorModel::custom("bad", |y| y * y, |y| 2.0 * y, |_| 2.0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn varpi_at_zero() {
        for gen in [
            GeneratorModel::power(3.0).unwrap(),
            GeneratorModel::exponential(1.0).unwrap(),
            GeneratorModel::builtin_custom("linear-cubic").unwrap(),
        ] {
            assert_eq!(gen.varpi(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn theta_without_lambda_is_rescaled_phi() {
        let gen = GeneratorModel::power(3.0).unwrap();
        for &x in &[0.01, 0.1, 1.0] {
            assert_relative_eq!(gen.theta_envelope(x, 1.0, 0.0).unwrap(), gen.phi(x).unwrap());
            assert_relative_eq!(
                gen.theta_envelope(x, 2.0, 0.0).unwrap(),
                x.powf(-0.5),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn audit_power_constant_kappa() {
        let gen = GeneratorModel::power(3.0).unwrap();
        let report = gen.audit_assumptions(0.1, 1.0, 2.0, 25).unwrap();
        assert!(report.a5_pass);
        assert_eq!(report.kappa2_constant, Some(2.5));
        assert!(report.a6_constant_psi, "{:?}", report.summary);
        assert!(report.summary[0].starts_with("A5: pass (constant κ²=p+1"));
    }

    #[test]
    fn audit_single_point_grid() {
        let gen = GeneratorModel::exponential(1.0).unwrap();
        let report = gen.audit_assumptions(0.1, 1.0, 2.0, 1).unwrap();
        assert_eq!(report.samples.len(), 1);
    }

    #[test]
    fn audit_reports_threshold_when_argument_leaves_domain() {
        let gen = GeneratorModel::power(3.0).unwrap();
        // A huge ς pushes φ + ς φ' ϑ below zero for moderate x.
        let err = gen.audit_assumptions(1.0, 1e4, 2.0, 30).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }), "{err:?}");
    }
}

