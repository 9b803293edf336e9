//! Safeguarded Newton iteration for monotone scalar equations.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Stop once `|g(x)| <= residual_tol`.
    pub residual_tol: f64,
    /// Stop once the bracket (or Newton step) is below `x_rel_tol·|x|`.
    pub x_rel_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            residual_tol: 1e-12,
            x_rel_tol: 4.0 * f64::EPSILON,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `g(x) = 0` on `[lo, hi]` for a monotone `g` that changes sign on the
/// bracket. `eval` returns `(g(x), g'(x))`. Newton steps that leave the
/// current bracket are replaced by bisection.
pub fn newton_bisect<F>(
    op: &'static str,
    eval: F,
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    increasing: bool,
    opts: RootOptions,
) -> Result<Root>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = x0.clamp(lo, hi);
    for it in 1..=opts.max_iter {
        let (g, dg) = eval(x);
        if !g.is_finite() {
            return Err(Error::NoConvergence {
                op,
                iterations: it,
                lo,
                hi,
            });
        }
        if g.abs() <= opts.residual_tol {
            return Ok(Root {
                x,
                residual: g.abs(),
                iterations: it,
            });
        }
        // Shrink the bracket with the sign information.
        if (g < 0.0) == increasing {
            lo = x;
        } else {
            hi = x;
        }
        let scale = x.abs().max(f64::MIN_POSITIVE);
        if hi - lo <= opts.x_rel_tol * scale {
            return Ok(Root {
                x,
                residual: g.abs(),
                iterations: it,
            });
        }
        let newton = x - g / dg;
        let next = if dg != 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= opts.x_rel_tol * scale {
            let (g_next, _) = eval(next);
            return Ok(Root {
                x: next,
                residual: g_next.abs(),
                iterations: it + 1,
            });
        }
        x = next;
    }
    Err(Error::NoConvergence {
        op,
        iterations: opts.max_iter,
        lo,
        hi,
    })
}
