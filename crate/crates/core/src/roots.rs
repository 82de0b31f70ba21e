//! Scalar root finding used by the special-function inverses and the
//! threshold solvers.

/// Outcome of a bracketed solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracketed {
    pub root: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs
/// (zero counts as either sign). Stops once the bracket is narrower than
/// `x_tol` or after `max_iter` halvings.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64, max_iter: usize) -> Bracketed
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let lo_negative = f_lo < 0.0;
    let mut iterations = 0;
    while iterations < max_iter && (hi - lo) > x_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        iterations += 1;
        if fm == 0.0 {
            return Bracketed {
                root: mid,
                lo: mid,
                hi: mid,
                iterations,
            };
        }
        if (fm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Bracketed {
        root: 0.5 * (lo + hi),
        lo,
        hi,
        iterations,
    }
}

/// Solves `f(x) = target` for a nondecreasing `f` on `[lo, hi]` with
/// `f(lo) <= target <= f(hi)`. Newton steps using `df` are taken while
/// they stay strictly inside the current bracket; otherwise the step falls
/// back to bisection.
pub fn newton_bisect_increasing<F, D>(
    mut f: F,
    mut df: D,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_iter: usize,
) -> Bracketed
where
    F: FnMut(f64) -> f64,
    D: FnMut(f64) -> f64,
{
    let mut x = 0.5 * (lo + hi);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let r = f(x) - target;
        if r == 0.0 {
            return Bracketed {
                root: x,
                lo: x,
                hi: x,
                iterations,
            };
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= abs_tol + rel_tol * x.abs() {
            break;
        }
        let slope = df(x);
        let step = r / slope;
        let newton = x - step;
        if slope.is_finite() && slope > 0.0 && newton > lo && newton < hi {
            x = newton;
            // Newton approaches from one side, so the bracket alone may never
            // shrink; a sub-tolerance step means convergence.
            if step.abs() <= abs_tol + rel_tol * x.abs() {
                break;
            }
        } else {
            x = 0.5 * (lo + hi);
        }
    }
    Bracketed {
        root: x,
        lo,
        hi,
        iterations,
    }
}
