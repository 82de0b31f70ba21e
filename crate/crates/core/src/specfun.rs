//! Scalar special functions behind the threshold formulas.
//!
//! Argument order follows the convention used throughout the crate:
//! `reg_inc_gamma(x, a)` is the regularized lower incomplete gamma
//! function P(a, x), and `gamma_plus(x, d)` is the CDF of (χ_d⁺)²/2, the
//! binomial mixture Σ_j C(d,j)/2^d · P(j/2, x).
//!
//! Everything is evaluated in `f64`. The incomplete gamma uses the power
//! series below `a + 1` and a Lentz continued fraction above it; inverses
//! are bracketed Newton iterations with a bisection fallback.

use std::f64::consts::{FRAC_2_SQRT_PI, LN_2, PI};

use crate::error::{Error, Result};
use crate::roots::newton_bisect_increasing;

const TINY: f64 = 1e-300;

/// Tolerances for series/continued-fraction evaluation and inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPolicy {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_iter: 200,
        }
    }
}

impl PrecisionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(format!(
                "precision policy needs positive tolerances and max_iter >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Iteration cap for series/continued fractions at shape `a`; both need
    /// O(√a) terms near the transition point x ≈ a.
    fn series_cap(&self, a: f64) -> usize {
        self.max_iter + (20.0 * a.sqrt()) as usize
    }
}

// ---------------------------------------------------------------------------
// Error function family
// ---------------------------------------------------------------------------

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < 2.5 {
        erf_series(ax)
    } else {
        1.0 - erfc_cf(ax)
    };
    v.copysign(x)
}

/// Complementary error function `1 − erf(x)`, accurate in the right tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 2.5 {
        1.0 - erf(x)
    } else {
        erfc_cf(x)
    }
}

// erf(x) = 2/√π · e^{−x²} Σ_n 2^n x^{2n+1} / (1·3·…·(2n+1)); all terms positive.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * f64::EPSILON * 0.25 || n > 500.0 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// erfc(x) = e^{−x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …)))), modified Lentz.
fn erfc_cf(x: f64) -> f64 {
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..2000 {
        let an = 0.5 * n as f64;
        d = x + an * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Inverse error function on (−1, 1).
pub fn erfinv(p: f64) -> Result<f64> {
    if !(p > -1.0 && p < 1.0) {
        return Err(Error::domain("erfinv", format!("argument must lie in (-1, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let ap = p.abs();
    let mut x = erfinv_initial(ap);
    // Halley iterations on erf(x) − p; the residual is formed from erfc in
    // the upper half so that it keeps full relative precision near p → 1.
    for _ in 0..6 {
        let r = if ap > 0.5 {
            (1.0 - ap) - erfc(x)
        } else {
            erf(x) - ap
        };
        let deriv = FRAC_2_SQRT_PI * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let ratio = r / deriv;
        let step = ratio / (1.0 + x * ratio);
        x -= step;
        if step.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    Ok(x.copysign(p))
}

// Single-precision rational start (M. Giles, "Approximating the erfinv function").
fn erfinv_initial(p: f64) -> f64 {
    let mut w = -((1.0 - p) * (1.0 + p)).ln();
    let q = if w < 5.0 {
        w -= 2.5;
        let mut q = 2.810_226_36e-08;
        for c in [
            3.432_739_39e-07,
            -3.523_387_7e-06,
            -4.391_506_54e-06,
            0.000_218_580_87,
            -0.001_253_725_03,
            -0.004_177_681_64,
            0.246_640_727,
            1.501_409_41,
        ] {
            q = c + q * w;
        }
        q
    } else {
        w = w.sqrt() - 3.0;
        let mut q = -0.000_200_214_257;
        for c in [
            0.000_100_950_558,
            0.001_349_343_22,
            -0.003_673_428_44,
            0.005_739_507_73,
            -0.007_622_461_3,
            0.009_438_870_47,
            1.001_674_06,
            2.832_976_82,
        ] {
            q = c + q * w;
        }
        q
    };
    q * p
}

// ---------------------------------------------------------------------------
// Gamma family
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Γ(a)/Γ(b), evaluated in log space.
pub fn gamma_ratio(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::domain("gamma_ratio", format!("arguments must be positive, got ({a}, {b})")));
    }
    if a == b {
        return Ok(1.0);
    }
    Ok((ln_gamma(a) - ln_gamma(b)).exp())
}

/// Mean of a chi variable with `d` degrees of freedom, √2·Γ((d+1)/2)/Γ(d/2).
pub fn expected_chi(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::domain("expected_chi", "d must be at least 1"));
    }
    let d = d as f64;
    Ok(std::f64::consts::SQRT_2 * gamma_ratio(0.5 * (d + 1.0), 0.5 * d)?)
}

fn check_gamma_args(op: &'static str, x: f64, a: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(op, format!("x must be >= 0, got {x}")));
    }
    if a.is_nan() || a < 0.0 {
        return Err(Error::domain(op, format!("a must be >= 0, got {a}")));
    }
    Ok(())
}

/// Regularized lower incomplete gamma P(a, x), with P(0, x) = 1.
pub fn reg_inc_gamma(x: f64, a: f64) -> Result<f64> {
    reg_inc_gamma_with(x, a, &PrecisionPolicy::default())
}

pub fn reg_inc_gamma_with(x: f64, a: f64, policy: &PrecisionPolicy) -> Result<f64> {
    check_gamma_args("reg_inc_gamma", x, a)?;
    Ok(lower_upper(x, a, policy).0)
}

/// Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x), computed
/// directly so that tails keep their relative precision.
pub fn reg_inc_gamma_upper(x: f64, a: f64) -> Result<f64> {
    check_gamma_args("reg_inc_gamma_upper", x, a)?;
    Ok(lower_upper(x, a, &PrecisionPolicy::default()).1)
}

/// (P, Q) pair. Arguments are assumed validated.
pub(crate) fn lower_upper(x: f64, a: f64, policy: &PrecisionPolicy) -> (f64, f64) {
    if a == 0.0 {
        return (1.0, 0.0);
    }
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let p = (series_sum(x, a, policy) + log_prefix).exp().min(1.0);
        (p, 1.0 - p)
    } else {
        let q = (log_prefix + continued_fraction(x, a, policy).ln()).exp().min(1.0);
        (1.0 - q, q)
    }
}

// ln of Σ_n x^n / (a (a+1) … (a+n)).
fn series_sum(x: f64, a: f64, policy: &PrecisionPolicy) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..policy.series_cap(a) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    sum.ln()
}

// Continued fraction for Q(a, x)·Γ(a)·e^{x}·x^{−a}, modified Lentz.
fn continued_fraction(x: f64, a: f64, policy: &PrecisionPolicy) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=policy.series_cap(a) {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    h
}

// d/dx P(a, x) = x^{a−1} e^{−x} / Γ(a).
fn gamma_density(x: f64, a: f64) -> f64 {
    if x <= 0.0 {
        return if a < 1.0 {
            f64::INFINITY
        } else if a == 1.0 {
            1.0
        } else {
            0.0
        };
    }
    ((a - 1.0) * x.ln() - x - ln_gamma(a)).exp()
}

/// Inverse of `reg_inc_gamma` in its first argument.
pub fn inv_reg_inc_gamma(p: f64, a: f64) -> Result<f64> {
    inv_reg_inc_gamma_with(p, a, &PrecisionPolicy::default())
}

pub fn inv_reg_inc_gamma_with(p: f64, a: f64, policy: &PrecisionPolicy) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain("inv_reg_inc_gamma", format!("p must lie in [0, 1), got {p}")));
    }
    if !(a > 0.0) {
        return Err(Error::domain("inv_reg_inc_gamma", format!("a must be positive, got {a}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let cdf = |x: f64| lower_upper(x, a, policy).0;
    let (lo, hi) = expand_bracket(&cdf, p, a.max(1.0));
    let sol = newton_bisect_increasing(
        cdf,
        |x| gamma_density(x, a),
        p,
        lo,
        hi,
        f64::MIN_POSITIVE,
        f64::EPSILON,
        policy.max_iter.max(200),
    );
    Ok(sol.root)
}

// Finds [lo, hi] with cdf(lo) <= p <= cdf(hi), starting from [0, start].
fn expand_bracket<F: Fn(f64) -> f64>(cdf: &F, p: f64, start: f64) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = start;
    while cdf(hi) < p && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// γ⁺: CDF of (χ_d⁺)²/2
// ---------------------------------------------------------------------------

/// Mixture weights of γ⁺(·, d): `weights[j] = C(d, j) / 2^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPlusSpec {
    d: usize,
    weights: Vec<f64>,
}

impl GammaPlusSpec {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::domain("gamma_plus", "block length d must be at least 1"));
        }
        Ok(Self {
            d,
            weights: binomial_weights(d),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Point mass of (χ_d⁺)² at zero, 2^(−d).
    pub fn atom(&self) -> f64 {
        self.weights[0]
    }

    /// γ⁺(x, d).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::domain("gamma_plus", format!("x must be >= 0, got {x}")));
        }
        Ok(self.cdf_unchecked(x))
    }

    pub(crate) fn cdf_unchecked(&self, x: f64) -> f64 {
        let policy = PrecisionPolicy::default();
        let mut acc = self.weights[0];
        for (j, w) in self.weights.iter().enumerate().skip(1) {
            acc += w * lower_upper(x, 0.5 * j as f64, &policy).0;
        }
        acc.min(1.0)
    }

    /// 1 − γ⁺(x, d), summed from the upper tails.
    pub fn sf(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::domain("gamma_plus", format!("x must be >= 0, got {x}")));
        }
        let policy = PrecisionPolicy::default();
        Ok(self
            .weights
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, w)| w * lower_upper(x, 0.5 * j as f64, &policy).1)
            .sum())
    }

    /// Density of the continuous part at x > 0.
    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, w)| w * gamma_density(x, 0.5 * j as f64))
            .sum()
    }

    /// γ⁺⁻¹(p, d); returns 0 for p at or below the point mass 2^(−d).
    pub fn inverse(&self, p: f64, policy: &PrecisionPolicy) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::domain("inv_gamma_plus", format!("p must lie in [0, 1), got {p}")));
        }
        if p <= self.atom() {
            return Ok(0.0);
        }
        let cdf = |x: f64| self.cdf_unchecked(x);
        let (lo, hi) = expand_bracket(&cdf, p, 0.5 * self.d as f64 + 1.0);
        let sol = newton_bisect_increasing(
            cdf,
            |x| self.density(x),
            p,
            lo,
            hi,
            f64::MIN_POSITIVE,
            f64::EPSILON,
            policy.max_iter.max(200),
        );
        Ok(sol.root)
    }
}

fn binomial_weights(d: usize) -> Vec<f64> {
    if d <= 30 {
        // Exact integers in f64 up to C(30, 15); dividing by 2^d is exact.
        let scale = 0.5f64.powi(d as i32);
        let mut c = 1.0_f64;
        let mut out = Vec::with_capacity(d + 1);
        for j in 0..=d {
            if j > 0 {
                c = c * (d - j + 1) as f64 / j as f64;
            }
            out.push(c * scale);
        }
        return out;
    }
    let ln_d_fact = ln_gamma(d as f64 + 1.0);
    let raw: Vec<f64> = (0..=d)
        .map(|j| {
            let ln_c = ln_d_fact - ln_gamma(j as f64 + 1.0) - ln_gamma((d - j) as f64 + 1.0);
            (ln_c - d as f64 * LN_2).exp()
        })
        .collect();
    // The exact weights sum to one; renormalizing removes log-gamma rounding.
    let total = kahan_sum(&raw);
    raw.into_iter().map(|w| w / total).collect()
}

fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// γ⁺(x, d) = Σ_{j=0}^{d} C(d,j)/2^d · P(j/2, x).
pub fn gamma_plus(x: f64, d: usize) -> Result<f64> {
    GammaPlusSpec::new(d)?.cdf(x)
}

/// Inverse of [`gamma_plus`] in x.
pub fn inv_gamma_plus(p: f64, d: usize) -> Result<f64> {
    GammaPlusSpec::new(d)?.inverse(p, &PrecisionPolicy::default())
}
