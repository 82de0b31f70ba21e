//! Weak-threshold equations for ℓ1, ℓ2/ℓ1 and nonnegative ℓ2/ℓ1 recovery.
//!
//! All block variants share one structure. Let χ be the per-block
//! statistic of the zero blocks (χ_d for signed blocks, χ_d⁺ for
//! nonnegative ones) and let x = t²/2 be a threshold on χ²/2. Then
//!
//! * θ(t)  = β + (1 − β)·P(χ > t)
//! * Q₁(t) = (1 − β)·E[χ; χ > t]
//! * Q₂(t) = (1 − β)·E[χ²; χ > t] + βd
//!
//! The critical θ̂ solves Q₁/θ = t, and the minimal number of block
//! measurements per block is α_min = (Q₂ − Q₁²/θ̂)/d.
//!
//! The equation is solved in t rather than θ. R(t) = Q₁(t) − t·θ(t) has
//! derivative −θ(t) < 0, so its root is unique and plain bisection finds
//! it without ever inverting the mixture CDF. The θ-form residual (which
//! does go through γ⁺⁻¹) is evaluated afterwards as an independent check.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::bisect;
use crate::specfun::{erfinv, expected_chi, lower_upper, GammaPlusSpec, PrecisionPolicy};

/// Smallest α accepted by the solvers.
pub const ALPHA_FLOOR: f64 = 1e-6;
/// Largest β accepted by the solvers.
pub const BETA_CEIL: f64 = 1.0 - 1e-9;
/// Grid resolution of the sign scan on the ℓ1 residual.
pub const SCAN_RESOLUTION: f64 = 1e-4;
/// Bracket width at which the bisections stop.
pub const BISECTION_TOL: f64 = 1e-13;

const MAX_BISECTIONS: usize = 200;
// Above t = 64 every tail term underflows to zero.
const T_MAX: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdVariant {
    /// Plain ℓ1 (block length ignored).
    L1,
    /// ℓ2/ℓ1 on signed blocks.
    #[serde(rename = "block")]
    BlockL2L1,
    /// ℓ2/ℓ1 with nonnegativity on nonnegative blocks.
    #[serde(rename = "block-pos")]
    BlockL2L1Positive,
    /// d → ∞ closed form α = β(3 − β)/2 of the nonnegative variant.
    #[serde(rename = "asymptotic")]
    BlockPositiveAsymptotic,
}

impl ThresholdVariant {
    pub const ALL: [ThresholdVariant; 4] = [
        ThresholdVariant::L1,
        ThresholdVariant::BlockL2L1,
        ThresholdVariant::BlockL2L1Positive,
        ThresholdVariant::BlockPositiveAsymptotic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThresholdVariant::L1 => "l1",
            ThresholdVariant::BlockL2L1 => "block",
            ThresholdVariant::BlockL2L1Positive => "block-pos",
            ThresholdVariant::BlockPositiveAsymptotic => "asymptotic",
        }
    }

    /// Whether the block length changes the answer.
    pub fn uses_block_length(self) -> bool {
        matches!(self, ThresholdVariant::BlockL2L1 | ThresholdVariant::BlockL2L1Positive)
    }
}

impl fmt::Display for ThresholdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ThresholdVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(ThresholdVariant::L1),
            "block" | "l2l1" => Ok(ThresholdVariant::BlockL2L1),
            "block-pos" | "l2l1-pos" => Ok(ThresholdVariant::BlockL2L1Positive),
            "asymptotic" | "block-pos-asymptotic" => Ok(ThresholdVariant::BlockPositiveAsymptotic),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected l1, block, block-pos or asymptotic)"
            ))),
        }
    }
}

/// Critical θ̂ together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSolution {
    pub theta_hat: f64,
    /// LHS − RHS of the θ-form equation at `theta_hat`, re-evaluated
    /// through the inverse CDF.
    pub residual: f64,
    /// θ-values bracketing the root.
    pub bracket: (f64, f64),
    /// Threshold t on the per-block statistic at the root.
    pub threshold: f64,
    pub iterations: usize,
}

/// Tail quantities at a given threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailState {
    pub theta: f64,
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    dof: f64,
    mean: f64,
}

/// Law of the per-block statistic of the zero blocks.
#[derive(Debug, Clone)]
pub(crate) struct TailModel {
    d: usize,
    components: Vec<Component>,
    plus: Option<GammaPlusSpec>,
}

impl TailModel {
    pub(crate) fn new(d: usize, positive: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::domain("thresholds", "block length d must be at least 1"));
        }
        if positive {
            let spec = GammaPlusSpec::new(d)?;
            let components = spec
                .weights()
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &weight)| {
                    Ok(Component {
                        weight,
                        dof: j as f64,
                        mean: expected_chi(j)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Self {
                d,
                components,
                plus: Some(spec),
            })
        } else {
            Ok(Self {
                d,
                components: vec![Component {
                    weight: 1.0,
                    dof: d as f64,
                    mean: expected_chi(d)?,
                }],
                plus: None,
            })
        }
    }

    /// (P(χ > t), E[χ; χ > t], E[χ²; χ > t]) at x = t²/2.
    fn tails(&self, x: f64) -> (f64, f64, f64) {
        let policy = PrecisionPolicy::default();
        let mut sf = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        for c in &self.components {
            sf += c.weight * lower_upper(x, 0.5 * c.dof, &policy).1;
            first += c.weight * c.mean * lower_upper(x, 0.5 * (c.dof + 1.0), &policy).1;
            // 2Γ(j/2 + 1)/Γ(j/2) = j
            second += c.weight * c.dof * lower_upper(x, 0.5 * (c.dof + 2.0), &policy).1;
        }
        (sf, first, second)
    }

    /// Inverse of the CDF of χ²/2, with the point-mass convention.
    fn inverse_cdf(&self, p: f64) -> Result<f64> {
        let policy = PrecisionPolicy::default();
        match &self.plus {
            Some(spec) => spec.inverse(p, &policy),
            None => crate::specfun::inv_reg_inc_gamma_with(p, 0.5 * self.d as f64, &policy),
        }
    }

    pub(crate) fn state_at_threshold(&self, t: f64, beta: f64) -> TailState {
        let (sf, first, second) = self.tails(0.5 * t * t);
        TailState {
            theta: beta + (1.0 - beta) * sf,
            first: (1.0 - beta) * first,
            second: (1.0 - beta) * second + beta * self.d as f64,
        }
    }

    /// Tail quantities at a prescribed θ ∈ [β, 1], going through the
    /// inverse CDF. Returns the threshold t as well.
    pub(crate) fn state_at_theta(&self, theta: f64, beta: f64) -> Result<(f64, TailState)> {
        let p = (1.0 - theta) / (1.0 - beta);
        if p >= 1.0 {
            // Empty tail: t → ∞.
            return Ok((
                f64::INFINITY,
                TailState {
                    theta,
                    first: 0.0,
                    second: beta * self.d as f64,
                },
            ));
        }
        let x = self.inverse_cdf(p.max(0.0))?;
        let t = (2.0 * x).sqrt();
        let mut state = self.state_at_threshold(t, beta);
        state.theta = theta;
        Ok((t, state))
    }

    #[cfg(test)]
    pub(crate) fn atom(&self) -> f64 {
        self.plus.as_ref().map_or(0.0, GammaPlusSpec::atom)
    }
}

fn check_beta(op: &'static str, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(op, format!("beta must lie in [0, 1), got {beta}")));
    }
    Ok(beta.min(BETA_CEIL))
}

fn check_alpha(op: &'static str, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(op, format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(alpha.max(ALPHA_FLOOR))
}

/// Left-hand side of the ℓ1 weak-threshold equation
/// (1−β)·√(2/π)·e^{−u²}/α − √2·u with u = erfinv((1−α)/(1−β)).
///
/// At β = α the argument of erfinv is 1 and the residual is −∞.
pub fn l1_equation_residual(alpha: f64, beta: f64) -> Result<f64> {
    let alpha = check_alpha("l1_equation_residual", alpha)?;
    let beta = check_beta("l1_equation_residual", beta)?;
    let ratio = (1.0 - alpha) / (1.0 - beta);
    if ratio > 1.0 {
        return Err(Error::domain(
            "l1_equation_residual",
            format!("(1-alpha)/(1-beta) = {ratio} exceeds 1 (beta {beta} > alpha {alpha})"),
        ));
    }
    if ratio == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let u = erfinv(ratio)?;
    Ok((1.0 - beta) * (2.0 / std::f64::consts::PI).sqrt() * (-u * u).exp() / alpha
        - std::f64::consts::SQRT_2 * u)
}

/// θ-form residual Q₁(θ)/θ − t(θ) for the block variants, where t(θ)
/// comes from inverting the tail law at (1−θ)/(1−β).
pub fn theta_residual(theta: f64, beta: f64, d: usize, positive: bool) -> Result<f64> {
    let beta = check_beta("theta_residual", beta)?;
    if !(theta >= beta && theta <= 1.0) {
        return Err(Error::domain(
            "theta_residual",
            format!("theta must lie in [beta, 1] = [{beta}, 1], got {theta}"),
        ));
    }
    if theta == 0.0 {
        return Ok(0.0);
    }
    let model = TailModel::new(d, positive)?;
    let (t, state) = model.state_at_theta(theta, beta)?;
    if t.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(state.first / theta - t)
}

/// Solves for the critical θ̂ of the block variants. `positive` selects
/// the nonnegative (χ_d⁺) law, otherwise the signed (χ_d) law is used.
pub fn theta_hat(beta: f64, d: usize, positive: bool) -> Result<ThetaSolution> {
    let beta = check_beta("theta_hat", beta)?;
    let model = TailModel::new(d, positive)?;
    let (sol, _) = solve_theta(&model, beta)?;
    Ok(sol)
}

const ULP_POLISH_STEPS: usize = 64;

fn solve_theta(model: &TailModel, beta: f64) -> Result<(ThetaSolution, TailState)> {
    if beta == 0.0 {
        // Q₁ > t·θ for every finite t: the root sits at t = ∞, θ̂ = 0.
        let state = TailState {
            theta: 0.0,
            first: 0.0,
            second: 0.0,
        };
        let sol = ThetaSolution {
            theta_hat: 0.0,
            residual: 0.0,
            bracket: (0.0, 0.0),
            threshold: f64::INFINITY,
            iterations: 0,
        };
        return Ok((sol, state));
    }
    let r = |t: f64| {
        let s = model.state_at_threshold(t, beta);
        s.first - t * s.theta
    };
    let mut hi = 1.0;
    while r(hi) > 0.0 {
        hi *= 2.0;
        if hi > T_MAX {
            return Err(Error::no_root(
                "theta_hat",
                format!("no sign change of the defining equation on [beta, 1] for beta = {beta}"),
            ));
        }
    }
    let b = bisect(r, 0.0, hi, BISECTION_TOL * hi, MAX_BISECTIONS);
    let t = b.root;
    let state = model.state_at_threshold(t, beta);
    let eval = |theta: f64| -> Result<f64> {
        let (t_inv, at_theta) = model.state_at_theta(theta, beta)?;
        Ok(if t_inv.is_finite() {
            at_theta.first / theta - t_inv
        } else {
            f64::NEG_INFINITY
        })
    };
    // Close to θ = 1 the equation in θ is badly conditioned and the θ of the
    // t-root can sit a few ulps off the best float, so walk toward the sign
    // change and keep the smallest residual.
    let mut theta = state.theta;
    let mut residual = eval(theta)?;
    if residual.is_finite() && residual != 0.0 {
        let up = residual < 0.0;
        let mut cur = theta;
        for _ in 0..ULP_POLISH_STEPS {
            let next = if up { f64::from_bits(cur.to_bits() + 1) } else { f64::from_bits(cur.to_bits() - 1) };
            if !(next >= beta && next <= 1.0) {
                break;
            }
            let rn = eval(next)?;
            if rn.abs() >= residual.abs() {
                break;
            }
            theta = next;
            residual = rn;
            cur = next;
        }
    }
    let th_lo = model.state_at_threshold(b.hi, beta).theta;
    let th_hi = model.state_at_threshold(b.lo, beta).theta;
    Ok((
        ThetaSolution {
            theta_hat: theta,
            residual,
            bracket: (th_lo, th_hi),
            threshold: t,
            iterations: b.iterations,
        },
        state,
    ))
}

/// α_min together with the θ̂ solution and tail sums that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaMin {
    pub alpha_min: f64,
    pub theta: ThetaSolution,
    pub tail: TailState,
}

/// Minimal α = m/n for which the block program succeeds at sparsity β.
pub fn alpha_min(beta: f64, d: usize, positive: bool) -> Result<f64> {
    Ok(alpha_min_detail(beta, d, positive)?.alpha_min)
}

pub fn alpha_min_detail(beta: f64, d: usize, positive: bool) -> Result<AlphaMin> {
    let beta = check_beta("alpha_min", beta)?;
    let model = TailModel::new(d, positive)?;
    alpha_min_with(&model, beta)
}

fn alpha_min_with(model: &TailModel, beta: f64) -> Result<AlphaMin> {
    let (theta, tail) = solve_theta(model, beta)?;
    let alpha_min = if beta == 0.0 {
        0.0
    } else {
        (tail.second - tail.first * tail.first / tail.theta) / model.d as f64
    };
    Ok(AlphaMin {
        alpha_min,
        theta,
        tail,
    })
}

/// β(3 − β)/2.
pub fn asymptotic_alpha(beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain("asymptotic_alpha", format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(beta * (3.0 - beta) / 2.0)
}

/// Inverse of [`asymptotic_alpha`]: (3 − √(9 − 8α))/2.
pub fn asymptotic_beta(alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain("asymptotic_beta", format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok((3.0 - (9.0 - 8.0 * alpha).sqrt()) / 2.0)
}

/// One point of a threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub beta_w: f64,
    pub theta_hat: f64,
    /// Residual of the defining equation at `beta_w` (α_min(β_w) − α for
    /// the block variants, the ℓ1 residual for ℓ1, 0 for the closed form).
    pub residual: f64,
}

/// Weak threshold β_w at a given α.
pub fn weak_beta(alpha: f64, d: usize, variant: ThresholdVariant) -> Result<f64> {
    Ok(weak_point(alpha, d, variant)?.beta_w)
}

/// Weak threshold at a given α, with the associated θ̂ and residual.
pub fn weak_point(alpha: f64, d: usize, variant: ThresholdVariant) -> Result<CurvePoint> {
    let input_alpha = alpha;
    let alpha = check_alpha("weak_beta", alpha)?;
    let mut point = match variant {
        ThresholdVariant::L1 => l1_weak_point(alpha)?,
        ThresholdVariant::BlockPositiveAsymptotic => CurvePoint {
            alpha,
            beta_w: asymptotic_beta(alpha)?,
            theta_hat: 1.0,
            residual: 0.0,
        },
        ThresholdVariant::BlockL2L1 | ThresholdVariant::BlockL2L1Positive => {
            let model = TailModel::new(d, variant == ThresholdVariant::BlockL2L1Positive)?;
            block_weak_point(&model, alpha)?
        }
    };
    point.alpha = input_alpha;
    Ok(point)
}

fn block_weak_point(model: &TailModel, alpha: f64) -> Result<CurvePoint> {
    let hi = alpha.min(BETA_CEIL);
    let top = alpha_min_with(model, hi)?;
    if top.alpha_min <= alpha {
        // α_min stays below α up to the clamp: β_w is the right end.
        return Ok(CurvePoint {
            alpha,
            beta_w: hi,
            theta_hat: top.theta.theta_hat,
            residual: top.alpha_min - alpha,
        });
    }
    let mut failure = None;
    let b = bisect(
        |beta| match alpha_min_with(model, beta) {
            Ok(a) => a.alpha_min - alpha,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        hi,
        BISECTION_TOL,
        MAX_BISECTIONS,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let beta_w = b.lo;
    let at = alpha_min_with(model, beta_w)?;
    Ok(CurvePoint {
        alpha,
        beta_w,
        theta_hat: at.theta.theta_hat,
        residual: at.alpha_min - alpha,
    })
}

fn l1_weak_point(alpha: f64) -> Result<CurvePoint> {
    let g = |beta: f64| l1_equation_residual(alpha, beta);
    // Scan for the first sign change, then bisect inside that cell.
    let steps = (alpha / SCAN_RESOLUTION).ceil() as usize;
    let mut prev_beta = 0.0;
    let mut prev = g(0.0)?;
    if prev <= 0.0 {
        return Err(Error::no_root(
            "weak_beta",
            format!("l1 residual is not positive at beta = 0 for alpha = {alpha}"),
        ));
    }
    for i in 1..=steps {
        let beta = (i as f64 * SCAN_RESOLUTION).min(alpha).min(BETA_CEIL);
        let v = g(beta)?;
        if v <= 0.0 {
            let b = bisect(|x| g(x).unwrap_or(f64::NEG_INFINITY), prev_beta, beta, BISECTION_TOL, MAX_BISECTIONS);
            let beta_w = b.lo;
            return Ok(CurvePoint {
                alpha,
                beta_w,
                theta_hat: alpha,
                residual: g(beta_w)?,
            });
        }
        prev_beta = beta;
        prev = v;
    }
    // Positive up to β = α: only happens at α = 1, where β_w = 1.
    Ok(CurvePoint {
        alpha,
        beta_w: prev_beta,
        theta_hat: alpha,
        residual: prev,
    })
}

/// Solver settings recorded alongside a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub bisection_tol: f64,
    pub max_bisections: usize,
    pub l1_scan_resolution: f64,
    pub alpha_floor: f64,
    pub beta_ceil: f64,
}

impl Default for SolverMeta {
    fn default() -> Self {
        Self {
            bisection_tol: BISECTION_TOL,
            max_bisections: MAX_BISECTIONS,
            l1_scan_resolution: SCAN_RESOLUTION,
            alpha_floor: ALPHA_FLOOR,
            beta_ceil: BETA_CEIL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub alpha: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub variant: ThresholdVariant,
    pub d: usize,
    pub points: Vec<CurvePoint>,
    pub failures: Vec<PointFailure>,
    pub solver_meta: SolverMeta,
}

impl ThresholdCurve {
    /// CSV with columns variant, d, alpha, beta_w, theta_hat, residual.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,d,alpha,beta_w,theta_hat,residual\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.variant, self.d, p.alpha, p.beta_w, p.theta_hat, p.residual
            ));
        }
        out
    }
}

/// Evaluates [`weak_point`] at every α. Points are computed in parallel;
/// the output order (and every value) matches a sequential evaluation.
pub fn threshold_curve(alphas: &[f64], d: usize, variant: ThresholdVariant) -> Result<ThresholdCurve> {
    if d == 0 {
        return Err(Error::domain("threshold_curve", "block length d must be at least 1"));
    }
    for w in alphas.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::domain("threshold_curve", "alphas must be strictly increasing"));
        }
    }
    if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::domain("threshold_curve", format!("alpha {bad} outside (0, 1]")));
    }
    let results: Vec<Result<CurvePoint>> = alphas.par_iter().map(|&a| weak_point(a, d, variant)).collect();
    let mut points = Vec::with_capacity(alphas.len());
    let mut failures = Vec::new();
    for (alpha, r) in alphas.iter().zip(results) {
        match r {
            Ok(p) => points.push(p),
            Err(e) => failures.push(PointFailure {
                alpha: *alpha,
                error: e.to_string(),
            }),
        }
    }
    Ok(ThresholdCurve {
        variant,
        d,
        points,
        failures,
        solver_meta: SolverMeta::default(),
    })
}

/// `count` equally spaced α values ending at 1: (1/count, 2/count, …, 1).
pub fn alpha_grid(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / count as f64).collect()
}

/// A threshold query: exactly one of `alpha`/`beta` is given and the
/// other is solved for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuery {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub d: usize,
    pub variant: ThresholdVariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub variant: ThresholdVariant,
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub theta_hat: f64,
    pub residual: f64,
}

impl ThresholdQuery {
    pub fn solve(&self) -> Result<ThresholdRecord> {
        match (self.alpha, self.beta) {
            (Some(alpha), None) => {
                let p = weak_point(alpha, self.d, self.variant)?;
                Ok(ThresholdRecord {
                    variant: self.variant,
                    d: self.d,
                    alpha,
                    beta: p.beta_w,
                    theta_hat: p.theta_hat,
                    residual: p.residual,
                })
            }
            (None, Some(beta)) => self.solve_alpha(beta),
            _ => Err(Error::Config("exactly one of alpha and beta must be given".into())),
        }
    }

    fn solve_alpha(&self, beta: f64) -> Result<ThresholdRecord> {
        let (alpha, theta_hat, residual) = match self.variant {
            ThresholdVariant::BlockPositiveAsymptotic => (asymptotic_alpha(beta)?, 1.0, 0.0),
            ThresholdVariant::BlockL2L1 | ThresholdVariant::BlockL2L1Positive => {
                let a = alpha_min_detail(beta, self.d, self.variant == ThresholdVariant::BlockL2L1Positive)?;
                (a.alpha_min, a.theta.theta_hat, a.theta.residual)
            }
            ThresholdVariant::L1 => {
                let beta = check_beta("threshold", beta)?;
                if beta == 0.0 {
                    (0.0, 0.0, 0.0)
                } else {
                    // The residual runs from −∞ at α = β to positive at α = 1.
                    let b = bisect(
                        |a| l1_equation_residual(a, beta).unwrap_or(f64::NEG_INFINITY),
                        beta,
                        1.0,
                        BISECTION_TOL,
                        MAX_BISECTIONS,
                    );
                    let alpha = b.hi;
                    (alpha, alpha, l1_equation_residual(alpha, beta)?)
                }
            }
        };
        Ok(ThresholdRecord {
            variant: self.variant,
            d: self.d,
            alpha,
            beta,
            theta_hat,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Dense-grid bisection on the θ-form residual, independent of the
    // t-parameterisation used by `theta_hat`.
    fn theta_by_grid(beta: f64, d: usize, positive: bool) -> f64 {
        let f = |th: f64| theta_residual(th, beta, d, positive).unwrap();
        let n = 2000;
        let mut prev = beta + 1e-9;
        let mut fprev = f(prev);
        for i in 1..=n {
            let th = beta + (1.0 - beta) * i as f64 / n as f64;
            let v = f(th);
            if fprev.signum() != v.signum() {
                let (mut lo, mut hi) = (prev, th);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid).signum() == fprev.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
            prev = th;
            fprev = v;
        }
        panic!("no sign change");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ThresholdVariant::ALL {
            assert_eq!(v.name().parse::<ThresholdVariant>().unwrap(), v);
        }
        assert!("nope".parse::<ThresholdVariant>().is_err());
    }

    #[test]
    fn l1_residual_edges() {
        // α = 1: erfinv(0) = 0 so the residual is (1 − β)√(2/π).
        let beta: f64 = 1.0 - 1e-3;
        let r = l1_equation_residual(1.0, beta).unwrap();
        assert!((r - (1.0 - beta) * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!(l1_equation_residual(0.5, 0.5).unwrap() < 0.0);
        assert!(l1_equation_residual(0.5, 0.6).is_err());
        assert!(l1_equation_residual(0.0, 0.1).is_err());
    }

    #[test]
    fn l1_residual_single_sign_change() {
        for alpha in [0.3, 0.5, 0.9] {
            let mut changes = 0;
            let mut prev = l1_equation_residual(alpha, 0.0).unwrap();
            let mut beta = 1e-4;
            while beta < alpha {
                let v = l1_equation_residual(alpha, beta).unwrap();
                assert!(v.is_finite());
                if (v > 0.0) != (prev > 0.0) {
                    changes += 1;
                }
                prev = v;
                beta += 1e-4;
            }
            assert_eq!(changes, 1, "alpha = {alpha}");
        }
    }

    #[test]
    fn theta_hat_d1_matches_l1_reduction() {
        // At d = 1 the signed block equation collapses to the ℓ1 form,
        // whose root in θ is the α with zero ℓ1 residual.
        let beta = 0.2;
        let sol = theta_hat(beta, 1, false).unwrap();
        let l1_alpha = {
            let mut lo = beta;
            let mut hi = 1.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if l1_equation_residual(mid, beta).unwrap() < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert!((sol.theta_hat - l1_alpha).abs() < 1e-8, "{} vs {}", sol.theta_hat, l1_alpha);
    }

    #[test]
    fn theta_hat_positive_residual() {
        let sol = theta_hat(0.2, 4, true).unwrap();
        assert!(sol.residual.abs() <= 1e-9, "{sol:?}");
        assert!(sol.theta_hat >= 0.2 && sol.theta_hat <= 1.0);
        assert!(sol.bracket.0 <= sol.theta_hat && sol.theta_hat <= sol.bracket.1);
    }

    #[test]
    fn theta_hat_matches_grid_oracle() {
        for positive in [true, false] {
            let sol = theta_hat(0.2, 4, positive).unwrap();
            let oracle = theta_by_grid(0.2, 4, positive);
            assert!((sol.theta_hat - oracle).abs() < 1e-8, "positive={positive}");
        }
        let pos = theta_hat(0.2, 4, true).unwrap().theta_hat;
        let signed = theta_hat(0.2, 4, false).unwrap().theta_hat;
        assert!((pos - signed).abs() > 1e-3);
    }

    #[test]
    fn theta_hat_zero_beta() {
        let sol = theta_hat(0.0, 3, true).unwrap();
        assert_eq!(sol.theta_hat, 0.0);
        assert_eq!(alpha_min(0.0, 3, true).unwrap(), 0.0);
    }

    #[test]
    fn alpha_min_small_beta() {
        for positive in [true, false] {
            let a3 = alpha_min(1e-3, 5, positive).unwrap();
            let a4 = alpha_min(1e-4, 5, positive).unwrap();
            assert!(a3 < 0.02 && a4 < a3 && a4 > 0.0);
        }
    }

    #[test]
    fn alpha_min_large_d_approaches_closed_form() {
        let a = alpha_min(0.3, 500, true).unwrap();
        assert!((a - 0.405).abs() < 0.02, "{a}");
    }

    #[test]
    fn positivity_lowers_alpha_min() {
        assert!(alpha_min(0.3, 4, true).unwrap() <= alpha_min(0.3, 4, false).unwrap());
    }

    #[test]
    fn asymptotic_values() {
        assert_eq!(asymptotic_alpha(0.0).unwrap(), 0.0);
        assert_eq!(asymptotic_alpha(1.0).unwrap(), 1.0);
        assert_eq!(asymptotic_alpha(0.5).unwrap(), 0.625);
        assert!(asymptotic_alpha(1.5).is_err());
        let b = weak_beta(0.5, 1, ThresholdVariant::BlockPositiveAsymptotic).unwrap();
        assert!((b - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weak_beta_l1_at_one() {
        let b = weak_beta(1.0, 1, ThresholdVariant::L1).unwrap();
        assert!((b - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weak_beta_block_residuals() {
        for variant in [ThresholdVariant::BlockL2L1, ThresholdVariant::BlockL2L1Positive] {
            let p = weak_point(0.5, 15, variant).unwrap();
            let positive = variant == ThresholdVariant::BlockL2L1Positive;
            let a = alpha_min(p.beta_w, 15, positive).unwrap();
            assert!((a - 0.5).abs() <= 1e-7, "{variant}: {a}");
            assert!(p.beta_w >= 0.0 && p.beta_w <= 0.5);
        }
        let pos = weak_beta(0.5, 15, ThresholdVariant::BlockL2L1Positive).unwrap();
        let signed = weak_beta(0.5, 15, ThresholdVariant::BlockL2L1).unwrap();
        assert!(pos > signed);
    }

    #[test]
    fn weak_beta_domain() {
        assert!(weak_beta(0.0, 3, ThresholdVariant::BlockL2L1).is_err());
        assert!(weak_beta(1.2, 3, ThresholdVariant::L1).is_err());
        assert!(weak_beta(0.5, 0, ThresholdVariant::BlockL2L1).is_err());
    }

    #[test]
    fn curve_single_point() {
        for v in ThresholdVariant::ALL {
            let c = threshold_curve(&[1.0], 3, v).unwrap();
            assert_eq!(c.points.len(), 1);
            assert!((c.points[0].beta_w - 1.0).abs() < 1e-3, "{v}: {:?}", c.points);
        }
    }

    #[test]
    fn curve_rejects_unsorted() {
        assert!(threshold_curve(&[0.5, 0.4], 3, ThresholdVariant::L1).is_err());
        assert!(threshold_curve(&[0.0, 0.4], 3, ThresholdVariant::L1).is_err());
    }

    #[test]
    fn curve_csv_header() {
        let c = threshold_curve(&[0.5], 2, ThresholdVariant::BlockL2L1).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("variant,d,alpha,beta_w,theta_hat,residual\nblock,2,0.5,"));
    }

    #[test]
    fn query_requires_exactly_one_unknown() {
        let q = ThresholdQuery {
            alpha: Some(0.5),
            beta: Some(0.2),
            d: 3,
            variant: ThresholdVariant::BlockL2L1,
        };
        assert!(q.solve().is_err());
        let q = ThresholdQuery {
            alpha: None,
            beta: Some(0.5),
            d: 1,
            variant: ThresholdVariant::BlockPositiveAsymptotic,
        };
        assert_eq!(q.solve().unwrap().alpha, 0.625);
    }

    #[test]
    fn l1_query_in_beta_inverts_weak_beta() {
        let beta = weak_beta(0.6, 1, ThresholdVariant::L1).unwrap();
        let q = ThresholdQuery {
            alpha: None,
            beta: Some(beta),
            d: 1,
            variant: ThresholdVariant::L1,
        };
        let rec = q.solve().unwrap();
        assert!((rec.alpha - 0.6).abs() < 1e-9);
    }

    #[test]
    fn tail_model_atom() {
        let m = TailModel::new(3, true).unwrap();
        assert_eq!(m.atom(), 0.125);
        assert_eq!(TailModel::new(3, false).unwrap().atom(), 0.0);
    }
}
