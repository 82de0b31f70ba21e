//! Random block-sparse instances, the four convex recovery programs and the
//! null-space success certificate.
//!
//! All four programs are basis pursuit problems
//!
//! ```text
//! minimize Σ_i ‖X_i‖₂  subject to  A x = y  (and x ≥ 0 for the Pos variants)
//! ```
//!
//! with blocks X_i of length d (length 1 for the ℓ1 programs). They are
//! solved by ADMM between the affine set and the block proximal map. The
//! run stops on a duality gap: the ADMM multiplier is projected onto the
//! row space of A and rescaled into the dual unit ball, which gives a valid
//! lower bound on the optimum at every check.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Guard band on the certificate margin.
pub const CERTIFICATE_GUARD: f64 = 1e-6;

/// Allowed negative excursion of entries returned by the Pos programs,
/// relative to max(1, ‖x‖∞).
pub const SIGN_TOL: f64 = 1e-8;

const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
const DUAL_POLISH_EVERY: usize = 200;

/// How nonzero magnitudes are drawn; recorded with every instance.
pub const MAGNITUDE_LAW: &str = "abs-standard-normal";

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    /// (d·m) × (d·n) measurement matrix.
    pub a: DMatrix<f64>,
    pub x_true: Vec<f64>,
    pub y: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub positive: bool,
    pub seed: u64,
    /// Indices of the nonzero blocks, ascending.
    pub support: Vec<usize>,
}

/// Everything needed to regenerate an instance. The matrix is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub positive: bool,
    pub seed: u64,
}

impl InstanceMeta {
    pub fn generate(&self) -> Result<ProblemInstance> {
        generate_instance(self.n, self.m, self.k, self.d, self.positive, self.seed)
    }
}

impl ProblemInstance {
    pub fn meta(&self) -> InstanceMeta {
        InstanceMeta {
            n: self.n,
            m: self.m,
            k: self.k,
            d: self.d,
            positive: self.positive,
            seed: self.seed,
        }
    }

    /// Copy with x_true and y multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.x_true.iter_mut().for_each(|v| *v *= c);
        out.y.iter_mut().for_each(|v| *v *= c);
        out
    }
}

pub fn generate_instance(n: usize, m: usize, k: usize, d: usize, positive: bool, seed: u64) -> Result<ProblemInstance> {
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::Dimension(format!("n, m, d must be positive (n = {n}, m = {m}, d = {d})")));
    }
    if k > n {
        return Err(Error::Dimension(format!("k = {k} exceeds n = {n}")));
    }
    if m > n {
        return Err(Error::Dimension(format!("m = {m} exceeds n = {n}")));
    }
    let mut rng = stream_rng(seed, 0);
    let rows = d * m;
    let cols = d * n;
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        entries.push(rng.sample::<f64, _>(StandardNormal));
    }
    let a = DMatrix::from_row_slice(rows, cols, &entries);

    let mut support: Vec<usize> = sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut x_true = vec![0.0; cols];
    for &block in &support {
        for v in &mut x_true[block * d..(block + 1) * d] {
            let g: f64 = rng.sample(StandardNormal);
            *v = if positive { g.abs() } else { g };
        }
    }
    let y = (&a * DVector::from_column_slice(&x_true)).as_slice().to_vec();
    Ok(ProblemInstance {
        a,
        x_true,
        y,
        n,
        m,
        k,
        d,
        positive,
        seed,
        support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Program {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l1-pos")]
    L1Pos,
    #[serde(rename = "l2l1")]
    L2L1,
    #[serde(rename = "l2l1-pos")]
    L2L1Pos,
}

impl Program {
    pub const ALL: [Program; 4] = [Program::L1, Program::L1Pos, Program::L2L1, Program::L2L1Pos];

    pub fn name(self) -> &'static str {
        match self {
            Program::L1 => "l1",
            Program::L1Pos => "l1-pos",
            Program::L2L1 => "l2l1",
            Program::L2L1Pos => "l2l1-pos",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Program::L1Pos | Program::L2L1Pos)
    }

    /// Length of the groups in the objective for signal block length `d`.
    pub fn group_len(self, d: usize) -> usize {
        match self {
            Program::L1 | Program::L1Pos => 1,
            Program::L2L1 | Program::L2L1Pos => d,
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Program {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Program::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown program '{s}' (expected l1, l1-pos, l2l1, l2l1-pos)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    pub success_rel_err: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            max_iter: 50_000,
            success_rel_err: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.feas_tol) || !positive(self.opt_tol) || !positive(self.success_rel_err) {
            return Err(Error::Config("solver tolerances must be positive and finite".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Long-run settings used as a reference: 10× iterations, 1e-3× tolerances.
    pub fn reference(&self) -> Self {
        Self {
            feas_tol: self.feas_tol * 1e-3,
            opt_tol: self.opt_tol * 1e-3,
            max_iter: self.max_iter * 10,
            success_rel_err: self.success_rel_err,
        }
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x_hat: Vec<f64>,
    pub objective: f64,
    /// ‖A x_hat − y‖₂ / ‖y‖₂ with 0/0 = 0.
    pub feas_residual: f64,
    /// Certified relative duality gap at termination.
    pub gap: f64,
    pub iterations: usize,
    /// True when x_hat came from the least-squares refit on the detected support.
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub x_hat: Vec<f64>,
    pub objective: f64,
    pub feas_residual: f64,
    pub rel_error: f64,
    pub success: bool,
    pub iterations: usize,
}

/// Σ_i ‖X_i‖₂ over consecutive groups of length `group`.
pub fn group_norm(x: &[f64], group: usize) -> f64 {
    x.chunks(group).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn feas_residual(a: &DMatrix<f64>, x: &[f64], y: &[f64], y_norm: f64) -> f64 {
    let r = a * DVector::from_column_slice(x) - DVector::from_column_slice(y);
    if y_norm == 0.0 {
        r.norm()
    } else {
        r.norm() / y_norm
    }
}

/// Row-space machinery for A: B = L⁻¹A with AAᵀ = LLᵀ has orthonormal rows,
/// so BᵀB projects onto the row space of A.
struct RowSpace {
    l: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl RowSpace {
    fn new(a: &DMatrix<f64>) -> Result<Self> {
        let gram = a * a.transpose();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Infeasible("A Aᵀ is not positive definite (rank-deficient A)".into()))?;
        let l = chol.l();
        let diag = l.diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !(lo > 1e-7 * hi) {
            return Err(Error::Infeasible(format!(
                "A is numerically rank deficient (Cholesky diagonal ratio {:.3e})",
                lo / hi
            )));
        }
        let b = l
            .solve_lower_triangular(a)
            .ok_or_else(|| Error::Infeasible("triangular solve failed".into()))?;
        Ok(Self { l, b })
    }

    /// L⁻¹y, so that {x : A x = y} = {x : B x = L⁻¹y}.
    fn whiten(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.l
            .solve_lower_triangular(y)
            .ok_or_else(|| Error::Infeasible("triangular solve failed".into()))
    }

    /// Writes B v into `coef`.
    fn coefficients(&self, v: &DVector<f64>, coef: &mut DVector<f64>) {
        coef.gemv(1.0, &self.b, v, 0.0);
    }

    /// out ← v − Bᵀ(B v − c): projection onto {x : B x = c}.
    fn project(&self, v: &DVector<f64>, c: Option<&DVector<f64>>, coef: &mut DVector<f64>, out: &mut DVector<f64>) {
        self.coefficients(v, coef);
        if let Some(c) = c {
            *coef -= c;
        }
        out.copy_from(v);
        out.gemv_tr(-1.0, &self.b, coef, 1.0);
    }

    /// Element of the row space closest to `g` among those equal to `h` on
    /// the columns `cols`. None if those columns of B are dependent.
    fn matched_dual(&self, g: &DVector<f64>, cols: &[usize], h: &[f64]) -> Option<DVector<f64>> {
        let mu0 = &self.b * g;
        let bs = self.b.select_columns(cols);
        let chol = bs.tr_mul(&bs).cholesky()?;
        let r = DVector::from_column_slice(h) - bs.tr_mul(&mu0);
        let mu = mu0 + bs * chol.solve(&r);
        Some(self.b.tr_mul(&mu))
    }

    /// out ← BᵀB v: projection onto the row space.
    fn range_part(&self, v: &DVector<f64>, coef: &mut DVector<f64>, out: &mut DVector<f64>) {
        self.coefficients(v, coef);
        out.gemv_tr(1.0, &self.b, coef, 0.0);
    }
}

/// prox of (1/ρ)‖·‖₂ on each group, after clipping to the orthant if `positive`.
fn group_shrink(v: &mut [f64], group: usize, inv_rho: f64, positive: bool) {
    for c in v.chunks_mut(group) {
        if positive {
            c.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        let nrm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if nrm > inv_rho { 1.0 - inv_rho / nrm } else { 0.0 };
        c.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Norm dual to the objective: max_i ‖G_i‖₂, or max_i ‖G_i⁺‖₂ on the orthant.
fn dual_norm(g: &[f64], group: usize, positive: bool) -> f64 {
    g.chunks(group)
        .map(|c| {
            c.iter()
                .map(|x| if positive { x.max(0.0) } else { *x })
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn sign_ok(x: &[f64]) -> bool {
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    x.iter().all(|v| *v >= -SIGN_TOL * scale)
}

// Residual balancing: returns the factor by which ρ was multiplied.
fn balance(rho: &mut f64, primal: f64, dual: f64) -> f64 {
    const MU: f64 = 10.0;
    const TAU: f64 = 2.0;
    if primal > MU * dual {
        *rho *= TAU;
        TAU
    } else if dual > MU * primal {
        *rho /= TAU;
        1.0 / TAU
    } else {
        1.0
    }
}

/// Least-squares fit of y on the columns in `cols`; None if the columns are
/// not linearly independent.
fn refit(a: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> Option<Vec<f64>> {
    if cols.is_empty() || cols.len() > a.nrows() {
        return None;
    }
    let sub = a.select_columns(cols);
    let qr = sub.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * diag_max) {
        return None;
    }
    let rhs = qr.q().transpose() * y;
    let coef = r.solve_upper_triangular(&rhs)?;
    let mut x = vec![0.0; a.ncols()];
    for (c, v) in cols.iter().zip(coef.iter()) {
        x[*c] = *v;
    }
    Some(x)
}

/// Columns where every subgradient of the objective at `x` is pinned, with
/// the pinned values: all entries of active groups, or only the positive
/// entries on the orthant.
fn pinned_gradient(x: &[f64], group: usize, positive: bool) -> (Vec<usize>, Vec<f64>) {
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (b, c) in x.chunks(group).enumerate() {
        let nrm = norm(c);
        if nrm == 0.0 {
            continue;
        }
        for (j, v) in c.iter().enumerate() {
            if !positive || *v > 0.0 {
                cols.push(b * group + j);
                vals.push(v / nrm);
            }
        }
    }
    (cols, vals)
}

fn support_columns(z: &[f64], group: usize, positive: bool) -> Vec<usize> {
    if positive {
        // Zeros inside an active block are generic on the orthant, so the
        // refit uses entrywise support.
        (0..z.len()).filter(|&i| z[i] > 0.0).collect()
    } else {
        z.chunks(group)
            .enumerate()
            .filter(|(_, c)| c.iter().any(|v| *v != 0.0))
            .flat_map(|(b, _)| b * group..(b + 1) * group)
            .collect()
    }
}

/// Solves one recovery program on (A, y).
pub fn solve(program: Program, a: &DMatrix<f64>, y: &[f64], d: usize, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    if d == 0 {
        return Err(Error::Dimension("block length d must be positive".into()));
    }
    if a.nrows() != y.len() {
        return Err(Error::Dimension(format!("A has {} rows but y has length {}", a.nrows(), y.len())));
    }
    let cols = a.ncols();
    let group = program.group_len(d);
    if cols % d != 0 {
        return Err(Error::Dimension(format!("column count {cols} is not divisible by d = {d}")));
    }
    let positive = program.is_positive();
    let y_norm = norm(y);
    if y_norm == 0.0 {
        return Ok(Solution {
            x_hat: vec![0.0; cols],
            objective: 0.0,
            feas_residual: 0.0,
            gap: 0.0,
            iterations: 0,
            polished: false,
        });
    }
    if a.nrows() > cols {
        return Err(Error::Dimension(format!("A has more rows ({}) than columns ({cols})", a.nrows())));
    }

    let space = RowSpace::new(a)?;
    let y_vec = DVector::from_column_slice(y);
    if a.nrows() == cols {
        // A single feasible point.
        let all: Vec<usize> = (0..cols).collect();
        let x = refit(a, &y_vec, &all).ok_or_else(|| Error::Infeasible("square system is singular".into()))?;
        if positive && !sign_ok(&x) {
            return Err(Error::Infeasible("the unique solution of A x = y has negative entries".into()));
        }
        return Ok(Solution {
            feas_residual: feas_residual(a, &x, y, y_norm),
            objective: group_norm(&x, group),
            x_hat: x,
            gap: 0.0,
            iterations: 0,
            polished: true,
        });
    }
    let c = space.whiten(&y_vec)?;
    let q = space.b.tr_mul(&c);
    let rms = q.norm() / (cols as f64).sqrt();
    let mut rho = if rms > 0.0 { 1.0 / rms } else { 1.0 };

    const RELAX: f64 = 1.6;
    let mut x = DVector::zeros(cols);
    let mut z = q.clone();
    if positive {
        z.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut u = DVector::zeros(cols);
    let mut z_prev = z.clone();
    let mut coef = DVector::zeros(a.nrows());
    let mut work = DVector::zeros(cols);
    let mut g_range = DVector::zeros(cols);

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut best_lb = f64::NEG_INFINITY;
    let mut last_support: Vec<usize> = Vec::new();
    let mut tried_support: Vec<usize> = Vec::new();
    let mut last_feas = f64::INFINITY;
    let mut last_gap = f64::INFINITY;
    let mut dual_polished_at = 0;

    for iter in 1..=config.max_iter {
        work.copy_from(&z);
        work -= &u;
        space.project(&work, Some(&c), &mut coef, &mut x);
        // Over-relaxed z and u updates.
        work.copy_from(&x);
        work *= RELAX;
        work.axpy(1.0 - RELAX, &z, 1.0);
        z_prev.copy_from(&z);
        z.copy_from(&work);
        z += &u;
        group_shrink(z.as_mut_slice(), group, 1.0 / rho, positive);
        u += &work;
        u -= &z;

        if iter % CHECK_EVERY != 0 && iter != 1 {
            continue;
        }

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_prev).norm();

        // Lower bound from the multiplier ρu ∈ ∂f(z).
        work.copy_from(&u);
        work *= rho;
        space.range_part(&work, &mut coef, &mut g_range);
        let dn = dual_norm(g_range.as_slice(), group, positive);
        if dn > 0.0 {
            let lb = g_range.dot(&q) / dn.max(1.0);
            best_lb = best_lb.max(lb);
        }

        // Feasible candidates for the upper bound.
        let consider = |cand: Vec<f64>, polished: bool, best: &mut Option<(Vec<f64>, f64, bool)>| {
            if positive && !sign_ok(&cand) {
                return false;
            }
            if feas_residual(a, &cand, y, y_norm) > config.feas_tol {
                return false;
            }
            let obj = group_norm(&cand, group);
            if best.as_ref().is_none_or(|(_, b, _)| obj < *b) {
                *best = Some((cand, obj, polished));
                return true;
            }
            false
        };
        consider(z.as_slice().to_vec(), false, &mut best);
        space.project(&z, Some(&c), &mut coef, &mut work);
        consider(work.as_slice().to_vec(), false, &mut best);

        let support = support_columns(z.as_slice(), group, positive);
        if support == last_support && support != tried_support {
            if let Some(fit) = refit(a, &y_vec, &support) {
                if consider(fit, true, &mut best) {
                    dual_polished_at = 0;
                }
            }
            tried_support = support.clone();
        }
        last_support = support;

        // Once a refit point exists, pin the multiplier to its subgradient
        // on the support; with the right support this closes the gap.
        if let Some((ref xb, _, true)) = best {
            if dual_polished_at == 0 || iter - dual_polished_at >= DUAL_POLISH_EVERY {
                dual_polished_at = iter;
                let (cols, vals) = pinned_gradient(xb, group, positive);
                work.copy_from(&u);
                work *= rho;
                if let Some(g) = space.matched_dual(&work, &cols, &vals) {
                    let dn = dual_norm(g.as_slice(), group, positive);
                    if dn > 0.0 {
                        best_lb = best_lb.max(g.dot(&q) / dn.max(1.0));
                    }
                }
            }
        }

        last_feas = feas_residual(a, z.as_slice(), y, y_norm);
        if let Some((ref xb, obj, polished)) = best {
            let gap = (obj - best_lb).max(0.0) / obj;
            last_gap = gap;
            if gap <= config.opt_tol {
                return Ok(Solution {
                    feas_residual: feas_residual(a, xb, y, y_norm),
                    x_hat: xb.clone(),
                    objective: obj,
                    gap,
                    iterations: iter,
                    polished,
                });
            }
        }

        if iter % ADAPT_EVERY == 0 {
            let factor = balance(&mut rho, primal, dual);
            if factor != 1.0 {
                u /= factor;
            }
        }
    }

    let best_iterate = best.map(|(x, _, _)| x).unwrap_or_else(|| z.as_slice().to_vec());
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        feas_residual: last_feas,
        dual_residual: last_gap,
        best: best_iterate,
    })
}

/// Solves `program` on an instance and scores the result against x_true.
pub fn recover(instance: &ProblemInstance, program: Program, config: &SolverConfig) -> Result<RecoveryResult> {
    let sol = solve(program, &instance.a, &instance.y, instance.d, config)?;
    let diff: f64 = sol
        .x_hat
        .iter()
        .zip(&instance.x_true)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let rel_error = diff / norm(&instance.x_true).max(1e-30);
    Ok(RecoveryResult {
        success: rel_error <= config.success_rel_err,
        x_hat: sol.x_hat,
        objective: sol.objective,
        feas_residual: sol.feas_residual,
        rel_error,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// Optimum of the null-space program; 0 means no improving direction.
    pub margin: f64,
    pub holds: bool,
    pub borderline: bool,
    pub iterations: usize,
    /// False when the iteration cap was hit; `margin` is then the best
    /// value seen.
    pub converged: bool,
}

impl CertificateReport {
    fn from_margin(margin: f64, iterations: usize, converged: bool) -> Self {
        Self {
            margin,
            holds: margin <= CERTIFICATE_GUARD,
            borderline: margin > CERTIFICATE_GUARD && margin <= 10.0 * CERTIFICATE_GUARD,
            iterations,
            converged,
        }
    }
}

const CERT_MAX_ITER: usize = 200_000;
const CERT_TOL: f64 = 1e-10;

/// Evaluates the null-space condition for the support and directions of
/// `instance.x_true`:
///
/// ```text
/// margin = max −Σ_{i∈S} X_iᵀW_i/‖X_i‖₂ − Σ_{i∉S} ‖W_i‖₂
///          over A w = 0, ‖w‖₂ ≤ 1, and w_i ≥ 0 off S when `positive`.
/// ```
///
/// The condition holds (x_true is the unique minimizer) iff the margin is 0.
pub fn check_certificate(instance: &ProblemInstance, positive: bool) -> Result<CertificateReport> {
    let d = instance.d;
    let cols = instance.a.ncols();
    if instance.x_true.len() != cols || cols != d * instance.n {
        return Err(Error::Dimension("instance shapes are inconsistent".into()));
    }
    let support: Vec<usize> = instance
        .x_true
        .chunks(d)
        .enumerate()
        .filter(|(_, c)| c.iter().any(|v| *v != 0.0))
        .map(|(i, _)| i)
        .collect();
    if support.is_empty() || instance.a.nrows() >= cols {
        return Ok(CertificateReport::from_margin(0.0, 0, true));
    }
    let mut in_support = vec![false; instance.n];
    let mut dirs = vec![0.0; cols];
    for &i in &support {
        in_support[i] = true;
        let block = &instance.x_true[i * d..(i + 1) * d];
        let nrm = norm(block);
        for (t, v) in dirs[i * d..(i + 1) * d].iter_mut().zip(block) {
            *t = v / nrm;
        }
    }
    let objective = |w: &[f64]| -> f64 {
        w.chunks(d)
            .enumerate()
            .map(|(i, c)| {
                if in_support[i] {
                    c.iter().zip(&dirs[i * d..(i + 1) * d]).map(|(a, b)| a * b).sum::<f64>()
                } else {
                    norm(c)
                }
            })
            .sum()
    };

    let space = RowSpace::new(&instance.a)?;
    let mut rho = 1.0;
    let mut x = DVector::zeros(cols);
    // Start from the steepest descent direction of the linear part.
    let mut z = DVector::from_column_slice(&dirs) * -1.0;
    let mut u = DVector::zeros(cols);
    let mut z_prev = z.clone();
    let mut coef = DVector::zeros(instance.a.nrows());
    let mut work = DVector::zeros(cols);
    let mut best_margin = 0.0f64;

    for iter in 1..=CERT_MAX_ITER {
        // x-step: projection onto null(A) ∩ unit ball.
        work.copy_from(&z);
        work -= &u;
        let raw = work.clone();
        space.project(&raw, None, &mut coef, &mut x);
        let xn = x.norm();
        if xn > 1.0 {
            x /= xn;
        }
        // z-step: linear on the support, group shrink off it.
        z_prev.copy_from(&z);
        z.copy_from(&x);
        z += &u;
        let inv_rho = 1.0 / rho;
        for i in 0..instance.n {
            let block = &mut z.as_mut_slice()[i * d..(i + 1) * d];
            if in_support[i] {
                for (v, t) in block.iter_mut().zip(&dirs[i * d..(i + 1) * d]) {
                    *v -= t * inv_rho;
                }
            } else {
                group_shrink(block, d, inv_rho, positive);
            }
        }
        u += &x;
        u -= &z;

        if iter % CHECK_EVERY != 0 {
            continue;
        }
        // x is exactly in null(A) ∩ ball; clip the sign violations off S,
        // which keeps it feasible for the bound only if they are negligible.
        let mut candidate = x.as_slice().to_vec();
        let mut violation: f64 = 0.0;
        if positive {
            for i in (0..instance.n).filter(|i| !in_support[*i]) {
                for v in &candidate[i * d..(i + 1) * d] {
                    violation = violation.max(-v);
                }
            }
            if violation > 0.0 {
                for i in (0..instance.n).filter(|i| !in_support[*i]) {
                    candidate[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
        }
        let value = -objective(&candidate);
        if violation <= CERT_TOL {
            best_margin = best_margin.max(value);
        }
        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_prev).norm();
        if primal <= CERT_TOL && dual <= CERT_TOL {
            return Ok(CertificateReport::from_margin(best_margin.max(0.0), iter, true));
        }
        let factor = balance(&mut rho, primal, dual);
        if factor != 1.0 {
            u /= factor;
        }
    }
    Ok(CertificateReport::from_margin(best_margin.max(0.0), CERT_MAX_ITER, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_structure() {
        let inst = generate_instance(100, 30, 10, 15, true, 5).unwrap();
        assert_eq!(inst.a.shape(), (450, 1500));
        assert!(inst.x_true.iter().all(|v| *v >= 0.0));
        let nonzero = inst.x_true.chunks(15).filter(|c| c.iter().any(|v| *v != 0.0)).count();
        assert_eq!(nonzero, 10);
        let y = &inst.a * DVector::from_column_slice(&inst.x_true);
        let err = (y - DVector::from_column_slice(&inst.y)).norm();
        assert!(err <= 1e-12 * norm(&inst.y));
    }

    #[test]
    fn zero_sparsity_instance() {
        let inst = generate_instance(10, 4, 0, 2, false, 1).unwrap();
        assert!(inst.x_true.iter().all(|v| *v == 0.0));
        assert!(inst.y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn instances_are_reproducible() {
        let a = generate_instance(12, 6, 3, 2, false, 77).unwrap();
        let b = a.meta().generate().unwrap();
        assert_eq!(a, b);
        let c = generate_instance(12, 6, 3, 2, false, 78).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn instance_dimension_errors() {
        assert!(generate_instance(5, 6, 1, 2, true, 0).is_err());
        assert!(generate_instance(5, 3, 6, 2, true, 0).is_err());
    }

    #[test]
    fn meta_round_trips_through_json() {
        let meta = generate_instance(8, 4, 2, 3, true, 9).unwrap().meta();
        let text = serde_json::to_string(&meta).unwrap();
        assert_eq!(serde_json::from_str::<InstanceMeta>(&text).unwrap(), meta);
    }

    #[test]
    fn program_names_round_trip() {
        for p in Program::ALL {
            assert_eq!(p.name().parse::<Program>().unwrap(), p);
        }
        assert!("lasso".parse::<Program>().is_err());
    }

    #[test]
    fn shrink_and_dual_norm() {
        let mut v = vec![3.0, 4.0, 0.1, -0.1];
        group_shrink(&mut v, 2, 1.0, false);
        assert!((v[0] - 2.4).abs() < 1e-15 && (v[1] - 3.2).abs() < 1e-15);
        assert_eq!(&v[2..], &[0.0, 0.0]);
        let mut w = vec![-3.0, 4.0];
        group_shrink(&mut w, 2, 1.0, true);
        assert_eq!(w, vec![0.0, 3.0]);
        assert_eq!(dual_norm(&[-3.0, 4.0, 1.0, 0.0], 2, true), 4.0);
        assert_eq!(dual_norm(&[-3.0, 4.0, 1.0, 0.0], 2, false), 5.0);
    }

    #[test]
    fn zero_measurements_give_zero() {
        let inst = generate_instance(10, 5, 0, 2, false, 3).unwrap();
        for p in Program::ALL {
            let s = solve(p, &inst.a, &inst.y, 2, &SolverConfig::default()).unwrap();
            assert!(s.x_hat.iter().all(|v| *v == 0.0));
            assert_eq!(s.objective, 0.0);
        }
    }

    #[test]
    fn square_systems_recover_exactly() {
        for (p, positive) in [(Program::L2L1, false), (Program::L2L1Pos, true), (Program::L1, false)] {
            let inst = generate_instance(8, 8, 5, 3, positive, 21).unwrap();
            let r = recover(&inst, p, &SolverConfig::default()).unwrap();
            assert!(r.rel_error <= 1e-8, "{p}: {}", r.rel_error);
            assert!(r.success);
        }
    }

    #[test]
    fn easy_instance_is_recovered() {
        let inst = generate_instance(40, 32, 4, 5, true, 4).unwrap();
        let r = recover(&inst, Program::L2L1Pos, &SolverConfig::default()).unwrap();
        assert!(r.success, "rel_error {}", r.rel_error);
        assert!(r.feas_residual <= 1e-8);
    }

    #[test]
    fn hopeless_instance_fails_but_converges() {
        let inst = generate_instance(20, 4, 15, 3, false, 8).unwrap();
        let r = recover(&inst, Program::L2L1, &SolverConfig::default()).unwrap();
        assert!(!r.success);
        assert!(r.feas_residual <= 1e-8);
        let true_obj = group_norm(&inst.x_true, 3);
        assert!(r.objective <= true_obj * (1.0 + 1e-6));
    }

    #[test]
    fn positive_programs_respect_sign() {
        let inst = generate_instance(15, 6, 5, 2, true, 12).unwrap();
        for p in [Program::L1Pos, Program::L2L1Pos] {
            let s = solve(p, &inst.a, &inst.y, 2, &SolverConfig::default()).unwrap();
            assert!(s.x_hat.iter().all(|v| *v >= -1e-8), "{p}");
        }
    }

    #[test]
    fn rank_deficient_matrix_is_infeasible() {
        let mut a = DMatrix::from_fn(3, 6, |i, j| (i * 6 + j) as f64 + 1.0);
        a.set_row(2, &(a.row(0) * 2.0));
        let err = solve(Program::L1, &a, &[1.0, 2.0, 2.0], 1, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn dimension_checks() {
        let a = DMatrix::from_element(2, 5, 1.0);
        assert!(matches!(
            solve(Program::L2L1, &a, &[1.0, 0.0], 2, &SolverConfig::default()),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            solve(Program::L1, &a, &[1.0], 1, &SolverConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            opt_tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn certificate_trivial_cases() {
        let square = generate_instance(6, 6, 3, 2, true, 1).unwrap();
        let r = check_certificate(&square, true).unwrap();
        assert!(r.holds && r.margin == 0.0);
        let empty = generate_instance(6, 3, 0, 2, true, 1).unwrap();
        assert!(check_certificate(&empty, true).unwrap().holds);
    }

    #[test]
    fn certificate_tracks_easy_and_hard_instances() {
        let easy = generate_instance(20, 16, 2, 3, true, 2).unwrap();
        assert!(check_certificate(&easy, true).unwrap().holds);
        let hard = generate_instance(20, 4, 12, 3, true, 2).unwrap();
        let r = check_certificate(&hard, true).unwrap();
        assert!(!r.holds && r.margin > 1e-3, "{r:?}");
    }
}
