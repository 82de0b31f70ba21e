//! Gaussian width of the set of directions along which ℓ2/ℓ1 recovery of a
//! nonnegative block-sparse vector can fail.
//!
//! The width reduces to a small convex program over a vector of n + k
//! statistics (see [`HwPlusVector`]). Its large-n limit is expressed in the
//! same tail sums as the threshold equations, so squaring the normalized
//! limit gives exactly d·α_min.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::thresholds::{theta_hat, TailModel};

/// χ_d⁺ = √(Σ_i max(h_i, 0)²) for d fresh standard normals.
pub fn sample_chi_plus<R: Rng + ?Sized>(d: usize, rng: &mut R) -> f64 {
    let mut acc = 0.0;
    for _ in 0..d {
        let h: f64 = rng.sample(StandardNormal);
        if h > 0.0 {
            acc += h * h;
        }
    }
    acc.sqrt()
}

/// Statistics vector h_w⁺ for a Gaussian draw h ∈ R^{dn}, with the zero
/// blocks first (blocks 1..n−k) and the support last (blocks n−k+1..n).
///
/// Layout of `entries` (length n + k):
/// * `[0, n−k)`: ‖H_i⁺‖₂ of the zero blocks, sorted ascending;
/// * `[n−k, n)`: −h of the first coordinate of each support block;
/// * `[n, n+k)`: ‖H_i*‖₂, the norm over coordinates 2..d of each support block.
#[derive(Debug, Clone, PartialEq)]
pub struct HwPlusVector {
    pub entries: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub d: usize,
}

impl HwPlusVector {
    pub fn zero_blocks(&self) -> &[f64] {
        &self.entries[..self.n - self.k]
    }

    pub fn support_heads(&self) -> &[f64] {
        &self.entries[self.n - self.k..self.n]
    }

    pub fn support_tails(&self) -> &[f64] {
        &self.entries[self.n..]
    }

    /// Same vector with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|e| e * c).collect(),
            ..self.clone()
        }
    }
}

pub fn build_hw_plus(h: &[f64], n: usize, k: usize, d: usize) -> Result<HwPlusVector> {
    if d == 0 || n == 0 {
        return Err(Error::Dimension(format!("n and d must be positive (n = {n}, d = {d})")));
    }
    if k > n {
        return Err(Error::Dimension(format!("k = {k} exceeds n = {n}")));
    }
    if h.len() != d * n {
        return Err(Error::Dimension(format!("h has length {}, expected d*n = {}", h.len(), d * n)));
    }
    let mut entries = Vec::with_capacity(n + k);
    let mut zero: Vec<f64> = h[..d * (n - k)]
        .chunks_exact(d)
        .map(|block| block.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt())
        .collect();
    zero.sort_by(f64::total_cmp);
    entries.extend(zero);
    let support = &h[d * (n - k)..];
    entries.extend(support.chunks_exact(d).map(|block| -block[0]));
    entries.extend(
        support
            .chunks_exact(d)
            .map(|block| block[1..].iter().map(|v| v * v).sum::<f64>().sqrt()),
    );
    Ok(HwPlusVector { entries, n, k, d })
}

/// Optimizer of the inner width program and its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerWidthSolution {
    pub value: f64,
    /// Multiplier ν ≥ 0 of the coupling constraint Σ_mid t̄ ≥ Σ_zero t̄.
    pub multiplier: f64,
    /// Maximizer t̄ (zero when the optimum is 0).
    pub direction: Vec<f64>,
    /// Largest violation among primal feasibility, complementary slackness
    /// and the primal–dual gap.
    pub kkt_residual: f64,
}

/// Maximizes Σ h_i t̄_i over ‖t̄‖₂ ≤ 1, t̄ ≥ 0 on the zero-block and
/// tail segments, and Σ_mid t̄ ≥ Σ_zero t̄.
pub fn inner_width(hw: &HwPlusVector) -> f64 {
    solve_inner_width(hw).value
}

/// Solves the inner width program through its one-dimensional dual.
///
/// For a multiplier ν ≥ 0 on the coupling constraint the Lagrangian is
/// maximized over the constrained unit ball at t̄ ∝ v(ν) with
/// v = ((a − ν)₊, b + ν, c₊) over the three segments, giving the dual
/// function ‖v(ν)‖. Its derivative has the sign of
/// g(ν) = kν + Σb − Σ(a − ν)₊, which is piecewise linear and increasing, so
/// the minimizing ν is found exactly by walking the sorted zero-block
/// segment.
pub fn solve_inner_width(hw: &HwPlusVector) -> InnerWidthSolution {
    let a = hw.zero_blocks();
    let b = hw.support_heads();
    let c = hw.support_tails();
    let k = hw.k as f64;
    let len = hw.entries.len();

    if hw.k == 0 {
        // Σ_zero t̄ ≤ 0 with t̄ ≥ 0 forces the zero segment to vanish.
        return InnerWidthSolution {
            value: 0.0,
            multiplier: a.last().copied().unwrap_or(0.0).max(0.0),
            direction: vec![0.0; len],
            kkt_residual: 0.0,
        };
    }

    let sum_b: f64 = b.iter().sum();
    let g = |nu: f64| k * nu + sum_b - a.iter().map(|x| (x - nu).max(0.0)).sum::<f64>();

    let nu = if g(0.0) >= 0.0 {
        0.0
    } else {
        // With the top r entries of `a` active, g(ν) = (k + r)ν + Σb − S_r.
        let mut top_sum = 0.0;
        let mut found = None;
        for r in 0..=a.len() {
            if r > 0 {
                top_sum += a[a.len() - r];
            }
            let nu = (top_sum - sum_b) / (k + r as f64);
            let upper = if r == 0 { f64::INFINITY } else { a[a.len() - r] };
            let lower = if r == a.len() { 0.0 } else { a[a.len() - r - 1] };
            if nu >= lower && nu <= upper {
                found = Some(nu);
                break;
            }
        }
        found.unwrap_or(0.0).max(0.0)
    };

    let mut v = Vec::with_capacity(len);
    v.extend(a.iter().map(|x| (x - nu).max(0.0)));
    v.extend(b.iter().map(|x| x + nu));
    v.extend(c.iter().map(|x| x.max(0.0)));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let direction: Vec<f64> = if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; len]
    };

    let nz = a.len();
    let slack: f64 = direction[nz..hw.n].iter().sum::<f64>() - direction[..nz].iter().sum::<f64>();
    let objective: f64 = hw.entries.iter().zip(&direction).map(|(h, t)| h * t).sum();
    let scale = 1.0 + norm;
    let kkt_residual = [
        (objective - norm).abs() / scale,
        (nu * slack).abs() / scale,
        (-slack).max(0.0),
        (direction.iter().map(|x| x * x).sum::<f64>() - 1.0).max(0.0),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    InnerWidthSolution {
        value: norm,
        multiplier: nu,
        direction,
        kkt_residual,
    }
}

/// Large-n limits (Q₁, Q₂) of the normalized tail sums at a prescribed θ:
/// Q₁ = lim E Σ_{c_w}^{(1−β)n} h_i / n and
/// Q₂ = lim E Σ_{c_w+1}^{n+k} h_i² / n, which includes βd from the support.
pub fn tail_sum_limits(theta: f64, beta: f64, d: usize) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain("tail_sum_limits", format!("beta must lie in [0, 1), got {beta}")));
    }
    if !(theta >= beta && theta <= 1.0) {
        return Err(Error::domain(
            "tail_sum_limits",
            format!("theta must lie in [beta, 1] = [{beta}, 1], got {theta}"),
        ));
    }
    let model = TailModel::new(d, true)?;
    let (_, state) = model.state_at_theta(theta, beta)?;
    Ok((state.first, state.second))
}

/// lim_{n→∞} w(S_w)/√n for the nonnegative block program.
pub fn analytic_width_limit(beta: f64, d: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain("analytic_width_limit", format!("beta must lie in [0, 1), got {beta}")));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let theta = theta_hat(beta, d, true)?.theta_hat;
    let (q1, q2) = tail_sum_limits(theta, beta, d)?;
    Ok((q2 - q1 * q1 / theta).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
    pub empirical_mean: f64,
    pub empirical_stderr: f64,
    pub analytic_limit: f64,
}

/// Monte Carlo estimate of w(S_w)/√n with k = round(βn). Trial i draws
/// from stream i of `seed`, so the result does not depend on scheduling.
pub fn empirical_width(n: usize, beta: f64, d: usize, trials: usize, seed: u64) -> Result<WidthEstimate> {
    if n == 0 || d == 0 || trials == 0 {
        return Err(Error::domain("empirical_width", "n, d and trials must be positive"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain("empirical_width", format!("beta must lie in [0, 1), got {beta}")));
    }
    let k = (beta * n as f64).round() as usize;
    if k > n {
        return Err(Error::Dimension(format!("k = {k} exceeds n = {n}")));
    }
    let root_n = (n as f64).sqrt();
    let values = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial as u64);
            let h: Vec<f64> = (0..d * n).map(|_| rng.sample(StandardNormal)).collect();
            build_hw_plus(&h, n, k, d).map(|hw| inner_width(&hw) / root_n)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / trials as f64;
    let stderr = if trials > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok(WidthEstimate {
        n,
        d,
        beta,
        trials,
        seed,
        empirical_mean: mean,
        empirical_stderr: stderr,
        analytic_limit: analytic_width_limit(beta, d)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn chi_plus_nonnegative() {
        let mut rng = stream_rng(1, 0);
        for d in 1..6 {
            for _ in 0..100 {
                assert!(sample_chi_plus(d, &mut rng) >= 0.0);
            }
        }
    }

    #[test]
    fn build_without_support_is_sorted_norms() {
        let h = [1.0, -2.0, 0.5, 3.0, -1.0, -1.0];
        let hw = build_hw_plus(&h, 3, 0, 2).unwrap();
        assert_eq!(hw.entries, vec![0.0, 1.0, (0.25f64 + 9.0).sqrt()]);
    }

    #[test]
    fn build_full_support_d1() {
        let h = [0.3, -1.2, 2.0];
        let hw = build_hw_plus(&h, 3, 3, 1).unwrap();
        assert_eq!(hw.entries, vec![-0.3, 1.2, -2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn build_hand_example() {
        let hw = build_hw_plus(&[1.0, -1.0, 2.0, 3.0], 2, 1, 2).unwrap();
        assert_eq!(hw.entries, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn build_dimension_errors() {
        assert!(build_hw_plus(&[1.0; 5], 3, 1, 2).is_err());
        assert!(build_hw_plus(&[1.0; 6], 3, 4, 2).is_err());
    }

    #[test]
    fn width_zero_without_support() {
        let hw = build_hw_plus(&[1.0, 2.0, 3.0, 4.0], 2, 0, 2).unwrap();
        assert_eq!(inner_width(&hw), 0.0);
    }

    #[test]
    fn width_zero_for_equal_negative_heads() {
        let hw = HwPlusVector {
            entries: vec![0.0, 0.0, -1.0, -1.0, 0.0, 0.0],
            n: 4,
            k: 2,
            d: 2,
        };
        assert_eq!(inner_width(&hw), 0.0);
    }

    #[test]
    fn support_heads_are_sign_free() {
        // t̄ on the heads only needs a nonnegative sum, so unequal negative
        // heads still give a positive width: (−1, −0.5) → √(1/8).
        let hw = HwPlusVector {
            entries: vec![0.0, 0.0, -1.0, -0.5, 0.0, 0.0],
            n: 4,
            k: 2,
            d: 2,
        };
        assert!((inner_width(&hw) - 0.125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn width_matches_sphere_grid_search() {
        let hw = HwPlusVector {
            entries: vec![1.0, -2.0, 3.0],
            n: 2,
            k: 1,
            d: 2,
        };
        // The optimum is either 0 or attained on the unit sphere; scan the
        // sphere at 1e-3 angular resolution over the feasible region.
        let mut best: f64 = 0.0;
        let steps_polar = 3142;
        let steps_az = 6284;
        for i in 0..=steps_polar {
            let polar = std::f64::consts::PI * i as f64 / steps_polar as f64;
            for j in 0..steps_az {
                let az = 2.0 * std::f64::consts::PI * j as f64 / steps_az as f64;
                let t = [polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()];
                if t[0] < 0.0 || t[2] < 0.0 || t[1] < t[0] {
                    continue;
                }
                best = best.max(t[0] - 2.0 * t[1] + 3.0 * t[2]);
            }
        }
        let got = inner_width(&hw);
        assert!((got - best).abs() < 1e-2, "{got} vs {best}");
    }

    #[test]
    fn inner_width_kkt_certified() {
        let mut rng = stream_rng(11, 0);
        for (n, k, d) in [(50, 5, 3), (200, 40, 2), (30, 29, 4), (10, 1, 1)] {
            let h: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
            let hw = build_hw_plus(&h, n, k, d).unwrap();
            let sol = solve_inner_width(&hw);
            assert!(sol.kkt_residual <= 1e-8, "{n} {k} {d}: {}", sol.kkt_residual);
            assert!(sol.value >= 0.0);
        }
    }

    #[test]
    fn tail_sums_at_full_theta() {
        let (q1, q2) = tail_sum_limits(1.0, 0.0, 1).unwrap();
        assert!((q1 - 0.5 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        // E max(h, 0)² = 1/2.
        assert!((q2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tail_sums_vanish_at_theta_beta() {
        let (q1, q2) = tail_sum_limits(0.3, 0.3, 4).unwrap();
        assert_eq!(q1, 0.0);
        assert!((q2 - 0.3 * 4.0).abs() < 1e-15);
        let (q1_near, _) = tail_sum_limits(0.3 + 1e-9, 0.3, 4).unwrap();
        assert!(q1_near < 1e-6);
    }

    #[test]
    fn tail_sums_domain() {
        assert!(tail_sum_limits(0.1, 0.2, 3).is_err());
        assert!(tail_sum_limits(1.1, 0.2, 3).is_err());
    }

    #[test]
    fn width_limit_small_beta() {
        assert_eq!(analytic_width_limit(0.0, 3).unwrap(), 0.0);
        for (beta, d) in [(1e-3, 3), (0.2, 4), (0.6, 10)] {
            let w = analytic_width_limit(beta, d).unwrap();
            let a = crate::thresholds::alpha_min(beta, d, true).unwrap();
            assert!((w * w - d as f64 * a).abs() < 1e-9, "{beta} {d}");
        }
    }

    #[test]
    fn empirical_width_is_deterministic() {
        let a = empirical_width(300, 0.2, 3, 1, 99).unwrap();
        let b = empirical_width(300, 0.2, 3, 1, 99).unwrap();
        assert_eq!(a.empirical_mean.to_bits(), b.empirical_mean.to_bits());
        assert_eq!(a.empirical_stderr, 0.0);
    }

    #[test]
    fn empirical_width_zero_beta() {
        let e = empirical_width(100, 0.0, 4, 5, 1).unwrap();
        assert_eq!(e.empirical_mean, 0.0);
        assert_eq!(e.analytic_limit, 0.0);
    }
}
