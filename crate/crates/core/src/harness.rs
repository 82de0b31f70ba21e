//! Seeded Monte Carlo phase experiments over an (m, k) grid, extraction of
//! the empirical 50% success contour and comparison with the weak threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::{generate_instance, recover, Program, SolverConfig};
use crate::rng::derive_seed;
use crate::thresholds::{threshold_curve, weak_beta, ThresholdVariant};

pub const SCHEMA_VERSION: u32 = 1;

/// A cell with more than this fraction of solver failures is invalid.
pub const MAX_SOLVER_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub m_values: Vec<usize>,
    pub k_values_per_m: BTreeMap<usize, Vec<usize>>,
    pub trials: usize,
    pub program: Program,
    pub positive: bool,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Per-m replacement for n.
    #[serde(default)]
    pub n_overrides: BTreeMap<usize, usize>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ExperimentConfig {
    /// n = 40, d = 5, m ∈ {8, 16, 24, 32, 36}, 50 trials of the nonnegative
    /// block program. Small enough to run in CI.
    pub fn desk(master_seed: u64) -> Result<Self> {
        let (n, d) = (40, 5);
        let m_values = vec![8, 16, 24, 32, 36];
        let k_values_per_m = theory_windows(&m_values, &BTreeMap::new(), n, d, 8)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            name: "desk".into(),
            n,
            d,
            m_values,
            k_values_per_m,
            trials: 50,
            program: Program::L2L1Pos,
            positive: true,
            master_seed,
            solver: SolverConfig::default(),
            n_overrides: BTreeMap::new(),
            notes: vec!["k grids span ±8 blocks around the theoretical crossing".into()],
        })
    }

    /// n = 100, d = 15, m = 15, 20, 30, …, 90, 99 with 100 trials. Takes
    /// hours.
    pub fn paper(master_seed: u64) -> Result<Self> {
        let (n, d) = (100, 15);
        let mut m_values = vec![15, 20];
        m_values.extend((30..=90).step_by(10));
        m_values.push(99);
        let n_overrides = BTreeMap::from([(15, 150)]);
        let k_values_per_m = theory_windows(&m_values, &n_overrides, n, d, 10)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            name: "paper".into(),
            n,
            d,
            m_values,
            k_values_per_m,
            trials: 100,
            program: Program::L2L1Pos,
            positive: true,
            master_seed,
            solver: SolverConfig::default(),
            n_overrides,
            notes: vec![
                "m = 15 is run at n = 150 (alpha = 0.1); the pairing of n = 150 with m values is not stated, this is the literal reading".into(),
                "k grids span ±10 blocks around the theoretical crossing".into(),
            ],
        })
    }

    pub fn preset(name: &str, master_seed: u64) -> Result<Self> {
        match name {
            "desk" => Self::desk(master_seed),
            "paper" => Self::paper(master_seed),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected desk or paper)"))),
        }
    }

    pub fn n_for(&self, m: usize) -> usize {
        self.n_overrides.get(&m).copied().unwrap_or(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n == 0 || self.d == 0 || self.trials == 0 {
            return Err(Error::Config("n, d and trials must be positive".into()));
        }
        if self.m_values.is_empty() {
            return Err(Error::Config("m_values is empty".into()));
        }
        if self.program.is_positive() != self.positive {
            return Err(Error::Config(format!(
                "program {} does not match positive = {}",
                self.program, self.positive
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &m in &self.m_values {
            if !seen.insert(m) {
                return Err(Error::Config(format!("m = {m} listed twice")));
            }
            let n = self.n_for(m);
            if m == 0 || m > n {
                return Err(Error::Config(format!("m = {m} must lie in [1, n = {n}]")));
            }
            let ks = self
                .k_values_per_m
                .get(&m)
                .ok_or_else(|| Error::Config(format!("no k values for m = {m}")))?;
            if ks.is_empty() {
                return Err(Error::Config(format!("empty k list for m = {m}")));
            }
            if let Some(k) = ks.iter().find(|k| **k > n) {
                return Err(Error::Config(format!("k = {k} exceeds n = {n} at m = {m}")));
            }
        }
        self.solver.validate()
    }

    /// Threshold variant and block length that model `program`.
    pub fn theory_model(&self) -> (ThresholdVariant, usize) {
        theory_model(self.program, self.d)
    }
}

pub fn theory_model(program: Program, d: usize) -> (ThresholdVariant, usize) {
    match program {
        Program::L1 => (ThresholdVariant::L1, 1),
        Program::L1Pos => (ThresholdVariant::BlockL2L1Positive, 1),
        Program::L2L1 => (ThresholdVariant::BlockL2L1, d),
        Program::L2L1Pos => (ThresholdVariant::BlockL2L1Positive, d),
    }
}

fn theory_windows(
    m_values: &[usize],
    overrides: &BTreeMap<usize, usize>,
    n: usize,
    d: usize,
    half_width: usize,
) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for &m in m_values {
        let n_m = overrides.get(&m).copied().unwrap_or(n);
        let beta = weak_beta(m as f64 / n_m as f64, d, ThresholdVariant::BlockL2L1Positive)?;
        let center = (beta * n_m as f64).round() as usize;
        let lo = center.saturating_sub(half_width).max(1);
        let hi = (center + half_width).min(m).min(n_m);
        out.insert(m, (lo..=hi).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Failure,
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub successes: usize,
    pub failures: usize,
    pub solver_failures: usize,
    pub trials: usize,
}

impl Cell {
    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn beta(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// Successes over trials whose solve completed.
    pub fn success_rate(&self) -> f64 {
        let valid = self.successes + self.failures;
        if valid == 0 {
            f64::NAN
        } else {
            self.successes as f64 / valid as f64
        }
    }

    pub fn invalid(&self) -> bool {
        self.solver_failures as f64 > MAX_SOLVER_FAILURE_FRACTION * self.trials as f64
    }

    pub fn flag(&self) -> &'static str {
        if self.invalid() {
            "invalid"
        } else if self.solver_failures > 0 {
            "solver-failures"
        } else {
            "ok"
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPoint {
    pub m: usize,
    pub alpha: f64,
    pub beta_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionGap {
    pub m: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub alpha: f64,
    pub beta_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alpha: f64,
    pub beta_half: f64,
    pub beta_w: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub transition: Vec<TransitionPoint>,
    /// m values whose k grid never straddles 50% success.
    pub transition_gaps: Vec<TransitionGap>,
    pub theory_variant: ThresholdVariant,
    pub theory: Vec<TheoryPoint>,
    pub comparison: Vec<Comparison>,
    pub max_abs_deviation: Option<f64>,
}

/// Seed of one trial; the only randomness a trial sees.
pub fn trial_seed(master_seed: u64, m: usize, k: usize, trial: usize) -> u64 {
    derive_seed(&[master_seed, m as u64, k as u64, trial as u64])
}

pub fn run_trial(config: &ExperimentConfig, m: usize, k: usize, trial: usize) -> Outcome {
    let seed = trial_seed(config.master_seed, m, k, trial);
    let result = generate_instance(config.n_for(m), m, k, config.d, config.positive, seed)
        .and_then(|inst| recover(&inst, config.program, &config.solver));
    match result {
        Ok(r) if r.success => Outcome::Success,
        Ok(_) => Outcome::Failure,
        Err(_) => Outcome::SolverFailure,
    }
}

fn tally(m: usize, k: usize, n: usize, outcomes: &[Outcome]) -> Cell {
    let count = |o: Outcome| outcomes.iter().filter(|x| **x == o).count();
    Cell {
        m,
        k,
        n,
        successes: count(Outcome::Success),
        failures: count(Outcome::Failure),
        solver_failures: count(Outcome::SolverFailure),
        trials: outcomes.len(),
    }
}

/// Runs every trial of a single (m, k) cell.
pub fn run_cell(config: &ExperimentConfig, m: usize, k: usize) -> Cell {
    let outcomes: Vec<Outcome> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, m, k, t))
        .collect();
    tally(m, k, config.n_for(m), &outcomes)
}

/// Runs the experiment on the current rayon pool.
pub fn run_phase_experiment(config: &ExperimentConfig) -> Result<PhaseDiagram> {
    config.validate()?;
    let tasks: Vec<(usize, usize, usize)> = config
        .m_values
        .iter()
        .flat_map(|&m| {
            config.k_values_per_m[&m]
                .iter()
                .flat_map(move |&k| (0..config.trials).map(move |t| (m, k, t)))
        })
        .collect();
    let outcomes: Vec<Outcome> = tasks
        .par_iter()
        .map(|&(m, k, t)| run_trial(config, m, k, t))
        .collect();
    let cells: Vec<Cell> = tasks
        .chunks(config.trials)
        .zip(outcomes.chunks(config.trials))
        .map(|(task, out)| tally(task[0].0, task[0].1, config.n_for(task[0].0), out))
        .collect();

    let (variant, d_model) = config.theory_model();
    let mut alphas: Vec<f64> = config.m_values.iter().map(|&m| m as f64 / config.n_for(m) as f64).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let curve = threshold_curve(&alphas, d_model, variant)?;
    let theory = curve
        .points
        .iter()
        .map(|p| TheoryPoint {
            alpha: p.alpha,
            beta_w: p.beta_w,
        })
        .collect();

    let mut diagram = PhaseDiagram {
        config: config.clone(),
        cells,
        transition: Vec::new(),
        transition_gaps: Vec::new(),
        theory_variant: variant,
        theory,
        comparison: Vec::new(),
        max_abs_deviation: None,
    };
    let (transition, gaps) = empirical_transition(&diagram);
    diagram.transition = transition;
    diagram.transition_gaps = gaps;
    diagram.comparison = compare_to_theory(&diagram, variant)?;
    diagram.max_abs_deviation = max_abs_deviation(&diagram.comparison);
    Ok(diagram)
}

/// Runs the experiment on a dedicated pool of `threads` workers. Results do
/// not depend on the thread count.
pub fn run_phase_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<PhaseDiagram> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_phase_experiment(config))
}

/// First downward crossing of 50% success per m, linearly interpolated in k.
/// Invalid cells are skipped.
pub fn empirical_transition(diagram: &PhaseDiagram) -> (Vec<TransitionPoint>, Vec<TransitionGap>) {
    let mut by_m: BTreeMap<usize, Vec<&Cell>> = BTreeMap::new();
    for c in diagram.cells.iter().filter(|c| !c.invalid()) {
        by_m.entry(c.m).or_default().push(c);
    }
    let mut points = Vec::new();
    let mut gaps = Vec::new();
    for &m in &diagram.config.m_values {
        let Some(cells) = by_m.get_mut(&m) else {
            gaps.push(TransitionGap {
                m,
                reason: "no valid cells".into(),
            });
            continue;
        };
        cells.sort_by_key(|c| c.k);
        let n = cells[0].n;
        let crossing = cells.windows(2).find_map(|w| {
            let (r0, r1) = (w[0].success_rate(), w[1].success_rate());
            (r0 >= 0.5 && r1 < 0.5).then(|| {
                let (k0, k1) = (w[0].k as f64, w[1].k as f64);
                k0 + (r0 - 0.5) / (r0 - r1) * (k1 - k0)
            })
        });
        match crossing {
            Some(k_cross) => points.push(TransitionPoint {
                m,
                alpha: m as f64 / n as f64,
                beta_half: k_cross / n as f64,
            }),
            None => gaps.push(TransitionGap {
                m,
                reason: "success rate never crosses 0.5 on the k grid".into(),
            }),
        }
    }
    points.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    (points, gaps)
}

/// β_half − β_w at every transition point.
pub fn compare_to_theory(diagram: &PhaseDiagram, variant: ThresholdVariant) -> Result<Vec<Comparison>> {
    if diagram.transition.is_empty() {
        return Ok(Vec::new());
    }
    let d = if diagram.config.program.group_len(diagram.config.d) == 1 {
        1
    } else {
        diagram.config.d
    };
    let alphas: Vec<f64> = diagram.transition.iter().map(|t| t.alpha).collect();
    let curve = threshold_curve(&alphas, d, variant)?;
    if let Some(f) = curve.failures.first() {
        return Err(Error::no_root("compare_to_theory", format!("alpha {}: {}", f.alpha, f.error)));
    }
    Ok(diagram
        .transition
        .iter()
        .zip(&curve.points)
        .map(|(t, p)| Comparison {
            alpha: t.alpha,
            beta_half: t.beta_half,
            beta_w: p.beta_w,
            deviation: t.beta_half - p.beta_w,
        })
        .collect())
}

pub fn max_abs_deviation(comparison: &[Comparison]) -> Option<f64> {
    comparison.iter().map(|c| c.deviation.abs()).reduce(f64::max)
}

/// Adjacent-pair monotonicity check: counts pairs where the success rate
/// moves against `direction` by more than 2√trials/trials. Returns
/// (violations, pairs). `along_k` compares neighbours in k at fixed m
/// (rates should not increase); otherwise neighbours in m at fixed k (rates
/// should not decrease).
pub fn monotonicity_violations(diagram: &PhaseDiagram, along_k: bool) -> (usize, usize) {
    let mut groups: BTreeMap<usize, Vec<&Cell>> = BTreeMap::new();
    for c in diagram.cells.iter().filter(|c| !c.invalid()) {
        groups.entry(if along_k { c.m } else { c.k }).or_default().push(c);
    }
    let slack = 2.0 * (diagram.config.trials as f64).sqrt() / diagram.config.trials as f64;
    let (mut bad, mut pairs) = (0, 0);
    for cells in groups.values_mut() {
        cells.sort_by_key(|c| if along_k { c.k } else { c.m });
        for w in cells.windows(2) {
            pairs += 1;
            let step = w[1].success_rate() - w[0].success_rate();
            let against = if along_k { step } else { -step };
            if against > slack {
                bad += 1;
            }
        }
    }
    (bad, pairs)
}

impl PhaseDiagram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,k,alpha,beta,successes,trials,success_rate,flag\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{:.6},{}",
                c.m,
                c.k,
                c.alpha(),
                c.beta(),
                c.successes,
                c.trials,
                c.success_rate(),
                c.flag()
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("serialization failed: {e}")))
    }

    /// Heat map of success rates on the (α, β) square with the theoretical
    /// curve on top.
    pub fn to_svg(&self) -> String {
        const SIZE: f64 = 480.0;
        const PAD: f64 = 40.0;
        let px = |alpha: f64| PAD + alpha * SIZE;
        let py = |beta: f64| PAD + (1.0 - beta) * SIZE;
        let total = SIZE + 2.0 * PAD;

        let mut alphas: Vec<f64> = self.cells.iter().map(Cell::alpha).collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let cell_w = alphas
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
            .min(0.1);
        let cell_w = if cell_w.is_finite() { cell_w } else { 0.1 };

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
        );
        let _ = writeln!(
            out,
            r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
        );
        out.push_str("<g id=\"heatmap\">\n");
        for c in &self.cells {
            let rate = c.success_rate();
            let shade = if rate.is_finite() { (255.0 * rate).round() as u8 } else { 128 };
            let h = 1.0 / c.n as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},{shade})"><title>m={} k={} rate={:.3}</title></rect>"#,
                px(c.alpha() - cell_w / 2.0),
                py(c.beta() + h / 2.0),
                cell_w * SIZE,
                h * SIZE,
                c.m,
                c.k,
                rate
            );
        }
        out.push_str("</g>\n");
        let points: Vec<String> = self
            .theory
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.alpha), py(p.beta_w)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline id="theory" points="{}" fill="none" stroke="red" stroke-width="2"/>"#,
            points.join(" ")
        );
        out.push_str("<g id=\"transition\">\n");
        for t in &self.transition {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="blue"/>"#,
                px(t.alpha),
                py(t.beta_half)
            );
        }
        out.push_str("</g>\n");
        let _ = writeln!(
            out,
            r#"<text x="{:.0}" y="{:.0}" text-anchor="middle">alpha = m/n</text>"#,
            PAD + SIZE / 2.0,
            total - 8.0
        );
        let _ = writeln!(
            out,
            r#"<text x="12" y="{:.0}" transform="rotate(-90 12 {:.0})" text-anchor="middle">beta = k/n</text>"#,
            PAD + SIZE / 2.0,
            PAD + SIZE / 2.0
        );
        out.push_str("</svg>\n");
        out
    }
}
