use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockpos::harness::{run_phase_experiment, ExperimentConfig};
use blockpos::recovery::{check_certificate, generate_instance, InstanceMeta};
use blockpos::thresholds::{alpha_grid, threshold_curve, ThresholdQuery, ThresholdVariant};
use blockpos::width::empirical_width;
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

/// Default directory for output files when `--out` is a bare file name or
/// omitted.
const OUT_DIR_ENV: &str = "BLOCKPOS_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "blockpos", version, about = "Weak thresholds and recovery experiments for block-sparse positive vectors")]
struct Cli {
    /// Worker threads for parallel work (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weak threshold β_w for a given α, or the minimal α for a given β.
    #[command(group(ArgGroup::new("target").required(true).args(["alpha", "beta"])))]
    Threshold {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value = "block")]
        variant: ThresholdVariant,
        /// Use the nonnegative model (turns `block` into `block-pos` and
        /// `l1` into `block-pos` with d = 1).
        #[arg(long)]
        positive: bool,
    },
    /// Threshold curve over an α grid.
    Curve {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value = "block-pos")]
        variant: ThresholdVariant,
        /// Number of equally spaced α values in (0, 1].
        #[arg(long, default_value_t = 20, conflicts_with = "alphas")]
        points: usize,
        /// Explicit comma-separated α values.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Monte Carlo width estimate against its large-n limit.
    Width {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded phase-transition experiment.
    #[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
    Phase {
        /// Named preset: desk or paper.
        #[arg(long)]
        preset: Option<String>,
        /// JSON experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Null-space certificate for one seeded instance.
    Certify {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        positive: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl From<blockpos::Error> for CliError {
    fn from(e: blockpos::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| usage(format!("serialization failed: {e}")))
}

fn report_config<T: Serialize>(value: &T) {
    if let Ok(text) = serde_json::to_string(value) {
        eprintln!("config: {text}");
    }
}

/// Resolves `out` against the output-directory variable; relative paths
/// are placed inside it when it is set.
fn resolve_out(out: Option<PathBuf>, default_name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    match (out, dir) {
        (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
        (Some(p), _) => Some(p),
        (None, Some(dir)) => Some(dir.join(default_name)),
        (None, None) => None,
    }
}

fn infer_format(explicit: Option<Format>, out: Option<&Path>, fallback: Format) -> Format {
    explicit
        .or_else(|| {
            out.and_then(|p| p.extension()).and_then(|e| match e.to_str()? {
                "csv" => Some(Format::Csv),
                "json" => Some(Format::Json),
                "svg" => Some(Format::Svg),
                _ => None,
            })
        })
        .unwrap_or(fallback)
}

fn emit(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| usage(format!("cannot create {}: {e}", parent.display())))?;
            }
            fs::write(path, content).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_threshold(alpha: Option<f64>, beta: Option<f64>, d: usize, variant: ThresholdVariant, positive: bool) -> CliResult<()> {
    let (variant, d) = match (variant, positive) {
        (ThresholdVariant::BlockL2L1, true) => (ThresholdVariant::BlockL2L1Positive, d),
        (ThresholdVariant::L1, true) => (ThresholdVariant::BlockL2L1Positive, 1),
        (v, _) => (v, d),
    };
    let query = ThresholdQuery { alpha, beta, d, variant };
    report_config(&json!({"command": "threshold", "alpha": alpha, "beta": beta, "d": d, "variant": variant}));
    let record = query.solve()?;
    let output = match alpha {
        Some(a) => json!({
            "input": {"alpha": a},
            "variant": record.variant,
            "d": record.d,
            "theta_hat": record.theta_hat,
            "beta_w": record.beta,
            "residual": record.residual,
        }),
        None => json!({
            "input": {"beta": record.beta},
            "variant": record.variant,
            "d": record.d,
            "theta_hat": record.theta_hat,
            "alpha_min": record.alpha,
            "residual": record.residual,
        }),
    };
    println!("{}", to_json(&output)?);
    Ok(())
}

fn cmd_curve(
    d: usize,
    variant: ThresholdVariant,
    points: usize,
    alphas: Option<Vec<f64>>,
    out: Option<PathBuf>,
    format: Option<Format>,
) -> CliResult<()> {
    let alphas = alphas.unwrap_or_else(|| alpha_grid(points));
    let out = resolve_out(out, &format!("curve-{}-d{d}.csv", variant.name()));
    let format = infer_format(format, out.as_deref(), Format::Csv);
    report_config(&json!({"command": "curve", "d": d, "variant": variant, "alphas": alphas, "format": format, "out": out}));
    let curve = threshold_curve(&alphas, d, variant)?;
    for f in &curve.failures {
        eprintln!("warning: no threshold at alpha = {}: {}", f.alpha, f.error);
    }
    let text = match format {
        Format::Csv => curve.to_csv(),
        Format::Json => to_json(&curve)? + "\n",
        Format::Svg => return Err(usage("curve supports csv and json output")),
    };
    emit(out.as_deref(), &text)
}

fn cmd_width(n: usize, beta: f64, d: usize, trials: usize, seed: u64, out: Option<PathBuf>) -> CliResult<()> {
    let out = resolve_out(out, &format!("width-n{n}-d{d}.json"));
    report_config(&json!({"command": "width", "n": n, "beta": beta, "d": d, "trials": trials, "seed": seed, "out": out}));
    let estimate = empirical_width(n, beta, d, trials, seed)?;
    emit(out.as_deref(), &(to_json(&estimate)? + "\n"))
}

fn cmd_phase(
    preset: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<Format>,
) -> CliResult<()> {
    let mut cfg = match (preset, config) {
        (Some(name), None) => ExperimentConfig::preset(&name, seed.unwrap_or(0))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        _ => return Err(usage("exactly one of --preset and --config is required")),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let label = if cfg.name.is_empty() { "custom" } else { cfg.name.as_str() };
    let out = resolve_out(out, &format!("phase-{label}-{}.csv", cfg.master_seed));
    let format = infer_format(format, out.as_deref(), Format::Csv);
    report_config(&json!({"command": "phase", "format": format, "out": out, "experiment": cfg}));

    let diagram = run_phase_experiment(&cfg)?;
    let text = match format {
        Format::Csv => diagram.to_csv(),
        Format::Json => diagram.to_json()? + "\n",
        Format::Svg => diagram.to_svg(),
    };
    emit(out.as_deref(), &text)?;

    for cell in diagram.cells.iter().filter(|c| c.solver_failures > 0) {
        eprintln!(
            "warning: cell m={} k={} had {} solver failures ({})",
            cell.m,
            cell.k,
            cell.solver_failures,
            cell.flag()
        );
    }
    for gap in &diagram.transition_gaps {
        eprintln!("warning: no 50% crossing at m={}: {}", gap.m, gap.reason);
    }
    // The comparison goes to stdout only when the diagram went to a file.
    if out.is_some() {
        let summary = json!({
            "theory_variant": diagram.theory_variant,
            "comparison": diagram.comparison,
            "max_abs_deviation": diagram.max_abs_deviation,
        });
        println!("{}", to_json(&summary)?);
    }
    Ok(())
}

fn cmd_certify(n: usize, m: usize, k: usize, d: usize, seed: u64, positive: bool) -> CliResult<()> {
    let meta = InstanceMeta { n, m, k, d, positive, seed };
    report_config(&json!({"command": "certify", "instance": meta}));
    let instance = generate_instance(n, m, k, d, positive, seed)?;
    let report = check_certificate(&instance, positive)?;
    println!("{}", to_json(&json!({"instance": meta, "certificate": report}))?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Threshold {
            alpha,
            beta,
            d,
            variant,
            positive,
        } => cmd_threshold(alpha, beta, d, variant, positive),
        Command::Curve {
            d,
            variant,
            points,
            alphas,
            out,
            format,
        } => cmd_curve(d, variant, points, alphas, out, format),
        Command::Width {
            n,
            beta,
            d,
            trials,
            seed,
            out,
        } => cmd_width(n, beta, d, trials, seed, out),
        Command::Phase {
            preset,
            config,
            seed,
            out,
            format,
        } => cmd_phase(preset, config, seed, out, format),
        Command::Certify {
            n,
            m,
            k,
            d,
            seed,
            positive,
        } => cmd_certify(n, m, k, d, seed, positive),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_errors_map_to_exit_three() {
        let e = blockpos::Error::NoRoot {
            op: "weak_beta",
            detail: "no sign change".into(),
        };
        assert!(matches!(CliError::from(e), CliError::Numerical(_)));
        let e = blockpos::Error::Config("bad".into());
        assert!(matches!(CliError::from(e), CliError::Usage(_)));
    }

    #[test]
    fn format_inference() {
        assert_eq!(infer_format(None, Some(Path::new("a/b.svg")), Format::Csv), Format::Svg);
        assert_eq!(infer_format(Some(Format::Json), Some(Path::new("b.svg")), Format::Csv), Format::Json);
        assert_eq!(infer_format(None, Some(Path::new("b.txt")), Format::Csv), Format::Csv);
        assert_eq!(infer_format(None, None, Format::Json), Format::Json);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
