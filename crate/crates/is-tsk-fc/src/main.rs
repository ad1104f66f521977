//! Thin command-line front end over the library: grid experiments and the
//! rank-based statistical comparison. Exit codes: 0 full success, 2 when some
//! runs errored (partial results written), 1 on argument or I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use is_tsk_fc::dataset::{LabelColumn, Standardization};
use is_tsk_fc::experiment::{self, Algorithm, ExperimentSpec, Metric};

#[derive(Parser)]
#[command(
    name = "is-tsk-fc",
    version,
    about = "Interpretable style TSK fuzzy clustering experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded clustering experiments over a (rules, lambda) grid
    Run(RunArgs),
    /// Rank algorithms across datasets and run the Friedman test
    Stats(StatsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV path (repeat for several datasets)
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Label column, by 0-based index or header name
    #[arg(long = "label-col")]
    label_col: Option<String>,
    /// Algorithm: is-tsk-fc-0, is-tsk-fc-1 or fcm
    #[arg(long = "algo", default_value = "is-tsk-fc-1")]
    algo: String,
    /// Number of clusters K
    #[arg(long = "clusters")]
    clusters: usize,
    /// Rule counts: comma list ("2,5,9") or inclusive range ("2..15")
    #[arg(long = "rules", default_value = "3")]
    rules: String,
    /// Regularization grid: comma list ("0.1,1,10") or decade range ("1e-5..1e5")
    #[arg(long = "lambda", default_value = "1e4")]
    lambda: String,
    /// Width scale of the Gaussian antecedents
    #[arg(long = "h", default_value_t = 1.0)]
    h: f64,
    /// Seeded repetitions per grid cell
    #[arg(long = "repeats", default_value_t = 10)]
    repeats: usize,
    /// Base seed; repeat i uses base + i
    #[arg(long = "seed", default_value_t = 0)]
    seed: u64,
    /// Maximum alternating updates per run
    #[arg(long = "max-updates", default_value_t = 50)]
    max_updates: usize,
    /// Maximum style fixed-point iterations
    #[arg(long = "max-style-iters", default_value_t = 30)]
    max_style_iters: usize,
    /// Style convergence threshold
    #[arg(long = "theta", default_value_t = 1e-3)]
    theta: f64,
    /// Feature scaling: zscore, minmax or none
    #[arg(long = "standardize", default_value = "zscore")]
    standardize: String,
    /// Output directory (summary.csv, runs/, traces/)
    #[arg(long = "out", default_value = "results")]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long = "jobs")]
    jobs: Option<usize>,
    /// Allow antecedent dimensions beyond the 2000 guardrail
    #[arg(long = "force")]
    force: bool,
    /// Skip per-run trace CSVs (objective and decision values)
    #[arg(long = "no-traces")]
    no_traces: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// summary.csv files produced by `run` (two or more algorithms total)
    #[arg(required = true, num_args = 1..)]
    summaries: Vec<PathBuf>,
    /// Metric to rank on: acc or nmi
    #[arg(long = "metric", default_value = "acc")]
    metric: String,
    /// Critical value q_alpha for the Bonferroni-Dunn CD
    /// (the default is the alpha = 0.05 value for nine algorithms)
    #[arg(long = "q-alpha", default_value_t = 2.724)]
    q_alpha: f64,
    /// Output JSON path
    #[arg(long = "out", default_value = "friedman.json")]
    out: PathBuf,
}

fn parse_rules(text: &str) -> Result<Vec<usize>, String> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad rule range start {lo:?}"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad rule range end {hi:?}"))?;
        if lo < 1 || hi < lo {
            return Err(format!("invalid rule range {text:?}"));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad rule count {t:?}"))
        })
        .collect()
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lambda range start {lo:?}"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad lambda range end {hi:?}"))?;
        if !(lo > 0.0) || !(hi >= lo) {
            return Err(format!("invalid lambda range {text:?}"));
        }
        let (e_lo, e_hi) = (lo.log10(), hi.log10());
        let (r_lo, r_hi) = (e_lo.round(), e_hi.round());
        if (e_lo - r_lo).abs() > 1e-9 || (e_hi - r_hi).abs() > 1e-9 {
            return Err(format!(
                "lambda ranges step in powers of ten; {text:?} has non-decade endpoints"
            ));
        }
        return Ok((r_lo as i32..=r_hi as i32)
            .map(|e| 10f64.powi(e))
            .collect());
    }
    text.split(',')
        .map(|t| {
            let v: f64 = t
                .trim()
                .parse()
                .map_err(|_| format!("bad lambda value {t:?}"))?;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(format!("lambda must be positive, got {t:?}"))
            }
        })
        .collect()
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let algorithm: Algorithm = args.algo.parse().map_err(anyhow::Error::msg)?;
    let standardization: Standardization =
        args.standardize.parse().map_err(anyhow::Error::msg)?;
    let label_column = args
        .label_col
        .map(|s| s.parse::<LabelColumn>().expect("infallible"));

    let spec = ExperimentSpec {
        datasets: args.data,
        label_column,
        algorithm,
        clusters: args.clusters,
        rules: parse_rules(&args.rules).map_err(anyhow::Error::msg)?,
        lambdas: parse_lambdas(&args.lambda).map_err(anyhow::Error::msg)?,
        h: args.h,
        repeats: args.repeats,
        base_seed: args.seed,
        max_updates: args.max_updates,
        max_style_iters: args.max_style_iters,
        theta: args.theta,
        standardization,
        out_dir: args.out.clone(),
        jobs: args.jobs,
        force: args.force,
        write_traces: !args.no_traces,
    };

    let outcome = experiment::run_experiment(&spec)?;

    for s in outcome.summaries.iter().filter(|s| s.best) {
        let cell = match (s.rules, s.lambda) {
            (Some(r), Some(l)) => format!(" best cell R={r} lambda={l:e}"),
            _ => String::new(),
        };
        let metrics = match (s.acc_mean, s.acc_std, s.nmi_mean, s.nmi_std) {
            (Some(am), Some(asd), Some(nm), Some(nsd)) => format!(
                " ACC {:.2}\u{00b1}{:.2}% NMI {:.2}\u{00b1}{:.2}%",
                am * 100.0,
                asd * 100.0,
                nm * 100.0,
                nsd * 100.0
            ),
            _ => String::new(),
        };
        println!("{} {}:{cell}{metrics}", s.dataset, s.algorithm);
    }
    let errors: usize = outcome
        .records
        .iter()
        .filter(|r| r.error.is_some())
        .count();
    println!(
        "{} runs ({} failed); results in {}",
        outcome.records.len(),
        errors,
        args.out.display()
    );

    Ok(if outcome.partial() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<ExitCode> {
    let metric: Metric = args.metric.parse().map_err(anyhow::Error::msg)?;
    let report = experiment::stats_from_summaries(&args.summaries, metric, args.q_alpha)?;
    experiment::write_stats_json(&report, &args.out)?;

    println!(
        "Friedman over {} datasets x {} algorithms ({}):",
        report.datasets.len(),
        report.algorithms.len(),
        report.metric
    );
    for (algo, rank) in report.algorithms.iter().zip(&report.avg_ranks) {
        println!("  {algo}: average rank {rank:.2}");
    }
    println!(
        "  chi_sq = {:.4}, F_F = {:.4}, CD(q_alpha = {}) = {:.4}",
        report.chi_sq, report.f_f, args.q_alpha, report.cd
    );
    println!("written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Stats(args) => cmd_stats(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_grids() {
        assert_eq!(parse_rules("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_rules("2,7,9").unwrap(), vec![2, 7, 9]);
        assert!(parse_rules("5..2").is_err());
        assert!(parse_rules("x").is_err());
    }

    #[test]
    fn lambda_grids() {
        let decades = parse_lambdas("1e-2..1e2").unwrap();
        assert_eq!(decades.len(), 5);
        assert!((decades[0] - 0.01).abs() < 1e-15);
        assert!((decades[4] - 100.0).abs() < 1e-12);
        assert_eq!(parse_lambdas("0.5,2").unwrap(), vec![0.5, 2.0]);
        assert!(parse_lambdas("3..30").is_err());
        assert!(parse_lambdas("-1").is_err());
    }
}
