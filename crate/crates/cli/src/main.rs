//! `faircert`: certify a ReLU classifier as causally fair over an input region,
//! or report where it is biased.
//!
//! Exit status: 0 fair over the covered space, 1 bias found, 2 usage or
//! input error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use faircert_core::analyze::AnalysisConfig;
use faircert_core::numeric::parse_rational;
use faircert_core::{
    analyze, analyze_from, build_report, emit_report, parse_model, parse_query, parse_resume, parse_spec, BudgetConfig,
    Domain, Query, Rational,
};

#[derive(Parser, Debug)]
#[command(name = "faircert", version, about = "Exact causal-fairness certification of ReLU classifiers")]
struct Cli {
    /// Network model file.
    #[arg(long)]
    model: PathBuf,
    /// Input specification file.
    #[arg(long)]
    spec: PathBuf,
    /// Region of interest; the whole input space when omitted.
    #[arg(long, conflicts_with = "resume")]
    query: Option<PathBuf>,
    /// Earlier report whose excluded partitions seed this run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "symbolic")]
    domain: Domain,
    /// Smallest width a continuous dimension may be halved to (L).
    #[arg(long, default_value = "0", value_parser = parse_lower)]
    lower: Rational,
    /// Most ReLUs left unknown in a partition handed to the backward analysis
    /// (U). Defaults to min(hidden nodes, 10).
    #[arg(long)]
    upper: Option<usize>,
    /// Cap on the number of halvings along any path of the split tree.
    #[arg(long, default_value_t = BudgetConfig::DEFAULT_MAX_DEPTH)]
    max_depth: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    workers: u16,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seconds after which still-queued partitions are excluded.
    #[arg(long)]
    timeout: Option<u64>,
}

fn parse_lower(s: &str) -> Result<Rational, String> {
    match parse_rational(s) {
        Some(r) if r >= Rational::from_integer(0.into()) => Ok(r),
        Some(_) => Err("must not be negative".into()),
        None => Err(format!("`{s}` is not a rational number")),
    }
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<bool, String> {
    let model = parse_model(&read(&cli.model)?).map_err(|e| format!("{}: {e}", cli.model.display()))?;
    let spec = parse_spec(&read(&cli.spec)?).map_err(|e| format!("{}: {e}", cli.spec.display()))?;
    let hidden = model.hidden_count();
    let upper = cli.upper.unwrap_or(hidden.min(10));
    if upper > hidden {
        return Err(format!("--upper {upper} exceeds the {hidden} hidden nodes of the model"));
    }
    let config = AnalysisConfig {
        domain: cli.domain,
        budget: BudgetConfig { lower: cli.lower, upper, max_depth: cli.max_depth },
        timeout: cli.timeout.map(Duration::from_secs),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers.into()).build().map_err(|e| e.to_string())?;
    let analysis = pool.install(|| match (&cli.query, &cli.resume) {
        (Some(q), _) => {
            let query = parse_query(&read(q)?, &spec).map_err(|e| format!("{}: {e}", q.display()))?;
            analyze(&model, &spec, &query, &config).map_err(|e| e.to_string())
        }
        (None, Some(r)) => {
            let roots = parse_resume(&read(r)?, &spec).map_err(|e| format!("{}: {e}", r.display()))?;
            analyze_from(&model, &spec, roots, &config).map_err(|e| e.to_string())
        }
        (None, None) => analyze(&model, &spec, &Query::default(), &config).map_err(|e| e.to_string()),
    })?;
    let text = emit_report(&build_report(&analysis, &spec, &config));
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(analysis.is_biased())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("faircert: {msg}");
            ExitCode::from(2)
        }
    }
}
