//! `sip`: run one study and write `<study>.csv` and `<study>.json`.
//!
//! Exit status: 0 when every asserted statistic passes, 2 when any fails,
//! 1 on a configuration or runtime error (no report files are written).

use std::fs;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sip_core::experiments::{parse_config, run_study, ExperimentConfig, Report, Study};

#[derive(Parser, Debug)]
#[command(name = "sip", version, about = "Symmetric inclusion process studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact and Monte Carlo self-duality.
    SelfDuality(Common),
    /// Duality moments under the stationary product measure.
    Stationarity(Common),
    /// Two-stage coupling success across horizons.
    Coupling(Common),
    /// Growth of the SIP/IRW coupling distance.
    OrDistance(Common),
    /// Convergence of duality moments from a non-invariant start.
    Convergence(Common),
    /// Mixture correlation inequality.
    Correlation(Common),
    /// Exact factorization of stationary moments.
    Factorization(Common),
    /// Exact oracle self-checks; runs without a config file.
    OracleCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration; the built-in preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<NonZeroUsize>,
}

impl Command {
    fn split(self) -> (Study, Common) {
        match self {
            Command::SelfDuality(c) => (Study::SelfDuality, c),
            Command::Stationarity(c) => (Study::Stationarity, c),
            Command::Coupling(c) => (Study::Coupling, c),
            Command::OrDistance(c) => (Study::OrDistance, c),
            Command::Convergence(c) => (Study::Convergence, c),
            Command::Correlation(c) => (Study::Correlation, c),
            Command::Factorization(c) => (Study::Factorization, c),
            Command::OracleCheck(c) => (Study::OracleCheck, c),
        }
    }
}

fn load(study: Study, common: &Common) -> Result<ExperimentConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config(&text, study).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::preset(study),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("report");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_report(report: &Report, out: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out)?;
    let csv = out.join(format!("{}.csv", report.study));
    let json = out.join(format!("{}.json", report.study));
    write_atomic(&csv, &report.to_csv())?;
    write_atomic(&json, &report.summary_json())?;
    Ok((csv, json))
}

fn run(study: Study, common: Common) -> Result<bool, String> {
    let cfg = load(study, &common)?;
    let workers = common
        .workers
        .or_else(|| std::thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get);
    let report = run_study(&cfg, workers).map_err(|e| format!("{study}: {e}"))?;
    let (csv, _) = write_report(&report, &common.out).map_err(|e| format!("writing report: {e}"))?;
    for row in report.failures() {
        eprintln!("FAIL {} estimate={} stderr={}", row.statistic, row.estimate, row.stderr);
    }
    eprintln!(
        "{study}: {} ({} rows, {} ms) -> {}",
        if report.pass() { "pass" } else { "FAIL" },
        report.rows.len(),
        report.wall_ms,
        csv.display()
    );
    Ok(report.pass())
}

fn main() -> ExitCode {
    let (study, common) = Cli::parse().command.split();
    match run(study, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
