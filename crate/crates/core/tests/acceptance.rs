//! Acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary so the verdict lines are always printed. A criterion
//! fails if its check fails or it overruns its time budget. The exit status is
//! non-zero on failure only when `SIP_ACCEPTANCE_STRICT=1` is set.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use sip_core::dynamics::SipParams;
use sip_core::experiments::{
    run_convergence, run_correlation_inequality, run_coupling_success, run_factorization, run_or_distance,
    run_stationarity, run_study, state_distribution_check, ExperimentConfig, Report, Study,
};
use sip_core::measures::detailed_balance_ratio;
use sip_core::oracle::{exact_dual_expectation, DEFAULT_STATE_CAP};
use sip_core::{derive_stream, site, Geometry, Occupation, ParticleList};

struct Verdict {
    pass: bool,
    detail: String,
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn from_report(report: &Report, headline: &[&str]) -> Verdict {
    let mut parts: Vec<String> = headline
        .iter()
        .filter_map(|name| report.row(name))
        .map(|r| format!("{}={:.6}±{:.2e}", r.statistic, r.estimate, r.stderr))
        .collect();
    for r in report.failures() {
        parts.push(format!("FAILED {}={} (stderr {})", r.statistic, r.estimate, r.stderr));
    }
    Verdict {
        pass: report.pass(),
        detail: parts.join(" "),
    }
}

fn exact_self_duality() -> Verdict {
    let p = SipParams::new(2.0f64, Geometry::torus(1, 5).unwrap()).unwrap();
    let xi = ParticleList::on_line(&[0, 2]);
    let eta = Occupation::from_counts([(site(&[0]), 2), (site(&[3]), 1)]);
    let mut worst = 0.0f64;
    for t in [0.5, 1.0, 2.0] {
        let (l, r) = exact_dual_expectation(&xi, &eta, t, &p, DEFAULT_STATE_CAP).unwrap();
        worst = worst.max((l - r).abs());
    }
    Verdict {
        pass: worst <= 1e-8,
        detail: format!("max gap {worst:.3e} (limit 1e-8)"),
    }
}

fn reversibility() -> Verdict {
    let mut s = derive_stream(2024, 0);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let a = 1 + s.below(20) as u64;
        let b = s.below(21) as u64;
        let lambda = 0.95 * s.uniform_open();
        let m = 0.1 + 7.9 * s.uniform_open();
        let r = detailed_balance_ratio(a, b, lambda, m).unwrap();
        worst = worst.max((r - 1.0).abs());
    }
    Verdict {
        pass: worst <= 1e-12,
        detail: format!("max |ratio − 1| = {worst:.3e} over 500 points"),
    }
}

fn stationary_moments() -> Verdict {
    let cfg = ExperimentConfig::preset(Study::Stationarity);
    let report = run_stationarity(&cfg, workers()).unwrap();
    from_report(&report, &["direct_n=1_t=1", "direct_n=2_t=1", "direct_n=3_t=1"])
}

fn simulation_vs_oracle() -> Verdict {
    let p = SipParams::new(2.0, Geometry::torus(1, 5).unwrap()).unwrap();
    let start = ParticleList::on_line(&[0, 1]);
    let rows = state_distribution_check(&start, &p, 1.0, 100_000, 4, workers(), DEFAULT_STATE_CAP).unwrap();
    let worst = rows
        .iter()
        .map(|(exact, est)| if est.stderr > 0.0 { (est.mean - exact).abs() / est.stderr } else { 0.0 })
        .fold(0.0f64, f64::max);
    let pass = rows.iter().all(|(exact, est)| (est.mean - exact).abs() <= 3.0 * est.stderr);
    Verdict {
        pass,
        detail: format!("{} states, worst deviation {worst:.2}σ", rows.len()),
    }
}

fn coupling_success() -> Verdict {
    let cfg = ExperimentConfig::preset(Study::Coupling);
    let report = run_coupling_success(&cfg, workers()).unwrap();
    from_report(
        &report,
        &["success_t=100", "success_t=1000", "success_t=10000", "endpoint_separation", "iterated_success"],
    )
}

fn or_distance() -> Verdict {
    let cfg = ExperimentConfig::preset(Study::OrDistance);
    let report = run_or_distance(&cfg, workers()).unwrap();
    from_report(
        &report,
        &["normalized_t=100", "normalized_t=1000", "normalized_t=10000", "endpoint_separation"],
    )
}

fn convergence() -> Verdict {
    let cfg = ExperimentConfig::preset(Study::Convergence);
    let report = run_convergence(&cfg, workers()).unwrap();
    from_report(&report, &["transform_n=2_t=1", "transform_n=2_t=10", "transform_n=2_t=100"])
}

fn correlation() -> Verdict {
    let mut cfg = ExperimentConfig::preset(Study::Correlation);
    cfg.sizes = vec![2];
    let report = run_correlation_inequality(&cfg, workers()).unwrap();
    let lhs = report.row("lhs_closed_n=2").unwrap().estimate;
    let rhs = report.row("rhs_closed_n=2").unwrap().estimate;
    let mut v = from_report(&report, &["lhs_sampled_n=2", "rhs_sampled_n=2"]);
    v.pass &= (lhs - 1.15625).abs() < 1e-12 && (rhs - 0.765625).abs() < 1e-12 && lhs > rhs;
    v.detail = format!("closed lhs={lhs} rhs={rhs} {}", v.detail);
    v
}

fn factorization() -> Verdict {
    let mut cfg = ExperimentConfig::preset(Study::Factorization);
    cfg.eta = None;
    let report = run_factorization(&cfg).unwrap();
    from_report(&report, &["spread_n=2", "factor_1+2"])
}

fn determinism() -> Verdict {
    let mut mismatches = Vec::new();
    for study in Study::ALL {
        let mut cfg = ExperimentConfig::preset(study);
        cfg.replicas = 100;
        cfg.seed = 99;
        match study {
            Study::Coupling => {
                cfg.times = vec![20.0, 40.0];
                cfg.schedule_start = 20.0;
                cfg.schedule_doublings = 2;
            }
            Study::OrDistance => cfg.times = vec![10.0, 100.0],
            Study::Convergence => cfg.times = vec![1.0, 5.0],
            _ => {}
        }
        let one = run_study(&cfg, 1).unwrap().to_csv();
        let eight = run_study(&cfg, 8).unwrap().to_csv();
        if one != eight {
            mismatches.push(study.name());
        }
    }
    Verdict {
        pass: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            format!("{} studies byte-identical at 1 and 8 workers", Study::ALL.len())
        } else {
            format!("differing: {}", mismatches.join(", "))
        },
    }
}

/// Name, time budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 exact self-duality", 5, exact_self_duality),
        ("2 reversibility of product measures", 1, reversibility),
        ("3 stationary moments", 120, stationary_moments),
        ("4 simulation vs oracle", 120, simulation_vs_oracle),
        ("5 coupling success", 600, coupling_success),
        ("6 SIP/IRW coupling distance", 600, or_distance),
        ("7 convergence to the product measure", 300, convergence),
        ("8 correlation inequality", 60, correlation),
        ("9 factorization", 1, factorization),
        ("10 determinism across workers", 600, determinism),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = verdict.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {name}: {} [{:.2}s of {budget}s] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            verdict.detail
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    let strict = std::env::var("SIP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
