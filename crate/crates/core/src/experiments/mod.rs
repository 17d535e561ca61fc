//! Reproducible studies, each a pure function of its configuration and seed.
//!
//! Every study fans replicas out with [`run_replicas`] and reduces them in
//! replica order, so reports do not depend on the worker count.

mod config;
mod report;

use std::time::Instant;

pub use config::{
    parse_config, render_config, ConfigError, ExperimentConfig, Study, DEFAULT_DELTA, DEFAULT_REPLICAS,
    MIN_REPLICAS,
};
pub use report::{Contract, Report, Row, VERSION};

use crate::coupling::{iterated_coupling, sip_irw_distance_profile, two_stage_coupling, CouplingOptions};
use crate::duality::{density, DTransform, DualityEvaluator};
use crate::dynamics::{Engine, ProcessKind, SipParams};
use crate::error::{Result, SipError};
use crate::lattice::{occupation_of, Occupation, ParticleList};
use crate::measures::{marginal_pmf, sample_product, InitialLaw, NuLambda};
use crate::oracle::{build_generator, exact_dual_expectation};
use crate::rng::{run_replicas, RandomStream};
use crate::stats::{batch_means, proportion, Estimate};

/// Replica streams of different arms start `1 << ARM_SHIFT` indices apart.
const ARM_SHIFT: u32 = 40;

fn arm(k: u64) -> u64 {
    k << ARM_SHIFT
}

/// Exact self-duality gaps must stay below this.
pub const EXACT_TOLERANCE: f64 = 1e-8;
/// Position-independence and factorization of exact moments.
pub const FACTOR_TOLERANCE: f64 = 1e-10;
/// Relative floor of the convergence band.
pub const CONVERGENCE_FLOOR: f64 = 0.02;
/// Required overall success of the iterated coupling.
pub const ITERATED_TARGET: f64 = 0.99;

/// Runs `cfg.study` and stamps the wall time.
pub fn run_study(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let start = Instant::now();
    let mut report = match cfg.study {
        Study::SelfDuality => run_self_duality(cfg, workers),
        Study::Stationarity => run_stationarity(cfg, workers),
        Study::Coupling => run_coupling_success(cfg, workers),
        Study::OrDistance => run_or_distance(cfg, workers),
        Study::Convergence => run_convergence(cfg, workers),
        Study::Correlation => run_correlation_inequality(cfg, workers),
        Study::Factorization => run_factorization(cfg),
        Study::OracleCheck => run_oracle_check(cfg, workers),
    }?;
    report.wall_ms = start.elapsed().as_millis();
    Ok(report)
}

fn params(cfg: &ExperimentConfig) -> Result<SipParams<f64>> {
    SipParams::new(cfg.m, cfg.geometry)
}

fn fmt_t(t: f64) -> String {
    format!("{t}")
}

fn evolve(xi: &mut ParticleList, p: &SipParams<f64>, dt: f64, stream: &mut RandomStream, engine: &mut Engine<f64>) -> Result<()> {
    if dt > 0.0 {
        engine.advance(xi, ProcessKind::Sip, p, dt, stream)?;
    }
    Ok(())
}

/// Samples of `f(state at t_k)` for one path per replica through `times`.
#[allow(clippy::too_many_arguments)]
fn along_grid<F>(
    start: &ParticleList,
    p: &SipParams<f64>,
    times: &[f64],
    reps: usize,
    seed: u64,
    base: u64,
    workers: usize,
    f: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&ParticleList) -> f64 + Sync,
{
    let rows = run_replicas(seed, base, reps, workers, |_, stream| -> Result<Vec<f64>> {
        let mut xi = start.clone();
        let mut engine = Engine::new();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            evolve(&mut xi, p, t - now, stream, &mut engine)?;
            now = t;
            out.push(f(&xi));
        }
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    // Transpose to one sample vector per grid time.
    Ok((0..times.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect())
}

fn combined(a: Estimate, b: Estimate) -> f64 {
    (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

/// Exact and Monte Carlo self-duality checks.
pub fn run_self_duality(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    exact_duality_rows(cfg, &mut report)?;
    let p = params(cfg)?;
    let (xi, eta) = duality_pair(cfg)?;
    let duality = DualityEvaluator::new(cfg.m)?;
    let xi_occ = occupation_of(&xi);
    let left = along_grid(&eta.to_particles(), &p, &cfg.times, cfg.replicas, cfg.seed, arm(1), workers, |s| {
        duality.evaluate_occupation(&xi_occ, &occupation_of(s))
    })?;
    let right = along_grid(&xi, &p, &cfg.times, cfg.replicas, cfg.seed, arm(2), workers, |s| duality.evaluate(s, &eta))?;
    for (k, &t) in cfg.times.iter().enumerate() {
        let (l, r) = (batch_means(&left[k])?, batch_means(&right[k])?);
        report.push_info(format!("mc_left_t={}", fmt_t(t)), l);
        report.push_info(format!("mc_right_t={}", fmt_t(t)), r);
        let sigma = combined(l, r);
        report.push_band(
            format!("mc_gap_t={}", fmt_t(t)),
            Estimate {
                mean: l.mean - r.mean,
                stderr: sigma,
            },
            0.0,
            3.0,
            0.0,
        );
    }
    Ok(report)
}

fn duality_pair(cfg: &ExperimentConfig) -> Result<(ParticleList, Occupation)> {
    let xi = cfg.xi.clone().ok_or_else(|| SipError::Precondition("ξ is required".into()))?;
    let eta = cfg.eta.clone().ok_or_else(|| SipError::Precondition("η is required".into()))?;
    Ok((xi, eta))
}

/// Exact arm: one `exact_gap` row per time, skipped when a sector exceeds the cap.
fn exact_duality_rows(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let p = params(cfg)?;
    let (xi, eta) = duality_pair(cfg)?;
    for &t in &cfg.times {
        match exact_dual_expectation(&xi, &eta, t, &p, cfg.cap) {
            Ok((l, r)) => {
                report.push_info(format!("exact_left_t={}", fmt_t(t)), Estimate::exact(l));
                report.push(
                    format!("exact_gap_t={}", fmt_t(t)),
                    (l - r).abs(),
                    0.0,
                    Contract::Within {
                        target: 0.0,
                        tolerance: EXACT_TOLERANCE,
                    },
                );
            }
            Err(SipError::CapExceeded { .. }) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Stationary duality moments under `ν_λ`, by the dual arm and the direct arm.
pub fn run_stationarity(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    let lambda = cfg.lambda.ok_or_else(|| SipError::Precondition("λ is required".into()))?;
    let p = params(cfg)?;
    let law = InitialLaw::Nu(NuLambda::new(lambda, cfg.m)?);
    let transform = law.transform();
    let rho = density(lambda);
    let duality = DualityEvaluator::new(cfg.m)?;
    let xis = cfg.xi_list();

    for (j, xi) in xis.iter().enumerate() {
        let n = xi.len();
        let target = rho.powi(n as i32);
        let dual = along_grid(xi, &p, &cfg.times, cfg.replicas, cfg.seed, arm(10 + j as u64), workers, |s| {
            duality.closed_form_transform(&transform, s).expect("closed form")
        })?;
        for (k, &t) in cfg.times.iter().enumerate() {
            report.push(
                format!("dual_n={n}_t={}", fmt_t(t)),
                batch_means(&dual[k])?.mean,
                batch_means(&dual[k])?.stderr,
                Contract::Within {
                    target,
                    tolerance: 1e-12 * target.max(1.0),
                },
            );
        }
    }

    let geometry = cfg.geometry;
    let rows = run_replicas(cfg.seed, arm(1), cfg.replicas, workers, |_, stream| -> Result<Vec<f64>> {
        let eta0 = sample_product(&law, &geometry, stream)?;
        let mut eta = eta0.to_particles();
        let mut engine = Engine::new();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(cfg.times.len() * xis.len());
        for &t in &cfg.times {
            evolve(&mut eta, &p, t - now, stream, &mut engine)?;
            now = t;
            let occ = occupation_of(&eta);
            for xi in &xis {
                out.push(duality.evaluate(xi, &occ));
            }
        }
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    for (k, &t) in cfg.times.iter().enumerate() {
        for (j, xi) in xis.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[k * xis.len() + j]).collect();
            let n = xi.len();
            report.push_band(
                format!("direct_n={n}_t={}", fmt_t(t)),
                batch_means(&col)?,
                rho.powi(n as i32),
                3.0,
                0.0,
            );
        }
    }
    Ok(report)
}

/// Success frequency of two-stage attempts across horizons and of the iterated schedule.
pub fn run_coupling_success(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    let p = params(cfg)?;
    let x = cfg.x.clone().ok_or_else(|| SipError::Precondition("x is required".into()))?;
    let y = cfg.y.clone().ok_or_else(|| SipError::Precondition("y is required".into()))?;
    let options = CouplingOptions {
        delta: cfg.delta,
        optimal_matching: cfg.matching,
        record_events: false,
    };
    let mut curve = Vec::new();
    for (k, &t) in cfg.times.iter().enumerate() {
        let wins = run_replicas(cfg.seed, arm(1 + k as u64), cfg.replicas, workers, |_, s| {
            two_stage_coupling(&x, &y, &p, t, &options, s).map(|o| o.succeeded())
        });
        let wins = wins.into_iter().collect::<Result<Vec<bool>>>()?;
        let est = proportion(wins.iter().filter(|&&w| w).count(), cfg.replicas);
        report.push_info(format!("success_t={}", fmt_t(t)), est);
        curve.push(est);
    }
    trend_rows(&mut report, &curve, Trend::Increasing);

    let schedule = cfg.schedule();
    let runs = run_replicas(cfg.seed, arm(100), cfg.replicas, workers, |_, s| {
        iterated_coupling(&x, &y, &p, &schedule, &options, s)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let est = proportion(runs.iter().filter(|o| o.succeeded()).count(), cfg.replicas);
    report.push("iterated_success", est.mean, est.stderr, Contract::AtLeast { target: ITERATED_TARGET });
    let attempts: Vec<f64> = runs.iter().map(|o| f64::from(o.attempts)).collect();
    report.push_info("iterated_attempts", batch_means(&attempts)?);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trend {
    Increasing,
    Decreasing,
}

/// Monotonicity along the grid plus significant separation of the endpoints.
///
/// Increasing curves may be flat within 3σ between neighbors; decreasing
/// curves must drop strictly at every step.
fn trend_rows(report: &mut Report, curve: &[Estimate], trend: Trend) {
    if curve.len() < 2 {
        return;
    }
    let sign = if trend == Trend::Increasing { 1.0 } else { -1.0 };
    let steps: Vec<(f64, f64)> = curve
        .windows(2)
        .map(|w| (sign * (w[1].mean - w[0].mean), combined(w[0], w[1])))
        .collect();
    let (worst, worst_sigma) = steps
        .iter()
        .copied()
        .fold((f64::INFINITY, 0.0), |acc, s| if s.0 < acc.0 { s } else { acc });
    let (name, pass, tolerance) = match trend {
        Trend::Increasing => ("monotone_nondecreasing", worst >= -3.0 * worst_sigma, 3.0 * worst_sigma),
        Trend::Decreasing => ("monotone_decreasing", worst > 0.0, 0.0),
    };
    report.push(
        name,
        worst,
        worst_sigma,
        Contract::Verdict {
            target: 0.0,
            tolerance,
            pass,
        },
    );
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    let sigma = combined(first, last);
    report.push(
        "endpoint_separation",
        sign * (last.mean - first.mean),
        sigma,
        Contract::Exceeds { tolerance: 3.0 * sigma },
    );
}

/// Normalized SIP/IRW distance `E Σ|X^S − X^I| / √t` across the grid.
pub fn run_or_distance(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    let p = params(cfg)?;
    let x = cfg.x.clone().ok_or_else(|| SipError::Precondition("x is required".into()))?;
    let profile = sip_irw_distance_profile(&x, &p, &cfg.times, cfg.replicas, cfg.seed, arm(1), workers)?;
    let mut curve = Vec::new();
    for (&t, est) in cfg.times.iter().zip(&profile) {
        report.push_info(format!("distance_t={}", fmt_t(t)), *est);
        if t > 0.0 {
            let norm = Estimate {
                mean: est.mean / t.sqrt(),
                stderr: est.stderr / t.sqrt(),
            };
            report.push_info(format!("normalized_t={}", fmt_t(t)), norm);
            curve.push(norm);
        }
    }
    trend_rows(&mut report, &curve, Trend::Decreasing);
    Ok(report)
}

/// Dual-particle estimate of `∫ D(ξ, ·) d(μ S_t)` for a closed-form initial law.
pub fn run_convergence(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    let p = params(cfg)?;
    let law = cfg
        .law()
        .ok_or_else(|| SipError::Precondition("an initial law is required".into()))?;
    let transform = law.transform();
    let duality = DualityEvaluator::new(cfg.m)?;
    let rho = transform.single_site_density(cfg.m)?;
    report.push_info("rho", Estimate::exact(rho));
    for (j, xi) in cfg.xi_list().iter().enumerate() {
        let n = xi.len();
        let target = match &transform {
            DTransform::Poisson { .. } => rho.powi(n as i32),
            // Invariant laws: the transform is already constant in ξ.
            other => duality.closed_form_transform(other, xi)?,
        };
        let samples = along_grid(xi, &p, &cfg.times, cfg.replicas, cfg.seed, arm(1 + j as u64), workers, |s| {
            duality.closed_form_transform(&transform, s).expect("closed form")
        })?;
        for (k, &t) in cfg.times.iter().enumerate() {
            let est = batch_means(&samples[k])?;
            let name = format!("transform_n={n}_t={}", fmt_t(t));
            if k + 1 == cfg.times.len() {
                report.push_band(name, est, target, 3.0, CONVERGENCE_FLOOR * target);
            } else {
                report.push_info(name, est);
            }
        }
    }
    Ok(report)
}

/// Jensen gap of mixture moments, closed form and sampled.
pub fn run_correlation_inequality(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    let atoms = cfg
        .mixture
        .clone()
        .ok_or_else(|| SipError::Precondition("a mixture is required".into()))?;
    let law = InitialLaw::NuMixture { atoms: atoms.clone(), m: cfg.m };
    law.validate()?;
    let rhos: Vec<(f64, f64)> = atoms.iter().map(|&(l, w)| (density(l), w)).collect();
    let mean_rho: f64 = rhos.iter().map(|(r, w)| w * r).sum();
    let distinct = {
        let live: Vec<f64> = rhos.iter().filter(|(_, w)| *w > 0.0).map(|(r, _)| *r).collect();
        live.iter().any(|&r| r != live[0])
    };
    let duality = DualityEvaluator::new(cfg.m)?;
    let geometry = cfg.geometry;
    let volume = geometry.volume().ok_or(SipError::InfiniteGeometry)? as f64;
    let xis = cfg.xi_list();

    let rows = run_replicas(cfg.seed, arm(1), cfg.replicas, workers, |_, stream| -> Result<Vec<f64>> {
        let eta = sample_product(&law, &geometry, stream)?;
        let site_mean = eta.iter().map(|(_, k)| k as f64).sum::<f64>() * duality.d_single(1, 1) / volume;
        let mut out = vec![site_mean];
        out.extend(xis.iter().map(|xi| duality.evaluate(xi, &eta)));
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let single = batch_means(&rows.iter().map(|r| r[0]).collect::<Vec<_>>())?;

    for (j, xi) in xis.iter().enumerate() {
        let n = xi.len() as i32;
        let lhs = rhos.iter().map(|(r, w)| w * r.powi(n)).sum::<f64>();
        let rhs = mean_rho.powi(n);
        report.push_info(format!("lhs_closed_n={n}"), Estimate::exact(lhs));
        report.push_info(format!("rhs_closed_n={n}"), Estimate::exact(rhs));
        let gap = lhs - rhs;
        let strict = distinct && n >= 2;
        report.push(
            format!("gap_n={n}"),
            gap,
            0.0,
            Contract::Verdict {
                target: 0.0,
                tolerance: 1e-12,
                pass: if strict { gap > 0.0 } else { gap.abs() <= 1e-12 },
            },
        );
        let sampled_lhs = batch_means(&rows.iter().map(|r| r[1 + j]).collect::<Vec<_>>())?;
        report.push_band(format!("lhs_sampled_n={n}"), sampled_lhs, lhs, 3.0, 0.0);
        let sampled_rhs = Estimate {
            mean: single.mean.powi(n),
            stderr: f64::from(n) * single.mean.abs().powi(n - 1) * single.stderr,
        };
        report.push_band(format!("rhs_sampled_n={n}"), sampled_rhs, rhs, 3.0, 0.0);
    }
    Ok(report)
}

/// `∫ D(k δ_x, η) ν_λ(dη)` by direct summation over the marginal.
pub fn site_moment(duality: &DualityEvaluator<f64>, k: u64, lambda: f64) -> Result<f64> {
    let m = duality.m();
    let mut acc = 0.0;
    let mean = NuLambda::new(lambda, m)?.mean_occupation();
    let mut l = k;
    loop {
        let term = duality.d_single(k, l) * marginal_pmf(l, lambda, m)?;
        acc += term;
        if (l as f64 > mean + 10.0 && term <= 1e-18 * acc) || l > 1_000_000 {
            return Ok(acc);
        }
        l += 1;
    }
}

/// Exact moments under `ν_λ` and the oracle Cesàro flattening.
pub fn run_factorization(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    let lambda = cfg.lambda.ok_or_else(|| SipError::Precondition("λ is required".into()))?;
    let duality = DualityEvaluator::new(cfg.m)?;
    let rho = density(lambda);
    let max_n = cfg.sizes.iter().copied().max().unwrap_or(0) as u64;
    let per_site: Vec<f64> = (0..=max_n).map(|k| site_moment(&duality, k, lambda)).collect::<Result<_>>()?;
    let hat_mu = |occ: &Occupation| occ.iter().map(|(_, k)| per_site[k as usize]).product::<f64>();

    let mut hat = std::collections::BTreeMap::new();
    for &n in &cfg.sizes {
        let space = crate::oracle::StateSpace::new(cfg.geometry, n as u32, cfg.cap)?;
        let values = space.tabulate(|occ| hat_mu(occ));
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        report.push(
            format!("spread_n={n}"),
            hi - lo,
            0.0,
            Contract::Within {
                target: 0.0,
                tolerance: FACTOR_TOLERANCE,
            },
        );
        let target = rho.powi(n as i32);
        report.push(
            format!("hatmu_n={n}"),
            values[0],
            0.0,
            Contract::Within {
                target,
                tolerance: FACTOR_TOLERANCE * target.max(1.0),
            },
        );
        hat.insert(n, values[0]);
    }
    for (&a, &ha) in &hat {
        for (&b, &hb) in &hat {
            if a <= b {
                if let Some(&hc) = hat.get(&(a + b)) {
                    report.push(
                        format!("factor_{a}+{b}"),
                        hc - ha * hb,
                        0.0,
                        Contract::Within {
                            target: 0.0,
                            tolerance: FACTOR_TOLERANCE,
                        },
                    );
                }
            }
        }
    }

    if let (Some(eta), false) = (&cfg.eta, cfg.times.is_empty()) {
        let p = params(cfg)?;
        for &n in &cfg.sizes {
            let q = build_generator(n as u32, &p, cfg.cap)?;
            let f = q.space().tabulate(|xi| duality.evaluate_occupation(xi, eta));
            let mut previous: Option<Vec<f64>> = None;
            for &big_t in &cfg.times {
                let avg = q.cesaro_average(big_t, &f, 1e-13)?;
                let (lo, hi) = avg
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                report.push_info(format!("cesaro_spread_n={n}_T={}", fmt_t(big_t)), Estimate::exact(hi - lo));
                if let Some(prev) = &previous {
                    let delta = prev.iter().zip(&avg).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                    report.push_info(format!("cesaro_delta_n={n}_T={}", fmt_t(big_t)), Estimate::exact(delta));
                }
                previous = Some(avg);
            }
        }
    }
    Ok(report)
}

/// Empirical state distribution of `n` SIP particles at time `t` against the
/// uniformization distribution: `(exact, estimate)` per sector state.
pub fn state_distribution_check(
    start: &ParticleList,
    p: &SipParams<f64>,
    t: f64,
    reps: usize,
    seed: u64,
    workers: usize,
    cap: usize,
) -> Result<Vec<(f64, Estimate)>> {
    let q = build_generator(start.len() as u32, p, cap)?;
    let origin = q
        .space()
        .index_of(&occupation_of(start))
        .ok_or_else(|| SipError::Domain("start configuration lies outside the torus".into()))?;
    let finals = along_grid(start, p, &[t], reps, seed, arm(7), workers, |s| {
        q.space().index_of(&occupation_of(s)).expect("state in sector") as f64
    })?;
    let mut counts = vec![0usize; q.dim()];
    for &k in &finals[0] {
        counts[k as usize] += 1;
    }
    (0..q.dim())
        .map(|state| {
            let mut indicator = vec![0.0; q.dim()];
            indicator[state] = 1.0;
            let exact = q.semigroup_apply(t, &indicator)?[origin];
            let est = proportion(counts[state], reps);
            // Error of the hypothesized law, well defined even for unvisited states.
            let stderr = (exact * (1.0 - exact) / reps as f64).sqrt();
            Ok((exact, Estimate { mean: est.mean, stderr }))
        })
        .collect()
}

/// Oracle self-consistency: exact self-duality, generator sanity, and
/// simulation against the exact law at the last grid time.
pub fn run_oracle_check(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    let mut report = Report::new(cfg.study.name(), cfg.seed);
    exact_duality_rows(cfg, &mut report)?;
    let p = params(cfg)?;
    let (xi, eta) = duality_pair(cfg)?;
    for n in [xi.len() as u32, eta.total() as u32] {
        let q = build_generator(n, &p, cfg.cap)?;
        let worst = q.row_sums().iter().fold(0.0f64, |a, s| a.max(s.abs()));
        report.push(
            format!("row_sum_n={n}"),
            worst,
            0.0,
            Contract::Within {
                target: 0.0,
                tolerance: 1e-12,
            },
        );
        report.push(
            format!("detailed_balance_n={n}"),
            detailed_balance_residual(&q, cfg.lambda.unwrap_or(0.4), cfg.m),
            0.0,
            Contract::Within {
                target: 0.0,
                tolerance: 1e-12,
            },
        );
    }
    if let Some(&t) = cfg.times.last() {
        for (state, (exact, est)) in state_distribution_check(&xi, &p, t, cfg.replicas, cfg.seed, workers, cfg.cap)?
            .into_iter()
            .enumerate()
        {
            report.push_band(format!("state_{state}_t={}", fmt_t(t)), est, exact, 3.0, 0.0);
        }
    }
    Ok(report)
}

/// Largest relative violation of `w(η) Q(η,η') = w(η') Q(η',η)` with product weights.
fn detailed_balance_residual(q: &crate::oracle::GeneratorMatrix<f64>, lambda: f64, m: f64) -> f64 {
    let log_w = |counts: &[u32]| -> f64 {
        counts
            .iter()
            .map(|&k| marginal_pmf(u64::from(k), lambda, m).map(f64::ln).unwrap_or(f64::NAN))
            .sum()
    };
    let mut worst = 0.0f64;
    for i in 0..q.dim() {
        for (j, r) in q.row(i) {
            let lhs = log_w(q.space().counts(i)).exp() * r;
            let rhs = log_w(q.space().counts(j)).exp() * q.rate(j, i);
            worst = worst.max((lhs - rhs).abs() / lhs.max(rhs));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(study: Study) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(study);
        cfg.replicas = cfg.replicas.min(2000);
        cfg
    }

    #[test]
    fn oracle_check_preset_passes() {
        let report = run_study(&quick(Study::OracleCheck), 4).unwrap();
        assert!(report.pass(), "{}", report.to_csv());
        assert!(report.row("exact_gap_t=1").is_some());
    }

    #[test]
    fn self_duality_small() {
        let report = run_self_duality(&quick(Study::SelfDuality), 4).unwrap();
        assert!(report.pass(), "{}", report.to_csv());
    }

    #[test]
    fn stationarity_at_zero_density_is_exactly_zero() {
        let mut cfg = quick(Study::Stationarity);
        cfg.lambda = Some(0.0);
        cfg.replicas = 200;
        let report = run_stationarity(&cfg, 2).unwrap();
        for row in &report.rows {
            assert_eq!(row.estimate, 0.0, "{}", row.statistic);
        }
        assert!(report.pass());
    }

    #[test]
    fn coupling_of_identical_sets_always_succeeds() {
        let mut cfg = quick(Study::Coupling);
        cfg.y = cfg.x.clone();
        cfg.times = vec![10.0, 20.0];
        cfg.replicas = 100;
        let report = run_coupling_success(&cfg, 2).unwrap();
        assert_eq!(report.row("success_t=10").unwrap().estimate, 1.0);
        assert_eq!(report.row("iterated_success").unwrap().estimate, 1.0);
    }

    #[test]
    fn single_particle_has_zero_or_distance() {
        let mut cfg = quick(Study::OrDistance);
        cfg.x = Some(ParticleList::on_line(&[0]));
        cfg.times = vec![10.0, 100.0];
        cfg.replicas = 100;
        let report = run_or_distance(&cfg, 2).unwrap();
        assert_eq!(report.row("distance_t=100").unwrap().estimate, 0.0);
    }

    #[test]
    fn invariant_initial_law_has_no_transient() {
        let mut cfg = quick(Study::Convergence);
        cfg.theta = None;
        cfg.lambda = Some(0.4);
        cfg.times = vec![0.5, 5.0];
        cfg.replicas = 200;
        let report = run_convergence(&cfg, 2).unwrap();
        let want = density(0.4f64).powi(2);
        for row in report.rows.iter().filter(|r| r.statistic.starts_with("transform")) {
            assert!((row.estimate - want).abs() < 1e-12);
            assert_eq!(row.stderr, 0.0);
        }
    }

    #[test]
    fn correlation_closed_forms() {
        let cfg = quick(Study::Correlation);
        let report = run_correlation_inequality(&cfg, 4).unwrap();
        assert!((report.row("lhs_closed_n=2").unwrap().estimate - 1.15625).abs() < 1e-12);
        assert!((report.row("rhs_closed_n=2").unwrap().estimate - 0.765625).abs() < 1e-12);
        assert_eq!(report.row("gap_n=1").unwrap().pass(), Some(true));
        assert_eq!(report.row("gap_n=2").unwrap().pass(), Some(true));

        let mut point = cfg.clone();
        point.mixture = Some(vec![(0.3, 1.0)]);
        point.replicas = 200;
        let report = run_correlation_inequality(&point, 2).unwrap();
        assert!(report.row("gap_n=2").unwrap().estimate.abs() < 1e-12);
        assert_eq!(report.row("gap_n=2").unwrap().pass(), Some(true));
    }

    #[test]
    fn factorization_preset() {
        let report = run_factorization(&ExperimentConfig::preset(Study::Factorization)).unwrap();
        assert!(report.pass(), "{}", report.to_csv());
        let spread = |t: &str| report.row(&format!("cesaro_spread_n=2_T={t}")).unwrap().estimate;
        assert!(spread("64") < spread("1"));
    }

    #[test]
    fn site_moments_match_density_powers() {
        for &(lambda, m) in &[(0.4, 2.0), (0.1, 0.5), (0.7, 5.0)] {
            let d = DualityEvaluator::new(m).unwrap();
            for k in 0..5u64 {
                let got = site_moment(&d, k, lambda).unwrap();
                let want = density(lambda).powi(k as i32);
                assert!((got - want).abs() < 1e-11 * want.max(1.0), "{lambda} {m} {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn reports_ignore_worker_count() {
        let mut cfg = quick(Study::SelfDuality);
        cfg.replicas = 300;
        let a = run_study(&cfg, 1).unwrap().to_csv();
        let b = run_study(&cfg, 8).unwrap().to_csv();
        assert_eq!(a, b);
    }
}
